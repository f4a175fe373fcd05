#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bootvit/metrics.hpp"
#include "bootvit/tensor.hpp"

namespace bootvit {

// One accuracy line: (epoch, top-1) per validation row.
struct CurveSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
    bool dashed = false;  // agent curves are dashed
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(tok);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

inline double parse_cell(const std::string& cell, const std::string& where) {
    if (cell == "nan" || cell.empty()) return std::numeric_limits<double>::quiet_NaN();
    try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        return v;
    } catch (const std::exception&) {
        throw FormatError(where + ": cannot parse '" + cell + "'");
    }
}

inline std::string run_label(const std::filesystem::path& p) {
    if (p.filename() == "metrics.csv" && p.has_parent_path() && !p.parent_path().filename().empty())
        return p.parent_path().filename().string();
    return p.stem().string();
}

}  // namespace detail

// Validation rows of each metrics file, one series per network present.
inline std::vector<CurveSeries> collect_curves(const std::vector<std::string>& files) {
    if (files.empty()) throw ConfigError("curves: no metrics files given");
    std::vector<CurveSeries> out;
    for (const std::string& f : files) {
        std::ifstream in(f);
        if (!in) throw FormatError("cannot open " + f);
        std::string line;
        std::size_t no = 0;
        std::vector<std::string> header;
        std::ptrdiff_t col_epoch = -1, col_vit = -1, col_agent = -1;
        CurveSeries vit{detail::run_label(f) + ".vit", {}, false};
        CurveSeries agent{detail::run_label(f) + ".agent", {}, true};
        while (std::getline(in, line)) {
            ++no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            const std::vector<std::string> cells = detail::split_csv(line);
            const std::string where = f + ":" + std::to_string(no);
            if (no == 1) {
                header = cells;
                for (std::size_t i = 0; i < header.size(); ++i) {
                    if (header[i] == "epoch") col_epoch = static_cast<std::ptrdiff_t>(i);
                    if (header[i] == "val_acc_vit") col_vit = static_cast<std::ptrdiff_t>(i);
                    if (header[i] == "val_acc_agent") col_agent = static_cast<std::ptrdiff_t>(i);
                }
                if (col_epoch < 0 || (col_vit < 0 && col_agent < 0))
                    throw FormatError(where + ": not a metrics header");
                continue;
            }
            if (cells.size() != header.size())
                throw FormatError(where + ": " + std::to_string(cells.size()) + " columns, header has " +
                                  std::to_string(header.size()));
            const double epoch = detail::parse_cell(cells[col_epoch], where);
            auto grab = [&](std::ptrdiff_t col, CurveSeries& s) {
                if (col < 0) return;
                const double v = detail::parse_cell(cells[col], where);
                if (!std::isnan(v)) s.points.emplace_back(epoch, v);
            };
            grab(col_vit, vit);
            grab(col_agent, agent);
        }
        if (no == 0) throw FormatError(f + ": empty metrics file");
        if (!vit.points.empty()) out.push_back(std::move(vit));
        if (!agent.points.empty()) out.push_back(std::move(agent));
    }
    if (out.empty()) throw FormatError("no validation rows in any metrics file");
    return out;
}

// Union of epochs across the series, one accuracy column per series.
inline std::string merged_curves_csv(const std::vector<CurveSeries>& series) {
    std::map<double, std::vector<double>> rows;
    for (std::size_t s = 0; s < series.size(); ++s)
        for (const auto& [e, v] : series[s].points) {
            auto& row = rows[e];
            row.resize(series.size(), std::numeric_limits<double>::quiet_NaN());
            row[s] = v;
        }
    std::string out = "epoch";
    for (const CurveSeries& s : series) out += "," + s.label;
    out += "\n";
    for (auto& [e, vals] : rows) {
        vals.resize(series.size(), std::numeric_limits<double>::quiet_NaN());
        out += detail::fmt_double(e);
        for (double v : vals) out += "," + (std::isnan(v) ? std::string() : detail::fmt_double(v));
        out += "\n";
    }
    return out;
}

inline std::string render_curves_svg(const std::vector<CurveSeries>& series) {
    static const char* kPalette[] = {"#1f6fb2", "#d1495b", "#3d8f5f", "#8a5fa8",
                                     "#c88a2d", "#4a8f8f", "#7c5c45", "#5b5b8a"};
    const double width = 860, height = 520;
    const double l = 60, r = width - 190, t = 24, b = height - 44;
    double emin = 1e300, emax = -1e300;
    for (const CurveSeries& s : series)
        for (const auto& [e, v] : s.points) {
            emin = std::min(emin, e);
            emax = std::max(emax, e);
        }
    if (emax <= emin) emax = emin + 1;
    auto px = [&](double e) { return l + (e - emin) / (emax - emin) * (r - l); };
    auto py = [&](double acc) { return b - acc * (b - t); };

    std::ostringstream os;
    os.precision(6);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    os << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    os << "<line x1=\"" << l << "\" y1=\"" << b << "\" x2=\"" << r << "\" y2=\"" << b
       << "\" stroke=\"#333\"/>\n";
    os << "<line x1=\"" << l << "\" y1=\"" << t << "\" x2=\"" << l << "\" y2=\"" << b
       << "\" stroke=\"#333\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double acc = i / 4.0;
        os << "<line x1=\"" << l - 4 << "\" y1=\"" << py(acc) << "\" x2=\"" << l << "\" y2=\"" << py(acc)
           << "\" stroke=\"#333\"/>\n";
        os << "<text x=\"" << l - 8 << "\" y=\"" << py(acc) + 4
           << "\" font-size=\"12\" text-anchor=\"end\">" << acc << "</text>\n";
    }
    const int xticks = std::min<int>(10, static_cast<int>(emax - emin));
    for (int i = 0; i <= std::max(xticks, 1); ++i) {
        const double e = emin + (emax - emin) * i / std::max(xticks, 1);
        os << "<line x1=\"" << px(e) << "\" y1=\"" << b << "\" x2=\"" << px(e) << "\" y2=\"" << b + 4
           << "\" stroke=\"#333\"/>\n";
        os << "<text x=\"" << px(e) << "\" y=\"" << b + 18
           << "\" font-size=\"12\" text-anchor=\"middle\">" << e << "</text>\n";
    }
    os << "<text x=\"" << (l + r) / 2 << "\" y=\"" << height - 8
       << "\" font-size=\"13\" text-anchor=\"middle\">epoch</text>\n";
    os << "<text x=\"16\" y=\"" << (t + b) / 2
       << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << (t + b) / 2
       << ")\">val top-1</text>\n";

    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\"";
        if (series[s].dashed) os << " stroke-dasharray=\"6 4\"";
        os << " points=\"";
        for (const auto& [e, v] : series[s].points) os << px(e) << "," << py(v) << " ";
        os << "\"/>\n";
        const double ly = t + 18 * static_cast<double>(s);
        os << "<line x1=\"" << r + 12 << "\" y1=\"" << ly << "\" x2=\"" << r + 40 << "\" y2=\"" << ly
           << "\" stroke=\"" << color << "\" stroke-width=\"1.8\""
           << (series[s].dashed ? " stroke-dasharray=\"6 4\"" : "") << "/>\n";
        os << "<text x=\"" << r + 46 << "\" y=\"" << ly + 4 << "\" font-size=\"12\">" << series[s].label
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

inline void export_curves(const std::vector<std::string>& files, const std::string& out_svg,
                          const std::string& out_csv) {
    const std::vector<CurveSeries> series = collect_curves(files);
    std::ofstream svg(out_svg);
    if (!svg) throw FormatError("cannot write " + out_svg);
    svg << render_curves_svg(series);
    std::ofstream csv(out_csv);
    if (!csv) throw FormatError("cannot write " + out_csv);
    csv << merged_curves_csv(series);
}

}  // namespace bootvit
