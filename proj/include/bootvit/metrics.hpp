#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "bootvit/tensor.hpp"

namespace bootvit {

// One metrics row. Per-step rows carry the loss terms with the accuracies
// absent; validation rows carry the epoch's mean losses plus fresh
// accuracies. Absent values are written as nan. Wall-clock goes to the
// summary file only, so metrics files are byte-reproducible.
struct TrainRecord {
    std::size_t epoch = 0, step = 0;
    double lr = std::numeric_limits<double>::quiet_NaN();
    double feat_weight_multiplier = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> feat_per_layer;
    double feat_total = std::numeric_limits<double>::quiet_NaN();
    double mutual = std::numeric_limits<double>::quiet_NaN();
    double total = std::numeric_limits<double>::quiet_NaN();
    double train_acc_vit = std::numeric_limits<double>::quiet_NaN();
    double train_acc_agent = std::numeric_limits<double>::quiet_NaN();
    double val_acc_vit = std::numeric_limits<double>::quiet_NaN();
    double val_acc_agent = std::numeric_limits<double>::quiet_NaN();

    bool is_validation() const { return !std::isnan(val_acc_vit) || !std::isnan(val_acc_agent); }
};

namespace detail {

inline std::string fmt_double(double v) {
    if (std::isnan(v)) return "nan";
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

}  // namespace detail

inline std::string metrics_header(std::size_t layers) {
    std::string h = "epoch,step,lr,feat_mult";
    for (std::size_t l = 1; l <= layers; ++l) h += ",feat_l" + std::to_string(l);
    h += ",feat_total,mutual,total,train_acc_vit,train_acc_agent,val_acc_vit,val_acc_agent";
    return h;
}

inline std::string metrics_row(const TrainRecord& r, std::size_t layers) {
    if (!r.feat_per_layer.empty() && r.feat_per_layer.size() != layers)
        throw ShapeError("metrics row with " + std::to_string(r.feat_per_layer.size()) +
                         " layer terms, header has " + std::to_string(layers));
    std::string out = std::to_string(r.epoch) + "," + std::to_string(r.step) + "," +
                      detail::fmt_double(r.lr) + "," + detail::fmt_double(r.feat_weight_multiplier);
    for (std::size_t l = 0; l < layers; ++l)
        out += "," + detail::fmt_double(l < r.feat_per_layer.size()
                                            ? r.feat_per_layer[l]
                                            : std::numeric_limits<double>::quiet_NaN());
    out += "," + detail::fmt_double(r.feat_total) + "," + detail::fmt_double(r.mutual) + "," +
           detail::fmt_double(r.total) + "," + detail::fmt_double(r.train_acc_vit) + "," +
           detail::fmt_double(r.train_acc_agent) + "," + detail::fmt_double(r.val_acc_vit) + "," +
           detail::fmt_double(r.val_acc_agent);
    return out;
}

// Streams rows as they arrive and keeps them for in-process consumers.
class MetricsWriter {
public:
    MetricsWriter(std::ostream* os, std::size_t layers) : os_(os), layers_(layers) {
        if (os_) (*os_) << metrics_header(layers_) << "\n";
    }

    void add(const TrainRecord& r) {
        if (!records_.empty()) {
            const TrainRecord& last = records_.back();
            if (r.epoch < last.epoch || (r.epoch == last.epoch && r.step < last.step))
                throw ContractError("metrics rows must be monotone in (epoch, step)");
        }
        if (os_) {
            (*os_) << metrics_row(r, layers_) << "\n";
            os_->flush();
        }
        records_.push_back(r);
    }

    const std::vector<TrainRecord>& records() const { return records_; }
    std::size_t layers() const { return layers_; }

private:
    std::ostream* os_;
    std::size_t layers_;
    std::vector<TrainRecord> records_;
};

// Share of rows whose argmax logit hits the label.
template <typename T>
double accuracy(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
    if (logits.shape().size() != 2 || logits.dim(0) != labels.size())
        throw ShapeError("accuracy: " + shape_str(logits.shape()) + " with " +
                         std::to_string(labels.size()) + " labels");
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    std::size_t hits = 0;
    const T* p = logits.data().data();
    for (std::size_t i = 0; i < b; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (p[i * c + j] > p[i * c + best]) best = j;
        if (best == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(b);
}

// `key = value` lines, one per entry, in insertion order.
class SummaryWriter {
public:
    void set(const std::string& key, const std::string& value) { lines_.push_back(key + " = " + value); }
    void set(const std::string& key, double value) { set(key, detail::fmt_double(value)); }
    void set(const std::string& key, std::size_t value) { set(key, std::to_string(value)); }

    void write(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw FormatError("cannot write " + path);
        for (const std::string& l : lines_) out << l << "\n";
    }

    const std::vector<std::string>& lines() const { return lines_; }

private:
    std::vector<std::string> lines_;
};

}  // namespace bootvit
