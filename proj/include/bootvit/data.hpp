#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "bootvit/rng.hpp"
#include "bootvit/tensor.hpp"

namespace bootvit {

// Images live as standardized floats in CHW order, one block per sample.
struct Dataset {
    std::size_t channels = 3, height = 32, width = 32, classes = 10;
    std::vector<float> images;
    std::vector<std::size_t> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t image_numel() const { return channels * height * width; }
    const float* image(std::size_t i) const { return images.data() + i * image_numel(); }
};

enum class CifarFlavor { cifar10, cifar100 };

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw FormatError("cannot open " + p.string());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                      std::istreambuf_iterator<char>());
}

// One CIFAR binary file appended onto raw [0,255] pixel rows.
inline void parse_cifar_file(const std::filesystem::path& p, CifarFlavor flavor,
                             std::vector<float>& pixels, std::vector<std::size_t>& labels) {
    const std::size_t label_bytes = flavor == CifarFlavor::cifar10 ? 1 : 2;
    const std::size_t record = label_bytes + 3 * 32 * 32;
    const std::vector<unsigned char> raw = read_file(p);
    if (raw.empty() || raw.size() % record != 0)
        throw FormatError(p.filename().string() + ": " + std::to_string(raw.size()) +
                          " bytes does not hold whole " + std::to_string(record) +
                          "-byte records (nearest count " + std::to_string(raw.size() / record) + ")");
    const std::size_t n = raw.size() / record;
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* rec = raw.data() + i * record;
        // cifar100 carries coarse then fine; the fine label is the class.
        labels.push_back(rec[label_bytes - 1]);
        for (std::size_t j = 0; j < 3 * 32 * 32; ++j)
            pixels.push_back(static_cast<float>(rec[label_bytes + j]) / 255.0f);
    }
}

inline void standardize(Dataset& train, Dataset& test) {
    const std::size_t hw = train.height * train.width;
    for (std::size_t c = 0; c < train.channels; ++c) {
        double sum = 0, sum2 = 0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < train.size(); ++i) {
            const float* img = train.image(i);
            for (std::size_t j = 0; j < hw; ++j) {
                const double v = img[c * hw + j];
                sum += v;
                sum2 += v * v;
                ++count;
            }
        }
        const double mean = sum / static_cast<double>(count);
        const double var = std::max(sum2 / static_cast<double>(count) - mean * mean, 0.0);
        const float m = static_cast<float>(mean);
        const float inv = static_cast<float>(1.0 / std::sqrt(var + 1e-8));
        auto apply = [&](Dataset& d) {
            for (std::size_t i = 0; i < d.size(); ++i) {
                float* img = d.images.data() + i * d.image_numel();
                for (std::size_t j = 0; j < hw; ++j) img[c * hw + j] = (img[c * hw + j] - m) * inv;
            }
        };
        apply(train);
        apply(test);
    }
}

}  // namespace detail

struct CifarData {
    Dataset train, test;
};

// Reads the binary distribution: train.bin/test.bin when present (the layout
// this artifact generates), otherwise the canonical batch file names. Pixels
// are scaled to [0,1] and standardized per channel with train-split moments.
inline CifarData load_cifar(const std::string& dir, CifarFlavor flavor) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    CifarData out;
    out.train.classes = out.test.classes = flavor == CifarFlavor::cifar10 ? 10 : 100;

    std::vector<fs::path> train_files, test_files;
    if (fs::exists(root / "train.bin")) {
        train_files = {root / "train.bin"};
        test_files = {root / "test.bin"};
    } else if (flavor == CifarFlavor::cifar10) {
        for (int b = 1; b <= 5; ++b) train_files.push_back(root / ("data_batch_" + std::to_string(b) + ".bin"));
        test_files = {root / "test_batch.bin"};
    } else {
        throw FormatError("no train.bin under " + dir);
    }
    for (const auto& p : train_files) detail::parse_cifar_file(p, flavor, out.train.images, out.train.labels);
    for (const auto& p : test_files)
        if (fs::exists(p)) detail::parse_cifar_file(p, flavor, out.test.images, out.test.labels);
    for (std::size_t y : out.train.labels)
        if (y >= out.train.classes) throw FormatError("label " + std::to_string(y) + " outside the flavor");
    detail::standardize(out.train, out.test);
    return out;
}

// Class-stratified subset: the same floor share of every class, order
// preserved, deterministic under the seed.
inline Dataset subsample(const Dataset& ds, double fraction, std::uint64_t seed) {
    if (fraction <= 0 || fraction > 1) throw ConfigError("fraction " + std::to_string(fraction));
    if (fraction == 1.0) return ds;
    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
    RngStream rng(splitmix64(seed ^ fnv1a64("subsample")));
    std::vector<std::size_t> chosen;
    for (auto& [cls, idx] : by_class) {
        const std::size_t k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(idx.size())));
        if (k == 0)
            throw ConfigError("fraction " + std::to_string(fraction) + " leaves class " +
                              std::to_string(cls) + " empty");
        rng.shuffle(idx.begin(), idx.end());
        chosen.insert(chosen.end(), idx.begin(), idx.begin() + k);
    }
    std::sort(chosen.begin(), chosen.end());
    Dataset out;
    out.channels = ds.channels;
    out.height = ds.height;
    out.width = ds.width;
    out.classes = ds.classes;
    for (std::size_t i : chosen) {
        out.labels.push_back(ds.labels[i]);
        out.images.insert(out.images.end(), ds.image(i), ds.image(i) + ds.image_numel());
    }
    return out;
}

namespace detail {

inline void hflip(const float* src, float* dst, std::size_t c, std::size_t h, std::size_t w) {
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                dst[(ch * h + y) * w + x] = src[(ch * h + y) * w + (w - 1 - x)];
}

// Crop a side x side window at (top, left) and bilinearly resize it back to
// h x w, half-pixel convention.
inline void resized_crop(const float* src, float* dst, std::size_t c, std::size_t h, std::size_t w,
                         std::size_t top, std::size_t left, std::size_t side) {
    if (side == h && side == w && top == 0 && left == 0) {
        std::copy(src, src + c * h * w, dst);
        return;
    }
    const double fy = static_cast<double>(side) / static_cast<double>(h);
    const double fx = static_cast<double>(side) / static_cast<double>(w);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const double sy = std::clamp((static_cast<double>(y) + 0.5) * fy - 0.5, 0.0,
                                             static_cast<double>(side - 1));
                const double sx = std::clamp((static_cast<double>(x) + 0.5) * fx - 0.5, 0.0,
                                             static_cast<double>(side - 1));
                const std::size_t y0 = static_cast<std::size_t>(sy);
                const std::size_t x0 = static_cast<std::size_t>(sx);
                const std::size_t y1 = std::min(y0 + 1, side - 1);
                const std::size_t x1 = std::min(x0 + 1, side - 1);
                const double wy = sy - static_cast<double>(y0);
                const double wx = sx - static_cast<double>(x0);
                auto at = [&](std::size_t yy, std::size_t xx) {
                    return static_cast<double>(src[(ch * h + top + yy) * w + left + xx]);
                };
                dst[(ch * h + y) * w + x] = static_cast<float>(
                    (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                    wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1)));
            }
}

}  // namespace detail

// Random resized crop (area scale in [0.7, 1.0]) followed by a coin-flip
// horizontal mirror. Draw order: scale, top, left, flip.
inline void augment_image(const float* src, float* dst, std::size_t c, std::size_t h, std::size_t w,
                          RngStream& rng) {
    const double scale = rng.uniform(0.7, 1.0);
    const std::size_t side = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(std::sqrt(scale) * static_cast<double>(h))));
    const std::size_t clamped = std::min(side, std::min(h, w));
    const std::size_t top = rng.uniform_index(h - clamped + 1);
    const std::size_t left = rng.uniform_index(w - clamped + 1);
    std::vector<float> cropped(c * h * w);
    detail::resized_crop(src, cropped.data(), c, h, w, top, left, clamped);
    if (rng.uniform01() < 0.5)
        detail::hflip(cropped.data(), dst, c, h, w);
    else
        std::copy(cropped.begin(), cropped.end(), dst);
}

// Assemble one [B, C, H, W] batch, optionally augmented.
inline Tensor<float> make_batch(const Dataset& ds, const std::vector<std::size_t>& indices,
                                RngStream* aug_rng, std::vector<std::size_t>& labels_out) {
    const std::size_t b = indices.size();
    std::vector<float> buf(b * ds.image_numel());
    labels_out.clear();
    for (std::size_t i = 0; i < b; ++i) {
        const float* src = ds.image(indices[i]);
        float* dst = buf.data() + i * ds.image_numel();
        if (aug_rng)
            augment_image(src, dst, ds.channels, ds.height, ds.width, *aug_rng);
        else
            std::copy(src, src + ds.image_numel(), dst);
        labels_out.push_back(ds.labels[indices[i]]);
    }
    return Tensor<float>::from_data({b, ds.channels, ds.height, ds.width}, std::move(buf));
}

// A small synthetic stand-in with the CIFAR-10 byte layout. Each class is a
// family of oriented bar motifs over a colored background, so the classes are
// separated by local shape statistics rather than by global position.
inline void make_synthetic_cifar(const std::string& dir, std::size_t n_train, std::size_t n_test,
                                 std::uint64_t seed, std::size_t classes = 10) {
    namespace fs = std::filesystem;
    if (classes == 0 || classes > 10) throw ConfigError("synthetic set supports 1..10 classes");
    fs::create_directories(dir);
    RngForest forest(seed);

    auto write_split = [&](const std::string& name, std::size_t count) {
        RngStream rng = forest.stream("synth." + name);
        std::ofstream out(fs::path(dir) / name, std::ios::binary);
        if (!out) throw FormatError("cannot write " + name + " under " + dir);
        const std::size_t s = 32;
        std::vector<double> img(3 * s * s);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t cls = i % classes;
            const double angle = M_PI * static_cast<double>(cls) / static_cast<double>(classes);
            // Tinted background plus noise.
            const double tint_r = 0.35 + 0.1 * rng.uniform01();
            const double tint_g = 0.35 + 0.1 * rng.uniform01();
            const double tint_b = 0.35 + 0.1 * rng.uniform01();
            for (std::size_t p = 0; p < s * s; ++p) {
                const double noise = 0.26 * rng.normal();
                img[0 * s * s + p] = tint_r + noise;
                img[1 * s * s + p] = tint_g + noise;
                img[2 * s * s + p] = tint_b + 0.26 * rng.normal();
            }
            // Many short strokes at the class orientation, plus a few at
            // random angles. Strokes span only a few pixels and sit under
            // heavy pixel noise, so the class is carried by aggregated local
            // texture, not by any single image-wide structure.
            auto draw_stroke = [&](double ang) {
                const double cy = 3.0 + rng.uniform(0.0, static_cast<double>(s) - 6.0);
                const double cx = 3.0 + rng.uniform(0.0, static_cast<double>(s) - 6.0);
                const double len = 2.0 + 2.0 * rng.uniform01();
                const double bright = rng.uniform01() < 0.5 ? 0.5 : -0.35;
                for (double t = -len; t <= len; t += 0.2) {
                    const double py = cy + t * std::sin(ang), px = cx + t * std::cos(ang);
                    const long iy = std::lround(py), ix = std::lround(px);
                    if (iy < 0 || ix < 0 || iy >= static_cast<long>(s) || ix >= static_cast<long>(s))
                        continue;
                    for (std::size_t ch = 0; ch < 3; ++ch) img[(ch * s + iy) * s + ix] += bright;
                }
            };
            const std::size_t strokes = 8 + rng.uniform_index(5);
            for (std::size_t k = 0; k < strokes; ++k) draw_stroke(angle);
            const std::size_t clutter = 3 + rng.uniform_index(3);
            for (std::size_t k = 0; k < clutter; ++k) draw_stroke(rng.uniform(0.0, M_PI));
            out.put(static_cast<char>(cls));
            for (std::size_t j = 0; j < 3 * s * s; ++j) {
                const double v = std::clamp(img[j], 0.0, 1.0);
                out.put(static_cast<char>(std::lround(v * 255.0)));
            }
        }
    };
    write_split("train.bin", n_train);
    write_split("test.bin", n_test);
}

}  // namespace bootvit
