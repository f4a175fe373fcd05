#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "bootvit/optim.hpp"
#include "bootvit/tensor.hpp"

namespace bootvit {

// Container layout: an 8-byte magic, a little-endian u64 with the manifest
// length, the JSON manifest, then raw little-endian payloads at the offsets
// the manifest records. Optimizer moments ride along as f64 payloads under
// "opt.<param>.m" / "opt.<param>.v". A tensor storage shared by both networks
// appears exactly once, under its canonical name.
inline constexpr char kCheckpointMagic[8] = {'B', 'V', 'C', 'K', 'P', 'T', '1', '\n'};

namespace detail {

template <typename T>
const char* dtype_name() {
    if constexpr (std::is_same_v<T, float>) return "f32";
    else if constexpr (std::is_same_v<T, double>) return "f64";
    else return "?";
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw FormatError("checkpoint truncated in the header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const std::vector<Tensor<T>>& params,
                     const Optimizer<T>* opt, const nlohmann::json& config) {
    nlohmann::json manifest;
    manifest["config"] = config;
    manifest["dtype"] = detail::dtype_name<T>();
    nlohmann::json tensors = nlohmann::json::array();

    struct Blob {
        const void* src;
        std::uint64_t bytes;
    };
    std::vector<Blob> blobs;
    std::uint64_t offset = 0;
    std::set<const void*> seen;
    std::set<std::string> names;
    auto add_entry = [&](const std::string& name, const Shape& shape, const char* dtype,
                         const void* src, std::uint64_t bytes) {
        if (name.empty()) throw ContractError("checkpoint: tensor without a name");
        if (!names.insert(name).second) throw ContractError("checkpoint: duplicate name " + name);
        nlohmann::json e;
        e["name"] = name;
        e["shape"] = shape;
        e["dtype"] = dtype;
        e["offset"] = offset;
        e["bytes"] = bytes;
        tensors.push_back(e);
        blobs.push_back({src, bytes});
        offset += bytes;
    };
    for (const Tensor<T>& p : params) {
        if (!seen.insert(p.node().get()).second) continue;  // shared storage, already written
        add_entry(p.name(), p.shape(), detail::dtype_name<T>(), p.data().data(),
                  static_cast<std::uint64_t>(p.numel() * sizeof(T)));
    }
    if (opt) {
        manifest["optimizer"]["step"] = opt->step_count;
        for (const auto& [name, slot] : opt->slots) {
            if (slot.m.empty()) continue;
            add_entry("opt." + name + ".m", {slot.m.size()}, "f64", slot.m.data(),
                      static_cast<std::uint64_t>(slot.m.size() * sizeof(double)));
            add_entry("opt." + name + ".v", {slot.v.size()}, "f64", slot.v.data(),
                      static_cast<std::uint64_t>(slot.v.size() * sizeof(double)));
        }
    }
    manifest["tensors"] = tensors;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write checkpoint " + path);
    const std::string m = manifest.dump();
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put_u64(out, m.size());
    out.write(m.data(), static_cast<std::streamsize>(m.size()));
    for (const Blob& b : blobs) out.write(static_cast<const char*>(b.src), static_cast<std::streamsize>(b.bytes));
    if (!out) throw FormatError("short write on checkpoint " + path);
}

inline nlohmann::json read_manifest(std::istream& in, const std::string& path) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw FormatError(path + " is not a checkpoint (bad magic)");
    const std::uint64_t len = detail::get_u64(in);
    std::string m(len, '\0');
    in.read(m.data(), static_cast<std::streamsize>(len));
    if (!in) throw FormatError(path + ": truncated manifest");
    try {
        return nlohmann::json::parse(m);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path + ": manifest is not valid JSON: " + e.what());
    }
}

inline nlohmann::json read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path);
    return read_manifest(in, path);
}

// Fills the given tensors (matched by name, shapes must agree) and, when
// given, the optimizer moments. Returns the manifest for config and metadata.
template <typename T>
nlohmann::json load_checkpoint(const std::string& path, std::vector<Tensor<T>>& params,
                               Optimizer<T>* opt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path);
    nlohmann::json manifest = read_manifest(in, path);
    const std::streampos payload_start = in.tellg();

    struct Entry {
        Shape shape;
        std::string dtype;
        std::uint64_t offset = 0, bytes = 0;
    };
    std::map<std::string, Entry> index;
    for (const auto& e : manifest.at("tensors"))
        index[e.at("name").get<std::string>()] = {e.at("shape").get<Shape>(),
                                                  e.at("dtype").get<std::string>(),
                                                  e.at("offset").get<std::uint64_t>(),
                                                  e.at("bytes").get<std::uint64_t>()};

    auto read_blob = [&](const Entry& e, void* dst) {
        in.seekg(payload_start + static_cast<std::streamoff>(e.offset));
        in.read(static_cast<char*>(dst), static_cast<std::streamsize>(e.bytes));
        if (!in) throw FormatError(path + ": truncated payload");
    };

    std::set<const void*> seen;
    for (Tensor<T>& p : params) {
        if (!seen.insert(p.node().get()).second) continue;
        const auto it = index.find(p.name());
        if (it == index.end()) throw FormatError(path + ": no tensor named " + p.name());
        if (it->second.shape != p.shape())
            throw ShapeError(p.name() + ": checkpoint holds " + shape_str(it->second.shape) +
                             ", model wants " + shape_str(p.shape()));
        if (it->second.dtype != detail::dtype_name<T>())
            throw FormatError(p.name() + ": checkpoint dtype " + it->second.dtype);
        read_blob(it->second, p.data().data());
    }
    if (opt && manifest.contains("optimizer")) {
        opt->step_count = manifest["optimizer"].at("step").get<std::size_t>();
        opt->slots.clear();
        for (const auto& [name, e] : index) {
            if (name.rfind("opt.", 0) != 0 || name.size() < 7) continue;
            const std::string tail = name.substr(name.size() - 2);
            const std::string param = name.substr(4, name.size() - 6);
            AdamSlot& slot = opt->slots[param];
            std::vector<double> buf(e.bytes / sizeof(double));
            read_blob(e, buf.data());
            if (tail == ".m") slot.m = std::move(buf);
            else if (tail == ".v") slot.v = std::move(buf);
        }
    }
    return manifest;
}

}  // namespace bootvit
