#pragma once

// Binary model snapshots.  Layout: 8-byte magic "XGPTCKPT", u32 version (1),
// u32 tensor count, then per tensor in ascending name order: u32 name length,
// name bytes, u32 rank, u32 extents, row-major binary32 little-endian payload.
// Writing is bit-exact: save -> load -> save reproduces the file byte for byte.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "xgpt/model.hpp"

namespace xgpt {

inline constexpr char kCheckpointMagic[8] = {'X', 'G', 'P', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
    std::vector<std::uint32_t> shape;
    std::vector<float> values;
};

using CheckpointData = std::map<std::string, CheckpointTensor>;

namespace io {

inline void put_u32(std::string& buf, std::uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_f32(std::string& buf, float v) {
    put_u32(buf, std::bit_cast<std::uint32_t>(v));
}

// Reader with position tracking so format errors can name the byte offset.
class Reader {
public:
    Reader(std::string bytes, std::string origin)
        : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

    std::size_t offset() const { return pos_; }

    void expect_magic(const char* magic, std::size_t len) {
        if (bytes_.size() < pos_ + len || std::memcmp(bytes_.data() + pos_, magic, len) != 0) {
            fail("bad magic");
        }
        pos_ += len;
    }

    std::uint32_t u32() {
        if (bytes_.size() < pos_ + 4) fail("truncated u32");
        const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
        pos_ += 4;
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }

    float f32() { return std::bit_cast<float>(u32()); }

    std::string str(std::size_t len) {
        if (bytes_.size() < pos_ + len) fail("truncated string");
        std::string s = bytes_.substr(pos_, len);
        pos_ += len;
        return s;
    }

    void expect_end() {
        if (pos_ != bytes_.size()) fail("trailing bytes");
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw std::runtime_error(origin_ + ": " + what + " at byte offset " + std::to_string(pos_));
    }

private:
    std::string bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

inline void spill(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + path);
}

} // namespace io

inline std::string encode_checkpoint(const CheckpointData& data) {
    std::string buf;
    buf.append(kCheckpointMagic, sizeof(kCheckpointMagic));
    io::put_u32(buf, kCheckpointVersion);
    io::put_u32(buf, static_cast<std::uint32_t>(data.size()));
    for (const auto& [name, tensor] : data) {  // std::map iterates in name order
        io::put_u32(buf, static_cast<std::uint32_t>(name.size()));
        buf.append(name);
        io::put_u32(buf, static_cast<std::uint32_t>(tensor.shape.size()));
        std::size_t expect = 1;
        for (std::uint32_t d : tensor.shape) {
            io::put_u32(buf, d);
            expect *= d;
        }
        if (expect != tensor.values.size()) {
            throw std::logic_error("encode_checkpoint: tensor '" + name + "' has " +
                                   std::to_string(tensor.values.size()) + " values but shape wants " +
                                   std::to_string(expect));
        }
        for (float v : tensor.values) io::put_f32(buf, v);
    }
    return buf;
}

inline void write_checkpoint(const std::string& path, const CheckpointData& data) {
    io::spill(path, encode_checkpoint(data));
}

inline CheckpointData read_checkpoint(const std::string& path) {
    io::Reader r(io::slurp(path), path);
    r.expect_magic(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw std::runtime_error(path + ": unsupported version " + std::to_string(version) +
                                 " at byte offset 8");
    }
    const std::uint32_t count = r.u32();
    CheckpointData data;
    std::string prev_name;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        std::string name = r.str(name_len);
        if (i > 0 && !(prev_name < name)) r.fail("tensor names out of order");
        prev_name = name;
        CheckpointTensor tensor;
        const std::uint32_t rank = r.u32();
        std::size_t total = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            tensor.shape.push_back(r.u32());
            total *= tensor.shape.back();
        }
        tensor.values.resize(total);
        for (std::size_t v = 0; v < total; ++v) tensor.values[v] = r.f32();
        data.emplace(std::move(name), std::move(tensor));
    }
    r.expect_end();
    return data;
}

// ------------------------------------------------------- model round-trips

template <typename T>
CheckpointData snapshot(const ParamStore<T>& store) {
    CheckpointData data;
    for (const auto& [name, tensor] : store.entries()) {
        CheckpointTensor ct;
        for (std::size_t d : tensor.shape()) ct.shape.push_back(static_cast<std::uint32_t>(d));
        ct.values.reserve(tensor.size());
        for (const T& v : tensor.values()) ct.values.push_back(static_cast<float>(v));
        data.emplace(name, std::move(ct));
    }
    return data;
}

template <typename T>
void load_into(ParamStore<T>& store, const CheckpointData& data) {
    if (data.size() != store.entries().size()) {
        throw std::runtime_error("load_into: checkpoint holds " + std::to_string(data.size()) +
                                 " tensors, model expects " + std::to_string(store.entries().size()));
    }
    for (const auto& [name, ct] : data) {
        Tensor<T>* target = nullptr;
        try {
            target = &store.at(name);
        } catch (const std::out_of_range&) {
            throw std::runtime_error("load_into: model has no parameter '" + name + "'");
        }
        Shape shape;
        for (std::uint32_t d : ct.shape) shape.push_back(d);
        if (shape != target->shape()) {
            throw std::runtime_error("load_into: parameter '" + name + "' is " +
                                     shape_str(target->shape()) + " but checkpoint holds " +
                                     shape_str(shape));
        }
        for (std::size_t i = 0; i < ct.values.size(); ++i) {
            target->values()[i] = static_cast<T>(ct.values[i]);
        }
    }
}

// Arithmetic mean of several checkpoints, accumulated in double precision and
// re-rounded to binary32.  All inputs must agree on names and shapes.
inline CheckpointData average_checkpoints(const std::vector<CheckpointData>& inputs) {
    if (inputs.empty()) throw std::invalid_argument("average_checkpoints: no checkpoints given");
    const CheckpointData& first = inputs.front();
    CheckpointData out = first;
    std::vector<std::vector<double>> acc;
    acc.reserve(first.size());
    for (const auto& [name, ct] : first) {
        acc.emplace_back(ct.values.begin(), ct.values.end());
    }
    for (std::size_t i = 1; i < inputs.size(); ++i) {
        const CheckpointData& c = inputs[i];
        if (c.size() != first.size()) {
            throw std::runtime_error("average_checkpoints: input " + std::to_string(i) + " holds " +
                                     std::to_string(c.size()) + " tensors, expected " +
                                     std::to_string(first.size()));
        }
        std::size_t k = 0;
        auto it_first = first.begin();
        for (const auto& [name, ct] : c) {
            if (name != it_first->first) {
                throw std::runtime_error("average_checkpoints: tensor name mismatch '" + name +
                                         "' vs '" + it_first->first + "'");
            }
            if (ct.shape != it_first->second.shape) {
                throw std::runtime_error("average_checkpoints: shape mismatch for '" + name + "'");
            }
            for (std::size_t v = 0; v < ct.values.size(); ++v) acc[k][v] += ct.values[v];
            ++k;
            ++it_first;
        }
    }
    const double inv = 1.0 / static_cast<double>(inputs.size());
    std::size_t k = 0;
    for (auto& [name, ct] : out) {
        for (std::size_t v = 0; v < ct.values.size(); ++v) {
            ct.values[v] = static_cast<float>(acc[k][v] * inv);
        }
        ++k;
    }
    return out;
}

// Lowest-score-first selection used for top-k checkpoint averaging.
inline std::vector<std::size_t> select_top_k(const std::vector<double>& scores, std::size_t k) {
    if (k == 0 || k > scores.size()) {
        throw std::invalid_argument("select_top_k: cannot take " + std::to_string(k) + " of " +
                                    std::to_string(scores.size()) + " scores");
    }
    std::vector<std::size_t> idx(scores.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

} // namespace xgpt
