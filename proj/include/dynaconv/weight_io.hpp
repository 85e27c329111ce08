#pragma once

// Portable weight container ("DYNW"), little-endian throughout:
//
//   magic "DYNW" | u16 version (=1) | u16 flags
//   u32 header length | UTF-8 JSON header (fingerprint)
//   u32 tensor count
//   per tensor: u16 name length | UTF-8 name | u8 dtype (0 = f32) | u8 rank |
//               u32 dims[rank] | raw values, row-major

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"

#include "dynaconv/errors.hpp"
#include "dynaconv/tensor.hpp"

namespace dynaconv {

static_assert(std::endian::native == std::endian::little, "weight format I/O assumes a little-endian host");

struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;  // logical rank 1..4
    Tensor4f values;                  // dims right-padded with 1 to rank 4
};

struct WeightStore {
    nlohmann::json fingerprint = nlohmann::json::object();
    std::vector<NamedTensor> tensors;

    const NamedTensor* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }
};

inline constexpr std::uint16_t kWeightFormatVersion = 1;

inline Shape4 shape_from_dims(const std::vector<std::uint32_t>& dims) {
    if (dims.empty() || dims.size() > 4) throw FormatError("bad_rank", "tensor rank must be 1..4");
    std::size_t d[4] = {1, 1, 1, 1};
    for (std::size_t i = 0; i < dims.size(); ++i) d[i] = dims[i];
    return {d[0], d[1], d[2], d[3]};
}

namespace detail {

class ByteWriter {
public:
    template <class U>
    void put(U v) {
        char buf[sizeof(U)];
        std::memcpy(buf, &v, sizeof(U));
        bytes_.insert(bytes_.end(), buf, buf + sizeof(U));
    }
    void put_bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        bytes_.insert(bytes_.end(), c, c + n);
    }
    const std::vector<char>& bytes() const { return bytes_; }

private:
    std::vector<char> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

    template <class U>
    U get() {
        need(sizeof(U));
        U v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }
    void get_bytes(void* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }
    std::string get_string(std::size_t n) {
        need(n);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw FormatError("truncated", "unexpected end of weight file");
    }
    std::vector<char> bytes_;
    std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("unreadable", "cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline std::vector<char> encode_weights(const WeightStore& store) {
    detail::ByteWriter w;
    w.put_bytes("DYNW", 4);
    w.put<std::uint16_t>(kWeightFormatVersion);
    w.put<std::uint16_t>(0);
    const std::string header = store.fingerprint.dump();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(header.size()));
    w.put_bytes(header.data(), header.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(store.tensors.size()));
    for (const auto& t : store.tensors) {
        if (shape_from_dims(t.dims) != t.values.shape())
            throw DimensionError("tensor '" + t.name + "' dims disagree with its values");
        w.put<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
        w.put_bytes(t.name.data(), t.name.size());
        w.put<std::uint8_t>(0);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t.dims.size()));
        for (auto d : t.dims) w.put<std::uint32_t>(d);
        w.put_bytes(t.values.data(), t.values.size() * sizeof(float));
    }
    return w.bytes();
}

inline WeightStore decode_weights(std::vector<char> bytes) {
    detail::ByteReader r(std::move(bytes));
    if (r.get_string(4) != "DYNW") throw FormatError("bad_magic", "not a DYNW weight file");
    const auto version = r.get<std::uint16_t>();
    if (version != kWeightFormatVersion)
        throw FormatError("bad_version", "unsupported weight format version " + std::to_string(version));
    r.get<std::uint16_t>();  // flags
    const auto hlen = r.get<std::uint32_t>();
    WeightStore store;
    try {
        store.fingerprint = nlohmann::json::parse(r.get_string(hlen));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("bad_header", e.what());
    }
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = r.get_string(r.get<std::uint16_t>());
        const auto dtype = r.get<std::uint8_t>();
        if (dtype != 0) throw FormatError("bad_dtype", "tensor '" + t.name + "' has unsupported dtype");
        const auto rank = r.get<std::uint8_t>();
        for (std::uint8_t k = 0; k < rank; ++k) t.dims.push_back(r.get<std::uint32_t>());
        t.values = Tensor4f(shape_from_dims(t.dims));
        r.get_bytes(t.values.data(), t.values.size() * sizeof(float));
        store.tensors.push_back(std::move(t));
    }
    if (!r.at_end()) throw FormatError("trailing_bytes", "unexpected data after last tensor");
    return store;
}

inline void save_weight_store(const WeightStore& store, const std::string& path) {
    const auto bytes = encode_weights(store);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("unwritable", "cannot write '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("unwritable", "short write to '" + path + "'");
}

inline WeightStore load_weight_store(const std::string& path) { return decode_weights(detail::read_file(path)); }

}  // namespace dynaconv
