#include "m2r/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "m2r/errors.hpp"

namespace m2r {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', '2', 'R', '1'};

template <typename U>
void put(std::vector<std::uint8_t>& out, U value) {
    std::uint8_t raw[sizeof(U)];
    std::memcpy(raw, &value, sizeof(U));
    out.insert(out.end(), raw, raw + sizeof(U));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <typename U>
    U take() {
        need(sizeof(U));
        U value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return value;
    }
    std::span<const std::uint8_t> take_bytes(std::size_t n) {
        need(n);
        const auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t position() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw IntegrityError("checkpoint truncated inside a record");
    }
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
        crc = crc32(crc, bytes.data() + pos, chunk);
        pos += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

template <typename T>
constexpr DType dtype_of() {
    if constexpr (std::is_same_v<T, float>) return DType::f32;
    else if constexpr (std::is_same_v<T, double>) return DType::f64;
    else if constexpr (std::is_same_v<T, std::uint64_t>) return DType::u64;
    else return DType::u8;
}

}  // namespace

std::size_t dtype_size(DType t) {
    switch (t) {
        case DType::f32: return 4;
        case DType::f64: return 8;
        case DType::u64: return 8;
        case DType::u8: return 1;
    }
    throw FormatError("unknown dtype tag " + std::to_string(static_cast<int>(t)));
}

template <typename T>
void Checkpoint::put_tensor(const std::string& name, const Shape& shape, std::span<const T> values) {
    if (contains(name)) throw ContractError("checkpoint already holds '" + name + "'");
    if (numel(shape) != values.size()) throw DimensionError("checkpoint record '" + name + "' size mismatch");
    CheckpointRecord r{name, dtype_of<T>(), shape, {}};
    r.payload.resize(values.size() * sizeof(T));
    if (!values.empty()) std::memcpy(r.payload.data(), values.data(), r.payload.size());
    records_.push_back(std::move(r));
}

void Checkpoint::put_u64(const std::string& name, std::uint64_t value) {
    put_tensor<std::uint64_t>(name, {1}, std::span<const std::uint64_t>(&value, 1));
}

void Checkpoint::put_bytes(const std::string& name, const std::string& bytes) {
    if (bytes.empty()) throw ContractError("checkpoint byte record '" + name + "' is empty");
    const auto* data = reinterpret_cast<const std::uint8_t*>(bytes.data());
    put_tensor<std::uint8_t>(name, {bytes.size()}, std::span<const std::uint8_t>(data, bytes.size()));
}

bool Checkpoint::contains(const std::string& name) const {
    for (const auto& r : records_)
        if (r.name == name) return true;
    return false;
}

const CheckpointRecord& Checkpoint::record(const std::string& name) const {
    for (const auto& r : records_)
        if (r.name == name) return r;
    throw FormatError("checkpoint has no record '" + name + "'");
}

template <typename T>
std::vector<T> Checkpoint::tensor_values(const std::string& name, const Shape& expected) const {
    const CheckpointRecord& r = record(name);
    if (r.shape != expected)
        throw FormatError("checkpoint record '" + name + "' has shape " + to_string(r.shape) + ", expected " +
                          to_string(expected));
    std::vector<T> out(numel(r.shape));
    if (r.dtype == dtype_of<T>()) {
        std::memcpy(out.data(), r.payload.data(), r.payload.size());
    } else if (r.dtype == DType::f32) {
        for (std::size_t i = 0; i < out.size(); ++i) {
            float v;
            std::memcpy(&v, r.payload.data() + 4 * i, 4);
            out[i] = static_cast<T>(v);
        }
    } else if (r.dtype == DType::f64) {
        for (std::size_t i = 0; i < out.size(); ++i) {
            double v;
            std::memcpy(&v, r.payload.data() + 8 * i, 8);
            out[i] = static_cast<T>(v);
        }
    } else {
        throw FormatError("checkpoint record '" + name + "' is not a float tensor");
    }
    return out;
}

std::uint64_t Checkpoint::get_u64(const std::string& name) const {
    const CheckpointRecord& r = record(name);
    if (r.dtype != DType::u64 || r.shape != Shape{1}) throw FormatError("checkpoint record '" + name + "' is not a u64");
    std::uint64_t v;
    std::memcpy(&v, r.payload.data(), 8);
    return v;
}

std::string Checkpoint::get_bytes(const std::string& name) const {
    const CheckpointRecord& r = record(name);
    if (r.dtype != DType::u8) throw FormatError("checkpoint record '" + name + "' is not a byte string");
    return std::string(r.payload.begin(), r.payload.end());
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put<std::uint32_t>(out, Checkpoint::kVersion);
    for (const auto& r : ckpt.records()) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
        out.insert(out.end(), r.name.begin(), r.name.end());
        put<std::uint8_t>(out, static_cast<std::uint8_t>(r.dtype));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
        for (std::size_t e : r.shape) put<std::uint64_t>(out, e);
        out.insert(out.end(), r.payload.begin(), r.payload.end());
    }
    put<std::uint32_t>(out, crc32_of(out));
    return out;
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic)");
    if (bytes.size() < 12) throw IntegrityError("checkpoint truncated before its header ends");
    Reader header(bytes.subspan(4));
    const auto version = header.take<std::uint32_t>();
    if (version != Checkpoint::kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(Checkpoint::kVersion) + ")");
    const std::size_t body_end = bytes.size() - 4;
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + body_end, 4);
    if (stored != crc32_of(bytes.first(body_end))) throw IntegrityError("checkpoint checksum mismatch (corrupt or truncated)");

    Checkpoint ckpt;
    Reader in(bytes.subspan(8, body_end - 8));
    while (in.position() < body_end - 8) {
        CheckpointRecord r;
        const auto name_len = in.take<std::uint32_t>();
        const auto name = in.take_bytes(name_len);
        r.name.assign(name.begin(), name.end());
        const auto tag = in.take<std::uint8_t>();
        if (tag < 1 || tag > 4) throw FormatError("checkpoint record '" + r.name + "' has unknown dtype tag");
        r.dtype = static_cast<DType>(tag);
        const auto rank = in.take<std::uint32_t>();
        std::size_t count = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            r.shape.push_back(in.take<std::uint64_t>());
            count *= r.shape.back();
        }
        const auto payload = in.take_bytes(count * dtype_size(r.dtype));
        r.payload.assign(payload.begin(), payload.end());
        if (ckpt.contains(r.name)) throw FormatError("checkpoint repeats record '" + r.name + "'");
        const_cast<std::vector<CheckpointRecord>&>(ckpt.records()).push_back(std::move(r));
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    const auto bytes = serialize(ckpt);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write checkpoint " + path);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("failed writing checkpoint " + path);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path);
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

template void Checkpoint::put_tensor(const std::string&, const Shape&, std::span<const float>);
template void Checkpoint::put_tensor(const std::string&, const Shape&, std::span<const double>);
template void Checkpoint::put_tensor(const std::string&, const Shape&, std::span<const std::uint64_t>);
template void Checkpoint::put_tensor(const std::string&, const Shape&, std::span<const std::uint8_t>);
template std::vector<float> Checkpoint::tensor_values(const std::string&, const Shape&) const;
template std::vector<double> Checkpoint::tensor_values(const std::string&, const Shape&) const;

}  // namespace m2r
