#pragma once

// Named-tensor container and its on-disk format.
//
// Layout (all integers little-endian):
//   "M2R1" magic, u32 format version,
//   records: u32 name length, UTF-8 name, u8 dtype tag, u32 rank,
//            u64 extents[rank], raw little-endian payload,
//   u32 CRC-32 of every preceding byte.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "m2r/tensor.hpp"

namespace m2r {

enum class DType : std::uint8_t { f32 = 1, f64 = 2, u64 = 3, u8 = 4 };

std::size_t dtype_size(DType t);

struct CheckpointRecord {
    std::string name;
    DType dtype = DType::f32;
    Shape shape;
    std::vector<std::uint8_t> payload;  // little-endian element bytes
};

class Checkpoint {
public:
    static constexpr std::uint32_t kVersion = 1;

    template <typename T>
    void put_tensor(const std::string& name, const Shape& shape, std::span<const T> values);
    template <typename T>
    void put_tensor(const std::string& name, const Tensor<T>& t) {
        put_tensor<T>(name, t.shape(), t.data());
    }
    void put_u64(const std::string& name, std::uint64_t value);
    void put_bytes(const std::string& name, const std::string& bytes);

    bool contains(const std::string& name) const;
    const CheckpointRecord& record(const std::string& name) const;  // FormatError if absent

    // Values of a float record converted to T; FormatError on dtype/size mismatch.
    template <typename T>
    std::vector<T> tensor_values(const std::string& name, const Shape& expected) const;
    std::uint64_t get_u64(const std::string& name) const;
    std::string get_bytes(const std::string& name) const;

    const std::vector<CheckpointRecord>& records() const { return records_; }

private:
    std::vector<CheckpointRecord> records_;
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
// FormatError on wrong magic / version / malformed records, IntegrityError on
// truncation or checksum mismatch. Never returns a partial checkpoint.
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace m2r
