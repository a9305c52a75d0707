#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "meshdex/matrix.hpp"

namespace meshdex {

enum class ElementType : std::uint8_t {
    float64 = 1,
    float32 = 2,
};

struct NamedTensor {
    std::string name;
    std::vector<std::uint64_t> dims;
    ElementType type = ElementType::float64;
    std::vector<double> values;

    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

NamedTensor tensor_from_matrix(std::string name, const Matrix& m);
Matrix matrix_from_tensor(const NamedTensor& t);

/// Versioned binary archive of named tensors:
///   magic "MDXA" | u32 version | u64 tensor count
///   per tensor: u32 name length | name bytes | u32 rank | u64 dims[rank]
///               | u8 element type | values, row-major little-endian
/// float64 values round-trip bit-exactly.
inline constexpr std::uint32_t kArchiveVersion = 1;

std::string encode_archive(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_archive(const std::string& bytes);

void write_archive(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_archive(const std::filesystem::path& path);

const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

}  // namespace meshdex
