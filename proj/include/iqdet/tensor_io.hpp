#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iqdet/grid.hpp"
#include "iqdet/types.hpp"

namespace iqdet {

// One tensor in the IQT1 container: values are 32-bit little-endian IEEE
// floats in row-major order (last dimension fastest).
struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

using TensorContainer = std::vector<NamedTensor>;

// Layout: "IQT1" magic, u32 tensor count, then per tensor a u16 name
// length, the UTF-8 name, u8 rank, u32 dims[rank], and the f32 payload.
// All integers little-endian. Throws std::runtime_error on malformed
// input or I/O failure.
void write_tensors(const std::string& path, const TensorContainer& tensors);
TensorContainer read_tensors(const std::string& path);

// FeatureGrid <-> tensor bridging (dims [C, H, W]; the stride is carried
// by configuration, not the container).
NamedTensor to_tensor(const std::string& name, const FeatureGrid& grid);
FeatureGrid to_grid(const NamedTensor& tensor, Scalar stride);

NamedTensor vector_tensor(const std::string& name, const Vector& v);
NamedTensor matrix_tensor(const std::string& name, const Matrix& m);
Vector tensor_to_vector(const NamedTensor& t);
Matrix tensor_to_matrix(const NamedTensor& t);

}  // namespace iqdet
