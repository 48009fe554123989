#include "iqdet/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace iqdet {
namespace {

constexpr char kMagic[4] = {'I', 'Q', 'T', '1'};

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  static_assert(sizeof(float) == 4);
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint8_t u8() { return take(1)[0]; }

  std::uint16_t u16() {
    const auto* p = take(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }

  std::uint32_t u32() {
    const auto* p = take(4);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string bytes(std::size_t n) {
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }

  bool done() const { return pos_ == size_; }

 private:
  const std::uint8_t* take(std::size_t n) {
    if (size_ - pos_ < n) throw std::runtime_error("tensor container truncated");
    const auto* p = data_ + pos_;
    pos_ += n;
    return p;
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_tensors(const std::string& path, const TensorContainer& tensors) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max())
      throw std::runtime_error("tensor name too long: " + t.name);
    if (t.dims.size() > 255) throw std::runtime_error("tensor rank exceeds 255: " + t.name);
    if (t.data.size() != t.element_count())
      throw std::runtime_error("tensor data size does not match dims: " + t.name);
    put_u16(out, static_cast<std::uint16_t>(t.name.size()));
    out.append(t.name);
    out.push_back(static_cast<char>(t.dims.size()));
    for (auto d : t.dims) put_u32(out, d);
    for (float v : t.data) put_f32(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

TensorContainer read_tensors(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size());
  if (r.bytes(4) != std::string(kMagic, 4)) throw std::runtime_error("bad magic in: " + path);
  const std::uint32_t count = r.u32();
  TensorContainer tensors;
  tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.bytes(r.u16());
    const int rank = r.u8();
    t.dims.resize(rank);
    for (auto& d : t.dims) d = r.u32();
    const std::size_t n = t.element_count();
    t.data.resize(n);
    for (auto& v : t.data) v = r.f32();
    tensors.push_back(std::move(t));
  }
  if (!r.done()) throw std::runtime_error("trailing bytes in: " + path);
  return tensors;
}

NamedTensor to_tensor(const std::string& name, const FeatureGrid& grid) {
  NamedTensor t;
  t.name = name;
  t.dims = {static_cast<std::uint32_t>(grid.channels), static_cast<std::uint32_t>(grid.height),
            static_cast<std::uint32_t>(grid.width)};
  t.data.resize(grid.data.size());
  for (Eigen::Index i = 0; i < grid.data.size(); ++i) t.data[static_cast<std::size_t>(i)] = static_cast<float>(grid.data(i));
  return t;
}

FeatureGrid to_grid(const NamedTensor& tensor, Scalar stride) {
  if (tensor.dims.size() != 3) throw std::runtime_error("grid tensor must have rank 3: " + tensor.name);
  FeatureGrid g(static_cast<int>(tensor.dims[0]), static_cast<int>(tensor.dims[1]),
                static_cast<int>(tensor.dims[2]), stride);
  for (Eigen::Index i = 0; i < g.data.size(); ++i) g.data(i) = static_cast<Scalar>(tensor.data[static_cast<std::size_t>(i)]);
  return g;
}

NamedTensor vector_tensor(const std::string& name, const Vector& v) {
  NamedTensor t;
  t.name = name;
  t.dims = {static_cast<std::uint32_t>(v.size())};
  t.data.resize(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) t.data[static_cast<std::size_t>(i)] = static_cast<float>(v(i));
  return t;
}

NamedTensor matrix_tensor(const std::string& name, const Matrix& m) {
  NamedTensor t;
  t.name = name;
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t.data.push_back(static_cast<float>(m(i, j)));
  return t;
}

Vector tensor_to_vector(const NamedTensor& t) {
  if (t.dims.size() != 1) throw std::runtime_error("expected rank-1 tensor: " + t.name);
  Vector v(static_cast<Eigen::Index>(t.dims[0]));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = static_cast<Scalar>(t.data[static_cast<std::size_t>(i)]);
  return v;
}

Matrix tensor_to_matrix(const NamedTensor& t) {
  if (t.dims.size() != 2) throw std::runtime_error("expected rank-2 tensor: " + t.name);
  Matrix m(static_cast<Eigen::Index>(t.dims[0]), static_cast<Eigen::Index>(t.dims[1]));
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<Scalar>(t.data[k++]);
  return m;
}

}  // namespace iqdet
