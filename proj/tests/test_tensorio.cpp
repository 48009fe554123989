#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "iqdet/tensor_io.hpp"
#include "testutil.hpp"

using namespace iqdet;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

TensorContainer random_container(Rng& rng, int count) {
  TensorContainer c;
  for (int t = 0; t < count; ++t) {
    NamedTensor nt;
    nt.name = "tensor_" + std::to_string(t) + std::string(rng.uniform_int(4), 'x');
    const int rank = rng.uniform_int(5);  // rank 0..4
    for (int r = 0; r < rank; ++r) nt.dims.push_back(1 + rng.uniform_int(5));
    nt.data.resize(nt.element_count());
    for (float& v : nt.data) v = static_cast<float>(rng.uniform(-1e6, 1e6));
    c.push_back(std::move(nt));
  }
  return c;
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("containers round-trip bit-exactly") {
  Rng rng(91);
  const std::string path = temp_path("iqdet_roundtrip.iqt");
  for (int t = 0; t < 20; ++t) {
    const TensorContainer want = random_container(rng, 1 + rng.uniform_int(5));
    write_tensors(path, want);
    const TensorContainer got = read_tensors(path);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(got[i].name == want[i].name);
      CHECK(got[i].dims == want[i].dims);
      REQUIRE(got[i].data.size() == want[i].data.size());
      CHECK(std::memcmp(got[i].data.data(), want[i].data.data(),
                        got[i].data.size() * sizeof(float)) == 0);
    }
  }
  std::remove(path.c_str());
}

TEST_CASE("file size matches the header arithmetic") {
  Rng rng(92);
  const std::string path = temp_path("iqdet_size.iqt");
  const TensorContainer c = random_container(rng, 4);
  write_tensors(path, c);
  std::size_t want = 4 + 4;  // magic + count
  for (const NamedTensor& t : c) {
    want += 2 + t.name.size() + 1 + 4 * t.dims.size() + 4 * t.element_count();
  }
  CHECK(std::filesystem::file_size(path) == want);
  std::remove(path.c_str());
}

TEST_CASE("an empty container is a valid file") {
  const std::string path = temp_path("iqdet_empty.iqt");
  write_tensors(path, {});
  CHECK(read_tensors(path).empty());
  CHECK(std::filesystem::file_size(path) == 8);
  std::remove(path.c_str());
}

TEST_CASE("rank-0 tensors hold exactly one element") {
  const std::string path = temp_path("iqdet_rank0.iqt");
  NamedTensor scalar;
  scalar.name = "s";
  scalar.data = {2.5f};
  write_tensors(path, {scalar});
  const TensorContainer got = read_tensors(path);
  REQUIRE(got.size() == 1);
  CHECK(got[0].dims.empty());
  CHECK(got[0].data == std::vector<float>{2.5f});
  std::remove(path.c_str());
}

TEST_CASE("malformed files are rejected") {
  const std::string path = temp_path("iqdet_bad.iqt");
  Rng rng(93);
  const TensorContainer c = random_container(rng, 2);
  write_tensors(path, c);
  const std::vector<char> good = slurp(path);

  SUBCASE("bad magic") {
    std::vector<char> bad = good;
    bad[0] = 'X';
    spit(path, bad);
    CHECK_THROWS_AS(read_tensors(path), std::runtime_error);
  }
  SUBCASE("truncated payload") {
    std::vector<char> bad = good;
    bad.resize(bad.size() - 3);
    spit(path, bad);
    CHECK_THROWS_AS(read_tensors(path), std::runtime_error);
  }
  SUBCASE("trailing garbage") {
    std::vector<char> bad = good;
    bad.push_back('\0');
    spit(path, bad);
    CHECK_THROWS_AS(read_tensors(path), std::runtime_error);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_tensors(temp_path("iqdet_nonexistent.iqt")),
                    std::runtime_error);
  }
  SUBCASE("size mismatch in the declared dims") {
    NamedTensor t;
    t.name = "broken";
    t.dims = {2, 2};
    t.data = {1.0f, 2.0f, 3.0f};  // 3 != 4
    CHECK_THROWS_AS(write_tensors(path, {t}), std::runtime_error);
  }
  std::remove(path.c_str());
}

TEST_CASE("feature grids bridge to rank-3 tensors and back") {
  Rng rng(94);
  FeatureGrid g(3, 4, 5, 8.0);
  for (Eigen::Index i = 0; i < g.data.size(); ++i) g.data[i] = rng.uniform(-2, 2);

  const NamedTensor t = to_tensor("features", g);
  CHECK(t.dims == std::vector<std::uint32_t>{3, 4, 5});
  CHECK(t.name == "features");
  const FeatureGrid back = to_grid(t, 8.0);
  CHECK(back.channels == 3);
  CHECK(back.height == 4);
  CHECK(back.width == 5);
  CHECK(back.stride == 8.0);
  for (Eigen::Index i = 0; i < g.data.size(); ++i) {
    // One f32 quantization each way.
    CHECK(back.data[i] == static_cast<Scalar>(static_cast<float>(g.data[i])));
  }

  NamedTensor wrong = t;
  wrong.dims = {3, 20};
  CHECK_THROWS_AS(to_grid(wrong, 8.0), std::runtime_error);
}

TEST_CASE("vectors and matrices bridge through tensors") {
  Vector v(4);
  v << 1.5, -2.25, 0.0, 8.0;
  const NamedTensor tv = vector_tensor("v", v);
  CHECK(tv.dims == std::vector<std::uint32_t>{4});
  const Vector vb = tensor_to_vector(tv);
  CHECK(vb == v);  // exactly representable values survive f32

  Matrix m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  const NamedTensor tm = matrix_tensor("m", m);
  CHECK(tm.dims == std::vector<std::uint32_t>{2, 3});
  // Row-major flattening.
  CHECK(tm.data == std::vector<float>{1, 2, 3, 4, 5, 6});
  const Matrix mb = tensor_to_matrix(tm);
  CHECK(mb == m);
}
