#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "evodhm/serialize.hpp"
#include "evodhm/tensor.hpp"
#include "oracles.hpp"

using namespace evodhm;

TEST_CASE("tensor indexing is row-major, channels-last") {
  Tensor t({2, 3, 4});
  t.at(1, 2, 3) = 7.0;
  CHECK(t.data[(1 * 3 + 2) * 4 + 3] == 7.0);
  Tensor m({2, 5});
  m.at(1, 4) = -2.0;
  CHECK(m.data[9] == -2.0);
}

TEST_CASE("tensor shape/data mismatch is rejected") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ContractViolation);
}

TEST_CASE("max_abs_diff and finiteness checks") {
  Tensor a = Tensor::full({3}, 1.0);
  Tensor b = Tensor::full({3}, 1.0);
  b.data[2] = 1.5;
  CHECK(max_abs_diff(a, b) == doctest::Approx(0.5));
  a.data[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(check_finite(a, "test"), NumericFailure);
}

TEST_CASE("chunk container round-trips random tensors bit-exactly") {
  std::mt19937_64 rng(99);
  std::vector<NamedTensor> chunks;
  chunks.push_back({"alpha", testing::random_tensor({3, 5}, rng)});
  chunks.push_back({"nested/beta", testing::random_tensor({2, 2, 7}, rng, -100, 100)});
  chunks.push_back({"gamma", Tensor::scalar(0.125)});

  auto path = std::filesystem::temp_directory_path() / "evodhm_chunks_test.evam";
  write_chunks(path, chunks);
  auto loaded = read_chunks(path);
  std::filesystem::remove(path);

  REQUIRE(loaded.size() == chunks.size());
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    CHECK(loaded[i].name == chunks[i].name);
    REQUIRE(loaded[i].tensor.shape == chunks[i].tensor.shape);
    CHECK(loaded[i].tensor.data == chunks[i].tensor.data);  // bit-exact
  }
  CHECK(find_chunk(loaded, "gamma").data[0] == 0.125);
  CHECK_THROWS_AS(find_chunk(loaded, "missing"), ContractViolation);
}

TEST_CASE("json text twin preserves values to full precision") {
  std::mt19937_64 rng(7);
  std::vector<NamedTensor> chunks{{"w", testing::random_tensor({4, 3}, rng)}};
  auto back = from_json_text(to_json_text(chunks));
  REQUIRE(back.size() == 1);
  CHECK(back[0].tensor.data == chunks[0].tensor.data);
}

TEST_CASE("truncated chunk file is rejected, not misread") {
  auto path = std::filesystem::temp_directory_path() / "evodhm_truncated.evam";
  write_chunks(path, {{"x", Tensor::full({8}, 1.0)}});
  auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 16);
  CHECK_THROWS(read_chunks(path));
  std::filesystem::remove(path);
}
