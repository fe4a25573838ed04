#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "clmle/datagen.hpp"
#include "doctest.h"

using namespace clmle;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("clmle_datagen_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SyntheticSpec small_spec(std::uint64_t seed = 3) {
  SyntheticSpec s;
  s.num_classes = 5;
  s.l_max = 120;
  s.input_dim = 8;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("power-law sizes") {
  SyntheticSpec s;
  s.num_classes = 2;
  s.gamma = 1;
  s.l_max = 100;
  s.l_min = 1;
  CHECK(power_law_sizes(s) == std::vector<std::size_t>{50, 33});

  s.num_classes = 40;
  s.gamma = 0.7;
  const auto sizes = power_law_sizes(s);
  CHECK(std::is_sorted(sizes.rbegin(), sizes.rend()));

  s.gamma = 50;
  for (std::size_t i = 1; i < power_law_sizes(s).size(); ++i) CHECK(power_law_sizes(s)[i] == 1);
}

TEST_CASE("spec validation") {
  SyntheticSpec s;
  s.num_classes = 1;
  CHECK_THROWS_AS(power_law_sizes(s), Error);
  s = SyntheticSpec{};
  s.gamma = 0;
  try {
    gen_power_law(s);
    FAIL("expected SpecError");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::SpecError);
  }
  CHECK_THROWS_AS(synthetic_spec_from_json(nlohmann::json{{"noise", -1.0}}), Error);
  CHECK_THROWS_AS(synthetic_spec_from_json(nlohmann::json{{"noise", "loud"}}), Error);
}

TEST_CASE("generated data matches the sizes and splits are stratified") {
  const auto spec = small_spec();
  const auto data = gen_power_law(spec);
  const auto sizes = power_law_sizes(spec);
  REQUIRE(data.size() == static_cast<Index>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0})));
  CHECK(data.features.rows() == spec.input_dim);

  std::vector<Index> all;
  all.insert(all.end(), data.train.begin(), data.train.end());
  all.insert(all.end(), data.val.begin(), data.val.end());
  all.insert(all.end(), data.test.begin(), data.test.end());
  std::sort(all.begin(), all.end());
  std::vector<Index> expect(static_cast<std::size_t>(data.size()));
  std::iota(expect.begin(), expect.end(), Index{0});
  CHECK(all == expect);

  for (int c = 0; c < spec.num_classes; ++c) {
    auto count = [&](const std::vector<Index>& ids) {
      return std::count_if(ids.begin(), ids.end(),
                           [&](Index i) { return data.labels[static_cast<std::size_t>(i)] == c; });
    };
    const double n = static_cast<double>(sizes[static_cast<std::size_t>(c)]);
    CHECK(std::count(data.labels.begin(), data.labels.end(), c) == static_cast<long>(n));
    CHECK(std::abs(count(data.train) - 0.7 * n) <= 0.5 + 1e-9);
    CHECK(std::abs(count(data.val) - 0.1 * n) <= 0.5 + 1e-9);
  }
}

TEST_CASE("mode means respect the angle when noise is zero") {
  auto spec = small_spec();
  spec.noise = 0;
  spec.min_mode_angle_deg = 45;
  const auto data = gen_power_law(spec);
  std::vector<Vector> modes;
  for (Index i = 0; i < data.size(); ++i) {
    Vector v = data.features.col(i);
    CHECK(v.norm() == doctest::Approx(1.0));
    bool seen = false;
    for (const auto& m : modes) seen = seen || (m - v).norm() < 1e-12;
    if (!seen) modes.push_back(v);
  }
  CHECK(modes.size() <= static_cast<std::size_t>(spec.num_classes * spec.modes_per_class));
  for (std::size_t a = 0; a < modes.size(); ++a) {
    for (std::size_t b = a + 1; b < modes.size(); ++b) {
      CHECK(modes[a].dot(modes[b]) <= std::cos(45.0 * M_PI / 180.0) + 1e-12);
    }
  }
}

TEST_CASE("generation is deterministic and files are byte-identical") {
  const auto dir = scratch_dir("det");
  const auto spec = small_spec(11);
  save_dataset(dir / "a.csv", dir / "a.json", gen_power_law(spec), &spec);
  save_dataset(dir / "b.csv", dir / "b.json", gen_power_law(spec), &spec);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));

  const auto other = small_spec(12);
  save_dataset(dir / "c.csv", dir / "c.json", gen_power_law(other), &other);
  CHECK(slurp(dir / "a.csv") != slurp(dir / "c.csv"));
  fs::remove_all(dir);
}

TEST_CASE("save and load round trip") {
  const auto dir = scratch_dir("io");
  const auto spec = small_spec();
  const auto data = gen_power_law(spec);
  save_dataset(dir / "d.csv", dir / "d.json", data, &spec);
  const auto back = load_dataset(dir / "d.csv", dir / "d.json");
  CHECK(back.num_classes == data.num_classes);
  CHECK(back.labels == data.labels);
  CHECK(back.train == data.train);
  CHECK(back.val == data.val);
  CHECK(back.test == data.test);
  CHECK(back.features == data.features);

  try {
    load_dataset(dir / "missing.csv", dir / "d.json");
    FAIL("expected IoError");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::IoError);
  }
  fs::remove_all(dir);
}

TEST_CASE("spec JSON round trip") {
  auto spec = small_spec(99);
  spec.gamma = 1.25;
  const auto back = synthetic_spec_from_json(to_json(spec));
  CHECK(to_json(back) == to_json(spec));
}

TEST_CASE("gather") {
  const auto data = gen_power_law(small_spec());
  const std::vector<Index> ids{4, 0, 4};
  const Matrix g = data.gather(ids);
  CHECK(g.cols() == 3);
  CHECK(g.col(0) == data.features.col(4));
  CHECK(g.col(1) == data.features.col(0));
  CHECK(data.gather_labels(ids) == std::vector<int>{data.labels[4], data.labels[0], data.labels[4]});
}
