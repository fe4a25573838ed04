#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>

#include "clmle/metrics.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace clmle;

namespace {

double ba_oracle(const std::vector<int>& pred, const std::vector<int>& y) {
  std::map<int, std::pair<int, int>> hits;  // label -> (correct, total)
  for (std::size_t i = 0; i < y.size(); ++i) {
    hits[y[i]].second += 1;
    hits[y[i]].first += pred[i] == y[i];
  }
  double sum = 0;
  for (const auto& [c, h] : hits) sum += static_cast<double>(h.first) / h.second;
  return sum / static_cast<double>(hits.size());
}

// Best TAR over every threshold (including +inf) whose FAR fits the budget.
double tar_oracle(const std::vector<double>& s, const std::vector<bool>& same, double target) {
  std::vector<double> thresholds(s.begin(), s.end());
  thresholds.push_back(std::numeric_limits<double>::infinity());
  double npos = 0, nneg = 0;
  for (bool b : same) (b ? npos : nneg) += 1;
  double best = 0;
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) (same[i] ? tp : fp) += 1;
    }
    if (fp / nneg <= target) best = std::max(best, tp / npos);
  }
  return best;
}

double rank1_oracle(const Matrix& probes, const std::vector<int>& pl, const Matrix& gallery,
                    const std::vector<int>& gl) {
  int hit = 0;
  for (Index p = 0; p < probes.cols(); ++p) {
    std::vector<std::pair<double, Index>> order;
    for (Index g = 0; g < gallery.cols(); ++g) order.emplace_back(-probes.col(p).dot(gallery.col(g)), g);
    std::sort(order.begin(), order.end());
    hit += gl[static_cast<std::size_t>(order.front().second)] == pl[static_cast<std::size_t>(p)];
  }
  return static_cast<double>(hit) / static_cast<double>(probes.cols());
}

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::IoError;
}

}  // namespace

TEST_CASE("balanced accuracy examples") {
  CHECK(balanced_accuracy(std::vector<int>{0, 1, 1, 0}, std::vector<int>{0, 1, 1, 0}) == 1.0);
  // always predicting the majority class
  CHECK(balanced_accuracy(std::vector<int>(10, 0), std::vector<int>{0, 0, 0, 0, 0, 0, 0, 0, 1, 1}) == 0.5);
  // recall 0.8 and 0.5
  const std::vector<int> y{0, 0, 0, 0, 0, 1, 1, 1, 1};
  const std::vector<int> p{0, 0, 0, 0, 1, 1, 1, 0, 0};
  CHECK(balanced_accuracy(p, y) == doctest::Approx(0.65).epsilon(1e-15));

  const std::vector<int> classes{0, 1, 2};
  CHECK(code_of([&] { balanced_accuracy(p, y, classes); }) == Errc::EmptyClass);
  CHECK(code_of([&] { balanced_accuracy(std::vector<int>{0}, y); }) == Errc::ShapeMismatch);
}

TEST_CASE("balanced accuracy equals overall accuracy on balanced classes") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> pick(0, 3);
  std::vector<int> y, p;
  for (int c = 0; c < 4; ++c) {
    for (int i = 0; i < 25; ++i) {
      y.push_back(c);
      p.push_back(pick(rng));
    }
  }
  CHECK(balanced_accuracy(p, y) == doctest::Approx(overall_accuracy(p, y)).epsilon(1e-14));
}

TEST_CASE("balanced accuracy is invariant to duplicating a class") {
  const std::vector<int> y{0, 0, 1, 1, 1, 2};
  const std::vector<int> p{0, 1, 1, 1, 0, 2};
  auto y2 = y, p2 = p;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 1) {
      for (int k = 0; k < 4; ++k) {
        y2.push_back(y[i]);
        p2.push_back(p[i]);
      }
    }
  }
  CHECK(balanced_accuracy(p2, y2) == doctest::Approx(balanced_accuracy(p, y)).epsilon(1e-14));
}

TEST_CASE("metric oracles on random instances") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    CAPTURE(trial);
    std::uniform_int_distribution<int> nclass(2, 6), len(10, 80);
    const int c = nclass(rng);
    const int n = len(rng);
    std::uniform_int_distribution<int> pick(0, c - 1);
    std::vector<int> y(static_cast<std::size_t>(n)), p(static_cast<std::size_t>(n));
    for (auto& v : y) v = pick(rng);
    for (auto& v : p) v = pick(rng);
    CHECK(balanced_accuracy(p, y) == doctest::Approx(ba_oracle(p, y)).epsilon(1e-14));

    // scores quantised so that ties occur
    std::uniform_int_distribution<int> q(0, 12);
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<bool> same(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      same[static_cast<std::size_t>(i)] = i % 3 == 0;
      s[static_cast<std::size_t>(i)] = q(rng) / 12.0 + (same[static_cast<std::size_t>(i)] ? 0.2 : 0.0);
    }
    const std::vector<double> targets{0.0, 0.01, 0.1, 0.3, 1.0};
    std::unique_ptr<bool[]> flags(new bool[same.size()]);
    for (std::size_t i = 0; i < same.size(); ++i) flags[i] = same[i];
    const auto roc = roc_tar_far(s, std::span<const bool>(flags.get(), same.size()), targets);
    for (std::size_t t = 0; t < targets.size(); ++t) CHECK(roc.tar_at_far[t] == tar_oracle(s, same, targets[t]));

    const Matrix probes = oracle::random_unit_columns(4, 10, rng);
    const Matrix gallery = oracle::random_unit_columns(4, 15, rng);
    std::vector<int> pl(10), gl(15);
    for (auto& v : pl) v = pick(rng);
    for (auto& v : gl) v = pick(rng);
    CHECK(rank1_identification(probes, pl, gallery, gl) == rank1_oracle(probes, pl, gallery, gl));
  }
}

TEST_CASE("ROC examples") {
  const std::vector<double> targets{0.0, 0.1, 0.5};
  const bool sep_same[] = {true, true, false, false};
  const std::vector<double> sep{0.9, 0.8, 0.1, 0.2};
  const auto r = roc_tar_far(sep, sep_same, targets);
  for (double t : r.tar_at_far) CHECK(t == 1.0);
  CHECK(std::isinf(r.curve.front().threshold));
  CHECK(r.curve.front().far == 0.0);
  CHECK(r.curve.front().tar == 0.0);
  CHECK(r.curve.back().far == 1.0);
  CHECK(r.curve.back().tar == 1.0);

  const std::vector<double> flat{0.5, 0.5, 0.5, 0.5};
  const auto f = roc_tar_far(flat, sep_same, targets);
  REQUIRE(f.curve.size() == 2);
  CHECK(f.curve[1].far == 1.0);
  CHECK(f.curve[1].tar == 1.0);
  CHECK(f.tar_at_far[0] == 0.0);

  const bool all_same[] = {true, true, true, true};
  CHECK(code_of([&] { roc_tar_far(flat, all_same, targets); }) == Errc::DegeneratePairs);
}

TEST_CASE("ROC curve is monotone") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g(0, 1);
  std::vector<double> s(200);
  std::unique_ptr<bool[]> same(new bool[200]);
  for (std::size_t i = 0; i < 200; ++i) {
    same[i] = i % 2 == 0;
    s[i] = g(rng) + (same[i] ? 1.0 : 0.0);
  }
  const auto r = roc_tar_far(s, std::span<const bool>(same.get(), 200), std::vector<double>{1e-2});
  for (std::size_t k = 1; k < r.curve.size(); ++k) {
    CHECK(r.curve[k].threshold < r.curve[k - 1].threshold);
    CHECK(r.curve[k].far >= r.curve[k - 1].far);
    CHECK(r.curve[k].tar >= r.curve[k - 1].tar);
  }
}

TEST_CASE("rank-1 breaks ties toward the lowest gallery index") {
  Matrix gallery(2, 3);
  gallery << 1, 0, 1,
             0, 1, 0;
  Matrix probe(2, 1);
  probe << 1, 0;
  CHECK(rank1_identification(probe, std::vector<int>{7}, gallery, std::vector<int>{7, 1, 3}) == 1.0);
  CHECK(rank1_identification(probe, std::vector<int>{3}, gallery, std::vector<int>{7, 1, 3}) == 0.0);
}

TEST_CASE("imbalance level") {
  CHECK(imbalance_level(std::vector<int>{0, 1, 0, 1}) == 0.0);
  std::vector<int> two_percent(100, 0);
  two_percent[0] = two_percent[1] = 1;
  CHECK(imbalance_level(two_percent) == doctest::Approx(48.0).epsilon(1e-14));
  CHECK(imbalance_level(std::vector<int>(7, 0)) == 50.0);
  CHECK(imbalance_level(std::vector<int>(7, 1)) == 50.0);
  CHECK(code_of([] { imbalance_level(std::vector<int>{0, 2}); }) == Errc::NotBinary);
  CHECK(code_of([] { imbalance_level(std::vector<int>{}); }) == Errc::NotBinary);
}

TEST_CASE("evaluate report") {
  const std::vector<int> y{0, 0, 0, 1, 1, 2, 2, 2, 2, 2};
  const std::vector<int> p{0, 1, 0, 1, 9, 2, 2, 0, 2, 2};
  const auto r = evaluate(p, y);
  CHECK(r.classes == std::vector<int>{0, 1, 2});
  CHECK(r.class_counts == std::vector<std::size_t>{3, 2, 5});
  for (std::size_t k = 0; k < 3; ++k) {
    std::size_t sum = 0;
    for (auto v : r.confusion[k]) sum += v;
    CHECK(sum == r.class_counts[k]);
  }
  CHECK(r.confusion[1][3] == 1);  // prediction 9 is outside the class list
  CHECK(r.per_class_accuracy[2] == doctest::Approx(0.8));
  CHECK(r.balanced_accuracy == doctest::Approx((2.0 / 3 + 0.5 + 0.8) / 3).epsilon(1e-14));
  CHECK(r.overall_accuracy == doctest::Approx(0.7));
  CHECK(r.imbalance_levels[0] == doctest::Approx(20.0));
  CHECK(r.imbalance_levels[2] == doctest::Approx(0.0));

  const auto j = to_json(r);
  CHECK(j.at("balanced_accuracy").get<double>() == r.balanced_accuracy);
  CHECK(j.at("confusion").size() == 3);
  CHECK_FALSE(j.contains("roc"));

  const auto path = std::filesystem::temp_directory_path() / "clmle_metrics_eval.csv";
  write_eval_csv(path, r);
  std::ifstream is(path);
  std::string header, first;
  std::getline(is, header);
  std::getline(is, first);
  CHECK(header == "class,count,correct,accuracy,imbalance_level");
  CHECK(first.rfind("0,3,2,", 0) == 0);
  std::filesystem::remove(path);
}
