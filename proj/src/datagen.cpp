#include "clmle/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace clmle {

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw Error(Errc::SpecError, "need at least 2 classes");
  if (!(gamma > 0)) throw Error(Errc::SpecError, "gamma must be > 0");
  if (!(l_min >= 1) || !(l_max >= l_min)) throw Error(Errc::SpecError, "need l_max >= l_min >= 1");
  if (modes_per_class < 1) throw Error(Errc::SpecError, "modes_per_class must be >= 1");
  if (input_dim < 2) throw Error(Errc::SpecError, "input_dim must be >= 2");
  if (!(noise >= 0)) throw Error(Errc::SpecError, "noise must be >= 0");
  if (!(min_mode_angle_deg >= 0 && min_mode_angle_deg < 90)) {
    throw Error(Errc::SpecError, "min_mode_angle_deg must be in [0, 90)");
  }
}

nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"num_classes", s.num_classes}, {"gamma", s.gamma},
          {"l_max", s.l_max},             {"l_min", s.l_min},
          {"modes_per_class", s.modes_per_class}, {"input_dim", s.input_dim},
          {"noise", s.noise},             {"min_mode_angle_deg", s.min_mode_angle_deg},
          {"seed", s.seed}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  try {
    s.num_classes = j.value("num_classes", s.num_classes);
    s.gamma = j.value("gamma", s.gamma);
    s.l_max = j.value("l_max", s.l_max);
    s.l_min = j.value("l_min", s.l_min);
    s.modes_per_class = j.value("modes_per_class", s.modes_per_class);
    s.input_dim = j.value("input_dim", s.input_dim);
    s.noise = j.value("noise", s.noise);
    s.min_mode_angle_deg = j.value("min_mode_angle_deg", s.min_mode_angle_deg);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::SpecError, e.what());
  }
  s.validate();
  return s;
}

Matrix Dataset::gather(std::span<const Index> ids) const {
  Matrix out(features.rows(), static_cast<Index>(ids.size()));
  for (std::size_t j = 0; j < ids.size(); ++j) out.col(static_cast<Index>(j)) = features.col(ids[j]);
  return out;
}

std::vector<int> Dataset::gather_labels(std::span<const Index> ids) const {
  std::vector<int> out;
  out.reserve(ids.size());
  for (Index id : ids) out.push_back(labels[static_cast<std::size_t>(id)]);
  return out;
}

std::vector<std::size_t> power_law_sizes(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<std::size_t> sizes;
  for (int c = 1; c <= spec.num_classes; ++c) {
    const Scalar f = spec.l_max / (std::pow(static_cast<Scalar>(c), spec.gamma) + spec.l_min);
    sizes.push_back(static_cast<std::size_t>(std::max<long long>(1, std::llround(f))));
  }
  return sizes;
}

void stratified_split(Dataset& data, Scalar train_frac, Scalar val_frac, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  data.train.clear();
  data.val.clear();
  data.test.clear();
  for (int c = 0; c < data.num_classes; ++c) {
    std::vector<Index> ids;
    for (Index i = 0; i < data.size(); ++i) {
      if (data.labels[static_cast<std::size_t>(i)] == c) ids.push_back(i);
    }
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n = static_cast<Scalar>(ids.size());
    const auto n_train = static_cast<std::size_t>(std::llround(train_frac * n));
    const auto n_val = std::min(ids.size() - n_train, static_cast<std::size_t>(std::llround(val_frac * n)));
    data.train.insert(data.train.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    data.val.insert(data.val.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                    ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    data.test.insert(data.test.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
  }
  std::sort(data.train.begin(), data.train.end());
  std::sort(data.val.begin(), data.val.end());
  std::sort(data.test.begin(), data.test.end());
}

Dataset gen_power_law(const SyntheticSpec& spec) {
  const auto sizes = power_law_sizes(spec);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<Scalar> normal(0.0, 1.0);

  const int num_modes = spec.num_classes * spec.modes_per_class;
  const Scalar max_cos = std::cos(spec.min_mode_angle_deg * std::numbers::pi / 180.0);
  Matrix means(spec.input_dim, num_modes);
  for (int m = 0; m < num_modes; ++m) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 100000) throw Error(Errc::SpecError, "cannot place mode means at the requested angle");
      Vector v(spec.input_dim);
      for (Index k = 0; k < v.size(); ++k) v[k] = normal(rng);
      v.normalize();
      bool ok = true;
      for (int p = 0; p < m && ok; ++p) ok = means.col(p).dot(v) <= max_cos;
      if (ok) {
        means.col(m) = v;
        break;
      }
    }
  }

  Dataset data;
  data.num_classes = spec.num_classes;
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  data.features.resize(spec.input_dim, static_cast<Index>(total));
  Index col = 0;
  std::uniform_int_distribution<int> pick_mode(0, spec.modes_per_class - 1);
  for (int c = 0; c < spec.num_classes; ++c) {
    for (std::size_t j = 0; j < sizes[static_cast<std::size_t>(c)]; ++j) {
      const int mode = c * spec.modes_per_class + pick_mode(rng);
      for (Index k = 0; k < spec.input_dim; ++k) {
        data.features(k, col) = means(k, mode) + spec.noise * normal(rng);
      }
      data.labels.push_back(c);
      ++col;
    }
  }
  stratified_split(data, 0.7, 0.1, spec.seed ^ 0x5bd1e995ULL);
  return data;
}

void save_dataset(const std::filesystem::path& csv_path, const std::filesystem::path& json_path,
                  const Dataset& data, const SyntheticSpec* spec) {
  std::FILE* f = std::fopen(csv_path.c_str(), "w");
  if (!f) throw Error(Errc::IoError, "cannot open " + csv_path.string());
  std::fprintf(f, "id,label");
  for (Index k = 0; k < data.features.rows(); ++k) std::fprintf(f, ",x%ld", static_cast<long>(k));
  std::fprintf(f, "\n");
  for (Index i = 0; i < data.size(); ++i) {
    std::fprintf(f, "%ld,%d", static_cast<long>(i), data.labels[static_cast<std::size_t>(i)]);
    for (Index k = 0; k < data.features.rows(); ++k) std::fprintf(f, ",%.17g", data.features(k, i));
    std::fprintf(f, "\n");
  }
  if (std::fclose(f) != 0) throw Error(Errc::IoError, "failed writing " + csv_path.string());

  nlohmann::json j;
  j["format"] = "clmle-dataset";
  j["version"] = 1;
  j["num_classes"] = data.num_classes;
  j["input_dim"] = data.features.rows();
  j["num_samples"] = data.size();
  j["splits"] = {{"train", data.train}, {"val", data.val}, {"test", data.test}};
  if (spec) j["spec"] = to_json(*spec);
  std::ofstream os(json_path, std::ios::trunc);
  if (!os) throw Error(Errc::IoError, "cannot open " + json_path.string());
  os << j.dump(2) << "\n";
  if (!os) throw Error(Errc::IoError, "failed writing " + json_path.string());
}

Dataset load_dataset(const std::filesystem::path& csv_path, const std::filesystem::path& json_path) {
  std::ifstream js(json_path);
  if (!js) throw Error(Errc::IoError, "cannot open " + json_path.string());
  nlohmann::json j;
  try {
    js >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::IoError, std::string("bad dataset sidecar: ") + e.what());
  }
  Dataset data;
  try {
    data.num_classes = j.at("num_classes").get<int>();
    const auto dim = j.at("input_dim").get<Index>();
    const auto n = j.at("num_samples").get<Index>();
    data.features.resize(dim, n);
    data.labels.assign(static_cast<std::size_t>(n), -1);
    data.train = j.at("splits").at("train").get<std::vector<Index>>();
    data.val = j.at("splits").at("val").get<std::vector<Index>>();
    data.test = j.at("splits").at("test").get<std::vector<Index>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::IoError, std::string("bad dataset sidecar: ") + e.what());
  }

  std::ifstream is(csv_path);
  if (!is) throw Error(Errc::IoError, "cannot open " + csv_path.string());
  std::string line;
  std::getline(is, line);  // header
  Index rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');
    const Index id = std::stol(cell);
    if (id < 0 || id >= data.size()) throw Error(Errc::IoError, "sample id out of range in " + csv_path.string());
    std::getline(ls, cell, ',');
    data.labels[static_cast<std::size_t>(id)] = std::stoi(cell);
    for (Index k = 0; k < data.features.rows(); ++k) {
      if (!std::getline(ls, cell, ',')) throw Error(Errc::IoError, "short row in " + csv_path.string());
      data.features(k, id) = std::strtod(cell.c_str(), nullptr);
    }
    ++rows;
  }
  if (rows != data.size()) throw Error(Errc::IoError, "row count does not match the sidecar");
  return data;
}

}  // namespace clmle
