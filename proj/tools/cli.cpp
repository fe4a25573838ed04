#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "clmle/classifier.hpp"
#include "clmle/datagen.hpp"
#include "clmle/error.hpp"
#include "clmle/metrics.hpp"
#include "clmle/trainer.hpp"

namespace clmle::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunConfig {
  SyntheticSpec data;
  std::optional<fs::path> dataset_dir;
  std::optional<fs::path> model_dir;
  std::string eval_split = "test";
  Scalar target_fraction = 0.9;
  TrainConfig train;
};

json to_json(const RunConfig& c) {
  json j{{"data", clmle::to_json(c.data)},
         {"eval_split", c.eval_split},
         {"target_fraction", c.target_fraction},
         {"train", clmle::to_json(c.train)}};
  if (c.dataset_dir) j["dataset_dir"] = c.dataset_dir->string();
  if (c.model_dir) j["model_dir"] = c.model_dir->string();
  return j;
}

std::string type_name(const json& v) {
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  return v.type_name();
}

bool has_type(const json& v, const std::string& t) {
  if (t == "integer") return v.is_number_integer();
  if (t == "number") return v.is_number();
  if (t == "string") return v.is_string();
  if (t == "boolean") return v.is_boolean();
  if (t == "array") return v.is_array();
  if (t == "object") return v.is_object();
  if (t == "null") return v.is_null();
  return false;
}

void validate_at(const json& schema, const json& v, const std::string& path) {
  auto fail = [&](const std::string& why) {
    throw Error(Errc::ConfigError, (path.empty() ? std::string("config") : path) + ": " + why);
  };
  if (schema.contains("type")) {
    const auto& t = schema["type"];
    bool ok = false;
    if (t.is_string()) {
      ok = has_type(v, t.get<std::string>());
    } else {
      for (const auto& x : t) ok = ok || has_type(v, x.get<std::string>());
    }
    if (!ok) fail("expected " + t.dump() + ", got " + type_name(v));
  }
  if (schema.contains("enum")) {
    bool ok = false;
    for (const auto& x : schema["enum"]) ok = ok || x == v;
    if (!ok) fail("must be one of " + schema["enum"].dump());
  }
  if (v.is_number()) {
    const double x = v.get<double>();
    if (schema.contains("minimum") && x < schema["minimum"].get<double>()) fail("below minimum");
    if (schema.contains("maximum") && x > schema["maximum"].get<double>()) fail("above maximum");
    if (schema.contains("exclusiveMinimum") && x <= schema["exclusiveMinimum"].get<double>()) fail("too small");
    if (schema.contains("exclusiveMaximum") && x >= schema["exclusiveMaximum"].get<double>()) fail("too large");
  }
  if (v.is_object()) {
    const json props = schema.value("properties", json::object());
    for (const auto& [key, value] : v.items()) {
      if (props.contains(key)) {
        validate_at(props[key], value, path.empty() ? key : path + "." + key);
      } else if (schema.contains("additionalProperties") && schema["additionalProperties"] == false) {
        fail("unknown key '" + key + "'");
      }
    }
  }
  if (v.is_array()) {
    if (schema.contains("minItems") && v.size() < schema["minItems"].get<std::size_t>()) fail("too few items");
    if (schema.contains("maxItems") && v.size() > schema["maxItems"].get<std::size_t>()) fail("too many items");
    if (schema.contains("items")) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        validate_at(schema["items"], v[i], path + "[" + std::to_string(i) + "]");
      }
    }
  }
}

RunConfig load_config(const std::optional<fs::path>& path, std::optional<std::uint64_t> seed) {
  json j = json::object();
  if (path) {
    std::ifstream is(*path);
    if (!is) throw Error(Errc::IoError, "cannot open config " + path->string());
    try {
      is >> j;
    } catch (const json::exception& e) {
      throw Error(Errc::ConfigError, std::string("config is not valid JSON: ") + e.what());
    }
  }
  validate_against_schema(json::parse(run_config_schema()), j);

  RunConfig c;
  try {
    if (j.contains("data")) c.data = synthetic_spec_from_json(j["data"]);
  } catch (const Error& e) {
    throw Error(Errc::ConfigError, e.what());
  }
  if (j.contains("train")) c.train = train_config_from_json(j["train"]);
  if (j.contains("dataset_dir")) c.dataset_dir = j["dataset_dir"].get<std::string>();
  if (j.contains("model_dir")) c.model_dir = j["model_dir"].get<std::string>();
  c.eval_split = j.value("eval_split", c.eval_split);
  c.target_fraction = j.value("target_fraction", c.target_fraction);
  if (seed) {
    c.data.seed = *seed;
    c.train.seed = *seed;
  }
  return c;
}

Dataset load_data(const RunConfig& c) {
  if (c.dataset_dir) return load_dataset(*c.dataset_dir / "dataset.csv", *c.dataset_dir / "dataset.json");
  return gen_power_law(c.data);
}

const std::vector<Index>& split_ids(const Dataset& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "val") return d.val;
  return d.test;
}

void prepare_outputs(const fs::path& dir, const std::vector<std::string>& names, bool force) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoError, "cannot create " + dir.string() + ": " + ec.message());
  for (const auto& n : names) {
    if (fs::exists(dir / n) && !force) {
      throw Error(Errc::IoError, (dir / n).string() + " exists; pass --force to overwrite");
    }
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(Errc::IoError, "cannot open " + path.string());
  os << j.dump(2) << "\n";
  if (!os) throw Error(Errc::IoError, "failed writing " + path.string());
}

std::FILE* open_csv(const fs::path& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw Error(Errc::IoError, "cannot open " + path.string());
  return f;
}

void close_csv(std::FILE* f, const fs::path& path) {
  if (std::fclose(f) != 0) throw Error(Errc::IoError, "failed writing " + path.string());
}

fs::path model_dir_of(const RunConfig& c, const fs::path& out) { return c.model_dir.value_or(out); }

// Verification ROC over every pair of the split, on the model's embeddings.
RocResult pair_roc(const Matrix& emb, const std::vector<int>& labels) {
  std::vector<Scalar> scores;
  std::vector<char> same;
  for (Index a = 0; a < emb.cols(); ++a) {
    for (Index b = a + 1; b < emb.cols(); ++b) {
      scores.push_back(emb.col(a).dot(emb.col(b)));
      same.push_back(labels[static_cast<std::size_t>(a)] == labels[static_cast<std::size_t>(b)]);
    }
  }
  std::unique_ptr<bool[]> flags(new bool[same.size()]);
  for (std::size_t i = 0; i < same.size(); ++i) flags[i] = same[i] != 0;
  const std::vector<Scalar> targets{1e-3, 1e-2, 1e-1};
  return roc_tar_far(scores, std::span<const bool>(flags.get(), same.size()), targets);
}

int cmd_gen_data(const RunConfig& c, const fs::path& out, bool force, std::ostream& os) {
  prepare_outputs(out, {"dataset.csv", "dataset.json"}, force);
  const Dataset d = gen_power_law(c.data);
  save_dataset(out / "dataset.csv", out / "dataset.json", d, &c.data);
  os << "wrote " << d.size() << " samples in " << d.num_classes << " classes to " << out.string() << "\n";
  return kOk;
}

int cmd_train(const RunConfig& c, const fs::path& out, bool force, std::ostream& os) {
  prepare_outputs(out, {"encoder.bin", "model.json", "train_report.json", "train_report.csv", "config.json"}, force);
  const Dataset d = load_data(c);
  const TrainResult r = train(d, c.train);
  save_model(out, r.model);
  write_json(out / "train_report.json", to_json(r.report));
  write_report_csv(out / "train_report.csv", r.report);
  write_json(out / "config.json", to_json(c));
  os << loss_kind_name(c.train.loss) << ": " << r.report.losses.size() << " iterations, val balanced accuracy "
     << r.report.final_val_balanced_accuracy << "\n";
  return kOk;
}

int cmd_eval(const RunConfig& c, const fs::path& out, bool force, std::ostream& os) {
  prepare_outputs(out, {"eval_report.json", "eval_report.csv", "predictions.csv"}, force);
  const Model m = load_model(model_dir_of(c, out));
  const Dataset d = load_data(c);
  const auto& ids = split_ids(d, c.eval_split);
  const Matrix x = d.gather(ids);
  const auto y = d.gather_labels(ids);
  const auto pred = m.predict(x);
  EvalReport report = evaluate(pred, y);
  const Matrix emb = embed(m.encoder, x);
  if (report.classes.size() >= 2) report.roc = pair_roc(emb, y);

  json j = to_json(report);
  j["split"] = c.eval_split;
  j["loss"] = loss_kind_name(m.kind);
  write_json(out / "eval_report.json", j);
  write_eval_csv(out / "eval_report.csv", report);

  const fs::path pred_path = out / "predictions.csv";
  std::FILE* f = open_csv(pred_path);
  std::fprintf(f, "id,label,predicted,retrieved_clusters,similarities\n");
  std::optional<ClusterSearchIndex> index;
  if (m.kind != LossKind::Softmax) index = build_index(m.clusters, m.n_retrieve);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::string clusters, sims;
    if (index) {
      for (const auto& r : knn_clusters(*index, normalize(emb.col(static_cast<Index>(i))))) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", r.similarity);
        clusters += (clusters.empty() ? "" : ";") + std::to_string(r.cluster_id);
        sims += (sims.empty() ? "" : ";") + std::string(buf);
      }
    }
    std::fprintf(f, "%ld,%d,%d,%s,%s\n", static_cast<long>(ids[i]), y[i], pred[i], clusters.c_str(), sims.c_str());
  }
  close_csv(f, pred_path);
  os << c.eval_split << " balanced accuracy " << report.balanced_accuracy << "\n";
  return kOk;
}

int cmd_compare(const RunConfig& c, const fs::path& out, bool force, std::ostream& os) {
  prepare_outputs(out, {"compare.csv", "compare.json"}, force);
  const Dataset d = load_data(c);
  const auto& ids = split_ids(d, c.eval_split);
  const Matrix x = d.gather(ids);
  const auto y = d.gather_labels(ids);

  struct Row {
    LossKind kind;
    TrainReport report;
    Scalar eval_ba;
    double seconds;
  };
  std::vector<Row> rows;
  for (auto kind : {LossKind::Softmax, LossKind::Triplet, LossKind::Lmle, LossKind::Clmle}) {
    TrainConfig tc = c.train;
    tc.loss = kind;
    const auto start = std::chrono::steady_clock::now();
    TrainResult r = train(d, tc);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const Scalar ba = balanced_accuracy(r.model.predict(x), y);
    rows.push_back({kind, std::move(r.report), ba, secs});
  }
  // one shared target: a fraction of the CLMLE run's final validation accuracy
  const Scalar target = c.target_fraction * rows.back().report.final_val_balanced_accuracy;

  const fs::path csv = out / "compare.csv";
  std::FILE* f = open_csv(csv);
  std::fprintf(f, "method,%s_balanced_accuracy,val_balanced_accuracy,target,seen_to_target,final_loss,seconds\n",
               c.eval_split.c_str());
  json j = json::array();
  for (const auto& r : rows) {
    const auto seen = r.report.seen_to_reach(target);
    const Scalar final_loss = r.report.losses.empty() ? 0 : r.report.losses.back();
    const std::string seen_text = seen ? std::to_string(*seen) : "inf";
    std::fprintf(f, "%s,%.17g,%.17g,%.17g,%s,%.17g,%.3f\n", loss_kind_name(r.kind).c_str(), r.eval_ba,
                 r.report.final_val_balanced_accuracy, target, seen_text.c_str(), final_loss, r.seconds);
    j.push_back({{"method", loss_kind_name(r.kind)},
                 {"split", c.eval_split},
                 {"balanced_accuracy", r.eval_ba},
                 {"val_balanced_accuracy", r.report.final_val_balanced_accuracy},
                 {"target", target},
                 {"seen_to_target", seen ? json(*seen) : json(nullptr)},
                 {"final_loss", final_loss},
                 {"seconds", r.seconds},
                 {"report", to_json(r.report)}});
    os << loss_kind_name(r.kind) << " " << c.eval_split << " balanced accuracy " << r.eval_ba << "\n";
  }
  close_csv(f, csv);
  write_json(out / "compare.json", j);
  return kOk;
}

int cmd_export(const RunConfig& c, const fs::path& out, bool force, std::ostream& os) {
  prepare_outputs(out, {"embeddings.csv"}, force);
  const Model m = load_model(model_dir_of(c, out));
  const Dataset d = load_data(c);
  std::vector<Index> ids(static_cast<std::size_t>(d.size()));
  std::iota(ids.begin(), ids.end(), Index{0});
  write_embeddings_csv(out / "embeddings.csv", embed(m.encoder, d.features), ids, d.labels);
  os << "wrote " << ids.size() << " embeddings\n";
  return kOk;
}

int cmd_tune_n(const RunConfig& c, const fs::path& out, bool force, std::ostream& os) {
  prepare_outputs(out, {"tune_n.json"}, force);
  const Model m = load_model(model_dir_of(c, out));
  if (m.kind == LossKind::Softmax) throw Error(Errc::ConfigError, "tune-n needs a metric-learning model");
  const Dataset d = load_data(c);
  const Matrix emb = embed(m.encoder, d.gather(d.val));
  const auto y = d.gather_labels(d.val);
  json grid = json::array();
  const std::size_t best = tune_n(m.clusters.clusters.size(), [&](std::size_t n) {
    const Scalar ba = balanced_accuracy(predict_all(build_index(m.clusters, n), emb), y);
    grid.push_back({{"n", n}, {"val_balanced_accuracy", ba}});
    return ba;
  });
  write_json(out / "tune_n.json", {{"grid", grid}, {"best_n", best}, {"model_n", m.n_retrieve}});
  os << "best N " << best << "\n";
  return kOk;
}

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::ConfigError:
    case Errc::SpecError:
      return kConfigError;
    case Errc::IoError:
      return kIoError;
    case Errc::DivergenceDetected:
      return kDivergence;
    default:
      return kFailure;
  }
}

void report_error(std::ostream& err, const std::string& kind, const std::string& message) {
  err << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

}  // namespace

void validate_against_schema(const json& schema, const json& value) { validate_at(schema, value, ""); }

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cluster-based large margin local embedding"};
  std::string command;
  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  bool force = false;
  app.add_option("command", command, "gen-data | train | eval | compare | export-embeddings | tune-n | schema")
      ->required()
      ->check(CLI::IsMember({"gen-data", "train", "eval", "compare", "export-embeddings", "tune-n", "schema"}));
  auto* config_opt = app.add_option("--config", config_path, "JSON run config");
  app.add_option("--out", out_dir, "output directory");
  auto* seed_opt = app.add_option("--seed", seed, "overrides data.seed and train.seed");
  app.add_flag("--force", force, "overwrite existing outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    report_error(err, "ConfigError", e.what());
    return kConfigError;
  }

  try {
    if (command == "schema") {
      out << run_config_schema();
      return kOk;
    }
    if (out_dir.empty()) throw Error(Errc::ConfigError, "--out is required");
    const RunConfig c = load_config(config_opt->count() ? std::optional<fs::path>(config_path) : std::nullopt,
                                    seed_opt->count() ? std::optional<std::uint64_t>(seed) : std::nullopt);
    const fs::path dir(out_dir);
    if (command == "gen-data") return cmd_gen_data(c, dir, force, out);
    if (command == "train") return cmd_train(c, dir, force, out);
    if (command == "eval") return cmd_eval(c, dir, force, out);
    if (command == "compare") return cmd_compare(c, dir, force, out);
    if (command == "export-embeddings") return cmd_export(c, dir, force, out);
    return cmd_tune_n(c, dir, force, out);
  } catch (const Error& e) {
    report_error(err, std::string(errc_name(e.code())), e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    report_error(err, "Failure", e.what());
    return kFailure;
  }
}

}  // namespace clmle::cli
