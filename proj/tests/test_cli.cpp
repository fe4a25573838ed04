#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "clmle/metrics.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "clmle");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = clmle::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("clmle_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json small_config() {
  return {{"data", {{"num_classes", 4}, {"l_max", 120}, {"input_dim", 8}, {"modes_per_class", 2}}},
          {"train",
           {{"cluster_size", 5},
            {"clusters_per_batch", 4},
            {"samples_per_cluster", 3},
            {"kmeans_iters", 10},
            {"margin_fractions", {0.25}},
            {"hidden", {16}},
            {"embedding_dim", 8},
            {"max_iterations", 60},
            {"refresh_period", 30},
            {"eval_period", 10},
            {"pretrain_epochs", 2}}}};
}

fs::path write_config(const fs::path& dir, const json& j) {
  const auto p = dir / "config.in.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

json error_of(const Outcome& o) { return json::parse(o.err); }

}  // namespace

TEST_CASE("gen-data is byte-identical across runs") {
  const auto dir = scratch("gen");
  const auto bundled = fs::path(CLMLE_SOURCE_DIR) / "configs" / "default.json";
  REQUIRE(run_cli({"gen-data", "--config", bundled.string(), "--out", (dir / "a").string()}).code == 0);
  REQUIRE(run_cli({"gen-data", "--config", bundled.string(), "--out", (dir / "b").string()}).code == 0);
  CHECK(slurp(dir / "a" / "dataset.csv") == slurp(dir / "b" / "dataset.csv"));
  CHECK(slurp(dir / "a" / "dataset.json") == slurp(dir / "b" / "dataset.json"));
  CHECK_FALSE(slurp(dir / "a" / "dataset.csv").empty());
  fs::remove_all(dir);
}

TEST_CASE("existing outputs need --force") {
  const auto dir = scratch("force");
  CHECK(run_cli({"gen-data", "--out", dir.string()}).code == 0);
  const auto again = run_cli({"gen-data", "--out", dir.string()});
  CHECK(again.code == clmle::cli::kIoError);
  CHECK(error_of(again).at("error") == "IoError");
  CHECK(run_cli({"gen-data", "--out", dir.string(), "--force"}).code == 0);
  fs::remove_all(dir);
}

TEST_CASE("error exit codes") {
  const auto dir = scratch("errors");
  SUBCASE("unknown command") {
    const auto o = run_cli({"fly", "--out", dir.string()});
    CHECK(o.code == clmle::cli::kConfigError);
    CHECK(error_of(o).contains("message"));
  }
  SUBCASE("missing config file") {
    const auto o = run_cli({"train", "--config", (dir / "nope.json").string(), "--out", dir.string()});
    CHECK(o.code == clmle::cli::kIoError);
  }
  SUBCASE("schema violation") {
    auto j = small_config();
    j["train"]["learning_rate"] = -1;
    const auto o = run_cli({"train", "--config", write_config(dir, j).string(), "--out", dir.string()});
    CHECK(o.code == clmle::cli::kConfigError);
    CHECK(error_of(o).at("error") == "ConfigError");
  }
  SUBCASE("unknown key") {
    auto j = small_config();
    j["extra"] = 1;
    CHECK(run_cli({"train", "--config", write_config(dir, j).string(), "--out", dir.string()}).code ==
          clmle::cli::kConfigError);
  }
  SUBCASE("divergence") {
    auto j = small_config();
    j["train"]["loss"] = "softmax";
    j["train"]["learning_rate"] = 1e12;
    j["train"]["pretrain_lr"] = 1e12;
    const auto o = run_cli({"train", "--config", write_config(dir, j).string(), "--out", dir.string()});
    CHECK(o.code == clmle::cli::kDivergence);
    CHECK(error_of(o).at("error") == "DivergenceDetected");
  }
  SUBCASE("missing model") {
    CHECK(run_cli({"eval", "--out", dir.string()}).code == clmle::cli::kIoError);
  }
  fs::remove_all(dir);
}

TEST_CASE("eval reproduces the training validation accuracy") {
  const auto dir = scratch("eval");
  auto j = small_config();
  j["eval_split"] = "val";
  const auto cfg = write_config(dir, j).string();
  for (const char* loss : {"clmle", "softmax"}) {
    CAPTURE(loss);
    j["train"]["loss"] = loss;
    write_config(dir, j);
    const auto out = dir / loss;
    REQUIRE(run_cli({"train", "--config", cfg, "--out", out.string()}).code == 0);
    REQUIRE(run_cli({"eval", "--config", cfg, "--out", out.string()}).code == 0);
    const auto report = json::parse(slurp(out / "train_report.json"));
    const auto eval = json::parse(slurp(out / "eval_report.json"));
    CHECK(std::abs(eval.at("balanced_accuracy").get<double>() -
                   report.at("final_val_balanced_accuracy").get<double>()) <= 1e-12);
    CHECK(fs::exists(out / "predictions.csv"));
    CHECK(fs::exists(out / "eval_report.csv"));

    // the saved resolved config reproduces the run
    const auto again = dir / (std::string(loss) + "_again");
    REQUIRE(run_cli({"train", "--config", (out / "config.json").string(), "--out", again.string()}).code == 0);
    CHECK(slurp(again / "train_report.csv") == slurp(out / "train_report.csv"));
  }
  fs::remove_all(dir);
}

TEST_CASE("export-embeddings and tune-n") {
  const auto dir = scratch("export");
  const auto cfg = write_config(dir, small_config()).string();
  REQUIRE(run_cli({"train", "--config", cfg, "--out", dir.string()}).code == 0);
  REQUIRE(run_cli({"export-embeddings", "--config", cfg, "--out", dir.string()}).code == 0);
  std::ifstream is(dir / "embeddings.csv");
  std::string header;
  std::getline(is, header);
  CHECK(header == "id,label,e0,e1,e2,e3,e4,e5,e6,e7");

  REQUIRE(run_cli({"tune-n", "--config", cfg, "--out", dir.string()}).code == 0);
  const auto t = json::parse(slurp(dir / "tune_n.json"));
  CHECK_FALSE(t.at("grid").empty());
  CHECK(t.at("best_n").get<int>() >= 1);
  fs::remove_all(dir);
}

TEST_CASE("compare emits one populated row per method") {
  const auto dir = scratch("compare");
  const auto cfg = write_config(dir, small_config()).string();
  const auto o = run_cli({"compare", "--config", cfg, "--out", dir.string(), "--seed", "3"});
  REQUIRE(o.code == 0);
  std::ifstream is(dir / "compare.csv");
  std::string line;
  std::getline(is, line);
  CHECK(line.rfind("method,test_balanced_accuracy,", 0) == 0);
  std::vector<std::string> methods;
  while (std::getline(is, line)) {
    methods.push_back(line.substr(0, line.find(',')));
    CHECK(line.find(",,") == std::string::npos);
    CHECK(line.back() != ',');
  }
  CHECK(methods == std::vector<std::string>{"softmax", "triplet", "lmle", "clmle"});
  fs::remove_all(dir);
}

TEST_CASE("schema output matches the published schema") {
  const auto o = run_cli({"schema"});
  CHECK(o.code == 0);
  CHECK(o.out == slurp(fs::path(CLMLE_SOURCE_DIR) / "schemas" / "run_config.schema.json"));
  const auto schema = json::parse(o.out);
  clmle::cli::validate_against_schema(schema, json::parse(slurp(fs::path(CLMLE_SOURCE_DIR) / "configs" / "default.json")));
}

TEST_CASE("schema validator") {
  const json schema = json::parse(clmle::cli::run_config_schema());
  CHECK_NOTHROW(clmle::cli::validate_against_schema(schema, json::object()));
  CHECK_THROWS_AS(clmle::cli::validate_against_schema(schema, json{{"eval_split", "dev"}}), clmle::Error);
  CHECK_THROWS_AS(clmle::cli::validate_against_schema(schema, json{{"train", {{"max_rounds", 1.5}}}}), clmle::Error);
  CHECK_THROWS_AS(clmle::cli::validate_against_schema(schema, json{{"train", {{"lmle_margins", {0.1, 0.1}}}}}),
                  clmle::Error);
  CHECK_THROWS_AS(clmle::cli::validate_against_schema(schema, json{{"data", {{"num_classes", "ten"}}}}), clmle::Error);
}
