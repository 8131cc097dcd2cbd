#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <numbers>
#include <string>

#include <json.hpp>

#include "detthin/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("detthin_test_cli_" + std::to_string(getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// Runs the CLI inside the scratch directory and returns its exit status.
int cli(const std::string& args) {
  const std::string cmd = "cd '" + workdir().string() + "' && '" DETTHIN_CLI "' " + args + " >stdout.txt 2>stderr.txt";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const std::string& name) { return detthin::io::read_file(workdir() / name); }

void write(const std::string& name, const std::string& content) { detthin::io::write_atomic(workdir() / name, content); }

// Training set and Matérn-fitted model shared by several tests.
void ensure_matern_model() {
  if (fs::exists(workdir() / "matern_model.json")) return;
  ASSERT_EQ(cli("generate matern2 --lambda 10 --rm 0.2530 --window disk:1 --T 100 --seed 7 --out matern.jsonl"), 0);
  ASSERT_EQ(cli("fit matern.jsonl --mask theta0,sigma --out matern_model.json"), 0);
}

}  // namespace

TEST(CliGenerate, MaternWritesPairsAndManifest) {
  ASSERT_EQ(cli("generate matern2 --lambda 10 --rm 0.2530 --window disk:1 --T 20 --seed 7 --out g.jsonl"), 0);
  const auto data = detthin::io::read_training(workdir() / "g.jsonl");
  ASSERT_EQ(data.size(), 20u);
  for (const auto& d : data) {
    const auto kept = d.retained();
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t j = i + 1; j < kept.size(); ++j) EXPECT_GE(detthin::distance(kept[i], kept[j]), 0.2530);
  }
  const auto m = json::parse(slurp("g.jsonl.manifest.json"));
  EXPECT_EQ(m["command"], "generate");
  EXPECT_EQ(m["seed"], 7);
  EXPECT_EQ(m["config"]["kind"], "matern2");
  EXPECT_EQ(m["outputs"][0]["digest"], detthin::io::digest(slurp("g.jsonl")));
  EXPECT_TRUE(m.contains("wall_seconds"));
}

TEST(CliGenerate, TriangleAndPoissonAndZeroCount) {
  EXPECT_EQ(cli("generate triangle --lambda 10 --rt 0.6325 --window disk:1 --T 5 --seed 7 --out t.jsonl"), 0);
  EXPECT_EQ(detthin::io::read_training(workdir() / "t.jsonl").size(), 5u);
  EXPECT_EQ(cli("generate poisson --lambda 10 --retain 0.3 --window rect:0,1,0,2 --T 5 --seed 1 --out p.jsonl"), 0);
  EXPECT_EQ(detthin::io::read_training(workdir() / "p.jsonl").front().full.window().area(), 2.0);
  EXPECT_EQ(cli("generate matern2 --T 0 --seed 7 --out empty.jsonl"), 0);
  EXPECT_TRUE(slurp("empty.jsonl").empty());
}

TEST(CliGenerate, InputErrors) {
  EXPECT_EQ(cli("generate hexagons --T 1 --out x.jsonl"), 2);
  EXPECT_EQ(cli("generate matern2 --rm -1 --T 1 --out x.jsonl"), 2);
  EXPECT_EQ(cli("generate matern2 --window blob:1 --T 1 --out x.jsonl"), 2);
  EXPECT_EQ(cli("generate matern2 --T 1 --out /nonexistent-dir/x.jsonl"), 2);
  EXPECT_EQ(cli("generate"), 2);
}

TEST(CliGenerate, ByteIdenticalForSameSeed) {
  ASSERT_EQ(cli("generate triangle --T 10 --seed 3 --out a.jsonl"), 0);
  ASSERT_EQ(cli("generate triangle --T 10 --seed 3 --out b.jsonl"), 0);
  EXPECT_EQ(slurp("a.jsonl"), slurp("b.jsonl"));
  ASSERT_EQ(cli("generate triangle --T 10 --seed 4 --out c.jsonl"), 0);
  EXPECT_NE(slurp("a.jsonl"), slurp("c.jsonl"));
}

TEST(CliGenerate, ConfigOverridesFlags) {
  write("gen.json", R"({"T": 3, "seed": 9, "window": "disk:0,0,2"})");
  ASSERT_EQ(cli("generate matern2 --T 50 --seed 1 --config gen.json --out cfg.jsonl"), 0);
  const auto data = detthin::io::read_training(workdir() / "cfg.jsonl");
  ASSERT_EQ(data.size(), 3u);
  EXPECT_NEAR(data.front().full.window().area(), 4 * std::numbers::pi, 1e-12);
  const auto m = json::parse(slurp("cfg.jsonl.manifest.json"));
  EXPECT_EQ(m["seed"], 9);
  write("bad.json", R"({"no-such-flag": 1})");
  EXPECT_EQ(cli("generate matern2 --config bad.json --out x.jsonl"), 2);
}

TEST(CliFit, MaternMaskThetaZeroSigma) {
  ensure_matern_model();
  const auto j = json::parse(slurp("matern_model.json"));
  EXPECT_TRUE(j["converged"].get<bool>());
  EXPECT_GT(j["sigma"].get<double>(), 0.0);
  const auto theta = j["theta"].get<std::vector<double>>();
  ASSERT_EQ(theta.size(), 4u);
  EXPECT_EQ(theta[1], 0.0);
  EXPECT_EQ(theta[2], 0.0);
  EXPECT_EQ(theta[3], 0.0);
  EXPECT_TRUE(j["trace"].is_array());
  EXPECT_NE(slurp("stderr.txt").find("loglik"), std::string::npos);
  // sigma within the default grid span
  const auto runs = j["sigma_runs"];
  EXPECT_EQ(runs.size(), 17u);
}

TEST(CliFit, TriangleIdentitySimilarityFitsAllTheta) {
  ASSERT_EQ(cli("generate triangle --lambda 10 --rt 0.6325 --T 50 --seed 7 --out tri.jsonl"), 0);
  ASSERT_EQ(cli("fit tri.jsonl --sigma-grid 0 --out tri_model.json"), 0);
  const auto j = json::parse(slurp("tri_model.json"));
  EXPECT_EQ(j["sigma"].get<double>(), 0.0);
  for (double t : j["theta"].get<std::vector<double>>()) EXPECT_NE(t, 0.0);
}

TEST(CliFit, ExitCodes) {
  write("empty.jsonl", "");
  EXPECT_EQ(cli("fit empty.jsonl --out x.json"), 2);
  write("broken.jsonl", R"({"full":[[0,0]],"retained_idx":[0],"window":{"shape":"disk","radius":1}})"
                        "\n{\"full\": oops}\n");
  EXPECT_EQ(cli("fit broken.jsonl --out x.json"), 2);
  EXPECT_NE(slurp("stderr.txt").find("line 2"), std::string::npos);
  EXPECT_EQ(cli("fit missing.jsonl --out x.json"), 2);

  ASSERT_EQ(cli("generate matern2 --T 20 --seed 2 --out small.jsonl"), 0);
  EXPECT_EQ(cli("fit small.jsonl --sigma-grid 0.3 --max-iters 1 --out x.json"), 3);
  EXPECT_TRUE(fs::exists(workdir() / "x.json"));

  // Two retained points that coincide under a huge sigma: every candidate is -inf.
  write("singular.jsonl", R"({"full":[[0,0],[0.01,0]],"retained_idx":[0,1],"window":{"shape":"disk","radius":1}})"
                          "\n");
  EXPECT_EQ(cli("fit singular.jsonl --sigma-grid 1e9 --out x.json"), 4);
}

TEST(CliFit, Deterministic) {
  ensure_matern_model();
  ASSERT_EQ(cli("fit matern.jsonl --mask theta0,sigma --out again.json"), 0);
  EXPECT_EQ(slurp("again.json"), slurp("matern_model.json"));
}

TEST(CliEstimate, CurvesAndScalars) {
  ensure_matern_model();
  ASSERT_EQ(cli("estimate matern_model.json --quantity H --center 0,0 --n 200 --seed 1 --out h.csv"), 0);
  const auto h = detthin::io::parse_curve_csv(slurp("h.csv"));
  ASSERT_GT(h.size(), 10u);
  EXPECT_EQ(h.n_samples, 200u);
  EXPECT_EQ(h.values.front(), 0.0);
  EXPECT_GT(h.values.back(), 0.99);

  ASSERT_EQ(cli("estimate matern_model.json --quantity G --at 0,0 --n 200 --seed 1 --out g.csv"), 0);
  EXPECT_EQ(detthin::io::parse_curve_csv(slurp("g.csv")).radii, h.radii);
  ASSERT_EQ(cli("estimate matern_model.json --quantity J --n 100 --out j.csv"), 0);
  EXPECT_EQ(detthin::io::parse_curve_csv(slurp("j.csv")).values.front(), 1.0);

  ASSERT_EQ(cli("estimate matern_model.json --quantity laplace --f zero --out l.json"), 0);
  EXPECT_EQ(json::parse(slurp("l.json"))["value"], 1.0);
  ASSERT_EQ(cli("estimate matern_model.json --quantity void --region disk:0,0,0.2 --n 100 --out v.json"), 0);
  const double v = json::parse(slurp("v.json"))["value"];
  EXPECT_GT(v, 0.0);
  EXPECT_LT(v, 1.0);
  ASSERT_EQ(cli("estimate matern_model.json --quantity intensity --region disk:1 --n 100 --out i.json"), 0);
  EXPECT_GT(json::parse(slurp("i.json"))["value"].get<double>(), 5.0);
  ASSERT_EQ(cli("estimate matern_model.json --quantity retention --at 0.5,0 --n 100 --out r.json"), 0);
}

TEST(CliEstimate, ByteIdenticalAndThreadIndependent) {
  ensure_matern_model();
  ASSERT_EQ(cli("estimate matern_model.json --quantity H --n 100 --seed 5 --out h1.csv"), 0);
  ASSERT_EQ(cli("estimate matern_model.json --quantity H --n 100 --seed 5 --out h2.csv"), 0);
  EXPECT_EQ(slurp("h1.csv"), slurp("h2.csv"));
  const std::string threaded = "DETTHIN_THREADS=3 '" DETTHIN_CLI "' estimate matern_model.json --quantity H --n 100 "
                               "--seed 5 --out h4.csv";
  ASSERT_EQ(std::system(("cd '" + workdir().string() + "' && " + threaded).c_str()), 0);
  EXPECT_EQ(slurp("h1.csv"), slurp("h4.csv"));
  EXPECT_EQ(json::parse(slurp("h4.csv.manifest.json"))["threads"], 3);
}

TEST(CliEstimate, InputErrors) {
  ensure_matern_model();
  EXPECT_EQ(cli("estimate matern_model.json --quantity Q"), 2);
  EXPECT_EQ(cli("estimate matern_model.json --quantity void"), 2);
  EXPECT_EQ(cli("estimate matern_model.json --quantity G --at 5,5"), 2);
  write("not_a_model.json", "{\"theta\": [1]}");
  EXPECT_EQ(cli("estimate not_a_model.json --quantity H"), 2);
  EXPECT_EQ(cli("estimate missing.json --quantity H"), 2);
}

TEST(CliValidate, SelfConsistencyPasses) {
  ensure_matern_model();
  ASSERT_EQ(cli("validate matern_model.json --kind model --testcase-model matern_model.json --n 2000 --seed 4 "
                "--out self.json"),
            0);
  const auto r = json::parse(slurp("self.json"));
  EXPECT_TRUE(r["pass"].get<bool>());
  EXPECT_LE(r["H"]["sup_distance"].get<double>(), 0.05);
  EXPECT_LE(r["G"]["sup_distance"].get<double>(), 0.05);
  EXPECT_NE(r["threshold_note"].get<std::string>().find("calibration"), std::string::npos);
}

TEST(CliValidate, MismatchedModelFailsOnG) {
  ASSERT_EQ(cli("generate triangle --lambda 10 --rt 0.6325 --T 50 --seed 8 --out tri2.jsonl"), 0);
  ASSERT_EQ(cli("fit tri2.jsonl --sigma-grid 0 --out tri2_model.json"), 0);
  EXPECT_EQ(cli("validate tri2_model.json --kind matern2 --lambda 10 --rm 0.2530 --n 1000 --seed 5 --out neg.json"), 1);
  const auto r = json::parse(slurp("neg.json"));
  EXPECT_FALSE(r["pass"].get<bool>());
  EXPECT_GT(r["G"]["sup_distance"].get<double>(), 0.3);
}

TEST(CliValidate, ReportShape) {
  ensure_matern_model();
  const int rc = cli("validate matern_model.json --kind matern2 --lambda 10 --rm 0.2530 --n 500 --seed 3 --out rep.json");
  EXPECT_TRUE(rc == 0 || rc == 1);
  const auto r = json::parse(slurp("rep.json"));
  for (const char* c : {"G", "H", "J"}) {
    ASSERT_TRUE(r.contains(c));
    EXPECT_TRUE(r[c]["points"].is_array());
    EXPECT_GE(r[c]["sup_distance"].get<double>(), 0.0);
  }
  EXPECT_EQ(r["H"]["threshold"], 0.05);
  EXPECT_TRUE(r["J"]["threshold"].is_null());
  EXPECT_EQ(r["pass"].get<bool>(), rc == 0);
}
