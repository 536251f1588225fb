#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "synthetic.hpp"

namespace fs = std::filesystem;
using namespace prt;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + PRT_CLI_PATH + std::string(" ") + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 4096> buf{};
  while (fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_lines(const fs::path& file, const std::vector<double>& v) {
  std::ofstream os(file);
  os << std::setprecision(17);
  for (double x : v) os << x << '\n';
}

/// Small dataset: three annotated subjects of 65 s each.
fs::path small_dataset(const std::string& name) {
  const auto dir = testing::scratch_dir(name);
  for (int i = 0; i < 3; ++i) {
    testing::SyntheticSpec s;
    s.subject_id = "bidmc_0" + std::to_string(i + 1);
    s.duration_s = 65.0;
    s.breath_hz = 0.2 + 0.05 * i;
    s.seed = 300 + static_cast<std::uint64_t>(i);
    testing::write_bidmc_csv(testing::make_subject(s), dir / "data");
  }
  std::ofstream(dir / "tiny.json") << R"({
    // toy-sized networks for tests
    "k_folds": 3,
    "translator": {"generator_filters": 4, "discriminator_filters": 4, "residual_blocks": 1, "epochs": 1}
  })";
  return dir;
}

}  // namespace

TEST_CASE("help, usage errors and config template") {
  const auto help = run("--help");
  CHECK(help.code == 0);
  CHECK(help.out.find("PRT_DATASET_ROOT") != std::string::npos);
  CHECK(help.out.find("--config") != std::string::npos);
  CHECK(run("").code == 1);
  CHECK(run("frobnicate").code == 1);

  const auto dir = testing::scratch_dir("cli_config");
  CHECK(run("init-config " + (dir / "cfg.json").string()).code == 0);
  CHECK(run("--config " + (dir / "cfg.json").string() + " --output-dir " + (dir / "o").string() +
            " estimate --input " + (dir / "cfg.json").string())
            .code == 2);
  std::ofstream(dir / "bad.json") << R"({"translator": {"lambda_cycle": 3}})";
  const auto bad = run("--config " + (dir / "bad.json").string() + " prepare");
  CHECK(bad.code == 1);
  CHECK(bad.out.find("lambda_cycle") != std::string::npos);
  std::ofstream(dir / "invalid.json") << R"({"translator": {"lambda_cyc": 0}})";
  CHECK(run("--config " + (dir / "invalid.json").string() + " prepare").code == 1);
}

TEST_CASE("estimate prints the rate of a 0.25 Hz sinusoid") {
  const auto dir = testing::scratch_dir("cli_estimate");
  write_lines(dir / "sine.csv", testing::sinusoid(0.25, 30.0, 60.0));
  const auto r = run("--output-dir " + (dir / "out").string() + " estimate --input " + (dir / "sine.csv").string());
  CHECK(r.code == 0);
  CHECK(r.out.find("15.0 brpm") != std::string::npos);
  const auto s = run("--output-dir " + (dir / "out").string() + " estimate --method spectral --input " +
                     (dir / "sine.csv").string());
  CHECK(s.out.find("15.0 brpm") != std::string::npos);
  CHECK(fs::exists(dir / "out" / "estimate.manifest.json"));
  write_lines(dir / "short.csv", testing::sinusoid(0.25, 30.0, 10.0));
  CHECK(run("--output-dir " + (dir / "out").string() + " estimate --input " + (dir / "short.csv").string()).code == 2);
}

TEST_CASE("prepare reports counts, is idempotent and fails on empty input") {
  const auto dir = small_dataset("cli_prepare");
  const std::string base = "--output-dir " + (dir / "out").string() + " ";
  const auto a = run(base + "--dataset-root " + (dir / "data").string() + " prepare");
  REQUIRE(a.code == 0);
  CHECK(a.out.find("3 subjects, 6 window pairs") != std::string::npos);
  const auto manifest = slurp(dir / "out" / "prepare.manifest.json");
  // Environment variable as the dataset source.
  const auto b = run(base + "prepare", "PRT_DATASET_ROOT=" + (dir / "data").string());
  REQUIRE(b.code == 0);
  CHECK(slurp(dir / "out" / "prepare.manifest.json") == manifest);
  const auto m = nlohmann::json::parse(manifest);
  CHECK(m["inputs"].size() == 6);
  CHECK(m["inputs"][0]["sha1_git"].get<std::string>().size() == 40);
  CHECK(manifest.find("time") == std::string::npos);

  fs::create_directories(dir / "empty");
  const auto e = run(base + "--dataset-root " + (dir / "empty").string() + " prepare");
  CHECK(e.code == 2);
  CHECK(e.out.find((dir / "empty").string()) != std::string::npos);
  CHECK(run("--output-dir " + (dir / "o2").string() + " prepare").code == 1);
}

TEST_CASE("git blob hashes match git") {
  const auto dir = testing::scratch_dir("cli_hash");
  write_lines(dir / "sine.csv", testing::sinusoid(0.25, 30.0, 60.0));
  REQUIRE(run("--output-dir " + dir.string() + " estimate --input " + (dir / "sine.csv").string()).code == 0);
  const auto m = nlohmann::json::parse(slurp(dir / "estimate.manifest.json"));
  FILE* p = popen(("git hash-object " + (dir / "sine.csv").string()).c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 64> buf{};
  std::string expected = fgets(buf.data(), buf.size(), p) ? buf.data() : "";
  pclose(p);
  if (!expected.empty()) {
    expected.erase(expected.find_last_not_of("\n") + 1);
    CHECK(m["inputs"][0]["sha1_git"] == expected);
  }
}

TEST_CASE("train, translate, plot and evaluate end to end") {
  const auto dir = small_dataset("cli_pipeline");
  const std::string base = "--config " + (dir / "tiny.json").string() + " --output-dir " + (dir / "out").string() + " ";
  REQUIRE(run(base + "--dataset-root " + (dir / "data").string() + " prepare").code == 0);

  const auto t1 = run(base + "--seed 3 train --holdout 1");
  REQUIRE(t1.code == 0);
  const auto log1 = slurp(dir / "out" / "train" / "training_log.csv");
  REQUIRE(run(base + "--seed 3 train --holdout 1").code == 0);
  CHECK(slurp(dir / "out" / "train" / "training_log.csv") == log1);
  CHECK(log1.rfind("epoch,adv_G,adv_F,cyc,rr,total,val_mae\n1,", 0) == 0);
  const auto ckpt = dir / "out" / "train" / "checkpoint.prt";
  REQUIRE(fs::exists(ckpt));

  write_lines(dir / "ppg.csv", testing::sinusoid(1.2, 125.0, 61.0));
  const auto tr = run(base + "translate --checkpoint " + ckpt.string() + " --rate 125 --input " +
                      (dir / "ppg.csv").string() + " --output " + (dir / "resp.csv").string());
  CHECK(tr.code == 0);
  CHECK(tr.out.find("2 window(s)") != std::string::npos);
  CHECK(fs::exists(dir / "resp.csv"));

  const auto pl = run(base + "plot --checkpoint " + ckpt.string() + " --subject bidmc_01 --output " +
                      (dir / "plot.png").string());
  CHECK(pl.code == 0);
  CHECK(fs::file_size(dir / "plot.png") > 0);
  CHECK(run(base + "plot --checkpoint " + ckpt.string() + " --subject nobody --output " +
            (dir / "p2.png").string())
            .code == 2);
  CHECK(run(base + "plot --checkpoint " + ckpt.string() + " --subject bidmc_01 --output " +
            (dir / "missing" / "dir" / "p.png").string())
            .code == 4);

  const auto ev = run(base + "evaluate");
  CHECK(ev.code == 0);
  CHECK(ev.out.find("mean MAE") != std::string::npos);
  const auto report = nlohmann::json::parse(slurp(dir / "out" / "evaluation" / "report.json"));
  CHECK(report["folds"].size() == 3);
  const auto first = slurp(dir / "out" / "evaluation" / "report.json");
  REQUIRE(run(base + "evaluate").code == 0);
  CHECK(slurp(dir / "out" / "evaluation" / "report.json") == first);
}
