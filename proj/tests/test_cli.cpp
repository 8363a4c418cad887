#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "perseg_cli_test";

int run(const std::string& args) {
  std::string cmd = std::string(PERSEG_CLI_PATH) + " " + args + " >> " +
                    (kWork / "cli.log").string() + " 2>&1";
  return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string log_tail() {
  std::string all = slurp(kWork / "cli.log");
  return all.size() > 600 ? all.substr(all.size() - 600) : all;
}

struct Fixture {
  Fixture() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    REQUIRE(run("synth-data --out " + (kWork / "data").string() +
                " --seed 7 --users 1 --source-images 24 --personal-images 24"
                " --size 32 --groups 2 --classes 4 --val-fraction 0.25") == 0);
  }
};

std::string p(const char* rel) { return (kWork / rel).string(); }

}  // namespace

TEST_CASE("pipeline runs end to end and artifacts land where documented") {
  Fixture fx;
  std::string common = " --source " + p("data/source") + " --personal " +
                       p("data/personal_u0") + " --seed 7 --steps 4 --batch 4 --groups 2"
                       " --lambda-adv 0.001 --val-every 2";

  REQUIRE_MESSAGE(run("cluster --personal " + p("data/personal_u0") + " --out " + p("run") +
                      " --groups 2 --seed 7") == 0,
                  log_tail());
  CHECK(fs::exists(kWork / "run/groups.json"));

  REQUIRE_MESSAGE(run("train-step1 --out " + p("run") + common) == 0, log_tail());
  CHECK(fs::exists(kWork / "run/config.json"));
  CHECK(fs::exists(kWork / "run/ckpt_step1.bin"));
  CHECK(fs::exists(kWork / "run/metrics.jsonl"));

  REQUIRE_MESSAGE(run("select-pseudo --out " + p("run")) == 0, log_tail());
  int masks = 0;
  for (const auto& e : fs::recursive_directory_iterator(kWork / "run/pseudo"))
    if (e.is_regular_file() && e.path().extension() == ".png") ++masks;
  CHECK(masks == 12);  // 24 images at the default 0.5 selection rate

  REQUIRE_MESSAGE(run("train-step2 --out " + p("run") + " --steps 3") == 0, log_tail());
  CHECK(fs::exists(kWork / "run/ckpt_step2.bin"));

  REQUIRE_MESSAGE(run("eval --out " + p("run")) == 0, log_tail());
  std::string report = slurp(kWork / "run/report.json");
  CHECK(report.find("\"checkpoint\": \"ckpt_step2.bin\"") != std::string::npos);
  CHECK(report.find("\"step\": 7") != std::string::npos);

  // same checkpoint, same data: rerunning eval reproduces the report byte for byte
  REQUIRE(run("eval --out " + p("run")) == 0);
  CHECK(slurp(kWork / "run/report.json") == report);

  // step-1 checkpoint evaluates too and is tagged distinctly
  REQUIRE(run("eval --out " + p("run") + " --ckpt ckpt_step1.bin --format json") == 0);
  std::string r1 = slurp(kWork / "run/report.json");
  CHECK(r1.find("\"checkpoint\": \"ckpt_step1.bin\"") != std::string::npos);
  CHECK(r1.find("\"step\": 4") != std::string::npos);

  REQUIRE(run("eval --out " + p("run") + " --split all --format csv") == 0);
  REQUIRE(run("eval --out " + p("run") + " --fiou-mode present_class_mean") == 0);
}

TEST_CASE("training reruns with one config are byte-identical") {
  Fixture fx;
  REQUIRE(run("cluster --personal " + p("data/personal_u0") + " --out " + p("a") +
              " --groups 2 --seed 7") == 0);
  fs::create_directories(kWork / "b");
  fs::copy_file(kWork / "a/groups.json", kWork / "b/groups.json");
  std::string common = " --source " + p("data/source") + " --personal " +
                       p("data/personal_u0") +
                       " --seed 7 --steps 4 --batch 4 --groups 2 --lambda-adv 0.001";
  REQUIRE_MESSAGE(run("train-step1 --out " + p("a") + common) == 0, log_tail());
  REQUIRE_MESSAGE(run("train-step1 --out " + p("b") + common) == 0, log_tail());
  CHECK(slurp(kWork / "a/metrics.jsonl") == slurp(kWork / "b/metrics.jsonl"));
  CHECK(slurp(kWork / "a/ckpt_step1.bin") == slurp(kWork / "b/ckpt_step1.bin"));

  // a config file reproduces the flag-driven run
  REQUIRE(run("cluster --personal " + p("data/personal_u0") + " --out " + p("c") +
              " --groups 2 --seed 7") == 0);
  REQUIRE_MESSAGE(run("train-step1 --out " + p("c") + " --config " +
                      p("a/config.json")) == 0,
                  log_tail());
  CHECK(slurp(kWork / "c/metrics.jsonl") == slurp(kWork / "a/metrics.jsonl"));
}

TEST_CASE("missing upstream artifacts fail loudly with nonzero exit") {
  Fixture fx;
  CHECK(run("train-step2 --out " + p("empty")) != 0);          // no config.json
  CHECK(run("select-pseudo --out " + p("empty")) != 0);        // no run at all
  CHECK(run("eval --out " + p("empty")) != 0);
  CHECK(run("train-step1 --out " + p("nogroups") + " --source " + p("data/source") +
            " --personal " + p("data/personal_u0") + " --steps 2") != 0);  // no groups.json

  // step 2 without its pseudo directory names the artifact; an empty one only warns
  REQUIRE(run("cluster --personal " + p("data/personal_u0") + " --out " + p("r") +
              " --groups 2 --seed 7") == 0);
  REQUIRE(run("train-step1 --out " + p("r") + " --source " + p("data/source") +
              " --personal " + p("data/personal_u0") +
              " --seed 7 --steps 2 --batch 4 --groups 2") == 0);
  CHECK(run("train-step2 --out " + p("r")) != 0);
  fs::create_directories(kWork / "r/pseudo");
  CHECK(run("train-step2 --out " + p("r") + " --steps 2") == 0);
  CHECK(fs::exists(kWork / "r/ckpt_step2.bin"));
  std::string log = slurp(kWork / "cli.log");
  CHECK(log.find("run select-pseudo first") != std::string::npos);
  CHECK(log.find("degenerates to step-1 training") != std::string::npos);
}
