#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>
#include <json.hpp>

#include "scorebreak/data.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& work() {
  static const fs::path p = [] {
    const auto d = fs::current_path() / "cli-test-scratch";
    fs::create_directories(d);
    return d;
  }();
  return p;
}

struct Outcome {
  int code = -1;
  std::string output;
};

Outcome cli(const std::string& args) {
  const fs::path log = work() / "last.log";
  const std::string cmd = std::string(SCOREBREAK_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::ostringstream os;
  os << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, os.str()};
}

// Small enough for the whole pipeline to finish in seconds.
fs::path tiny_config() {
  const fs::path path = work() / "tiny.json";
  const nlohmann::json j = {
      {"name", "cli-tiny"},
      {"seeds", {{"data", 5}, {"score", 6}, {"attack", 7}}},
      {"data", {{"height", 16}, {"width", 16}, {"counts", {{"score-train", 16}, {"victim-train", 96}, {"eval", 3}}}}},
      {"schedule", {{"family", "linear"}, {"endpoints", {1e-4, 0.02}}, {"T", 50}}},
      {"training", {{"max_steps", 10}, {"batch_size", 4}, {"widths", {8, 8, 8}}}},
      {"victims", {{{"architecture", "dilated"}, {"split", "victim-train"}, {"seed", 1}}}},
      {"victim_training", {{"steps", 200}, {"batch_size", 8}}},
      {"attack", {{"m_max", 3}}},
      {"methods", {"clean", "score", "noise-control"}},
      {"output_dir", (work() / "run").string()}};
  std::ofstream(path) << j.dump(2);
  return path;
}

}  // namespace

TEST(Cli, NoSubcommandIsAnError) { EXPECT_NE(cli("").code, 0); }

TEST(Cli, HelpListsSubcommands) {
  const Outcome o = cli("--help");
  EXPECT_EQ(o.code, 0);
  for (const char* sub : {"gen-data", "train-score", "train-victim", "attack", "evaluate", "run", "sweep", "report"}) {
    EXPECT_NE(o.output.find(sub), std::string::npos) << sub;
  }
}

TEST(Cli, Pipeline) {
  const std::string cfg = tiny_config().string();
  const fs::path data = work() / "data";
  fs::remove_all(data);

  Outcome o = cli("gen-data --config " + cfg + " --out " + data.string());
  ASSERT_EQ(o.code, 0) << o.output;
  const auto manifest = scorebreak::load_manifest(data / scorebreak::kManifestName);
  EXPECT_EQ(manifest.ids("eval").size(), 3u);

  const std::string m = " --config " + cfg + " --data " + (data / scorebreak::kManifestName).string();
  const fs::path score = work() / "score.ckpt";
  const fs::path victim = work() / "victim.ckpt";
  o = cli("train-score" + m + " --out " + score.string());
  ASSERT_EQ(o.code, 0) << o.output;
  EXPECT_TRUE(fs::exists(score));
  o = cli("train-victim" + m + " --arch dilated --seed 1 --out " + victim.string());
  ASSERT_EQ(o.code, 0) << o.output;

  const fs::path adv = work() / "adv-score";
  o = cli("attack" + m + " --method score --epsilon 8/255 --mu 2/255 --m-max 3 --omega 90 --checkpoint " +
          score.string() + " --victim " + victim.string() + " --out " + adv.string());
  ASSERT_EQ(o.code, 0) << o.output;
  std::ifstream sin(adv / "summary.json");
  const auto summary = nlohmann::json::parse(sin);
  EXPECT_LE(summary.at("max_abs_perturbation").get<double>(), 2.0 * 8.0 / 255.0 + 1e-12);
  EXPECT_TRUE(fs::exists(adv / "results.csv"));

  const fs::path csv = work() / "eval.csv";
  o = cli("evaluate" + m + " --victim " + victim.string() + " --adv " + (adv / "adv").string() + " --out " +
          csv.string());
  ASSERT_EQ(o.code, 0) << o.output;
  std::ifstream cin(csv);
  std::string header;
  std::getline(cin, header);
  EXPECT_EQ(header.rfind("image_id,", 0), 0u) << header;

  // Score methods need a checkpoint.
  o = cli("attack" + m + " --method score --victim " + victim.string() + " --out " + (work() / "x").string());
  EXPECT_NE(o.code, 0);
  EXPECT_NE(o.output.find("--checkpoint"), std::string::npos) << o.output;
}

TEST(Cli, RunAndReport) {
  const std::string cfg = tiny_config().string();
  const fs::path out = work() / "run-cli";
  Outcome o = cli("run --config " + cfg + " --out " + out.string());
  ASSERT_EQ(o.code, 0) << o.output;
  for (const char* f : {"results.csv", "aggregate.csv", "summary.json", "plot-mae.svg"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  o = cli("report --run " + out.string() + " --metric mae,miou");
  ASSERT_EQ(o.code, 0) << o.output;
  EXPECT_NE(o.output.find("dilated-s1"), std::string::npos) << o.output;

  o = cli("sweep --config " + cfg + " --param omega --values 0,90 --out " + (work() / "sweep").string());
  ASSERT_EQ(o.code, 0) << o.output;
  EXPECT_TRUE(fs::exists(work() / "sweep" / "sweep.csv"));
}

TEST(Cli, ConfigWithoutSeedsIsRejected) {
  const fs::path path = work() / "noseed.json";
  std::ofstream(path) << R"({"name": "x"})";
  const Outcome o = cli("run --config " + path.string());
  EXPECT_NE(o.code, 0);
  EXPECT_NE(o.output.find("seeds"), std::string::npos) << o.output;
}
