#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace geneic;
using namespace geneic::testing;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the geneic binary with `args` (already shell-quoted where needed).
Run cli(const std::string& args, const fs::path& scratch, const std::string& env = "GENEIC_SEED=") {
  const auto out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = "env " + env + " " + GENEIC_CLI + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

fs::path synth(const TempDir& dir, int n, const std::string& name = "corpus") {
  const auto r = cli("synth -n " + std::to_string(n) + " -o " + (dir / name).string(), dir.path());
  EXPECT_EQ(r.code, 0) << r.err;
  return dir / name / "manifest.jsonl";
}

}  // namespace

TEST(ConfigText, SectionsCommentsAndQuotes) {
  const auto m = parse_config_text(
      "# top\n[train]\nM = 8  # inline\nbeta=0.25\n\n[data]\ncorpus = \"a#b.jsonl\"\n");
  EXPECT_EQ(m.at("train.M"), "8");
  EXPECT_EQ(m.at("train.beta"), "0.25");
  EXPECT_EQ(m.at("data.corpus"), "a#b.jsonl");
  EXPECT_EQ(m.size(), 3u);
  EXPECT_THROW(parse_config_text("[train\nM = 1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("M = 1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[train]\nM\n"), ConfigError);
}

TEST(ConfigSettings, TypedKeysAndErrors) {
  RunConfig rc;
  apply_setting(rc, "train.M", "3");
  apply_setting(rc, "train.lr0", "0.01");
  apply_setting(rc, "train.grad_scope", "original_only");
  apply_setting(rc, "backend.d_dec", "6");
  apply_setting(rc, "metrics.clip_s_weight", "2.5");
  EXPECT_EQ(rc.train.prompt_count, 3);
  EXPECT_EQ(rc.train.lr0, 0.01);
  EXPECT_EQ(rc.train.grad_scope, GradScope::kOriginalOnly);
  EXPECT_EQ(rc.dims.d_dec, 6);
  EXPECT_EQ(rc.clip_s_weight, 2.5);
  EXPECT_FALSE(rc.seed_set);
  apply_setting(rc, "train.seed", "17");
  EXPECT_TRUE(rc.seed_set);
  EXPECT_EQ(rc.train.seed, 17u);

  EXPECT_THROW(apply_setting(rc, "train.colour", "red"), ConfigError);
  EXPECT_THROW(apply_setting(rc, "train.M", "3x"), ConfigError);
  EXPECT_THROW(apply_setting(rc, "train.grad_scope", "sometimes"), ConfigError);
  EXPECT_THROW(apply_setting(rc, "backend.kind", "clip"), ConfigError);
}

TEST(ConfigSettings, RelativePathsResolveAgainstConfigDir) {
  TempDir dir("cfg");
  {
    std::ofstream f(dir / "run.toml");
    f << "[data]\ncorpus = images/manifest.jsonl\nlog = /abs/log.jsonl\n[train]\nepochs = 2\n";
  }
  const auto rc = load_run_config(dir / "run.toml");
  EXPECT_EQ(rc.corpus, dir / "images/manifest.jsonl");
  EXPECT_EQ(rc.log, fs::path("/abs/log.jsonl"));
  EXPECT_EQ(rc.train.epochs, 2);
  EXPECT_EQ(rc.checkpoint_dir_or_default(), fs::path(".") / "checkpoints");
  EXPECT_THROW(load_run_config(dir / "missing.toml"), ConfigError);
}

TEST(ConfigSettings, EnvSeedIsOnlyAFallback) {
  ::setenv("GENEIC_SEED", "99", 1);
  RunConfig a;
  apply_env_seed(a);
  EXPECT_EQ(a.train.seed, 99u);
  RunConfig b;
  apply_setting(b, "train.seed", "3");
  apply_env_seed(b);
  EXPECT_EQ(b.train.seed, 3u);
  ::setenv("GENEIC_SEED", "nope", 1);
  RunConfig c;
  EXPECT_THROW(apply_env_seed(c), ConfigError);
  ::unsetenv("GENEIC_SEED");
}

TEST(Cli, ExitCodes) {
  TempDir dir("cli_codes");
  EXPECT_EQ(cli("--help", dir.path()).code, 0);
  EXPECT_EQ(cli("train --help", dir.path()).code, 0);
  EXPECT_EQ(cli("train --no-such-flag", dir.path()).code, 2);
  EXPECT_EQ(cli("", dir.path()).code, 2);
  const auto manifest = synth(dir, 8);
  const auto bad = cli("train --corpus " + manifest.string() + " --set train.colour=red", dir.path());
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("train.colour"), std::string::npos);
  EXPECT_EQ(cli("train --corpus " + manifest.string() + " --lr0 -1", dir.path()).code, 2);
}

TEST(Cli, MissingImagesAreListed) {
  TempDir dir("cli_missing");
  {
    std::ofstream f(dir / "m.jsonl");
    f << R"({"id":"a","path":"a.png"})" << "\n" << R"({"id":"b","path":"b.png"})" << "\n";
  }
  const auto r = cli("caption --corpus " + (dir / "m.jsonl").string(), dir.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("2 of 2"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("a.png"), std::string::npos);
  EXPECT_NE(r.err.find("b.png"), std::string::npos);

  {
    std::ofstream f(dir / "dup.jsonl");
    f << R"({"id":"a","path":"a.png"})" << "\n" << R"({"id":"a","path":"b.png"})" << "\n";
  }
  const auto d = cli("caption --corpus " + (dir / "dup.jsonl").string(), dir.path());
  EXPECT_EQ(d.code, 1);
  EXPECT_NE(d.err.find("dup.jsonl:2"), std::string::npos) << d.err;
}

TEST(Cli, TrainIsReproducibleAndAtomic) {
  TempDir dir("cli_train");
  const auto manifest = synth(dir, 32);
  const std::string common = "train --corpus " + manifest.string() + " --M 4 --N 32 --epochs 2 --seed 5";
  ASSERT_EQ(cli(common + " --out-dir " + (dir / "a").string(), dir.path()).code, 0);
  ASSERT_EQ(cli(common + " --out-dir " + (dir / "b").string(), dir.path()).code, 0);
  for (const char* f : {"checkpoints/final.gipv", "checkpoints/optimizer_final.gios", "checkpoints/epoch_1.gipv",
                        "checkpoints/epoch_2.gios", "train_log.jsonl"}) {
    ASSERT_TRUE(fs::exists(dir / "a" / f)) << f;
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  EXPECT_EQ(fs::file_size(dir / "a/checkpoints/final.gipv"), 24u + 4u * 8u * 4u);
  for (const auto& e : fs::recursive_directory_iterator(dir / "a"))
    EXPECT_NE(e.path().extension(), ".tmp") << e.path();

  // The environment seed is used only when no seed flag is given.
  const std::string no_seed = "train --corpus " + manifest.string() + " --M 4 --N 32 --epochs 2";
  ASSERT_EQ(cli(no_seed + " --out-dir " + (dir / "env").string(), dir.path(), "GENEIC_SEED=5").code, 0);
  EXPECT_EQ(slurp(dir / "env/checkpoints/final.gipv"), slurp(dir / "a/checkpoints/final.gipv"));
  ASSERT_EQ(cli(no_seed + " --out-dir " + (dir / "zero").string(), dir.path()).code, 0);
  EXPECT_NE(slurp(dir / "zero/checkpoints/final.gipv"), slurp(dir / "a/checkpoints/final.gipv"));
}

TEST(Cli, ZeroEpochsStillWritesCheckpoint) {
  TempDir dir("cli_zero");
  const auto manifest = synth(dir, 8);
  const auto r = cli("train --corpus " + manifest.string() + " --M 2 --N 8 --epochs 0 --out-dir " +
                         (dir / "o").string(),
                     dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto p = load_prompt(dir / "o/checkpoints/final.gipv");
  EXPECT_EQ(p.count(), 2);
  EXPECT_EQ(p.step, 0u);
  EXPECT_EQ(p, init_prompt(2, 8, derive_stream(0, {stream_id::kInit}).next()));
}

TEST(Cli, CaptionsMatchLibraryAndGolden) {
  TempDir dir("cli_caption");
  const auto manifest = synth(dir, 4);
  const auto r = cli("caption --corpus " + manifest.string(), dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::vector<std::string> got;
  for (std::string line; std::getline(in, line);) got.push_back(nlohmann::json::parse(line).at("caption"));
  EXPECT_EQ(got, (std::vector<std::string>{"large red flower large red", "flower", "flower",
                                           "large red large red large"}));

  // Same captions straight from the library on the in-memory corpus.
  const auto b = build_toy_backend(0);
  DecodeOptions opt;
  opt.max_len = b.max_len;
  const auto imgs = synth_corpus(4, 8, 8, 1, 0);
  for (std::size_t i = 0; i < imgs.size(); ++i)
    EXPECT_EQ(decode(compose_input(encode_image(imgs[i], b), PromptState{Matrix(0, 8), 0}), opt, b).text, got[i]);

  const auto text = cli("caption --corpus " + manifest.string() + " --text-prompt 'a photo of'", dir.path());
  EXPECT_EQ(text.code, 0) << text.err;
  EXPECT_EQ(std::count(text.out.begin(), text.out.end(), '\n'), 4);
}

TEST(Cli, CheckpointWidthMismatchIsAnError) {
  TempDir dir("cli_width");
  const auto manifest = synth(dir, 8);
  save_prompt(init_prompt(2, 6, 0), dir / "narrow.gipv");
  const auto r = cli("caption --corpus " + manifest.string() + " --checkpoint " + (dir / "narrow.gipv").string(),
                     dir.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("6"), std::string::npos) << r.err;
}

TEST(Cli, EvaluateReportsMetricsAndSkipsMeteor) {
  TempDir dir("cli_eval");
  const auto manifest = synth(dir, 8);
  ASSERT_EQ(cli("caption --corpus " + manifest.string() + " -o " + (dir / "c.jsonl").string(), dir.path()).code, 0);
  const auto r = cli("evaluate --candidates " + (dir / "c.jsonl").string() + " --references " + manifest.string() +
                         " --clip-s --corpus " + manifest.string() + " -o " + (dir / "report.json").string(),
                     dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("METEOR   n/a"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("CIDEr"), std::string::npos);
  const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
  EXPECT_FALSE(j.contains("meteor"));
  EXPECT_TRUE(j.contains("clip_s"));
  EXPECT_TRUE(j.contains("cider"));

  const auto missing = cli("evaluate --candidates " + (dir / "c.jsonl").string() + " --references " +
                               (dir / "none.jsonl").string(),
                           dir.path());
  EXPECT_EQ(missing.code, 1);
}

TEST(Cli, ClusterCacheIsByteIdentical) {
  TempDir dir("cli_cluster");
  const auto manifest = synth(dir, 12);
  const auto run = [&] { return cli("cluster --corpus " + manifest.string() + " -o " + (dir / "c").string(), dir.path()); };
  const auto first = run();
  ASSERT_EQ(first.code, 0) << first.err;
  const auto a = slurp(dir / "c/clusters.json"), ea = slurp(dir / "c/embeddings.f32");
  const auto second = run();
  ASSERT_EQ(second.code, 0);
  EXPECT_NE(second.out.find("cached"), std::string::npos);
  EXPECT_EQ(slurp(dir / "c/clusters.json"), a);
  EXPECT_EQ(slurp(dir / "c/embeddings.f32"), ea);
  const auto j = nlohmann::json::parse(a);
  EXPECT_EQ(j.at("members").size(), 12u);

  // A different backend invalidates the cache.
  const auto other = cli("cluster --corpus " + manifest.string() + " --backend-seed 1 -o " + (dir / "c").string(),
                         dir.path());
  ASSERT_EQ(other.code, 0);
  EXPECT_EQ(other.out.find("cached"), std::string::npos);
}

TEST(Cli, TransferAndInterpret) {
  TempDir dir("cli_misc");
  const auto manifest = synth(dir, 6);
  const auto t = cli("transfer --corpus " + manifest.string() + " -o " + (dir / "t").string(), dir.path());
  ASSERT_EQ(t.code, 0) << t.err;
  const auto side = nlohmann::json::parse(slurp(dir / "t/transfers.json"));
  ASSERT_EQ(side.size(), 6u);
  EXPECT_TRUE(fs::exists(dir / "t" / side[0].at("file").get<std::string>()));

  save_prompt(init_prompt(3, 8, 0), dir / "p.gipv");
  const auto table = cli("interpret --checkpoint " + (dir / "p.gipv").string(), dir.path());
  ASSERT_EQ(table.code, 0) << table.err;
  EXPECT_EQ(std::count(table.out.begin(), table.out.end(), '\n'), 4);
  const auto js = cli("interpret --json --checkpoint " + (dir / "p.gipv").string(), dir.path());
  ASSERT_EQ(js.code, 0);
  EXPECT_EQ(nlohmann::json::parse(js.out).size(), 3u);
}
