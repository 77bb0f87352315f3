// geneic: command-line front end for clustering, attribute transfer, prompt
// training, captioning, evaluation and prompt interpretation.

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "geneic/app.hpp"

namespace {

using namespace geneic;

// Options shared by every subcommand. Each flag maps onto a config key so
// flags and file values go through the same parser.
struct Common {
  std::optional<std::string> config;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;  // config key -> raw value
};

void add_key(CLI::App* sub, Common& c, const std::string& flag, const std::string& key,
             const std::string& help) {
  sub->add_option_function<std::string>(
      flag, [&c, key](const std::string& v) { c.flags[key] = v; }, help);
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "TOML-style config file");
  sub->add_option("--set", c.sets, "override a config value: section.key=value")->type_name("KEY=VALUE");
  add_key(sub, c, "--seed", "train.seed", "run seed (falls back to $GENEIC_SEED, then 0)");
  add_key(sub, c, "--corpus", "data.corpus", "corpus manifest (JSON lines of {id, path})");
  add_key(sub, c, "--backend-file", "backend.file", "serialized backend parameters");
  add_key(sub, c, "--backend-seed", "backend.seed", "seed for the generated toy backend");
}

void add_train_keys(CLI::App* sub, Common& c) {
  add_key(sub, c, "--M", "train.M", "number of prompt vectors");
  add_key(sub, c, "--N", "train.N", "number of corpus images used");
  add_key(sub, c, "--epochs", "train.epochs", "training epochs");
  add_key(sub, c, "--batch-size", "train.batch_size", "pairs per step");
  add_key(sub, c, "--lr0", "train.lr0", "initial learning rate");
  add_key(sub, c, "--beta", "train.beta", "semantic loss weight");
  add_key(sub, c, "--fraction", "train.fraction", "share of latent channels swapped");
  add_key(sub, c, "--clusters", "train.clusters", "k-means cluster count (0 = automatic)");
  add_key(sub, c, "--grad-scope", "train.grad_scope", "both | original_only");
  add_key(sub, c, "--max-len", "train.max_len", "maximum caption length");
}

RunConfig resolve(const Common& c) {
  RunConfig rc = load_run_config(c.config ? std::optional<fs::path>(*c.config) : std::nullopt);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
    apply_setting(rc, s.substr(0, eq), s.substr(eq + 1));
  }
  for (const auto& [k, v] : c.flags) apply_setting(rc, k, v);
  apply_env_seed(rc);
  try {
    rc.train.validate();
    rc.dims.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geneic: unsupervised prompt learning for image captioning"};
  app.require_subcommand(1);
  Common common;

  std::string out_dir;
  auto* cluster = app.add_subcommand("cluster", "embed the corpus and cluster it");
  add_common(cluster, common);
  add_key(cluster, common, "--clusters", "train.clusters", "cluster count (0 = automatic)");
  cluster->add_option("-o,--out", out_dir, "output directory")->required();

  auto* transfer = app.add_subcommand("transfer", "write attribute-transferred images");
  add_common(transfer, common);
  add_key(transfer, common, "--fraction", "train.fraction", "share of latent channels swapped");
  add_key(transfer, common, "--clusters", "train.clusters", "cluster count (0 = automatic)");
  transfer->add_option("-o,--out", out_dir, "output directory")->required();

  std::optional<std::string> resume;
  auto* train = app.add_subcommand("train", "learn prompt vectors");
  add_common(train, common);
  add_train_keys(train, common);
  add_key(train, common, "--checkpoint-dir", "data.checkpoint_dir", "checkpoint directory");
  add_key(train, common, "--log", "data.log", "JSON-lines training log");
  add_key(train, common, "--out-dir", "data.out_dir", "default location for checkpoints and log");
  train->add_option("--resume", resume, "resume from an epoch checkpoint (.gipv with sibling .gios)");

  std::optional<std::string> checkpoint, text_prompt, out_file;
  auto* caption = app.add_subcommand("caption", "greedy captions for every corpus image");
  add_common(caption, common);
  add_key(caption, common, "--max-len", "train.max_len", "maximum caption length");
  caption->add_option("--checkpoint", checkpoint, "prompt checkpoint; omit for no prompt (M = 0)");
  caption->add_option("--text-prompt", text_prompt, "hand-written prompt instead of a checkpoint");
  caption->add_option("-o,--out", out_file, "candidates file (default: stdout)");

  EvaluateOptions eval;
  std::optional<std::string> train_refs;
  auto* evaluate = app.add_subcommand("evaluate", "score candidate captions");
  add_common(evaluate, common);
  add_key(evaluate, common, "--clip-s-weight", "metrics.clip_s_weight", "CLIP-S rescaling weight w");
  evaluate->add_option("--candidates", eval.candidates, "JSON lines of {image_id, caption}")->required();
  evaluate->add_option("--references", eval.references, "JSON lines of {image_id, captions}")->required();
  evaluate->add_option("--train-refs", train_refs, "sentences for %Novel (default: the references)");
  evaluate->add_flag("--clip-s", eval.clip_s, "also compute CLIP-S (needs --corpus)");
  evaluate->add_option("-o,--out", out_file, "report JSON file");

  std::string interp_ckpt;
  bool as_json = false;
  auto* interpret = app.add_subcommand("interpret", "nearest words and generated words per prompt vector");
  add_common(interpret, common);
  interpret->add_option("--checkpoint", interp_ckpt, "prompt checkpoint")->required();
  interpret->add_flag("--json", as_json, "emit JSON instead of a table");
  interpret->add_option("-o,--out", out_file, "output file (default: stdout)");

  int synth_count = 64;
  auto* synth = app.add_subcommand("synth", "write a synthetic corpus sized for the toy backend");
  add_common(synth, common);
  synth->add_option("-n,--count", synth_count, "number of images");
  synth->add_option("-o,--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const RunConfig rc = resolve(common);
    if (*cluster) {
      const auto r = cmd_cluster(rc, out_dir);
      std::printf("%d images, %d clusters%s\n", r.index.size(), r.assignment.k,
                  r.cache_hit ? " (cached embeddings)" : "");
    } else if (*transfer) {
      const auto r = cmd_transfer(rc, out_dir);
      std::printf("%zu transferred images written to %s\n", r.size(), out_dir.c_str());
    } else if (*train) {
      const auto r = cmd_train(rc, resume ? std::optional<fs::path>(*resume) : std::nullopt);
      std::printf("trained %d prompt vectors for %llu steps; checkpoint %s\n", r.prompt.count(),
                  static_cast<unsigned long long>(r.log.total_steps),
                  (rc.checkpoint_dir_or_default() / "final.gipv").string().c_str());
    } else if (*caption) {
      cmd_caption(rc, checkpoint ? std::optional<fs::path>(*checkpoint) : std::nullopt, text_prompt,
                  out_file ? std::optional<fs::path>(*out_file) : std::nullopt);
    } else if (*evaluate) {
      if (train_refs) eval.train_refs = *train_refs;
      if (out_file) eval.out_file = *out_file;
      cmd_evaluate(rc, eval, std::cout);
    } else if (*interpret) {
      const auto text = cmd_interpret(rc, interp_ckpt, as_json);
      if (out_file)
        write_file_atomic(*out_file, text);
      else
        std::cout << text;
    } else if (*synth) {
      const auto path = cmd_synth(rc, synth_count, out_dir);
      std::printf("%s\n", path.string().c_str());
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "geneic: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "geneic: %s\n", e.what());
    return 1;
  }
  return 0;
}
