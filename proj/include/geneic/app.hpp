#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geneic/attribute_transfer.hpp"
#include "geneic/clustering.hpp"
#include "geneic/config.hpp"
#include "geneic/image_io.hpp"
#include "geneic/interpret.hpp"
#include "geneic/metrics.hpp"
#include "geneic/prompt.hpp"
#include "geneic/synthetic.hpp"
#include "geneic/trainer.hpp"

namespace geneic {

namespace fs = std::filesystem;

struct ManifestEntry {
  std::string id;
  fs::path path;
  std::vector<std::string> captions;
};

/// Lines of {"id", "path"[, "captions"]}; relative paths resolve against the
/// manifest's directory.
inline std::vector<ManifestEntry> load_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw Error("cannot open corpus manifest " + manifest.string());
  std::vector<ManifestEntry> out;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.path = j.at("path").get<std::string>();
      if (j.contains("captions")) e.captions = j.at("captions").get<std::vector<std::string>>();
      if (e.path.is_relative()) e.path = manifest.parent_path() / e.path;
      if (!seen.insert(e.id).second) throw Error("duplicate id '" + e.id + "'");
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(manifest.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    } catch (const Error& ex) {
      throw Error(manifest.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  if (out.empty()) throw Error("corpus manifest " + manifest.string() + " lists no images");
  return out;
}

/// Reads every listed image. Problems are collected per file and reported
/// together. Grey and RGB inputs are converted to the encoder's channel count.
inline std::vector<ImageSample> load_corpus(const std::vector<ManifestEntry>& entries,
                                            const BackendBundle& bundle) {
  std::vector<ImageSample> out;
  std::vector<std::string> problems;
  const auto& enc = *bundle.encoder;
  for (const auto& e : entries) {
    try {
      if (!fs::exists(e.path)) throw Error("file not found");
      auto img = read_image(e.path, e.id);
      if (img.channels != enc.image_channels()) img = convert_channels(img, enc.image_channels());
      check_image_for(img, enc);
      out.push_back(std::move(img));
    } catch (const std::exception& ex) {
      problems.push_back(e.path.string() + ": " + ex.what());
    }
  }
  if (!problems.empty()) {
    std::string msg = std::to_string(problems.size()) + " of " + std::to_string(entries.size()) +
                      " images could not be loaded:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw Error(msg);
  }
  return out;
}

inline std::vector<ImageSample> load_corpus(const RunConfig& rc, const BackendBundle& bundle) {
  if (rc.corpus.empty()) throw ConfigError("no corpus manifest given (data.corpus / --corpus)");
  return load_corpus(load_manifest(rc.corpus), bundle);
}

inline int cluster_count_for(const RunConfig& rc, int n) {
  return rc.train.clusters > 0 ? std::min(rc.train.clusters, n) : default_cluster_count(n);
}

struct ClusterOutputs {
  CorpusIndex index;
  ClusterAssignment assignment;
  bool cache_hit = false;
};

/// Writes index.json, embeddings.f32 and clusters.json into `out_dir`. A
/// previous index.json is reused when ids and backend digest both match.
/// Embeddings are rounded to float32 first, so cached and fresh runs agree.
inline ClusterOutputs cmd_cluster(const RunConfig& rc, const fs::path& out_dir) {
  const auto bundle = make_backend(rc);
  const auto images = load_corpus(rc, bundle);
  const auto digest = bundle.digest();
  fs::create_directories(out_dir);
  const auto manifest = out_dir / "index.json";

  ClusterOutputs out;
  if (fs::exists(manifest)) {
    try {
      std::ifstream in(manifest);
      const auto j = nlohmann::json::parse(in);
      std::vector<std::string> ids;
      for (const auto& im : images) ids.push_back(im.id);
      if (j.value("backend_digest", "") == digest && j.at("ids").get<std::vector<std::string>>() == ids) {
        out.index = load_corpus_index(manifest);
        out.cache_hit = true;
      }
    } catch (const std::exception&) {
      out.cache_hit = false;
    }
  }
  if (!out.cache_hit) {
    out.index = embed_corpus(images, bundle);
    quantize_to_f32(out.index);
    save_corpus_index(out.index, manifest, out_dir / "embeddings.f32", {{"backend_digest", digest}});
  }

  const int n = out.index.size();
  const int k = cluster_count_for(rc, n);
  out.assignment = cluster_corpus(out.index, k,
                                  derive_stream(rc.train.seed, {stream_id::kCluster}).next(),
                                  rc.train.kmeans_max_iter);
  nlohmann::json j;
  j["k"] = k;
  j["iterations"] = out.assignment.iterations;
  j["objective"] = out.assignment.objective;
  j["sizes"] = out.assignment.sizes();
  j["seed"] = rc.train.seed;
  nlohmann::json members = nlohmann::json::array();
  for (int i = 0; i < n; ++i) {
    const auto& id = out.index.ids[static_cast<std::size_t>(i)];
    nlohmann::json m = {{"id", id}, {"cluster", out.assignment.labels[static_cast<std::size_t>(i)]}};
    m["partner"] = n > 1 ? nlohmann::json(out.index.ids[static_cast<std::size_t>(
                               partner_or_nearest(i, out.assignment, out.index))])
                         : nlohmann::json(nullptr);
    members.push_back(std::move(m));
  }
  j["members"] = std::move(members);
  write_file_atomic(out_dir / "clusters.json", j.dump(2) + "\n");
  return out;
}

/// Dumps one attribute-transferred image per corpus image (paired with its
/// cluster partner) as PNG, plus transfers.json describing each plan.
inline nlohmann::json cmd_transfer(const RunConfig& rc, const fs::path& out_dir) {
  const auto bundle = make_backend(rc);
  const auto images = load_corpus(rc, bundle);
  if (images.size() < 2) throw ContractError("transfer: need at least 2 images to form pairs");
  auto index = embed_corpus(images, bundle);
  quantize_to_f32(index);
  const auto assignment =
      cluster_corpus(index, cluster_count_for(rc, index.size()),
                     derive_stream(rc.train.seed, {stream_id::kCluster}).next(), rc.train.kmeans_max_iter);
  fs::create_directories(out_dir);
  nlohmann::json sidecar = nlohmann::json::array();
  for (int i = 0; i < index.size(); ++i) {
    const int j = partner_or_nearest(i, assignment, index);
    const auto& xi = images[static_cast<std::size_t>(i)];
    const auto& xj = images[static_cast<std::size_t>(j)];
    const auto r = transfer_with_plan(xi, xj, bundle, rc.train.fraction);
    const auto name = "transfer_" + std::to_string(i) + ".png";
    write_png(r.image, out_dir / name);
    sidecar.push_back({{"id", xi.id},
                       {"partner", xj.id},
                       {"file", name},
                       {"fraction", r.plan.fraction},
                       {"count", r.plan.count},
                       {"channels", r.plan.channels}});
  }
  write_file_atomic(out_dir / "transfers.json", sidecar.dump(2) + "\n");
  return sidecar;
}

inline fs::path optimizer_path_for(const fs::path& checkpoint) {
  auto p = checkpoint;
  return p.replace_extension(".gios");
}

/// Full training run. Per-epoch checkpoints (epoch_<e>.gipv/.gios) and the
/// log are rewritten at every epoch end, so an interrupted run can resume
/// from the last epoch checkpoint.
inline TrainResult cmd_train(const RunConfig& rc, const std::optional<fs::path>& resume = std::nullopt) {
  const auto bundle = make_backend(rc);
  const auto images = load_corpus(rc, bundle);
  const auto ckpt_dir = rc.checkpoint_dir_or_default();
  const auto log_path = rc.log_or_default();
  fs::create_directories(ckpt_dir);
  if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());

  std::optional<ResumeState> rs;
  if (resume) {
    rs.emplace();
    rs->prompt = load_prompt(*resume);
    rs->optimizer = decode_optimizer(read_file_bytes(optimizer_path_for(*resume)));
    if (fs::exists(log_path)) {
      const auto bytes = read_file_bytes(log_path);
      rs->records = parse_step_records(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    }
  }

  TrainHooks hooks;
  hooks.on_epoch_end = [&](int epoch, const PromptState& p, const OptimizerState& o, const TrainLog& log) {
    const auto stem = ckpt_dir / ("epoch_" + std::to_string(epoch + 1));
    save_prompt(p, fs::path(stem).replace_extension(".gipv"));
    write_file_atomic(fs::path(stem).replace_extension(".gios"), encode_optimizer(o));
    write_file_atomic(log_path, log.to_jsonl());
  };

  auto result = train(images, bundle, rc.train, rs ? &*rs : nullptr, hooks);
  save_prompt(result.prompt, ckpt_dir / "final.gipv");
  write_file_atomic(ckpt_dir / "optimizer_final.gios", encode_optimizer(result.optimizer));
  write_file_atomic(log_path, result.log.to_jsonl());
  return result;
}

inline std::optional<PromptState> load_checkpoint_for(const std::optional<fs::path>& ckpt,
                                                      const BackendBundle& bundle) {
  if (!ckpt) return std::nullopt;
  auto p = load_prompt(*ckpt);
  if (p.count() > 0 && p.width() != bundle.d_dec())
    throw FormatError("checkpoint " + ckpt->string() + " has width " + std::to_string(p.width()) +
                          " but the decoder expects " + std::to_string(bundle.d_dec()),
                      0);
  return p;
}

/// Greedy caption per manifest image. Without a checkpoint no prompt vectors
/// are used (M = 0); a text prompt replaces the learned one when given.
inline std::vector<Candidate> cmd_caption(const RunConfig& rc, const std::optional<fs::path>& ckpt,
                                          const std::optional<std::string>& text_prompt,
                                          const std::optional<fs::path>& out_file) {
  const auto bundle = make_backend(rc);
  const auto images = load_corpus(rc, bundle);
  const auto prompt = load_checkpoint_for(ckpt, bundle);
  const PromptState state = prompt ? *prompt : PromptState{Matrix(0, bundle.d_dec()), 0};
  DecodeOptions opt;
  opt.mode = DecodeMode::kGreedy;
  opt.max_len = effective_max_len(rc.train, bundle);

  std::vector<Candidate> out;
  std::string lines;
  for (const auto& img : images) {
    const auto vis = encode_image(img, bundle);
    const auto input = text_prompt ? compose_input_text(vis, TextPrompt{*text_prompt}, bundle)
                                   : compose_input(vis, state);
    const auto cap = decode(input, opt, bundle);
    out.push_back({img.id, cap.text});
    lines += nlohmann::json{{"image_id", img.id}, {"caption", cap.text}}.dump() + "\n";
  }
  if (out_file) {
    if (out_file->has_parent_path()) fs::create_directories(out_file->parent_path());
    write_file_atomic(*out_file, lines);
  } else {
    std::cout << lines;
  }
  return out;
}

namespace detail {

inline std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

}  // namespace detail

inline std::vector<Candidate> load_candidates(const fs::path& path) {
  std::vector<Candidate> out;
  for (const auto& j : detail::read_jsonl(path))
    out.push_back({j.at("image_id").get<std::string>(), j.at("caption").get<std::string>()});
  return out;
}

/// Accepts {"image_id", "captions"} lines or corpus-manifest lines with
/// {"id", "captions"}.
inline ReferenceSet load_references(const fs::path& path) {
  ReferenceSet out;
  for (const auto& j : detail::read_jsonl(path)) {
    const auto id = j.contains("image_id") ? j.at("image_id") : j.at("id");
    auto& dst = out[id.get<std::string>()];
    for (const auto& c : j.at("captions")) dst.push_back(c.get<std::string>());
  }
  return out;
}

// One sentence per line, or JSON lines carrying "caption" / "captions".
inline std::vector<std::string> load_sentences(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    if (t.front() == '{') {
      const auto j = nlohmann::json::parse(t);
      if (j.contains("caption")) out.push_back(j.at("caption").get<std::string>());
      if (j.contains("captions"))
        for (const auto& c : j.at("captions")) out.push_back(c.get<std::string>());
    } else {
      out.push_back(t);
    }
  }
  return out;
}

struct EvaluateOptions {
  fs::path candidates;
  fs::path references;
  std::optional<fs::path> train_refs;
  bool clip_s = false;  // needs the corpus manifest for the images
  std::optional<fs::path> out_file;
};

/// Scores candidates against references. %Novel compares against
/// `train_refs` when given and otherwise against the reference corpus.
inline MetricReport cmd_evaluate(const RunConfig& rc, const EvaluateOptions& opt, std::ostream& log) {
  const auto cands = load_candidates(opt.candidates);
  const auto refs = load_references(opt.references);
  std::vector<std::string> missing;
  for (const auto& c : cands)
    if (!refs.contains(c.image_id) || refs.at(c.image_id).empty()) missing.push_back(c.image_id);
  if (!missing.empty()) {
    std::string msg = "no reference captions for " + std::to_string(missing.size()) + " candidate(s):";
    for (const auto& m : missing) msg += " " + m;
    throw Error(msg);
  }
  std::vector<std::string> train;
  if (opt.train_refs) {
    train = load_sentences(*opt.train_refs);
  } else {
    for (const auto& [id, caps] : refs) train.insert(train.end(), caps.begin(), caps.end());
  }
  auto report = evaluate_captions(cands, refs, train);

  if (opt.clip_s) {
    const auto bundle = make_backend(rc);
    const auto entries = load_manifest(rc.corpus);
    std::map<std::string, ManifestEntry> by_id;
    for (const auto& e : entries) by_id[e.id] = e;
    std::vector<ManifestEntry> wanted;
    std::vector<std::string> texts;
    for (const auto& c : cands) {
      auto it = by_id.find(c.image_id);
      if (it == by_id.end()) throw Error("clip_s: image '" + c.image_id + "' is not in the corpus manifest");
      wanted.push_back(it->second);
      texts.push_back(c.caption);
    }
    report.clip_s = clip_s(load_corpus(wanted, bundle), texts, bundle, rc.clip_s_weight);
  }

  char buf[128];
  for (std::size_t i = 0; i < report.bleu.size(); ++i) {
    std::snprintf(buf, sizeof buf, "BLEU-%zu   %.4f\n", i + 1, report.bleu[i]);
    log << buf;
  }
  std::snprintf(buf, sizeof buf, "METEOR   n/a\nROUGE-L  %.4f\nCIDEr    %.4f\n", report.rouge_l, report.cider);
  log << buf;
  if (report.clip_s) {
    std::snprintf(buf, sizeof buf, "CLIP-S   %.4f\n", *report.clip_s);
    log << buf;
  }
  std::snprintf(buf, sizeof buf, "Vocab    %d\n%%Novel   %.2f\nLength   %.2f\n%%Unique  %.2f\n", report.vocab,
                report.pct_novel, report.mean_length, report.pct_unique);
  log << buf;

  if (opt.out_file) {
    if (opt.out_file->has_parent_path()) fs::create_directories(opt.out_file->parent_path());
    write_file_atomic(*opt.out_file, to_json(report).dump(2) + "\n");
  }
  return report;
}

inline std::string cmd_interpret(const RunConfig& rc, const fs::path& ckpt, bool as_json) {
  const auto bundle = make_backend(rc);
  const auto prompt = load_checkpoint_for(ckpt, bundle);
  const auto rows = interpret_prompt(*prompt, bundle);
  return as_json ? to_json(rows).dump(2) + "\n" : format_table(rows);
}

/// Writes a synthetic corpus (PNG files + manifest.jsonl with class captions)
/// sized for the configured toy backend.
inline fs::path cmd_synth(const RunConfig& rc, int n, const fs::path& out_dir, int classes = 4) {
  if (n < 1) throw ConfigError("synth: count must be >= 1");
  static const std::vector<std::string> kColours = {"red", "blue", "yellow", "green"};
  static const std::vector<std::string> kThings = {"bird", "flower"};
  const auto& d = rc.dims;
  const auto images = synth_corpus(n, d.image_height, d.image_width, d.image_channels, rc.train.seed, classes);
  fs::create_directories(out_dir);
  std::string manifest;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto k = i % static_cast<std::size_t>(classes);
    const auto& colour = kColours[k % kColours.size()];
    const auto& thing = kThings[(k / kColours.size()) % kThings.size()];
    const auto name = images[i].id + ".png";
    write_png(images[i], out_dir / name);
    nlohmann::json j = {{"id", images[i].id},
                        {"path", name},
                        {"captions",
                         {"a photo of a " + colour + " " + thing, "a " + colour + " " + thing,
                          "a small " + colour + " " + thing}}};
    manifest += j.dump() + "\n";
  }
  const auto path = out_dir / "manifest.jsonl";
  write_file_atomic(path, manifest);
  return path;
}

}  // namespace geneic
