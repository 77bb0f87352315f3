#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geneic/attribute_transfer.hpp"
#include "geneic/backend.hpp"
#include "geneic/clustering.hpp"
#include "geneic/losses.hpp"
#include "geneic/prompt.hpp"

namespace geneic {

enum class GradScope { kOriginalOnly, kBoth };

inline std::string to_string(GradScope g) { return g == GradScope::kBoth ? "both" : "original_only"; }
inline GradScope parse_grad_scope(const std::string& s) {
  if (s == "both") return GradScope::kBoth;
  if (s == "original_only") return GradScope::kOriginalOnly;
  throw ContractError("grad_scope must be 'both' or 'original_only', got '" + s + "'");
}

struct TrainConfig {
  int prompt_count = 8;  // M
  int max_images = 1000;  // N
  double beta = kDefaultBeta;
  int epochs = 30;
  int batch_size = 10;
  double lr0 = 5e-4;
  double lr_min = 0.0;
  double weight_decay = 0.05;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double init_std = kPromptInitStd;
  double temperature = 1.0;
  int max_len = 20;
  double fraction = 0.25;
  GradScope grad_scope = GradScope::kBoth;
  int clusters = 0;  // 0: max(2, N / 50)
  int kmeans_max_iter = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (prompt_count < 0) throw ContractError("TrainConfig: M must be >= 0");
    if (max_images < 2) throw ContractError("TrainConfig: N must be >= 2");
    if (beta < 0.0) throw ContractError("TrainConfig: beta must be >= 0");
    if (epochs < 0) throw ContractError("TrainConfig: epochs must be >= 0");
    if (batch_size < 1) throw ContractError("TrainConfig: batch_size must be >= 1");
    if (!(lr0 > 0.0) || lr_min < 0.0 || lr_min > lr0)
      throw ContractError("TrainConfig: need 0 <= lr_min <= lr0 and lr0 > 0");
    if (weight_decay < 0.0) throw ContractError("TrainConfig: weight_decay must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
      throw ContractError("TrainConfig: Adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ContractError("TrainConfig: adam_eps must be > 0");
    if (!(init_std >= 0.0)) throw ContractError("TrainConfig: init_std must be >= 0");
    if (!(temperature > 0.0)) throw ContractError("TrainConfig: temperature must be > 0");
    if (max_len < 1) throw ContractError("TrainConfig: max_len must be >= 1");
    if (!(fraction >= 0.0 && fraction <= 1.0))
      throw ContractError("TrainConfig: fraction must lie in [0, 1]");
    if (clusters < 0) throw ContractError("TrainConfig: clusters must be >= 0");
    if (kmeans_max_iter < 1) throw ContractError("TrainConfig: kmeans_max_iter must be >= 1");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"M", c.prompt_count},
          {"N", c.max_images},
          {"beta", c.beta},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr0", c.lr0},
          {"lr_min", c.lr_min},
          {"weight_decay", c.weight_decay},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"init_std", c.init_std},
          {"temperature", c.temperature},
          {"max_len", c.max_len},
          {"fraction", c.fraction},
          {"grad_scope", to_string(c.grad_scope)},
          {"clusters", c.clusters},
          {"kmeans_max_iter", c.kmeans_max_iter},
          {"seed", c.seed}};
}

// ---------------------------------------------------------------------------
// Learning-rate schedule and optimizer
// ---------------------------------------------------------------------------

inline double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr0, double lr_min) {
  if (total_steps < 1 || step > total_steps)
    throw ContractError("cosine_lr: need 0 <= step <= total_steps and total_steps >= 1");
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

struct OptimizerState {
  Matrix m;  // first moment
  Matrix v;  // second moment
  std::uint64_t step = 0;

  static OptimizerState zeros(int rows, int cols) {
    return {Matrix::Zero(rows, cols), Matrix::Zero(rows, cols), 0};
  }

  friend bool operator==(const OptimizerState& a, const OptimizerState& b) {
    return a.step == b.step && a.m.rows() == b.m.rows() && a.m.cols() == b.m.cols() &&
           a.m == b.m && a.v == b.v;
  }
};

/// One AdamW step: decoupled decay, then bias-corrected Adam. Results are
/// rounded to float32 so checkpoints reproduce the in-memory state exactly.
inline std::pair<PromptState, OptimizerState> adamw_update(const PromptState& prompt,
                                                           const Matrix& grad,
                                                           const OptimizerState& state, double lr,
                                                           const TrainConfig& cfg) {
  if (grad.rows() != prompt.vectors.rows() || grad.cols() != prompt.vectors.cols() ||
      state.m.rows() != grad.rows() || state.m.cols() != grad.cols() ||
      state.v.rows() != grad.rows() || state.v.cols() != grad.cols())
    throw ShapeError("adamw_update: shapes disagree");
  if (!grad.allFinite()) throw NumericError("adamw_update: non-finite gradient");

  OptimizerState next = state;
  next.step = state.step + 1;
  const double t = static_cast<double>(next.step);
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
  next.m = cfg.adam_beta1 * state.m + (1.0 - cfg.adam_beta1) * grad;
  next.v = cfg.adam_beta2 * state.v + (1.0 - cfg.adam_beta2) * grad.cwiseProduct(grad);
  round_to_f32(next.m);
  round_to_f32(next.v);

  PromptState out = prompt;
  out.vectors *= (1.0 - lr * cfg.weight_decay);
  for (Eigen::Index r = 0; r < grad.rows(); ++r)
    for (Eigen::Index c = 0; c < grad.cols(); ++c) {
      const double m_hat = next.m(r, c) / bc1;
      const double v_hat = next.v(r, c) / bc2;
      out.vectors(r, c) -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  round_to_f32(out.vectors);
  out.step = prompt.step + 1;
  return {std::move(out), std::move(next)};
}

// GIOS block: magic, version u32, M u32, d u32, m then v as f32 row-major, step u64.
inline constexpr std::uint32_t kOptimizerVersion = 1;

inline std::vector<std::uint8_t> encode_optimizer(const OptimizerState& s) {
  ByteWriter w;
  w.magic("GIOS");
  w.u32(kOptimizerVersion);
  w.u32(static_cast<std::uint32_t>(s.m.rows()));
  w.u32(static_cast<std::uint32_t>(s.m.cols()));
  for (const Matrix* mat : {&s.m, &s.v})
    for (Eigen::Index r = 0; r < mat->rows(); ++r)
      for (Eigen::Index c = 0; c < mat->cols(); ++c) w.f32(static_cast<float>((*mat)(r, c)));
  w.u64(s.step);
  return std::move(w).bytes();
}

inline OptimizerState decode_optimizer(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "optimizer state");
  r.expect_magic("GIOS");
  if (const auto v = r.u32(); v != kOptimizerVersion) r.fail("unsupported version " + std::to_string(v));
  const auto rows = r.u32(), cols = r.u32();
  OptimizerState s = OptimizerState::zeros(static_cast<int>(rows), static_cast<int>(cols));
  for (Matrix* mat : {&s.m, &s.v})
    for (std::uint32_t i = 0; i < rows; ++i)
      for (std::uint32_t j = 0; j < cols; ++j) (*mat)(i, j) = r.f32();
  s.step = r.u64();
  r.expect_end();
  return s;
}

// ---------------------------------------------------------------------------
// Self-critical step
// ---------------------------------------------------------------------------

/// Frozen-backend quantities of one (original, transferred) pair. They never
/// change during training, so they are computed once.
struct PairContext {
  int index = 0;
  VisualEmbedding vis;
  VisualEmbedding vis_transferred;
  JointEmbedding image;
  JointEmbedding image_transferred;
};

inline PairContext prepare_pair(int index, const ImageSample& original,
                                const ImageSample& transferred, const BackendBundle& bundle) {
  return {index, encode_image(original, bundle), encode_image(transferred, bundle),
          joint_embed_image(original, bundle), joint_embed_image(transferred, bundle)};
}

struct LossReport {
  double l_attr = 0.0;
  double l_sem = 0.0;
  double total = 0.0;
  double beta = kDefaultBeta;
  int n = 0;
};

struct ScstResult {
  Matrix grad;  // d(loss)/d(prompt), M x d_dec
  LossReport loss;
  AdvantageBatch advantages;
  int skipped_pairs = 0;        // image pair with dV = 0
  int degenerate_captions = 0;  // greedy captions with dS = 0
};

inline int effective_max_len(const TrainConfig& cfg, const BackendBundle& bundle) {
  return std::min(cfg.max_len, bundle.max_len);
}

/// Self-critical policy-gradient estimate for one batch.
///
/// For each pair the current prompt produces a greedy and a sampled caption of
/// both the original and the transferred image. The advantage
///   A = (r_attr^s - r_attr^g) + beta (r_sem^s - r_sem^g)
/// weights the score function of the sampled captions (both captions under
/// GradScope::kBoth, the original's only otherwise). The returned gradient is
/// that of the loss, -mean(A * grad log P).
inline ScstResult scst_step(std::span<const PairContext> batch, const PromptState& prompt,
                            const BackendBundle& bundle, const TrainConfig& cfg,
                            std::uint64_t rng_seed) {
  if (batch.empty()) throw ContractError("scst_step: empty batch");
  const int max_len = effective_max_len(cfg, bundle);
  ScstResult out;
  out.grad = Matrix::Zero(prompt.count(), prompt.width());
  std::vector<RewardReport> sampled, greedy;
  const SplitMix64 root(rng_seed);

  for (std::size_t k = 0; k < batch.size(); ++k) {
    const PairContext& p = batch[k];
    const Vector dv = normalize(p.image).vec - normalize(p.image_transferred).vec;
    if (dv.norm() < kDegenerateDelta) {
      ++out.skipped_pairs;
      continue;
    }
    const ComposedInput in = compose_input(p.vis, prompt);
    const ComposedInput in_t = compose_input(p.vis_transferred, prompt);

    DecodeOptions greedy_opt{DecodeMode::kGreedy, max_len, 1.0, 0};
    const CaptionSample g = decode(in, greedy_opt, bundle);
    const CaptionSample g_t = decode(in_t, greedy_opt, bundle);
    auto stream = root.split(k);
    DecodeOptions sample_opt{DecodeMode::kSampled, max_len, cfg.temperature, stream.next()};
    const CaptionSample s = decode(in, sample_opt, bundle);
    sample_opt.rng_seed = stream.next();
    const CaptionSample s_t = decode(in_t, sample_opt, bundle);

    const auto delta_g = delta_pair(p.image, p.image_transferred, joint_embed_text(g.text, bundle),
                                    joint_embed_text(g_t.text, bundle));
    const auto delta_s = delta_pair(p.image, p.image_transferred, joint_embed_text(s.text, bundle),
                                    joint_embed_text(s_t.text, bundle));
    const auto rg = make_reward(delta_g, p.image, joint_embed_text(g.text, bundle), cfg.beta);
    const auto rs = make_reward(delta_s, p.image, joint_embed_text(s.text, bundle), cfg.beta);
    if (delta_g.caption_degenerate) ++out.degenerate_captions;
    greedy.push_back(rg);
    sampled.push_back(rs);

    const double adv = (rs.r_attr - rg.r_attr) + cfg.beta * (rs.r_sem - rg.r_sem);
    if (adv == 0.0 || prompt.count() == 0) continue;
    Matrix score = sequence_logprob_grad(in, s.seq, bundle).grad;
    if (cfg.grad_scope == GradScope::kBoth) score += sequence_logprob_grad(in_t, s_t.seq, bundle).grad;
    out.grad -= adv * score;
  }

  const int used = static_cast<int>(greedy.size());
  if (used == 0) throw DegenerateBatchError("scst_step: every pair in the batch is degenerate");
  out.grad /= static_cast<double>(used);
  out.advantages = scst_advantages(sampled, greedy, cfg.beta);

  double ra = 0.0, rs = 0.0;
  for (const auto& r : greedy) {
    ra += r.r_attr;
    rs += r.r_sem;
  }
  out.loss.n = used;
  out.loss.beta = cfg.beta;
  out.loss.l_attr = 1.0 - ra / used;
  out.loss.l_sem = 1.0 - rs / used;
  out.loss.total = total_loss(out.loss.l_attr, out.loss.l_sem, cfg.beta);
  return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct StepRecord {
  int epoch = 0;
  std::uint64_t step = 0;
  double lr = 0.0;
  bool skipped = false;
  double l_attr = 0.0;
  double l_sem = 0.0;
  double loss = 0.0;
  double mean_advantage = 0.0;
  int pairs = 0;
  int skipped_pairs = 0;
  int degenerate_captions = 0;
  double reward_sampled = 0.0;  // mean combined reward of sampled captions
  double reward_greedy = 0.0;
  double r_attr_greedy = 0.0;
  double r_sem_greedy = 0.0;
  double r_sem_sampled = 0.0;
};

inline nlohmann::json to_json(const StepRecord& r) {
  return {{"type", "step"},
          {"epoch", r.epoch},
          {"step", r.step},
          {"lr", r.lr},
          {"skipped", r.skipped},
          {"L_a", r.l_attr},
          {"L_s", r.l_sem},
          {"L", r.loss},
          {"mean_advantage", r.mean_advantage},
          {"pairs", r.pairs},
          {"skipped_pairs", r.skipped_pairs},
          {"degenerate_captions", r.degenerate_captions},
          {"reward_sampled", r.reward_sampled},
          {"reward_greedy", r.reward_greedy},
          {"r_attr_greedy", r.r_attr_greedy},
          {"r_sem_greedy", r.r_sem_greedy},
          {"r_sem_sampled", r.r_sem_sampled}};
}

inline StepRecord step_record_from_json(const nlohmann::json& j) {
  StepRecord r;
  r.epoch = j.at("epoch");
  r.step = j.at("step");
  r.lr = j.at("lr");
  r.skipped = j.at("skipped");
  r.l_attr = j.at("L_a");
  r.l_sem = j.at("L_s");
  r.loss = j.at("L");
  r.mean_advantage = j.at("mean_advantage");
  r.pairs = j.at("pairs");
  r.skipped_pairs = j.at("skipped_pairs");
  r.degenerate_captions = j.at("degenerate_captions");
  r.reward_sampled = j.at("reward_sampled");
  r.reward_greedy = j.at("reward_greedy");
  r.r_attr_greedy = j.at("r_attr_greedy");
  r.r_sem_greedy = j.at("r_sem_greedy");
  r.r_sem_sampled = j.at("r_sem_sampled");
  return r;
}

struct TrainLog {
  nlohmann::json config;
  std::string digest_before;
  std::string digest_after;
  std::uint64_t total_steps = 0;
  int images = 0;
  int clusters = 0;
  std::vector<StepRecord> records;

  // JSON lines: a header, one record per step, a footer.
  std::string to_jsonl() const {
    std::string out;
    out += nlohmann::json{{"type", "header"},
                          {"config", config},
                          {"digest_before", digest_before},
                          {"total_steps", total_steps},
                          {"images", images},
                          {"clusters", clusters}}
               .dump() +
           "\n";
    for (const auto& r : records) out += to_json(r).dump() + "\n";
    out += nlohmann::json{{"type", "footer"}, {"digest_after", digest_after}}.dump() + "\n";
    return out;
  }
};

inline std::vector<StepRecord> parse_step_records(std::string_view jsonl) {
  std::vector<StepRecord> out;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    auto nl = jsonl.find('\n', pos);
    if (nl == std::string_view::npos) nl = jsonl.size();
    const auto line = jsonl.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (j.value("type", "") == "step") out.push_back(step_record_from_json(j));
  }
  return out;
}

struct ResumeState {
  PromptState prompt;
  OptimizerState optimizer;
  std::vector<StepRecord> records;  // log of the steps already taken
};

struct TrainResult {
  PromptState prompt;
  OptimizerState optimizer;
  TrainLog log;
};

struct TrainHooks {
  // Called after the last step of every epoch.
  std::function<void(int epoch, const PromptState&, const OptimizerState&, const TrainLog&)> on_epoch_end;
};

inline std::uint64_t steps_per_epoch(int n_images, int batch_size) {
  return (static_cast<std::uint64_t>(n_images) + static_cast<std::uint64_t>(batch_size) - 1) /
         static_cast<std::uint64_t>(batch_size);
}

namespace stream_id {
inline constexpr std::uint64_t kCluster = 1, kInit = 2, kShuffle = 3, kStep = 4;
}

/// Everything the loop needs that is fixed for a run: clustering, partners,
/// transferred images and their frozen embeddings.
struct TrainingSetup {
  std::vector<ImageSample> images;
  CorpusIndex index;
  ClusterAssignment assignment;
  std::vector<int> partners;
  std::vector<ImageSample> transferred;
  std::vector<PairContext> contexts;
};

inline TrainingSetup prepare_training(const std::vector<ImageSample>& corpus,
                                      const BackendBundle& bundle, const TrainConfig& cfg) {
  TrainingSetup s;
  const auto n = std::min<std::size_t>(corpus.size(), static_cast<std::size_t>(cfg.max_images));
  if (n < 2) throw ContractError("train: need at least 2 images");
  s.images.assign(corpus.begin(), corpus.begin() + static_cast<std::ptrdiff_t>(n));
  s.index = embed_corpus(s.images, bundle);
  quantize_to_f32(s.index);
  const int k = cfg.clusters > 0 ? std::min(cfg.clusters, static_cast<int>(n))
                                 : default_cluster_count(static_cast<int>(n));
  s.assignment = cluster_corpus(s.index, k, derive_stream(cfg.seed, {stream_id::kCluster}).next(),
                                cfg.kmeans_max_iter);
  for (int i = 0; i < static_cast<int>(n); ++i) {
    const int j = partner_or_nearest(i, s.assignment, s.index);
    s.partners.push_back(j);
    s.transferred.push_back(make_transferred_image(s.images[static_cast<std::size_t>(i)],
                                                   s.images[static_cast<std::size_t>(j)], bundle,
                                                   cfg.fraction));
    s.contexts.push_back(prepare_pair(i, s.images[static_cast<std::size_t>(i)],
                                      s.transferred.back(), bundle));
  }
  return s;
}

/// Unsupervised prompt optimisation. Only the prompt changes; the bundle is
/// read-only and its digest is recorded before and after.
inline TrainResult train(const std::vector<ImageSample>& corpus, const BackendBundle& bundle,
                         const TrainConfig& cfg, const ResumeState* resume = nullptr,
                         const TrainHooks& hooks = {}) {
  cfg.validate();
  TrainResult result;
  result.log.config = to_json(cfg);
  result.log.digest_before = bundle.digest();

  const TrainingSetup setup = prepare_training(corpus, bundle, cfg);
  const int n = static_cast<int>(setup.images.size());
  const std::uint64_t spe = steps_per_epoch(n, cfg.batch_size);
  const std::uint64_t total = static_cast<std::uint64_t>(cfg.epochs) * spe;
  result.log.total_steps = total;
  result.log.images = n;
  result.log.clusters = setup.assignment.k;

  if (resume) {
    if (resume->prompt.width() != bundle.d_dec() || resume->prompt.count() != cfg.prompt_count)
      throw ContractError("train: resume checkpoint does not match M / d_dec");
    result.prompt = resume->prompt;
    result.optimizer = resume->optimizer;
    for (const auto& r : resume->records)
      if (r.step < result.prompt.step) result.log.records.push_back(r);
  } else {
    result.prompt = init_prompt(cfg.prompt_count, bundle.d_dec(),
                                derive_stream(cfg.seed, {stream_id::kInit}).next(), cfg.init_std);
    result.optimizer = OptimizerState::zeros(cfg.prompt_count, bundle.d_dec());
  }

  std::vector<PairBatch> batches;
  int batches_epoch = -1;
  for (std::uint64_t step = result.prompt.step; step < total; ++step) {
    const int epoch = static_cast<int>(step / spe);
    if (epoch != batches_epoch) {
      batches = build_pair_batches(setup.assignment, setup.index, cfg.batch_size,
                                   derive_stream(cfg.seed, {stream_id::kShuffle,
                                                            static_cast<std::uint64_t>(epoch)})
                                       .next());
      batches_epoch = epoch;
    }
    const PairBatch& batch = batches[static_cast<std::size_t>(step % spe)];
    std::vector<PairContext> ctx;
    for (const auto& [i, j] : batch.pairs) ctx.push_back(setup.contexts[static_cast<std::size_t>(i)]);

    StepRecord rec;
    rec.epoch = epoch;
    rec.step = step;
    rec.lr = cosine_lr(step, total, cfg.lr0, cfg.lr_min);
    rec.pairs = static_cast<int>(ctx.size());
    try {
      const ScstResult r =
          scst_step(ctx, result.prompt, bundle, cfg, derive_stream(cfg.seed, {stream_id::kStep, step}).next());
      auto [p, o] = adamw_update(result.prompt, r.grad, result.optimizer, rec.lr, cfg);
      result.prompt = std::move(p);
      result.optimizer = std::move(o);
      rec.l_attr = r.loss.l_attr;
      rec.l_sem = r.loss.l_sem;
      rec.loss = r.loss.total;
      rec.mean_advantage = r.advantages.mean();
      rec.skipped_pairs = r.skipped_pairs;
      rec.degenerate_captions = r.degenerate_captions;
      const double used = static_cast<double>(r.loss.n);
      for (std::size_t i = 0; i < r.advantages.sampled.size(); ++i) {
        rec.reward_sampled += r.advantages.sampled[i].combined / used;
        rec.reward_greedy += r.advantages.greedy[i].combined / used;
        rec.r_attr_greedy += r.advantages.greedy[i].r_attr / used;
        rec.r_sem_greedy += r.advantages.greedy[i].r_sem / used;
        rec.r_sem_sampled += r.advantages.sampled[i].r_sem / used;
      }
    } catch (const DegenerateBatchError&) {
      rec.skipped = true;
      rec.skipped_pairs = rec.pairs;
      result.prompt.step = step + 1;
    }
    result.log.records.push_back(rec);
    if ((step + 1) % spe == 0 && hooks.on_epoch_end)
      hooks.on_epoch_end(epoch, result.prompt, result.optimizer, result.log);
  }
  result.log.digest_after = bundle.digest();
  return result;
}

}  // namespace geneic
