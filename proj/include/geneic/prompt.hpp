#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "geneic/backend.hpp"
#include "geneic/binary_io.hpp"
#include "geneic/rng.hpp"

namespace geneic {

inline constexpr double kPromptInitStd = 0.02;

/// The learnable prompt vectors, the only trained parameters. Entries are kept
/// float32-representable so checkpoints are lossless.
struct PromptState {
  Matrix vectors;  // M x d_dec
  std::uint64_t step = 0;

  int count() const { return static_cast<int>(vectors.rows()); }
  int width() const { return static_cast<int>(vectors.cols()); }

  friend bool operator==(const PromptState& a, const PromptState& b) {
    return a.step == b.step && a.vectors.rows() == b.vectors.rows() &&
           a.vectors.cols() == b.vectors.cols() && a.vectors == b.vectors;
  }
};

struct TextPrompt {
  std::string text;
};

inline PromptState init_prompt(int m, int d_dec, std::uint64_t seed, double stddev = kPromptInitStd) {
  if (m < 0) throw ContractError("init_prompt: M must be >= 0");
  if (d_dec < 1) throw ContractError("init_prompt: d_dec must be >= 1");
  SplitMix64 rng(seed);
  PromptState s;
  s.vectors.resize(m, d_dec);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < d_dec; ++c) s.vectors(r, c) = stddev * rng.normal();
  round_to_f32(s.vectors);
  return s;
}

/// Visual slots followed by the prompt block.
inline ComposedInput compose_input(const VisualEmbedding& vis, const PromptState& prompt) {
  if (prompt.count() > 0 && vis.tokens.cols() != prompt.vectors.cols())
    throw ShapeError("compose_input: visual width != prompt width");
  ComposedInput in;
  const auto q = vis.tokens.rows();
  in.slots.resize(q + prompt.count(), vis.tokens.cols());
  in.slots.topRows(q) = vis.tokens;
  if (prompt.count() > 0) in.slots.bottomRows(prompt.count()) = prompt.vectors;
  in.prompt_begin = static_cast<int>(q);
  in.prompt_end = static_cast<int>(q) + prompt.count();
  return in;
}

/// Hand-crafted prompt: its words are looked up in the decoder's token table.
inline ComposedInput compose_input_text(const VisualEmbedding& vis, const TextPrompt& tp,
                                        const BackendBundle& bundle) {
  const auto& dec = *bundle.decoder;
  const auto ids = dec.vocabulary().encode(tp.text);
  if (ids.empty()) throw TokenizationError("compose_input_text: prompt text is empty");
  if (vis.tokens.cols() != dec.width()) throw ShapeError("compose_input_text: width mismatch");
  PromptState block;
  block.vectors.resize(static_cast<Eigen::Index>(ids.size()), dec.width());
  for (std::size_t i = 0; i < ids.size(); ++i)
    block.vectors.row(static_cast<Eigen::Index>(i)) = dec.token_embeddings().row(ids[i]);
  return compose_input(vis, block);
}

// ---------------------------------------------------------------------------
// GIPV checkpoint: magic, version u32, M u32, d u32, M*d f32 row-major, step u64.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kPromptVersion = 1;

inline std::vector<std::uint8_t> encode_prompt(const PromptState& s) {
  ByteWriter w;
  w.magic("GIPV");
  w.u32(kPromptVersion);
  w.u32(static_cast<std::uint32_t>(s.count()));
  w.u32(static_cast<std::uint32_t>(s.width()));
  for (int r = 0; r < s.count(); ++r)
    for (int c = 0; c < s.width(); ++c) w.f32(static_cast<float>(s.vectors(r, c)));
  w.u64(s.step);
  return std::move(w).bytes();
}

inline PromptState decode_prompt(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "prompt checkpoint");
  r.expect_magic("GIPV");
  if (const auto v = r.u32(); v != kPromptVersion) r.fail("unsupported version " + std::to_string(v));
  const auto m = r.u32();
  const auto d = r.u32();
  PromptState s;
  s.vectors.resize(m, d);
  for (std::uint32_t i = 0; i < m; ++i)
    for (std::uint32_t j = 0; j < d; ++j) s.vectors(i, j) = r.f32();
  s.step = r.u64();
  r.expect_end();
  return s;
}

inline void save_prompt(const PromptState& s, const std::filesystem::path& path) {
  write_file_atomic(path, encode_prompt(s));
}

inline PromptState load_prompt(const std::filesystem::path& path) {
  return decode_prompt(read_file_bytes(path));
}

}  // namespace geneic
