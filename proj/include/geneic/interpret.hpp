#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geneic/backend.hpp"
#include "geneic/prompt.hpp"

namespace geneic {

struct VocabEmbeddings {
  Matrix table;  // V x d_dec
  std::vector<std::string> tokens;

  static VocabEmbeddings from(const BackendBundle& bundle) {
    return {bundle.decoder->token_embeddings(), bundle.decoder->vocabulary().words()};
  }
};

struct WordHit {
  int id = -1;
  std::string token;
  double score = 0.0;  // distance for retrieval, probability for generation
};

// Tokens that are not printable ASCII show as their id.
inline std::string display_token(const std::string& tok, int id) {
  bool printable = !tok.empty();
  for (char c : tok) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x20 || u >= 0x7f) printable = false;
  }
  return printable ? tok : "N/A(" + std::to_string(id) + ")";
}

/// Vocabulary entry closest in Euclidean distance; ties to the lowest id.
inline WordHit nearest_word(const Vector& vec, const VocabEmbeddings& vocab) {
  if (vocab.table.rows() == 0) throw ContractError("nearest_word: empty vocabulary");
  if (vec.size() != vocab.table.cols()) throw ShapeError("nearest_word: dimension mismatch");
  int best = 0;
  double best_d2 = (vocab.table.row(0).transpose() - vec).squaredNorm();
  for (Eigen::Index k = 1; k < vocab.table.rows(); ++k) {
    const double d2 = (vocab.table.row(k).transpose() - vec).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = static_cast<int>(k);
    }
  }
  return {best, vocab.tokens[static_cast<std::size_t>(best)], std::sqrt(best_d2)};
}

/// Feeds `vec` as the only input slot and reads off the most probable first
/// token.
inline WordHit generate_from_prompt(const Vector& vec, const BackendBundle& bundle) {
  const auto& dec = *bundle.decoder;
  if (vec.size() != dec.width()) throw ShapeError("generate_from_prompt: dimension mismatch");
  const Matrix slots = vec.transpose();
  const Vector logits = dec.step_logits(slots, {});
  const int id = argmax_lowest(logits);
  return {id, dec.vocabulary().word(id), softmax(logits)(id)};
}

struct InterpretRow {
  int index = 0;
  WordHit retrieved;
  WordHit generated;
};

inline std::vector<InterpretRow> interpret_prompt(const PromptState& state, const BackendBundle& bundle) {
  if (state.count() < 1) throw ContractError("interpret_prompt: prompt has no vectors");
  const auto vocab = VocabEmbeddings::from(bundle);
  std::vector<InterpretRow> rows;
  for (int i = 0; i < state.count(); ++i) {
    const Vector v = state.vectors.row(i).transpose();
    rows.push_back({i, nearest_word(v, vocab), generate_from_prompt(v, bundle)});
  }
  return rows;
}

inline std::string format_table(const std::vector<InterpretRow>& rows) {
  std::vector<std::string> left, right;
  std::size_t width = std::string("retrieval").size();
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, " (%.4f)", r.retrieved.score);
    left.push_back(display_token(r.retrieved.token, r.retrieved.id) + buf);
    std::snprintf(buf, sizeof buf, " (%.4f)", r.generated.score);
    right.push_back(display_token(r.generated.token, r.generated.id) + buf);
    width = std::max(width, left.back().size());
  }
  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(s.size(), w), ' ');
    return s;
  };
  std::string out = pad("#", 4) + pad("retrieval", width + 2) + "generation\n";
  for (std::size_t i = 0; i < rows.size(); ++i)
    out += pad(std::to_string(rows[i].index + 1), 4) + pad(left[i], width + 2) + right[i] + "\n";
  return out;
}

inline nlohmann::json to_json(const std::vector<InterpretRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows)
    arr.push_back({{"index", r.index},
                   {"retrieval", {{"id", r.retrieved.id},
                                  {"token", display_token(r.retrieved.token, r.retrieved.id)},
                                  {"distance", r.retrieved.score}}},
                   {"generation", {{"id", r.generated.id},
                                   {"token", display_token(r.generated.token, r.generated.id)},
                                   {"prob", r.generated.score}}}});
  return arr;
}

}  // namespace geneic
