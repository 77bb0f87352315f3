#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geneic/backend.hpp"
#include "geneic/text.hpp"

namespace geneic {

struct Candidate {
  std::string image_id;
  std::string caption;
};

/// Reference captions per image id.
using ReferenceSet = std::map<std::string, std::vector<std::string>>;

struct MetricReport {
  std::vector<double> bleu;  // BLEU-1..4
  double rouge_l = 0.0;
  double cider = 0.0;
  std::optional<double> clip_s;
  int vocab = 0;
  double pct_novel = 0.0;
  double mean_length = 0.0;
  double pct_unique = 0.0;
  int candidates = 0;
  int images = 0;
};

namespace detail {

using Ngram = std::vector<std::string>;
using NgramCounts = std::map<Ngram, int>;

inline NgramCounts count_ngrams(const std::vector<std::string>& words, int n) {
  NgramCounts c;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= words.size(); ++i)
    ++c[Ngram(words.begin() + static_cast<std::ptrdiff_t>(i),
              words.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  return c;
}

inline const std::vector<std::string>& refs_for(const ReferenceSet& refs, const std::string& id) {
  auto it = refs.find(id);
  if (it == refs.end() || it->second.empty())
    throw ContractError("no reference captions for image '" + id + "'");
  return it->second;
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

/// Corpus BLEU-1..max_n: clipped n-gram precision, geometric mean, brevity
/// penalty against the closest reference length (ties to the shorter).
inline std::vector<double> bleu(const std::vector<Candidate>& cands, const ReferenceSet& refs,
                                int max_n = 4) {
  if (cands.empty()) throw ContractError("bleu: no candidates");
  if (max_n < 1) throw ContractError("bleu: max_n must be >= 1");
  std::vector<double> correct(static_cast<std::size_t>(max_n), 0.0), guess(correct);
  double cand_len = 0.0, ref_len = 0.0;
  for (const auto& c : cands) {
    const auto words = tokenize(c.caption);
    std::vector<std::vector<std::string>> ref_words;
    for (const auto& r : detail::refs_for(refs, c.image_id)) ref_words.push_back(tokenize(r));

    cand_len += static_cast<double>(words.size());
    std::size_t best = ref_words.front().size();
    for (const auto& r : ref_words) {
      const auto d = [&](std::size_t len) {
        return len > words.size() ? len - words.size() : words.size() - len;
      };
      if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
    }
    ref_len += static_cast<double>(best);

    for (int n = 1; n <= max_n; ++n) {
      const auto cc = detail::count_ngrams(words, n);
      std::map<detail::Ngram, int> max_ref;
      for (const auto& r : ref_words)
        for (const auto& [g, k] : detail::count_ngrams(r, n)) max_ref[g] = std::max(max_ref[g], k);
      for (const auto& [g, k] : cc) {
        auto it = max_ref.find(g);
        correct[static_cast<std::size_t>(n - 1)] += std::min(k, it == max_ref.end() ? 0 : it->second);
        guess[static_cast<std::size_t>(n - 1)] += k;
      }
    }
  }
  const double bp = cand_len <= 0.0        ? 0.0
                    : cand_len < ref_len ? std::exp(1.0 - ref_len / cand_len)
                                         : 1.0;
  std::vector<double> out;
  double log_sum = 0.0;
  bool zero = false;
  for (int n = 1; n <= max_n; ++n) {
    const double c = correct[static_cast<std::size_t>(n - 1)], g = guess[static_cast<std::size_t>(n - 1)];
    if (c <= 0.0 || g <= 0.0) zero = true;
    if (!zero) log_sum += std::log(c / g);
    out.push_back(zero ? 0.0 : bp * std::exp(log_sum / n));
  }
  return out;
}

inline constexpr double kRougeBeta = 1.2;

/// LCS F-measure per reference, best reference per candidate, corpus mean.
inline double rouge_l(const std::vector<Candidate>& cands, const ReferenceSet& refs) {
  if (cands.empty()) throw ContractError("rouge_l: no candidates");
  double total = 0.0;
  for (const auto& c : cands) {
    const auto words = tokenize(c.caption);
    double best = 0.0;
    for (const auto& r : detail::refs_for(refs, c.image_id)) {
      const auto rw = tokenize(r);
      const auto lcs = static_cast<double>(detail::lcs_length(words, rw));
      if (lcs <= 0.0) continue;
      const double p = lcs / static_cast<double>(words.size());
      const double rec = lcs / static_cast<double>(rw.size());
      const double b2 = kRougeBeta * kRougeBeta;
      best = std::max(best, (1.0 + b2) * p * rec / (rec + b2 * p));
    }
    total += best;
  }
  return total / static_cast<double>(cands.size());
}

/// Base CIDEr: TF-IDF n-gram cosine (n = 1..4) against each reference,
/// averaged over references and orders, times 10. Document frequencies come
/// from the reference sets of the evaluated images.
inline double cider(const std::vector<Candidate>& cands, const ReferenceSet& refs) {
  std::set<std::string> ids;
  for (const auto& c : cands) ids.insert(c.image_id);
  if (ids.size() < 2)
    throw ContractError("cider: needs a corpus of at least 2 images to estimate document frequency");
  constexpr int kMaxN = 4;

  std::map<detail::Ngram, int> df;
  for (const auto& id : ids) {
    std::set<detail::Ngram> seen;
    for (const auto& r : detail::refs_for(refs, id)) {
      const auto w = tokenize(r);
      for (int n = 1; n <= kMaxN; ++n)
        for (const auto& [g, k] : detail::count_ngrams(w, n)) seen.insert(g);
    }
    for (const auto& g : seen) ++df[g];
  }
  const double log_docs = std::log(static_cast<double>(ids.size()));
  auto tfidf = [&](const detail::NgramCounts& counts) {
    std::map<detail::Ngram, double> v;
    for (const auto& [g, k] : counts) {
      auto it = df.find(g);
      const double d = it == df.end() ? 1.0 : std::max(1, it->second);
      v[g] = k * (log_docs - std::log(d));
    }
    return v;
  };
  auto cosine = [](const std::map<detail::Ngram, double>& a, const std::map<detail::Ngram, double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [g, x] : a) {
      na += x * x;
      auto it = b.find(g);
      if (it != b.end()) dot += x * it->second;
    }
    for (const auto& [g, y] : b) nb += y * y;
    return na > 0.0 && nb > 0.0 ? dot / (std::sqrt(na) * std::sqrt(nb)) : 0.0;
  };

  double total = 0.0;
  for (const auto& c : cands) {
    const auto words = tokenize(c.caption);
    const auto& rs = detail::refs_for(refs, c.image_id);
    double score = 0.0;
    for (int n = 1; n <= kMaxN; ++n) {
      const auto vc = tfidf(detail::count_ngrams(words, n));
      double s = 0.0;
      for (const auto& r : rs) s += cosine(vc, tfidf(detail::count_ngrams(tokenize(r), n)));
      score += s / static_cast<double>(rs.size());
    }
    total += 10.0 * score / kMaxN;
  }
  return total / static_cast<double>(cands.size());
}

struct Diversity {
  int vocab = 0;
  double pct_novel = 0.0;
  double mean_length = 0.0;
  double pct_unique = 0.0;
};

/// Vocabulary size, share of captions absent from `train_refs`, mean length
/// and share of distinct captions. Sentences compare after tokenization.
inline Diversity diversity(const std::vector<std::string>& cands,
                           const std::vector<std::string>& train_refs) {
  if (cands.empty()) throw ContractError("diversity: no candidates");
  std::set<std::string> train;
  for (const auto& r : train_refs) train.insert(join_words(tokenize(r)));
  std::set<std::string> words, sentences;
  std::size_t tokens = 0, novel = 0;
  for (const auto& c : cands) {
    const auto w = tokenize(c);
    tokens += w.size();
    words.insert(w.begin(), w.end());
    const auto s = join_words(w);
    sentences.insert(s);
    if (!train.contains(s)) ++novel;
  }
  const double n = static_cast<double>(cands.size());
  return {static_cast<int>(words.size()), 100.0 * static_cast<double>(novel) / n,
          static_cast<double>(tokens) / n, 100.0 * static_cast<double>(sentences.size()) / n};
}

/// Mean of 100 * w * max(0, cos(image, caption)) in the joint space.
inline double clip_s(const std::vector<ImageSample>& images, const std::vector<std::string>& cands,
                     const BackendBundle& bundle, double w = 1.0) {
  if (images.size() != cands.size()) throw ContractError("clip_s: images and captions differ in count");
  if (images.empty()) throw ContractError("clip_s: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Vector a = joint_embed_image(images[i], bundle).vec;
    const Vector b = joint_embed_text(cands[i], bundle).vec;
    if (!(a.norm() > 0.0) || !(b.norm() > 0.0)) throw ContractError("clip_s: zero-norm embedding");
    total += 100.0 * w * std::max(0.0, a.dot(b) / (a.norm() * b.norm()));
  }
  return total / static_cast<double>(images.size());
}

inline MetricReport evaluate_captions(const std::vector<Candidate>& cands, const ReferenceSet& refs,
                                      const std::vector<std::string>& train_refs) {
  MetricReport m;
  m.bleu = bleu(cands, refs, 4);
  m.rouge_l = rouge_l(cands, refs);
  m.cider = cider(cands, refs);
  std::vector<std::string> texts;
  std::set<std::string> ids;
  for (const auto& c : cands) {
    texts.push_back(c.caption);
    ids.insert(c.image_id);
  }
  const auto d = diversity(texts, train_refs);
  m.vocab = d.vocab;
  m.pct_novel = d.pct_novel;
  m.mean_length = d.mean_length;
  m.pct_unique = d.pct_unique;
  m.candidates = static_cast<int>(cands.size());
  m.images = static_cast<int>(ids.size());
  return m;
}

// METEOR is not computed and therefore absent from the JSON.
inline nlohmann::json to_json(const MetricReport& m) {
  nlohmann::json j;
  for (std::size_t i = 0; i < m.bleu.size(); ++i) j["bleu" + std::to_string(i + 1)] = m.bleu[i];
  j["rouge_l"] = m.rouge_l;
  j["cider"] = m.cider;
  if (m.clip_s) j["clip_s"] = *m.clip_s;
  j["vocab"] = m.vocab;
  j["pct_novel"] = m.pct_novel;
  j["mean_length"] = m.mean_length;
  j["pct_unique"] = m.pct_unique;
  j["candidates"] = m.candidates;
  j["images"] = m.images;
  return j;
}

}  // namespace geneic
