#pragma once

// Slow reference implementations of the caption metrics, written against the
// textbook definitions: n-grams are space-joined strings, LCS is a memoised
// recursion, TF-IDF vectors are dense over the full n-gram universe.

#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

struct Item {
  std::string id;
  std::string candidate;
  std::vector<std::string> references;
};

using Corpus = std::vector<Item>;

inline std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 128 && !std::isalnum(c)) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline std::map<std::string, int> grams(const std::vector<std::string>& w, int n) {
  std::map<std::string, int> out;
  for (int i = 0; i + n <= static_cast<int>(w.size()); ++i) {
    std::string g;
    for (int k = 0; k < n; ++k) g += (k ? " " : "") + w[static_cast<std::size_t>(i + k)];
    out[g] += 1;
  }
  return out;
}

inline std::vector<double> bleu(const Corpus& c, int max_n = 4) {
  std::vector<double> out;
  for (int upto = 1; upto <= max_n; ++upto) {
    double log_p = 0.0;
    bool zero = false;
    double clen = 0.0, rlen = 0.0;
    for (int n = 1; n <= upto; ++n) {
      double hit = 0.0, tot = 0.0;
      for (const auto& it : c) {
        const auto cw = words(it.candidate);
        for (const auto& [g, k] : grams(cw, n)) {
          int best = 0;
          for (const auto& r : it.references) {
            const auto rg = grams(words(r), n);
            const auto f = rg.find(g);
            if (f != rg.end() && f->second > best) best = f->second;
          }
          hit += std::min(k, best);
          tot += k;
        }
      }
      if (hit == 0.0) zero = true;
      else log_p += std::log(hit / tot) / upto;
    }
    for (const auto& it : c) {
      const double len = static_cast<double>(words(it.candidate).size());
      clen += len;
      double pick = -1.0;
      for (const auto& r : it.references) {
        const double rl = static_cast<double>(words(r).size());
        if (pick < 0 || std::abs(rl - len) < std::abs(pick - len) ||
            (std::abs(rl - len) == std::abs(pick - len) && rl < pick))
          pick = rl;
      }
      rlen += pick;
    }
    const double bp = clen >= rlen ? 1.0 : (clen == 0 ? 0.0 : std::exp(1.0 - rlen / clen));
    out.push_back(zero ? 0.0 : bp * std::exp(log_p));
  }
  return out;
}

inline int lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::map<std::pair<std::size_t, std::size_t>, int> memo;
  std::function<int(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> int {
    if (i == a.size() || j == b.size()) return 0;
    const auto key = std::make_pair(i, j);
    if (auto f = memo.find(key); f != memo.end()) return f->second;
    const int v = a[i] == b[j] ? 1 + go(i + 1, j + 1) : std::max(go(i + 1, j), go(i, j + 1));
    memo[key] = v;
    return v;
  };
  return go(0, 0);
}

inline double rouge_l(const Corpus& c, double beta = 1.2) {
  double sum = 0.0;
  for (const auto& it : c) {
    const auto cw = words(it.candidate);
    double best = 0.0;
    for (const auto& r : it.references) {
      const auto rw = words(r);
      const double l = lcs(cw, rw);
      if (l == 0) continue;
      const double p = l / cw.size(), rc = l / rw.size();
      best = std::max(best, (1 + beta * beta) * p * rc / (rc + beta * beta * p));
    }
    sum += best;
  }
  return sum / c.size();
}

inline double cider(const Corpus& c) {
  const double docs = static_cast<double>(c.size());
  double total = 0.0;
  for (const auto& it : c) {
    double per_n = 0.0;
    for (int n = 1; n <= 4; ++n) {
      std::set<std::string> universe;
      std::map<std::string, int> df;
      for (const auto& other : c) {
        std::set<std::string> seen;
        for (const auto& r : other.references)
          for (const auto& [g, k] : grams(words(r), n)) seen.insert(g);
        for (const auto& g : seen) {
          df[g] += 1;
          universe.insert(g);
        }
      }
      for (const auto& [g, k] : grams(words(it.candidate), n)) universe.insert(g);
      auto vec = [&](const std::string& s) {
        const auto gs = grams(words(s), n);
        std::vector<double> v;
        for (const auto& g : universe) {
          const auto f = gs.find(g);
          const double tf = f == gs.end() ? 0.0 : f->second;
          const double d = df.count(g) ? df[g] : 0.0;
          v.push_back(tf * (std::log(docs) - std::log(std::max(1.0, d))));
        }
        return v;
      };
      const auto cv = vec(it.candidate);
      double avg = 0.0;
      for (const auto& r : it.references) {
        const auto rv = vec(r);
        double dot = 0, a = 0, b = 0;
        for (std::size_t k = 0; k < cv.size(); ++k) {
          dot += cv[k] * rv[k];
          a += cv[k] * cv[k];
          b += rv[k] * rv[k];
        }
        avg += (a > 0 && b > 0) ? dot / std::sqrt(a * b) : 0.0;
      }
      per_n += avg / it.references.size();
    }
    total += 10.0 * per_n / 4.0;
  }
  return total / c.size();
}

// Five fixed mini-corpora covering partial overlap, repeats, length mismatch,
// punctuation and an empty candidate.
inline std::vector<Corpus> frozen_corpora() {
  return {
      {{"1", "a small red bird on a branch", {"a red bird sits on a branch", "small bird with red wings"}},
       {"2", "a yellow flower with petals", {"yellow petals of a flower", "a flower with yellow petals"}},
       {"3", "a bird", {"a blue bird in the sky", "bird flying"}}},
      {{"a", "the the the", {"the cat", "a cat on the mat"}},
       {"b", "a cat on a mat", {"the cat is on the mat"}}},
      {{"x", "A Red, Bird!", {"a red bird.", "red bird"}},
       {"y", "green leaf on water", {"a green leaf floating on the water"}},
       {"z", "white tail and black beak", {"a bird with a white tail", "black beak, white tail"}},
       {"w", "sky", {"blue sky", "the sky"}}},
      {{"p", "a photo of a bird with wings", {"a photo of a bird", "bird with large wings"}},
       {"q", "a photo of a flower with petals", {"a photo of a flower", "flower petals"}},
       {"r", "a photo of a branch", {"a branch of a tree"}},
       {"s", "a photo of water", {"water under a blue sky"}},
       {"t", "", {"nothing here"}}},
      {{"m", "small yellow bird small yellow bird", {"a small yellow bird", "yellow bird small"}},
       {"n", "large white flower", {"a large white flower", "white flower large petals"}}},
  };
}

}  // namespace oracle
