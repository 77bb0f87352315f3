#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "geneic/backend.hpp"
#include "geneic/binary_io.hpp"
#include "geneic/rng.hpp"

namespace geneic {

/// Unit-normalized joint-space embeddings of a target-domain corpus.
struct CorpusIndex {
  std::vector<std::string> ids;
  Matrix embeddings;  // N x d_j, unit rows

  int size() const { return static_cast<int>(ids.size()); }
};

struct ClusterAssignment {
  std::vector<int> labels;
  Matrix centroids;  // k x d_j
  int k = 0;
  int iterations = 0;
  // Within-cluster sum of squares after each Lloyd iteration.
  std::vector<double> objective;

  std::vector<int> sizes() const {
    std::vector<int> s(static_cast<std::size_t>(k), 0);
    for (int l : labels) ++s[static_cast<std::size_t>(l)];
    return s;
  }
};

struct PairBatch {
  std::vector<std::pair<int, int>> pairs;  // (original, partner)
  int batch_size = 0;
};

inline CorpusIndex embed_corpus(const std::vector<ImageSample>& images,
                                const BackendBundle& bundle) {
  if (images.empty()) throw ContractError("embed_corpus: empty corpus");
  std::set<std::string> seen;
  CorpusIndex index;
  index.embeddings.resize(static_cast<Eigen::Index>(images.size()), bundle.d_joint());
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!seen.insert(images[i].id).second)
      throw ContractError("embed_corpus: duplicate image id '" + images[i].id + "'");
    index.ids.push_back(images[i].id);
    index.embeddings.row(static_cast<Eigen::Index>(i)) =
        normalize(joint_embed_image(images[i], bundle)).vec.transpose();
  }
  return index;
}

inline int default_cluster_count(int n) { return std::min(n, std::max(2, n / 50)); }

namespace detail {

inline double sq_dist(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

// Nearest centroid, ties to the lower cluster id.
inline int nearest_centroid(const Matrix& x, Eigen::Index i, const Matrix& c) {
  int best = 0;
  double best_d = sq_dist(x, i, c, 0);
  for (Eigen::Index j = 1; j < c.rows(); ++j) {
    const double d = sq_dist(x, i, c, j);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(j);
    }
  }
  return best;
}

inline Matrix kmeanspp_seed(const Matrix& x, int k, SplitMix64& rng) {
  const auto n = x.rows();
  Matrix c(k, x.cols());
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  auto first = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
  c.row(0) = x.row(first);
  chosen[static_cast<std::size_t>(first)] = true;
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = sq_dist(x, i, c, 0);
  for (int j = 1; j < k; ++j) {
    double total = 0.0;
    for (double d : d2) total += d;
    Eigen::Index pick = -1;
    if (total > 0.0) {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = d2[static_cast<std::size_t>(i)];
        if (d <= 0.0) continue;
        acc += d;
        pick = i;
        if (u < acc) break;
      }
    } else {
      // Every point coincides with a centre: take the first unused index.
      for (Eigen::Index i = 0; i < n && pick < 0; ++i)
        if (!chosen[static_cast<std::size_t>(i)]) pick = i;
    }
    c.row(j) = x.row(pick);
    chosen[static_cast<std::size_t>(pick)] = true;
    for (Eigen::Index i = 0; i < n; ++i)
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], sq_dist(x, i, c, j));
  }
  return c;
}

inline double wcss(const Matrix& x, const std::vector<int>& labels, const Matrix& c) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    s += sq_dist(x, i, c, labels[static_cast<std::size_t>(i)]);
  return s;
}

}  // namespace detail

/// k-means with k-means++ seeding. Lloyd iterations run until the labels stop
/// changing or `max_iter` is reached. An empty cluster takes the point of the
/// largest cluster that lies farthest from that cluster's centroid.
inline ClusterAssignment cluster_corpus(const CorpusIndex& index, int k, std::uint64_t seed,
                                        int max_iter = 100) {
  const Matrix& x = index.embeddings;
  const int n = static_cast<int>(x.rows());
  if (k < 1 || k > n)
    throw ContractError("cluster_corpus: need 1 <= k <= N (k=" + std::to_string(k) +
                        ", N=" + std::to_string(n) + ")");
  SplitMix64 rng(seed);
  ClusterAssignment out;
  out.k = k;
  out.centroids = detail::kmeanspp_seed(x, k, rng);
  out.labels.assign(static_cast<std::size_t>(n), -1);

  for (int it = 0; it < std::max(1, max_iter); ++it) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      const int l = detail::nearest_centroid(x, i, out.centroids);
      if (l != out.labels[static_cast<std::size_t>(i)]) {
        out.labels[static_cast<std::size_t>(i)] = l;
        changed = true;
      }
    }

    for (;;) {
      auto sizes = out.sizes();
      const auto empty = std::find(sizes.begin(), sizes.end(), 0);
      if (empty == sizes.end()) break;
      const int largest = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
      int far = -1;
      double far_d = -1.0;
      for (int i = 0; i < n; ++i) {
        if (out.labels[static_cast<std::size_t>(i)] != largest) continue;
        const double d = detail::sq_dist(x, i, out.centroids, largest);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      const int target = static_cast<int>(empty - sizes.begin());
      out.labels[static_cast<std::size_t>(far)] = target;
      out.centroids.row(target) = x.row(far);
      changed = true;
    }

    Matrix sums = Matrix::Zero(k, x.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int i = 0; i < n; ++i) {
      sums.row(out.labels[static_cast<std::size_t>(i)]) += x.row(i);
      ++counts[static_cast<std::size_t>(out.labels[static_cast<std::size_t>(i)])];
    }
    for (int j = 0; j < k; ++j) out.centroids.row(j) = sums.row(j) / counts[static_cast<std::size_t>(j)];

    out.objective.push_back(detail::wcss(x, out.labels, out.centroids));
    out.iterations = it + 1;
    if (!changed) break;
  }
  return out;
}

/// Most similar other member of i's cluster (cosine on unit rows; ties to the
/// lowest index). Throws NoPartnerError for a singleton cluster.
inline int select_partner(int i, const ClusterAssignment& assignment, const CorpusIndex& index) {
  if (i < 0 || i >= index.size()) throw ContractError("select_partner: index out of range");
  const int label = assignment.labels[static_cast<std::size_t>(i)];
  int best = -1;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < index.size(); ++j) {
    if (j == i || assignment.labels[static_cast<std::size_t>(j)] != label) continue;
    const double sim = index.embeddings.row(i).dot(index.embeddings.row(j));
    if (sim > best_sim) {
      best_sim = sim;
      best = j;
    }
  }
  if (best < 0)
    throw NoPartnerError("image '" + index.ids[static_cast<std::size_t>(i)] +
                         "' is alone in its cluster");
  return best;
}

// Global nearest neighbour excluding i itself.
inline int nearest_neighbor(int i, const CorpusIndex& index) {
  int best = -1;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < index.size(); ++j) {
    if (j == i) continue;
    const double sim = index.embeddings.row(i).dot(index.embeddings.row(j));
    if (sim > best_sim) {
      best_sim = sim;
      best = j;
    }
  }
  if (best < 0) throw NoPartnerError("corpus has a single image; no partner exists");
  return best;
}

inline int partner_or_nearest(int i, const ClusterAssignment& assignment, const CorpusIndex& index) {
  try {
    return select_partner(i, assignment, index);
  } catch (const NoPartnerError&) {
    return nearest_neighbor(i, index);
  }
}

/// One epoch of (original, partner) pairs: every image is an original exactly
/// once, order shuffled by `seed`, last batch possibly short.
inline std::vector<PairBatch> build_pair_batches(const ClusterAssignment& assignment,
                                                 const CorpusIndex& index, int batch_size,
                                                 std::uint64_t seed) {
  if (batch_size < 1) throw ContractError("build_pair_batches: batch_size must be >= 1");
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < index.size(); ++i) pairs.emplace_back(i, partner_or_nearest(i, assignment, index));
  SplitMix64 rng(seed);
  rng.shuffle(pairs);
  std::vector<PairBatch> batches;
  for (std::size_t s = 0; s < pairs.size(); s += static_cast<std::size_t>(batch_size)) {
    PairBatch b;
    b.batch_size = batch_size;
    const auto e = std::min(pairs.size(), s + static_cast<std::size_t>(batch_size));
    b.pairs.assign(pairs.begin() + static_cast<std::ptrdiff_t>(s),
                   pairs.begin() + static_cast<std::ptrdiff_t>(e));
    batches.push_back(std::move(b));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Persistence: JSON manifest + raw float32 little-endian row-major matrix.
// ---------------------------------------------------------------------------

inline void save_corpus_index(const CorpusIndex& index, const std::filesystem::path& manifest,
                              const std::filesystem::path& embeddings,
                              const nlohmann::json& extra = nlohmann::json::object()) {
  ByteWriter w;
  for (Eigen::Index r = 0; r < index.embeddings.rows(); ++r)
    for (Eigen::Index c = 0; c < index.embeddings.cols(); ++c)
      w.f32(static_cast<float>(index.embeddings(r, c)));
  write_file_atomic(embeddings, w.bytes());
  nlohmann::json j;
  j["ids"] = index.ids;
  j["count"] = index.size();
  j["dim"] = index.embeddings.cols();
  j["embeddings"] = embeddings.filename().string();
  j["dtype"] = "float32-le";
  j["layout"] = "row-major";
  for (const auto& [k, v] : extra.items()) j[k] = v;
  write_file_atomic(manifest, j.dump(2) + "\n");
}

inline CorpusIndex load_corpus_index(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw Error("cannot open " + manifest.string());
  const auto j = nlohmann::json::parse(in);
  CorpusIndex index;
  index.ids = j.at("ids").get<std::vector<std::string>>();
  const int n = j.at("count").get<int>();
  const int d = j.at("dim").get<int>();
  if (n != index.size()) throw FormatError("corpus manifest: count does not match ids", 0);
  const auto bytes = read_file_bytes(manifest.parent_path() / j.at("embeddings").get<std::string>());
  ByteReader r(bytes, "embedding file");
  index.embeddings.resize(n, d);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) index.embeddings(i, c) = r.f32();
  r.expect_end();
  return index;
}

// Rounds embeddings to float32, matching what a saved index reloads as.
inline void quantize_to_f32(CorpusIndex& index) { round_to_f32(index.embeddings); }

}  // namespace geneic
