#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geneic/backend.hpp"

namespace geneic {

/// Shapes of the toy backend.
struct DimSpec {
  int vocab = 16;
  int d_dec = 8;
  int d_joint = 8;
  int slots = 2;  // q
  int grid_rows = 4;  // l
  int grid_cols = 4;  // w
  int grid_channels = 8;  // c
  int max_len = 5;
  int image_height = 8;
  int image_width = 8;
  int image_channels = 1;

  int patch_height() const { return image_height / grid_rows; }
  int patch_width() const { return image_width / grid_cols; }
  int patch_size() const { return patch_height() * patch_width() * image_channels; }
  int image_size() const { return image_height * image_width * image_channels; }

  void validate() const {
    for (int v : {vocab, d_dec, d_joint, slots, grid_rows, grid_cols, grid_channels, max_len,
                  image_height, image_width, image_channels})
      if (v <= 0) throw ContractError("DimSpec: all dimensions must be positive");
    if (vocab < 4) throw ContractError("DimSpec: vocabulary needs eos plus >= 3 content tokens");
    if (image_height % grid_rows != 0 || image_width % grid_cols != 0)
      throw ContractError("DimSpec: image size must be a multiple of the latent grid");
    if (grid_channels < patch_size())
      throw ContractError("DimSpec: latent channels must be >= patch size for an orthogonal map");
  }
};

inline std::vector<std::string> default_toy_words(int vocab) {
  static const std::vector<std::string> kWords = {
      "<eos>", "a",     "photo", "of",   "bird",  "flower", "red",   "blue",
      "yellow", "small", "large", "with", "wings", "petals", "on",   "branch",
      "green", "white", "black", "leaf", "beak",  "tail",   "water", "sky"};
  std::vector<std::string> words;
  for (int i = 0; i < vocab; ++i)
    words.push_back(i < static_cast<int>(kWords.size()) ? kWords[static_cast<std::size_t>(i)]
                                                         : "tok" + std::to_string(i));
  return words;
}

namespace detail {

inline Matrix gaussian(SplitMix64& g, int rows, int cols, double scale) {
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = scale * g.normal();
  round_to_f32(m);
  return m;
}

inline Vector gaussian(SplitMix64& g, int n, double scale) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = scale * g.normal();
  round_to_f32(v);
  return v;
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// Linear visual encoder: flattened image -> q slots of width d_dec.
class ToyEncoder final : public VisualEncoder {
 public:
  struct Params {
    int height, width, channels, slots, d_dec;
    Matrix weight;  // (q*d_dec) x (H*W*C)
    Vector bias;    // q*d_dec
  };

  explicit ToyEncoder(Params p) : p_(std::move(p)) {}

  int image_height() const override { return p_.height; }
  int image_width() const override { return p_.width; }
  int image_channels() const override { return p_.channels; }
  int slots() const override { return p_.slots; }
  int width() const override { return p_.d_dec; }
  const Params& params() const { return p_; }

  VisualEmbedding encode(const ImageSample& image) const override {
    const Vector flat = p_.weight * image.flat() + p_.bias;
    VisualEmbedding e{Matrix(p_.slots, p_.d_dec)};
    for (int s = 0; s < p_.slots; ++s)
      for (int j = 0; j < p_.d_dec; ++j) e.tokens(s, j) = flat(s * p_.d_dec + j);
    return e;
  }

  void collect_parameters(std::vector<ParameterBlock>& out) const override {
    out.push_back(to_block("encoder.weight", p_.weight));
    out.push_back(to_block("encoder.bias", p_.bias));
  }

 private:
  Params p_;
};

/// Single-layer attention decoder with tied input/output embeddings.
///
/// Step t reads the embedding e of the previous token (zero at t = 0):
///   query  = q0 + Wq e
///   alpha  = softmax_s(slot_s . query)
///   ctx    = sum_s alpha_s slot_s
///   h      = tanh(Wctx ctx + Wtok e + bh)
///   logits = E h + b_out
/// End-of-sequence is not allowed as the first token, so captions are never
/// empty.
class ToyDecoder final : public LanguageDecoder {
 public:
  struct Params {
    Vocabulary vocab;
    Matrix embed;      // V x d
    Vector out_bias;   // V
    Matrix w_ctx;      // d x d
    Matrix w_tok;      // d x d
    Vector b_hidden;   // d
    Vector q0;         // d
    Matrix w_query;    // d x d
  };

  explicit ToyDecoder(Params p) : p_(std::move(p)) {}

  const Vocabulary& vocabulary() const override { return p_.vocab; }
  int width() const override { return static_cast<int>(p_.embed.cols()); }
  const Matrix& token_embeddings() const override { return p_.embed; }
  const Params& params() const { return p_; }

  Vector step_logits(const Matrix& slots, std::span<const int> prefix) const override {
    return forward(slots, prefix.empty() ? -1 : prefix.back(), prefix.size()).logits;
  }

  double sequence_logprob(const Matrix& slots, std::span<const int> tokens,
                          Matrix* grad) const override {
    if (grad) *grad = Matrix::Zero(slots.rows(), slots.cols());
    double total = 0.0;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const int tok = tokens[t];
      const Step st = forward(slots, t == 0 ? -1 : tokens[t - 1], t);
      const Vector logp = log_softmax(st.logits);
      if (!std::isfinite(logp(tok)))
        throw ContractError("token " + std::to_string(tok) + " is not allowed at step " +
                            std::to_string(t));
      total += logp(tok);
      if (!grad) continue;
      Vector d_logits = -logp.array().exp().matrix();
      d_logits(tok) += 1.0;
      const Vector g_h = p_.embed.transpose() * d_logits;
      const Vector g_a = (1.0 - st.hidden.array().square()).matrix().cwiseProduct(g_h);
      const Vector g_ctx = p_.w_ctx.transpose() * g_a;
      const double ctx_dot = st.ctx.dot(g_ctx);
      for (Eigen::Index s = 0; s < slots.rows(); ++s) {
        const double a = st.alpha(s);
        const double dz = a * (slots.row(s).dot(g_ctx) - ctx_dot);
        grad->row(s) += a * g_ctx.transpose() + dz * st.query.transpose();
      }
    }
    return total;
  }

  void collect_parameters(std::vector<ParameterBlock>& out) const override {
    for (int i = 0; i < p_.vocab.size(); ++i)
      out.push_back({"vocab/" + p_.vocab.word(i), {1}, {static_cast<float>(i)}});
    out.push_back(to_block("decoder.embed", p_.embed));
    out.push_back(to_block("decoder.out_bias", p_.out_bias));
    out.push_back(to_block("decoder.w_ctx", p_.w_ctx));
    out.push_back(to_block("decoder.w_tok", p_.w_tok));
    out.push_back(to_block("decoder.b_hidden", p_.b_hidden));
    out.push_back(to_block("decoder.q0", p_.q0));
    out.push_back(to_block("decoder.w_query", p_.w_query));
  }

 private:
  struct Step {
    Vector query, alpha, ctx, hidden, logits;
  };

  Step forward(const Matrix& slots, int prev, std::size_t t) const {
    Step st;
    const Vector e = prev < 0 ? Vector::Zero(width()) : Vector(p_.embed.row(prev).transpose());
    st.query = p_.q0 + p_.w_query * e;
    const Vector scores = slots * st.query;
    st.alpha = softmax(scores);
    st.ctx = slots.transpose() * st.alpha;
    st.hidden = (p_.w_ctx * st.ctx + p_.w_tok * e + p_.b_hidden).array().tanh();
    st.logits = p_.embed * st.hidden + p_.out_bias;
    if (t == 0) st.logits(Vocabulary::kEos) = -std::numeric_limits<double>::infinity();
    return st;
  }

  Params p_;
};

/// Linear image and bag-of-words text embedders into a shared space.
class ToyScorer final : public JointScorer {
 public:
  struct Params {
    Vocabulary vocab;
    Matrix w_image;   // d_j x (H*W*C)
    Vector b_image;   // d_j
    Matrix words;     // V x d_j
    Matrix oov;       // K x d_j, rows picked by a hash of unknown words
    Vector b_text;    // d_j
  };

  explicit ToyScorer(Params p) : p_(std::move(p)) {}

  int dim() const override { return static_cast<int>(p_.b_image.size()); }
  const Params& params() const { return p_; }

  Vector embed_image(const ImageSample& image) const override {
    if (image.size() != static_cast<std::size_t>(p_.w_image.cols()))
      throw ShapeError("scorer: image size mismatch");
    return p_.w_image * image.flat() + p_.b_image;
  }

  Vector embed_text(std::string_view text) const override {
    const auto words = tokenize(text);
    if (words.empty()) throw ContractError("scorer: empty text");
    Vector acc = Vector::Zero(dim());
    for (const auto& w : words) {
      const int id = p_.vocab.find(w);
      if (id >= 0)
        acc += p_.words.row(id).transpose();
      else
        acc += p_.oov.row(static_cast<Eigen::Index>(detail::fnv1a(w) %
                                                    static_cast<std::uint64_t>(p_.oov.rows())))
                   .transpose();
    }
    return acc / static_cast<double>(words.size()) + p_.b_text;
  }

  void collect_parameters(std::vector<ParameterBlock>& out) const override {
    out.push_back(to_block("scorer.w_image", p_.w_image));
    out.push_back(to_block("scorer.b_image", p_.b_image));
    out.push_back(to_block("scorer.words", p_.words));
    out.push_back(to_block("scorer.oov", p_.oov));
    out.push_back(to_block("scorer.b_text", p_.b_text));
  }

 private:
  Params p_;
};

/// Patchwise orthogonal autoencoder. Each l x w grid cell sees one image
/// patch; the patch vector p maps to the c channels of that cell as Q p + b,
/// Q having orthonormal columns, and decoding applies the exact left inverse.
class ToyAutoencoder final : public LatentAutoencoder {
 public:
  struct Params {
    int height, width, channels;    // image
    int rows, cols;                 // grid l x w
    Matrix basis;                   // c x P, orthonormal columns
    Vector bias;                    // c
  };

  explicit ToyAutoencoder(Params p) : p_(std::move(p)) {
    const Matrix gram = p_.basis.transpose() * p_.basis;
    left_inverse_ = gram.ldlt().solve(p_.basis.transpose());
  }

  int grid_rows() const override { return p_.rows; }
  int grid_cols() const override { return p_.cols; }
  int grid_channels() const override { return static_cast<int>(p_.basis.rows()); }
  const Params& params() const { return p_; }

  FeatureMapSet encode(const ImageSample& image) const override {
    FeatureMapSet f(p_.rows, p_.cols, grid_channels());
    Vector patch(p_.basis.cols());
    for (int u = 0; u < p_.rows; ++u)
      for (int v = 0; v < p_.cols; ++v) {
        gather(image, u, v, patch);
        const Vector cell = p_.basis * patch + p_.bias;
        for (int k = 0; k < f.channels; ++k) f.at(u, v, k) = cell(k);
      }
    return f;
  }

  ImageSample decode(const FeatureMapSet& fmap) const override {
    ImageSample img("", p_.height, p_.width, p_.channels);
    const int ph = p_.height / p_.rows, pw = p_.width / p_.cols;
    Vector cell(fmap.channels);
    for (int u = 0; u < p_.rows; ++u)
      for (int v = 0; v < p_.cols; ++v) {
        for (int k = 0; k < fmap.channels; ++k) cell(k) = fmap.at(u, v, k) - p_.bias(k);
        const Vector patch = left_inverse_ * cell;
        Eigen::Index i = 0;
        for (int dy = 0; dy < ph; ++dy)
          for (int dx = 0; dx < pw; ++dx)
            for (int ch = 0; ch < p_.channels; ++ch)
              img.at(u * ph + dy, v * pw + dx, ch) = std::clamp(patch(i++), 0.0, 1.0);
      }
    return img;
  }

  void collect_parameters(std::vector<ParameterBlock>& out) const override {
    out.push_back(to_block("autoencoder.basis", p_.basis));
    out.push_back(to_block("autoencoder.bias", p_.bias));
  }

 private:
  void gather(const ImageSample& image, int u, int v, Vector& patch) const {
    const int ph = p_.height / p_.rows, pw = p_.width / p_.cols;
    Eigen::Index i = 0;
    for (int dy = 0; dy < ph; ++dy)
      for (int dx = 0; dx < pw; ++dx)
        for (int ch = 0; ch < p_.channels; ++ch) patch(i++) = image.at(u * ph + dy, v * pw + dx, ch);
  }

  Params p_;
  Matrix left_inverse_;
};

// Orthonormal columns by modified Gram-Schmidt over Gaussian draws.
inline Matrix random_orthonormal_columns(SplitMix64& g, int rows, int cols) {
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = g.normal();
  for (int c = 0; c < cols; ++c) {
    for (int prev = 0; prev < c; ++prev) m.col(c) -= m.col(prev).dot(m.col(c)) * m.col(prev);
    m.col(c).normalize();
  }
  return m;
}

inline BackendBundle make_bundle(std::string kind, std::shared_ptr<const VisualEncoder> enc,
                                 std::shared_ptr<const LanguageDecoder> dec,
                                 std::shared_ptr<const JointScorer> scorer,
                                 std::shared_ptr<const LatentAutoencoder> ae, int max_len,
                                 std::vector<ParameterBlock> meta = {}) {
  BackendBundle b{std::move(kind), std::move(enc), std::move(dec), std::move(scorer),
                  std::move(ae), max_len, std::move(meta)};
  b.validate();
  return b;
}

inline ParameterBlock dims_block(const DimSpec& d) {
  return {"toy.dims",
          {11},
          {static_cast<float>(d.vocab), static_cast<float>(d.d_dec), static_cast<float>(d.d_joint),
           static_cast<float>(d.slots), static_cast<float>(d.grid_rows),
           static_cast<float>(d.grid_cols), static_cast<float>(d.grid_channels),
           static_cast<float>(d.max_len), static_cast<float>(d.image_height),
           static_cast<float>(d.image_width), static_cast<float>(d.image_channels)}};
}

/// Deterministic toy backend for `seed`. All parameters are float32-exact.
inline BackendBundle build_toy_backend(std::uint64_t seed, const DimSpec& dims = {},
                                       std::optional<std::vector<std::string>> words = {}) {
  dims.validate();
  Vocabulary vocab(words ? *words : default_toy_words(dims.vocab));
  if (vocab.size() != dims.vocab) throw ContractError("vocabulary size does not match DimSpec");
  const SplitMix64 root(seed);
  const int n_pix = dims.image_size();
  const double pix_scale = 1.0 / std::sqrt(static_cast<double>(n_pix));
  const double d_scale = 1.0 / std::sqrt(static_cast<double>(dims.d_dec));

  auto g_enc = root.split(1);
  ToyEncoder::Params ep{dims.image_height, dims.image_width, dims.image_channels, dims.slots,
                        dims.d_dec,
                        detail::gaussian(g_enc, dims.slots * dims.d_dec, n_pix, 2.0 * pix_scale),
                        detail::gaussian(g_enc, dims.slots * dims.d_dec, 0.1)};

  auto g_dec = root.split(2);
  ToyDecoder::Params dp;
  dp.vocab = vocab;
  dp.embed = detail::gaussian(g_dec, dims.vocab, dims.d_dec, 1.0);
  dp.out_bias = detail::gaussian(g_dec, dims.vocab, 0.1);
  dp.w_ctx = detail::gaussian(g_dec, dims.d_dec, dims.d_dec, 2.0 * d_scale);
  dp.w_tok = detail::gaussian(g_dec, dims.d_dec, dims.d_dec, d_scale);
  dp.b_hidden = detail::gaussian(g_dec, dims.d_dec, 0.1);
  dp.q0 = detail::gaussian(g_dec, dims.d_dec, d_scale);
  dp.w_query = detail::gaussian(g_dec, dims.d_dec, dims.d_dec, d_scale);

  auto g_sc = root.split(3);
  ToyScorer::Params sp;
  sp.vocab = vocab;
  sp.w_image = detail::gaussian(g_sc, dims.d_joint, n_pix, pix_scale);
  sp.b_image = detail::gaussian(g_sc, dims.d_joint, 0.1);
  sp.words = detail::gaussian(g_sc, dims.vocab, dims.d_joint, 1.0);
  sp.oov = detail::gaussian(g_sc, 32, dims.d_joint, 1.0);
  sp.b_text = detail::gaussian(g_sc, dims.d_joint, 0.1);

  auto g_ae = root.split(4);
  Matrix basis = random_orthonormal_columns(g_ae, dims.grid_channels, dims.patch_size());
  round_to_f32(basis);
  ToyAutoencoder::Params ap{dims.image_height, dims.image_width, dims.image_channels,
                            dims.grid_rows, dims.grid_cols, basis,
                            detail::gaussian(g_ae, dims.grid_channels, 0.01)};

  return make_bundle("toy", std::make_shared<ToyEncoder>(std::move(ep)),
                     std::make_shared<ToyDecoder>(std::move(dp)),
                     std::make_shared<ToyScorer>(std::move(sp)),
                     std::make_shared<ToyAutoencoder>(std::move(ap)), dims.max_len,
                     {dims_block(dims)});
}

/// Restores a toy bundle from its GICB blob.
inline BackendBundle load_toy_backend(std::span<const std::uint8_t> blob) {
  const auto blocks = deserialize_blocks(blob);
  std::map<std::string, const ParameterBlock*> by_name;
  std::vector<std::pair<int, std::string>> vocab_entries;
  for (const auto& b : blocks) {
    if (b.name.rfind("vocab/", 0) == 0 && b.values.size() == 1)
      vocab_entries.emplace_back(static_cast<int>(b.values[0]), b.name.substr(6));
    else
      by_name[b.name] = &b;
  }
  auto get = [&](const std::string& n) -> const ParameterBlock& {
    auto it = by_name.find(n);
    if (it == by_name.end()) throw FormatError("GICB blob: missing block '" + n + "'", 0);
    return *it->second;
  };
  const auto& db = get("toy.dims");
  if (db.values.size() != 11) throw FormatError("GICB blob: malformed toy.dims", 0);
  DimSpec d;
  d.vocab = static_cast<int>(db.values[0]);
  d.d_dec = static_cast<int>(db.values[1]);
  d.d_joint = static_cast<int>(db.values[2]);
  d.slots = static_cast<int>(db.values[3]);
  d.grid_rows = static_cast<int>(db.values[4]);
  d.grid_cols = static_cast<int>(db.values[5]);
  d.grid_channels = static_cast<int>(db.values[6]);
  d.max_len = static_cast<int>(db.values[7]);
  d.image_height = static_cast<int>(db.values[8]);
  d.image_width = static_cast<int>(db.values[9]);
  d.image_channels = static_cast<int>(db.values[10]);
  d.validate();

  std::sort(vocab_entries.begin(), vocab_entries.end());
  std::vector<std::string> words;
  for (int i = 0; i < static_cast<int>(vocab_entries.size()); ++i) {
    if (vocab_entries[static_cast<std::size_t>(i)].first != i)
      throw FormatError("GICB blob: vocabulary ids are not contiguous", 0);
    words.push_back(vocab_entries[static_cast<std::size_t>(i)].second);
  }
  Vocabulary vocab(words);

  ToyEncoder::Params ep{d.image_height, d.image_width, d.image_channels, d.slots, d.d_dec,
                        block_matrix(get("encoder.weight")), block_vector(get("encoder.bias"))};
  ToyDecoder::Params dp{vocab,
                        block_matrix(get("decoder.embed")),
                        block_vector(get("decoder.out_bias")),
                        block_matrix(get("decoder.w_ctx")),
                        block_matrix(get("decoder.w_tok")),
                        block_vector(get("decoder.b_hidden")),
                        block_vector(get("decoder.q0")),
                        block_matrix(get("decoder.w_query"))};
  ToyScorer::Params sp{vocab,
                       block_matrix(get("scorer.w_image")),
                       block_vector(get("scorer.b_image")),
                       block_matrix(get("scorer.words")),
                       block_matrix(get("scorer.oov")),
                       block_vector(get("scorer.b_text"))};
  ToyAutoencoder::Params ap{d.image_height, d.image_width, d.image_channels, d.grid_rows,
                            d.grid_cols, block_matrix(get("autoencoder.basis")),
                            block_vector(get("autoencoder.bias"))};
  return make_bundle("toy", std::make_shared<ToyEncoder>(std::move(ep)),
                     std::make_shared<ToyDecoder>(std::move(dp)),
                     std::make_shared<ToyScorer>(std::move(sp)),
                     std::make_shared<ToyAutoencoder>(std::move(ap)), d.max_len,
                     {dims_block(d)});
}

}  // namespace geneic
