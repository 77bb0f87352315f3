#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "geneic/binary_io.hpp"
#include "geneic/errors.hpp"
#include "geneic/rng.hpp"
#include "geneic/sha256.hpp"
#include "geneic/text.hpp"
#include "geneic/types.hpp"

namespace geneic {

// ---------------------------------------------------------------------------
// Parameters and the GICB blob
// ---------------------------------------------------------------------------

/// A named, shaped block of frozen backend parameters. Values are stored in
/// float32 because that is the on-disk precision; backends keep their
/// parameters float-representable so the blob fully determines them.
struct ParameterBlock {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

inline ParameterBlock to_block(std::string name, const Matrix& m) {
  ParameterBlock b{std::move(name),
                   {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())},
                   {}};
  b.values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) b.values.push_back(static_cast<float>(m(r, c)));
  return b;
}

inline ParameterBlock to_block(std::string name, const Vector& v) {
  ParameterBlock b{std::move(name), {static_cast<std::uint32_t>(v.size())}, {}};
  for (Eigen::Index i = 0; i < v.size(); ++i) b.values.push_back(static_cast<float>(v(i)));
  return b;
}

inline Matrix block_matrix(const ParameterBlock& b) {
  if (b.dims.size() != 2) throw ContractError("parameter block '" + b.name + "' is not rank 2");
  Matrix m(b.dims[0], b.dims[1]);
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = b.values[i++];
  return m;
}

inline Vector block_vector(const ParameterBlock& b) {
  if (b.dims.size() != 1) throw ContractError("parameter block '" + b.name + "' is not rank 1");
  Vector v(b.dims[0]);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = b.values[static_cast<std::size_t>(i)];
  return v;
}

// Rounds every entry to the nearest float so the value survives the blob.
inline void round_to_f32(Matrix& m) {
  m = m.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
}
inline void round_to_f32(Vector& v) {
  v = v.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
}

inline constexpr std::uint32_t kBlobVersion = 1;

inline std::vector<std::uint8_t> serialize_blocks(const std::vector<ParameterBlock>& blocks) {
  ByteWriter w;
  w.magic("GICB");
  w.u32(kBlobVersion);
  for (const auto& b : blocks) {
    if (b.name.size() > 0xFFFF) throw ContractError("parameter name too long");
    if (b.dims.size() > 0xFF) throw ContractError("parameter rank too large");
    if (b.values.size() != b.numel())
      throw ContractError("parameter block '" + b.name + "' size does not match dims");
    w.u16(static_cast<std::uint16_t>(b.name.size()));
    w.raw(b.name);
    w.u8(static_cast<std::uint8_t>(b.dims.size()));
    for (auto d : b.dims) w.u32(d);
    for (float v : b.values) w.f32(v);
  }
  return std::move(w).bytes();
}

inline std::vector<ParameterBlock> deserialize_blocks(std::span<const std::uint8_t> blob) {
  ByteReader r(blob, "GICB blob");
  r.expect_magic("GICB");
  if (const auto v = r.u32(); v != kBlobVersion) r.fail("unsupported version " + std::to_string(v));
  std::vector<ParameterBlock> blocks;
  while (!r.at_end()) {
    ParameterBlock b;
    const auto len = r.u16();
    b.name = r.raw(len);
    const auto rank = r.u8();
    for (int i = 0; i < rank; ++i) b.dims.push_back(r.u32());
    const auto n = b.numel();
    b.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) b.values[i] = r.f32();
    blocks.push_back(std::move(b));
  }
  return blocks;
}

// ---------------------------------------------------------------------------
// Model interfaces
// ---------------------------------------------------------------------------

class ParameterSource {
 public:
  virtual ~ParameterSource() = default;
  // Appends this model's frozen parameters in a fixed order.
  virtual void collect_parameters(std::vector<ParameterBlock>& out) const = 0;
};

/// Token strings of the decoder. Id 0 is the end-of-sequence token.
class Vocabulary {
 public:
  static constexpr int kEos = 0;

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], static_cast<int>(i));
  }

  int size() const { return static_cast<int>(words_.size()); }
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& words() const { return words_; }

  // Lowest id carrying `w`, or -1.
  int find(std::string_view w) const {
    auto it = index_.find(std::string(w));
    return it == index_.end() ? -1 : it->second;
  }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& w : tokenize(text)) {
      const int id = find(w);
      if (id < 0 || id == kEos) throw TokenizationError("word '" + w + "' is not in the vocabulary");
      ids.push_back(id);
    }
    return ids;
  }

  std::string render(std::span<const int> tokens) const {
    std::string out;
    for (int t : tokens) {
      if (t == kEos) break;
      if (!out.empty()) out.push_back(' ');
      out += word(t);
    }
    return out;
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

class VisualEncoder : public ParameterSource {
 public:
  virtual int image_height() const = 0;
  virtual int image_width() const = 0;
  virtual int image_channels() const = 0;
  virtual int slots() const = 0;  // q
  virtual int width() const = 0;  // d_dec
  virtual VisualEmbedding encode(const ImageSample& image) const = 0;
};

/// Autoregressive decoder reading a block of input slots.
class LanguageDecoder : public ParameterSource {
 public:
  virtual const Vocabulary& vocabulary() const = 0;
  virtual int width() const = 0;
  int vocab_size() const { return vocabulary().size(); }

  // V x d_dec token embedding table; also projects text prompts into slot space.
  virtual const Matrix& token_embeddings() const = 0;

  // Next-token logits after `prefix`. Disallowed tokens carry -infinity.
  virtual Vector step_logits(const Matrix& slots, std::span<const int> prefix) const = 0;

  // Sum of per-token log-probabilities of `tokens`; when `grad` is non-null it
  // receives d(logprob)/d(slots), shaped like `slots`.
  virtual double sequence_logprob(const Matrix& slots, std::span<const int> tokens,
                                  Matrix* grad) const = 0;
};

class JointScorer : public ParameterSource {
 public:
  virtual int dim() const = 0;
  virtual Vector embed_image(const ImageSample& image) const = 0;
  virtual Vector embed_text(std::string_view text) const = 0;
};

class LatentAutoencoder : public ParameterSource {
 public:
  virtual int grid_rows() const = 0;
  virtual int grid_cols() const = 0;
  virtual int grid_channels() const = 0;
  virtual FeatureMapSet encode(const ImageSample& image) const = 0;
  virtual ImageSample decode(const FeatureMapSet& fmap) const = 0;
};

/// The four frozen models the pipeline runs against.
struct BackendBundle {
  std::string kind;
  std::shared_ptr<const VisualEncoder> encoder;
  std::shared_ptr<const LanguageDecoder> decoder;
  std::shared_ptr<const JointScorer> scorer;
  std::shared_ptr<const LatentAutoencoder> autoencoder;
  int max_len = 20;
  // Descriptive blocks (e.g. shapes) written ahead of the model parameters.
  std::vector<ParameterBlock> meta;

  int d_dec() const { return decoder->width(); }
  int d_joint() const { return scorer->dim(); }

  std::vector<ParameterBlock> parameters() const {
    std::vector<ParameterBlock> out = meta;
    encoder->collect_parameters(out);
    decoder->collect_parameters(out);
    scorer->collect_parameters(out);
    autoencoder->collect_parameters(out);
    return out;
  }

  std::vector<std::uint8_t> serialize() const { return serialize_blocks(parameters()); }

  // SHA-256 of the GICB blob, hex encoded.
  std::string digest() const { return sha256_hex(serialize()); }

  void validate() const {
    if (!encoder || !decoder || !scorer || !autoencoder)
      throw ContractError("backend bundle is missing a model");
    if (encoder->width() != decoder->width())
      throw ContractError("encoder and decoder disagree on d_dec");
    if (decoder->token_embeddings().cols() != decoder->width() ||
        decoder->token_embeddings().rows() != decoder->vocab_size())
      throw ContractError("token embedding table has the wrong shape");
    if (scorer->dim() <= 0) throw ContractError("joint dimension must be positive");
    if (max_len < 1) throw ContractError("max_len must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Backend-agnostic operations
// ---------------------------------------------------------------------------

inline void check_image_for(const ImageSample& image, const VisualEncoder& enc) {
  if (image.height != enc.image_height() || image.width != enc.image_width() ||
      image.channels != enc.image_channels())
    throw ShapeError("image '" + image.id + "' is " + std::to_string(image.height) + "x" +
                     std::to_string(image.width) + "x" + std::to_string(image.channels) +
                     ", backend expects " + std::to_string(enc.image_height()) + "x" +
                     std::to_string(enc.image_width()) + "x" +
                     std::to_string(enc.image_channels()));
  if (image.pixels.size() != static_cast<std::size_t>(image.height) * image.width * image.channels)
    throw ShapeError("image '" + image.id + "' pixel buffer does not match its shape");
}

inline VisualEmbedding encode_image(const ImageSample& image, const BackendBundle& bundle) {
  check_image_for(image, *bundle.encoder);
  return bundle.encoder->encode(image);
}

inline Vector log_softmax(const Vector& logits) {
  const double mx = logits.maxCoeff();
  double z = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    if (std::isfinite(logits(i))) z += std::exp(logits(i) - mx);
  const double lse = mx + std::log(z);
  Vector out(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    out(i) = std::isfinite(logits(i)) ? logits(i) - lse : -std::numeric_limits<double>::infinity();
  return out;
}

inline Vector softmax(const Vector& logits) { return log_softmax(logits).array().exp(); }

// Lowest index among the maxima.
inline int argmax_lowest(const Vector& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = static_cast<int>(i);
  return best;
}

struct DecodeOptions {
  DecodeMode mode = DecodeMode::kGreedy;
  int max_len = 20;
  double temperature = 1.0;
  std::uint64_t rng_seed = 0;
};

/// Greedy or sampled decoding. Recorded log-probabilities are always under the
/// decoder's own (temperature 1) distribution; temperature only shapes the
/// sampling distribution.
inline CaptionSample decode(const ComposedInput& input, const DecodeOptions& opt,
                            const BackendBundle& bundle) {
  const auto& dec = *bundle.decoder;
  if (input.slots.rows() == 0) throw ContractError("decode: composed input is empty");
  if (input.slots.cols() != dec.width()) throw ShapeError("decode: slot width != d_dec");
  if (opt.max_len < 1) throw ContractError("decode: max_len must be >= 1");
  if (opt.mode == DecodeMode::kSampled && !(opt.temperature > 0.0))
    throw ContractError("decode: temperature must be > 0 for sampling");

  SplitMix64 rng(opt.rng_seed);
  CaptionSample out;
  out.mode = opt.mode;
  for (int t = 0; t < opt.max_len; ++t) {
    const Vector logits = dec.step_logits(input.slots, out.seq.tokens);
    const Vector logp = log_softmax(logits);
    int tok;
    if (opt.mode == DecodeMode::kGreedy) {
      tok = argmax_lowest(logits);
    } else {
      const Vector p = softmax(logits / opt.temperature);
      const double u = rng.uniform();
      double acc = 0.0;
      tok = -1;
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p(i) <= 0.0) continue;
        acc += p(i);
        tok = static_cast<int>(i);
        if (u < acc) break;
      }
    }
    out.seq.tokens.push_back(tok);
    out.logprobs.push_back(logp(tok));
    if (tok == Vocabulary::kEos) {
      out.seq.eos_terminated = true;
      break;
    }
  }
  out.text = dec.vocabulary().render(out.seq.tokens);
  return out;
}

struct LogprobGrad {
  double logprob = 0.0;
  Matrix grad;  // prompt_length x d_dec
};

/// Log-probability of `tokens` and its gradient with respect to the prompt
/// block only; every other slot is frozen.
inline LogprobGrad sequence_logprob_grad(const ComposedInput& input, const TokenSeq& tokens,
                                         const BackendBundle& bundle) {
  const auto& dec = *bundle.decoder;
  if (tokens.tokens.empty()) throw ContractError("sequence_logprob_grad: empty token sequence");
  for (int t : tokens.tokens)
    if (t < 0 || t >= dec.vocab_size())
      throw ContractError("sequence_logprob_grad: token id " + std::to_string(t) +
                          " outside the vocabulary");
  if (input.slots.cols() != dec.width()) throw ShapeError("slot width != d_dec");
  Matrix full;
  LogprobGrad out;
  out.logprob = dec.sequence_logprob(input.slots, tokens.tokens, &full);
  out.grad = full.middleRows(input.prompt_begin, input.prompt_length());
  return out;
}

inline JointEmbedding joint_embed_image(const ImageSample& image, const BackendBundle& bundle) {
  return {bundle.scorer->embed_image(image), false};
}

inline JointEmbedding joint_embed_text(std::string_view text, const BackendBundle& bundle) {
  if (tokenize(text).empty()) throw ContractError("joint_embed_text: empty text");
  return {bundle.scorer->embed_text(text), false};
}

inline void check_grid_for(const FeatureMapSet& f, const LatentAutoencoder& ae) {
  if (f.rows != ae.grid_rows() || f.cols != ae.grid_cols() || f.channels != ae.grid_channels() ||
      f.grid.size() != static_cast<std::size_t>(f.rows) * f.cols * f.channels)
    throw ShapeError("feature map grid shape does not match the autoencoder");
}

inline FeatureMapSet ae_encode(const ImageSample& image, const BackendBundle& bundle) {
  check_image_for(image, *bundle.encoder);
  return bundle.autoencoder->encode(image);
}

inline ImageSample ae_decode(const FeatureMapSet& fmap, const BackendBundle& bundle) {
  check_grid_for(fmap, *bundle.autoencoder);
  return bundle.autoencoder->decode(fmap);
}

}  // namespace geneic
