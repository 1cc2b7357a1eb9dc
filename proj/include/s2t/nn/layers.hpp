#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "s2t/nn/tensor.hpp"
#include "s2t/rng.hpp"
#include "s2t/tokens.hpp"

namespace s2t::nn {

// Named parameters in registration order. Checkpoints and optimizers walk
// this list, so the order is part of the on-disk format.
template <typename T>
class ParamStore {
 public:
  Tensor<T> add(const std::string& name, Mat<T> init);
  const std::vector<std::pair<std::string, Tensor<T>>>& params() const { return params_; }
  std::vector<std::pair<std::string, Tensor<T>>>& params() { return params_; }
  Tensor<T> find(const std::string& name) const;  // throws IndexError
  void zero_grad();
  std::size_t scalar_count() const;

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
};

// Xavier-uniform matrix.
template <typename T>
Mat<T> xavier(Index rows, Index cols, Rng& rng);
template <typename T>
Mat<T> normal_init(Index rows, Index cols, double stddev, Rng& rng);

template <typename T>
struct Linear {
  Tensor<T> weight;  // in x out
  Tensor<T> bias;    // 1 x out

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, Index in, Index out, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return add_row(matmul(x, weight), bias); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, Index dim);
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

template <typename T>
struct MultiHeadAttention {
  Index dim = 0;
  Index heads = 1;
  Linear<T> q, k, v, o;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& store, const std::string& name, Index dim, Index heads, Rng& rng);

  struct KV {
    Tensor<T> k, v;
  };
  // Key/value projections of a memory, reusable across decoding steps.
  KV project(const Tensor<T>& memory) const;
  Tensor<T> attend(const Tensor<T>& queries, const KV& kv, bool causal = false) const;
  // queries: Lq x D, memory: Lk x D. With `causal`, query i sees keys <= i.
  Tensor<T> operator()(const Tensor<T>& queries, const Tensor<T>& memory, bool causal = false) const {
    return attend(queries, project(memory), causal);
  }
};

// Scaled dot-product attention for one head.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, bool causal);

template <typename T>
struct FeedForward {
  Linear<T> up, down;

  FeedForward() = default;
  FeedForward(ParamStore<T>& store, const std::string& name, Index dim, Index hidden, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return down(gelu(up(x))); }
};

struct EncoderConfig {
  int layers = 2;
  int heads = 8;
  int dim = 64;
  int ff_mult = 4;
  int max_frames = 16;
  int max_cells = 196;
};

// Throws ConfigError when dim % heads != 0 or a size is non-positive.
void validate_encoder_config(const EncoderConfig& cfg);

// Pre-LN block: x + attn(ln(x)), then x + ff(ln(x)).
template <typename T>
struct EncoderBlock {
  LayerNorm<T> ln1, ln2;
  MultiHeadAttention<T> attn;
  FeedForward<T> ff;

  EncoderBlock() = default;
  EncoderBlock(ParamStore<T>& store, const std::string& name, const EncoderConfig& cfg, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
struct Encoder {
  std::vector<EncoderBlock<T>> blocks;
  LayerNorm<T> final_ln;
  Index dim = 0;

  Encoder() = default;
  Encoder(ParamStore<T>& store, const std::string& name, const EncoderConfig& cfg, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

// Causal self-attention, cross-attention to memory, feed-forward; all pre-LN.
template <typename T>
struct DecoderBlock {
  LayerNorm<T> ln1, ln2, ln3;
  MultiHeadAttention<T> self_attn, cross_attn;
  FeedForward<T> ff;

  DecoderBlock() = default;
  DecoderBlock(ParamStore<T>& store, const std::string& name, const EncoderConfig& cfg, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& memory) const {
    return (*this)(x, cross_attn.project(memory));
  }
  Tensor<T> operator()(const Tensor<T>& x, const typename MultiHeadAttention<T>::KV& memory) const;
};

// Prompt injection before the decoder: x + gate * attn(ln(x), prompt).
// The 1x1 gate starts at 0.
template <typename T>
struct PromptCrossAttention {
  LayerNorm<T> ln;
  MultiHeadAttention<T> attn;
  Tensor<T> gate;

  PromptCrossAttention() = default;
  PromptCrossAttention(ParamStore<T>& store, const std::string& name, const EncoderConfig& cfg, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& prompt) const { return (*this)(x, attn.project(prompt)); }
  Tensor<T> operator()(const Tensor<T>& x, const typename MultiHeadAttention<T>::KV& prompt) const;
};

template <typename T>
struct Decoder {
  using KV = typename MultiHeadAttention<T>::KV;
  // Projected memory (one entry per block) and prompt, if any.
  struct Context {
    std::vector<KV> memory;
    std::optional<KV> prompt;
  };

  bool has_prompt_layer = false;
  PromptCrossAttention<T> prompt_layer;
  std::vector<DecoderBlock<T>> blocks;
  LayerNorm<T> final_ln;

  Decoder() = default;
  Decoder(ParamStore<T>& store, const std::string& name, const EncoderConfig& cfg, Rng& rng, bool with_prompt = true);
  // `prompt` may be undefined; the prompt layer is skipped then.
  Context context(const Tensor<T>& memory, const Tensor<T>& prompt = {}) const;
  Tensor<T> operator()(const Tensor<T>& target, const Context& ctx) const;
  Tensor<T> operator()(const Tensor<T>& target, const Tensor<T>& memory, const Tensor<T>& prompt = {}) const {
    return (*this)(target, context(memory, prompt));
  }
};

// Softmax(query . x_i / sqrt(D)) weighted sum of the rows of x. Throws
// EmptySequence on zero rows.
template <typename T>
Tensor<T> attention_pool(const Tensor<T>& x, const Tensor<T>& query);

template <typename T>
struct AttentionPool {
  Tensor<T> query;  // 1 x D
  bool mean_fallback = false;

  AttentionPool() = default;
  AttentionPool(ParamStore<T>& store, const std::string& name, Index dim, Rng& rng, bool use_mean = false);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

// Learnable temporal (max_frames x D) and spatial (max_cells x D) tables.
template <typename T>
struct PositionalTables {
  Tensor<T> temporal;
  Tensor<T> spatial;

  PositionalTables() = default;
  PositionalTables(ParamStore<T>& store, const std::string& name, const EncoderConfig& cfg, Rng& rng);
  // tokens: (frames * cells) x D, frame-major.
  Tensor<T> operator()(const Tensor<T>& tokens, Index frames, Index cells) const;
};

// Raw frames, T x H x W x C, row-major.
struct RawFrames {
  std::size_t frames = 0, height = 0, width = 0, channels = 0;
  std::vector<float> data;
};

// Cuts each frame into patch x patch squares; each token is the flattened
// patch (patch * patch * C values). ShapeError unless H and W divide evenly.
TokenGrid patchify(const RawFrames& frames, std::size_t patch);

// Per-shot feature extractor turning a TokenGrid into (T*N) x D model tokens.
template <typename T>
class FrameFeatureExtractor {
 public:
  virtual ~FrameFeatureExtractor() = default;
  virtual Index output_dim() const = 0;
  virtual Tensor<T> extract(const TokenGrid& grid) const = 0;
};

// Default extractor: one learned linear map applied to every token.
template <typename T>
class LinearPatchEmbedder : public FrameFeatureExtractor<T> {
 public:
  LinearPatchEmbedder(ParamStore<T>& store, const std::string& name, Index in_dim, Index out_dim, Rng& rng);
  Index output_dim() const override { return proj_.weight.cols(); }
  Tensor<T> extract(const TokenGrid& grid) const override;

 private:
  Linear<T> proj_;
};

// Grid as a (T*N) x D constant matrix.
template <typename T>
Tensor<T> grid_tensor(const TokenGrid& grid);

// Extracts tokens and adds the positional tables.
template <typename T>
Tensor<T> embed_frames(const TokenGrid& grid, const FrameFeatureExtractor<T>& extractor,
                       const PositionalTables<T>& positions);

// Max over sampled coordinates of |analytic - fd| / max(1, |fd|), central
// differences. `loss` must rebuild the graph from the current values of
// `inputs` on every call. Throws DomainError for eps outside [1e-6, 1e-4]
// and NonFiniteGradient when anything is not finite.
double grad_check(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> inputs, double eps = 1e-5,
                  std::size_t max_coords_per_input = 64, std::uint64_t seed = 1);

}  // namespace s2t::nn
