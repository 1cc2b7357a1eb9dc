#include "s2t/nn/layers.hpp"

#include <cmath>
#include <numeric>

#include "s2t/error.hpp"

namespace s2t::nn {

template <typename T>
Tensor<T> ParamStore<T>::add(const std::string& name, Mat<T> init) {
  for (const auto& [n, _] : params_) {
    if (n == name) throw ConfigError("duplicate parameter name " + name);
  }
  Tensor<T> t(std::move(init), true);
  params_.emplace_back(name, t);
  return t;
}

template <typename T>
Tensor<T> ParamStore<T>::find(const std::string& name) const {
  for (const auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw IndexError("no parameter named " + name);
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += static_cast<std::size_t>(t.value().size());
  return n;
}

template <typename T>
Mat<T> xavier(Index rows, Index cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat<T> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-a, a));
  return m;
}

template <typename T>
Mat<T> normal_init(Index rows, Index cols, double stddev, Rng& rng) {
  Mat<T> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal(0.0, stddev));
  return m;
}

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name, Index in, Index out, Rng& rng)
    : weight(store.add(name + ".weight", xavier<T>(in, out, rng))),
      bias(store.add(name + ".bias", Mat<T>::Zero(1, out))) {}

template <typename T>
LayerNorm<T>::LayerNorm(ParamStore<T>& store, const std::string& name, Index dim)
    : gamma(store.add(name + ".gamma", Mat<T>::Ones(1, dim))), beta(store.add(name + ".beta", Mat<T>::Zero(1, dim))) {}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(ParamStore<T>& store, const std::string& name, Index d, Index h, Rng& rng)
    : dim(d), heads(h) {
  if (h <= 0 || d % h != 0) throw ConfigError("attention dim must be divisible by heads");
  q = Linear<T>(store, name + ".q", d, d, rng);
  k = Linear<T>(store, name + ".k", d, d, rng);
  v = Linear<T>(store, name + ".v", d, d, rng);
  o = Linear<T>(store, name + ".o", d, d, rng);
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, bool causal) {
  const T s = T(1) / std::sqrt(static_cast<T>(q.cols()));
  return matmul(softmax_rows(scale(matmul_nt(q, k), s), causal), v);
}

template <typename T>
typename MultiHeadAttention<T>::KV MultiHeadAttention<T>::project(const Tensor<T>& memory) const {
  if (memory.cols() != dim) throw ShapeError("attention memory width differs from dim");
  if (memory.rows() == 0) throw EmptySequence("attention over an empty memory");
  return {k(memory), v(memory)};
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::attend(const Tensor<T>& queries, const KV& kv, bool causal) const {
  if (queries.cols() != dim) throw ShapeError("attention query width differs from dim");
  const Tensor<T> qq = q(queries);
  if (heads == 1) return o(attention(qq, kv.k, kv.v, causal));
  const Index hd = dim / heads;
  std::vector<Tensor<T>> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (Index h = 0; h < heads; ++h) {
    outs.push_back(attention(slice_cols(qq, h * hd, hd), slice_cols(kv.k, h * hd, hd), slice_cols(kv.v, h * hd, hd),
                             causal));
  }
  return o(concat_cols<T>(outs));
}

template <typename T>
FeedForward<T>::FeedForward(ParamStore<T>& store, const std::string& name, Index dim, Index hidden, Rng& rng)
    : up(store, name + ".up", dim, hidden, rng), down(store, name + ".down", hidden, dim, rng) {}

void validate_encoder_config(const EncoderConfig& cfg) {
  if (cfg.layers < 0 || cfg.heads <= 0 || cfg.dim <= 0 || cfg.ff_mult <= 0 || cfg.max_frames <= 0 ||
      cfg.max_cells <= 0) {
    throw ConfigError("encoder sizes must be positive");
  }
  if (cfg.dim % cfg.heads != 0) throw ConfigError("encoder dim must be divisible by heads");
}

template <typename T>
EncoderBlock<T>::EncoderBlock(ParamStore<T>& store, const std::string& name, const EncoderConfig& cfg, Rng& rng)
    : ln1(store, name + ".ln1", cfg.dim),
      ln2(store, name + ".ln2", cfg.dim),
      attn(store, name + ".attn", cfg.dim, cfg.heads, rng),
      ff(store, name + ".ff", cfg.dim, cfg.dim * cfg.ff_mult, rng) {}

template <typename T>
Tensor<T> EncoderBlock<T>::operator()(const Tensor<T>& x) const {
  const Tensor<T> h = ln1(x);
  const Tensor<T> y = x + attn(h, h);
  return y + ff(ln2(y));
}

template <typename T>
Encoder<T>::Encoder(ParamStore<T>& store, const std::string& name, const EncoderConfig& cfg, Rng& rng) : dim(cfg.dim) {
  validate_encoder_config(cfg);
  for (int i = 0; i < cfg.layers; ++i) blocks.emplace_back(store, name + ".block" + std::to_string(i), cfg, rng);
  final_ln = LayerNorm<T>(store, name + ".ln_f", cfg.dim);
}

template <typename T>
Tensor<T> Encoder<T>::operator()(const Tensor<T>& x) const {
  if (x.cols() != dim) throw ShapeError("encoder input width differs from dim");
  Tensor<T> h = x;
  for (const auto& b : blocks) h = b(h);
  return final_ln(h);
}

template <typename T>
DecoderBlock<T>::DecoderBlock(ParamStore<T>& store, const std::string& name, const EncoderConfig& cfg, Rng& rng)
    : ln1(store, name + ".ln1", cfg.dim),
      ln2(store, name + ".ln2", cfg.dim),
      ln3(store, name + ".ln3", cfg.dim),
      self_attn(store, name + ".self_attn", cfg.dim, cfg.heads, rng),
      cross_attn(store, name + ".cross_attn", cfg.dim, cfg.heads, rng),
      ff(store, name + ".ff", cfg.dim, cfg.dim * cfg.ff_mult, rng) {}

template <typename T>
Tensor<T> DecoderBlock<T>::operator()(const Tensor<T>& x, const typename MultiHeadAttention<T>::KV& memory) const {
  const Tensor<T> h = ln1(x);
  Tensor<T> y = x + self_attn(h, h, true);
  y = y + cross_attn.attend(ln2(y), memory);
  return y + ff(ln3(y));
}

template <typename T>
PromptCrossAttention<T>::PromptCrossAttention(ParamStore<T>& store, const std::string& name, const EncoderConfig& cfg,
                                              Rng& rng)
    : ln(store, name + ".ln", cfg.dim),
      attn(store, name + ".attn", cfg.dim, cfg.heads, rng),
      gate(store.add(name + ".gate", Mat<T>::Zero(1, 1))) {}

template <typename T>
Tensor<T> PromptCrossAttention<T>::operator()(const Tensor<T>& x,
                                              const typename MultiHeadAttention<T>::KV& prompt) const {
  return x + scale_by(attn.attend(ln(x), prompt), gate);
}

template <typename T>
Decoder<T>::Decoder(ParamStore<T>& store, const std::string& name, const EncoderConfig& cfg, Rng& rng,
                    bool with_prompt)
    : has_prompt_layer(with_prompt) {
  validate_encoder_config(cfg);
  if (with_prompt) prompt_layer = PromptCrossAttention<T>(store, name + ".prompt", cfg, rng);
  for (int i = 0; i < cfg.layers; ++i) blocks.emplace_back(store, name + ".block" + std::to_string(i), cfg, rng);
  final_ln = LayerNorm<T>(store, name + ".ln_f", cfg.dim);
}

template <typename T>
typename Decoder<T>::Context Decoder<T>::context(const Tensor<T>& memory, const Tensor<T>& prompt) const {
  Context ctx;
  for (const auto& b : blocks) ctx.memory.push_back(b.cross_attn.project(memory));
  if (prompt.defined()) {
    if (!has_prompt_layer) throw ShapeError("decoder was built without a prompt layer");
    ctx.prompt = prompt_layer.attn.project(prompt);
  }
  return ctx;
}

template <typename T>
Tensor<T> Decoder<T>::operator()(const Tensor<T>& target, const Context& ctx) const {
  if (ctx.memory.size() != blocks.size()) throw ShapeError("decoder context built for another decoder");
  Tensor<T> h = ctx.prompt ? prompt_layer(target, *ctx.prompt) : target;
  for (std::size_t i = 0; i < blocks.size(); ++i) h = blocks[i](h, ctx.memory[i]);
  return final_ln(h);
}

template <typename T>
Tensor<T> attention_pool(const Tensor<T>& x, const Tensor<T>& query) {
  if (x.rows() == 0) throw EmptySequence("attention_pool over zero rows");
  if (query.rows() != 1 || query.cols() != x.cols()) throw ShapeError("pool query must be 1 x D");
  const T s = T(1) / std::sqrt(static_cast<T>(x.cols()));
  return matmul(softmax_rows(scale(matmul_nt(query, x), s)), x);
}

template <typename T>
AttentionPool<T>::AttentionPool(ParamStore<T>& store, const std::string& name, Index dim, Rng& rng, bool use_mean)
    : query(store.add(name + ".query", normal_init<T>(1, dim, 0.02, rng))), mean_fallback(use_mean) {}

template <typename T>
Tensor<T> AttentionPool<T>::operator()(const Tensor<T>& x) const {
  if (x.rows() == 0) throw EmptySequence("pooling over zero rows");
  return mean_fallback ? mean_rows(x) : attention_pool(x, query);
}

template <typename T>
PositionalTables<T>::PositionalTables(ParamStore<T>& store, const std::string& name, const EncoderConfig& cfg, Rng& rng)
    : temporal(store.add(name + ".temporal", normal_init<T>(cfg.max_frames, cfg.dim, 0.02, rng))),
      spatial(store.add(name + ".spatial", normal_init<T>(cfg.max_cells, cfg.dim, 0.02, rng))) {}

template <typename T>
Tensor<T> PositionalTables<T>::operator()(const Tensor<T>& tokens, Index frames, Index cells) const {
  if (tokens.rows() != frames * cells) throw ShapeError("token count differs from frames * cells");
  if (frames > temporal.rows() || cells > spatial.rows()) throw ShapeError("positional table too small");
  std::vector<int> t_ids(static_cast<std::size_t>(frames * cells));
  std::vector<int> s_ids(t_ids.size());
  for (Index t = 0; t < frames; ++t) {
    for (Index n = 0; n < cells; ++n) {
      t_ids[static_cast<std::size_t>(t * cells + n)] = static_cast<int>(t);
      s_ids[static_cast<std::size_t>(t * cells + n)] = static_cast<int>(n);
    }
  }
  return tokens + gather_rows<T>(temporal, t_ids) + gather_rows<T>(spatial, s_ids);
}

TokenGrid patchify(const RawFrames& f, std::size_t patch) {
  if (patch == 0 || f.frames == 0 || f.channels == 0) throw ShapeError("patchify: zero-sized input");
  if (f.height % patch != 0 || f.width % patch != 0) {
    throw ShapeError("frame size " + std::to_string(f.height) + "x" + std::to_string(f.width) +
                     " is not divisible by patch " + std::to_string(patch));
  }
  if (f.data.size() != f.frames * f.height * f.width * f.channels) throw ShapeError("patchify: buffer size mismatch");
  const std::size_t gh = f.height / patch;
  const std::size_t gw = f.width / patch;
  TokenGrid grid(f.frames, gh * gw, patch * patch * f.channels);
  for (std::size_t t = 0; t < f.frames; ++t) {
    for (std::size_t py = 0; py < gh; ++py) {
      for (std::size_t px = 0; px < gw; ++px) {
        std::size_t d = 0;
        for (std::size_t y = 0; y < patch; ++y) {
          for (std::size_t x = 0; x < patch; ++x) {
            for (std::size_t c = 0; c < f.channels; ++c) {
              const std::size_t src = ((t * f.height + py * patch + y) * f.width + px * patch + x) * f.channels + c;
              grid.at(t, py * gw + px, d++) = f.data[src];
            }
          }
        }
      }
    }
  }
  return grid;
}

template <typename T>
Tensor<T> grid_tensor(const TokenGrid& grid) {
  check_token_grid(grid);
  Mat<T> m(static_cast<Index>(grid.token_count()), static_cast<Index>(grid.dim));
  for (std::size_t i = 0; i < grid.data.size(); ++i) m.data()[i] = static_cast<T>(grid.data[i]);
  return Tensor<T>(std::move(m));
}

template <typename T>
LinearPatchEmbedder<T>::LinearPatchEmbedder(ParamStore<T>& store, const std::string& name, Index in_dim,
                                            Index out_dim, Rng& rng)
    : proj_(store, name, in_dim, out_dim, rng) {}

template <typename T>
Tensor<T> LinearPatchEmbedder<T>::extract(const TokenGrid& grid) const {
  if (static_cast<Index>(grid.dim) != proj_.weight.rows()) {
    throw ShapeError("feature dim " + std::to_string(grid.dim) + " differs from embedder input " +
                     std::to_string(proj_.weight.rows()));
  }
  return proj_(grid_tensor<T>(grid));
}

template <typename T>
Tensor<T> embed_frames(const TokenGrid& grid, const FrameFeatureExtractor<T>& extractor,
                       const PositionalTables<T>& positions) {
  return positions(extractor.extract(grid), static_cast<Index>(grid.frames), static_cast<Index>(grid.cells));
}

double grad_check(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> inputs, double eps,
                  std::size_t max_coords_per_input, std::uint64_t seed) {
  if (!(eps >= 1e-6 && eps <= 1e-4)) throw DomainError("grad_check epsilon must lie in [1e-6, 1e-4]");
  for (auto& in : inputs) {
    if (!in.requires_grad()) throw DomainError("grad_check inputs must require gradients");
    in.zero_grad();
  }
  const Tensor<double> root = loss();
  if (!std::isfinite(root.item())) throw NonFiniteGradient("loss is not finite");
  backward(root);
  Rng rng(seed);
  double worst = 0.0;
  for (auto& in : inputs) {
    const Mat<double> analytic = in.grad();
    const auto size = static_cast<std::size_t>(in.value().size());
    std::vector<std::size_t> coords(size);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (size > max_coords_per_input) {
      rng.shuffle(coords);
      coords.resize(max_coords_per_input);
    }
    for (std::size_t c : coords) {
      double& x = in.mutable_value().data()[c];
      const double saved = x;
      double plus = 0.0, minus = 0.0;
      {
        NoGradGuard guard;
        x = saved + eps;
        plus = loss().item();
        x = saved - eps;
        minus = loss().item();
      }
      x = saved;
      const double fd = (plus - minus) / (2.0 * eps);
      const double ga = analytic.data()[c];
      if (!std::isfinite(fd) || !std::isfinite(ga)) throw NonFiniteGradient("non-finite gradient component");
      worst = std::max(worst, std::abs(ga - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

#define S2T_INSTANTIATE(T)                                                                             \
  template class ParamStore<T>;                                                                        \
  template Mat<T> xavier<T>(Index, Index, Rng&);                                                       \
  template Mat<T> normal_init<T>(Index, Index, double, Rng&);                                          \
  template struct Linear<T>;                                                                           \
  template struct LayerNorm<T>;                                                                        \
  template struct MultiHeadAttention<T>;                                                               \
  template Tensor<T> attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, bool);         \
  template struct FeedForward<T>;                                                                      \
  template struct EncoderBlock<T>;                                                                     \
  template struct Encoder<T>;                                                                          \
  template struct DecoderBlock<T>;                                                                     \
  template struct PromptCrossAttention<T>;                                                             \
  template struct Decoder<T>;                                                                          \
  template Tensor<T> attention_pool<T>(const Tensor<T>&, const Tensor<T>&);                            \
  template struct AttentionPool<T>;                                                                    \
  template struct PositionalTables<T>;                                                                 \
  template class LinearPatchEmbedder<T>;                                                               \
  template Tensor<T> grid_tensor<T>(const TokenGrid&);                                                 \
  template Tensor<T> embed_frames<T>(const TokenGrid&, const FrameFeatureExtractor<T>&, const PositionalTables<T>&);

S2T_INSTANTIATE(float)
S2T_INSTANTIATE(double)

#undef S2T_INSTANTIATE

}  // namespace s2t::nn
