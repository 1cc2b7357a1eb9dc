#include "s2t/captioner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "s2t/error.hpp"
#include "s2t/feature_io.hpp"
#include "s2t/nn/checkpoint.hpp"
#include "s2t/optim.hpp"

namespace s2t {

namespace {

using nn::Index;
using nn::Mat;
using Tensor = nn::Tensor<float>;

std::vector<int> iota_ids(std::size_t n) {
  std::vector<int> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

Tensor zero_scalar() { return Tensor(Mat<float>::Zero(1, 1)); }

std::vector<int> clip(std::span<const int> target, int max_len) {
  const auto n = std::min(target.size(), static_cast<std::size_t>(max_len));
  return {target.begin(), target.begin() + static_cast<std::ptrdiff_t>(n)};
}

// log-softmax of one row, in double.
std::vector<double> log_softmax(const Mat<float>& row) {
  double m = -INFINITY;
  for (Index j = 0; j < row.cols(); ++j) m = std::max(m, static_cast<double>(row(0, j)));
  double z = 0.0;
  for (Index j = 0; j < row.cols(); ++j) z += std::exp(static_cast<double>(row(0, j)) - m);
  const double lz = m + std::log(z);
  std::vector<double> out(static_cast<std::size_t>(row.cols()));
  for (Index j = 0; j < row.cols(); ++j) out[static_cast<std::size_t>(j)] = static_cast<double>(row(0, j)) - lz;
  return out;
}

}  // namespace

Prompt build_prompt(TacticType type, std::span<const TacticState> states, PromptMode mode) {
  if (states.empty()) throw EmptyStates("prompt needs at least one state");
  return Prompt{mode, type, {states.begin(), states.end()}};
}

std::vector<std::string> prompt_text(const Prompt& p) {
  std::vector<std::string> lines;
  const std::string type(to_string(p.tactic_type));
  if (p.mode == PromptMode::ShotWise) {
    for (std::size_t i = 0; i < p.states.size(); ++i) {
      lines.push_back("Prompt " + std::to_string(i + 1) + ": " + type + " -- " + std::string(to_string(p.states[i])));
    }
    return lines;
  }
  std::string s = type;
  for (auto st : p.states) s += " -- " + std::string(to_string(st));
  lines.push_back(s);
  return lines;
}

PromptMode parse_prompt_mode(std::string_view s) {
  if (s == "shot_wise") return PromptMode::ShotWise;
  if (s == "flat") return PromptMode::Flat;
  throw ConfigError("unknown prompt mode '" + std::string(s) + "'");
}

std::string_view to_string(PromptMode m) { return m == PromptMode::ShotWise ? "shot_wise" : "flat"; }

std::vector<ShotPair> shot_pairs(const std::vector<SyntheticSample>& corpus, const Vocabulary& vocab) {
  std::vector<ShotPair> out;
  for (const auto& s : corpus) {
    for (std::size_t i = 0; i < s.annotation.shots.size(); ++i) {
      const auto& cap = s.annotation.shots[i].caption;
      if (cap.empty()) continue;
      out.push_back({s.features.at(i), vocab.encode(cap)});
    }
  }
  return out;
}

std::vector<TacticPair> tactic_pairs(const std::vector<SyntheticSample>& corpus, const Vocabulary& vocab,
                                     std::optional<PromptMode> prompt) {
  std::vector<TacticPair> out;
  for (const auto& s : corpus) {
    for (const auto& u : s.annotation.tactic_units) {
      TacticPair p;
      p.shots.assign(s.features.begin() + u.first_shot, s.features.begin() + u.last_shot + 1);
      if (prompt) p.prompt = build_prompt(u.tactic_type, u.states, *prompt);
      p.target = vocab.encode(u.caption);
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::vector<std::string> corpus_captions(const std::vector<SyntheticSample>& corpus) {
  std::vector<std::string> caps;
  for (const auto& s : corpus) {
    for (const auto& shot : s.annotation.shots) {
      if (!shot.caption.empty()) caps.push_back(shot.caption);
    }
    for (const auto& u : s.annotation.tactic_units) caps.push_back(u.caption);
  }
  return caps;
}

// ---------------------------------------------------------------------------

Captioner::Captioner(const CaptionerConfig& cfg, Vocabulary vocab, std::uint64_t seed)
    : cfg_(cfg), vocab_(std::move(vocab)) {
  validate_captioner_config(cfg);
  Rng rng(seed);
  build_branch(shot_, "shot", cfg.max_shot_caption_len, false, rng);
  build_branch(tactic_, "tactic", cfg.max_tactic_caption_len, true, rng);
  const Index d = cfg.embed_dim;
  type_table_ = store_.add("tactic.prompt_embed.type", nn::normal_init<float>(kTacticTypeCount, d, 0.02, rng));
  state_table_ = store_.add("tactic.prompt_embed.state", nn::normal_init<float>(kTacticStateCount, d, 0.02, rng));
  prompt_pos_ = store_.add("tactic.prompt_embed.position", nn::normal_init<float>(cfg.max_shots, d, 0.02, rng));
  flat_vec_ = store_.add("tactic.prompt_embed.flat", nn::normal_init<float>(1, d, 0.02, rng));
}

void Captioner::build_branch(Branch& b, const std::string& name, int max_len, bool with_prompt, Rng& rng) {
  nn::EncoderConfig ec;
  ec.layers = cfg_.encoder_layers;
  ec.heads = cfg_.heads;
  ec.dim = cfg_.embed_dim;
  ec.ff_mult = cfg_.ff_mult;
  ec.max_frames = cfg_.max_frames;
  ec.max_cells = cfg_.max_cells;
  const Index d = cfg_.embed_dim;
  const Index v = vocab_.size();
  b.max_len = max_len;
  b.extractor.emplace(store_, name + ".patch_embed", cfg_.feature_dim, d, rng);
  b.positions = nn::PositionalTables<float>(store_, name + ".pos", ec, rng);
  b.encoder = nn::Encoder<float>(store_, name + ".encoder", ec, rng);
  b.token_embed = store_.add(name + ".token_embed", nn::normal_init<float>(v, d, 0.02, rng));
  b.target_pos = store_.add(name + ".target_pos", nn::normal_init<float>(max_len + 1, d, 0.02, rng));
  nn::EncoderConfig dc = ec;
  dc.layers = cfg_.decoder_layers;
  b.decoder = nn::Decoder<float>(store_, name + ".decoder", dc, rng, with_prompt);
  b.out = nn::Linear<float>(store_, name + ".out", d, v, rng);
  // Near-uniform initial predictions.
  b.out.weight.mutable_value() = nn::normal_init<float>(d, v, 0.02, rng);
}

Tensor Captioner::encode(const Branch& b, const TokenGrid& shot) const {
  check_token_grid(shot);
  if (static_cast<int>(shot.dim) != cfg_.feature_dim || static_cast<int>(shot.frames) > cfg_.max_frames ||
      static_cast<int>(shot.cells) > cfg_.max_cells) {
    throw ShapeError("shot features are " + std::to_string(shot.frames) + "x" + std::to_string(shot.cells) + "x" +
                     std::to_string(shot.dim) + ", captioner expects at most " + std::to_string(cfg_.max_frames) +
                     "x" + std::to_string(cfg_.max_cells) + "x" + std::to_string(cfg_.feature_dim));
  }
  return b.encoder(nn::embed_frames<float>(shot, *b.extractor, b.positions));
}

Tensor Captioner::encode_shot(const TokenGrid& shot) const { return encode(shot_, shot); }

Tensor Captioner::encode_tactic(std::span<const TokenGrid> shots) const {
  if (shots.empty() || static_cast<int>(shots.size()) > cfg_.max_shots) {
    throw ShapeError("tactic unit needs 1.." + std::to_string(cfg_.max_shots) + " shots, got " +
                     std::to_string(shots.size()));
  }
  std::vector<Tensor> parts;
  for (const auto& s : shots) parts.push_back(encode(tactic_, s));
  return nn::concat_rows<float>(parts);
}

Tensor Captioner::embed_prompt(const Prompt& p) const {
  if (p.states.empty()) throw EmptyStates("prompt needs at least one state");
  std::vector<int> states;
  for (auto s : p.states) states.push_back(static_cast<int>(index_of(s)));
  const int type = static_cast<int>(index_of(p.tactic_type));
  if (p.mode == PromptMode::Flat) {
    const std::vector<int> t{type};
    return nn::gather_rows<float>(type_table_, t) + nn::mean_rows(nn::gather_rows<float>(state_table_, states)) +
           flat_vec_;
  }
  if (static_cast<int>(states.size()) > cfg_.max_shots) throw ShapeError("prompt longer than max_shots");
  const std::vector<int> types(states.size(), type);
  return nn::gather_rows<float>(type_table_, types) + nn::gather_rows<float>(state_table_, states) +
         nn::gather_rows<float>(prompt_pos_, iota_ids(states.size()));
}

Tensor Captioner::tactic_prompt(std::span<const TokenGrid> shots, const std::optional<Prompt>& prompt) const {
  if (!prompt) return {};
  if (prompt->mode == PromptMode::ShotWise && prompt->states.size() != shots.size()) {
    throw PromptLengthMismatch("shot-wise prompt has " + std::to_string(prompt->states.size()) + " entries for " +
                               std::to_string(shots.size()) + " shots");
  }
  return embed_prompt(*prompt);
}

Tensor Captioner::embed_targets(const Branch& b, std::span<const int> ids) const {
  for (int id : ids) {
    if (id < 0 || id >= vocab_.size()) throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return nn::gather_rows<float>(b.token_embed, ids) + nn::gather_rows<float>(b.target_pos, iota_ids(ids.size()));
}

Tensor Captioner::logits(const Branch& b, const Tensor& memory, const Tensor& prompt,
                         std::span<const int> target) const {
  std::vector<int> input{Vocabulary::kBos};
  const auto t = clip(target, b.max_len);
  input.insert(input.end(), t.begin(), t.end());
  return b.out(b.decoder(embed_targets(b, input), memory, prompt));
}

Tensor Captioner::shot_logits(const TokenGrid& shot, std::span<const int> target) const {
  return logits(shot_, encode_shot(shot), {}, target);
}

Tensor Captioner::tactic_logits(std::span<const TokenGrid> shots, const std::optional<Prompt>& prompt,
                                std::span<const int> target) const {
  const Tensor p = tactic_prompt(shots, prompt);
  return logits(tactic_, encode_tactic(shots), p, target);
}

std::vector<int> Captioner::decode(const Branch& b, const Tensor& memory, const Tensor& prompt) const {
  const auto ctx = b.decoder.context(memory, prompt);
  const auto next = [&](const std::vector<int>& ids) {
    const Tensor h = b.decoder(embed_targets(b, ids), ctx);
    return b.out(nn::slice_rows(h, h.rows() - 1, 1)).value();
  };
  if (cfg_.decode == DecodeMode::Greedy) {
    std::vector<int> ids{Vocabulary::kBos};
    while (static_cast<int>(ids.size()) <= b.max_len) {
      const Mat<float> row = next(ids);
      Index best = 0;
      row.row(0).maxCoeff(&best);
      if (best == Vocabulary::kEos) break;
      ids.push_back(static_cast<int>(best));
    }
    return {ids.begin() + 1, ids.end()};
  }

  struct Beam {
    std::vector<int> ids;
    double logp = 0.0;
    bool done = false;
  };
  const auto k = static_cast<std::size_t>(cfg_.beam_size);
  std::vector<Beam> beams{{{Vocabulary::kBos}, 0.0, false}};
  for (int step = 0; step < b.max_len; ++step) {
    std::vector<Beam> cand;
    for (const auto& beam : beams) {
      if (beam.done) {
        cand.push_back(beam);
        continue;
      }
      const auto lp = log_softmax(next(beam.ids));
      std::vector<int> order = iota_ids(lp.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(k, order.size())),
                        order.end(), [&](int a, int c) { return lp[a] > lp[c] || (lp[a] == lp[c] && a < c); });
      for (std::size_t r = 0; r < std::min(k, order.size()); ++r) {
        Beam nb = beam;
        nb.logp += lp[static_cast<std::size_t>(order[r])];
        if (order[r] == Vocabulary::kEos) {
          nb.done = true;
        } else {
          nb.ids.push_back(order[r]);
        }
        cand.push_back(std::move(nb));
      }
    }
    std::stable_sort(cand.begin(), cand.end(), [](const Beam& a, const Beam& c) { return a.logp > c.logp; });
    cand.resize(std::min(k, cand.size()));
    beams = std::move(cand);
    if (std::all_of(beams.begin(), beams.end(), [](const Beam& x) { return x.done; })) break;
  }
  // Length-normalised final choice; eos counts as a generated token.
  const auto norm = [](const Beam& x) {
    const std::size_t generated = x.ids.size() - 1 + (x.done ? 1 : 0);
    return x.logp / static_cast<double>(std::max<std::size_t>(1, generated));
  };
  const auto best = std::max_element(beams.begin(), beams.end(),
                                     [&](const Beam& a, const Beam& c) { return norm(a) < norm(c); });
  return {best->ids.begin() + 1, best->ids.end()};
}

std::vector<int> Captioner::caption_shot(const TokenGrid& shot) const {
  nn::NoGradGuard guard;
  return decode(shot_, encode_shot(shot), {});
}

std::vector<int> Captioner::caption_tactic(std::span<const TokenGrid> shots,
                                           const std::optional<Prompt>& prompt) const {
  nn::NoGradGuard guard;
  const Tensor p = tactic_prompt(shots, prompt);
  return decode(tactic_, encode_tactic(shots), p);
}

std::vector<Tensor> Captioner::branch_params(std::string_view branch) const {
  const std::string prefix = std::string(branch) + ".";
  std::vector<Tensor> out;
  for (const auto& [name, t] : store_.params()) {
    if (name.starts_with(prefix)) out.push_back(t);
  }
  return out;
}

// ---------------------------------------------------------------------------

JointLoss joint_loss(const Captioner& model, std::span<const ShotPair* const> shots,
                     std::span<const TacticPair* const> tactics, const LossWeights& w) {
  const auto targets_of = [](std::span<const int> target, int max_len) {
    auto t = clip(target, max_len);
    t.push_back(Vocabulary::kEos);
    return t;
  };
  JointLoss out;
  out.shot = zero_scalar();
  out.tactic = zero_scalar();
  if (!shots.empty()) {
    std::vector<Tensor> rows;
    std::vector<int> targets;
    for (const auto* p : shots) {
      rows.push_back(model.shot_logits(p->shot, p->target));
      const auto t = targets_of(p->target, model.config().max_shot_caption_len);
      targets.insert(targets.end(), t.begin(), t.end());
    }
    const Tensor sum = autograd::caption_ce<float>(nn::concat_rows<float>(rows), targets, Vocabulary::kPad);
    out.shot = nn::scale(sum, 1.0f / static_cast<float>(shots.size()));
    out.shot_per_token = static_cast<double>(sum.item()) / static_cast<double>(targets.size());
  }
  if (!tactics.empty()) {
    std::vector<Tensor> rows;
    std::vector<int> targets;
    for (const auto* p : tactics) {
      rows.push_back(model.tactic_logits(p->shots, p->prompt, p->target));
      const auto t = targets_of(p->target, model.config().max_tactic_caption_len);
      targets.insert(targets.end(), t.begin(), t.end());
    }
    const Tensor sum = autograd::caption_ce<float>(nn::concat_rows<float>(rows), targets, Vocabulary::kPad);
    out.tactic = nn::scale(sum, 1.0f / static_cast<float>(tactics.size()));
    out.tactic_per_token = static_cast<double>(sum.item()) / static_cast<double>(targets.size());
  }
  out.total = autograd::total_loss<float>(out.shot, out.tactic, w);
  return out;
}

std::vector<CaptionEpoch> train_captioners(Captioner& model, std::span<const ShotPair> shots,
                                           std::span<const TacticPair> tactics, const TrainConfig& tc,
                                           const LossWeights& w,
                                           const std::function<void(const CaptionEpoch&)>& on_epoch) {
  validate_train_config(tc);
  validate_loss_weights(w);
  if (shots.empty() && tactics.empty()) throw EmptyCorpus("no caption pairs to train on");
  AdamWConfig ac;
  ac.weight_decay = tc.weight_decay;
  AdamW<float> opt(model.params(), ac);
  const auto batch = static_cast<std::size_t>(tc.batch_size);
  const std::size_t longest = std::max(shots.size(), tactics.size());
  const long steps_per_epoch = static_cast<long>((longest + batch - 1) / batch);
  const long total_steps = steps_per_epoch * tc.epochs;
  long step = 0;

  std::vector<std::size_t> shot_order(shots.size()), tactic_order(tactics.size());
  std::iota(shot_order.begin(), shot_order.end(), std::size_t{0});
  std::iota(tactic_order.begin(), tactic_order.end(), std::size_t{0});
  std::vector<CaptionEpoch> history;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    Rng rng(derive_seed(tc.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(shot_order);
    rng.shuffle(tactic_order);
    CaptionEpoch stats;
    stats.epoch = epoch;
    for (long s = 0; s < steps_per_epoch; ++s) {
      std::vector<const ShotPair*> sb;
      std::vector<const TacticPair*> tb;
      const std::size_t begin = static_cast<std::size_t>(s) * batch;
      for (std::size_t k = begin; k < std::min(begin + batch, longest); ++k) {
        if (!shots.empty()) sb.push_back(&shots[shot_order[k % shots.size()]]);
        if (!tactics.empty()) tb.push_back(&tactics[tactic_order[k % tactics.size()]]);
      }
      const JointLoss loss = joint_loss(model, sb, tb, w);
      model.params().zero_grad();
      nn::backward(loss.total);
      const double lr = lr_at_step(tc.learning_rate, tc.warmup_fraction, step, total_steps, tc.constant_after_warmup);
      opt.step(lr);
      ++step;
      stats.loss += loss.total.item();
      stats.shot_loss += loss.shot.item();
      stats.tactic_loss += loss.tactic.item();
      stats.shot_token_loss += loss.shot_per_token;
      stats.tactic_token_loss += loss.tactic_per_token;
      stats.last_lr = lr;
    }
    const double n = static_cast<double>(steps_per_epoch);
    stats.loss /= n;
    stats.shot_loss /= n;
    stats.tactic_loss /= n;
    stats.shot_token_loss /= n;
    stats.tactic_token_loss /= n;
    history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  model.params().zero_grad();
  return history;
}

void save_captioner(const std::filesystem::path& path, const Captioner& model, const nlohmann::json& extra) {
  nlohmann::json cfg{{"captioner", captioner_config_json(model.config())},
                     {"vocabulary", model.vocab().to_json()},
                     {"extra", extra}};
  nn::save_checkpoint(path, model.params(), cfg);
}

Captioner load_captioner(const std::filesystem::path& path, nlohmann::json* extra) {
  const auto file = read_container(path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(file.header);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad checkpoint header: " + e.what());
  }
  if (!header.contains("config") || !header["config"].contains("captioner") ||
      !header["config"].contains("vocabulary")) {
    throw DataError(path.string() + ": not a captioner checkpoint");
  }
  const auto& c = header["config"];
  Captioner model(captioner_config_from_json(c["captioner"]), Vocabulary::from_json(c["vocabulary"]), 0);
  nn::load_checkpoint(path, model.params());
  if (extra) *extra = c.value("extra", nlohmann::json::object());
  return model;
}

}  // namespace s2t
