#include "w2s/model.hpp"

#include <algorithm>
#include <cmath>

#include "w2s/error.hpp"
#include "w2s/rng.hpp"

namespace w2s {

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("model." + field + ": " + why);
  };
  if (vocab_size < 2) fail("vocab_size", "must be at least 2");
  if (d_model == 0) fail("d_model", "must be positive");
  if (n_layers < 1) fail("n_layers", "must be at least 1");
  if (n_heads == 0 || d_model % n_heads != 0) fail("n_heads", "must divide d_model");
  if (max_seq_len < 2) fail("max_seq_len", "must be at least 2");
  if (mlp_ratio == 0) fail("mlp_ratio", "must be positive");
  if (adapter.enabled && adapter.rank < 1) fail("adapter.rank", "must be at least 1");
  if (adapter.enabled && !(adapter.alpha > 0.0)) fail("adapter.alpha", "must be positive");
}

std::vector<double> response_mask(std::span<const int> tokens, std::size_t prompt_len, int pad_id) {
  if (prompt_len < 1) throw DataError("response_mask: prompt_len must be at least 1");
  std::vector<double> mask(tokens.size(), 0.0);
  double total = 0.0;
  for (std::size_t t = prompt_len; t < tokens.size(); ++t) {
    if (tokens[t] != pad_id) {
      mask[t] = 1.0;
      total += 1.0;
    }
  }
  if (total == 0.0) throw DataError("response_mask: sequence has no unmasked response token");
  return mask;
}

PackedBatch pack_sequences(std::span<const Sequence> sequences, std::size_t max_seq_len, int pad_id) {
  PackedBatch batch;
  std::size_t total = 0;
  for (const Sequence& s : sequences) total += s.tokens.size();
  batch.tokens.reserve(total);
  batch.positions.reserve(total);
  batch.mask.reserve(total);
  for (const Sequence& s : sequences) {
    const std::size_t len = s.tokens.size();
    if (s.prompt_len == 0) throw DataError("sequence: prompt_len must be positive");
    if (s.prompt_len >= len) throw DataError("sequence: empty response (prompt_len >= length)");
    if (len > max_seq_len) {
      throw DataError("sequence: length " + std::to_string(len) + " exceeds max_seq_len " +
                      std::to_string(max_seq_len));
    }
    std::vector<double> m = response_mask(s.tokens, s.prompt_len, pad_id);
    std::size_t last = len - 1;
    while (s.tokens[last] == pad_id) --last;
    const std::size_t begin = batch.tokens.size();
    batch.segments.push_back(Segment{begin, len});
    batch.last_rows.push_back(begin + last);
    for (std::size_t t = 0; t < len; ++t) {
      batch.tokens.push_back(s.tokens[t]);
      batch.positions.push_back(static_cast<int>(t));
      batch.mask.push_back(m[t]);
    }
  }
  return batch;
}

Var ForwardResult::hidden_at(std::size_t layer) const {
  for (const auto& [l, v] : hidden) {
    if (l == layer) return v;
  }
  throw ContractError("hidden state for layer " + std::to_string(layer) + " was not captured");
}

namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal(0.0, stddev);
  return t;
}

RewardModel::Linear make_linear(const std::string& name, std::size_t in, std::size_t out, double stddev, Rng& rng) {
  RewardModel::Linear lin;
  lin.weight = Parameter(name + ".weight", normal_tensor({in, out}, stddev, rng));
  lin.bias = Parameter(name + ".bias", Tensor({1, out}));
  return lin;
}

void add_lora(RewardModel::Linear& lin, std::size_t rank, Rng& rng) {
  const std::size_t in = lin.weight.value.rows();
  const std::size_t out = lin.weight.value.cols();
  const std::string base = lin.weight.name.substr(0, lin.weight.name.size() - std::string(".weight").size());
  lin.lora_a = Parameter(base + ".lora_a", normal_tensor({in, rank}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  lin.lora_b = Parameter(base + ".lora_b", Tensor({rank, out}));
}

template <class Fn>
void for_each_linear(std::vector<RewardModel::Block>& blocks, Fn fn) {
  for (auto& b : blocks) {
    for (RewardModel::Linear* lin : {&b.q, &b.k, &b.v, &b.o, &b.up, &b.down}) fn(*lin);
  }
}

}  // namespace

RewardModel::RewardModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed, "init");
  const std::size_t d = config_.d_model;
  const std::size_t hidden = config_.mlp_ratio * d;
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double out_std = in_std / std::sqrt(2.0 * static_cast<double>(config_.n_layers));

  tok_emb_ = Parameter("tok_emb", normal_tensor({config_.vocab_size, d}, 1.0, rng));
  pos_emb_ = Parameter("pos_emb", normal_tensor({config_.max_seq_len, d}, 0.5, rng));
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    Block b;
    b.ln1_gain = Parameter(p + "ln1.gain", Tensor({1, d}, 1.0));
    b.ln1_bias = Parameter(p + "ln1.bias", Tensor({1, d}));
    b.q = make_linear(p + "attn.q", d, d, in_std, rng);
    b.k = make_linear(p + "attn.k", d, d, in_std, rng);
    b.v = make_linear(p + "attn.v", d, d, in_std, rng);
    b.o = make_linear(p + "attn.o", d, d, out_std, rng);
    b.ln2_gain = Parameter(p + "ln2.gain", Tensor({1, d}, 1.0));
    b.ln2_bias = Parameter(p + "ln2.bias", Tensor({1, d}));
    b.up = make_linear(p + "mlp.up", d, hidden, in_std, rng);
    b.down = make_linear(p + "mlp.down", hidden, d, out_std / std::sqrt(static_cast<double>(config_.mlp_ratio)), rng);
    blocks_.push_back(std::move(b));
  }
  lnf_gain_ = Parameter("lnf.gain", Tensor({1, d}, 1.0));
  lnf_bias_ = Parameter("lnf.bias", Tensor({1, d}));
  head_w_ = Parameter("head.weight", Tensor({d, 1}));
  head_b_ = Parameter("head.bias", Tensor({1, 1}));
  reset_head(mix_seed(config_.seed, hash_tag("head")));
  if (config_.adapter.enabled) {
    Rng lora_rng(config_.seed, "lora");
    for_each_linear(blocks_, [&](Linear& lin) { add_lora(lin, config_.adapter.rank, lora_rng); });
  }
  apply_scope();
}

void RewardModel::reset_head(std::uint64_t seed) {
  Rng rng(seed);
  const double stddev = 0.1 / std::sqrt(static_cast<double>(config_.d_model));
  for (double& v : head_w_.value.values()) v = rng.normal(0.0, stddev);
  head_b_.value.fill(0.0);
  head_w_.zero_grad();
  head_b_.zero_grad();
}

void RewardModel::attach_adapters(const AdapterConfig& adapter, std::uint64_t seed) {
  if (!adapter.enabled || adapter.rank < 1) throw ConfigError("attach_adapters: adapter must be enabled with rank >= 1");
  config_.adapter = adapter;
  Rng rng(seed, "lora");
  for_each_linear(blocks_, [&](Linear& lin) { add_lora(lin, adapter.rank, rng); });
  apply_scope();
}

void RewardModel::set_train_scope(TrainScope scope) {
  if (scope == TrainScope::adapters && !has_adapters()) {
    throw ContractError("set_train_scope: adapter training on a model without adapters");
  }
  scope_ = scope;
  apply_scope();
}

void RewardModel::apply_scope() {
  const bool base = scope_ == TrainScope::full;
  for (Parameter* p : parameters()) p->trainable = base;
  for_each_linear(blocks_, [&](Linear& lin) {
    if (lin.lora_a) {
      lin.lora_a->trainable = !base;
      lin.lora_b->trainable = !base;
    }
  });
  head_w_.trainable = true;
  head_b_.trainable = true;
}

std::vector<Parameter*> RewardModel::parameters() {
  std::vector<Parameter*> out{&tok_emb_, &pos_emb_};
  auto lin = [&](Linear& l) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
    if (l.lora_a) {
      out.push_back(&*l.lora_a);
      out.push_back(&*l.lora_b);
    }
  };
  for (Block& b : blocks_) {
    out.push_back(&b.ln1_gain);
    out.push_back(&b.ln1_bias);
    lin(b.q);
    lin(b.k);
    lin(b.v);
    lin(b.o);
    out.push_back(&b.ln2_gain);
    out.push_back(&b.ln2_bias);
    lin(b.up);
    lin(b.down);
  }
  out.insert(out.end(), {&lnf_gain_, &lnf_bias_, &head_w_, &head_b_});
  return out;
}

std::vector<const Parameter*> RewardModel::parameters() const {
  auto all = const_cast<RewardModel*>(this)->parameters();
  return {all.begin(), all.end()};
}

std::vector<Parameter*> RewardModel::trainable_parameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : parameters()) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

void RewardModel::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

std::size_t RewardModel::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

template <class Self, class Bind>
ForwardResult RewardModel::forward_impl(Self& self, Graph&, const PackedBatch& batch,
                                        const ForwardOptions& options, Bind bind) {
  const ModelConfig& cfg = self.config_;
  for (std::size_t layer : options.capture_layers) {
    if (layer < 1 || layer > cfg.n_layers) {
      throw ContractError("capture layer " + std::to_string(layer) + " outside 1.." + std::to_string(cfg.n_layers));
    }
  }
  if (batch.sequences() == 0) throw DataError("forward: empty batch");
  const bool use_adapters = options.adapters && cfg.adapter.enabled;
  const double s = cfg.adapter.scaling();

  auto linear = [&](auto& lin, Var x) {
    Var y = add_bias(matmul(x, bind(lin.weight)), bind(lin.bias));
    if (use_adapters && lin.lora_a) {
      Var delta = matmul(matmul(x, bind(*lin.lora_a)), bind(*lin.lora_b));
      y = add(y, scale(delta, s));
    }
    return y;
  };

  ForwardResult result;
  Var x = add(embedding(bind(self.tok_emb_), batch.tokens), embedding(bind(self.pos_emb_), batch.positions));
  for (std::size_t l = 0; l < self.blocks_.size(); ++l) {
    auto& b = self.blocks_[l];
    Var h = layer_norm(x, bind(b.ln1_gain), bind(b.ln1_bias));
    Var att = causal_attention(linear(b.q, h), linear(b.k, h), linear(b.v, h), cfg.n_heads, batch.segments);
    x = add(x, linear(b.o, att));
    h = layer_norm(x, bind(b.ln2_gain), bind(b.ln2_bias));
    x = add(x, linear(b.down, gelu(linear(b.up, h))));
    const std::size_t layer = l + 1;
    if (std::find(options.capture_layers.begin(), options.capture_layers.end(), layer) !=
        options.capture_layers.end()) {
      result.hidden.emplace_back(layer, x);
    }
  }
  if (cfg.pooling == HeadPooling::last_token) {
    result.pooled = layer_norm(gather_rows(x, batch.last_rows), bind(self.lnf_gain_), bind(self.lnf_bias_));
  } else {
    result.pooled = segment_masked_mean(layer_norm(x, bind(self.lnf_gain_), bind(self.lnf_bias_)), batch.mask,
                                        batch.segments);
  }
  result.rewards = add_bias(matmul(result.pooled, bind(self.head_w_)), bind(self.head_b_));
  return result;
}

ForwardResult RewardModel::forward(Graph& g, const PackedBatch& batch, const ForwardOptions& options) {
  if (options.track_grad) {
    return forward_impl(*this, g, batch, options, [&g](Parameter& p) { return g.parameter(p); });
  }
  return forward_impl(*this, g, batch, options, [&g](Parameter& p) { return g.frozen(p); });
}

ForwardResult RewardModel::forward(Graph& g, const PackedBatch& batch, const ForwardOptions& options) const {
  if (options.track_grad) throw ContractError("forward: gradient tracking needs a mutable model");
  return forward_impl(*this, g, batch, options, [&g](const Parameter& p) { return g.frozen(p); });
}

ModelView RewardModel::view(bool adapters_enabled) const { return ModelView(*this, adapters_enabled); }

ModelView set_adapter_mode(const RewardModel& model, bool enabled) {
  if (!model.has_adapters()) throw ContractError("set_adapter_mode: model was built without adapters");
  return ModelView(model, enabled);
}

ScoredSequence ModelView::score(std::span<const int> tokens, std::size_t prompt_len,
                                const std::vector<std::size_t>& capture_layers) const {
  Sequence seq{std::vector<int>(tokens.begin(), tokens.end()), prompt_len};
  const PackedBatch batch = pack_sequences(std::span<const Sequence>(&seq, 1), model_->config().max_seq_len);
  Graph g;
  ForwardOptions opts;
  opts.adapters = adapters_;
  opts.capture_layers = capture_layers;
  const ForwardResult fr = model_->forward(g, batch, opts);
  ScoredSequence out;
  out.reward = fr.rewards.value()[0];
  out.response_mask = batch.mask;
  for (const auto& [layer, v] : fr.hidden) out.hidden_states.emplace(layer, v.value());
  return out;
}

std::vector<double> ModelView::rewards(std::span<const Sequence> sequences, std::size_t chunk) const {
  std::vector<double> out;
  out.reserve(sequences.size());
  ForwardOptions opts;
  opts.adapters = adapters_;
  for (std::size_t i = 0; i < sequences.size(); i += chunk) {
    const std::size_t n = std::min(chunk, sequences.size() - i);
    const PackedBatch batch = pack_sequences(sequences.subspan(i, n), model_->config().max_seq_len);
    Graph g;
    const ForwardResult fr = model_->forward(g, batch, opts);
    for (std::size_t j = 0; j < n; ++j) out.push_back(fr.rewards.value()[j]);
  }
  return out;
}

}  // namespace w2s
