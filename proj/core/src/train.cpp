#include "w2s/train.hpp"

#include <cmath>
#include <sstream>
#include <utility>

#include "w2s/error.hpp"
#include "w2s/io.hpp"
#include "w2s/rng.hpp"

namespace w2s {

std::vector<TrainExample> gold_examples(const std::vector<PreferencePair>& pairs) {
  std::vector<TrainExample> out;
  out.reserve(pairs.size());
  for (const PreferencePair& p : pairs) {
    out.push_back({p.pair_id, p.sequence_a(), p.sequence_b(), p.gold_label == 1 ? 1.0 : 0.0});
  }
  return out;
}

std::vector<TrainExample> weak_examples(const std::vector<PreferencePair>& pairs) {
  std::vector<TrainExample> out;
  out.reserve(pairs.size());
  for (const PreferencePair& p : pairs) {
    if (!p.weak_label) throw ContractError("weak_examples: pair " + std::to_string(p.pair_id) + " has no weak label");
    out.push_back({p.pair_id, p.sequence_a(), p.sequence_b(), *p.weak_label});
  }
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ContractError("train: epochs must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train.learning_rate: must be positive");
  if (batch_size < 1) throw ConfigError("train.batch_size: must be at least 1");
  method.validate();
}

namespace {

// Stacks per-sequence row blocks into one packed matrix.
Tensor stack_rows(const std::vector<const Tensor*>& parts) {
  std::size_t rows = 0;
  const std::size_t cols = parts.front()->cols();
  for (const Tensor* t : parts) rows += t->rows();
  Tensor out(Shape{rows, cols});
  double* dst = out.data();
  for (const Tensor* t : parts) {
    std::copy(t->data(), t->data() + t->size(), dst);
    dst += t->size();
  }
  return out;
}

struct ReferenceCache {
  std::vector<std::size_t> layers;
  // [example][layer] rows for candidates a and b.
  std::vector<std::vector<Tensor>> a, b;
};

ReferenceCache build_reference_cache(const RewardModel& model, const std::vector<TrainExample>& data,
                                     const std::vector<std::size_t>& layers, std::size_t chunk) {
  ReferenceCache cache;
  cache.layers = layers;
  cache.a.resize(data.size());
  cache.b.resize(data.size());
  ForwardOptions opts;
  opts.adapters = false;
  opts.capture_layers = layers;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t n = std::min(chunk, data.size() - start);
    std::vector<Sequence> seqs;
    for (std::size_t i = 0; i < n; ++i) seqs.push_back(data[start + i].a);
    for (std::size_t i = 0; i < n; ++i) seqs.push_back(data[start + i].b);
    const PackedBatch batch = pack_sequences(seqs, model.config().max_seq_len);
    Graph g;
    const ForwardResult fr = model.forward(g, batch, opts);
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const Tensor& h = fr.hidden_at(layers[li]).value();
      for (std::size_t s = 0; s < 2 * n; ++s) {
        const Segment seg = batch.segments[s];
        Tensor rows(Shape{seg.length, h.cols()});
        std::copy(h.data() + seg.begin * h.cols(), h.data() + (seg.begin + seg.length) * h.cols(), rows.data());
        auto& slot = s < n ? cache.a[start + s] : cache.b[start + s - n];
        slot.push_back(std::move(rows));
      }
    }
  }
  return cache;
}

std::string describe_batch(const std::vector<const TrainExample*>& batch) {
  std::string ids;
  for (const TrainExample* e : batch) {
    if (!ids.empty()) ids += ",";
    ids += std::to_string(e->pair_id);
  }
  return ids;
}

}  // namespace

TrainResult train_reward_model(RewardModel& model, const std::vector<TrainExample>& data, const TrainConfig& cfg,
                               const BatchObserver& observer) {
  cfg.validate();
  if (data.empty()) throw DataError("train: no training examples");
  model.set_train_scope(cfg.scope);
  model.zero_grad();
  const MethodSpec& method = cfg.method;
  const std::size_t n_layers = model.config().n_layers;

  std::vector<std::size_t> anchor_layers;
  ReferenceCache cache;
  if (method.kind == Method::anchor) {
    anchor_layers = method.anchor.layers(n_layers);
    cache = build_reference_cache(model, data, anchor_layers, 128);
  }
  ParameterSnapshot snapshot;
  if (method.kind == Method::l2sp) snapshot = snapshot_parameters(model);

  Adam adam(model.trainable_parameters(), AdamConfig{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps});
  TrainResult result;
  std::vector<std::size_t> order(data.size());
  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(cfg.seed, "order:" + std::to_string(epoch));
    rng.shuffle(order);
    double epoch_total = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      std::vector<const TrainExample*> batch_examples;
      std::vector<Sequence> seqs;
      std::vector<double> q;
      for (std::size_t i = 0; i < n; ++i) batch_examples.push_back(&data[order[start + i]]);
      if (observer) observer(batch_examples);
      for (const TrainExample* e : batch_examples) seqs.push_back(e->a);
      for (const TrainExample* e : batch_examples) seqs.push_back(e->b);
      for (const TrainExample* e : batch_examples) q.push_back(e->q);
      const PackedBatch batch = pack_sequences(seqs, model.config().max_seq_len);

      LossBreakdown breakdown;
      try {
        Graph g;
        ForwardOptions opts;
        opts.track_grad = true;
        opts.capture_layers = anchor_layers;
        ObjectiveInputs in;
        in.batch = &batch;
        in.n_pairs = n;
        in.n_layers = n_layers;
        in.student = model.forward(g, batch, opts);
        in.q = q;
        in.model = &model;
        in.snapshot = method.kind == Method::l2sp ? &snapshot : nullptr;
        ForwardResult reference;
        if (method.kind == Method::anchor) {
          for (std::size_t li = 0; li < anchor_layers.size(); ++li) {
            std::vector<const Tensor*> parts;
            for (std::size_t i = 0; i < n; ++i) parts.push_back(&cache.a[order[start + i]][li]);
            for (std::size_t i = 0; i < n; ++i) parts.push_back(&cache.b[order[start + i]][li]);
            reference.hidden.emplace_back(anchor_layers[li], g.constant(stack_rows(parts)));
          }
          in.reference = &reference;
        }
        const LossTerms terms = combined_objective(g, in, method);
        breakdown = terms.breakdown();
        if (!std::isfinite(breakdown.total)) throw NumericError("loss is not finite");
        g.backward(terms.total);
      } catch (const NumericError& e) {
        std::ostringstream msg;
        msg << "training diverged at epoch " << epoch + 1 << " step " << global_step + 1
            << " (lr=" << cfg.learning_rate << ", pair ids " << describe_batch(batch_examples) << "): " << e.what();
        throw NumericError(msg.str());
      }
      adam.step();
      ++global_step;
      result.steps.push_back({epoch + 1, global_step, breakdown});
      epoch_total += breakdown.total;
      ++epoch_steps;
    }
    result.epoch_loss.push_back(epoch_total / static_cast<double>(epoch_steps));
  }
  return result;
}

LossTerms batch_objective(Graph& g, RewardModel& model, std::span<const TrainExample* const> batch,
                          const MethodSpec& method, const ParameterSnapshot* snapshot) {
  if (batch.empty()) throw DataError("batch_objective: empty batch");
  if (method.kind == Method::l2sp && snapshot == nullptr) throw ContractError("batch_objective: l2sp needs a snapshot");
  std::vector<Sequence> seqs;
  std::vector<double> q;
  for (const TrainExample* e : batch) seqs.push_back(e->a);
  for (const TrainExample* e : batch) seqs.push_back(e->b);
  for (const TrainExample* e : batch) q.push_back(e->q);
  const PackedBatch packed = pack_sequences(seqs, model.config().max_seq_len);
  const std::size_t n_layers = model.config().n_layers;
  ForwardOptions opts;
  opts.track_grad = true;
  if (method.kind == Method::anchor) opts.capture_layers = method.anchor.layers(n_layers);
  ObjectiveInputs in;
  in.batch = &packed;
  in.n_pairs = batch.size();
  in.n_layers = n_layers;
  in.student = model.forward(g, packed, opts);
  in.q = q;
  in.model = &model;
  in.snapshot = snapshot;
  ForwardResult reference;
  if (method.kind == Method::anchor) {
    ForwardOptions ref_opts;
    ref_opts.adapters = false;
    ref_opts.capture_layers = opts.capture_layers;
    reference = std::as_const(model).forward(g, packed, ref_opts);
    in.reference = &reference;
  }
  return combined_objective(g, in, method);
}

std::string losses_csv(const TrainResult& result) {
  std::string out = "epoch,step,total,l_w2s,l_anchor,l_conf,l2sp\n";
  for (const StepRecord& s : result.steps) {
    double anchor = 0.0;
    for (const auto& [layer, v] : s.loss.l_anchor) anchor += v;
    if (!s.loss.l_anchor.empty()) anchor /= static_cast<double>(s.loss.l_anchor.size());
    out += std::to_string(s.epoch) + "," + std::to_string(s.step) + "," + format_double(s.loss.total) + "," +
           format_double(s.loss.l_w2s) + "," + (s.loss.l_anchor.empty() ? "" : format_double(anchor)) + "," +
           (s.loss.l_conf ? format_double(*s.loss.l_conf) : "") + "," + (s.loss.l2sp ? format_double(*s.loss.l2sp) : "") +
           "\n";
  }
  return out;
}

std::vector<double> pretrain_base(RewardModel& model, const std::vector<PretrainExample>& corpus,
                                  const PretrainConfig& cfg) {
  if (corpus.empty()) throw DataError("pretrain: empty corpus");
  if (cfg.epochs < 1) throw ContractError("pretrain: epochs must be at least 1");
  const std::size_t k_all = corpus.front().features.size();
  std::vector<std::size_t> visible = cfg.visible_features;
  if (visible.empty()) {
    for (std::size_t i = 0; i < k_all; ++i) visible.push_back(i);
  }
  for (std::size_t f : visible) {
    if (f >= k_all) throw ConfigError("pretrain.visible_features: index " + std::to_string(f) + " out of range");
  }
  const std::size_t k = visible.size();
  std::vector<double> mu(k, 0.0), sd(k, 0.0);
  for (const PretrainExample& ex : corpus) {
    for (std::size_t j = 0; j < k; ++j) mu[j] += ex.features[visible[j]];
  }
  for (double& m : mu) m /= static_cast<double>(corpus.size());
  for (const PretrainExample& ex : corpus) {
    for (std::size_t j = 0; j < k; ++j) sd[j] += std::pow(ex.features[visible[j]] - mu[j], 2);
  }
  for (double& s : sd) s = std::sqrt(s / static_cast<double>(corpus.size())) + 1e-12;

  const std::size_t d = model.config().d_model;
  Rng rng(cfg.seed, "probe");
  Parameter probe_w("probe.weight", Tensor({d, k}));
  for (double& v : probe_w.value.values()) v = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  Parameter probe_b("probe.bias", Tensor({1, k}));

  model.set_train_scope(TrainScope::full);
  model.head_weight().trainable = false;
  model.head_bias().trainable = false;
  std::vector<Parameter*> params = model.trainable_parameters();
  params.push_back(&probe_w);
  params.push_back(&probe_b);
  Adam adam(params, AdamConfig{cfg.learning_rate});

  std::vector<double> losses;
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(cfg.seed, "pretrain-order:" + std::to_string(epoch));
    shuffle_rng.shuffle(order);
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      std::vector<Sequence> seqs;
      Tensor target(Shape{n, k});
      for (std::size_t i = 0; i < n; ++i) {
        const PretrainExample& ex = corpus[order[start + i]];
        seqs.push_back(ex.sequence);
        for (std::size_t j = 0; j < k; ++j) target.at(i, j) = (ex.features[visible[j]] - mu[j]) / sd[j];
      }
      const PackedBatch batch = pack_sequences(seqs, model.config().max_seq_len);
      Graph g;
      ForwardOptions opts;
      opts.track_grad = true;
      const ForwardResult fr = model.forward(g, batch, opts);
      Var pred = add_bias(matmul(fr.pooled, g.parameter(probe_w)), g.parameter(probe_b));
      Var loss = mean(square(sub(pred, g.constant(std::move(target)))));
      g.backward(loss);
      adam.step();
      total += loss.item();
      ++steps;
    }
    losses.push_back(total / static_cast<double>(steps));
  }
  model.zero_grad();
  model.reset_head(mix_seed(cfg.seed, hash_tag("head-after-pretrain")));
  model.set_train_scope(model.has_adapters() ? TrainScope::adapters : TrainScope::full);
  return losses;
}

}  // namespace w2s
