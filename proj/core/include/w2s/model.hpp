#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "w2s/autodiff.hpp"
#include "w2s/tokenizer.hpp"

namespace w2s {

/// Where the scalar head reads the final-normalized hidden state.
enum class HeadPooling { last_token, response_mean };

struct AdapterConfig {
  bool enabled = false;
  std::size_t rank = 16;
  double alpha = 16.0;

  double scaling() const { return alpha / static_cast<double>(rank); }
};

struct ModelConfig {
  std::size_t vocab_size = ByteTokenizer::kVocabSize;
  std::size_t d_model = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t max_seq_len = 64;
  std::size_t mlp_ratio = 4;
  AdapterConfig adapter;
  HeadPooling pooling = HeadPooling::last_token;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Which parameters receive gradient during training.
enum class TrainScope {
  /// Adapters and the reward head; the base stays frozen.
  adapters,
  /// Every base parameter and the head. Adapters, if any, stay frozen.
  full,
};

/// One prompt+response token sequence.
struct Sequence {
  std::vector<int> tokens;
  std::size_t prompt_len = 0;
};

/// m_t = 1 iff position t is a response token (t >= prompt_len, 0-based) and
/// not padding. Throws DataError when no position survives.
std::vector<double> response_mask(std::span<const int> tokens, std::size_t prompt_len,
                                  int pad_id = ByteTokenizer::kPadId);

/// Sequences packed row-wise without padding between them.
struct PackedBatch {
  std::vector<int> tokens;
  std::vector<int> positions;
  std::vector<Segment> segments;
  std::vector<double> mask;
  /// Packed row of each sequence's last non-pad token.
  std::vector<std::size_t> last_rows;

  std::size_t sequences() const noexcept { return segments.size(); }
  std::size_t rows() const noexcept { return tokens.size(); }
};

/// Validates every sequence (0 < prompt_len < length <= max_seq_len, at
/// least one response token) and packs them. Throws DataError.
PackedBatch pack_sequences(std::span<const Sequence> sequences, std::size_t max_seq_len,
                           int pad_id = ByteTokenizer::kPadId);

struct ForwardOptions {
  /// Apply adapter deltas (ignored for models without adapters).
  bool adapters = true;
  /// Bind parameters as gradient leaves; otherwise all weights are constants.
  bool track_grad = false;
  /// 1-based block indices whose outputs are returned.
  std::vector<std::size_t> capture_layers;
};

struct ForwardResult {
  /// S x 1 rewards.
  Var rewards;
  /// S x d final-normalized pooled states the head reads.
  Var pooled;
  /// (layer, packed N x d block output) in request order.
  std::vector<std::pair<std::size_t, Var>> hidden;

  /// Throws ContractError when `layer` was not captured.
  Var hidden_at(std::size_t layer) const;
};

struct ScoredSequence {
  double reward = 0.0;
  std::map<std::size_t, Tensor> hidden_states;
  std::vector<double> response_mask;
};

class ModelView;

/// Tiny pre-norm causal transformer with a scalar reward head and optional
/// low-rank adapters on every linear map of every block.
class RewardModel {
 public:
  struct Linear {
    Parameter weight;  // in x out
    Parameter bias;    // 1 x out
    std::optional<Parameter> lora_a;  // in x r
    std::optional<Parameter> lora_b;  // r x out, zero at init
  };
  struct Block {
    Parameter ln1_gain, ln1_bias;
    Linear q, k, v, o;
    Parameter ln2_gain, ln2_bias;
    Linear up, down;
  };

  /// Deterministic initialization from `config.seed`.
  explicit RewardModel(const ModelConfig& config);

  const ModelConfig& config() const noexcept { return config_; }
  bool has_adapters() const noexcept { return config_.adapter.enabled; }

  /// Gradient-tracking forward; trainable parameters become graph leaves.
  ForwardResult forward(Graph& g, const PackedBatch& batch, const ForwardOptions& options);
  /// Inference-only forward; every weight enters the graph as a constant.
  ForwardResult forward(Graph& g, const PackedBatch& batch, const ForwardOptions& options) const;

  /// Read-only scoring view with adapters on or off.
  ModelView view(bool adapters_enabled) const;

  void set_train_scope(TrainScope scope);
  TrainScope train_scope() const noexcept { return scope_; }

  /// Fresh adapters on every linear map: A random-small, B exactly zero.
  void attach_adapters(const AdapterConfig& adapter, std::uint64_t seed);
  /// Re-draws the reward head from `seed`.
  void reset_head(std::uint64_t seed);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::vector<Parameter*> trainable_parameters();
  void zero_grad();
  std::size_t parameter_count() const;

  Parameter& head_weight() { return head_w_; }
  Parameter& head_bias() { return head_b_; }
  const Parameter& head_weight() const { return head_w_; }
  const Parameter& head_bias() const { return head_b_; }
  const std::vector<Block>& blocks() const noexcept { return blocks_; }
  std::vector<Block>& blocks() noexcept { return blocks_; }

 private:
  template <class Self, class Bind>
  static ForwardResult forward_impl(Self& self, Graph& g, const PackedBatch& batch,
                                    const ForwardOptions& options, Bind bind);
  void apply_scope();

  ModelConfig config_;
  TrainScope scope_ = TrainScope::full;
  Parameter tok_emb_;
  Parameter pos_emb_;
  std::vector<Block> blocks_;
  Parameter lnf_gain_, lnf_bias_;
  Parameter head_w_;  // d x 1
  Parameter head_b_;  // 1 x 1
};

/// Non-owning scoring handle over a model with adapters toggled on or off.
/// Toggling never touches parameters.
class ModelView {
 public:
  ModelView(const RewardModel& model, bool adapters_enabled)
      : model_(&model), adapters_(adapters_enabled) {}

  const RewardModel& model() const noexcept { return *model_; }
  bool adapters_enabled() const noexcept { return adapters_; }

  /// Scores one sequence. Requires 0 < prompt_len < tokens.size() <= max_seq_len.
  ScoredSequence score(std::span<const int> tokens, std::size_t prompt_len,
                       const std::vector<std::size_t>& capture_layers = {}) const;
  /// Rewards for many sequences, evaluated in chunks of `chunk` sequences.
  std::vector<double> rewards(std::span<const Sequence> sequences, std::size_t chunk = 256) const;

 private:
  const RewardModel* model_;
  bool adapters_;
};

/// Adapter on/off view. Throws ContractError for a model built without adapters.
ModelView set_adapter_mode(const RewardModel& model, bool enabled);

}  // namespace w2s
