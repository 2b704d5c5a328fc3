#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tta/ops.hpp"
#include "tta/random.hpp"
#include "tta/special_tokens.hpp"
#include "tta/tensor.hpp"

namespace tta {

enum class Architecture { tta, unilm, bilm };

std::string_view to_string(Architecture arch);
Architecture parse_architecture(std::string_view name);

struct ModelConfig {
  int layers = 2;
  int dim = 64;
  int heads = 4;
  int ffn_dim = 256;
  int vocab_size = 2000;
  int max_len = 128;
  double dropout = 0.1;
  Architecture arch = Architecture::tta;
  /// Ablation switch: false turns the diagonal mask into the identity.
  bool diag_mask = true;
  double layer_norm_eps = 1e-12;

  /// Throws ContractError on an inconsistent configuration.
  void validate() const;

  /// Desk-scale defaults: L=2, d=64, h=4, d_f=256.
  static ModelConfig desk(Architecture arch, int vocab_size);
  /// L=3, d=512, h=8, d_f=2048.
  static ModelConfig paper(Architecture arch, int vocab_size);
};

/// Weights of one encoder layer. Weight matrices are (in x out) and act on
/// row vectors; biases, gains are 1 x out.
template <typename P>
struct LayerFields {
  P query_weight, query_bias;
  P key_weight, key_bias;
  P value_weight, value_bias;
  P output_weight, output_bias;
  P attention_norm_gain, attention_norm_bias;
  P ffn_in_weight, ffn_in_bias;
  P ffn_out_weight, ffn_out_bias;
  P ffn_norm_gain, ffn_norm_bias;
};

/// Calls f(name, field) for every field in declaration order.
template <typename Layer, typename F>
void for_each_field(Layer& layer, F&& f) {
  f("query_weight", layer.query_weight);
  f("query_bias", layer.query_bias);
  f("key_weight", layer.key_weight);
  f("key_bias", layer.key_bias);
  f("value_weight", layer.value_weight);
  f("value_bias", layer.value_bias);
  f("output_weight", layer.output_weight);
  f("output_bias", layer.output_bias);
  f("attention_norm_gain", layer.attention_norm_gain);
  f("attention_norm_bias", layer.attention_norm_bias);
  f("ffn_in_weight", layer.ffn_in_weight);
  f("ffn_in_bias", layer.ffn_in_bias);
  f("ffn_out_weight", layer.ffn_out_weight);
  f("ffn_out_bias", layer.ffn_out_bias);
  f("ffn_norm_gain", layer.ffn_norm_gain);
  f("ffn_norm_bias", layer.ffn_norm_bias);
}

template <typename T>
using LayerParams = LayerFields<Matrix<T>>;

/// All learned tensors. The output projection is token_embedding itself
/// (tied); only output_bias is separate.
template <typename T>
struct ModelParams {
  Matrix<T> token_embedding;     // |V| x d
  Matrix<T> position_embedding;  // n_max x d
  Matrix<T> output_bias;         // 1 x |V|
  std::vector<LayerParams<T>> layers;

  /// Truncated normal (std 0.02) weights, zero biases, unit norm gains.
  static ModelParams init(const ModelConfig& config, Rng& rng);
  /// Every weight and bias zero, norm gains one.
  static ModelParams zeros(const ModelConfig& config);

  /// Pointers into this object in a fixed order ("token_embedding",
  /// "position_embedding", "output_bias", "layer0.query_weight", ...).
  std::vector<NamedTensor<T>> named();
  std::size_t parameter_count() const;

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.token_embedding = token_embedding.template cast<U>();
    out.position_embedding = position_embedding.template cast<U>();
    out.output_bias = output_bias.template cast<U>();
    out.layers.resize(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& dst = out.layers[l];
      const auto& src = layers[l];
      dst.query_weight = src.query_weight.template cast<U>();
      dst.query_bias = src.query_bias.template cast<U>();
      dst.key_weight = src.key_weight.template cast<U>();
      dst.key_bias = src.key_bias.template cast<U>();
      dst.value_weight = src.value_weight.template cast<U>();
      dst.value_bias = src.value_bias.template cast<U>();
      dst.output_weight = src.output_weight.template cast<U>();
      dst.output_bias = src.output_bias.template cast<U>();
      dst.attention_norm_gain = src.attention_norm_gain.template cast<U>();
      dst.attention_norm_bias = src.attention_norm_bias.template cast<U>();
      dst.ffn_in_weight = src.ffn_in_weight.template cast<U>();
      dst.ffn_in_bias = src.ffn_in_bias.template cast<U>();
      dst.ffn_out_weight = src.ffn_out_weight.template cast<U>();
      dst.ffn_out_bias = src.ffn_out_bias.template cast<U>();
      dst.ffn_norm_gain = src.ffn_norm_gain.template cast<U>();
      dst.ffn_norm_bias = src.ffn_norm_bias.template cast<U>();
    }
    return out;
  }
};

template <typename T>
struct Model {
  ModelConfig config;
  ModelParams<T> params;
};

template <typename T>
using BoundLayer = LayerFields<Var<T>>;

/// Parameters as graph leaves for one forward/backward.
template <typename T>
struct BoundParams {
  Var<T> token_embedding;
  Var<T> position_embedding;
  Var<T> output_bias;
  std::vector<BoundLayer<T>> layers;

  /// Leaves in the order of ModelParams::named().
  std::vector<Var<T>> all() const;
  /// Inverse of all().
  static BoundParams from_leaves(std::span<const Var<T>> leaves, std::size_t layers);
};

template <typename T>
BoundParams<T> bind(Graph<T>& graph, const ModelParams<T>& params, bool requires_grad);

struct ForwardOptions {
  /// Enables dropout (needs rng when config.dropout > 0).
  bool training = false;
  Rng* rng = nullptr;
  /// Key positions at or beyond this index are padding and get no attention
  /// weight. Negative means the whole sequence is valid.
  int valid_length = -1;
};

template <typename T>
struct LayerTrace {
  Matrix<T> query;                   // Q^l
  std::size_t kv_node = 0;           // graph node fed as key/value input
  std::vector<Matrix<T>> attention;  // per head, n x n
  Matrix<T> attention_output;        // Z^l
  Matrix<T> output;                  // H^l
};

template <typename T>
struct ForwardTrace {
  Matrix<T> kv_input;                // X + P
  std::size_t kv_input_node = 0;
  std::vector<LayerTrace<T>> layers;
  Matrix<T> hidden;                  // H^L
  Matrix<T> logits;                  // n x |V| (empty when not computed)
};

template <typename T>
struct Embedded {
  Var<T> kv_input;    // E[token_i] + P[i]
  Var<T> query_seed;  // P[i] for T-TA, otherwise kv_input
};

/// Throws LengthError unless 2 <= tokens.size() <= max_len.
template <typename T>
Embedded<T> embed(const BoundParams<T>& params, const ModelConfig& config,
                  std::span<const TokenId> tokens);

/// Copy of square `scores` with the diagonal set to kMaskNeg; identity when
/// `enabled` is false.
template <typename T>
Matrix<T> diag_mask(const Matrix<T>& scores, bool enabled = true);

/// Additive n x n mask for the configured architecture: diagonal (T-TA),
/// causal (uniLM) or none (biLM), plus padding keys from valid_length.
template <typename T>
Matrix<T> attention_mask(const ModelConfig& config, Eigen::Index n, int valid_length = -1);

/// Multi-head attention of `query_input` over `kv_input` through one
/// layer's projections, followed by the output projection (Z^l).
template <typename T>
Var<T> dmsa(Var<T> query_input, Var<T> kv_input, const BoundLayer<T>& layer,
            const ModelConfig& config, const Matrix<T>& mask, const ForwardOptions& options,
            std::vector<Matrix<T>>* weights = nullptr);

/// One encoder layer: LayerNorm(Q + attention) then LayerNorm(. + FFN(.)).
/// The residual adds the query input only.
template <typename T>
Var<T> smsan_layer(Var<T> query_input, Var<T> kv_input, const BoundLayer<T>& layer,
                   const ModelConfig& config, const Matrix<T>& mask,
                   const ForwardOptions& options, LayerTrace<T>* trace = nullptr);

/// Runs the encoder stack of the configured architecture and returns H^L.
/// T-TA keeps kv_input fixed across layers and seeds the query stream with
/// P; uniLM and biLM feed each layer's output as its successor's q, k and
/// v. Counts one forward pass.
template <typename T>
Var<T> encode(const BoundParams<T>& params, const ModelConfig& config,
              std::span<const TokenId> tokens, const ForwardOptions& options = {},
              ForwardTrace<T>* trace = nullptr);

/// hidden * E^T + output_bias.
template <typename T>
Var<T> output_logits(const BoundParams<T>& params, Var<T> hidden);

template <typename T>
struct ForwardResult {
  Var<T> hidden;
  Var<T> logits;
};

template <typename T>
ForwardResult<T> tta_forward(const BoundParams<T>& params, const ModelConfig& config,
                             std::span<const TokenId> tokens, const ForwardOptions& options = {},
                             ForwardTrace<T>* trace = nullptr);

/// Causal LM logits, (n-1) x |V|; row i predicts token i+1.
template <typename T>
Var<T> unilm_forward(const BoundParams<T>& params, const ModelConfig& config,
                     std::span<const TokenId> tokens, const ForwardOptions& options = {});

/// Replaces token `position` with [MASK] and returns that row's logits,
/// 1 x |V|. Throws PositionError unless 1 <= position <= n-2.
template <typename T>
Var<T> bilm_forward(const BoundParams<T>& params, const ModelConfig& config,
                    std::span<const TokenId> tokens, int position,
                    const ForwardOptions& options = {});

// Inference conveniences on a whole model (no gradients, dropout off).

template <typename T>
ForwardTrace<T> tta_forward(const Model<T>& model, std::span<const TokenId> tokens,
                            bool capture_trace = true);

template <typename T>
Matrix<T> unilm_forward(const Model<T>& model, std::span<const TokenId> tokens);

template <typename T>
Matrix<T> bilm_forward(const Model<T>& model, std::span<const TokenId> tokens, int position);

/// Number of encoder passes run so far per architecture (all threads).
std::uint64_t forward_pass_count(Architecture arch);
void reset_forward_pass_counts();

}  // namespace tta
