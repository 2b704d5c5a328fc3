#include "tta/model.hpp"

#include <array>
#include <atomic>
#include <numeric>

namespace tta {
namespace {

std::array<std::atomic<std::uint64_t>, 3> g_pass_counts{};

std::size_t arch_index(Architecture arch) { return static_cast<std::size_t>(arch); }

template <typename T>
Matrix<T> truncated_normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(truncated_normal(rng, 0.02));
  return m;
}

template <typename T>
LayerParams<T> zero_layer(const ModelConfig& c) {
  LayerParams<T> layer;
  const Eigen::Index d = c.dim;
  const Eigen::Index f = c.ffn_dim;
  layer.query_weight = Matrix<T>::Zero(d, d);
  layer.key_weight = Matrix<T>::Zero(d, d);
  layer.value_weight = Matrix<T>::Zero(d, d);
  layer.output_weight = Matrix<T>::Zero(d, d);
  layer.query_bias = Matrix<T>::Zero(1, d);
  layer.key_bias = Matrix<T>::Zero(1, d);
  layer.value_bias = Matrix<T>::Zero(1, d);
  layer.output_bias = Matrix<T>::Zero(1, d);
  layer.attention_norm_gain = Matrix<T>::Ones(1, d);
  layer.attention_norm_bias = Matrix<T>::Zero(1, d);
  layer.ffn_in_weight = Matrix<T>::Zero(d, f);
  layer.ffn_in_bias = Matrix<T>::Zero(1, f);
  layer.ffn_out_weight = Matrix<T>::Zero(f, d);
  layer.ffn_out_bias = Matrix<T>::Zero(1, d);
  layer.ffn_norm_gain = Matrix<T>::Ones(1, d);
  layer.ffn_norm_bias = Matrix<T>::Zero(1, d);
  return layer;
}

}  // namespace

std::string_view to_string(Architecture arch) {
  switch (arch) {
    case Architecture::tta: return "tta";
    case Architecture::unilm: return "unilm";
    case Architecture::bilm: return "bilm";
  }
  return "unknown";
}

Architecture parse_architecture(std::string_view name) {
  if (name == "tta") return Architecture::tta;
  if (name == "unilm") return Architecture::unilm;
  if (name == "bilm") return Architecture::bilm;
  throw ContractError("unknown architecture '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (layers < 1) throw ContractError("model: layers must be >= 1");
  if (dim < 1 || heads < 1 || dim % heads != 0) {
    throw ContractError("model: dim " + std::to_string(dim) + " not divisible by heads " +
                        std::to_string(heads));
  }
  if (ffn_dim < 1) throw ContractError("model: ffn_dim must be >= 1");
  if (vocab_size <= kNumSpecialTokens) throw ContractError("model: vocabulary too small");
  if (max_len < 3) throw ContractError("model: max_len must be >= 3");
  if (!(dropout >= 0 && dropout < 1)) throw ContractError("model: dropout must lie in [0,1)");
  if (!(layer_norm_eps > 0)) throw ContractError("model: layer_norm_eps must be positive");
}

ModelConfig ModelConfig::desk(Architecture arch, int vocab_size) {
  ModelConfig c;
  c.arch = arch;
  c.vocab_size = vocab_size;
  return c;
}

ModelConfig ModelConfig::paper(Architecture arch, int vocab_size) {
  ModelConfig c;
  c.arch = arch;
  c.vocab_size = vocab_size;
  c.layers = 3;
  c.dim = 512;
  c.heads = 8;
  c.ffn_dim = 2048;
  return c;
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const ModelConfig& config) {
  config.validate();
  ModelParams<T> p;
  p.token_embedding = Matrix<T>::Zero(config.vocab_size, config.dim);
  p.position_embedding = Matrix<T>::Zero(config.max_len, config.dim);
  p.output_bias = Matrix<T>::Zero(1, config.vocab_size);
  for (int l = 0; l < config.layers; ++l) p.layers.push_back(zero_layer<T>(config));
  return p;
}

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& config, Rng& rng) {
  ModelParams<T> p = zeros(config);
  p.token_embedding = truncated_normal_matrix<T>(config.vocab_size, config.dim, rng);
  p.position_embedding = truncated_normal_matrix<T>(config.max_len, config.dim, rng);
  for (auto& layer : p.layers) {
    for (Matrix<T>* w : {&layer.query_weight, &layer.key_weight, &layer.value_weight,
                         &layer.output_weight, &layer.ffn_in_weight, &layer.ffn_out_weight}) {
      *w = truncated_normal_matrix<T>(w->rows(), w->cols(), rng);
    }
  }
  return p;
}

template <typename T>
std::vector<NamedTensor<T>> ModelParams<T>::named() {
  std::vector<NamedTensor<T>> out{{"token_embedding", &token_embedding},
                                  {"position_embedding", &position_embedding},
                                  {"output_bias", &output_bias}};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    for_each_field(layers[l], [&](const char* name, Matrix<T>& m) {
      out.push_back({prefix + name, &m});
    });
  }
  return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t total = static_cast<std::size_t>(token_embedding.size() + position_embedding.size() +
                                               output_bias.size());
  for (const auto& layer : layers) {
    for_each_field(layer, [&](const char*, const Matrix<T>& m) {
      total += static_cast<std::size_t>(m.size());
    });
  }
  return total;
}

template <typename T>
std::vector<Var<T>> BoundParams<T>::all() const {
  std::vector<Var<T>> out{token_embedding, position_embedding, output_bias};
  for (const auto& layer : layers) {
    for_each_field(layer, [&](const char*, const Var<T>& v) { out.push_back(v); });
  }
  return out;
}

template <typename T>
BoundParams<T> BoundParams<T>::from_leaves(std::span<const Var<T>> leaves, std::size_t layers) {
  constexpr std::size_t kPerLayer = 16;
  if (leaves.size() != 3 + kPerLayer * layers) {
    throw ContractError("from_leaves: expected " + std::to_string(3 + kPerLayer * layers) + " leaves, got " +
                        std::to_string(leaves.size()));
  }
  BoundParams<T> b;
  b.token_embedding = leaves[0];
  b.position_embedding = leaves[1];
  b.output_bias = leaves[2];
  b.layers.resize(layers);
  std::size_t i = 3;
  for (auto& layer : b.layers) {
    for_each_field(layer, [&](const char*, Var<T>& v) { v = leaves[i++]; });
  }
  return b;
}

template <typename T>
BoundParams<T> bind(Graph<T>& graph, const ModelParams<T>& params, bool requires_grad) {
  BoundParams<T> b;
  b.token_embedding = graph.parameter(params.token_embedding, requires_grad);
  b.position_embedding = graph.parameter(params.position_embedding, requires_grad);
  b.output_bias = graph.parameter(params.output_bias, requires_grad);
  b.layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    // Both structs share field names, so visit them in lockstep.
    std::vector<Var<T>*> dst;
    for_each_field(b.layers[l], [&](const char*, Var<T>& v) { dst.push_back(&v); });
    std::size_t i = 0;
    for_each_field(params.layers[l], [&](const char*, const Matrix<T>& m) {
      *dst[i++] = graph.parameter(m, requires_grad);
    });
  }
  return b;
}

template <typename T>
Embedded<T> embed(const BoundParams<T>& params, const ModelConfig& config,
                  std::span<const TokenId> tokens) {
  const auto n = static_cast<int>(tokens.size());
  if (n > config.max_len) {
    throw LengthError("sequence of " + std::to_string(n) + " tokens exceeds max_len " +
                      std::to_string(config.max_len));
  }
  if (n < 2) throw LengthError("sequence needs at least 2 tokens, got " + std::to_string(n));
  std::vector<TokenId> positions(tokens.size());
  std::iota(positions.begin(), positions.end(), 0);
  Var<T> x = gather_rows(params.token_embedding, tokens);
  Var<T> p = gather_rows(params.position_embedding, std::span<const TokenId>(positions));
  Var<T> kv = add(x, p);
  return {kv, config.arch == Architecture::tta ? p : kv};
}

template <typename T>
Matrix<T> diag_mask(const Matrix<T>& scores, bool enabled) {
  if (scores.rows() != scores.cols()) {
    throw DimensionError("diag_mask: scores " + shape_string(scores) + " are not square");
  }
  Matrix<T> out = scores;
  if (enabled) out.diagonal().setConstant(kMaskNeg<T>);
  return out;
}

template <typename T>
Matrix<T> attention_mask(const ModelConfig& config, Eigen::Index n, int valid_length) {
  Matrix<T> mask = Matrix<T>::Zero(n, n);
  switch (config.arch) {
    case Architecture::tta:
      mask = diag_mask(mask, config.diag_mask);
      break;
    case Architecture::unilm:
      mask.template triangularView<Eigen::StrictlyUpper>().setConstant(kMaskNeg<T>);
      break;
    case Architecture::bilm:
      break;
  }
  if (valid_length >= 0 && valid_length < n) {
    mask.rightCols(n - valid_length).setConstant(kMaskNeg<T>);
  }
  return mask;
}

template <typename T>
Var<T> dmsa(Var<T> query_input, Var<T> kv_input, const BoundLayer<T>& layer,
            const ModelConfig& config, const Matrix<T>& mask, const ForwardOptions& options,
            std::vector<Matrix<T>>* weights) {
  Var<T> q = add_row(matmul(query_input, layer.query_weight), layer.query_bias);
  Var<T> k = add_row(matmul(kv_input, layer.key_weight), layer.key_bias);
  Var<T> v = add_row(matmul(kv_input, layer.value_weight), layer.value_bias);
  AttentionOptions<T> attn;
  attn.heads = config.heads;
  attn.weights = weights;
  if (options.training && config.dropout > 0) {
    if (options.rng == nullptr) throw ContractError("training forward needs a dropout rng");
    attn.dropout = static_cast<T>(config.dropout);
    attn.rng = options.rng;
  }
  Var<T> context = attention(q, k, v, mask, attn);
  return add_row(matmul(context, layer.output_weight), layer.output_bias);
}

template <typename T>
Var<T> smsan_layer(Var<T> query_input, Var<T> kv_input, const BoundLayer<T>& layer,
                   const ModelConfig& config, const Matrix<T>& mask,
                   const ForwardOptions& options, LayerTrace<T>* trace) {
  const T eps = static_cast<T>(config.layer_norm_eps);
  Var<T> z = dmsa(query_input, kv_input, layer, config, mask, options,
                  trace ? &trace->attention : nullptr);
  Var<T> y = layer_norm(add(query_input, z), layer.attention_norm_gain, layer.attention_norm_bias, eps);
  Var<T> f = add_row(matmul(gelu(add_row(matmul(y, layer.ffn_in_weight), layer.ffn_in_bias)),
                            layer.ffn_out_weight),
                     layer.ffn_out_bias);
  if (options.training && config.dropout > 0) f = dropout(f, static_cast<T>(config.dropout), *options.rng);
  Var<T> h = layer_norm(add(y, f), layer.ffn_norm_gain, layer.ffn_norm_bias, eps);
  if (trace) {
    trace->query = query_input.value();
    trace->kv_node = kv_input.index();
    trace->attention_output = z.value();
    trace->output = h.value();
  }
  return h;
}

template <typename T>
Var<T> encode(const BoundParams<T>& params, const ModelConfig& config,
              std::span<const TokenId> tokens, const ForwardOptions& options,
              ForwardTrace<T>* trace) {
  Embedded<T> e = embed(params, config, tokens);
  const auto n = static_cast<Eigen::Index>(tokens.size());
  const Matrix<T> mask = attention_mask<T>(config, n, options.valid_length);
  g_pass_counts[arch_index(config.arch)].fetch_add(1, std::memory_order_relaxed);
  if (trace) {
    trace->kv_input = e.kv_input.value();
    trace->kv_input_node = e.kv_input.index();
    trace->layers.assign(params.layers.size(), {});
  }
  Var<T> query = e.query_seed;
  Var<T> kv = e.kv_input;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Var<T> h = smsan_layer(query, kv, params.layers[l], config, mask, options,
                           trace ? &trace->layers[l] : nullptr);
    query = h;
    // Input isolation: only T-TA keeps the embedding output as every layer's K/V.
    if (config.arch != Architecture::tta) kv = h;
  }
  if (trace) trace->hidden = query.value();
  return query;
}

template <typename T>
Var<T> output_logits(const BoundParams<T>& params, Var<T> hidden) {
  return add_row(matmul_nt(hidden, params.token_embedding), params.output_bias);
}

template <typename T>
ForwardResult<T> tta_forward(const BoundParams<T>& params, const ModelConfig& config,
                             std::span<const TokenId> tokens, const ForwardOptions& options,
                             ForwardTrace<T>* trace) {
  if (config.arch != Architecture::tta) throw ContractError("tta_forward on a non-T-TA model");
  Var<T> hidden = encode(params, config, tokens, options, trace);
  Var<T> logits = output_logits(params, hidden);
  if (trace) trace->logits = logits.value();
  return {hidden, logits};
}

template <typename T>
Var<T> unilm_forward(const BoundParams<T>& params, const ModelConfig& config,
                     std::span<const TokenId> tokens, const ForwardOptions& options) {
  if (config.arch != Architecture::unilm) throw ContractError("unilm_forward on a non-uniLM model");
  Var<T> hidden = encode(params, config, tokens, options);
  std::vector<TokenId> slots(tokens.size() - 1);
  std::iota(slots.begin(), slots.end(), 0);
  return output_logits(params, gather_rows(hidden, std::span<const TokenId>(slots)));
}

template <typename T>
Var<T> bilm_forward(const BoundParams<T>& params, const ModelConfig& config,
                    std::span<const TokenId> tokens, int position, const ForwardOptions& options) {
  if (config.arch != Architecture::bilm) throw ContractError("bilm_forward on a non-biLM model");
  const auto n = static_cast<int>(tokens.size());
  if (position < 1 || position > n - 2) {
    throw PositionError("bilm_forward: position " + std::to_string(position) +
                        " is not interior to a sequence of " + std::to_string(n));
  }
  std::vector<TokenId> masked(tokens.begin(), tokens.end());
  masked[static_cast<std::size_t>(position)] = kMaskId;
  Var<T> hidden = encode(params, config, std::span<const TokenId>(masked), options);
  const TokenId row[] = {position};
  return output_logits(params, gather_rows(hidden, std::span<const TokenId>(row)));
}

template <typename T>
ForwardTrace<T> tta_forward(const Model<T>& model, std::span<const TokenId> tokens,
                            bool capture_trace) {
  Graph<T> graph(false);
  BoundParams<T> b = bind(graph, model.params, false);
  ForwardTrace<T> trace;
  ForwardResult<T> r = tta_forward(b, model.config, tokens, {}, capture_trace ? &trace : nullptr);
  if (!capture_trace) {
    trace.hidden = r.hidden.value();
    trace.logits = r.logits.value();
  }
  return trace;
}

template <typename T>
Matrix<T> unilm_forward(const Model<T>& model, std::span<const TokenId> tokens) {
  Graph<T> graph(false);
  BoundParams<T> b = bind(graph, model.params, false);
  return unilm_forward(b, model.config, tokens).value();
}

template <typename T>
Matrix<T> bilm_forward(const Model<T>& model, std::span<const TokenId> tokens, int position) {
  Graph<T> graph(false);
  BoundParams<T> b = bind(graph, model.params, false);
  return bilm_forward(b, model.config, tokens, position).value();
}

std::uint64_t forward_pass_count(Architecture arch) {
  return g_pass_counts[arch_index(arch)].load(std::memory_order_relaxed);
}

void reset_forward_pass_counts() {
  for (auto& c : g_pass_counts) c.store(0, std::memory_order_relaxed);
}

#define TTA_INSTANTIATE_MODEL(T)                                                                  \
  template struct ModelParams<T>;                                                                 \
  template struct BoundParams<T>;                                                                 \
  template BoundParams<T> bind(Graph<T>&, const ModelParams<T>&, bool);                           \
  template Embedded<T> embed(const BoundParams<T>&, const ModelConfig&, std::span<const TokenId>); \
  template Matrix<T> diag_mask(const Matrix<T>&, bool);                                           \
  template Matrix<T> attention_mask<T>(const ModelConfig&, Eigen::Index, int);                    \
  template Var<T> dmsa(Var<T>, Var<T>, const BoundLayer<T>&, const ModelConfig&, const Matrix<T>&, \
                       const ForwardOptions&, std::vector<Matrix<T>>*);                           \
  template Var<T> smsan_layer(Var<T>, Var<T>, const BoundLayer<T>&, const ModelConfig&,           \
                              const Matrix<T>&, const ForwardOptions&, LayerTrace<T>*);           \
  template Var<T> encode(const BoundParams<T>&, const ModelConfig&, std::span<const TokenId>,     \
                         const ForwardOptions&, ForwardTrace<T>*);                                \
  template Var<T> output_logits(const BoundParams<T>&, Var<T>);                                   \
  template ForwardResult<T> tta_forward(const BoundParams<T>&, const ModelConfig&,                \
                                        std::span<const TokenId>, const ForwardOptions&,          \
                                        ForwardTrace<T>*);                                        \
  template Var<T> unilm_forward(const BoundParams<T>&, const ModelConfig&,                        \
                                std::span<const TokenId>, const ForwardOptions&);                 \
  template Var<T> bilm_forward(const BoundParams<T>&, const ModelConfig&,                         \
                               std::span<const TokenId>, int, const ForwardOptions&);             \
  template ForwardTrace<T> tta_forward(const Model<T>&, std::span<const TokenId>, bool);          \
  template Matrix<T> unilm_forward(const Model<T>&, std::span<const TokenId>);                    \
  template Matrix<T> bilm_forward(const Model<T>&, std::span<const TokenId>, int);

TTA_INSTANTIATE_MODEL(float)
TTA_INSTANTIATE_MODEL(double)

}  // namespace tta
