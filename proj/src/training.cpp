#include "tta/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include "tta/format.hpp"
#include "tta/text.hpp"

namespace tta {
namespace {

constexpr TokenId kSpecialTargets[] = {kPadId, kBosId, kEosId};
constexpr TokenId kPadOnly[] = {kPadId};

int valid_length_of(std::span<const TokenId> tokens, const ForwardOptions& options) {
  return options.valid_length >= 0 ? options.valid_length : static_cast<int>(tokens.size());
}

void require_arch(const ModelConfig& config, Architecture arch, const char* objective) {
  if (config.arch != arch) {
    throw ContractError(std::string(objective) + " objective needs a " + std::string(to_string(arch)) +
                        " model, got " + std::string(to_string(config.arch)));
  }
}

template <typename T>
bool all_finite(ModelParams<T>& params) {
  for (const auto& t : params.named()) {
    if (!t.value->allFinite()) return false;
  }
  return true;
}

}  // namespace

std::string_view to_string(Objective objective) {
  switch (objective) {
    case Objective::lae: return "lae";
    case Objective::clm: return "clm";
    case Objective::mlm: return "mlm";
  }
  return "unknown";
}

Objective parse_objective(std::string_view name) {
  if (name == "lae") return Objective::lae;
  if (name == "clm") return Objective::clm;
  if (name == "mlm") return Objective::mlm;
  throw ContractError("unknown objective '" + std::string(name) + "'");
}

Architecture architecture_for(Objective objective) {
  switch (objective) {
    case Objective::lae: return Architecture::tta;
    case Objective::clm: return Architecture::unilm;
    case Objective::mlm: return Architecture::bilm;
  }
  return Architecture::tta;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ContractError("train: batch_size must be >= 1");
  if (total_steps < 1) throw ContractError("train: total_steps must be >= 1");
  if (warmup_steps < 0 || warmup_steps > total_steps) {
    throw ContractError("train: warmup_steps must lie in [0, total_steps]");
  }
  if (!(peak_lr > 0)) throw ContractError("train: peak_lr must be positive");
  if (!(mlm_mask_rate > 0 && mlm_mask_rate < 1)) throw ContractError("train: mlm_mask_rate must lie in (0,1)");
  if (checkpoint_every < 0) throw ContractError("train: checkpoint_every must be >= 0");
}

double lr_schedule(int step, const TrainConfig& config) {
  if (step <= 0 || step >= config.total_steps) return 0.0;
  if (step < config.warmup_steps) {
    return config.peak_lr * static_cast<double>(step) / config.warmup_steps;
  }
  const double remaining = config.total_steps - step;
  return config.peak_lr * remaining / (config.total_steps - config.warmup_steps);
}

template <typename T>
AdamState<T> AdamState<T>::zeros_like(std::span<const NamedTensor<T>> params) {
  AdamState<T> s;
  for (const auto& p : params) {
    s.first_moment.push_back(Matrix<T>::Zero(p.value->rows(), p.value->cols()));
    s.second_moment.push_back(Matrix<T>::Zero(p.value->rows(), p.value->cols()));
  }
  return s;
}

template <typename T>
void adam_step(std::span<const NamedTensor<T>> params, std::span<const Matrix<T>> grads,
               AdamState<T>& state, double lr, const TrainConfig& config) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " params, " +
                         std::to_string(grads.size()) + " grads, " +
                         std::to_string(state.first_moment.size()) + " moments");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i].value->rows() || grads[i].cols() != params[i].value->cols()) {
      throw DimensionError("adam_step: gradient " + shape_string(grads[i]) + " for parameter " +
                           params[i].name + " " + shape_string(*params[i].value));
    }
    if (!grads[i].allFinite()) throw NumericError("adam_step: non-finite gradient for " + params[i].name);
  }
  ++state.step;
  const T b1 = static_cast<T>(config.beta1);
  const T b2 = static_cast<T>(config.beta2);
  const T correction1 = T(1) - static_cast<T>(std::pow(config.beta1, state.step));
  const T correction2 = T(1) - static_cast<T>(std::pow(config.beta2, state.step));
  const T eps = static_cast<T>(config.adam_eps);
  const T rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix<T>& m = state.first_moment[i];
    Matrix<T>& v = state.second_moment[i];
    m = b1 * m + (T(1) - b1) * grads[i];
    v = b2 * v + (T(1) - b2) * grads[i].cwiseAbs2();
    params[i].value->array() -=
        rate * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
  }
}

template <typename T>
NllSum<T> lae_nll(const BoundParams<T>& params, const ModelConfig& config,
                  std::span<const TokenId> tokens, const ForwardOptions& options) {
  require_arch(config, Architecture::tta, "lae");
  ForwardResult<T> r = tta_forward(params, config, tokens, options);
  return nll_sum(r.logits, tokens, std::span<const TokenId>(kSpecialTargets));
}

template <typename T>
NllSum<T> clm_nll(const BoundParams<T>& params, const ModelConfig& config,
                  std::span<const TokenId> tokens, const ForwardOptions& options) {
  require_arch(config, Architecture::unilm, "clm");
  Var<T> logits = unilm_forward(params, config, tokens, options);
  return nll_sum(logits, tokens.subspan(1), std::span<const TokenId>(kPadOnly));
}

template <typename T>
NllSum<T> mlm_nll(const BoundParams<T>& params, const ModelConfig& config,
                  std::span<const TokenId> tokens, double mask_rate, Rng& masking,
                  const ForwardOptions& options) {
  require_arch(config, Architecture::bilm, "mlm");
  const int n = valid_length_of(tokens, options);
  const int interior = n - 2;
  if (interior < 1) throw LengthError("mlm: sequence has no interior token");
  const int count = std::min(interior, static_cast<int>(std::ceil(mask_rate * interior)));
  std::vector<int> positions(static_cast<std::size_t>(interior));
  std::iota(positions.begin(), positions.end(), 1);
  std::shuffle(positions.begin(), positions.end(), masking);

  std::vector<TokenId> input(tokens.begin(), tokens.end());
  std::vector<TokenId> targets(tokens.size(), kPadId);
  for (int k = 0; k < count; ++k) {
    const auto p = static_cast<std::size_t>(positions[static_cast<std::size_t>(k)]);
    targets[p] = tokens[p];
    input[p] = kMaskId;
  }
  Var<T> hidden = encode(params, config, std::span<const TokenId>(input), options);
  Var<T> logits = output_logits(params, hidden);
  return nll_sum(logits, std::span<const TokenId>(targets), std::span<const TokenId>(kPadOnly));
}

template <typename T>
T lae_loss(const ForwardTrace<T>& trace, std::span<const TokenId> tokens) {
  if (trace.logits.rows() != static_cast<Eigen::Index>(tokens.size())) {
    throw DimensionError("lae_loss: trace logits " + shape_string(trace.logits) + " for " +
                         std::to_string(tokens.size()) + " tokens");
  }
  Graph<T> graph(false);
  Var<T> logits = graph.leaf(trace.logits);
  return cross_entropy(logits, tokens, std::span<const TokenId>(kSpecialTargets)).value()(0, 0);
}

template <typename T>
T lae_loss(const Model<T>& model, std::span<const TokenId> tokens) {
  return lae_loss(tta_forward(model, tokens, false), tokens);
}

template <typename T>
T clm_loss(const Model<T>& model, std::span<const TokenId> tokens) {
  Graph<T> graph(false);
  NllSum<T> s = clm_nll(bind(graph, model.params, false), model.config, tokens);
  return s.total.value()(0, 0) / static_cast<T>(s.count);
}

template <typename T>
T mlm_loss(const Model<T>& model, std::span<const TokenId> tokens, double mask_rate, Rng& masking) {
  Graph<T> graph(false);
  NllSum<T> s = mlm_nll(bind(graph, model.params, false), model.config, tokens, mask_rate, masking);
  return s.total.value()(0, 0) / static_cast<T>(s.count);
}

template <typename T>
double evaluate_loss(const Model<T>& model, std::span<const std::vector<TokenId>> corpus,
                     std::uint64_t seed, double mlm_mask_rate) {
  Rng masking = substream(seed, "masking");
  double total = 0;
  long count = 0;
  for (const auto& tokens : corpus) {
    Graph<T> graph(false);
    BoundParams<T> b = bind(graph, model.params, false);
    NllSum<T> s;
    switch (model.config.arch) {
      case Architecture::tta: s = lae_nll(b, model.config, std::span<const TokenId>(tokens)); break;
      case Architecture::unilm: s = clm_nll(b, model.config, std::span<const TokenId>(tokens)); break;
      case Architecture::bilm:
        s = mlm_nll(b, model.config, std::span<const TokenId>(tokens), mlm_mask_rate, masking);
        break;
    }
    total += static_cast<double>(s.total.value()(0, 0));
    count += s.count;
  }
  if (count == 0) throw ContractError("evaluate_loss: nothing to predict");
  return total / static_cast<double>(count);
}

template <typename T>
TrainResult train(std::span<const std::vector<TokenId>> corpus, Model<T>& model,
                  const TrainConfig& config, const CheckpointHook<T>& on_checkpoint) {
  config.validate();
  model.config.validate();
  if (architecture_for(config.objective) != model.config.arch) {
    throw ContractError("train: objective " + std::string(to_string(config.objective)) +
                        " does not match a " + std::string(to_string(model.config.arch)) + " model");
  }
  TrainResult result;
  std::vector<const std::vector<TokenId>*> usable;
  for (const auto& s : corpus) {
    if (static_cast<int>(s.size()) > model.config.max_len || s.size() < 3) {
      ++result.skipped;
    } else {
      usable.push_back(&s);
    }
  }
  if (usable.empty()) throw ContractError("train: empty corpus");
  if (result.skipped > 0) {
    std::cerr << "warning: skipped " << result.skipped << " sentence(s) outside [3, "
              << model.config.max_len << "] tokens\n";
  }

  Rng shuffle_rng = substream(config.seed, "shuffle");
  Rng masking_rng = substream(config.seed, "masking");
  Rng dropout_rng = substream(config.seed, "dropout");

  std::vector<NamedTensor<T>> named = model.params.named();
  AdamState<T> adam = AdamState<T>::zeros_like(named);
  std::vector<std::size_t> order(usable.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  ForwardOptions options;
  options.training = true;
  options.rng = &dropout_rng;

  for (int step = 1; step <= config.total_steps; ++step) {
    std::vector<std::vector<TokenId>> rows;
    int pad_to = 0;
    for (int b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        cursor = 0;
      }
      rows.push_back(*usable[order[cursor++]]);
      pad_to = std::max(pad_to, static_cast<int>(rows.back().size()));
    }
    PaddedBatch padded = batch(std::span<const std::vector<TokenId>>(rows), pad_to);

    Graph<T> graph(true);
    BoundParams<T> bound = bind(graph, model.params, true);
    Var<T> total;
    int count = 0;
    for (std::size_t r = 0; r < padded.ids.size(); ++r) {
      options.valid_length = padded.lengths[r];
      std::span<const TokenId> ids(padded.ids[r]);
      NllSum<T> s;
      switch (config.objective) {
        case Objective::lae: s = lae_nll(bound, model.config, ids, options); break;
        case Objective::clm: s = clm_nll(bound, model.config, ids, options); break;
        case Objective::mlm:
          s = mlm_nll(bound, model.config, ids, config.mlm_mask_rate, masking_rng, options);
          break;
      }
      total = r == 0 ? s.total : add(total, s.total);
      count += s.count;
    }
    Var<T> loss = scale(total, T(1) / static_cast<T>(count));
    graph.backward(loss);

    std::vector<Matrix<T>> grads;
    double norm_sq = 0;
    for (const Var<T>& v : bound.all()) {
      grads.push_back(graph.grad(v));
      norm_sq += static_cast<double>(grads.back().squaredNorm());
    }
    const double norm = std::sqrt(norm_sq);
    if (config.clip_norm > 0 && norm > config.clip_norm) {
      const T factor = static_cast<T>(config.clip_norm / norm);
      for (auto& g : grads) g *= factor;
    }
    const double lr = lr_schedule(step, config);
    adam_step(std::span<const NamedTensor<T>>(named), std::span<const Matrix<T>>(grads), adam, lr,
              config);
    result.curve.push_back({step, static_cast<double>(loss.value()(0, 0)), lr});

    const bool last = step == config.total_steps;
    if ((config.checkpoint_every > 0 && step % config.checkpoint_every == 0) || last) {
      if (!all_finite(model.params)) {
        throw NumericError("train: non-finite parameters at step " + std::to_string(step));
      }
      if (on_checkpoint) on_checkpoint(step, model);
    }
  }
  return result;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const LossPoint> curve) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "step,loss,lr\n";
  for (const auto& p : curve) out << p.step << ',' << format_number(p.loss) << ',' << format_number(p.lr) << '\n';
}

#define TTA_INSTANTIATE_TRAINING(T)                                                              \
  template struct AdamState<T>;                                                                  \
  template void adam_step(std::span<const NamedTensor<T>>, std::span<const Matrix<T>>,           \
                          AdamState<T>&, double, const TrainConfig&);                            \
  template NllSum<T> lae_nll(const BoundParams<T>&, const ModelConfig&, std::span<const TokenId>, \
                             const ForwardOptions&);                                             \
  template NllSum<T> clm_nll(const BoundParams<T>&, const ModelConfig&, std::span<const TokenId>, \
                             const ForwardOptions&);                                             \
  template NllSum<T> mlm_nll(const BoundParams<T>&, const ModelConfig&, std::span<const TokenId>, \
                             double, Rng&, const ForwardOptions&);                               \
  template T lae_loss(const ForwardTrace<T>&, std::span<const TokenId>);                         \
  template T lae_loss(const Model<T>&, std::span<const TokenId>);                                \
  template T clm_loss(const Model<T>&, std::span<const TokenId>);                                \
  template T mlm_loss(const Model<T>&, std::span<const TokenId>, double, Rng&);                  \
  template double evaluate_loss(const Model<T>&, std::span<const std::vector<TokenId>>,          \
                                std::uint64_t, double);                                          \
  template TrainResult train(std::span<const std::vector<TokenId>>, Model<T>&, const TrainConfig&, \
                             const CheckpointHook<T>&);

TTA_INSTANTIATE_TRAINING(float)
TTA_INSTANTIATE_TRAINING(double)

}  // namespace tta
