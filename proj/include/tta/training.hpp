#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "tta/model.hpp"

namespace tta {

/// lae trains T-TA, clm trains uniLM, mlm trains biLM.
enum class Objective { lae, clm, mlm };

std::string_view to_string(Objective objective);
Objective parse_objective(std::string_view name);
Architecture architecture_for(Objective objective);

struct TrainConfig {
  Objective objective = Objective::lae;
  int batch_size = 32;
  int total_steps = 2000;
  int warmup_steps = 200;
  double peak_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  double mlm_mask_rate = 0.15;
  /// 0 disables periodic checkpoints.
  int checkpoint_every = 0;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 1.0;

  void validate() const;
};

/// Linear warmup 0 -> peak over warmup_steps, then linear decay to 0 at
/// total_steps. Steps past total_steps give 0.
double lr_schedule(int step, const TrainConfig& config);

template <typename T>
struct AdamState {
  std::vector<Matrix<T>> first_moment;
  std::vector<Matrix<T>> second_moment;
  long step = 0;

  static AdamState zeros_like(std::span<const NamedTensor<T>> params);
};

/// One bias-corrected Adam update in place. Throws NumericError naming the
/// parameter when a gradient is not finite.
template <typename T>
void adam_step(std::span<const NamedTensor<T>> params, std::span<const Matrix<T>> grads,
               AdamState<T>& state, double lr, const TrainConfig& config);

// Objectives on a graph. Each returns the summed NLL and the number of
// predicted tokens, so batches can be normalized over all their tokens.
// `valid_length` marks trailing [PAD] (negative: none).

/// Targets are the unmodified input tokens at interior positions.
template <typename T>
NllSum<T> lae_nll(const BoundParams<T>& params, const ModelConfig& config,
                  std::span<const TokenId> tokens, const ForwardOptions& options = {});

/// Slot i predicts token i+1, including the final [EOS].
template <typename T>
NllSum<T> clm_nll(const BoundParams<T>& params, const ModelConfig& config,
                  std::span<const TokenId> tokens, const ForwardOptions& options = {});

/// Masks ceil(rate * interior) interior positions, sampled without
/// replacement, and predicts only those.
template <typename T>
NllSum<T> mlm_nll(const BoundParams<T>& params, const ModelConfig& config,
                  std::span<const TokenId> tokens, double mask_rate, Rng& masking,
                  const ForwardOptions& options = {});

/// LAE loss from a captured forward trace (mean NLL over interior tokens).
template <typename T>
T lae_loss(const ForwardTrace<T>& trace, std::span<const TokenId> tokens);

template <typename T>
T lae_loss(const Model<T>& model, std::span<const TokenId> tokens);

template <typename T>
T clm_loss(const Model<T>& model, std::span<const TokenId> tokens);

template <typename T>
T mlm_loss(const Model<T>& model, std::span<const TokenId> tokens, double mask_rate, Rng& masking);

/// Token-weighted mean loss of the model's own objective over a corpus,
/// dropout off. The mlm masks come from `seed`.
template <typename T>
double evaluate_loss(const Model<T>& model, std::span<const std::vector<TokenId>> corpus,
                     std::uint64_t seed = 0, double mlm_mask_rate = 0.15);

struct LossPoint {
  int step;
  double loss;
  double lr;
};

struct TrainResult {
  std::vector<LossPoint> curve;
  /// Sentences dropped because they are shorter than 3 tokens or exceed max_len.
  int skipped = 0;
};

template <typename T>
using CheckpointHook = std::function<void(int step, const Model<T>& model)>;

/// Runs total_steps minibatch updates on `model`. Each epoch visits the
/// corpus in a fresh seeded permutation; a batch is padded to its longest
/// sentence. Results are bit-reproducible for a fixed seed within a build.
template <typename T>
TrainResult train(std::span<const std::vector<TokenId>> corpus, Model<T>& model,
                  const TrainConfig& config, const CheckpointHook<T>& on_checkpoint = {});

/// `step,loss,lr` with a header line.
void write_loss_csv(const std::filesystem::path& path, std::span<const LossPoint> curve);

}  // namespace tta
