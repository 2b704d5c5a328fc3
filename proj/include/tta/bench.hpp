#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "tta/model.hpp"

namespace tta {

enum class BenchTask {
  sts_rep,       ///< contextual representations H^L of every token
  rerank_score,  ///< per-token log-likelihoods (adds the |V|-wide softmax)
};

std::string_view to_string(BenchTask task);
BenchTask parse_bench_task(std::string_view name);

struct TimingRow {
  Architecture model = Architecture::tta;
  BenchTask task = BenchTask::sts_rep;
  int n = 0;
  int reps = 0;
  double mean_s = 0;
  double std_s = 0;
};

struct TimingOptions {
  int reps = 50;
  int warmup = 3;
  /// A single measurement shorter than this is repeated in an inner loop
  /// until it is not, and the per-call time is reported.
  double min_sample_s = 1e-3;
  std::uint64_t seed = 0;
};

/// Times one scoring task of the model on synthetic sentences of exactly n
/// tokens ([BOS] + n-2 random tokens + [EOS]) for every n in lengths.
/// Warm-up runs are discarded. Throws ContractError when reps < 10.
template <typename T>
std::vector<TimingRow> time_scoring(const Model<T>& model, BenchTask task,
                                    std::span<const int> lengths, const TimingOptions& options = {});

/// Least-squares slope of log(time) against log(n). Throws ContractError
/// with fewer than 3 distinct lengths.
double fit_exponent(std::span<const double> lengths, std::span<const double> seconds);
double fit_exponent(std::span<const TimingRow> rows);

/// mean time of `slow` over mean time of `fast` at the same n and task.
double speedup(std::span<const TimingRow> slow, std::span<const TimingRow> fast, int n);

/// `model,task,n,reps,mean_s,std_s` with a header line.
void write_timing_csv(std::ostream& out, std::span<const TimingRow> rows);

}  // namespace tta
