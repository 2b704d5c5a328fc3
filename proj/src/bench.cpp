#include "tta/bench.hpp"

#include <chrono>
#include <cmath>
#include <ostream>
#include <set>

#include "tta/scoring.hpp"
#include "tta/sts.hpp"

namespace tta {
namespace {

using Clock = std::chrono::steady_clock;

template <typename T>
void run_task(const Model<T>& model, BenchTask task, std::span<const TokenId> ids) {
  if (task == BenchTask::sts_rep) {
    volatile double sink = sentence_rep(ids, model)(0);
    (void)sink;
  } else {
    volatile double sink = score_sentence(ids, model).score;
    (void)sink;
  }
}

}  // namespace

std::string_view to_string(BenchTask task) {
  return task == BenchTask::sts_rep ? "sts" : "rerank";
}

BenchTask parse_bench_task(std::string_view name) {
  if (name == "sts") return BenchTask::sts_rep;
  if (name == "rerank") return BenchTask::rerank_score;
  throw ContractError("unknown bench task '" + std::string(name) + "'");
}

template <typename T>
std::vector<TimingRow> time_scoring(const Model<T>& model, BenchTask task,
                                    std::span<const int> lengths, const TimingOptions& options) {
  if (options.reps < 10) throw ContractError("time_scoring: reps must be >= 10");
  Rng rng = substream(options.seed, "bench");
  std::uniform_int_distribution<TokenId> pick(kNumSpecialTokens, model.config.vocab_size - 1);
  std::vector<TimingRow> rows;
  for (int n : lengths) {
    if (n < 3 || n > model.config.max_len) {
      throw LengthError("time_scoring: length " + std::to_string(n) + " outside [3, max_len]");
    }
    std::vector<TokenId> ids(static_cast<std::size_t>(n));
    ids.front() = kBosId;
    ids.back() = kEosId;
    for (int i = 1; i + 1 < n; ++i) ids[static_cast<std::size_t>(i)] = pick(rng);
    const std::span<const TokenId> view(ids);

    for (int w = 0; w < options.warmup; ++w) run_task(model, task, view);

    // Grow the inner loop until one sample clears the timer floor.
    int inner = 1;
    for (;;) {
      const auto t0 = Clock::now();
      for (int k = 0; k < inner; ++k) run_task(model, task, view);
      const double s = std::chrono::duration<double>(Clock::now() - t0).count();
      if (s >= options.min_sample_s || inner >= (1 << 20)) break;
      inner *= 2;
    }

    std::vector<double> samples;
    for (int r = 0; r < options.reps; ++r) {
      const auto t0 = Clock::now();
      for (int k = 0; k < inner; ++k) run_task(model, task, view);
      samples.push_back(std::chrono::duration<double>(Clock::now() - t0).count() / inner);
    }
    double mean = 0;
    for (double s : samples) mean += s;
    mean /= static_cast<double>(samples.size());
    double var = 0;
    for (double s : samples) var += (s - mean) * (s - mean);
    var /= static_cast<double>(samples.size() - 1);
    rows.push_back({model.config.arch, task, n, options.reps, mean, std::sqrt(var)});
  }
  return rows;
}

double fit_exponent(std::span<const double> lengths, std::span<const double> seconds) {
  if (lengths.size() != seconds.size()) throw ContractError("fit_exponent: series differ in length");
  std::set<double> distinct(lengths.begin(), lengths.end());
  if (distinct.size() < 3) throw ContractError("fit_exponent: needs at least 3 distinct lengths");
  const auto n = static_cast<double>(lengths.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (!(lengths[i] > 0 && seconds[i] > 0)) throw ContractError("fit_exponent: non-positive sample");
    mx += std::log(lengths[i]);
    my += std::log(seconds[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    const double dx = std::log(lengths[i]) - mx;
    sxy += dx * (std::log(seconds[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

double fit_exponent(std::span<const TimingRow> rows) {
  std::vector<double> lengths, seconds;
  for (const auto& r : rows) {
    lengths.push_back(r.n);
    seconds.push_back(r.mean_s);
  }
  return fit_exponent(lengths, seconds);
}

double speedup(std::span<const TimingRow> slow, std::span<const TimingRow> fast, int n) {
  auto find = [n](std::span<const TimingRow> rows) -> const TimingRow& {
    for (const auto& r : rows) {
      if (r.n == n) return r;
    }
    throw ContractError("speedup: no timing at n=" + std::to_string(n));
  };
  return find(slow).mean_s / find(fast).mean_s;
}

void write_timing_csv(std::ostream& out, std::span<const TimingRow> rows) {
  out << "model,task,n,reps,mean_s,std_s\n";
  const auto precision = out.precision(9);
  for (const auto& r : rows) {
    out << to_string(r.model) << ',' << to_string(r.task) << ',' << r.n << ',' << r.reps << ','
        << r.mean_s << ',' << r.std_s << '\n';
  }
  out.precision(precision);
}

template std::vector<TimingRow> time_scoring(const Model<float>&, BenchTask, std::span<const int>,
                                             const TimingOptions&);
template std::vector<TimingRow> time_scoring(const Model<double>&, BenchTask, std::span<const int>,
                                             const TimingOptions&);

}  // namespace tta
