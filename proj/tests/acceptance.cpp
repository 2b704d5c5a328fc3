// Acceptance harness. `tta_acceptance` runs every criterion; `--criterion k`
// runs one. Each prints a single PASS/FAIL line; the exit status is nonzero
// when any criterion that ran failed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>

#include "test_support.hpp"
#include "tta/bench.hpp"
#include "tta/checkpoint.hpp"
#include "tta/grad_check.hpp"
#include "tta/scoring.hpp"
#include "tta/sts.hpp"
#include "tta/training.hpp"

namespace tta {
namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double x) { return format_number(x); }

// Criteria 1 and 2 share one harness; only the diagonal switch differs.
int self_unknown_violations(bool diag_mask, int instances) {
  Rng rng(20240101);
  const int layer_choices[] = {1, 2, 3}, dim_choices[] = {8, 16, 64}, head_choices[] = {1, 2, 4};
  int violations = 0;
  for (int k = 0; k < instances; ++k) {
    ModelConfig c;
    c.arch = Architecture::tta;
    c.layers = layer_choices[rng() % 3];
    c.dim = dim_choices[rng() % 3];
    c.heads = head_choices[rng() % 3];
    c.ffn_dim = 2 * c.dim;
    c.vocab_size = 20 + static_cast<int>(rng() % 41);
    c.max_len = 16;
    c.dropout = 0;
    c.diag_mask = diag_mask;
    const auto model = test::random_model<double>(c, rng());
    const int n = 3 + static_cast<int>(rng() % 14);
    auto ids = test::random_sentence(n, c.vocab_size, rng);
    const auto i = static_cast<std::size_t>(rng() % static_cast<unsigned>(n));
    const auto before = tta_forward(model, std::span<const TokenId>(ids));
    TokenId replacement = ids[i];
    while (replacement == ids[i]) replacement = static_cast<TokenId>(rng() % static_cast<unsigned>(c.vocab_size));
    ids[i] = replacement;
    const auto after = tta_forward(model, std::span<const TokenId>(ids));
    const auto row = static_cast<Eigen::Index>(i);
    const bool same = (before.hidden.row(row).array() == after.hidden.row(row).array()).all() &&
                      (before.logits.row(row).array() == after.logits.row(row).array()).all();
    violations += !same;
  }
  return violations;
}

Outcome criterion_1() {
  const auto start = Clock::now();
  const int violations = self_unknown_violations(true, 50);
  const double t = seconds_since(start);
  return {violations == 0 && t < 10.0,
          std::to_string(violations) + "/50 instances changed row i under replacement (need 0), " + fmt(t) +
              " s (limit 10 s)"};
}

Outcome criterion_2() {
  const int violations = self_unknown_violations(false, 50);
  return {violations >= 1, "diagonal mask off: " + std::to_string(violations) + "/50 violating instances (need >= 1)"};
}

std::vector<std::vector<TokenId>> uniform_corpus(int sentences, int interior, int vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<TokenId> word(kNumSpecialTokens, vocab - 1);
  std::vector<std::vector<TokenId>> corpus;
  for (int s = 0; s < sentences; ++s) {
    std::vector<TokenId> ids{kBosId};
    for (int k = 0; k < interior; ++k) ids.push_back(word(rng));
    ids.push_back(kEosId);
    corpus.push_back(std::move(ids));
  }
  return corpus;
}

TrainConfig desk_training(Objective objective, int steps, std::uint64_t seed) {
  TrainConfig t;
  t.objective = objective;
  t.total_steps = steps;
  t.warmup_steps = steps / 10;
  t.seed = seed;
  return t;
}

// 12-token sentences: [BOS], 10 words, [EOS]. |V| = 50 counts the 5 specials.
Outcome criterion_3() {
  const auto start = Clock::now();
  constexpr int kVocab = 50;
  const auto corpus = uniform_corpus(2000, 10, kVocab, 31);
  const double ln_v = std::log(static_cast<double>(kVocab));
  double final_loss[2];
  for (bool masked : {true, false}) {
    ModelConfig c = ModelConfig::desk(Architecture::tta, kVocab);
    c.diag_mask = masked;
    Rng init = substream(7, "init");
    Model<float> model{c, ModelParams<float>::init(c, init)};
    const auto result = train(std::span<const std::vector<TokenId>>(corpus), model,
                              desk_training(Objective::lae, 2000, 7));
    // Mean of the last 50 steps smooths batch noise.
    double tail = 0;
    for (std::size_t k = result.curve.size() - 50; k < result.curve.size(); ++k) tail += result.curve[k].loss;
    final_loss[masked ? 0 : 1] = tail / 50;
  }
  const double t = seconds_since(start);
  const bool pass = final_loss[0] >= 0.9 * ln_v && final_loss[1] <= 0.5 * ln_v && t < 600;
  return {pass, "masked final loss " + fmt(final_loss[0]) + " (need >= " + fmt(0.9 * ln_v) +
                    "), unmasked " + fmt(final_loss[1]) + " (need <= " + fmt(0.5 * ln_v) + "), " + fmt(t) +
                    " s (limit 600 s)"};
}

// Cycle grammar: word w is always followed by succ[w], a fixed random cyclic
// permutation of the kCycle words; a sentence starts at a uniform word.
struct CycleGrammar {
  static constexpr int kCycle = 40;
  static constexpr int kVocab = kCycle + kNumSpecialTokens;
  std::vector<TokenId> succ;

  explicit CycleGrammar(std::uint64_t seed) : succ(kVocab, kUnkId) {
    std::vector<TokenId> order(kCycle);
    std::iota(order.begin(), order.end(), kNumSpecialTokens);
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    for (int k = 0; k < kCycle; ++k) succ[static_cast<std::size_t>(order[k])] = order[(k + 1) % kCycle];
  }

  std::vector<TokenId> sentence(int interior, TokenId start) const {
    std::vector<TokenId> ids{kBosId, start};
    for (int k = 1; k < interior; ++k) ids.push_back(succ[static_cast<std::size_t>(ids.back())]);
    ids.push_back(kEosId);
    return ids;
  }

  std::vector<std::vector<TokenId>> sample(int count, std::uint64_t seed) const {
    Rng rng(seed);
    std::uniform_int_distribution<TokenId> start(kNumSpecialTokens, kVocab - 1);
    std::uniform_int_distribution<int> length(8, 12);
    std::vector<std::vector<TokenId>> out;
    for (int s = 0; s < count; ++s) {
      const int n = length(rng);
      out.push_back(sentence(n, start(rng)));
    }
    return out;
  }

  static double unigram_entropy() { return std::log(static_cast<double>(kCycle)); }
};

template <typename T>
Model<T> train_on_grammar(const CycleGrammar& g, Objective objective, int steps) {
  const auto corpus = g.sample(2000, 41);
  ModelConfig c = ModelConfig::desk(architecture_for(objective), CycleGrammar::kVocab);
  c.max_len = 16;
  Rng init = substream(5, "init");
  Model<T> model{c, ModelParams<T>::init(c, init)};
  train(std::span<const std::vector<TokenId>>(corpus), model, desk_training(objective, steps, 5));
  return model;
}

constexpr int kGrammarSteps = 1500;

Outcome criterion_4() {
  const CycleGrammar g(4);
  const auto held_out = g.sample(200, 99);
  const double h = CycleGrammar::unigram_entropy();
  const auto tta = train_on_grammar<float>(g, Objective::lae, kGrammarSteps);
  const auto uni = train_on_grammar<float>(g, Objective::clm, kGrammarSteps);
  const double lae = evaluate_loss(tta, std::span<const std::vector<TokenId>>(held_out));
  const double clm = evaluate_loss(uni, std::span<const std::vector<TokenId>>(held_out));
  return {lae <= 0.3 * h && clm <= 0.5 * h, "held-out T-TA LAE " + fmt(lae) + " (need <= " + fmt(0.3 * h) +
                                                "), uniLM CLM " + fmt(clm) + " (need <= " + fmt(0.5 * h) +
                                                "), unigram entropy " + fmt(h)};
}

Outcome criterion_5() {
  const auto start = Clock::now();
  ModelConfig c = test::tiny_config(Architecture::tta, 13);
  auto model = test::random_model<double>(c, 2, 0.3);
  const std::vector<TokenId> ids{kBosId, 6, 9, 12, 5, kEosId};
  const auto named = model.params.named();
  const auto report = grad_check<double>(
      [&](Graph<double>&, std::span<const Var<double>> leaves) {
        auto b = BoundParams<double>::from_leaves(leaves, model.params.layers.size());
        auto s = lae_nll(b, c, std::span<const TokenId>(ids));
        return scale(s.total, 1.0 / s.count);
      },
      std::span<const NamedTensor<double>>(named), 1e-3);
  const double t = seconds_since(start);
  return {report.max_relative_error < 1e-4 && t < 60,
          "max relative error " + fmt(report.max_relative_error) + " over " +
              std::to_string(report.entries.size()) + " tensors (need < 1e-4), " + fmt(t) + " s (limit 60 s)"};
}

Outcome criterion_6() {
  Rng rng(6);
  std::ostringstream detail;
  bool pass = true;
  for (Architecture a : {Architecture::tta, Architecture::unilm, Architecture::bilm}) {
    ModelConfig c = test::tiny_config(a, 20);
    c.max_len = 16;
    const auto model = test::random_model<double>(c, 6);
    for (int trial = 0; trial < 10; ++trial) {
      const int n = 3 + static_cast<int>(rng() % 14);
      const auto ids = test::random_sentence(n, c.vocab_size, rng);
      reset_forward_pass_counts();
      const auto s = score_sentence(std::span<const TokenId>(ids), model);
      const std::uint64_t expected = a == Architecture::bilm ? static_cast<std::uint64_t>(n - 2) : 1;
      pass = pass && forward_pass_count(a) == expected && s.forward_passes == static_cast<int>(expected);
    }
  }
  detail << "tta 1, unilm 1, bilm n-2 passes per sentence over 10 random lengths each";
  return {pass, detail.str()};
}

Outcome criterion_7() {
  const auto start = Clock::now();
  const std::vector<int> lengths{16, 32, 64, 128};
  TimingOptions options;
  options.reps = 10;
  options.warmup = 1;
  std::ostringstream detail;
  bool pass = true;
  for (BenchTask task : {BenchTask::sts_rep, BenchTask::rerank_score}) {
    std::vector<TimingRow> rows[2];
    int k = 0;
    for (Architecture a : {Architecture::tta, Architecture::bilm}) {
      const ModelConfig c = ModelConfig::paper(a, 2000);
      Rng init = substream(1, "init");
      const Model<float> model{c, ModelParams<float>::init(c, init)};
      rows[k++] = time_scoring(model, task, std::span<const int>(lengths), options);
    }
    const double gap = fit_exponent(rows[1]) - fit_exponent(rows[0]);
    bool monotone = true;
    double previous = 0;
    detail << to_string(task) << ": slope gap " << fmt(gap) << " speedups";
    for (int n : lengths) {
      const double s = speedup(rows[1], rows[0], n);
      monotone = monotone && s > previous;
      previous = s;
      detail << ' ' << fmt(s);
    }
    detail << "; ";
    pass = pass && gap >= 0.7 && monotone;
  }
  const double t = seconds_since(start);
  detail << "need gap >= 0.7 and increasing speedup, " << fmt(t) << " s (limit 900 s)";
  return {pass && t < 900, detail.str()};
}

std::string words_of(const std::vector<TokenId>& ids) {
  std::string s;
  for (std::size_t k = 1; k + 1 < ids.size(); ++k) s += (k > 1 ? " w" : "w") + std::to_string(ids[k]);
  return s;
}

Outcome criterion_8() {
  const CycleGrammar g(4);
  const auto model = train_on_grammar<float>(g, Objective::lae, kGrammarSteps);
  Rng rng(88);
  std::uniform_int_distribution<TokenId> word(kNumSpecialTokens, CycleGrammar::kVocab - 1);
  std::uniform_int_distribution<int> length(8, 12), slot(0, 9);
  std::uniform_real_distribution<double> unit(0, 1), noise(-4, -0.1);
  std::vector<NBestGroup> groups;
  std::vector<std::vector<double>> lm;
  for (int gi = 0; gi < 200; ++gi) {
    const int n = length(rng);
    const auto reference = g.sentence(n, word(rng));
    std::vector<std::vector<TokenId>> hyps{reference};
    while (hyps.size() < 10) {
      auto h = reference;
      const int edits = 1 + static_cast<int>(rng() % 2);
      for (int e = 0; e < edits; ++e) h[static_cast<std::size_t>(1 + rng() % static_cast<unsigned>(n))] = word(rng);
      if (h != reference) hyps.push_back(std::move(h));
    }
    // The s2s top-1 is the reference with probability 0.6.
    const int top = unit(rng) < 0.6 ? 0 : 1 + static_cast<int>(rng() % 9);
    const int position = slot(rng);
    std::swap(hyps[0], hyps[static_cast<std::size_t>(position)]);
    const int top_at = top == 0 ? position : (top == position ? 0 : top);
    NBestGroup group;
    group.id = "g" + std::to_string(gi);
    group.reference = words_of(reference);
    std::vector<double> scores;
    for (int h = 0; h < 10; ++h) {
      group.hypotheses.push_back({words_of(hyps[static_cast<std::size_t>(h)]), h == top_at ? 0.0 : noise(rng)});
      scores.push_back(score_sentence(std::span<const TokenId>(hyps[static_cast<std::size_t>(h)]), model).score);
    }
    groups.push_back(std::move(group));
    lm.push_back(std::move(scores));
  }
  const std::span<const NBestGroup> gs(groups);
  const std::span<const std::vector<double>> ls(lm);
  const double s2s = rerank_metric(gs, ls, 0.0, RerankMetric::accuracy);
  const auto tuned = tune_lambda(gs, ls, RerankMetric::accuracy);

  // Grid oracle: first lambda in grid order with the highest accuracy.
  double oracle_lambda = 0, oracle_best = -1;
  for (int k = 0; k <= 10; ++k) {
    const double lambda = k / 10.0;
    int correct = 0;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      std::size_t best = 0;
      double best_score = -INFINITY;
      for (std::size_t h = 0; h < 10; ++h) {
        const double c = (1 - lambda) * groups[gi].hypotheses[h].s2s_score + lambda * lm[gi][h];
        if (c > best_score) {
          best_score = c;
          best = h;
        }
      }
      correct += groups[gi].hypotheses[best].text == *groups[gi].reference;
    }
    const double accuracy = correct / 200.0;
    if (accuracy > oracle_best) {
      oracle_best = accuracy;
      oracle_lambda = lambda;
    }
  }
  const double gain = tuned.best_metric - s2s;
  const bool pass = gain >= 0.10 && tuned.best_lambda == oracle_lambda && tuned.best_metric == oracle_best;
  return {pass, "s2s-only accuracy " + fmt(s2s) + ", tuned lambda " + fmt(tuned.best_lambda) + " accuracy " +
                    fmt(tuned.best_metric) + " (gain " + fmt(gain) + ", need >= 0.1), grid oracle lambda " +
                    fmt(oracle_lambda)};
}

Outcome criterion_9() {
  // Corpus-level result tables need external datasets and are out of scope;
  // this checks the unit substitutes.
  bool pass = true;
  std::ostringstream detail;
  const std::vector<double> a{1, 2, 3}, b{1, 3, 2};
  const double r = pearson(a, b);
  pass = pass && std::abs(r - 0.5) < 1e-12;
  Vector<double> u(3), v(3);
  u << 1, 2, 3;
  v << 2, 4, 6;
  pass = pass && std::abs(cosine(u, v) - 1.0) < 1e-12 && std::abs(cosine(u, -v) + 1.0) < 1e-12;
  pass = pass && std::abs(word_error_rate("a b c d", "a x c") - 0.5) < 1e-12 &&
         word_error_rate("a b c", "a b c") == 0.0;
  ModelConfig c = test::tiny_config(Architecture::tta, 50);
  Rng rng(9);
  std::vector<std::vector<TokenId>> corpus;
  for (int s = 0; s < 6; ++s) corpus.push_back(test::random_sentence(3 + s, 50, rng));
  for (Architecture arch : {Architecture::tta, Architecture::unilm, Architecture::bilm}) {
    c.arch = arch;
    const Model<double> zero{c, ModelParams<double>::zeros(c)};
    const auto p = pseudo_perplexity(std::span<const std::vector<TokenId>>(corpus), zero);
    pass = pass && p.average == 50.0 && p.median == 50.0;
    detail << to_string(arch) << " pPPL " << fmt(p.average) << '/' << fmt(p.median) << "; ";
  }
  detail << "pearson/cosine/WER oracles at 1e-12; result tables out of scope";
  return {pass, detail.str()};
}

Outcome criterion_10() {
  test::TempDir dir("acceptance");
  const CycleGrammar g(10);
  const auto corpus = g.sample(200, 10);
  ModelConfig c = ModelConfig::desk(Architecture::tta, CycleGrammar::kVocab);
  Rng init = substream(10, "init");
  Model<float> model{c, ModelParams<float>::init(c, init)};
  TrainConfig t = desk_training(Objective::lae, 100, 10);
  t.batch_size = 8;
  train(std::span<const std::vector<TokenId>>(corpus), model, t);
  save_checkpoint(dir / "m.ckpt", model);
  const auto back = load_checkpoint<float>(dir / "m.ckpt");
  const auto held = g.sample(50, 11);
  const double before = evaluate_loss(model, std::span<const std::vector<TokenId>>(held));
  const double after = evaluate_loss(back, std::span<const std::vector<TokenId>>(held));
  return {before == after, "eval loss in memory " + fmt(before) + ", reloaded " + fmt(after) + " (need identical)"};
}

const std::function<Outcome()> kCriteria[] = {criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
                                              criterion_6, criterion_7, criterion_8, criterion_9, criterion_10};

}  // namespace
}  // namespace tta

int main(int argc, char** argv) {
  int only = 0;
  if (argc == 3 && std::string(argv[1]) == "--criterion") only = std::atoi(argv[2]);
  if ((argc != 1 && only == 0) || only < 0 || only > 10) {
    std::cerr << "usage: tta_acceptance [--criterion 1..10]\n";
    return 2;
  }
  bool all_pass = true;
  for (int k = 1; k <= 10; ++k) {
    if (only != 0 && k != only) continue;
    tta::Outcome o{false, ""};
    try {
      o = tta::kCriteria[k - 1]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << "criterion " << k << ' ' << (o.pass ? "PASS" : "FAIL") << ": " << o.detail << std::endl;
    all_pass = all_pass && o.pass;
  }
  return all_pass ? 0 : 1;
}
