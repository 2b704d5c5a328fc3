#include "tta/scoring.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "tta/parallel.hpp"
#include "tta/text.hpp"

namespace tta {
namespace {

void require_interior(std::span<const TokenId> ids) {
  if (ids.size() < 3) {
    throw LengthError("scoring needs at least one token between [BOS] and [EOS], got " +
                      std::to_string(ids.size()) + " ids");
  }
}

ScoredSentence finish(std::span<const TokenId> ids, std::vector<double> log_probs,
                      Aggregation aggregation, Architecture kind, int passes) {
  ScoredSentence s;
  s.ids.assign(ids.begin(), ids.end());
  s.token_log_probs = std::move(log_probs);
  s.aggregation = aggregation;
  s.kind = kind;
  s.forward_passes = passes;
  s.score = aggregation == Aggregation::sum ? s.sum() : s.mean();
  return s;
}

// log softmax(row)[target], evaluated in extended precision.
template <typename T>
long double log_prob_of(const Matrix<T>& logits, Eigen::Index row, TokenId target) {
  const long double m = static_cast<long double>(logits.row(row).maxCoeff());
  long double total = 0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) total += std::exp(static_cast<long double>(logits(row, j)) - m);
  return static_cast<long double>(logits(row, target)) - m - std::log(total);
}

using LogProbs = std::vector<long double>;

template <typename T>
LogProbs tta_log_probs(std::span<const TokenId> ids, const Model<T>& model) {
  require_interior(ids);
  const Matrix<T> logits = tta_forward(model, ids, false).logits;
  LogProbs out;
  for (std::size_t i = 1; i + 1 < ids.size(); ++i) {
    out.push_back(log_prob_of(logits, static_cast<Eigen::Index>(i), ids[i]));
  }
  return out;
}

template <typename T>
LogProbs bilm_log_probs(std::span<const TokenId> ids, const Model<T>& model) {
  require_interior(ids);
  LogProbs out;
  for (std::size_t i = 1; i + 1 < ids.size(); ++i) {
    out.push_back(log_prob_of(bilm_forward(model, ids, static_cast<int>(i)), 0, ids[i]));
  }
  return out;
}

template <typename T>
LogProbs unilm_log_probs(std::span<const TokenId> ids, const Model<T>& model) {
  require_interior(ids);
  const Matrix<T> logits = unilm_forward(model, ids);
  LogProbs out;
  // Slot i predicts token i+1, so interior tokens 1..n-2 come from slots 0..n-3.
  for (std::size_t i = 1; i + 1 < ids.size(); ++i) {
    out.push_back(log_prob_of(logits, static_cast<Eigen::Index>(i - 1), ids[i]));
  }
  return out;
}

template <typename T>
LogProbs interior_log_probs(std::span<const TokenId> ids, const Model<T>& model) {
  switch (model.config.arch) {
    case Architecture::tta: return tta_log_probs(ids, model);
    case Architecture::unilm: return unilm_log_probs(ids, model);
    case Architecture::bilm: return bilm_log_probs(ids, model);
  }
  throw ContractError("scoring: unknown architecture");
}

std::vector<double> rounded(const LogProbs& values) { return {values.begin(), values.end()}; }

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cols;
}

}  // namespace


double ScoredSentence::sum() const {
  return std::accumulate(token_log_probs.begin(), token_log_probs.end(), 0.0);
}

double ScoredSentence::mean() const {
  return token_log_probs.empty() ? 0.0 : sum() / static_cast<double>(token_log_probs.size());
}

template <typename T>
ScoredSentence pll_tta(std::span<const TokenId> ids, const Model<T>& model, Aggregation aggregation) {
  return finish(ids, rounded(tta_log_probs(ids, model)), aggregation, Architecture::tta, 1);
}

template <typename T>
ScoredSentence pll_bilm(std::span<const TokenId> ids, const Model<T>& model, Aggregation aggregation) {
  const LogProbs values = bilm_log_probs(ids, model);
  const int passes = static_cast<int>(values.size());
  return finish(ids, rounded(values), aggregation, Architecture::bilm, passes);
}

template <typename T>
ScoredSentence ll_unilm(std::span<const TokenId> ids, const Model<T>& model, Aggregation aggregation) {
  return finish(ids, rounded(unilm_log_probs(ids, model)), aggregation, Architecture::unilm, 1);
}

template <typename T>
ScoredSentence score_sentence(std::span<const TokenId> ids, const Model<T>& model,
                              Aggregation aggregation) {
  switch (model.config.arch) {
    case Architecture::tta: return pll_tta(ids, model, aggregation);
    case Architecture::unilm: return ll_unilm(ids, model, aggregation);
    case Architecture::bilm: return pll_bilm(ids, model, aggregation);
  }
  throw ContractError("score_sentence: unknown architecture");
}

template <typename T>
std::vector<ScoredSentence> score_corpus(std::span<const std::vector<TokenId>> corpus,
                                         const Model<T>& model, Aggregation aggregation,
                                         int threads) {
  std::vector<ScoredSentence> out(corpus.size());
  parallel_for(corpus.size(), threads, [&](std::size_t i) {
    out[i] = score_sentence(std::span<const TokenId>(corpus[i]), model, aggregation);
  });
  return out;
}

PseudoPerplexity summarize_perplexity(std::span<const double> per_sentence) {
  if (per_sentence.empty()) throw ContractError("pseudo_perplexity: empty corpus");
  std::vector<double> sorted(per_sentence.begin(), per_sentence.end());
  std::sort(sorted.begin(), sorted.end());
  PseudoPerplexity p;
  p.average = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
  const std::size_t mid = sorted.size() / 2;
  p.median = sorted.size() % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  return p;
}

template <typename T>
PseudoPerplexity pseudo_perplexity(std::span<const std::vector<TokenId>> corpus,
                                   const Model<T>& model) {
  std::vector<double> per_sentence;
  for (const auto& ids : corpus) {
    const LogProbs lp = interior_log_probs(std::span<const TokenId>(ids), model);
    const long double mean = std::accumulate(lp.begin(), lp.end(), 0.0L) / static_cast<long double>(lp.size());
    per_sentence.push_back(static_cast<double>(std::exp(-mean)));
  }
  return summarize_perplexity(per_sentence);
}

std::vector<RankedHypothesis> rerank(const NBestGroup& group, std::span<const double> lm_scores,
                                     double lambda) {
  if (lm_scores.size() != group.hypotheses.size()) {
    throw DimensionError("rerank: group '" + group.id + "' has " +
                         std::to_string(group.hypotheses.size()) + " hypotheses but " +
                         std::to_string(lm_scores.size()) + " LM scores");
  }
  if (!(lambda >= 0 && lambda <= 1)) throw ContractError("rerank: lambda must lie in [0,1]");
  std::vector<RankedHypothesis> ranked;
  for (std::size_t i = 0; i < lm_scores.size(); ++i) {
    ranked.push_back({i, (1 - lambda) * group.hypotheses[i].s2s_score + lambda * lm_scores[i], 0});
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.combined > b.combined; });
  for (std::size_t r = 0; r < ranked.size(); ++r) ranked[r].rank = static_cast<int>(r + 1);
  return ranked;
}

int word_edit_distance(const std::string& reference, const std::string& hypothesis) {
  const auto ref = split_words(reference);
  const auto hyp = split_words(hypothesis);
  std::vector<int> prev(hyp.size() + 1), cur(hyp.size() + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const int sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

double word_error_rate(const std::string& reference, const std::string& hypothesis) {
  const auto words = split_words(reference).size();
  if (words == 0) throw ContractError("word_error_rate: empty reference");
  return static_cast<double>(word_edit_distance(reference, hypothesis)) / static_cast<double>(words);
}

double rerank_metric(std::span<const NBestGroup> groups,
                     std::span<const std::vector<double>> lm_scores, double lambda,
                     RerankMetric metric) {
  if (groups.size() != lm_scores.size()) {
    throw DimensionError("rerank_metric: " + std::to_string(groups.size()) + " groups but " +
                         std::to_string(lm_scores.size()) + " score lists");
  }
  if (groups.empty()) throw ContractError("rerank_metric: no groups");
  long errors = 0;
  long words = 0;
  long correct = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const NBestGroup& group = groups[g];
    if (!group.reference) throw ContractError("rerank_metric: group '" + group.id + "' has no reference");
    const auto ranked = rerank(group, lm_scores[g], lambda);
    const std::string& top = group.hypotheses[ranked.front().index].text;
    if (metric == RerankMetric::wer) {
      errors += word_edit_distance(*group.reference, top);
      words += static_cast<long>(split_words(*group.reference).size());
    } else if (split_words(top) == split_words(*group.reference)) {
      ++correct;
    }
  }
  if (metric == RerankMetric::wer) {
    if (words == 0) throw ContractError("rerank_metric: references are empty");
    return static_cast<double>(errors) / static_cast<double>(words);
  }
  return static_cast<double>(correct) / static_cast<double>(groups.size());
}

std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
  return grid;
}

LambdaSearch tune_lambda(std::span<const NBestGroup> groups,
                         std::span<const std::vector<double>> lm_scores, RerankMetric metric,
                         std::vector<double> grid) {
  if (grid.empty()) throw ContractError("tune_lambda: empty grid");
  std::sort(grid.begin(), grid.end());
  LambdaSearch search;
  bool first = true;
  for (double lambda : grid) {
    const double value = rerank_metric(groups, lm_scores, lambda, metric);
    search.evaluated.emplace_back(lambda, value);
    const bool better = metric == RerankMetric::wer ? value < search.best_metric
                                                    : value > search.best_metric;
    if (first || better) {
      search.best_lambda = lambda;
      search.best_metric = value;
      first = false;
    }
  }
  return search;
}

std::vector<NBestGroup> read_nbest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open N-best file " + path.string());
  std::vector<NBestGroup> groups;
  std::unordered_map<std::string, std::size_t> index;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (cols.size() != 3) {
      throw FormatError(where + ": expected 3 tab-separated columns, got " + std::to_string(cols.size()));
    }
    double score = 0;
    const auto res = std::from_chars(cols[1].data(), cols[1].data() + cols[1].size(), score);
    if (res.ec != std::errc() || res.ptr != cols[1].data() + cols[1].size() || !std::isfinite(score)) {
      throw FormatError(where + ": bad score_s2s '" + cols[1] + "'");
    }
    if (cols[2].empty()) throw FormatError(where + ": empty hypothesis");
    auto [it, inserted] = index.emplace(cols[0], groups.size());
    if (inserted) groups.push_back({cols[0], {}, std::nullopt});
    groups[it->second].hypotheses.push_back({cols[2], score});
  }
  return groups;
}

void read_references(const std::filesystem::path& path, std::vector<NBestGroup>& groups) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open reference file " + path.string());
  std::unordered_map<std::string, std::string> refs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    if (cols.size() != 2) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected 2 tab-separated columns, got " + std::to_string(cols.size()));
    }
    refs[cols[0]] = cols[1];
  }
  for (auto& g : groups) {
    auto it = refs.find(g.id);
    if (it != refs.end()) g.reference = it->second;
  }
}

void write_reranked(std::ostream& out, std::span<const NBestGroup> groups,
                    std::span<const std::vector<double>> lm_scores, double lambda) {
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto ranked = rerank(groups[g], lm_scores[g], lambda);
    for (const auto& r : ranked) {
      const Hypothesis& h = groups[g].hypotheses[r.index];
      out << groups[g].id << '\t' << format_number(h.s2s_score) << '\t' << h.text << '\t'
          << format_number(lm_scores[g][r.index]) << '\t' << format_number(r.combined) << '\t'
          << r.rank << '\n';
    }
  }
}

#define TTA_INSTANTIATE_SCORING(T)                                                              \
  template ScoredSentence pll_tta(std::span<const TokenId>, const Model<T>&, Aggregation);      \
  template ScoredSentence pll_bilm(std::span<const TokenId>, const Model<T>&, Aggregation);     \
  template ScoredSentence ll_unilm(std::span<const TokenId>, const Model<T>&, Aggregation);     \
  template ScoredSentence score_sentence(std::span<const TokenId>, const Model<T>&, Aggregation); \
  template std::vector<ScoredSentence> score_corpus(std::span<const std::vector<TokenId>>,      \
                                                    const Model<T>&, Aggregation, int);         \
  template PseudoPerplexity pseudo_perplexity(std::span<const std::vector<TokenId>>, const Model<T>&);

TTA_INSTANTIATE_SCORING(float)
TTA_INSTANTIATE_SCORING(double)

}  // namespace tta
