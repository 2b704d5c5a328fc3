#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tta/format.hpp"
#include "tta/model.hpp"

namespace tta {

enum class Aggregation { sum, mean };

/// Per-token log-likelihoods of the interior tokens (BOS/EOS excluded).
struct ScoredSentence {
  std::vector<TokenId> ids;
  std::vector<double> token_log_probs;
  double score = 0;
  Aggregation aggregation = Aggregation::sum;
  Architecture kind = Architecture::tta;
  int forward_passes = 0;

  double sum() const;
  double mean() const;
};

/// Pseudo-log-likelihood from a single T-TA pass.
template <typename T>
ScoredSentence pll_tta(std::span<const TokenId> ids, const Model<T>& model,
                       Aggregation aggregation = Aggregation::sum);

/// Pseudo-log-likelihood by mask-and-predict: one pass per interior token.
template <typename T>
ScoredSentence pll_bilm(std::span<const TokenId> ids, const Model<T>& model,
                        Aggregation aggregation = Aggregation::sum);

/// Chain-rule log-likelihood from a single causal pass.
template <typename T>
ScoredSentence ll_unilm(std::span<const TokenId> ids, const Model<T>& model,
                        Aggregation aggregation = Aggregation::sum);

/// Dispatches on the model's architecture.
template <typename T>
ScoredSentence score_sentence(std::span<const TokenId> ids, const Model<T>& model,
                              Aggregation aggregation = Aggregation::sum);

/// Scores every sentence on up to `threads` workers; results in input order.
template <typename T>
std::vector<ScoredSentence> score_corpus(std::span<const std::vector<TokenId>> corpus,
                                         const Model<T>& model, Aggregation aggregation,
                                         int threads = 1);

struct PseudoPerplexity {
  double average = 0;
  double median = 0;
};

/// Corpus statistics of per-sentence perplexities.
PseudoPerplexity summarize_perplexity(std::span<const double> per_sentence);

/// Per-sentence exp(mean interior NLL), summarized as mean and median.
template <typename T>
PseudoPerplexity pseudo_perplexity(std::span<const std::vector<TokenId>> corpus,
                                   const Model<T>& model);

// ---------------------------------------------------------------------------
// N-best reranking
// ---------------------------------------------------------------------------

struct Hypothesis {
  std::string text;
  double s2s_score = 0;
};

struct NBestGroup {
  std::string id;
  std::vector<Hypothesis> hypotheses;
  std::optional<std::string> reference;
};

struct RankedHypothesis {
  std::size_t index = 0;  // position in the group's hypothesis list
  double combined = 0;
  int rank = 0;           // 1-based
};

/// (1 - lambda) * s2s + lambda * lm, sorted descending; ties keep the
/// original order.
std::vector<RankedHypothesis> rerank(const NBestGroup& group, std::span<const double> lm_scores,
                                     double lambda);

/// Word-level Levenshtein distance on whitespace tokens.
int word_edit_distance(const std::string& reference, const std::string& hypothesis);

/// edit distance / reference length.
double word_error_rate(const std::string& reference, const std::string& hypothesis);

enum class RerankMetric {
  wer,       ///< corpus WER of the top hypotheses, lower is better
  accuracy,  ///< fraction of groups whose top hypothesis is the reference
};

/// Metric of the top-1 hypotheses after reranking with lambda. Every group
/// needs a reference.
double rerank_metric(std::span<const NBestGroup> groups,
                     std::span<const std::vector<double>> lm_scores, double lambda,
                     RerankMetric metric);

struct LambdaSearch {
  double best_lambda = 0;
  double best_metric = 0;
  std::vector<std::pair<double, double>> evaluated;  // (lambda, metric) in grid order
};

/// {0.0, 0.1, ..., 1.0}
std::vector<double> default_lambda_grid();

/// Best lambda on the grid; ties go to the smaller lambda.
LambdaSearch tune_lambda(std::span<const NBestGroup> groups,
                         std::span<const std::vector<double>> lm_scores, RerankMetric metric,
                         std::vector<double> grid = default_lambda_grid());

/// Reads `group_id<TAB>score_s2s<TAB>hypothesis` lines; groups keep first
/// appearance order. Throws FormatError with the line number.
std::vector<NBestGroup> read_nbest(const std::filesystem::path& path);

/// Attaches `group_id<TAB>reference` lines to matching groups.
void read_references(const std::filesystem::path& path, std::vector<NBestGroup>& groups);

/// Writes each group in ranked order, appending score_lm, score_combined
/// and rank to the input columns.
void write_reranked(std::ostream& out, std::span<const NBestGroup> groups,
                    std::span<const std::vector<double>> lm_scores, double lambda);

}  // namespace tta
