#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tta/model.hpp"
#include "tta/text.hpp"

namespace tta {

struct STSPair {
  std::string sentence_a;
  std::string sentence_b;
  double gold = 0;
};

enum class RepresentationSource {
  context,  ///< final encoder layer H^L
  embed,    ///< embedding layer output X + P
};

RepresentationSource parse_representation_source(std::string_view name);

struct RepresentationOptions {
  RepresentationSource source = RepresentationSource::context;
  /// biLM only: one unmasked pass instead of mask-and-predict.
  bool bilm_intact_input = false;
};

/// Mean of the interior rows (BOS/EOS excluded) of the chosen layer. For a
/// biLM context representation, row i comes from the pass that masks i.
template <typename T>
Vector<double> sentence_rep(std::span<const TokenId> ids, const Model<T>& model,
                            const RepresentationOptions& options = {});

/// u.v / (|u||v|). Throws ContractError for a zero vector.
double cosine(const Vector<double>& u, const Vector<double>& v);

/// Sample Pearson correlation. Throws ContractError for mismatched or short
/// inputs, or when either series is constant.
double pearson(std::span<const double> predicted, std::span<const double> gold);

struct STSResult {
  double pearson_r = 0;
  std::vector<double> cosines;  // in dataset order
};

template <typename T>
STSResult eval_sts(std::span<const STSPair> dataset, const Model<T>& model, const Vocab& vocab,
                   const RepresentationOptions& options = {}, int threads = 1);

/// `score<TAB>sentence_a<TAB>sentence_b` lines. Throws FormatError with the
/// line number.
std::vector<STSPair> read_sts(const std::filesystem::path& path);

}  // namespace tta
