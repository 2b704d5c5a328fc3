#include "tta/sts.hpp"

#include <charconv>
#include <algorithm>
#include <cmath>
#include <fstream>

#include "tta/parallel.hpp"

namespace tta {

RepresentationSource parse_representation_source(std::string_view name) {
  if (name == "context") return RepresentationSource::context;
  if (name == "embed") return RepresentationSource::embed;
  throw ContractError("unknown representation source '" + std::string(name) + "'");
}

template <typename T>
Vector<double> sentence_rep(std::span<const TokenId> ids, const Model<T>& model,
                            const RepresentationOptions& options) {
  if (ids.size() < 3) throw LengthError("sentence_rep: sentence has no interior token");
  const auto n = static_cast<Eigen::Index>(ids.size());
  const Eigen::Index interior = n - 2;
  Graph<T> graph(false);
  BoundParams<T> bound = bind(graph, model.params, false);

  if (options.source == RepresentationSource::embed) {
    Embedded<T> e = embed(bound, model.config, ids);
    return e.kv_input.value().middleRows(1, interior).template cast<double>().colwise().mean().transpose();
  }
  if (model.config.arch != Architecture::bilm || options.bilm_intact_input) {
    Var<T> hidden = encode(bound, model.config, ids);
    return hidden.value().middleRows(1, interior).template cast<double>().colwise().mean().transpose();
  }
  Vector<double> total = Vector<double>::Zero(model.config.dim);
  std::vector<TokenId> masked(ids.begin(), ids.end());
  for (Eigen::Index i = 1; i + 1 < n; ++i) {
    Graph<T> pass_graph(false);
    BoundParams<T> b = bind(pass_graph, model.params, false);
    const auto pos = static_cast<std::size_t>(i);
    masked[pos] = kMaskId;
    Var<T> hidden = encode(b, model.config, std::span<const TokenId>(masked));
    masked[pos] = ids[pos];
    total += hidden.value().row(i).template cast<double>().transpose();
  }
  return total / static_cast<double>(interior);
}

double cosine(const Vector<double>& u, const Vector<double>& v) {
  if (u.size() != v.size()) {
    throw DimensionError("cosine: vectors of length " + std::to_string(u.size()) + " and " +
                         std::to_string(v.size()));
  }
  const double uu = u.squaredNorm();
  const double vv = v.squaredNorm();
  if (uu == 0 || vv == 0) throw ContractError("cosine: similarity of a zero vector is undefined");
  // Exactly 1 for u == v.
  double denom = std::sqrt(uu * vv);
  if (!std::isfinite(denom) || denom == 0) denom = std::sqrt(uu) * std::sqrt(vv);
  return std::clamp(u.dot(v) / denom, -1.0, 1.0);
}

double pearson(std::span<const double> predicted, std::span<const double> gold) {
  if (predicted.size() != gold.size()) throw ContractError("pearson: series differ in length");
  if (predicted.size() < 2) throw ContractError("pearson: needs at least two points");
  const auto n = static_cast<double>(predicted.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    mx += predicted[i];
    my += gold[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double dx = predicted[i] - mx;
    const double dy = gold[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) throw ContractError("pearson: correlation with a constant series is undefined");
  return sxy / std::sqrt(sxx * syy);
}

template <typename T>
STSResult eval_sts(std::span<const STSPair> dataset, const Model<T>& model, const Vocab& vocab,
                   const RepresentationOptions& options, int threads) {
  if (dataset.empty()) throw ContractError("eval_sts: empty dataset");
  STSResult result;
  result.cosines.resize(dataset.size());
  parallel_for(dataset.size(), threads, [&](std::size_t i) {
    const auto a = encode(dataset[i].sentence_a, vocab, model.config.max_len);
    const auto b = encode(dataset[i].sentence_b, vocab, model.config.max_len);
    result.cosines[i] = cosine(sentence_rep(std::span<const TokenId>(a.ids), model, options),
                               sentence_rep(std::span<const TokenId>(b.ids), model, options));
  });
  std::vector<double> gold;
  for (const auto& p : dataset) gold.push_back(p.gold);
  result.pearson_r = pearson(result.cosines, gold);
  return result;
}

std::vector<STSPair> read_sts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open STS file " + path.string());
  std::vector<STSPair> pairs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
      throw FormatError(where + ": expected score<TAB>sentence_a<TAB>sentence_b");
    }
    STSPair p;
    const auto res = std::from_chars(line.data(), line.data() + t1, p.gold);
    if (res.ec != std::errc() || res.ptr != line.data() + t1 || !std::isfinite(p.gold)) {
      throw FormatError(where + ": bad score '" + line.substr(0, t1) + "'");
    }
    p.sentence_a = line.substr(t1 + 1, t2 - t1 - 1);
    p.sentence_b = line.substr(t2 + 1);
    if (p.sentence_a.empty() || p.sentence_b.empty()) throw FormatError(where + ": empty sentence");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

template Vector<double> sentence_rep(std::span<const TokenId>, const Model<float>&,
                                     const RepresentationOptions&);
template Vector<double> sentence_rep(std::span<const TokenId>, const Model<double>&,
                                     const RepresentationOptions&);
template STSResult eval_sts(std::span<const STSPair>, const Model<float>&, const Vocab&,
                            const RepresentationOptions&, int);
template STSResult eval_sts(std::span<const STSPair>, const Model<double>&, const Vocab&,
                            const RepresentationOptions&, int);

}  // namespace tta
