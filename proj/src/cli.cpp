#include "tta/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <climits>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "tta/bench.hpp"
#include "tta/checkpoint.hpp"
#include "tta/scoring.hpp"
#include "tta/sts.hpp"
#include "tta/text.hpp"
#include "tta/training.hpp"

namespace tta::cli {
namespace {

constexpr const char* kVocabHelp =
    "Corpus: UTF-8 text, one sentence per line; blank lines are skipped.\n"
    "Vocab file: one token per line, line number = id, specials first:\n"
    "  [PAD] [BOS] [EOS] [MASK] [UNK]\n";

constexpr const char* kTrainHelp =
    "Corpus: UTF-8 text, one sentence per line.\n"
    "Loss CSV: step,loss,lr\n"
    "Checkpoint: 'tta-checkpoint v1' line, a 'config ...' line, one\n"
    "  'tensor <name> f32 <rows> <cols>' line per tensor, a blank line, then\n"
    "  raw little-endian float32 data in header order.\n";

constexpr const char* kScoreHelp =
    "Input: UTF-8 text, one sentence per line.\n"
    "Output TSV: sum<TAB>mean<TAB>n<TAB>sentence, where n counts the scored\n"
    "  tokens ([BOS]/[EOS] excluded).\n";

constexpr const char* kRerankHelp =
    "N-best file: group_id<TAB>score_s2s<TAB>hypothesis_text\n"
    "Reference file: group_id<TAB>reference_text\n"
    "Output: group_id<TAB>score_s2s<TAB>hypothesis_text<TAB>score_lm<TAB>score_combined<TAB>rank\n"
    "  with score_combined = (1 - lambda) * score_s2s + lambda * score_lm.\n";

constexpr const char* kStsHelp =
    "Input TSV: score<TAB>sentence_a<TAB>sentence_b\n"
    "Output: pearson_r=<value>; per-pair CSV: cosine,gold\n";

constexpr const char* kBenchHelp =
    "Output CSV: model,task,n,reps,mean_s,std_s\n"
    "Summary: one line per task with fitted log-log slopes and bilm/tta speedups.\n";

struct Common {
  std::string vocab;
  std::string mode = "word";
  std::string checkpoint;
  int threads = 1;
};

struct VocabArgs {
  std::string corpus, output, mode = "word";
  int max_size = 2000;
};

struct TrainArgs {
  std::string corpus, vocab, mode = "word", output, loss_csv, objective = "lae", init = "normal";
  ModelConfig model;
  TrainConfig train;
};

struct ScoreArgs {
  Common common;
  std::string input, output, aggregation = "sum";
  bool summary = false;
};

struct RerankArgs {
  Common common;
  std::string nbest, references, output, metric = "wer", aggregation = "sum";
  double lambda = 0.5;
  bool tune = false;
};

struct StsArgs {
  Common common;
  std::string data, source = "context", pairs_csv;
  bool bilm_intact = false;
};

struct BenchArgs {
  std::vector<std::string> models{"tta", "unilm", "bilm"};
  std::vector<std::string> tasks{"sts", "rerank"};
  std::vector<int> lengths{16, 32, 64, 128};
  int reps = 50;
  int warmup = 3;
  int vocab_size = 2000;
  std::string scale = "paper", output;
  std::uint64_t seed = 0;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--checkpoint", c.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  sub->add_option("--vocab", c.vocab, "vocab file")->required()->check(CLI::ExistingFile);
  sub->add_option("--mode", c.mode, "tokenizer: word or char")->check(CLI::IsMember({"word", "char"}));
  sub->add_option("--threads", c.threads, "scoring workers")->check(CLI::PositiveNumber);
}

Aggregation parse_aggregation(const std::string& name) {
  return name == "mean" ? Aggregation::mean : Aggregation::sum;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path);
  return f;
}

/// The subcommand's resolved options, defaults included, in CLI11's config
/// syntax so that `--config <manifest>` replays the run.
void write_manifest(const CLI::App& app, const CLI::App& sub, const std::string& output) {
  if (output.empty()) return;
  std::istringstream all(app.config_to_str(true, false));
  std::ostringstream kept;
  kept << "# command=" << sub.get_name() << '\n';
  const std::string prefix = sub.get_name() + ".";
  for (std::string line; std::getline(all, line);) {
    if (line.rfind(prefix, 0) == 0) kept << line << '\n';
  }
  auto f = open_output(output + ".manifest");
  f << kept.str();
}

std::vector<std::vector<TokenId>> encode_lines(std::span<const std::string> lines, const Vocab& vocab,
                                               int max_len) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      out.push_back(encode(lines[i], vocab, max_len).ids);
    } catch (const Error& e) {
      throw Error("sentence " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

int run_vocab(const VocabArgs& a, std::ostream& out) {
  const auto lines = read_corpus(a.corpus);
  const Vocab vocab = Vocab::build(lines, parse_tokenizer_mode(a.mode), a.max_size);
  vocab.save(a.output);
  out << "vocab_size=" << vocab.size() << '\n';
  return 0;
}

int run_train(TrainArgs a, std::ostream& out) {
  const Vocab vocab = Vocab::load(a.vocab, parse_tokenizer_mode(a.mode));
  a.train.objective = parse_objective(a.objective);
  a.model.arch = architecture_for(a.train.objective);
  a.model.vocab_size = vocab.size();
  a.model.validate();
  a.train.validate();

  // Over-long sentences are dropped by train() itself, so encode without a cap.
  const auto corpus = encode_lines(read_corpus(a.corpus), vocab, INT_MAX);
  Model<float> model{a.model, {}};
  if (a.init == "zero") {
    model.params = ModelParams<float>::zeros(a.model);
  } else {
    Rng init = substream(a.train.seed, "init");
    model.params = ModelParams<float>::init(a.model, init);
  }
  CheckpointHook<float> hook;
  if (a.train.checkpoint_every > 0) {
    hook = [&](int step, const Model<float>& m) {
      save_checkpoint(a.output + ".step" + std::to_string(step), m);
    };
  }
  const TrainResult result = train(std::span<const std::vector<TokenId>>(corpus), model, a.train, hook);
  save_checkpoint(a.output, model);
  write_loss_csv(a.loss_csv.empty() ? a.output + ".loss.csv" : a.loss_csv, result.curve);
  out << "final_loss=" << format_number(result.curve.back().loss) << '\n';
  return 0;
}

int run_score(const ScoreArgs& a, std::ostream& out) {
  const Vocab vocab = Vocab::load(a.common.vocab, parse_tokenizer_mode(a.common.mode));
  const Model<float> model = load_checkpoint<float>(a.common.checkpoint);
  const auto lines = read_corpus(a.input);
  const auto corpus = encode_lines(lines, vocab, model.config.max_len);
  const auto scored = score_corpus(std::span<const std::vector<TokenId>>(corpus), model,
                                   parse_aggregation(a.aggregation), a.common.threads);
  std::ofstream file;
  if (!a.output.empty()) file = open_output(a.output);
  std::ostream& dst = a.output.empty() ? out : file;
  dst << "sum\tmean\tn\tsentence\n";
  std::vector<double> ppl;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    const auto& s = scored[i];
    dst << format_number(s.sum()) << '\t' << format_number(s.mean()) << '\t'
        << s.token_log_probs.size() << '\t' << lines[i] << '\n';
    ppl.push_back(std::exp(-s.mean()));
  }
  if (a.summary) {
    const auto p = summarize_perplexity(ppl);
    out << "ppl_average=" << format_number(p.average) << " ppl_median=" << format_number(p.median) << '\n';
  }
  return 0;
}

int run_rerank(const RerankArgs& a, std::ostream& out, std::ostream& err) {
  if (a.tune && a.references.empty()) throw ContractError("--tune-lambda needs --references");
  if (a.lambda < 0 || a.lambda > 1) throw ContractError("--lambda must lie in [0, 1]");
  const Vocab vocab = Vocab::load(a.common.vocab, parse_tokenizer_mode(a.common.mode));
  const Model<float> model = load_checkpoint<float>(a.common.checkpoint);
  auto groups = read_nbest(a.nbest);
  if (!a.references.empty()) read_references(a.references, groups);

  std::vector<std::vector<TokenId>> flat;
  for (const auto& g : groups) {
    for (const auto& h : g.hypotheses) {
      try {
        flat.push_back(encode(h.text, vocab, model.config.max_len).ids);
      } catch (const Error& e) {
        throw Error("group " + g.id + ": " + e.what());
      }
    }
  }
  const auto scored = score_corpus(std::span<const std::vector<TokenId>>(flat), model,
                                   parse_aggregation(a.aggregation), a.common.threads);
  std::vector<std::vector<double>> lm(groups.size());
  std::size_t k = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t h = 0; h < groups[g].hypotheses.size(); ++h) lm[g].push_back(scored[k++].score);
  }

  std::ostream& report = a.output.empty() ? err : out;
  double lambda = a.lambda;
  const RerankMetric metric = a.metric == "accuracy" ? RerankMetric::accuracy : RerankMetric::wer;
  if (a.tune) {
    const auto search = tune_lambda(groups, lm, metric);
    lambda = search.best_lambda;
    report << "lambda=" << format_number(lambda) << ' ' << a.metric << '='
           << format_number(search.best_metric) << '\n';
  } else if (!a.references.empty()) {
    report << "lambda=" << format_number(lambda) << ' ' << a.metric << '='
           << format_number(rerank_metric(groups, lm, lambda, metric)) << '\n';
  }
  if (!a.references.empty()) {
    report << "s2s_only " << a.metric << '=' << format_number(rerank_metric(groups, lm, 0.0, metric)) << '\n';
  }
  if (a.output.empty()) {
    write_reranked(out, groups, lm, lambda);
  } else {
    auto f = open_output(a.output);
    write_reranked(f, groups, lm, lambda);
  }
  return 0;
}

int run_sts(const StsArgs& a, std::ostream& out) {
  const Vocab vocab = Vocab::load(a.common.vocab, parse_tokenizer_mode(a.common.mode));
  const Model<float> model = load_checkpoint<float>(a.common.checkpoint);
  const auto data = read_sts(a.data);
  RepresentationOptions options{parse_representation_source(a.source), a.bilm_intact};
  const auto result = eval_sts(std::span<const STSPair>(data), model, vocab, options, a.common.threads);
  if (!a.pairs_csv.empty()) {
    auto f = open_output(a.pairs_csv);
    f << "cosine,gold\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
      f << format_number(result.cosines[i]) << ',' << format_number(data[i].gold) << '\n';
    }
  }
  out << "pearson_r=" << format_number(result.pearson_r) << '\n';
  return 0;
}

constexpr int kStandardLength = 20;

int run_bench(const BenchArgs& a, std::ostream& out) {
  std::vector<int> timed = a.lengths;
  if (std::find(timed.begin(), timed.end(), kStandardLength) == timed.end()) timed.push_back(kStandardLength);
  std::sort(timed.begin(), timed.end());

  TimingOptions options;
  options.reps = a.reps;
  options.warmup = a.warmup;
  options.seed = a.seed;

  std::vector<TimingRow> all;
  std::map<std::pair<std::string, std::string>, std::vector<TimingRow>> by_key;
  for (const auto& m : a.models) {
    const Architecture arch = parse_architecture(m);
    ModelConfig config = a.scale == "desk" ? ModelConfig::desk(arch, a.vocab_size)
                                           : ModelConfig::paper(arch, a.vocab_size);
    config.max_len = std::max(config.max_len, timed.back());
    Rng init = substream(a.seed, "init");
    const Model<float> model{config, ModelParams<float>::init(config, init)};
    for (const auto& t : a.tasks) {
      auto rows = time_scoring(model, parse_bench_task(t), std::span<const int>(timed), options);
      all.insert(all.end(), rows.begin(), rows.end());
      by_key[{m, t}] = std::move(rows);
    }
  }

  if (a.output.empty()) {
    write_timing_csv(out, all);
  } else {
    auto f = open_output(a.output);
    write_timing_csv(f, all);
  }

  // Slopes use the requested sweep only; n=20 is reported but not fitted.
  auto sweep = [&](const std::vector<TimingRow>& rows) {
    std::vector<TimingRow> kept;
    for (const auto& r : rows) {
      if (std::find(a.lengths.begin(), a.lengths.end(), r.n) != a.lengths.end()) kept.push_back(r);
    }
    return kept;
  };
  for (const auto& t : a.tasks) {
    out << "summary task=" << t;
    for (const auto& m : a.models) {
      const auto kept = sweep(by_key[{m, t}]);
      std::set<int> distinct;
      for (const auto& r : kept) distinct.insert(r.n);
      if (distinct.size() >= 3) out << " slope_" << m << '=' << format_number(fit_exponent(kept));
    }
    const auto tta_rows = by_key.find({"tta", t});
    const auto bilm_rows = by_key.find({"bilm", t});
    if (tta_rows != by_key.end() && bilm_rows != by_key.end()) {
      for (int n : timed) {
        out << " speedup_bilm_tta@" << n << '='
            << format_number(speedup(bilm_rows->second, tta_rows->second, n));
      }
    }
    out << '\n';
  }
  return 0;
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transformer text autoencoder: training, sentence scoring, reranking, STS, timing"};
  app.set_config("--config", "", "replay a run manifest (flags given on the command line win)");
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.failure_message([](const CLI::App*, const CLI::Error& e) { return std::string(e.what()) + "\n"; });

  VocabArgs va;
  auto* vocab = app.add_subcommand("vocab", "build a vocab file from a corpus");
  vocab->footer(kVocabHelp);
  vocab->add_option("--corpus", va.corpus, "training corpus")->required()->check(CLI::ExistingFile);
  vocab->add_option("--output", va.output, "vocab file to write")->required();
  vocab->add_option("--mode", va.mode, "tokenizer: word or char")->check(CLI::IsMember({"word", "char"}));
  vocab->add_option("--max-size", va.max_size, "vocab size including the 5 specials")
      ->check(CLI::Range(kNumSpecialTokens + 1, INT_MAX));

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train a model (lae: T-TA, clm: uniLM, mlm: biLM)");
  tr->footer(kTrainHelp);
  tr->add_option("--corpus", ta.corpus, "training corpus")->required()->check(CLI::ExistingFile);
  tr->add_option("--vocab", ta.vocab, "vocab file")->required()->check(CLI::ExistingFile);
  tr->add_option("--mode", ta.mode, "tokenizer: word or char")->check(CLI::IsMember({"word", "char"}));
  tr->add_option("--output", ta.output, "checkpoint to write")->required();
  tr->add_option("--loss-csv", ta.loss_csv, "loss curve (default <output>.loss.csv)");
  tr->add_option("--objective", ta.objective, "lae, clm or mlm")->check(CLI::IsMember({"lae", "clm", "mlm"}));
  tr->add_option("--init", ta.init, "normal or zero")->check(CLI::IsMember({"normal", "zero"}));
  tr->add_option("--layers", ta.model.layers, "encoder layers");
  tr->add_option("--dim", ta.model.dim, "hidden size");
  tr->add_option("--heads", ta.model.heads, "attention heads");
  tr->add_option("--ffn-dim", ta.model.ffn_dim, "feed-forward size");
  tr->add_option("--max-len", ta.model.max_len, "max tokens per sentence, [BOS]/[EOS] included");
  tr->add_option("--dropout", ta.model.dropout, "dropout rate");
  tr->add_flag("--diag-mask,!--no-diag-mask", ta.model.diag_mask, "mask the attention diagonal (lae)")
      ->default_str("true");
  tr->add_option("--steps", ta.train.total_steps, "optimizer steps");
  tr->add_option("--warmup", ta.train.warmup_steps, "linear warmup steps");
  tr->add_option("--batch-size", ta.train.batch_size, "sentences per step");
  tr->add_option("--lr", ta.train.peak_lr, "peak learning rate");
  tr->add_option("--clip", ta.train.clip_norm, "global gradient-norm clip, 0 disables");
  tr->add_option("--mask-rate", ta.train.mlm_mask_rate, "mlm masking rate");
  tr->add_option("--checkpoint-every", ta.train.checkpoint_every, "also save <output>.step<k>, 0 disables");
  tr->add_option("--seed", ta.train.seed, "seed for init, shuffling, masking and dropout");

  ScoreArgs sa;
  auto* score = app.add_subcommand("score", "per-sentence (pseudo-)log-likelihoods");
  score->footer(kScoreHelp);
  add_common(score, sa.common);
  score->add_option("--input", sa.input, "sentences")->required()->check(CLI::ExistingFile);
  score->add_option("--output", sa.output, "TSV to write (default stdout)");
  score->add_option("--aggregation", sa.aggregation, "sum or mean")->check(CLI::IsMember({"sum", "mean"}));
  score->add_flag("--summary", sa.summary, "print average and median pseudo-perplexity");

  RerankArgs ra;
  auto* rerank = app.add_subcommand("rerank", "rerank N-best lists with the model score");
  rerank->footer(kRerankHelp);
  add_common(rerank, ra.common);
  rerank->add_option("--nbest", ra.nbest, "N-best TSV")->required()->check(CLI::ExistingFile);
  rerank->add_option("--references", ra.references, "reference TSV")->check(CLI::ExistingFile);
  rerank->add_option("--output", ra.output, "reranked TSV (default stdout)");
  rerank->add_option("--lambda", ra.lambda, "interpolation weight of the model score");
  rerank->add_flag("--tune-lambda", ra.tune, "pick lambda on {0, 0.1, ..., 1} against the references");
  rerank->add_option("--metric", ra.metric, "wer or accuracy")->check(CLI::IsMember({"wer", "accuracy"}));
  rerank->add_option("--aggregation", ra.aggregation, "sum or mean")->check(CLI::IsMember({"sum", "mean"}));

  StsArgs sta;
  auto* sts = app.add_subcommand("sts", "unsupervised semantic textual similarity");
  sts->footer(kStsHelp);
  add_common(sts, sta.common);
  sts->add_option("--data", sta.data, "STS TSV")->required()->check(CLI::ExistingFile);
  sts->add_option("--source", sta.source, "context or embed")->check(CLI::IsMember({"context", "embed"}));
  sts->add_flag("--bilm-intact", sta.bilm_intact, "biLM: one unmasked pass instead of mask-and-predict");
  sts->add_option("--pairs-csv", sta.pairs_csv, "per-pair cosine,gold CSV");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "scoring time against sentence length");
  bench->footer(kBenchHelp);
  bench->add_option("--models", ba.models, "tta, unilm, bilm")->delimiter(',')
      ->check(CLI::IsMember({"tta", "unilm", "bilm"}));
  bench->add_option("--tasks", ba.tasks, "sts, rerank")->delimiter(',')->check(CLI::IsMember({"sts", "rerank"}));
  bench->add_option("--lengths", ba.lengths, "sentence lengths in tokens")->delimiter(',')
      ->check(CLI::Range(3, 4096));
  bench->add_option("--reps", ba.reps, "timed repetitions per length")->check(CLI::Range(10, INT_MAX));
  bench->add_option("--warmup", ba.warmup, "discarded runs per length")->check(CLI::NonNegativeNumber);
  bench->add_option("--scale", ba.scale, "paper or desk dimensions")->check(CLI::IsMember({"paper", "desk"}));
  bench->add_option("--vocab-size", ba.vocab_size, "vocab size of the synthetic models")
      ->check(CLI::Range(kNumSpecialTokens + 1, INT_MAX));
  bench->add_option("--seed", ba.seed, "seed for weights and sentences");
  bench->add_option("--output", ba.output, "timing CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*vocab) {
      write_manifest(app, *vocab, va.output);
      return run_vocab(va, out);
    }
    if (*tr) {
      write_manifest(app, *tr, ta.output);
      return run_train(ta, out);
    }
    if (*score) {
      write_manifest(app, *score, sa.output);
      return run_score(sa, out);
    }
    if (*rerank) {
      write_manifest(app, *rerank, ra.output);
      return run_rerank(ra, out, err);
    }
    if (*sts) {
      write_manifest(app, *sts, sta.pairs_csv);
      return run_sts(sta, out);
    }
    write_manifest(app, *bench, ba.output);
    return run_bench(ba, out);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << '\n';
    return 1;
  }
}

}  // namespace tta::cli
