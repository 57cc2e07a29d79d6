#pragma once

// Next-value accuracy (UNK predictions always wrong) and two-model
// max-probability ensembling.

#include "ast_corpus.hpp"
#include "model.hpp"
#include "targets.hpp"

#include <json.hpp>

#include <cstdio>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace anoncomplete {

class FingerprintError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CategoryStats {
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy() const noexcept { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

struct EvalReport {
  std::size_t total = 0;
  std::size_t correct = 0;
  CategoryStats dummy;   // EMPTY / EOF targets
  CategoryStats values;  // in-vocabulary non-dummy targets (names or placeholders)
  CategoryStats oov;     // targets mapped to UNK
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  std::uint64_t type_fingerprint = 0;
  std::uint64_t value_fingerprint = 0;

  double accuracy() const noexcept { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
  double mean_loss() const noexcept { return loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0; }

  void add(std::int32_t target_value, bool ok) {
    ++total;
    correct += ok ? 1 : 0;
    CategoryStats& cat = target_value == kUnk ? oov : (is_dummy(target_value) ? dummy : values);
    ++cat.total;
    cat.correct += ok ? 1 : 0;
  }

  nlohmann::json to_json() const {
    auto cat = [](const CategoryStats& c) {
      return nlohmann::json{{"total", c.total}, {"correct", c.correct}, {"accuracy", c.accuracy()}};
    };
    return {{"total", total},
            {"correct", correct},
            {"accuracy", accuracy()},
            {"loss", mean_loss()},
            {"categories", {{"dummy", cat(dummy)}, {"values", cat(values)}, {"oov", cat(oov)}}},
            {"type_fingerprint", type_fingerprint},
            {"value_fingerprint", value_fingerprint}};
  }

  std::string table(bool per_category) const {
    std::ostringstream os;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%-10s %10s %10s %9s\n", "category", "positions", "correct", "accuracy");
    os << buf;
    auto line = [&](const char* name, std::size_t n, std::size_t c, double acc) {
      std::snprintf(buf, sizeof(buf), "%-10s %10zu %10zu %8.2f%%\n", name, n, c, 100.0 * acc);
      os << buf;
    };
    line("overall", total, correct, accuracy());
    if (per_category) {
      line("dummy", dummy.total, dummy.correct, dummy.accuracy());
      line("values", values.total, values.correct, values.accuracy());
      line("oov", oov.total, oov.correct, oov.accuracy());
    }
    return os.str();
  }
};

/// One top-1 prediction translated to an original-value identity.
struct ResolvedPrediction {
  Prediction prediction;
  std::optional<std::int32_t> original;  // empty: UNK or an unbound placeholder
};

inline void check_compatible(const ModelConfig& cfg, const Corpus& corpus) {
  if (static_cast<std::size_t>(cfg.num_types) != corpus.vocab.num_types() ||
      static_cast<std::size_t>(cfg.value_vocab) != corpus.vocab.num_values()) {
    throw FingerprintError("model vocabulary sizes do not match the corpus");
  }
}

/// Top-1 predictions for every position that has a successor. Inference only;
/// state carries across chunk boundaries exactly as in training.
template <class T>
std::vector<ResolvedPrediction> predict_program(Model<T>& model, const Corpus& corpus, const FlatProgram& program,
                                                EvalReport* loss_acc = nullptr) {
  const auto& cfg = model.config();
  std::vector<ResolvedPrediction> out;
  if (program.length() == 0) return out;
  out.reserve(program.length() - 1);
  const auto targets = loss_acc ? make_targets(program, cfg.window) : std::vector<TargetSpec>{};
  Tape<T> tape(false);
  CarriedState<T> carried = model.begin_program(program);
  const auto w = static_cast<std::size_t>(cfg.window);
  for (std::size_t begin = 0; begin < program.length(); begin += w) {
    const std::size_t end = std::min(program.length(), begin + w);
    tape.clear();
    StepState<T> state = model.attach(tape, carried);
    for (std::size_t i = begin; i < end; ++i) {
      StepOutput<T> step = model.step(tape, state, program.types[i], program.values[i], program.parent[i]);
      if (i + 1 >= program.length()) continue;
      if (loss_acc) {
        if (auto l = position_loss(step, cfg, targets[i], LossStrategy::standard)) {
          loss_acc->loss_sum += static_cast<double>(l->item());
          ++loss_acc->loss_count;
        }
      }
      const auto dist = merged_distribution(step, cfg);
      ResolvedPrediction r;
      r.prediction = predict_next(dist, cfg.value_vocab);
      if (r.prediction.copy) {
        r.original = program.orig[i - static_cast<std::size_t>(r.prediction.offset)];
      } else {
        r.original = corpus.resolve(program, r.prediction.value);
      }
      out.push_back(r);
    }
    carried = model.detach(state);
  }
  return out;
}

inline bool is_correct(const ResolvedPrediction& r, std::int32_t target_original) {
  return r.original.has_value() && *r.original == target_original;
}

struct EvalOptions {
  std::optional<std::uint64_t> type_fingerprint;
  std::optional<std::uint64_t> value_fingerprint;
  bool compute_loss = true;
};

template <class T>
EvalReport evaluate(Model<T>& model, const Corpus& corpus, const EvalOptions& opts = {}) {
  check_compatible(model.config(), corpus);
  EvalReport report;
  report.type_fingerprint = type_fingerprint(corpus.vocab);
  report.value_fingerprint = value_fingerprint(corpus.vocab);
  if ((opts.type_fingerprint && *opts.type_fingerprint != report.type_fingerprint) ||
      (opts.value_fingerprint && *opts.value_fingerprint != report.value_fingerprint)) {
    throw FingerprintError("corpus vocabulary fingerprint does not match the model");
  }
  for (const auto& program : corpus.programs) {
    const auto preds = predict_program(model, corpus, program, opts.compute_loss ? &report : nullptr);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      report.add(program.values[i + 1], is_correct(preds[i], program.orig[i + 1]));
    }
  }
  return report;
}

/// Per position, the model whose top-1 probability is higher supplies the
/// prediction; model_a wins ties. Both corpora must be views of the same
/// programs (identical lengths and original identities). Categories follow corpus_a.
inline EvalReport merge_predictions(const Corpus& corpus_a, const std::vector<std::vector<ResolvedPrediction>>& preds_a,
                                    const std::vector<std::vector<ResolvedPrediction>>& preds_b) {
  EvalReport report;
  report.type_fingerprint = type_fingerprint(corpus_a.vocab);
  report.value_fingerprint = value_fingerprint(corpus_a.vocab);
  for (std::size_t p = 0; p < corpus_a.programs.size(); ++p) {
    const auto& program = corpus_a.programs[p];
    const auto& a = preds_a[p];
    const auto& b = preds_b[p];
    if (a.size() != b.size()) throw std::invalid_argument("ensemble: prediction counts differ");
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto& pick = b[i].prediction.probability > a[i].prediction.probability ? b[i] : a[i];
      report.add(program.values[i + 1], is_correct(pick, program.orig[i + 1]));
    }
  }
  return report;
}

inline void check_aligned(const Corpus& a, const Corpus& b) {
  if (a.programs.size() != b.programs.size()) throw std::invalid_argument("ensemble: corpora hold different program counts");
  for (std::size_t p = 0; p < a.programs.size(); ++p) {
    if (a.programs[p].length() != b.programs[p].length() || a.programs[p].orig != b.programs[p].orig) {
      throw std::invalid_argument("ensemble: program " + std::to_string(p) + " is not aligned across corpora");
    }
  }
}

template <class TA, class TB>
EvalReport ensemble_evaluate(Model<TA>& model_a, Model<TB>& model_b, const Corpus& corpus_a, const Corpus& corpus_b) {
  check_aligned(corpus_a, corpus_b);
  check_compatible(model_a.config(), corpus_a);
  check_compatible(model_b.config(), corpus_b);
  std::vector<std::vector<ResolvedPrediction>> pa, pb;
  pa.reserve(corpus_a.programs.size());
  pb.reserve(corpus_b.programs.size());
  for (std::size_t p = 0; p < corpus_a.programs.size(); ++p) {
    pa.push_back(predict_program(model_a, corpus_a, corpus_a.programs[p]));
    pb.push_back(predict_program(model_b, corpus_b, corpus_b.programs[p]));
  }
  return merge_predictions(corpus_a, pa, pb);
}

}  // namespace anoncomplete
