#pragma once

// Chunked training loop: programs advance one chunk per step in lockstep
// batches, recurrent state carries across chunks, gradients do not.

#include "anonymizer.hpp"
#include "ast_corpus.hpp"
#include "evaluator.hpp"
#include "model.hpp"
#include "optimizer.hpp"
#include "targets.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace anoncomplete {

struct TrainConfig {
  EmbeddingMode mode = EmbeddingMode::dynamic;
  int type_dim = 32;
  int value_dim = 64;
  int hidden_dim = 128;
  int window = 50;
  bool attention = true;
  bool pointer = true;
  bool tie_output = false;
  LossStrategy strategy = LossStrategy::standard;
  double lr = 1e-3;
  double decay = 0.6;
  double weight_decay = 0.01;
  int epochs = 10;
  int batch_size = 128;
  std::uint64_t seed = 1;
  double clip_norm = 5.0;
  double heldout_fraction = 0.1;
  bool reanonymize_each_epoch = false;
  // file-level settings used by the command line driver
  std::string corpus;
  std::string source_corpus;  // full-data cache for re-anonymization
  std::string out_dir = ".";
  std::optional<int> k;       // placeholder count; taken from the corpus when unset
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: " + key + " expects a boolean, got '" + v + "'");
}

}  // namespace detail

/// Reads `key = value` lines; '#' starts a comment.
inline std::map<std::string, std::string> read_key_values(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
  }
  return kv;
}

inline TrainConfig parse_train_config(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  for (const auto& [key, v] : kv) {
    try {
      if (key == "mode") c.mode = parse_embedding_mode(v);
      else if (key == "type_dim") c.type_dim = std::stoi(v);
      else if (key == "value_dim") c.value_dim = std::stoi(v);
      else if (key == "hidden_dim") c.hidden_dim = std::stoi(v);
      else if (key == "window") c.window = std::stoi(v);
      else if (key == "attention") c.attention = detail::parse_bool(key, v);
      else if (key == "pointer") c.pointer = detail::parse_bool(key, v);
      else if (key == "tie_output") c.tie_output = detail::parse_bool(key, v);
      else if (key == "strategy") c.strategy = parse_loss_strategy(v);
      else if (key == "lr") c.lr = std::stod(v);
      else if (key == "decay") c.decay = std::stod(v);
      else if (key == "weight_decay") c.weight_decay = std::stod(v);
      else if (key == "epochs") c.epochs = std::stoi(v);
      else if (key == "batch_size") c.batch_size = std::stoi(v);
      else if (key == "seed") c.seed = std::stoull(v);
      else if (key == "clip_norm") c.clip_norm = std::stod(v);
      else if (key == "heldout_fraction") c.heldout_fraction = std::stod(v);
      else if (key == "reanonymize_each_epoch") c.reanonymize_each_epoch = detail::parse_bool(key, v);
      else if (key == "corpus") c.corpus = v;
      else if (key == "source_corpus") c.source_corpus = v;
      else if (key == "out") c.out_dir = v;
      else if (key == "K" || key == "k") {
        if (v != "auto") c.k = std::stoi(v);
      } else throw ConfigError("config: unknown key '" + key + "'");
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const ConfigError*>(&e)) throw;
      throw ConfigError("config: bad value for " + key + ": '" + v + "'");
    }
  }
  if (c.epochs < 1 || c.batch_size < 1) throw ConfigError("config: epochs and batch_size must be >= 1");
  if (c.heldout_fraction < 0.0 || c.heldout_fraction >= 1.0) throw ConfigError("config: heldout_fraction must be in [0, 1)");
  if (c.pointer && !c.attention) throw ConfigError("config: pointer requires attention");
  return c;
}

inline TrainConfig parse_train_config(std::istream& in) { return parse_train_config(read_key_values(in)); }

inline ModelConfig model_config_for(const TrainConfig& tc, const Corpus& corpus) {
  ModelConfig m;
  m.mode = tc.mode;
  m.num_types = static_cast<int>(corpus.vocab.num_types());
  m.value_vocab = static_cast<int>(corpus.vocab.num_values());
  m.type_dim = tc.type_dim;
  m.value_dim = tc.value_dim;
  m.hidden_dim = tc.hidden_dim;
  m.window = tc.window;
  m.attention = tc.attention;
  m.pointer = tc.pointer;
  m.tie_output = tc.tie_output;
  m.validate();
  return m;
}

/// Which corpus kind a mode trains on.
inline void check_mode_matches_corpus(EmbeddingMode mode, CorpusKind kind) {
  const bool ok = (mode == EmbeddingMode::dynamic && kind == CorpusKind::anonymized) ||
                  (mode == EmbeddingMode::static_embeddings && kind != CorpusKind::stripped) ||
                  (mode == EmbeddingMode::no_vars && kind == CorpusKind::stripped) ||
                  (mode == EmbeddingMode::dynamic_full_data && kind == CorpusKind::full);
  if (!ok) {
    throw ConfigError(std::string("mode ") + to_string(mode) + " cannot train on a " + to_string(kind) + " corpus");
  }
}

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  std::size_t train_positions = 0;
  std::size_t steps = 0;
  double heldout_loss = 0.0;
  double heldout_accuracy = 0.0;
  std::size_t heldout_positions = 0;
  double seconds = 0.0;

  /// Line-delimited metric records (one per split).
  std::vector<nlohmann::json> records() const {
    return {nlohmann::json{{"epoch", epoch}, {"split", "train"}, {"loss", train_loss}, {"lr", lr},
                           {"positions", train_positions}, {"steps", steps}, {"seconds", seconds}},
            nlohmann::json{{"epoch", epoch}, {"split", "heldout"}, {"loss", heldout_loss},
                           {"accuracy", heldout_accuracy}, {"positions", heldout_positions}}};
  }
};

struct TrainHooks {
  std::function<void(const EpochMetrics&)> on_epoch;
  std::function<void(int epoch, const Model<float>&)> on_checkpoint;
  /// Lets the caller swap training programs before an epoch (re-anonymization).
  std::function<void(int epoch, std::vector<FlatProgram>& train_programs)> before_epoch;
  std::function<void(std::size_t step, double loss)> on_step;
};

/// Splits off the last `fraction` of programs as held-out data.
inline std::pair<Corpus, Corpus> split_heldout(const Corpus& corpus, double fraction) {
  Corpus train = corpus, held = corpus;
  const auto n = corpus.programs.size();
  const auto n_held = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction));
  train.programs.assign(corpus.programs.begin(), corpus.programs.end() - static_cast<std::ptrdiff_t>(n_held));
  held.programs.assign(corpus.programs.end() - static_cast<std::ptrdiff_t>(n_held), corpus.programs.end());
  return {std::move(train), std::move(held)};
}

class Trainer {
 public:
  Trainer(TrainConfig cfg, ModelConfig model_cfg)
      : cfg_(std::move(cfg)),
        model_(model_cfg),
        optimizer_(model_.parameters(), AdamWConfig{cfg_.lr, 0.9, 0.999, 1e-8, cfg_.weight_decay}),
        rng_(mix_seed(cfg_.seed, 0xB47C4)) {
    model_.init_uniform(cfg_.seed);
  }

  Model<float>& model() noexcept { return model_; }
  const TrainConfig& config() const noexcept { return cfg_; }
  AdamW<float>& optimizer() noexcept { return optimizer_; }

  /// Batches of program indices: bucketed by chunk count, shuffled within
  /// buckets, then the batch order is shuffled.
  std::vector<std::vector<std::size_t>> make_batches(const std::vector<FlatProgram>& programs) {
    const auto w = static_cast<std::size_t>(cfg_.window);
    std::map<std::size_t, std::vector<std::size_t>> buckets;
    for (std::size_t i = 0; i < programs.size(); ++i) buckets[(programs[i].length() + w - 1) / w].push_back(i);
    std::vector<std::vector<std::size_t>> batches;
    for (auto& [chunks, ids] : buckets) {
      shuffle(ids);
      for (std::size_t b = 0; b < ids.size(); b += static_cast<std::size_t>(cfg_.batch_size)) {
        const auto e = std::min(ids.size(), b + static_cast<std::size_t>(cfg_.batch_size));
        batches.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(b), ids.begin() + static_cast<std::ptrdiff_t>(e));
      }
    }
    shuffle(batches);
    return batches;
  }

  struct StepStats {
    double loss_sum = 0.0;
    std::size_t positions = 0;
  };

  /// One synchronized update per chunk index over a batch of equal-chunk-count programs.
  StepStats train_batch(const std::vector<const FlatProgram*>& batch, double lr, int epoch, std::size_t batch_index) {
    const auto& mcfg = model_.config();
    const auto w = static_cast<std::size_t>(mcfg.window);
    StepStats total;
    std::vector<CarriedState<float>> carried;
    std::vector<std::vector<TargetSpec>> targets;
    std::size_t max_len = 0;
    for (const auto* p : batch) {
      carried.push_back(model_.begin_program(*p));
      targets.push_back(make_targets(*p, mcfg.window));
      max_len = std::max(max_len, p->length());
    }
    for (std::size_t begin = 0; begin < max_len; begin += w) {
      std::size_t count = 0;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto end = std::min(batch[b]->length(), begin + w);
        for (std::size_t i = begin; i < end; ++i) count += contributes(targets[b][i], i, mcfg) ? 1 : 0;
      }
      model_.zero_grad();
      double step_loss = 0.0;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const FlatProgram& p = *batch[b];
        if (begin >= p.length()) continue;
        const auto end = std::min(p.length(), begin + w);
        tape_.clear();
        tape_.set_recording(count > 0);
        StepState<float> state = model_.attach(tape_, carried[b]);
        const auto outs = model_.forward_chunk(tape_, state, p, begin, end);
        std::vector<Var<float>> terms;
        for (std::size_t i = begin; i < end; ++i) {
          if (auto l = position_loss(outs[i - begin], mcfg, targets[b][i], cfg_.strategy, &rng_)) terms.push_back(*l);
        }
        if (!terms.empty()) {
          Var<float> chunk_loss = terms.size() == 1 ? terms.front() : ad::sum(ad::concat(std::span<const Var<float>>(terms)));
          const double v = static_cast<double>(chunk_loss.item());
          if (!std::isfinite(v)) fail(epoch, batch_index, "non-finite loss");
          step_loss += v;
          tape_.backward(chunk_loss, 1.0f / static_cast<float>(count));
        }
        carried[b] = model_.detach(state);
      }
      if (count > 0) {
        const double norm = clip_global_norm(model_.parameters(), cfg_.clip_norm);
        if (!std::isfinite(norm)) fail(epoch, batch_index, "non-finite gradient norm");
        optimizer_.step(model_.parameters(), lr);
        ++steps_;
        if (hooks_.on_step) hooks_.on_step(steps_, step_loss / static_cast<double>(count));
      }
      total.loss_sum += step_loss;
      total.positions += count;
    }
    return total;
  }

  std::vector<EpochMetrics> train(const Corpus& train_corpus, const Corpus* heldout, TrainHooks hooks = {}) {
    check_mode_matches_corpus(model_.config().mode, train_corpus.kind);
    check_compatible(model_.config(), train_corpus);
    hooks_ = std::move(hooks);
    std::vector<EpochMetrics> history;
    std::vector<FlatProgram> programs = train_corpus.programs;
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      if (hooks_.before_epoch) hooks_.before_epoch(epoch, programs);
      const double lr = scheduled_lr(cfg_.lr, cfg_.decay, epoch);
      EpochMetrics m;
      m.epoch = epoch + 1;
      m.lr = lr;
      const auto start_steps = steps_;
      const auto batches = make_batches(programs);
      double loss_sum = 0.0;
      for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        std::vector<const FlatProgram*> batch;
        for (auto idx : batches[bi]) batch.push_back(&programs[idx]);
        const auto s = train_batch(batch, lr, epoch + 1, bi);
        loss_sum += s.loss_sum;
        m.train_positions += s.positions;
      }
      m.train_loss = m.train_positions ? loss_sum / static_cast<double>(m.train_positions) : 0.0;
      m.steps = steps_ - start_steps;
      if (heldout && !heldout->programs.empty()) {
        const auto r = evaluate(model_, *heldout);
        m.heldout_accuracy = r.accuracy();
        m.heldout_loss = r.mean_loss();
        m.heldout_positions = r.total;
      }
      m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      history.push_back(m);
      if (hooks_.on_epoch) hooks_.on_epoch(m);
      if (hooks_.on_checkpoint) hooks_.on_checkpoint(epoch + 1, model_);
    }
    return history;
  }

 private:
  template <class V>
  void shuffle(std::vector<V>& xs) {
    for (std::size_t i = xs.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_below(rng_, i));
      std::swap(xs[i - 1], xs[j]);
    }
  }

  [[noreturn]] void fail(int epoch, std::size_t batch, const std::string& what) {
    std::ostringstream os;
    os << what << " at epoch " << epoch << ", batch " << batch << "; parameter norms:";
    for (const auto& p : model_.parameters()) {
      double sq = 0.0;
      for (auto x : p.value) sq += static_cast<double>(x) * static_cast<double>(x);
      os << ' ' << p.name << '=' << std::sqrt(sq);
    }
    throw NumericError(os.str());
  }

  TrainConfig cfg_;
  Model<float> model_;
  AdamW<float> optimizer_;
  std::mt19937_64 rng_;
  Tape<float> tape_;
  TrainHooks hooks_;
  std::size_t steps_ = 0;
};

}  // namespace anoncomplete
