#pragma once

// Attentional pointer LSTM over flattened ASTs with three value-embedding
// regimes: static lookup tables (also used for the stripped corpus) and dynamic
// per-placeholder embeddings updated by a second LSTM as the program is read.

#include "ast_corpus.hpp"
#include "autodiff.hpp"

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace anoncomplete {

enum class EmbeddingMode { no_vars, static_embeddings, dynamic, dynamic_full_data };

inline const char* to_string(EmbeddingMode m) {
  switch (m) {
    case EmbeddingMode::no_vars: return "no_vars";
    case EmbeddingMode::static_embeddings: return "static";
    case EmbeddingMode::dynamic: return "dynamic";
    case EmbeddingMode::dynamic_full_data: return "dynamic_full_data";
  }
  return "?";
}

inline EmbeddingMode parse_embedding_mode(std::string_view s) {
  if (s == "no_vars") return EmbeddingMode::no_vars;
  if (s == "static") return EmbeddingMode::static_embeddings;
  if (s == "dynamic") return EmbeddingMode::dynamic;
  if (s == "dynamic_full_data") return EmbeddingMode::dynamic_full_data;
  throw std::invalid_argument("unknown mode: " + std::string(s));
}

inline bool is_dynamic(EmbeddingMode m) {
  return m == EmbeddingMode::dynamic || m == EmbeddingMode::dynamic_full_data;
}

struct ModelConfig {
  EmbeddingMode mode = EmbeddingMode::dynamic;
  int num_types = 0;
  int value_vocab = 0;  // includes the reserved EMPTY/UNK/EOF ids
  int type_dim = 32;
  int value_dim = 64;
  int hidden_dim = 128;
  int window = 50;
  bool attention = true;
  bool pointer = true;
  bool tie_output = false;  // static/no_vars: logits from the value embedding table

  bool dynamic() const noexcept { return is_dynamic(mode); }
  int num_slots() const noexcept { return dynamic() ? value_vocab - kNumDummies : 0; }
  /// Width of the combined output representation (tied to value embeddings in dynamic modes).
  int head_dim() const noexcept { return dynamic() || tie_output ? value_dim : hidden_dim; }
  int head_input_dim() const noexcept { return attention ? 3 * hidden_dim : hidden_dim; }

  void validate() const {
    if (pointer && !attention) throw std::invalid_argument("model config: pointer requires attention");
    if (window < 1) throw std::invalid_argument("model config: window must be >= 1");
    if (type_dim < 1 || value_dim < 1 || hidden_dim < 1) throw std::invalid_argument("model config: dims must be >= 1");
    if (num_types < 1) throw std::invalid_argument("model config: num_types must be >= 1");
    if (value_vocab < kNumDummies) throw std::invalid_argument("model config: value vocabulary must include the reserved ids");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct TensorSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  bool zero_init = false;  // trainable initial states
  std::size_t size() const noexcept { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

/// Named trainable tensors for a configuration, in checkpoint order.
inline std::vector<TensorSpec> parameter_layout(const ModelConfig& cfg) {
  cfg.validate();
  const int dt = cfg.type_dim, dv = cfg.value_dim, dh = cfg.hidden_dim, v = cfg.value_vocab;
  std::vector<TensorSpec> out;
  out.push_back({"type_embedding", cfg.num_types, dt, false});
  switch (cfg.mode) {
    case EmbeddingMode::no_vars:
    case EmbeddingMode::static_embeddings:
      out.push_back({"value_embedding", v, dv, false});
      break;
    case EmbeddingMode::dynamic:
      out.push_back({"dummy_embedding", kNumDummies, dv, false});
      out.push_back({"dynamic.init_h", 1, dv, true});
      out.push_back({"dynamic.init_c", 1, dv, true});
      break;
    case EmbeddingMode::dynamic_full_data:
      out.push_back({"dummy_embedding", kNumDummies, dv, false});
      out.push_back({"dynamic.value_init", v - kNumDummies, dv, false});
      out.push_back({"dynamic.init_c", 1, dv, true});
      break;
  }
  if (cfg.dynamic()) {
    out.push_back({"dynamic_lstm.weight", 4 * dv, dh + dt + dv, false});
    out.push_back({"dynamic_lstm.bias", 4 * dv, 1, false});
  }
  out.push_back({"main_lstm.weight", 4 * dh, dv + dt + dh, false});
  out.push_back({"main_lstm.bias", 4 * dh, 1, false});
  out.push_back({"main.init_h", 1, dh, true});
  out.push_back({"main.init_c", 1, dh, true});
  if (cfg.attention) {
    out.push_back({"attention.memory", dh, dh, false});
    out.push_back({"attention.query", dh, dh, false});
    out.push_back({"attention.score", 1, dh, false});
  }
  out.push_back({"head.weight", cfg.head_dim(), cfg.head_input_dim(), false});
  out.push_back({"head.bias", cfg.head_dim(), 1, false});
  if (!cfg.dynamic() && !cfg.tie_output) {
    out.push_back({"output.weight", v, dh, false});
    out.push_back({"output.bias", v, 1, false});
  }
  if (cfg.pointer) {
    out.push_back({"switch.weight", 1, cfg.head_dim(), false});
    out.push_back({"switch.bias", 1, 1, false});
  }
  return out;
}

inline std::size_t parameter_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const auto& t : parameter_layout(cfg)) n += t.size();
  return n;
}

/// Tape-bound per-placeholder LSTM states (h is the embedding read by the model).
template <class T>
struct DynamicEmbeddingBank {
  std::vector<Var<T>> h;
  std::vector<Var<T>> c;
  std::vector<char> touched;  // slot updated at least once in the current program

  std::size_t size() const noexcept { return h.size(); }
};

/// Program-level recurrent state between chunks, detached from any tape.
/// Empty vectors stand for "still at the trainable initial value".
template <class T>
struct CarriedState {
  struct Entry {
    std::int32_t position = 0;
    std::vector<T> hidden;
  };
  std::size_t position = 0;
  std::vector<T> h, c;
  std::deque<Entry> ring;
  std::map<std::int32_t, std::vector<T>> parent_cache;
  std::vector<int> remaining_children;
  std::vector<std::vector<T>> slot_h, slot_c;
};

/// Recurrent state bound to one tape while a chunk is processed.
template <class T>
struct StepState {
  struct Entry {
    std::int32_t position = 0;
    Var<T> hidden;
    Var<T> key;  // attention.memory * hidden
  };
  std::size_t position = 0;
  Var<T> h, c;
  std::deque<Entry> ring;  // oldest first; holds at most `window` previous positions
  std::map<std::int32_t, Var<T>> parent_cache;
  std::vector<int> remaining_children;
  DynamicEmbeddingBank<T> bank;

  // parameter leaves on the current tape
  struct Bound {
    Var<T> main_w, main_b, dyn_w, dyn_b, mem, query, score, head_w, head_b, out_w, out_b, switch_w, switch_b, value_emb,
        dummy_emb;
  } p;
};

template <class T>
struct StepOutput {
  Var<T> logits;        // one entry per value id
  Var<T> scores;        // attention/pointer logits, offset 1 first; valid iff history > 0 and attention
  Var<T> switch_logit;  // valid iff pointer
  Var<T> summary;       // combined representation fed to the logits
  int history = 0;
};

template <class T>
class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(cfg) {
    for (const auto& spec : parameter_layout(cfg_)) {
      index_.emplace(spec.name, params_.size());
      params_.emplace_back(spec.name, spec.rows, spec.cols);
      zero_init_.push_back(spec.zero_init);
    }
    ix_.type_emb = find("type_embedding");
    ix_.value_emb = find("value_embedding");
    ix_.dummy_emb = find("dummy_embedding");
    ix_.init_h = find("dynamic.init_h");
    ix_.value_init = find("dynamic.value_init");
    ix_.init_c = find("dynamic.init_c");
    ix_.dyn_w = find("dynamic_lstm.weight");
    ix_.dyn_b = find("dynamic_lstm.bias");
    ix_.main_w = find("main_lstm.weight");
    ix_.main_b = find("main_lstm.bias");
    ix_.main_h = find("main.init_h");
    ix_.main_c = find("main.init_c");
    ix_.mem = find("attention.memory");
    ix_.query = find("attention.query");
    ix_.score = find("attention.score");
    ix_.head_w = find("head.weight");
    ix_.head_b = find("head.bias");
    ix_.out_w = find("output.weight");
    ix_.out_b = find("output.bias");
    ix_.switch_w = find("switch.weight");
    ix_.switch_b = find("switch.bias");
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  std::vector<Parameter<T>>& parameters() noexcept { return params_; }
  const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }

  Parameter<T>& parameter(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return params_[it->second];
  }
  const Parameter<T>& parameter(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return params_[it->second];
  }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  /// Uniform(-range, range) for every tensor except trainable initial states (zero).
  void init_uniform(std::uint64_t seed, double range = 0.05) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      for (auto& x : params_[i].value) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
        x = zero_init_[i] ? T{0} : static_cast<T>((2.0 * u - 1.0) * range);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  CarriedState<T> begin_program(const FlatProgram& program) const {
    CarriedState<T> s;
    s.remaining_children = child_counts(program);
    if (cfg_.dynamic()) {
      s.slot_h.assign(static_cast<std::size_t>(cfg_.num_slots()), {});
      s.slot_c.assign(static_cast<std::size_t>(cfg_.num_slots()), {});
    }
    return s;
  }

  /// Binds a detached state to `tape`. Gradients reach trainable initial states
  /// but never cross into earlier chunks.
  StepState<T> attach(Tape<T>& tape, const CarriedState<T>& carried) {
    StepState<T> s;
    bind(tape, s);
    s.position = carried.position;
    s.h = carried.h.empty() ? tape.row(params_[ix_.main_h], 0) : tape.constant(std::span<const T>(carried.h));
    s.c = carried.c.empty() ? tape.row(params_[ix_.main_c], 0) : tape.constant(std::span<const T>(carried.c));
    for (const auto& e : carried.ring) {
      typename StepState<T>::Entry entry;
      entry.position = e.position;
      entry.hidden = tape.constant(std::span<const T>(e.hidden));
      if (cfg_.attention) entry.key = ad::matmul(s.p.mem, entry.hidden);
      s.ring.push_back(entry);
    }
    for (const auto& [pos, h] : carried.parent_cache) s.parent_cache.emplace(pos, tape.constant(std::span<const T>(h)));
    s.remaining_children = carried.remaining_children;
    if (cfg_.dynamic()) {
      const auto slots = static_cast<std::size_t>(cfg_.num_slots());
      if (carried.slot_h.size() != slots) throw std::logic_error("attach: carried state has the wrong slot count");
      s.bank.h.resize(slots);
      s.bank.c.resize(slots);
      s.bank.touched.assign(slots, 0);
      Var<T> init_h, init_c = tape.row(params_[ix_.init_c], 0);
      if (cfg_.mode == EmbeddingMode::dynamic) init_h = tape.row(params_[ix_.init_h], 0);
      for (std::size_t k = 0; k < slots; ++k) {
        if (carried.slot_h[k].empty()) {
          s.bank.h[k] = cfg_.mode == EmbeddingMode::dynamic ? init_h : tape.row(params_[ix_.value_init], static_cast<int>(k));
          s.bank.c[k] = init_c;
        } else {
          s.bank.h[k] = tape.constant(std::span<const T>(carried.slot_h[k]));
          s.bank.c[k] = tape.constant(std::span<const T>(carried.slot_c[k]));
          s.bank.touched[k] = 1;
        }
      }
    }
    return s;
  }

  CarriedState<T> detach(const StepState<T>& s) const {
    auto copy = [](Var<T> v) {
      auto x = v.value();
      return std::vector<T>(x.begin(), x.end());
    };
    CarriedState<T> out;
    out.position = s.position;
    out.h = copy(s.h);
    out.c = copy(s.c);
    for (const auto& e : s.ring) out.ring.push_back({e.position, copy(e.hidden)});
    for (const auto& [pos, h] : s.parent_cache) out.parent_cache.emplace(pos, copy(h));
    out.remaining_children = s.remaining_children;
    if (cfg_.dynamic()) {
      out.slot_h.resize(s.bank.size());
      out.slot_c.resize(s.bank.size());
      for (std::size_t k = 0; k < s.bank.size(); ++k) {
        if (s.bank.touched[k]) {
          out.slot_h[k] = copy(s.bank.h[k]);
          out.slot_c[k] = copy(s.bank.c[k]);
        }
      }
    }
    return out;
  }

  /// Consumes one token (node type, value id, parent position) and produces the
  /// prediction heads for the next value.
  StepOutput<T> step(Tape<T>& tape, StepState<T>& s, std::int32_t type, std::int32_t value, std::int32_t parent) {
    using namespace ad;
    if (type < 0 || type >= cfg_.num_types) throw std::out_of_range("step: node type id out of range");
    if (value < 0 || value >= cfg_.value_vocab) throw std::out_of_range("step: value id out of range");
    if (!s.h.valid()) throw std::logic_error("step: state is not attached");
    const auto pos = static_cast<std::int32_t>(s.position);
    if (parent >= pos) throw std::out_of_range("step: parent must precede the current position");

    Var<T> type_emb = tape.row(params_[ix_.type_emb], type);
    Var<T> value_emb;
    int slot = -1;
    if (cfg_.dynamic()) {
      if (is_dummy(value)) {
        value_emb = tape.row(params_[ix_.dummy_emb], value);
      } else {
        slot = value - kNumDummies;
        value_emb = s.bank.h[static_cast<std::size_t>(slot)];
      }
    } else {
      value_emb = tape.row(params_[ix_.value_emb], value);
    }

    // main recurrence reads the embedding before this step's update
    auto [h_next, c_next] = lstm_cell(concat({value_emb, type_emb}), s.h, s.c, s.p.main_w, s.p.main_b);
    if (slot >= 0) {
      const auto k = static_cast<std::size_t>(slot);
      auto [e_h, e_c] = lstm_cell(concat({s.h, type_emb}), s.bank.h[k], s.bank.c[k], s.p.dyn_w, s.p.dyn_b);
      s.bank.h[k] = e_h;
      s.bank.c[k] = e_c;
      s.bank.touched[k] = 1;
    }

    StepOutput<T> out;
    out.history = static_cast<int>(s.ring.size());
    Var<T> features = h_next;
    if (cfg_.attention) {
      Var<T> context;
      if (out.history > 0) {
        std::vector<Var<T>> keys, hiddens;
        keys.reserve(s.ring.size());
        hiddens.reserve(s.ring.size());
        for (auto it = s.ring.rbegin(); it != s.ring.rend(); ++it) {
          keys.push_back(it->key);
          hiddens.push_back(it->hidden);
        }
        Var<T> query = matmul(s.p.query, h_next);
        out.scores = attention_scores(std::span<const Var<T>>(keys), query, s.p.score);
        context = weighted_sum(std::span<const Var<T>>(hiddens), softmax(out.scores));
      } else {
        context = tape.zeros(cfg_.hidden_dim);
      }
      Var<T> parent_h;
      if (parent >= 0) {
        auto it = s.parent_cache.find(parent);
        if (it == s.parent_cache.end()) throw std::logic_error("step: parent hidden state missing from cache");
        parent_h = it->second;
      } else {
        parent_h = tape.zeros(cfg_.hidden_dim);
      }
      features = concat({h_next, context, parent_h});
    }
    out.summary = tanh(linear(s.p.head_w, s.p.head_b, features));

    if (cfg_.dynamic()) {
      Var<T> dummy_logits = matmul(s.p.dummy_emb, out.summary);
      Var<T> slot_logits = dots(std::span<const Var<T>>(s.bank.h), out.summary);
      out.logits = concat({dummy_logits, slot_logits});
    } else if (cfg_.tie_output) {
      out.logits = matmul(s.p.value_emb, out.summary);
    } else {
      out.logits = linear(s.p.out_w, s.p.out_b, out.summary);
    }
    if (cfg_.pointer) out.switch_logit = add(matmul(s.p.switch_w, out.summary), s.p.switch_b);

    if (cfg_.attention) {
      typename StepState<T>::Entry entry;
      entry.position = pos;
      entry.hidden = h_next;
      entry.key = matmul(s.p.mem, h_next);
      s.ring.push_back(entry);
      while (s.ring.size() > static_cast<std::size_t>(cfg_.window)) s.ring.pop_front();
    }
    const auto upos = static_cast<std::size_t>(pos);
    if (upos < s.remaining_children.size() && s.remaining_children[upos] > 0) s.parent_cache[pos] = h_next;
    if (parent >= 0) {
      auto& left = s.remaining_children.at(static_cast<std::size_t>(parent));
      if (--left <= 0) s.parent_cache.erase(parent);
    }
    s.h = h_next;
    s.c = c_next;
    ++s.position;
    return out;
  }

  /// Runs positions [begin, end) of a program on one tape.
  std::vector<StepOutput<T>> forward_chunk(Tape<T>& tape, StepState<T>& s, const FlatProgram& program,
                                           std::size_t begin, std::size_t end) {
    if (s.position != begin) throw std::logic_error("forward_chunk: state is not positioned at the chunk start");
    std::vector<StepOutput<T>> outs;
    outs.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      outs.push_back(step(tape, s, program.types[i], program.values[i], program.parent[i]));
    }
    return outs;
  }

 private:
  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : static_cast<int>(it->second);
  }

  Var<T> leaf(Tape<T>& tape, int ix) { return ix < 0 ? Var<T>() : tape.param(params_[static_cast<std::size_t>(ix)]); }

  void bind(Tape<T>& tape, StepState<T>& s) {
    s.p.main_w = leaf(tape, ix_.main_w);
    s.p.main_b = leaf(tape, ix_.main_b);
    s.p.dyn_w = leaf(tape, ix_.dyn_w);
    s.p.dyn_b = leaf(tape, ix_.dyn_b);
    s.p.mem = leaf(tape, ix_.mem);
    s.p.query = leaf(tape, ix_.query);
    s.p.head_w = leaf(tape, ix_.head_w);
    s.p.head_b = leaf(tape, ix_.head_b);
    s.p.out_w = leaf(tape, ix_.out_w);
    s.p.out_b = leaf(tape, ix_.out_b);
    s.p.switch_w = leaf(tape, ix_.switch_w);
    s.p.switch_b = leaf(tape, ix_.switch_b);
    s.p.dummy_emb = leaf(tape, ix_.dummy_emb);
    if (cfg_.tie_output) s.p.value_emb = leaf(tape, ix_.value_emb);
    if (ix_.score >= 0) s.p.score = tape.row(params_[static_cast<std::size_t>(ix_.score)], 0);
  }

  struct Indices {
    int type_emb = -1, value_emb = -1, dummy_emb = -1, init_h = -1, value_init = -1, init_c = -1, dyn_w = -1,
        dyn_b = -1, main_w = -1, main_b = -1, main_h = -1, main_c = -1, mem = -1, query = -1, score = -1,
        head_w = -1, head_b = -1, out_w = -1, out_b = -1, switch_w = -1, switch_b = -1;
  };

  ModelConfig cfg_;
  std::vector<Parameter<T>> params_;
  std::vector<bool> zero_init_;
  std::map<std::string, std::size_t> index_;
  Indices ix_;
};

namespace detail {

template <class T>
std::vector<double> softmax_values(std::span<const T> x) {
  std::vector<double> out(x.size());
  if (x.empty()) return out;
  const double mx = static_cast<double>(*std::max_element(x.begin(), x.end()));
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(static_cast<double>(x[i]) - mx);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

}  // namespace detail

/// True when the switcher and pointer segment are active for this output.
template <class T>
bool pointer_active(const StepOutput<T>& out, const ModelConfig& cfg) {
  return cfg.pointer && out.history > 0;
}

/// [s * w ; (1 - s) * l ; 0...] of length value_vocab + window. Without a
/// pointer or without history, the vocabulary distribution carries all mass.
template <class T>
std::vector<double> merged_distribution(const StepOutput<T>& out, const ModelConfig& cfg) {
  std::vector<double> dist(static_cast<std::size_t>(cfg.value_vocab + cfg.window), 0.0);
  const auto w = detail::softmax_values<T>(out.logits.value());
  if (!pointer_active(out, cfg)) {
    std::copy(w.begin(), w.end(), dist.begin());
    return dist;
  }
  const double z = static_cast<double>(out.switch_logit.item());
  const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  const auto l = detail::softmax_values<T>(out.scores.value());
  for (std::size_t i = 0; i < w.size(); ++i) dist[i] = s * w[i];
  for (std::size_t k = 0; k < l.size(); ++k) dist[w.size() + k] = (1.0 - s) * l[k];
  return dist;
}

/// -log P(value = target) under the merged distribution.
template <class T>
Var<T> vocab_nll(const StepOutput<T>& out, const ModelConfig& cfg, std::int32_t target) {
  using namespace ad;
  if (target < 0 || target >= cfg.value_vocab) throw std::out_of_range("vocab_nll: target out of range");
  Var<T> lp = pick(log_softmax(out.logits), static_cast<std::size_t>(target));
  if (pointer_active(out, cfg)) lp = add(lp, log_sigmoid(out.switch_logit));
  return neg(lp);
}

/// -log P(copy from `offset` positions back) under the merged distribution.
template <class T>
Var<T> pointer_nll(const StepOutput<T>& out, const ModelConfig& cfg, int offset) {
  using namespace ad;
  if (!pointer_active(out, cfg)) throw std::logic_error("pointer_nll: pointer inactive at this position");
  if (offset < 1 || offset > out.history) throw std::out_of_range("pointer_nll: offset outside the window");
  Var<T> lp = pick(log_softmax(out.scores), static_cast<std::size_t>(offset - 1));
  return neg(add(lp, log_sigmoid(neg(out.switch_logit))));
}

struct Prediction {
  bool copy = false;      // true: copy from `offset` positions back
  std::int32_t value = kUnk;  // vocabulary id when !copy
  int offset = 0;
  double probability = 0.0;
};

/// Argmax over the merged distribution; the lowest index wins ties, so the
/// vocabulary segment beats the pointer segment.
inline Prediction predict_next(std::span<const double> dist, int value_vocab) {
  if (dist.empty()) throw std::invalid_argument("predict_next: empty distribution");
  std::size_t best = 0;
  for (std::size_t i = 1; i < dist.size(); ++i) {
    if (dist[i] > dist[best]) best = i;
  }
  Prediction p;
  p.probability = dist[best];
  if (best < static_cast<std::size_t>(value_vocab)) {
    p.value = static_cast<std::int32_t>(best);
  } else {
    p.copy = true;
    p.offset = static_cast<int>(best - static_cast<std::size_t>(value_vocab)) + 1;
  }
  return p;
}

/// Resolves a copy prediction against the values seen before position `pos`.
inline std::int32_t copied_value(const FlatProgram& p, std::size_t pos, int offset) {
  if (offset < 1 || static_cast<std::size_t>(offset) > pos) throw std::out_of_range("copied_value: offset outside history");
  return p.values[pos - static_cast<std::size_t>(offset)];
}

}  // namespace anoncomplete
