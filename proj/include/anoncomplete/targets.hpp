#pragma once

// Per-position training targets and the vocabulary/pointer loss strategies.

#include "ast_corpus.hpp"
#include "model.hpp"

#include <optional>
#include <random>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace anoncomplete {

enum class TargetKind { ignore, vocab, pointer, both };

struct TargetSpec {
  TargetKind kind = TargetKind::ignore;
  std::int32_t value = kUnk;  // vocab / both
  int offset = 0;             // pointer / both: positions back from the input position (1 = previous token)

  static TargetSpec ignore() { return {}; }
  static TargetSpec vocab(std::int32_t v) { return {TargetKind::vocab, v, 0}; }
  static TargetSpec pointer(int k) { return {TargetKind::pointer, kUnk, k}; }
  static TargetSpec both(std::int32_t v, int k) { return {TargetKind::both, v, k}; }

  bool operator==(const TargetSpec&) const = default;
};

/// Target for predicting position i + 1 from input position i. In-vocabulary
/// values are vocab targets (both, when also copyable); UNK-mapped values are
/// pointer targets at their most recent occurrence in the window, otherwise ignored.
/// Copyability compares original identities. The last position has no target.
inline std::vector<TargetSpec> make_targets(const FlatProgram& p, int window) {
  std::vector<TargetSpec> out(p.length());
  for (std::size_t i = 0; i + 1 < p.length(); ++i) {
    const auto v = p.values[i + 1];
    const auto off = copy_offset(p, i, p.orig[i + 1], window);
    if (v != kUnk) {
      out[i] = off ? TargetSpec::both(v, *off) : TargetSpec::vocab(v);
    } else {
      out[i] = off ? TargetSpec::pointer(*off) : TargetSpec::ignore();
    }
  }
  return out;
}

enum class LossStrategy { standard, ptr_priority, vocab_priority, min, random };

inline const char* to_string(LossStrategy s) {
  switch (s) {
    case LossStrategy::standard: return "standard";
    case LossStrategy::ptr_priority: return "ptr_priority";
    case LossStrategy::vocab_priority: return "vocab_priority";
    case LossStrategy::min: return "min";
    case LossStrategy::random: return "random";
  }
  return "?";
}

inline LossStrategy parse_loss_strategy(std::string_view s) {
  if (s == "standard") return LossStrategy::standard;
  if (s == "ptr_priority" || s == "a") return LossStrategy::ptr_priority;
  if (s == "vocab_priority" || s == "b") return LossStrategy::vocab_priority;
  if (s == "min" || s == "c") return LossStrategy::min;
  if (s == "random" || s == "d") return LossStrategy::random;
  throw std::invalid_argument("unknown loss strategy: " + std::string(s));
}

/// Attention history length at input position `pos`.
inline int history_at(std::size_t pos, const ModelConfig& cfg) {
  return cfg.attention ? static_cast<int>(std::min<std::size_t>(pos, static_cast<std::size_t>(cfg.window))) : 0;
}

/// Whether a position adds a loss term (independent of parameters).
inline bool contributes(const TargetSpec& spec, std::size_t pos, const ModelConfig& cfg) {
  const bool ptr = cfg.pointer && history_at(pos, cfg) > 0;
  switch (spec.kind) {
    case TargetKind::ignore: return false;
    case TargetKind::vocab:
    case TargetKind::both: return true;
    case TargetKind::pointer: return ptr;
  }
  return false;
}

/// Loss term for one position, or nothing when the position is ignored.
/// Strategies differ only where a target is both in the vocabulary and copyable;
/// `standard` resolves those to the vocabulary loss.
template <class T>
std::optional<Var<T>> position_loss(const StepOutput<T>& out, const ModelConfig& cfg, const TargetSpec& spec,
                                    LossStrategy strategy, std::mt19937_64* rng = nullptr) {
  const bool ptr = pointer_active(out, cfg);
  switch (spec.kind) {
    case TargetKind::ignore: return std::nullopt;
    case TargetKind::vocab: return vocab_nll(out, cfg, spec.value);
    case TargetKind::pointer:
      if (!ptr) return std::nullopt;
      return pointer_nll(out, cfg, spec.offset);
    case TargetKind::both:
      if (!ptr) return vocab_nll(out, cfg, spec.value);
      switch (strategy) {
        case LossStrategy::standard:
        case LossStrategy::vocab_priority: return vocab_nll(out, cfg, spec.value);
        case LossStrategy::ptr_priority: return pointer_nll(out, cfg, spec.offset);
        case LossStrategy::min: return ad::min2(vocab_nll(out, cfg, spec.value), pointer_nll(out, cfg, spec.offset));
        case LossStrategy::random: {
          if (rng == nullptr) throw std::invalid_argument("position_loss: random strategy needs a generator");
          return ((*rng)() >> 63) ? pointer_nll(out, cfg, spec.offset) : vocab_nll(out, cfg, spec.value);
        }
      }
  }
  return std::nullopt;
}

}  // namespace anoncomplete
