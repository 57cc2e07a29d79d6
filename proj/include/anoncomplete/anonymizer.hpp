#pragma once

// Per-program variable anonymization (var1..varK placeholders), K selection by
// corpus coverage, and the no-variables (stripped) corpus.

#include "ast_corpus.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace anoncomplete {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// splitmix64 finalizer; derives independent per-program seeds from one global seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Uniform integer in [0, n) from a 64-bit engine, identical on every platform
/// (std::uniform_int_distribution is implementation-defined).
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

/// Distinct non-dummy original values of a program.
inline std::size_t distinct_values(const FlatProgram& p) {
  std::unordered_set<std::int32_t> seen;
  for (auto raw : p.orig) {
    if (!is_dummy(raw)) seen.insert(raw);
  }
  return seen.size();
}

/// Smallest K >= 1 such that at least `coverage` of programs hold <= K distinct values.
inline int select_k(const std::vector<FlatProgram>& corpus, double coverage = 0.99) {
  if (corpus.empty()) throw std::invalid_argument("select_k: empty corpus");
  if (!(coverage > 0.0 && coverage <= 1.0)) throw ConfigError("select_k: coverage must be in (0, 1]");
  std::vector<std::size_t> counts;
  counts.reserve(corpus.size());
  for (const auto& p : corpus) counts.push_back(distinct_values(p));
  std::sort(counts.begin(), counts.end());
  const double needed = coverage * static_cast<double>(counts.size()) - 1e-9;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (static_cast<double>(i + 1) >= needed) {
      // all programs up to index i are covered by K = counts[i]; ties extend coverage
      return static_cast<int>(std::max<std::size_t>(1, counts[i]));
    }
  }
  return static_cast<int>(std::max<std::size_t>(1, counts.back()));
}

/// Optional restriction of which positions are anonymized (by node type id).
/// Non-dummy values at positions outside the filter become UNK.
using ValueFilter = std::function<bool(std::int32_t type_id)>;

/// Replaces the program's distinct non-dummy values with placeholders drawn as a
/// random subset of var1..varK. The first K distinct values (in order of first
/// appearance) get placeholders; later ones become UNK. orig is preserved.
inline FlatProgram anonymize(const FlatProgram& program, int k, std::uint64_t seed,
                             const ValueFilter& filter = nullptr) {
  if (k < 1) throw ConfigError("anonymize: K must be >= 1");
  FlatProgram out = program;
  out.anon_map.assign(static_cast<std::size_t>(k), -1);

  std::vector<std::int32_t> slots(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) slots[static_cast<std::size_t>(i)] = i;
  std::mt19937_64 rng(seed);
  // lazily-extended Fisher-Yates: the j-th distinct value takes slots[j]
  std::size_t drawn = 0;
  auto next_slot = [&]() {
    const auto j = drawn + static_cast<std::size_t>(uniform_below(rng, slots.size() - drawn));
    std::swap(slots[drawn], slots[j]);
    return slots[drawn++];
  };

  std::unordered_map<std::int32_t, std::int32_t> mapping;
  for (std::size_t i = 0; i < program.length(); ++i) {
    const auto raw = program.orig[i];
    if (is_dummy(raw)) {
      out.values[i] = raw;
      continue;
    }
    if (filter && !filter(program.types[i])) {
      out.values[i] = kUnk;
      continue;
    }
    auto it = mapping.find(raw);
    if (it == mapping.end()) {
      std::int32_t id = kUnk;
      if (drawn < slots.size()) {
        const auto slot = next_slot();
        id = kNumDummies + slot;
        out.anon_map[static_cast<std::size_t>(slot)] = raw;
      }
      it = mapping.emplace(raw, id).first;
    }
    out.values[i] = it->second;
  }
  return out;
}

/// Every non-dummy value becomes UNK.
inline FlatProgram strip_variables(const FlatProgram& program) {
  FlatProgram out = program;
  for (auto& v : out.values) {
    if (!is_dummy(v)) v = kUnk;
  }
  out.anon_map.clear();
  return out;
}

inline std::vector<std::string> placeholder_names(int k) {
  std::vector<std::string> names = {kEmptyName, kUnkName, kEofName};
  for (int i = 1; i <= k; ++i) names.push_back("var" + std::to_string(i));
  return names;
}

namespace detail {

inline void recount_values(Corpus& c) {
  c.vocab.value_counts.assign(c.vocab.value_names.size(), 0);
  for (const auto& p : c.programs) {
    for (auto v : p.values) ++c.vocab.value_counts[static_cast<std::size_t>(v)];
  }
}

}  // namespace detail

/// Program i is anonymized with seed mix_seed(seed, i).
inline Corpus anonymize_corpus(const Corpus& full, int k, std::uint64_t seed, const ValueFilter& filter = nullptr) {
  if (full.kind != CorpusKind::full) throw ConfigError("anonymize_corpus: input must be a full-data corpus");
  Corpus out;
  out.kind = CorpusKind::anonymized;
  out.k = static_cast<std::uint32_t>(k);
  out.raw_values = full.raw_values;
  out.vocab.type_names = full.vocab.type_names;
  out.vocab.value_names = placeholder_names(k);
  out.vocab.value_raw.assign(out.vocab.value_names.size(), -1);
  for (std::int32_t d = 0; d < kNumDummies; ++d) out.vocab.value_raw[static_cast<std::size_t>(d)] = d;
  out.programs.reserve(full.programs.size());
  for (std::size_t i = 0; i < full.programs.size(); ++i) {
    out.programs.push_back(anonymize(full.programs[i], k, mix_seed(seed, i), filter));
  }
  out.vocab.rebuild_indices();
  detail::recount_values(out);
  return out;
}

inline Corpus strip_corpus(const Corpus& full) {
  Corpus out;
  out.kind = CorpusKind::stripped;
  out.raw_values = full.raw_values;
  out.vocab.type_names = full.vocab.type_names;
  out.vocab.value_names = {kEmptyName, kUnkName, kEofName};
  out.vocab.value_raw = {kEmpty, kUnk, kEof};
  out.programs.reserve(full.programs.size());
  for (const auto& p : full.programs) out.programs.push_back(strip_variables(p));
  out.vocab.rebuild_indices();
  detail::recount_values(out);
  return out;
}

/// Relabels placeholders in order of first appearance (var ids 3, 4, ...).
/// Two anonymizations of one program differ only by a placeholder permutation
/// iff their canonical forms are equal.
inline std::vector<std::int32_t> canonical_values(const FlatProgram& p) {
  std::unordered_map<std::int32_t, std::int32_t> relabel;
  std::vector<std::int32_t> out;
  out.reserve(p.length());
  for (auto v : p.values) {
    if (is_dummy(v)) {
      out.push_back(v);
      continue;
    }
    auto it = relabel.try_emplace(v, kNumDummies + static_cast<std::int32_t>(relabel.size())).first;
    out.push_back(it->second);
  }
  return out;
}

}  // namespace anoncomplete
