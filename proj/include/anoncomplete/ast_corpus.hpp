#pragma once

// Serialized-AST ingestion, depth-first flattening, vocabularies, chunking and
// the binary corpus cache.

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace anoncomplete {

/// Reserved node-value ids, shared by every vocabulary (full, anonymized, stripped).
inline constexpr std::int32_t kEmpty = 0;
inline constexpr std::int32_t kUnk = 1;
inline constexpr std::int32_t kEof = 2;
inline constexpr std::int32_t kNumDummies = 3;
/// Reserved node-type id of the trailing end-of-file token.
inline constexpr std::int32_t kEofType = 0;

inline constexpr const char* kEmptyName = "<EMPTY>";
inline constexpr const char* kUnkName = "<UNK>";
inline constexpr const char* kEofName = "<EOF>";

inline bool is_dummy(std::int32_t value_id) noexcept { return value_id >= 0 && value_id < kNumDummies; }

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AstNode {
  std::string type_name;
  std::optional<std::string> value;
  std::vector<int> children;
};

using AstProgram = std::vector<AstNode>;

/// Parses one line: a JSON array of {"type", "value"?, "children"?} objects.
/// Rejects out-of-range children and values on non-leaf nodes.
inline AstProgram parse_ast_line(std::string_view line) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw ParseError("program must be a JSON array of nodes");
  AstProgram nodes;
  nodes.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& obj = doc[i];
    if (!obj.is_object()) throw ParseError("node " + std::to_string(i) + " is not an object");
    auto type_it = obj.find("type");
    if (type_it == obj.end() || !type_it->is_string()) {
      throw ParseError("node " + std::to_string(i) + " lacks a string \"type\"");
    }
    AstNode node;
    node.type_name = type_it->get<std::string>();
    if (auto v = obj.find("value"); v != obj.end() && !v->is_null()) {
      if (v->is_string()) {
        node.value = v->get<std::string>();
      } else {
        node.value = v->dump();  // numbers and booleans keep their literal spelling
      }
    }
    if (auto c = obj.find("children"); c != obj.end() && !c->is_null()) {
      if (!c->is_array()) throw ParseError("node " + std::to_string(i) + ": \"children\" is not an array");
      for (const auto& child : *c) {
        if (!child.is_number_integer()) throw ParseError("node " + std::to_string(i) + ": non-integer child index");
        node.children.push_back(child.get<int>());
      }
    }
    nodes.push_back(std::move(node));
  }
  const int n = static_cast<int>(nodes.size());
  for (int i = 0; i < n; ++i) {
    const auto& node = nodes[static_cast<std::size_t>(i)];
    for (int c : node.children) {
      if (c < 0 || c >= n) throw ParseError("node " + std::to_string(i) + ": child index " + std::to_string(c) + " out of range");
    }
    if (!node.children.empty() && node.value) {
      throw ParseError("node " + std::to_string(i) + " (" + node.type_name + ") has both a value and children");
    }
  }
  return nodes;
}

struct ParseIssue {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct ParseReport {
  std::vector<AstProgram> programs;
  std::vector<ParseIssue> errors;
};

/// Reads a line-delimited AST file. Blank lines are skipped; malformed lines are
/// recorded and skipped.
inline ParseReport parse_ast_stream(std::istream& in) {
  ParseReport report;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      report.programs.push_back(parse_ast_line(line));
    } catch (const ParseError& e) {
      report.errors.push_back({lineno, e.what()});
    }
  }
  return report;
}

inline ParseReport parse_ast_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_ast_stream(in);
}

/// Bidirectional string <-> dense id map; ids are assigned in first-seen order.
class Interner {
 public:
  std::int32_t intern(const std::string& s) {
    auto [it, inserted] = ids_.try_emplace(s, static_cast<std::int32_t>(names_.size()));
    if (inserted) names_.push_back(s);
    return it->second;
  }
  std::optional<std::int32_t> find(const std::string& s) const {
    auto it = ids_.find(s);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& name(std::int32_t id) const { return names_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::size_t size() const noexcept { return names_.size(); }

 private:
  std::unordered_map<std::string, std::int32_t> ids_;
  std::vector<std::string> names_;
};

/// Depth-first flattening of one program.
///   types   node-type id per position
///   values  model-facing value id (after vocabulary / anonymization)
///   orig    identity of the original value (raw id), used for copy targets and
///           for scoring pointer copies
///   parent  flat position of the parent, -1 for the root and EOF
/// anon_map is filled only by anonymization: placeholder slot k -> raw id or -1.
struct FlatProgram {
  std::vector<std::int32_t> types;
  std::vector<std::int32_t> values;
  std::vector<std::int32_t> orig;
  std::vector<std::int32_t> parent;
  std::vector<std::int32_t> anon_map;

  std::size_t length() const noexcept { return types.size(); }

  bool operator==(const FlatProgram&) const = default;
};

/// Remaining-children counters derived from parent links.
inline std::vector<int> child_counts(const FlatProgram& p) {
  std::vector<int> counts(p.length(), 0);
  for (std::size_t i = 0; i < p.length(); ++i) {
    if (p.parent[i] >= 0) ++counts[static_cast<std::size_t>(p.parent[i])];
  }
  return counts;
}

/// Holds the string tables that flattening writes into.
class CorpusBuilder {
 public:
  CorpusBuilder() {
    types_.intern(kEofName);
    values_.intern(kEmptyName);
    values_.intern(kUnkName);
    values_.intern(kEofName);
  }

  /// Preorder flattening. Non-leaf nodes get EMPTY; leaves without a value get
  /// EMPTY; an (EOF, EOF) token with parent -1 is appended. Throws ParseError
  /// if the node array is not a tree rooted at 0 (cycles, shared or unreachable nodes).
  FlatProgram flatten(const AstProgram& program) {
    FlatProgram out;
    const std::size_t n = program.size();
    out.types.reserve(n + 1);
    out.values.reserve(n + 1);
    out.orig.reserve(n + 1);
    out.parent.reserve(n + 1);
    if (n > 0) {
      std::vector<char> seen(n, 0);
      // (node index, parent flat position)
      std::vector<std::pair<int, std::int32_t>> stack{{0, -1}};
      while (!stack.empty()) {
        auto [idx, parent_pos] = stack.back();
        stack.pop_back();
        const auto u = static_cast<std::size_t>(idx);
        if (seen[u]) throw ParseError("node " + std::to_string(idx) + " reached twice (cycle or shared child)");
        seen[u] = 1;
        const AstNode& node = program[u];
        const auto pos = static_cast<std::int32_t>(out.types.size());
        out.types.push_back(types_.intern(node.type_name));
        std::int32_t raw = kEmpty;
        if (node.children.empty() && node.value) raw = values_.intern(*node.value);
        if (!node.children.empty() && node.value) throw ParseError("non-leaf node carries a value");
        out.values.push_back(raw);
        out.orig.push_back(raw);
        out.parent.push_back(parent_pos);
        for (auto it = node.children.rbegin(); it != node.children.rend(); ++it) {
          if (*it < 0 || static_cast<std::size_t>(*it) >= n) throw ParseError("child index out of range");
          stack.emplace_back(*it, pos);
        }
      }
      if (out.types.size() != n) throw ParseError("program has nodes unreachable from the root");
    }
    out.types.push_back(kEofType);
    out.values.push_back(kEof);
    out.orig.push_back(kEof);
    out.parent.push_back(-1);
    return out;
  }

  const Interner& types() const noexcept { return types_; }
  const Interner& values() const noexcept { return values_; }

 private:
  Interner types_;
  Interner values_;
};

/// Node-type table (full) plus the node-value table (top-M plus the reserved ids).
struct Vocabulary {
  std::vector<std::string> type_names;
  std::vector<std::string> value_names;
  std::vector<std::uint64_t> value_counts;
  std::vector<std::int32_t> value_raw;  // value id -> raw id; -1 when the entry has no single original

  std::unordered_map<std::string, std::int32_t> type_index;
  std::unordered_map<std::string, std::int32_t> value_index;
  std::unordered_map<std::int32_t, std::int32_t> raw_index;

  std::size_t num_types() const noexcept { return type_names.size(); }
  std::size_t num_values() const noexcept { return value_names.size(); }

  std::int32_t value_id(const std::string& s) const {
    auto it = value_index.find(s);
    return it == value_index.end() ? kUnk : it->second;
  }
  std::int32_t value_of_raw(std::int32_t raw) const {
    if (is_dummy(raw)) return raw;
    auto it = raw_index.find(raw);
    return it == raw_index.end() ? kUnk : it->second;
  }
  std::optional<std::int32_t> type_id(const std::string& s) const {
    auto it = type_index.find(s);
    if (it == type_index.end()) return std::nullopt;
    return it->second;
  }

  void rebuild_indices() {
    type_index.clear();
    value_index.clear();
    raw_index.clear();
    for (std::size_t i = 0; i < type_names.size(); ++i) type_index.emplace(type_names[i], static_cast<std::int32_t>(i));
    for (std::size_t i = 0; i < value_names.size(); ++i) {
      value_index.emplace(value_names[i], static_cast<std::int32_t>(i));
      if (i < value_raw.size() && value_raw[i] >= 0 && !is_dummy(static_cast<std::int32_t>(i))) {
        raw_index.emplace(value_raw[i], static_cast<std::int32_t>(i));
      }
    }
  }
};

/// Frequency-ranked value vocabulary over raw ids. Ties keep first-seen order
/// because raw ids are assigned in first-seen order.
inline Vocabulary build_vocabulary(const std::vector<FlatProgram>& corpus, const CorpusBuilder& tables,
                                   std::size_t max_values) {
  if (corpus.empty()) throw std::invalid_argument("build_vocabulary: empty corpus");
  std::vector<std::uint64_t> counts(tables.values().size(), 0);
  for (const auto& p : corpus) {
    for (auto raw : p.orig) ++counts[static_cast<std::size_t>(raw)];
  }
  std::vector<std::int32_t> order;
  for (std::size_t r = kNumDummies; r < counts.size(); ++r) {
    if (counts[r] > 0) order.push_back(static_cast<std::int32_t>(r));
  }
  std::stable_sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
    return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)];
  });
  if (order.size() > max_values) order.resize(max_values);

  Vocabulary v;
  v.type_names = tables.types().names();
  for (std::int32_t d = 0; d < kNumDummies; ++d) {
    v.value_names.push_back(tables.values().name(d));
    v.value_counts.push_back(counts[static_cast<std::size_t>(d)]);
    v.value_raw.push_back(d);
  }
  for (auto raw : order) {
    v.value_names.push_back(tables.values().name(raw));
    v.value_counts.push_back(counts[static_cast<std::size_t>(raw)]);
    v.value_raw.push_back(raw);
  }
  v.rebuild_indices();
  return v;
}

/// Rewrites program.values from the raw identities through the vocabulary.
inline void apply_vocabulary(FlatProgram& p, const Vocabulary& vocab) {
  for (std::size_t i = 0; i < p.length(); ++i) p.values[i] = vocab.value_of_raw(p.orig[i]);
}

/// Smallest k in [1, window] such that position pos - k holds the same original
/// (non-dummy) value as `target_orig`. Positions before the program start are
/// not part of the window.
inline std::optional<int> copy_offset(const FlatProgram& p, std::size_t pos, std::int32_t target_orig, int window) {
  if (is_dummy(target_orig)) return std::nullopt;
  const int limit = std::min<int>(window, static_cast<int>(pos));
  for (int k = 1; k <= limit; ++k) {
    if (p.orig[pos - static_cast<std::size_t>(k)] == target_orig) return k;
  }
  return std::nullopt;
}

struct Chunk {
  std::size_t begin = 0;  // offset of inputs[0] within the program
  std::vector<std::pair<std::int32_t, std::int32_t>> inputs;  // (type, value)
  std::vector<std::int32_t> targets;                         // next value id; -1 past the last token
  std::vector<std::optional<int>> pointer_targets;           // copy offset for UNK-mapped targets
  bool carry = false;

  std::size_t length() const noexcept { return inputs.size(); }
};

inline std::vector<Chunk> chunk(const FlatProgram& p, int window = 50) {
  if (window < 1) throw std::invalid_argument("chunk: window must be >= 1");
  std::vector<Chunk> out;
  const std::size_t w = static_cast<std::size_t>(window);
  for (std::size_t begin = 0; begin < p.length(); begin += w) {
    Chunk c;
    c.begin = begin;
    c.carry = begin > 0;
    const std::size_t end = std::min(p.length(), begin + w);
    for (std::size_t i = begin; i < end; ++i) {
      c.inputs.emplace_back(p.types[i], p.values[i]);
      if (i + 1 < p.length()) {
        c.targets.push_back(p.values[i + 1]);
        if (p.values[i + 1] == kUnk) {
          c.pointer_targets.push_back(copy_offset(p, i, p.orig[i + 1], window));
        } else {
          c.pointer_targets.push_back(std::nullopt);
        }
      } else {
        c.targets.push_back(-1);
        c.pointer_targets.push_back(std::nullopt);
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

enum class CorpusKind : std::uint32_t { full = 0, anonymized = 1, stripped = 2 };

inline const char* to_string(CorpusKind k) {
  switch (k) {
    case CorpusKind::full: return "full";
    case CorpusKind::anonymized: return "anonymized";
    case CorpusKind::stripped: return "stripped";
  }
  return "?";
}

/// A preprocessed corpus: vocabulary, raw value table, and flattened programs.
struct Corpus {
  CorpusKind kind = CorpusKind::full;
  std::uint32_t k = 0;  // placeholder count for anonymized corpora
  Vocabulary vocab;
  std::vector<std::string> raw_values;
  std::vector<FlatProgram> programs;

  /// Raw identity for a model-facing value id predicted at a position of `program`.
  /// Empty for UNK and for placeholders not bound in this program.
  std::optional<std::int32_t> resolve(const FlatProgram& program, std::int32_t value_id) const {
    if (value_id == kUnk || value_id < 0) return std::nullopt;
    if (is_dummy(value_id)) return value_id;
    if (kind == CorpusKind::anonymized) {
      const auto slot = static_cast<std::size_t>(value_id - kNumDummies);
      if (slot >= program.anon_map.size() || program.anon_map[slot] < 0) return std::nullopt;
      return program.anon_map[slot];
    }
    if (static_cast<std::size_t>(value_id) >= vocab.value_raw.size()) return std::nullopt;
    const auto raw = vocab.value_raw[static_cast<std::size_t>(value_id)];
    if (raw < 0) return std::nullopt;
    return raw;
  }

  std::string raw_name(std::int32_t raw) const {
    if (raw < 0 || static_cast<std::size_t>(raw) >= raw_values.size()) return kUnkName;
    return raw_values[static_cast<std::size_t>(raw)];
  }
};

/// Parses, flattens and builds the value vocabulary in one pass over a report.
inline Corpus build_corpus(const std::vector<AstProgram>& programs, std::size_t max_values,
                           std::vector<ParseIssue>* rejected = nullptr) {
  CorpusBuilder builder;
  Corpus corpus;
  corpus.kind = CorpusKind::full;
  for (std::size_t i = 0; i < programs.size(); ++i) {
    try {
      corpus.programs.push_back(builder.flatten(programs[i]));
    } catch (const ParseError& e) {
      if (rejected) rejected->push_back({i + 1, e.what()});
    }
  }
  if (corpus.programs.empty()) throw std::invalid_argument("build_corpus: no valid programs");
  corpus.vocab = build_vocabulary(corpus.programs, builder, max_values);
  corpus.raw_values = builder.values().names();
  for (auto& p : corpus.programs) apply_vocabulary(p, corpus.vocab);
  return corpus;
}

// ---------------------------------------------------------------------------
// Fingerprints and the binary cache.

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t fingerprint_names(const std::vector<std::string>& names) {
  std::uint64_t h = fnv1a("names");
  for (const auto& n : names) {
    h = fnv1a(n, h);
    h = fnv1a(std::string_view("\0", 1), h);
  }
  return h;
}

inline std::uint64_t type_fingerprint(const Vocabulary& v) { return fingerprint_names(v.type_names); }
inline std::uint64_t value_fingerprint(const Vocabulary& v) { return fingerprint_names(v.value_names); }

namespace io {

inline void put_u32(std::ostream& out, std::uint32_t x) {
  const unsigned char b[4] = {static_cast<unsigned char>(x), static_cast<unsigned char>(x >> 8),
                              static_cast<unsigned char>(x >> 16), static_cast<unsigned char>(x >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& out, std::uint64_t x) {
  put_u32(out, static_cast<std::uint32_t>(x));
  put_u32(out, static_cast<std::uint32_t>(x >> 32));
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("unexpected end of file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& in) {
  const std::uint64_t lo = get_u32(in);
  const std::uint64_t hi = get_u32(in);
  return lo | (hi << 32);
}

inline void put_string(std::ostream& out, std::string_view s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, std::uint32_t max_len = 1u << 26) {
  const std::uint32_t n = get_u32(in);
  if (n > max_len) throw FormatError("string length out of range");
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), n)) throw FormatError("unexpected end of file");
  return s;
}

inline void put_ids(std::ostream& out, const std::vector<std::int32_t>& ids) {
  put_u32(out, static_cast<std::uint32_t>(ids.size()));
  for (auto x : ids) put_u32(out, static_cast<std::uint32_t>(x));
}

inline std::vector<std::int32_t> get_ids(std::istream& in, std::uint32_t max_len = 1u << 28) {
  const std::uint32_t n = get_u32(in);
  if (n > max_len) throw FormatError("array length out of range");
  std::vector<std::int32_t> ids(n);
  for (auto& x : ids) x = static_cast<std::int32_t>(get_u32(in));
  return ids;
}

inline void put_strings(std::ostream& out, const std::vector<std::string>& xs) {
  put_u32(out, static_cast<std::uint32_t>(xs.size()));
  for (const auto& s : xs) put_string(out, s);
}

inline std::vector<std::string> get_strings(std::istream& in) {
  const std::uint32_t n = get_u32(in);
  if (n > (1u << 28)) throw FormatError("table length out of range");
  std::vector<std::string> xs;
  xs.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) xs.push_back(get_string(in));
  return xs;
}

}  // namespace io

inline constexpr char kCorpusMagic[4] = {'A', 'N', 'C', '1'};
inline constexpr std::uint32_t kCorpusVersion = 1;

/// Cache layout (all integers little-endian u32, arrays prefixed by their u32 length):
///   "ANC1" version kind K
///   type_names  value_names  value_counts(u64)  value_raw  raw_values
///   num_programs, then per program: types values orig parent anon_map
inline void write_corpus(std::ostream& out, const Corpus& c) {
  out.write(kCorpusMagic, 4);
  io::put_u32(out, kCorpusVersion);
  io::put_u32(out, static_cast<std::uint32_t>(c.kind));
  io::put_u32(out, c.k);
  io::put_strings(out, c.vocab.type_names);
  io::put_strings(out, c.vocab.value_names);
  io::put_u32(out, static_cast<std::uint32_t>(c.vocab.value_counts.size()));
  for (auto n : c.vocab.value_counts) io::put_u64(out, n);
  io::put_ids(out, c.vocab.value_raw);
  io::put_strings(out, c.raw_values);
  io::put_u32(out, static_cast<std::uint32_t>(c.programs.size()));
  for (const auto& p : c.programs) {
    io::put_ids(out, p.types);
    io::put_ids(out, p.values);
    io::put_ids(out, p.orig);
    io::put_ids(out, p.parent);
    io::put_ids(out, p.anon_map);
  }
  if (!out) throw IoError("corpus write failed");
}

inline Corpus read_corpus(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCorpusMagic, 4) != 0) throw FormatError("not an ANC1 corpus cache");
  if (io::get_u32(in) != kCorpusVersion) throw FormatError("unsupported corpus cache version");
  Corpus c;
  const auto kind = io::get_u32(in);
  if (kind > 2) throw FormatError("unknown corpus kind");
  c.kind = static_cast<CorpusKind>(kind);
  c.k = io::get_u32(in);
  c.vocab.type_names = io::get_strings(in);
  c.vocab.value_names = io::get_strings(in);
  const auto ncounts = io::get_u32(in);
  if (ncounts != c.vocab.value_names.size()) throw FormatError("value count table size mismatch");
  c.vocab.value_counts.resize(ncounts);
  for (auto& n : c.vocab.value_counts) n = io::get_u64(in);
  c.vocab.value_raw = io::get_ids(in);
  c.raw_values = io::get_strings(in);
  c.vocab.rebuild_indices();
  const auto nprog = io::get_u32(in);
  c.programs.reserve(nprog);
  const auto ntypes = static_cast<std::int32_t>(c.vocab.type_names.size());
  const auto nvalues = static_cast<std::int32_t>(c.vocab.value_names.size());
  const auto nraw = static_cast<std::int32_t>(c.raw_values.size());
  for (std::uint32_t i = 0; i < nprog; ++i) {
    FlatProgram p;
    p.types = io::get_ids(in);
    p.values = io::get_ids(in);
    p.orig = io::get_ids(in);
    p.parent = io::get_ids(in);
    p.anon_map = io::get_ids(in);
    const auto n = p.types.size();
    if (p.values.size() != n || p.orig.size() != n || p.parent.size() != n) {
      throw FormatError("program " + std::to_string(i) + ": array length mismatch");
    }
    for (std::size_t t = 0; t < n; ++t) {
      if (p.types[t] < 0 || p.types[t] >= ntypes || p.values[t] < 0 || p.values[t] >= nvalues ||
          p.orig[t] < 0 || p.orig[t] >= nraw || p.parent[t] >= static_cast<std::int32_t>(t)) {
        throw FormatError("program " + std::to_string(i) + ": id out of range at position " + std::to_string(t));
      }
    }
    c.programs.push_back(std::move(p));
  }
  return c;
}

inline void save_corpus(const std::string& path, const Corpus& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  write_corpus(out, c);
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_corpus(in);
}

/// Backslash-escapes tab, newline, carriage return and backslash.
inline std::string tsv_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char ch : s) {
    switch (ch) {
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\\': out += "\\\\"; break;
      default: out += ch;
    }
  }
  return out;
}

inline std::string tsv_unescape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\' || i + 1 == s.size()) {
      out += s[i];
      continue;
    }
    switch (s[++i]) {
      case 't': out += '\t'; break;
      case 'n': out += '\n'; break;
      case 'r': out += '\r'; break;
      case '\\': out += '\\'; break;
      default: throw FormatError("bad escape in vocabulary file");
    }
  }
  return out;
}

/// Vocabulary text file: one "id<TAB>string<TAB>count" line per value entry
/// (strings escaped with tsv_escape).
inline void write_value_vocab(std::ostream& out, const Vocabulary& v) {
  for (std::size_t i = 0; i < v.value_names.size(); ++i) {
    out << i << '\t' << tsv_escape(v.value_names[i]) << '\t' << (i < v.value_counts.size() ? v.value_counts[i] : 0) << '\n';
  }
}

/// Same layout for node types; counts come from the programs.
inline void write_type_vocab(std::ostream& out, const Corpus& c) {
  std::vector<std::uint64_t> counts(c.vocab.type_names.size(), 0);
  for (const auto& p : c.programs) {
    for (auto t : p.types) ++counts[static_cast<std::size_t>(t)];
  }
  for (std::size_t i = 0; i < counts.size(); ++i) out << i << '\t' << tsv_escape(c.vocab.type_names[i]) << '\t' << counts[i] << '\n';
}

struct VocabEntry {
  std::int32_t id = 0;
  std::string name;
  std::uint64_t count = 0;
};

inline std::vector<VocabEntry> read_vocab_tsv(std::istream& in) {
  std::vector<VocabEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto a = line.find('\t');
    const auto b = line.rfind('\t');
    if (a == std::string::npos || a == b) throw FormatError("vocabulary line " + std::to_string(lineno) + " is malformed");
    VocabEntry e;
    e.id = std::stoi(line.substr(0, a));
    e.name = tsv_unescape(line.substr(a + 1, b - a - 1));
    e.count = std::stoull(line.substr(b + 1));
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace anoncomplete
