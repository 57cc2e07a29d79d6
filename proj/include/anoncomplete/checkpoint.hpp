#pragma once

// Model checkpoints ("ANM1") and run manifests.
//
// Layout, little-endian:
//   "ANM1" u32 version
//   u32 header length, header bytes (JSON: config, vocabulary tables, fingerprints)
//   u32 tensor count, then per tensor:
//     u32 name length, name bytes, u32 ndim, u64 dims[ndim], f32 data[prod(dims)]

#include "ast_corpus.hpp"
#include "evaluator.hpp"
#include "model.hpp"

#include <json.hpp>

#include <bit>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

namespace anoncomplete {

inline constexpr char kCheckpointMagic[4] = {'A', 'N', 'M', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything besides the tensors.
struct CheckpointHeader {
  ModelConfig model;
  CorpusKind corpus_kind = CorpusKind::full;
  std::uint32_t k = 0;
  std::vector<std::string> type_names;
  std::vector<std::string> value_names;
  std::uint64_t type_fingerprint = 0;
  std::uint64_t value_fingerprint = 0;
  int epoch = 0;
  std::string manifest;  // path of the manifest that produced the file
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"mode", to_string(c.mode)}, {"num_types", c.num_types}, {"value_vocab", c.value_vocab},
          {"type_dim", c.type_dim},    {"value_dim", c.value_dim}, {"hidden_dim", c.hidden_dim},
          {"window", c.window},        {"attention", c.attention}, {"pointer", c.pointer},
          {"tie_output", c.tie_output}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.mode = parse_embedding_mode(j.at("mode").get<std::string>());
  c.num_types = j.at("num_types").get<int>();
  c.value_vocab = j.at("value_vocab").get<int>();
  c.type_dim = j.at("type_dim").get<int>();
  c.value_dim = j.at("value_dim").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.window = j.at("window").get<int>();
  c.attention = j.at("attention").get<bool>();
  c.pointer = j.at("pointer").get<bool>();
  c.tie_output = j.value("tie_output", false);
  return c;
}

inline CheckpointHeader make_header(const ModelConfig& cfg, const Corpus& corpus) {
  CheckpointHeader h;
  h.model = cfg;
  h.corpus_kind = corpus.kind;
  h.k = corpus.k;
  h.type_names = corpus.vocab.type_names;
  h.value_names = corpus.vocab.value_names;
  h.type_fingerprint = type_fingerprint(corpus.vocab);
  h.value_fingerprint = value_fingerprint(corpus.vocab);
  return h;
}

template <class T>
void write_checkpoint(std::ostream& out, const CheckpointHeader& h, const Model<T>& model) {
  static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);
  const nlohmann::json header = {{"model", to_json(h.model)},
                                 {"corpus_kind", to_string(h.corpus_kind)},
                                 {"k", h.k},
                                 {"type_names", h.type_names},
                                 {"value_names", h.value_names},
                                 {"type_fingerprint", h.type_fingerprint},
                                 {"value_fingerprint", h.value_fingerprint},
                                 {"epoch", h.epoch},
                                 {"manifest", h.manifest}};
  out.write(kCheckpointMagic, 4);
  io::put_u32(out, kCheckpointVersion);
  io::put_string(out, header.dump());
  const auto& params = model.parameters();
  io::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    io::put_string(out, p.name);
    io::put_u32(out, 2);
    io::put_u64(out, static_cast<std::uint64_t>(p.rows));
    io::put_u64(out, static_cast<std::uint64_t>(p.cols));
    for (auto x : p.value) io::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  }
  if (!out) throw IoError("checkpoint write failed");
}

inline CorpusKind parse_corpus_kind(const std::string& s) {
  if (s == "full") return CorpusKind::full;
  if (s == "anonymized") return CorpusKind::anonymized;
  if (s == "stripped") return CorpusKind::stripped;
  throw FormatError("unknown corpus kind " + s);
}

struct Checkpoint {
  CheckpointHeader header;
  Model<float> model;
};

/// Reads a checkpoint; every tensor must match the layout implied by the header.
inline Checkpoint read_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("not a model checkpoint");
  if (io::get_u32(in) != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  CheckpointHeader h;
  try {
    const auto j = nlohmann::json::parse(io::get_string(in));
    h.model = model_config_from_json(j.at("model"));
    h.corpus_kind = parse_corpus_kind(j.at("corpus_kind").get<std::string>());
    h.k = j.at("k").get<std::uint32_t>();
    h.type_names = j.at("type_names").get<std::vector<std::string>>();
    h.value_names = j.at("value_names").get<std::vector<std::string>>();
    h.type_fingerprint = j.at("type_fingerprint").get<std::uint64_t>();
    h.value_fingerprint = j.at("value_fingerprint").get<std::uint64_t>();
    h.epoch = j.value("epoch", 0);
    h.manifest = j.value("manifest", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }
  if (fingerprint_names(h.type_names) != h.type_fingerprint || fingerprint_names(h.value_names) != h.value_fingerprint) {
    throw FingerprintError("checkpoint vocabulary tables do not match their fingerprints");
  }
  if (static_cast<std::size_t>(h.model.num_types) != h.type_names.size() ||
      static_cast<std::size_t>(h.model.value_vocab) != h.value_names.size()) {
    throw FormatError("checkpoint config disagrees with its vocabulary tables");
  }
  Checkpoint ck{h, Model<float>(h.model)};
  auto& params = ck.model.parameters();
  if (io::get_u32(in) != params.size()) throw FormatError("checkpoint tensor count does not match the configuration");
  for (auto& p : params) {
    const auto name = io::get_string(in, 1u << 12);
    if (name != p.name) throw FormatError("expected tensor " + p.name + ", found " + name);
    if (io::get_u32(in) != 2) throw FormatError("tensor " + name + " must be two-dimensional");
    const auto rows = io::get_u64(in), cols = io::get_u64(in);
    if (rows != static_cast<std::uint64_t>(p.rows) || cols != static_cast<std::uint64_t>(p.cols)) {
      throw FormatError("tensor " + name + " has the wrong shape");
    }
    for (auto& x : p.value) x = std::bit_cast<float>(io::get_u32(in));
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const CheckpointHeader& h, const Model<float>& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  write_checkpoint(out, h, model);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_checkpoint(in);
}

/// Fails with FingerprintError unless the corpus was built with the checkpoint's vocabulary.
inline void check_fingerprints(const CheckpointHeader& h, const Corpus& corpus) {
  if (type_fingerprint(corpus.vocab) != h.type_fingerprint || value_fingerprint(corpus.vocab) != h.value_fingerprint) {
    throw FingerprintError("corpus vocabulary does not match the checkpoint");
  }
}

/// Provenance record written next to every artifact.
struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  nlohmann::json inputs = nlohmann::json::object();   // path -> fingerprint
  std::vector<std::string> outputs;
  double seconds = 0.0;
  std::string version = "0.1.0";

  nlohmann::json to_json() const {
    return {{"command", command}, {"config", config},   {"seed", seed},       {"inputs", inputs},
            {"outputs", outputs}, {"seconds", seconds}, {"version", version}};
  }
};

inline void save_manifest(const std::string& path, const RunManifest& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << m.to_json().dump(2) << '\n';
}

}  // namespace anoncomplete
