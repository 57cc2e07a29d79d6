#pragma once

// Full-model gradient check and parameter accounting.

#include "anonymizer.hpp"
#include "ast_corpus.hpp"
#include "model.hpp"
#include "targets.hpp"

#include <cstdio>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace anoncomplete {

/// Random program over `num_types` node types whose values cycle through a
/// few placeholders, so vocabulary and pointer targets both occur.
inline FlatProgram random_program(std::mt19937_64& rng, int length, int num_types, int value_vocab) {
  FlatProgram p;
  for (int i = 0; i < length; ++i) {
    const bool last = i + 1 == length;
    p.types.push_back(last ? kEofType : 1 + static_cast<std::int32_t>(uniform_below(rng, static_cast<std::uint64_t>(num_types - 1))));
    std::int32_t v = kEof;
    if (!last) {
      v = uniform_below(rng, 3) == 0 ? kEmpty : static_cast<std::int32_t>(uniform_below(rng, static_cast<std::uint64_t>(value_vocab)));
      if (v == kEof) v = kEmpty;
    }
    p.values.push_back(v);
    // raw identity 1000 + id for named values; UNK positions get distinct raws, some repeated
    std::int32_t raw = v;
    if (v == kUnk) raw = 500 + static_cast<std::int32_t>(uniform_below(rng, 3));
    else if (!is_dummy(v)) raw = 1000 + v;
    p.orig.push_back(raw);
    p.parent.push_back(i == 0 || last ? -1 : static_cast<std::int32_t>(uniform_below(rng, static_cast<std::uint64_t>(i))));
  }
  return p;
}

struct TinyGradCheck {
  GradCheckResult result;
  std::size_t loss_terms = 0;
  double loss = 0.0;
};

/// Tiny dynamic model with attention and pointer.
inline ModelConfig tiny_gradcheck_config() {
  ModelConfig cfg;
  cfg.mode = EmbeddingMode::dynamic;
  cfg.num_types = 5;
  cfg.value_vocab = kNumDummies + 4;
  cfg.type_dim = 3;
  cfg.value_dim = 4;
  cfg.hidden_dim = 5;
  cfg.window = 12;
  return cfg;
}

/// Central-difference check of the summed single-chunk loss, in double precision.
/// `cfg` needs attention and pointer.
inline TinyGradCheck tiny_gradcheck(std::uint64_t seed, double eps = 1e-5,
                                    const ModelConfig& cfg = tiny_gradcheck_config()) {
  Model<double> model(cfg);
  model.init_uniform(seed, 0.5);
  // non-zero initial states so their gradients are exercised away from the origin
  std::mt19937_64 rng(mix_seed(seed, 1));
  for (auto& p : model.parameters()) {
    for (auto& x : p.value) x += 0.1 * (static_cast<double>(rng() >> 11) * 0x1.0p-53 - 0.5);
  }
  // redraw until pointer and shared vocabulary/pointer targets both occur, so every head carries gradient
  FlatProgram program;
  std::vector<TargetSpec> targets;
  for (;;) {
    program = random_program(rng, cfg.window, cfg.num_types, cfg.value_vocab);
    targets = make_targets(program, cfg.window);
    int pointer = 0, both = 0;
    for (std::size_t i = 1; i < targets.size(); ++i) {
      pointer += targets[i].kind == TargetKind::pointer ? 1 : 0;
      both += targets[i].kind == TargetKind::both ? 1 : 0;
    }
    if (pointer >= 2 && both >= 1) break;
  }
  TinyGradCheck out;
  auto f = [&](Tape<double>& tape) {
    StepState<double> state = model.attach(tape, model.begin_program(program));
    const auto outs = model.forward_chunk(tape, state, program, 0, program.length());
    std::vector<Var<double>> terms;
    for (std::size_t i = 0; i < outs.size(); ++i) {
      if (auto l = position_loss(outs[i], cfg, targets[i], LossStrategy::standard)) terms.push_back(*l);
    }
    out.loss_terms = terms.size();
    return ad::sum(ad::concat(std::span<const Var<double>>(terms)));
  };
  std::vector<Parameter<double>*> params;
  for (auto& p : model.parameters()) params.push_back(&p);
  // central differences of a loss near 25 carry ~1e-10 of roundoff at eps = 1e-5, so
  // gradients below the floor are compared in absolute terms
  out.result = grad_check(f, std::span<Parameter<double>* const>(params), eps, 0, 7, 1e-5);
  Tape<double> tape(false);
  out.loss = f(tape).item();
  return out;
}

/// Dimensions for parameter accounting across the anonymized-data models and the full-data model.
struct ParamReportConfig {
  int type_dim = 300;
  int value_dim = 1200;          // static / no-vars / full-data value embeddings
  int dynamic_value_dim = 500;
  int hidden_dim = 1500;
  int k = 500;
  int full_vocab = 50000;
  int num_types = 330;
  int window = 50;
  bool attention = true;
  bool pointer = true;
};

inline ParamReportConfig parse_param_report_config(const std::map<std::string, std::string>& kv) {
  ParamReportConfig c;
  for (const auto& [key, v] : kv) {
    try {
      if (key == "type_dim") c.type_dim = std::stoi(v);
      else if (key == "value_dim") c.value_dim = std::stoi(v);
      else if (key == "dynamic_value_dim") c.dynamic_value_dim = std::stoi(v);
      else if (key == "hidden_dim") c.hidden_dim = std::stoi(v);
      else if (key == "K" || key == "k") c.k = std::stoi(v);
      else if (key == "full_vocab") c.full_vocab = std::stoi(v);
      else if (key == "num_types") c.num_types = std::stoi(v);
      else if (key == "window") c.window = std::stoi(v);
      else if (key == "attention") c.attention = v == "true" || v == "1";
      else if (key == "pointer") c.pointer = v == "true" || v == "1";
      else throw ConfigError("param-report: unknown key '" + key + "'");
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const ConfigError*>(&e)) throw;
      throw ConfigError("param-report: bad value for " + key + ": '" + v + "'");
    }
  }
  return c;
}

struct ModelCount {
  std::string label;
  ModelConfig config;
  std::vector<TensorSpec> tensors;
  std::size_t total = 0;
};

inline std::vector<ModelCount> param_report(const ParamReportConfig& c) {
  auto make = [&](std::string label, EmbeddingMode mode, int value_dim, int vocab) {
    ModelCount m;
    m.label = std::move(label);
    m.config.mode = mode;
    m.config.num_types = c.num_types;
    m.config.value_vocab = vocab;
    m.config.type_dim = c.type_dim;
    m.config.value_dim = value_dim;
    m.config.hidden_dim = c.hidden_dim;
    m.config.window = c.window;
    m.config.attention = c.attention;
    m.config.pointer = c.pointer;
    m.tensors = parameter_layout(m.config);
    m.total = parameter_count(m.config);
    return m;
  };
  return {make("no_vars", EmbeddingMode::no_vars, c.value_dim, kNumDummies),
          make("static", EmbeddingMode::static_embeddings, c.value_dim, kNumDummies + c.k),
          make("dynamic", EmbeddingMode::dynamic, c.dynamic_value_dim, kNumDummies + c.k),
          make("standard", EmbeddingMode::static_embeddings, c.value_dim, kNumDummies + c.full_vocab)};
}

inline std::string format_param_report(const std::vector<ModelCount>& models) {
  std::ostringstream os;
  char buf[160];
  for (const auto& m : models) {
    os << m.label << " (mode " << to_string(m.config.mode) << ", values " << m.config.value_vocab << ")\n";
    for (const auto& t : m.tensors) {
      std::snprintf(buf, sizeof(buf), "  %-22s %8d x %-8d %12zu\n", t.name.c_str(), t.rows, t.cols, t.size());
      os << buf;
    }
    std::snprintf(buf, sizeof(buf), "  %-22s %31zu (%.2fM)\n", "total", m.total, static_cast<double>(m.total) / 1e6);
    os << buf;
  }
  return os.str();
}

}  // namespace anoncomplete
