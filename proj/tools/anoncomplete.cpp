// Command line driver: preprocess -> anonymize/strip -> train -> eval /
// ensemble-eval / complete, plus gradcheck and param-report diagnostics.

#include <anoncomplete/anonymizer.hpp>
#include <anoncomplete/ast_corpus.hpp>
#include <anoncomplete/checkpoint.hpp>
#include <anoncomplete/diagnostics.hpp>
#include <anoncomplete/evaluator.hpp>
#include <anoncomplete/model.hpp>
#include <anoncomplete/synthetic.hpp>
#include <anoncomplete/trainer.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_map>

using namespace anoncomplete;
namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kBadInput = 2, kFingerprint = 3, kNumeric = 4 };

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("ANONCOMPLETE_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::logic_error&) {
      throw ConfigError(std::string("ANONCOMPLETE_SEED is not an unsigned integer: ") + env);
    }
  }
  return 1;
}

std::string hex(std::uint64_t x) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

nlohmann::json corpus_fingerprint(const Corpus& c) {
  return {{"kind", to_string(c.kind)},
          {"programs", c.programs.size()},
          {"type_fingerprint", hex(type_fingerprint(c.vocab))},
          {"value_fingerprint", hex(value_fingerprint(c.vocab))}};
}

class Timer {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_vocab_files(const std::string& cache, const Corpus& c) {
  std::ofstream values(cache + ".values.tsv"), types(cache + ".types.tsv");
  if (!values || !types) throw IoError("cannot write vocabulary files next to " + cache);
  write_value_vocab(values, c.vocab);
  write_type_vocab(types, c);
}

void save_corpus_with_manifest(const std::string& out, const Corpus& c, RunManifest m, const Timer& t) {
  save_corpus(out, c);
  write_vocab_files(out, c);
  m.outputs = {out, out + ".values.tsv", out + ".types.tsv"};
  m.seconds = t.seconds();
  save_manifest(out + ".manifest.json", m);
}

int cmd_synth(SynthConfig cfg, std::uint64_t seed, const std::string& out) {
  cfg.seed = seed;
  if (cfg.min_functions < 1 || cfg.max_functions < cfg.min_functions) throw ConfigError("synth: bad function range");
  const auto programs = cfg.programs;
  std::ofstream f(out);
  if (!f) throw IoError("cannot write " + out);
  write_programs(f, generate_programs(cfg));
  std::cout << "wrote " << programs << " programs to " << out << '\n';
  return kOk;
}

int cmd_preprocess(const std::string& input, const std::string& out, std::size_t max_values) {
  Timer t;
  const ParseReport report = parse_ast_file(input);
  for (const auto& issue : report.errors) std::cerr << input << ':' << issue.line << ": " << issue.message << '\n';
  std::vector<ParseIssue> rejected;
  Corpus c = build_corpus(report.programs, max_values, &rejected);
  for (const auto& issue : rejected) std::cerr << input << ": program " << issue.line << ": " << issue.message << '\n';
  RunManifest m;
  m.command = "preprocess";
  m.config = {{"max_values", max_values}};
  m.inputs = {{input, {{"bytes", fs::file_size(input)}}}};
  save_corpus_with_manifest(out, c, m, t);
  std::cout << "programs " << c.programs.size() << ", rejected " << report.errors.size() + rejected.size()
            << ", node types " << c.vocab.num_types() << ", values " << c.vocab.num_values() << '\n';
  return kOk;
}

ValueFilter make_filter(const Corpus& c, const std::string& spec) {
  if (spec.empty()) return nullptr;
  std::vector<char> allowed(c.vocab.num_types(), 0);
  std::stringstream ss(spec);
  std::string name;
  while (std::getline(ss, name, ',')) {
    auto id = c.vocab.type_id(name);
    if (!id) throw ConfigError("--value-filter: unknown node type " + name);
    allowed[static_cast<std::size_t>(*id)] = 1;
  }
  return [allowed](std::int32_t type) { return allowed[static_cast<std::size_t>(type)] != 0; };
}

int cmd_anonymize(const std::string& cache, const std::string& out, const std::string& k_arg, double coverage,
                  std::uint64_t seed, const std::string& mode, const std::string& filter_spec) {
  Timer t;
  const Corpus full = load_corpus(cache);
  RunManifest m;
  m.seed = seed;
  m.inputs = {{cache, corpus_fingerprint(full)}};
  if (mode == "strip") {
    m.command = "strip";
    save_corpus_with_manifest(out, strip_corpus(full), m, t);
    return kOk;
  }
  if (mode != "anonymize") throw ConfigError("--mode must be anonymize or strip");
  int k = 0;
  if (k_arg == "auto") {
    k = select_k(full.programs, coverage);
  } else {
    try {
      k = std::stoi(k_arg);
    } catch (const std::logic_error&) {
      throw ConfigError("--k expects an integer or auto");
    }
  }
  const Corpus anon = anonymize_corpus(full, k, seed, make_filter(full, filter_spec));
  m.command = "anonymize";
  m.config = {{"k", k}, {"coverage", coverage}, {"value_filter", filter_spec}};
  save_corpus_with_manifest(out, anon, m, t);
  std::cout << "K = " << k << ", programs " << anon.programs.size() << '\n';
  return kOk;
}

int cmd_strip(const std::string& cache, const std::string& out) {
  Timer t;
  const Corpus full = load_corpus(cache);
  RunManifest m;
  m.command = "strip";
  m.inputs = {{cache, corpus_fingerprint(full)}};
  save_corpus_with_manifest(out, strip_corpus(full), m, t);
  return kOk;
}

nlohmann::json train_config_json(const TrainConfig& c) {
  return {{"mode", to_string(c.mode)},
          {"type_dim", c.type_dim},
          {"value_dim", c.value_dim},
          {"hidden_dim", c.hidden_dim},
          {"window", c.window},
          {"attention", c.attention},
          {"pointer", c.pointer},
          {"tie_output", c.tie_output},
          {"strategy", to_string(c.strategy)},
          {"lr", c.lr},
          {"decay", c.decay},
          {"weight_decay", c.weight_decay},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"clip_norm", c.clip_norm},
          {"heldout_fraction", c.heldout_fraction},
          {"reanonymize_each_epoch", c.reanonymize_each_epoch},
          {"corpus", c.corpus},
          {"source_corpus", c.source_corpus},
          {"out", c.out_dir}};
}

int cmd_train(const std::string& config_path, const std::optional<std::uint64_t>& seed_flag, int workers) {
  Timer t;
  std::ifstream in(config_path);
  if (!in) throw IoError("cannot open " + config_path);
  const auto kv = read_key_values(in);
  TrainConfig cfg = parse_train_config(kv);
  // --seed beats the config file, which beats ANONCOMPLETE_SEED
  if (seed_flag || !kv.contains("seed")) cfg.seed = resolve_seed(seed_flag);
  if (cfg.corpus.empty()) throw ConfigError("config: corpus is required");
  if (workers != 1) std::cerr << "note: training runs single-threaded; --workers " << workers << " ignored\n";
  const Corpus corpus = load_corpus(cfg.corpus);
  if (cfg.k && corpus.kind == CorpusKind::anonymized && static_cast<std::uint32_t>(*cfg.k) != corpus.k) {
    throw ConfigError("config: K does not match the anonymized corpus");
  }
  std::optional<Corpus> source;
  if (cfg.reanonymize_each_epoch) {
    if (corpus.kind != CorpusKind::anonymized || cfg.source_corpus.empty()) {
      throw ConfigError("reanonymize_each_epoch needs an anonymized corpus and source_corpus");
    }
    source = load_corpus(cfg.source_corpus);
    check_aligned(corpus, *source);
  }
  auto [train_set, heldout] = split_heldout(corpus, cfg.heldout_fraction);
  const ModelConfig mcfg = model_config_for(cfg, corpus);
  fs::create_directories(cfg.out_dir);
  const std::string manifest_path = (fs::path(cfg.out_dir) / "manifest.json").string();
  const std::string metrics_path = (fs::path(cfg.out_dir) / "metrics.jsonl").string();
  std::ofstream metrics(metrics_path);
  if (!metrics) throw IoError("cannot write " + metrics_path);

  RunManifest m;
  m.command = "train";
  m.config = train_config_json(cfg);
  m.seed = cfg.seed;
  m.inputs = {{cfg.corpus, corpus_fingerprint(corpus)}};
  m.outputs = {metrics_path};

  Trainer trainer(cfg, mcfg);
  CheckpointHeader header = make_header(mcfg, corpus);
  header.manifest = manifest_path;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochMetrics& e) {
    for (const auto& r : e.records()) metrics << r.dump() << '\n';
    metrics.flush();
    std::cout << "epoch " << e.epoch << ": train loss " << e.train_loss << ", held-out accuracy "
              << 100.0 * e.heldout_accuracy << "% (" << e.seconds << " s)" << std::endl;
  };
  hooks.on_checkpoint = [&](int epoch, const Model<float>& model) {
    header.epoch = epoch;
    const auto path = (fs::path(cfg.out_dir) / ("epoch" + std::to_string(epoch) + ".anm")).string();
    save_checkpoint(path, header, model);
    save_checkpoint((fs::path(cfg.out_dir) / "model.anm").string(), header, model);
    m.outputs.push_back(path);
  };
  if (source) {
    const std::size_t n_train = train_set.programs.size();
    hooks.before_epoch = [&](int epoch, std::vector<FlatProgram>& programs) {
      if (epoch == 0) return;
      for (std::size_t i = 0; i < n_train; ++i) {
        programs[i] = anonymize(source->programs[i], static_cast<int>(corpus.k), mix_seed(mix_seed(cfg.seed, epoch), i));
      }
    };
  }
  trainer.train(train_set, &heldout, hooks);
  m.outputs.push_back((fs::path(cfg.out_dir) / "model.anm").string());
  m.seconds = t.seconds();
  save_manifest(manifest_path, m);
  return kOk;
}

int cmd_eval(const std::string& model_path, const std::string& corpus_path, bool per_category, bool json_only) {
  Checkpoint ck = load_checkpoint(model_path);
  const Corpus corpus = load_corpus(corpus_path);
  check_fingerprints(ck.header, corpus);
  const EvalReport r = evaluate(ck.model, corpus);
  auto j = r.to_json();
  j["model"] = model_path;
  j["corpus"] = corpus_path;
  std::cout << j.dump() << '\n';
  if (!json_only) std::cout << r.table(per_category);
  return kOk;
}

int cmd_ensemble(const std::string& a_path, const std::string& b_path, const std::string& full_path,
                 const std::string& anon_path, bool per_category) {
  Checkpoint a = load_checkpoint(a_path);
  Checkpoint b = load_checkpoint(b_path);
  const Corpus full = load_corpus(full_path);
  const Corpus anon = load_corpus(anon_path);
  check_fingerprints(a.header, full);
  check_fingerprints(b.header, anon);
  const EvalReport single = evaluate(a.model, full);
  const EvalReport merged = ensemble_evaluate(a.model, b.model, full, anon);
  nlohmann::json j = {{"model_a", a_path}, {"model_b", b_path}, {"model_a_accuracy", single.accuracy()},
                      {"ensemble", merged.to_json()}};
  std::cout << j.dump() << '\n' << merged.table(per_category);
  return kOk;
}

/// Greedy continuation of a prefix program (one node-array line).
int cmd_complete(const std::string& model_path, const std::string& prefix_path, int n, std::uint64_t seed) {
  Checkpoint ck = load_checkpoint(model_path);
  const auto& h = ck.header;
  const ParseReport report = parse_ast_file(prefix_path);
  if (report.programs.empty()) throw ParseError("prefix file holds no valid program");
  CorpusBuilder builder;
  FlatProgram p = builder.flatten(report.programs.front());
  // drop the EOF token: the prefix stops mid-program
  p.types.pop_back();
  p.values.pop_back();
  p.orig.pop_back();
  p.parent.pop_back();
  if (p.length() == 0) throw ParseError("prefix is empty");

  std::unordered_map<std::string, std::int32_t> type_ids, value_ids;
  for (std::size_t i = 0; i < h.type_names.size(); ++i) type_ids.emplace(h.type_names[i], static_cast<std::int32_t>(i));
  for (std::size_t i = 0; i < h.value_names.size(); ++i) value_ids.emplace(h.value_names[i], static_cast<std::int32_t>(i));
  for (auto& t : p.types) {
    auto it = type_ids.find(builder.types().name(t));
    if (it == type_ids.end()) throw ParseError("node type '" + builder.types().name(t) + "' is unknown to the model");
    t = it->second;
  }
  for (std::size_t i = 0; i < p.length(); ++i) {
    if (is_dummy(p.orig[i])) continue;
    if (h.corpus_kind == CorpusKind::full) {
      auto it = value_ids.find(builder.values().name(p.orig[i]));
      p.values[i] = it == value_ids.end() ? kUnk : it->second;
    } else {
      p.values[i] = kUnk;
    }
  }
  if (h.corpus_kind == CorpusKind::anonymized) p = anonymize(p, static_cast<int>(h.k), seed);

  auto name_of_raw = [&](std::int32_t raw) { return builder.values().name(raw); };
  Model<float>& model = ck.model;
  const auto& cfg = model.config();
  Tape<float> tape(false);
  CarriedState<float> carried = model.begin_program(p);
  StepState<float> state = model.attach(tape, carried);
  StepOutput<float> out;
  const auto w = static_cast<std::size_t>(cfg.window);
  for (std::size_t i = 0; i < p.length(); ++i) {
    if (i > 0 && i % w == 0) {
      carried = model.detach(state);
      tape.clear();
      state = model.attach(tape, carried);
    }
    out = model.step(tape, state, p.types[i], p.values[i], p.parent[i]);
  }
  std::int32_t next_raw = static_cast<std::int32_t>(builder.values().size());
  for (int step = 0; step < n; ++step) {
    const auto dist = merged_distribution(out, cfg);
    const Prediction pred = predict_next(dist, cfg.value_vocab);
    const std::size_t pos = p.length();
    std::int32_t value = pred.value, raw = -1, type = p.types.back();
    std::string shown;
    if (pred.copy) {
      const auto src = pos - static_cast<std::size_t>(pred.offset);
      value = p.values[src];
      raw = p.orig[src];
      type = p.types[src];
      shown = is_dummy(raw) ? h.value_names[static_cast<std::size_t>(raw)] : name_of_raw(raw);
    } else if (is_dummy(value)) {
      raw = value;
      shown = h.value_names[static_cast<std::size_t>(value)];
    } else if (h.corpus_kind == CorpusKind::anonymized) {
      const auto slot = static_cast<std::size_t>(value - kNumDummies);
      raw = slot < p.anon_map.size() ? p.anon_map[slot] : -1;
      shown = raw >= 0 ? name_of_raw(raw) : h.value_names[static_cast<std::size_t>(value)];
    } else {
      shown = h.value_names[static_cast<std::size_t>(value)];
      if (auto r = builder.values().find(shown)) raw = *r;
    }
    if (raw < 0) raw = next_raw++;
    // the most recent node type seen with this value, else the last type
    for (std::size_t j = pos; j-- > 0;) {
      if (!is_dummy(raw) && p.orig[j] == raw) {
        type = p.types[j];
        break;
      }
    }
    std::cout << step + 1 << '\t' << shown << '\t' << (pred.copy ? "copy" : "vocab") << '\t' << pred.probability << '\n';
    if (step + 1 == n) break;
    p.types.push_back(type);
    p.values.push_back(value);
    p.orig.push_back(raw);
    p.parent.push_back(-1);
    if (pos % w == 0) {
      carried = model.detach(state);
      tape.clear();
      state = model.attach(tape, carried);
    }
    out = model.step(tape, state, type, value, -1);
  }
  return kOk;
}

int cmd_gradcheck(const std::string& dims, std::uint64_t seed) {
  if (dims != "tiny") throw ConfigError("--dims: only 'tiny' is supported");
  Timer t;
  const TinyGradCheck g = tiny_gradcheck(seed);
  std::cout << "coordinates " << g.result.coordinates << ", loss terms " << g.loss_terms << ", loss " << g.loss << '\n'
            << "max relative error " << g.result.max_relative_error << " at " << g.result.worst << " (" << t.seconds()
            << " s)\n";
  return g.result.max_relative_error < 1e-4 ? kOk : kNumeric;
}

int cmd_param_report(const std::string& config_path) {
  std::ifstream in(config_path);
  if (!in) throw IoError("cannot open " + config_path);
  const auto models = param_report(parse_param_report_config(read_key_values(in)));
  std::cout << format_param_report(models);
  const auto& nv = models[0];
  const auto& st = models[1];
  const auto& dy = models[2];
  const bool ordered = dy.total < st.total && dy.total < nv.total;
  std::cout << "dynamic < static and dynamic < no_vars: " << (ordered ? "yes" : "no") << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anoncomplete: code completion over flattened ASTs with anonymized variables"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  int workers = 1;
  app.add_option("--seed", seed, "random seed (falls back to ANONCOMPLETE_SEED)");
  app.add_option("--workers", workers, "parallel workers")->check(CLI::PositiveNumber);

  SynthConfig synth_cfg;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->add_option("--programs", synth_cfg.programs);
  synth->add_option("--min-functions", synth_cfg.min_functions);
  synth->add_option("--max-functions", synth_cfg.max_functions);
  synth->add_option("--seed", seed);
  synth->add_option("--out", synth_out)->required();

  std::string pre_in, pre_out;
  std::size_t max_values = 50000;
  auto* pre = app.add_subcommand("preprocess", "parse, flatten and build vocabularies");
  pre->add_option("corpus", pre_in)->required();
  pre->add_option("--out", pre_out)->required();
  pre->add_option("--max-values", max_values);

  std::string an_in, an_out, an_k = "auto", an_mode = "anonymize", an_filter;
  double coverage = 0.99;
  auto* an = app.add_subcommand("anonymize", "replace variable values with placeholders");
  an->add_option("cache", an_in)->required();
  an->add_option("--out", an_out)->required();
  an->add_option("--k", an_k);
  an->add_option("--coverage", coverage);
  an->add_option("--mode", an_mode);
  an->add_option("--value-filter", an_filter, "comma-separated node types to anonymize");
  an->add_option("--seed", seed);

  std::string st_in, st_out;
  auto* st = app.add_subcommand("strip", "replace every non-dummy value with UNK");
  st->add_option("cache", st_in)->required();
  st->add_option("--out", st_out)->required();

  std::string tr_cfg;
  auto* tr = app.add_subcommand("train", "train a model from a config file");
  tr->add_option("--config", tr_cfg)->required();
  tr->add_option("--seed", seed);
  tr->add_option("--workers", workers)->check(CLI::PositiveNumber);

  std::string ev_model, ev_corpus;
  bool per_category = false, json_only = false;
  auto* ev = app.add_subcommand("eval", "next-value accuracy on a corpus");
  ev->add_option("--model", ev_model)->required();
  ev->add_option("--corpus", ev_corpus)->required();
  ev->add_flag("--per-category", per_category);
  ev->add_flag("--json", json_only, "print only the JSON record");
  ev->add_option("--workers", workers)->check(CLI::PositiveNumber);

  std::string en_a, en_b, en_full, en_anon;
  auto* en = app.add_subcommand("ensemble-eval", "max-probability ensemble of two models");
  en->add_option("--model-a", en_a)->required();
  en->add_option("--model-b", en_b)->required();
  en->add_option("--corpus-full", en_full)->required();
  en->add_option("--corpus-anon", en_anon)->required();
  en->add_flag("--per-category", per_category);

  std::string co_model, co_prefix;
  int co_n = 10;
  auto* co = app.add_subcommand("complete", "greedy continuation of a prefix");
  co->add_option("--model", co_model)->required();
  co->add_option("--prefix", co_prefix)->required();
  co->add_option("--n", co_n)->check(CLI::PositiveNumber);
  co->add_option("--seed", seed);

  std::string gc_dims = "tiny";
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full model");
  gc->add_option("--dims", gc_dims);
  gc->add_option("--seed", seed);

  std::string pr_cfg;
  auto* pr = app.add_subcommand("param-report", "trainable parameter counts per tensor");
  pr->add_option("--config", pr_cfg)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kBadInput;
  }

  try {
    if (*synth) return cmd_synth(synth_cfg, resolve_seed(seed), synth_out);
    if (*pre) return cmd_preprocess(pre_in, pre_out, max_values);
    if (*an) return cmd_anonymize(an_in, an_out, an_k, coverage, resolve_seed(seed), an_mode, an_filter);
    if (*st) return cmd_strip(st_in, st_out);
    if (*tr) return cmd_train(tr_cfg, seed, workers);
    if (*ev) return cmd_eval(ev_model, ev_corpus, per_category, json_only);
    if (*en) return cmd_ensemble(en_a, en_b, en_full, en_anon, per_category);
    if (*co) return cmd_complete(co_model, co_prefix, co_n, resolve_seed(seed));
    if (*gc) return cmd_gradcheck(gc_dims, resolve_seed(seed));
    if (*pr) return cmd_param_report(pr_cfg);
  } catch (const FingerprintError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFingerprint;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  }
  return kBadInput;
}
