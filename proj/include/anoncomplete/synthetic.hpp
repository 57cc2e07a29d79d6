#pragma once

// Generator of small Python-like programs in the line-delimited node-array
// format. Names are drawn per role (iterators, accumulators, containers, ...)
// from skewed pools with a tail of rare compound names, so a full-data
// vocabulary sees both frequent and out-of-vocabulary identifiers. Classes
// keep their state on `self`, which recurs throughout every method.

#include "anonymizer.hpp"
#include "ast_corpus.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace anoncomplete {

struct SynthConfig {
  std::size_t programs = 2000;
  std::uint64_t seed = 1;
  int min_functions = 1;
  int max_functions = 3;
  double rare_name_rate = 0.2;  // chance a variable gets a one-off compound name
  double class_rate = 0.6;      // chance a program also defines a class
};

namespace synth {

struct Tree {
  std::string type;
  std::string value;  // empty: no value
  std::vector<Tree> children;
};

inline Tree leaf(std::string type, std::string value) { return Tree{std::move(type), std::move(value), {}}; }
inline Tree node(std::string type, std::vector<Tree> children) { return Tree{std::move(type), {}, std::move(children)}; }

inline void emit(const Tree& t, AstProgram& out) {
  const auto idx = out.size();
  out.push_back({t.type, t.value.empty() ? std::nullopt : std::optional<std::string>(t.value), {}});
  std::vector<int> kids;
  for (const auto& c : t.children) {
    kids.push_back(static_cast<int>(out.size()));
    emit(c, out);
  }
  out[idx].children = std::move(kids);
}

enum Role { kIter, kAcc, kSeq, kObj, kKey, kDict, kText, kFunc, kCls, kNumRoles };

inline const std::vector<std::string>& pool(Role r) {
  static const std::array<std::vector<std::string>, kNumRoles> pools = {{
      {"i", "x", "item", "line", "row", "v", "e", "n", "elem", "j", "idx", "word", "entry", "char", "p"},
      {"total", "count", "result", "acc", "s", "res", "cnt", "num", "size", "score", "best", "out"},
      {"items", "data", "values", "lines", "rows", "results", "nums", "words", "records", "entries", "lst",
       "elements", "xs", "args", "files", "names", "parts", "tokens"},
      {"f", "fp", "conn", "resp", "obj", "node", "parser", "client", "db", "sock", "handler", "reader", "writer"},
      {"key", "k", "name", "label", "field", "attr", "tag", "col"},
      {"counts", "d", "mapping", "table", "index", "cache", "freq", "config", "params", "opts", "stats"},
      {"text", "msg", "path", "filename", "content", "buf", "prefix", "url", "header", "line", "body"},
      {"process", "load_data", "parse", "main", "run", "compute", "update", "get_value", "setup", "handle", "read_file",
       "write_file", "count_words", "build", "render", "validate", "transform", "save", "fetch", "merge"},
      {"Node", "Parser", "Client", "Reader", "Config", "Handler", "Server", "Request", "Worker", "Item"},
  }};
  return pools[static_cast<std::size_t>(r)];
}

inline const std::vector<std::string>& compound_parts() {
  static const std::vector<std::string> parts = {
      "user", "file", "data", "max", "min", "tmp", "new", "old", "raw", "src", "dst", "out", "in", "num", "list",
      "str", "val", "obj", "res", "cur", "prev", "next", "total", "base", "local", "remote", "input", "output"};
  return parts;
}

class Generator {
 public:
  explicit Generator(const SynthConfig& cfg) : cfg_(cfg), rng_(mix_seed(cfg.seed, 0x5E7)) {}

  AstProgram program() {
    std::vector<Tree> top;
    const int imports = static_cast<int>(below(3));
    static const std::vector<std::string> modules = {"os", "sys", "re", "json", "math", "time", "random", "collections"};
    for (int i = 0; i < imports; ++i) {
      top.push_back(node("Import", {node("alias", {leaf("identifier", modules[below(modules.size())])})}));
    }
    const int funcs = cfg_.min_functions + static_cast<int>(below(static_cast<std::uint64_t>(cfg_.max_functions - cfg_.min_functions + 1)));
    for (int i = 0; i < funcs; ++i) top.push_back(function());
    if (chance(cfg_.class_rate)) {
      const auto at = below(static_cast<std::uint64_t>(funcs) + 1);
      top.insert(top.end() - static_cast<std::ptrdiff_t>(funcs) + static_cast<std::ptrdiff_t>(at), class_def());
    }
    AstProgram out;
    emit(node("Module", std::move(top)), out);
    return out;
  }

 private:
  std::uint64_t below(std::uint64_t n) { return uniform_below(rng_, n); }
  double unit() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  bool chance(double p) { return unit() < p; }

  // rank r drawn with weight 1/(r+1)
  std::size_t zipf(std::size_t n) {
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) total += 1.0 / static_cast<double>(r + 1);
    double u = unit() * total;
    for (std::size_t r = 0; r < n; ++r) {
      u -= 1.0 / static_cast<double>(r + 1);
      if (u < 0.0) return r;
    }
    return n - 1;
  }

  std::string fresh(Role role) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      std::string name;
      if (role != kCls && chance(cfg_.rare_name_rate)) {
        const auto& parts = compound_parts();
        name = parts[below(parts.size())] + "_" + parts[below(parts.size())];
        if (chance(0.5)) name += std::to_string(below(100));
      } else {
        const auto& p = pool(role);
        name = p[zipf(p.size())];
      }
      if (std::find(used_.begin(), used_.end(), name) == used_.end()) {
        used_.push_back(name);
        return name;
      }
    }
    std::string name = "v" + std::to_string(used_.size()) + "_" + std::to_string(below(1000));
    used_.push_back(name);
    return name;
  }

  std::string number() {
    static const std::vector<std::string> nums = {"0", "1", "2", "10", "100", "3", "5", "-1", "0.5", "255"};
    return nums[zipf(nums.size())];
  }
  std::string string_literal() {
    static const std::vector<std::string> strs = {"r", "w", "\\n", " ", "utf-8", ",", "", "%s: %d", "name", "id", "error"};
    return strs[zipf(strs.size())];
  }

  static Tree load(const std::string& v) { return leaf("NameLoad", v); }
  static Tree store(const std::string& v) { return leaf("NameStore", v); }
  static Tree num(const std::string& v) { return leaf("Num", v); }
  static Tree str(const std::string& v) { return leaf("Str", v); }
  static Tree call(Tree fn, std::vector<Tree> args) {
    std::vector<Tree> kids{std::move(fn)};
    for (auto& a : args) kids.push_back(std::move(a));
    return node("Call", std::move(kids));
  }
  static Tree attr(const std::string& obj, const std::string& name) {
    return node("AttributeLoad", {load(obj), leaf("attr", name)});
  }
  static Tree method(const std::string& obj, const std::string& name, std::vector<Tree> args) {
    return call(attr(obj, name), std::move(args));
  }
  static Tree assign(const std::string& v, Tree e) { return node("Assign", {store(v), std::move(e)}); }
  static Tree expr(Tree e) { return node("Expr", {std::move(e)}); }
  static Tree body(std::vector<Tree> xs) { return node("body", std::move(xs)); }
  static Tree ret(Tree e) { return node("Return", {std::move(e)}); }

  // a side statement reading variables already in scope
  Tree noise(const std::vector<std::string>& scope) {
    const auto& v = scope[below(scope.size())];
    switch (below(4)) {
      case 0: return expr(call(load("print"), {load(v)}));
      case 1: return expr(method("logger", chance(0.5) ? "debug" : "info", {str(string_literal()), load(v)}));
      case 2: return node("Assert", {load(v)});
      default: return expr(call(load("print"), {str(string_literal()), load(v)}));
    }
  }

  std::vector<Tree> tmpl_sum(const std::vector<std::string>& params) {
    const auto seq = params[0];
    const auto acc = fresh(kAcc), it = fresh(kIter);
    std::vector<Tree> loop;
    Tree update = node("AugAssignAdd", {store(acc), chance(0.5) ? load(it) : node("BinOpMult", {load(it), num(number())})});
    if (chance(0.5)) {
      loop.push_back(node("If", {node("CompareGt", {load(it), num(number())}), body({std::move(update)})}));
    } else {
      loop.push_back(std::move(update));
    }
    std::vector<Tree> out;
    out.push_back(assign(acc, num("0")));
    out.push_back(node("For", {store(it), load(seq), body(std::move(loop))}));
    if (chance(0.3)) out.push_back(noise({acc, seq}));
    out.push_back(ret(load(acc)));
    return out;
  }

  std::vector<Tree> tmpl_build(const std::vector<std::string>& params, const std::string& helper) {
    const auto src = params[0];
    const auto res = fresh(kSeq), it = fresh(kIter);
    std::vector<Tree> out;
    out.push_back(assign(res, node("List", {})));
    Tree iter = chance(0.5) ? call(load("range"), {call(load("len"), {load(src)})}) : load(src);
    Tree value = chance(0.5) ? call(load(helper), {load(it)}) : method(src, "get", {load(it)});
    out.push_back(node("For", {store(it), std::move(iter), body({expr(method(res, "append", {std::move(value)}))})}));
    if (chance(0.3)) out.push_back(noise({res, src}));
    out.push_back(ret(load(res)));
    return out;
  }

  std::vector<Tree> tmpl_file(const std::vector<std::string>& params) {
    const auto path = params[0];
    const auto f = fresh(kObj), text = fresh(kText), lines = fresh(kSeq);
    std::vector<Tree> out;
    out.push_back(assign(f, call(load("open"), {load(path), str(chance(0.7) ? "r" : "rb")})));
    out.push_back(assign(text, method(f, "read", {})));
    out.push_back(expr(method(f, "close", {})));
    out.push_back(assign(lines, method(text, "split", {str("\\n")})));
    if (chance(0.5)) {
      const auto line = fresh(kIter);
      out.push_back(node("For", {store(line), load(lines),
                                 body({expr(call(load("print"), {method(line, "strip", {})}))})}));
    }
    out.push_back(ret(load(lines)));
    return out;
  }

  std::vector<Tree> tmpl_count(const std::vector<std::string>& params) {
    const auto seq = params[0];
    const auto d = fresh(kDict), k = fresh(kKey);
    std::vector<Tree> out;
    out.push_back(assign(d, node("Dict", {})));
    Tree update = node("Assign", {node("SubscriptStore", {load(d), node("Index", {load(k)})}),
                                  node("BinOpAdd", {method(d, "get", {load(k), num("0")}), num("1")})});
    out.push_back(node("For", {store(k), load(seq), body({std::move(update)})}));
    if (chance(0.4)) {
      out.push_back(expr(call(load("print"), {call(load("len"), {load(d)})})));
    }
    out.push_back(ret(load(d)));
    return out;
  }

  std::vector<Tree> tmpl_max(const std::vector<std::string>& params) {
    const auto seq = params[0];
    const auto best = fresh(kAcc), x = fresh(kIter);
    std::vector<Tree> out;
    out.push_back(assign(best, leaf("NameConstant", "None")));
    Tree test = node("BoolOpOr", {node("CompareIs", {load(best), leaf("NameConstant", "None")}),
                                  node("CompareGt", {load(x), load(best)})});
    out.push_back(node("For", {store(x), load(seq), body({node("If", {std::move(test), body({assign(best, load(x))})})})}));
    out.push_back(ret(load(best)));
    return out;
  }

  std::vector<Tree> tmpl_object(const std::vector<std::string>& params) {
    const auto obj = fresh(kObj), cls = fresh(kCls);
    std::vector<Tree> out;
    std::vector<Tree> args;
    for (const auto& p : params) args.push_back(load(p));
    out.push_back(assign(obj, call(load(cls), std::move(args))));
    static const std::vector<std::string> methods = {"start", "connect", "load", "run", "update", "parse", "close"};
    const int calls = 1 + static_cast<int>(below(3));
    for (int i = 0; i < calls; ++i) {
      std::vector<Tree> margs;
      if (chance(0.5)) margs.push_back(load(params[below(params.size())]));
      out.push_back(expr(method(obj, methods[zipf(methods.size())], std::move(margs))));
    }
    if (chance(0.5)) {
      const auto v = fresh(kText);
      out.push_back(assign(v, attr(obj, chance(0.5) ? "name" : "result")));
      out.push_back(ret(load(v)));
    } else {
      out.push_back(ret(load(obj)));
    }
    return out;
  }

  std::vector<Tree> tmpl_format(const std::vector<std::string>& params) {
    const auto msg = fresh(kText);
    std::vector<Tree> parts;
    for (const auto& p : params) parts.push_back(load(p));
    std::vector<Tree> out;
    out.push_back(assign(msg, node("BinOpMod", {str("%s: %d"), node("Tuple", std::move(parts))})));
    out.push_back(expr(call(load("print"), {load(msg)})));
    if (chance(0.5)) out.push_back(noise(params));
    out.push_back(ret(load(msg)));
    return out;
  }

  Tree function() {
    used_.clear();
    for (const auto* b : {"print", "len", "range", "open", "logger", "None"}) used_.push_back(b);
    const std::string name = fresh(kFunc);
    const int nparams = 1 + static_cast<int>(below(3));
    std::vector<std::string> params;
    for (int i = 0; i < nparams; ++i) params.push_back(fresh(i == 0 ? (chance(0.5) ? kSeq : kText) : kKey));
    std::vector<Tree> param_leaves;
    for (const auto& p : params) param_leaves.push_back(leaf("NameParam", p));

    std::vector<Tree> stmts;
    if (chance(0.25)) stmts.push_back(noise(params));
    std::vector<Tree> core;
    switch (below(7)) {
      case 0: core = tmpl_sum(params); break;
      case 1: core = tmpl_build(params, pool(kFunc)[zipf(pool(kFunc).size())]); break;
      case 2: core = tmpl_file(params); break;
      case 3: core = tmpl_count(params); break;
      case 4: core = tmpl_max(params); break;
      case 5: core = tmpl_object(params); break;
      default: core = tmpl_format(params); break;
    }
    for (auto& s : core) stmts.push_back(std::move(s));
    return node("FunctionDef", {leaf("identifier", name), node("arguments", {node("args", std::move(param_leaves))}),
                                body(std::move(stmts))});
  }

  static Tree self_load(const std::string& field) {
    return node("AttributeLoad", {load("self"), leaf("attr", field)});
  }
  static Tree self_store(const std::string& field) {
    return node("AttributeStore", {load("self"), leaf("attr", field)});
  }
  Tree def(const std::string& name, const std::vector<std::string>& params, std::vector<Tree> stmts) {
    std::vector<Tree> leaves;
    for (const auto& p : params) leaves.push_back(leaf("NameParam", p));
    return node("FunctionDef", {leaf("identifier", name), node("arguments", {node("args", std::move(leaves))}),
                                body(std::move(stmts))});
  }

  // a container field, a counter field and a label field, plus methods over them
  Tree class_def() {
    used_.clear();
    for (const auto* b : {"print", "len", "range", "open", "logger", "None", "self"}) used_.push_back(b);
    const auto cls = fresh(kCls);
    const auto items = fresh(kSeq), count = fresh(kAcc), label = fresh(kText);
    const auto arg = fresh(kText);
    std::vector<Tree> init;
    init.push_back(assign_to(self_store(label), load(arg)));
    init.push_back(assign_to(self_store(items), node("List", {})));
    init.push_back(assign_to(self_store(count), num("0")));
    std::vector<Tree> methods;
    methods.push_back(def("__init__", {"self", arg}, std::move(init)));
    const int n = 2 + static_cast<int>(below(3));
    std::vector<int> kinds = {0, 1, 2, 3, 4, 5};
    for (std::size_t i = kinds.size() - 1; i > 0; --i) std::swap(kinds[i], kinds[below(i + 1)]);
    for (int m = 0; m < n; ++m) {
      std::vector<Tree> st;
      std::vector<std::string> params = {"self"};
      switch (kinds[static_cast<std::size_t>(m)]) {
        case 0: {
          const auto item = fresh(kIter);
          params.push_back(item);
          st.push_back(expr(call(attr_of(self_load(items), "append"), {load(item)})));
          st.push_back(node("AugAssignAdd", {self_store(count), num("1")}));
          break;
        }
        case 1: {
          const auto t = fresh(kAcc), x = fresh(kIter);
          st.push_back(assign(t, num("0")));
          st.push_back(node("For", {store(x), self_load(items), body({node("AugAssignAdd", {store(t), load(x)})})}));
          st.push_back(ret(load(t)));
          break;
        }
        case 2:
          st.push_back(ret(call(load("len"), {self_load(items)})));
          break;
        case 3:
          st.push_back(assign_to(self_store(items), node("List", {})));
          st.push_back(assign_to(self_store(count), num("0")));
          break;
        case 4:
          st.push_back(ret(node("BinOpMod", {str("%s: %d"), node("Tuple", {self_load(label), self_load(count)})})));
          break;
        default: {
          const auto limit = fresh(kKey);
          params.push_back(limit);
          st.push_back(node("If", {node("CompareGt", {self_load(count), load(limit)}),
                                   body({expr(call(load("print"), {self_load(label)}))})}));
          st.push_back(ret(self_load(count)));
          break;
        }
      }
      methods.push_back(def(fresh(kFunc), params, std::move(st)));
    }
    return node("ClassDef", {leaf("identifier", cls), body(std::move(methods))});
  }

  static Tree assign_to(Tree target, Tree e) { return node("Assign", {std::move(target), std::move(e)}); }
  static Tree attr_of(Tree obj, const std::string& name) { return node("AttributeLoad", {std::move(obj), leaf("attr", name)}); }

  SynthConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<std::string> used_;
};

}  // namespace synth

inline std::vector<AstProgram> generate_programs(const SynthConfig& cfg) {
  synth::Generator gen(cfg);
  std::vector<AstProgram> out;
  out.reserve(cfg.programs);
  for (std::size_t i = 0; i < cfg.programs; ++i) out.push_back(gen.program());
  return out;
}

/// One line in the input corpus format.
inline std::string to_json_line(const AstProgram& program) {
  auto arr = nlohmann::json::array();
  for (const auto& n : program) {
    nlohmann::json j = {{"type", n.type_name}};
    if (n.value) j["value"] = *n.value;
    if (!n.children.empty()) j["children"] = n.children;
    arr.push_back(std::move(j));
  }
  return arr.dump();
}

inline void write_programs(std::ostream& out, const std::vector<AstProgram>& programs) {
  for (const auto& p : programs) out << to_json_line(p) << '\n';
}

}  // namespace anoncomplete
