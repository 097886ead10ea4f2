#include "w2s/config.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json_util.hpp"
#include "w2s/error.hpp"
#include "w2s/io.hpp"

namespace w2s {

using detail::json;
using detail::read_field;
using detail::reject_unknown;

namespace {

const json& object_at(const json& j, const char* key, const std::string& where) {
  const json& v = j.at(key);
  if (!v.is_object()) throw ConfigError(where + "." + key + ": expected an object");
  return v;
}

template <class T>
std::vector<T> read_list(const json& j, const char* key, const std::string& where) {
  const json& v = j.at(key);
  if (!v.is_array()) throw ConfigError(where + "." + key + ": expected an array");
  std::vector<T> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    json wrap = {{"v", v[i]}};
    T x{};
    read_field(wrap, "v", x, where + "." + key + "[" + std::to_string(i) + "]");
    out.push_back(x);
  }
  return out;
}

std::string scope_name(TrainScope s) { return s == TrainScope::adapters ? "adapters" : "full"; }

TrainConfig train_from_json(const json& j, const std::string& where, TrainConfig c) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  reject_unknown(j, {"learning_rate", "epochs", "batch_size", "beta1", "beta2", "adam_eps", "scope"}, where);
  read_field(j, "learning_rate", c.learning_rate, where);
  read_field(j, "epochs", c.epochs, where);
  read_field(j, "batch_size", c.batch_size, where);
  read_field(j, "beta1", c.beta1, where);
  read_field(j, "beta2", c.beta2, where);
  read_field(j, "adam_eps", c.adam_eps, where);
  if (j.contains("scope")) {
    std::string s;
    read_field(j, "scope", s, where);
    if (s == "adapters") {
      c.scope = TrainScope::adapters;
    } else if (s == "full") {
      c.scope = TrainScope::full;
    } else {
      throw ConfigError(where + ".scope: expected \"adapters\" or \"full\"");
    }
  }
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) throw ConfigError(where + ".learning_rate: must be positive");
  if (c.epochs < 1) throw ConfigError(where + ".epochs: must be at least 1");
  if (c.batch_size < 1) throw ConfigError(where + ".batch_size: must be at least 1");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0)) throw ConfigError(where + ".beta1: must lie in [0, 1)");
  if (!(c.beta2 >= 0.0 && c.beta2 < 1.0)) throw ConfigError(where + ".beta2: must lie in [0, 1)");
  if (!(c.adam_eps > 0.0)) throw ConfigError(where + ".adam_eps: must be positive");
  return c;
}

json train_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"epochs", c.epochs},   {"batch_size", c.batch_size},
          {"beta1", c.beta1},                 {"beta2", c.beta2},     {"adam_eps", c.adam_eps},
          {"scope", scope_name(c.scope)}};
}

PretrainConfig pretrain_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  reject_unknown(j, {"epochs", "learning_rate", "batch_size", "seed", "visible_features"}, where);
  PretrainConfig c;
  read_field(j, "epochs", c.epochs, where);
  read_field(j, "learning_rate", c.learning_rate, where);
  read_field(j, "batch_size", c.batch_size, where);
  read_field(j, "seed", c.seed, where);
  if (j.contains("visible_features")) c.visible_features = read_list<std::size_t>(j, "visible_features", where);
  if (c.epochs < 1) throw ConfigError(where + ".epochs: must be at least 1");
  if (!(c.learning_rate > 0.0)) throw ConfigError(where + ".learning_rate: must be positive");
  if (c.batch_size < 1) throw ConfigError(where + ".batch_size: must be at least 1");
  return c;
}

json pretrain_to_json(const PretrainConfig& c) {
  return {{"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"visible_features", c.visible_features}};
}

DomainSpec domain_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  reject_unknown(j, {"name", "prompt_alphabet", "filler_alphabet", "markers", "spurious_rho", "label_noise", "n_train",
                     "n_validation", "n_test"},
                 where);
  for (const char* k : {"name", "prompt_alphabet", "filler_alphabet", "markers"}) {
    if (!j.contains(k)) throw ConfigError(where + "." + k + ": required");
  }
  DomainSpec d;
  read_field(j, "name", d.name, where);
  read_field(j, "prompt_alphabet", d.prompt_alphabet, where);
  read_field(j, "filler_alphabet", d.filler_alphabet, where);
  read_field(j, "markers", d.markers, where);
  read_field(j, "spurious_rho", d.spurious_rho, where);
  read_field(j, "label_noise", d.label_noise, where);
  read_field(j, "n_train", d.n_train, where);
  read_field(j, "n_validation", d.n_validation, where);
  read_field(j, "n_test", d.n_test, where);
  return d;
}

CategorySpec category_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  reject_unknown(j, {"name", "weights", "max_count", "temperature", "prompt_len", "response_len", "spurious_kind",
                     "spurious_tokens", "domains"},
                 where);
  for (const char* k : {"name", "weights", "domains"}) {
    if (!j.contains(k)) throw ConfigError(where + "." + k + ": required");
  }
  CategorySpec c;
  read_field(j, "name", c.name, where);
  c.weights = read_list<double>(j, "weights", where);
  read_field(j, "max_count", c.max_count, where);
  read_field(j, "temperature", c.temperature, where);
  read_field(j, "prompt_len", c.prompt_len, where);
  read_field(j, "response_len", c.response_len, where);
  read_field(j, "spurious_tokens", c.spurious_tokens, where);
  if (j.contains("spurious_kind")) {
    std::string k;
    read_field(j, "spurious_kind", k, where);
    if (k == "order") {
      c.spurious_kind = SpuriousKind::order;
    } else if (k == "token") {
      c.spurious_kind = SpuriousKind::token;
    } else {
      throw ConfigError(where + ".spurious_kind: expected \"order\" or \"token\"");
    }
  }
  const json& ds = j.at("domains");
  if (!ds.is_array()) throw ConfigError(where + ".domains: expected an array");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    c.domains.push_back(domain_from_json(ds[i], where + ".domains[" + std::to_string(i) + "]"));
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return c;
}

json category_to_json(const CategorySpec& c) {
  json ds = json::array();
  for (const DomainSpec& d : c.domains) {
    ds.push_back({{"name", d.name},
                  {"prompt_alphabet", d.prompt_alphabet},
                  {"filler_alphabet", d.filler_alphabet},
                  {"markers", d.markers},
                  {"spurious_rho", d.spurious_rho},
                  {"label_noise", d.label_noise},
                  {"n_train", d.n_train},
                  {"n_validation", d.n_validation},
                  {"n_test", d.n_test}});
  }
  return {{"name", c.name},
          {"weights", c.weights},
          {"max_count", c.max_count},
          {"temperature", c.temperature},
          {"prompt_len", c.prompt_len},
          {"response_len", c.response_len},
          {"spurious_kind", c.spurious_kind == SpuriousKind::order ? "order" : "token"},
          {"spurious_tokens", c.spurious_tokens},
          {"domains", ds}};
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

JsonlSource jsonl_from_json(const json& j, const std::string& where, const std::filesystem::path& base) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  reject_unknown(j, {"name", "domains", "max_seq_len", "lenient"}, where);
  JsonlSource s;
  read_field(j, "name", s.name, where);
  read_field(j, "max_seq_len", s.max_seq_len, where);
  read_field(j, "lenient", s.lenient, where);
  if (!j.contains("domains") || !j.at("domains").is_array()) throw ConfigError(where + ".domains: expected an array");
  const json& ds = j.at("domains");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::string at = where + ".domains[" + std::to_string(i) + "]";
    if (!ds[i].is_object()) throw ConfigError(at + ": expected an object");
    reject_unknown(ds[i], {"name", "train", "validation", "test"}, at);
    for (const char* k : {"name", "train", "test"}) {
      if (!ds[i].contains(k)) throw ConfigError(at + "." + k + ": required");
    }
    JsonlDomain d;
    std::string train, validation, test;
    read_field(ds[i], "name", d.name, at);
    read_field(ds[i], "train", train, at);
    read_field(ds[i], "validation", validation, at);
    read_field(ds[i], "test", test, at);
    d.train = resolve(base, train);
    d.validation = resolve(base, validation);
    d.test = resolve(base, test);
    s.domains.push_back(d);
  }
  return s;
}

json jsonl_to_json(const JsonlSource& s) {
  json ds = json::array();
  for (const JsonlDomain& d : s.domains) {
    ds.push_back({{"name", d.name}, {"train", d.train.string()}, {"validation", d.validation.string()},
                  {"test", d.test.string()}});
  }
  return {{"name", s.name}, {"domains", ds}, {"max_seq_len", s.max_seq_len}, {"lenient", s.lenient}};
}

std::string pooling_name(ActivationPooling p) {
  return p == ActivationPooling::masked_mean ? "masked_mean" : "last_response_token";
}

}  // namespace

void ExperimentConfig::validate() const {
  if (name.empty()) throw ConfigError("name: must be non-empty");
  if (output_dir.empty()) throw ConfigError("output_dir: must be non-empty");
  if (synthetic.has_value() == jsonl.has_value()) throw ConfigError("exactly one of \"synthetic\" and \"jsonl\" must be given");
  if (synthetic) synthetic->validate();
  if (jsonl) {
    if (jsonl->domains.size() < 2) throw ConfigError("jsonl.domains: a category needs at least 2 domains");
    if (jsonl->max_seq_len < 4) throw ConfigError("jsonl.max_seq_len: must be at least 4");
  }
  if (pretrain && !synthetic) throw ConfigError("pretrain: only available for synthetic categories");
  const auto domains = domain_names();
  std::set<std::string> seen;
  for (const std::string& d : domains) {
    if (!seen.insert(d).second) throw ConfigError("domains: duplicate name \"" + d + "\"");
  }
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (!seen.count(sources[i])) {
      throw ConfigError("sources[" + std::to_string(i) + "]: unknown domain \"" + sources[i] + "\"");
    }
  }
  if (methods.empty()) throw ConfigError("methods: must list at least one method");
  for (std::size_t i = 0; i < methods.size(); ++i) {
    try {
      MethodSpec::parse_kind(methods[i]);
    } catch (const ConfigError& e) {
      throw ConfigError("methods[" + std::to_string(i) + "]: " + e.what());
    }
  }
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (!(lambdas[i] >= 0.0) || !std::isfinite(lambdas[i])) {
      throw ConfigError("lambdas[" + std::to_string(i) + "]: must be finite and >= 0");
    }
  }
  const bool wants_l2sp = std::find(methods.begin(), methods.end(), "l2sp") != methods.end();
  if (wants_l2sp && l2sp_mus.empty()) throw ConfigError("l2sp_mus: must list at least one weight when l2sp is enabled");
  for (std::size_t i = 0; i < l2sp_mus.size(); ++i) {
    if (!(l2sp_mus[i] >= 0.0) || !std::isfinite(l2sp_mus[i])) {
      throw ConfigError("l2sp_mus[" + std::to_string(i) + "]: must be finite and >= 0");
    }
  }
  if (seeds.empty()) throw ConfigError("seeds: must list at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds: duplicate seed");
  }
  weak_model.validate();
  strong_model.validate();
  if (weak_model.adapter.enabled || strong_model.adapter.enabled) {
    throw ConfigError("weak_model.adapter/strong_model.adapter: bases carry no adapters; set the top-level \"adapter\" block");
  }
  if (adapter.rank < 1) throw ConfigError("adapter.rank: must be at least 1");
  if (!(adapter.alpha > 0.0)) throw ConfigError("adapter.alpha: must be positive");
  std::set<std::string> labels;
  for (const MethodSpec& m : expanded_methods()) {
    try {
      m.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("methods: " + std::string(e.what()));
    }
    if (!labels.insert(m.label()).second) {
      throw ConfigError("methods: two entries share the label \"" + m.label() + "\"; use distinct lambdas");
    }
  }
  for (std::size_t i = 0; i < drift.layers.size(); ++i) {
    if (drift.layers[i] < 1 || drift.layers[i] > strong_model.n_layers) {
      throw ConfigError("drift.layers[" + std::to_string(i) + "]: must lie in 1.." + std::to_string(strong_model.n_layers));
    }
  }
  if (pretrain) {
    for (const auto* p : {&pretrain->weak, &pretrain->strong}) {
      for (std::size_t f : p->visible_features) {
        if (f >= synthetic->features()) throw ConfigError("pretrain.visible_features: index out of range");
      }
    }
  }
}

std::vector<MethodSpec> ExperimentConfig::expanded_methods() const {
  std::vector<MethodSpec> out;
  for (const std::string& name : methods) {
    MethodSpec base;
    base.kind = MethodSpec::parse_kind(name);
    base.conf_alpha = conf_alpha;
    base.anchor.middle_fractions = middle_fractions;
    if (base.kind == Method::l2sp) {
      for (double mu : l2sp_mus) {
        MethodSpec m = base;
        m.l2sp_mu = mu;
        out.push_back(m);
      }
      continue;
    }
    if (base.kind != Method::anchor) {
      out.push_back(base);
      continue;
    }
    base.anchor.variant = name == "anchor-mla" ? AnchorVariant::middle : AnchorVariant::last;
    for (double lam : lambdas) {
      MethodSpec m = base;
      m.anchor.lambda = lam;
      out.push_back(m);
    }
  }
  return out;
}

std::vector<std::string> ExperimentConfig::domain_names() const {
  std::vector<std::string> out;
  if (synthetic) {
    for (const DomainSpec& d : synthetic->domains) out.push_back(d.name);
  } else if (jsonl) {
    for (const JsonlDomain& d : jsonl->domains) out.push_back(d.name);
  }
  return out;
}

std::vector<std::string> ExperimentConfig::source_domains() const {
  return sources.empty() ? domain_names() : sources;
}

ProtocolConfig ExperimentConfig::protocol() const {
  ProtocolConfig p;
  p.weak_model = weak_model;
  p.strong_model = strong_model;
  p.adapter = adapter;
  p.weak_train = weak_train;
  p.student_train = student_train;
  p.ceiling_train = ceiling_train;
  return p;
}

ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  const std::string w = "config";
  if (!j.is_object()) throw ConfigError("config: expected an object");
  reject_unknown(j, {"name", "output_dir", "synthetic", "data_seed", "jsonl", "sources", "methods", "lambdas",
                     "middle_fractions", "conf_alpha", "l2sp_mus", "seeds", "pretrain", "weak_model", "strong_model",
                     "adapter", "weak_train", "student_train", "ceiling_train", "drift"},
                 w);
  ExperimentConfig c;
  read_field(j, "name", c.name, w);
  std::string out;
  read_field(j, "output_dir", out, w);
  c.output_dir = resolve(base_dir, out);
  if (j.contains("synthetic")) c.synthetic = category_from_json(j.at("synthetic"), w + ".synthetic");
  read_field(j, "data_seed", c.data_seed, w);
  if (j.contains("jsonl")) c.jsonl = jsonl_from_json(j.at("jsonl"), w + ".jsonl", base_dir);
  if (j.contains("sources")) c.sources = read_list<std::string>(j, "sources", w);
  if (j.contains("methods")) c.methods = read_list<std::string>(j, "methods", w);
  if (j.contains("lambdas")) c.lambdas = read_list<double>(j, "lambdas", w);
  if (j.contains("middle_fractions")) c.middle_fractions = read_list<double>(j, "middle_fractions", w);
  read_field(j, "conf_alpha", c.conf_alpha, w);
  if (j.contains("l2sp_mus")) c.l2sp_mus = read_list<double>(j, "l2sp_mus", w);
  if (j.contains("seeds")) c.seeds = read_list<std::uint64_t>(j, "seeds", w);
  if (j.contains("pretrain")) {
    const json& p = object_at(j, "pretrain", w);
    const std::string pw = w + ".pretrain";
    reject_unknown(p, {"corpus_size", "corpus_seed", "weak", "strong"}, pw);
    PretrainSettings s;
    read_field(p, "corpus_size", s.corpus_size, pw);
    read_field(p, "corpus_seed", s.corpus_seed, pw);
    if (p.contains("weak")) s.weak = pretrain_from_json(p.at("weak"), pw + ".weak");
    if (p.contains("strong")) s.strong = pretrain_from_json(p.at("strong"), pw + ".strong");
    if (s.corpus_size < 1) throw ConfigError(pw + ".corpus_size: must be at least 1");
    c.pretrain = s;
  }
  if (j.contains("weak_model")) c.weak_model = detail::model_config_from_json(j.at("weak_model"), w + ".weak_model");
  if (j.contains("strong_model")) {
    c.strong_model = detail::model_config_from_json(j.at("strong_model"), w + ".strong_model");
  }
  if (j.contains("adapter")) {
    const json& a = object_at(j, "adapter", w);
    reject_unknown(a, {"enabled", "rank", "alpha"}, w + ".adapter");
    read_field(a, "enabled", c.adapter.enabled, w + ".adapter");
    read_field(a, "rank", c.adapter.rank, w + ".adapter");
    c.adapter.alpha = static_cast<double>(c.adapter.rank);
    read_field(a, "alpha", c.adapter.alpha, w + ".adapter");
  }
  if (j.contains("weak_train")) c.weak_train = train_from_json(j.at("weak_train"), w + ".weak_train", c.weak_train);
  if (j.contains("student_train")) {
    c.student_train = train_from_json(j.at("student_train"), w + ".student_train", c.student_train);
  }
  if (j.contains("ceiling_train")) {
    c.ceiling_train = train_from_json(j.at("ceiling_train"), w + ".ceiling_train", c.ceiling_train);
  }
  if (j.contains("drift")) {
    const json& d = object_at(j, "drift", w);
    reject_unknown(d, {"layers", "pooling"}, w + ".drift");
    if (d.contains("layers")) c.drift.layers = read_list<std::size_t>(d, "layers", w + ".drift");
    if (d.contains("pooling")) {
      std::string p;
      read_field(d, "pooling", p, w + ".drift");
      if (p == "masked_mean") {
        c.drift.pooling = ActivationPooling::masked_mean;
      } else if (p == "last_response_token") {
        c.drift.pooling = ActivationPooling::last_response_token;
      } else {
        throw ConfigError("config.drift.pooling: expected \"masked_mean\" or \"last_response_token\"");
      }
    }
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    throw ConfigError(msg.rfind("config", 0) == 0 ? msg : "config." + msg);
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return parse_experiment_config(text, path.parent_path());
}

std::string experiment_config_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["output_dir"] = c.output_dir.string();
  if (c.synthetic) {
    j["synthetic"] = category_to_json(*c.synthetic);
    j["data_seed"] = c.data_seed;
  }
  if (c.jsonl) j["jsonl"] = jsonl_to_json(*c.jsonl);
  j["sources"] = c.sources;
  j["methods"] = c.methods;
  j["lambdas"] = c.lambdas;
  j["middle_fractions"] = c.middle_fractions;
  j["conf_alpha"] = c.conf_alpha;
  j["l2sp_mus"] = c.l2sp_mus;
  j["seeds"] = c.seeds;
  if (c.pretrain) {
    j["pretrain"] = {{"corpus_size", c.pretrain->corpus_size},
                     {"corpus_seed", c.pretrain->corpus_seed},
                     {"weak", pretrain_to_json(c.pretrain->weak)},
                     {"strong", pretrain_to_json(c.pretrain->strong)}};
  }
  j["weak_model"] = detail::to_json(c.weak_model);
  j["strong_model"] = detail::to_json(c.strong_model);
  j["adapter"] = {{"enabled", c.adapter.enabled}, {"rank", c.adapter.rank}, {"alpha", c.adapter.alpha}};
  j["weak_train"] = train_to_json(c.weak_train);
  j["student_train"] = train_to_json(c.student_train);
  j["ceiling_train"] = train_to_json(c.ceiling_train);
  j["drift"] = {{"layers", c.drift.layers}, {"pooling", pooling_name(c.drift.pooling)}};
  return j.dump(2) + "\n";
}

}  // namespace w2s
