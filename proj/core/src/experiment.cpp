#include "w2s/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "json_util.hpp"
#include "w2s/checkpoint.hpp"
#include "w2s/error.hpp"
#include "w2s/io.hpp"
#include "w2s/metrics.hpp"
#include "w2s/protocol.hpp"
#include "w2s/rng.hpp"

namespace fs = std::filesystem;

namespace w2s {

using detail::json;

namespace {

std::vector<PreferencePair> load_split(const fs::path& path, const JsonlSource& src, const std::string& domain,
                                       std::uint64_t seed, std::uint64_t id_base, std::vector<std::string>* warnings) {
  const JsonlLoad load = load_jsonl(path, src.lenient);
  for (const LineIssue& issue : load.issues) {
    if (warnings) warnings->push_back(path.string() + ":" + std::to_string(issue.line) + ": " + issue.message);
  }
  PreprocessOptions opt;
  opt.seed = seed;
  opt.max_seq_len = src.max_seq_len;
  opt.domain = domain;
  opt.id_base = id_base;
  PreprocessResult r = preprocess(load.records, opt);
  if (warnings) {
    for (const std::string& w : r.warnings) warnings->push_back(path.string() + ": " + w);
  }
  return std::move(r.pairs);
}

std::string fingerprint(const ExperimentConfig& cfg) {
  json j = json::parse(experiment_config_json(cfg));
  for (const char* k : {"output_dir", "sources", "methods", "lambdas", "seeds", "drift", "l2sp_mus"}) {
    j.erase(k);
  }
  return j.dump();
}

std::string model_family(const ExperimentConfig& cfg) {
  return "d" + std::to_string(cfg.strong_model.d_model) + "-L" + std::to_string(cfg.strong_model.n_layers);
}

std::string category_name(const ExperimentConfig& cfg) {
  return cfg.synthetic ? cfg.synthetic->name : cfg.jsonl->name;
}

std::vector<std::size_t> drift_layers(const DriftSettings& s, const ModelConfig& m) {
  if (!s.layers.empty()) return s.layers;
  std::vector<std::size_t> all;
  for (std::size_t l = 1; l <= m.n_layers; ++l) all.push_back(l);
  return all;
}

std::map<std::string, std::vector<PreferencePair>> test_corpora(const CategoryData& data) {
  std::map<std::string, std::vector<PreferencePair>> out;
  for (const DomainData& d : data.domains) out.emplace(d.name, d.test);
  return out;
}

json read_json(const fs::path& p) {
  try {
    return json::parse(read_text_file(p));
  } catch (const json::parse_error& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

class Logger {
 public:
  explicit Logger(LogFn fn) : fn_(std::move(fn)) {}
  void operator()(const std::string& s) {
    if (!fn_) return;
    std::lock_guard<std::mutex> lock(mu_);
    fn_(s);
  }

 private:
  LogFn fn_;
  std::mutex mu_;
};

struct UnitContext {
  const ExperimentConfig* cfg = nullptr;
  const CategoryData* data = nullptr;
  const Bases* bases = nullptr;
  fs::path run_dir;
  Logger* log = nullptr;
};

json accuracy_json(const RewardModel& m, const CategoryData& data) {
  json acc = json::object();
  for (const DomainData& d : data.domains) acc[d.name] = evaluate_accuracy(m.view(true), d.test);
  return acc;
}

std::string acc_summary(const json& acc) {
  std::string s;
  for (const auto& [k, v] : acc.items()) s += " " + k + "=" + format_fixed(v.get<double>(), 2);
  return s;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string weak_labels_jsonl(const std::vector<PreferencePair>& pairs) {
  std::string out;
  for (const PreferencePair& p : pairs) {
    json j = {{"pair_id", p.pair_id}, {"domain", p.domain}, {"p_a", p.weak_label.value_or(0.5)}};
    out += j.dump() + "\n";
  }
  return out;
}

std::size_t run_unit(const UnitContext& ctx, const std::string& source, std::uint64_t seed, std::size_t* reused) {
  const ExperimentConfig& cfg = *ctx.cfg;
  const CategoryData& data = *ctx.data;
  const fs::path dir = unit_dir(ctx.run_dir, source, seed);
  const fs::path manifest_path = dir / "manifest.json";
  json manifest = fs::exists(manifest_path) ? read_json(manifest_path) : json{{"source", source}, {"seed", seed}};
  if (!manifest.contains("models")) manifest["models"] = json::object();
  json& models = manifest["models"];
  auto save_manifest = [&] { write_text_file(manifest_path, manifest.dump(2) + "\n"); };

  const ProtocolConfig pc = cfg.protocol();
  const std::vector<MethodSpec> methods = cfg.expanded_methods();
  std::vector<std::string> pending;
  if (!models.contains("ceiling")) pending.push_back("ceiling");
  for (const MethodSpec& m : methods) {
    if (!models.contains(m.label())) pending.push_back(m.label());
  }
  const std::string tag = "[" + source + " seed " + std::to_string(seed) + "] ";
  *reused += models.size();
  if (pending.empty() && models.contains("weak")) {
    (*ctx.log)(tag + "complete, nothing to train");
    return 0;
  }

  const DomainData& src = data.domain(source);
  ProtocolSplit split = split_protocol(src.train, seed, !src.validation.empty());
  if (split.validation.empty()) split.validation = src.validation;
  split.test = src.test;
  write_text_file(dir / "split.json", split_manifest_json(split));

  const auto corpora = test_corpora(data);
  const auto layers = drift_layers(cfg.drift, cfg.strong_model);
  std::size_t trained = 0;

  const fs::path weak_ckpt = dir / "weak" / "model.ckpt";
  std::optional<RewardModel> weak;
  if (models.contains("weak") && fs::exists(weak_ckpt)) {
    weak = load_checkpoint(weak_ckpt);
  } else {
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult curve;
    weak = train_weak(ctx.bases->weak, split.gold, pc, seed, &curve);
    save_checkpoint(weak_ckpt, *weak);
    write_text_file(dir / "weak" / "losses.csv", losses_csv(curve));
    models["weak"] = {{"role", "weak"}, {"accuracy", accuracy_json(*weak, data)}};
    write_text_file(dir / "weak" / "accuracy.json", models["weak"]["accuracy"].dump(2) + "\n");
    save_manifest();
    ++trained;
    (*ctx.log)(tag + "weak trained in " + format_fixed(seconds_since(t0), 1) + "s," +
               acc_summary(models["weak"]["accuracy"]));
  }
  const std::vector<PreferencePair> weak_labels = weak_annotate(weak->view(true), split.w2s);
  if (!fs::exists(dir / "weak_labels.jsonl")) write_text_file(dir / "weak_labels.jsonl", weak_labels_jsonl(weak_labels));

  auto finish = [&](const std::string& label, const RewardModel& m, const TrainResult& curve, json entry,
                    std::chrono::steady_clock::time_point t0) {
    const fs::path md = dir / label;
    save_checkpoint(md / "model.ckpt", m);
    write_text_file(md / "losses.csv", losses_csv(curve));
    write_text_file(md / "drift.csv", drift_profile(m.view(true), m.view(false), corpora, layers, cfg.drift.pooling).to_csv());
    entry["accuracy"] = accuracy_json(m, data);
    write_text_file(md / "accuracy.json", entry["accuracy"].dump(2) + "\n");
    entry["final_loss"] = curve.epoch_loss.empty() ? 0.0 : curve.epoch_loss.back();
    models[label] = entry;
    save_manifest();
    ++trained;
    (*ctx.log)(tag + label + " trained in " + format_fixed(seconds_since(t0), 1) + "s," +
               acc_summary(entry["accuracy"]));
  };

  for (const std::string& label : pending) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult curve;
    if (label == "ceiling") {
      RewardModel m = train_ceiling(ctx.bases->strong, split.w2s, pc, seed, &curve);
      finish(label, m, curve, {{"role", "ceiling"}}, t0);
      continue;
    }
    const MethodSpec& method = *std::find_if(methods.begin(), methods.end(),
                                             [&](const MethodSpec& m) { return m.label() == label; });
    LabelStreamAudit audit = make_student_audit(data, source, split, weak_labels);
    RewardModel m = train_student(ctx.bases->strong, weak_labels, method, pc, seed, audit, &curve);
    json entry = {{"role", "student"}};
    switch (method.kind) {
      case Method::naive:
        entry["method"] = "naive";
        break;
      case Method::conf:
        entry["method"] = "conf";
        entry["conf_alpha"] = method.conf_alpha;
        break;
      case Method::anchor:
        entry["method"] = method.anchor.variant == AnchorVariant::last ? "anchor" : "anchor-mla";
        entry["lambda"] = method.anchor.lambda;
        break;
      case Method::l2sp:
        entry["method"] = "l2sp";
        entry["l2sp_mu"] = method.l2sp_mu;
        break;
    }
    finish(label, m, curve, entry, t0);
  }
  return trained;
}

template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (error || next >= n) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

fs::path unit_dir(const fs::path& run_dir, const std::string& source, std::uint64_t seed) {
  return run_dir / "runs" / source / ("seed-" + std::to_string(seed));
}

CategoryData load_category(const ExperimentConfig& cfg, std::vector<std::string>* warnings) {
  if (cfg.synthetic) return generate_category(*cfg.synthetic, cfg.data_seed);
  if (!cfg.jsonl) throw ConfigError("config has no data source");
  CategoryData data;
  data.name = cfg.jsonl->name;
  for (std::size_t i = 0; i < cfg.jsonl->domains.size(); ++i) {
    const JsonlDomain& jd = cfg.jsonl->domains[i];
    const std::uint64_t base = static_cast<std::uint64_t>(i + 1) << 32;
    DomainData d;
    d.name = jd.name;
    d.train = load_split(jd.train, *cfg.jsonl, jd.name, mix_seed(cfg.data_seed, hash_tag("train")), base, warnings);
    if (!jd.validation.empty()) {
      d.validation = load_split(jd.validation, *cfg.jsonl, jd.name, mix_seed(cfg.data_seed, hash_tag("validation")),
                                base + (1ULL << 28), warnings);
    }
    d.test = load_split(jd.test, *cfg.jsonl, jd.name, mix_seed(cfg.data_seed, hash_tag("test")), base + (2ULL << 28),
                        warnings);
    data.domains.push_back(std::move(d));
  }
  return data;
}

Bases build_bases(const ExperimentConfig& cfg) {
  Bases b{RewardModel(cfg.weak_model), RewardModel(cfg.strong_model)};
  if (cfg.pretrain) {
    const auto corpus = generate_pretraining_corpus(*cfg.synthetic, cfg.pretrain->corpus_size, cfg.pretrain->corpus_seed);
    pretrain_base(b.weak, corpus, cfg.pretrain->weak);
    pretrain_base(b.strong, corpus, cfg.pretrain->strong);
  }
  return b;
}

RunSummary run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
  cfg.validate();
  Logger log(options.log);
  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  const fs::path fp_path = out / "fingerprint.json";
  const std::string fp = fingerprint(cfg);
  if (fs::exists(fp_path)) {
    if (read_text_file(fp_path) != fp + "\n") {
      throw ConfigError("output_dir " + out.string() +
                        " holds runs of a different data, model or training configuration; choose another directory");
    }
  } else {
    write_text_file(fp_path, fp + "\n");
  }
  write_text_file(out / "config.json", experiment_config_json(cfg));

  std::vector<std::string> warnings;
  const CategoryData data = load_category(cfg, &warnings);
  for (const std::string& w : warnings) log("warning: " + w);

  const fs::path weak_base = out / "bases" / "weak.ckpt";
  const fs::path strong_base = out / "bases" / "strong.ckpt";
  std::optional<Bases> bases;
  if (fs::exists(weak_base) && fs::exists(strong_base)) {
    bases.emplace(Bases{load_checkpoint(weak_base), load_checkpoint(strong_base)});
  } else {
    const auto t0 = std::chrono::steady_clock::now();
    bases.emplace(build_bases(cfg));
    save_checkpoint(weak_base, bases->weak);
    save_checkpoint(strong_base, bases->strong);
    log("bases ready in " + format_fixed(seconds_since(t0), 1) + "s");
  }

  std::vector<std::pair<std::string, std::uint64_t>> units;
  for (const std::string& s : cfg.source_domains()) {
    for (std::uint64_t seed : cfg.seeds) units.emplace_back(s, seed);
  }
  UnitContext ctx{&cfg, &data, &*bases, out, &log};
  std::vector<std::size_t> trained(units.size(), 0), reused(units.size(), 0);
  parallel_for(units.size(), options.jobs, [&](std::size_t i) {
    trained[i] = run_unit(ctx, units[i].first, units[i].second, &reused[i]);
  });
  RunSummary summary;
  for (std::size_t i = 0; i < units.size(); ++i) {
    summary.trained += trained[i];
    summary.reused += reused[i];
  }
  const ReportSummary rep = write_reports(out);
  for (const std::string& g : rep.gaps) log("gap: " + g);
  return summary;
}

void recompute_drift(const fs::path& run_dir, const DriftSettings& settings, const RunOptions& options) {
  const ExperimentConfig cfg = load_experiment_config(run_dir / "config.json");
  Logger log(options.log);
  const CategoryData data = load_category(cfg);
  const auto corpora = test_corpora(data);
  const auto layers = drift_layers(settings, cfg.strong_model);
  for (std::size_t l : layers) {
    if (l < 1 || l > cfg.strong_model.n_layers) {
      throw ConfigError("drift layer " + std::to_string(l) + " outside 1.." + std::to_string(cfg.strong_model.n_layers));
    }
  }
  std::vector<fs::path> dirs;
  for (const std::string& s : cfg.source_domains()) {
    for (std::uint64_t seed : cfg.seeds) {
      const fs::path d = unit_dir(run_dir, s, seed);
      if (!fs::exists(d / "manifest.json")) continue;
      const json m = read_json(d / "manifest.json");
      for (const auto& [label, entry] : m.at("models").items()) {
        if (entry.at("role") != "weak") dirs.push_back(d / label);
      }
    }
  }
  parallel_for(dirs.size(), options.jobs, [&](std::size_t i) {
    const RewardModel m = load_checkpoint(dirs[i] / "model.ckpt");
    write_text_file(dirs[i] / "drift.csv", drift_profile(m.view(true), m.view(false), corpora, layers, settings.pooling).to_csv());
    log("drift " + dirs[i].string());
  });
  write_reports(run_dir);
}

namespace {

struct ModelKey {
  std::string source;
  std::string label;
  bool operator<(const ModelKey& o) const { return std::tie(source, label) < std::tie(o.source, o.label); }
};

std::string lambda_cell(const json& entry) {
  return entry.contains("lambda") ? format_double(entry.at("lambda").get<double>()) : std::string();
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

ReportSummary write_reports(const fs::path& run_dir) {
  if (!fs::exists(run_dir / "config.json")) {
    throw DataError("no run manifests under " + run_dir.string() + " (0 found, no config.json)");
  }
  const ExperimentConfig cfg = load_experiment_config(run_dir / "config.json");
  const std::vector<std::string> domains = cfg.domain_names();
  const std::vector<MethodSpec> methods = cfg.expanded_methods();
  ReportSummary summary;

  std::size_t manifests = 0;
  AccuracyMatrix matrix;
  std::map<std::string, json> entries_by_label;  // label -> a representative manifest entry
  std::string drift_csv =
      "category,model_family,source,method,lambda,seed,corpus,layer,cka_distance,cca_distance,n_examples\n";
  std::map<std::tuple<std::string, std::string, std::string, std::size_t>, std::pair<std::vector<double>, std::vector<double>>>
      drift_medians;  // (source, label, corpus, layer) -> (cka, cca)
  const std::string cat = category_name(cfg);
  const std::string fam = model_family(cfg);

  for (const std::string& source : cfg.source_domains()) {
    std::vector<std::pair<std::uint64_t, json>> found;
    bool complete = true;
    for (std::uint64_t seed : cfg.seeds) {
      const fs::path mp = unit_dir(run_dir, source, seed) / "manifest.json";
      if (!fs::exists(mp)) {
        summary.gaps.push_back(source + " seed " + std::to_string(seed) + ": no manifest");
        complete = false;
        continue;
      }
      ++manifests;
      const json m = read_json(mp);
      const json& models = m.at("models");
      std::vector<std::string> need{"weak", "ceiling"};
      for (const MethodSpec& ms : methods) need.push_back(ms.label());
      for (const std::string& label : need) {
        if (!models.contains(label)) {
          summary.gaps.push_back(source + " seed " + std::to_string(seed) + ": " + label + " missing");
          complete = false;
        }
      }
      found.emplace_back(seed, m);
    }
    if (!complete) continue;
    for (const auto& [seed, m] : found) {
      const json& models = m.at("models");
      for (const std::string& e : domains) {
        matrix.add_weak(source, e, models.at("weak").at("accuracy").at(e).get<double>());
        matrix.add_ceiling(source, e, models.at("ceiling").at("accuracy").at(e).get<double>());
        for (const MethodSpec& ms : methods) {
          matrix.add_student(ms.label(), source, e, models.at(ms.label()).at("accuracy").at(e).get<double>());
        }
      }
      std::vector<std::string> strong{"ceiling"};
      for (const MethodSpec& ms : methods) strong.push_back(ms.label());
      for (const std::string& label : strong) {
        entries_by_label.emplace(label, models.at(label));
        const fs::path dp = unit_dir(run_dir, source, seed) / label / "drift.csv";
        if (!fs::exists(dp)) {
          summary.gaps.push_back(source + " seed " + std::to_string(seed) + ": " + label + " has no drift.csv");
          continue;
        }
        const DriftProfile prof = DriftProfile::from_csv(read_text_file(dp));
        for (const DriftEntry& d : prof.entries) {
          drift_csv += cat + "," + fam + "," + source + "," + label + "," + lambda_cell(models.at(label)) + "," +
                       std::to_string(seed) + "," + d.corpus + "," + std::to_string(d.layer) + "," +
                       format_double(d.cka_distance) + "," + format_double(d.cca_distance) + "," +
                       std::to_string(d.n_examples) + "\n";
          auto& slot = drift_medians[{source, label, d.corpus, d.layer}];
          slot.first.push_back(d.cka_distance);
          slot.second.push_back(d.cca_distance);
        }
      }
    }
  }
  if (manifests == 0) throw DataError("no run manifests under " + run_dir.string() + " (0 found)");
  for (const auto& [key, v] : drift_medians) {
    const auto& [source, label, corpus, layer] = key;
    drift_csv += cat + "," + fam + "," + source + "," + label + "," + lambda_cell(entries_by_label.at(label)) +
                 ",median," + corpus + "," + std::to_string(layer) + "," + format_double(median(v.first)) + "," +
                 format_double(median(v.second)) + "," + std::to_string(v.first.size()) + "\n";
  }

  std::vector<TransferReport> reports;
  if (!matrix.sources().empty()) reports.push_back(build_report(matrix, cat, fam));
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text_file(run_dir / name, text);
    summary.written.push_back(run_dir / name);
  };
  emit("report.csv", report_csv(reports));
  emit("report.json", report_json(reports));

  std::string ablation = "category,model_family,source,variant,eval_domain,metric,lambda,value\n";
  if (!reports.empty()) {
    const TransferReport& r = reports.front();
    for (const std::string& variant : {std::string("anchor"), std::string("anchor-mla")}) {
      std::vector<const MethodSpec*> sweep;
      for (const MethodSpec& ms : methods) {
        const bool mla = ms.anchor.variant == AnchorVariant::middle;
        if (ms.kind == Method::anchor && mla == (variant == "anchor-mla")) sweep.push_back(&ms);
      }
      std::sort(sweep.begin(), sweep.end(),
                [](const MethodSpec* a, const MethodSpec* b) { return a->anchor.lambda > b->anchor.lambda; });
      if (sweep.empty()) continue;
      for (const std::string& s : matrix.sources()) {
        for (const char* metric : {"WRG", "PGR"}) {
          for (const MethodSpec* ms : sweep) {
            const SourceMetrics& sm = r.at(s, ms->label());
            const double v = std::string(metric) == "WRG" ? sm.wrg : sm.pgr;
            ablation += cat + "," + fam + "," + s + "," + variant + "," + s + "," + metric + "," +
                        format_double(ms->anchor.lambda) + "," + (std::isnan(v) ? "nan" : format_fixed(v, 6)) + "\n";
          }
        }
        for (const std::string& t : matrix.evals(s)) {
          if (t == s) continue;
          for (const char* metric : {"AOG", "NTS"}) {
            for (const MethodSpec* ms : sweep) {
              const TargetMetrics& tm = r.at(s, t, ms->label());
              const double v = std::string(metric) == "AOG" ? tm.aog : tm.nts;
              ablation += cat + "," + fam + "," + s + "," + variant + "," + t + "," + metric + "," +
                          format_double(ms->anchor.lambda) + "," + format_fixed(v, 6) + "\n";
            }
          }
        }
      }
    }
  }
  emit("lambda_ablation.csv", ablation);
  emit("drift_profile.csv", drift_csv);

  const fs::path gaps = run_dir / "gaps.txt";
  if (summary.gaps.empty()) {
    fs::remove(gaps);
  } else {
    std::string text;
    for (const std::string& g : summary.gaps) text += g + "\n";
    write_text_file(gaps, text);
  }
  return summary;
}

}  // namespace w2s
