// phenoctm command-line tool.
//
// Exit codes: 0 ok, 1 invalid arguments, 2 I/O or parse failure,
// 3 no convergence / threshold not met, 4 model-data incompatibility.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "phenoctm/learning.hpp"
#include "phenoctm/parallel.hpp"
#include "phenoctm/phenotype.hpp"
#include "phenoctm/summarize.hpp"
#include "phenoctm/synth.hpp"

#ifndef PHENOCTM_VERSION
#define PHENOCTM_VERSION "dev"
#endif

namespace fs = std::filesystem;
using namespace phenoctm;

namespace {

enum Exit { kOk = 0, kArgs = 1, kIo = 2, kConvergence = 3, kCompat = 4 };

// Flat JSON object whose keys are long option names without dashes, e.g.
// {"k": 5, "seed": 1, "corpus": "data/"}, applied to the selected
// subcommand. A key naming a subcommand may hold that subcommand's options.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* root) : root_(root) {}

  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json j = json::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (opt->get_lnames().empty() || opt->get_configurable() == false) continue;
      const std::string name = opt->get_lnames().front();
      if (opt->count() > 0) j[name] = CLI::detail::join(opt->results(), ",");
      else if (default_also && !opt->get_default_str().empty()) j[name] = opt->get_default_str();
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      j = json::parse(input);
    } catch (const json::parse_error& e) {
      throw CLI::ConfigError(std::string("config file: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConfigError("config file must hold a JSON object");
    const auto selected = root_->get_subcommands();
    const std::string active = selected.empty() ? std::string() : selected.front()->get_name();
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        if (key != active) continue;
        auto nested = from_config_object(value, key);
        items.insert(items.end(), nested.begin(), nested.end());
        continue;
      }
      auto one = from_config_object(json{{key, value}}, active);
      items.insert(items.end(), one.begin(), one.end());
    }
    return items;
  }

 private:
  const CLI::App* root_;

  static std::vector<CLI::ConfigItem> from_config_object(const json& j, const std::string& parent) {
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      if (!parent.empty()) item.parents = {parent};
      item.name = key;
      if (value.is_boolean()) item.inputs = {value.get<bool>() ? "true" : "false"};
      else if (value.is_string()) item.inputs = {value.get<std::string>()};
      else if (value.is_array())
        for (const auto& v : value) item.inputs.push_back(v.is_string() ? v.get<std::string>() : v.dump());
      else item.inputs = {value.dump()};
      items.push_back(std::move(item));
    }
    return items;
  }
};

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Echo of every option of the subcommand (given or defaulted).
json option_echo(const CLI::App* app) {
  json j = json::object();
  for (const CLI::Option* opt : app->get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    if (opt->get_expected_max() == 0) j[name] = opt->count() > 0;
    else if (opt->count() > 0) j[name] = CLI::detail::join(opt->results(), ",");
    else j[name] = opt->get_default_str();
  }
  return j;
}

class Manifest {
 public:
  Manifest(const CLI::App* sub, fs::path out_dir)
      : out_dir_(std::move(out_dir)), start_(std::chrono::steady_clock::now()) {
    j_["command"] = sub->get_name();
    j_["version"] = PHENOCTM_VERSION;
    j_["started_at"] = utc_timestamp();
    j_["config"] = option_echo(sub);
    j_["inputs"] = json::object();
    j_["outputs"] = json::array();
    if (const CLI::App* root = sub->get_parent()) {
      const CLI::Option* cfg = root->get_config_ptr();
      if (cfg != nullptr && cfg->count() > 0) j_["inputs"]["config"] = cfg->as<std::string>();
    }
  }
  void seed(std::uint64_t s) { j_["seed"] = s; }
  void input(const std::string& key, const fs::path& p) { j_["inputs"][key] = p.string(); }
  void output(const fs::path& p) { j_["outputs"].push_back(p.filename().string()); }
  json& extra() { return j_; }
  void write(int exit_code) {
    j_["exit_code"] = exit_code;
    j_["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_text_file(out_dir_ / "manifest.json", j_.dump(2) + "\n");
  }

 private:
  fs::path out_dir_;
  std::chrono::steady_clock::time_point start_;
  json j_ = json::object();
};

// Shared training flags.
struct TrainFlags {
  int k = 0;
  std::uint64_t seed = 0;
  int max_iters = 200;
  double em_tol = 1e-5;
  double beta_smoothing = 1e-8;
  double init_noise = 0.5;
  int prior_warmup = 20;
  bool fixed_prior = false;
  int restarts = 1;
  double doc_tol = 1e-4;
  int doc_max_outer = 100;
  unsigned threads = 0;
  bool quiet = false;

  void add(CLI::App* app, bool require_k, bool require_seed) {
    auto* k_opt = app->add_option("--k", k, "number of phenotypes (>= 2)")->check(CLI::Range(2, 1000000));
    if (require_k) k_opt->required();
    auto* s_opt = app->add_option("--seed", seed, "initialization seed");
    if (require_seed) s_opt->required();
    else s_opt->capture_default_str();
    app->add_option("--max-iters", max_iters, "EM iteration cap")->capture_default_str()->check(CLI::NonNegativeNumber);
    app->add_option("--em-tol", em_tol, "relative ELBO change for convergence")->capture_default_str()->check(CLI::NonNegativeNumber);
    app->add_option("--beta-smoothing", beta_smoothing, "pseudo-count added to beta")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--init-noise", init_noise, "beta initialization noise")->capture_default_str()->check(CLI::NonNegativeNumber);
    app->add_option("--prior-warmup", prior_warmup, "EM iterations before mu0/Sigma0 are re-estimated")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    app->add_flag("--fixed-prior", fixed_prior, "never re-estimate mu0/Sigma0");
    app->add_option("--restarts", restarts, "independent EM runs; best ELBO kept")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--doc-tol", doc_tol, "per-record convergence tolerance")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--doc-max-outer", doc_max_outer, "per-record iteration cap")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--threads", threads, "E-step worker threads (0 = all cores)")
        ->envname("PHENOCTM_THREADS")
        ->capture_default_str();
    app->add_flag("--quiet,-q", quiet, "suppress progress output");
  }

  TrainConfig config(int k_override) const {
    TrainConfig c;
    c.K = k_override;
    c.seed = seed;
    c.max_em_iters = max_iters;
    c.em_tol = em_tol;
    c.beta_smoothing = beta_smoothing;
    c.noise_scale = init_noise;
    c.prior_warmup_iters = prior_warmup;
    c.update_prior = !fixed_prior;
    c.restarts = restarts;
    c.doc_tol = doc_tol;
    c.doc_max_outer = doc_max_outer;
    return c;
  }
};

struct TrainOutcome {
  TrainedModel model;
  std::string history_csv;
};

TrainOutcome run_training(const Corpus& corpus, const TrainConfig& cfg, const TrainFlags& flags) {
  std::map<int, std::string> csv_by_restart;
  TrainOptions opt;
  opt.threads = flags.threads;
  opt.observer = [&](const EmIterationInfo& info, const ModelParams&, const std::vector<DocPosterior>&) {
    auto& csv = csv_by_restart[info.restart];
    csv += std::to_string(info.iteration) + "," + fmt(info.objective) + "," +
           (std::isnan(info.relative_change) ? std::string() : fmt(info.relative_change)) + "," +
           std::to_string(info.flagged_records) + "," + std::to_string(info.unconverged_records) + "," +
           (info.sigma_repaired ? "1" : "0") + "\n";
    if (!flags.quiet)
      std::fprintf(stderr, "[train] restart %d iter %d elbo %.6f rel %.3e flagged %d (%.2fs)\n", info.restart,
                   info.iteration, info.objective, info.relative_change, info.flagged_records, info.seconds);
  };
  TrainOutcome out{train(corpus, cfg, opt), {}};
  out.history_csv = "iteration,objective,relative_change,flagged_records,unconverged_records,sigma_repaired\n" +
                    csv_by_restart[out.model.selected_restart];
  if (!flags.quiet && cfg.restarts > 1)
    std::fprintf(stderr, "[train] kept restart %d\n", out.model.selected_restart);
  return out;
}

unsigned effective_threads(unsigned t) { return resolve_threads(t); }

// ---------------------------------------------------------------------------

struct TrainCmd {
  std::string corpus_dir, vocab, records;
  fs::path out;
  TrainFlags flags;
};

int cmd_train(const CLI::App* sub, TrainCmd& a) {
  Corpus corpus = a.corpus_dir.empty() ? load_corpus(a.vocab, a.records) : load_corpus(a.corpus_dir);
  const TrainConfig cfg = a.flags.config(a.flags.k);
  cfg.validate();
  ensure_dir(a.out);
  Manifest man(sub, a.out);
  man.seed(cfg.seed);
  if (!a.corpus_dir.empty()) man.input("corpus", a.corpus_dir);
  else {
    man.input("vocab", a.vocab);
    man.input("records", a.records);
  }
  man.extra()["threads"] = effective_threads(a.flags.threads);
  auto res = run_training(corpus, cfg, a.flags);
  save_model(res.model, a.out / "model.json");
  write_text_file(a.out / "history.csv", res.history_csv);
  man.output(a.out / "model.json");
  man.output(a.out / "history.csv");
  man.extra()["converged"] = res.model.converged;
  man.extra()["em_iterations"] = res.model.history.size();
  man.extra()["flagged_records"] = res.model.flagged_records;
  man.extra()["selected_restart"] = res.model.selected_restart;
  const int code = res.model.converged ? kOk : kConvergence;
  man.write(code);
  if (code != kOk)
    std::fprintf(stderr, "phenoctm train: no convergence within %d EM iterations; model written to %s\n",
                 cfg.max_em_iters, (a.out / "model.json").c_str());
  return code;
}

// ---------------------------------------------------------------------------

struct PhenotypesCmd {
  fs::path model, out;
  int top_n = 10;
  std::string label_type;
  double corr_threshold = 0.5;
  std::string correlation = "prior";
  double present_threshold = 0.05;
  double prevalence_cutoff = 0.0;
};

int cmd_phenotypes(const CLI::App* sub, PhenotypesCmd& a) {
  const TrainedModel model = load_model(a.model);
  const std::string label_type = a.label_type.empty() ? model.vocabularies.front().type_name() : a.label_type;
  const auto defs = extract_phenotypes(model, a.top_n, label_type);
  const RelatednessGraph graph =
      a.correlation == "empirical" ? empirical_correlation_graph(model, a.corr_threshold) : correlation_graph(model, a.corr_threshold);
  ensure_dir(a.out);
  Manifest man(sub, a.out);
  man.seed(model.config.seed);
  man.input("model", a.model);
  write_text_file(a.out / "phenotypes.json", phenotypes_to_json(defs, model).dump(2) + "\n");
  write_text_file(a.out / "graph.json", graph_to_json(graph).dump(2) + "\n");
  write_text_file(a.out / "edges.csv", edges_to_csv(graph.edges));
  man.output(a.out / "phenotypes.json");
  man.output(a.out / "graph.json");
  man.output(a.out / "edges.csv");
  if (a.prevalence_cutoff > 0.0) {
    const Vector prev = prevalence(model, a.present_threshold);
    const EdgeSplit split = split_by_prevalence(graph, prev, a.prevalence_cutoff);
    auto edges_json = [](const std::vector<CorrelationEdge>& es) {
      json arr = json::array();
      for (const auto& e : es) arr.push_back({{"i", e.i}, {"j", e.j}, {"rho", e.rho}});
      return arr;
    };
    json pj = {{"present_threshold", a.present_threshold},
               {"cutoff", a.prevalence_cutoff},
               {"prevalence", std::vector<double>(prev.data(), prev.data() + prev.size())},
               {"common_edges", edges_json(split.common)},
               {"rare_edges", edges_json(split.rare)}};
    write_text_file(a.out / "prevalence.json", pj.dump(2) + "\n");
    man.output(a.out / "prevalence.json");
  }
  man.extra()["edges"] = graph.edges.size();
  man.write(kOk);
  return kOk;
}

// ---------------------------------------------------------------------------

struct SummarizeCmd {
  fs::path model, record_file, vocab, out;
  int top_n = 5;
  std::string record_id;
  int label_top = 1;
  std::string label_type;
  unsigned threads = 0;
};

std::string safe_file_stem(const std::string& id) {
  std::string s;
  for (char c : id) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  return s.empty() ? "record" : s;
}

int cmd_summarize(const CLI::App* sub, SummarizeCmd& a) {
  TrainedModel model = load_model(a.model);
  std::vector<Vocabulary> vocabs = model.vocabularies;
  if (!a.vocab.empty()) {
    vocabs = load_vocabularies(a.vocab);
    check_compatible(model, vocabs);
  }
  const auto segments = load_records(a.record_file, vocabs);

  // Group segments by record id, keeping file order within and across records.
  std::vector<std::string> order;
  std::map<std::string, std::vector<RecordBags>> groups;
  for (const auto& s : segments) {
    if (!a.record_id.empty() && s.record_id != a.record_id) continue;
    if (!groups.count(s.record_id)) order.push_back(s.record_id);
    groups[s.record_id].push_back(s);
  }
  if (order.empty()) throw InvalidArgument("record '" + a.record_id + "' not found in " + a.record_file.string());

  const std::string label_type = a.label_type.empty() ? model.vocabularies.front().type_name() : a.label_type;
  const auto defs = extract_phenotypes(model, 1, label_type);

  std::vector<SummaryTrajectory> out(order.size());
  parallel_for(order.size(), a.threads, [&](std::size_t i) {
    out[i] = summarize_record(groups.at(order[i]), model, a.top_n, vocabs);
    for (int k : out[i].selected) out[i].labels.push_back(defs[static_cast<std::size_t>(k)].label);
  });

  ensure_dir(a.out);
  Manifest man(sub, a.out);
  man.seed(model.config.seed);
  man.input("model", a.model);
  man.input("record_file", a.record_file);
  if (!a.vocab.empty()) man.input("vocab", a.vocab);
  std::map<std::string, int> used;
  for (const auto& t : out) {
    std::string stem = safe_file_stem(t.record_id);
    if (used[stem]++ > 0) stem += "_" + std::to_string(used[stem] - 1);
    export_sankey(t, a.out / (stem + ".sankey.json"));
    write_text_file(a.out / (stem + ".trajectory.csv"), trajectory_to_csv(t));
    man.output(a.out / (stem + ".sankey.json"));
    man.output(a.out / (stem + ".trajectory.csv"));
  }
  man.extra()["records"] = out.size();
  man.write(kOk);
  return kOk;
}

// ---------------------------------------------------------------------------

struct ScenarioSource {
  std::string preset_name;
  fs::path scenario_file;

  bool given() const { return !preset_name.empty() || !scenario_file.empty(); }
  ScenarioSpec load() const {
    if (!preset_name.empty()) return preset(preset_name);
    return scenario_from_json(read_json_file(scenario_file));
  }
};

struct EvalCmd {
  ScenarioSource scenario;
  fs::path truth, corpus_dir, out;
  double tv_threshold = 0.1;
  double corr_threshold = 0.5;
  TrainFlags flags;
};

int cmd_eval(const CLI::App* sub, EvalCmd& a) {
  Corpus corpus;
  PlantedModel planted;
  if (a.scenario.given()) {
    auto sampled = sample_scenario(a.scenario.load());
    corpus = std::move(sampled.first);
    planted = std::move(sampled.second);
  } else {
    if (a.truth.empty() || a.corpus_dir.empty())
      throw InvalidArgument("eval needs --preset, --scenario, or both --truth and --corpus");
    corpus = load_corpus(a.corpus_dir);
    const TrainedModel truth = load_model(a.truth, corpus.vocabularies);
    planted = planted_from_model(truth);
  }
  const int k = a.flags.k > 0 ? a.flags.k : planted.params.num_phenotypes();
  if (k != planted.params.num_phenotypes())
    throw InvalidArgument("--k " + std::to_string(k) + " differs from the planted K " +
                          std::to_string(planted.params.num_phenotypes()));
  const TrainConfig cfg = a.flags.config(k);
  cfg.validate();
  ensure_dir(a.out);
  Manifest man(sub, a.out);
  man.seed(cfg.seed);
  if (!a.scenario.preset_name.empty()) man.input("preset", a.scenario.preset_name);
  if (!a.scenario.scenario_file.empty()) man.input("scenario", a.scenario.scenario_file);
  if (!a.truth.empty()) man.input("truth", a.truth);
  if (!a.corpus_dir.empty()) man.input("corpus", a.corpus_dir);
  man.extra()["threads"] = effective_threads(a.flags.threads);

  auto res = run_training(corpus, cfg, a.flags);
  const RecoveryReport rep = recovery_report(res.model.params, planted.params, a.corr_threshold);
  json rj = recovery_to_json(rep);
  rj["tv_threshold"] = a.tv_threshold;
  rj["passed"] = rep.mean_tv <= a.tv_threshold;
  rj["converged"] = res.model.converged;
  save_model(res.model, a.out / "model.json");
  write_text_file(a.out / "history.csv", res.history_csv);
  write_text_file(a.out / "recovery.json", rj.dump(2) + "\n");
  for (const char* f : {"model.json", "history.csv", "recovery.json"}) man.output(a.out / f);
  man.extra()["converged"] = res.model.converged;
  man.extra()["em_iterations"] = res.model.history.size();
  man.extra()["mean_tv"] = rep.mean_tv;
  if (!a.flags.quiet) std::fprintf(stderr, "[eval] mean_tv %.6f (threshold %.6f)\n", rep.mean_tv, a.tv_threshold);
  if (!res.model.converged) std::fprintf(stderr, "phenoctm eval: warning: training did not converge\n");
  const int code = rep.mean_tv <= a.tv_threshold ? kOk : kConvergence;
  if (code != kOk) std::fprintf(stderr, "phenoctm eval: mean_tv %.6f exceeds --tv-threshold %.6f\n", rep.mean_tv, a.tv_threshold);
  man.write(code);
  return code;
}

// ---------------------------------------------------------------------------

struct CoverageCmd {
  fs::path model, out;
  double mass = 0.9;
  std::string buckets = "1-5,6-20,21+";
};

std::vector<CountBucket> parse_buckets(const std::string& spec) {
  std::vector<CountBucket> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      CountBucket b;
      b.lo = std::stoi(item, &pos);
      const std::string rest = item.substr(pos);
      if (rest == "+") b.hi.reset();
      else if (!rest.empty() && rest[0] == '-') b.hi = std::stoi(rest.substr(1), &pos), pos += 1;
      else if (rest.empty()) b.hi = b.lo;
      else throw std::invalid_argument(item);
      if (rest.size() > 1 && rest[0] == '-' && pos != rest.size()) throw std::invalid_argument(item);
      out.push_back(b);
    } catch (const std::logic_error&) {
      throw InvalidArgument("malformed bucket '" + item + "' (expected lo-hi, lo+ or n)");
    }
  }
  return out;
}

int cmd_coverage(const CLI::App* sub, CoverageCmd& a) {
  const auto buckets = parse_buckets(a.buckets);
  validate_buckets(buckets);
  const TrainedModel model = load_model(a.model);
  const CoverageHistogram h = coverage_histogram(model, a.mass, buckets);
  ensure_dir(a.out);
  Manifest man(sub, a.out);
  man.seed(model.config.seed);
  man.input("model", a.model);
  write_text_file(a.out / "coverage.csv", coverage_to_csv(h));
  std::string counts = "record_id,time_bin,count\n";
  for (std::size_t d = 0; d < h.counts.size(); ++d)
    counts += model.records[d].id + "," + model.records[d].time_bin.value_or("") + "," + std::to_string(h.counts[d]) + "\n";
  write_text_file(a.out / "coverage_counts.csv", counts);
  man.output(a.out / "coverage.csv");
  man.output(a.out / "coverage_counts.csv");
  man.write(kOk);
  return kOk;
}

// ---------------------------------------------------------------------------

struct SynthCmd {
  ScenarioSource scenario;
  fs::path out;
};

int cmd_synth(const CLI::App* sub, SynthCmd& a) {
  if (!a.scenario.given()) throw InvalidArgument("synth needs --preset or --scenario");
  const ScenarioSpec spec = a.scenario.load();
  auto [corpus, planted] = sample_scenario(spec);
  ensure_dir(a.out);
  Manifest man(sub, a.out);
  man.seed(spec.seed);
  save_corpus(corpus, a.out);
  save_model(planted_to_model(planted, corpus), a.out / "truth.json");
  write_text_file(a.out / "scenario.json", scenario_to_json(spec).dump(2) + "\n");
  for (const char* f : {"vocab.json", "records.jsonl", "truth.json", "scenario.json"}) man.output(a.out / f);
  man.write(kOk);
  return kOk;
}

int exit_for(const Error& e) {
  if (dynamic_cast<const InvalidArgument*>(&e)) return kArgs;
  if (dynamic_cast<const CompatibilityError*>(&e)) return kCompat;
  if (dynamic_cast<const NumericalError*>(&e)) return kConvergence;
  return kIo;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"phenoctm: correlated multi-type phenotype model"};
  app.set_version_flag("--version", PHENOCTM_VERSION);
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "JSON file with option values (keys = long option names)");
  app.config_formatter(std::make_shared<JsonConfig>(&app));

  TrainCmd train_a;
  auto* train_sub = app.add_subcommand("train", "fit a model to a corpus");
  auto* corpus_opt = train_sub->add_option("--corpus", train_a.corpus_dir, "directory holding vocab.json and records.jsonl");
  auto* vocab_opt = train_sub->add_option("--vocab", train_a.vocab, "vocabulary JSON");
  auto* records_opt = train_sub->add_option("--records", train_a.records, "records JSONL");
  corpus_opt->excludes(vocab_opt)->excludes(records_opt);
  vocab_opt->needs(records_opt);
  records_opt->needs(vocab_opt);
  train_sub->add_option("--out", train_a.out, "output directory")->required();
  train_a.flags.add(train_sub, true, true);

  PhenotypesCmd ph_a;
  auto* ph_sub = app.add_subcommand("phenotypes", "phenotype definitions and relatedness graph");
  ph_sub->add_option("--model", ph_a.model, "model file")->required();
  ph_sub->add_option("--out", ph_a.out, "output directory")->required();
  ph_sub->add_option("--top-n", ph_a.top_n, "tokens listed per type")->capture_default_str()->check(CLI::PositiveNumber);
  ph_sub->add_option("--label-type", ph_a.label_type, "type whose top token labels a phenotype (default: first type)");
  ph_sub->add_option("--corr-threshold", ph_a.corr_threshold, "edge threshold on |rho| (strict)")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  ph_sub->add_option("--correlation", ph_a.correlation, "prior (from Sigma0) or empirical (from record proportions)")
      ->capture_default_str()
      ->check(CLI::IsMember({"prior", "empirical"}));
  ph_sub->add_option("--present-threshold", ph_a.present_threshold, "proportion at which a phenotype counts as present")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  ph_sub->add_option("--prevalence-cutoff", ph_a.prevalence_cutoff, "split edges into common/rare at this prevalence")
      ->check(CLI::Range(0.0, 1.0));

  SummarizeCmd sum_a;
  auto* sum_sub = app.add_subcommand("summarize", "per-time-bin summary of records");
  sum_sub->add_option("--model", sum_a.model, "model file")->required();
  sum_sub->add_option("--record-file", sum_a.record_file, "segmented records JSONL")->required();
  sum_sub->add_option("--vocab", sum_a.vocab, "vocabulary the record file was written against");
  sum_sub->add_option("--out", sum_a.out, "output directory")->required();
  sum_sub->add_option("--top-n", sum_a.top_n, "phenotypes tracked per record")->capture_default_str()->check(CLI::PositiveNumber);
  sum_sub->add_option("--record-id", sum_a.record_id, "summarize only this record");
  sum_sub->add_option("--label-type", sum_a.label_type, "type used for node labels (default: first type)");
  sum_sub->add_option("--threads", sum_a.threads, "worker threads (0 = all cores)")->envname("PHENOCTM_THREADS")->capture_default_str();

  EvalCmd eval_a;
  auto* eval_sub = app.add_subcommand("eval", "train on synthetic data and score recovery");
  auto* preset_opt = eval_sub->add_option("--preset", eval_a.scenario.preset_name, "named scenario")
                         ->check(CLI::IsMember(preset_names()));
  auto* scen_opt = eval_sub->add_option("--scenario", eval_a.scenario.scenario_file, "scenario JSON file");
  auto* truth_opt = eval_sub->add_option("--truth", eval_a.truth, "planted model file");
  auto* ecorpus_opt = eval_sub->add_option("--corpus", eval_a.corpus_dir, "corpus directory sampled from --truth");
  preset_opt->excludes(scen_opt)->excludes(truth_opt)->excludes(ecorpus_opt);
  scen_opt->excludes(truth_opt)->excludes(ecorpus_opt);
  eval_sub->add_option("--out", eval_a.out, "output directory")->required();
  eval_sub->add_option("--tv-threshold", eval_a.tv_threshold, "pass if mean matched TV <= this")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  eval_sub->add_option("--corr-threshold", eval_a.corr_threshold, "planted |rho| above this is tracked")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  eval_a.flags.seed = 1;
  eval_a.flags.add(eval_sub, false, false);

  CoverageCmd cov_a;
  auto* cov_sub = app.add_subcommand("coverage", "phenotypes needed to explain a share of each record");
  cov_sub->add_option("--model", cov_a.model, "model file")->required();
  cov_sub->add_option("--out", cov_a.out, "output directory")->required();
  cov_sub->add_option("--mass", cov_a.mass, "share of the record to explain, in (0, 1]")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  cov_sub->add_option("--buckets", cov_a.buckets, "count ranges, e.g. 1-5,6-20,21+")->capture_default_str();

  SynthCmd syn_a;
  auto* syn_sub = app.add_subcommand("synth", "sample a synthetic corpus and its planted model");
  auto* spreset_opt = syn_sub->add_option("--preset", syn_a.scenario.preset_name, "named scenario")
                          ->check(CLI::IsMember(preset_names()));
  syn_sub->add_option("--scenario", syn_a.scenario.scenario_file, "scenario JSON file")->excludes(spreset_opt);
  syn_sub->add_option("--out", syn_a.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::FileError& e) {
    std::fprintf(stderr, "phenoctm: %s\n", e.what());
    return kIo;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kArgs;
  }

  try {
    if (*train_sub) {
      if (train_a.corpus_dir.empty() && train_a.vocab.empty())
        throw InvalidArgument("train needs --corpus or --vocab with --records");
      return cmd_train(train_sub, train_a);
    }
    if (*ph_sub) return cmd_phenotypes(ph_sub, ph_a);
    if (*sum_sub) return cmd_summarize(sum_sub, sum_a);
    if (*eval_sub) return cmd_eval(eval_sub, eval_a);
    if (*cov_sub) {
      if (!(cov_a.mass > 0.0)) throw InvalidArgument("--mass must be > 0");
      return cmd_coverage(cov_sub, cov_a);
    }
    if (*syn_sub) return cmd_synth(syn_sub, syn_a);
  } catch (const Error& e) {
    std::fprintf(stderr, "phenoctm: %s\n", e.what());
    return exit_for(e);
  } catch (const json::exception& e) {
    std::fprintf(stderr, "phenoctm: %s\n", e.what());
    return kIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "phenoctm: %s\n", e.what());
    return kIo;
  }
  return kArgs;
}
