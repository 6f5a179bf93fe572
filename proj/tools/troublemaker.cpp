// troublemaker: run trials and batches, fit the exposure model, sample
// scenario sets and render reports.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "troublemaker/config.hpp"
#include "troublemaker/errors.hpp"
#include "troublemaker/textio.hpp"

namespace fs = std::filesystem;
using namespace troublemaker;

namespace {

constexpr int kConfigExit = 2;
constexpr int kFaultExit = 3;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> overrides;
  bool verbose = false;
};

RunConfig resolve(const Globals& g) {
  RunConfig cfg;
  if (!g.config.empty()) {
    if (!fs::exists(g.config)) throw ConfigError("config file '" + g.config + "' does not exist");
    cfg = load_run_config(g.config);
  }
  for (const auto& o : g.overrides) apply_override(cfg, o);
  if (g.seed) cfg.seed = *g.seed;
  if (g.out) cfg.out = *g.out;
  cfg.validate();
  return cfg;
}

void log(const Globals& g, const std::string& msg) {
  if (g.verbose) std::cerr << msg << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InvalidStateError("cannot write " + path.string());
  out << text;
}

std::string trial_summary(const TrialRecord& r) {
  std::ostringstream s;
  s << "method = " << to_string(r.method) << "\n";
  s << "psi_target_s = " << format_short(r.psi_target) << "\n";
  s << "seed = " << r.seed << "\n";
  s << "valid = " << (r.valid ? "true" : "false") << "\n";
  s << "invalid_reason = " << r.invalid_reason << "\n";
  s << "conflict = " << (r.conflict ? "true" : "false") << "\n";
  s << "min_pet_s = " << format_short(r.min_pet) << "\n";
  s << "realized_signed_pet_s = " << (r.realized_signed_pet ? format_short(*r.realized_signed_pet) : "-") << "\n";
  s << "game_termination = " << r.game_termination << "\n";
  s << "game_elapsed_s = " << format_short(r.game_elapsed) << "\n";
  s << "game_steps = " << r.game_steps << "\n";
  s << "infeasible_steps = " << r.infeasible_steps << "\n";
  s << "planner_fallbacks = " << r.planner_fallbacks << "\n";
  s << "trigger_time_s = " << (r.trigger_time ? format_short(*r.trigger_time) : "-") << "\n";
  s << "end_reason = " << r.end_reason << "\n";
  s << "collision = " << (r.collision ? "true" : "false") << "\n";
  s << "vut_max_jerk_mps3 = " << format_short(r.max_jerk) << "\n";
  s << "telemetry_frames = " << r.telemetry_frames << "\n";
  return s.str();
}

std::string log_name(const TrialRecord& r) { return to_string(r.method) + "_" + std::to_string(r.index) + ".tsv"; }

int cmd_run(const Globals& g, std::optional<std::string> method, std::optional<double> psi) {
  RunConfig cfg = resolve(g);
  if (method) cfg.method = parse_method(*method);
  if (psi) cfg.psi = *psi;
  const auto spec = make_scenario(cfg.psi, cfg.method, cfg.defaults(), cfg.seed, 0);
  if (!spec) throw ConfigError("psi = " + format_short(cfg.psi) + " s is not realizable on this site");
  log(g, "running " + to_string(cfg.method) + " trial, psi* = " + format_short(cfg.psi) + " s");
  const auto rec = run_trial(*spec);
  const fs::path out = cfg.out;
  fs::create_directories(out);
  write_trial_log(out / "trial.tsv", rec);
  write_link_log(out / "link.tsv", rec.link_log);
  write_text(out / "summary.txt", trial_summary(rec));
  write_text(out / "config.cfg", format_run_config(cfg));
  std::cout << trial_summary(rec);
  return 0;
}

int cmd_batch(const Globals& g, std::optional<std::size_t> trials, std::optional<std::string> arms,
              std::optional<std::string> scenarios, std::optional<unsigned> parallelism, bool logs) {
  RunConfig cfg = resolve(g);
  if (trials) cfg.trials = *trials;
  if (arms) apply_override(cfg, "run.arms=" + *arms);
  if (parallelism) cfg.parallelism = *parallelism;
  cfg.validate();

  ScenarioSet set;
  if (scenarios) {
    if (!fs::exists(*scenarios)) throw ConfigError("scenario file '" + *scenarios + "' does not exist");
    set = read_scenarios(*scenarios);
  } else {
    const auto p = empirical_model(cfg);
    set = sample_scenarios(cfg, p, cfg.proposal, cfg.trials + cfg.replacement_cap);
  }
  log(g, "batch: " + std::to_string(cfg.trials) + " trials per arm, " + std::to_string(set.psi.size()) +
             " targets available");
  const auto res = run_configured_batch(cfg, set);
  const fs::path out = cfg.out;
  fs::create_directories(out);
  write_report(out / "report.txt", res.report);
  write_trials_csv(out / "trials.csv", res.records);
  write_scenarios(out / "scenarios.tsv", set);
  write_text(out / "config.cfg", format_run_config(cfg));
  if (logs) {
    fs::create_directories(out / "logs");
    for (const auto& r : res.records) write_trial_log(out / "logs" / log_name(r), r);
  }
  std::cout << format_report(res.report);
  return 0;
}

int cmd_fit_kde(const Globals& g, std::optional<std::string> data, bool synthetic, std::optional<double> bandwidth,
                std::optional<std::string> dataset_out) {
  RunConfig cfg = resolve(g);
  if (data && synthetic) throw ConfigError("--data and --synthetic are exclusive");
  PetDataset ds;
  if (data) {
    if (!fs::exists(*data)) throw ConfigError("data file '" + *data + "' does not exist");
    ds = read_dataset(*data);
  } else {
    ds = synth_bimodal_dataset(cfg.bimodal, cfg.dataset_size, derive_seed(cfg.seed, "dataset"));
  }
  const auto model = fit_kde(ds, bandwidth);
  const fs::path out = g.out ? fs::path(*g.out) : fs::path("model.kde");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_model(out, model);
  if (dataset_out) write_dataset(*dataset_out, ds);
  std::cout << "samples = " << model.samples().size() << "\nbandwidth = " << format_exact(model.bandwidth()) << "\n";
  return 0;
}

int cmd_sample(const Globals& g, std::optional<std::string> model_path, std::optional<std::string> proposal,
               bool self, std::size_t n) {
  RunConfig cfg = resolve(g);
  if (self && proposal) throw ConfigError("--self and --proposal are exclusive");
  KdeModel p = [&] {
    if (!model_path) return empirical_model(cfg);
    if (!fs::exists(*model_path)) throw ConfigError("model file '" + *model_path + "' does not exist");
    return read_model(*model_path);
  }();
  const std::string q = self ? "self" : proposal.value_or(cfg.proposal);
  const auto set = sample_scenarios(cfg, p, q, n);
  const fs::path out = g.out ? fs::path(*g.out) : fs::path("scenarios.tsv");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_scenarios(out, set);
  std::cout << "scenarios = " << set.psi.size() << "\nrejected = " << set.rejected << "\n";
  return 0;
}

int cmd_report(const Globals& g, const std::string& from) {
  const fs::path dir = from;
  if (!fs::exists(dir / "report.txt")) throw ConfigError("no report.txt in '" + from + "'");
  const auto report = read_report(dir / "report.txt");
  std::cout << format_report(report);
  const fs::path logs = dir / "logs";
  if (!fs::exists(logs)) return 0;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(logs)) {
    if (e.path().extension() == ".tsv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  const fs::path out = g.out ? fs::path(*g.out) : dir / "plots";
  fs::create_directories(out);
  std::ofstream pet(out / "pet.tsv"), speed(out / "speed.tsv");
  if (!pet || !speed) throw InvalidStateError("cannot write plot data in " + out.string());
  pet << "trial\tt_s\tpet_rt_s\n";
  speed << "trial\tactor\tt_s\tv_mps\n";
  for (const auto& f : files) {
    const std::string name = f.stem().string();
    for (const auto& r : read_trial_log(f)) {
      if (r.actor == "target") pet << name << '\t' << format_short(r.t) << '\t' << format_short(r.pet_rt) << '\n';
      speed << name << '\t' << r.actor << '\t' << format_short(r.t) << '\t' << format_short(r.v) << '\n';
    }
  }
  log(g, "plot data for " + std::to_string(files.size()) + " trials in " + out.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial track-test laboratory: game-driven object target against a surrogate VUT"};
  app.require_subcommand(1);
  app.fallthrough();
  app.footer("Exit status: 0 success, 2 configuration error, 3 runtime fault.\n\nConfiguration keys:\n" +
             describe_config_keys());
  Globals g;
  app.add_option("--config", g.config, "configuration file");
  app.add_option("--seed", g.seed, "master seed (overrides [run] seed)");
  app.add_option("--out", g.out, "output directory (run, batch, report) or file (fit-kde, sample)");
  app.add_option("--set", g.overrides, "override a key: section.key=value (repeatable)")
      ->expected(1)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  app.add_flag("--verbose", g.verbose, "progress on stderr");

  auto* run = app.add_subcommand("run", "run one trial");
  std::optional<std::string> method;
  std::optional<double> psi;
  run->add_option("--method", method, "baseline or troublemaker");
  run->add_option("--psi", psi, "target signed PET, s");

  auto* batch = app.add_subcommand("batch", "run matched trials for each arm and report");
  std::optional<std::size_t> trials;
  std::optional<std::string> arms, scenarios;
  std::optional<unsigned> parallelism;
  bool logs = false;
  batch->add_option("--trials", trials, "valid trials per arm")->check(CLI::PositiveNumber);
  batch->add_option("--arms", arms, "comma-separated arms");
  batch->add_option("--scenarios", scenarios, "scenario file from `sample`");
  batch->add_option("--parallelism", parallelism, "worker threads")->check(CLI::PositiveNumber);
  batch->add_flag("--logs", logs, "write every trial log under logs/");

  auto* fit = app.add_subcommand("fit-kde", "fit the exposure model");
  std::optional<std::string> data, dataset_out;
  bool synthetic = false;
  std::optional<double> bandwidth;
  fit->add_option("--data", data, "signed-PET samples, one per line");
  fit->add_flag("--synthetic", synthetic, "use the synthetic bimodal stand-in (default)");
  fit->add_option("--bandwidth", bandwidth, "fixed bandwidth instead of Silverman's rule");
  fit->add_option("--dataset-out", dataset_out, "also write the samples used");

  auto* sample = app.add_subcommand("sample", "draw a scenario set");
  std::optional<std::string> model, proposal;
  bool self = false;
  std::size_t n = 20;
  sample->add_option("--model", model, "model file from fit-kde (default: fit from the config)");
  sample->add_option("--proposal", proposal, "gaussian:M,S | uniform:LO,HI | mixture:W,M,S/...");
  sample->add_flag("--self", self, "use the fitted model itself as the proposal");
  sample->add_option("--n", n, "number of scenarios")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "print a batch report and write plot data from its logs");
  std::string from;
  report->add_option("--from", from, "batch output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    if (*run) return cmd_run(g, method, psi);
    if (*batch) return cmd_batch(g, trials, arms, scenarios, parallelism, logs);
    if (*fit) return cmd_fit_kde(g, data, synthetic, bandwidth, dataset_out);
    if (*sample) return cmd_sample(g, model, proposal, self, n);
    if (*report) return cmd_report(g, from);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFaultExit;
  }
  return 0;
}
