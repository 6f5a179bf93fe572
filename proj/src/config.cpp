#include "troublemaker/config.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <type_traits>

#include "troublemaker/errors.hpp"
#include "troublemaker/rng.hpp"
#include "troublemaker/textio.hpp"

namespace troublemaker {

std::vector<ConfigEntry> parse_config_text(const std::string& text) {
  std::vector<ConfigEntry> out;
  std::set<std::pair<std::string, std::string>> seen;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string_view s = raw;
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3) throw ConfigError("malformed section header '" + raw + "'", line);
      section = std::string(trim(s.substr(1, s.size() - 2)));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected 'key = value', got '" + raw + "'", line);
    if (section.empty()) throw ConfigError("key outside any [section]", line);
    ConfigEntry e{section, std::string(trim(s.substr(0, eq))), std::string(trim(s.substr(eq + 1))), line};
    if (e.key.empty()) throw ConfigError("empty key", line);
    if (!seen.insert({e.section, e.key}).second) {
      throw ConfigError("duplicate key '" + e.key + "' in [" + e.section + "]", line);
    }
    out.push_back(std::move(e));
  }
  return out;
}

ScenarioDefaults RunConfig::defaults() const {
  ScenarioDefaults d;
  d.site = build_site(site);
  d.trial = trial;
  d.baseline = baseline;
  d.risk = risk;
  d.game = game;
  d.link = link;
  d.vut = vut;
  d.lattice = lattice;
  d.gains = gains;
  return d;
}

void RunConfig::validate() const {
  site.validate();
  trial.validate();
  game.validate();
  link.validate();
  bimodal.validate();
  if (trials == 0) throw ConfigError("run: trials must be at least 1");
  if (arms.empty()) throw ConfigError("run: no arms selected");
  if (parallelism == 0) throw ConfigError("run: parallelism must be at least 1");
  if (dataset_size < 2) throw ConfigError("exposure: dataset_size must be at least 2");
  if (!data_file.empty() && !std::filesystem::exists(data_file)) {
    throw ConfigError("exposure: data file '" + data_file.string() + "' does not exist");
  }
  if (proposal != "self") parse_proposal(proposal).validate();
}

namespace {

// Value codecs ------------------------------------------------------------

template <class T>
struct Codec;

template <>
struct Codec<double> {
  static double parse(const std::string& v) {
    const auto x = parse_double(v);
    if (!x) throw ConfigError("expected a number, got '" + v + "'");
    return *x;
  }
  static std::string format(double v) { return format_exact(v); }
  static std::string type() { return "number"; }
};

template <>
struct Codec<int> {
  static int parse(const std::string& v) {
    const auto x = parse_int(v);
    if (!x) throw ConfigError("expected an integer, got '" + v + "'");
    return static_cast<int>(*x);
  }
  static std::string format(int v) { return std::to_string(v); }
  static std::string type() { return "integer"; }
};

template <>
struct Codec<unsigned> {
  static unsigned parse(const std::string& v) {
    const auto x = parse_int(v);
    if (!x || *x < 0) throw ConfigError("expected a non-negative integer, got '" + v + "'");
    return static_cast<unsigned>(*x);
  }
  static std::string format(unsigned v) { return std::to_string(v); }
  static std::string type() { return "integer"; }
};

static_assert(std::is_same_v<std::size_t, std::uint64_t>);

template <>
struct Codec<std::uint64_t> {
  static std::uint64_t parse(const std::string& v) {
    std::size_t used = 0;
    unsigned long long x = 0;
    try {
      x = std::stoull(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size() || v.front() == '-') throw ConfigError("expected an unsigned integer, got '" + v + "'");
    return x;
  }
  static std::string format(std::uint64_t v) { return std::to_string(v); }
  static std::string type() { return "integer"; }
};

template <>
struct Codec<bool> {
  static bool parse(const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError("expected true or false, got '" + v + "'");
  }
  static std::string format(bool v) { return v ? "true" : "false"; }
  static std::string type() { return "true|false"; }
};

template <>
struct Codec<std::string> {
  static std::string parse(const std::string& v) { return v; }
  static std::string format(const std::string& v) { return v; }
  static std::string type() { return "text"; }
};

template <>
struct Codec<std::filesystem::path> {
  static std::filesystem::path parse(const std::string& v) { return v; }
  static std::string format(const std::filesystem::path& v) { return v.string(); }
  static std::string type() { return "path"; }
};

template <>
struct Codec<std::vector<double>> {
  static std::vector<double> parse(const std::string& v) {
    std::vector<double> out;
    for (const auto& part : split(v, ',')) out.push_back(Codec<double>::parse(std::string(trim(part))));
    if (out.empty()) throw ConfigError("expected a comma-separated list of numbers");
    return out;
  }
  static std::string format(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_exact(v[i]);
    return s;
  }
  static std::string type() { return "list"; }
};

template <std::size_t N>
struct Codec<std::array<double, N>> {
  static std::array<double, N> parse(const std::string& v) {
    const auto xs = Codec<std::vector<double>>::parse(v);
    if (xs.size() != N) throw ConfigError("expected " + std::to_string(N) + " comma-separated numbers");
    std::array<double, N> out{};
    std::copy(xs.begin(), xs.end(), out.begin());
    return out;
  }
  static std::string format(const std::array<double, N>& v) {
    return Codec<std::vector<double>>::format(std::vector<double>(v.begin(), v.end()));
  }
  static std::string type() { return "list of " + std::to_string(N); }
};

template <>
struct Codec<Method> {
  static Method parse(const std::string& v) { return parse_method(v); }
  static std::string format(Method m) { return to_string(m); }
  static std::string type() { return "baseline|troublemaker"; }
};

template <>
struct Codec<std::vector<Method>> {
  static std::vector<Method> parse(const std::string& v) {
    std::vector<Method> out;
    for (const auto& part : split(v, ',')) {
      const Method m = parse_method(std::string(trim(part)));
      if (std::find(out.begin(), out.end(), m) != out.end()) throw ConfigError("arm listed twice");
      out.push_back(m);
    }
    return out;
  }
  static std::string format(const std::vector<Method>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + to_string(v[i]);
    return s;
  }
  static std::string type() { return "list of methods"; }
};

template <>
struct Codec<VutPolicyKind> {
  static VutPolicyKind parse(const std::string& v) { return parse_vut_policy(v); }
  static std::string format(VutPolicyKind k) { return to_string(k); }
  static std::string type() { return "follower-ocp|constant-speed|conservative-yield"; }
};

template <>
struct Codec<HazardForm> {
  static HazardForm parse(const std::string& v) {
    if (v == "as-printed") return HazardForm::kAsPrinted;
    if (v == "root-form") return HazardForm::kRootForm;
    throw ConfigError("expected as-printed or root-form, got '" + v + "'");
  }
  static std::string format(HazardForm f) { return f == HazardForm::kAsPrinted ? "as-printed" : "root-form"; }
  static std::string type() { return "as-printed|root-form"; }
};

template <class Ref>
void add(std::vector<ConfigKey>& keys, const char* section, const char* key, const char* help, Ref ref) {
  using T = std::remove_reference_t<decltype(ref(std::declval<RunConfig&>()))>;
  keys.push_back({section, key, std::string(help) + " [" + Codec<T>::type() + "]",
                  [ref](RunConfig& c, const std::string& v) { ref(c) = Codec<T>::parse(v); },
                  [ref](const RunConfig& c) { return Codec<T>::format(ref(const_cast<RunConfig&>(c))); }});
}

#define TM_KEY(section, key, expr, help) add(k, section, key, help, [](RunConfig& c) -> auto& { return c.expr; })

std::vector<ConfigKey> make_keys() {
  std::vector<ConfigKey> k;
  TM_KEY("run", "site", site_file, "site file with a [site] section");
  TM_KEY("run", "method", method, "method for single runs");
  TM_KEY("run", "seed", seed, "master seed");
  TM_KEY("run", "out", out, "output location");
  TM_KEY("run", "psi", psi, "target signed PET for single runs, s");
  TM_KEY("run", "trials", trials, "valid trials per arm in a batch");
  TM_KEY("run", "arms", arms, "batch arms");
  TM_KEY("run", "parallelism", parallelism, "batch workers");
  TM_KEY("run", "replacement_cap", replacement_cap, "replacement trials allowed per arm");

  TM_KEY("site", "lane_width", site.lane_width, "lane width, m");
  TM_KEY("site", "vut_start_x", site.vut_start.x, "VUT path start x, m");
  TM_KEY("site", "vut_start_y", site.vut_start.y, "VUT path start y, m");
  TM_KEY("site", "vut_heading_deg", site.vut_heading_deg, "VUT initial heading, deg");
  TM_KEY("site", "vut_approach_m", site.vut_approach_m, "straight before the turn, m");
  TM_KEY("site", "vut_turn_radius_m", site.vut_turn_radius_m, "turn radius, m");
  TM_KEY("site", "vut_turn_deg", site.vut_turn_deg, "turn angle (left positive), deg");
  TM_KEY("site", "vut_exit_m", site.vut_exit_m, "straight after the turn, m");
  TM_KEY("site", "target_start_x", site.target_start.x, "target path start x, m");
  TM_KEY("site", "target_start_y", site.target_start.y, "target path start y, m");
  TM_KEY("site", "target_heading_deg", site.target_heading_deg, "target heading, deg");
  TM_KEY("site", "target_length_m", site.target_length_m, "target path length, m");
  TM_KEY("site", "vut_length", site.vut_shape.length, "VUT length, m");
  TM_KEY("site", "vut_width", site.vut_shape.width, "VUT width, m");
  TM_KEY("site", "target_length", site.target_shape.length, "target length, m");
  TM_KEY("site", "target_width", site.target_shape.width, "target width, m");

  TM_KEY("trial", "tick_ms", trial.tick_ms, "simulation tick, ms");
  TM_KEY("trial", "control_ticks", trial.control_ticks, "ticks per control step");
  TM_KEY("trial", "vut_speed", trial.vut_speed, "VUT initial and reference speed, m/s");
  TM_KEY("trial", "target_speed", trial.target_speed, "target nominal speed, m/s");
  TM_KEY("trial", "activation_ttc_s", trial.activation_ttc_s, "game starts at this VUT time to the conflict point, s");
  TM_KEY("trial", "hazard_curvature", trial.hazard_curvature, "m*n of the per-trial hazard band, s^2");
  TM_KEY("trial", "pet_speed_floor", trial.pet_speed_floor, "speed floor for real-time PET, m/s");
  TM_KEY("trial", "exit_margin_m", trial.exit_margin_m, "distance past the conflict point that ends a trial, m");
  TM_KEY("trial", "max_duration_s", trial.max_duration_s, "trial timeout, s");
  TM_KEY("trial", "hausdorff_window_s", trial.hausdorff_window_s, "speed-curve window, s");
  TM_KEY("trial", "hausdorff_time_scale_s", trial.hausdorff_time_scale_s, "time unit of speed-curve points, s");
  TM_KEY("trial", "hausdorff_speed_scale_mps", trial.hausdorff_speed_scale_mps, "speed unit of speed-curve points, m/s");
  TM_KEY("trial", "use_broker", trial.use_broker, "route through the broker (false: direct)");
  TM_KEY("trial", "infeasible_invalidates", trial.infeasible_invalidates, "an infeasible game step invalidates the trial");
  TM_KEY("trial", "brake_on_planner_fault", trial.brake_on_planner_fault, "brake when no lattice candidate survives (false: invalidate)");

  TM_KEY("baseline", "window_lo_s", baseline.window_lo_s, "trigger window lower bound, s");
  TM_KEY("baseline", "window_hi_s", baseline.window_hi_s, "trigger window upper bound, s");
  TM_KEY("baseline", "speed", baseline.speed, "launch speed, m/s");
  TM_KEY("baseline", "launch_accel", baseline.launch_accel, "launch acceleration, m/s^2");
  TM_KEY("baseline", "design_pet_s", baseline.design_pet_s, "signed PET the fixed placement is set for, s");
  TM_KEY("baseline", "min_standoff_m", baseline.min_standoff_m, "closest waiting distance to the conflict point, m");

  TM_KEY("risk", "m", risk.m, "yield-side hazard bound (troublemaker trials derive it from psi)");
  TM_KEY("risk", "n", risk.n, "rush-side hazard bound (troublemaker trials derive it from psi)");
  TM_KEY("risk", "omega_h", risk.omega_h, "hazard weight");
  TM_KEY("risk", "omega_s", risk.omega_s, "smoothness weight");
  TM_KEY("risk", "omega_c", risk.omega_c, "compliance weight");
  TM_KEY("risk", "Q", risk.Q, "state weights s, s_dot, l, l_dot");
  TM_KEY("risk", "severe_pet_threshold", risk.severe_pet_threshold, "severe conflict below this PET, s");
  TM_KEY("risk", "hazard_form", risk.hazard_form, "hazard polynomial");

  TM_KEY("game", "N", game.N, "horizon steps");
  TM_KEY("game", "dt", game.dt, "step, s");
  TM_KEY("game", "a_min", game.a_min, "acceleration lower bound, m/s^2");
  TM_KEY("game", "a_max", game.a_max, "acceleration upper bound, m/s^2");
  TM_KEY("game", "v_max", game.v_max, "speed bound, m/s");
  TM_KEY("game", "s_safe", game.s_safe, "progress gap, m");
  TM_KEY("game", "l_safe", game.l_safe, "lateral gap, m");
  TM_KEY("game", "lateral_separation", game.lateral_separation, "enforce the lateral gap");
  TM_KEY("game", "R", game.R, "control weights");
  TM_KEY("game", "delta_max", game.delta_max, "deadlock cutoff, s");
  TM_KEY("game", "max_outer_iters", game.max_outer_iters, "solver iteration cap");
  TM_KEY("game", "tol", game.tol, "solver tolerance");
  TM_KEY("game", "cold_starts", game.cold_starts, "solver runs per strategy without a warm start");
  TM_KEY("game", "warm_starts", game.warm_starts, "solver runs per strategy besides the warm start");
  TM_KEY("game", "conflict_half_window", game.conflict_half_window, "separation applies within this progress of the conflict point, m");
  TM_KEY("game", "sign_margin", game.sign_margin, "strategy sign margin on predicted psi, s");
  TM_KEY("game", "tie_tolerance", game.tie_tolerance, "strategy cost tie tolerance");
  TM_KEY("game", "tail_speed_floor", game.tail_speed_floor, "speed floor for arrival extrapolation, m/s");
  TM_KEY("game", "allow_rush", game.allow_rush, "rush strategy available");
  TM_KEY("game", "allow_yield", game.allow_yield, "yield strategy available");

  TM_KEY("link", "base_latency_ms", link.base_latency_ms, "delivery latency, ms");
  TM_KEY("link", "jitter_ms", link.jitter_ms, "uniform latency half-width, ms");
  TM_KEY("link", "drop_probability", link.drop_probability, "per-message drop probability");
  TM_KEY("link", "seed", link.seed, "link seed salt");

  TM_KEY("vut", "policy", vut.kind, "VUT surrogate");
  TM_KEY("vut", "side_hysteresis_s", vut.side_hysteresis_s, "arrival-order margin for switching sides, s");
  TM_KEY("vut", "yield_horizon_s", vut.yield_horizon_s, "conservative-yield look-ahead, s");
  TM_KEY("vut", "yield_distance_m", vut.yield_distance_m, "conservative-yield target distance, m");
  TM_KEY("vut", "stop_margin_m", vut.stop_margin_m, "conservative-yield stop line before the conflict point, m");
  TM_KEY("vut", "speed_gain", vut.speed_gain, "speed tracking gain of the simple policies, 1/s");

  TM_KEY("lattice", "lateral_offsets", lattice.lateral_offsets, "lateral offsets at the horizon end, m");
  TM_KEY("lattice", "speed_offsets", lattice.speed_offsets, "speed offsets at the horizon end, m/s");
  TM_KEY("lattice", "deviation_weights", lattice.deviation_weights, "deviation weights s, s_dot, l, l_dot");
  TM_KEY("lattice", "jerk_weight", lattice.jerk_weight, "jerk weight");
  TM_KEY("lattice", "lateral_accel_limit", lattice.lateral_accel_limit, "lateral acceleration limit, m/s^2");
  TM_KEY("lattice", "checks_per_segment", lattice.checks_per_segment, "constraint samples per segment");

  TM_KEY("tracker", "kp", gains.kp, "speed P gain");
  TM_KEY("tracker", "ki", gains.ki, "speed I gain");
  TM_KEY("tracker", "kd", gains.kd, "speed D gain");
  TM_KEY("tracker", "k_cross", gains.k_cross, "Stanley cross-track gain");
  TM_KEY("tracker", "speed_floor", gains.speed_floor, "Stanley speed floor, m/s");
  TM_KEY("tracker", "steering_limit", gains.steering_limit, "steering limit, rad");
  TM_KEY("tracker", "a_min", gains.a_min, "acceleration command lower bound, m/s^2");
  TM_KEY("tracker", "a_max", gains.a_max, "acceleration command upper bound, m/s^2");
  TM_KEY("tracker", "feedforward", gains.feedforward, "add the planned acceleration");

  TM_KEY("exposure", "data", data_file, "empirical signed-PET samples, one per line (empty: synthetic)");
  TM_KEY("exposure", "mean_neg", bimodal.mean_neg, "synthetic yield-mode centre, s");
  TM_KEY("exposure", "sd_neg", bimodal.sd_neg, "synthetic yield-mode spread, s");
  TM_KEY("exposure", "mean_pos", bimodal.mean_pos, "synthetic rush-mode centre, s");
  TM_KEY("exposure", "sd_pos", bimodal.sd_pos, "synthetic rush-mode spread, s");
  TM_KEY("exposure", "weight_neg", bimodal.weight_neg, "synthetic yield-mode weight");
  TM_KEY("exposure", "dataset_size", dataset_size, "synthetic sample count");
  TM_KEY("exposure", "proposal", proposal, "scenario proposal: gaussian:M,S | uniform:LO,HI | mixture:W,M,S/... | self");
  return k;
}

#undef TM_KEY

const ConfigKey* find_key(const std::string& section, const std::string& key) {
  for (const auto& k : config_keys()) {
    if (k.section == section && k.key == key) return &k;
  }
  return nullptr;
}

std::string read_file(const std::filesystem::path& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw ConfigError(what + " '" + path.string() + "' cannot be read");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = make_keys();
  return keys;
}

void apply_entries(RunConfig& cfg, const std::vector<ConfigEntry>& entries, const std::filesystem::path& base_dir) {
  for (const auto& e : entries) {
    const ConfigKey* k = find_key(e.section, e.key);
    if (!k) throw ConfigError("unknown key '" + e.key + "' in [" + e.section + "]", e.line);
    try {
      k->set(cfg, e.value);
    } catch (const ConfigError& err) {
      throw ConfigError(e.section + "." + e.key + ": " + err.what(), e.line);
    }
    if (e.section == "run" && e.key == "site" && !cfg.site_file.empty() && cfg.site_file.is_relative()) {
      cfg.site_file = base_dir / cfg.site_file;
    }
    if (e.section == "exposure" && e.key == "data" && !cfg.data_file.empty() && cfg.data_file.is_relative()) {
      cfg.data_file = base_dir / cfg.data_file;
    }
  }
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override must look like section.key=value, got '" + assignment + "'");
  }
  const std::string section(trim(std::string_view(assignment).substr(0, dot)));
  const std::string key(trim(std::string_view(assignment).substr(dot + 1, eq - dot - 1)));
  const std::string value(trim(std::string_view(assignment).substr(eq + 1)));
  apply_entries(cfg, {{section, key, value, 0}});
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const auto entries = parse_config_text(read_file(path, "config file"));
  const auto base = path.parent_path();
  RunConfig cfg;
  // the site file goes first so the main file can still adjust [site] keys
  for (const auto& e : entries) {
    if (e.section == "run" && e.key == "site") apply_entries(cfg, {e}, base);
  }
  if (!cfg.site_file.empty()) {
    if (!std::filesystem::exists(cfg.site_file)) {
      throw ConfigError("site file '" + cfg.site_file.string() + "' does not exist");
    }
    const auto site_entries = parse_config_text(read_file(cfg.site_file, "site file"));
    for (const auto& e : site_entries) {
      if (e.section != "site") {
        throw ConfigError(cfg.site_file.string() + ": only [site] keys belong in a site file", e.line);
      }
    }
    try {
      apply_entries(cfg, site_entries);
    } catch (const ConfigError& err) {
      throw ConfigError(cfg.site_file.string() + ": " + err.what(), err.line());
    }
  }
  std::vector<ConfigEntry> rest;
  for (const auto& e : entries) {
    if (!(e.section == "run" && e.key == "site")) rest.push_back(e);
  }
  apply_entries(cfg, rest, base);
  return cfg;
}

std::string format_run_config(const RunConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const auto& k : config_keys()) {
    if (k.section == "run" && k.key == "site") continue;  // the site keys are written out in full
    if (k.section != section) {
      out << (section.empty() ? "" : "\n") << "[" << k.section << "]\n";
      section = k.section;
    }
    out << k.key << " = " << k.get(cfg) << "\n";
  }
  return out.str();
}

std::string describe_config_keys() {
  const RunConfig defaults;
  std::ostringstream out;
  for (const auto& k : config_keys()) {
    const std::string v = k.get(defaults);
    out << "  [" << k.section << "] " << k.key << " (default " << (v.empty() ? "none" : v) << ")  " << k.help << "\n";
  }
  return out.str();
}

KdeModel empirical_model(const RunConfig& cfg) {
  if (!cfg.data_file.empty()) return fit_kde(read_dataset(cfg.data_file));
  return fit_kde(synth_bimodal_dataset(cfg.bimodal, cfg.dataset_size, derive_seed(cfg.seed, "dataset")));
}

ProposalDistribution resolve_proposal(const std::string& text, const KdeModel& p) {
  return text == "self" ? self_proposal(p) : parse_proposal(text);
}

ScenarioSet sample_scenarios(const RunConfig& cfg, const KdeModel& p, const std::string& proposal, std::size_t n) {
  if (n == 0) throw ConfigError("at least one scenario must be requested");
  const auto q = resolve_proposal(proposal, p);
  const auto draws = draw_scenarios(q, n, cfg.seed, cfg.defaults(), cfg.arms);
  ScenarioSet set;
  set.seed = cfg.seed;
  set.proposal = proposal;
  set.rejected = draws.rejected;
  set.psi = draws.psi;
  for (double psi : draws.psi) set.weight.push_back(proposal == "self" ? 1.0 : p.pdf(psi) / proposal_pdf(q, psi));
  return set;
}

BatchResult run_configured_batch(const RunConfig& cfg, const ScenarioSet& set) {
  if (set.psi.size() < cfg.trials) {
    throw ConfigError("scenario set holds " + std::to_string(set.psi.size()) + " targets, " +
                      std::to_string(cfg.trials) + " trials requested");
  }
  const ScenarioDefaults d = cfg.defaults();
  std::vector<ScenarioSpec> specs;
  for (Method m : cfg.arms) {
    for (std::size_t i = 0; i < cfg.trials; ++i) {
      auto spec = make_scenario(set.psi[i], m, d, cfg.seed, i);
      if (!spec) throw ConfigError("scenario " + std::to_string(i) + " is not realizable on this site");
      specs.push_back(std::move(*spec));
    }
  }
  const ReplacementFn replace = [&](Method m, std::size_t k) -> std::optional<ScenarioSpec> {
    const std::size_t i = cfg.trials + k;
    if (i >= set.psi.size()) return std::nullopt;
    return make_scenario(set.psi[i], m, d, cfg.seed, i);
  };
  return run_batch(specs, cfg.parallelism, replace, cfg.replacement_cap);
}

}  // namespace troublemaker
