#pragma once

// Run configuration: flat `key = value` lines under `[section]` headers.
// Every accepted key is listed in config_keys(); anything else is rejected
// with its line number.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "troublemaker/exposure.hpp"
#include "troublemaker/harness.hpp"

namespace troublemaker {

struct ConfigEntry {
  std::string section;
  std::string key;
  std::string value;
  std::size_t line = 0;
};

// Throws ConfigError (with line) on malformed lines or duplicate keys.
std::vector<ConfigEntry> parse_config_text(const std::string& text);

struct RunConfig {
  std::filesystem::path site_file;  // empty: built-in site
  SiteParams site;
  TrialParams trial;
  BaselineParams baseline;
  RiskParams risk;
  GameConfig game;
  LinkConfig link;
  VutPolicyConfig vut;
  LatticeConfig lattice;
  TrackerGains gains;

  Method method = Method::kTroublemaker;
  std::uint64_t seed = 1;
  std::string out = "out";
  double psi = 2.0;  // single-trial target signed PET, s
  std::size_t trials = 30;
  std::vector<Method> arms{Method::kBaseline, Method::kTroublemaker};
  unsigned parallelism = 1;
  std::size_t replacement_cap = 30;

  // exposure: empirical model from `data` (one psi per line) or the
  // synthetic bimodal stand-in
  std::filesystem::path data_file;
  BimodalParams bimodal;
  std::size_t dataset_size = 2000;
  std::string proposal = "gaussian:0,1.5";  // or "self"

  ScenarioDefaults defaults() const;
  void validate() const;  // throws ConfigError
};

struct ConfigKey {
  std::string section;
  std::string key;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;  // throws ConfigError
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<ConfigKey>& config_keys();

// Applies entries in order; unknown section/key or bad values throw
// ConfigError carrying the entry's line.
void apply_entries(RunConfig& cfg, const std::vector<ConfigEntry>& entries,
                   const std::filesystem::path& base_dir = {});

// `section.key=value`
void apply_override(RunConfig& cfg, const std::string& assignment);

// Loads a config file; a `site` key in [run] names a site file whose [site]
// section is applied first. Missing files throw ConfigError.
RunConfig load_run_config(const std::filesystem::path& path);

// Every key with its current value; load_run_config reads it back.
std::string format_run_config(const RunConfig& cfg);

// One line per key: `[section] key (default) help`.
std::string describe_config_keys();

// Pipelines shared by the command-line tool and the bindings ---------------

// KDE of the data file, or of the synthetic stand-in drawn from the seed.
KdeModel empirical_model(const RunConfig& cfg);

// "self" resolves to the model itself.
ProposalDistribution resolve_proposal(const std::string& text, const KdeModel& p);

// n realizable targets for the configured arms with weights p/q.
ScenarioSet sample_scenarios(const RunConfig& cfg, const KdeModel& p, const std::string& proposal, std::size_t n);

// The first cfg.trials targets go to every arm; later entries serve as
// replacements in order.
BatchResult run_configured_batch(const RunConfig& cfg, const ScenarioSet& set);

}  // namespace troublemaker
