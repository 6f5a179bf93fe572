#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "troublemaker/config.hpp"
#include "troublemaker/errors.hpp"
#include "troublemaker/exposure.hpp"
#include "troublemaker/harness.hpp"
#include "troublemaker/risk.hpp"
#include "troublemaker/textio.hpp"

namespace py = pybind11;
using namespace troublemaker;

namespace {

py::dict trial_dict(const TrialRecord& r) {
  py::dict d;
  d["index"] = r.index;
  d["method"] = to_string(r.method);
  d["psi_target"] = r.psi_target;
  d["seed"] = r.seed;
  d["valid"] = r.valid;
  d["invalid_reason"] = r.invalid_reason;
  d["conflict"] = r.conflict;
  d["min_pet"] = r.min_pet;
  d["realized_signed_pet"] = r.realized_signed_pet;
  d["vut_cross_time"] = r.vut_cross_time;
  d["target_cross_time"] = r.target_cross_time;
  d["game_termination"] = r.game_termination;
  d["game_steps"] = r.game_steps;
  d["end_reason"] = r.end_reason;
  d["trigger_time"] = r.trigger_time;
  d["collision"] = r.collision;
  d["max_jerk"] = r.max_jerk;
  d["telemetry_frames"] = r.telemetry_frames;
  d["pet_times"] = r.pet_times;
  d["pet_series"] = r.pet_series;
  d["target_speed_times"] = r.target_speed_times;
  d["target_speeds"] = r.target_speeds;
  py::list rows;
  for (const auto& row : r.rows) {
    py::dict x;
    x["t"] = row.t;
    x["actor"] = row.actor;
    x["s"] = row.x.s;
    x["s_dot"] = row.x.s_dot;
    x["l"] = row.x.l;
    x["l_dot"] = row.x.l_dot;
    x["x"] = row.position.x;
    x["y"] = row.position.y;
    x["v"] = row.v;
    x["accel_cmd"] = row.accel_cmd;
    x["pet_rt"] = row.pet_rt;
    x["sigma"] = row.sigma;
    rows.append(x);
  }
  d["rows"] = rows;
  return d;
}

py::dict arm_dict(const ArmReport& a) {
  py::dict d;
  d["method"] = to_string(a.method);
  d["requested"] = a.requested;
  d["valid"] = a.valid;
  d["invalid"] = a.invalid;
  d["replacements"] = a.replacements;
  d["partial"] = a.partial;
  d["mean_min_pet_error"] = a.mean_min_pet_error;
  d["severe_conflict_rate"] = a.severe_conflict_rate;
  d["hausdorff_mean"] = a.hausdorff_mean;
  d["hausdorff_max"] = a.hausdorff_max;
  d["jerk_mean"] = a.jerk_mean;
  d["jerk_max"] = a.jerk_max;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, mod) {
  mod.doc() = "Game-driven object target against a surrogate VUT";

  auto base = py::register_exception<Error>(mod, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(mod, "ConfigError", base.ptr());
  py::register_exception<ParseError>(mod, "ParseError", base.ptr());

  py::class_<RunConfig>(mod, "RunConfig")
      .def(py::init<>())
      .def_static("load", &load_run_config, py::arg("path"))
      .def("set", &apply_override, py::arg("assignment"), "Apply `section.key=value`.")
      .def(
          "get",
          [](const RunConfig& c, const std::string& section, const std::string& key) {
            for (const auto& k : config_keys())
              if (k.section == section && k.key == key) return k.get(c);
            throw ConfigError("unknown key '" + key + "' in [" + section + "]");
          },
          py::arg("section"), py::arg("key"))
      .def("validate", &RunConfig::validate)
      .def("format", &format_run_config)
      .def("__repr__", [](const RunConfig& c) {
        return "<RunConfig seed=" + std::to_string(c.seed) + " trials=" + std::to_string(c.trials) + ">";
      });

  mod.def("config_keys", [] {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& k : config_keys()) out.emplace_back(k.section + "." + k.key, k.help);
    return out;
  });

  mod.def(
      "signed_pet_from_times",
      [](double t1, double t2) {
        const auto sp = signed_pet_from_times(t1, t2);
        return py::make_tuple(sp.psi, sp.pet, sp.indicator);
      },
      py::arg("t1"), py::arg("t2"), "(psi, pet, indicator) for crossing times of actors 1 and 2.");

  mod.def(
      "hazard",
      [](double psi, double m, double n, const std::string& form) {
        RiskParams p;
        p.m = m;
        p.n = n;
        p.hazard_form = form == "root-form" ? HazardForm::kRootForm : HazardForm::kAsPrinted;
        if (form != "root-form" && form != "as-printed") throw ConfigError("unknown hazard form '" + form + "'");
        return hazard_quadratic(psi, p, unit_density);
      },
      py::arg("psi"), py::arg("m") = 2.3, py::arg("n") = 2.3, py::arg("form") = "as-printed");

  py::class_<KdeModel>(mod, "KdeModel")
      .def_property_readonly("bandwidth", &KdeModel::bandwidth)
      .def_property_readonly("samples", &KdeModel::samples)
      .def("pdf", &KdeModel::pdf, py::arg("x"))
      .def(
          "sample",
          [](const KdeModel& m, std::size_t n, std::uint64_t seed) {
            return proposal_sample(self_proposal(m), n, seed);
          },
          py::arg("n"), py::arg("seed"))
      .def("save", [](const KdeModel& m, const std::filesystem::path& p) { write_model(p, m); })
      .def_static("load", &read_model);

  mod.def(
      "fit_kde",
      [](std::vector<double> samples, std::optional<double> bandwidth) {
        PetDataset d;
        d.samples = std::move(samples);
        return fit_kde(d, bandwidth);
      },
      py::arg("samples"), py::arg("bandwidth") = py::none());

  mod.def(
      "synthetic_dataset",
      [](std::size_t n, std::uint64_t seed) { return synth_bimodal_dataset(BimodalParams{}, n, seed).samples; },
      py::arg("n"), py::arg("seed"));

  mod.def("empirical_model", &empirical_model, py::arg("config"));

  py::class_<ProposalDistribution>(mod, "Proposal")
      .def_static("parse", &parse_proposal, py::arg("text"))
      .def("pdf", [](const ProposalDistribution& q, double x) { return proposal_pdf(q, x); })
      .def(
          "sample",
          [](const ProposalDistribution& q, std::size_t n, std::uint64_t seed) {
            return proposal_sample(q, n, seed);
          },
          py::arg("n"), py::arg("seed"))
      .def("__str__", &format_proposal);

  mod.def(
      "sample_scenarios",
      [](const RunConfig& cfg, const KdeModel& p, const std::string& proposal, std::size_t n) {
        const auto s = sample_scenarios(cfg, p, proposal, n);
        return py::make_tuple(s.psi, s.weight, s.rejected);
      },
      py::arg("config"), py::arg("model"), py::arg("proposal"), py::arg("n"),
      "(psi, weights, rejected) for n realizable targets.");

  mod.def(
      "run_trial",
      [](const RunConfig& cfg, const std::string& method, double psi, std::size_t index) {
        const auto spec = make_scenario(psi, parse_method(method), cfg.defaults(), cfg.seed, index);
        if (!spec) throw ConfigError("psi = " + format_short(psi) + " s is not realizable on this site");
        TrialRecord rec;
        {
          py::gil_scoped_release release;
          rec = run_trial(*spec);
        }
        return trial_dict(rec);
      },
      py::arg("config"), py::arg("method"), py::arg("psi"), py::arg("index") = 0);

  mod.def(
      "run_batch",
      [](const RunConfig& cfg, std::vector<double> psi) {
        ScenarioSet set;
        set.seed = cfg.seed;
        set.proposal = "given";
        set.weight.assign(psi.size(), 1.0);
        set.psi = std::move(psi);
        BatchResult res;
        {
          py::gil_scoped_release release;
          res = run_configured_batch(cfg, set);
        }
        py::dict arms;
        for (const auto& a : res.report.arms) arms[py::str(to_string(a.method))] = arm_dict(a);
        py::list trials;
        for (const auto& r : res.records) trials.append(trial_dict(r));
        return py::make_tuple(arms, trials);
      },
      py::arg("config"), py::arg("psi"),
      "The first `trials` targets go to every arm, the rest serve as replacements.");

  mod.def(
      "hausdorff",
      [](const std::vector<std::pair<double, double>>& a, const std::vector<std::pair<double, double>>& b) {
        auto pts = [](const auto& v) {
          std::vector<Point2> out;
          for (const auto& [x, y] : v) out.push_back({x, y});
          return out;
        };
        return hausdorff_distance(pts(a), pts(b));
      },
      py::arg("a"), py::arg("b"), "Hausdorff distance between two lists of (x, y) points.");
}
