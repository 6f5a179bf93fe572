#include "troublemaker/exposure.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <numeric>

#include "troublemaker/errors.hpp"
#include "troublemaker/textio.hpp"

namespace troublemaker {

namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double normal_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return kInvSqrt2Pi * std::exp(-0.5 * z * z) / sd;
}

}  // namespace

void PetDataset::validate() const {
  if (samples.empty()) throw DegenerateDataError("dataset is empty");
  for (double v : samples) {
    if (!std::isfinite(v)) throw DegenerateDataError("dataset contains non-finite values");
  }
}

double quantile_linear(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw DegenerateDataError("quantile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double sample_stddev(const std::vector<double>& x) {
  if (x.size() < 2) throw DegenerateDataError("standard deviation needs two samples");
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

double silverman_bandwidth(const PetDataset& data) {
  data.validate();
  if (data.samples.size() < 2) throw DegenerateDataError("bandwidth needs at least two samples");
  std::vector<double> sorted = data.samples;
  std::sort(sorted.begin(), sorted.end());
  const double sd = sample_stddev(sorted);
  const double iqr = quantile_linear(sorted, 0.75) - quantile_linear(sorted, 0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = std::max(sd, iqr / 1.34);
  if (!(spread > 0.0)) throw DegenerateDataError("all samples identical");
  return 0.9 * spread * std::pow(static_cast<double>(sorted.size()), -0.2);
}

KdeModel::KdeModel(std::vector<double> samples, double bandwidth)
    : samples_(std::move(samples)), h_(bandwidth) {
  if (samples_.empty()) throw DegenerateDataError("KDE needs samples");
  if (!(h_ > 0.0) || !std::isfinite(h_)) throw DegenerateDataError("KDE bandwidth must be positive");
}

double KdeModel::pdf(double x) const {
  double sum = 0.0;
  for (double xi : samples_) {
    const double z = (x - xi) / h_;
    sum += std::exp(-0.5 * z * z);
  }
  return kInvSqrt2Pi * sum / (static_cast<double>(samples_.size()) * h_);
}

double KdeModel::sample(Rng& rng) const {
  const double center = samples_[rng.index(samples_.size())];
  return rng.normal(center, h_);
}

DensityFn KdeModel::density() const {
  auto shared = std::make_shared<const KdeModel>(*this);
  return [shared](double x) { return shared->pdf(x); };
}

KdeModel fit_kde(const PetDataset& data, std::optional<double> h) {
  data.validate();
  const double bw = h ? *h : silverman_bandwidth(data);
  return KdeModel(data.samples, bw);
}

ProposalDistribution ProposalDistribution::gaussian(double mean, double sd) {
  ProposalDistribution q;
  q.family = Family::kGaussian;
  q.components = {{1.0, mean, sd}};
  q.validate();
  return q;
}

ProposalDistribution ProposalDistribution::uniform(double lo, double hi) {
  ProposalDistribution q;
  q.family = Family::kUniform;
  q.lo = lo;
  q.hi = hi;
  q.validate();
  return q;
}

ProposalDistribution ProposalDistribution::mixture(std::vector<MixtureComponent> components) {
  ProposalDistribution q;
  q.family = Family::kMixture;
  q.components = std::move(components);
  q.validate();
  return q;
}

void ProposalDistribution::validate() const {
  if (family == Family::kUniform) {
    if (!(std::isfinite(lo) && std::isfinite(hi) && lo < hi)) {
      throw ConfigError("uniform proposal needs finite lo < hi");
    }
    return;
  }
  if (components.empty()) throw ConfigError("proposal has no components");
  if (family == Family::kGaussian && components.size() != 1) {
    throw ConfigError("gaussian proposal has exactly one component");
  }
  double wsum = 0.0;
  for (const auto& c : components) {
    if (!(c.sd > 0.0) || !std::isfinite(c.sd) || !std::isfinite(c.mean)) {
      throw ConfigError("proposal components need finite means and positive sds");
    }
    if (!(c.weight >= 0.0)) throw ConfigError("proposal weights must be non-negative");
    wsum += c.weight;
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw ConfigError("proposal weights must sum to 1");
}

ProposalDistribution self_proposal(const KdeModel& model) {
  ProposalDistribution q;
  q.family = ProposalDistribution::Family::kMixture;
  const double w = 1.0 / static_cast<double>(model.samples().size());
  for (double xi : model.samples()) q.components.push_back({w, xi, model.bandwidth()});
  return q;
}

double proposal_pdf(const ProposalDistribution& q, double x) {
  switch (q.family) {
    case ProposalDistribution::Family::kUniform:
      return x >= q.lo && x <= q.hi ? 1.0 / (q.hi - q.lo) : 0.0;
    case ProposalDistribution::Family::kGaussian:
      return normal_pdf(x, q.components[0].mean, q.components[0].sd);
    case ProposalDistribution::Family::kMixture: {
      double sum = 0.0;
      for (const auto& c : q.components) sum += c.weight * normal_pdf(x, c.mean, c.sd);
      return sum;
    }
  }
  return 0.0;
}

double proposal_sample(const ProposalDistribution& q, Rng& rng) {
  switch (q.family) {
    case ProposalDistribution::Family::kUniform:
      return rng.uniform(q.lo, q.hi);
    case ProposalDistribution::Family::kGaussian:
      return rng.normal(q.components[0].mean, q.components[0].sd);
    case ProposalDistribution::Family::kMixture: {
      const double u = rng.uniform();
      double acc = 0.0;
      std::size_t pick = q.components.size() - 1;
      for (std::size_t i = 0; i < q.components.size(); ++i) {
        acc += q.components[i].weight;
        if (u < acc) {
          pick = i;
          break;
        }
      }
      return rng.normal(q.components[pick].mean, q.components[pick].sd);
    }
  }
  return 0.0;
}

std::vector<double> proposal_sample(const ProposalDistribution& q, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(n);
  for (auto& v : out) v = proposal_sample(q, rng);
  return out;
}

namespace {

std::vector<double> parse_numbers(const std::string& text, std::size_t offset, std::size_t expect) {
  std::vector<double> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    const std::string tok = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    const auto v = parse_double(tok);
    if (!v || !std::isfinite(*v)) throw ParseError("expected a number, got '" + tok + "'", offset + start);
    out.push_back(*v);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.size() != expect) {
    throw ParseError("expected " + std::to_string(expect) + " numbers", offset + text.size());
  }
  return out;
}

}  // namespace

ProposalDistribution parse_proposal(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ParseError("expected FAMILY:PARAMS", text.size());
  const std::string family = text.substr(0, colon);
  const std::string body = text.substr(colon + 1);
  const std::size_t off = colon + 1;
  try {
    if (family == "gaussian") {
      const auto v = parse_numbers(body, off, 2);
      return ProposalDistribution::gaussian(v[0], v[1]);
    }
    if (family == "uniform") {
      const auto v = parse_numbers(body, off, 2);
      return ProposalDistribution::uniform(v[0], v[1]);
    }
    if (family == "mixture") {
      std::vector<MixtureComponent> comps;
      std::size_t start = 0;
      while (true) {
        const auto slash = body.find('/', start);
        const std::string part =
            body.substr(start, slash == std::string::npos ? std::string::npos : slash - start);
        const auto v = parse_numbers(part, off + start, 3);
        comps.push_back({v[0], v[1], v[2]});
        if (slash == std::string::npos) break;
        start = slash + 1;
      }
      return ProposalDistribution::mixture(std::move(comps));
    }
  } catch (const ConfigError& e) {
    throw ParseError(e.what(), off);
  }
  throw ParseError("unknown proposal family '" + family + "'", 0);
}

std::string format_proposal(const ProposalDistribution& q) {
  switch (q.family) {
    case ProposalDistribution::Family::kUniform:
      return "uniform:" + format_exact(q.lo) + "," + format_exact(q.hi);
    case ProposalDistribution::Family::kGaussian:
      return "gaussian:" + format_exact(q.components[0].mean) + "," + format_exact(q.components[0].sd);
    case ProposalDistribution::Family::kMixture: {
      std::string s = "mixture:";
      for (std::size_t i = 0; i < q.components.size(); ++i) {
        const auto& c = q.components[i];
        if (i) s += "/";
        s += format_exact(c.weight) + "," + format_exact(c.mean) + "," + format_exact(c.sd);
      }
      return s;
    }
  }
  return {};
}

ImportanceEstimate importance_estimate(const std::function<double(double)>& h_fn, const KdeModel& p,
                                       const ProposalDistribution& q, std::size_t n,
                                       std::uint64_t seed) {
  if (n == 0) throw DegenerateDataError("importance estimate needs n >= 1");
  q.validate();
  Rng rng(seed);
  double sum = 0.0, sum2 = 0.0, wsum = 0.0, wsum2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = proposal_sample(q, rng);
    const double qx = proposal_pdf(q, x);
    if (!(qx > 0.0)) continue;
    const double w = p.pdf(x) / qx;
    const double y = h_fn(x) * w;
    sum += y;
    sum2 += y * y;
    wsum += w;
    wsum2 += w * w;
  }
  ImportanceEstimate out;
  out.n = n;
  const double nd = static_cast<double>(n);
  out.estimate = sum / nd;
  const double var = n > 1 ? std::max(0.0, (sum2 - nd * out.estimate * out.estimate) / (nd - 1.0)) : 0.0;
  out.std_error = std::sqrt(var / nd);
  out.ess = wsum2 > 0.0 ? wsum * wsum / wsum2 : 0.0;
  if (out.ess < 0.01 * nd) {
    out.warning = "degenerate proposal: effective sample size " + format_short(out.ess) + " of " +
                  std::to_string(n);
  }
  return out;
}

double BimodalParams::pdf(double x) const {
  return weight_neg * normal_pdf(x, mean_neg, sd_neg) + (1.0 - weight_neg) * normal_pdf(x, mean_pos, sd_pos);
}

void BimodalParams::validate() const {
  if (!(mean_neg < 0.0 && mean_pos > 0.0)) throw ConfigError("bimodal modes need one per sign of psi");
  if (!(sd_neg > 0.0 && sd_pos > 0.0)) throw ConfigError("bimodal sds must be positive");
  if (!(weight_neg > 0.0 && weight_neg < 1.0)) throw ConfigError("bimodal weight must be in (0, 1)");
  const double at_zero = pdf(0.0);
  if (!(at_zero < pdf(mean_neg) && at_zero < pdf(mean_pos))) {
    throw ConfigError("bimodal density near zero must stay below both mode peaks");
  }
}

PetDataset synth_bimodal_dataset(const BimodalParams& params, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw DegenerateDataError("requested an empty dataset");
  params.validate();
  Rng rng(seed);
  PetDataset ds;
  ds.source = DatasetSource::kSynthetic;
  ds.samples.resize(n);
  for (auto& v : ds.samples) {
    v = rng.uniform() < params.weight_neg ? rng.normal(params.mean_neg, params.sd_neg)
                                          : rng.normal(params.mean_pos, params.sd_pos);
  }
  return ds;
}

void write_dataset(const std::filesystem::path& path, const PetDataset& data) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "signed_pet_s\n";
  for (double v : data.samples) out << format_exact(v) << '\n';
}

namespace {

std::vector<double> read_values(std::istream& in, const std::string& name, std::size_t first_line) {
  std::vector<double> out;
  std::string line;
  std::size_t lineno = first_line;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto v = parse_double(t);
    if (!v || !std::isfinite(*v)) {
      throw ConfigError(name + ": not a finite number: '" + std::string(t) + "'", lineno);
    }
    out.push_back(*v);
  }
  return out;
}

}  // namespace

PetDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset " + path.string());
  std::string header;
  std::getline(in, header);
  if (trim(header) != "signed_pet_s") throw ConfigError(path.string() + ": expected header signed_pet_s", 1);
  PetDataset ds;
  ds.source = DatasetSource::kImported;
  ds.samples = read_values(in, path.string(), 1);
  ds.validate();
  return ds;
}

void write_model(const std::filesystem::path& path, const KdeModel& model) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "bandwidth_s=" << format_exact(model.bandwidth()) << '\n';
  out << "signed_pet_s\n";
  for (double v : model.samples()) out << format_exact(v) << '\n';
}

KdeModel read_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model " + path.string());
  std::string line;
  std::getline(in, line);
  const std::string prefix = "bandwidth_s=";
  const auto t = trim(line);
  if (t.substr(0, prefix.size()) != prefix) throw ConfigError(path.string() + ": expected bandwidth_s=", 1);
  const auto h = parse_double(t.substr(prefix.size()));
  if (!h) throw ConfigError(path.string() + ": bad bandwidth", 1);
  std::getline(in, line);
  if (trim(line) != "signed_pet_s") throw ConfigError(path.string() + ": expected header signed_pet_s", 2);
  return KdeModel(read_values(in, path.string(), 2), *h);
}

}  // namespace troublemaker
