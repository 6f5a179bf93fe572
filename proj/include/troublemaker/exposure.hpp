#pragma once

// Empirical signed-PET density (Gaussian KDE, Silverman bandwidth), proposal
// distributions and the importance-sampling estimator.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "troublemaker/risk.hpp"
#include "troublemaker/rng.hpp"

namespace troublemaker {

enum class DatasetSource { kSynthetic, kImported };

struct PetDataset {
  std::vector<double> samples;
  DatasetSource source = DatasetSource::kImported;

  void validate() const;  // throws DegenerateDataError
};

// Quantile with linear interpolation between order statistics
// (position q * (n - 1) in the sorted sample).
double quantile_linear(const std::vector<double>& sorted, double q);

double sample_stddev(const std::vector<double>& x);

double silverman_bandwidth(const PetDataset& data);

class KdeModel {
 public:
  KdeModel(std::vector<double> samples, double bandwidth);

  double pdf(double x) const;
  double bandwidth() const { return h_; }
  const std::vector<double>& samples() const { return samples_; }
  double sample(Rng& rng) const;
  // Handle sharing an immutable copy of the model.
  DensityFn density() const;

 private:
  std::vector<double> samples_;
  double h_;
};

KdeModel fit_kde(const PetDataset& data, std::optional<double> h = std::nullopt);

struct MixtureComponent {
  double weight = 1.0;
  double mean = 0.0;
  double sd = 1.0;
};

struct ProposalDistribution {
  enum class Family { kGaussian, kMixture, kUniform };
  Family family = Family::kGaussian;
  std::vector<MixtureComponent> components;  // one entry for kGaussian
  double lo = 0.0;                           // kUniform support
  double hi = 1.0;

  static ProposalDistribution gaussian(double mean, double sd);
  static ProposalDistribution uniform(double lo, double hi);
  static ProposalDistribution mixture(std::vector<MixtureComponent> components);

  void validate() const;  // throws ConfigError
};

// The KDE itself as a mixture proposal (identity weights).
ProposalDistribution self_proposal(const KdeModel& model);

double proposal_pdf(const ProposalDistribution& q, double x);
double proposal_sample(const ProposalDistribution& q, Rng& rng);
std::vector<double> proposal_sample(const ProposalDistribution& q, std::size_t n, std::uint64_t seed);

// "gaussian:M,S", "uniform:LO,HI", "mixture:W,M,S/W,M,S/...". "self" is
// resolved by the caller against a fitted model. Throws ParseError.
ProposalDistribution parse_proposal(const std::string& text);
std::string format_proposal(const ProposalDistribution& q);

struct ImportanceEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  double ess = 0.0;
  std::size_t n = 0;
  std::optional<std::string> warning;  // set when ESS < 0.01 n
};

ImportanceEstimate importance_estimate(const std::function<double(double)>& h_fn, const KdeModel& p,
                                       const ProposalDistribution& q, std::size_t n,
                                       std::uint64_t seed);

struct BimodalParams {
  double mean_neg = -4.0;
  double sd_neg = 1.0;
  double mean_pos = 4.0;
  double sd_pos = 1.0;
  double weight_neg = 0.5;

  double pdf(double x) const;
  void validate() const;  // throws ConfigError unless density near 0 is below both peaks
};

PetDataset synth_bimodal_dataset(const BimodalParams& params, std::size_t n, std::uint64_t seed);

void write_dataset(const std::filesystem::path& path, const PetDataset& data);
PetDataset read_dataset(const std::filesystem::path& path);
void write_model(const std::filesystem::path& path, const KdeModel& model);
KdeModel read_model(const std::filesystem::path& path);

}  // namespace troublemaker
