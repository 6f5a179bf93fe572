#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "troublemaker/errors.hpp"
#include "troublemaker/exposure.hpp"

using namespace troublemaker;
using doctest::Approx;

namespace {

PetDataset data_of(std::vector<double> v) {
  PetDataset d;
  d.samples = std::move(v);
  return d;
}

double integrate(const std::function<double(double)>& f, double a, double b, int n = 20000) {
  // composite Simpson
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("tm_exposure_" + name);
}

}  // namespace

TEST_CASE("silverman bandwidth hand value") {
  // sd = sqrt(2.5), IQR = 4 - 2 = 2, min = 2/1.34
  const double expected = 0.9 * (2.0 / 1.34) * std::pow(5.0, -0.2);
  const double h = silverman_bandwidth(data_of({1, 2, 3, 4, 5}));
  CHECK(h == Approx(expected).epsilon(1e-12));
  CHECK(std::abs(h - 0.9736) < 1e-3);
}

TEST_CASE("quartiles use linear interpolation") {
  std::vector<double> s{1, 2, 3, 4, 5};
  CHECK(quantile_linear(s, 0.25) == 2.0);
  CHECK(quantile_linear(s, 0.75) == 4.0);
  std::vector<double> t{0, 10};
  CHECK(quantile_linear(t, 0.25) == Approx(2.5));
  CHECK(sample_stddev(s) == Approx(std::sqrt(2.5)));
}

TEST_CASE("silverman bandwidth is shift invariant and scale homogeneous") {
  const auto base = synth_bimodal_dataset({}, 200, 11).samples;
  const double h0 = silverman_bandwidth(data_of(base));
  for (double c : {0.5, 3.0, 17.0}) {
    auto scaled = base;
    for (auto& v : scaled) v *= c;
    CHECK(silverman_bandwidth(data_of(scaled)) == Approx(c * h0).epsilon(1e-12));
  }
  auto shifted = base;
  for (auto& v : shifted) v += 42.0;
  CHECK(silverman_bandwidth(data_of(shifted)) == Approx(h0).epsilon(1e-9));

  // repeating every sample four times keeps the spread
  std::vector<double> s{1, 2, 3, 4, 5};
  std::vector<double> rep;
  for (int k = 0; k < 4; ++k) rep.insert(rep.end(), s.begin(), s.end());
  const double h5 = silverman_bandwidth(data_of(s));
  const double h20 = silverman_bandwidth(data_of(rep));
  // the n-dependence is exactly n^(-1/5) once the spread term is factored out
  auto spread = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return std::min(sample_stddev(v), (quantile_linear(v, 0.75) - quantile_linear(v, 0.25)) / 1.34);
  };
  CHECK(h20 / spread(rep) == Approx(std::pow(4.0, -0.2) * h5 / spread(s)).epsilon(1e-12));
  CHECK(h5 / spread(s) == Approx(0.9 * std::pow(5.0, -0.2)).epsilon(1e-12));
}

TEST_CASE("silverman bandwidth errors") {
  CHECK_THROWS_AS(silverman_bandwidth(data_of({2.0, 2.0, 2.0})), DegenerateDataError);
  CHECK_THROWS_AS(silverman_bandwidth(data_of({2.0})), DegenerateDataError);
  CHECK_THROWS_AS(silverman_bandwidth(data_of({})), DegenerateDataError);
  CHECK_THROWS_AS(silverman_bandwidth(data_of({1.0, NAN})), DegenerateDataError);
  // zero IQR with positive sd still yields a bandwidth
  CHECK(silverman_bandwidth(data_of({0, 0, 0, 0, 0, 0, 0, 10})) > 0.0);
}

TEST_CASE("kde single kernel and symmetry") {
  const auto m = fit_kde(data_of({0.0}), 1.0);
  CHECK(m.pdf(0.0) == Approx(0.3989422804014327).epsilon(1e-14));
  CHECK_THROWS_AS(KdeModel({1.0}, 0.0), DegenerateDataError);

  const auto sym = fit_kde(data_of({-1.3, 1.3}), 0.7);
  for (double x : {0.0, 0.2, 1.0, 2.5, 7.0}) CHECK(std::abs(sym.pdf(x) - sym.pdf(-x)) <= 1e-12);
}

TEST_CASE("kde integrates to one by quadrature") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto d = synth_bimodal_dataset({}, 300, seed);
    const auto m = fit_kde(d);
    const auto [mn, mx] = std::minmax_element(d.samples.begin(), d.samples.end());
    const double h = m.bandwidth();
    const double mass = integrate([&](double x) { return m.pdf(x); }, *mn - 5 * h, *mx + 5 * h);
    CHECK(std::abs(mass - 1.0) < 1e-3);
    for (double x = *mn - 6 * h; x < *mx + 6 * h; x += 0.37) CHECK(m.pdf(x) >= 0.0);
  }
}

TEST_CASE("kde density handle is an independent copy") {
  DensityFn f;
  {
    const auto m = fit_kde(data_of({0.0, 1.0}), 0.5);
    f = m.density();
    CHECK(f(0.3) == Approx(m.pdf(0.3)));
  }
  CHECK(f(0.3) > 0.0);
}

TEST_CASE("proposal densities") {
  const auto g = ProposalDistribution::gaussian(0.0, 1.0);
  CHECK(proposal_pdf(g, 0.0) == Approx(0.3989422804014327));
  const auto u = ProposalDistribution::uniform(-2.0, 2.0);
  CHECK(proposal_pdf(u, 0.5) == Approx(0.25));
  CHECK(proposal_pdf(u, 3.0) == 0.0);
  const auto mix = ProposalDistribution::mixture({{0.25, -1.0, 0.5}, {0.75, 2.0, 1.0}});
  const double mass = integrate([&](double x) { return proposal_pdf(mix, x); }, -10, 12);
  CHECK(mass == Approx(1.0).epsilon(1e-9));

  CHECK_THROWS_AS(ProposalDistribution::gaussian(0.0, 0.0), ConfigError);
  CHECK_THROWS_AS(ProposalDistribution::uniform(1.0, 1.0), ConfigError);
  CHECK_THROWS_AS(ProposalDistribution::mixture({{0.5, 0, 1}, {0.4, 1, 1}}), ConfigError);
}

TEST_CASE("proposal sampling is seeded and matches its moments") {
  const auto g = ProposalDistribution::gaussian(1.5, 2.0);
  CHECK(proposal_sample(g, 50, 7) == proposal_sample(g, 50, 7));
  CHECK(proposal_sample(g, 50, 7) != proposal_sample(g, 50, 8));

  const std::size_t n = 100000;
  const auto xs = proposal_sample(g, n, 99);
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  CHECK(std::abs(mean - 1.5) < 4.0 * 2.0 / std::sqrt(double(n)));

  const auto mix = ProposalDistribution::mixture({{0.2, -3.0, 0.5}, {0.8, 2.0, 0.5}});
  const auto ys = proposal_sample(mix, n, 5);
  const double frac_neg =
      double(std::count_if(ys.begin(), ys.end(), [](double y) { return y < 0.0; })) / n;
  CHECK(std::abs(frac_neg - 0.2) < 4.0 * std::sqrt(0.2 * 0.8 / n));

  const auto u = ProposalDistribution::uniform(-1.0, 3.0);
  for (double y : proposal_sample(u, 1000, 3)) CHECK((y >= -1.0 && y < 3.0));
}

TEST_CASE("proposal strings") {
  auto q = parse_proposal("gaussian:0,1.5");
  CHECK(q.family == ProposalDistribution::Family::kGaussian);
  CHECK(q.components[0].sd == 1.5);
  q = parse_proposal("uniform:-3,3");
  CHECK(q.lo == -3.0);
  CHECK(q.hi == 3.0);
  q = parse_proposal("mixture:0.5,-1,1/0.5,1,1");
  REQUIRE(q.components.size() == 2);
  CHECK(q.components[1].mean == 1.0);
  CHECK(format_proposal(parse_proposal(format_proposal(q))) == format_proposal(q));

  try {
    parse_proposal("gaussian:0,abc");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.position() == 11);
  }
  CHECK_THROWS_AS(parse_proposal("cauchy:0,1"), ParseError);
  CHECK_THROWS_AS(parse_proposal("gaussian:0"), ParseError);
  CHECK_THROWS_AS(parse_proposal("gaussian:0,-1"), ParseError);
  CHECK_THROWS_AS(parse_proposal("gaussian"), ParseError);
}

TEST_CASE("self proposal gives unit weights") {
  const auto m = fit_kde(synth_bimodal_dataset({}, 100, 4));
  const auto q = self_proposal(m);
  for (double x : {-5.0, -1.0, 0.0, 2.0, 4.5}) CHECK(m.pdf(x) / proposal_pdf(q, x) == Approx(1.0).epsilon(1e-12));

  auto h = [](double x) { return x * x; };
  const auto est = importance_estimate(h, m, q, 2000, 21);
  // plain Monte Carlo with the same draws
  const auto xs = proposal_sample(q, 2000, 21);
  double mc = 0.0;
  for (double x : xs) mc += h(x);
  mc /= xs.size();
  CHECK(est.estimate == Approx(mc).epsilon(1e-10));
  CHECK(est.ess == Approx(2000.0).epsilon(1e-9));
  CHECK_FALSE(est.warning.has_value());
}

TEST_CASE("importance estimate normalization") {
  const auto m = fit_kde(synth_bimodal_dataset({}, 500, 2));
  const auto q = ProposalDistribution::gaussian(0.0, 3.0);
  const auto est = importance_estimate([](double) { return 1.0; }, m, q, 20000, 3);
  CHECK(std::abs(est.estimate - 1.0) < 3.0 * est.std_error);
}

TEST_CASE("importance estimate agrees with direct sampling") {
  const auto m = fit_kde(synth_bimodal_dataset({}, 1000, 8));
  auto h = [](double x) { return x < 2.3 ? 1.0 : 0.0; };
  const auto est = importance_estimate(h, m, ProposalDistribution::gaussian(0.0, 1.0), 200000, 9);

  Rng rng(10);
  const std::size_t n = 1000000;
  double hits = 0.0;
  for (std::size_t i = 0; i < n; ++i) hits += h(m.sample(rng));
  const double p = hits / n;
  const double se_direct = std::sqrt(p * (1 - p) / n);
  CHECK(std::abs(est.estimate - p) < 3.0 * std::hypot(est.std_error, se_direct));
}

TEST_CASE("importance estimate is unbiased over replications") {
  const auto m = fit_kde(synth_bimodal_dataset({}, 400, 12));
  auto h = [](double x) { return std::abs(x) < 2.3 ? 1.0 : 0.0; };
  // oracle by quadrature
  const double truth = integrate([&](double x) { return m.pdf(x); }, -2.3, 2.3);
  const auto q = ProposalDistribution::gaussian(0.0, 1.5);
  double sum = 0.0, se2 = 0.0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    const auto e = importance_estimate(h, m, q, 500, derive_seed(77, "rep", r));
    sum += e.estimate;
    se2 += e.std_error * e.std_error;
  }
  const double mean = sum / reps;
  const double se_mean = std::sqrt(se2) / reps;
  CHECK(std::abs(mean - truth) < 4.0 * se_mean);
}

TEST_CASE("severe-band proposal reduces variance against self proposal") {
  const auto m = fit_kde(synth_bimodal_dataset({}, 1000, 13));
  auto h = [](double x) { return std::abs(x) < 2.3 ? 1.0 : 0.0; };
  const auto narrow = importance_estimate(h, m, ProposalDistribution::gaussian(0.0, 1.5), 5000, 1);
  const auto self = importance_estimate(h, m, self_proposal(m), 5000, 1);
  CHECK(narrow.std_error < self.std_error);
}

TEST_CASE("degenerate proposal warning") {
  const auto m = fit_kde(synth_bimodal_dataset({}, 200, 14));
  const auto est =
      importance_estimate([](double) { return 1.0; }, m, ProposalDistribution::gaussian(12.0, 0.3), 2000, 4);
  REQUIRE(est.warning.has_value());
  CHECK(est.ess < 20.0);
}

TEST_CASE("bimodal synthesis") {
  const BimodalParams params;
  CHECK(params.pdf(0.0) < params.pdf(-4.0));
  const auto d = synth_bimodal_dataset(params, 20000, 3);
  CHECK(d.source == DatasetSource::kSynthetic);
  CHECK(d.samples == synth_bimodal_dataset(params, 20000, 3).samples);

  // histogram with 0.5 s bins, count strict local maxima of a 3-bin smoothed
  // version
  const double lo = -9.0, w = 0.5;
  std::vector<double> bins(36, 0.0);
  for (double x : d.samples) {
    const int b = int(std::floor((x - lo) / w));
    if (b >= 0 && b < int(bins.size())) bins[b] += 1.0;
  }
  std::vector<double> sm(bins.size(), 0.0);
  for (std::size_t i = 1; i + 1 < bins.size(); ++i) sm[i] = bins[i - 1] + bins[i] + bins[i + 1];
  int modes = 0;
  for (std::size_t i = 1; i + 1 < sm.size(); ++i) {
    if (sm[i] > sm[i - 1] && sm[i] >= sm[i + 1] && sm[i] > 0.02 * d.samples.size()) ++modes;
  }
  CHECK(modes == 2);

  CHECK_THROWS_AS(synth_bimodal_dataset(params, 0, 1), DegenerateDataError);
  BimodalParams bad;
  bad.mean_neg = -0.5;
  bad.mean_pos = 0.5;
  CHECK_THROWS_AS(synth_bimodal_dataset(bad, 10, 1), ConfigError);
  BimodalParams same_sign;
  same_sign.mean_neg = 1.0;
  CHECK_THROWS_AS(synth_bimodal_dataset(same_sign, 10, 1), ConfigError);
}

TEST_CASE("dataset and model files round trip") {
  const auto d = synth_bimodal_dataset({}, 50, 6);
  const auto path = temp_file("data.txt");
  write_dataset(path, d);
  {
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "signed_pet_s");
  }
  const auto back = read_dataset(path);
  CHECK(back.samples == d.samples);
  CHECK(back.source == DatasetSource::kImported);

  const auto m = fit_kde(d);
  const auto mpath = temp_file("model.kde");
  write_model(mpath, m);
  const auto m2 = read_model(mpath);
  CHECK(m2.bandwidth() == m.bandwidth());
  CHECK(m2.samples() == m.samples());

  {
    std::ofstream out(path);
    out << "signed_pet_s\n1.0\nfoo\n";
  }
  try {
    read_dataset(path);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 3);
  }
  {
    std::ofstream out(path);
    out << "pet\n1.0\n";
  }
  CHECK_THROWS_AS(read_dataset(path), ConfigError);
  std::filesystem::remove(path);
  std::filesystem::remove(mpath);
}
