// Copyright 2026 The LHGM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "lhgm/bench.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <boost/math/tools/minima.hpp>

#include "lhgm/codec.h"
#include "lhgm/random.h"

namespace lhgm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Distinct values with multiplicities; fits work on these.
struct Counts {
  std::vector<int> values;
  std::vector<double> weights;
  double n = 0.0;
};

Counts Tally(std::span<const int> samples) {
  std::map<int, uint64_t> m;
  for (int v : samples) ++m[v];
  Counts c;
  for (const auto& [v, k] : m) {
    c.values.push_back(v);
    c.weights.push_back(static_cast<double>(k));
  }
  c.n = static_cast<double>(samples.size());
  return c;
}

Alphabet RangeOf(std::span<const int> samples) {
  const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
  return {*lo, *hi};
}

void CheckInside(const Counts& c, const Alphabet& alphabet) {
  if (!alphabet.contains(c.values.front()) || !alphabet.contains(c.values.back())) {
    throw AlphabetError("samples fall outside the fitting alphabet");
  }
}

// Folded bin edges of v.
double LowerEdge(int v, const Alphabet& a) { return v == a.lo ? -kInf : v - 0.5; }
double UpperEdge(int v, const Alphabet& a) { return v == a.hi ? kInf : v + 0.5; }

double MixtureNll(const Counts& c, const Alphabet& a, Family family,
                  std::span<const double> w, std::span<const double> mu,
                  std::span<const double> s) {
  double bits = 0.0;
  for (size_t i = 0; i < c.values.size(); ++i) {
    bits += c.weights[i] * BitsFromProb(MixtureProb(w, mu, s, c.values[i], a, family));
  }
  return bits / c.n;
}

double Phi(double z) {
  return std::isinf(z) ? 0.0 : std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

double ZPhi(double z) { return std::isinf(z) ? 0.0 : z * Phi(z); }

// First two moments of a Gaussian(mu, s) restricted to [a, b].
void TruncatedMoments(double mu, double s, double a, double b, double& mean,
                      double& var) {
  const double za = (a - mu) / s, zb = (b - mu) / s;
  const double z = IntervalProb(Family::kGaussian, 0.0, 1.0, za, zb);
  if (z > 1e-250) {
    const double m1 = (Phi(za) - Phi(zb)) / z;
    const double m2 = 1.0 + (ZPhi(za) - ZPhi(zb)) / z;
    mean = mu + s * m1;
    var = std::max(0.0, s * s * (m2 - m1 * m1));
  } else {
    mean = std::clamp(mu, a, b);
    var = 0.0;
  }
  mean = std::clamp(mean, a, b);
}

struct Params {
  std::vector<double> w, mu, s;
};

// One EM step on the interval-censored likelihood: responsibilities per bin,
// then weighted truncated-Gaussian moments.
void EmStep(const Counts& c, const Alphabet& a, Params& p) {
  const size_t K = p.w.size(), n = c.values.size();
  std::vector<double> nk(K, 0.0), sx(K, 0.0), sxx(K, 0.0);
  std::vector<double> r(K), em(K), ev(K);
  for (size_t i = 0; i < n; ++i) {
    const int v = c.values[i];
    const double lo = LowerEdge(v, a), hi = UpperEdge(v, a);
    double total = 0.0;
    for (size_t k = 0; k < K; ++k) {
      r[k] = p.w[k] * IntervalProb(Family::kGaussian, p.mu[k], p.s[k], lo, hi);
      total += r[k];
    }
    if (!(total > 0.0)) {
      // Underflow everywhere: give the point to the closest component.
      size_t best = 0;
      for (size_t k = 1; k < K; ++k) {
        if (std::abs(v - p.mu[k]) / p.s[k] < std::abs(v - p.mu[best]) / p.s[best]) {
          best = k;
        }
      }
      std::fill(r.begin(), r.end(), 0.0);
      r[best] = 1.0;
      total = 1.0;
    }
    for (size_t k = 0; k < K; ++k) {
      const double resp = c.weights[i] * r[k] / total;
      if (resp == 0.0) continue;
      TruncatedMoments(p.mu[k], p.s[k], lo, hi, em[k], ev[k]);
      nk[k] += resp;
      sx[k] += resp * em[k];
      sxx[k] += resp * (ev[k] + em[k] * em[k]);
    }
  }
  for (size_t k = 0; k < K; ++k) {
    p.w[k] = nk[k] / c.n;
    if (nk[k] <= 1e-12 * c.n) continue;  // empty component keeps its shape
    p.mu[k] = sx[k] / nk[k];
    p.s[k] = std::max(std::sqrt(std::max(0.0, sxx[k] / nk[k] - p.mu[k] * p.mu[k])),
                      kScaleFloor);
  }
}

FitResult RunEm(const Counts& c, const Alphabet& a, Params p,
                const FitOptions& options) {
  FitResult r;
  r.K = static_cast<int>(p.w.size());
  r.alphabet = a;
  double nll = MixtureNll(c, a, Family::kGaussian, p.w, p.mu, p.s);
  for (r.iterations = 0; r.iterations < options.max_iterations;) {
    Params next = p;
    EmStep(c, a, next);
    ++r.iterations;
    const double next_nll = MixtureNll(c, a, Family::kGaussian, next.w, next.mu, next.s);
    if (next_nll > nll + 1e-12 * std::max(1.0, std::abs(nll))) r.monotone = false;
    const double change = std::abs(nll - next_nll) / std::max(std::abs(nll), 1e-300);
    p = std::move(next);
    nll = next_nll;
    if (change < options.tolerance) {
      r.converged = true;
      break;
    }
  }
  r.weights = p.w;
  r.means = p.mu;
  r.scales = p.s;
  r.nll_bits = nll;
  return r;
}

// k-means++ seeding on the weighted distinct values, a few Lloyd rounds, then
// per-cluster moments.
Params KMeansPlusPlus(const Counts& c, int K, Rng& rng) {
  const size_t n = c.values.size();
  std::vector<double> centers;
  auto draw = [&](const std::vector<double>& mass) {
    const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
    double u = rng.Uniform() * total;
    for (size_t i = 0; i < n; ++i) {
      u -= mass[i];
      if (u < 0.0) return static_cast<double>(c.values[i]);
    }
    return static_cast<double>(c.values.back());
  };
  centers.push_back(draw(c.weights));
  std::vector<double> mass(n);
  while (static_cast<int>(centers.size()) < K) {
    for (size_t i = 0; i < n; ++i) {
      double d = kInf;
      for (double m : centers) d = std::min(d, (c.values[i] - m) * (c.values[i] - m));
      mass[i] = c.weights[i] * d;
    }
    if (std::accumulate(mass.begin(), mass.end(), 0.0) <= 0.0) {
      centers.push_back(centers.back());
    } else {
      centers.push_back(draw(mass));
    }
  }
  std::vector<int> label(n, 0);
  for (int round = 0; round < 10; ++round) {
    for (size_t i = 0; i < n; ++i) {
      label[i] = 0;
      for (int k = 1; k < K; ++k) {
        if (std::abs(c.values[i] - centers[k]) < std::abs(c.values[i] - centers[label[i]])) {
          label[i] = k;
        }
      }
    }
    std::vector<double> sum(K, 0.0), cnt(K, 0.0);
    for (size_t i = 0; i < n; ++i) {
      sum[label[i]] += c.weights[i] * c.values[i];
      cnt[label[i]] += c.weights[i];
    }
    for (int k = 0; k < K; ++k) {
      if (cnt[k] > 0) centers[k] = sum[k] / cnt[k];
    }
  }
  Params p;
  std::vector<double> cnt(K, 0.0), ss(K, 0.0);
  for (size_t i = 0; i < n; ++i) {
    const double d = c.values[i] - centers[label[i]];
    cnt[label[i]] += c.weights[i];
    ss[label[i]] += c.weights[i] * d * d;
  }
  for (int k = 0; k < K; ++k) {
    p.w.push_back(std::max(cnt[k] / c.n, 1e-3));
    p.mu.push_back(centers[k]);
    p.s.push_back(cnt[k] > 0 ? std::max(std::sqrt(ss[k] / cnt[k]), 0.5) : 1.0);
  }
  const double total = std::accumulate(p.w.begin(), p.w.end(), 0.0);
  for (double& w : p.w) w /= total;
  return p;
}

FitResult FitSingle(const Counts& c, const Alphabet& a, Family family) {
  FitResult r;
  r.family = family;
  r.alphabet = a;
  // Start from robust moments: median location, MAD scale.
  double acc = 0.0, median = c.values.front();
  for (size_t i = 0; i < c.values.size(); ++i) {
    acc += c.weights[i];
    if (acc >= c.n / 2) {
      median = c.values[i];
      break;
    }
  }
  double mu = median;
  double log_s = 0.0;
  auto nll = [&](double m, double ls) {
    const double s = std::exp(ls);
    double bits = 0.0;
    for (size_t i = 0; i < c.values.size(); ++i) {
      bits += c.weights[i] * BitsFromProb(DiscretizedProb(family, m, s, c.values[i], a));
    }
    return bits / c.n;
  };
  const double mu_lo = a.lo - 1.0, mu_hi = a.hi + 1.0;
  const double ls_lo = std::log(kScaleFloor),
               ls_hi = std::log(4.0 * (a.hi - a.lo + 1));
  constexpr int kBits = 52;
  double current = nll(mu, log_s);
  constexpr int kMaxRounds = 200;
  for (r.iterations = 0; r.iterations < kMaxRounds;) {
    ++r.iterations;
    log_s = boost::math::tools::brent_find_minima(
                [&](double ls) { return nll(mu, ls); }, ls_lo, ls_hi, kBits)
                .first;
    const auto [m, value] = boost::math::tools::brent_find_minima(
        [&](double x) { return nll(x, log_s); }, mu_lo, mu_hi, kBits);
    mu = m;
    const double change = std::abs(current - value) / std::max(std::abs(current), 1e-300);
    current = value;
    if (change < 1e-13) {
      r.converged = true;
      break;
    }
  }
  r.weights = {1.0};
  r.means = {mu};
  r.scales = {std::max(std::exp(log_s), kScaleFloor)};
  r.nll_bits = current;
  return r;
}

}  // namespace

Histogram MarginalHistogram(std::span<const int> samples) {
  if (samples.empty()) throw std::invalid_argument("histogram of no samples");
  return MarginalHistogram(samples, RangeOf(samples));
}

Histogram MarginalHistogram(std::span<const int> samples, const Alphabet& alphabet) {
  if (samples.empty()) throw std::invalid_argument("histogram of no samples");
  Histogram h;
  h.lo = alphabet.lo;
  h.counts.assign(alphabet.size(), 0);
  for (int v : samples) {
    if (!alphabet.contains(v)) {
      throw AlphabetError("sample " + std::to_string(v) + " outside the histogram range");
    }
    ++h.counts[v - alphabet.lo];
  }
  h.total = samples.size();
  return h;
}

std::string FormatHistogramCsv(const Histogram& h) {
  std::string out = "value,count,frequency\n";
  char buf[96];
  for (size_t i = 0; i < h.counts.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%d,%llu,%.17g\n", h.lo + static_cast<int>(i),
                  static_cast<unsigned long long>(h.counts[i]), h.frequency(i));
    out += buf;
  }
  return out;
}

std::vector<int> PixelSamples(const RgbImage& image) {
  return std::vector<int>(image.pixels.begin(), image.pixels.end());
}

std::vector<int> LatentSamples(const Model& model, const RgbImage& image,
                               LatentKind kind) {
  NoGradGuard no_grad;
  const Tensor x = ImageToTensor(PadReflect(image, kDownsampleZ));
  const Tensor y = model.Analysis(x);
  const Tensor v = kind == LatentKind::kY ? QuantizeInfer(y)
                                          : QuantizeInfer(model.HyperAnalysis(y));
  std::vector<int> out;
  out.reserve(v.size());
  for (double d : v.data()) out.push_back(static_cast<int>(d));
  return out;
}

FitResult FitFamily(std::span<const int> samples, Family family, int K,
                    const FitOptions& options) {
  if (samples.empty()) throw std::invalid_argument("no samples to fit");
  return FitFamily(samples, family, K, RangeOf(samples), options);
}

FitResult FitFamily(std::span<const int> samples, Family family, int K,
                    const Alphabet& alphabet, const FitOptions& options) {
  if (K < 1) throw std::invalid_argument("K must be >= 1");
  if (K > 1 && family != Family::kGaussian) {
    throw std::invalid_argument("mixtures are fitted for the Gaussian family only");
  }
  if (samples.size() < static_cast<size_t>(30 * K)) {
    throw std::invalid_argument("need at least " + std::to_string(30 * K) +
                                " samples for K = " + std::to_string(K));
  }
  const Counts c = Tally(samples);
  CheckInside(c, alphabet);
  if (c.values.size() == 1) {
    FitResult r;
    r.family = family;
    r.K = K;
    r.alphabet = alphabet;
    r.weights.assign(K, 1.0 / K);
    r.means.assign(K, c.values.front());
    r.scales.assign(K, kScaleFloor);
    r.nll_bits = MixtureNll(c, alphabet, family, r.weights, r.means, r.scales);
    r.converged = true;
    return r;
  }
  const FitResult single = FitSingle(c, alphabet, family);
  if (K == 1) return single;

  // Restart 0 is the K = 1 optimum split into K identical components, so the
  // mixture can never end above it.
  Params nested{std::vector<double>(K, 1.0 / K), std::vector<double>(K, single.means[0]),
                std::vector<double>(K, single.scales[0])};
  FitResult best = RunEm(c, alphabet, nested, options);
  bool all_monotone = best.monotone;
  for (int restart = 1; restart < options.restarts; ++restart) {
    Rng rng(options.seed * 0x9e3779b97f4a7c15ull + static_cast<uint64_t>(restart));
    FitResult r = RunEm(c, alphabet, KMeansPlusPlus(c, K, rng), options);
    all_monotone = all_monotone && r.monotone;
    if (r.nll_bits < best.nll_bits) best = std::move(r);
  }
  best.monotone = all_monotone;
  best.family = family;
  return best;
}

double NllBits(const FitResult& fit, std::span<const int> samples) {
  if (samples.empty()) throw std::invalid_argument("no samples");
  const Counts c = Tally(samples);
  CheckInside(c, fit.alphabet);
  return MixtureNll(c, fit.alphabet, fit.family, fit.weights, fit.means, fit.scales);
}

FamilyComparison CompareFamilies(std::span<const int> samples,
                                 const FitOptions& options, int mixture_k) {
  if (samples.size() < 10) throw std::invalid_argument("too few samples to compare");
  FamilyComparison out;
  out.alphabet = RangeOf(samples);
  std::vector<size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(options.seed);
  for (size_t i = order.size() - 1; i > 0; --i) {
    std::swap(order[i], order[rng.Below(i + 1)]);
  }
  const size_t n_train = samples.size() * 4 / 5;
  std::vector<int> train, heldout;
  for (size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? train : heldout).push_back(samples[order[i]]);
  }
  out.train_samples = train.size();
  out.heldout_samples = heldout.size();

  auto add = [&](Family family, int K) {
    ComparisonRow row;
    row.fit = FitFamily(train, family, K, out.alphabet, options);
    row.heldout_nll_bits = NllBits(row.fit, heldout);
    out.rows.push_back(std::move(row));
  };
  for (Family f : kAllFamilies) add(f, 1);
  add(Family::kGaussian, mixture_k);
  std::stable_sort(out.rows.begin(), out.rows.end(),
                   [](const ComparisonRow& a, const ComparisonRow& b) {
                     return a.heldout_nll_bits < b.heldout_nll_bits;
                   });
  return out;
}

std::string FormatComparisonCsv(const FamilyComparison& c) {
  std::string out =
      "rank,family,K,heldout_nll_bits,train_nll_bits,iterations,converged,"
      "weights,means,scales\n";
  auto join = [](const std::vector<double>& v) {
    std::string s;
    char buf[32];
    for (size_t i = 0; i < v.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.10g", i ? ";" : "", v[i]);
      s += buf;
    }
    return s;
  };
  char buf[160];
  for (size_t i = 0; i < c.rows.size(); ++i) {
    const FitResult& f = c.rows[i].fit;
    std::snprintf(buf, sizeof buf, "%zu,%s,%d,%.10f,%.10f,%d,%s,", i + 1,
                  std::string(FamilyName(f.family)).c_str(), f.K,
                  c.rows[i].heldout_nll_bits, f.nll_bits, f.iterations,
                  f.converged ? "true" : "false");
    out += buf;
    out += join(f.weights) + "," + join(f.means) + "," + join(f.scales) + "\n";
  }
  return out;
}

AblationSummary WarmupAblation(const TrainConfig& config,
                               const std::vector<RgbImage>& corpus,
                               const AblationOptions& options,
                               std::ostream* progress) {
  if (options.seeds.empty() || options.checkpoints.empty()) {
    throw std::invalid_argument("ablation needs seeds and checkpoints");
  }
  std::vector<int64_t> steps;
  for (double f : options.checkpoints) {
    if (!(f > 0.0 && f <= 1.0)) {
      throw std::invalid_argument("checkpoint fractions must lie in (0, 1]");
    }
    steps.push_back(std::clamp<int64_t>(
        static_cast<int64_t>(std::llround(f * config.steps)) - 1, 0, config.steps - 1));
  }
  AblationSummary summary;
  summary.primary_step = steps.front();
  const double arms[2] = {0.0, options.lambda_warm};
  for (uint64_t seed : options.seeds) {
    std::vector<MetricsRecord> by_arm[2];
    for (int arm = 0; arm < 2; ++arm) {
      TrainConfig c = config;
      c.seed = seed;
      c.lambda_warm = arms[arm];
      c.log_every = std::max<int64_t>(1, c.steps);
      TrainOptions o;
      o.record_steps = steps;
      by_arm[arm] = TrainLoop(c, corpus, o).records;
      if (progress) {
        *progress << "ablation seed " << seed << " lambda_warm " << arms[arm]
                  << " done\n";
      }
    }
    double primary[2] = {0.0, 0.0};
    for (int64_t step : steps) {
      for (int arm = 0; arm < 2; ++arm) {
        const auto it = std::find_if(by_arm[arm].begin(), by_arm[arm].end(),
                                     [&](const MetricsRecord& r) { return r.step == step; });
        if (it == by_arm[arm].end()) {
          throw std::logic_error("training did not record step " + std::to_string(step));
        }
        summary.rows.push_back({seed, step, arms[arm], it->rate_x, it->rate_y, it->rate_z});
        if (step == summary.primary_step) primary[arm] = it->rate();
      }
    }
    summary.differences.push_back(primary[0] - primary[1]);
  }
  std::vector<double> sorted = summary.differences;
  std::sort(sorted.begin(), sorted.end());
  const size_t m = sorted.size();
  summary.median_difference =
      m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  return summary;
}

std::string FormatAblationCsv(const AblationSummary& s) {
  std::string out = "seed,step,lambda_warm,rate_x,rate_y,rate_z,rate\n";
  char buf[200];
  for (const AblationRow& r : s.rows) {
    std::snprintf(buf, sizeof buf, "%llu,%lld,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                  static_cast<unsigned long long>(r.seed), static_cast<long long>(r.step),
                  r.lambda_warm, r.rate_x, r.rate_y, r.rate_z, r.rate());
    out += buf;
  }
  return out;
}

std::string FormatAblationSummary(const AblationSummary& s,
                                  const AblationOptions& options) {
  std::string out = "seed,step,difference\n";
  char buf[128];
  for (size_t i = 0; i < s.differences.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%llu,%lld,%.10g\n",
                  static_cast<unsigned long long>(options.seeds[i]),
                  static_cast<long long>(s.primary_step), s.differences[i]);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "median,%lld,%.10g\n",
                static_cast<long long>(s.primary_step), s.median_difference);
  out += buf;
  return out;
}

}  // namespace lhgm
