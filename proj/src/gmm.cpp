#include "psym/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "psym/errors.hpp"

namespace psym::gmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double log_normal(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (kLog2Pi + std::log(var) + d * d / var);
}

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

Moments moments(std::span<const double> v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var /= static_cast<double>(v.size());
  return m;
}

GmmParams ordered(const GmmParams& p) {
  if (p.mean_high >= p.mean_low) return p;
  return {p.weight_high, p.weight_low, p.mean_high, p.mean_low, p.var_high, p.var_low};
}

void check_input(std::span<const double> values) {
  if (values.size() < kMinSamples)
    throw InsufficientDataError("GMM fit needs at least " + std::to_string(kMinSamples) + " values, got " +
                                std::to_string(values.size()));
  for (double x : values)
    if (!std::isfinite(x)) throw DataError("GMM fit input contains a non-finite value");
}

}  // namespace

void GmmParams::validate() const {
  if (!(weight_low > 0.0) || !(weight_high > 0.0) || std::abs(weight_low + weight_high - 1.0) > 1e-9)
    throw ConfigError("GMM weights must be positive and sum to 1");
  if (!(var_low >= kVarFloor) || !(var_high >= kVarFloor)) throw ConfigError("GMM variance below floor");
  if (!(mean_high >= mean_low)) throw ConfigError("GMM components out of order (mean_high < mean_low)");
}

void to_json(nlohmann::json& j, const GmmParams& p) {
  j = nlohmann::json{{"weight_low", p.weight_low}, {"weight_high", p.weight_high}, {"mean_low", p.mean_low},
                     {"mean_high", p.mean_high},   {"var_low", p.var_low},         {"var_high", p.var_high}};
}

void from_json(const nlohmann::json& j, GmmParams& p) {
  p.weight_low = j.at("weight_low").get<double>();
  p.weight_high = j.at("weight_high").get<double>();
  p.mean_low = j.at("mean_low").get<double>();
  p.mean_high = j.at("mean_high").get<double>();
  p.var_low = j.at("var_low").get<double>();
  p.var_high = j.at("var_high").get<double>();
}

double normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

std::pair<double, double> responsibilities(const GmmParams& p, double x) {
  const double a = std::log(p.weight_low) + log_normal(x, p.mean_low, p.var_low);
  const double b = std::log(p.weight_high) + log_normal(x, p.mean_high, p.var_high);
  if (!std::isfinite(a) || !std::isfinite(b)) {
    const bool high = (x - 0.5 * (p.mean_low + p.mean_high)) * (p.mean_high - p.mean_low) > 0.0;
    return high ? std::pair{0.0, 1.0} : std::pair{1.0, 0.0};
  }
  // r_high = 1 / (1 + exp(a - b)), evaluated on the side that cannot overflow.
  double high;
  if (b >= a) {
    high = 1.0 / (1.0 + std::exp(a - b));
  } else {
    const double e = std::exp(b - a);
    high = e / (1.0 + e);
  }
  return {1.0 - high, high};
}

double posterior_abnormal(const GmmParams& params, double x) { return responsibilities(params, x).second; }

double log_density(const GmmParams& p, double x) {
  const double a = std::log(p.weight_low) + log_normal(x, p.mean_low, p.var_low);
  const double b = std::log(p.weight_high) + log_normal(x, p.mean_high, p.var_high);
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double mean_log_likelihood(const GmmParams& params, std::span<const double> values) {
  double total = 0.0;
  for (double x : values) total += log_density(params, x);
  return total / static_cast<double>(values.size());
}

FitResult fit_from(std::span<const double> values, const GmmParams& init, const FitOptions& options) {
  check_input(values);
  const double n = static_cast<double>(values.size());
  // Component 0/1 in the caller's order; relabeled only at the end.
  double w[2] = {init.weight_low, init.weight_high};
  double mu[2] = {init.mean_low, init.mean_high};
  double var[2] = {std::max(init.var_low, kVarFloor), std::max(init.var_high, kVarFloor)};

  FitResult result;
  std::vector<double> r1(values.size());
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < options.max_iters; ++it) {
    // E step (also yields the log-likelihood of the current parameters).
    const GmmParams cur{w[0], w[1], mu[0], mu[1], var[0], var[1]};
    double ll = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      r1[i] = responsibilities(cur, values[i]).second;
      ll += log_density(cur, values[i]);
    }
    ll /= n;
    result.log_likelihood.push_back(ll);
    result.iterations = it + 1;
    if (std::abs(ll - prev_ll) < options.tol) {
      result.converged = true;
      break;
    }
    prev_ll = ll;

    // M step with the variance floor as a box constraint.
    double nk[2] = {0.0, 0.0}, sx[2] = {0.0, 0.0};
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double rk[2] = {1.0 - r1[i], r1[i]};
      for (int k = 0; k < 2; ++k) {
        nk[k] += rk[k];
        sx[k] += rk[k] * values[i];
      }
    }
    for (int k = 0; k < 2; ++k) {
      if (nk[k] <= 0.0) continue;  // empty component keeps its parameters
      mu[k] = sx[k] / nk[k];
    }
    double sv[2] = {0.0, 0.0};
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double rk[2] = {1.0 - r1[i], r1[i]};
      for (int k = 0; k < 2; ++k) sv[k] += rk[k] * (values[i] - mu[k]) * (values[i] - mu[k]);
    }
    for (int k = 0; k < 2; ++k) {
      if (nk[k] > 0.0) var[k] = std::max(sv[k] / nk[k], kVarFloor);
    }
    const double floor_w = 1e-12;
    w[0] = std::clamp(nk[0] / n, floor_w, 1.0 - floor_w);
    w[1] = 1.0 - w[0];
  }
  result.params = ordered(GmmParams{w[0], w[1], mu[0], mu[1], var[0], var[1]});
  return result;
}

FitResult fit(std::span<const double> values, const FitOptions& options) {
  check_input(values);
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t half = sorted.size() / 2;
  const auto lo = moments(std::span<const double>(sorted).first(half));
  const auto hi = moments(std::span<const double>(sorted).subspan(half));
  const double wl = static_cast<double>(half) / static_cast<double>(sorted.size());
  GmmParams init{wl, 1.0 - wl, lo.mean, hi.mean, std::max(lo.var, kVarFloor), std::max(hi.var, kVarFloor)};
  return fit_from(values, init, options);
}

}  // namespace psym::gmm
