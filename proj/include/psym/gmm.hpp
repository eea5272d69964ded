#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace psym::gmm {

inline constexpr double kVarFloor = 1e-6;
inline constexpr std::size_t kMinSamples = 4;

/// Two-component 1-D Gaussian mixture. The "high" component has the larger
/// mean; for distance inputs it models abnormal pairs.
struct GmmParams {
  double weight_low = 0.5;
  double weight_high = 0.5;
  double mean_low = 0.0;
  double mean_high = 0.0;
  double var_low = 1.0;
  double var_high = 1.0;

  /// Throws ConfigError if weights/variances/ordering are invalid.
  void validate() const;
  bool operator==(const GmmParams&) const = default;
};

void to_json(nlohmann::json& j, const GmmParams& p);
void from_json(const nlohmann::json& j, GmmParams& p);

struct FitOptions {
  std::size_t max_iters = 200;
  /// Convergence threshold on the change of mean per-sample log-likelihood.
  double tol = 1e-6;
};

struct FitResult {
  GmmParams params;
  std::vector<double> log_likelihood;  // mean per-sample, one entry per EM iteration
  std::size_t iterations = 0;
  bool converged = false;
};

/// EM fit initialized by splitting the sorted data at its median.
FitResult fit(std::span<const double> values, const FitOptions& options = {});

/// EM fit from explicit initial parameters (components may be in any order).
/// The result is relabeled so that mean_high >= mean_low.
FitResult fit_from(std::span<const double> values, const GmmParams& init, const FitOptions& options = {});

inline GmmParams fit_gmm(std::span<const double> values, std::size_t max_iters = 200, double tol = 1e-6) {
  return fit(values, FitOptions{max_iters, tol}).params;
}

/// Posterior probability of the high-mean component at x.
/// Falls back to a hard assignment to the nearer mean if the log-densities
/// are not finite.
double posterior_abnormal(const GmmParams& params, double x);

/// Responsibilities (low, high) at x; they sum to 1.
std::pair<double, double> responsibilities(const GmmParams& params, double x);

double log_density(const GmmParams& params, double x);
double mean_log_likelihood(const GmmParams& params, std::span<const double> values);

/// Normal density N(x; mean, var).
double normal_pdf(double x, double mean, double var);

}  // namespace psym::gmm
