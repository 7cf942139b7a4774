#include "wasgd/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "wasgd/errors.hpp"

namespace wasgd {

bool RecordSchedule::contains(long period_index) const {
  return std::binary_search(indices.begin(), indices.end(), static_cast<int>(period_index));
}

std::vector<double> normalize_energies(const std::vector<double>& h) {
  if (h.empty()) throw ConfigError("normalize_energies: empty input");
  double sum = 0.0;
  for (double v : h) {
    if (v < 0.0) throw ConfigError("normalize_energies: negative energy");
    sum += v;
  }
  if (sum <= 0.0) throw DegenerateEnergyError("normalize_energies: all energies are zero");
  std::vector<double> out(h.size());
  for (size_t i = 0; i < h.size(); ++i) out[i] = h[i] / sum;
  return out;
}

WeightVector boltzmann_weights(const std::vector<double>& h_norm, double a_tilde) {
  if (h_norm.empty()) throw ConfigError("boltzmann_weights: empty input");
  std::vector<double> exponents(h_norm.size());
  for (size_t i = 0; i < h_norm.size(); ++i) exponents[i] = -a_tilde * h_norm[i];
  double emax = *std::max_element(exponents.begin(), exponents.end());
  WeightVector theta(h_norm.size());
  double sum = 0.0;
  for (size_t i = 0; i < h_norm.size(); ++i) {
    theta[i] = std::exp(exponents[i] - emax);
    sum += theta[i];
  }
  for (double& t : theta) t /= sum;
  return theta;
}

WeightVector inverse_loss_weights(const std::vector<double>& h) {
  if (h.empty()) throw ConfigError("inverse_loss_weights: empty input");
  WeightVector theta(h.size());
  double sum = 0.0;
  for (size_t i = 0; i < h.size(); ++i) {
    if (h[i] <= 0.0) {
      throw DegenerateEnergyError("inverse_loss_weights: energy " + std::to_string(i) +
                                  " is not positive");
    }
    theta[i] = 1.0 / h[i];
    sum += theta[i];
  }
  for (double& t : theta) t /= sum;
  return theta;
}

RecordSchedule record_index(int m, int c, int tau) {
  if (m < 1 || c < 1 || tau < 1) throw ConfigError("record_index: m, c, tau must be >= 1");
  if (m > tau) throw ConfigError("record_index: m must not exceed tau");
  if (m % c != 0) throw ConfigError("record_index: c must divide m");
  if (tau % c != 0) throw ConfigError("record_index: c must divide tau");
  RecordSchedule schedule;
  schedule.tau = tau;
  schedule.indices.reserve(static_cast<size_t>(m));
  int seg = tau / c;
  int per_seg = m / c;
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < per_seg; ++j) {
      schedule.indices.push_back((i + 1) * seg - j - 1);
    }
  }
  std::sort(schedule.indices.begin(), schedule.indices.end());
  return schedule;
}

double estimation_error(const WeightVector& theta, const WeightVector& theta_true) {
  if (theta.size() != theta_true.size()) {
    throw ConfigError("estimation_error: length mismatch");
  }
  double err = 0.0;
  for (size_t i = 0; i < theta.size(); ++i) err += std::abs(theta[i] - theta_true[i]);
  return err;
}

WeightVector true_weights(const Model& model, const std::vector<ParamVector>& x_all,
                          const std::vector<Sample>& dataset, double a_tilde) {
  std::vector<double> totals(x_all.size(), 0.0);
  for (size_t i = 0; i < x_all.size(); ++i) {
    for (const Sample& s : dataset) totals[i] += model.loss(x_all[i], s);
  }
  try {
    return boltzmann_weights(normalize_energies(totals), a_tilde);
  } catch (const DegenerateEnergyError&) {
    return WeightVector(x_all.size(), 1.0 / static_cast<double>(x_all.size()));
  }
}

bool is_weight_vector(const WeightVector& theta, double tol) {
  if (theta.empty()) return false;
  double sum = 0.0;
  for (double t : theta) {
    if (!(t >= 0.0 && t <= 1.0)) return false;
    sum += t;
  }
  return std::abs(sum - 1.0) <= tol;
}

}  // namespace wasgd
