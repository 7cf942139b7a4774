#pragma once

#include <vector>

#include "wasgd/models.hpp"

namespace wasgd {

// Worker weights on the probability simplex: every entry in [0, 1],
// sum within 1e-12 of 1.
using WeightVector = std::vector<double>;

// The step indices inside one communication period whose losses are recorded
// for weight estimation: the last m/c steps of each of the c equal
// sub-segments of [0, tau).
struct RecordSchedule {
  std::vector<int> indices;  // sorted, size m, values in [0, tau)
  int tau = 0;

  bool contains(long period_index) const;
};

// h'_i = h_i / sum(h). Order preserving; requires sum(h) > 0.
// Throws DegenerateEnergyError when every energy is zero (callers fall back
// to equal weights).
std::vector<double> normalize_energies(const std::vector<double>& h);

// theta_i = exp(-a_tilde h_i) / sum_k exp(-a_tilde h_k), computed with
// max-exponent subtraction so any magnitude of a_tilde is safe.
// a_tilde = 0 gives exactly 1/p; a_tilde -> +inf broadcasts the lowest-energy
// worker.
WeightVector boltzmann_weights(const std::vector<double>& h_norm, double a_tilde);

// theta_i proportional to 1 / h_i. Requires every h_i > 0.
WeightVector inverse_loss_weights(const std::vector<double>& h);

// Requires c | m, c | tau, m <= tau.
RecordSchedule record_index(int m, int c, int tau);

// L1 distance between two weight vectors; ranges over [0, 2] on the simplex.
double estimation_error(const WeightVector& theta, const WeightVector& theta_true);

// Reference weights from each worker's total loss over the full dataset at its
// current parameters. Test-harness instrumentation only: the live protocol
// never touches the full dataset at communication time.
WeightVector true_weights(const Model& model, const std::vector<ParamVector>& x_all,
                          const std::vector<Sample>& dataset, double a_tilde);

bool is_weight_vector(const WeightVector& theta, double tol = 1e-12);

}  // namespace wasgd
