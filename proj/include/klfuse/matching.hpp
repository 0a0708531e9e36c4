#pragma once

#include "klfuse/model.hpp"

#include <vector>

namespace klfuse {

struct Assignment {
    std::vector<int> permutation;  // source component i -> reference component permutation[i]
    double total_cost = 0.0;
};

double gaussian_kl(const Vector& mean_a, const Matrix& cov_a, const Vector& mean_b,
                   const Matrix& cov_b);
double gaussian_kl(const GaussianComponent& a, const GaussianComponent& b);
double symmetric_kl(const GaussianComponent& a, const GaussianComponent& b);

// Exact minimum-cost bijection; among optimal assignments the
// lexicographically smallest permutation wins.
Assignment solve_assignment(const Matrix& cost);

// Components are compared through their (marginal) Gaussians.
Assignment match_components(const Model& source, const Model& reference);

// source with components reordered into reference's order.
Model align_to(const Model& source, const Model& reference);

// Squared error against truth after matching components: mixture weights,
// means and covariance entries for Gmm; mean, entries of W W^T and sigma^2
// for PPCA components. Throws NotApplicable on family or m mismatch.
double param_mse(const Model& estimate, const Model& truth);

}  // namespace klfuse
