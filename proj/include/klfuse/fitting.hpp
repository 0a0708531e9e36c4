#pragma once

#include "klfuse/model.hpp"

#include <cstdint>
#include <vector>

namespace klfuse {

struct ModelSpec {
    Family family = Family::Gmm;
    int m = 1;  // mixture components (1 for Ppca)
    int q = 0;  // latent dimension (Ppca, MixPpca)
};

struct WeightedDataset {
    Dataset data;
    Vector weights;

    static WeightedDataset uniform(Dataset data);
    static WeightedDataset with_weights(Dataset data, Vector weights);

    double total_weight() const { return weights.sum(); }
};

struct FitConfig {
    int max_iters = 500;
    double rel_tol = 1e-8;
    int restarts = 5;
    // Covariance regularizer. EM maximizes
    //   sum_j w_j log p(x_j) - ridge/2 * W * sum_s tr(Sigma_s^{-1}),  W = sum_j w_j,
    // whose M-step is Sigma_s = S_s + ridge * (W / N_s) I. For a single
    // Gaussian that is the sample covariance plus ridge * I.
    double ridge = 1e-6;
};

void validate(const FitConfig& config);

struct FitReport {
    Model model;
    double final_objective = 0.0;  // penalized weighted log-likelihood
    int iterations = 0;
    bool converged = false;
    std::vector<double> trace;  // objective after each iteration, starting at the initial model
};

// Test mode: when enabled, every EM iteration checks that the objective did
// not decrease by more than 1e-9 + 1e-12 |objective| and throws
// NumericalFailure otherwise.
void set_assert_monotone(bool enabled);
bool assert_monotone_enabled();

// Best of config.restarts seeded EM runs; restart r uses derive(seed, r).
FitReport fit_mle(const WeightedDataset& data, const ModelSpec& spec, const FitConfig& config,
                  std::uint64_t seed);

// One EM run started at init (no restarts).
FitReport fit_mle_from(const WeightedDataset& data, const Model& init, const FitConfig& config);

// Concatenates partitions in order and fits with uniform weights.
FitReport fit_global_mle(const std::vector<Dataset>& partitions, const ModelSpec& spec,
                         const FitConfig& config, std::uint64_t seed);

double loglik(const Model& model, const Dataset& data);

// -2 * unweighted log-likelihood + param_count * ln(rows).
double bic(const Model& model, const Dataset& data);
double bic(const FitReport& report, const WeightedDataset& data);

// Fits m = 1..m_max (seed derive(seed, m)) and keeps the lowest BIC, ties to
// the smaller m. Fits that fail are skipped; if all fail the last error is
// rethrown with the count.
FitReport select_components(const Dataset& data, Family family, int q, int m_max,
                            const FitConfig& config, std::uint64_t seed);

// Closed-form maximizer of the Gaussian likelihood over PPCA covariances
// W W^T + s I, given a (ridged) sample covariance. Columns of W are ordered
// by decreasing eigenvalue with the largest-magnitude entry positive.
PpcaParams ppca_from_covariance(const Vector& mean, const Matrix& covariance, int q);

}  // namespace klfuse
