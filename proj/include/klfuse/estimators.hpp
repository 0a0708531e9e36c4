#pragma once

#include "klfuse/fitting.hpp"
#include "klfuse/flat.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace klfuse {

struct LocalEnsemble {
    std::vector<Model> locals;
    std::vector<Eigen::Index> shard_sizes;

    int machines() const { return static_cast<int>(locals.size()); }
    bool shared_layout() const;
};

void validate(const LocalEnsemble& ensemble);

struct BootstrapSet {
    std::vector<Dataset> per_machine;  // n rows drawn from each local model
    std::vector<Model> reestimates;    // MLE refit on per_machine[k]

    Eigen::Index n() const { return per_machine.empty() ? 0 : per_machine.front().size(); }
};

struct FisherMatrix {
    Matrix matrix;
    Layout layout;
};

// Machine k samples with derive(seed, k) and refits starting at its local
// model (restarts = 1).
BootstrapSet draw_bootstrap(const LocalEnsemble& ensemble, Eigen::Index n, const FitConfig& config,
                            std::uint64_t seed);

// The two halves of draw_bootstrap. kl_naive needs only the samples.
BootstrapSet draw_bootstrap_samples(const LocalEnsemble& ensemble, Eigen::Index n, std::uint64_t seed);
void refit_bootstrap(BootstrapSet& boot, const LocalEnsemble& ensemble, const FitConfig& config);

// Starting point for the pooled fits: the matched linear average when all
// locals share spec's layout, otherwise the first local matching spec,
// otherwise none (seeded restarts are used).
std::optional<Model> fusion_start(const LocalEnsemble& ensemble, const ModelSpec& spec);

Model kl_naive(const LocalEnsemble& ensemble, const BootstrapSet& boot, const ModelSpec& spec,
               const FitConfig& config, std::uint64_t seed);

struct WeightOptions {
    std::optional<double> max_log_ratio;  // clip log p(x|local) - log p(x|reestimate) from above
};

// log p(x | local_k) - log p(x | reestimate_k) for every bootstrap row.
std::vector<Vector> importance_log_weights(const LocalEnsemble& ensemble, const BootstrapSet& boot,
                                           const WeightOptions& options = {});

Model kl_weighted(const LocalEnsemble& ensemble, const BootstrapSet& boot, const ModelSpec& spec,
                  const FitConfig& config, std::uint64_t seed, const WeightOptions& options = {});

FisherMatrix empirical_fisher(const Model& model, const Dataset& samples);

// B_k = -(sum_k I_k + lambda I)^{-1} I_k with lambda = 1e-8 * mean diagonal.
std::vector<Matrix> control_coefficients(const std::vector<FisherMatrix>& fishers);

// theta_kl + sum_k B_k (flat(reestimate_k) - flat(local_k)).
Model apply_control(const Model& theta_kl, const std::vector<Model>& locals,
                    const std::vector<Model>& reestimates, const std::vector<Matrix>& coefficients);

struct ControlOptions {
    bool match_components = true;
};

Model kl_control(const LocalEnsemble& ensemble, const BootstrapSet& boot, const Model& theta_kl,
                 const ControlOptions& options = {});

Model linear_average(const LocalEnsemble& ensemble);
Model matched_linear_average(const LocalEnsemble& ensemble);

// (1/n) sum_k sum_j log p(x_kj | theta)
double eval_eta_naive(const BootstrapSet& boot, const Model& theta);
// (1/n) sum_k sum_j w_kj log p(x_kj | theta), w the local/reestimate density ratio
double eval_eta_weighted(const LocalEnsemble& ensemble, const BootstrapSet& boot, const Model& theta);

// Moment matching of single Gaussians, weighted by shard size. For a full
// exponential family this is the KL-average and equals the global MLE.
Model exact_kl_gaussian(const LocalEnsemble& ensemble);

}  // namespace klfuse
