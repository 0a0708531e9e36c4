#include "klfuse/estimators.hpp"

#include "klfuse/density.hpp"
#include "klfuse/error.hpp"
#include "klfuse/kernels.hpp"
#include "klfuse/matching.hpp"
#include "klfuse/seed.hpp"

#include <cmath>
#include <exception>
#include <numeric>

namespace klfuse {

bool LocalEnsemble::shared_layout() const {
    for (const auto& local : locals) {
        if (!(layout_of(local) == layout_of(locals.front()))) return false;
    }
    return true;
}

void validate(const LocalEnsemble& ensemble) {
    if (ensemble.locals.empty()) fail(ErrorKind::InvalidInput, "ensemble needs at least one local model");
    if (ensemble.shard_sizes.size() != ensemble.locals.size()) {
        fail(ErrorKind::InvalidInput, "ensemble needs one shard size per local model");
    }
    const auto& first = ensemble.locals.front();
    for (const auto& local : ensemble.locals) {
        if (local.family() != first.family() || local.dim() != first.dim()) {
            fail(ErrorKind::InvalidInput, "local models must share family and dimension");
        }
    }
}

namespace {

void validate_boot(const LocalEnsemble& ensemble, const BootstrapSet& boot, bool need_refits = true) {
    validate(ensemble);
    const auto d = ensemble.locals.size();
    if (boot.per_machine.size() != d || (need_refits && boot.reestimates.size() != d)) {
        fail(ErrorKind::InvalidInput, "bootstrap set does not match the ensemble size");
    }
    for (const auto& part : boot.per_machine) {
        if (part.size() != boot.n()) fail(ErrorKind::InvalidInput, "bootstrap samples must have equal size");
    }
}

Dataset pooled(const BootstrapSet& boot) { return Dataset::concat(boot.per_machine); }

bool matches_spec(const Model& model, const ModelSpec& spec) {
    return model.family() == spec.family && model.components() == spec.m &&
           (spec.family == Family::Gmm || model.latent_dim() == spec.q);
}

Model fit_pooled(const WeightedDataset& data, const LocalEnsemble& ensemble, const ModelSpec& spec,
                 const FitConfig& config, std::uint64_t seed) {
    if (auto start = fusion_start(ensemble, spec)) return fit_mle_from(data, *start, config).model;
    return fit_mle(data, spec, config, seed).model;
}

}  // namespace

BootstrapSet draw_bootstrap_samples(const LocalEnsemble& ensemble, Eigen::Index n, std::uint64_t seed) {
    validate(ensemble);
    if (n < 2) fail(ErrorKind::InvalidInput, "bootstrap size n must be >= 2");
    const int d = ensemble.machines();
    BootstrapSet boot;
    boot.per_machine.resize(d);
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < d; ++k) {
        boot.per_machine[k] = sample(ensemble.locals[k], n, derive(seed, static_cast<std::uint64_t>(k)));
    }
    return boot;
}

void refit_bootstrap(BootstrapSet& boot, const LocalEnsemble& ensemble, const FitConfig& config) {
    validate_boot(ensemble, boot, false);
    FitConfig refit = config;
    refit.restarts = 1;
    const int d = ensemble.machines();
    std::vector<std::optional<Model>> refits(d);
    std::vector<std::exception_ptr> errors(d);
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < d; ++k) {
        try {
            refits[k] = fit_mle_from(WeightedDataset::uniform(boot.per_machine[k]), ensemble.locals[k], refit).model;
        } catch (...) {
            errors[k] = std::current_exception();
        }
    }
    for (int k = 0; k < d; ++k) {
        if (!errors[k]) continue;
        try {
            std::rethrow_exception(errors[k]);
        } catch (const Error& e) {
            fail(e.kind(), "machine " + std::to_string(k) + ": " + e.what());
        }
    }
    boot.reestimates.clear();
    for (auto& model : refits) boot.reestimates.push_back(std::move(*model));
}

BootstrapSet draw_bootstrap(const LocalEnsemble& ensemble, Eigen::Index n, const FitConfig& config,
                            std::uint64_t seed) {
    BootstrapSet boot = draw_bootstrap_samples(ensemble, n, seed);
    refit_bootstrap(boot, ensemble, config);
    return boot;
}

std::optional<Model> fusion_start(const LocalEnsemble& ensemble, const ModelSpec& spec) {
    validate(ensemble);
    std::vector<int> matching;
    for (int k = 0; k < ensemble.machines(); ++k) {
        if (matches_spec(ensemble.locals[k], spec)) matching.push_back(k);
    }
    if (matching.empty()) return std::nullopt;
    if (static_cast<int>(matching.size()) == ensemble.machines() && ensemble.machines() > 1) {
        try {
            return matched_linear_average(ensemble);
        } catch (const Error&) {
            // Averaged parameters can leave the valid region; fall back below.
        }
    }
    return ensemble.locals[matching.front()];
}

Model kl_naive(const LocalEnsemble& ensemble, const BootstrapSet& boot, const ModelSpec& spec,
               const FitConfig& config, std::uint64_t seed) {
    validate_boot(ensemble, boot, false);
    return fit_pooled(WeightedDataset::uniform(pooled(boot)), ensemble, spec, config, seed);
}

std::vector<Vector> importance_log_weights(const LocalEnsemble& ensemble, const BootstrapSet& boot,
                                           const WeightOptions& options) {
    validate_boot(ensemble, boot);
    std::vector<Vector> out;
    for (int k = 0; k < ensemble.machines(); ++k) {
        const RowMatrix& X = boot.per_machine[k].rows();
        Vector lw = kernels::parallel::log_density_rows(ensemble.locals[k], X) -
                    kernels::parallel::log_density_rows(boot.reestimates[k], X);
        for (Eigen::Index j = 0; j < lw.size(); ++j) {
            if (!std::isfinite(lw[j])) {
                fail(ErrorKind::NumericalFailure,
                     "non-finite importance weight at machine " + std::to_string(k) + ", row " + std::to_string(j));
            }
            if (options.max_log_ratio) lw[j] = std::min(lw[j], *options.max_log_ratio);
        }
        out.push_back(std::move(lw));
    }
    return out;
}

Model kl_weighted(const LocalEnsemble& ensemble, const BootstrapSet& boot, const ModelSpec& spec,
                  const FitConfig& config, std::uint64_t seed, const WeightOptions& options) {
    const auto log_weights = importance_log_weights(ensemble, boot, options);
    Vector weights(boot.n() * ensemble.machines());
    Eigen::Index at = 0;
    for (int k = 0; k < ensemble.machines(); ++k) {
        for (Eigen::Index j = 0; j < log_weights[k].size(); ++j) {
            const double w = std::exp(log_weights[k][j]);
            if (!std::isfinite(w)) {
                fail(ErrorKind::NumericalFailure,
                     "importance weight overflows at machine " + std::to_string(k) + ", row " + std::to_string(j));
            }
            weights[at++] = w;
        }
    }
    return fit_pooled(WeightedDataset::with_weights(pooled(boot), std::move(weights)), ensemble, spec, config, seed);
}

FisherMatrix empirical_fisher(const Model& model, const Dataset& samples) {
    FisherMatrix out;
    out.layout = layout_of(model);
    out.matrix = kernels::parallel::score_outer_sum(model, samples.rows()) / static_cast<double>(samples.size());
    if (!out.matrix.allFinite()) fail(ErrorKind::NumericalFailure, "empirical Fisher information is not finite");
    out.matrix = (0.5 * (out.matrix + out.matrix.transpose())).eval();
    return out;
}

std::vector<Matrix> control_coefficients(const std::vector<FisherMatrix>& fishers) {
    if (fishers.empty()) fail(ErrorKind::InvalidInput, "no Fisher matrices");
    const auto D = fishers.front().matrix.rows();
    Matrix total = Matrix::Zero(D, D);
    for (const auto& f : fishers) {
        require_same_layout(f.layout, fishers.front().layout);
        total += f.matrix;
    }
    std::vector<Matrix> out;
    const double mean_diag = total.diagonal().mean();
    if (!(mean_diag > 0.0)) {
        out.assign(fishers.size(), Matrix::Zero(D, D));
        return out;
    }
    total.diagonal().array() += 1e-8 * mean_diag;
    Eigen::LLT<Matrix> llt(total);
    if (llt.info() != Eigen::Success) fail(ErrorKind::NumericalFailure, "summed Fisher information is not positive definite");
    for (const auto& f : fishers) out.push_back(-llt.solve(f.matrix));
    return out;
}

Model apply_control(const Model& theta_kl, const std::vector<Model>& locals, const std::vector<Model>& reestimates,
                    const std::vector<Matrix>& coefficients) {
    if (locals.size() != reestimates.size() || locals.size() != coefficients.size()) {
        fail(ErrorKind::InvalidInput, "control correction needs one coefficient per machine");
    }
    FlatParams result = flatten(theta_kl);
    for (std::size_t k = 0; k < locals.size(); ++k) {
        const FlatParams hat = flatten(locals[k]);
        const FlatParams tilde = flatten(reestimates[k]);
        require_same_layout(hat.layout, result.layout);
        require_same_layout(tilde.layout, result.layout);
        result.values += coefficients[k] * (tilde.values - hat.values);
    }
    return unflatten(result);
}

Model kl_control(const LocalEnsemble& ensemble, const BootstrapSet& boot, const Model& theta_kl,
                 const ControlOptions& options) {
    validate_boot(ensemble, boot);
    const Model& reference = ensemble.locals.front();
    const int m = reference.components();
    for (int k = 0; k < ensemble.machines(); ++k) {
        require_same_layout(layout_of(ensemble.locals[k]), layout_of(reference));
        require_same_layout(layout_of(boot.reestimates[k]), layout_of(reference));
    }
    require_same_layout(layout_of(theta_kl), layout_of(reference));
    if (m > 1 && !options.match_components) {
        fail(ErrorKind::NotApplicable, "control variates on mixtures need component matching");
    }

    std::vector<Model> hats;
    std::vector<Model> tildes;
    for (int k = 0; k < ensemble.machines(); ++k) {
        if (m > 1 && k > 0) {
            // The refit started from the local model, so it shares its labels.
            const auto perm = match_components(ensemble.locals[k], reference).permutation;
            hats.push_back(ensemble.locals[k].permuted(perm));
            tildes.push_back(boot.reestimates[k].permuted(perm));
        } else {
            hats.push_back(ensemble.locals[k]);
            tildes.push_back(boot.reestimates[k]);
        }
    }
    const Model theta = m > 1 ? align_to(theta_kl, reference) : theta_kl;

    std::vector<FisherMatrix> fishers;
    for (int k = 0; k < ensemble.machines(); ++k) fishers.push_back(empirical_fisher(hats[k], boot.per_machine[k]));
    return apply_control(theta, hats, tildes, control_coefficients(fishers));
}

Model linear_average(const LocalEnsemble& ensemble) {
    validate(ensemble);
    FlatParams acc = flatten(ensemble.locals.front());
    for (std::size_t k = 1; k < ensemble.locals.size(); ++k) {
        const FlatParams flat = flatten(ensemble.locals[k]);
        require_same_layout(flat.layout, acc.layout);
        acc.values += flat.values;
    }
    acc.values /= static_cast<double>(ensemble.locals.size());
    return unflatten(acc);
}

Model matched_linear_average(const LocalEnsemble& ensemble) {
    validate(ensemble);
    const Model& reference = ensemble.locals.front();
    LocalEnsemble aligned;
    aligned.shard_sizes = ensemble.shard_sizes;
    for (const auto& local : ensemble.locals) {
        require_same_layout(layout_of(local), layout_of(reference));
        aligned.locals.push_back(align_to(local, reference));
    }
    return linear_average(aligned);
}

double eval_eta_naive(const BootstrapSet& boot, const Model& theta) {
    double total = 0.0;
    for (const auto& part : boot.per_machine) total += kernels::parallel::log_density_rows(theta, part.rows()).sum();
    return total / static_cast<double>(boot.n());
}

double eval_eta_weighted(const LocalEnsemble& ensemble, const BootstrapSet& boot, const Model& theta) {
    const auto log_weights = importance_log_weights(ensemble, boot);
    double total = 0.0;
    for (int k = 0; k < ensemble.machines(); ++k) {
        const Vector logp = kernels::parallel::log_density_rows(theta, boot.per_machine[k].rows());
        total += log_weights[k].array().exp().matrix().dot(logp);
    }
    return total / static_cast<double>(boot.n());
}

Model exact_kl_gaussian(const LocalEnsemble& ensemble) {
    validate(ensemble);
    for (const auto& local : ensemble.locals) {
        if (local.family() != Family::Gmm || local.components() != 1) {
            fail(ErrorKind::NotApplicable, "exact KL averaging is implemented for single Gaussians only");
        }
    }
    const int p = ensemble.locals.front().dim();
    const double total = std::accumulate(ensemble.shard_sizes.begin(), ensemble.shard_sizes.end(), 0.0);
    if (!(total > 0.0)) fail(ErrorKind::InvalidInput, "shard sizes must be positive");
    Vector mean = Vector::Zero(p);
    Matrix second = Matrix::Zero(p, p);
    for (int k = 0; k < ensemble.machines(); ++k) {
        const double w = static_cast<double>(ensemble.shard_sizes[k]) / total;
        const auto& g = ensemble.locals[k].as_gmm();
        mean += w * g.means[0];
        second += w * (g.covariances[0] + g.means[0] * g.means[0].transpose());
    }
    Matrix cov = second - mean * mean.transpose();
    cov = (0.5 * (cov + cov.transpose())).eval();
    return Model::gaussian(std::move(mean), std::move(cov));
}

}  // namespace klfuse
