#include "klfuse/fitting.hpp"

#include "klfuse/error.hpp"
#include "klfuse/flat.hpp"
#include "klfuse/kernels.hpp"
#include "klfuse/seed.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <optional>
#include <sstream>

namespace klfuse {

namespace {

std::atomic<bool> g_assert_monotone{false};

constexpr double kMonotoneSlackAbs = 1e-9;
constexpr double kMonotoneSlackRel = 1e-12;

}  // namespace

void set_assert_monotone(bool enabled) { g_assert_monotone.store(enabled); }
bool assert_monotone_enabled() { return g_assert_monotone.load(); }

WeightedDataset WeightedDataset::uniform(Dataset data) {
    WeightedDataset out;
    out.weights = Vector::Ones(data.size());
    out.data = std::move(data);
    return out;
}

WeightedDataset WeightedDataset::with_weights(Dataset data, Vector weights) {
    if (weights.size() != data.size()) fail(ErrorKind::InvalidInput, "weight count does not match row count");
    if (!weights.allFinite() || (weights.array() < 0.0).any()) {
        fail(ErrorKind::InvalidInput, "weights must be finite and nonnegative");
    }
    if (!(weights.maxCoeff() > 0.0)) fail(ErrorKind::InvalidInput, "at least one weight must be positive");
    WeightedDataset out;
    out.data = std::move(data);
    out.weights = std::move(weights);
    return out;
}

void validate(const FitConfig& config) {
    if (config.max_iters < 1) fail(ErrorKind::InvalidInput, "max_iters must be >= 1");
    if (!(config.rel_tol > 0.0)) fail(ErrorKind::InvalidInput, "rel_tol must be > 0");
    if (config.restarts < 1) fail(ErrorKind::InvalidInput, "restarts must be >= 1");
    if (!(config.ridge >= 0.0) || !std::isfinite(config.ridge)) fail(ErrorKind::InvalidInput, "ridge must be >= 0");
}

PpcaParams ppca_from_covariance(const Vector& mean, const Matrix& covariance, int q) {
    const auto p = covariance.rows();
    if (q < 1 || q >= p) fail(ErrorKind::InvalidInput, "PPCA needs latent dimension 1 <= q < p");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(covariance);
    if (eig.info() != Eigen::Success) fail(ErrorKind::NumericalFailure, "eigendecomposition failed");
    const Vector& values = eig.eigenvalues();  // ascending
    const Eigen::Index rest = p - q;
    const double noise = values.head(rest).sum() / static_cast<double>(rest);
    if (!(noise > 0.0)) fail(ErrorKind::DegenerateFit, "PPCA noise variance collapsed to zero");
    PpcaParams out;
    out.mean = mean;
    out.noise_var = noise;
    out.loading.resize(p, q);
    for (int k = 0; k < q; ++k) {
        const Eigen::Index idx = p - 1 - k;
        Vector col = eig.eigenvectors().col(idx) * std::sqrt(std::max(values[idx] - noise, 0.0));
        Eigen::Index arg = 0;
        col.cwiseAbs().maxCoeff(&arg);
        if (col[arg] < 0.0) col = -col;
        out.loading.col(k) = col;
    }
    return out;
}

namespace {

double penalty(const Model& model, double ridge, double total_weight) {
    if (ridge == 0.0) return 0.0;
    double tr = 0.0;
    for (const auto& g : model.gaussians()) tr += g.precision.trace();
    return -0.5 * ridge * total_weight * tr;
}

Matrix ridged_covariance(const kernels::ComponentStats& st, double ridge, double total_weight) {
    Matrix cov = st.scatter / st.mass;
    cov.diagonal().array() += ridge * total_weight / st.mass;
    return cov;
}

Model build_model(Family family, const Vector& weights, const std::vector<Vector>& means,
                  const std::vector<Matrix>& covariances, int q) {
    try {
        switch (family) {
            case Family::Gmm: {
                GmmParams g;
                g.weights = weights;
                g.means = means;
                g.covariances = covariances;
                return Model::gmm(std::move(g));
            }
            case Family::Ppca: return Model::ppca(ppca_from_covariance(means[0], covariances[0], q));
            case Family::MixPpca: {
                MixPpcaParams mp;
                mp.weights = weights;
                for (std::size_t s = 0; s < means.size(); ++s) {
                    mp.components.push_back(ppca_from_covariance(means[s], covariances[s], q));
                }
                return Model::mix_ppca(std::move(mp));
            }
        }
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::DegenerateParameter) fail(ErrorKind::DegenerateFit, e.what());
        throw;
    }
    fail(ErrorKind::InvalidInput, "unknown family");
}

Model m_step(const Model& current, const WeightedDataset& data, const kernels::EStep& e, const FitConfig& config) {
    const auto stats = kernels::parallel::component_stats(data.data.rows(), data.weights, e.responsibilities);
    const double total = data.total_weight();
    const int m = current.components();
    Vector mass(m);
    std::vector<Vector> means;
    std::vector<Matrix> covs;
    for (int s = 0; s < m; ++s) {
        if (!(stats[s].mass > 1e-12 * total)) {
            fail(ErrorKind::DegenerateFit, "mixture component " + std::to_string(s) + " lost all responsibility");
        }
        mass[s] = stats[s].mass;
        means.push_back(stats[s].mean);
        covs.push_back(ridged_covariance(stats[s], config.ridge, total));
    }
    return build_model(current.family(), mass / mass.sum(), means, covs, current.latent_dim());
}

struct Evaluated {
    Model model;
    kernels::EStep e;
    double objective;
};

Evaluated evaluate(Model model, const WeightedDataset& data, const FitConfig& config) {
    auto e = kernels::parallel::e_step(model, data.data.rows(), data.weights);
    const double obj = e.weighted_loglik + penalty(model, config.ridge, data.total_weight());
    if (!std::isfinite(obj)) fail(ErrorKind::NumericalFailure, "EM objective is not finite");
    return Evaluated{std::move(model), std::move(e), obj};
}

FitReport run_em(const WeightedDataset& data, const Model& init, const FitConfig& config) {
    Evaluated cur = evaluate(init, data, config);
    FitReport report{cur.model, cur.objective, 0, false, {cur.objective}};
    const bool check = assert_monotone_enabled();
    for (int it = 1; it <= config.max_iters; ++it) {
        Evaluated next = evaluate(m_step(cur.model, data, cur.e, config), data, config);
        report.trace.push_back(next.objective);
        if (check && next.objective < cur.objective - (kMonotoneSlackAbs + kMonotoneSlackRel * std::abs(cur.objective))) {
            std::ostringstream msg;
            msg.precision(17);
            msg << "EM objective decreased at iteration " << it << ": " << cur.objective << " -> " << next.objective;
            fail(ErrorKind::NumericalFailure, msg.str());
        }
        const bool done = std::abs(next.objective - cur.objective) <= config.rel_tol * std::max(std::abs(cur.objective), 1.0);
        cur = std::move(next);
        report.iterations = it;
        // A single PPCA is solved in closed form by its first M-step.
        if (done || init.family() == Family::Ppca) {
            report.converged = true;
            break;
        }
    }
    report.model = cur.model;
    report.final_objective = cur.objective;
    return report;
}

void check_fit_input(const WeightedDataset& data, int p) {
    if (data.data.size() < 2) fail(ErrorKind::InvalidInput, "fitting needs at least two rows");
    if (data.data.dim() != p) fail(ErrorKind::InvalidInput, "data dimension does not match the model");
    if (data.weights.size() != data.data.size()) fail(ErrorKind::InvalidInput, "weight count does not match row count");
}

void check_spec(const ModelSpec& spec, int p) {
    if (spec.m < 1) fail(ErrorKind::InvalidInput, "model spec needs m >= 1");
    if (spec.family == Family::Ppca && spec.m != 1) fail(ErrorKind::InvalidInput, "a single PPCA has m = 1");
    if (spec.family != Family::Gmm && (spec.q < 1 || spec.q >= p)) {
        fail(ErrorKind::InvalidInput, "PPCA latent dimension must satisfy 1 <= q < p");
    }
}

// Weighted k-means++ seeding of the means; shared covariance from the whole
// (weighted, ridged) data; uniform mixture weights.
Model seeded_start(const WeightedDataset& data, const ModelSpec& spec, const FitConfig& config, std::uint64_t seed) {
    const RowMatrix& X = data.data.rows();
    const Eigen::Index N = X.rows();
    const int m = spec.m;
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    auto pick = [&](const Vector& mass) {
        const double total = mass.sum();
        const double u = unit(rng) * total;
        double acc = 0.0;
        Eigen::Index last = 0;
        for (Eigen::Index j = 0; j < N; ++j) {
            if (mass[j] <= 0.0) continue;
            last = j;
            acc += mass[j];
            if (u < acc) return j;
        }
        return last;
    };

    std::vector<Vector> centers;
    centers.push_back(X.row(pick(data.weights)).transpose());
    Vector dist2 = (X.rowwise() - centers.back().transpose()).rowwise().squaredNorm();
    for (int s = 1; s < m; ++s) {
        Vector mass = data.weights.cwiseProduct(dist2);
        const Eigen::Index j = mass.sum() > 0.0 ? pick(mass) : pick(data.weights);
        centers.push_back(X.row(j).transpose());
        dist2 = dist2.cwiseMin((X.rowwise() - centers.back().transpose()).rowwise().squaredNorm());
    }

    const RowMatrix ones = RowMatrix::Ones(N, 1);
    const auto global = kernels::parallel::component_stats(X, data.weights, ones).front();
    const Matrix cov = ridged_covariance(global, config.ridge, data.total_weight());
    if (spec.family == Family::Ppca) return build_model(Family::Ppca, Vector::Ones(1), {global.mean}, {cov}, spec.q);
    return build_model(spec.family, Vector::Constant(m, 1.0 / m), centers, std::vector<Matrix>(m, cov), spec.q);
}

}  // namespace

FitReport fit_mle_from(const WeightedDataset& data, const Model& init, const FitConfig& config) {
    validate(config);
    check_fit_input(data, init.dim());
    return run_em(data, init, config);
}

FitReport fit_mle(const WeightedDataset& data, const ModelSpec& spec, const FitConfig& config, std::uint64_t seed) {
    validate(config);
    check_fit_input(data, data.data.dim());
    check_spec(spec, data.data.dim());
    const int restarts = spec.family == Family::Ppca ? 1 : config.restarts;

    std::vector<std::optional<FitReport>> results(restarts);
    std::vector<std::exception_ptr> errors(restarts);
#pragma omp parallel for schedule(dynamic) if (restarts > 1)
    for (int r = 0; r < restarts; ++r) {
        try {
            const Model init = seeded_start(data, spec, config, derive(seed, static_cast<std::uint64_t>(r)));
            results[r] = run_em(data, init, config);
        } catch (...) {
            errors[r] = std::current_exception();
        }
    }
    std::optional<FitReport> best;
    for (auto& result : results) {
        if (result && (!best || result->final_objective > best->final_objective)) best = std::move(result);
    }
    if (best) return std::move(*best);
    std::rethrow_exception(errors.front());
}

FitReport fit_global_mle(const std::vector<Dataset>& partitions, const ModelSpec& spec, const FitConfig& config,
                         std::uint64_t seed) {
    return fit_mle(WeightedDataset::uniform(Dataset::concat(partitions)), spec, config, seed);
}

double loglik(const Model& model, const Dataset& data) {
    const Vector logp = kernels::parallel::log_density_rows(model, data.rows());
    double total = 0.0;
    const Eigen::Index blocks = (logp.size() + kernels::kReduceBlock - 1) / kernels::kReduceBlock;
    for (Eigen::Index b = 0; b < blocks; ++b) {
        const Eigen::Index begin = b * kernels::kReduceBlock;
        total += logp.segment(begin, std::min(kernels::kReduceBlock, logp.size() - begin)).sum();
    }
    return total;
}

double bic(const Model& model, const Dataset& data) {
    return -2.0 * loglik(model, data) + param_count(model) * std::log(static_cast<double>(data.size()));
}

double bic(const FitReport& report, const WeightedDataset& data) { return bic(report.model, data.data); }

FitReport select_components(const Dataset& data, Family family, int q, int m_max, const FitConfig& config,
                            std::uint64_t seed) {
    if (m_max < 1) fail(ErrorKind::InvalidInput, "m_max must be >= 1");
    const int top = family == Family::Ppca ? 1 : m_max;
    const WeightedDataset weighted = WeightedDataset::uniform(data);
    std::optional<FitReport> best;
    double best_bic = std::numeric_limits<double>::infinity();
    std::optional<Error> last_error;
    int failures = 0;
    for (int m = 1; m <= top; ++m) {
        try {
            FitReport report = fit_mle(weighted, ModelSpec{family, m, q}, config, derive(seed, static_cast<std::uint64_t>(m)));
            const double score = bic(report, weighted);
            if (score < best_bic) {
                best_bic = score;
                best = std::move(report);
            }
        } catch (const Error& e) {
            ++failures;
            last_error = e;
        }
    }
    if (!best) {
        fail(last_error ? last_error->kind() : ErrorKind::DegenerateFit,
             "component selection failed for all " + std::to_string(failures) + " candidates; last error: " +
                 (last_error ? last_error->what() : std::string("none")));
    }
    return std::move(*best);
}

}  // namespace klfuse
