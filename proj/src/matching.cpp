#include "klfuse/matching.hpp"

#include "klfuse/error.hpp"

#include <cmath>
#include <limits>

namespace klfuse {

double gaussian_kl(const GaussianComponent& a, const GaussianComponent& b) {
    if (a.mean.size() != b.mean.size()) fail(ErrorKind::InvalidInput, "KL between Gaussians of different dimension");
    const auto p = static_cast<double>(a.mean.size());
    const Vector diff = b.mean - a.mean;
    const double trace_term = (b.precision.cwiseProduct(a.covariance)).sum();
    const double mahal = diff.dot(b.precision * diff);
    return 0.5 * (trace_term + mahal - p + b.log_det - a.log_det);
}

double gaussian_kl(const Vector& mean_a, const Matrix& cov_a, const Vector& mean_b, const Matrix& cov_b) {
    return gaussian_kl(GaussianComponent::from_moments(mean_a, cov_a), GaussianComponent::from_moments(mean_b, cov_b));
}

double symmetric_kl(const GaussianComponent& a, const GaussianComponent& b) {
    return gaussian_kl(a, b) + gaussian_kl(b, a);
}

namespace {

// Hungarian method with potentials, O(n^3). Returns row -> column.
std::vector<int> hungarian(const Matrix& cost) {
    const int n = static_cast<int>(cost.rows());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<int> match(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const int i0 = match[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const int j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(n);
    for (int j = 1; j <= n; ++j) row_to_col[match[j] - 1] = j - 1;
    return row_to_col;
}

double assignment_cost(const Matrix& cost, const std::vector<int>& perm) {
    double total = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) total += cost(static_cast<Eigen::Index>(i), perm[i]);
    return total;
}

double optimal_cost(const Matrix& cost) {
    if (cost.rows() == 0) return 0.0;
    return assignment_cost(cost, hungarian(cost));
}

}  // namespace

Assignment solve_assignment(const Matrix& cost) {
    const int n = static_cast<int>(cost.rows());
    if (cost.cols() != n) fail(ErrorKind::InvalidInput, "assignment cost matrix must be square");
    if (!cost.allFinite()) fail(ErrorKind::NumericalFailure, "assignment cost matrix has non-finite entries");
    if (n == 0) return {};
    const double best = optimal_cost(cost);
    const double tol = 1e-10 * std::max(1.0, std::abs(best));

    // Fix rows in order, each to the smallest column that still admits an
    // optimal completion.
    Assignment out;
    out.permutation.assign(n, -1);
    std::vector<char> taken(n, 0);
    double prefix = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (taken[j]) continue;
            const int rest = n - i - 1;
            Matrix sub(rest, rest);
            int c = 0;
            for (int col = 0; col < n; ++col) {
                if (taken[col] || col == j) continue;
                for (int r = 0; r < rest; ++r) sub(r, c) = cost(i + 1 + r, col);
                ++c;
            }
            if (prefix + cost(i, j) + optimal_cost(sub) <= best + tol) {
                out.permutation[i] = j;
                taken[j] = 1;
                prefix += cost(i, j);
                break;
            }
        }
        if (out.permutation[i] < 0) fail(ErrorKind::NumericalFailure, "assignment tie-breaking failed");
    }
    out.total_cost = assignment_cost(cost, out.permutation);
    return out;
}

Assignment match_components(const Model& source, const Model& reference) {
    if (source.family() != reference.family()) fail(ErrorKind::NotApplicable, "cannot match components across families");
    if (source.components() != reference.components()) {
        fail(ErrorKind::NotApplicable, "cannot match mixtures with " + std::to_string(source.components()) + " and " +
                                           std::to_string(reference.components()) + " components");
    }
    if (source.dim() != reference.dim()) fail(ErrorKind::NotApplicable, "cannot match models of different dimension");
    const int m = source.components();
    Matrix cost(m, m);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) cost(i, j) = symmetric_kl(source.gaussians()[i], reference.gaussians()[j]);
    }
    return solve_assignment(cost);
}

Model align_to(const Model& source, const Model& reference) {
    if (source.components() == 1 && reference.components() == 1 && source.family() == reference.family()) return source;
    return source.permuted(match_components(source, reference).permutation);
}

double param_mse(const Model& estimate, const Model& truth) {
    if (estimate.family() != truth.family() || estimate.dim() != truth.dim() ||
        estimate.latent_dim() != truth.latent_dim()) {
        fail(ErrorKind::NotApplicable, "parameter MSE needs models of the same family and shape");
    }
    const Model aligned = align_to(estimate, truth);
    double total = (aligned.weights() - truth.weights()).squaredNorm();
    const int m = truth.components();
    switch (truth.family()) {
        case Family::Gmm: {
            const auto& a = aligned.as_gmm();
            const auto& b = truth.as_gmm();
            for (int s = 0; s < m; ++s) {
                total += (a.means[s] - b.means[s]).squaredNorm();
                total += (a.covariances[s] - b.covariances[s]).squaredNorm();
            }
            break;
        }
        case Family::Ppca:
        case Family::MixPpca: {
            auto component = [](const Model& model, int s) -> const PpcaParams& {
                return model.family() == Family::Ppca ? model.as_ppca() : model.as_mix_ppca().components[s];
            };
            for (int s = 0; s < m; ++s) {
                const PpcaParams& a = component(aligned, s);
                const PpcaParams& b = component(truth, s);
                total += (a.mean - b.mean).squaredNorm();
                total += (a.loading * a.loading.transpose() - b.loading * b.loading.transpose()).squaredNorm();
                total += (a.noise_var - b.noise_var) * (a.noise_var - b.noise_var);
            }
            break;
        }
    }
    return total;
}

}  // namespace klfuse
