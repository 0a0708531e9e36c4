#include "klfuse/density.hpp"

#include "klfuse/error.hpp"
#include "klfuse/flat.hpp"
#include "klfuse/seed.hpp"

#include <cmath>
#include <random>

namespace klfuse {

namespace {

void check_dim(const Model& model, Eigen::Index n) {
    if (n != model.dim()) {
        fail(ErrorKind::InvalidInput, "observation has dimension " + std::to_string(n) + ", model expects " +
                                          std::to_string(model.dim()));
    }
}

double log_sum_exp(const Vector& terms) {
    const double top = terms.maxCoeff();
    if (!std::isfinite(top)) return top;
    return top + std::log((terms.array() - top).exp().sum());
}

}  // namespace

Vector component_log_terms(const Model& model, const Eigen::Ref<const Vector>& x) {
    check_dim(model, x.size());
    const auto& gs = model.gaussians();
    Vector terms(gs.size());
    for (std::size_t s = 0; s < gs.size(); ++s) terms[s] = model.log_weights()[s] + gs[s].log_density(x);
    return terms;
}

double log_density(const Model& model, const Eigen::Ref<const Vector>& x) {
    const Vector terms = component_log_terms(model, x);
    return terms.size() == 1 ? terms[0] : log_sum_exp(terms);
}

Vector score(const Model& model, const Eigen::Ref<const Vector>& x) {
    const Layout L = layout_of(model);
    const Vector terms = component_log_terms(model, x);
    const Vector resp = (terms.array() - log_sum_exp(terms)).exp();
    Vector out = Vector::Zero(L.dim());

    const auto& weights = model.weights();
    for (int s = 0; s + 1 < L.m; ++s) {
        out[s] = resp[s] / weights[s] - resp[L.m - 1] / weights[L.m - 1];
    }

    for (int s = 0; s < L.m; ++s) {
        const auto& g = model.gaussians()[s];
        const Vector u = g.precision * (x - g.mean);
        // d log N / d Sigma with Sigma's entries treated as free.
        const Matrix grad_cov = 0.5 * (u * u.transpose() - g.precision);
        const double r = resp[s];
        out.segment(L.mean_offset(s), L.p) = r * u;
        if (L.family == Family::Gmm) {
            int k = L.cov_offset(s);
            for (int i = 0; i < L.p; ++i) {
                for (int j = i; j < L.p; ++j) out[k++] = r * (i == j ? grad_cov(i, i) : 2.0 * grad_cov(i, j));
            }
        } else {
            const Matrix& W = model.family() == Family::Ppca ? model.as_ppca().loading
                                                             : model.as_mix_ppca().components[s].loading;
            const Matrix grad_w = 2.0 * r * grad_cov * W;
            out.segment(L.loading_offset(s), L.p * L.q) = Eigen::Map<const Vector>(grad_w.data(), grad_w.size());
            out[L.noise_offset(s)] = r * grad_cov.trace();
        }
    }
    return out;
}

Dataset sample(const Model& model, Eigen::Index count, std::uint64_t seed) {
    if (count < 1) fail(ErrorKind::InvalidInput, "sample count must be at least 1");
    const int p = model.dim();
    const int q = model.latent_dim();
    const int m = model.components();
    RowMatrix rows(count, p);

    std::vector<const PpcaParams*> ppca;
    if (model.family() == Family::Ppca) ppca.push_back(&model.as_ppca());
    if (model.family() == Family::MixPpca) {
        for (const auto& c : model.as_mix_ppca().components) ppca.push_back(&c);
    }
    Vector cumulative(m);
    double acc = 0.0;
    for (int s = 0; s < m; ++s) cumulative[s] = (acc += model.weights()[s]);

    const Eigen::Index blocks = (count + kSampleBlock - 1) / kSampleBlock;
#pragma omp parallel for schedule(static)
    for (Eigen::Index b = 0; b < blocks; ++b) {
        Rng rng(derive(seed, static_cast<std::uint64_t>(b)));
        std::normal_distribution<double> normal(0.0, 1.0);
        std::uniform_real_distribution<double> uniform(0.0, acc);
        Vector z(p);
        Vector t(q);
        const Eigen::Index end = std::min(count, (b + 1) * kSampleBlock);
        for (Eigen::Index i = b * kSampleBlock; i < end; ++i) {
            int s = 0;
            if (m > 1) {
                const double u = uniform(rng);
                while (s + 1 < m && u >= cumulative[s]) ++s;
            }
            if (ppca.empty()) {
                for (int k = 0; k < p; ++k) z[k] = normal(rng);
                const auto& g = model.gaussians()[s];
                rows.row(i) = (g.mean + g.chol_lower.triangularView<Eigen::Lower>() * z).transpose();
            } else {
                const PpcaParams& c = *ppca[s];
                for (int k = 0; k < q; ++k) t[k] = normal(rng);
                for (int k = 0; k < p; ++k) z[k] = normal(rng);
                rows.row(i) = (c.mean + c.loading * t + std::sqrt(c.noise_var) * z).transpose();
            }
        }
    }
    return Dataset(std::move(rows));
}

}  // namespace klfuse
