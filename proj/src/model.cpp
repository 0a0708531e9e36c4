#include "klfuse/model.hpp"

#include "klfuse/error.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace klfuse {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidInput: return "invalid-input";
        case ErrorKind::DegenerateParameter: return "degenerate-parameter";
        case ErrorKind::DegenerateFit: return "degenerate-fit";
        case ErrorKind::NumericalFailure: return "numerical-failure";
        case ErrorKind::NotApplicable: return "not-applicable";
        case ErrorKind::Parse: return "parse";
    }
    return "unknown";
}

const char* to_string(Family family) {
    switch (family) {
        case Family::Gmm: return "gmm";
        case Family::Ppca: return "ppca";
        case Family::MixPpca: return "mix_ppca";
    }
    return "unknown";
}

Family family_from_string(const std::string& name) {
    if (name == "gmm") return Family::Gmm;
    if (name == "ppca") return Family::Ppca;
    if (name == "mix_ppca") return Family::MixPpca;
    fail(ErrorKind::InvalidInput, "unknown model family '" + name + "' (expected gmm, ppca, mix_ppca)");
}

GaussianComponent GaussianComponent::from_moments(Vector mean, Matrix covariance) {
    const auto p = mean.size();
    if (covariance.rows() != p || covariance.cols() != p) {
        fail(ErrorKind::InvalidInput, "covariance shape does not match mean dimension");
    }
    Eigen::LLT<Matrix> llt(covariance);
    if (llt.info() != Eigen::Success) {
        fail(ErrorKind::DegenerateParameter, "covariance is not positive definite");
    }
    GaussianComponent g;
    g.chol_lower = llt.matrixL();
    const Vector diag = g.chol_lower.diagonal();
    if ((diag.array() <= 0.0).any() || !diag.allFinite()) {
        fail(ErrorKind::DegenerateParameter, "covariance is not positive definite");
    }
    g.log_det = 2.0 * diag.array().log().sum();
    g.log_norm = -0.5 * (static_cast<double>(p) * std::log(2.0 * std::numbers::pi) + g.log_det);
    g.precision = llt.solve(Matrix::Identity(p, p));
    g.precision = 0.5 * (g.precision + g.precision.transpose()).eval();
    g.mean = std::move(mean);
    g.covariance = std::move(covariance);
    return g;
}

double GaussianComponent::log_density(const Eigen::Ref<const Vector>& x) const {
    const Vector z = chol_lower.triangularView<Eigen::Lower>().solve(x - mean);
    return log_norm - 0.5 * z.squaredNorm();
}

namespace {

// Enforces the sum-to-one invariant and rewrites the last weight as
// 1 - sum(others), the value flatten/unflatten reproduce bit for bit.
Vector canonical_weights(const Vector& weights) {
    const auto m = weights.size();
    if (m < 1) fail(ErrorKind::InvalidInput, "mixture needs at least one component");
    if (!weights.allFinite() || (weights.array() <= 0.0).any()) {
        fail(ErrorKind::InvalidInput, "mixture weights must be strictly positive");
    }
    if (std::abs(weights.sum() - 1.0) > 1e-12) {
        std::ostringstream msg;
        msg << "mixture weights sum to " << weights.sum() << ", expected 1";
        fail(ErrorKind::InvalidInput, msg.str());
    }
    Vector out = weights;
    double head = 0.0;
    for (Eigen::Index s = 0; s + 1 < m; ++s) head += out[s];
    out[m - 1] = 1.0 - head;
    if (!(out[m - 1] > 0.0)) fail(ErrorKind::DegenerateParameter, "implied last mixture weight is not positive");
    return out;
}

// Copies the upper triangle into the lower one after checking the input is
// symmetric to 1e-12 (relative to its largest entry).
Matrix canonical_covariance(const Matrix& cov, Eigen::Index p) {
    if (cov.rows() != p || cov.cols() != p) fail(ErrorKind::InvalidInput, "covariance has wrong shape");
    if (!cov.allFinite()) fail(ErrorKind::InvalidInput, "covariance has non-finite entries");
    const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        fail(ErrorKind::InvalidInput, "covariance is not symmetric");
    }
    Matrix out = cov;
    out.triangularView<Eigen::StrictlyLower>() = cov.transpose().triangularView<Eigen::StrictlyLower>();
    return out;
}

void check_ppca(const PpcaParams& c, Eigen::Index p, Eigen::Index q) {
    if (c.mean.size() != p || c.loading.rows() != p || c.loading.cols() != q) {
        fail(ErrorKind::InvalidInput, "PPCA component shapes are inconsistent");
    }
    if (!c.mean.allFinite() || !c.loading.allFinite() || !std::isfinite(c.noise_var)) {
        fail(ErrorKind::InvalidInput, "PPCA parameters must be finite");
    }
    if (!(c.noise_var > 0.0)) fail(ErrorKind::DegenerateParameter, "PPCA noise variance must be positive");
}

GaussianComponent ppca_marginal(const PpcaParams& c) {
    Matrix cov = c.loading * c.loading.transpose();
    cov.diagonal().array() += c.noise_var;
    cov = (0.5 * (cov + cov.transpose())).eval();
    return GaussianComponent::from_moments(c.mean, std::move(cov));
}

}  // namespace

Model::Model(Params params) : params_(std::move(params)) {
    if (auto* g = std::get_if<GmmParams>(&params_)) {
        family_ = Family::Gmm;
        m_ = static_cast<int>(g->weights.size());
        if (m_ < 1 || g->means.size() != static_cast<std::size_t>(m_) ||
            g->covariances.size() != static_cast<std::size_t>(m_)) {
            fail(ErrorKind::InvalidInput, "Gmm needs matching counts of weights, means and covariances");
        }
        p_ = static_cast<int>(g->means.front().size());
        if (p_ < 1) fail(ErrorKind::InvalidInput, "dimension must be at least 1");
        g->weights = canonical_weights(g->weights);
        for (int s = 0; s < m_; ++s) {
            if (g->means[s].size() != p_) fail(ErrorKind::InvalidInput, "Gmm means must share one dimension");
            if (!g->means[s].allFinite()) fail(ErrorKind::InvalidInput, "Gmm means must be finite");
            g->covariances[s] = canonical_covariance(g->covariances[s], p_);
            gaussians_.push_back(GaussianComponent::from_moments(g->means[s], g->covariances[s]));
        }
        weights_ = g->weights;
    } else if (auto* c = std::get_if<PpcaParams>(&params_)) {
        family_ = Family::Ppca;
        m_ = 1;
        p_ = static_cast<int>(c->mean.size());
        q_ = static_cast<int>(c->loading.cols());
        if (p_ < 1 || q_ < 1 || q_ >= p_) fail(ErrorKind::InvalidInput, "PPCA needs latent dimension 1 <= q < p");
        check_ppca(*c, p_, q_);
        gaussians_.push_back(ppca_marginal(*c));
        weights_ = Vector::Ones(1);
    } else {
        auto& mp = std::get<MixPpcaParams>(params_);
        family_ = Family::MixPpca;
        m_ = static_cast<int>(mp.weights.size());
        if (m_ < 1 || mp.components.size() != static_cast<std::size_t>(m_)) {
            fail(ErrorKind::InvalidInput, "MixPpca needs one weight per component");
        }
        p_ = static_cast<int>(mp.components.front().mean.size());
        q_ = static_cast<int>(mp.components.front().loading.cols());
        if (p_ < 1 || q_ < 1 || q_ >= p_) fail(ErrorKind::InvalidInput, "PPCA needs latent dimension 1 <= q < p");
        mp.weights = canonical_weights(mp.weights);
        for (const auto& c : mp.components) {
            check_ppca(c, p_, q_);
            gaussians_.push_back(ppca_marginal(c));
        }
        weights_ = mp.weights;
    }
    log_weights_ = weights_.array().log();
}

Model Model::gmm(GmmParams params) { return Model(Params(std::move(params))); }
Model Model::ppca(PpcaParams params) { return Model(Params(std::move(params))); }
Model Model::mix_ppca(MixPpcaParams params) { return Model(Params(std::move(params))); }

Model Model::gaussian(Vector mean, Matrix covariance) {
    GmmParams g;
    g.weights = Vector::Ones(1);
    g.means.push_back(std::move(mean));
    g.covariances.push_back(std::move(covariance));
    return gmm(std::move(g));
}

const GmmParams& Model::as_gmm() const {
    if (family_ != Family::Gmm) fail(ErrorKind::InvalidInput, "model is not a Gmm");
    return std::get<GmmParams>(params_);
}

const PpcaParams& Model::as_ppca() const {
    if (family_ != Family::Ppca) fail(ErrorKind::InvalidInput, "model is not a Ppca");
    return std::get<PpcaParams>(params_);
}

const MixPpcaParams& Model::as_mix_ppca() const {
    if (family_ != Family::MixPpca) fail(ErrorKind::InvalidInput, "model is not a MixPpca");
    return std::get<MixPpcaParams>(params_);
}

Model Model::permuted(const std::vector<int>& permutation) const {
    if (permutation.size() != static_cast<std::size_t>(m_)) {
        fail(ErrorKind::InvalidInput, "permutation length does not match component count");
    }
    std::vector<int> inverse(m_, -1);
    for (int i = 0; i < m_; ++i) {
        const int j = permutation[i];
        if (j < 0 || j >= m_ || inverse[j] != -1) fail(ErrorKind::InvalidInput, "not a permutation");
        inverse[j] = i;
    }
    switch (family_) {
        case Family::Gmm: {
            const auto& g = as_gmm();
            GmmParams out;
            out.weights.resize(m_);
            for (int j = 0; j < m_; ++j) {
                out.weights[j] = g.weights[inverse[j]];
                out.means.push_back(g.means[inverse[j]]);
                out.covariances.push_back(g.covariances[inverse[j]]);
            }
            return gmm(std::move(out));
        }
        case Family::Ppca: return *this;
        case Family::MixPpca: {
            const auto& mp = as_mix_ppca();
            MixPpcaParams out;
            out.weights.resize(m_);
            for (int j = 0; j < m_; ++j) {
                out.weights[j] = mp.weights[inverse[j]];
                out.components.push_back(mp.components[inverse[j]]);
            }
            return mix_ppca(std::move(out));
        }
    }
    return *this;
}

bool Model::operator==(const Model& other) const {
    if (family_ != other.family_ || m_ != other.m_ || p_ != other.p_ || q_ != other.q_) return false;
    switch (family_) {
        case Family::Gmm: {
            const auto& a = as_gmm();
            const auto& b = other.as_gmm();
            if (a.weights != b.weights) return false;
            for (int s = 0; s < m_; ++s) {
                if (a.means[s] != b.means[s] || a.covariances[s] != b.covariances[s]) return false;
            }
            return true;
        }
        case Family::Ppca: {
            const auto& a = as_ppca();
            const auto& b = other.as_ppca();
            return a.mean == b.mean && a.loading == b.loading && a.noise_var == b.noise_var;
        }
        case Family::MixPpca: {
            const auto& a = as_mix_ppca();
            const auto& b = other.as_mix_ppca();
            if (a.weights != b.weights) return false;
            for (int s = 0; s < m_; ++s) {
                const auto& x = a.components[s];
                const auto& y = b.components[s];
                if (x.mean != y.mean || x.loading != y.loading || x.noise_var != y.noise_var) return false;
            }
            return true;
        }
    }
    return false;
}

Dataset::Dataset(RowMatrix rows) : rows_(std::move(rows)) {
    if (rows_.rows() < 1 || rows_.cols() < 1) fail(ErrorKind::InvalidInput, "dataset must have at least one row and column");
    if (!rows_.allFinite()) fail(ErrorKind::InvalidInput, "dataset has non-finite entries");
}

Dataset Dataset::concat(const std::vector<Dataset>& parts) {
    if (parts.empty()) fail(ErrorKind::InvalidInput, "nothing to concatenate");
    Eigen::Index total = 0;
    const int p = parts.front().dim();
    for (const auto& part : parts) {
        if (part.dim() != p) fail(ErrorKind::InvalidInput, "partitions have different dimensions");
        total += part.size();
    }
    RowMatrix rows(total, p);
    Eigen::Index at = 0;
    for (const auto& part : parts) {
        rows.middleRows(at, part.size()) = part.rows();
        at += part.size();
    }
    return Dataset(std::move(rows));
}

}  // namespace klfuse
