#include "klfuse/kernels.hpp"

#include "klfuse/density.hpp"
#include "klfuse/error.hpp"

#include <cmath>

namespace klfuse::kernels {

namespace {

// Per-row evaluation with caller-provided scratch; no allocation in the loop.
class RowEvaluator {
public:
    explicit RowEvaluator(const Model& model)
        : model_(model), p_(model.dim()), m_(model.components()), z_(model.dim()), terms_(model.components()) {}

    // Fills terms() with log alpha_s + log N_s(x) and returns log p(x).
    double evaluate(const double* x) {
        const auto& gs = model_.gaussians();
        for (int s = 0; s < m_; ++s) {
            const auto& g = gs[s];
            const Matrix& L = g.chol_lower;
            double quad = 0.0;
            for (int i = 0; i < p_; ++i) {
                double v = x[i] - g.mean[i];
                for (int k = 0; k < i; ++k) v -= L(i, k) * z_[k];
                v /= L(i, i);
                z_[i] = v;
                quad += v * v;
            }
            terms_[s] = model_.log_weights()[s] + g.log_norm - 0.5 * quad;
        }
        if (m_ == 1) return terms_[0];
        const double top = terms_.maxCoeff();
        if (!std::isfinite(top)) return top;
        double acc = 0.0;
        for (int s = 0; s < m_; ++s) acc += std::exp(terms_[s] - top);
        return top + std::log(acc);
    }

    const Vector& terms() const { return terms_; }

private:
    const Model& model_;
    int p_;
    int m_;
    Vector z_;
    Vector terms_;
};

void check_rows(const Model& model, const RowMatrix& rows) {
    if (rows.cols() != model.dim()) {
        fail(ErrorKind::InvalidInput, "data has dimension " + std::to_string(rows.cols()) + ", model expects " +
                                          std::to_string(model.dim()));
    }
}

void check_weights(const RowMatrix& rows, const Vector& weights) {
    if (weights.size() != 0 && weights.size() != rows.rows()) {
        fail(ErrorKind::InvalidInput, "weight vector length does not match row count");
    }
}

inline double weight_at(const Vector& weights, Eigen::Index j) {
    return weights.size() == 0 ? 1.0 : weights[j];
}

void fill_responsibilities(RowEvaluator& eval, double logp, RowMatrix& resp, Eigen::Index j) {
    const Vector& t = eval.terms();
    for (Eigen::Index s = 0; s < t.size(); ++s) resp(j, s) = std::exp(t[s] - logp);
}

// Upper triangle of scatter += a * (x - mean)(x - mean)^T; the caller mirrors.
inline void add_outer_upper(Matrix& scatter, const double* x, const Vector& mean, double a, Vector& diff) {
    const auto p = mean.size();
    for (Eigen::Index i = 0; i < p; ++i) diff[i] = x[i] - mean[i];
    for (Eigen::Index j = 0; j < p; ++j) {
        const double aj = a * diff[j];
        for (Eigen::Index i = 0; i <= j; ++i) scatter(i, j) += aj * diff[i];
    }
}

void mirror_upper(Matrix& m) {
    m.triangularView<Eigen::StrictlyLower>() = m.transpose().triangularView<Eigen::StrictlyLower>();
}

Eigen::Index block_count(Eigen::Index n) { return (n + kReduceBlock - 1) / kReduceBlock; }

}  // namespace

namespace serial {

Vector log_density_rows(const Model& model, const RowMatrix& rows) {
    check_rows(model, rows);
    RowEvaluator eval(model);
    Vector out(rows.rows());
    for (Eigen::Index j = 0; j < rows.rows(); ++j) out[j] = eval.evaluate(rows.row(j).data());
    return out;
}

EStep e_step(const Model& model, const RowMatrix& rows, const Vector& weights) {
    check_rows(model, rows);
    check_weights(rows, weights);
    EStep out;
    out.responsibilities.resize(rows.rows(), model.components());
    out.log_density.resize(rows.rows());
    RowEvaluator eval(model);
    for (Eigen::Index j = 0; j < rows.rows(); ++j) {
        const double logp = eval.evaluate(rows.row(j).data());
        out.log_density[j] = logp;
        fill_responsibilities(eval, logp, out.responsibilities, j);
        out.weighted_loglik += weight_at(weights, j) * logp;
    }
    return out;
}

std::vector<ComponentStats> component_stats(const RowMatrix& rows, const Vector& weights,
                                            const RowMatrix& responsibilities) {
    check_weights(rows, weights);
    const auto p = rows.cols();
    const auto m = responsibilities.cols();
    std::vector<ComponentStats> stats(m);
    for (Eigen::Index s = 0; s < m; ++s) {
        auto& st = stats[s];
        Vector sum = Vector::Zero(p);
        for (Eigen::Index j = 0; j < rows.rows(); ++j) {
            const double a = weight_at(weights, j) * responsibilities(j, s);
            st.mass += a;
            sum += a * rows.row(j).transpose();
        }
        st.mean = st.mass > 0.0 ? Vector(sum / st.mass) : Vector::Zero(p);
        st.scatter = Matrix::Zero(p, p);
        Vector diff(p);
        for (Eigen::Index j = 0; j < rows.rows(); ++j) {
            const double a = weight_at(weights, j) * responsibilities(j, s);
            add_outer_upper(st.scatter, rows.row(j).data(), st.mean, a, diff);
        }
        mirror_upper(st.scatter);
    }
    return stats;
}

Matrix score_outer_sum(const Model& model, const RowMatrix& rows) {
    check_rows(model, rows);
    Matrix acc;
    for (Eigen::Index j = 0; j < rows.rows(); ++j) {
        const Vector s = score(model, rows.row(j).transpose());
        if (acc.size() == 0) acc = Matrix::Zero(s.size(), s.size());
        acc.noalias() += s * s.transpose();
    }
    return acc;
}

}  // namespace serial

namespace parallel {

Vector log_density_rows(const Model& model, const RowMatrix& rows) {
    check_rows(model, rows);
    Vector out(rows.rows());
    const Eigen::Index blocks = block_count(rows.rows());
#pragma omp parallel
    {
        RowEvaluator eval(model);
#pragma omp for schedule(static)
        for (Eigen::Index b = 0; b < blocks; ++b) {
            const Eigen::Index end = std::min(rows.rows(), (b + 1) * kReduceBlock);
            for (Eigen::Index j = b * kReduceBlock; j < end; ++j) out[j] = eval.evaluate(rows.row(j).data());
        }
    }
    return out;
}

EStep e_step(const Model& model, const RowMatrix& rows, const Vector& weights) {
    check_rows(model, rows);
    check_weights(rows, weights);
    EStep out;
    out.responsibilities.resize(rows.rows(), model.components());
    out.log_density.resize(rows.rows());
    const Eigen::Index blocks = block_count(rows.rows());
    Vector partial = Vector::Zero(blocks);
#pragma omp parallel
    {
        RowEvaluator eval(model);
#pragma omp for schedule(static)
        for (Eigen::Index b = 0; b < blocks; ++b) {
            const Eigen::Index end = std::min(rows.rows(), (b + 1) * kReduceBlock);
            double acc = 0.0;
            for (Eigen::Index j = b * kReduceBlock; j < end; ++j) {
                const double logp = eval.evaluate(rows.row(j).data());
                out.log_density[j] = logp;
                fill_responsibilities(eval, logp, out.responsibilities, j);
                acc += weight_at(weights, j) * logp;
            }
            partial[b] = acc;
        }
    }
    for (Eigen::Index b = 0; b < blocks; ++b) out.weighted_loglik += partial[b];
    return out;
}

std::vector<ComponentStats> component_stats(const RowMatrix& rows, const Vector& weights,
                                            const RowMatrix& responsibilities) {
    check_weights(rows, weights);
    const auto p = rows.cols();
    const auto m = responsibilities.cols();
    const Eigen::Index blocks = block_count(rows.rows());

    // Pass 1: masses and first moments.
    Matrix mass(blocks, m);
    std::vector<Matrix> sums(blocks);
#pragma omp parallel for schedule(static)
    for (Eigen::Index b = 0; b < blocks; ++b) {
        Matrix sum = Matrix::Zero(p, m);
        const Eigen::Index end = std::min(rows.rows(), (b + 1) * kReduceBlock);
        for (Eigen::Index s = 0; s < m; ++s) {
            double ms = 0.0;
            for (Eigen::Index j = b * kReduceBlock; j < end; ++j) {
                const double a = weight_at(weights, j) * responsibilities(j, s);
                ms += a;
                for (Eigen::Index i = 0; i < p; ++i) sum(i, s) += a * rows(j, i);
            }
            mass(b, s) = ms;
        }
        sums[b] = std::move(sum);
    }
    std::vector<ComponentStats> stats(m);
    for (Eigen::Index s = 0; s < m; ++s) {
        Vector sum = Vector::Zero(p);
        for (Eigen::Index b = 0; b < blocks; ++b) {
            stats[s].mass += mass(b, s);
            sum += sums[b].col(s);
        }
        stats[s].mean = stats[s].mass > 0.0 ? Vector(sum / stats[s].mass) : Vector::Zero(p);
    }

    // Pass 2: centered scatter.
    std::vector<std::vector<Matrix>> scatter(blocks);
#pragma omp parallel for schedule(static)
    for (Eigen::Index b = 0; b < blocks; ++b) {
        Vector diff(p);
        const Eigen::Index end = std::min(rows.rows(), (b + 1) * kReduceBlock);
        scatter[b].assign(m, Matrix::Zero(p, p));
        for (Eigen::Index s = 0; s < m; ++s) {
            for (Eigen::Index j = b * kReduceBlock; j < end; ++j) {
                const double a = weight_at(weights, j) * responsibilities(j, s);
                add_outer_upper(scatter[b][s], rows.row(j).data(), stats[s].mean, a, diff);
            }
        }
    }
    for (Eigen::Index s = 0; s < m; ++s) {
        stats[s].scatter = Matrix::Zero(p, p);
        for (Eigen::Index b = 0; b < blocks; ++b) stats[s].scatter += scatter[b][s];
        mirror_upper(stats[s].scatter);
    }
    return stats;
}

Matrix score_outer_sum(const Model& model, const RowMatrix& rows) {
    check_rows(model, rows);
    const Eigen::Index blocks = block_count(rows.rows());
    std::vector<Matrix> partial(blocks);
#pragma omp parallel for schedule(static)
    for (Eigen::Index b = 0; b < blocks; ++b) {
        Matrix acc;
        const Eigen::Index end = std::min(rows.rows(), (b + 1) * kReduceBlock);
        for (Eigen::Index j = b * kReduceBlock; j < end; ++j) {
            const Vector s = score(model, rows.row(j).transpose());
            if (acc.size() == 0) acc = Matrix::Zero(s.size(), s.size());
            acc.selfadjointView<Eigen::Upper>().rankUpdate(s);
        }
        partial[b] = std::move(acc);
    }
    Matrix total;
    for (auto& part : partial) {
        if (part.size() == 0) continue;
        if (total.size() == 0) total = Matrix::Zero(part.rows(), part.cols());
        total += part;
    }
    if (total.size() != 0) mirror_upper(total);
    return total;
}

}  // namespace parallel

}  // namespace klfuse::kernels
