#pragma once

#include <Eigen/Dense>

#include <string>
#include <variant>
#include <vector>

namespace klfuse {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct GmmParams {
    Vector weights;
    std::vector<Vector> means;
    std::vector<Matrix> covariances;
};

// x = mean + loading * t + noise, t ~ N(0, I_q), noise ~ N(0, noise_var I_p).
struct PpcaParams {
    Vector mean;
    Matrix loading;  // p x q
    double noise_var = 1.0;
};

struct MixPpcaParams {
    Vector weights;
    std::vector<PpcaParams> components;
};

enum class Family { Gmm, Ppca, MixPpca };

const char* to_string(Family family);
Family family_from_string(const std::string& name);

// Gaussian in evaluation-ready form. For PPCA components this is the
// marginal N(mean, W W^T + noise_var I).
struct GaussianComponent {
    Vector mean;
    Matrix covariance;
    Matrix chol_lower;  // covariance = L L^T
    Matrix precision;
    double log_det = 0.0;
    double log_norm = 0.0;  // -0.5 (p log 2pi + log_det)

    static GaussianComponent from_moments(Vector mean, Matrix covariance);

    double log_density(const Eigen::Ref<const Vector>& x) const;
};

// Immutable parameter record for one of the supported families. Construction
// validates the family invariants and precomputes the Cholesky factors used
// by density evaluation, so every Model in circulation is evaluable.
class Model {
public:
    using Params = std::variant<GmmParams, PpcaParams, MixPpcaParams>;

    static Model gmm(GmmParams params);
    static Model ppca(PpcaParams params);
    static Model mix_ppca(MixPpcaParams params);
    static Model gaussian(Vector mean, Matrix covariance);

    Family family() const noexcept { return family_; }
    int dim() const noexcept { return p_; }
    int components() const noexcept { return m_; }
    int latent_dim() const noexcept { return q_; }

    const Params& params() const noexcept { return params_; }
    const GmmParams& as_gmm() const;
    const PpcaParams& as_ppca() const;
    const MixPpcaParams& as_mix_ppca() const;

    // Mixture weights; a single PPCA reports {1}.
    const Vector& weights() const noexcept { return weights_; }
    const Vector& log_weights() const noexcept { return log_weights_; }
    const std::vector<GaussianComponent>& gaussians() const noexcept { return gaussians_; }

    // Reorders mixture components so that result component permutation[i]
    // is this model's component i.
    Model permuted(const std::vector<int>& permutation) const;

    bool operator==(const Model& other) const;

private:
    explicit Model(Params params);

    Params params_;
    Family family_;
    int p_ = 0;
    int m_ = 0;
    int q_ = 0;
    Vector weights_;
    Vector log_weights_;
    std::vector<GaussianComponent> gaussians_;
};

// Observations, one per row.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(RowMatrix rows);

    const RowMatrix& rows() const noexcept { return rows_; }
    Eigen::Index size() const noexcept { return rows_.rows(); }
    int dim() const noexcept { return static_cast<int>(rows_.cols()); }
    auto row(Eigen::Index i) const { return rows_.row(i); }

    static Dataset concat(const std::vector<Dataset>& parts);

private:
    RowMatrix rows_;
};

}  // namespace klfuse
