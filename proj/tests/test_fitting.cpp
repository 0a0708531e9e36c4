#include "klfuse/density.hpp"
#include "klfuse/error.hpp"
#include "klfuse/fitting.hpp"
#include "klfuse/flat.hpp"
#include "klfuse/matching.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace klfuse;
using namespace klfuse::testing;

namespace {

Model two_bumps() {
    return Model::gmm({Vector{{0.5, 0.5}}, {Vector::Constant(1, -5.0), Vector::Constant(1, 5.0)},
                       {Matrix::Identity(1, 1), Matrix::Identity(1, 1)}});
}

Model separated_gmm(int p, int m, std::uint64_t seed) {
    Rng rng(seed);
    GmmParams g;
    g.weights = random_weights(m, rng);
    for (int s = 0; s < m; ++s) {
        Vector mu = Vector::Zero(p);
        mu[s % p] = 8.0 * (1 + s / p);
        g.means.push_back(mu);
        g.covariances.push_back(random_spd(p, rng, 0.5));
    }
    return Model::gmm(std::move(g));
}

void expect_monotone(const FitReport& r) {
    for (std::size_t i = 1; i < r.trace.size(); ++i)
        EXPECT_GE(r.trace[i], r.trace[i - 1] - 1e-9 - 1e-12 * std::abs(r.trace[i - 1]));
}

}  // namespace

TEST(FitConfig, RejectsInvalidValues) {
    FitConfig c;
    EXPECT_NO_THROW(validate(c));
    c.max_iters = 0;
    EXPECT_THROW(validate(c), Error);
    c = {};
    c.rel_tol = 0;
    EXPECT_THROW(validate(c), Error);
    c = {};
    c.restarts = 0;
    EXPECT_THROW(validate(c), Error);
    c = {};
    c.ridge = -1;
    EXPECT_THROW(validate(c), Error);
}

TEST(WeightedDataset, RejectsBadWeights) {
    const Dataset d(RowMatrix::Random(4, 2));
    EXPECT_THROW(WeightedDataset::with_weights(d, Vector::Zero(4)), Error);
    EXPECT_THROW(WeightedDataset::with_weights(d, Vector::Constant(4, -1.0)), Error);
    EXPECT_THROW(WeightedDataset::with_weights(d, Vector::Ones(3)), Error);
    EXPECT_EQ(WeightedDataset::uniform(d).total_weight(), 4.0);
}

TEST(FitMle, SingleGaussianIsClosedForm) {
    Rng rng(1);
    const Dataset d = sample(Model::gaussian(random_vector(3, rng), random_spd(3, rng)), 500, 2);
    const Vector w = Vector::NullaryExpr(500, [&](Eigen::Index) { return std::uniform_real_distribution<double>(0.1, 3)(rng); });
    FitConfig cfg;
    cfg.ridge = 1e-3;
    for (const auto& wd : {WeightedDataset::uniform(d), WeightedDataset::with_weights(d, w)}) {
        const FitReport r = fit_mle(wd, {Family::Gmm, 1, 0}, cfg, 5);
        const double W = wd.weights.sum();
        const Vector mean = (d.rows().transpose() * wd.weights) / W;
        const RowMatrix c = d.rows().rowwise() - mean.transpose();
        const Matrix cov = c.transpose() * wd.weights.asDiagonal() * c / W + cfg.ridge * Matrix::Identity(3, 3);
        EXPECT_LE((r.model.as_gmm().means[0] - mean).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LE((r.model.as_gmm().covariances[0] - cov).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_TRUE(r.converged);
    }
}

TEST(FitMle, ConstantWeightsMatchUniformFit) {
    const Dataset d = sample(separated_gmm(2, 3, 4), 1500, 9);
    const FitReport base = fit_mle(WeightedDataset::uniform(d), {Family::Gmm, 3, 0}, {}, 17);
    const FitReport twice = fit_mle(WeightedDataset::with_weights(d, Vector::Constant(1500, 2.0)), {Family::Gmm, 3, 0}, {}, 17);
    EXPECT_TRUE(base.model == twice.model);
    const FitReport third = fit_mle(WeightedDataset::with_weights(d, Vector::Constant(1500, 0.3)), {Family::Gmm, 3, 0}, {}, 17);
    EXPECT_LE((flatten(third.model).values - flatten(base.model).values).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(FitMle, RecoversSeparatedOneDimensionalMixture) {
    const Dataset d = sample(two_bumps(), 5000, 3);
    const FitReport r = fit_mle(WeightedDataset::uniform(d), {Family::Gmm, 2, 0}, {}, 1);
    const Model aligned = align_to(r.model, two_bumps());
    EXPECT_NEAR(aligned.as_gmm().means[0][0], -5.0, 0.1);
    EXPECT_NEAR(aligned.as_gmm().means[1][0], 5.0, 0.1);
    expect_monotone(r);
}

TEST(FitMle, ObjectiveNeverDecreases) {
    Rng rng(21);
    for (int i = 0; i < 12; ++i) {
        const Model truth = random_model(rng);
        const Dataset d = sample(truth, 800, rng());
        const ModelSpec spec{truth.family(), truth.components(), truth.latent_dim()};
        const Vector w = Vector::NullaryExpr(800, [&](Eigen::Index) { return std::exponential_distribution<double>(1.0)(rng); });
        FitConfig cfg;
        cfg.restarts = 2;
        const FitReport r = fit_mle(WeightedDataset::with_weights(d, w), spec, cfg, rng());
        ASSERT_FALSE(r.trace.empty());
        expect_monotone(r);
        EXPECT_TRUE(std::isfinite(r.final_objective));
    }
}

TEST(FitMle, MonotoneCheckIsActiveInTests) { EXPECT_TRUE(assert_monotone_enabled()); }

TEST(FitMle, RowPermutationLeavesObjectiveUnchanged) {
    const Dataset d = sample(separated_gmm(2, 2, 6), 2000, 7);
    Rng rng(8);
    const Vector w = Vector::NullaryExpr(2000, [&](Eigen::Index) { return std::uniform_real_distribution<double>(0.5, 1.5)(rng); });
    std::vector<Eigen::Index> order(2000);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    RowMatrix shuffled(2000, 2);
    Vector sw(2000);
    for (Eigen::Index i = 0; i < 2000; ++i) {
        shuffled.row(i) = d.rows().row(order[i]);
        sw[i] = w[order[i]];
    }
    FitConfig cfg;
    cfg.rel_tol = 1e-14;
    cfg.max_iters = 5000;
    const FitReport a = fit_mle(WeightedDataset::with_weights(d, w), {Family::Gmm, 2, 0}, cfg, 3);
    const FitReport b = fit_mle(WeightedDataset::with_weights(Dataset(shuffled), sw), {Family::Gmm, 2, 0}, cfg, 3);
    EXPECT_NEAR(a.final_objective, b.final_objective, 1e-9 * std::abs(a.final_objective));
}

TEST(FitMle, RidgeBoundsEigenvalues) {
    const Dataset d(RowMatrix::Constant(50, 2, 1.5));
    FitConfig cfg;
    cfg.ridge = 0.01;
    const FitReport r = fit_mle(WeightedDataset::uniform(d), {Family::Gmm, 1, 0}, cfg, 1);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(r.model.as_gmm().covariances[0]);
    EXPECT_GE(eig.eigenvalues().minCoeff(), 0.99 * cfg.ridge);

    const Dataset mix = sample(separated_gmm(3, 3, 2), 900, 4);
    const FitReport r3 = fit_mle(WeightedDataset::uniform(mix), {Family::Gmm, 3, 0}, cfg, 1);
    for (const auto& c : r3.model.as_gmm().covariances)
        EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix>(c).eigenvalues().minCoeff(), 0.99 * cfg.ridge);
}

TEST(FitMle, IdenticalRowsWithoutRidgeIsDegenerate) {
    const Dataset d(RowMatrix::Constant(10, 2, 3.0));
    FitConfig cfg;
    cfg.ridge = 0.0;
    try {
        fit_mle(WeightedDataset::uniform(d), {Family::Gmm, 1, 0}, cfg, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::DegenerateFit);
    }
}

TEST(FitMle, RejectsMismatchedSpec) {
    const Dataset d(RowMatrix::Random(10, 2));
    EXPECT_THROW(fit_mle(WeightedDataset::uniform(d), {Family::Ppca, 1, 2}, {}, 1), Error);
    EXPECT_THROW(fit_mle(WeightedDataset::uniform(Dataset(RowMatrix::Random(1, 2))), {Family::Gmm, 1, 0}, {}, 1), Error);
}

TEST(FitMle, SameSeedSameFit) {
    const Dataset d = sample(separated_gmm(2, 3, 1), 1000, 2);
    const FitReport a = fit_mle(WeightedDataset::uniform(d), {Family::Gmm, 3, 0}, {}, 44);
    const FitReport b = fit_mle(WeightedDataset::uniform(d), {Family::Gmm, 3, 0}, {}, 44);
    EXPECT_TRUE(a.model == b.model);
    EXPECT_EQ(a.final_objective, b.final_objective);
}

TEST(FitMle, PpcaRecoversMarginalCovariance) {
    Rng rng(3);
    const Model truth = random_ppca(5, 2, rng);
    const Dataset d = sample(truth, 50000, 1);
    const FitReport r = fit_mle(WeightedDataset::uniform(d), {Family::Ppca, 1, 2}, {}, 1);
    EXPECT_LT(param_mse(r.model, truth), 0.05);
    const Vector x = random_vector(5, rng);
    EXPECT_NEAR(log_density(r.model, x), log_density(truth, x), 0.05);
}

TEST(FitMle, PpcaIsTheMaximumOverLowRankCovariances) {
    Rng rng(4);
    const Dataset d = sample(random_ppca(4, 1, rng), 3000, 2);
    const FitReport r = fit_mle(WeightedDataset::uniform(d), {Family::Ppca, 1, 1}, {}, 1);
    const double best = loglik(r.model, d);
    FlatParams f = flatten(r.model);
    for (int k = 0; k < 30; ++k) {
        FlatParams g = f;
        g.values += random_vector(static_cast<int>(f.values.size()), rng, 0.01);
        EXPECT_LE(loglik(unflatten(g), d), best + 1e-6);
    }
}

TEST(FitMle, MixtureOfPpcaRecoversComponents) {
    Rng rng(5);
    MixPpcaParams mp;
    mp.weights = Vector{{0.4, 0.6}};
    for (int s = 0; s < 2; ++s) {
        PpcaParams c = random_ppca_params(4, 1, rng);
        c.mean = Vector::Constant(4, s == 0 ? -6.0 : 6.0);
        mp.components.push_back(c);
    }
    const Model truth = Model::mix_ppca(mp);
    const Dataset d = sample(truth, 20000, 3);
    const FitReport r = fit_mle(WeightedDataset::uniform(d), {Family::MixPpca, 2, 1}, {}, 2);
    EXPECT_LT(param_mse(r.model, truth), 0.1);
    expect_monotone(r);
}

TEST(FitGlobal, OnePartitionEqualsFitMle) {
    const Dataset d = sample(separated_gmm(2, 2, 3), 1000, 5);
    const FitReport a = fit_global_mle({d}, {Family::Gmm, 2, 0}, {}, 9);
    const FitReport b = fit_mle(WeightedDataset::uniform(d), {Family::Gmm, 2, 0}, {}, 9);
    EXPECT_TRUE(a.model == b.model);
}

TEST(FitGlobal, ContiguousShardsReproduceUnsplitFit) {
    const Dataset d = sample(separated_gmm(3, 3, 3), 2000, 6);
    std::vector<Dataset> shards;
    for (int k = 0; k < 10; ++k) shards.emplace_back(RowMatrix(d.rows().middleRows(200 * k, 200)));
    const FitReport a = fit_global_mle(shards, {Family::Gmm, 3, 0}, {}, 12);
    const FitReport b = fit_mle(WeightedDataset::uniform(d), {Family::Gmm, 3, 0}, {}, 12);
    EXPECT_TRUE(a.model == b.model);
    EXPECT_EQ(a.final_objective, b.final_objective);
}

TEST(FitGlobal, DuplicatedShardsMatchSingleCopy) {
    const Dataset d = sample(gaussian_1d(1.0, 2.0), 300, 6);
    FitConfig cfg;
    cfg.ridge = 0.0;
    const FitReport a = fit_global_mle({d, d, d}, {Family::Gmm, 1, 0}, cfg, 1);
    const FitReport b = fit_mle(WeightedDataset::uniform(d), {Family::Gmm, 1, 0}, cfg, 1);
    EXPECT_LE((flatten(a.model).values - flatten(b.model).values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Bic, FormulaAndMonotonicity) {
    const Dataset d = sample(gaussian_1d(0.0, 1.0), 400, 1);
    const Model good = gaussian_1d(0.0, 1.0);
    const Model bad = gaussian_1d(0.5, 1.0);
    EXPECT_LT(bic(good, d), bic(bad, d));
    EXPECT_NEAR(bic(good, d), -2.0 * loglik(good, d) + 2 * std::log(400.0), 1e-9);

    // Same likelihood, three more parameters.
    const Model twin = Model::gmm({Vector{{0.5, 0.5}}, {Vector::Zero(1), Vector::Zero(1)},
                                   {Matrix::Identity(1, 1), Matrix::Identity(1, 1)}});
    EXPECT_NEAR(bic(twin, d) - bic(good, d), 3 * std::log(400.0), 1e-8);
}

TEST(SelectComponents, SinglePointRangeReturnsM1) {
    const Dataset d = sample(two_bumps(), 500, 1);
    const FitReport r = select_components(d, Family::Gmm, 0, 1, {}, 3);
    EXPECT_EQ(r.model.components(), 1);
}

TEST(SelectComponents, FindsTwoSeparatedBumps) {
    const Dataset d = sample(two_bumps(), 5000, 2);
    EXPECT_EQ(select_components(d, Family::Gmm, 0, 5, {}, 3).model.components(), 2);
}

TEST(SelectComponents, FindsThreeSeparatedComponents) {
    const Dataset d = sample(separated_gmm(2, 3, 9), 3000, 2);
    EXPECT_EQ(select_components(d, Family::Gmm, 0, 5, {}, 3).model.components(), 3);
}

TEST(SelectComponents, PrefersOneComponentForGaussianData) {
    int ones = 0;
    FitConfig cfg;
    cfg.restarts = 2;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Dataset d = sample(Model::gaussian(Vector::Zero(2), Matrix::Identity(2, 2)), 500, seed);
        ones += select_components(d, Family::Gmm, 0, 3, cfg, seed).model.components() == 1;
    }
    EXPECT_GE(ones, 18);
}
