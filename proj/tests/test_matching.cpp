#include "klfuse/error.hpp"
#include "klfuse/flat.hpp"
#include "klfuse/matching.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace klfuse;
using namespace klfuse::testing;

namespace {

// Lexicographically first permutation of minimal cost, by enumeration.
Assignment brute_force(const Matrix& cost) {
    const int m = static_cast<int>(cost.rows());
    std::vector<int> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    Assignment best{perm, std::numeric_limits<double>::infinity()};
    do {
        double c = 0.0;
        for (int i = 0; i < m; ++i) c += cost(i, perm[i]);
        if (c < best.total_cost - 1e-12 * std::max(1.0, std::abs(c))) best = {perm, c};
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

}  // namespace

TEST(GaussianKl, ClosedFormValues) {
    const Vector z = Vector::Zero(1), one = Vector::Ones(1);
    const Matrix i1 = Matrix::Identity(1, 1);
    EXPECT_NEAR(gaussian_kl(z, i1, one, i1), 0.5, 1e-15);
    EXPECT_EQ(gaussian_kl(z, i1, z, i1), 0.0);
    // KL(N(0,1) || N(0,4)) = 0.5 (1/4 - 1 + ln 4)
    EXPECT_NEAR(gaussian_kl(z, i1, z, 4 * i1), 0.5 * (0.25 - 1 + std::log(4.0)), 1e-14);
    const auto a = GaussianComponent::from_moments(z, i1);
    const auto b = GaussianComponent::from_moments(one, i1);
    EXPECT_NEAR(symmetric_kl(a, b), 1.0, 1e-15);
    EXPECT_EQ(symmetric_kl(a, a), 0.0);
}

TEST(GaussianKl, NonNegativeAndSymmetrized) {
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        const int p = 1 + i % 5;
        const auto a = GaussianComponent::from_moments(random_vector(p, rng), random_spd(p, rng, 0.05));
        const auto b = GaussianComponent::from_moments(random_vector(p, rng), random_spd(p, rng, 0.05));
        EXPECT_GE(gaussian_kl(a, b), -1e-10);
        EXPECT_NEAR(symmetric_kl(a, b), symmetric_kl(b, a), 1e-10 * std::max(1.0, symmetric_kl(a, b)));
        EXPECT_NEAR(gaussian_kl(a, a), 0.0, 1e-10);
    }
}

TEST(Assignment, MatchesBruteForceOnRandomCosts) {
    Rng rng(7);
    for (int m = 1; m <= 6; ++m) {
        for (int t = 0; t < 60; ++t) {
            Matrix cost(m, m);
            const bool ties = t % 2 == 0;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < m; ++j)
                    cost(i, j) = ties ? std::uniform_int_distribution<int>(0, 2)(rng)
                                      : std::uniform_real_distribution<double>(0, 10)(rng);
            const Assignment fast = solve_assignment(cost);
            const Assignment slow = brute_force(cost);
            EXPECT_NEAR(fast.total_cost, slow.total_cost, 1e-9);
            EXPECT_EQ(fast.permutation, slow.permutation) << "m=" << m << " trial " << t;
        }
    }
}

TEST(Assignment, AllEqualCostsGiveIdentity) {
    const Assignment a = solve_assignment(Matrix::Constant(4, 4, 1.0));
    EXPECT_EQ(a.permutation, (std::vector<int>{0, 1, 2, 3}));
}

TEST(MatchComponents, MatchesBruteForceOnMixtures) {
    Rng rng(8);
    for (int m = 1; m <= 6; ++m) {
        for (int t = 0; t < 10; ++t) {
            const Model a = random_gmm(2, m, rng);
            const Model b = random_gmm(2, m, rng);
            Matrix cost(m, m);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < m; ++j) cost(i, j) = symmetric_kl(a.gaussians()[i], b.gaussians()[j]);
            const Assignment fast = match_components(a, b);
            const Assignment slow = brute_force(cost);
            EXPECT_NEAR(fast.total_cost, slow.total_cost, 1e-9 * std::max(1.0, slow.total_cost));
            EXPECT_EQ(fast.permutation, slow.permutation);
        }
    }
}

TEST(MatchComponents, RecoversPermutation) {
    Rng rng(9);
    const Model ref = random_gmm(3, 5, rng);
    const std::vector<int> perm{3, 0, 4, 1, 2};
    // source component i is reference component perm[i]
    std::vector<int> inverse(5);
    for (int i = 0; i < 5; ++i) inverse[perm[i]] = i;
    const Model source = ref.permuted(inverse);
    const Assignment a = match_components(source, ref);
    EXPECT_EQ(a.permutation, perm);
    EXPECT_LT(a.total_cost, 1e-10);
    EXPECT_LE((flatten(align_to(source, ref)).values - flatten(ref).values).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(MatchComponents, SingleComponentIsIdentity) {
    Rng rng(1);
    const Assignment a = match_components(random_gmm(2, 1, rng), random_gmm(2, 1, rng));
    EXPECT_EQ(a.permutation, std::vector<int>{0});
}

TEST(MatchComponents, ShapeMismatchIsNotApplicable) {
    Rng rng(1);
    try {
        match_components(random_gmm(2, 2, rng), random_gmm(2, 3, rng));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NotApplicable);
    }
    EXPECT_THROW(match_components(random_gmm(2, 1, rng), random_ppca(2, 1, rng)), Error);
}

TEST(ParamMse, ZeroOnIdentityAndNonNegative) {
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        const Model a = random_model(rng);
        EXPECT_EQ(param_mse(a, a), 0.0);
        Model b = a;
        if (a.family() == Family::Gmm) b = random_gmm(a.dim(), a.components(), rng);
        EXPECT_GE(param_mse(b, a), 0.0);
    }
}

TEST(ParamMse, OneShiftedMean) {
    const Model truth = Model::gmm({Vector{{0.5, 0.5}}, {Vector::Constant(1, -2.0), Vector::Constant(1, 2.0)},
                                    {Matrix::Identity(1, 1), Matrix::Identity(1, 1)}});
    const Model est = Model::gmm({Vector{{0.5, 0.5}}, {Vector::Constant(1, -2.0), Vector::Constant(1, 2.1)},
                                  {Matrix::Identity(1, 1), Matrix::Identity(1, 1)}});
    EXPECT_NEAR(param_mse(est, truth), 0.01, 1e-14);
}

TEST(ParamMse, InvariantUnderJointPermutation) {
    Rng rng(4);
    const Model a = random_gmm(2, 4, rng);
    const Model b = random_gmm(2, 4, rng);
    const std::vector<int> perm{2, 3, 1, 0};
    EXPECT_NEAR(param_mse(a.permuted(perm), b.permuted(perm)), param_mse(a, b), 1e-12);
    EXPECT_NEAR(param_mse(a.permuted(perm), b), param_mse(a, b), 1e-12);
}

TEST(ParamMse, PpcaRotationInvariance) {
    Rng rng(5);
    const Model a = random_ppca(5, 3, rng);
    Eigen::HouseholderQR<Matrix> qr(random_spd(3, rng));
    const Matrix r = qr.householderQ();
    PpcaParams rotated = a.as_ppca();
    rotated.loading = rotated.loading * r;
    EXPECT_NEAR(param_mse(Model::ppca(rotated), a), 0.0, 1e-24);

    const Model mix = random_mix_ppca(4, 2, 2, rng);
    MixPpcaParams mp = mix.as_mix_ppca();
    for (auto& c : mp.components) {
        Eigen::HouseholderQR<Matrix> q2(random_spd(2, rng));
        c.loading = c.loading * Matrix(q2.householderQ());
    }
    EXPECT_NEAR(param_mse(Model::mix_ppca(mp), mix), 0.0, 1e-24);
}
