#pragma once

#include "klfuse/model.hpp"
#include "klfuse/seed.hpp"

#include <random>

namespace klfuse::testing {

inline Matrix random_spd(int p, Rng& rng, double floor = 0.3) {
    std::normal_distribution<double> z(0.0, 1.0);
    Matrix a(p, p);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j) a(i, j) = z(rng);
    return a * a.transpose() / p + floor * Matrix::Identity(p, p);
}

inline Vector random_vector(int p, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> z(0.0, scale);
    Vector v(p);
    for (int i = 0; i < p; ++i) v[i] = z(rng);
    return v;
}

inline Vector random_weights(int m, Rng& rng) {
    std::uniform_real_distribution<double> u(0.5, 1.5);
    Vector w(m);
    for (int s = 0; s < m; ++s) w[s] = u(rng);
    return w / w.sum();
}

inline Model random_gmm(int p, int m, Rng& rng, double spread = 3.0) {
    GmmParams g;
    g.weights = random_weights(m, rng);
    for (int s = 0; s < m; ++s) {
        g.means.push_back(random_vector(p, rng, spread));
        g.covariances.push_back(random_spd(p, rng));
    }
    return Model::gmm(std::move(g));
}

inline PpcaParams random_ppca_params(int p, int q, Rng& rng, double spread = 1.0) {
    PpcaParams c;
    c.mean = random_vector(p, rng, spread);
    std::normal_distribution<double> z(0.0, 1.0);
    c.loading = Matrix(p, q);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < q; ++j) c.loading(i, j) = z(rng);
    c.noise_var = std::uniform_real_distribution<double>(0.3, 1.2)(rng);
    return c;
}

inline Model random_ppca(int p, int q, Rng& rng) { return Model::ppca(random_ppca_params(p, q, rng)); }

inline Model random_mix_ppca(int p, int q, int m, Rng& rng) {
    MixPpcaParams mp;
    mp.weights = random_weights(m, rng);
    for (int s = 0; s < m; ++s) mp.components.push_back(random_ppca_params(p, q, rng, 3.0));
    return Model::mix_ppca(std::move(mp));
}

// Any of the three families with small random shapes.
inline Model random_model(Rng& rng) {
    std::uniform_int_distribution<int> pick(0, 2), pdim(1, 4), mdim(1, 3);
    const int p = pdim(rng);
    switch (pick(rng)) {
        case 0: return random_gmm(p, mdim(rng), rng);
        case 1: return random_ppca(p + 1, std::uniform_int_distribution<int>(1, p)(rng), rng);
        default: return random_mix_ppca(p + 1, std::uniform_int_distribution<int>(1, p)(rng), mdim(rng), rng);
    }
}

inline Model gaussian_1d(double mean, double var) {
    return Model::gaussian(Vector::Constant(1, mean), Matrix::Constant(1, 1, var));
}

}  // namespace klfuse::testing
