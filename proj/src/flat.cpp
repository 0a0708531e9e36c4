#include "klfuse/flat.hpp"

#include "klfuse/error.hpp"

#include <sstream>

namespace klfuse {

int vech_size(int p) { return p * (p + 1) / 2; }

namespace {

int ppca_block(int p, int q) { return p + p * q + 1; }

}  // namespace

int Layout::dim() const {
    switch (family) {
        case Family::Gmm: return (m - 1) + m * p + m * vech_size(p);
        case Family::Ppca: return ppca_block(p, q);
        case Family::MixPpca: return (m - 1) + m * ppca_block(p, q);
    }
    return 0;
}

int Layout::mean_offset(int s) const {
    switch (family) {
        case Family::Gmm: return (m - 1) + s * p;
        case Family::Ppca: return 0;
        case Family::MixPpca: return (m - 1) + s * ppca_block(p, q);
    }
    return 0;
}

int Layout::cov_offset(int s) const { return (m - 1) + m * p + s * vech_size(p); }
int Layout::loading_offset(int s) const { return mean_offset(s) + p; }
int Layout::noise_offset(int s) const { return loading_offset(s) + p * q; }

std::string Layout::describe() const {
    std::ostringstream out;
    out << to_string(family) << "(m=" << m << ", p=" << p << ", q=" << q << ")";
    return out.str();
}

Layout layout_of(const Model& model) {
    return Layout{model.family(), model.components(), model.dim(), model.latent_dim()};
}

int param_count(const Model& model) { return layout_of(model).dim(); }

void require_same_layout(const Layout& a, const Layout& b) {
    if (!(a == b)) {
        fail(ErrorKind::NotApplicable, "parameter layouts differ: " + a.describe() + " vs " + b.describe());
    }
}

namespace {

void put_vech(Vector& out, int offset, const Matrix& cov) {
    const auto p = cov.rows();
    int k = offset;
    for (Eigen::Index i = 0; i < p; ++i) {
        for (Eigen::Index j = i; j < p; ++j) out[k++] = cov(i, j);
    }
}

Matrix get_vech(const Vector& in, int offset, int p) {
    Matrix cov(p, p);
    int k = offset;
    for (int i = 0; i < p; ++i) {
        for (int j = i; j < p; ++j) {
            cov(i, j) = in[k];
            cov(j, i) = in[k];
            ++k;
        }
    }
    return cov;
}

void put_ppca(Vector& out, const Layout& layout, int s, const PpcaParams& c) {
    out.segment(layout.mean_offset(s), layout.p) = c.mean;
    out.segment(layout.loading_offset(s), layout.p * layout.q) =
        Eigen::Map<const Vector>(c.loading.data(), c.loading.size());
    out[layout.noise_offset(s)] = c.noise_var;
}

PpcaParams get_ppca(const Vector& in, const Layout& layout, int s) {
    PpcaParams c;
    c.mean = in.segment(layout.mean_offset(s), layout.p);
    c.loading = Eigen::Map<const Matrix>(in.data() + layout.loading_offset(s), layout.p, layout.q);
    c.noise_var = in[layout.noise_offset(s)];
    return c;
}

Vector get_weights(const Vector& in, int m) {
    Vector w(m);
    double head = 0.0;
    for (int s = 0; s + 1 < m; ++s) {
        w[s] = in[s];
        head += in[s];
    }
    w[m - 1] = 1.0 - head;
    if ((w.array() <= 0.0).any() || !w.allFinite()) {
        fail(ErrorKind::DegenerateParameter, "mixture weights leave the simplex");
    }
    return w;
}

}  // namespace

FlatParams flatten(const Model& model) {
    FlatParams flat;
    flat.layout = layout_of(model);
    const Layout& L = flat.layout;
    flat.values = Vector::Zero(L.dim());
    for (int s = 0; s + 1 < L.m; ++s) flat.values[s] = model.weights()[s];
    switch (model.family()) {
        case Family::Gmm: {
            const auto& g = model.as_gmm();
            for (int s = 0; s < L.m; ++s) {
                flat.values.segment(L.mean_offset(s), L.p) = g.means[s];
                put_vech(flat.values, L.cov_offset(s), g.covariances[s]);
            }
            break;
        }
        case Family::Ppca: put_ppca(flat.values, L, 0, model.as_ppca()); break;
        case Family::MixPpca: {
            const auto& mp = model.as_mix_ppca();
            for (int s = 0; s < L.m; ++s) put_ppca(flat.values, L, s, mp.components[s]);
            break;
        }
    }
    return flat;
}

Model unflatten(const FlatParams& flat) {
    const Layout& L = flat.layout;
    if (flat.values.size() != L.dim()) {
        fail(ErrorKind::InvalidInput, "flat vector length does not match layout " + L.describe());
    }
    if (!flat.values.allFinite()) fail(ErrorKind::DegenerateParameter, "flat parameters are not finite");
    switch (L.family) {
        case Family::Gmm: {
            GmmParams g;
            g.weights = get_weights(flat.values, L.m);
            for (int s = 0; s < L.m; ++s) {
                g.means.push_back(flat.values.segment(L.mean_offset(s), L.p));
                g.covariances.push_back(get_vech(flat.values, L.cov_offset(s), L.p));
            }
            return Model::gmm(std::move(g));
        }
        case Family::Ppca: return Model::ppca(get_ppca(flat.values, L, 0));
        case Family::MixPpca: {
            MixPpcaParams mp;
            mp.weights = get_weights(flat.values, L.m);
            for (int s = 0; s < L.m; ++s) mp.components.push_back(get_ppca(flat.values, L, s));
            return Model::mix_ppca(std::move(mp));
        }
    }
    fail(ErrorKind::InvalidInput, "unknown family");
}

}  // namespace klfuse
