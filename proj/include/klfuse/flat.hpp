#pragma once

#include "klfuse/model.hpp"

#include <string>
#include <vector>

namespace klfuse {

// Coordinates used by every linear operation on parameters (averaging,
// control-variate corrections, Fisher algebra):
//
//   Gmm     [alpha_1 .. alpha_{m-1}] [mu_1 .. mu_m] [vech(Sigma_1) .. vech(Sigma_m)]
//   Ppca    [mu] [W column-major] [sigma^2]
//   MixPpca [alpha_1 .. alpha_{m-1}] then per component [mu_s] [W_s column-major] [sigma^2_s]
//
// vech is the row-major upper triangle (i <= j); off-diagonal entries are
// stored once and unscaled. The last mixture weight is implied by sum-to-one.
struct Layout {
    Family family = Family::Gmm;
    int m = 1;
    int p = 1;
    int q = 0;

    int dim() const;
    int weights_offset() const { return 0; }
    int mean_offset(int s) const;
    int cov_offset(int s) const;       // Gmm only
    int loading_offset(int s) const;   // Ppca / MixPpca
    int noise_offset(int s) const;     // Ppca / MixPpca

    bool operator==(const Layout&) const = default;
    std::string describe() const;
};

struct FlatParams {
    Vector values;
    Layout layout;
};

Layout layout_of(const Model& model);
FlatParams flatten(const Model& model);
// Rebuilds a model; covariance blocks are symmetric by construction. Throws
// DegenerateParameter when a block is not positive definite or an implied
// mixture weight is not positive.
Model unflatten(const FlatParams& flat);
int param_count(const Model& model);

// Throws NotApplicable when the layouts differ.
void require_same_layout(const Layout& a, const Layout& b);

int vech_size(int p);

}  // namespace klfuse
