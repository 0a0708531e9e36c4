#pragma once

#include "klfuse/model.hpp"

#include <vector>

namespace klfuse::kernels {

// Row loops over a dataset. Each kernel has two implementations with the same
// signature:
//
//   serial::   straightforward sequential loops; the reference the tests
//              compare against.
//   parallel:: OpenMP over fixed blocks of kReduceBlock rows. Reductions
//              combine per-block partials in block order, so results are
//              bit-identical for any thread count (they differ from serial::
//              only by summation order).
//
// The library calls parallel:: everywhere.

inline constexpr Eigen::Index kReduceBlock = 1024;

struct EStep {
    RowMatrix responsibilities;  // N x m, rows sum to one
    Vector log_density;          // per row
    double weighted_loglik = 0.0;  // sum_j w_j log p(x_j)
};

struct ComponentStats {
    double mass = 0.0;  // sum_j w_j r_js
    Vector mean;
    Matrix scatter;  // sum_j w_j r_js (x_j - mean)(x_j - mean)^T
};

namespace serial {

Vector log_density_rows(const Model& model, const RowMatrix& rows);
// weights may be empty (all ones).
EStep e_step(const Model& model, const RowMatrix& rows, const Vector& weights);
std::vector<ComponentStats> component_stats(const RowMatrix& rows, const Vector& weights,
                                            const RowMatrix& responsibilities);
// sum_j score_j score_j^T
Matrix score_outer_sum(const Model& model, const RowMatrix& rows);

}  // namespace serial

namespace parallel {

Vector log_density_rows(const Model& model, const RowMatrix& rows);
EStep e_step(const Model& model, const RowMatrix& rows, const Vector& weights);
std::vector<ComponentStats> component_stats(const RowMatrix& rows, const Vector& weights,
                                            const RowMatrix& responsibilities);
Matrix score_outer_sum(const Model& model, const RowMatrix& rows);

}  // namespace parallel

}  // namespace klfuse::kernels
