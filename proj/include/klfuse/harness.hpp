#pragma once

#include "klfuse/estimators.hpp"
#include "klfuse/fitting.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace klfuse {

enum class EstimatorKind { Global, Linear, MatchedLinear, KlNaive, KlControl, KlWeighted };

const char* to_string(EstimatorKind kind);
std::optional<EstimatorKind> estimator_from_string(const std::string& name);
const std::vector<EstimatorKind>& all_estimators();

struct TruthSpec {
    Family family = Family::Gmm;
    int p = 3;
    int m = 1;
    int q = 0;
    std::optional<Model> explicit_model;
};

// When bic_max_m > 0, locals (and the global fit) choose m by BIC and the
// pooled fits use the most common local m.
struct CsvSource {
    std::string path;
    bool header = false;
    std::optional<int> label_column;
};

enum class SweepAxis { None, N, D, NBoot, Alpha };
const char* to_string(SweepAxis axis);

struct ExperimentConfig {
    TruthSpec model;
    int bic_max_m = 0;
    std::optional<CsvSource> data;

    Eigen::Index N = 0;
    int d = 1;
    std::optional<Eigen::Index> n;        // bootstrap rows per machine
    std::optional<Eigen::Index> n_total;  // n = n_total / d
    std::optional<double> alpha;          // n = floor((N/d)^alpha)

    SweepAxis axis = SweepAxis::None;
    std::vector<double> axis_values;

    std::vector<EstimatorKind> estimators;
    int trials = 1;
    std::uint64_t master_seed = 0;
    FitConfig fit;
    Eigen::Index holdout_size = 1000;
    bool match_components = true;
    std::optional<double> max_log_ratio;
    bool record_wallclock = false;
};

struct SweepPoint {
    Eigen::Index N = 0;
    int d = 1;
    Eigen::Index n = 0;
};

// Validation problems as "field.path: message"; empty when valid.
std::vector<std::string> validate(const ExperimentConfig& config);
std::vector<SweepPoint> sweep_points(const ExperimentConfig& config);

enum class Status { Ok, NotApplicable, Failed };

struct TrialRecord {
    std::string estimator;
    Eigen::Index N = 0;
    int d = 1;
    Eigen::Index n = 0;
    int trial = 0;
    std::uint64_t seed = 0;
    Status status = Status::Ok;
    std::string reason;
    std::optional<double> mse;
    std::optional<double> test_loglik;
    std::optional<int> selected_m;
    std::int64_t wallclock_ms = 0;

    bool operator==(const TrialRecord&) const = default;
};

// Means on a sphere of radius 5 sqrt(p) (redrawn until every pair of
// components has symmetric KL >= 4), covariances I + E with symmetric E of
// spectral norm <= 0.3, weights Dirichlet(5, ..., 5). PPCA: mean ~ N(0, I),
// W_ij ~ N(0, 1/q), sigma^2 = 0.5; mixtures of PPCA place component means like
// the Gmm case.
Model generate_true_model(const TruthSpec& spec, std::uint64_t seed);

// Random disjoint equal split; the row order is a seeded permutation.
std::vector<Dataset> partition(const Dataset& data, int d, std::uint64_t seed);

// Every sweep point for one trial.
std::vector<TrialRecord> run_trial(const ExperimentConfig& config, int trial_index);

// All trials, ordered by (trial, sweep point, estimator).
std::vector<TrialRecord> run_sweep(const ExperimentConfig& config);

enum class XField { NBoot, D, N };
const char* to_string(XField field);

struct LoglogFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    int points = 0;
};

// OLS of ln(mean mse) on ln(x) over ok records with an mse.
LoglogFit fit_loglog_slope(const std::vector<TrialRecord>& records, XField x_field);

struct CsvSchema {
    bool header = false;
    std::optional<int> label_column;  // dropped
    std::optional<int> dim;           // expected feature count
};

Dataset ingest_csv(const std::string& path, const CsvSchema& schema);

}  // namespace klfuse
