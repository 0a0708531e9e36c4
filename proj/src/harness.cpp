#include "klfuse/harness.hpp"

#include "klfuse/density.hpp"
#include "klfuse/error.hpp"
#include "klfuse/matching.hpp"
#include "klfuse/seed.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>

namespace klfuse {

const char* to_string(EstimatorKind kind) {
    switch (kind) {
        case EstimatorKind::Global: return "global";
        case EstimatorKind::Linear: return "linear";
        case EstimatorKind::MatchedLinear: return "matched_linear";
        case EstimatorKind::KlNaive: return "kl_naive";
        case EstimatorKind::KlControl: return "kl_control";
        case EstimatorKind::KlWeighted: return "kl_weighted";
    }
    return "unknown";
}

const std::vector<EstimatorKind>& all_estimators() {
    static const std::vector<EstimatorKind> kinds = {EstimatorKind::Global,  EstimatorKind::Linear,
                                                     EstimatorKind::MatchedLinear, EstimatorKind::KlNaive,
                                                     EstimatorKind::KlControl, EstimatorKind::KlWeighted};
    return kinds;
}

std::optional<EstimatorKind> estimator_from_string(const std::string& name) {
    for (auto kind : all_estimators()) {
        if (name == to_string(kind)) return kind;
    }
    return std::nullopt;
}

const char* to_string(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::None: return "none";
        case SweepAxis::N: return "N";
        case SweepAxis::D: return "d";
        case SweepAxis::NBoot: return "n";
        case SweepAxis::Alpha: return "alpha";
    }
    return "unknown";
}

const char* to_string(XField field) {
    switch (field) {
        case XField::NBoot: return "n";
        case XField::D: return "d";
        case XField::N: return "N";
    }
    return "unknown";
}

namespace {

std::optional<Eigen::Index> resolve_n(const ExperimentConfig& config, Eigen::Index N, int d, std::string* problem) {
    if (config.n) return *config.n;
    if (config.n_total) {
        if (*config.n_total % d != 0) {
            if (problem) *problem = "n_total " + std::to_string(*config.n_total) + " is not divisible by d=" + std::to_string(d);
            return std::nullopt;
        }
        return *config.n_total / d;
    }
    if (config.alpha) return static_cast<Eigen::Index>(std::floor(std::pow(static_cast<double>(N) / d, *config.alpha)));
    if (problem) *problem = "one of n, n_total or alpha is required";
    return std::nullopt;
}

std::vector<SweepPoint> points_or_problems(const ExperimentConfig& config, std::vector<std::string>* problems) {
    std::vector<SweepPoint> points;
    auto add = [&](Eigen::Index N, int d, std::optional<Eigen::Index> n_fixed, const std::string& field) {
        std::string problem;
        std::optional<Eigen::Index> n = n_fixed;
        if (!n && d >= 1) n = resolve_n(config, N, d, &problem);
        if (d < 1) problem = "d must be >= 1";
        else if (!config.data && N % d != 0) problem = "N=" + std::to_string(N) + " is not divisible by d=" + std::to_string(d);
        else if (n && *n < 2) problem = "bootstrap size n=" + std::to_string(*n) + " must be >= 2";
        const bool divisibility = problem.rfind("N=", 0) == 0;
        if (!problem.empty() || !n) {
            if (problems) problems->push_back((divisibility && config.axis == SweepAxis::None ? std::string("N") : field) + ": " + (problem.empty() ? "invalid sweep point" : problem));
            return;
        }
        points.push_back(SweepPoint{N, d, *n});
    };
    auto as_index = [](double v) { return static_cast<Eigen::Index>(std::llround(v)); };
    switch (config.axis) {
        case SweepAxis::None: add(config.N, config.d, std::nullopt, "n"); break;
        case SweepAxis::N:
            for (double v : config.axis_values) add(as_index(v), config.d, std::nullopt, "sweep.values");
            break;
        case SweepAxis::D:
            for (double v : config.axis_values) add(config.N, static_cast<int>(as_index(v)), std::nullopt, "sweep.values");
            break;
        case SweepAxis::NBoot:
            for (double v : config.axis_values) add(config.N, config.d, as_index(v), "sweep.values");
            break;
        case SweepAxis::Alpha:
            for (double v : config.axis_values) {
                const Eigen::Index n = config.d >= 1
                                           ? static_cast<Eigen::Index>(std::floor(std::pow(static_cast<double>(config.N) / config.d, v)))
                                           : 0;
                add(config.N, config.d, n, "sweep.values");
            }
            break;
    }
    return points;
}

}  // namespace

std::vector<std::string> validate(const ExperimentConfig& config) {
    std::vector<std::string> problems;
    const auto& spec = config.model;
    if (!config.data) {
        if (spec.p < 1) problems.push_back("model.p: must be >= 1");
        if (spec.m < 1) problems.push_back("model.m: must be >= 1");
        if (spec.family == Family::Ppca && spec.m != 1) problems.push_back("model.m: a single PPCA has m = 1");
        if (spec.family != Family::Gmm && (spec.q < 1 || spec.q >= spec.p)) {
            problems.push_back("model.q: must satisfy 1 <= q < p");
        }
        if (config.N < 1 && config.axis != SweepAxis::N) problems.push_back("N: must be >= 1");
    } else if (config.axis == SweepAxis::N) {
        problems.push_back("sweep.axis: N cannot be swept when data comes from a CSV file");
    }
    if (config.bic_max_m < 0) problems.push_back("model.bic_max_m: must be >= 0");
    if (config.trials < 1) problems.push_back("trials: must be >= 1");
    if (config.holdout_size < 1) problems.push_back("holdout_size: must be >= 1");
    if (config.fit.max_iters < 1) problems.push_back("fit.max_iters: must be >= 1");
    if (!(config.fit.rel_tol > 0.0)) problems.push_back("fit.rel_tol: must be > 0");
    if (config.fit.restarts < 1) problems.push_back("fit.restarts: must be >= 1");
    if (!(config.fit.ridge >= 0.0)) problems.push_back("fit.ridge: must be >= 0");
    if (config.axis != SweepAxis::None && config.axis_values.empty()) problems.push_back("sweep.values: must not be empty");
    const int fixed = (config.n ? 1 : 0) + (config.n_total ? 1 : 0) + (config.alpha ? 1 : 0);
    if (fixed > 1) problems.push_back("n: give only one of n, n_total, alpha");
    if (config.n && config.axis == SweepAxis::NBoot) problems.push_back("n: fixed n conflicts with sweeping n");
    if (config.data && config.alpha) problems.push_back("alpha: needs a synthetic N");
    if (problems.empty()) points_or_problems(config, &problems);
    return problems;
}

std::vector<SweepPoint> sweep_points(const ExperimentConfig& config) {
    std::vector<std::string> problems;
    auto points = points_or_problems(config, &problems);
    if (!problems.empty()) fail(ErrorKind::InvalidInput, problems.front());
    return points;
}

Model generate_true_model(const TruthSpec& spec, std::uint64_t seed) {
    if (spec.explicit_model) return *spec.explicit_model;
    const int p = spec.p;
    const int m = spec.family == Family::Ppca ? 1 : spec.m;
    if (p < 1 || m < 1) fail(ErrorKind::InvalidInput, "true model needs p >= 1 and m >= 1");
    if (spec.family != Family::Gmm && (spec.q < 1 || spec.q >= p)) {
        fail(ErrorKind::InvalidInput, "true PPCA model needs 1 <= q < p");
    }
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Vector weights(m);
    if (m == 1) {
        weights[0] = 1.0;
    } else {
        std::gamma_distribution<double> gamma(5.0, 1.0);
        for (int s = 0; s < m; ++s) weights[s] = gamma(rng);
        weights /= weights.sum();
    }

    auto random_vector = [&](int size, double scale) {
        Vector v(size);
        for (int i = 0; i < size; ++i) v[i] = scale * normal(rng);
        return v;
    };
    auto sphere_point = [&] {
        Vector v = random_vector(p, 1.0);
        while (v.norm() == 0.0) v = random_vector(p, 1.0);
        return Vector(5.0 * std::sqrt(static_cast<double>(p)) * v / v.norm());
    };
    auto perturbed_identity = [&] {
        Matrix a(p, p);
        for (int i = 0; i < p; ++i) {
            for (int j = i; j < p; ++j) a(i, j) = a(j, i) = normal(rng);
        }
        const double norm = Eigen::SelfAdjointEigenSolver<Matrix>(a, Eigen::EigenvaluesOnly).eigenvalues().cwiseAbs().maxCoeff();
        Matrix cov = Matrix::Identity(p, p);
        if (norm > 0.0) cov += (0.3 * unit(rng) / norm) * a;
        return cov;
    };
    auto ppca_component = [&](Vector mean) {
        PpcaParams c;
        c.mean = std::move(mean);
        c.loading.resize(p, spec.q);
        for (int i = 0; i < p; ++i) {
            for (int j = 0; j < spec.q; ++j) c.loading(i, j) = normal(rng) / std::sqrt(static_cast<double>(spec.q));
        }
        c.noise_var = 0.5;
        return c;
    };
    auto separated = [](const Model& model) {
        const auto& gs = model.gaussians();
        for (std::size_t a = 0; a < gs.size(); ++a) {
            for (std::size_t b = a + 1; b < gs.size(); ++b) {
                if (symmetric_kl(gs[a], gs[b]) < 4.0) return false;
            }
        }
        return true;
    };

    constexpr int kMaxAttempts = 1000;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        switch (spec.family) {
            case Family::Ppca: return Model::ppca(ppca_component(random_vector(p, 1.0)));
            case Family::Gmm: {
                GmmParams g;
                g.weights = weights;
                for (int s = 0; s < m; ++s) {
                    g.means.push_back(sphere_point());
                    g.covariances.push_back(perturbed_identity());
                }
                Model model = Model::gmm(std::move(g));
                if (separated(model)) return model;
                break;
            }
            case Family::MixPpca: {
                MixPpcaParams mp;
                mp.weights = weights;
                for (int s = 0; s < m; ++s) mp.components.push_back(ppca_component(sphere_point()));
                Model model = Model::mix_ppca(std::move(mp));
                if (separated(model)) return model;
                break;
            }
        }
    }
    fail(ErrorKind::InvalidInput, "could not generate " + std::to_string(m) +
                                      " separated components; p is too small for this m");
}

std::vector<Dataset> partition(const Dataset& data, int d, std::uint64_t seed) {
    if (d < 1 || data.size() % d != 0) {
        fail(ErrorKind::InvalidInput, "cannot split " + std::to_string(data.size()) + " rows into " + std::to_string(d) +
                                          " equal shards");
    }
    std::vector<Eigen::Index> order(data.size());
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const Eigen::Index size = data.size() / d;
    std::vector<Dataset> shards;
    for (int k = 0; k < d; ++k) {
        RowMatrix rows(size, data.dim());
        for (Eigen::Index i = 0; i < size; ++i) rows.row(i) = data.row(order[k * size + i]);
        shards.emplace_back(std::move(rows));
    }
    return shards;
}

namespace {

// Lazily computed stage whose failure is remembered and replayed to every
// estimator that depends on it.
template <typename T>
class Stage {
public:
    const T& get(const std::function<T()>& compute) {
        if (!done_) {
            done_ = true;
            try {
                value_ = compute();
            } catch (...) {
                error_ = std::current_exception();
            }
        }
        if (error_) std::rethrow_exception(error_);
        return *value_;
    }

private:
    bool done_ = false;
    std::optional<T> value_;
    std::exception_ptr error_;
};

struct Shards {
    std::vector<Dataset> parts;
    Stage<LocalEnsemble> ensemble;
    Stage<Model> global;
};

bool is_ppca_family(Family family) { return family != Family::Gmm; }

ModelSpec fusion_spec(const ExperimentConfig& config, const LocalEnsemble& ensemble) {
    ModelSpec spec{config.model.family, config.model.m, config.model.q};
    if (config.bic_max_m > 0) {
        std::map<int, int> counts;
        for (const auto& local : ensemble.locals) ++counts[local.components()];
        int best = 0;
        for (const auto& [m, count] : counts) {
            if (count > best) {
                best = count;
                spec.m = m;
            }
        }
    }
    return spec;
}

LocalEnsemble fit_locals(const ExperimentConfig& config, const std::vector<Dataset>& parts, std::uint64_t seed) {
    const int d = static_cast<int>(parts.size());
    LocalEnsemble ensemble;
    std::vector<std::optional<Model>> fitted(d);
    std::vector<std::exception_ptr> errors(d);
    const ModelSpec spec{config.model.family, config.model.m, config.model.q};
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < d; ++k) {
        try {
            const std::uint64_t s = derive(seed, static_cast<std::uint64_t>(k));
            fitted[k] = config.bic_max_m > 0
                            ? select_components(parts[k], spec.family, spec.q, config.bic_max_m, config.fit, s).model
                            : fit_mle(WeightedDataset::uniform(parts[k]), spec, config.fit, s).model;
        } catch (...) {
            errors[k] = std::current_exception();
        }
    }
    for (int k = 0; k < d; ++k) {
        if (!errors[k]) continue;
        try {
            std::rethrow_exception(errors[k]);
        } catch (const Error& e) {
            fail(e.kind(), "local fit on machine " + std::to_string(k) + ": " + e.what());
        }
    }
    for (int k = 0; k < d; ++k) {
        ensemble.locals.push_back(std::move(*fitted[k]));
        ensemble.shard_sizes.push_back(parts[k].size());
    }
    return ensemble;
}

std::string single_line(std::string text) {
    for (char& c : text) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return text;
}

struct TrialInputs {
    std::optional<Model> truth;
    Dataset source;  // synthetic draw of max N, or CSV rows after the holdout split
    Dataset holdout;
};

TrialInputs trial_inputs(const ExperimentConfig& config, int trial_index, Eigen::Index max_N) {
    TrialInputs in;
    const auto master = config.master_seed;
    const auto t = static_cast<std::uint64_t>(trial_index);
    if (config.data) {
        const Dataset all = ingest_csv(config.data->path, CsvSchema{config.data->header, config.data->label_column, std::nullopt});
        if (all.size() <= config.holdout_size) fail(ErrorKind::InvalidInput, "CSV has too few rows for the holdout");
        std::vector<Eigen::Index> order(all.size());
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        Rng rng(stage_seed(master, t, "split"));
        std::shuffle(order.begin(), order.end(), rng);
        RowMatrix hold(config.holdout_size, all.dim());
        RowMatrix rest(all.size() - config.holdout_size, all.dim());
        for (Eigen::Index i = 0; i < all.size(); ++i) {
            if (i < config.holdout_size) hold.row(i) = all.row(order[i]);
            else rest.row(i - config.holdout_size) = all.row(order[i]);
        }
        in.holdout = Dataset(std::move(hold));
        in.source = Dataset(std::move(rest));
        return in;
    }
    in.truth = generate_true_model(config.model, stage_seed(master, t, "truth"));
    in.holdout = sample(*in.truth, config.holdout_size, stage_seed(master, t, "holdout"));
    in.source = sample(*in.truth, max_N, stage_seed(master, t, "data"));
    return in;
}

}  // namespace

std::vector<TrialRecord> run_trial(const ExperimentConfig& config, int trial_index) {
    ExperimentConfig cfg = config;
    if (const auto env = std::getenv("KLFUSE_SEED_OVERRIDE"); env && *env) cfg.master_seed = std::stoull(env);
    std::vector<SweepPoint> points;
    TrialInputs inputs;
    if (cfg.data) {
        // N is whatever the file provides after the holdout, truncated to a
        // multiple of each d.
        cfg.N = 1;
        inputs = trial_inputs(cfg, trial_index, 0);
        for (SweepPoint point : sweep_points(cfg)) {
            point.N = (inputs.source.size() / point.d) * point.d;
            if (point.N < point.d) fail(ErrorKind::InvalidInput, "CSV has fewer rows than machines");
            points.push_back(point);
        }
    } else {
        points = sweep_points(cfg);
        Eigen::Index max_N = 0;
        for (const auto& point : points) max_N = std::max(max_N, point.N);
        inputs = trial_inputs(cfg, trial_index, max_N);
    }

    const auto master = cfg.master_seed;
    const auto t = static_cast<std::uint64_t>(trial_index);
    const std::uint64_t tseed = trial_seed(master, t);
    const ModelSpec base_spec{cfg.model.family, cfg.model.m, cfg.model.q};

    std::map<std::pair<Eigen::Index, int>, Shards> shard_cache;
    std::vector<TrialRecord> records;
    for (const auto& point : points) {
        auto [it, inserted] = shard_cache.try_emplace({point.N, point.d});
        Shards& shards = it->second;
        if (inserted) {
            shards.parts = partition(Dataset(inputs.source.rows().topRows(point.N)), point.d,
                                     stage_seed(master, t, "partition"));
        }
        auto ensemble = [&]() -> const LocalEnsemble& {
            return shards.ensemble.get([&] { return fit_locals(cfg, shards.parts, stage_seed(master, t, "local")); });
        };
        Stage<BootstrapSet> samples;
        Stage<BootstrapSet> refitted;
        Stage<Model> naive;
        auto boot_samples = [&]() -> const BootstrapSet& {
            return samples.get(
                [&] { return draw_bootstrap_samples(ensemble(), point.n, stage_seed(master, t, "bootstrap")); });
        };
        auto bootstrap = [&]() -> const BootstrapSet& {
            return refitted.get([&] {
                BootstrapSet boot = boot_samples();
                refit_bootstrap(boot, ensemble(), cfg.fit);
                return boot;
            });
        };
        auto naive_model = [&]() -> const Model& {
            return naive.get([&] {
                return kl_naive(ensemble(), boot_samples(), fusion_spec(cfg, ensemble()), cfg.fit,
                                stage_seed(master, t, "kl_naive"));
            });
        };

        for (const auto kind : cfg.estimators) {
            TrialRecord rec;
            rec.estimator = to_string(kind);
            rec.N = point.N;
            rec.d = point.d;
            rec.n = point.n;
            rec.trial = trial_index;
            rec.seed = tseed;
            const auto start = std::chrono::steady_clock::now();
            try {
                const bool linear_kind = kind == EstimatorKind::Linear || kind == EstimatorKind::MatchedLinear ||
                                         kind == EstimatorKind::KlControl;
                if (linear_kind && is_ppca_family(cfg.model.family)) {
                    fail(ErrorKind::NotApplicable, "linear combination of PPCA loadings is not identifiable");
                }
                const Model result = [&]() -> Model {
                    switch (kind) {
                        case EstimatorKind::Global:
                            return shards.global.get([&] {
                                const auto seed = stage_seed(master, t, "global");
                                if (cfg.bic_max_m > 0) {
                                    return select_components(Dataset::concat(shards.parts), base_spec.family, base_spec.q,
                                                             cfg.bic_max_m, cfg.fit, seed).model;
                                }
                                return fit_global_mle(shards.parts, base_spec, cfg.fit, seed).model;
                            });
                        case EstimatorKind::Linear: return linear_average(ensemble());
                        case EstimatorKind::MatchedLinear:
                            if (!cfg.match_components && ensemble().locals.front().components() > 1) {
                                fail(ErrorKind::NotApplicable, "component matching is disabled");
                            }
                            return matched_linear_average(ensemble());
                        case EstimatorKind::KlNaive: return naive_model();
                        case EstimatorKind::KlControl:
                            return kl_control(ensemble(), bootstrap(), naive_model(), ControlOptions{cfg.match_components});
                        case EstimatorKind::KlWeighted:
                            return kl_weighted(ensemble(), bootstrap(), fusion_spec(cfg, ensemble()), cfg.fit,
                                               stage_seed(master, t, "kl_weighted"), WeightOptions{cfg.max_log_ratio});
                    }
                    fail(ErrorKind::InvalidInput, "unknown estimator");
                }();
                rec.selected_m = result.components();
                rec.test_loglik = loglik(result, inputs.holdout) / static_cast<double>(inputs.holdout.size());
                if (inputs.truth) {
                    try {
                        rec.mse = param_mse(result, *inputs.truth);
                    } catch (const Error& e) {
                        if (e.kind() != ErrorKind::NotApplicable) throw;
                    }
                }
                rec.status = Status::Ok;
            } catch (const Error& e) {
                rec.mse.reset();
                rec.test_loglik.reset();
                rec.selected_m.reset();
                rec.status = e.kind() == ErrorKind::NotApplicable ? Status::NotApplicable : Status::Failed;
                rec.reason = single_line(e.what());
            } catch (const std::exception& e) {
                rec.mse.reset();
                rec.test_loglik.reset();
                rec.selected_m.reset();
                rec.status = Status::Failed;
                rec.reason = single_line(e.what());
            }
            if (cfg.record_wallclock) {
                rec.wallclock_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                       std::chrono::steady_clock::now() - start).count();
            }
            records.push_back(std::move(rec));
        }
    }
    return records;
}

std::vector<TrialRecord> run_sweep(const ExperimentConfig& config) {
    if (const auto problems = validate(config); !problems.empty()) fail(ErrorKind::InvalidInput, problems.front());
    std::vector<std::vector<TrialRecord>> per_trial(config.trials);
    std::vector<std::exception_ptr> errors(config.trials);
#pragma omp parallel for schedule(dynamic)
    for (int t = 0; t < config.trials; ++t) {
        try {
            per_trial[t] = run_trial(config, t);
        } catch (...) {
            errors[t] = std::current_exception();
        }
    }
    for (const auto& error : errors) {
        if (error) std::rethrow_exception(error);
    }
    std::vector<TrialRecord> records;
    for (auto& trial : per_trial) {
        for (auto& rec : trial) records.push_back(std::move(rec));
    }
    return records;
}

LoglogFit fit_loglog_slope(const std::vector<TrialRecord>& records, XField x_field) {
    std::map<double, std::pair<double, int>> sums;
    for (const auto& rec : records) {
        if (rec.status != Status::Ok || !rec.mse) continue;
        const double x = x_field == XField::NBoot ? static_cast<double>(rec.n)
                         : x_field == XField::D   ? static_cast<double>(rec.d)
                                                  : static_cast<double>(rec.N);
        auto& [sum, count] = sums[x];
        sum += *rec.mse;
        ++count;
    }
    std::vector<double> xs;
    std::vector<double> ys;
    for (const auto& [x, acc] : sums) {
        const double mean = acc.first / acc.second;
        if (x > 0.0 && mean > 0.0) {
            xs.push_back(std::log(x));
            ys.push_back(std::log(mean));
        }
    }
    if (xs.size() < 3) {
        fail(ErrorKind::InvalidInput, "log-log slope needs at least 3 distinct x values with positive mean MSE, got " +
                                          std::to_string(xs.size()));
    }
    const double k = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / k;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / k;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    LoglogFit fit;
    fit.points = static_cast<int>(xs.size());
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double r = ys[i] - (fit.intercept + fit.slope * xs[i]);
        ss_res += r * r;
    }
    fit.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
    return fit;
}

}  // namespace klfuse
