#include "klfuse/io.hpp"

#include "klfuse/error.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace klfuse {

using nlohmann::json;

namespace {

json vector_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vector_json(m.row(i).transpose()));
    return rows;
}

Vector vector_from(const json& j, const std::string& field) {
    if (!j.is_array()) fail(ErrorKind::Parse, field + ": expected an array of numbers");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) fail(ErrorKind::Parse, field + "[" + std::to_string(i) + "]: expected a number");
        v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    return v;
}

Matrix matrix_from(const json& j, const std::string& field) {
    if (!j.is_array() || j.empty()) fail(ErrorKind::Parse, field + ": expected a non-empty array of rows");
    const Vector first = vector_from(j[0], field + "[0]");
    Matrix m(static_cast<Eigen::Index>(j.size()), first.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        const Vector row = vector_from(j[i], field + "[" + std::to_string(i) + "]");
        if (row.size() != first.size()) fail(ErrorKind::Parse, field + ": rows have different lengths");
        m.row(static_cast<Eigen::Index>(i)) = row.transpose();
    }
    return m;
}

json ppca_json(const PpcaParams& c) {
    return json{{"mean", vector_json(c.mean)}, {"loading", matrix_json(c.loading)}, {"noise_var", c.noise_var}};
}

PpcaParams ppca_from(const json& j, const std::string& field) {
    if (!j.is_object()) fail(ErrorKind::Parse, field + ": expected an object");
    PpcaParams c;
    c.mean = vector_from(j.value("mean", json()), field + ".mean");
    c.loading = matrix_from(j.value("loading", json()), field + ".loading");
    if (!j.contains("noise_var") || !j["noise_var"].is_number()) fail(ErrorKind::Parse, field + ".noise_var: expected a number");
    c.noise_var = j["noise_var"].get<double>();
    return c;
}

}  // namespace

json model_to_json(const Model& model) {
    json out{{"family", to_string(model.family())}};
    switch (model.family()) {
        case Family::Gmm: {
            const auto& g = model.as_gmm();
            out["weights"] = vector_json(g.weights);
            out["means"] = json::array();
            out["covariances"] = json::array();
            for (int s = 0; s < model.components(); ++s) {
                out["means"].push_back(vector_json(g.means[s]));
                out["covariances"].push_back(matrix_json(g.covariances[s]));
            }
            break;
        }
        case Family::Ppca: out.update(ppca_json(model.as_ppca())); break;
        case Family::MixPpca: {
            const auto& mp = model.as_mix_ppca();
            out["weights"] = vector_json(mp.weights);
            out["components"] = json::array();
            for (const auto& c : mp.components) out["components"].push_back(ppca_json(c));
            break;
        }
    }
    return out;
}

Model model_from_json(const json& j) {
    if (!j.is_object() || !j.contains("family") || !j["family"].is_string()) {
        fail(ErrorKind::Parse, "model.truth.family: expected a string");
    }
    const Family family = family_from_string(j["family"].get<std::string>());
    switch (family) {
        case Family::Gmm: {
            GmmParams g;
            g.weights = vector_from(j.value("weights", json()), "model.truth.weights");
            const json means = j.value("means", json());
            const json covs = j.value("covariances", json());
            if (!means.is_array() || !covs.is_array()) fail(ErrorKind::Parse, "model.truth: means and covariances must be arrays");
            for (std::size_t s = 0; s < means.size(); ++s) g.means.push_back(vector_from(means[s], "model.truth.means"));
            for (std::size_t s = 0; s < covs.size(); ++s) g.covariances.push_back(matrix_from(covs[s], "model.truth.covariances"));
            return Model::gmm(std::move(g));
        }
        case Family::Ppca: return Model::ppca(ppca_from(j, "model.truth"));
        case Family::MixPpca: {
            MixPpcaParams mp;
            mp.weights = vector_from(j.value("weights", json()), "model.truth.weights");
            const json comps = j.value("components", json());
            if (!comps.is_array()) fail(ErrorKind::Parse, "model.truth.components: expected an array");
            for (std::size_t s = 0; s < comps.size(); ++s) {
                mp.components.push_back(ppca_from(comps[s], "model.truth.components[" + std::to_string(s) + "]"));
            }
            return Model::mix_ppca(std::move(mp));
        }
    }
    fail(ErrorKind::Parse, "model.truth: unknown family");
}

namespace {

class Reader {
public:
    explicit Reader(std::vector<std::string>& problems) : problems_(problems) {}

    void unknown_keys(const json& obj, const std::string& prefix, const std::set<std::string>& known) {
        for (const auto& [key, value] : obj.items()) {
            if (!known.count(key)) problems_.push_back(prefix + key + ": unknown field");
        }
    }

    template <typename T>
    std::optional<T> integer(const json& obj, const std::string& key, const std::string& path) {
        if (!obj.contains(key) || obj[key].is_null()) return std::nullopt;
        const json& v = obj[key];
        if (v.is_number_integer() || v.is_number_unsigned()) return v.get<T>();
        if (v.is_number_float()) {
            const double d = v.get<double>();
            if (d == std::floor(d) && std::abs(d) < 9.0e15) return static_cast<T>(d);
        }
        problems_.push_back(path + ": expected an integer");
        return std::nullopt;
    }

    std::optional<double> number(const json& obj, const std::string& key, const std::string& path) {
        if (!obj.contains(key) || obj[key].is_null()) return std::nullopt;
        if (obj[key].is_number()) return obj[key].get<double>();
        problems_.push_back(path + ": expected a number");
        return std::nullopt;
    }

    std::optional<bool> boolean(const json& obj, const std::string& key, const std::string& path) {
        if (!obj.contains(key) || obj[key].is_null()) return std::nullopt;
        if (obj[key].is_boolean()) return obj[key].get<bool>();
        problems_.push_back(path + ": expected true or false");
        return std::nullopt;
    }

    std::optional<std::string> string(const json& obj, const std::string& key, const std::string& path) {
        if (!obj.contains(key) || obj[key].is_null()) return std::nullopt;
        if (obj[key].is_string()) return obj[key].get<std::string>();
        problems_.push_back(path + ": expected a string");
        return std::nullopt;
    }

    void require(bool present, const std::string& path) {
        if (!present) problems_.push_back(path + ": required");
    }

private:
    std::vector<std::string>& problems_;
};

std::string join_problems(const std::vector<std::string>& problems) {
    std::string out = "invalid config:";
    for (const auto& p : problems) out += "\n  " + p;
    return out;
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
    std::vector<std::string> problems;
    Reader r(problems);
    ExperimentConfig c;
    if (!j.is_object()) fail(ErrorKind::Parse, "invalid config:\n  (root): expected a JSON object");
    r.unknown_keys(j, "", {"model", "data", "N", "d", "n", "n_total", "alpha", "sweep", "estimators", "trials",
                           "master_seed", "holdout_size", "fit", "match_components", "max_log_ratio",
                           "record_wallclock"});

    if (j.contains("model") && j["model"].is_object()) {
        const json& m = j["model"];
        r.unknown_keys(m, "model.", {"family", "p", "m", "q", "bic_max_m", "truth"});
        if (auto fam = r.string(m, "family", "model.family")) {
            if (*fam == "gmm" || *fam == "ppca" || *fam == "mix_ppca") c.model.family = family_from_string(*fam);
            else problems.push_back("model.family: unknown family '" + *fam + "' (valid: gmm, ppca, mix_ppca)");
        }
        c.model.p = r.integer<int>(m, "p", "model.p").value_or(c.model.p);
        c.model.m = r.integer<int>(m, "m", "model.m").value_or(c.model.m);
        c.model.q = r.integer<int>(m, "q", "model.q").value_or(c.model.q);
        c.bic_max_m = r.integer<int>(m, "bic_max_m", "model.bic_max_m").value_or(0);
        if (m.contains("truth") && !m["truth"].is_null()) {
            try {
                Model truth = model_from_json(m["truth"]);
                c.model.family = truth.family();
                c.model.p = truth.dim();
                c.model.m = truth.components();
                c.model.q = truth.latent_dim();
                c.model.explicit_model = std::move(truth);
            } catch (const Error& e) {
                problems.push_back(std::string(e.what()).rfind("model.truth", 0) == 0 ? e.what()
                                                                                       : "model.truth: " + std::string(e.what()));
            }
        }
    } else if (!j.contains("data")) {
        problems.push_back("model: required");
    }

    if (j.contains("data") && !j["data"].is_null()) {
        const json& dj = j["data"];
        if (!dj.is_object()) {
            problems.push_back("data: expected an object");
        } else {
            r.unknown_keys(dj, "data.", {"csv", "header", "label_column"});
            CsvSource src;
            auto path = r.string(dj, "csv", "data.csv");
            r.require(path.has_value(), "data.csv");
            src.path = path.value_or("");
            src.header = r.boolean(dj, "header", "data.header").value_or(false);
            src.label_column = r.integer<int>(dj, "label_column", "data.label_column");
            c.data = src;
        }
    }

    c.N = r.integer<Eigen::Index>(j, "N", "N").value_or(0);
    c.d = r.integer<int>(j, "d", "d").value_or(1);
    c.n = r.integer<Eigen::Index>(j, "n", "n");
    c.n_total = r.integer<Eigen::Index>(j, "n_total", "n_total");
    c.alpha = r.number(j, "alpha", "alpha");

    if (j.contains("sweep") && !j["sweep"].is_null()) {
        const json& s = j["sweep"];
        r.unknown_keys(s, "sweep.", {"axis", "values"});
        const auto axis = r.string(s, "axis", "sweep.axis");
        if (!axis) problems.push_back("sweep.axis: required");
        else if (*axis == "n") c.axis = SweepAxis::NBoot;
        else if (*axis == "d") c.axis = SweepAxis::D;
        else if (*axis == "N") c.axis = SweepAxis::N;
        else if (*axis == "alpha") c.axis = SweepAxis::Alpha;
        else problems.push_back("sweep.axis: unknown axis '" + *axis + "' (valid: n, d, N, alpha)");
        if (!s.contains("values") || !s["values"].is_array()) {
            problems.push_back("sweep.values: expected an array of numbers");
        } else {
            for (std::size_t i = 0; i < s["values"].size(); ++i) {
                if (s["values"][i].is_number()) c.axis_values.push_back(s["values"][i].get<double>());
                else problems.push_back("sweep.values[" + std::to_string(i) + "]: expected a number");
            }
        }
    }

    if (!j.contains("estimators") || !j["estimators"].is_array()) {
        problems.push_back("estimators: expected an array of estimator names");
    } else {
        for (std::size_t i = 0; i < j["estimators"].size(); ++i) {
            const json& e = j["estimators"][i];
            const auto kind = e.is_string() ? estimator_from_string(e.get<std::string>()) : std::nullopt;
            if (kind) {
                c.estimators.push_back(*kind);
            } else {
                std::string valid;
                for (auto k : all_estimators()) valid += (valid.empty() ? "" : ", ") + std::string(to_string(k));
                problems.push_back("estimators[" + std::to_string(i) + "]: unknown estimator " + e.dump() +
                                   " (valid: " + valid + ")");
            }
        }
    }

    c.trials = r.integer<int>(j, "trials", "trials").value_or(1);
    c.master_seed = r.integer<std::uint64_t>(j, "master_seed", "master_seed").value_or(0);
    c.holdout_size = r.integer<Eigen::Index>(j, "holdout_size", "holdout_size").value_or(c.holdout_size);
    if (j.contains("fit") && j["fit"].is_object()) {
        const json& f = j["fit"];
        r.unknown_keys(f, "fit.", {"max_iters", "rel_tol", "restarts", "ridge"});
        c.fit.max_iters = r.integer<int>(f, "max_iters", "fit.max_iters").value_or(c.fit.max_iters);
        c.fit.rel_tol = r.number(f, "rel_tol", "fit.rel_tol").value_or(c.fit.rel_tol);
        c.fit.restarts = r.integer<int>(f, "restarts", "fit.restarts").value_or(c.fit.restarts);
        c.fit.ridge = r.number(f, "ridge", "fit.ridge").value_or(c.fit.ridge);
    }
    c.match_components = r.boolean(j, "match_components", "match_components").value_or(true);
    c.max_log_ratio = r.number(j, "max_log_ratio", "max_log_ratio");
    c.record_wallclock = r.boolean(j, "record_wallclock", "record_wallclock").value_or(false);

    if (problems.empty()) problems = validate(c);
    if (!problems.empty()) fail(ErrorKind::Parse, join_problems(problems));
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Parse, path + ": cannot open config");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::Parse, path + ": " + e.what());
    }
    return parse_config(j);
}

std::string format_double(double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

std::string status_string(const TrialRecord& record) {
    switch (record.status) {
        case Status::Ok: return "ok";
        case Status::NotApplicable: return "not-applicable";
        case Status::Failed: return "failed(" + record.reason + ")";
    }
    return "unknown";
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

}  // namespace

void write_records_csv(std::ostream& out, const std::vector<TrialRecord>& records) {
    out << kRecordsHeader << '\n';
    for (const auto& r : records) {
        out << csv_field(r.estimator) << ',' << r.N << ',' << r.d << ',' << r.n << ',' << r.trial << ',' << r.seed << ','
            << csv_field(status_string(r)) << ',' << (r.mse ? format_double(*r.mse) : "") << ','
            << (r.test_loglik ? format_double(*r.test_loglik) : "") << ','
            << (r.selected_m ? std::to_string(*r.selected_m) : "") << ',' << r.wallclock_ms << '\n';
    }
}

std::vector<TrialRecord> read_records_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Parse, path + ": cannot open records");
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::Parse, path + ": empty file, expected header " + kRecordsHeader);
    const auto header = split_csv_line(line);
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < header.size(); ++i) index[header[i]] = i;
    std::string missing;
    for (const auto& name : split_csv_line(kRecordsHeader)) {
        if (!index.count(name)) missing += (missing.empty() ? "" : ", ") + name;
    }
    if (!missing.empty()) fail(ErrorKind::Parse, path + ": schema error, missing columns: " + missing);

    std::vector<TrialRecord> records;
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        if (f.size() != header.size()) {
            fail(ErrorKind::Parse, path + ": line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                                       " fields, found " + std::to_string(f.size()));
        }
        auto get = [&](const char* name) -> const std::string& { return f[index.at(name)]; };
        try {
            TrialRecord r;
            r.estimator = get("estimator");
            r.N = std::stoll(get("N"));
            r.d = std::stoi(get("d"));
            r.n = std::stoll(get("n"));
            r.trial = std::stoi(get("trial"));
            r.seed = std::stoull(get("seed"));
            const std::string& status = get("status");
            if (status == "ok") {
                r.status = Status::Ok;
            } else if (status == "not-applicable") {
                r.status = Status::NotApplicable;
            } else if (status.rfind("failed(", 0) == 0 && status.back() == ')') {
                r.status = Status::Failed;
                r.reason = status.substr(7, status.size() - 8);
            } else {
                throw std::invalid_argument("unknown status '" + status + "'");
            }
            if (!get("mse").empty()) r.mse = std::stod(get("mse"));
            if (!get("test_loglik").empty()) r.test_loglik = std::stod(get("test_loglik"));
            if (!get("selected_m").empty()) r.selected_m = std::stoi(get("selected_m"));
            r.wallclock_ms = std::stoll(get("wallclock_ms"));
            records.push_back(std::move(r));
        } catch (const std::logic_error& e) {
            fail(ErrorKind::Parse, path + ": line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

namespace {

std::vector<std::string> estimator_order(const std::vector<TrialRecord>& records) {
    std::vector<std::string> order;
    for (const auto& r : records) {
        if (std::find(order.begin(), order.end(), r.estimator) == order.end()) order.push_back(r.estimator);
    }
    return order;
}

XField pick_x_field(const std::vector<TrialRecord>& records) {
    std::set<Eigen::Index> ns, ds, Ns;
    for (const auto& r : records) {
        ns.insert(r.n);
        ds.insert(r.d);
        Ns.insert(r.N);
    }
    if (ds.size() > ns.size() && ds.size() >= Ns.size()) return XField::D;
    if (Ns.size() > ns.size() && Ns.size() > ds.size()) return XField::N;
    return XField::NBoot;
}

std::string line(const char* fmt, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, fmt, args...);
    return buf;
}

}  // namespace

std::string slopes_table(const std::vector<TrialRecord>& records, std::optional<XField> x_field) {
    if (records.empty()) fail(ErrorKind::InvalidInput, "no data: the records file has no data rows");
    const XField x = x_field.value_or(pick_x_field(records));
    std::string out = line("log-log slope of mean MSE against %s\n", to_string(x));
    out += line("%-16s %10s %12s %8s %7s\n", "estimator", "slope", "intercept", "r2", "points");
    for (const auto& name : estimator_order(records)) {
        std::vector<TrialRecord> mine;
        for (const auto& r : records) {
            if (r.estimator == name) mine.push_back(r);
        }
        try {
            const LoglogFit fit = fit_loglog_slope(mine, x);
            out += line("%-16s %10.3f %12.4f %8.4f %7d\n", name.c_str(), fit.slope, fit.intercept, fit.r2, fit.points);
        } catch (const Error&) {
            out += line("%-16s %10s %12s %8s %7s\n", name.c_str(), "n/a", "", "", "");
        }
    }
    return out;
}

std::string likelihood_table(const std::vector<TrialRecord>& records) {
    if (records.empty()) fail(ErrorKind::InvalidInput, "no data: the records file has no data rows");
    using Key = std::tuple<Eigen::Index, int, Eigen::Index>;
    std::map<std::pair<std::string, Key>, std::pair<double, int>> sums;
    for (const auto& r : records) {
        if (r.status != Status::Ok || !r.test_loglik) continue;
        auto& [sum, count] = sums[{r.estimator, Key{r.N, r.d, r.n}}];
        sum += *r.test_loglik;
        ++count;
    }
    std::string out = "mean holdout log-likelihood per point minus the global MLE's\n";
    out += line("%-16s %10s %5s %7s %7s %14s\n", "estimator", "N", "d", "n", "trials", "delta_loglik");
    std::set<Key> keys;
    for (const auto& [k, v] : sums) keys.insert(k.second);
    for (const auto& name : estimator_order(records)) {
        for (const auto& key : keys) {
            const auto it = sums.find({name, key});
            if (it == sums.end()) continue;
            const auto base = sums.find({"global", key});
            if (base == sums.end()) {
                fail(ErrorKind::InvalidInput, "likelihood table needs ok global records at N=" + std::to_string(std::get<0>(key)) +
                                                  " d=" + std::to_string(std::get<1>(key)) + " n=" + std::to_string(std::get<2>(key)));
            }
            const double delta = it->second.first / it->second.second - base->second.first / base->second.second;
            out += line("%-16s %10lld %5d %7lld %7d %14.6f\n", name.c_str(), static_cast<long long>(std::get<0>(key)),
                        std::get<1>(key), static_cast<long long>(std::get<2>(key)), it->second.second, delta);
        }
    }
    return out;
}

std::string content_hash(const std::string& bytes) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace klfuse
