#include "klfuse/error.hpp"
#include "klfuse/io.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace klfuse;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Parse, path + ": cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << bytes;
    out.close();
    if (!out) fail(ErrorKind::InvalidInput, path.string() + ": write failed");
}

int cmd_run(const std::string& config_path, const std::string& out_path) {
    const std::string config_bytes = read_file(config_path);
    const ExperimentConfig config = load_config(config_path);

    const fs::path out(out_path);
    const fs::path manifest_path(out_path + ".manifest.json");
    const fs::path tmp(out_path + ".tmp");
    try {
        const std::vector<TrialRecord> records = run_sweep(config);
        std::ostringstream csv;
        write_records_csv(csv, records);
        write_file(tmp, csv.str());
        fs::rename(tmp, out);

        nlohmann::ordered_json manifest{{"config_path", config_path},
                                        {"output_path", out_path},
                                        {"records_written", records.size()},
                                        {"tool_version", kToolVersion},
                                        {"config_hash", content_hash(config_bytes)}};
        write_file(manifest_path, manifest.dump(2) + "\n");

        std::size_t ok = 0, na = 0, failed = 0;
        for (const auto& r : records) {
            if (r.status == Status::Ok) ++ok;
            else if (r.status == Status::NotApplicable) ++na;
            else ++failed;
        }
        std::cerr << "wrote " << records.size() << " records to " << out_path << " (" << ok << " ok, " << na
                  << " not-applicable, " << failed << " failed)\n";
        return failed == 0 ? 0 : 1;
    } catch (...) {
        std::error_code ec;
        fs::remove(tmp, ec);
        fs::remove(out, ec);
        fs::remove(manifest_path, ec);
        throw;
    }
}

int cmd_report(const std::string& in_path, const std::string& kind, const std::string& x) {
    const auto records = read_records_csv(in_path);
    if (kind == "slopes") {
        std::optional<XField> field;
        if (x == "n") field = XField::NBoot;
        else if (x == "d") field = XField::D;
        else if (x == "N") field = XField::N;
        std::cout << slopes_table(records, field);
    } else {
        std::cout << likelihood_table(records);
    }
    return 0;
}

int cmd_validate(const std::string& config_path) {
    const ExperimentConfig config = load_config(config_path);
    std::cout << "ok: " << sweep_points(config).size() << " sweep points, " << config.estimators.size()
              << " estimators, " << config.trials << " trials\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"One-shot distributed learning by KL-averaging: experiments and reports"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    std::string config_path, out_path, in_path, kind, x_field = "auto";
    int threads = 0;

    auto* run = app.add_subcommand("run", "Run an experiment config and write records as CSV");
    run->add_option("--config", config_path, "JSON experiment config")->required();
    run->add_option("--out", out_path, "Output CSV path")->required();
    run->add_option("--threads", threads, "Worker threads (default: all cores)")->check(CLI::PositiveNumber);

    auto* report = app.add_subcommand("report", "Summarize a records CSV");
    report->add_option("--in", in_path, "Records CSV from run")->required();
    report->add_option("--kind", kind, "Table kind")->required()->check(CLI::IsMember({"slopes", "likelihood_table"}));
    report->add_option("--x", x_field, "Slope regressor")->check(CLI::IsMember({"auto", "n", "d", "N"}));

    auto* validate_cmd = app.add_subcommand("validate", "Check a config without running it");
    validate_cmd->add_option("--config", config_path, "JSON experiment config")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (threads > 0) omp_set_num_threads(threads);
        if (run->parsed()) return cmd_run(config_path, out_path);
        if (report->parsed()) return cmd_report(in_path, kind, x_field);
        return cmd_validate(config_path);
    } catch (const Error& e) {
        std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
