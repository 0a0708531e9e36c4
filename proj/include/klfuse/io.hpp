#pragma once

#include "klfuse/harness.hpp"

#include <json.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace klfuse {

inline constexpr const char* kToolVersion = "0.3.0";
inline constexpr const char* kRecordsHeader =
    "estimator,N,d,n,trial,seed,status,mse,test_loglik,selected_m,wallclock_ms";

nlohmann::json model_to_json(const Model& model);
Model model_from_json(const nlohmann::json& json);

// Throws Error(Parse) listing every problem as "field.path: message".
ExperimentConfig parse_config(const nlohmann::json& json);
ExperimentConfig load_config(const std::string& path);

std::string format_double(double value);
std::string status_string(const TrialRecord& record);

void write_records_csv(std::ostream& out, const std::vector<TrialRecord>& records);
std::vector<TrialRecord> read_records_csv(const std::string& path);

std::string slopes_table(const std::vector<TrialRecord>& records, std::optional<XField> x_field);
std::string likelihood_table(const std::vector<TrialRecord>& records);

// 64-bit FNV-1a of the bytes, as 16 hex digits.
std::string content_hash(const std::string& bytes);

}  // namespace klfuse
