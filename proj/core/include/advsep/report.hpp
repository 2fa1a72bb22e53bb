#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "advsep/metrics.hpp"

namespace advsep {

// Hex SHA-1 of "blob <size>\0<content>", i.e. what `git hash-object` prints.
std::string git_blob_sha1(std::string_view content);
std::string git_blob_sha1_file(const std::string& path);

// Hex SHA-1 of the raw bytes.
std::string sha1_hex(std::string_view content);

// "generated_at: <UTC ISO-8601>" - the only non-deterministic line in reports.
std::string timestamp_line();

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

// Flat table: attack,norm,eps,targeted,asr1,asr2,asr5,eroc. Missing p values
// are left empty.
void write_eval_csv(std::ostream& os, const std::vector<EvalReport>& reports);

// Fixed-precision number formatting shared by every report writer so output
// is stable across runs.
std::string format_number(double v);
// Shortest form for percent levels: 1, 2.5, ...
std::string format_percent(double p);

}  // namespace advsep
