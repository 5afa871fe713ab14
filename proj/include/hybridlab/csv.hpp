#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace hybridlab {

inline constexpr std::string_view kCsvMagic = "#hybridlab-csv-v1";

struct CsvTable {
  std::string config_json;  // from the "# config=" line, empty if absent
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Version line followed by "# config=<json>".
void write_csv_preamble(std::ostream& os, const std::string& config_json);
void write_csv_row(std::ostream& os, const std::vector<std::string>& cells);
CsvTable read_csv(std::istream& is);
CsvTable read_csv_file(const std::string& path);

/// Shortest round-trip decimal form.
std::string fmt_full(double v);
/// Three significant figures.
std::string fmt_sig3(double v);

}  // namespace hybridlab
