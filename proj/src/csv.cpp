#include "hybridlab/csv.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace hybridlab {

void write_csv_preamble(std::ostream& os, const std::string& config_json) {
  os << kCsvMagic << '\n' << "# config=" << config_json << '\n';
}

void write_csv_row(std::ostream& os, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].find_first_of(",\n\"") != std::string::npos) {
      throw std::invalid_argument("csv cell contains a delimiter: " + cells[i]);
    }
    os << (i ? "," : "") << cells[i];
  }
  os << '\n';
}

CsvTable read_csv(std::istream& is) {
  CsvTable t;
  std::string line;
  if (!std::getline(is, line) || line != kCsvMagic) {
    throw std::runtime_error("csv: missing '" + std::string(kCsvMagic) + "' version line");
  }
  bool have_header = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      constexpr std::string_view kConfig = "# config=";
      if (line.rfind(kConfig, 0) == 0) t.config_json = line.substr(kConfig.size());
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (!have_header) {
      t.header = std::move(cells);
      have_header = true;
    } else {
      t.rows.push_back(std::move(cells));
    }
  }
  return t;
}

CsvTable read_csv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read csv file " + path);
  return read_csv(f);
}

std::string fmt_full(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("fmt_full: conversion failed");
  return std::string(buf, ptr);
}

std::string fmt_sig3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace hybridlab
