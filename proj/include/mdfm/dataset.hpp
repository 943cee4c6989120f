#pragma once

#include "mdfm/model.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mdfm {

/// T x n x k panel with declared row/column order. Missing cells are NaN.
struct PanelDataset {
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<std::string> time_index;
  Panel values;
  /// One entry per series (index i + j n), each a list of applied steps.
  std::vector<std::vector<std::string>> transform_log;

  int n() const { return static_cast<int>(row_labels.size()); }
  int k() const { return static_cast<int>(col_labels.size()); }
  int T() const { return static_cast<int>(values.size()); }
  bool has_missing() const;
  bool operator==(const PanelDataset &) const;
};

enum class CsvFormat { long_format, wide };

/// long: header time,row,col,value and one cell per line.
/// wide: header time,row,<col labels...> and one row of the panel per line.
/// Row and column order always comes from the layout, never from the file.
struct CsvLayout {
  CsvFormat format = CsvFormat::long_format;
  std::vector<std::string> rows;
  std::vector<std::string> cols;
};

/// Quoted CSV records (RFC 4180 quoting); blank lines are skipped.
std::vector<std::vector<std::string>> split_csv_records(const std::string &text);

CsvFormat csv_format_from_string(const std::string &s);

PanelDataset ingest_csv(const std::filesystem::path &path, const CsvLayout &layout);
PanelDataset parse_csv(const std::string &text, const CsvLayout &layout);
/// Long format, times in order, rows then columns in declared order.
std::string to_csv_long(const PanelDataset &ds);

/// Builds a dataset with generated labels r1..rn, c1..ck and times 1..T.
PanelDataset dataset_from_panel(const Panel &Y);

/// Operations: "difference", "log-difference", "standardize", "impute-wma".
PanelDataset preprocess(const PanelDataset &ds, const std::vector<std::string> &ops);

} // namespace mdfm
