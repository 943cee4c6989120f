#include "mdfm/dataset.hpp"

#include "mdfm/errors.hpp"
#include "mdfm/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_map>

namespace mdfm {

std::vector<std::vector<std::string>> split_csv_records(const std::string &text) {
  std::vector<std::vector<std::string>> lines;
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n')
        ++i;
      if (any || !cur.empty()) {
        fields.push_back(cur);
        lines.push_back(std::move(fields));
      }
      fields.clear();
      cur.clear();
      any = false;
    } else {
      cur += c;
      any = true;
    }
  }
  if (quoted)
    throw DataError("unterminated quoted field");
  if (any || !cur.empty()) {
    fields.push_back(cur);
    lines.push_back(std::move(fields));
  }
  return lines;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos)
    return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double parse_value(const std::string &raw, std::size_t line) {
  const std::string s = trim(raw);
  if (s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == ".")
    return kNaN;
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception &) {
    used = 0;
  }
  if (used != s.size())
    throw DataError("line " + std::to_string(line) + ": cannot parse value '" + s + "'");
  return v;
}

bool numeric(const std::string &s, double &out) {
  try {
    std::size_t used = 0;
    out = std::stod(s, &used);
    return used == s.size();
  } catch (const std::exception &) {
    return false;
  }
}

std::vector<std::string> ordered_times(const std::vector<std::string> &labels) {
  std::vector<std::string> t = labels;
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  bool all_num = true;
  std::vector<double> v(t.size());
  for (std::size_t i = 0; i < t.size() && all_num; ++i)
    all_num = numeric(t[i], v[i]);
  if (all_num) {
    std::vector<std::size_t> idx(t.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
      idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (i > 0 && !(v[idx[i]] > v[idx[i - 1]]))
        throw DataError("time labels '" + t[idx[i - 1]] + "' and '" + t[idx[i]] +
                        "' denote the same time");
      out.push_back(t[idx[i]]);
    }
    return out;
  }
  return t;
}

std::unordered_map<std::string, int> index_of(const std::vector<std::string> &labels,
                                              const char *what) {
  std::unordered_map<std::string, int> m;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (!m.emplace(labels[i], static_cast<int>(i)).second)
      throw UsageError(std::string("layout declares ") + what + " '" + labels[i] + "' twice");
  return m;
}

} // namespace

bool PanelDataset::has_missing() const {
  for (const auto &m : values)
    if (m.hasNaN())
      return true;
  return false;
}

bool PanelDataset::operator==(const PanelDataset &o) const {
  if (row_labels != o.row_labels || col_labels != o.col_labels ||
      time_index != o.time_index || transform_log != o.transform_log ||
      values.size() != o.values.size())
    return false;
  for (std::size_t t = 0; t < values.size(); ++t) {
    const auto &a = values[t], &b = o.values[t];
    if (a.rows() != b.rows() || a.cols() != b.cols())
      return false;
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double x = a(i, j), y = b(i, j);
        if (!(x == y || (std::isnan(x) && std::isnan(y))))
          return false;
      }
  }
  return true;
}

CsvFormat csv_format_from_string(const std::string &s) {
  if (s == "long")
    return CsvFormat::long_format;
  if (s == "wide")
    return CsvFormat::wide;
  throw UsageError("unknown csv format '" + s + "' (expected long or wide)");
}

PanelDataset parse_csv(const std::string &text, const CsvLayout &layout) {
  if (layout.rows.empty() || layout.cols.empty())
    throw UsageError("layout must declare the row and column order");
  const auto rows = index_of(layout.rows, "row");
  const auto cols = index_of(layout.cols, "column");
  const auto lines = split_csv_records(text);
  if (lines.empty())
    throw DataError("empty csv");
  const auto &header = lines[0];
  const int n = static_cast<int>(layout.rows.size());
  const int k = static_cast<int>(layout.cols.size());

  struct Cell {
    std::string time;
    int i, j;
    double v;
    std::size_t line;
  };
  std::vector<Cell> cells;
  std::vector<std::string> times;
  auto row_index = [&](const std::string &r, std::size_t line) {
    auto it = rows.find(r);
    if (it == rows.end())
      throw DataError("line " + std::to_string(line) + ": unknown row label '" + r + "'");
    return it->second;
  };

  if (layout.format == CsvFormat::long_format) {
    if (header.size() != 4)
      throw DataError("long format needs the header time,row,col,value");
    for (std::size_t l = 1; l < lines.size(); ++l) {
      const auto &f = lines[l];
      if (f.size() != 4)
        throw DataError("line " + std::to_string(l + 1) + ": expected 4 fields, got " +
                        std::to_string(f.size()));
      const std::string c = trim(f[2]);
      auto cit = cols.find(c);
      if (cit == cols.end())
        throw DataError("line " + std::to_string(l + 1) + ": unknown column label '" + c +
                        "'");
      cells.push_back({trim(f[0]), row_index(trim(f[1]), l + 1), cit->second,
                       parse_value(f[3], l + 1), l + 1});
      times.push_back(trim(f[0]));
    }
  } else {
    if (header.size() < 3)
      throw DataError("wide format needs the header time,row,<columns>");
    std::vector<int> colmap;
    for (std::size_t c = 2; c < header.size(); ++c) {
      auto it = cols.find(trim(header[c]));
      if (it == cols.end())
        throw DataError("header: unknown column label '" + trim(header[c]) + "'");
      colmap.push_back(it->second);
    }
    for (std::size_t l = 1; l < lines.size(); ++l) {
      const auto &f = lines[l];
      if (f.size() != header.size())
        throw DataError("line " + std::to_string(l + 1) + ": ragged row with " +
                        std::to_string(f.size()) + " fields, header has " +
                        std::to_string(header.size()));
      const int i = row_index(trim(f[1]), l + 1);
      for (std::size_t c = 2; c < f.size(); ++c)
        cells.push_back({trim(f[0]), i, colmap[c - 2], parse_value(f[c], l + 1), l + 1});
      times.push_back(trim(f[0]));
    }
  }

  PanelDataset ds;
  ds.row_labels = layout.rows;
  ds.col_labels = layout.cols;
  ds.time_index = ordered_times(times);
  std::map<std::string, int> tpos;
  for (std::size_t t = 0; t < ds.time_index.size(); ++t)
    tpos[ds.time_index[t]] = static_cast<int>(t);
  const int T = static_cast<int>(ds.time_index.size());
  ds.values.assign(T, Matrix::Constant(n, k, kNaN));
  std::vector<std::vector<char>> seen(T, std::vector<char>(static_cast<std::size_t>(n) * k, 0));
  for (const auto &c : cells) {
    const int t = tpos.at(c.time);
    auto &flag = seen[t][static_cast<std::size_t>(c.i) + static_cast<std::size_t>(c.j) * n];
    if (flag)
      throw DataError("duplicate cell (time=" + c.time + ", row=" + layout.rows[c.i] +
                      ", col=" + layout.cols[c.j] + ") at line " + std::to_string(c.line));
    flag = 1;
    ds.values[t](c.i, c.j) = c.v;
  }
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < k; ++j)
      for (int i = 0; i < n; ++i)
        if (!seen[t][static_cast<std::size_t>(i) + static_cast<std::size_t>(j) * n])
          throw DataError("ragged panel: no cell for (time=" + ds.time_index[t] +
                          ", row=" + layout.rows[i] + ", col=" + layout.cols[j] +
                          "); write NA for missing values");
  ds.transform_log.assign(static_cast<std::size_t>(n) * k, {});
  return ds;
}

PanelDataset ingest_csv(const std::filesystem::path &path, const CsvLayout &layout) {
  try {
    return parse_csv(read_text_file(path), layout);
  } catch (const Error &e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

std::string to_csv_long(const PanelDataset &ds) {
  std::ostringstream os;
  os << "time,row,col,value\n";
  char buf[64];
  auto q = [](const std::string &s) {
    if (s.find_first_of(",\"\n") == std::string::npos)
      return s;
    std::string o = "\"";
    for (char c : s)
      o += c == '"' ? std::string("\"\"") : std::string(1, c);
    return o + "\"";
  };
  for (int t = 0; t < ds.T(); ++t)
    for (int i = 0; i < ds.n(); ++i)
      for (int j = 0; j < ds.k(); ++j) {
        const double v = ds.values[t](i, j);
        if (std::isnan(v))
          std::snprintf(buf, sizeof buf, "NA");
        else
          std::snprintf(buf, sizeof buf, "%.17g", v);
        os << q(ds.time_index[t]) << ',' << q(ds.row_labels[i]) << ',' << q(ds.col_labels[j])
           << ',' << buf << '\n';
      }
  return os.str();
}

PanelDataset dataset_from_panel(const Panel &Y) {
  if (Y.empty())
    throw UsageError("empty panel");
  PanelDataset ds;
  for (Eigen::Index i = 0; i < Y[0].rows(); ++i)
    ds.row_labels.push_back("r" + std::to_string(i + 1));
  for (Eigen::Index j = 0; j < Y[0].cols(); ++j)
    ds.col_labels.push_back("c" + std::to_string(j + 1));
  for (std::size_t t = 0; t < Y.size(); ++t)
    ds.time_index.push_back(std::to_string(t + 1));
  ds.values = Y;
  ds.transform_log.assign(static_cast<std::size_t>(ds.n()) * ds.k(), {});
  return ds;
}

namespace {

std::string series_name(const PanelDataset &ds, int i, int j) {
  return ds.row_labels[i] + "/" + ds.col_labels[j];
}

void log_all(PanelDataset &ds, const std::string &entry) {
  for (auto &l : ds.transform_log)
    l.push_back(entry);
}

void difference(PanelDataset &ds, bool log) {
  if (ds.T() < 2)
    throw DataError("differencing needs at least two time points");
  for (int t = 0; t < ds.T(); ++t)
    for (int j = 0; j < ds.k(); ++j)
      for (int i = 0; i < ds.n(); ++i) {
        const double v = ds.values[t](i, j);
        if (log && !std::isnan(v) && !(v > 0))
          throw DataError("log-difference: non-positive value in series " +
                          series_name(ds, i, j) + " at time " + ds.time_index[t]);
      }
  Panel out;
  for (int t = 1; t < ds.T(); ++t) {
    if (log)
      out.push_back(ds.values[t].array().log() - ds.values[t - 1].array().log());
    else
      out.push_back(ds.values[t] - ds.values[t - 1]);
  }
  ds.values = std::move(out);
  ds.time_index.erase(ds.time_index.begin());
  log_all(ds, log ? "log-difference" : "difference");
}

void standardize(PanelDataset &ds) {
  const int T = ds.T();
  for (int j = 0; j < ds.k(); ++j)
    for (int i = 0; i < ds.n(); ++i) {
      double s = 0;
      int m = 0;
      for (int t = 0; t < T; ++t)
        if (!std::isnan(ds.values[t](i, j))) {
          s += ds.values[t](i, j);
          ++m;
        }
      if (m < 2)
        throw DataError("standardize: series " + series_name(ds, i, j) +
                        " has fewer than two observed values");
      const double mean = s / m;
      double ss = 0;
      for (int t = 0; t < T; ++t)
        if (!std::isnan(ds.values[t](i, j)))
          ss += (ds.values[t](i, j) - mean) * (ds.values[t](i, j) - mean);
      const double sd = std::sqrt(ss / (m - 1));
      if (!(sd > 0))
        throw DataError("standardize: series " + series_name(ds, i, j) + " is constant");
      for (int t = 0; t < T; ++t)
        ds.values[t](i, j) = (ds.values[t](i, j) - mean) / sd;
      char buf[96];
      std::snprintf(buf, sizeof buf, "standardize(mean=%.10g, sd=%.10g)", mean, sd);
      ds.transform_log[static_cast<std::size_t>(i) + static_cast<std::size_t>(j) * ds.n()]
          .push_back(buf);
    }
}

void impute_wma(PanelDataset &ds) {
  for (int j = 0; j < ds.k(); ++j)
    for (int i = 0; i < ds.n(); ++i) {
      int filled = 0;
      for (int t = 0; t < ds.T(); ++t) {
        if (!std::isnan(ds.values[t](i, j)))
          continue;
        if (t < 3)
          throw DataError("impute-wma: series " + series_name(ds, i, j) +
                          " is missing at time " + ds.time_index[t] +
                          ", within the first three points");
        ds.values[t](i, j) = 0.5 * ds.values[t - 1](i, j) + 0.3 * ds.values[t - 2](i, j) +
                             0.2 * ds.values[t - 3](i, j);
        ++filled;
      }
      ds.transform_log[static_cast<std::size_t>(i) + static_cast<std::size_t>(j) * ds.n()]
          .push_back("impute-wma(filled=" + std::to_string(filled) + ")");
    }
}

} // namespace

PanelDataset preprocess(const PanelDataset &in, const std::vector<std::string> &ops) {
  PanelDataset ds = in;
  for (const auto &op : ops) {
    if (op == "difference")
      difference(ds, false);
    else if (op == "log-difference")
      difference(ds, true);
    else if (op == "standardize")
      standardize(ds);
    else if (op == "impute-wma")
      impute_wma(ds);
    else
      throw UsageError("unknown preprocessing step '" + op + "'");
  }
  return ds;
}

} // namespace mdfm
