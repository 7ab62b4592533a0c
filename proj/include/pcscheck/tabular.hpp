#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "pcscheck/errors.hpp"

// Column-oriented tabular data with CSV + sidecar-metadata IO and the
// one-hot design-matrix encoding used by the signal model.

namespace pcscheck::tabular {

using json = nlohmann::json;

// A cell is missing, a finite number, or text.  Empty CSV fields load as
// missing; fields that parse completely as a finite double load as numbers;
// everything else is text.
struct Cell {
  enum class Kind { missing, number, text };
  Kind kind = Kind::missing;
  double number = 0.0;
  std::string text;

  static Cell make_missing() { return Cell{}; }
  static Cell make_number(double v) { return Cell{Kind::number, v, {}}; }
  static Cell make_text(std::string v) { return Cell{Kind::text, 0.0, std::move(v)}; }

  bool is_missing() const { return kind == Kind::missing; }

  friend bool operator==(const Cell& a, const Cell& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
      case Kind::missing: return true;
      case Kind::number: return a.number == b.number;
      case Kind::text: return a.text == b.text;
    }
    return false;
  }
};

struct Column {
  std::string name;
  std::vector<Cell> cells;

  // Numeric iff at least one non-missing cell and every non-missing cell is a
  // number.  All-missing columns count as categorical.
  bool numeric() const {
    bool any = false;
    for (const Cell& c : cells) {
      if (c.is_missing()) continue;
      if (c.kind != Cell::Kind::number) return false;
      any = true;
    }
    return any;
  }
};

// Shortest round-trip decimal form, the same on every platform.
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline std::string format_cell(const Cell& c) {
  switch (c.kind) {
    case Cell::Kind::missing: return "";
    case Cell::Kind::number: return format_double(c.number);
    case Cell::Kind::text: return c.text;
  }
  return "";
}

// Strict full-string parse; non-finite values are rejected so "nan"/"inf"
// fields stay textual.
inline std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) return std::nullopt;
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

inline Cell cell_from_field(std::string_view field) {
  if (field.empty()) return Cell::make_missing();
  if (auto v = parse_double(field)) return Cell::make_number(*v);
  return Cell::make_text(std::string(field));
}

class TabularDataset {
 public:
  std::string name;
  std::vector<Column> columns;

  std::size_t row_count() const { return columns.empty() ? 0 : columns.front().cells.size(); }
  std::size_t column_count() const { return columns.size(); }

  std::optional<std::size_t> column_index(std::string_view col) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i].name == col) return i;
    return std::nullopt;
  }

  const Column& column(std::string_view col) const {
    auto idx = column_index(col);
    if (!idx) throw ValidationError("no such column: " + std::string(col));
    return columns[*idx];
  }

  std::vector<std::string> column_names() const {
    std::vector<std::string> out;
    out.reserve(columns.size());
    for (const Column& c : columns) out.push_back(c.name);
    return out;
  }

  void validate() const {
    if (name.empty()) throw ValidationError("dataset name is empty");
    if (columns.size() < 2)
      throw ValidationError("dataset '" + name + "' needs at least 2 columns, has " +
                            std::to_string(columns.size()));
    std::set<std::string> seen;
    for (const Column& c : columns) {
      if (c.name.empty()) throw ValidationError("dataset '" + name + "' has an unnamed column");
      if (!seen.insert(c.name).second)
        throw ValidationError("dataset '" + name + "' has duplicate column '" + c.name + "'");
      if (c.cells.size() != row_count())
        throw ValidationError("dataset '" + name + "' has ragged columns");
    }
    if (row_count() == 0) throw ValidationError("dataset '" + name + "' has no rows");
  }
};

// Sidecar metadata: the research question, display name, and optional
// per-column descriptions.  "extra" is an opaque object preserved verbatim
// through load/store; the harness parks provenance annotations there.
struct DatasetMetadata {
  std::string dataset_name;
  std::string question;
  std::vector<std::pair<std::string, std::string>> column_descriptions;
  json extra = json::object();

  std::optional<std::string> description_for(std::string_view col) const {
    for (const auto& [name, desc] : column_descriptions)
      if (name == col) return desc;
    return std::nullopt;
  }
};

inline json metadata_to_json(const DatasetMetadata& m) {
  json cols = json::array();
  for (const auto& [name, desc] : m.column_descriptions)
    cols.push_back(json{{"name", name}, {"description", desc}});
  json out{{"schema_version", 1},
           {"dataset_name", m.dataset_name},
           {"question", m.question},
           {"column_descriptions", cols}};
  if (!m.extra.empty()) out["extra"] = m.extra;
  return out;
}

inline DatasetMetadata metadata_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("metadata must be a JSON object");
  static const std::set<std::string> known = {"schema_version", "dataset_name", "question",
                                             "column_descriptions", "extra"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ValidationError("metadata has unknown key '" + key + "'");

  DatasetMetadata m;
  if (!j.contains("dataset_name") || !j["dataset_name"].is_string() ||
      j["dataset_name"].get<std::string>().empty())
    throw ValidationError("metadata needs a non-empty string 'dataset_name'");
  m.dataset_name = j["dataset_name"].get<std::string>();
  if (m.dataset_name.find('/') != std::string::npos ||
      m.dataset_name.find('\\') != std::string::npos || m.dataset_name == "." ||
      m.dataset_name == "..")
    throw ValidationError("dataset_name '" + m.dataset_name + "' is not filesystem-safe");

  if (!j.contains("question") || !j["question"].is_string() ||
      j["question"].get<std::string>().empty())
    throw ValidationError("metadata needs a non-empty string 'question'");
  m.question = j["question"].get<std::string>();

  if (j.contains("column_descriptions")) {
    const json& cols = j["column_descriptions"];
    if (!cols.is_array()) throw ValidationError("column_descriptions must be an array");
    for (const json& entry : cols) {
      if (!entry.is_object() || !entry.contains("name") || !entry["name"].is_string() ||
          !entry.contains("description") || !entry["description"].is_string())
        throw ValidationError("column_descriptions entries need string 'name' and 'description'");
      m.column_descriptions.emplace_back(entry["name"].get<std::string>(),
                                         entry["description"].get<std::string>());
    }
  }
  if (j.contains("extra")) {
    if (!j["extra"].is_object()) throw ValidationError("metadata 'extra' must be an object");
    m.extra = j["extra"];
  }
  return m;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

// RFC 4180 field splitting: quoted fields may contain commas, newlines and
// doubled quotes.  Accepts both LF and CRLF records.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  std::size_t i = 0;
  const std::size_t n = text.size();

  auto end_field = [&] { record.push_back(std::move(field)); field.clear(); };
  auto end_record = [&] {
    end_field();
    records.push_back(std::move(record));
    record.clear();
  };

  while (i < n) {
    char c = text[i];
    if (c == '"' && field.empty()) {
      ++i;  // opening quote
      while (true) {
        if (i >= n) throw ValidationError("CSV ends inside a quoted field");
        if (text[i] == '"') {
          if (i + 1 < n && text[i + 1] == '"') {
            field += '"';
            i += 2;
          } else {
            ++i;  // closing quote
            break;
          }
        } else {
          field += text[i++];
        }
      }
      if (i < n && text[i] != ',' && text[i] != '\n' && !(text[i] == '\r' && i + 1 < n && text[i + 1] == '\n'))
        throw ValidationError("CSV has content after a closing quote");
    } else if (c == ',') {
      end_field();
      ++i;
    } else if (c == '\n') {
      end_record();
      ++i;
    } else if (c == '\r' && i + 1 < n && text[i + 1] == '\n') {
      end_record();
      i += 2;
    } else {
      field += c;
      ++i;
    }
  }
  if (!field.empty() || !record.empty()) end_record();
  return records;
}

inline std::string csv_escape(std::string_view field) {
  bool needs_quotes = field.find_first_of(",\"\n\r") != std::string_view::npos;
  if (!needs_quotes) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

inline TabularDataset dataset_from_csv(std::string_view text, std::string name) {
  auto records = parse_csv(text);
  if (records.empty()) throw ValidationError("CSV '" + name + "' is empty");
  const auto& header = records.front();
  TabularDataset ds;
  ds.name = std::move(name);
  ds.columns.resize(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) ds.columns[c].name = header[c];
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& row = records[r];
    if (row.size() != header.size())
      throw ValidationError("CSV '" + ds.name + "' row " + std::to_string(r) + " has " +
                            std::to_string(row.size()) + " fields, expected " +
                            std::to_string(header.size()));
    for (std::size_t c = 0; c < row.size(); ++c)
      ds.columns[c].cells.push_back(cell_from_field(row[c]));
  }
  // Columns are all-or-nothing numeric: if any non-missing cell failed to
  // parse, re-render the parsed ones as text so the column is homogeneous.
  for (Column& col : ds.columns) {
    bool any_text = false, any_number = false;
    for (const Cell& cell : col.cells) {
      if (cell.kind == Cell::Kind::text) any_text = true;
      if (cell.kind == Cell::Kind::number) any_number = true;
    }
    if (any_text && any_number)
      for (Cell& cell : col.cells)
        if (cell.kind == Cell::Kind::number) cell = Cell::make_text(format_double(cell.number));
  }
  ds.validate();
  return ds;
}

inline std::string dataset_to_csv(const TabularDataset& ds) {
  std::string out;
  for (std::size_t c = 0; c < ds.columns.size(); ++c) {
    if (c) out += ',';
    out += csv_escape(ds.columns[c].name);
  }
  out += '\n';
  for (std::size_t r = 0; r < ds.row_count(); ++r) {
    for (std::size_t c = 0; c < ds.columns.size(); ++c) {
      if (c) out += ',';
      out += csv_escape(format_cell(ds.columns[c].cells[r]));
    }
    out += '\n';
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw HarnessError("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw HarnessError("short write to " + path.string());
}

struct LoadedDataset {
  TabularDataset dataset;
  DatasetMetadata metadata;
};

inline LoadedDataset load_dataset(const std::filesystem::path& csv_path,
                                  const std::filesystem::path& metadata_path) {
  json meta_json;
  try {
    meta_json = json::parse(read_file(metadata_path));
  } catch (const json::parse_error& e) {
    throw ValidationError("metadata " + metadata_path.string() + " is not valid JSON: " + e.what());
  }
  DatasetMetadata meta = metadata_from_json(meta_json);
  TabularDataset ds = dataset_from_csv(read_file(csv_path), meta.dataset_name);
  for (const auto& [col, _] : meta.column_descriptions)
    if (!ds.column_index(col))
      throw ValidationError("metadata describes column '" + col + "' which is not in " +
                            csv_path.filename().string());
  return {std::move(ds), std::move(meta)};
}

struct WrittenDataset {
  std::filesystem::path csv_path;
  std::filesystem::path info_path;
};

// Writes <name>.csv plus info.json into dir (created if needed).
inline WrittenDataset write_dataset(const TabularDataset& ds, const DatasetMetadata& meta,
                                    const std::filesystem::path& dir) {
  ds.validate();
  if (ds.name != meta.dataset_name)
    throw HarnessError("dataset/metadata name mismatch: '" + ds.name + "' vs '" +
                       meta.dataset_name + "'");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw HarnessError("cannot create " + dir.string() + ": " + ec.message());
  WrittenDataset out{dir / (ds.name + ".csv"), dir / "info.json"};
  write_file(out.csv_path, dataset_to_csv(ds));
  write_file(out.info_path, metadata_to_json(meta).dump(2) + "\n");
  return out;
}

// ---------------------------------------------------------------------------
// Design-matrix encoding
// ---------------------------------------------------------------------------

struct DesignMatrix {
  Eigen::MatrixXd X;                       // rows kept after listwise deletion
  Eigen::VectorXd y;
  std::vector<std::string> column_names;   // parallel to X's columns
  std::vector<std::size_t> row_indices;    // original row index of each kept row
  std::string dependent_name;
};

namespace detail {

inline std::string level_key(const Cell& c) {
  // Distinct levels of a categorical column, keyed by their rendered form.
  return format_cell(c);
}

}  // namespace detail

// Intercept + numeric columns as-is + one-hot indicators with the
// lexicographically first level dropped.  Rows with a missing value in any
// used column are deleted.  Constant columns (other than the intercept) are
// removed.  A categorical dependent must have exactly two levels; they map to
// {0, 1} in lexicographic order.
inline DesignMatrix one_hot_encode(const TabularDataset& ds, const std::string& dependent,
                                   const std::vector<std::string>& independents) {
  ds.validate();
  auto dep_idx = ds.column_index(dependent);
  if (!dep_idx)
    throw ValidationError("dependent column '" + dependent + "' not in dataset '" + ds.name + "'");

  std::vector<std::size_t> indep_idx;
  if (independents.empty()) {
    for (std::size_t i = 0; i < ds.columns.size(); ++i)
      if (i != *dep_idx) indep_idx.push_back(i);
  } else {
    std::set<std::string> seen;
    for (const std::string& col : independents) {
      if (col == dependent)
        throw ValidationError("'" + col + "' is both dependent and independent");
      if (!seen.insert(col).second)
        throw ValidationError("independent column '" + col + "' listed twice");
      auto idx = ds.column_index(col);
      if (!idx)
        throw ValidationError("independent column '" + col + "' not in dataset '" + ds.name + "'");
      indep_idx.push_back(*idx);
    }
  }
  if (indep_idx.empty())
    throw ValidationError("dataset '" + ds.name + "' has no independent columns");

  // Listwise deletion over the dependent and all used independents.
  std::vector<std::size_t> kept;
  for (std::size_t r = 0; r < ds.row_count(); ++r) {
    bool ok = !ds.columns[*dep_idx].cells[r].is_missing();
    for (std::size_t ci : indep_idx) ok = ok && !ds.columns[ci].cells[r].is_missing();
    if (ok) kept.push_back(r);
  }
  if (kept.empty())
    throw InsufficientDataError("dataset '" + ds.name + "' has no complete rows");

  const Column& dep = ds.columns[*dep_idx];
  Eigen::VectorXd y(kept.size());
  if (dep.numeric()) {
    for (std::size_t i = 0; i < kept.size(); ++i) y(static_cast<Eigen::Index>(i)) = dep.cells[kept[i]].number;
  } else {
    std::set<std::string> levels;
    for (std::size_t r : kept) levels.insert(detail::level_key(dep.cells[r]));
    if (levels.size() != 2)
      throw ValidationError("categorical dependent '" + dependent + "' has " +
                            std::to_string(levels.size()) + " levels; exactly 2 supported");
    const std::string& one = *std::next(levels.begin());
    for (std::size_t i = 0; i < kept.size(); ++i)
      y(static_cast<Eigen::Index>(i)) = detail::level_key(dep.cells[kept[i]]) == one ? 1.0 : 0.0;
  }

  // Build candidate columns: intercept first, then per-independent expansion.
  std::vector<std::pair<std::string, std::vector<double>>> cols;
  cols.emplace_back("intercept", std::vector<double>(kept.size(), 1.0));
  for (std::size_t ci : indep_idx) {
    const Column& col = ds.columns[ci];
    if (col.numeric()) {
      std::vector<double> v(kept.size());
      for (std::size_t i = 0; i < kept.size(); ++i) v[i] = col.cells[kept[i]].number;
      cols.emplace_back(col.name, std::move(v));
    } else {
      std::set<std::string> levels;
      for (std::size_t r : kept) levels.insert(detail::level_key(col.cells[r]));
      bool first = true;
      for (const std::string& level : levels) {
        if (first) { first = false; continue; }  // reference level
        std::vector<double> v(kept.size());
        for (std::size_t i = 0; i < kept.size(); ++i)
          v[i] = detail::level_key(col.cells[kept[i]]) == level ? 1.0 : 0.0;
        cols.emplace_back(col.name + "=" + level, std::move(v));
      }
    }
  }

  // Drop constant non-intercept columns.
  std::vector<std::pair<std::string, std::vector<double>>> usable;
  usable.push_back(std::move(cols.front()));
  for (std::size_t c = 1; c < cols.size(); ++c) {
    const auto& v = cols[c].second;
    bool constant = std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
    if (!constant) usable.push_back(std::move(cols[c]));
  }

  std::size_t need = std::max<std::size_t>(5, usable.size() + 1);
  if (kept.size() < need)
    throw InsufficientDataError("dataset '" + ds.name + "' has " + std::to_string(kept.size()) +
                                " usable rows; need at least " + std::to_string(need) + " for " +
                                std::to_string(usable.size()) + " design columns");

  DesignMatrix dm;
  dm.dependent_name = dependent;
  dm.row_indices = kept;
  dm.y = std::move(y);
  dm.X.resize(static_cast<Eigen::Index>(kept.size()), static_cast<Eigen::Index>(usable.size()));
  for (std::size_t c = 0; c < usable.size(); ++c) {
    dm.column_names.push_back(usable[c].first);
    for (std::size_t r = 0; r < kept.size(); ++r)
      dm.X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = usable[c].second[r];
  }
  return dm;
}

}  // namespace pcscheck::tabular
