#pragma once

// Success-rate tables: one row
// per method, one column per deformation group.

#include "bagknot/bagsim/deformation.hpp"
#include "bagknot/core/array_io.hpp"

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace bagknot::harness {

struct Cell {
  int successes = 0;
  int attempts = 0;
  double rate() const { return attempts > 0 ? static_cast<double>(successes) / attempts : 0.0; }
  bool operator==(const Cell&) const = default;
};

inline const std::vector<std::string>& table_columns() {
  static const std::vector<std::string> cols{"VC&HC", "DC", "TF", "IF"};
  return cols;
}

/// Column of a deformation family.
inline int column_of(bagsim::Family f) {
  switch (f) {
    case bagsim::Family::VC:
    case bagsim::Family::HC:
      return 0;
    case bagsim::Family::DC:
      return 1;
    case bagsim::Family::TF:
      return 2;
    case bagsim::Family::IF:
      return 3;
  }
  throw InputError("column_of: unknown family");
}

struct TableRow {
  std::string method;
  std::vector<Cell> cells = std::vector<Cell>(4);
  bool operator==(const TableRow&) const = default;
};

struct SuccessTable {
  std::string title;
  std::vector<TableRow> rows;

  bool operator==(const SuccessTable&) const = default;

  TableRow& row(const std::string& method) {
    for (auto& r : rows)
      if (r.method == method) return r;
    rows.push_back({method});
    return rows.back();
  }
  const TableRow& row(const std::string& method) const {
    for (const auto& r : rows)
      if (r.method == method) return r;
    throw NotFoundError("success table has no row '" + method + "'");
  }

  void record(const std::string& method, bagsim::Family f, bool success) {
    auto& c = row(method).cells[static_cast<std::size_t>(column_of(f))];
    ++c.attempts;
    if (success) ++c.successes;
  }

  std::string to_text() const {
    std::size_t name_w = 6;
    for (const auto& r : rows) name_w = std::max(name_w, r.method.size());
    std::ostringstream out;
    if (!title.empty()) out << title << "\n";
    out << std::left << std::setw(static_cast<int>(name_w)) << "method";
    for (const auto& c : table_columns()) out << "  " << std::right << std::setw(7) << c;
    out << "\n";
    for (const auto& r : rows) {
      out << std::left << std::setw(static_cast<int>(name_w)) << r.method;
      for (const auto& c : r.cells) {
        const std::string v = c.attempts > 0 ? std::to_string(c.successes) + "/" + std::to_string(c.attempts) : "-";
        out << "  " << std::right << std::setw(7) << v;
      }
      out << "\n";
    }
    return out.str();
  }

  io::json to_json() const {
    io::json rows_j = io::json::array();
    for (const auto& r : rows) {
      io::json cells = io::json::object();
      for (std::size_t i = 0; i < r.cells.size(); ++i)
        cells[table_columns()[i]] = {{"successes", r.cells[i].successes}, {"attempts", r.cells[i].attempts}};
      rows_j.push_back({{"method", r.method}, {"cells", cells}});
    }
    return {{"title", title}, {"columns", table_columns()}, {"rows", rows_j}};
  }

  static SuccessTable from_json(const io::json& j) {
    SuccessTable t;
    t.title = j.value("title", "");
    for (const auto& r : j.at("rows")) {
      TableRow row{r.at("method").get<std::string>()};
      for (std::size_t i = 0; i < table_columns().size(); ++i) {
        const auto& c = r.at("cells").at(table_columns()[i]);
        row.cells[i] = {c.at("successes").get<int>(), c.at("attempts").get<int>()};
        if (row.cells[i].successes < 0 || row.cells[i].successes > row.cells[i].attempts) {
          throw IntegrityError("success table: successes exceed attempts");
        }
      }
      t.rows.push_back(std::move(row));
    }
    return t;
  }
};

}  // namespace bagknot::harness
