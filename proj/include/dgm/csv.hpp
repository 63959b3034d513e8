#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "dgm/tensor.hpp"

namespace dgm {

/// Comma-separated output with a mandatory header row. Doubles are printed
/// with %.17g so identical runs produce byte-identical files.
class CsvWriter {
 public:
  CsvWriter() = default;
  CsvWriter(const std::string& path, const std::vector<std::string>& header) { open(path, header); }

  void open(const std::string& path, const std::vector<std::string>& header) {
    os_.open(path);
    if (!os_) fail("csv: cannot open " + path);
    cols_ = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
      os_ << header[i] << (i + 1 < header.size() ? "," : "\n");
  }

  class RowBuilder {
   public:
    explicit RowBuilder(CsvWriter& w) : w_(w) {}
    RowBuilder& operator<<(double v) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return push(buf);
    }
    RowBuilder& operator<<(std::int64_t v) { return push(std::to_string(v)); }
    RowBuilder& operator<<(int v) { return push(std::to_string(v)); }
    RowBuilder& operator<<(const std::string& v) { return push(v); }
    ~RowBuilder() { w_.os_ << "\n"; }

   private:
    RowBuilder& push(const std::string& s) {
      if (n_++ > 0) w_.os_ << ",";
      w_.os_ << s;
      return *this;
    }
    CsvWriter& w_;
    std::size_t n_ = 0;
  };

  RowBuilder row() { return RowBuilder(*this); }
  void flush() { os_.flush(); }
  bool is_open() const { return os_.is_open(); }

 private:
  friend class RowBuilder;
  std::ofstream os_;
  std::size_t cols_ = 0;
};

/// Minimal CSV reader for the report path (no quoting; our writers never quote).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  static CsvTable read(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail("csv: cannot open " + path);
    CsvTable t;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::vector<std::string> cells;
      std::size_t start = 0;
      while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
          cells.push_back(line.substr(start));
          break;
        }
        cells.push_back(line.substr(start, comma - start));
        start = comma + 1;
      }
      if (first) {
        t.header = std::move(cells);
        first = false;
      } else {
        t.rows.push_back(std::move(cells));
      }
    }
    return t;
  }

  std::size_t col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    fail("csv: missing column " + name);
  }
};

}  // namespace dgm
