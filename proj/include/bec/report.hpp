#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

namespace bec {

struct ReportEntry {
  std::string key;
  std::string value;

  bool operator==(const ReportEntry&) const = default;
};

/// Ordered key/value records. Keys are dotted paths ("certificate.alpha").
class Report {
 public:
  std::string command;
  std::vector<ReportEntry> entries;
  std::vector<std::pair<std::string, double>> timings;  // seconds

  void add(const std::string& key, const std::string& value);
  void add(const std::string& key, const char* value) { add(key, std::string(value)); }
  void add(const std::string& key, double value);
  void add(const std::string& key, int value);
  void add(const std::string& key, bool value);
  void add(const std::string& key, const Eigen::VectorXd& value);
  void add_time(const std::string& name, double seconds) { timings.emplace_back(name, seconds); }

  // First value stored under `key`, or nullptr.
  const std::string* find(const std::string& key) const;

  /// One "key<TAB>value" line per record, command first. Tabs, newlines and
  /// backslashes in values are escaped.
  std::string machine(bool with_timings = false) const;
  std::string human(bool with_timings = false) const;

  /// Inverse of machine(); timing lines come back as timings.
  static Report parse_machine(const std::string& text);

  bool operator==(const Report& o) const { return command == o.command && entries == o.entries; }
};

/// Shortest decimal that parses back to the same double.
std::string format_real(double v);
std::string format_vector(const Eigen::VectorXd& v);

}  // namespace bec
