#include "bec/report.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bec/error.hpp"

namespace bec {

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{}", v);
}

std::string format_vector(const Eigen::VectorXd& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += format_real(v[i]);
  }
  return out;
}

void Report::add(const std::string& key, const std::string& value) { entries.push_back({key, value}); }
void Report::add(const std::string& key, double value) { add(key, format_real(value)); }
void Report::add(const std::string& key, int value) { add(key, std::to_string(value)); }
void Report::add(const std::string& key, bool value) { add(key, std::string(value ? "true" : "false")); }
void Report::add(const std::string& key, const Eigen::VectorXd& value) { add(key, format_vector(value)); }

const std::string* Report::find(const std::string& key) const {
  for (const auto& e : entries)
    if (e.key == key) return &e.value;
  return nullptr;
}

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape(const std::string& s, std::size_t line) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out += s[i];
      continue;
    }
    if (++i == s.size()) throw ValidationError(fmt::format("report line {}: dangling escape", line));
    switch (s[i]) {
      case '\\': out += '\\'; break;
      case 't': out += '\t'; break;
      case 'n': out += '\n'; break;
      default: throw ValidationError(fmt::format("report line {}: unknown escape \\{}", line, s[i]));
    }
  }
  return out;
}

constexpr const char* timing_prefix = "timing.";

}  // namespace

std::string Report::machine(bool with_timings) const {
  std::string out = "command\t" + escape(command) + "\n";
  for (const auto& e : entries) out += escape(e.key) + "\t" + escape(e.value) + "\n";
  if (with_timings)
    for (const auto& [name, s] : timings) out += timing_prefix + escape(name) + "\t" + format_real(s) + "\n";
  return out;
}

std::string Report::human(bool with_timings) const {
  std::size_t width = 0;
  for (const auto& e : entries) width = std::max(width, e.key.size());
  std::string out = "$ " + command + "\n";
  std::string section;
  for (const auto& e : entries) {
    const std::string head = e.key.substr(0, e.key.find('.'));
    if (head != section) {
      if (!section.empty()) out += "\n";
      section = head;
    }
    out += fmt::format("  {:<{}}  {}\n", e.key, width, e.value);
  }
  if (with_timings && !timings.empty()) {
    out += "\n";
    for (const auto& [name, s] : timings) out += fmt::format("  time {:<{}}  {:.3f} s\n", name, width - 5, s);
  }
  return out;
}

Report Report::parse_machine(const std::string& text) {
  Report r;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  bool saw_command = false;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ValidationError(fmt::format("report line {}: missing tab", n));
    const std::string key = unescape(line.substr(0, tab), n);
    const std::string value = unescape(line.substr(tab + 1), n);
    if (!saw_command) {
      if (key != "command") throw ValidationError("report must start with the command record");
      r.command = value;
      saw_command = true;
    } else if (key.rfind(timing_prefix, 0) == 0) {
      r.timings.emplace_back(key.substr(std::string(timing_prefix).size()), std::stod(value));
    } else {
      r.entries.push_back({key, value});
    }
  }
  if (!saw_command) throw ValidationError("empty report");
  return r;
}

}  // namespace bec
