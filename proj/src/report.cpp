#include "rosen/report.hpp"

#include <array>
#include <charconv>
#include <cmath>

namespace rosen {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

CheckResult check_abs(std::string name, double value, double target, double tol) {
  return {std::move(name), value, target, tol, std::abs(value - target) <= tol};
}

CheckResult check_rel(std::string name, double value, double target, double tol) {
  const double rel = std::abs(value - target) / std::abs(target);
  return {std::move(name), value, target, tol, rel <= tol};
}

CheckResult check_upper(std::string name, double value, double target, double tol) {
  return {std::move(name), value, target, tol, value <= target + tol};
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string csv_line(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_field(fields[i]);
  }
  return out + '\n';
}

}  // namespace rosen
