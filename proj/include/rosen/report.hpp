#pragma once

#include <string>
#include <vector>

namespace rosen {

// Shortest decimal string that round-trips to the same double ("nan"/"inf" otherwise).
std::string format_number(double v);

// One tolerance check: pass iff |value - target| <= tol (or a custom rule applied by the caller).
struct CheckResult {
  std::string check;
  double value = 0.0;
  double target = 0.0;
  double tol = 0.0;
  bool pass = false;
};

CheckResult check_abs(std::string name, double value, double target, double tol);
CheckResult check_rel(std::string name, double value, double target, double tol);
// value <= target + tol
CheckResult check_upper(std::string name, double value, double target, double tol);

// Quotes a CSV field when needed (RFC 4180).
std::string csv_field(const std::string& s);
std::string csv_line(const std::vector<std::string>& fields);

}  // namespace rosen
