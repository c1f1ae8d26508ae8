#pragma once

#include <cstdio>
#include <string>

namespace prop {

/// Tracks named property checks and prints one line per property.
class Suite {
 public:
  explicit Suite(std::string name) : name_(std::move(name)) {}

  void check(const std::string& property, bool ok, double measured, double tolerance) {
    std::printf("%s %s/%s: measured %.3e, tolerance %.3e\n", ok ? "PASS" : "FAIL", name_.c_str(),
                property.c_str(), measured, tolerance);
    failures_ += ok ? 0 : 1;
  }
  /// PASS when measured <= tolerance.
  void below(const std::string& property, double measured, double tolerance) {
    check(property, measured <= tolerance, measured, tolerance);
  }
  int finish() const {
    std::printf("%s: %d failure(s)\n", name_.c_str(), failures_);
    return failures_ == 0 ? 0 : 1;
  }

 private:
  std::string name_;
  int failures_ = 0;
};

}  // namespace prop
