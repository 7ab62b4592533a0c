#pragma once

#include <stdexcept>
#include <string>

namespace pcscheck {

// Exit codes used by the command-line tool.  Library code throws the typed
// exceptions below; the tool maps them onto these codes.
enum class ExitCode : int {
  ok = 0,
  validation = 2,
  insufficient_data = 3,
  harness = 4,
};

struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

struct InsufficientDataError : std::runtime_error {
  explicit InsufficientDataError(const std::string& what) : std::runtime_error(what) {}
};

struct HarnessError : std::runtime_error {
  explicit HarnessError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pcscheck
