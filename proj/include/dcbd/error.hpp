#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dcbd {

enum class ErrorKind {
  shape,       // incompatible tensor shapes or sizes
  structural,  // malformed autodiff graph
  contract,    // violated call precondition
  numeric,     // non-finite or degenerate values
  config,      // bad configuration key or value
  format,      // malformed file contents
  io,          // file system failure
};

std::string_view to_string(ErrorKind kind);

/// Exit status used by the command-line tool for each error kind.
int exit_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  /// `code` is a short dotted identifier ("pnm.truncated", "ckpt.checksum")
  /// that distinguishes failures sharing the same kind.
  Error(ErrorKind kind, std::string code, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& code() const noexcept { return code_; }

 private:
  ErrorKind kind_;
  std::string code_;
};

[[noreturn]] void fail(ErrorKind kind, std::string code, const std::string& message);

}  // namespace dcbd
