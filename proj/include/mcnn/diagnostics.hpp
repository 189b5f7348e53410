#pragma once
// Recorded warnings for degenerate-but-recoverable situations (empty masks,
// all-background label maps, missing PCP pairs, ...). Warnings go to a
// thread-local log so tests can assert on them; they are echoed to stderr
// only when MCNN_VERBOSE is set.

#include <string>
#include <vector>

namespace mcnn {

void warn(std::string message);

/// Collects every warning raised on this thread while it is alive.
class WarningCapture {
 public:
  WarningCapture();
  ~WarningCapture();
  WarningCapture(const WarningCapture&) = delete;
  WarningCapture& operator=(const WarningCapture&) = delete;

  const std::vector<std::string>& messages() const { return messages_; }
  std::size_t count() const { return messages_.size(); }
  bool contains(const std::string& needle) const;

 private:
  friend void warn(std::string message);
  std::vector<std::string> messages_;
  WarningCapture* outer_;
};

/// Total warnings raised on this thread since start-up.
std::size_t warning_count();

}  // namespace mcnn
