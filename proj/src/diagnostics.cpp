#include "mcnn/diagnostics.hpp"

#include <cstdlib>
#include <iostream>

namespace mcnn {
namespace {
thread_local WarningCapture* g_capture = nullptr;
thread_local std::size_t g_count = 0;

bool verbose() {
  static const bool v = [] {
    const char* env = std::getenv("MCNN_VERBOSE");
    return env != nullptr && env[0] != '\0' && env[0] != '0';
  }();
  return v;
}
}  // namespace

WarningCapture::WarningCapture() : outer_(g_capture) { g_capture = this; }
WarningCapture::~WarningCapture() { g_capture = outer_; }

bool WarningCapture::contains(const std::string& needle) const {
  for (const auto& m : messages_) {
    if (m.find(needle) != std::string::npos) return true;
  }
  return false;
}

void warn(std::string message) {
  ++g_count;
  if (verbose()) std::cerr << "warning: " << message << '\n';
  for (WarningCapture* c = g_capture; c != nullptr; c = c->outer_) c->messages_.push_back(message);
}

std::size_t warning_count() { return g_count; }

}  // namespace mcnn
