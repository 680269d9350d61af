#include "fsvos/errors.hpp"

#include <iostream>
#include <mutex>
#include <utility>

namespace fsvos {

namespace {

std::mutex g_warning_mutex;

WarningHandler& handler_slot() {
  static WarningHandler handler = [](const std::string& message) {
    std::cerr << "warning: " << message << '\n';
  };
  return handler;
}

}  // namespace

WarningHandler set_warning_handler(WarningHandler handler) {
  std::lock_guard lock(g_warning_mutex);
  return std::exchange(handler_slot(), std::move(handler));
}

void warn(const std::string& message) {
  WarningHandler handler;
  {
    std::lock_guard lock(g_warning_mutex);
    handler = handler_slot();
  }
  if (handler) handler(message);
}

}  // namespace fsvos
