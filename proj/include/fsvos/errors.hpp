#pragma once

#include <functional>
#include <stdexcept>
#include <string>

namespace fsvos {

// Bad or inconsistent configuration (unknown class names, overlapping splits).
class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input violates a value contract (e.g. a non-binary mask).
class ValidationError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Few-shot protocol breach, e.g. asking for a video clip of a base class.
class ProtocolError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class SamplingError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite loss or parameters during optimization.
class NumericError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A parameter that must stay fixed was modified.
class FreezeViolation : public std::logic_error {
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

using WarningHandler = std::function<void(const std::string&)>;

// Installs a handler for library warnings and returns the previous one.
// The default handler writes to stderr.
WarningHandler set_warning_handler(WarningHandler handler);
void warn(const std::string& message);

}  // namespace fsvos
