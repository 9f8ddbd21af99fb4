#pragma once

#include <stdexcept>
#include <string>

namespace cmsr {

// Shape or value precondition violated by the caller.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A NaN/Inf appeared in an activation, gradient or loss.
class NumericFailure : public std::runtime_error {
 public:
  explicit NumericFailure(const std::string& what, std::string where = {})
      : std::runtime_error(what), where_(std::move(where)) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

// Model or patch archive that cannot be decoded. `record()` names the
// offending record ("header" for the file preamble).
class CorruptModel : public std::runtime_error {
 public:
  CorruptModel(const std::string& record, const std::string& what)
      : std::runtime_error("corrupt model (" + record + "): " + what), record_(record) {}
  const std::string& record() const noexcept { return record_; }

 private:
  std::string record_;
};

class UnsupportedScale : public CorruptModel {
 public:
  explicit UnsupportedScale(int scale)
      : CorruptModel("header", "unsupported scale " + std::to_string(scale)), scale_(scale) {}
  int scale() const noexcept { return scale_; }

 private:
  int scale_;
};

// EPSNR requested over a boundary mask with no pixels.
class EmptyMask : public std::runtime_error {
 public:
  EmptyMask() : std::runtime_error("edge mask is empty; EPSNR undefined") {}
};

}  // namespace cmsr
