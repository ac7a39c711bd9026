#ifndef SEGCAL_ERROR_HPP
#define SEGCAL_ERROR_HPP

#include <stdexcept>
#include <string>

namespace segcal {

/// Distinct failure kinds surfaced by the toolkit. The CLI maps these to
/// exit codes: config_error -> 2, data errors -> 3, numeric_error -> 4.
enum class Errc {
  malformed_header,
  truncated_payload,
  out_of_range_class,
  io_failure,
  shape_mismatch,
  config_error,
  calibration_error,
  numeric_error,
};

const char* errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace segcal

#endif  // SEGCAL_ERROR_HPP
