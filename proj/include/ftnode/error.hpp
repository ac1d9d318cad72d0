#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ftnode {

struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct OutOfDomain : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Interval endpoints that do not sit on the integrator's step grid.
struct AlignmentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DegenerateTangent : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A non-finite state appeared during time stepping.
class Divergence : public std::runtime_error {
 public:
  Divergence(std::size_t step, const std::string& what)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace ftnode
