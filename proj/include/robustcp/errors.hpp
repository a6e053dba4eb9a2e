#pragma once

#include <stdexcept>
#include <string>

namespace robustcp {

/// A fitted or probed direction collapsed numerically (zero regression
/// vector, one-class label split, and similar degeneracies).
class degenerate_direction_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace robustcp
