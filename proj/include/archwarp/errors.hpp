#ifndef ARCHWARP_ERRORS_HPP
#define ARCHWARP_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace archwarp {

/// Raised when a volume, lattice or grid has unusable dimensions, or two
/// operands disagree in shape.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a scalar argument lies outside its admissible interval.
class RangeError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Raised on non-finite samples or otherwise malformed numeric content.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The normal equations of a lattice fit are singular.
class RankError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace archwarp

#endif
