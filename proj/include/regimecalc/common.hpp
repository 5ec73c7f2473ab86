#pragma once

#include <stdexcept>
#include <string>

namespace regimecalc {

// Probability of a conditioning event below this threshold counts as zero;
// conditioning on it raises PositivityViolation instead of dividing by ~0.
inline constexpr double kPositivityEps = 1e-12;

// Tolerance for "sums to one" checks on CPT rows and normalized tables.
inline constexpr double kNormalizationTol = 1e-9;

// Default tolerance when comparing an identified quantity with the oracle.
inline constexpr double kDefaultCompareTol = 1e-9;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class PositivityViolation : public Error {
public:
    explicit PositivityViolation(const std::string& what) : Error(what) {}
};

// Raised when observational machinery is asked for a latent quantity.
class LatentAccessError : public Error {
public:
    explicit LatentAccessError(const std::string& what) : Error(what) {}
};

// Malformed model / query / dataset input.
class FormatError : public Error {
public:
    explicit FormatError(const std::string& what) : Error(what) {}
};

// Raised by low-level constructions (e.g. building a natural regime from
// observational data) when the required criterion fails. Higher layers turn
// identification failures into result values instead.
class NotIdentifiedError : public Error {
public:
    explicit NotIdentifiedError(const std::string& what) : Error(what) {}
};

}  // namespace regimecalc
