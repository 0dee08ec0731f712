#ifndef CLIFFM_COMMON_HPP
#define CLIFFM_COMMON_HPP

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cliffm {

using Rng = std::mt19937_64;

// Milliseconds since the Unix epoch, UTC.
using TimeMs = std::int64_t;

inline constexpr TimeMs kSecondMs = 1000;
inline constexpr TimeMs kHourMs = 3600 * kSecondMs;
inline constexpr TimeMs kDayMs = 24 * kHourMs;

// Error hierarchy. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ArtifactError : public Error {
 public:
  using Error::Error;
};

class StaleArtifactError : public ArtifactError {
 public:
  using ArtifactError::ArtifactError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class SingularMatrixError : public NumericError {
 public:
  using NumericError::NumericError;
};

class SeparationError : public NumericError {
 public:
  using NumericError::NumericError;
};

// ISO-8601 UTC timestamps: "YYYY-MM-DDTHH:MM:SS[.fff](Z|+00:00)". A space is
// accepted in place of 'T'. Throws ParseError on anything else.
TimeMs parse_iso8601(std::string_view text);
std::string format_iso8601(TimeMs t);

// Shortest representation that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view text);

// Independent child stream for task `index` of a run seeded with `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace cliffm

#endif  // CLIFFM_COMMON_HPP
