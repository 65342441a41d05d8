#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace autotune {

/// A single hyperparameter value. Categorical labels are strings, ordinal
/// grid and continuous values are doubles, integer ranges are int64.
using ParamValue = std::variant<std::int64_t, double, std::string>;

struct Categorical {
  std::vector<std::string> values;
};

/// Finite set of real values, strictly increasing.
struct OrdinalGrid {
  std::vector<double> values;
};

/// Inclusive integer interval.
struct IntegerRange {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
};

/// Unquantized real interval. Makes the space's cardinality unbounded.
struct ContinuousRange {
  double lo = 0.0;
  double hi = 1.0;
};

using ParamDomain =
    std::variant<Categorical, OrdinalGrid, IntegerRange, ContinuousRange>;

/// The parameter is active iff `param` is active and its value is one of
/// `equals`.
struct Condition {
  std::string param;
  std::vector<ParamValue> equals;
};

struct ParamSpec {
  std::string name;
  ParamDomain domain;
  std::optional<Condition> active_if;
};

/// Assignment of values to the active parameters; inactive ones are absent.
using Configuration = std::map<std::string, ParamValue>;

/// Fixed-length encoding of a configuration, every coordinate in [0, 1].
using EncodedPoint = std::vector<double>;

struct Defect {
  std::string param;
  std::string message;
};

std::string to_string(const ParamValue& value);
std::string to_string(const Configuration& config);

/// Number of values in a finite domain; nullopt for continuous domains.
std::optional<std::uint64_t> domain_size(const ParamDomain& domain);

bool domain_contains(const ParamDomain& domain, const ParamValue& value);

/// Mixed categorical/ordinal/integer/continuous search space with
/// conditional parameters.
///
/// Layout of the encoding, in declaration order:
///   - categorical: one-hot block, all zero when inactive
///   - ordinal/integer/continuous: one min-max normalized coordinate,
///     preceded by an activity bit when the parameter is conditional
class SearchSpace {
 public:
  SearchSpace() = default;
  explicit SearchSpace(std::vector<ParamSpec> params);

  const std::vector<ParamSpec>& params() const noexcept { return params_; }
  std::size_t size() const noexcept { return params_.size(); }
  std::size_t encoded_dim() const noexcept { return encoded_dim_; }

  const ParamSpec* find(std::string_view name) const;

  /// Every invariant violation; empty iff the space is well formed.
  std::vector<Defect> validate() const;

  /// Whether `spec` is active given the (possibly partial) assignment of
  /// earlier parameters.
  bool is_active(const ParamSpec& spec, const Configuration& partial) const;

  /// Every way `config` fails to be a valid point of this space.
  std::vector<Defect> check(const Configuration& config) const;
  bool contains(const Configuration& config) const {
    return check(config).empty();
  }

  Configuration sample_uniform(std::mt19937_64& rng) const;

  /// Throws SpaceError for configurations that do not check out.
  EncodedPoint encode(const Configuration& config) const;

  /// Inverse of encode on its image. Arbitrary points snap to the nearest
  /// valid value per block, ties toward the lower index. Throws SpaceError
  /// on a length mismatch.
  Configuration decode(std::span<const double> point) const;

  /// Number of distinct valid configurations; nullopt when unbounded.
  std::optional<std::uint64_t> cardinality() const;

  /// All valid configurations in lexicographic declaration order. Throws
  /// SpaceError if the space is unbounded or larger than `limit`.
  std::vector<Configuration> enumerate(std::uint64_t limit) const;

  /// Stable hex digest of the space definition.
  std::string hash() const;

 private:
  std::size_t width_of(const ParamSpec& spec) const;

  std::vector<ParamSpec> params_;
  std::vector<std::size_t> offsets_;
  std::size_t encoded_dim_ = 0;
};

}  // namespace autotune
