#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "autotune/search_space.hpp"

namespace autotune {

/// Parses `{"params": [{name, kind, values | lo/hi, active_if}]}` where kind
/// is one of "categorical", "ordinal", "int_range", "continuous" and
/// active_if is `{"param": ..., "equals": value | [values]}`. Condition
/// values are coerced to the referenced parameter's value type.
SearchSpace space_from_json(const nlohmann::json& doc);
nlohmann::json space_to_json(const SearchSpace& space);
SearchSpace load_space(const std::filesystem::path& path);

nlohmann::json value_to_json(const ParamValue& value);

nlohmann::json config_to_json(const Configuration& config);

/// Typed by the space: integers for int_range, doubles for ordinal and
/// continuous, strings for categorical. Throws SpaceError on type errors.
Configuration config_from_json(const nlohmann::json& doc,
                               const SearchSpace& space);

/// Without a space: JSON integers become int64, other numbers double.
Configuration config_from_json(const nlohmann::json& doc);

}  // namespace autotune
