#include "autotune/space_io.hpp"

#include <fstream>

#include "autotune/errors.hpp"

namespace autotune {
namespace {

using nlohmann::json;

ParamValue coerce(const json& v, const ParamDomain& domain,
                  const std::string& name) {
  if (std::holds_alternative<Categorical>(domain)) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number()) return v.dump();
  } else if (std::holds_alternative<IntegerRange>(domain)) {
    if (v.is_number_integer()) return v.get<std::int64_t>();
    if (v.is_number_float()) {
      const double d = v.get<double>();
      if (d == static_cast<double>(static_cast<std::int64_t>(d)))
        return static_cast<std::int64_t>(d);
    }
  } else if (v.is_number()) {
    return v.get<double>();
  }
  throw SpaceError("parameter '" + name + "': value " + v.dump() +
                   " has the wrong type");
}

ParamValue untyped(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number()) return v.get<double>();
  throw SpaceError("configuration value " + v.dump() + " is not a scalar");
}

}  // namespace

SearchSpace space_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("params") || !doc["params"].is_array())
    throw SpaceError("space document needs a top-level \"params\" array");

  std::vector<ParamSpec> params;
  for (const auto& entry : doc["params"]) {
    ParamSpec spec;
    spec.name = entry.at("name").get<std::string>();
    const auto kind = entry.at("kind").get<std::string>();
    if (kind == "categorical") {
      Categorical d;
      for (const auto& v : entry.at("values"))
        d.values.push_back(v.is_string() ? v.get<std::string>() : v.dump());
      spec.domain = std::move(d);
    } else if (kind == "ordinal") {
      OrdinalGrid d;
      for (const auto& v : entry.at("values")) d.values.push_back(v.get<double>());
      spec.domain = std::move(d);
    } else if (kind == "int_range") {
      spec.domain = IntegerRange{entry.at("lo").get<std::int64_t>(),
                                 entry.at("hi").get<std::int64_t>()};
    } else if (kind == "continuous") {
      spec.domain = ContinuousRange{entry.at("lo").get<double>(),
                                    entry.at("hi").get<double>()};
    } else {
      throw SpaceError("parameter '" + spec.name + "': unknown kind '" + kind + "'");
    }

    if (entry.contains("active_if") && !entry["active_if"].is_null()) {
      const auto& cond = entry["active_if"];
      Condition c;
      c.param = cond.at("param").get<std::string>();
      const ParamSpec* parent = nullptr;
      for (const auto& p : params)
        if (p.name == c.param) parent = &p;
      const auto& eq = cond.at("equals");
      auto add = [&](const json& v) {
        // Undeclared parents are reported by validate(); keep the raw value.
        c.equals.push_back(parent ? coerce(v, parent->domain, spec.name) : untyped(v));
      };
      if (eq.is_array()) {
        for (const auto& v : eq) add(v);
      } else {
        add(eq);
      }
      spec.active_if = std::move(c);
    }
    params.push_back(std::move(spec));
  }
  return SearchSpace(std::move(params));
}

json value_to_json(const ParamValue& value) {
  return std::visit([](const auto& v) { return json(v); }, value);
}

json space_to_json(const SearchSpace& space) {
  json params = json::array();
  for (const auto& p : space.params()) {
    json e;
    e["name"] = p.name;
    if (const auto* d = std::get_if<Categorical>(&p.domain)) {
      e["kind"] = "categorical";
      e["values"] = d->values;
    } else if (const auto* d = std::get_if<OrdinalGrid>(&p.domain)) {
      e["kind"] = "ordinal";
      e["values"] = d->values;
    } else if (const auto* d = std::get_if<IntegerRange>(&p.domain)) {
      e["kind"] = "int_range";
      e["lo"] = d->lo;
      e["hi"] = d->hi;
    } else if (const auto* d = std::get_if<ContinuousRange>(&p.domain)) {
      e["kind"] = "continuous";
      e["lo"] = d->lo;
      e["hi"] = d->hi;
    }
    if (p.active_if) {
      json eq = json::array();
      for (const auto& v : p.active_if->equals) eq.push_back(value_to_json(v));
      e["active_if"] = {{"param", p.active_if->param}, {"equals", eq}};
    }
    params.push_back(std::move(e));
  }
  return json{{"params", params}};
}

SearchSpace load_space(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SpaceError("cannot open space file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SpaceError("space file " + path.string() + ": " + e.what());
  }
  return space_from_json(doc);
}

json config_to_json(const Configuration& config) {
  json out = json::object();
  for (const auto& [name, value] : config) out[name] = value_to_json(value);
  return out;
}

Configuration config_from_json(const json& doc, const SearchSpace& space) {
  if (!doc.is_object()) throw SpaceError("configuration must be a JSON object");
  Configuration config;
  for (const auto& [name, v] : doc.items()) {
    const ParamSpec* spec = space.find(name);
    if (spec == nullptr) throw SpaceError("unknown parameter '" + name + "'");
    config.emplace(name, coerce(v, spec->domain, name));
  }
  return config;
}

Configuration config_from_json(const json& doc) {
  if (!doc.is_object()) throw SpaceError("configuration must be a JSON object");
  Configuration config;
  for (const auto& [name, v] : doc.items()) config.emplace(name, untyped(v));
  return config;
}

}  // namespace autotune
