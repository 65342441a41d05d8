#include "autotune/search_space.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

#include "autotune/errors.hpp"

namespace autotune {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double normalize(double v, double lo, double hi) {
  if (hi <= lo) return 0.0;
  return std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
}

std::uint64_t saturating_mul(std::uint64_t a, std::uint64_t b) {
  if (a == 0 || b == 0) return 0;
  if (a > std::numeric_limits<std::uint64_t>::max() / b)
    return std::numeric_limits<std::uint64_t>::max();
  return a * b;
}

std::uint64_t saturating_add(std::uint64_t a, std::uint64_t b) {
  if (a > std::numeric_limits<std::uint64_t>::max() - b)
    return std::numeric_limits<std::uint64_t>::max();
  return a + b;
}

// Value at position `i` of a finite domain.
ParamValue value_at(const ParamDomain& domain, std::uint64_t i) {
  return std::visit(
      Overloaded{
          [&](const Categorical& d) -> ParamValue { return d.values.at(i); },
          [&](const OrdinalGrid& d) -> ParamValue { return d.values.at(i); },
          [&](const IntegerRange& d) -> ParamValue {
            return d.lo + static_cast<std::int64_t>(i);
          },
          [&](const ContinuousRange&) -> ParamValue {
            throw SpaceError("continuous domain has no indexed values");
          },
      },
      domain);
}

}  // namespace

std::string to_string(const ParamValue& value) {
  return std::visit(Overloaded{
                        [](std::int64_t v) { return std::to_string(v); },
                        [](double v) {
                          char buf[32];
                          std::snprintf(buf, sizeof buf, "%.17g", v);
                          std::string s = buf;
                          // Keep short forms when they round-trip.
                          for (int prec = 1; prec < 17; ++prec) {
                            std::snprintf(buf, sizeof buf, "%.*g", prec, v);
                            if (std::strtod(buf, nullptr) == v) {
                              s = buf;
                              break;
                            }
                          }
                          return s;
                        },
                        [](const std::string& v) { return v; },
                    },
                    value);
}

std::string to_string(const Configuration& config) {
  std::string out = "{";
  bool first = true;
  for (const auto& [name, value] : config) {
    if (!first) out += ", ";
    first = false;
    out += name + "=" + to_string(value);
  }
  return out + "}";
}

std::optional<std::uint64_t> domain_size(const ParamDomain& domain) {
  return std::visit(
      Overloaded{
          [](const Categorical& d) -> std::optional<std::uint64_t> {
            return d.values.size();
          },
          [](const OrdinalGrid& d) -> std::optional<std::uint64_t> {
            return d.values.size();
          },
          [](const IntegerRange& d) -> std::optional<std::uint64_t> {
            if (d.hi < d.lo) return 0;
            return static_cast<std::uint64_t>(d.hi - d.lo) + 1;
          },
          [](const ContinuousRange&) -> std::optional<std::uint64_t> {
            return std::nullopt;
          },
      },
      domain);
}

bool domain_contains(const ParamDomain& domain, const ParamValue& value) {
  return std::visit(
      Overloaded{
          [&](const Categorical& d) {
            const auto* s = std::get_if<std::string>(&value);
            return s != nullptr &&
                   std::find(d.values.begin(), d.values.end(), *s) !=
                       d.values.end();
          },
          [&](const OrdinalGrid& d) {
            const auto* v = std::get_if<double>(&value);
            return v != nullptr &&
                   std::find(d.values.begin(), d.values.end(), *v) !=
                       d.values.end();
          },
          [&](const IntegerRange& d) {
            const auto* v = std::get_if<std::int64_t>(&value);
            return v != nullptr && *v >= d.lo && *v <= d.hi;
          },
          [&](const ContinuousRange& d) {
            const auto* v = std::get_if<double>(&value);
            return v != nullptr && std::isfinite(*v) && *v >= d.lo &&
                   *v <= d.hi;
          },
      },
      domain);
}

SearchSpace::SearchSpace(std::vector<ParamSpec> params)
    : params_(std::move(params)) {
  offsets_.reserve(params_.size());
  for (const auto& p : params_) {
    offsets_.push_back(encoded_dim_);
    encoded_dim_ += width_of(p);
  }
}

std::size_t SearchSpace::width_of(const ParamSpec& spec) const {
  if (const auto* c = std::get_if<Categorical>(&spec.domain))
    return c->values.size();
  return spec.active_if ? 2 : 1;
}

const ParamSpec* SearchSpace::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

std::vector<Defect> SearchSpace::validate() const {
  std::vector<Defect> defects;
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& p = params_[i];
    if (p.name.empty()) defects.push_back({p.name, "empty name"});
    if (!position.emplace(p.name, i).second) {
      defects.push_back({p.name, "duplicate name"});
    }

    std::visit(
        Overloaded{
            [&](const Categorical& d) {
              if (d.values.empty()) defects.push_back({p.name, "empty domain"});
              std::set<std::string> seen(d.values.begin(), d.values.end());
              if (seen.size() != d.values.size())
                defects.push_back({p.name, "duplicate value"});
            },
            [&](const OrdinalGrid& d) {
              if (d.values.empty()) defects.push_back({p.name, "empty domain"});
              for (double v : d.values)
                if (!std::isfinite(v))
                  defects.push_back({p.name, "non-finite value"});
              for (std::size_t k = 1; k < d.values.size(); ++k) {
                if (d.values[k] == d.values[k - 1]) {
                  defects.push_back({p.name, "duplicate value"});
                } else if (d.values[k] < d.values[k - 1]) {
                  defects.push_back({p.name, "grid not strictly increasing"});
                }
              }
            },
            [&](const IntegerRange& d) {
              if (d.lo > d.hi) defects.push_back({p.name, "lo > hi"});
            },
            [&](const ContinuousRange& d) {
              if (!std::isfinite(d.lo) || !std::isfinite(d.hi) ||
                  d.lo > d.hi)
                defects.push_back({p.name, "invalid continuous bounds"});
            },
        },
        p.domain);

    if (p.active_if) {
      auto it = position.find(p.active_if->param);
      if (it == position.end() || it->second >= i) {
        bool declared_later = false;
        for (std::size_t j = i; j < params_.size(); ++j)
          if (params_[j].name == p.active_if->param) declared_later = true;
        defects.push_back({p.name, declared_later
                                       ? "condition references a later parameter"
                                       : "dangling condition"});
      } else {
        const auto& parent = params_[it->second];
        if (p.active_if->equals.empty())
          defects.push_back({p.name, "empty condition value set"});
        for (const auto& v : p.active_if->equals)
          if (!domain_contains(parent.domain, v))
            defects.push_back({p.name, "condition value outside domain of " +
                                           parent.name});
      }
    }
  }
  return defects;
}

bool SearchSpace::is_active(const ParamSpec& spec,
                            const Configuration& partial) const {
  if (!spec.active_if) return true;
  auto it = partial.find(spec.active_if->param);
  if (it == partial.end()) return false;  // parent inactive or unassigned
  const auto& eq = spec.active_if->equals;
  return std::find(eq.begin(), eq.end(), it->second) != eq.end();
}

std::vector<Defect> SearchSpace::check(const Configuration& config) const {
  std::vector<Defect> defects;
  for (const auto& [name, value] : config)
    if (find(name) == nullptr) defects.push_back({name, "unknown parameter"});

  for (const auto& p : params_) {
    auto it = config.find(p.name);
    // Activity only depends on earlier parameters, which are checked first.
    const bool active = is_active(p, config);
    if (active && it == config.end()) {
      defects.push_back({p.name, "missing value for active parameter"});
    } else if (!active && it != config.end()) {
      defects.push_back({p.name, "value assigned to inactive parameter"});
    } else if (active && !domain_contains(p.domain, it->second)) {
      defects.push_back({p.name, "value " + to_string(it->second) +
                                     " outside domain"});
    }
  }
  return defects;
}

Configuration SearchSpace::sample_uniform(std::mt19937_64& rng) const {
  Configuration config;
  for (const auto& p : params_) {
    if (!is_active(p, config)) continue;
    if (const auto* c = std::get_if<ContinuousRange>(&p.domain)) {
      std::uniform_real_distribution<double> dist(c->lo, c->hi);
      config.emplace(p.name, dist(rng));
    } else {
      const std::uint64_t n = *domain_size(p.domain);
      std::uniform_int_distribution<std::uint64_t> dist(0, n - 1);
      config.emplace(p.name, value_at(p.domain, dist(rng)));
    }
  }
  return config;
}

EncodedPoint SearchSpace::encode(const Configuration& config) const {
  if (auto defects = check(config); !defects.empty()) {
    throw SpaceError("cannot encode configuration: parameter '" +
                     defects.front().param + "': " + defects.front().message);
  }
  EncodedPoint point(encoded_dim_, 0.0);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& p = params_[i];
    auto it = config.find(p.name);
    if (it == config.end()) continue;  // inactive: block stays zero
    std::size_t off = offsets_[i];
    if (p.active_if) point[off++] = 1.0;
    const ParamValue& v = it->second;
    std::visit(
        Overloaded{
            [&](const Categorical& d) {
              auto pos = std::find(d.values.begin(), d.values.end(),
                                   std::get<std::string>(v));
              point[off + static_cast<std::size_t>(pos - d.values.begin())] =
                  1.0;
            },
            [&](const OrdinalGrid& d) {
              point[off] = normalize(std::get<double>(v), d.values.front(),
                                     d.values.back());
            },
            [&](const IntegerRange& d) {
              point[off] = normalize(static_cast<double>(std::get<std::int64_t>(v)),
                                     static_cast<double>(d.lo),
                                     static_cast<double>(d.hi));
            },
            [&](const ContinuousRange& d) {
              point[off] = normalize(std::get<double>(v), d.lo, d.hi);
            },
        },
        p.domain);
  }
  return point;
}

Configuration SearchSpace::decode(std::span<const double> point) const {
  if (point.size() != encoded_dim_) {
    throw SpaceError("encoded point has length " + std::to_string(point.size()) +
                     ", expected " + std::to_string(encoded_dim_));
  }
  Configuration config;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& p = params_[i];
    if (!is_active(p, config)) continue;
    std::size_t off = offsets_[i] + (p.active_if ? 1 : 0);
    ParamValue value = std::visit(
        Overloaded{
            [&](const Categorical& d) -> ParamValue {
              std::size_t best = 0;
              for (std::size_t k = 1; k < d.values.size(); ++k)
                if (point[off + k] > point[off + best]) best = k;
              return d.values[best];
            },
            [&](const OrdinalGrid& d) -> ParamValue {
              const double lo = d.values.front(), hi = d.values.back();
              const double raw = lo + std::clamp(point[off], 0.0, 1.0) * (hi - lo);
              std::size_t best = 0;
              for (std::size_t k = 1; k < d.values.size(); ++k)
                if (std::abs(d.values[k] - raw) < std::abs(d.values[best] - raw))
                  best = k;
              return d.values[best];
            },
            [&](const IntegerRange& d) -> ParamValue {
              const double raw =
                  static_cast<double>(d.lo) +
                  std::clamp(point[off], 0.0, 1.0) * static_cast<double>(d.hi - d.lo);
              // Nearest integer, exact halves go down.
              auto v = static_cast<std::int64_t>(std::ceil(raw - 0.5));
              return std::clamp(v, d.lo, d.hi);
            },
            [&](const ContinuousRange& d) -> ParamValue {
              const double c = std::clamp(point[off], 0.0, 1.0);
              return std::clamp(d.lo + c * (d.hi - d.lo), d.lo, d.hi);
            },
        },
        p.domain);
    config.emplace(p.name, std::move(value));
  }
  return config;
}

std::optional<std::uint64_t> SearchSpace::cardinality() const {
  for (const auto& p : params_)
    if (std::holds_alternative<ContinuousRange>(p.domain)) return std::nullopt;

  std::set<std::string> controllers;
  for (const auto& p : params_)
    if (p.active_if) controllers.insert(p.active_if->param);

  // Branch only on parameters that gate others; the rest multiply.
  Configuration partial;
  std::function<std::uint64_t(std::size_t)> count = [&](std::size_t i) -> std::uint64_t {
    if (i == params_.size()) return 1;
    const auto& p = params_[i];
    if (!is_active(p, partial)) return count(i + 1);
    const std::uint64_t n = *domain_size(p.domain);
    if (!controllers.contains(p.name)) return saturating_mul(n, count(i + 1));
    std::uint64_t total = 0;
    for (std::uint64_t k = 0; k < n; ++k) {
      partial[p.name] = value_at(p.domain, k);
      total = saturating_add(total, count(i + 1));
    }
    partial.erase(p.name);
    return total;
  };
  return count(0);
}

std::vector<Configuration> SearchSpace::enumerate(std::uint64_t limit) const {
  auto card = cardinality();
  if (!card) throw SpaceError("cannot enumerate an unbounded space");
  if (*card > limit) {
    throw SpaceError("space has " + std::to_string(*card) +
                     " configurations, enumeration limit is " +
                     std::to_string(limit));
  }
  std::vector<Configuration> out;
  out.reserve(static_cast<std::size_t>(*card));
  Configuration partial;
  std::function<void(std::size_t)> walk = [&](std::size_t i) {
    if (i == params_.size()) {
      out.push_back(partial);
      return;
    }
    const auto& p = params_[i];
    if (!is_active(p, partial)) {
      walk(i + 1);
      return;
    }
    const std::uint64_t n = *domain_size(p.domain);
    for (std::uint64_t k = 0; k < n; ++k) {
      partial[p.name] = value_at(p.domain, k);
      walk(i + 1);
    }
    partial.erase(p.name);
  };
  walk(0);
  return out;
}

std::string SearchSpace::hash() const {
  // FNV-1a over a canonical textual rendering.
  std::ostringstream canon;
  for (const auto& p : params_) {
    canon << p.name << '|';
    std::visit(Overloaded{
                   [&](const Categorical& d) {
                     canon << "cat";
                     for (const auto& v : d.values) canon << ':' << v;
                   },
                   [&](const OrdinalGrid& d) {
                     canon << "ord";
                     for (double v : d.values) canon << ':' << to_string(ParamValue{v});
                   },
                   [&](const IntegerRange& d) { canon << "int:" << d.lo << ':' << d.hi; },
                   [&](const ContinuousRange& d) {
                     canon << "cont:" << to_string(ParamValue{d.lo}) << ':'
                           << to_string(ParamValue{d.hi});
                   },
               },
               p.domain);
    if (p.active_if) {
      canon << "|if:" << p.active_if->param;
      for (const auto& v : p.active_if->equals) canon << ':' << to_string(v);
    }
    canon << ';';
  }
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canon.str()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace autotune
