#include "autotune/architecture.hpp"

#include <fstream>
#include <stdexcept>

#include "autotune/errors.hpp"

namespace autotune {
namespace {

using nlohmann::json;

int ceil_div(int a, int b) { return (a + b - 1) / b; }

double number_param(const Configuration& config, const std::string& name) {
  auto it = config.find(name);
  if (it == config.end())
    throw SpaceError("configuration lacks parameter '" + name + "'");
  if (const auto* i = std::get_if<std::int64_t>(&it->second))
    return static_cast<double>(*i);
  if (const auto* d = std::get_if<double>(&it->second)) return *d;
  throw SpaceError("parameter '" + name + "' is not numeric");
}

int int_param(const Configuration& config, const std::string& name) {
  return static_cast<int>(std::lround(number_param(config, name)));
}

ShapeMismatch structure(int position, std::string message) {
  ShapeMismatch m;
  m.position = position;
  m.kind = MismatchKind::structure;
  m.message = std::move(message);
  return m;
}

std::string tail_name(int j, const char* suffix) {
  return "tail" + std::to_string(j) + "_" + suffix;
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::dense: return "dense";
    case LayerKind::dropout: return "dropout";
    case LayerKind::flatten: return "flatten";
    case LayerKind::upsample: return "upsample";
    case LayerKind::output: return "output";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
  for (auto k : {LayerKind::conv, LayerKind::maxpool, LayerKind::avgpool, LayerKind::dense,
                 LayerKind::dropout, LayerKind::flatten, LayerKind::upsample,
                 LayerKind::output})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown layer kind '" + s + "'");
}

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.h) + "," + std::to_string(s.w) + "," + std::to_string(s.c) + ")";
}

LayerSpec LayerSpec::conv(int filter_size, int n_filters, int stride) {
  LayerSpec l;
  l.kind = LayerKind::conv;
  l.filter_size = filter_size;
  l.n_filters = n_filters;
  l.stride = stride;
  return l;
}

LayerSpec LayerSpec::maxpool(int window, int stride) {
  LayerSpec l;
  l.kind = LayerKind::maxpool;
  l.window = window;
  l.stride = stride;
  return l;
}

LayerSpec LayerSpec::avgpool(int window, int stride) {
  LayerSpec l = maxpool(window, stride);
  l.kind = LayerKind::avgpool;
  return l;
}

LayerSpec LayerSpec::dense(int n_neurons) {
  LayerSpec l;
  l.kind = LayerKind::dense;
  l.n_neurons = n_neurons;
  return l;
}

LayerSpec LayerSpec::dropout(double rate) {
  LayerSpec l;
  l.kind = LayerKind::dropout;
  l.rate = rate;
  return l;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec l;
  l.kind = LayerKind::flatten;
  return l;
}

LayerSpec LayerSpec::upsample(int factor) {
  LayerSpec l;
  l.kind = LayerKind::upsample;
  l.factor = factor;
  return l;
}

LayerSpec LayerSpec::output(int class_count) {
  LayerSpec l = dense(class_count);
  l.kind = LayerKind::output;
  return l;
}

ShapeTrace check_shapes(const ArchitectureSpec& arch) {
  ShapeTrace trace;
  const int n = static_cast<int>(arch.layers.size());
  if (n == 0) {
    trace.mismatch = structure(0, "architecture has no layers");
    return trace;
  }
  if (arch.input_shape.h <= 0 || arch.input_shape.w <= 0 || arch.input_shape.c <= 0) {
    trace.mismatch = structure(0, "input shape must be positive");
    return trace;
  }
  for (int i = 0; i < n; ++i) {
    const bool is_output = arch.layers[i].kind == LayerKind::output;
    if (is_output != (i == n - 1)) {
      trace.mismatch = structure(i, "the output layer must be the last layer, and only it");
      return trace;
    }
  }
  if (arch.layers.back().n_neurons != arch.class_count) {
    trace.mismatch = structure(n - 1, "output layer has " +
                                          std::to_string(arch.layers.back().n_neurons) +
                                          " neurons, class count is " +
                                          std::to_string(arch.class_count));
    return trace;
  }
  for (std::size_t e = 0; e < arch.skip_edges.size(); ++e) {
    const auto& edge = arch.skip_edges[e];
    if (edge.from < 0 || edge.to >= n || edge.from >= edge.to) {
      trace.mismatch = structure(std::clamp(edge.to, 0, n - 1),
                                 "skip edge " + std::to_string(edge.from) + "->" +
                                     std::to_string(edge.to) + " is not strictly forward");
      trace.mismatch->edge = static_cast<int>(e);
      return trace;
    }
  }

  Shape in = arch.input_shape;
  for (int i = 0; i < n; ++i) {
    const LayerSpec& l = arch.layers[i];
    Shape out = in;
    switch (l.kind) {
      case LayerKind::conv:
        if (l.filter_size <= 0 || l.n_filters <= 0 || l.stride <= 0) {
          trace.mismatch = structure(i, "conv layer needs positive filter size, filters and stride");
          return trace;
        }
        out = {ceil_div(in.h, l.stride), ceil_div(in.w, l.stride), l.n_filters};
        break;
      case LayerKind::maxpool:
      case LayerKind::avgpool:
        if (l.window <= 0 || l.stride <= 0) {
          trace.mismatch = structure(i, "pool layer needs positive window and stride");
          return trace;
        }
        out = {ceil_div(in.h, l.stride), ceil_div(in.w, l.stride), in.c};
        break;
      case LayerKind::dense:
      case LayerKind::output:
        if (l.n_neurons <= 0) {
          trace.mismatch = structure(i, "dense layer needs a positive neuron count");
          return trace;
        }
        out = {1, 1, l.n_neurons};
        break;
      case LayerKind::dropout:
        if (l.rate < 0.0 || l.rate > 1.0) {
          trace.mismatch = structure(i, "dropout rate outside [0, 1]");
          return trace;
        }
        break;
      case LayerKind::flatten:
        out = {1, 1, static_cast<int>(in.elements())};
        break;
      case LayerKind::upsample:
        if (l.factor <= 0) {
          trace.mismatch = structure(i, "upsample factor must be positive");
          return trace;
        }
        out = {in.h * l.factor, in.w * l.factor, in.c};
        break;
    }
    const Shape primary = out;

    for (std::size_t e = 0; e < arch.skip_edges.size(); ++e) {
      const auto& edge = arch.skip_edges[e];
      if (edge.to != i) continue;
      const Shape src = trace.outputs[edge.from];
      ShapeMismatch m;
      m.position = i;
      m.primary = out;
      m.other = src;
      m.edge = static_cast<int>(e);
      if (edge.expect_channels && src.c != *edge.expect_channels) {
        m.kind = MismatchKind::depth;
        m.source_contract = true;
        m.other.c = *edge.expect_channels;
        m.message = "skip edge from layer " + std::to_string(edge.from) + " expects " +
                    std::to_string(*edge.expect_channels) + " channels, source provides " +
                    std::to_string(src.c);
        trace.inputs.push_back(in);
        trace.primary.push_back(primary);
        trace.mismatch = m;
        return trace;
      }
      if (src.h != out.h || src.w != out.w) {
        m.kind = MismatchKind::spatial;
        m.message = "spatial mismatch at layer " + std::to_string(i) + ": " +
                    to_string(out) + " vs " + to_string(src) + " from layer " +
                    std::to_string(edge.from);
      } else if (edge.merge == MergeKind::add && src.c != out.c) {
        m.kind = MismatchKind::depth;
        m.message = "depth mismatch at layer " + std::to_string(i) + ": channels " +
                    std::to_string(out.c) + " vs " + std::to_string(src.c) +
                    " from layer " + std::to_string(edge.from);
      } else {
        if (edge.merge == MergeKind::concat) out.c += src.c;
        continue;
      }
      trace.inputs.push_back(in);
      trace.primary.push_back(primary);
      trace.mismatch = m;
      return trace;
    }
    trace.inputs.push_back(in);
    trace.primary.push_back(primary);
    trace.outputs.push_back(out);
    in = out;
  }
  return trace;
}

namespace {

LayerCost layer_cost(const LayerSpec& l, const Shape& in, const Shape& primary) {
  LayerCost cost;
  const auto u = [](auto v) { return static_cast<std::uint64_t>(v); };
  switch (l.kind) {
    case LayerKind::conv: {
      const std::uint64_t k2 = u(l.filter_size) * u(l.filter_size);
      cost.params = (k2 * u(in.c) + 1) * u(l.n_filters);
      cost.flops = 2 * k2 * u(in.c) * u(l.n_filters) * u(primary.h) * u(primary.w);
      break;
    }
    case LayerKind::dense:
    case LayerKind::output: {
      const std::uint64_t n_in = u(in.elements());
      cost.params = (n_in + 1) * u(l.n_neurons);
      cost.flops = 2 * n_in * u(l.n_neurons);
      break;
    }
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      cost.flops = u(l.window) * u(l.window) * u(primary.h) * u(primary.w) * u(primary.c);
      break;
    default:
      break;
  }
  return cost;
}

ShapeTrace require_trace(const ArchitectureSpec& arch) {
  ShapeTrace trace = check_shapes(arch);
  if (!trace.ok()) throw IrreparableMismatch(trace.mismatch->message, trace.mismatch->position);
  return trace;
}

}  // namespace

ParamCounts count_params(const ArchitectureSpec& arch) {
  const ShapeTrace trace = require_trace(arch);
  ParamCounts counts;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto p = layer_cost(arch.layers[i], trace.inputs[i], trace.primary[i]).params;
    counts.per_layer.push_back(p);
    (arch.layers[i].frozen ? counts.frozen : counts.trainable) += p;
    counts.total += p;
  }
  return counts;
}

FlopCounts count_flops(const ArchitectureSpec& arch) {
  const ShapeTrace trace = require_trace(arch);
  FlopCounts counts;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto f = layer_cost(arch.layers[i], trace.inputs[i], trace.primary[i]).flops;
    counts.per_layer.push_back(f);
    counts.total += f;
    if (!arch.layers[i].frozen) counts.learned += f;
  }
  return counts;
}

std::vector<ParamSpec> fc_stack_params() {
  std::vector<ParamSpec> params;
  params.push_back({"fc_layers", IntegerRange{tail_values::kMinFcLayers, tail_values::kMaxFcLayers}, {}});
  for (std::int64_t i = 1; i <= tail_values::kMaxFcLayers; ++i) {
    Condition cond{"fc_layers", {}};
    for (std::int64_t v = i; v <= tail_values::kMaxFcLayers; ++v) cond.equals.emplace_back(v);
    params.push_back({"neurons_" + std::to_string(i), OrdinalGrid{tail_values::kNeurons}, cond});
    params.push_back({"dropout_" + std::to_string(i), OrdinalGrid{tail_values::kDropout}, cond});
  }
  return params;
}

SearchSpace build_space_for_tail(const ArchitectureSpec& arch, int k_max) {
  const int non_output = static_cast<int>(arch.layers.size()) - 1;
  if (k_max < 1 || k_max > non_output) {
    throw std::invalid_argument("k_max " + std::to_string(k_max) + " outside [1, " +
                                std::to_string(non_output) + "]");
  }
  std::vector<ParamSpec> params;
  params.push_back({"depth", IntegerRange{1, k_max}, {}});
  for (int j = 1; j <= k_max; ++j) {
    Condition cond{"depth", {}};
    for (std::int64_t v = j; v <= k_max; ++v) cond.equals.emplace_back(v);
    const LayerSpec& l = arch.layers[non_output - j];
    if (l.kind == LayerKind::conv) {
      params.push_back({tail_name(j, "filter_size"), OrdinalGrid{tail_values::kFilterSizes}, cond});
      params.push_back({tail_name(j, "filters"), OrdinalGrid{tail_values::kFilterCounts}, cond});
    } else if (l.kind == LayerKind::maxpool || l.kind == LayerKind::avgpool) {
      params.push_back({tail_name(j, "window"), OrdinalGrid{tail_values::kPoolWindows}, cond});
    }
  }
  for (auto& p : fc_stack_params()) params.push_back(std::move(p));
  return SearchSpace(std::move(params));
}

void insert_layer_after(ArchitectureSpec& arch, int after, LayerSpec layer,
                        bool move_incoming) {
  const int pos = after + 1;
  arch.layers.insert(arch.layers.begin() + pos, std::move(layer));
  for (auto& e : arch.skip_edges) {
    if (e.from > after) {
      ++e.from;
    } else if (e.from == after) {
      e.from = pos;
    }
    if (e.to > after) {
      ++e.to;
    } else if (e.to == after && move_incoming) {
      e.to = pos;
    }
  }
}

ArchitectureSpec without_layer(const ArchitectureSpec& arch, int position) {
  ArchitectureSpec out = arch;
  out.layers.erase(out.layers.begin() + position);
  for (auto& e : out.skip_edges) {
    if (e.from >= position) --e.from;
    if (e.to >= position) --e.to;
  }
  return out;
}

std::vector<Adapter> insert_adapters(ArchitectureSpec& arch) {
  std::vector<Adapter> adapters;
  const std::size_t max_rounds = 2 * arch.layers.size() + 8;
  for (std::size_t round = 0; round < max_rounds; ++round) {
    const ShapeTrace trace = check_shapes(arch);
    if (trace.ok()) return adapters;
    const ShapeMismatch& m = *trace.mismatch;
    if (m.kind == MismatchKind::structure || m.edge < 0)
      throw IrreparableMismatch(m.message, m.position);

    const SkipEdge edge = arch.skip_edges[m.edge];
    const int q = m.position;
    const int s = edge.from;
    // Channels merged into a layer's output beyond its own primary output.
    auto merged_extra = [&](int layer) {
      const Shape full = layer < static_cast<int>(trace.outputs.size()) ? trace.outputs[layer] : m.primary;
      return full.c - trace.primary[layer].c;
    };

    int after = -1;
    bool move_incoming = true;
    LayerSpec adapter;
    Adapter record;
    if (m.kind == MismatchKind::depth) {
      int target = 0;
      if (m.source_contract) {
        after = s;
        target = *edge.expect_channels - merged_extra(s);
      } else if (!arch.layers[q].frozen) {
        after = q;
        target = m.other.c - (m.primary.c - trace.primary[q].c);
      } else {
        after = s;
        target = m.primary.c - merged_extra(s);
      }
      if (arch.layers[after].frozen || target <= 0) throw IrreparableMismatch(m.message, q);
      adapter = LayerSpec::conv(1, target, 1);
      record.kind = Adapter::Kind::conv1x1;
      record.channels = target;
    } else {
      const bool primary_smaller = m.primary.h < m.other.h;
      const Shape small = primary_smaller ? m.primary : m.other;
      const Shape big = primary_smaller ? m.other : m.primary;
      if (small.h == 0 || small.w == 0 || big.h % small.h != 0 || big.w % small.w != 0 ||
          big.h / small.h != big.w / small.w) {
        throw IrreparableMismatch(m.message, q);
      }
      const int factor = big.h / small.h;
      after = primary_smaller ? q : s;
      move_incoming = primary_smaller;
      if (arch.layers[after].frozen) throw IrreparableMismatch(m.message, q);
      adapter = LayerSpec::upsample(factor);
      record.kind = Adapter::Kind::upsample;
      record.factor = factor;
    }
    adapter.frozen = false;
    adapter.origin = LayerOrigin::adapter;
    adapter.name = (record.kind == Adapter::Kind::conv1x1 ? "adapter_conv1x1_" : "adapter_upsample_") +
                   std::to_string(adapters.size() + 1);
    insert_layer_after(arch, after, adapter, move_incoming);
    record.position = after + 1;
    for (auto& a : adapters)
      if (a.position >= record.position) ++a.position;
    adapters.push_back(record);
  }
  const ShapeTrace trace = check_shapes(arch);
  throw IrreparableMismatch("adapter insertion did not converge",
                            trace.mismatch ? trace.mismatch->position : 0);
}

std::pair<ArchitectureSpec, TuningPlan> apply_configuration(const ArchitectureSpec& arch,
                                                            const Configuration& config) {
  const ShapeTrace base = check_shapes(arch);
  if (!base.ok()) throw IrreparableMismatch("base architecture: " + base.mismatch->message,
                                            base.mismatch->position);
  const int out_index = static_cast<int>(arch.layers.size()) - 1;
  const int k = int_param(config, "depth");
  if (k < 1 || k > out_index)
    throw SpaceError("depth " + std::to_string(k) + " outside [1, " + std::to_string(out_index) + "]");

  TuningPlan plan;
  plan.k = k;
  plan.first_replaced = out_index - k;

  ArchitectureSpec tuned;
  tuned.name = arch.name;
  tuned.input_shape = arch.input_shape;
  tuned.class_count = arch.class_count;

  std::vector<int> new_index(arch.layers.size(), -1);
  for (int i = 0; i < plan.first_replaced; ++i) {
    LayerSpec l = arch.layers[i];
    l.frozen = true;
    new_index[i] = static_cast<int>(tuned.layers.size());
    tuned.layers.push_back(std::move(l));
  }

  auto push_generated = [&](LayerSpec l, std::string name) {
    l.frozen = false;
    l.origin = LayerOrigin::generated;
    l.name = std::move(name);
    tuned.layers.push_back(l);
    plan.generated_layers.push_back(std::move(l));
    return static_cast<int>(tuned.layers.size()) - 1;
  };

  for (int p = plan.first_replaced; p < out_index; ++p) {
    const int j = out_index - p;
    const LayerSpec& old = arch.layers[p];
    if (old.kind == LayerKind::conv) {
      new_index[p] = push_generated(LayerSpec::conv(int_param(config, tail_name(j, "filter_size")),
                                                    int_param(config, tail_name(j, "filters")), 1),
                                    tail_name(j, "conv"));
    } else if (old.kind == LayerKind::maxpool || old.kind == LayerKind::avgpool) {
      const int window = int_param(config, tail_name(j, "window"));
      LayerSpec pool = old.kind == LayerKind::maxpool ? LayerSpec::maxpool(window, 1)
                                                      : LayerSpec::avgpool(window, 1);
      new_index[p] = push_generated(pool, tail_name(j, "pool"));
    }
  }

  const int fc = int_param(config, "fc_layers");
  for (int i = 1; i <= fc; ++i) {
    const std::string idx = std::to_string(i);
    push_generated(LayerSpec::dense(int_param(config, "neurons_" + idx)), "fc" + idx);
    push_generated(LayerSpec::dropout(number_param(config, "dropout_" + idx)), "fc" + idx + "_dropout");
  }
  new_index[out_index] = push_generated(LayerSpec::output(arch.class_count), "output");

  for (const auto& e : arch.skip_edges) {
    SkipEdge moved = e;
    moved.from = new_index[e.from];
    moved.to = new_index[e.to];
    if (moved.from < 0 || moved.to < 0)
      throw IrreparableMismatch("skip edge " + std::to_string(e.from) + "->" + std::to_string(e.to) +
                                    " touches a removed layer",
                                e.to);
    if (e.from >= plan.first_replaced && e.merge == MergeKind::concat && !moved.expect_channels)
      moved.expect_channels = base.outputs[e.from].c;
    tuned.skip_edges.push_back(moved);
  }

  plan.adapters = insert_adapters(tuned);
  return {std::move(tuned), std::move(plan)};
}

json architecture_to_json(const ArchitectureSpec& arch) {
  json layers = json::array();
  for (const auto& l : arch.layers) {
    json j{{"kind", to_string(l.kind)}};
    if (!l.name.empty()) j["name"] = l.name;
    switch (l.kind) {
      case LayerKind::conv:
        j["filter_size"] = l.filter_size;
        j["n_filters"] = l.n_filters;
        j["stride"] = l.stride;
        break;
      case LayerKind::maxpool:
      case LayerKind::avgpool:
        j["window"] = l.window;
        j["stride"] = l.stride;
        break;
      case LayerKind::dense:
      case LayerKind::output:
        j["n_neurons"] = l.n_neurons;
        break;
      case LayerKind::dropout:
        j["rate"] = l.rate;
        break;
      case LayerKind::upsample:
        j["factor"] = l.factor;
        break;
      case LayerKind::flatten:
        break;
    }
    j["frozen"] = l.frozen;
    if (l.origin != LayerOrigin::base)
      j["origin"] = l.origin == LayerOrigin::generated ? "generated" : "adapter";
    layers.push_back(std::move(j));
  }
  json edges = json::array();
  for (const auto& e : arch.skip_edges) {
    json j{{"from", e.from}, {"to", e.to}, {"merge", e.merge == MergeKind::add ? "add" : "concat"}};
    if (e.expect_channels) j["expect_channels"] = *e.expect_channels;
    edges.push_back(std::move(j));
  }
  return json{{"name", arch.name},
              {"input_shape", {arch.input_shape.h, arch.input_shape.w, arch.input_shape.c}},
              {"class_count", arch.class_count},
              {"layers", layers},
              {"skip_edges", edges}};
}

ArchitectureSpec architecture_from_json(const json& doc) {
  ArchitectureSpec arch;
  arch.name = doc.value("name", std::string{});
  const auto& shape = doc.at("input_shape");
  arch.input_shape = {shape.at(0).get<int>(), shape.at(1).get<int>(), shape.at(2).get<int>()};
  arch.class_count = doc.at("class_count").get<int>();
  for (const auto& j : doc.at("layers")) {
    LayerSpec l;
    l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
    l.name = j.value("name", std::string{});
    l.filter_size = j.value("filter_size", 0);
    l.n_filters = j.value("n_filters", 0);
    l.stride = j.value("stride", 1);
    l.window = j.value("window", 0);
    l.n_neurons = j.value("n_neurons", l.kind == LayerKind::output ? arch.class_count : 0);
    l.rate = j.value("rate", 0.0);
    l.factor = j.value("factor", 1);
    l.frozen = j.value("frozen", true);
    const auto origin = j.value("origin", std::string{"base"});
    l.origin = origin == "generated" ? LayerOrigin::generated
               : origin == "adapter" ? LayerOrigin::adapter
                                     : LayerOrigin::base;
    arch.layers.push_back(std::move(l));
  }
  if (doc.contains("skip_edges")) {
    for (const auto& j : doc.at("skip_edges")) {
      SkipEdge e;
      e.from = j.at("from").get<int>();
      e.to = j.at("to").get<int>();
      const auto merge = j.value("merge", std::string{"add"});
      if (merge != "add" && merge != "concat")
        throw std::invalid_argument("unknown merge kind '" + merge + "'");
      e.merge = merge == "add" ? MergeKind::add : MergeKind::concat;
      if (j.contains("expect_channels")) e.expect_channels = j.at("expect_channels").get<int>();
      arch.skip_edges.push_back(e);
    }
  }
  return arch;
}

ArchitectureSpec load_architecture(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open architecture file " + path.string());
  return architecture_from_json(json::parse(in));
}

}  // namespace autotune
