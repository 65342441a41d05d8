#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "autotune/search_space.hpp"

namespace autotune {

enum class LayerKind { conv, maxpool, avgpool, dense, dropout, flatten, upsample, output };
enum class LayerOrigin { base, generated, adapter };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& s);

/// One layer of a layered network. Only the fields relevant to `kind` are
/// meaningful: conv uses filter_size/stride/n_filters, pools use
/// window/stride, dense and output use n_neurons, dropout uses rate,
/// upsample uses factor.
struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  std::string name;
  int filter_size = 0;
  int stride = 1;
  int n_filters = 0;
  int window = 0;
  int n_neurons = 0;
  double rate = 0.0;
  int factor = 1;
  bool frozen = true;
  LayerOrigin origin = LayerOrigin::base;

  static LayerSpec conv(int filter_size, int n_filters, int stride = 1);
  static LayerSpec maxpool(int window, int stride);
  static LayerSpec avgpool(int window, int stride);
  static LayerSpec dense(int n_neurons);
  static LayerSpec dropout(double rate);
  static LayerSpec flatten();
  static LayerSpec upsample(int factor);
  static LayerSpec output(int class_count);

  bool operator==(const LayerSpec&) const = default;
};

enum class MergeKind { add, concat };

/// Skip connection: the output of layer `to` becomes
/// merge(f_to(input), output(from)). `expect_channels`, when set, is the
/// channel count the downstream merge was built for.
struct SkipEdge {
  int from = 0;
  int to = 0;
  MergeKind merge = MergeKind::add;
  std::optional<int> expect_channels;

  bool operator==(const SkipEdge&) const = default;
};

struct Shape {
  int h = 0;
  int w = 0;
  int c = 0;

  bool operator==(const Shape&) const = default;
  std::int64_t elements() const { return std::int64_t{h} * w * c; }
};

std::string to_string(const Shape& s);

struct ArchitectureSpec {
  std::string name;
  Shape input_shape;
  int class_count = 0;
  std::vector<LayerSpec> layers;
  std::vector<SkipEdge> skip_edges;

  bool operator==(const ArchitectureSpec&) const = default;
};

enum class MismatchKind { depth, spatial, structure };

struct ShapeMismatch {
  int position = 0;
  MismatchKind kind = MismatchKind::structure;
  std::string message;
  Shape primary;  // what layer `position` produced itself
  Shape other;    // the skip operand or expected shape
  int edge = -1;  // index into skip_edges, -1 if not edge related
  bool source_contract = false;  // edge source broke expect_channels
};

/// Forward shape propagation. `inputs[i]`/`outputs[i]` are filled for every
/// layer traced before the first mismatch.
struct ShapeTrace {
  std::vector<Shape> inputs;
  std::vector<Shape> primary;  // layer output before skip merges
  std::vector<Shape> outputs;
  std::optional<ShapeMismatch> mismatch;

  bool ok() const { return !mismatch.has_value(); }
};

/// Same padding everywhere: conv and pool outputs have ceil(H / stride)
/// rows. Add merges need equal shapes, concat merges equal H and W.
ShapeTrace check_shapes(const ArchitectureSpec& arch);

struct LayerCost {
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
};

struct ParamCounts {
  std::vector<std::uint64_t> per_layer;
  std::uint64_t frozen = 0;
  std::uint64_t trainable = 0;
  std::uint64_t total = 0;
};

struct FlopCounts {
  std::vector<std::uint64_t> per_layer;
  std::uint64_t total = 0;
  std::uint64_t learned = 0;  // layers with frozen == false
};

/// conv: (k^2 C_in + 1) C_out; dense/output: (n_in + 1) n_out; others 0.
/// Throws IrreparableMismatch if the shape trace fails.
ParamCounts count_params(const ArchitectureSpec& arch);

/// conv: 2 k^2 C_in C_out H W; dense/output: 2 n_in n_out;
/// pool: window^2 H W C. Throws IrreparableMismatch if the trace fails.
FlopCounts count_flops(const ArchitectureSpec& arch);

/// Value sets for generated tail layers.
namespace tail_values {
inline const std::vector<double> kFilterSizes{1, 2, 3, 5};
inline const std::vector<double> kFilterCounts{64, 128, 256, 512};
inline const std::vector<double> kPoolWindows{2, 3};
inline constexpr std::int64_t kMinFcLayers = 1;
inline constexpr std::int64_t kMaxFcLayers = 3;
inline const std::vector<double> kNeurons{64, 128, 256, 512, 1024};
inline const std::vector<double> kDropout{0.0, 0.1, 0.2, 0.3, 0.4, 0.5,
                                          0.6, 0.7, 0.8, 0.9, 1.0};
}  // namespace tail_values

/// Parameters of the fully connected stack: `fc_layers` hidden dense layers
/// (output layer excluded), each with `neurons_i` and a following
/// `dropout_i`.
std::vector<ParamSpec> fc_stack_params();

/// Tail search space: `depth` in {1..k_max} counts trailing non-output
/// layers to replace. The j-th layer from the right contributes
/// `tail<j>_filter_size`/`tail<j>_filters` (conv) or `tail<j>_window`
/// (pools), active when depth >= j. The FC stack parameters follow.
/// Throws std::invalid_argument when k_max is out of range.
SearchSpace build_space_for_tail(const ArchitectureSpec& arch, int k_max);

struct Adapter {
  enum class Kind { conv1x1, upsample };
  int position = 0;  // index of the adapter layer in the tuned architecture
  Kind kind = Kind::conv1x1;
  int channels = 0;  // conv1x1
  int factor = 1;    // upsample
};

struct TuningPlan {
  int k = 0;
  int first_replaced = 0;  // index of the leftmost replaced layer
  std::vector<LayerSpec> generated_layers;
  std::vector<Adapter> adapters;
};

/// Tail surgery: drops the last k non-output layers and the output layer,
/// regenerates conv/pool layers in place from the configuration, appends
/// the FC stack with dropout and a fresh output layer, then inserts 1x1
/// conv and upsample adapters until the shape trace succeeds. Retained
/// layers are frozen, generated ones trainable. Skip edges are kept.
std::pair<ArchitectureSpec, TuningPlan> apply_configuration(const ArchitectureSpec& arch,
                                                            const Configuration& config);

/// Repairs shape mismatches by inserting adapters after trainable layers.
/// Returns the inserted adapters; throws IrreparableMismatch.
std::vector<Adapter> insert_adapters(ArchitectureSpec& arch);

/// Inserts `layer` right after position `after`. Edges leaving `after` now
/// leave the new layer; with `move_incoming` the merges into `after` move to
/// the new layer too.
void insert_layer_after(ArchitectureSpec& arch, int after, LayerSpec layer,
                        bool move_incoming);

/// Inverse of insert_layer_after(..., true).
ArchitectureSpec without_layer(const ArchitectureSpec& arch, int position);

nlohmann::json architecture_to_json(const ArchitectureSpec& arch);
ArchitectureSpec architecture_from_json(const nlohmann::json& doc);
ArchitectureSpec load_architecture(const std::filesystem::path& path);

}  // namespace autotune
