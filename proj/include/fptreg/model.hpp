#pragma once

// Free point transformer: two weight-sharing PointNet encoders (input and
// feature T-nets, shared per-point MLPs, max pooling) produce a global
// feature from the source and target sets; a shared per-point MLP maps
// [global feature | source point] to a displacement for that point.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fptreg/data.hpp"
#include "fptreg/geometry.hpp"
#include "fptreg/tensor.hpp"

namespace fptreg::net {

// Layer widths. paper() is the published network; smaller widths keep the
// same topology and are used where CPU time is the constraint.
struct FptArchitecture {
  std::vector<std::size_t> tnet_conv{64, 128, 1024};
  std::vector<std::size_t> tnet_fc{512, 256};
  std::vector<std::size_t> embed{64, 64};
  std::vector<std::size_t> feature{64, 128, 1024};
  // Hidden widths of the point transformer; a final 3-wide linear layer
  // is always appended.
  std::vector<std::size_t> transformer{1024, 512, 256, 128, 64};

  static FptArchitecture paper() { return {}; }
  static FptArchitecture desk();
  static FptArchitecture tiny();

  std::size_t feature_dim() const { return feature.back(); }
  std::size_t global_dim() const { return 2 * feature_dim(); }
  void validate() const;
  bool operator==(const FptArchitecture&) const = default;
};

FptArchitecture architecture_by_name(const std::string& name);

struct ParameterArray {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;
};

struct LayerSpec {
  std::string name;
  ad::Shape shape;
};

// Every trainable array of the architecture, in a fixed order.
std::vector<LayerSpec> declare_layers(const FptArchitecture& arch);

class FptParameters {
 public:
  static constexpr std::uint32_t format_version = 1;

  FptParameters() = default;
  FptParameters(FptArchitecture arch, std::vector<ParameterArray> arrays);

  // Fan-in scaled uniform weights and zero biases for hidden layers; T-net
  // regressors start at the identity matrix and the last transformer layer at
  // zero, so a fresh network maps the source onto itself.
  static FptParameters initialize(const FptArchitecture& arch, std::uint64_t seed);

  const FptArchitecture& architecture() const { return arch_; }
  const std::vector<ParameterArray>& arrays() const { return arrays_; }
  std::vector<ParameterArray>& arrays() { return arrays_; }
  const ParameterArray& at(std::string_view name) const;
  ParameterArray& at(std::string_view name);
  std::size_t parameter_count() const;

  // Throws ShapeMismatchError naming the first missing or misshapen layer,
  // InvariantError on non-finite values.
  void validate() const;

  bool operator==(const FptParameters& other) const;

 private:
  FptArchitecture arch_;
  std::vector<ParameterArray> arrays_;
};

// Parameters placed on a tape as leaves.
class BoundParameters {
 public:
  BoundParameters(ad::Tape& tape, const FptParameters& params, bool trainable);
  const ad::Tensor& operator[](std::string_view name) const;
  const FptArchitecture& architecture() const { return arch_; }
  ad::Tape& tape() const { return *tape_; }
  // (name, tensor) in declaration order.
  const std::vector<std::pair<std::string, ad::Tensor>>& tensors() const { return tensors_; }

 private:
  ad::Tape* tape_;
  FptArchitecture arch_;
  std::vector<std::pair<std::string, ad::Tensor>> tensors_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

ad::Tensor points_tensor(ad::Tape& tape, const Points& p);
Points tensor_points(const ad::Tensor& t);

// Graph pieces.
ad::Tensor encode(const BoundParameters& p, const ad::Tensor& points);
ad::Tensor transformer_displacement(const BoundParameters& p, const ad::Tensor& global, const ad::Tensor& points);

struct ForwardGraph {
  ad::Tensor global;
  ad::Tensor displacement;
  ad::Tensor transformed;
};
ForwardGraph build_forward(const BoundParameters& p, const ad::Tensor& source, const ad::Tensor& target);

// Inference entry points; each runs on a private tape and is safe to call
// concurrently with shared parameters.
std::vector<double> extract_features(const PointSet& p, const FptParameters& params);

struct FptOutput {
  Points displacements;
  PointSet transformed;
  std::vector<double> global_feature;
};
FptOutput fpt_forward(const PointSet& source, const PointSet& target, const FptParameters& params);

// Displacements the transformer assigns to arbitrary query points under a
// fixed global feature (e.g. landmarks, which never enter the encoders).
Points displace_queries(const std::vector<double>& global_feature, const Points& queries,
                        const FptParameters& params);

// Training loss of a single pair: two-way squared Chamfer between the
// transformed source and the target.
double pair_loss(const PointSet& source, const PointSet& target, const FptParameters& params);

// --- training -----------------------------------------------------------------

struct TrainConfig {
  std::size_t minibatch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 1;
  std::size_t max_steps = 0;  // 0: no cap beyond epochs
  std::size_t points_per_set = 2048;
  std::uint64_t rng_seed = 0;
  // When true, items without an explicit source are normalised and
  // augmented on the fly; items with a source are always used as given.
  bool augment = true;
  data::AugmentationConfig augmentation;

  void validate() const;
};

// A shape to augment (source empty) or a fixed (source, target) pair.
struct TrainingItem {
  PointSet target;
  std::optional<PointSet> source;
};

struct TrainResult {
  FptParameters params;
  std::vector<double> step_losses;   // minibatch mean loss before each update
  std::vector<double> epoch_losses;  // mean of step losses per epoch
  bool aborted = false;
  std::string message;
};

using ProgressFn = std::function<void(std::size_t step, double loss)>;

// Adam on the mean minibatch loss. Deterministic for a given rng_seed. A
// non-finite loss stops training and returns the last finite parameters.
TrainResult train(std::span<const TrainingItem> corpus, const TrainConfig& cfg, const FptParameters& init,
                  const ProgressFn& progress = {});

// The (source, target) pair a training step would see for `item`.
std::pair<PointSet, PointSet> prepare_pair(const TrainingItem& item, const TrainConfig& cfg, std::uint64_t seed);

// --- checkpoints --------------------------------------------------------------

void save_checkpoint(const FptParameters& params, const std::filesystem::path& path);
// Throws CorruptCheckpointError, VersionMismatchError or ShapeMismatchError.
FptParameters load_checkpoint(const std::filesystem::path& path);
FptParameters load_checkpoint(const std::filesystem::path& path, const FptArchitecture& expected);

std::vector<char> encode_checkpoint(const FptParameters& params);
FptParameters decode_checkpoint(std::span<const char> bytes, const FptArchitecture* expected = nullptr);

}  // namespace fptreg::net
