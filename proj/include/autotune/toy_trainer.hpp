#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "autotune/evaluator.hpp"

namespace autotune {

/// Two interleaved spirals in [-1, 1]^2, labels 0/1.
struct SpiralData {
  Eigen::MatrixXd train_x;  // 2 x n_train
  std::vector<int> train_y;
  Eigen::MatrixXd val_x;
  std::vector<int> val_y;
};

inline constexpr int kSpiralTrain = 800;
inline constexpr int kSpiralValidation = 200;
inline constexpr std::uint64_t kSpiralSeed = 20190901;

/// The built-in dataset, generated once with kSpiralSeed.
const SpiralData& spiral_dataset();
SpiralData make_spirals(int n_train, int n_val, std::uint64_t seed);

/// Hidden layer widths and the dropout rate after each of them.
struct MlpShape {
  std::vector<int> hidden;
  std::vector<double> dropout;
};

/// Reads fc_layers, neurons_i and dropout_i. Throws SpaceError if any is
/// missing.
MlpShape mlp_shape_from_config(const Configuration& config);

/// ReLU multilayer perceptron with a softmax output, He-normal weights and
/// zero biases. Columns are samples.
template <typename Scalar>
class Mlp {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Mlp(int inputs, const std::vector<int>& hidden, int classes, std::mt19937_64& rng);

  std::size_t layer_count() const noexcept { return weights_.size(); }
  Matrix& weight(std::size_t l) { return weights_[l]; }
  Vector& bias(std::size_t l) { return biases_[l]; }
  std::size_t parameter_count() const;

  /// Mean cross-entropy. `masks` holds one inverted-dropout mask per hidden
  /// layer (already scaled by 1 / (1 - rate)); empty means no dropout.
  /// Fills the gradients when `grad_w`/`grad_b` are non-null.
  Scalar loss(const Matrix& x, const std::vector<int>& y, const std::vector<Matrix>& masks,
              std::vector<Matrix>* grad_w, std::vector<Vector>* grad_b);

  Matrix predict(const Matrix& x);

 private:
  std::vector<Matrix> weights_;  // out x in
  std::vector<Vector> biases_;
  std::vector<Matrix> acts_;
};

extern template class Mlp<float>;
extern template class Mlp<double>;

struct TrainOptions {
  int epochs = 50;
  double learning_rate = 0.01;
  int batch_size = 32;
  int plateau_window = 5;
  double plateau_threshold = 1e-4;  // relative
  std::uint64_t seed = 0;
};

struct TrainResult {
  double val_accuracy = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  int epochs_run = 0;
  int lr_decays = 0;
  bool diverged = false;
};

/// Adagrad, lr decayed by sqrt(0.1) whenever the validation loss has not
/// improved by the relative threshold for `plateau_window` epochs.
TrainResult train_toy(const MlpShape& shape, const SpiralData& data, const TrainOptions& options);

/// eval_toy_trainer: trains on the built-in spirals, value is the final
/// validation accuracy. Non-finite loss gives failed("diverged").
EvalResponse eval_toy_trainer(const Configuration& config, std::uint64_t seed, int epochs = 50);

class ToyTrainerEvaluator : public Evaluator {
 public:
  explicit ToyTrainerEvaluator(std::uint64_t seed) : seed_(seed) {}
  EvalResponse evaluate(const EvalRequest& request) override;
  std::string name() const override { return "toy"; }

 private:
  std::uint64_t seed_;
};

}  // namespace autotune
