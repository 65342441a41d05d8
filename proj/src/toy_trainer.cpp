#include "autotune/toy_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "autotune/errors.hpp"

namespace autotune {
namespace {

constexpr double kSpiralTurns = 1.25;
constexpr double kSpiralNoise = 0.04;
constexpr double kAdagradEpsilon = 1e-7;
constexpr float kAdagradInitialAccumulator = 0.1f;

double config_number(const Configuration& config, const std::string& name) {
  auto it = config.find(name);
  if (it == config.end()) throw SpaceError("configuration lacks parameter '" + name + "'");
  if (const auto* i = std::get_if<std::int64_t>(&it->second)) return static_cast<double>(*i);
  if (const auto* d = std::get_if<double>(&it->second)) return *d;
  throw SpaceError("parameter '" + name + "' is not numeric");
}

template <typename Matrix>
Matrix gather(const Matrix& x, const std::vector<int>& y, const std::vector<std::size_t>& order,
              std::size_t begin, std::size_t end, std::vector<int>& labels) {
  Matrix out(x.rows(), static_cast<Eigen::Index>(end - begin));
  labels.resize(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    out.col(static_cast<Eigen::Index>(i - begin)) = x.col(static_cast<Eigen::Index>(order[i]));
    labels[i - begin] = y[order[i]];
  }
  return out;
}

template <typename Matrix>
double accuracy(const Matrix& probs, const std::vector<int>& y) {
  int hits = 0;
  for (Eigen::Index j = 0; j < probs.cols(); ++j) {
    Eigen::Index arg = 0;
    probs.col(j).maxCoeff(&arg);
    hits += static_cast<int>(arg) == y[static_cast<std::size_t>(j)];
  }
  return probs.cols() ? static_cast<double>(hits) / static_cast<double>(probs.cols()) : 0.0;
}

}  // namespace

SpiralData make_spirals(int n_train, int n_val, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, kSpiralNoise);
  const int n = n_train + n_val;
  Eigen::MatrixXd x(2, n);
  std::vector<int> y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    const double t = 0.1 + 0.9 * unit(rng);
    const double theta = 2.0 * std::numbers::pi * kSpiralTurns * t + label * std::numbers::pi;
    x(0, i) = t * std::cos(theta) + noise(rng);
    x(1, i) = t * std::sin(theta) + noise(rng);
    y[static_cast<std::size_t>(i)] = label;
  }
  SpiralData data;
  data.train_x = x.leftCols(n_train);
  data.val_x = x.rightCols(n_val);
  data.train_y.assign(y.begin(), y.begin() + n_train);
  data.val_y.assign(y.begin() + n_train, y.end());
  return data;
}

const SpiralData& spiral_dataset() {
  static const SpiralData data = make_spirals(kSpiralTrain, kSpiralValidation, kSpiralSeed);
  return data;
}

MlpShape mlp_shape_from_config(const Configuration& config) {
  MlpShape shape;
  const int layers = static_cast<int>(std::lround(config_number(config, "fc_layers")));
  for (int i = 1; i <= layers; ++i) {
    shape.hidden.push_back(
        static_cast<int>(std::lround(config_number(config, "neurons_" + std::to_string(i)))));
    shape.dropout.push_back(config_number(config, "dropout_" + std::to_string(i)));
  }
  return shape;
}

template <typename Scalar>
Mlp<Scalar>::Mlp(int inputs, const std::vector<int>& hidden, int classes, std::mt19937_64& rng) {
  int fan_in = inputs;
  std::vector<int> widths = hidden;
  widths.push_back(classes);
  for (int width : widths) {
    std::normal_distribution<double> he(0.0, std::sqrt(2.0 / fan_in));
    Matrix w(width, fan_in);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(he(rng));
    weights_.push_back(std::move(w));
    biases_.push_back(Vector::Zero(width));
    fan_in = width;
  }
}

template <typename Scalar>
std::size_t Mlp<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l)
    n += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
  return n;
}

template <typename Scalar>
typename Mlp<Scalar>::Matrix Mlp<Scalar>::predict(const Matrix& x) {
  Matrix h = x;
  for (std::size_t l = 0; l + 1 < weights_.size(); ++l) {
    Matrix z = weights_[l] * h;
    z.colwise() += biases_[l];
    h = z.cwiseMax(Scalar(0));
  }
  Matrix logits = weights_.back() * h;
  logits.colwise() += biases_.back();
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    auto col = logits.col(j);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
  return logits;
}

template <typename Scalar>
Scalar Mlp<Scalar>::loss(const Matrix& x, const std::vector<int>& y,
                         const std::vector<Matrix>& masks, std::vector<Matrix>* grad_w,
                         std::vector<Vector>* grad_b) {
  const std::size_t hidden = weights_.size() - 1;
  const Eigen::Index batch = x.cols();
  acts_.resize(hidden + 1);
  acts_[0] = x;
  for (std::size_t l = 0; l < hidden; ++l) {
    Matrix z = weights_[l] * acts_[l];
    z.colwise() += biases_[l];
    acts_[l + 1] = z.cwiseMax(Scalar(0));
    if (!masks.empty()) acts_[l + 1].array() *= masks[l].array();
  }
  Matrix probs = weights_.back() * acts_[hidden];
  probs.colwise() += biases_.back();
  Scalar total = 0;
  for (Eigen::Index j = 0; j < batch; ++j) {
    auto col = probs.col(j);
    const Scalar m = col.maxCoeff();
    col.array() -= m;
    const Scalar log_sum = std::log(col.array().exp().sum());
    total -= col(y[static_cast<std::size_t>(j)]) - log_sum;
    col = (col.array() - log_sum).exp().matrix();
  }
  const Scalar mean_loss = total / static_cast<Scalar>(batch);
  if (!grad_w || !grad_b) return mean_loss;

  grad_w->resize(weights_.size());
  grad_b->resize(weights_.size());
  Matrix delta = probs;
  for (Eigen::Index j = 0; j < batch; ++j) delta(y[static_cast<std::size_t>(j)], j) -= Scalar(1);
  delta /= static_cast<Scalar>(batch);
  for (std::size_t l = weights_.size(); l-- > 0;) {
    (*grad_w)[l].noalias() = delta * acts_[l].transpose();
    (*grad_b)[l] = delta.rowwise().sum();
    if (l == 0) break;
    Matrix back = weights_[l].transpose() * delta;
    back = (acts_[l].array() > Scalar(0)).select(back, Scalar(0));
    if (!masks.empty()) back.array() *= masks[l - 1].array();
    delta = std::move(back);
  }
  return mean_loss;
}

template class Mlp<float>;
template class Mlp<double>;

TrainResult train_toy(const MlpShape& shape, const SpiralData& data, const TrainOptions& options) {
  using Net = Mlp<float>;
  std::mt19937_64 rng(options.seed);
  Net net(static_cast<int>(data.train_x.rows()), shape.hidden, 2, rng);

  const Net::Matrix train_x = data.train_x.cast<float>();
  const Net::Matrix val_x = data.val_x.cast<float>();
  std::vector<Net::Matrix> acc_w;
  std::vector<Net::Vector> acc_b;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    acc_w.push_back(Net::Matrix::Constant(net.weight(l).rows(), net.weight(l).cols(),
                                         kAdagradInitialAccumulator));
    acc_b.push_back(Net::Vector::Constant(net.bias(l).size(), kAdagradInitialAccumulator));
  }

  std::vector<std::size_t> order(static_cast<std::size_t>(train_x.cols()));
  std::iota(order.begin(), order.end(), 0);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  std::vector<Net::Matrix> grad_w, masks;
  std::vector<Net::Vector> grad_b;
  std::vector<int> labels;

  TrainResult result;
  double lr = options.learning_rate;
  double best_val = std::numeric_limits<double>::infinity();
  int stale = 0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(options.batch_size));
      const Net::Matrix xb = gather(train_x, data.train_y, order, begin, end, labels);
      masks.clear();
      for (std::size_t l = 0; l < shape.hidden.size(); ++l) {
        const double rate = shape.dropout[l];
        Net::Matrix m(shape.hidden[l], xb.cols());
        if (rate >= 1.0) {
          m.setZero();
        } else {
          const float keep = static_cast<float>(1.0 - rate);
          for (Eigen::Index i = 0; i < m.size(); ++i)
            m.data()[i] = rate > 0.0 && unit(rng) >= keep ? 0.0f : 1.0f / keep;
        }
        masks.push_back(std::move(m));
      }
      const float loss = net.loss(xb, labels, masks, &grad_w, &grad_b);
      if (!std::isfinite(loss)) {
        result.diverged = true;
        result.epochs_run = epoch + 1;
        return result;
      }
      const float step = static_cast<float>(lr);
      for (std::size_t l = 0; l < net.layer_count(); ++l) {
        acc_w[l].array() += grad_w[l].array().square();
        net.weight(l).array() -= step * grad_w[l].array() / (acc_w[l].array().sqrt() + float(kAdagradEpsilon));
        acc_b[l].array() += grad_b[l].array().square();
        net.bias(l).array() -= step * grad_b[l].array() / (acc_b[l].array().sqrt() + float(kAdagradEpsilon));
      }
    }

    const double val_loss = net.loss(val_x, data.val_y, {}, nullptr, nullptr);
    result.epochs_run = epoch + 1;
    result.val_loss = val_loss;
    if (!std::isfinite(val_loss)) {
      result.diverged = true;
      return result;
    }
    if (val_loss < best_val * (1.0 - options.plateau_threshold)) {
      best_val = val_loss;
      stale = 0;
    } else if (++stale >= options.plateau_window) {
      lr *= std::sqrt(0.1);
      ++result.lr_decays;
      stale = 0;
    }
  }
  result.val_accuracy = accuracy(net.predict(val_x), data.val_y);
  result.train_accuracy = accuracy(net.predict(train_x), data.train_y);
  return result;
}

EvalResponse eval_toy_trainer(const Configuration& config, std::uint64_t seed, int epochs) {
  MlpShape shape;
  try {
    shape = mlp_shape_from_config(config);
  } catch (const SpaceError& e) {
    return EvalResponse::failure("dimension", {{"detail", e.what()}});
  }
  TrainOptions options;
  options.seed = seed;
  options.epochs = epochs;
  const TrainResult r = train_toy(shape, spiral_dataset(), options);
  nlohmann::json meta{{"train_accuracy", r.train_accuracy},
                      {"val_loss", r.val_loss},
                      {"epochs_run", r.epochs_run},
                      {"lr_decays", r.lr_decays}};
  if (r.diverged) return EvalResponse::failure("diverged", std::move(meta));
  return EvalResponse::success(r.val_accuracy, std::move(meta));
}

EvalResponse ToyTrainerEvaluator::evaluate(const EvalRequest& request) {
  return eval_toy_trainer(request.config, seed_, request.epochs);
}

}  // namespace autotune
