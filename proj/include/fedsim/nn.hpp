#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fedsim/rng.hpp"

namespace fedsim {

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * cols_, cols_};
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  // Copies the listed rows into a new matrix, in the given order.
  Matrix gather_rows(std::span<const std::size_t> indices) const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

enum class Activation { kReLU, kTanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

// Layer widths from input to output; the hidden activation applies to every
// layer except the last, which emits raw logits.
struct Architecture {
  std::vector<std::size_t> layer_dims;
  Activation activation = Activation::kReLU;

  std::size_t num_layers() const { return layer_dims.empty() ? 0 : layer_dims.size() - 1; }
  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }
  std::size_t parameter_count() const;
  void validate() const;

  bool operator==(const Architecture&) const = default;
};

enum class BlockKind { kWeight, kBias };

struct ParameterBlock {
  std::size_t layer = 0;
  BlockKind kind = BlockKind::kWeight;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const ParameterBlock&) const = default;
};

// Ordered description of where each weight matrix and bias vector lives in
// the flattened parameter vector: W0, b0, W1, b1, ...
struct ParameterLayout {
  std::vector<ParameterBlock> blocks;
  std::size_t total = 0;

  static std::shared_ptr<const ParameterLayout> for_architecture(const Architecture& arch);
};

// Flat parameter vector. The layout is informational and may be null for
// derived quantities such as aggregated pseudo-gradients.
struct ParameterVector {
  std::vector<double> values;
  std::shared_ptr<const ParameterLayout> layout;

  ParameterVector() = default;
  explicit ParameterVector(std::vector<double> v,
                           std::shared_ptr<const ParameterLayout> l = nullptr)
      : values(std::move(v)), layout(std::move(l)) {}

  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  static ParameterVector zeros_like(const ParameterVector& other) {
    return ParameterVector(std::vector<double>(other.size(), 0.0), other.layout);
  }

  friend bool operator==(const ParameterVector& a, const ParameterVector& b) {
    return a.values == b.values;
  }
};

// Weight matrix for layer l has shape layer_dims[l] x layer_dims[l+1], so a
// forward pass is X * W + b with examples in rows.
class Mlp {
 public:
  explicit Mlp(Architecture arch);  // all parameters zero

  // Glorot-uniform weights, zero biases.
  static Mlp initialized(Architecture arch, Rng& rng);

  const Architecture& architecture() const { return arch_; }
  std::size_t num_layers() const { return weights_.size(); }

  Matrix& weights(std::size_t layer) { return weights_[layer]; }
  const Matrix& weights(std::size_t layer) const { return weights_[layer]; }
  std::vector<double>& bias(std::size_t layer) { return biases_[layer]; }
  const std::vector<double>& bias(std::size_t layer) const { return biases_[layer]; }

  bool operator==(const Mlp&) const = default;

 private:
  Architecture arch_;
  std::vector<Matrix> weights_;
  std::vector<std::vector<double>> biases_;
};

struct Batch {
  Matrix inputs;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

// Throws DimensionError when inputs.cols() differs from the input width.
Matrix forward(const Mlp& model, const Matrix& inputs);

// Mean over rows of -log softmax(logits)[label], log-sum-exp stabilized.
double cross_entropy(const Matrix& logits, std::span<const int> labels);

// Row-wise softmax.
Matrix softmax_rows(const Matrix& logits);

struct LossAndGradient {
  double loss = 0.0;
  ParameterVector grad;
};

// Exact gradient of the mean cross-entropy over the batch.
LossAndGradient backward(const Mlp& model, const Batch& batch);

// Back-propagates an arbitrary upstream gradient dL/dlogits (one row per
// example) through the network and returns dL/dparams.
ParameterVector backprop(const Mlp& model, const Matrix& inputs, const Matrix& logit_grad);

ParameterVector to_params(const Mlp& model);
Mlp from_params(const Architecture& arch, const ParameterVector& params);

// Central differences of the batch loss, one coordinate at a time.
ParameterVector finite_diff_grad(const Mlp& model, const Batch& batch, double eps);

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  double error_rate() const { return 1.0 - accuracy; }
};

Evaluation evaluate(const Mlp& model, const Batch& batch);

}  // namespace fedsim
