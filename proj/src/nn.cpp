#include "fedsim/nn.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fedsim/error.hpp"

namespace fedsim {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows * cols) {
    throw DimensionError("matrix storage does not match " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
}

Matrix Matrix::gather_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto src = row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

std::string to_string(Activation a) { return a == Activation::kReLU ? "relu" : "tanh"; }

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::kReLU;
  if (name == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation '" + name + "'");
}

std::size_t Architecture::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    n += layer_dims[l] * layer_dims[l + 1] + layer_dims[l + 1];
  }
  return n;
}

void Architecture::validate() const {
  if (layer_dims.size() < 2) throw ConfigError("architecture needs at least one layer");
  for (auto d : layer_dims) {
    if (d == 0) throw ConfigError("architecture layer widths must be positive");
  }
}

std::shared_ptr<const ParameterLayout> ParameterLayout::for_architecture(const Architecture& arch) {
  auto layout = std::make_shared<ParameterLayout>();
  std::size_t offset = 0;
  for (std::size_t l = 0; l < arch.num_layers(); ++l) {
    const auto in = arch.layer_dims[l];
    const auto out = arch.layer_dims[l + 1];
    layout->blocks.push_back({l, BlockKind::kWeight, in, out, offset});
    offset += in * out;
    layout->blocks.push_back({l, BlockKind::kBias, 1, out, offset});
    offset += out;
  }
  layout->total = offset;
  return layout;
}

Mlp::Mlp(Architecture arch) : arch_(std::move(arch)) {
  arch_.validate();
  for (std::size_t l = 0; l < arch_.num_layers(); ++l) {
    weights_.emplace_back(arch_.layer_dims[l], arch_.layer_dims[l + 1]);
    biases_.emplace_back(arch_.layer_dims[l + 1], 0.0);
  }
}

Mlp Mlp::initialized(Architecture arch, Rng& rng) {
  Mlp model(std::move(arch));
  for (auto& w : model.weights_) {
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& v : w.values()) v = dist(rng);
  }
  return model;
}

namespace {

double activate(Activation a, double x) {
  return a == Activation::kReLU ? (x > 0.0 ? x : 0.0) : std::tanh(x);
}

// Derivative expressed through the activation output y.
double activate_grad(Activation a, double y) {
  return a == Activation::kReLU ? (y > 0.0 ? 1.0 : 0.0) : 1.0 - y * y;
}

// out = in * W + b
Matrix affine(const Matrix& in, const Matrix& w, const std::vector<double>& b) {
  Matrix out(in.rows(), w.cols());
  for (std::size_t i = 0; i < in.rows(); ++i) {
    auto o = out.row(i);
    std::copy(b.begin(), b.end(), o.begin());
    auto x = in.row(i);
    for (std::size_t k = 0; k < w.rows(); ++k) {
      const double xk = x[k];
      if (xk == 0.0) continue;
      auto wk = w.row(k);
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += xk * wk[j];
    }
  }
  return out;
}

// activations[0] is the input; activations[l+1] is the output of layer l
// (post-activation for hidden layers, raw logits for the last one).
std::vector<Matrix> forward_trace(const Mlp& model, const Matrix& inputs) {
  const auto& arch = model.architecture();
  if (inputs.cols() != arch.input_dim()) {
    std::ostringstream msg;
    msg << "input has " << inputs.cols() << " columns, model expects " << arch.input_dim();
    throw DimensionError(msg.str());
  }
  std::vector<Matrix> acts;
  acts.reserve(model.num_layers() + 1);
  acts.push_back(inputs);
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    Matrix z = affine(acts.back(), model.weights(l), model.bias(l));
    if (l + 1 < model.num_layers()) {
      for (auto& v : z.values()) v = activate(arch.activation, v);
    }
    acts.push_back(std::move(z));
  }
  return acts;
}

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + what);
  }
}

void check_labels(std::span<const int> labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows) {
    throw DimensionError("label count " + std::to_string(labels.size()) +
                         " does not match example count " + std::to_string(rows));
  }
  if (rows == 0) throw DimensionError("empty batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw DimensionError("label " + std::to_string(y) + " outside [0, " +
                           std::to_string(classes) + ")");
    }
  }
}

double log_sum_exp(std::span<const double> row) {
  const double m = *std::max_element(row.begin(), row.end());
  double s = 0.0;
  for (double v : row) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace

Matrix forward(const Mlp& model, const Matrix& inputs) {
  return std::move(forward_trace(model, inputs).back());
}

double cross_entropy(const Matrix& logits, std::span<const int> labels) {
  check_labels(labels, logits.rows(), logits.cols());
  require_finite(logits.values(), "logits");
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    total += log_sum_exp(row) - row[static_cast<std::size_t>(labels[i])];
  }
  return total / static_cast<double>(logits.rows());
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto in = logits.row(i);
    auto o = out.row(i);
    const double m = *std::max_element(in.begin(), in.end());
    double s = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - m);
      s += o[j];
    }
    for (auto& v : o) v /= s;
  }
  return out;
}

namespace {

ParameterVector backprop_trace(const Mlp& model, const std::vector<Matrix>& acts,
                               Matrix delta) {
  const auto& arch = model.architecture();
  auto layout = ParameterLayout::for_architecture(arch);
  ParameterVector grad(std::vector<double>(layout->total, 0.0), layout);

  for (std::size_t l = model.num_layers(); l-- > 0;) {
    const Matrix& in = acts[l];
    const auto& wblock = layout->blocks[2 * l];
    const auto& bblock = layout->blocks[2 * l + 1];
    double* gw = grad.values.data() + wblock.offset;
    double* gb = grad.values.data() + bblock.offset;
    const std::size_t out_dim = delta.cols();

    for (std::size_t i = 0; i < delta.rows(); ++i) {
      auto d = delta.row(i);
      auto x = in.row(i);
      for (std::size_t j = 0; j < out_dim; ++j) gb[j] += d[j];
      for (std::size_t k = 0; k < x.size(); ++k) {
        const double xk = x[k];
        if (xk == 0.0) continue;
        double* gwk = gw + k * out_dim;
        for (std::size_t j = 0; j < out_dim; ++j) gwk[j] += xk * d[j];
      }
    }
    if (l == 0) break;

    // delta for the previous layer: (delta * W^T) .* act'(a_{l})
    const Matrix& w = model.weights(l);
    Matrix prev(delta.rows(), w.rows());
    for (std::size_t i = 0; i < delta.rows(); ++i) {
      auto d = delta.row(i);
      auto p = prev.row(i);
      auto a = in.row(i);
      for (std::size_t k = 0; k < w.rows(); ++k) {
        const double g = activate_grad(arch.activation, a[k]);
        if (g == 0.0) continue;
        auto wk = w.row(k);
        double s = 0.0;
        for (std::size_t j = 0; j < out_dim; ++j) s += wk[j] * d[j];
        p[k] = s * g;
      }
    }
    delta = std::move(prev);
  }
  require_finite(grad.values, "gradient");
  return grad;
}

}  // namespace

LossAndGradient backward(const Mlp& model, const Batch& batch) {
  auto acts = forward_trace(model, batch.inputs);
  const Matrix& logits = acts.back();
  LossAndGradient out;
  out.loss = cross_entropy(logits, batch.labels);

  Matrix delta = softmax_rows(logits);
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < delta.rows(); ++i) {
    auto d = delta.row(i);
    d[static_cast<std::size_t>(batch.labels[i])] -= 1.0;
    for (auto& v : d) v *= scale;
  }
  out.grad = backprop_trace(model, acts, std::move(delta));
  return out;
}

ParameterVector backprop(const Mlp& model, const Matrix& inputs, const Matrix& logit_grad) {
  auto acts = forward_trace(model, inputs);
  if (logit_grad.rows() != inputs.rows() ||
      logit_grad.cols() != model.architecture().output_dim()) {
    throw DimensionError("upstream gradient shape does not match the logits");
  }
  require_finite(logit_grad.values(), "upstream gradient");
  return backprop_trace(model, acts, logit_grad);
}

ParameterVector to_params(const Mlp& model) {
  auto layout = ParameterLayout::for_architecture(model.architecture());
  std::vector<double> values;
  values.reserve(layout->total);
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    auto w = model.weights(l).values();
    values.insert(values.end(), w.begin(), w.end());
    const auto& b = model.bias(l);
    values.insert(values.end(), b.begin(), b.end());
  }
  return ParameterVector(std::move(values), std::move(layout));
}

Mlp from_params(const Architecture& arch, const ParameterVector& params) {
  Mlp model(arch);
  const auto expected = arch.parameter_count();
  if (params.size() != expected) {
    throw LengthError("parameter vector has length " + std::to_string(params.size()) +
                      ", architecture needs " + std::to_string(expected));
  }
  auto it = params.values.begin();
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    auto w = model.weights(l).values();
    std::copy_n(it, w.size(), w.begin());
    it += static_cast<std::ptrdiff_t>(w.size());
    auto& b = model.bias(l);
    std::copy_n(it, b.size(), b.begin());
    it += static_cast<std::ptrdiff_t>(b.size());
  }
  return model;
}

ParameterVector finite_diff_grad(const Mlp& model, const Batch& batch, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite difference step must be positive");
  const auto& arch = model.architecture();
  ParameterVector params = to_params(model);
  ParameterVector grad = ParameterVector::zeros_like(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = params[i];
    params[i] = orig + eps;
    const double up = cross_entropy(forward(from_params(arch, params), batch.inputs), batch.labels);
    params[i] = orig - eps;
    const double down =
        cross_entropy(forward(from_params(arch, params), batch.inputs), batch.labels);
    params[i] = orig;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

Evaluation evaluate(const Mlp& model, const Batch& batch) {
  Matrix logits = forward(model, batch.inputs);
  Evaluation ev;
  ev.loss = cross_entropy(logits, batch.labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == static_cast<std::size_t>(batch.labels[i])) ++correct;
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(batch.size());
  return ev;
}

}  // namespace fedsim
