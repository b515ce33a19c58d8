#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnnfp/rng.hpp"

namespace gnnfp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { ReLU, Tanh, None };

inline Matrix apply_activation(Activation a, const Matrix& x) {
  switch (a) {
    case Activation::ReLU:
      return x.cwiseMax(0.0);
    case Activation::Tanh:
      return x.array().tanh().matrix();
    case Activation::None:
      return x;
  }
  return x;
}

// d(act)/d(pre), given pre-activation and activated output.
inline Matrix activation_grad(Activation a, const Matrix& pre,
                              const Matrix& post) {
  switch (a) {
    case Activation::ReLU:
      return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::Tanh:
      return (1.0 - post.array().square()).matrix();
    case Activation::None:
      return Matrix::Ones(pre.rows(), pre.cols());
  }
  return Matrix();
}

// A named parameter with its gradient accumulator. All trainable state in the
// toolkit is a flat list of these, which keeps the optimizer, pruning, and
// serialization uniform across architectures.
struct Tensor {
  std::string name;
  Matrix value;
  Matrix grad;

  Tensor() = default;
  Tensor(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)),
        grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
};

inline Matrix glorot(int rows, int cols, std::mt19937_64& rng) {
  double limit = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> unif(-limit, limit);
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = unif(rng);
  return m;
}

class Adam {
 public:
  explicit Adam(double lr, double weight_decay = 0.0)
      : lr_(lr), weight_decay_(weight_decay) {}

  void set_lr(double lr) { lr_ = lr; }

  void step(std::vector<Tensor*> tensors) {
    if (m_.empty()) {
      for (auto* t : tensors) {
        m_.push_back(Matrix::Zero(t->value.rows(), t->value.cols()));
        v_.push_back(Matrix::Zero(t->value.rows(), t->value.cols()));
      }
    }
    if (m_.size() != tensors.size())
      throw std::logic_error("Adam: tensor list changed size");
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      auto& g = tensors[i]->grad;
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
      tensors[i]->value.array() -=
          lr_ * (m_[i].array() / bc1) /
          ((v_[i].array() / bc2).sqrt() + eps_);
      // decoupled decay: drains mass out of weights the loss does not pin
      // down, so magnitude pruning removes genuinely unused capacity
      if (weight_decay_ > 0.0)
        tensors[i]->value.array() *= 1.0 - lr_ * weight_decay_;
    }
  }

 private:
  double lr_;
  double weight_decay_ = 0.0;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int t_ = 0;
  std::vector<Matrix> m_, v_;
};

// Plain fully connected stack; rows of X are samples. Output layer is linear.
class Mlp {
 public:
  struct Cache {
    std::vector<Matrix> inputs;  // input to each layer
    std::vector<Matrix> pre;     // pre-activation of each layer
    std::vector<Matrix> post;    // activated output of each layer
  };

  Mlp() = default;
  Mlp(const std::vector<int>& dims, Activation hidden_act, std::uint64_t seed,
      const std::string& prefix = "mlp") {
    if (dims.size() < 2) throw std::invalid_argument("Mlp: need >= 2 dims");
    act_ = hidden_act;
    auto rng = make_rng(seed, prefix);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      std::string ln = prefix + "." + std::to_string(l);
      tensors_.emplace_back(ln + ".W", glorot(dims[l + 1], dims[l], rng));
      tensors_.emplace_back(ln + ".b", Matrix::Zero(dims[l + 1], 1));
    }
  }

  int layer_count() const { return static_cast<int>(tensors_.size() / 2); }
  int input_dim() const { return static_cast<int>(tensors_[0].value.cols()); }
  int output_dim() const {
    return static_cast<int>(tensors_[tensors_.size() - 2].value.rows());
  }
  Activation activation() const { return act_; }

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const {
    Matrix h = x;
    int nl = layer_count();
    for (int l = 0; l < nl; ++l) {
      const Matrix& w = tensors_[2 * l].value;
      const Matrix& b = tensors_[2 * l + 1].value;
      if (cache) cache->inputs.push_back(h);
      Matrix pre = (h * w.transpose()).rowwise() + b.col(0).transpose();
      Matrix post = l + 1 < nl ? apply_activation(act_, pre) : pre;
      if (cache) {
        cache->pre.push_back(pre);
        cache->post.push_back(post);
      }
      h = std::move(post);
    }
    return h;
  }

  // Accumulates parameter gradients; returns gradient w.r.t. the input.
  Matrix backward(const Cache& cache, const Matrix& d_out) {
    Matrix d = d_out;
    for (int l = layer_count() - 1; l >= 0; --l) {
      if (l + 1 < layer_count())
        d = d.cwiseProduct(activation_grad(act_, cache.pre[l], cache.post[l]));
      tensors_[2 * l].grad += d.transpose() * cache.inputs[l];
      tensors_[2 * l + 1].grad.col(0) += d.colwise().sum().transpose();
      d = d * tensors_[2 * l].value;
    }
    return d;
  }

  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::vector<Tensor*> tensor_ptrs() {
    std::vector<Tensor*> out;
    for (auto& t : tensors_) out.push_back(&t);
    return out;
  }
  void zero_grad() {
    for (auto& t : tensors_) t.zero_grad();
  }

 private:
  Activation act_ = Activation::ReLU;
  std::vector<Tensor> tensors_;
};

// Mean cross-entropy over rows; returns loss and writes d(loss)/d(logits).
inline double softmax_cross_entropy(const Matrix& logits,
                                    const std::vector<int>& labels,
                                    Matrix* d_logits = nullptr) {
  int n = static_cast<int>(logits.rows());
  if (n == 0 || static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("cross_entropy: bad shapes");
  double loss = 0.0;
  if (d_logits) d_logits->resize(logits.rows(), logits.cols());
  for (int i = 0; i < n; ++i) {
    Eigen::RowVectorXd row = logits.row(i);
    double mx = row.maxCoeff();
    Eigen::RowVectorXd e = (row.array() - mx).exp();
    double z = e.sum();
    loss += -(row(labels[i]) - mx - std::log(z));
    if (d_logits) {
      Eigen::RowVectorXd p = e / z;
      p(labels[i]) -= 1.0;
      d_logits->row(i) = p / n;
    }
  }
  return loss / n;
}

// Mean binary cross-entropy on a single-logit output column.
inline double sigmoid_bce(const Matrix& logits, const std::vector<int>& labels,
                          Matrix* d_logits = nullptr) {
  int n = static_cast<int>(logits.rows());
  if (n == 0 || logits.cols() != 1 || static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("sigmoid_bce: bad shapes");
  double loss = 0.0;
  if (d_logits) d_logits->resize(n, 1);
  for (int i = 0; i < n; ++i) {
    double x = logits(i, 0);
    double y = labels[i] ? 1.0 : 0.0;
    // log(1+exp(x)) computed stably
    double softplus = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    loss += softplus - y * x;
    if (d_logits) {
      double sig = 1.0 / (1.0 + std::exp(-x));
      (*d_logits)(i, 0) = (sig - y) / n;
    }
  }
  return loss / n;
}

inline std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(logits.rows());
  for (int i = 0; i < logits.rows(); ++i) {
    Eigen::Index j;
    logits.row(i).maxCoeff(&j);
    out[i] = static_cast<int>(j);
  }
  return out;
}

}  // namespace gnnfp
