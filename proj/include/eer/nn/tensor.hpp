#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every op records its parents and a backward closure when grad
// mode is on and at least one input requires a gradient. Parameters are leaf
// Vars that persist across steps; intermediate graphs die with their Vars.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace eer::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows in
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix& g);
  bool is_leaf() const { return !backward_fn; }
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  /// Gradient, or an empty matrix when none has been accumulated.
  const Matrix& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.resize(0, 0); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }

  /// Same value, fresh node: no history, no gradient link.
  Var detach() const { return Var(node_->value, false); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Thread-local switch. With grad mode off, ops never record history.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// (root, dLoss/dRoot) pair fed into `backward`.
using Seed = std::pair<Var, Matrix>;

/// Propagates all seeds through the recorded graph. Leaf gradients
/// accumulate; interior gradients are reset at the start of every call so a
/// graph can be back-propagated more than once with different seeds.
void backward(std::span<const Seed> seeds);

// --- ops -------------------------------------------------------------------

Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
/// Adds a 1 x n row to every row of x.
Var add_row(const Var& x, const Var& row);
Var scale(const Var& x, double factor);
Var gelu(const Var& x);
Var tanh(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var dropout(const Var& x, double rate, std::mt19937_64& rng);

/// Rows of `table` selected by `ids`. Ids in [alt_first, alt_first + alt.rows())
/// are read from `alt` instead (used for trainable prompt slots); pass an
/// undefined `alt` to disable.
Var embedding(const Var& table, std::span<const std::int32_t> ids, const Var& alt = Var(),
              std::int32_t alt_first = 0);
Var select_rows(const Var& x, std::span<const Eigen::Index> rows);
Var concat_rows(std::span<const Var> parts);
/// Mean of the first `n` rows as a 1 x cols matrix.
Var mean_rows(const Var& x, Eigen::Index n);

/// Multi-head scaled dot-product attention. `q` is Lq x H, `k`/`v` are Lk x H.
/// Keys at positions >= `valid_keys` are masked; with `causal`, query i sees
/// keys j <= i only.
Var attention(const Var& q, const Var& k, const Var& v, int n_heads, Eigen::Index valid_keys,
              bool causal);

/// Pairwise cosine similarity: (n x d, m x d) -> n x m.
Var cosine_matrix(const Var& a, const Var& b);

}  // namespace eer::nn
