#include "eer/nn/tensor.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace eer::nn {

namespace {

thread_local bool g_grad_enabled = true;

bool any_requires_grad(std::initializer_list<const Var*> vars) {
  for (const Var* v : vars) {
    if (v->defined() && v->requires_grad()) return true;
  }
  return false;
}

// Wraps a forward result. History is kept only when needed.
Var make_op(Matrix value, std::initializer_list<const Var*> parents,
            std::function<void(Node&)> backward_fn) {
  if (!g_grad_enabled || !any_requires_grad(parents)) return Var(std::move(value), false);
  Var out(std::move(value), true);
  Node& node = *out.node();
  for (const Var* p : parents) {
    if (p->defined() && p->requires_grad()) node.parents.push_back(p->node());
  }
  node.backward_fn = std::move(backward_fn);
  return out;
}

void push_grad(const Var& target, const Matrix& g) {
  if (target.defined() && target.requires_grad()) target.node()->accumulate(g);
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(std::span<const Seed> seeds) {
  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  for (const auto& [root, seed] : seeds) {
    if (!root.requires_grad()) continue;
    Node* r = root.node().get();
    if (visited.count(r)) continue;
    visited.insert(r);
    stack.emplace_back(r, 0);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* parent = node->parents[next++].get();
        if (!visited.count(parent)) {
          visited.insert(parent);
          stack.emplace_back(parent, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }
  for (Node* n : order) {
    if (!n->is_leaf()) n->grad.resize(0, 0);
  }
  for (const auto& [root, seed] : seeds) {
    if (!root.requires_grad()) continue;
    if (seed.rows() != root.rows() || seed.cols() != root.cols()) {
      throw std::invalid_argument("backward: seed shape mismatch");
    }
    root.node()->accumulate(seed);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf() && n->grad.size() != 0) n->backward_fn(*n);
  }
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Matrix value = a.value() * b.value();
  return make_op(std::move(value), {&a, &b}, [a, b](Node& self) {
    if (a.requires_grad()) push_grad(a, self.grad * b.value().transpose());
    if (b.requires_grad()) push_grad(b, a.value().transpose() * self.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  Matrix value = a.value() * b.value().transpose();
  return make_op(std::move(value), {&a, &b}, [a, b](Node& self) {
    if (a.requires_grad()) push_grad(a, self.grad * b.value());
    if (b.requires_grad()) push_grad(b, self.grad.transpose() * a.value());
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Matrix value = a.value() + b.value();
  return make_op(std::move(value), {&a, &b}, [a, b](Node& self) {
    push_grad(a, self.grad);
    push_grad(b, self.grad);
  });
}

Var add_row(const Var& x, const Var& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw std::invalid_argument("add_row: expected 1 x cols row");
  }
  Matrix value = x.value();
  value.rowwise() += row.value().row(0);
  return make_op(std::move(value), {&x, &row}, [x, row](Node& self) {
    push_grad(x, self.grad);
    if (row.requires_grad()) push_grad(row, self.grad.colwise().sum());
  });
}

Var scale(const Var& x, double factor) {
  Matrix value = x.value() * factor;
  return make_op(std::move(value), {&x},
                 [x, factor](Node& self) { push_grad(x, self.grad * factor); });
}

Var gelu(const Var& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const Matrix& in = x.value();
  Matrix value(in.rows(), in.cols());
  for (Eigen::Index i = 0; i < in.size(); ++i) {
    double v = in.data()[i];
    value.data()[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  return make_op(std::move(value), {&x}, [x](Node& self) {
    const Matrix& in = x.value();
    Matrix g(in.rows(), in.cols());
    for (Eigen::Index i = 0; i < in.size(); ++i) {
      double v = in.data()[i];
      double t = std::tanh(kC * (v + kA * v * v * v));
      double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
      g.data()[i] = d * self.grad.data()[i];
    }
    push_grad(x, g);
  });
}

Var tanh(const Var& x) {
  Matrix value = x.value().array().tanh().matrix();
  Matrix saved = value;
  return make_op(std::move(value), {&x}, [x, saved](Node& self) {
    push_grad(x, (self.grad.array() * (1.0 - saved.array().square())).matrix());
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index n = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n) {
    throw std::invalid_argument("layer_norm: parameter shape mismatch");
  }
  Matrix xhat(x.rows(), n);
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    auto row = x.value().row(r);
    double mean = row.mean();
    double var = (row.array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (row.array() - mean) * inv_std(r);
  }
  Matrix value = xhat;
  value.array().rowwise() *= gamma.value().row(0).array();
  value.rowwise() += beta.value().row(0);
  return make_op(std::move(value), {&x, &gamma, &beta},
                 [x, gamma, beta, xhat, inv_std](Node& self) {
                   const Matrix& g = self.grad;
                   if (gamma.requires_grad()) {
                     push_grad(gamma, (g.array() * xhat.array()).colwise().sum().matrix());
                   }
                   if (beta.requires_grad()) push_grad(beta, g.colwise().sum());
                   if (!x.requires_grad()) return;
                   Matrix dxhat = g;
                   dxhat.array().rowwise() *= gamma.value().row(0).array();
                   Matrix dx(g.rows(), g.cols());
                   for (Eigen::Index r = 0; r < g.rows(); ++r) {
                     double m1 = dxhat.row(r).mean();
                     double m2 = (dxhat.row(r).array() * xhat.row(r).array()).mean();
                     dx.row(r) = inv_std(r) *
                                 (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2).matrix();
                   }
                   push_grad(x, dx);
                 });
}

Var dropout(const Var& x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix mask(x.rows(), x.cols());
  const double inv_keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? inv_keep : 0.0;
  Matrix value = (x.value().array() * mask.array()).matrix();
  return make_op(std::move(value), {&x}, [x, mask](Node& self) {
    push_grad(x, (self.grad.array() * mask.array()).matrix());
  });
}

Var embedding(const Var& table, std::span<const std::int32_t> ids, const Var& alt,
              std::int32_t alt_first) {
  const Eigen::Index width = table.cols();
  const bool has_alt = alt.defined() && alt.rows() > 0;
  if (has_alt && alt.cols() != width) throw std::invalid_argument("embedding: width mismatch");
  const auto alt_end = has_alt ? alt_first + static_cast<std::int32_t>(alt.rows()) : alt_first;
  auto from_alt = [&](std::int32_t id) { return has_alt && id >= alt_first && id < alt_end; };
  Matrix value(static_cast<Eigen::Index>(ids.size()), width);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::int32_t id = ids[i];
    if (from_alt(id)) {
      value.row(static_cast<Eigen::Index>(i)) = alt.value().row(id - alt_first);
    } else {
      if (id < 0 || id >= table.rows()) throw std::out_of_range("embedding: id out of range");
      value.row(static_cast<Eigen::Index>(i)) = table.value().row(id);
    }
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return make_op(std::move(value), {&table, &alt},
                 [table, alt, saved, has_alt, alt_first, alt_end](Node& self) {
                   Matrix gt = Matrix::Zero(table.rows(), table.cols());
                   Matrix ga;
                   if (has_alt) ga = Matrix::Zero(alt.rows(), alt.cols());
                   for (std::size_t i = 0; i < saved.size(); ++i) {
                     const std::int32_t id = saved[i];
                     auto g = self.grad.row(static_cast<Eigen::Index>(i));
                     if (has_alt && id >= alt_first && id < alt_end) {
                       ga.row(id - alt_first) += g;
                     } else {
                       gt.row(id) += g;
                     }
                   }
                   if (table.requires_grad()) push_grad(table, gt);
                   if (has_alt && alt.requires_grad()) push_grad(alt, ga);
                 });
}

Var select_rows(const Var& x, std::span<const Eigen::Index> rows) {
  Matrix value(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= x.rows()) throw std::out_of_range("select_rows");
    value.row(static_cast<Eigen::Index>(i)) = x.value().row(rows[i]);
  }
  std::vector<Eigen::Index> saved(rows.begin(), rows.end());
  return make_op(std::move(value), {&x}, [x, saved](Node& self) {
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < saved.size(); ++i) {
      g.row(saved[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    }
    push_grad(x, g);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  Eigen::Index total = 0;
  const Eigen::Index width = parts.front().cols();
  for (const Var& p : parts) {
    if (p.cols() != width) throw std::invalid_argument("concat_rows: width mismatch");
    total += p.rows();
  }
  Matrix value(total, width);
  Eigen::Index offset = 0;
  bool any_grad = false;
  for (const Var& p : parts) {
    value.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
    any_grad = any_grad || p.requires_grad();
  }
  if (!g_grad_enabled || !any_grad) return Var(std::move(value), false);
  Var out(std::move(value), true);
  std::vector<Var> saved(parts.begin(), parts.end());
  for (const Var& p : saved) {
    if (p.requires_grad()) out.node()->parents.push_back(p.node());
  }
  out.node()->backward_fn = [saved](Node& self) {
    Eigen::Index off = 0;
    for (const Var& p : saved) {
      if (p.requires_grad()) push_grad(p, self.grad.middleRows(off, p.rows()));
      off += p.rows();
    }
  };
  return out;
}

Var mean_rows(const Var& x, Eigen::Index n) {
  if (n < 1 || n > x.rows()) throw std::invalid_argument("mean_rows: bad row count");
  Matrix value = x.value().topRows(n).colwise().mean();
  return make_op(std::move(value), {&x}, [x, n](Node& self) {
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    g.topRows(n).rowwise() = self.grad.row(0) / static_cast<double>(n);
    push_grad(x, g);
  });
}

Var attention(const Var& q, const Var& k, const Var& v, int n_heads, Eigen::Index valid_keys,
              bool causal) {
  const Eigen::Index lq = q.rows();
  const Eigen::Index lk = k.rows();
  const Eigen::Index width = q.cols();
  if (k.cols() != width || v.cols() != width || v.rows() != lk) {
    throw std::invalid_argument("attention: shape mismatch");
  }
  if (n_heads < 1 || width % n_heads != 0) throw std::invalid_argument("attention: bad heads");
  const Eigen::Index d = width / n_heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(d));
  auto probs = std::make_shared<std::vector<Matrix>>(static_cast<std::size_t>(n_heads));
  Matrix value(lq, width);
  for (int h = 0; h < n_heads; ++h) {
    const Eigen::Index c0 = h * d;
    Matrix s = q.value().middleCols(c0, d) * k.value().middleCols(c0, d).transpose();
    s *= scale_factor;
    Matrix& p = (*probs)[static_cast<std::size_t>(h)];
    p = Matrix::Zero(lq, lk);
    for (Eigen::Index i = 0; i < lq; ++i) {
      Eigen::Index limit = std::min(valid_keys, lk);
      if (causal) limit = std::min(limit, i + 1);
      if (limit <= 0) continue;
      double mx = s.row(i).head(limit).maxCoeff();
      double sum = 0.0;
      for (Eigen::Index j = 0; j < limit; ++j) {
        double e = std::exp(s(i, j) - mx);
        p(i, j) = e;
        sum += e;
      }
      p.row(i).head(limit) /= sum;
    }
    value.middleCols(c0, d) = p * v.value().middleCols(c0, d);
  }
  return make_op(std::move(value), {&q, &k, &v},
                 [q, k, v, probs, n_heads, d, scale_factor](Node& self) {
                   Matrix gq = Matrix::Zero(q.rows(), q.cols());
                   Matrix gk = Matrix::Zero(k.rows(), k.cols());
                   Matrix gv = Matrix::Zero(v.rows(), v.cols());
                   for (int h = 0; h < n_heads; ++h) {
                     const Eigen::Index c0 = h * d;
                     const Matrix& p = (*probs)[static_cast<std::size_t>(h)];
                     Matrix go = self.grad.middleCols(c0, d);
                     Matrix dp = go * v.value().middleCols(c0, d).transpose();
                     gv.middleCols(c0, d) += p.transpose() * go;
                     Eigen::VectorXd row_dot = (dp.array() * p.array()).rowwise().sum();
                     Matrix ds = (p.array() * (dp.colwise() - row_dot).array()).matrix();
                     ds *= scale_factor;
                     gq.middleCols(c0, d) += ds * k.value().middleCols(c0, d);
                     gk.middleCols(c0, d) += ds.transpose() * q.value().middleCols(c0, d);
                   }
                   if (q.requires_grad()) push_grad(q, gq);
                   if (k.requires_grad()) push_grad(k, gk);
                   if (v.requires_grad()) push_grad(v, gv);
                 });
}

Var cosine_matrix(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("cosine_matrix: width mismatch");
  constexpr double kMinNorm = 1e-12;
  Eigen::VectorXd na = a.value().rowwise().norm().cwiseMax(kMinNorm);
  Eigen::VectorXd nb = b.value().rowwise().norm().cwiseMax(kMinNorm);
  Matrix an = na.cwiseInverse().asDiagonal() * a.value();
  Matrix bn = nb.cwiseInverse().asDiagonal() * b.value();
  Matrix value = an * bn.transpose();
  return make_op(std::move(value), {&a, &b}, [a, b, an, bn, na, nb](Node& self) {
    const Matrix& g = self.grad;
    if (a.requires_grad()) {
      Matrix dan = g * bn;
      Eigen::VectorXd proj = (dan.array() * an.array()).rowwise().sum();
      Matrix da = dan - proj.asDiagonal() * an;
      push_grad(a, na.cwiseInverse().asDiagonal() * da);
    }
    if (b.requires_grad()) {
      Matrix dbn = g.transpose() * an;
      Eigen::VectorXd proj = (dbn.array() * bn.array()).rowwise().sum();
      Matrix db = dbn - proj.asDiagonal() * bn;
      push_grad(b, nb.cwiseInverse().asDiagonal() * db);
    }
  });
}

}  // namespace eer::nn
