#include "hats/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <unordered_set>

#include "hats/util.hpp"

namespace hats::ad {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

ECMap map_val(const TensorNode& t) { return ECMap(t.val.data(), t.rows, t.cols); }
EMap map_grad(TensorNode& t) { return EMap(t.grad.data(), t.rows, t.cols); }

Tensor make_node(int rows, int cols, std::vector<Tensor> parents) {
  Tensor t = make_tensor(rows, cols);
  for (const auto& p : parents)
    if (p->requires_grad) t->requires_grad = true;
  t->parents = std::move(parents);
  return t;
}

void require(bool cond, const char* msg) {
  if (!cond) throw Error(std::string("tensor: ") + msg);
}

}  // namespace

Tensor make_tensor(int rows, int cols, bool requires_grad) {
  require(rows > 0 && cols > 0, "dimensions must be positive");
  auto t = std::make_shared<TensorNode>();
  t->rows = rows;
  t->cols = cols;
  t->requires_grad = requires_grad;
  t->val.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  t->grad.assign(t->val.size(), 0.0);
  return t;
}

Tensor make_tensor(int rows, int cols, std::vector<double> values, bool requires_grad) {
  Tensor t = make_tensor(rows, cols, requires_grad);
  require(values.size() == t->size(), "value count does not match shape");
  t->val = std::move(values);
  return t;
}

Tensor constant(int rows, int cols, double value) {
  Tensor t = make_tensor(rows, cols);
  std::fill(t->val.begin(), t->val.end(), value);
  return t;
}

void zero_grad(const Tensor& t) { std::fill(t->grad.begin(), t->grad.end(), 0.0); }

void backward(const Tensor& root, const std::vector<double>& seed) {
  require(seed.size() == root->size(), "backward seed shape mismatch");
  // Post-order DFS gives children-before-parents when reversed.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* parent = node->parents[next++].get();
      if (seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (std::size_t k = 0; k < seed.size(); ++k) root->grad[k] += seed[k];
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn && (*it)->requires_grad) (*it)->backward_fn(**it);
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a->rows == b->rows && a->cols == b->cols, "add shape mismatch");
  Tensor t = make_node(a->rows, a->cols, {a, b});
  for (std::size_t k = 0; k < t->size(); ++k) t->val[k] = a->val[k] + b->val[k];
  t->backward_fn = [a, b](TensorNode& n) {
    for (std::size_t k = 0; k < n.size(); ++k) {
      a->grad[k] += n.grad[k];
      b->grad[k] += n.grad[k];
    }
  };
  return t;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a->rows == b->rows && a->cols == b->cols, "sub shape mismatch");
  Tensor t = make_node(a->rows, a->cols, {a, b});
  for (std::size_t k = 0; k < t->size(); ++k) t->val[k] = a->val[k] - b->val[k];
  t->backward_fn = [a, b](TensorNode& n) {
    for (std::size_t k = 0; k < n.size(); ++k) {
      a->grad[k] += n.grad[k];
      b->grad[k] -= n.grad[k];
    }
  };
  return t;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a->rows == b->rows && a->cols == b->cols, "mul shape mismatch");
  Tensor t = make_node(a->rows, a->cols, {a, b});
  for (std::size_t k = 0; k < t->size(); ++k) t->val[k] = a->val[k] * b->val[k];
  t->backward_fn = [a, b](TensorNode& n) {
    for (std::size_t k = 0; k < n.size(); ++k) {
      a->grad[k] += b->val[k] * n.grad[k];
      b->grad[k] += a->val[k] * n.grad[k];
    }
  };
  return t;
}

Tensor scale(const Tensor& a, double c) {
  Tensor t = make_node(a->rows, a->cols, {a});
  for (std::size_t k = 0; k < t->size(); ++k) t->val[k] = c * a->val[k];
  t->backward_fn = [a, c](TensorNode& n) {
    for (std::size_t k = 0; k < n.size(); ++k) a->grad[k] += c * n.grad[k];
  };
  return t;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require(bias->rows == 1 && bias->cols == x->cols, "add_bias shape mismatch");
  Tensor t = make_node(x->rows, x->cols, {x, bias});
  for (int r = 0; r < x->rows; ++r)
    for (int c = 0; c < x->cols; ++c) t->at(r, c) = x->at(r, c) + bias->val[static_cast<std::size_t>(c)];
  t->backward_fn = [x, bias](TensorNode& n) {
    for (int r = 0; r < n.rows; ++r)
      for (int c = 0; c < n.cols; ++c) {
        const double g = n.grad[static_cast<std::size_t>(r) * n.cols + c];
        x->grad[static_cast<std::size_t>(r) * n.cols + c] += g;
        bias->grad[static_cast<std::size_t>(c)] += g;
      }
  };
  return t;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a->cols == b->rows, "matmul inner dimension mismatch");
  Tensor t = make_node(a->rows, b->cols, {a, b});
  EMap(t->val.data(), t->rows, t->cols).noalias() = map_val(*a) * map_val(*b);
  t->backward_fn = [a, b](TensorNode& n) {
    ECMap g(n.grad.data(), n.rows, n.cols);
    map_grad(*a).noalias() += g * map_val(*b).transpose();
    map_grad(*b).noalias() += map_val(*a).transpose() * g;
  };
  return t;
}

Tensor transpose(const Tensor& a) {
  Tensor t = make_node(a->cols, a->rows, {a});
  for (int r = 0; r < a->rows; ++r)
    for (int c = 0; c < a->cols; ++c) t->at(c, r) = a->at(r, c);
  t->backward_fn = [a](TensorNode& n) {
    for (int r = 0; r < n.rows; ++r)
      for (int c = 0; c < n.cols; ++c)
        a->grad[static_cast<std::size_t>(c) * a->cols + r] += n.grad[static_cast<std::size_t>(r) * n.cols + c];
  };
  return t;
}

Tensor relu(const Tensor& a) {
  Tensor t = make_node(a->rows, a->cols, {a});
  for (std::size_t k = 0; k < t->size(); ++k) t->val[k] = a->val[k] > 0 ? a->val[k] : 0.0;
  t->backward_fn = [a](TensorNode& n) {
    for (std::size_t k = 0; k < n.size(); ++k)
      if (a->val[k] > 0) a->grad[k] += n.grad[k];
  };
  return t;
}

Tensor gelu(const Tensor& a) {
  Tensor t = make_node(a->rows, a->cols, {a});
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  for (std::size_t k = 0; k < t->size(); ++k)
    t->val[k] = 0.5 * a->val[k] * (1.0 + std::erf(a->val[k] * inv_sqrt2));
  t->backward_fn = [a](TensorNode& n) {
    for (std::size_t k = 0; k < n.size(); ++k) {
      const double x = a->val[k];
      const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      a->grad[k] += (cdf + x * pdf) * n.grad[k];
    }
  };
  return t;
}

Tensor softmax_rows(const Tensor& a) {
  Tensor t = make_node(a->rows, a->cols, {a});
  for (int r = 0; r < a->rows; ++r) {
    double mx = a->at(r, 0);
    for (int c = 1; c < a->cols; ++c) mx = std::max(mx, a->at(r, c));
    double sum = 0.0;
    for (int c = 0; c < a->cols; ++c) sum += (t->at(r, c) = std::exp(a->at(r, c) - mx));
    for (int c = 0; c < a->cols; ++c) t->at(r, c) /= sum;
  }
  t->backward_fn = [a](TensorNode& n) {
    for (int r = 0; r < n.rows; ++r) {
      double dot = 0.0;
      for (int c = 0; c < n.cols; ++c) dot += n.grad[static_cast<std::size_t>(r) * n.cols + c] * n.at(r, c);
      for (int c = 0; c < n.cols; ++c) {
        const std::size_t k = static_cast<std::size_t>(r) * n.cols + c;
        a->grad[k] += n.val[k] * (n.grad[k] - dot);
      }
    }
  };
  return t;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  require(gamma->rows == 1 && gamma->cols == x->cols, "layer_norm gamma shape mismatch");
  require(beta->rows == 1 && beta->cols == x->cols, "layer_norm beta shape mismatch");
  constexpr double eps = 1e-5;
  const int C = x->cols;
  Tensor t = make_node(x->rows, C, {x, gamma, beta});
  // Cache per-row inverse stddev and normalized values for the backward pass.
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x->rows));
  auto xhat = std::make_shared<std::vector<double>>(x->size());
  for (int r = 0; r < x->rows; ++r) {
    double mean = 0.0;
    for (int c = 0; c < C; ++c) mean += x->at(r, c);
    mean /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) var += (x->at(r, c) - mean) * (x->at(r, c) - mean);
    var /= C;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    for (int c = 0; c < C; ++c) {
      const double xh = (x->at(r, c) - mean) * is;
      (*xhat)[static_cast<std::size_t>(r) * C + c] = xh;
      t->at(r, c) = gamma->val[static_cast<std::size_t>(c)] * xh + beta->val[static_cast<std::size_t>(c)];
    }
  }
  t->backward_fn = [x, gamma, beta, inv_std, xhat, C](TensorNode& n) {
    for (int r = 0; r < n.rows; ++r) {
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (int c = 0; c < C; ++c) {
        const std::size_t k = static_cast<std::size_t>(r) * C + c;
        const double dxh = n.grad[k] * gamma->val[static_cast<std::size_t>(c)];
        sum_dxhat += dxh;
        sum_dxhat_xhat += dxh * (*xhat)[k];
        gamma->grad[static_cast<std::size_t>(c)] += n.grad[k] * (*xhat)[k];
        beta->grad[static_cast<std::size_t>(c)] += n.grad[k];
      }
      const double is = (*inv_std)[static_cast<std::size_t>(r)];
      for (int c = 0; c < C; ++c) {
        const std::size_t k = static_cast<std::size_t>(r) * C + c;
        const double dxh = n.grad[k] * gamma->val[static_cast<std::size_t>(c)];
        x->grad[k] += is * (dxh - sum_dxhat / C - (*xhat)[k] * sum_dxhat_xhat / C);
      }
    }
  };
  return t;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_rows needs at least one part");
  const int cols = parts[0]->cols;
  int rows = 0;
  for (const auto& p : parts) {
    require(p->cols == cols, "concat_rows column mismatch");
    rows += p->rows;
  }
  Tensor t = make_node(rows, cols, parts);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->val.begin(), p->val.end(), t->val.begin() + static_cast<std::ptrdiff_t>(off));
    off += p->size();
  }
  t->backward_fn = [parts](TensorNode& n) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      for (std::size_t k = 0; k < p->size(); ++k) p->grad[k] += n.grad[off + k];
      off += p->size();
    }
  };
  return t;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols needs at least one part");
  const int rows = parts[0]->rows;
  int cols = 0;
  for (const auto& p : parts) {
    require(p->rows == rows, "concat_cols row mismatch");
    cols += p->cols;
  }
  Tensor t = make_node(rows, cols, parts);
  int c0 = 0;
  for (const auto& p : parts) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < p->cols; ++c) t->at(r, c0 + c) = p->at(r, c);
    c0 += p->cols;
  }
  t->backward_fn = [parts, cols](TensorNode& n) {
    int c0 = 0;
    for (const auto& p : parts) {
      for (int r = 0; r < p->rows; ++r)
        for (int c = 0; c < p->cols; ++c)
          p->grad[static_cast<std::size_t>(r) * p->cols + c] +=
              n.grad[static_cast<std::size_t>(r) * cols + c0 + c];
      c0 += p->cols;
    }
  };
  return t;
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
  require(0 <= r0 && r0 < r1 && r1 <= a->rows, "slice_rows out of range");
  Tensor t = make_node(r1 - r0, a->cols, {a});
  const std::size_t off = static_cast<std::size_t>(r0) * a->cols;
  std::copy(a->val.begin() + static_cast<std::ptrdiff_t>(off),
            a->val.begin() + static_cast<std::ptrdiff_t>(off + t->size()), t->val.begin());
  t->backward_fn = [a, off](TensorNode& n) {
    for (std::size_t k = 0; k < n.size(); ++k) a->grad[off + k] += n.grad[k];
  };
  return t;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  require(0 <= c0 && c0 < c1 && c1 <= a->cols, "slice_cols out of range");
  Tensor t = make_node(a->rows, c1 - c0, {a});
  for (int r = 0; r < a->rows; ++r)
    for (int c = c0; c < c1; ++c) t->at(r, c - c0) = a->at(r, c);
  t->backward_fn = [a, c0](TensorNode& n) {
    for (int r = 0; r < n.rows; ++r)
      for (int c = 0; c < n.cols; ++c)
        a->grad[static_cast<std::size_t>(r) * a->cols + c0 + c] +=
            n.grad[static_cast<std::size_t>(r) * n.cols + c];
  };
  return t;
}

Tensor reshape(const Tensor& a, int rows, int cols) {
  require(static_cast<std::size_t>(rows) * cols == a->size(), "reshape size mismatch");
  Tensor t = make_node(rows, cols, {a});
  t->val = a->val;
  t->backward_fn = [a](TensorNode& n) {
    for (std::size_t k = 0; k < n.size(); ++k) a->grad[k] += n.grad[k];
  };
  return t;
}

Tensor mean_rows(const Tensor& a) {
  Tensor t = make_node(1, a->cols, {a});
  for (int r = 0; r < a->rows; ++r)
    for (int c = 0; c < a->cols; ++c) t->val[static_cast<std::size_t>(c)] += a->at(r, c);
  for (auto& v : t->val) v /= a->rows;
  t->backward_fn = [a](TensorNode& n) {
    const double inv = 1.0 / a->rows;
    for (int r = 0; r < a->rows; ++r)
      for (int c = 0; c < a->cols; ++c)
        a->grad[static_cast<std::size_t>(r) * a->cols + c] += inv * n.grad[static_cast<std::size_t>(c)];
  };
  return t;
}

Tensor upsample2x_grid(const Tensor& a, int h, int w) {
  require(h * w == a->rows, "upsample2x_grid row count mismatch");
  const int C = a->cols;
  Tensor t = make_node(4 * a->rows, C, {a});
  for (int y = 0; y < 2 * h; ++y)
    for (int x = 0; x < 2 * w; ++x) {
      const std::size_t dst = (static_cast<std::size_t>(y) * 2 * w + x) * C;
      const std::size_t src = (static_cast<std::size_t>(y / 2) * w + x / 2) * C;
      for (int c = 0; c < C; ++c) t->val[dst + c] = a->val[src + c];
    }
  t->backward_fn = [a, h, w, C](TensorNode& n) {
    for (int y = 0; y < 2 * h; ++y)
      for (int x = 0; x < 2 * w; ++x) {
        const std::size_t dst = (static_cast<std::size_t>(y) * 2 * w + x) * C;
        const std::size_t src = (static_cast<std::size_t>(y / 2) * w + x / 2) * C;
        for (int c = 0; c < C; ++c) a->grad[src + c] += n.grad[dst + c];
      }
  };
  return t;
}

}  // namespace hats::ad
