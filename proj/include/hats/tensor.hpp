#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace hats::ad {

/// Reverse-mode autodiff over 2-D double tensors. Each op builds a node
/// holding its value and a closure that scatters the node's gradient into
/// its parents. Graphs are rebuilt per forward pass; parameters are leaf
/// nodes that persist across graphs and accumulate gradients until cleared.
struct TensorNode {
  int rows = 0;
  int cols = 0;
  bool requires_grad = false;
  std::vector<double> val;
  std::vector<double> grad;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  std::size_t size() const { return val.size(); }
  double& at(int r, int c) { return val[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return val[static_cast<std::size_t>(r) * cols + c]; }
};

using Tensor = std::shared_ptr<TensorNode>;

Tensor make_tensor(int rows, int cols, bool requires_grad = false);
Tensor make_tensor(int rows, int cols, std::vector<double> values, bool requires_grad = false);
Tensor constant(int rows, int cols, double value);

/// Accumulates seed into root's gradient and back-propagates through the
/// graph in reverse topological order. seed length must match root size.
void backward(const Tensor& root, const std::vector<double>& seed);
void zero_grad(const Tensor& t);

// Elementwise and broadcast arithmetic.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
/// x (R×C) + bias (1×C) broadcast over rows; gradient reaches the bias.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);  // exact erf form
Tensor softmax_rows(const Tensor& a);
/// Per-row normalization with learned gain/shift (each 1×C), eps 1e-5.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor slice_cols(const Tensor& a, int c0, int c1);
/// Same storage order, new shape; rows*cols must be preserved.
Tensor reshape(const Tensor& a, int rows, int cols);
/// Column means over all rows: (R×C) -> (1×C).
Tensor mean_rows(const Tensor& a);

/// Rows indexed as an h×w grid of C-channel sites; nearest-neighbor 2×
/// upsampling to a (2h·2w)×C tensor.
Tensor upsample2x_grid(const Tensor& a, int h, int w);

}  // namespace hats::ad
