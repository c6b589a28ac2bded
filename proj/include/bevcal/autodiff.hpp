#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "bevcal/tensor.hpp"

namespace bevcal::ad {

/// One node of the reverse-mode tape. Nodes are created in program order;
/// the creation counter doubles as a topological key, so backward visits
/// consumers strictly before producers without an explicit sort pass.
struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::uint64_t order = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer() {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
    return grad;
  }
};

/// Value-semantics handle to a tape node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Var leaf(Tensor v, bool requires_grad = false);
  static Var constant(Tensor v) { return leaf(std::move(v), false); }
  static Var scalar(double v) { return leaf(Tensor::scalar(v), false); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad_buffer() { return node_->grad_buffer(); }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad = Tensor(); }
  double item() const { return node_->value[0]; }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Run reverse-mode accumulation from a scalar root. Leaf gradients
/// accumulate across calls until zero_grad is invoked on them.
void backward(const Var& root);

// ---- elementwise / reductions ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var gelu(const Var& a);

// ---- shape / indexing ----
Var reshape(const Var& a, std::vector<Index> shape);
Var concat0(const Var& a, const Var& b);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Index c0, Index c1);
Var gather_rows(const Var& x, std::vector<Index> idx);
Var gather_cols(const Var& x, std::vector<Index> idx);
Var scatter_cols(const Var& x, std::vector<Index> idx, Index n_cols);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add_rowvec(const Var& x, const Var& b);
Var mean_rows(const Var& x);
Var softmax_rows(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);
Var attention_head(const Var& q, const Var& k, const Var& v);

// ---- convolution / spatial ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var conv3d(const Var& x, const Var& w, const Var& b, int pad);
Var upsample2_nearest(const Var& x);

// ---- pipeline-specific fused ops ----
Var frustum_outer(const Var& w, const Var& f);
Var bev_scatter(const Var& fr, std::vector<Index> cells, Index n_cells);

// ---- pose / loss primitives ----
Var l2_normalize(const Var& v);
Var norm2(const Var& v);
Var geodesic_angle(const Var& q);
Var smooth_l1_mean(const Var& x, const Tensor& target, double beta);
Var quat_rotmat(const Var& q);
Var sub_colvec_from_const(const Tensor& base, const Var& t);
Var colwise_norm_mean(const Var& y);

}  // namespace bevcal::ad
