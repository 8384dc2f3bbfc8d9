#pragma once

#include <string>
#include <vector>

#include "ttlab/tensor.hpp"

// Reverse-mode autodiff over a flat, append-ordered node list. Append order is
// the topological order (an op can only reference already-added nodes), so
// forward() is one left-to-right sweep and backward() the exact reverse sweep.
// Graphs are plain value types; copying one yields an independent executor
// that shares nothing, which is how per-worker replicas are made.

namespace ttlab {

enum class OpKind {
  input,        // differentiable leaf, values set by caller
  weight,       // differentiable leaf, named, serialized
  constant,     // non-differentiable leaf
  normalize,    // per-channel (x - mean) / std
  conv2d,       // cross-correlation, no bias
  dense,        // W x + b
  relu,
  pool_max,
  pool_avg,
  add,          // elementwise a + b
  concat,       // channel concat of two [C,H,W] maps
  softmax,      // 1-D stable softmax
  sum,          // reduce to scalar
  avg_k,        // mean of k same-shape inputs
  resize_pad,   // bilinear resize to r, zero-pad back to full size
  loss_ce,      // cross-entropy toward a target class, from logits
  loss_logit,   // negative target logit
  loss_cw,      // margin hinge max(max_{j!=t} z_j - z_t, -K)
  loss_po_trip, // Poincare distance + triplet angle term
};

const char* op_name(OpKind k);

struct OpParams {
  int i0 = 0, i1 = 0, i2 = 0;
  float f0 = 0.f, f1 = 0.f, f2 = 0.f;
  std::vector<float> vec;
};

struct Node {
  OpKind kind;
  std::vector<int> inputs;
  OpParams p;
  Tensor val;
  std::vector<float> grad;  // allocated on first backward that needs it
  std::vector<int> aux;     // per-op scratch (argmax caches)
  std::vector<float> auxf;  // per-op scratch (softmax cache)
  std::string name;         // weights only
  bool leaf_diff = false;
  bool needs = false;       // gradient needed to reach a target
  bool reach = false;       // on a path from the backward output
};

class Graph {
 public:
  int add_input(const std::vector<int>& shape);
  int add_weight(const std::string& name, Tensor init);
  int add_constant(Tensor value);

  int add_normalize(int in, const std::vector<float>& mean, const std::vector<float>& stdev);
  int add_conv2d(int in, int w, int stride, int pad);
  int add_dense(int in, int w, int b);
  int add_relu(int in);
  int add_pool_max(int in, int window, int stride);
  int add_pool_avg(int in, int window, int stride);
  int add_add(int a, int b);
  int add_concat(int a, int b);
  int add_softmax(int in);
  int add_sum(int in);
  int add_avg_k(const std::vector<int>& ins);
  int add_resize_pad(int in);  // geometry lives in params i0=r, i1=oy, i2=ox

  int add_loss_ce(int logits, int target);
  int add_loss_logit(int logits, int target);
  int add_loss_cw(int logits, int target, float margin_cap);
  int add_loss_po_trip(int logits, int target, int original, float lambda, float gamma,
                       float xi);

  void forward();
  // Fills grad slots of the gradient targets with d(out)/d(target). Targets
  // default to every differentiable leaf; restricting them skips the backward
  // work for everything else (attacks only want the input gradient).
  void backward(int out);
  void set_grad_targets(const std::vector<int>& ids);

  int size() const { return static_cast<int>(nodes_.size()); }
  Node& node(int id);
  const Node& node(int id) const;
  Tensor& val(int id) { return node(id).val; }
  const Tensor& val(int id) const { return node(id).val; }
  const std::vector<float>& grad(int id) const;
  void set_value(int id, const float* src, std::size_t n);
  void set_value(int id, const Tensor& t) { set_value(id, t.data.data(), t.data.size()); }

  std::vector<int> weight_ids() const;
  std::vector<int> input_ids() const;

 private:
  int append(OpKind kind, std::vector<int> inputs, std::vector<int> out_shape, OpParams p = {});
  void check_id(int id, const char* ctx) const;
  void refresh_plan(int out);
  void forward_node(Node& n);
  void backward_node(int id);

  std::vector<Node> nodes_;
  std::vector<int> grad_targets_;  // empty = all differentiable leaves
  int planned_out_ = -1;
  bool plan_dirty_ = true;
};

}  // namespace ttlab
