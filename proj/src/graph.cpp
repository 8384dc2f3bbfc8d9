#include "ttlab/graph.hpp"

#include <algorithm>
#include <cmath>

#include "ttlab/errors.hpp"
#include "ttlab/kernels.hpp"

namespace ttlab {

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::input: return "input";
    case OpKind::weight: return "weight";
    case OpKind::constant: return "constant";
    case OpKind::normalize: return "normalize";
    case OpKind::conv2d: return "conv2d";
    case OpKind::dense: return "dense";
    case OpKind::relu: return "relu";
    case OpKind::pool_max: return "pool_max";
    case OpKind::pool_avg: return "pool_avg";
    case OpKind::add: return "add";
    case OpKind::concat: return "concat";
    case OpKind::softmax: return "softmax";
    case OpKind::sum: return "sum";
    case OpKind::avg_k: return "avg_k";
    case OpKind::resize_pad: return "resize_pad";
    case OpKind::loss_ce: return "loss_ce";
    case OpKind::loss_logit: return "loss_logit";
    case OpKind::loss_cw: return "loss_cw";
    case OpKind::loss_po_trip: return "loss_po_trip";
  }
  return "?";
}

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

float sign_of(float x) { return x > 0.f ? 1.f : (x < 0.f ? -1.f : 0.f); }

}  // namespace

void Graph::check_id(int id, const char* ctx) const {
  if (id < 0 || id >= size())
    throw UsageError(std::string(ctx) + ": node id " + std::to_string(id) + " out of range");
}

Node& Graph::node(int id) {
  check_id(id, "node");
  return nodes_[static_cast<std::size_t>(id)];
}

const Node& Graph::node(int id) const {
  check_id(id, "node");
  return nodes_[static_cast<std::size_t>(id)];
}

const std::vector<float>& Graph::grad(int id) const {
  const Node& n = node(id);
  if (n.grad.size() != n.val.data.size())
    throw UsageError("grad: node " + std::to_string(id) + " has no gradient yet");
  return n.grad;
}

void Graph::set_value(int id, const float* src, std::size_t n) {
  Node& nd = node(id);
  if (n != nd.val.data.size())
    throw ShapeError("set_value: node " + std::to_string(id) + " holds " +
                     std::to_string(nd.val.data.size()) + " values, got " + std::to_string(n));
  std::copy(src, src + n, nd.val.data.begin());
}

std::vector<int> Graph::weight_ids() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (nodes_[static_cast<std::size_t>(i)].kind == OpKind::weight) out.push_back(i);
  return out;
}

std::vector<int> Graph::input_ids() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (nodes_[static_cast<std::size_t>(i)].kind == OpKind::input) out.push_back(i);
  return out;
}

int Graph::append(OpKind kind, std::vector<int> inputs, std::vector<int> out_shape, OpParams p) {
  for (int id : inputs) check_id(id, op_name(kind));
  Node n;
  n.kind = kind;
  n.inputs = std::move(inputs);
  n.p = std::move(p);
  n.val = Tensor(std::move(out_shape));
  n.leaf_diff = kind == OpKind::input || kind == OpKind::weight;
  nodes_.push_back(std::move(n));
  plan_dirty_ = true;
  return size() - 1;
}

int Graph::add_input(const std::vector<int>& shape) { return append(OpKind::input, {}, shape); }

int Graph::add_weight(const std::string& name, Tensor init) {
  if (name.empty()) throw UsageError("add_weight: empty name");
  for (const Node& n : nodes_)
    if (n.kind == OpKind::weight && n.name == name)
      throw UsageError("add_weight: duplicate name '" + name + "'");
  std::vector<int> shape = init.shape;
  int id = append(OpKind::weight, {}, shape);
  nodes_.back().val = std::move(init);
  nodes_.back().name = name;
  return id;
}

int Graph::add_constant(Tensor value) {
  std::vector<int> shape = value.shape;
  int id = append(OpKind::constant, {}, shape);
  nodes_.back().val = std::move(value);
  return id;
}

int Graph::add_normalize(int in, const std::vector<float>& mean,
                         const std::vector<float>& stdev) {
  const Tensor& x = val(in);
  require(x.rank() == 3, "normalize: input must be [C,H,W], got " + shape_str(x.shape));
  auto c = static_cast<std::size_t>(x.shape[0]);
  require(mean.size() == c && stdev.size() == c,
          "normalize: need one mean/std per channel (" + std::to_string(c) + ")");
  for (float s : stdev)
    if (!(s > 0.f)) throw UsageError("normalize: std values must be positive");
  OpParams p;
  p.vec = mean;
  p.vec.insert(p.vec.end(), stdev.begin(), stdev.end());
  return append(OpKind::normalize, {in}, x.shape, std::move(p));
}

int Graph::add_conv2d(int in, int w, int stride, int pad) {
  const Tensor& x = val(in);
  const Tensor& k = val(w);
  require(x.rank() == 3, "conv2d: input must be [C,H,W], got " + shape_str(x.shape));
  require(k.rank() == 4, "conv2d: kernel must be [Cout,Cin,KH,KW], got " + shape_str(k.shape));
  require(k.shape[1] == x.shape[0], "conv2d: kernel expects " + std::to_string(k.shape[1]) +
                                        " input channels, input has " +
                                        std::to_string(x.shape[0]));
  if (stride < 1) throw UsageError("conv2d: stride must be >= 1");
  if (pad < 0) throw UsageError("conv2d: pad must be >= 0");
  int oh = (x.shape[1] + 2 * pad - k.shape[2]) / stride + 1;
  int ow = (x.shape[2] + 2 * pad - k.shape[3]) / stride + 1;
  require(x.shape[1] + 2 * pad >= k.shape[2] && x.shape[2] + 2 * pad >= k.shape[3] && oh >= 1 &&
              ow >= 1,
          "conv2d: kernel " + shape_str(k.shape) + " does not fit input " + shape_str(x.shape) +
              " with pad " + std::to_string(pad));
  OpParams p;
  p.i0 = stride;
  p.i1 = pad;
  return append(OpKind::conv2d, {in, w}, {k.shape[0], oh, ow}, std::move(p));
}

int Graph::add_dense(int in, int w, int b) {
  const Tensor& x = val(in);
  const Tensor& wt = val(w);
  const Tensor& bt = val(b);
  require(wt.rank() == 2, "dense: weight must be [M,N], got " + shape_str(wt.shape));
  require(static_cast<std::size_t>(wt.shape[1]) == x.numel(),
          "dense: weight expects " + std::to_string(wt.shape[1]) + " inputs, got " +
              shape_str(x.shape) + " (" + std::to_string(x.numel()) + " values)");
  require(bt.rank() == 1 && bt.shape[0] == wt.shape[0],
          "dense: bias must be [" + std::to_string(wt.shape[0]) + "], got " +
              shape_str(bt.shape));
  return append(OpKind::dense, {in, w, b}, {wt.shape[0]});
}

int Graph::add_relu(int in) { return append(OpKind::relu, {in}, val(in).shape); }

static std::vector<int> pool_shape(const Tensor& x, int window, int stride, const char* what) {
  if (x.rank() != 3)
    throw ShapeError(std::string(what) + ": input must be [C,H,W], got " + shape_str(x.shape));
  if (window < 1 || stride < 1)
    throw UsageError(std::string(what) + ": window and stride must be >= 1");
  if (window > x.shape[1] || window > x.shape[2])
    throw ShapeError(std::string(what) + ": window " + std::to_string(window) +
                     " exceeds input " + shape_str(x.shape));
  int oh = (x.shape[1] - window) / stride + 1;
  int ow = (x.shape[2] - window) / stride + 1;
  return {x.shape[0], oh, ow};
}

int Graph::add_pool_max(int in, int window, int stride) {
  OpParams p;
  p.i0 = window;
  p.i1 = stride;
  return append(OpKind::pool_max, {in}, pool_shape(val(in), window, stride, "pool_max"),
                std::move(p));
}

int Graph::add_pool_avg(int in, int window, int stride) {
  OpParams p;
  p.i0 = window;
  p.i1 = stride;
  return append(OpKind::pool_avg, {in}, pool_shape(val(in), window, stride, "pool_avg"),
                std::move(p));
}

int Graph::add_add(int a, int b) {
  require(val(a).same_shape(val(b)), "add: shape mismatch " + shape_str(val(a).shape) + " vs " +
                                         shape_str(val(b).shape));
  return append(OpKind::add, {a, b}, val(a).shape);
}

int Graph::add_concat(int a, int b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require(ta.rank() == 3 && tb.rank() == 3 && ta.shape[1] == tb.shape[1] &&
              ta.shape[2] == tb.shape[2],
          "concat: inputs must be [C,H,W] with matching H,W, got " + shape_str(ta.shape) +
              " vs " + shape_str(tb.shape));
  return append(OpKind::concat, {a, b}, {ta.shape[0] + tb.shape[0], ta.shape[1], ta.shape[2]});
}

int Graph::add_softmax(int in) {
  const Tensor& x = val(in);
  require(x.rank() == 1 && x.shape[0] >= 2,
          "softmax: input must be a vector of >= 2 values, got " + shape_str(x.shape));
  return append(OpKind::softmax, {in}, x.shape);
}

int Graph::add_sum(int in) { return append(OpKind::sum, {in}, {1}); }

int Graph::add_avg_k(const std::vector<int>& ins) {
  if (ins.empty()) throw UsageError("avg_k: needs at least one input");
  for (int id : ins)
    require(val(id).same_shape(val(ins[0])), "avg_k: shape mismatch " +
                                                 shape_str(val(ins[0]).shape) + " vs " +
                                                 shape_str(val(id).shape));
  return append(OpKind::avg_k, ins, val(ins[0]).shape);
}

int Graph::add_resize_pad(int in) {
  const Tensor& x = val(in);
  require(x.rank() == 3 && x.shape[1] == x.shape[2],
          "resize_pad: input must be square [C,H,H], got " + shape_str(x.shape));
  OpParams p;
  p.i0 = x.shape[1];  // resize target, identity until retargeted
  p.i1 = 0;
  p.i2 = 0;
  return append(OpKind::resize_pad, {in}, x.shape, std::move(p));
}

static void check_logits(const Tensor& z, const char* what) {
  if (z.rank() != 1 || z.shape[0] < 2)
    throw ShapeError(std::string(what) + ": logits must be a vector of >= 2 values, got " +
                     shape_str(z.shape));
}

int Graph::add_loss_ce(int logits, int target) {
  check_logits(val(logits), "loss_ce");
  OpParams p;
  p.i0 = target;
  return append(OpKind::loss_ce, {logits}, {1}, std::move(p));
}

int Graph::add_loss_logit(int logits, int target) {
  check_logits(val(logits), "loss_logit");
  OpParams p;
  p.i0 = target;
  return append(OpKind::loss_logit, {logits}, {1}, std::move(p));
}

int Graph::add_loss_cw(int logits, int target, float margin_cap) {
  check_logits(val(logits), "loss_cw");
  if (!(margin_cap >= 0.f)) throw UsageError("loss_cw: margin cap must be >= 0");
  OpParams p;
  p.i0 = target;
  p.f0 = margin_cap;
  return append(OpKind::loss_cw, {logits}, {1}, std::move(p));
}

int Graph::add_loss_po_trip(int logits, int target, int original, float lambda, float gamma,
                            float xi) {
  check_logits(val(logits), "loss_po_trip");
  if (target == original) throw UsageError("loss_po_trip: target equals original class");
  if (!(lambda >= 0.f) || !(gamma >= 0.f)) throw UsageError("loss_po_trip: negative coefficient");
  if (!(xi > 0.f)) throw UsageError("loss_po_trip: xi must be positive");
  OpParams p;
  p.i0 = target;
  p.i1 = original;
  p.f0 = lambda;
  p.f1 = gamma;
  p.f2 = xi;
  return append(OpKind::loss_po_trip, {logits}, {1}, std::move(p));
}

// ---------------------------------------------------------------------------

namespace {

void check_class(int cls, int k, const char* what) {
  if (cls < 0 || cls >= k)
    throw UsageError(std::string(what) + ": class " + std::to_string(cls) +
                     " outside [0, " + std::to_string(k) + ")");
}

}  // namespace

void Graph::forward_node(Node& n) {
  const auto in = [&](int slot) -> const Tensor& {
    return nodes_[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(slot)])].val;
  };
  switch (n.kind) {
    case OpKind::input:
    case OpKind::weight:
    case OpKind::constant:
      break;
    case OpKind::normalize: {
      const Tensor& x = in(0);
      int c = x.shape[0];
      std::size_t plane = x.numel() / static_cast<std::size_t>(c);
      const float* mean = n.p.vec.data();
      const float* stdev = mean + c;
      for (int ch = 0; ch < c; ++ch) {
        float inv = 1.f / stdev[ch];
        float m = mean[ch];
        const float* src = x.data.data() + static_cast<std::size_t>(ch) * plane;
        float* dst = n.val.data.data() + static_cast<std::size_t>(ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = (src[i] - m) * inv;
      }
      break;
    }
    case OpKind::conv2d: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      std::fill(n.val.data.begin(), n.val.data.end(), 0.f);
      kernels::conv2d_forward(x.ptr(), w.ptr(), n.val.data.data(), x.shape[0], x.shape[1],
                              x.shape[2], w.shape[0], w.shape[2], w.shape[3], n.p.i0, n.p.i1,
                              n.val.shape[1], n.val.shape[2]);
      break;
    }
    case OpKind::dense: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const Tensor& b = in(2);
      int m = w.shape[0], k = w.shape[1];
      for (int i = 0; i < m; ++i) {
        const float* wr = w.ptr() + static_cast<std::size_t>(i) * k;
        float acc = b.data[static_cast<std::size_t>(i)];
        for (int j = 0; j < k; ++j) acc += wr[j] * x.data[static_cast<std::size_t>(j)];
        n.val.data[static_cast<std::size_t>(i)] = acc;
      }
      break;
    }
    case OpKind::relu: {
      const Tensor& x = in(0);
      for (std::size_t i = 0; i < x.numel(); ++i)
        n.val.data[i] = x.data[i] > 0.f ? x.data[i] : 0.f;
      break;
    }
    case OpKind::pool_max: {
      const Tensor& x = in(0);
      int c = x.shape[0], h = x.shape[1], w = x.shape[2];
      int win = n.p.i0, st = n.p.i1, oh = n.val.shape[1], ow = n.val.shape[2];
      n.aux.resize(n.val.numel());
      for (int ch = 0; ch < c; ++ch) {
        const float* src = x.ptr() + static_cast<std::size_t>(ch) * h * w;
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            int base_y = oy * st, base_x = ox * st;
            int best = base_y * w + base_x;
            float bv = src[best];
            for (int ky = 0; ky < win; ++ky)
              for (int kx = 0; kx < win; ++kx) {
                int idx = (base_y + ky) * w + base_x + kx;
                if (src[idx] > bv) {
                  bv = src[idx];
                  best = idx;
                }
              }
            std::size_t o = (static_cast<std::size_t>(ch) * oh + oy) * ow + ox;
            n.val.data[o] = bv;
            n.aux[o] = ch * h * w + best;
          }
      }
      break;
    }
    case OpKind::pool_avg: {
      const Tensor& x = in(0);
      int c = x.shape[0], h = x.shape[1], w = x.shape[2];
      int win = n.p.i0, st = n.p.i1, oh = n.val.shape[1], ow = n.val.shape[2];
      float inv = 1.f / static_cast<float>(win * win);
      for (int ch = 0; ch < c; ++ch) {
        const float* src = x.ptr() + static_cast<std::size_t>(ch) * h * w;
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            float acc = 0.f;
            for (int ky = 0; ky < win; ++ky) {
              const float* row = src + static_cast<std::size_t>(oy * st + ky) * w + ox * st;
              for (int kx = 0; kx < win; ++kx) acc += row[kx];
            }
            n.val.data[(static_cast<std::size_t>(ch) * oh + oy) * ow + ox] = acc * inv;
          }
      }
      break;
    }
    case OpKind::add: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      for (std::size_t i = 0; i < a.numel(); ++i) n.val.data[i] = a.data[i] + b.data[i];
      break;
    }
    case OpKind::concat: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      std::copy(a.data.begin(), a.data.end(), n.val.data.begin());
      std::copy(b.data.begin(), b.data.end(),
                n.val.data.begin() + static_cast<std::ptrdiff_t>(a.numel()));
      break;
    }
    case OpKind::softmax: {
      n.val.data = softmax_vec(in(0).data);
      break;
    }
    case OpKind::sum: {
      const Tensor& x = in(0);
      float acc = 0.f;
      for (float v : x.data) acc += v;
      n.val.data[0] = acc;
      break;
    }
    case OpKind::avg_k: {
      float inv = 1.f / static_cast<float>(n.inputs.size());
      std::fill(n.val.data.begin(), n.val.data.end(), 0.f);
      for (std::size_t s = 0; s < n.inputs.size(); ++s) {
        const Tensor& x = in(static_cast<int>(s));
        for (std::size_t i = 0; i < x.numel(); ++i) n.val.data[i] += x.data[i];
      }
      for (float& v : n.val.data) v *= inv;
      break;
    }
    case OpKind::resize_pad: {
      const Tensor& x = in(0);
      int h = x.shape[1];
      int r = n.p.i0, oy = n.p.i1, ox = n.p.i2;
      if (r < 1 || r > h || oy < 0 || ox < 0 || oy + r > h || ox + r > h)
        throw UsageError("resize_pad: window r=" + std::to_string(r) + " at (" +
                         std::to_string(oy) + "," + std::to_string(ox) +
                         ") outside input " + shape_str(x.shape));
      kernels::resize_pad_forward(x.ptr(), n.val.data.data(), x.shape[0], h, x.shape[2], r, oy,
                                  ox);
      break;
    }
    case OpKind::loss_ce: {
      const Tensor& z = in(0);
      int k = z.shape[0], t = n.p.i0;
      check_class(t, k, "loss_ce");
      n.auxf = softmax_vec(z.data);
      float m = *std::max_element(z.data.begin(), z.data.end());
      float se = 0.f;
      for (float v : z.data) se += std::exp(v - m);
      n.val.data[0] = m + std::log(se) - z.data[static_cast<std::size_t>(t)];
      break;
    }
    case OpKind::loss_logit: {
      const Tensor& z = in(0);
      check_class(n.p.i0, z.shape[0], "loss_logit");
      n.val.data[0] = -z.data[static_cast<std::size_t>(n.p.i0)];
      break;
    }
    case OpKind::loss_cw: {
      const Tensor& z = in(0);
      int k = z.shape[0], t = n.p.i0;
      check_class(t, k, "loss_cw");
      int jstar = -1;
      for (int j = 0; j < k; ++j) {
        if (j == t) continue;
        if (jstar < 0 || z.data[static_cast<std::size_t>(j)] > z.data[static_cast<std::size_t>(jstar)])
          jstar = j;
      }
      float d = z.data[static_cast<std::size_t>(jstar)] - z.data[static_cast<std::size_t>(t)];
      bool active = d > -n.p.f0;
      n.val.data[0] = active ? d : -n.p.f0;
      n.aux = {jstar, active ? 1 : 0};
      break;
    }
    case OpKind::loss_po_trip: {
      const Tensor& z = in(0);
      int k = z.shape[0], t = n.p.i0, o = n.p.i1;
      check_class(t, k, "loss_po_trip");
      check_class(o, k, "loss_po_trip");
      if (t == o) throw UsageError("loss_po_trip: target equals original class");
      float lambda = n.p.f0, gamma = n.p.f1, xi = n.p.f2;
      float m1 = 0.f, sq = 0.f;
      for (float v : z.data) {
        m1 += std::fabs(v);
        sq += v * v;
      }
      float m1f = std::max(m1, xi);
      float b = 0.f;
      for (float v : z.data) {
        float u = v / m1f;
        b += u * u;
      }
      if (b >= 1.f)
        throw NumericalDomainError("poincare embedding left the unit ball (|u|^2 = " +
                                   std::to_string(b) + ")");
      float vmag = 1.f - xi;
      float a = 0.f;
      for (int j = 0; j < k; ++j) {
        float u = z.data[static_cast<std::size_t>(j)] / m1f;
        float d = u - (j == t ? vmag : 0.f);
        a += d * d;
      }
      float den = (1.f - b) * (1.f - vmag * vmag);
      float delta = 2.f * a / std::max(den, xi);
      float po = std::log1p(delta + std::sqrt(delta * (delta + 2.f)));
      float n2f = std::max(std::sqrt(sq), xi);
      float dt = 1.f - std::fabs(z.data[static_cast<std::size_t>(t)]) / n2f;
      float dorig = 1.f - std::fabs(z.data[static_cast<std::size_t>(o)]) / n2f;
      float trip = std::max(dt - dorig + gamma, 0.f);
      n.val.data[0] = po + lambda * trip;
      break;
    }
  }
}

void Graph::forward() {
  for (Node& n : nodes_) forward_node(n);
}

void Graph::set_grad_targets(const std::vector<int>& ids) {
  for (int id : ids) check_id(id, "set_grad_targets");
  grad_targets_ = ids;
  plan_dirty_ = true;
}

void Graph::refresh_plan(int out) {
  for (Node& n : nodes_) {
    n.needs = false;
    n.reach = false;
  }
  if (grad_targets_.empty()) {
    for (Node& n : nodes_) n.needs = n.leaf_diff;
  } else {
    for (int id : grad_targets_) nodes_[static_cast<std::size_t>(id)].needs = true;
  }
  for (Node& n : nodes_)
    if (!n.needs)
      for (int j : n.inputs)
        if (nodes_[static_cast<std::size_t>(j)].needs) {
          n.needs = true;
          break;
        }
  nodes_[static_cast<std::size_t>(out)].reach = true;
  for (int i = out; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.reach) continue;
    for (int j : n.inputs) nodes_[static_cast<std::size_t>(j)].reach = true;
  }
  planned_out_ = out;
  plan_dirty_ = false;
}

void Graph::backward(int out) {
  check_id(out, "backward");
  if (val(out).numel() != 1)
    throw UsageError("backward: output node must be scalar, got " +
                     shape_str(val(out).shape));
  if (plan_dirty_ || planned_out_ != out) refresh_plan(out);
  // Only nodes that pass gradient toward a target ever receive accumulation,
  // so those are the only grad buffers touched.
  for (Node& n : nodes_)
    if (n.needs) n.grad.assign(n.val.data.size(), 0.f);
  Node& on = nodes_[static_cast<std::size_t>(out)];
  if (on.grad.empty()) on.grad.assign(1, 0.f);
  on.grad[0] = 1.f;
  for (int i = out; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.reach || !n.needs || n.inputs.empty()) continue;
    backward_node(i);
  }
}

void Graph::backward_node(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  const auto inode = [&](int slot) -> Node& {
    return nodes_[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(slot)])];
  };
  const auto wants = [&](int slot) { return inode(slot).needs; };
  switch (n.kind) {
    case OpKind::input:
    case OpKind::weight:
    case OpKind::constant:
      break;
    case OpKind::normalize: {
      if (!wants(0)) break;
      Node& x = inode(0);
      int c = x.val.shape[0];
      std::size_t plane = x.val.numel() / static_cast<std::size_t>(c);
      const float* stdev = n.p.vec.data() + c;
      for (int ch = 0; ch < c; ++ch) {
        float inv = 1.f / stdev[ch];
        const float* g = n.grad.data() + static_cast<std::size_t>(ch) * plane;
        float* dx = x.grad.data() + static_cast<std::size_t>(ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) dx[i] += g[i] * inv;
      }
      break;
    }
    case OpKind::conv2d: {
      Node& x = inode(0);
      Node& w = inode(1);
      if (wants(0))
        kernels::conv2d_backward_input(w.val.ptr(), n.grad.data(), x.grad.data(),
                                       x.val.shape[0], x.val.shape[1], x.val.shape[2],
                                       w.val.shape[0], w.val.shape[2], w.val.shape[3], n.p.i0,
                                       n.p.i1, n.val.shape[1], n.val.shape[2]);
      if (wants(1))
        kernels::conv2d_backward_weights(x.val.ptr(), n.grad.data(), w.grad.data(),
                                         x.val.shape[0], x.val.shape[1], x.val.shape[2],
                                         w.val.shape[0], w.val.shape[2], w.val.shape[3], n.p.i0,
                                         n.p.i1, n.val.shape[1], n.val.shape[2]);
      break;
    }
    case OpKind::dense: {
      Node& x = inode(0);
      Node& w = inode(1);
      Node& b = inode(2);
      int m = w.val.shape[0], k = w.val.shape[1];
      for (int i = 0; i < m; ++i) {
        float gi = n.grad[static_cast<std::size_t>(i)];
        if (wants(2)) b.grad[static_cast<std::size_t>(i)] += gi;
        const float* wr = w.val.ptr() + static_cast<std::size_t>(i) * k;
        if (wants(0)) {
          float* dx = x.grad.data();
          for (int j = 0; j < k; ++j) dx[j] += wr[j] * gi;
        }
        if (wants(1)) {
          float* dw = w.grad.data() + static_cast<std::size_t>(i) * k;
          const float* xv = x.val.ptr();
          for (int j = 0; j < k; ++j) dw[j] += xv[j] * gi;
        }
      }
      break;
    }
    case OpKind::relu: {
      if (!wants(0)) break;
      Node& x = inode(0);
      for (std::size_t i = 0; i < x.val.numel(); ++i)
        if (x.val.data[i] > 0.f) x.grad[i] += n.grad[i];
      break;
    }
    case OpKind::pool_max: {
      if (!wants(0)) break;
      Node& x = inode(0);
      for (std::size_t i = 0; i < n.val.numel(); ++i)
        x.grad[static_cast<std::size_t>(n.aux[i])] += n.grad[i];
      break;
    }
    case OpKind::pool_avg: {
      if (!wants(0)) break;
      Node& x = inode(0);
      int c = x.val.shape[0], h = x.val.shape[1], w = x.val.shape[2];
      int win = n.p.i0, st = n.p.i1, oh = n.val.shape[1], ow = n.val.shape[2];
      float inv = 1.f / static_cast<float>(win * win);
      for (int ch = 0; ch < c; ++ch) {
        float* dx = x.grad.data() + static_cast<std::size_t>(ch) * h * w;
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            float g = n.grad[(static_cast<std::size_t>(ch) * oh + oy) * ow + ox] * inv;
            for (int ky = 0; ky < win; ++ky) {
              float* row = dx + static_cast<std::size_t>(oy * st + ky) * w + ox * st;
              for (int kx = 0; kx < win; ++kx) row[kx] += g;
            }
          }
      }
      break;
    }
    case OpKind::add: {
      for (int s = 0; s < 2; ++s) {
        if (!wants(s)) continue;
        Node& x = inode(s);
        for (std::size_t i = 0; i < x.val.numel(); ++i) x.grad[i] += n.grad[i];
      }
      break;
    }
    case OpKind::concat: {
      Node& a = inode(0);
      Node& b = inode(1);
      std::size_t na = a.val.numel();
      if (wants(0))
        for (std::size_t i = 0; i < na; ++i) a.grad[i] += n.grad[i];
      if (wants(1))
        for (std::size_t i = 0; i < b.val.numel(); ++i) b.grad[i] += n.grad[na + i];
      break;
    }
    case OpKind::softmax: {
      if (!wants(0)) break;
      Node& x = inode(0);
      const std::vector<float>& p = n.val.data;
      float dot = 0.f;
      for (std::size_t i = 0; i < p.size(); ++i) dot += n.grad[i] * p[i];
      for (std::size_t i = 0; i < p.size(); ++i) x.grad[i] += p[i] * (n.grad[i] - dot);
      break;
    }
    case OpKind::sum: {
      if (!wants(0)) break;
      Node& x = inode(0);
      float g = n.grad[0];
      for (float& v : x.grad) v += g;
      break;
    }
    case OpKind::avg_k: {
      float inv = 1.f / static_cast<float>(n.inputs.size());
      for (std::size_t s = 0; s < n.inputs.size(); ++s) {
        if (!wants(static_cast<int>(s))) continue;
        Node& x = inode(static_cast<int>(s));
        for (std::size_t i = 0; i < x.val.numel(); ++i) x.grad[i] += n.grad[i] * inv;
      }
      break;
    }
    case OpKind::resize_pad: {
      if (!wants(0)) break;
      Node& x = inode(0);
      kernels::resize_pad_adjoint(n.grad.data(), x.grad.data(), x.val.shape[0], x.val.shape[1],
                                  x.val.shape[2], n.p.i0, n.p.i1, n.p.i2);
      break;
    }
    case OpKind::loss_ce: {
      if (!wants(0)) break;
      Node& x = inode(0);
      float g = n.grad[0];
      int t = n.p.i0;
      for (std::size_t j = 0; j < x.val.numel(); ++j)
        x.grad[j] += g * (n.auxf[j] - (static_cast<int>(j) == t ? 1.f : 0.f));
      break;
    }
    case OpKind::loss_logit: {
      if (!wants(0)) break;
      inode(0).grad[static_cast<std::size_t>(n.p.i0)] -= n.grad[0];
      break;
    }
    case OpKind::loss_cw: {
      if (!wants(0)) break;
      if (n.aux[1] == 0) break;
      Node& x = inode(0);
      float g = n.grad[0];
      x.grad[static_cast<std::size_t>(n.aux[0])] += g;
      x.grad[static_cast<std::size_t>(n.p.i0)] -= g;
      break;
    }
    case OpKind::loss_po_trip: {
      if (!wants(0)) break;
      Node& x = inode(0);
      const std::vector<float>& z = x.val.data;
      int k = static_cast<int>(z.size()), t = n.p.i0, o = n.p.i1;
      float lambda = n.p.f0, gamma = n.p.f1, xi = n.p.f2;
      float gout = n.grad[0];

      float m1 = 0.f, sq = 0.f;
      for (float v : z) {
        m1 += std::fabs(v);
        sq += v * v;
      }
      bool m1_floored = m1 <= xi;
      float m1f = std::max(m1, xi);
      float vmag = 1.f - xi;
      float b = 0.f, a = 0.f;
      for (int j = 0; j < k; ++j) {
        float u = z[static_cast<std::size_t>(j)] / m1f;
        b += u * u;
        float d = u - (j == t ? vmag : 0.f);
        a += d * d;
      }
      float den = (1.f - b) * (1.f - vmag * vmag);
      bool den_floored = den <= xi;
      float denf = std::max(den, xi);
      float delta = 2.f * a / denf;
      float sg = std::sqrt(delta * (delta + 2.f));
      if (sg < xi) sg = xi;
      float dl_ddelta = 1.f / sg;
      float dd_da = 2.f / denf;
      float dd_db = den_floored ? 0.f : delta / (1.f - b);

      std::vector<float> du(static_cast<std::size_t>(k));
      float udot = 0.f;
      for (int j = 0; j < k; ++j) {
        float u = z[static_cast<std::size_t>(j)] / m1f;
        float diff = u - (j == t ? vmag : 0.f);
        du[static_cast<std::size_t>(j)] = dl_ddelta * (dd_da * 2.f * diff + dd_db * 2.f * u);
        udot += du[static_cast<std::size_t>(j)] * u;
      }
      for (int j = 0; j < k; ++j) {
        float dz;
        if (m1_floored)
          dz = du[static_cast<std::size_t>(j)] / xi;
        else
          dz = (du[static_cast<std::size_t>(j)] - sign_of(z[static_cast<std::size_t>(j)]) * udot) / m1;
        x.grad[static_cast<std::size_t>(j)] += gout * dz;
      }

      float n2 = std::sqrt(sq);
      bool n2_floored = n2 <= xi;
      float n2f = std::max(n2, xi);
      float zt = z[static_cast<std::size_t>(t)], zo = z[static_cast<std::size_t>(o)];
      float trip_margin = (1.f - std::fabs(zt) / n2f) - (1.f - std::fabs(zo) / n2f) + gamma;
      if (lambda > 0.f && trip_margin > 0.f) {
        float st = sign_of(zt), so = sign_of(zo);
        if (n2_floored) {
          x.grad[static_cast<std::size_t>(t)] += gout * lambda * (-st / xi);
          x.grad[static_cast<std::size_t>(o)] += gout * lambda * (so / xi);
        } else {
          float common = (std::fabs(zt) - std::fabs(zo)) / (n2 * n2 * n2);
          for (int j = 0; j < k; ++j)
            x.grad[static_cast<std::size_t>(j)] +=
                gout * lambda * common * z[static_cast<std::size_t>(j)];
          x.grad[static_cast<std::size_t>(t)] += gout * lambda * (-st / n2);
          x.grad[static_cast<std::size_t>(o)] += gout * lambda * (so / n2);
        }
      }
      break;
    }
  }
}

}  // namespace ttlab
