#include "ttlab/attack.hpp"

#include <algorithm>
#include <cmath>

#include "ttlab/errors.hpp"
#include "ttlab/kernels.hpp"

namespace ttlab {

namespace {

constexpr std::uint64_t kPhaseInit = 1;
constexpr std::uint64_t kPhaseDi = 2;

float sign_of(float v) { return v > 0.f ? 1.f : (v < 0.f ? -1.f : 0.f); }

// Epsilon ball (unless unbounded) followed by the [0,1] pixel box.
void project_in_place(Tensor& x, const Tensor& orig, const AttackConfig& cfg) {
  if (!cfg.unbounded) {
    if (cfg.norm == NormKind::linf) {
      for (std::size_t i = 0; i < x.data.size(); ++i) {
        float lo = orig.data[i] - cfg.epsilon;
        float hi = orig.data[i] + cfg.epsilon;
        x.data[i] = std::min(std::max(x.data[i], lo), hi);
      }
    } else {
      double n2 = 0.0;
      for (std::size_t i = 0; i < x.data.size(); ++i) {
        double d = static_cast<double>(x.data[i]) - orig.data[i];
        n2 += d * d;
      }
      n2 = std::sqrt(n2);
      if (n2 > cfg.epsilon && n2 > 0.0) {
        float s = static_cast<float>(cfg.epsilon / n2);
        for (std::size_t i = 0; i < x.data.size(); ++i)
          x.data[i] = orig.data[i] + (x.data[i] - orig.data[i]) * s;
      }
    }
  }
  for (float& v : x.data) v = std::min(std::max(v, 0.f), 1.f);
}

int rank_of(const std::vector<float>& z, int idx) {
  int r = 1;
  for (std::size_t j = 0; j < z.size(); ++j)
    if (z[j] > z[static_cast<std::size_t>(idx)]) ++r;
  return r;
}

}  // namespace

std::string norm_name(NormKind n) {
  return n == NormKind::linf ? "linf" : "l2";
}

NormKind parse_norm(const std::string& name) {
  if (name == "linf") return NormKind::linf;
  if (name == "l2") return NormKind::l2;
  throw UsageError("unknown norm '" + name + "', expected linf or l2");
}

void validate_attack_config(const AttackConfig& cfg) {
  if (!(cfg.alpha > 0.f)) throw UsageError("attack: alpha must be > 0");
  if (cfg.iterations < 1) throw UsageError("attack: iterations must be >= 1");
  if (!(cfg.epsilon >= 0.f && cfg.epsilon <= 1.f))
    throw UsageError("attack: epsilon must lie in [0,1]");
  for (int c : cfg.checkpoints)
    if (c < 1 || c > cfg.iterations)
      throw UsageError("attack: checkpoint " + std::to_string(c) +
                       " outside [1," + std::to_string(cfg.iterations) + "]");
  if (!(cfg.mi_mu >= 0.f)) throw UsageError("attack: momentum decay must be >= 0");
  if (cfg.ti_kernel < 1 || cfg.ti_kernel % 2 == 0)
    throw UsageError("attack: smoothing kernel size must be odd and >= 1");
  if (!(cfg.di_prob >= 0.f && cfg.di_prob <= 1.f))
    throw UsageError("attack: transform probability must lie in [0,1]");
  if (cfg.di_low < 1 || cfg.di_low > cfg.di_high)
    throw UsageError("attack: resize band must satisfy 1 <= low <= high");
  if (!(cfg.init_sigma >= 0.f)) throw UsageError("attack: init sigma must be >= 0");
}

Tensor make_ti_kernel(int size) {
  if (size < 1 || size % 2 == 0)
    throw UsageError("make_ti_kernel: size must be odd and >= 1, got " +
                     std::to_string(size));
  Tensor k({size, size});
  double sigma = static_cast<double>(size) / 3.0;
  int c = size / 2;
  double sum = 0.0;
  std::vector<double> tmp(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double dy = y - c, dx = x - c;
      double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
      tmp[static_cast<std::size_t>(y) * size + x] = v;
      sum += v;
    }
  for (std::size_t i = 0; i < tmp.size(); ++i)
    k.data[i] = static_cast<float>(tmp[i] / sum);
  return k;
}

Tensor ti_smooth(const Tensor& grad, const Tensor& kernel) {
  if (grad.rank() != 3) throw ShapeError("ti_smooth: gradient must be [C,H,W]");
  if (kernel.rank() != 2 || kernel.shape[0] != kernel.shape[1])
    throw ShapeError("ti_smooth: kernel must be square");
  int c = grad.shape[0], h = grad.shape[1], w = grad.shape[2];
  int ks = kernel.shape[0];
  Tensor out(grad.shape);
  std::fill(out.data.begin(), out.data.end(), 0.f);
  std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < c; ++ch)
    kernels::conv2d_forward(grad.data.data() + ch * plane, kernel.data.data(),
                            out.data.data() + ch * plane, 1, h, w, 1, ks, ks, 1,
                            ks / 2, h, w);
  return out;
}

Tensor di_transform(const Tensor& image, float p, int low, int high, StreamRng& rng) {
  if (image.rank() != 3 || image.shape[1] != image.shape[2])
    throw ShapeError("di_transform: image must be square [C,H,H]");
  int h = image.shape[1];
  if (low < 1 || low > high || high > h)
    throw UsageError("di_transform: resize band must satisfy 1 <= low <= high <= side");
  if (rng.next_double() >= p) return image;
  int r = low + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(high - low + 1)));
  int oy = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(h - r + 1)));
  int ox = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(h - r + 1)));
  Tensor out(image.shape);
  std::fill(out.data.begin(), out.data.end(), 0.f);
  kernels::resize_pad_forward(image.data.data(), out.data.data(), image.shape[0], h, h,
                              r, oy, ox);
  return out;
}

Tensor mi_accumulate(const Tensor& g_prev, const Tensor& grad, float mu,
                     bool* zero_event) {
  if (!g_prev.same_shape(grad)) throw ShapeError("mi_accumulate: shape mismatch");
  float n1 = l1_norm(grad.data);
  Tensor out(g_prev.shape);
  if (n1 == 0.f) {
    if (zero_event) *zero_event = true;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = mu * g_prev.data[i];
    return out;
  }
  float inv = 1.f / n1;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = mu * g_prev.data[i] + grad.data[i] * inv;
  return out;
}

Tensor step_and_project(const Tensor& x_curr, const Tensor& x_orig,
                        const Tensor& update_dir, const AttackConfig& cfg) {
  if (!x_curr.same_shape(x_orig) || !x_curr.same_shape(update_dir))
    throw ShapeError("step_and_project: shape mismatch");
  Tensor x = x_curr;
  if (cfg.norm == NormKind::linf) {
    for (std::size_t i = 0; i < x.data.size(); ++i)
      x.data[i] -= cfg.alpha * sign_of(update_dir.data[i]);
  } else {
    float n2 = l2_norm(update_dir.data);
    if (n2 > 0.f) {
      float s = cfg.alpha / n2;
      for (std::size_t i = 0; i < x.data.size(); ++i)
        x.data[i] -= s * update_dir.data[i];
    }
  }
  project_in_place(x, x_orig, cfg);
  return x;
}

std::vector<float> ensemble_logits(const std::vector<const Model*>& models,
                                   const Tensor& image) {
  if (models.empty()) throw UsageError("ensemble_logits: no models");
  int k = models[0]->num_classes;
  for (const Model* m : models)
    if (m->num_classes != k)
      throw UsageError("ensemble_logits: models disagree on class count");
  std::vector<double> acc(static_cast<std::size_t>(k), 0.0);
  for (const Model* m : models) {
    Graph g = m->graph;
    std::vector<float> z = predict_logits_one(g, *m, image);
    for (int j = 0; j < k; ++j) acc[static_cast<std::size_t>(j)] += z[static_cast<std::size_t>(j)];
  }
  std::vector<float> out(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j)
    out[static_cast<std::size_t>(j)] =
        static_cast<float>(acc[static_cast<std::size_t>(j)] / static_cast<double>(models.size()));
  return out;
}

Tensor attack_init_image(const Tensor& image, const AttackConfig& cfg) {
  Tensor x = image;
  if (cfg.init == InitKind::gaussian) {
    CounterRng ctr(cfg.seed);
    for (std::size_t i = 0; i < x.data.size(); ++i)
      x.data[i] += cfg.init_sigma * ctr.gaussian(kPhaseInit, 0, i);
    project_in_place(x, image, cfg);
  }
  return x;
}

AttackResult attack(const std::vector<const Model*>& models, const Tensor& image,
                    int target, int original, const AttackConfig& cfg) {
  validate_attack_config(cfg);
  if (models.empty()) throw UsageError("attack: no source models");
  int k = models[0]->num_classes;
  for (const Model* m : models) {
    if (m->num_classes != k) throw UsageError("attack: models disagree on class count");
    if (m->input_shape != models[0]->input_shape)
      throw UsageError("attack: models disagree on input shape");
  }
  if (image.shape != models[0]->input_shape)
    throw ShapeError("attack: image shape " + shape_str(image.shape) +
                     " does not match model input " + shape_str(models[0]->input_shape));
  if (target < 0 || target >= k || original < 0 || original >= k)
    throw UsageError("attack: class index out of range");
  for (float v : image.data)
    if (!(v >= -1e-6f && v <= 1.f + 1e-6f))
      throw UsageError("attack: image pixels outside [0,1]");
  int h = image.shape[1];
  if (cfg.use_di && cfg.di_high > h)
    throw UsageError("attack: resize band exceeds image side " + std::to_string(h));

  Graph g;
  int in = g.add_input(image.shape);
  int fed = g.add_resize_pad(in);
  std::vector<int> zs;
  for (std::size_t m = 0; m < models.size(); ++m)
    zs.push_back(append_network(g, *models[m], fed, "src" + std::to_string(m) + "/"));
  int zid = g.add_avg_k(zs);
  int loss = append_loss(g, zid, cfg.loss, target, original);
  g.set_grad_targets({in});

  CounterRng ctr(cfg.seed);
  Tensor x = attack_init_image(image, cfg);

  std::vector<int> snaps = cfg.checkpoints;
  std::sort(snaps.begin(), snaps.end());
  snaps.erase(std::unique(snaps.begin(), snaps.end()), snaps.end());

  AttackResult res;
  res.seed = cfg.seed;
  res.loss_trace.reserve(static_cast<std::size_t>(cfg.iterations));
  res.grad_l1_trace.reserve(static_cast<std::size_t>(cfg.iterations));
  res.target_logit_trace.reserve(static_cast<std::size_t>(cfg.iterations));
  res.target_prob_trace.reserve(static_cast<std::size_t>(cfg.iterations));
  res.target_rank_trace.reserve(static_cast<std::size_t>(cfg.iterations));
  res.zero_grad_flags.assign(static_cast<std::size_t>(cfg.iterations), 0);

  Tensor kernel = cfg.use_ti ? make_ti_kernel(cfg.ti_kernel) : Tensor();
  Tensor mom(image.shape);
  std::size_t snap_pos = 0;

  for (int it = 1; it <= cfg.iterations; ++it) {
    Node& di = g.node(fed);
    di.p.i0 = h;
    di.p.i1 = 0;
    di.p.i2 = 0;
    if (cfg.use_di) {
      std::uint64_t step = static_cast<std::uint64_t>(it);
      if (ctr.u01(kPhaseDi, step, 0) < cfg.di_prob) {
        int r = cfg.di_low +
                static_cast<int>(ctr.below(
                    static_cast<std::uint64_t>(cfg.di_high - cfg.di_low + 1), kPhaseDi,
                    step, 1));
        di.p.i0 = r;
        di.p.i1 = static_cast<int>(
            ctr.below(static_cast<std::uint64_t>(h - r + 1), kPhaseDi, step, 2));
        di.p.i2 = static_cast<int>(
            ctr.below(static_cast<std::uint64_t>(h - r + 1), kPhaseDi, step, 3));
      }
    }

    g.set_value(in, x);
    g.forward();
    const std::vector<float>& z = g.val(zid).data;
    res.loss_trace.push_back(g.val(loss).data[0]);
    res.target_logit_trace.push_back(z[static_cast<std::size_t>(target)]);
    std::vector<float> p = softmax_vec(z);
    res.target_prob_trace.push_back(p[static_cast<std::size_t>(target)]);
    res.target_rank_trace.push_back(rank_of(z, target));

    g.backward(loss);
    Tensor gin(image.shape);
    gin.data = g.grad(in);
    res.grad_l1_trace.push_back(l1_norm(gin.data));

    Tensor dir = cfg.use_ti ? ti_smooth(gin, kernel) : std::move(gin);
    bool zero = false;
    if (cfg.use_mi) {
      mom = mi_accumulate(mom, dir, cfg.mi_mu, &zero);
      dir = mom;
    } else if (l1_norm(dir.data) == 0.f) {
      zero = true;
    }
    if (zero) {
      res.zero_grad_flags[static_cast<std::size_t>(it - 1)] = 1;
      ++res.zero_grad_events;
    }

    x = step_and_project(x, image, dir, cfg);

    if (snap_pos < snaps.size() && snaps[snap_pos] == it) {
      res.checkpoint_iters.push_back(it);
      res.checkpoint_images.push_back(x);
      ++snap_pos;
    }
  }
  res.final_image = x;
  return res;
}

}  // namespace ttlab
