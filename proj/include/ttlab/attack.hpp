#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ttlab/losses.hpp"
#include "ttlab/model.hpp"
#include "ttlab/rng.hpp"

namespace ttlab {

enum class NormKind { linf, l2 };
enum class InitKind { zero, gaussian };

std::string norm_name(NormKind n);
NormKind parse_norm(const std::string& name);

// Iterative targeted attack configuration. epsilon and alpha are in [0,1]
// pixel units. checkpoints are 1-based iteration counts at which a snapshot
// of the adversarial image is kept. unbounded drops the epsilon ball but
// keeps the [0,1] pixel clip.
struct AttackConfig {
  LossSpec loss;
  float epsilon = 16.0f / 255.0f;
  float alpha = 2.0f / 255.0f;
  int iterations = 300;
  std::vector<int> checkpoints = {20, 100, 300};
  bool use_mi = false;
  float mi_mu = 1.0f;
  bool use_ti = false;
  int ti_kernel = 5;
  bool use_di = false;
  float di_prob = 0.7f;
  int di_low = 29;
  int di_high = 32;
  NormKind norm = NormKind::linf;
  bool unbounded = false;
  InitKind init = InitKind::zero;
  float init_sigma = 0.1f;
  std::uint64_t seed = 0;
};

void validate_attack_config(const AttackConfig& cfg);

struct AttackResult {
  std::vector<int> checkpoint_iters;
  std::vector<Tensor> checkpoint_images;
  Tensor final_image;
  std::vector<float> loss_trace;
  std::vector<float> grad_l1_trace;
  std::vector<float> target_logit_trace;
  std::vector<float> target_prob_trace;
  std::vector<int> target_rank_trace;
  std::vector<std::uint8_t> zero_grad_flags;
  int zero_grad_events = 0;
  std::uint64_t seed = 0;
};

// Square Gaussian window of odd side `size`, sigma = size/3, entries
// summing to 1.
Tensor make_ti_kernel(int size);

// Per-channel same-size convolution of a [C,H,W] gradient with a
// make_ti_kernel window, zero padded.
Tensor ti_smooth(const Tensor& grad, const Tensor& kernel);

// With probability p, bilinear-downscale to a random side in [low, high]
// and zero-pad back at a random offset; otherwise identity. Draws fresh
// randomness from `rng` on every call.
Tensor di_transform(const Tensor& image, float p, int low, int high, StreamRng& rng);

// Momentum update mu*g_prev + grad/l1(grad). A zero gradient skips the
// normalization, returns mu*g_prev and sets *zero_event when given.
Tensor mi_accumulate(const Tensor& g_prev, const Tensor& grad, float mu,
                     bool* zero_event = nullptr);

// One sign (linf) or normalized (l2) descent step from x_curr followed by
// projection onto the epsilon ball around x_orig (skipped when unbounded)
// and the [0,1] pixel box.
Tensor step_and_project(const Tensor& x_curr, const Tensor& x_orig,
                        const Tensor& update_dir, const AttackConfig& cfg);

// Equal-weight fusion: arithmetic mean of the models' logit vectors.
std::vector<float> ensemble_logits(const std::vector<const Model*>& models,
                                   const Tensor& image);

// Starting point of the descent: the image itself, or a projected gaussian
// perturbation of it when the config asks for one.
Tensor attack_init_image(const Tensor& image, const AttackConfig& cfg);

AttackResult attack(const std::vector<const Model*>& models, const Tensor& image,
                    int target, int original, const AttackConfig& cfg);

}  // namespace ttlab
