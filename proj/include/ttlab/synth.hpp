#pragma once

#include <cstdint>
#include <string>

#include "ttlab/data.hpp"

namespace ttlab {

// Deterministic synthetic image sets in the canonical CIFAR-10 / MNIST binary
// layouts. Each class owns a bank of cue patterns (coarse color blobs and
// oriented stripes); every sample mixes the bank with random per-image
// weights, so no single cue is reliable on its own, then adds shift, flip,
// contrast/brightness jitter and two noise scales. Classifiers trained on
// different seeds and architectures end up weighting the redundant cues
// differently, which is what keeps cross-model transfer non-trivial.

struct SynthConfig {
  std::size_t train_n = 50000;
  std::size_t test_n = 10000;
  std::uint64_t seed = 0;
  int classes = 10;

  float cue_amp = 0.40f;           // overall contrast of the cue mix
  int cue_count = 6;               // redundant cue patterns per class
  float cue_floor = 0.30f;         // lowest per-image cue weight
  int max_shift = 4;               // circular shift range, pixels
  float contrast_jitter = 0.25f;
  float brightness_jitter = 0.12f;
  float smooth_noise = 0.16f;      // low-frequency distractor amplitude
  float white_noise = 0.05f;       // per-pixel noise amplitude
};

Dataset synth_cifar_split(const SynthConfig& cfg, bool test_split);
Dataset synth_mnist_split(const SynthConfig& cfg, bool test_split);

// Generate both splits and write them in the canonical binary layout.
void synth_cifar_to_dir(const SynthConfig& cfg, const std::string& dir);
void synth_mnist_to_dir(const SynthConfig& cfg, const std::string& dir);

}  // namespace ttlab
