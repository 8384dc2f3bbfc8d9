#pragma once

#include <string>
#include <vector>

#include "ttlab/graph.hpp"

namespace ttlab {

enum class LossKind { ce, logit, cw, po_trip };

std::string loss_name(LossKind k);
LossKind parse_loss(const std::string& name);

// Objective for a targeted attack. cw_k is the C&W confidence margin,
// po_lambda weights the triplet term, trip_gamma is the triplet margin,
// xi guards denominators and keeps the target anchor off the unit sphere.
struct LossSpec {
  LossKind kind = LossKind::logit;
  float cw_k = 0.0f;
  float po_lambda = 0.01f;
  float trip_gamma = 0.007f;
  float xi = 1e-5f;
};

// Appends the loss node for `spec` over `logits` and returns its id.
// `original` is consumed only by po_trip; ce/logit/cw ignore it.
int append_loss(Graph& g, int logits, const LossSpec& spec, int target,
                int original);

struct LossEval {
  float value = 0.0f;
  std::vector<float> grad;
};

// One-off evaluation on raw logits, for callers without a live graph.
LossEval loss_value_and_grad(const std::vector<float>& logits,
                             const LossSpec& spec, int target, int original);

}  // namespace ttlab
