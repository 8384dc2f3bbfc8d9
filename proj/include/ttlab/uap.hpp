#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ttlab/attack.hpp"
#include "ttlab/evaluation.hpp"

namespace ttlab {

// A universal targeted perturbation: one delta reused for every input.
// Trained without any data by descending the attack loss from the mid-gray
// image, so the perturbation itself carries the target-class evidence.
struct UapArtifact {
  Tensor delta;
  int target = 0;
  float epsilon = 0.f;
  std::string arch_id;
  std::uint64_t seed = 0;
};

UapArtifact generate_uap(const std::vector<const Model*>& models,
                         const std::string& source_id, int target,
                         const AttackConfig& cfg);

// "UAP1" container: magic, shape, epsilon, target, source id, f32 payload.
void save_uap(const UapArtifact& uap, const std::string& path);
UapArtifact load_uap(const std::string& path);

// Fraction of the first `limit` images (0 = all) pushed to the target class
// by clip(x + delta, 0, 1).
float evaluate_uap(const UapArtifact& uap, const Model& m, const Dataset& ds,
                   std::size_t limit = 0);

// One row per (model, loss): perturbations trained on that model alone for
// every class in turn, evaluated on it over `eval_n` test images, success
// averaged over the classes.
TransferReport run_uap_suite(const std::vector<NamedModel>& models,
                             const Dataset& test_set, const SuiteConfig& sc,
                             std::size_t eval_n = 1000);

}  // namespace ttlab
