#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ttlab/data.hpp"
#include "ttlab/graph.hpp"

namespace ttlab {

// A model is an inference graph template: one input node, named weight nodes,
// a logits node. Per-channel standardization is the first op in the graph so
// gradients at the input node are w.r.t. [0,1] pixels. The graph is a value
// type; callers needing concurrent evaluation clone it.

struct Model {
  std::string arch_id;
  Graph graph;
  int input_id = -1;
  int logits_id = -1;
  int num_classes = 0;
  std::vector<int> input_shape;
  std::vector<float> norm_mean, norm_std;
};

const std::vector<std::string>& known_archs();  // mini_vgg, mini_res, mini_dense, mini_incep

Model build_model(const std::string& arch_id, int num_classes, std::uint64_t seed,
                  const std::vector<int>& input_shape = {3, 32, 32});

// Appends this model's full network (normalization included) onto an existing
// graph after `input`, prefixing weight names to keep them unique, and returns
// the logits node. This is how attack graphs and ensembles are assembled.
int append_network(Graph& g, const Model& m, int input, const std::string& prefix);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 128;
  float lr = 0.05f;
  std::vector<int> decay_epochs = {20, 25};
  float decay_factor = 0.1f;
  float momentum = 0.9f;
  float weight_decay = 5e-4f;
  std::uint64_t seed = 0;
  bool flip_augment = true;
  std::size_t train_subset = 0;  // 0 = full training split
};

struct TrainMetrics {
  float test_accuracy = 0.f;
  std::vector<float> epoch_mean_loss;
};

TrainMetrics train(Model& m, const Dataset& train_ds, const Dataset& test_ds,
                   const TrainConfig& cfg);

// "MZW1" weight container: magic, arch id, class count, then each named
// tensor. Bitwise round trip.
void save_weights(const Model& m, const std::string& path);
Model load_weights(const std::string& path, const std::vector<int>& input_shape = {3, 32, 32});

Tensor predict_logits(const Model& m, const Tensor& images);  // [B,C,H,W] -> [B,k]
std::vector<float> predict_logits_one(Graph& eval_graph, const Model& m, const Tensor& image);
float accuracy(const Model& m, const Dataset& ds, std::size_t limit = 0);

}  // namespace ttlab
