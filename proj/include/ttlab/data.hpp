#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ttlab/errors.hpp"
#include "ttlab/tensor.hpp"

namespace ttlab {

// Images live in [0,1] pixel space; per-channel standardization happens inside
// each model graph so attack gradients are with respect to raw pixels.

struct Dataset {
  std::vector<Tensor> images;  // each [C,H,W]
  std::vector<int> labels;
  int num_classes = 0;
  std::string split;

  std::size_t size() const { return images.size(); }
  void validate() const;
};

// Standard CIFAR-10 binary layout: data_batch_{1..5}.bin + test_batch.bin,
// 3073 bytes per record (label byte + 3072 channel-major pixel bytes). The
// canonical sets have 10000 records per file; smaller lab sets use fewer or
// shorter train batches.
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir);
void write_cifar10(const std::string& dir, const Dataset& train, const Dataset& test);

// MNIST IDX files (big-endian magic 0x803 images / 0x801 labels).
std::pair<Dataset, Dataset> load_mnist(const std::string& dir);
void write_mnist(const std::string& dir, const Dataset& train, const Dataset& test);

struct Batch {
  std::vector<const Tensor*> images;
  std::vector<int> labels;
};

// One epoch over the dataset in batches; order is a pure function of seed.
class BatchIter {
 public:
  BatchIter(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, bool shuffle);
  bool next(Batch& out);  // false once the epoch is exhausted

 private:
  const Dataset* ds_;
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t pos_ = 0;
};

}  // namespace ttlab
