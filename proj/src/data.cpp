#include "ttlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "ttlab/rng.hpp"

namespace ttlab {

namespace {

std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  f.seekg(0, std::ios::end);
  auto len = f.tellg();
  f.seekg(0);
  std::vector<unsigned char> buf(static_cast<std::size_t>(len));
  f.read(reinterpret_cast<char*>(buf.data()), len);
  if (!f) throw IoError("short read on " + path);
  return buf;
}

void write_all(const std::string& path, const std::vector<unsigned char>& buf) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("short write on " + path);
}

unsigned char quantize(float v) {
  float c = std::clamp(v, 0.f, 1.f);
  return static_cast<unsigned char>(std::lround(c * 255.f));
}

constexpr std::size_t kCifarRecord = 3073;
constexpr std::size_t kCifarPerFile = 10000;

void parse_cifar_file(const std::string& path, Dataset& out) {
  auto buf = read_all(path);
  if (buf.empty() || buf.size() % kCifarRecord != 0)
    throw FormatError(path + ": size " + std::to_string(buf.size()) +
                      " is not a whole number of " + std::to_string(kCifarRecord) +
                      "-byte records");
  const std::size_t records = buf.size() / kCifarRecord;
  for (std::size_t r = 0; r < records; ++r) {
    const unsigned char* rec = buf.data() + r * kCifarRecord;
    if (rec[0] > 9)
      throw FormatError(path + ": record " + std::to_string(r) + " has label byte " +
                        std::to_string(rec[0]));
    out.labels.push_back(rec[0]);
    Tensor img({3, 32, 32});
    for (std::size_t i = 0; i < 3072; ++i)
      img.data[i] = static_cast<float>(rec[1 + i]) / 255.f;
    out.images.push_back(std::move(img));
  }
}

}  // namespace

void Dataset::validate() const {
  if (images.size() != labels.size())
    throw FormatError("dataset " + split + ": " + std::to_string(images.size()) +
                      " images vs " + std::to_string(labels.size()) + " labels");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw FormatError("dataset " + split + ": label " + std::to_string(labels[i]) +
                        " at index " + std::to_string(i) + " outside [0, " +
                        std::to_string(num_classes) + ")");
  }
}

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir) {
  Dataset train, test;
  train.num_classes = test.num_classes = 10;
  train.split = "train";
  test.split = "test";
  parse_cifar_file(dir + "/data_batch_1.bin", train);
  for (int b = 2; b <= 5; ++b) {
    std::string path = dir + "/data_batch_" + std::to_string(b) + ".bin";
    if (std::filesystem::exists(path)) parse_cifar_file(path, train);
  }
  parse_cifar_file(dir + "/test_batch.bin", test);
  train.validate();
  test.validate();
  return {std::move(train), std::move(test)};
}

// Canonical sizes reproduce the reference 5 x 10000 batch layout byte for
// byte; smaller sets spread the train split over up to five shorter batches.
void write_cifar10(const std::string& dir, const Dataset& train, const Dataset& test) {
  if (train.size() == 0 || test.size() == 0)
    throw UsageError("write_cifar10: needs nonempty train and test splits");
  std::filesystem::create_directories(dir);
  const auto emit = [&](const std::string& path, const Dataset& ds, std::size_t first,
                        std::size_t count) {
    std::vector<unsigned char> buf(kCifarRecord * count);
    for (std::size_t r = 0; r < count; ++r) {
      unsigned char* rec = buf.data() + r * kCifarRecord;
      const Tensor& img = ds.images[first + r];
      if (img.shape != std::vector<int>{3, 32, 32})
        throw ShapeError("write_cifar10: image must be [3,32,32], got " + shape_str(img.shape));
      rec[0] = static_cast<unsigned char>(ds.labels[first + r]);
      for (std::size_t i = 0; i < 3072; ++i) rec[1 + i] = quantize(img.data[i]);
    }
    write_all(path, buf);
  };
  const std::size_t base = train.size() / 5, rem = train.size() % 5;
  std::size_t first = 0;
  for (int b = 1; b <= 5; ++b) {
    std::size_t count = base + (static_cast<std::size_t>(b) <= rem ? 1 : 0);
    if (count == 0) break;
    emit(dir + "/data_batch_" + std::to_string(b) + ".bin", train, first, count);
    first += count;
  }
  emit(dir + "/test_batch.bin", test, 0, test.size());
}

namespace {

std::uint32_t be32(const unsigned char* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

void put_be32(std::vector<unsigned char>& buf, std::uint32_t v) {
  buf.push_back(static_cast<unsigned char>(v >> 24));
  buf.push_back(static_cast<unsigned char>(v >> 16));
  buf.push_back(static_cast<unsigned char>(v >> 8));
  buf.push_back(static_cast<unsigned char>(v));
}

void parse_mnist_pair(const std::string& img_path, const std::string& lbl_path, Dataset& out) {
  auto ib = read_all(img_path);
  if (ib.size() < 16 || be32(ib.data()) != 0x803)
    throw FormatError(img_path + ": bad image magic");
  std::uint32_t n = be32(ib.data() + 4), rows = be32(ib.data() + 8), cols = be32(ib.data() + 12);
  if (ib.size() != 16 + static_cast<std::size_t>(n) * rows * cols)
    throw FormatError(img_path + ": truncated image data");

  auto lb = read_all(lbl_path);
  if (lb.size() < 8 || be32(lb.data()) != 0x801)
    throw FormatError(lbl_path + ": bad label magic");
  if (be32(lb.data() + 4) != n)
    throw FormatError(lbl_path + ": label count " + std::to_string(be32(lb.data() + 4)) +
                      " does not match " + std::to_string(n) + " images");
  if (lb.size() != 8 + n) throw FormatError(lbl_path + ": truncated label data");

  std::size_t plane = static_cast<std::size_t>(rows) * cols;
  for (std::uint32_t i = 0; i < n; ++i) {
    if (lb[8 + i] > 9)
      throw FormatError(lbl_path + ": record " + std::to_string(i) + " has label byte " +
                        std::to_string(lb[8 + i]));
    out.labels.push_back(lb[8 + i]);
    Tensor img({1, static_cast<int>(rows), static_cast<int>(cols)});
    const unsigned char* px = ib.data() + 16 + static_cast<std::size_t>(i) * plane;
    for (std::size_t j = 0; j < plane; ++j) img.data[j] = static_cast<float>(px[j]) / 255.f;
    out.images.push_back(std::move(img));
  }
}

}  // namespace

std::pair<Dataset, Dataset> load_mnist(const std::string& dir) {
  Dataset train, test;
  train.num_classes = test.num_classes = 10;
  train.split = "train";
  test.split = "test";
  parse_mnist_pair(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte", train);
  parse_mnist_pair(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte", test);
  train.validate();
  test.validate();
  return {std::move(train), std::move(test)};
}

void write_mnist(const std::string& dir, const Dataset& train, const Dataset& test) {
  std::filesystem::create_directories(dir);
  const auto emit = [&](const std::string& img_path, const std::string& lbl_path,
                        const Dataset& ds) {
    if (ds.size() == 0) throw UsageError("write_mnist: empty dataset");
    int rows = ds.images[0].shape[1], cols = ds.images[0].shape[2];
    std::vector<unsigned char> ib, lb;
    put_be32(ib, 0x803);
    put_be32(ib, static_cast<std::uint32_t>(ds.size()));
    put_be32(ib, static_cast<std::uint32_t>(rows));
    put_be32(ib, static_cast<std::uint32_t>(cols));
    put_be32(lb, 0x801);
    put_be32(lb, static_cast<std::uint32_t>(ds.size()));
    for (std::size_t i = 0; i < ds.size(); ++i) {
      for (float v : ds.images[i].data) ib.push_back(quantize(v));
      lb.push_back(static_cast<unsigned char>(ds.labels[i]));
    }
    write_all(img_path, ib);
    write_all(lbl_path, lb);
  };
  emit(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte", train);
  emit(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte", test);
}

BatchIter::BatchIter(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                     bool shuffle)
    : ds_(&ds), batch_(batch_size) {
  if (batch_size < 1) throw UsageError("batch_iter: batch size must be >= 1");
  order_.resize(ds.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle) {
    StreamRng r(seed);
    r.shuffle(order_);
  }
}

bool BatchIter::next(Batch& out) {
  if (pos_ >= order_.size()) return false;
  std::size_t n = std::min(batch_, order_.size() - pos_);
  out.images.resize(n);
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t idx = order_[pos_ + i];
    out.images[i] = &ds_->images[idx];
    out.labels[i] = ds_->labels[idx];
  }
  pos_ += n;
  return true;
}

}  // namespace ttlab
