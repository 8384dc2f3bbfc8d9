#include "ttlab/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>

#include "ttlab/rng.hpp"

namespace ttlab {

const std::vector<std::string>& known_archs() {
  static const std::vector<std::string> v{"mini_vgg", "mini_res", "mini_dense", "mini_incep"};
  return v;
}

namespace {

// Produces the tensor for a named weight: fresh fan-in-scaled noise when
// building, a copy of stored weights when replicating a trained model.
using WeightProvider = std::function<Tensor(const std::string& name, std::vector<int> shape)>;

struct ArchBuilder {
  Graph& g;
  const WeightProvider& provide;
  std::string prefix;

  int conv(int in, const std::string& name, int cin, int cout, int k, int pad) {
    int w = g.add_weight(prefix + name, provide(name, {cout, cin, k, k}));
    return g.add_conv2d(in, w, 1, pad);
  }
  int dense(int in, const std::string& name, int n_in, int n_out) {
    int w = g.add_weight(prefix + name + ".w", provide(name + ".w", {n_out, n_in}));
    int b = g.add_weight(prefix + name + ".b", provide(name + ".b", {n_out}));
    return g.add_dense(in, w, b);
  }
};

int build_layers(Graph& g, const std::string& arch_id, int input, int num_classes,
                 const WeightProvider& provide, const std::vector<float>& mean,
                 const std::vector<float>& stdev, const std::string& prefix) {
  ArchBuilder b{g, provide, prefix};
  int x = g.add_normalize(input, mean, stdev);
  const auto flat = [&](int id) { return static_cast<int>(g.val(id).numel()); };

  if (arch_id == "mini_vgg") {
    x = g.add_pool_max(g.add_relu(b.conv(x, "c1", g.val(input).shape[0], 16, 3, 1)), 2, 2);
    x = g.add_pool_max(g.add_relu(b.conv(x, "c2", 16, 32, 3, 1)), 2, 2);
    x = g.add_pool_max(g.add_relu(b.conv(x, "c3", 32, 48, 3, 1)), 2, 2);
    return b.dense(x, "fc", flat(x), num_classes);
  }
  if (arch_id == "mini_res") {
    x = g.add_pool_max(g.add_relu(b.conv(x, "c1", g.val(input).shape[0], 16, 3, 1)), 2, 2);
    int y = g.add_relu(b.conv(x, "b1c1", 16, 16, 3, 1));
    y = b.conv(y, "b1c2", 16, 16, 3, 1);
    x = g.add_relu(g.add_add(y, x));
    x = g.add_pool_max(x, 2, 2);
    x = g.add_relu(b.conv(x, "t1", 16, 32, 3, 1));
    y = g.add_relu(b.conv(x, "b2c1", 32, 32, 3, 1));
    y = b.conv(y, "b2c2", 32, 32, 3, 1);
    x = g.add_relu(g.add_add(y, x));
    x = g.add_pool_avg(x, 2, 2);
    return b.dense(x, "fc", flat(x), num_classes);
  }
  if (arch_id == "mini_dense") {
    x = g.add_pool_max(g.add_relu(b.conv(x, "c1", g.val(input).shape[0], 16, 3, 1)), 2, 2);
    int d1 = g.add_relu(b.conv(x, "d1", 16, 12, 3, 1));
    x = g.add_concat(x, d1);
    int d2 = g.add_relu(b.conv(x, "d2", 28, 12, 3, 1));
    x = g.add_concat(x, d2);
    x = g.add_pool_max(x, 2, 2);
    x = g.add_relu(b.conv(x, "t1", 40, 24, 3, 1));
    x = g.add_pool_avg(x, 2, 2);
    return b.dense(x, "fc", flat(x), num_classes);
  }
  if (arch_id == "mini_incep") {
    x = g.add_pool_max(g.add_relu(b.conv(x, "c1", g.val(input).shape[0], 16, 3, 1)), 2, 2);
    int b1 = g.add_relu(b.conv(x, "i1b1", 16, 8, 1, 0));
    int b2 = g.add_relu(b.conv(x, "i1b2", 16, 12, 3, 1));
    int b3 = g.add_relu(b.conv(x, "i1b3", 16, 8, 5, 2));
    x = g.add_concat(g.add_concat(b1, b2), b3);
    x = g.add_pool_max(x, 2, 2);
    b1 = g.add_relu(b.conv(x, "i2b1", 28, 12, 1, 0));
    b2 = g.add_relu(b.conv(x, "i2b2", 28, 16, 3, 1));
    b3 = g.add_relu(b.conv(x, "i2b3", 28, 8, 5, 2));
    x = g.add_concat(g.add_concat(b1, b2), b3);
    x = g.add_pool_avg(x, 2, 2);
    return b.dense(x, "fc", flat(x), num_classes);
  }
  throw UsageError("unknown arch '" + arch_id + "'; known: mini_vgg, mini_res, mini_dense, mini_incep");
}

std::size_t fan_in_of(const std::vector<int>& shape) {
  if (shape.size() == 4)
    return static_cast<std::size_t>(shape[1]) * shape[2] * shape[3];
  if (shape.size() == 2) return static_cast<std::size_t>(shape[1]);
  return 1;
}

}  // namespace

Model build_model(const std::string& arch_id, int num_classes, std::uint64_t seed,
                  const std::vector<int>& input_shape) {
  if (num_classes < 2) throw UsageError("build_model: need at least 2 classes");
  Model m;
  m.arch_id = arch_id;
  m.num_classes = num_classes;
  m.input_shape = input_shape;
  m.norm_mean.assign(static_cast<std::size_t>(input_shape.at(0)), 0.5f);
  m.norm_std.assign(static_cast<std::size_t>(input_shape.at(0)), 0.25f);

  StreamRng rng(hash_combine(mix64(seed), fnv1a(arch_id)));
  WeightProvider init = [&rng](const std::string& name, std::vector<int> shape) {
    Tensor t(shape);
    if (name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0) return t;
    float limit = std::sqrt(3.f / static_cast<float>(fan_in_of(shape)));
    for (float& v : t.data) v = rng.uniform(-limit, limit);
    return t;
  };

  m.input_id = m.graph.add_input(input_shape);
  m.logits_id =
      build_layers(m.graph, arch_id, m.input_id, num_classes, init, m.norm_mean, m.norm_std, "");
  return m;
}

int append_network(Graph& g, const Model& m, int input, const std::string& prefix) {
  WeightProvider copy = [&m](const std::string& name, std::vector<int> shape) {
    for (int id : m.graph.weight_ids()) {
      const Node& n = m.graph.node(id);
      if (n.name == name) {
        if (n.val.shape != shape)
          throw ShapeError("append_network: weight " + name + " is " + shape_str(n.val.shape) +
                           ", expected " + shape_str(shape));
        return n.val;
      }
    }
    throw UsageError("append_network: model has no weight named " + name);
  };
  return build_layers(g, m.arch_id, input, m.num_classes, copy, m.norm_mean, m.norm_std,
                      prefix);
}

namespace {

void put_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  f.write(reinterpret_cast<char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw FormatError(path + ": truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string get_str(std::ifstream& f, const std::string& path) {
  std::uint32_t n = get_u32(f, path);
  if (n > 4096) throw FormatError(path + ": implausible string length " + std::to_string(n));
  std::string s(n, '\0');
  f.read(s.data(), n);
  if (!f) throw FormatError(path + ": truncated");
  return s;
}

}  // namespace

void save_weights(const Model& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write("MZW1", 4);
  put_u32(f, static_cast<std::uint32_t>(m.arch_id.size()));
  f.write(m.arch_id.data(), static_cast<std::streamsize>(m.arch_id.size()));
  put_u32(f, static_cast<std::uint32_t>(m.num_classes));
  for (int id : m.graph.weight_ids()) {
    const Node& n = m.graph.node(id);
    put_u32(f, static_cast<std::uint32_t>(n.name.size()));
    f.write(n.name.data(), static_cast<std::streamsize>(n.name.size()));
    put_u32(f, static_cast<std::uint32_t>(n.val.rank()));
    for (int d : n.val.shape) put_u32(f, static_cast<std::uint32_t>(d));
    f.write(reinterpret_cast<const char*>(n.val.data.data()),
            static_cast<std::streamsize>(n.val.data.size() * sizeof(float)));
  }
  if (!f) throw IoError("short write on " + path);
}

Model load_weights(const std::string& path, const std::vector<int>& input_shape) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "MZW1", 4) != 0)
    throw FormatError(path + ": not a MZW1 weight file");
  std::string arch = get_str(f, path);
  int num_classes = static_cast<int>(get_u32(f, path));

  std::map<std::string, Tensor> stored;
  while (f.peek() != std::ifstream::traits_type::eof()) {
    std::string name = get_str(f, path);
    std::uint32_t rank = get_u32(f, path);
    if (rank > 8) throw FormatError(path + ": implausible rank " + std::to_string(rank));
    std::vector<int> shape;
    for (std::uint32_t i = 0; i < rank; ++i)
      shape.push_back(static_cast<int>(get_u32(f, path)));
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!f) throw FormatError(path + ": truncated tensor data for " + name);
    if (!stored.emplace(name, std::move(t)).second)
      throw FormatError(path + ": weight " + name + " listed twice");
  }

  Model m = build_model(arch, num_classes, 0, input_shape);
  for (int id : m.graph.weight_ids()) {
    Node& n = m.graph.node(id);
    auto it = stored.find(n.name);
    if (it == stored.end()) throw FormatError(path + ": missing weight " + n.name);
    if (it->second.shape != n.val.shape)
      throw FormatError(path + ": weight " + n.name + " is " + shape_str(it->second.shape) +
                        ", expected " + shape_str(n.val.shape));
    n.val = std::move(it->second);
    stored.erase(it);
  }
  if (!stored.empty())
    throw FormatError(path + ": unexpected extra weight " + stored.begin()->first);
  return m;
}

std::vector<float> predict_logits_one(Graph& eval_graph, const Model& m, const Tensor& image) {
  eval_graph.set_value(m.input_id, image);
  eval_graph.forward();
  return eval_graph.val(m.logits_id).data;
}

Tensor predict_logits(const Model& m, const Tensor& images) {
  if (images.rank() != 4)
    throw ShapeError("predict_logits: expected [B,C,H,W], got " + shape_str(images.shape));
  std::vector<int> one{images.shape[1], images.shape[2], images.shape[3]};
  if (one != m.input_shape)
    throw ShapeError("predict_logits: image shape " + shape_str(one) + " does not match model " +
                     shape_str(m.input_shape));
  int bsz = images.shape[0];
  Tensor out({bsz, m.num_classes});
  Graph eval_graph = m.graph;
  std::size_t plane = Tensor::numel_of(one);
  for (int i = 0; i < bsz; ++i) {
    eval_graph.set_value(m.input_id, images.data.data() + static_cast<std::size_t>(i) * plane,
                         plane);
    eval_graph.forward();
    const auto& z = eval_graph.val(m.logits_id).data;
    std::copy(z.begin(), z.end(),
              out.data.begin() + static_cast<std::size_t>(i) * m.num_classes);
  }
  return out;
}

float accuracy(const Model& m, const Dataset& ds, std::size_t limit) {
  std::size_t n = limit == 0 ? ds.size() : std::min(limit, ds.size());
  if (n == 0) throw UsageError("accuracy: empty dataset");
  Graph eval_graph = m.graph;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto z = predict_logits_one(eval_graph, m, ds.images[i]);
    if (argmax(z) == ds.labels[i]) ++hits;
  }
  return static_cast<float>(hits) / static_cast<float>(n);
}

}  // namespace ttlab
