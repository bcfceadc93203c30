#include "fcad/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

namespace fcad {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

std::uint64_t fnv1a(const unsigned char* data, std::size_t n, std::uint64_t h = kFnvOffset) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= kFnvPrime;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    bytes_.insert(bytes_.end(), c, c + n);
  }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw ModelError("corrupt checkpoint: truncated payload");
  }
  const std::vector<unsigned char>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

void LayerSpec::validate() const {
  if (input < 1) throw ModelError("layer spec: input width must be >= 1");
  for (std::size_t h : hidden) {
    if (h < 1) throw ModelError("layer spec: hidden widths must be >= 1");
  }
  if (embedding < 2) throw ModelError("layer spec: embedding width must be >= 2");
  if (classes != 2) throw ModelError("layer spec: classes must be 2 (normal/anomalous)");
}

std::string LayerSpec::describe() const {
  std::ostringstream os;
  os << "{" << input << ", [";
  for (std::size_t i = 0; i < hidden.size(); ++i) os << (i ? ", " : "") << hidden[i];
  os << "], " << embedding << ", " << classes << "}";
  return os.str();
}

std::uint64_t LayerSpec::fingerprint() const {
  ByteWriter w;
  w.u64(input);
  w.u64(hidden.size());
  for (std::size_t h : hidden) w.u64(h);
  w.u64(embedding);
  w.u64(classes);
  return fnv1a(w.bytes().data(), w.bytes().size());
}

std::vector<TensorSlot> layout_for(const LayerSpec& spec) {
  spec.validate();
  std::vector<TensorSlot> slots;
  std::size_t offset = 0;
  auto push = [&](std::string name, std::size_t rows, std::size_t cols) {
    slots.push_back({std::move(name), offset, rows, cols});
    offset += rows * cols;
  };
  std::size_t fan_in = spec.input;
  std::vector<std::size_t> widths = spec.hidden;
  widths.push_back(spec.embedding);
  for (std::size_t k = 0; k < widths.size(); ++k) {
    push("layer" + std::to_string(k) + ".weight", fan_in, widths[k]);
    push("layer" + std::to_string(k) + ".bias", 1, widths[k]);
    fan_in = widths[k];
  }
  push("classifier.weight", spec.embedding, spec.classes);
  push("classifier.bias", 1, spec.classes);
  return slots;
}

ModelParams::ModelParams(LayerSpec spec, std::vector<double> flat)
    : spec_(std::move(spec)), layout_(layout_for(spec_)), fingerprint_(spec_.fingerprint()), flat_(std::move(flat)) {
  const std::size_t expected = layout_.back().offset + layout_.back().size();
  if (flat_.size() != expected) {
    throw ModelError("flat parameter length " + std::to_string(flat_.size()) + " does not match layout total " +
                     std::to_string(expected));
  }
}

ModelParams ModelParams::from_tensors(const LayerSpec& spec, const std::vector<Tensor>& tensors) {
  const auto layout = layout_for(spec);
  if (tensors.size() != layout.size()) throw ModelError("tensor count does not match layout");
  std::vector<double> flat;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const Tensor& t = tensors[i];
    if (static_cast<std::size_t>(t.rows()) != layout[i].rows || static_cast<std::size_t>(t.cols()) != layout[i].cols) {
      throw ModelError("tensor " + layout[i].name + " has the wrong shape");
    }
    flat.insert(flat.end(), t.data(), t.data() + t.size());
  }
  return ModelParams(spec, std::move(flat));
}

Tensor ModelParams::tensor(std::size_t slot) const {
  const TensorSlot& s = layout_.at(slot);
  Tensor t(static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
  std::copy_n(flat_.data() + s.offset, s.size(), t.data());
  return t;
}

std::vector<Tensor> ModelParams::unflatten() const {
  std::vector<Tensor> out;
  out.reserve(layout_.size());
  for (std::size_t i = 0; i < layout_.size(); ++i) out.push_back(tensor(i));
  return out;
}

ModelParams ModelParams::with_flat(std::vector<double> flat) const { return ModelParams(spec_, std::move(flat)); }

bool ModelParams::operator==(const ModelParams& other) const {
  if (fingerprint_ != other.fingerprint_ || !(spec_ == other.spec_)) return false;
  if (flat_.size() != other.flat_.size()) return false;
  // Bitwise comparison so that -0.0 / NaN payloads count as differences.
  for (std::size_t i = 0; i < flat_.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(flat_[i]) != std::bit_cast<std::uint64_t>(other.flat_[i])) return false;
  }
  return true;
}

ModelParams init_params(const LayerSpec& spec, std::uint64_t seed) {
  const auto layout = layout_for(spec);
  std::vector<double> flat(layout.back().offset + layout.back().size(), 0.0);
  std::mt19937_64 rng(seed);
  for (const TensorSlot& s : layout) {
    if (s.rows == 1 && s.name.ends_with(".bias")) continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t i = 0; i < s.size(); ++i) flat[s.offset + i] = dist(rng);
  }
  return ModelParams(spec, std::move(flat));
}

BoundModel bind(Graph& graph, const ModelParams& params, bool trainable) {
  BoundModel m;
  m.spec = params.spec();
  for (std::size_t i = 0; i < params.layout().size(); ++i) {
    Tensor t = params.tensor(i);
    m.tensors.push_back(trainable ? graph.parameter(std::move(t), params.layout()[i].name)
                                  : graph.constant(std::move(t)));
  }
  return m;
}

Expr encode(const BoundModel& model, const Expr& input) {
  if (static_cast<std::size_t>(input.cols()) != model.spec.input) {
    throw ModelError("window width mismatch: expected " + std::to_string(model.spec.input) + ", got " +
                     std::to_string(input.cols()));
  }
  const std::size_t layers = model.spec.hidden.size() + 1;
  Expr h = input;
  for (std::size_t k = 0; k < layers; ++k) {
    Expr pre = matmul(h, model.tensors[2 * k]) + model.tensors[2 * k + 1];
    h = (k + 1 < layers) ? relu(pre) : pre;
  }
  return norm_guard(h);
}

Expr classify(const BoundModel& model, const Expr& embeddings) {
  const std::size_t k = model.tensors.size() - 2;
  if (static_cast<std::size_t>(embeddings.cols()) != model.spec.embedding) {
    throw ModelError("embedding width mismatch: expected " + std::to_string(model.spec.embedding) + ", got " +
                     std::to_string(embeddings.cols()));
  }
  return matmul(embeddings, model.tensors[k]) + model.tensors[k + 1];
}

std::vector<double> flatten_gradients(const BoundModel& model, const Gradients& grads) {
  std::vector<double> flat;
  for (const Expr& leaf : model.tensors) {
    const Tensor& g = grads[leaf];
    flat.insert(flat.end(), g.data(), g.data() + g.size());
  }
  return flat;
}

Tensor stack_features(std::span<const Window> windows, std::size_t width) {
  Tensor x(static_cast<Eigen::Index>(windows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& f = windows[i].features;
    if (f.size() != width) {
      throw ModelError("window width mismatch: expected " + std::to_string(width) + ", got " +
                       std::to_string(f.size()));
    }
    std::copy(f.begin(), f.end(), x.row(static_cast<Eigen::Index>(i)).data());
  }
  return x;
}

EmbeddingBatch encode(const ModelParams& params, std::span<const Window> windows) {
  Graph g;
  const BoundModel m = bind(g, params, false);
  Expr z = encode(m, g.constant(stack_features(windows, params.spec().input)));
  EmbeddingBatch out;
  out.embeddings = z.value();
  out.labels.reserve(windows.size());
  for (const Window& w : windows) out.labels.push_back(w.label);
  return out;
}

Tensor classify(const ModelParams& params, const EmbeddingBatch& batch) {
  Graph g;
  const BoundModel m = bind(g, params, false);
  return classify(m, g.constant(batch.embeddings)).value();
}

std::vector<double> anomaly_scores(const ModelParams& params, std::span<const Window> windows) {
  constexpr std::size_t kChunk = 2048;
  std::vector<double> scores;
  scores.reserve(windows.size());
  for (std::size_t begin = 0; begin < windows.size(); begin += kChunk) {
    const auto part = windows.subspan(begin, std::min(kChunk, windows.size() - begin));
    Graph g;
    const BoundModel m = bind(g, params, false);
    const Tensor& logits = classify(m, encode(m, g.constant(stack_features(part, params.spec().input)))).value();
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      scores.push_back(1.0 / (1.0 + std::exp(logits(r, 0) - logits(r, 1))));
    }
  }
  return scores;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u64(params.fingerprint());
  const LayerSpec& spec = params.spec();
  w.u64(spec.input);
  w.u32(static_cast<std::uint32_t>(spec.hidden.size()));
  for (std::size_t h : spec.hidden) w.u64(h);
  w.u64(spec.embedding);
  w.u64(spec.classes);
  w.u32(static_cast<std::uint32_t>(params.layout().size()));
  for (const TensorSlot& s : params.layout()) {
    w.u32(static_cast<std::uint32_t>(s.name.size()));
    w.raw(s.name.data(), s.name.size());
    w.u64(s.offset);
    w.u64(s.rows);
    w.u64(s.cols);
  }
  w.u64(params.size());
  for (double v : params.flat()) w.f64(v);
  w.u64(fnv1a(w.bytes().data(), w.bytes().size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ModelError("cannot open checkpoint for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw ModelError("failed writing checkpoint: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open checkpoint: " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < sizeof kCheckpointMagic + 8 ||
      !std::equal(std::begin(kCheckpointMagic), std::end(kCheckpointMagic), bytes.begin())) {
    throw ModelError("corrupt checkpoint: bad magic in " + path.string());
  }
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored_sum = 0;
  for (int i = 0; i < 8; ++i) stored_sum |= static_cast<std::uint64_t>(bytes[body + i]) << (8 * i);
  if (stored_sum != fnv1a(bytes.data(), body)) throw ModelError("corrupt checkpoint: checksum mismatch");

  ByteReader r(bytes, body);
  r.str(sizeof kCheckpointMagic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw ModelError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint64_t stored_fp = r.u64();
  LayerSpec spec;
  spec.input = r.u64();
  const std::uint32_t n_hidden = r.u32();
  if (n_hidden > 1024) throw ModelError("corrupt checkpoint: implausible layer count");
  spec.hidden.clear();
  for (std::uint32_t i = 0; i < n_hidden; ++i) spec.hidden.push_back(r.u64());
  spec.embedding = r.u64();
  spec.classes = r.u64();
  try {
    spec.validate();
  } catch (const ModelError&) {
    throw ModelError("corrupt checkpoint: invalid layer spec");
  }
  if (spec.fingerprint() != stored_fp) throw ModelError("corrupt checkpoint: fingerprint does not match stored spec");

  const auto expected_layout = layout_for(spec);
  const std::uint32_t n_slots = r.u32();
  if (n_slots != expected_layout.size()) throw ModelError("corrupt checkpoint: shape table size mismatch");
  for (const TensorSlot& want : expected_layout) {
    TensorSlot got;
    got.name = r.str(r.u32());
    got.offset = r.u64();
    got.rows = r.u64();
    got.cols = r.u64();
    if (!(got == want)) throw ModelError("corrupt checkpoint: shape table entry " + got.name + " mismatch");
  }
  const std::uint64_t n = r.u64();
  const std::size_t total = expected_layout.back().offset + expected_layout.back().size();
  if (n != total) throw ModelError("corrupt checkpoint: parameter count mismatch");
  std::vector<double> flat(total);
  for (double& v : flat) v = r.f64();
  if (r.pos() != body) throw ModelError("corrupt checkpoint: trailing bytes");
  return ModelParams(spec, std::move(flat));
}

ModelParams load_checkpoint(const std::filesystem::path& path, const LayerSpec& expected) {
  ModelParams p = load_checkpoint(path);
  if (p.fingerprint() != expected.fingerprint()) {
    throw ModelError("checkpoint fingerprint " + hex(p.fingerprint()) + " " + p.spec().describe() +
                     " does not match expected " + hex(expected.fingerprint()) + " " + expected.describe());
  }
  return p;
}

}  // namespace fcad
