#include "fedsim/models.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>

#include "fedsim/error.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

Tensor init_uniform(Shape shape, std::size_t fan_in, std::uint64_t seed) {
  Tensor t(std::move(shape));
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Rng rng(seed);
  for (auto& v : t.data) v = rng.uniform(-s, s);
  t.requires_grad = true;
  return t;
}

namespace {

constexpr Conv2dSpec kSame{1, 1};
constexpr Conv2dSpec kHalve{2, 1};

Var bind(Tape& tape, ParamVector& p, std::size_t i, bool trainable) {
  return trainable ? tape.param(p.at(i)) : tape.constant(Tensor(p.at(i).shape, p.at(i).data));
}

void require_batch(const Tensor& batch, const ImageShape& shape, const char* who) {
  if (batch.rank() != 4 || batch.dim(1) != shape.channels || batch.dim(2) != shape.resolution ||
      batch.dim(3) != shape.resolution)
    throw DimensionError(std::string(who) + ": batch " + shape_str(batch.shape) + " does not match model input [Bx" +
                         std::to_string(shape.channels) + "x" + std::to_string(shape.resolution) + "x" +
                         std::to_string(shape.resolution) + "]");
}

}  // namespace

Classifier::Classifier(ImageShape shape, int num_classes, std::uint64_t seed, ClassifierWidths w)
    : shape_(shape), num_classes_(num_classes) {
  if (num_classes < 2) throw ContractError("Classifier: num_classes must be >= 2");
  const std::size_t C = shape.channels;
  const std::size_t half = conv_out_extent(shape.resolution, 3, kHalve);
  const std::size_t fc_in = w.conv2 * half * half;
  const auto nc = static_cast<std::size_t>(num_classes);
  params_.add("conv1.weight", init_uniform({w.conv1, C, 3, 3}, C * 9, derive_seed(seed, 1)));
  params_.add("conv1.bias", init_uniform({w.conv1}, C * 9, derive_seed(seed, 2)));
  params_.add("conv2.weight", init_uniform({w.conv2, w.conv1, 3, 3}, w.conv1 * 9, derive_seed(seed, 3)));
  params_.add("conv2.bias", init_uniform({w.conv2}, w.conv1 * 9, derive_seed(seed, 4)));
  params_.add("fc.weight", init_uniform({fc_in, nc}, fc_in, derive_seed(seed, 5)));
  params_.add("fc.bias", init_uniform({nc}, fc_in, derive_seed(seed, 6)));
}

Var Classifier::forward(Tape& tape, Var images, bool trainable) {
  require_batch(tape.value(images), shape_, "classify");
  const std::size_t B = tape.value(images).dim(0);
  Var h = tape.relu(tape.conv2d(images, bind(tape, params_, 0, trainable), bind(tape, params_, 1, trainable), kSame));
  h = tape.relu(tape.conv2d(h, bind(tape, params_, 2, trainable), bind(tape, params_, 3, trainable), kHalve));
  h = tape.reshape(h, {B, tape.value(h).numel() / B});
  return tape.linear(h, bind(tape, params_, 4, trainable), bind(tape, params_, 5, trainable));
}

Tensor Classifier::classify(const Tensor& batch) const {
  Tape tape;
  Var out = const_cast<Classifier*>(this)->forward(tape, tape.constant(batch), false);
  return tape.value(out);
}

CondGenerator::CondGenerator(ImageShape shape, int num_classes, std::uint64_t seed, std::size_t noise_dim,
                             std::size_t hidden)
    : shape_(shape), num_classes_(num_classes), noise_dim_(noise_dim) {
  if (num_classes < 1) throw ContractError("CondGenerator: num_classes must be positive");
  if (noise_dim == 0 || hidden == 0) throw ContractError("CondGenerator: noise_dim and hidden must be positive");
  const std::size_t in = noise_dim + static_cast<std::size_t>(num_classes);
  params_.add("fc1.weight", init_uniform({in, hidden}, in, derive_seed(seed, 1)));
  params_.add("fc1.bias", init_uniform({hidden}, in, derive_seed(seed, 2)));
  params_.add("fc2.weight", init_uniform({hidden, shape.numel()}, hidden, derive_seed(seed, 3)));
  params_.add("fc2.bias", init_uniform({shape.numel()}, hidden, derive_seed(seed, 4)));
}

Tensor CondGenerator::make_input(std::span<const int> labels, std::uint64_t seed) const {
  if (labels.empty()) throw ContractError("generate: empty label list");
  const std::size_t width = noise_dim_ + static_cast<std::size_t>(num_classes_);
  Tensor in({labels.size(), width});
  Rng rng(seed);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || labels[r] >= num_classes_)
      throw IndexError("generate: label " + std::to_string(labels[r]) + " out of range");
    for (std::size_t k = 0; k < noise_dim_; ++k) in.data[r * width + k] = rng.normal();
    in.data[r * width + noise_dim_ + static_cast<std::size_t>(labels[r])] = 1.0;
  }
  return in;
}

Var CondGenerator::forward(Tape& tape, Var input) {
  const std::size_t B = tape.value(input).dim(0);
  Var h = tape.relu(tape.linear(input, tape.param(params_.at(0)), tape.param(params_.at(1))));
  h = tape.tanh(tape.linear(h, tape.param(params_.at(2)), tape.param(params_.at(3))));
  return tape.reshape(h, {B, shape_.channels, shape_.resolution, shape_.resolution});
}

SynthBatch CondGenerator::generate(std::span<const int> labels, std::uint64_t seed) const {
  // Forward without gradients: bind parameters as constants.
  Tape tape;
  Var in = tape.constant(make_input(labels, seed));
  const std::size_t B = labels.size();
  auto c = [&](std::size_t i) { return tape.constant(Tensor(params_.at(i).shape, params_.at(i).data)); };
  Var h = tape.relu(tape.linear(in, c(0), c(1)));
  h = tape.tanh(tape.linear(h, c(2), c(3)));
  h = tape.reshape(h, {B, shape_.channels, shape_.resolution, shape_.resolution});
  return SynthBatch{tape.value(h), std::vector<int>(labels.begin(), labels.end())};
}

Discriminator::Discriminator(ImageShape shape, std::uint64_t seed, std::size_t width) : shape_(shape) {
  const std::size_t C = shape.channels;
  params_.add("conv1.weight", init_uniform({width, C, 3, 3}, C * 9, derive_seed(seed, 1)));
  params_.add("conv1.bias", init_uniform({width}, C * 9, derive_seed(seed, 2)));
  const std::size_t half = conv_out_extent(shape.resolution, 3, kHalve);
  const std::size_t fc_in = width * half * half;
  params_.add("head.weight", init_uniform({fc_in, 1}, fc_in, derive_seed(seed, 3)));
  params_.add("head.bias", init_uniform({1}, fc_in, derive_seed(seed, 4)));
}

Var Discriminator::forward(Tape& tape, Var images, bool trainable) {
  require_batch(tape.value(images), shape_, "discriminate");
  const std::size_t B = tape.value(images).dim(0);
  Var h = tape.relu(tape.conv2d(images, bind(tape, params_, 0, trainable), bind(tape, params_, 1, trainable), kHalve));
  const std::size_t fc_in = tape.value(h).numel() / B;
  h = tape.linear(tape.reshape(h, {B, fc_in}), bind(tape, params_, 2, trainable), bind(tape, params_, 3, trainable));
  return tape.reshape(tape.sigmoid(h), {B});
}

std::vector<double> Discriminator::discriminate(const Tensor& batch) const {
  Tape tape;
  Var out = const_cast<Discriminator*>(this)->forward(tape, tape.constant(batch), false);
  return tape.value(out).data;
}

// ---- transport format ----

namespace {

constexpr char kMagic[4] = {'F', 'M', 'G', 'D'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof bits);
  put_le(out, bits);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  template <typename T>
  T get(const char* field) {
    need(sizeof(T), field);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  double f64(const char* field) {
    auto bits = get<std::uint64_t>(field);
    double d;
    std::memcpy(&d, &bits, sizeof d);
    return d;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* field) {
    need(n, field);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(std::size_t n, const char* field) const {
    if (b_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + field);
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::vector<std::uint8_t> flatten_params(const ParamVector& params) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint16_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    if (name.size() > 0xffff) throw ContractError("flatten_params: name too long");
    if (t.rank() > 0xff) throw ContractError("flatten_params: rank too large");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : t.data) put_f64(out, v);
  }
  put_le<std::uint32_t>(out, crc_of(out));
  return out;
}

ParamVector restore_params(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 + 2 + 4 + 4) throw FormatError("checkpoint truncated: " + std::to_string(bytes.size()) + " bytes");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("checkpoint: bad magic");
  const auto body = bytes.first(bytes.size() - 4);
  Reader crc_reader(bytes.last(4));
  if (crc_reader.get<std::uint32_t>("crc") != crc_of(body)) throw FormatError("checkpoint: CRC32 mismatch");

  Reader r(body);
  r.take(4, "magic");
  if (auto v = r.get<std::uint16_t>("version"); v != kVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(v));
  const auto count = r.get<std::uint32_t>("entry count");
  ParamVector out;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = r.get<std::uint16_t>("name length");
    auto name_bytes = r.take(len, "name");
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>("extent");
    for (auto d : shape)
      if (d == 0) throw FormatError("checkpoint: zero extent");
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = r.f64("data");
    Tensor t(std::move(shape), std::move(data));
    t.requires_grad = true;
    try {
      out.add(std::string(name_bytes.begin(), name_bytes.end()), std::move(t));
    } catch (const ContractError& err) {
      throw FormatError(std::string("checkpoint: ") + err.what());
    }
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes after last entry");
  return out;
}

}  // namespace fedsim
