#include "fedsim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <optional>

#include "fedsim/error.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

void LabeledDataset::validate() const {
  if (labels.empty()) throw ContractError("dataset is empty");
  if (num_classes < 1) throw ContractError("dataset num_classes must be positive");
  if (images.rank() != 4 || images.dim(0) != labels.size())
    throw DimensionError("dataset images " + shape_str(images.shape) + " do not match " +
                         std::to_string(labels.size()) + " labels");
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw IndexError("dataset label " + std::to_string(y) + " out of range");
  for (double v : images.data)
    if (!(v >= -1.0 && v <= 1.0)) throw NumericError("dataset pixel outside [-1, 1]");
}

namespace {

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, const char* file) : bytes_(bytes), file_(file) {}

  std::uint32_t u32(const char* field) {
    if (pos_ + 4 > bytes_.size())
      throw FormatError(std::string(file_) + ": truncated file while reading " + field);
    std::uint32_t v = (std::uint32_t{bytes_[pos_]} << 24) | (std::uint32_t{bytes_[pos_ + 1]} << 16) |
                      (std::uint32_t{bytes_[pos_ + 2]} << 8) | std::uint32_t{bytes_[pos_ + 3]};
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* field) {
    if (bytes_.size() - pos_ < n)
      throw FormatError(std::string(file_) + ": truncated file while reading " + field + " (need " +
                        std::to_string(n) + " bytes, have " + std::to_string(bytes_.size() - pos_) + ")");
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  const char* file_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

LabeledDataset parse_idx(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes,
                         std::size_t resolution) {
  ByteReader img(image_bytes, "images");
  ByteReader lab(label_bytes, "labels");

  const auto img_magic = img.u32("magic");
  if (img_magic != kIdxImageMagic) throw FormatError("images: bad magic " + std::to_string(img_magic));
  const auto lab_magic = lab.u32("magic");
  if (lab_magic != kIdxLabelMagic) throw FormatError("labels: bad magic " + std::to_string(lab_magic));

  const std::size_t n_img = img.u32("item count");
  const std::size_t rows = img.u32("rows");
  const std::size_t cols = img.u32("cols");
  const std::size_t n_lab = lab.u32("item count");
  if (n_img == 0) throw FormatError("images: item count is zero");
  if (n_lab != n_img)
    throw FormatError("item count mismatch: " + std::to_string(n_img) + " images vs " + std::to_string(n_lab) +
                      " labels");
  if (rows == 0 || cols == 0) throw FormatError("images: zero rows/cols");
  if (rows != cols) throw FormatError("images: non-square images (" + std::to_string(rows) + "x" +
                                      std::to_string(cols) + ") are not supported");

  auto pixels = img.take(n_img * rows * cols, "pixel data");
  auto raw_labels = lab.take(n_lab, "label data");

  LabeledDataset ds;
  std::vector<double> values(pixels.size());
  std::transform(pixels.begin(), pixels.end(), values.begin(), [](std::uint8_t p) { return p / 127.5 - 1.0; });
  ds.images = Tensor({n_img, 1, rows, cols}, std::move(values));
  ds.labels.assign(raw_labels.begin(), raw_labels.end());
  ds.num_classes = std::max(2, *std::max_element(ds.labels.begin(), ds.labels.end()) + 1);
  if (resolution != 0 && resolution != rows) ds.images = nearest_resize(ds.images, resolution);
  return ds;
}

LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        std::size_t resolution) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  try {
    return parse_idx(img, lab, resolution);
  } catch (const FormatError& e) {
    throw FormatError(images_path.string() + " / " + labels_path.string() + ": " + e.what());
  }
}

Tensor nearest_resize(const Tensor& images, std::size_t resolution) {
  if (images.rank() != 4) throw DimensionError("nearest_resize: expected [N x C x H x W]");
  if (resolution == 0) throw DimensionError("nearest_resize: resolution must be positive");
  const std::size_t N = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
  Tensor out({N, C, resolution, resolution});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < resolution; ++y) {
        const std::size_t sy = y * H / resolution;
        for (std::size_t x = 0; x < resolution; ++x) {
          const std::size_t sx = x * W / resolution;
          out.data[((n * C + c) * resolution + y) * resolution + x] = images.data[((n * C + c) * H + sy) * W + sx];
        }
      }
  return out;
}

LabeledDataset synth_dataset(int num_classes, std::size_t per_class, std::size_t resolution, std::uint64_t seed) {
  if (num_classes < 2) throw ContractError("synth_dataset: num_classes must be >= 2");
  if (per_class < 1) throw ContractError("synth_dataset: per_class must be >= 1");
  if (resolution < 2) throw ContractError("synth_dataset: resolution must be >= 2");
  constexpr double kPhaseJitter = std::numbers::pi / 3.0;
  constexpr double kNoise = 0.1;
  const std::size_t N = per_class * static_cast<std::size_t>(num_classes);
  const std::size_t H = resolution;
  const double two_pi = 2.0 * std::numbers::pi;

  Rng rng(derive_seed(seed, 0x5e7d));
  LabeledDataset ds;
  ds.num_classes = num_classes;
  ds.images = Tensor({N, 1, H, H});
  ds.labels.resize(N);
  std::size_t n = 0;
  for (std::size_t i = 0; i < per_class; ++i)
    for (int c = 0; c < num_classes; ++c, ++n) {
      // Four orientations per frequency band, frequency grows every four classes.
      const double theta = std::numbers::pi * static_cast<double>(c % 4) / 4.0;
      const double freq = 1.0 + static_cast<double>(c / 4);
      const double phase = rng.uniform(-kPhaseJitter, kPhaseJitter);
      const double amplitude = rng.uniform(0.5, 0.9);
      const double cx = std::cos(theta), sy = std::sin(theta);
      ds.labels[n] = c;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < H; ++x) {
          const double u = (static_cast<double>(x) * cx + static_cast<double>(y) * sy) / static_cast<double>(H);
          const double v = amplitude * std::sin(two_pi * freq * u + phase) + rng.uniform(-kNoise, kNoise);
          ds.images.data[(n * H + y) * H + x] = std::clamp(v, -1.0, 1.0);
        }
    }
  return ds;
}

Tensor gather_images(const LabeledDataset& ds, std::span<const std::size_t> indices) {
  const std::size_t M = ds.image_numel();
  Shape shape = ds.images.shape;
  shape[0] = indices.size();
  Tensor out(std::move(shape));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= ds.size()) throw IndexError("gather_images: index " + std::to_string(indices[i]));
    std::copy_n(&ds.images.data[indices[i] * M], M, &out.data[i * M]);
  }
  return out;
}

std::vector<int> gather_labels(const LabeledDataset& ds, std::span<const std::size_t> indices) {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = ds.labels.at(indices[i]);
  return out;
}

LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("subset: empty index list");
  LabeledDataset out;
  out.images = gather_images(ds, indices);
  out.labels = gather_labels(ds, indices);
  out.num_classes = ds.num_classes;
  return out;
}

std::vector<std::size_t> class_histogram(std::span<const int> labels, int num_classes) {
  std::vector<std::size_t> h(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) ++h.at(static_cast<std::size_t>(y));
  return h;
}

std::vector<std::size_t> class_histogram(const LabeledDataset& ds, std::span<const std::size_t> indices) {
  std::vector<std::size_t> h(static_cast<std::size_t>(ds.num_classes), 0);
  for (auto i : indices) ++h.at(static_cast<std::size_t>(ds.labels.at(i)));
  return h;
}

std::size_t holdout_count(std::size_t n) {
  std::size_t t = (n + 5) / 10;
  if (n >= 2) t = std::max<std::size_t>(t, 1);
  return t;
}

namespace {

std::optional<Partition> try_partition(const LabeledDataset& ds, const PartitionSpec& spec, std::uint64_t seed) {
  const std::size_t K = spec.num_clients;
  Rng rng(derive_seed(seed, 0xd1c4));
  Partition p;
  p.shards.resize(K);
  for (int c = 0; c < ds.num_classes; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.labels[i] == c) idx.push_back(i);
    if (idx.empty()) continue;
    rng.shuffle(idx);
    const std::size_t t = holdout_count(idx.size());
    p.test_indices.insert(p.test_indices.end(), idx.begin(), idx.begin() + static_cast<long>(t));
    const std::size_t m = idx.size() - t;
    const auto share = dirichlet(rng, spec.alpha, K);
    double cum = 0.0;
    std::size_t prev = 0;
    for (std::size_t j = 0; j < K; ++j) {
      cum += share[j];
      std::size_t cut = j + 1 == K ? m : std::min(m, static_cast<std::size_t>(std::floor(cum * m + 0.5)));
      cut = std::max(cut, prev);
      p.shards[j].insert(p.shards[j].end(), idx.begin() + static_cast<long>(t + prev),
                         idx.begin() + static_cast<long>(t + cut));
      prev = cut;
    }
  }
  for (auto& s : p.shards) {
    if (s.empty()) return std::nullopt;
    std::sort(s.begin(), s.end());
  }
  std::sort(p.test_indices.begin(), p.test_indices.end());
  return p;
}

}  // namespace

Partition dirichlet_partition(const LabeledDataset& ds, const PartitionSpec& spec) {
  constexpr int kMaxRetries = 100;
  if (ds.size() == 0) throw PartitionError("dataset is empty");
  if (!(spec.alpha > 0.0) || !std::isfinite(spec.alpha)) throw PartitionError("alpha must be positive");
  if (spec.num_clients < 1) throw PartitionError("need at least one client");
  std::size_t trainable = 0;
  for (auto n : class_histogram(ds.labels, ds.num_classes)) trainable += n - holdout_count(n);
  if (trainable < spec.num_clients)
    throw PartitionError("fewer samples (" + std::to_string(trainable) + ") than clients (" +
                         std::to_string(spec.num_clients) + ")");
  for (int attempt = 0; attempt <= kMaxRetries; ++attempt)
    if (auto p = try_partition(ds, spec, spec.seed + static_cast<std::uint64_t>(attempt))) return *std::move(p);
  throw PartitionError("some client received no samples after " + std::to_string(kMaxRetries) + " redraws");
}

ShardSplit split_local_holdout(std::span<const std::size_t> shard, std::uint64_t seed) {
  std::vector<std::size_t> idx(shard.begin(), shard.end());
  Rng rng(derive_seed(seed, 0x10ca1));
  rng.shuffle(idx);
  const std::size_t h = holdout_count(idx.size());
  ShardSplit s;
  s.train.assign(idx.begin(), idx.end() - static_cast<long>(h));
  s.test.assign(idx.end() - static_cast<long>(h), idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

double mean_pairwise_label_l1(const LabeledDataset& ds, const Partition& p) {
  const std::size_t K = p.shards.size();
  if (K < 2) return 0.0;
  std::vector<std::vector<double>> dist;
  for (const auto& s : p.shards) {
    auto h = class_histogram(ds, s);
    std::vector<double> d(h.size());
    for (std::size_t c = 0; c < h.size(); ++c) d[c] = static_cast<double>(h[c]) / static_cast<double>(s.size());
    dist.push_back(std::move(d));
  }
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < K; ++a)
    for (std::size_t b = a + 1; b < K; ++b, ++pairs)
      for (std::size_t c = 0; c < dist[a].size(); ++c) total += std::abs(dist[a][c] - dist[b][c]);
  return total / static_cast<double>(pairs);
}

}  // namespace fedsim
