#include "fedsim/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>

#include "fedsim/autograd.hpp"
#include "fedsim/error.hpp"

namespace fedsim {

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Gan: return "gan";
    case Stage::Enhance: return "enhance";
    case Stage::Baseline: return "baseline";
  }
  return "baseline";
}

Stage parse_stage(std::string_view s) {
  if (s == "gan") return Stage::Gan;
  if (s == "enhance") return Stage::Enhance;
  if (s == "baseline") return Stage::Baseline;
  throw FormatError("unknown stage '" + std::string(s) + "'");
}

double accuracy_on(const Classifier& classifier, const LabeledDataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("accuracy: empty test set");
  constexpr std::size_t kChunk = 256;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    auto idx = indices.subspan(start, std::min(kChunk, indices.size() - start));
    const auto pred = argmax_rows(classifier.classify(gather_images(ds, idx)));
    for (std::size_t i = 0; i < idx.size(); ++i) correct += pred[i] == ds.labels[idx[i]];
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

double global_accuracy(const Classifier& classifier, const LabeledDataset& test) {
  if (test.size() == 0) throw ContractError("global_accuracy: empty test set");
  std::vector<std::size_t> all(test.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return accuracy_on(classifier, test, all);
}

double fairness_std(std::span<const double> v) {
  if (v.empty()) throw ContractError("fairness_std: empty accuracy list");
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

namespace {

struct Moments {
  std::vector<double> mean;
  std::vector<double> sd;
};

// Per-class, per-pixel population moments. Two-pass for accuracy.
std::vector<Moments> class_moments(const Tensor& images, std::span<const int> labels, int num_classes,
                                   const char* who) {
  const std::size_t M = images.numel() / labels.size();
  std::vector<Moments> out(static_cast<std::size_t>(num_classes));
  std::vector<std::size_t> count(out.size(), 0);
  for (auto& m : out) {
    m.mean.assign(M, 0.0);
    m.sd.assign(M, 0.0);
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& m = out.at(static_cast<std::size_t>(labels[i]));
    ++count[static_cast<std::size_t>(labels[i])];
    for (std::size_t k = 0; k < M; ++k) m.mean[k] += images.data[i * M + k];
  }
  for (std::size_t c = 0; c < out.size(); ++c) {
    if (count[c] == 0) throw ContractError(std::string("quality_proxy: ") + who + " has no samples of class " + std::to_string(c));
    for (auto& v : out[c].mean) v /= static_cast<double>(count[c]);
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& m = out[static_cast<std::size_t>(labels[i])];
    for (std::size_t k = 0; k < M; ++k) {
      const double d = images.data[i * M + k] - m.mean[k];
      m.sd[k] += d * d;
    }
  }
  for (std::size_t c = 0; c < out.size(); ++c)
    for (auto& v : out[c].sd) v = std::sqrt(v / static_cast<double>(count[c]));
  return out;
}

double l2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

double quality_proxy(const SampleSource& source, const LabeledDataset& reference, std::size_t samples,
                     std::uint64_t seed) {
  const int C = reference.num_classes;
  if (samples < static_cast<std::size_t>(C))
    throw ContractError("quality_proxy: need at least one sample per class");
  std::vector<int> labels(samples);
  for (std::size_t i = 0; i < samples; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(C));
  const SynthBatch gen = source(labels, seed);
  if (gen.images.numel() != samples * reference.image_numel())
    throw DimensionError("quality_proxy: generated images do not match the reference image shape");
  const auto ref = class_moments(reference.images, reference.labels, C, "reference");
  const auto got = class_moments(gen.images, gen.labels, C, "generated batch");
  double total = 0.0;
  for (std::size_t c = 0; c < ref.size(); ++c) total += l2(got[c].mean, ref[c].mean) + l2(got[c].sd, ref[c].sd);
  return total / static_cast<double>(C);
}

double quality_proxy(const CondGenerator& generator, const LabeledDataset& reference, std::size_t samples,
                     std::uint64_t seed) {
  return quality_proxy(
      [&generator](std::span<const int> labels, std::uint64_t s) { return generator.generate(labels, s); },
      reference, samples, seed);
}

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_csv_header(std::ostream& out) { out << kCsvHeader << '\n'; }

void write_csv_row(std::ostream& out, const MetricsRecord& r) {
  out << r.round << ',' << to_string(r.stage) << ',' << format_real(r.global_acc) << ',';
  if (r.fairness_std) out << format_real(*r.fairness_std);
  out << ',';
  if (r.quality_proxy) out << format_real(*r.quality_proxy);
  out << ',';
  if (r.winner_id) out << *r.winner_id;
  out << ',' << r.wall_ms << '\n';
  if (!out) throw IoError("metrics sink write failed");
}

namespace {
double rounded(double v) { return std::stod(format_real(v)); }
}  // namespace

void write_jsonl_row(std::ostream& out, const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["round"] = r.round;
  j["stage"] = to_string(r.stage);
  j["global_acc"] = rounded(r.global_acc);
  j["fairness_std"] = r.fairness_std ? nlohmann::ordered_json(rounded(*r.fairness_std)) : nlohmann::ordered_json(nullptr);
  j["quality_proxy"] = r.quality_proxy ? nlohmann::ordered_json(rounded(*r.quality_proxy)) : nlohmann::ordered_json(nullptr);
  j["winner_id"] = r.winner_id ? nlohmann::ordered_json(*r.winner_id) : nlohmann::ordered_json(nullptr);
  j["wall_ms"] = r.wall_ms;
  out << j.dump() << '\n';
  if (!out) throw IoError("metrics sink write failed");
}

void emit_csv(std::ostream& out, std::span<const MetricsRecord> records) {
  write_csv_header(out);
  for (const auto& r : records) write_csv_row(out, r);
}

void emit_jsonl(std::ostream& out, std::span<const MetricsRecord> records) {
  for (const auto& r : records) write_jsonl_row(out, r);
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

template <typename T>
T parse_num(const std::string& s, const char* field) {
  std::istringstream is(s);
  T v{};
  is >> v;
  if (!is || !is.eof()) throw FormatError(std::string("metrics: bad value for ") + field + ": '" + s + "'");
  return v;
}

}  // namespace

std::vector<MetricsRecord> parse_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("metrics CSV: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) throw FormatError("metrics CSV: unexpected header '" + line + "'");
  std::vector<MetricsRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != 7) throw FormatError("metrics CSV: expected 7 fields, got " + std::to_string(f.size()));
    MetricsRecord r;
    r.round = parse_num<long>(f[0], "round");
    r.stage = parse_stage(f[1]);
    r.global_acc = parse_num<double>(f[2], "global_acc");
    if (!f[3].empty()) r.fairness_std = parse_num<double>(f[3], "fairness_std");
    if (!f[4].empty()) r.quality_proxy = parse_num<double>(f[4], "quality_proxy");
    if (!f[5].empty()) r.winner_id = parse_num<int>(f[5], "winner_id");
    r.wall_ms = parse_num<long>(f[6], "wall_ms");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<MetricsRecord> parse_jsonl(std::istream& in) {
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      MetricsRecord r;
      r.round = j.at("round").get<long>();
      r.stage = parse_stage(j.at("stage").get<std::string>());
      r.global_acc = j.at("global_acc").get<double>();
      if (!j.at("fairness_std").is_null()) r.fairness_std = j["fairness_std"].get<double>();
      if (!j.at("quality_proxy").is_null()) r.quality_proxy = j["quality_proxy"].get<double>();
      if (!j.at("winner_id").is_null()) r.winner_id = j["winner_id"].get<int>();
      r.wall_ms = j.at("wall_ms").get<long>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("metrics JSON-lines: ") + e.what());
    }
  }
  return out;
}

}  // namespace fedsim
