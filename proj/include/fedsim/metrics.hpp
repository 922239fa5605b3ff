#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/dataset.hpp"
#include "fedsim/models.hpp"

namespace fedsim {

enum class Stage { Gan, Enhance, Baseline };
std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);

struct MetricsRecord {
  long round = 0;
  Stage stage = Stage::Baseline;
  double global_acc = 0.0;
  std::optional<std::vector<double>> per_client_acc;
  std::optional<double> fairness_std;
  std::optional<double> quality_proxy;
  std::optional<int> winner_id;
  long wall_ms = 0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

using RecordSink = std::function<void(const MetricsRecord&)>;

// Fraction of argmax-correct predictions.
double global_accuracy(const Classifier& classifier, const LabeledDataset& test);
double accuracy_on(const Classifier& classifier, const LabeledDataset& ds, std::span<const std::size_t> indices);

// Population standard deviation.
double fairness_std(std::span<const double> per_client_acc);

// Produces images for the requested labels; the generator is one source,
// test fixtures supply others.
using SampleSource = std::function<SynthBatch(std::span<const int> labels, std::uint64_t seed)>;

// Class-conditional pixel-moment distance between `samples` generated
// images (labels cycling through the classes) and the reference data:
// mean over classes of |mu_gen - mu_ref|_2 + |sigma_gen - sigma_ref|_2.
double quality_proxy(const SampleSource& source, const LabeledDataset& reference, std::size_t samples,
                     std::uint64_t seed);
double quality_proxy(const CondGenerator& generator, const LabeledDataset& reference, std::size_t samples,
                     std::uint64_t seed);

inline constexpr std::string_view kCsvHeader = "round,stage,global_acc,fairness_std,quality_proxy,winner_id,wall_ms";

// Reals are written with 9 significant digits; absent optionals are empty
// CSV fields or JSON nulls.
void write_csv_header(std::ostream& out);
void write_csv_row(std::ostream& out, const MetricsRecord& r);
void write_jsonl_row(std::ostream& out, const MetricsRecord& r);
void emit_csv(std::ostream& out, std::span<const MetricsRecord> records);
void emit_jsonl(std::ostream& out, std::span<const MetricsRecord> records);

// Inverses of the emitters (per_client_acc is not part of either schema).
std::vector<MetricsRecord> parse_csv(std::istream& in);
std::vector<MetricsRecord> parse_jsonl(std::istream& in);

// Formats like the emitters do ("%.9g").
std::string format_real(double v);

}  // namespace fedsim
