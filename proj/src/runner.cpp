#include "fedsim/runner.hpp"

#include <fstream>
#include <ostream>

#include "fedsim/error.hpp"
#include "fedsim/metrics.hpp"

namespace fedsim {

namespace {

bool generative(Strategy s) { return s == Strategy::FedMGD || s == Strategy::F2U; }

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + p.string() + " for writing");
  return f;
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  auto f = open_out(p);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + p.string());
}

}  // namespace

RunResult run_strategy(const ExperimentConfig& cfg, const RecordSink& sink, const ScoreSink& scores) {
  validate_config(cfg);
  if (generative(cfg.strategy)) return run_fedmgd(cfg, FedmgdHooks{sink, scores, {}, {}});
  return run_fedavg(cfg, sink);
}

RunResult run_to_directory(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                           const RecordSink& progress) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  auto csv = open_out(out_dir / "metrics.csv");
  auto jsonl = open_out(out_dir / "metrics.jsonl");
  auto clients = open_out(out_dir / "clients.csv");
  write_csv_header(csv);
  clients << "round,client_id,acc\n";
  auto sink = [&](const MetricsRecord& r) {
    write_csv_row(csv, r);
    write_jsonl_row(jsonl, r);
    if (r.per_client_acc) {
      for (std::size_t k = 0; k < r.per_client_acc->size(); ++k)
        clients << r.round << ',' << k << ',' << format_real((*r.per_client_acc)[k]) << '\n';
    }
    csv.flush();
    jsonl.flush();
    clients.flush();
    if (!csv || !jsonl || !clients) throw IoError("metrics write failed in " + out_dir.string());
    if (progress) progress(r);
  };
  RunResult result = run_strategy(cfg, sink);
  write_bytes(out_dir / "classifier.fmgd", flatten_params(result.global_params));
  if (result.generator_params) write_bytes(out_dir / "generator.fmgd", flatten_params(*result.generator_params));
  return result;
}

void write_partition_report(const ExperimentConfig& cfg, std::ostream& out) {
  const Federation fed = build_federation(cfg);
  const int C = fed.data->num_classes;
  out << "client_id,split,n";
  for (int c = 0; c < C; ++c) out << ",class_" << c;
  out << '\n';
  auto row = [&](long id, const char* split, std::span<const std::size_t> idx) {
    out << id << ',' << split << ',' << idx.size();
    for (std::size_t h : class_histogram(*fed.data, idx)) out << ',' << h;
    out << '\n';
  };
  for (const auto& c : fed.clients) {
    row(c.id, "train", c.shard);
    row(c.id, "local_test", c.local_test);
  }
  row(-1, "global_test", fed.partition.test_indices);
  if (!out) throw IoError("partition report write failed");
}

void write_score_trace(const ExperimentConfig& cfg, std::ostream& out) {
  if (!generative(cfg.strategy)) throw ConfigError("strategy", "score-trace needs strategy fedmgd or f2u");
  out << "round,client_id,disc_term,xen_term,value,winner\n";
  run_strategy(cfg, {}, [&](long round, const GanRoundResult& g) {
    for (const auto& s : g.scores)
      out << round << ',' << s.client_id << ',' << format_real(s.disc_term) << ',' << format_real(s.xen_term) << ','
          << format_real(s.value) << ',' << (s.client_id == g.winner ? 1 : 0) << '\n';
  });
  if (!out) throw IoError("score trace write failed");
}

}  // namespace fedsim
