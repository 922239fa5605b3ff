#pragma once

#include <filesystem>
#include <iosfwd>

#include "fedsim/config.hpp"
#include "fedsim/engine.hpp"
#include "fedsim/fedmgd.hpp"

namespace fedsim {

// Dispatches on cfg.strategy.
RunResult run_strategy(const ExperimentConfig& cfg, const RecordSink& sink = {}, const ScoreSink& scores = {});

// Runs the experiment and writes into `out_dir`:
//   metrics.csv, metrics.jsonl   one row per round
//   clients.csv                  round,client_id,acc for rounds with per-client evaluation
//   classifier.fmgd              final global classifier
//   generator.fmgd               final generator (fedmgd and f2u only)
// Rows are flushed as rounds complete. `progress` sees every record.
RunResult run_to_directory(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                           const RecordSink& progress = {});

// CSV of per-client class histograms: client_id,split,n,class_0..class_{C-1}
// with split in {train, local_test}, plus one row for the global test set
// (client_id -1).
void write_partition_report(const ExperimentConfig& cfg, std::ostream& out);

// Runs fedmgd/f2u and writes round,client_id,disc_term,xen_term,value,winner
// for every scored client of every generative round.
void write_score_trace(const ExperimentConfig& cfg, std::ostream& out);

}  // namespace fedsim
