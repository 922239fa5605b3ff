#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "fedsim/config.hpp"
#include "fedsim/dataset.hpp"
#include "fedsim/engine.hpp"
#include "fedsim/error.hpp"
#include "fedsim/fedmgd.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/runner.hpp"

namespace py = pybind11;
using namespace fedsim;

namespace {

py::dict record_to_dict(const MetricsRecord& r) {
  py::dict d;
  d["round"] = r.round;
  d["stage"] = std::string(to_string(r.stage));
  d["global_acc"] = r.global_acc;
  d["per_client_acc"] = r.per_client_acc ? py::cast(*r.per_client_acc) : py::none();
  d["fairness_std"] = r.fairness_std ? py::cast(*r.fairness_std) : py::none();
  d["quality_proxy"] = r.quality_proxy ? py::cast(*r.quality_proxy) : py::none();
  d["winner_id"] = r.winner_id ? py::cast(*r.winner_id) : py::none();
  d["wall_ms"] = r.wall_ms;
  return d;
}

py::list records_to_list(const std::vector<MetricsRecord>& records) {
  py::list out;
  for (const auto& r : records) out.append(record_to_dict(r));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Federated learning simulator with multi-generator data augmentation";

  auto base = py::register_exception<Error>(m, "FedsimError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<PartitionError>(m, "PartitionError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());

  m.def(
      "validate_config",
      [](const std::string& text) {
        parse_config(text);
        return true;
      },
      py::arg("text"), "Validate a key = value config; raises ConfigError naming the bad key.");

  m.def(
      "run",
      [](const std::string& text) {
        const auto cfg = parse_config(text);
        RunResult r;
        {
          py::gil_scoped_release release;
          r = run_strategy(cfg);
        }
        return records_to_list(r.records);
      },
      py::arg("config"), "Run one experiment from config text and return its metric records.");

  m.def(
      "run_to_directory",
      [](const std::string& text, const std::filesystem::path& out_dir) {
        const auto cfg = parse_config(text);
        RunResult r;
        {
          py::gil_scoped_release release;
          r = run_to_directory(cfg, out_dir);
        }
        return records_to_list(r.records);
      },
      py::arg("config"), py::arg("out_dir"), "Run and write metrics.csv, metrics.jsonl, clients.csv and checkpoints.");

  m.def(
      "partition_report",
      [](const std::string& text) {
        std::ostringstream out;
        write_partition_report(parse_config(text), out);
        return out.str();
      },
      py::arg("config"), "Per-client class histograms as CSV text.");

  m.def(
      "dirichlet_partition",
      [](const std::vector<int>& labels, int num_classes, double alpha, std::size_t num_clients, std::uint64_t seed) {
        LabeledDataset ds;
        ds.num_classes = num_classes;
        ds.labels = labels;
        ds.images = Tensor({labels.size(), 1, 1, 1}, 0.0);
        const auto p = dirichlet_partition(ds, {alpha, num_clients, seed});
        return py::make_tuple(p.shards, p.test_indices);
      },
      py::arg("labels"), py::arg("num_classes"), py::arg("alpha"), py::arg("num_clients"), py::arg("seed"),
      "Returns (client shards, global test indices).");

  m.def(
      "aggregate",
      [](const std::vector<std::tuple<int, std::vector<double>, std::size_t>>& uploads) {
        std::vector<Upload> ups;
        for (const auto& [id, values, n] : uploads) {
          ParamVector p;
          p.add("w", Tensor({values.size()}, values));
          ups.push_back({id, std::move(p), n});
        }
        return aggregate(std::move(ups)).at(0).data;
      },
      py::arg("uploads"), "Sample-weighted average of (client_id, values, n_samples) uploads.");

  m.def(
      "select_winner",
      [](const std::vector<std::tuple<int, double, double>>& scores) {
        std::vector<RealisticScore> s;
        for (const auto& [id, disc, xen] : scores) s.push_back({id, disc, xen, disc - xen});
        return select_winner(s);
      },
      py::arg("scores"), "Winner among (client_id, disc_term, xen_term) triples.");

  m.def("fairness_std", [](const std::vector<double>& acc) { return fairness_std(acc); }, py::arg("per_client_acc"));
  m.def("format_real", &format_real, py::arg("value"));
}
