// Copyright 2026 The fmx Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fmx/checkpoint.hpp"
#include "fmx/inspect.hpp"
#include "fmx/metrics.hpp"
#include "fmx/pipeline.hpp"

namespace py = pybind11;
using namespace fmx;

namespace {

py::dict artifacts_dict(const RunArtifacts& art) {
  auto strings = [](const std::vector<std::filesystem::path>& ps) {
    std::vector<std::string> out;
    for (const auto& p : ps) out.push_back(p.string());
    return out;
  };
  py::dict d;
  d["checkpoints"] = strings(art.checkpoints);
  d["logs"] = strings(art.logs);
  d["reports"] = strings(art.reports);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Foundation-expert recommender core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<MetricUndefined>(m, "MetricUndefined", PyExc_ValueError);
  py::register_exception<StageError>(m, "StageError", PyExc_RuntimeError);

  m.def(
      "normalized_entropy",
      [](const std::vector<double>& labels, const std::vector<double>& probs) {
        if (labels.size() != probs.size()) throw py::value_error("labels and probs differ in length");
        return normalized_entropy(labels, probs).ne;
      },
      py::arg("labels"), py::arg("probs"));
  m.def("transfer_ratio", [](double fm1, double fm2, double e1, double e2) { return transfer_ratio(fm1, fm2, e1, e2); },
        py::arg("ne_fm1"), py::arg("ne_fm2"), py::arg("ne_expert1"), py::arg("ne_expert2"));
  m.def("ne_diff_percent", &ne_diff_percent, py::arg("candidate"), py::arg("reference"));

  m.def(
      "resolve_config",
      [](const std::string& text) { return to_json(run_config_from_json(json::parse(text))).dump(); },
      py::arg("config_json"), "Validates a run config and returns it with defaults filled in, as JSON.");
  m.def(
      "run",
      [](const std::string& config_json, const std::string& out, std::optional<std::uint64_t> seed,
         const std::string& harness, std::optional<std::string> hypercast) {
        const RunConfig cfg = run_config_from_json(json::parse(config_json));
        RunOptions opts;
        opts.out = out;
        opts.seed = seed;
        opts.harness = harness_mode_from_string(harness);
        if (hypercast) opts.hypercast_binary = *hypercast;
        RunArtifacts art;
        {
          py::gil_scoped_release release;
          art = run_pipeline(cfg, opts);
        }
        return artifacts_dict(art);
      },
      py::arg("config_json"), py::arg("out"), py::arg("seed") = py::none(), py::arg("harness") = "inprocess",
      py::arg("hypercast") = py::none());
  m.def("inspect", [](const std::string& path) { return inspect_artifact(path); }, py::arg("path"));
  m.def(
      "load_checkpoint",
      [](const std::string& path) {
        const Checkpoint ckpt = fmx::load_checkpoint(path);
        py::dict blocks;
        for (const auto& [name, p] : ckpt.params) {
          py::dict b;
          b["shape"] = py::make_tuple(p.value.rows, p.value.cols);
          b["counter"] = p.counter;
          b["values"] = p.value.values;
          blocks[py::str(name)] = b;
        }
        py::dict d;
        d["fm_version"] = ckpt.fm_version;
        d["blocks"] = blocks;
        return d;
      },
      py::arg("path"));
  m.def(
      "generate_events",
      [](const std::string& stream_json) {
        const Stream s = generate(stream_config_from_json(json::parse(stream_json)));
        std::vector<std::string> lines;
        lines.reserve(s.events.size());
        for (const auto& e : s.events) lines.push_back(event_to_line(e, s.tasks));
        return lines;
      },
      py::arg("stream_json"), "Event log lines of a generated stream.");
}
