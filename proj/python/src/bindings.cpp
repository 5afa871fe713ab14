#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <string>
#include <vector>

#include "hybridlab/checkpoint.hpp"
#include "hybridlab/cost.hpp"
#include "hybridlab/decode.hpp"
#include "hybridlab/harness.hpp"
#include "hybridlab/layout.hpp"
#include "hybridlab/verify.hpp"

namespace py = pybind11;
using namespace hybridlab;

namespace {

py::dict layout_dict(const LayoutSpec& l) {
  py::list kinds, lints;
  for (const auto& b : l.blocks) kinds.append(std::string(to_string(b.kind)) + (b.moe ? "+moe" : ""));
  for (const auto& m : lint_layout(l)) {
    lints.append(py::make_tuple(m.level == LintMessage::Level::kWarning ? "warning" : "info", m.text));
  }
  py::dict d;
  d["blocks"] = kinds;
  d["specials"] = l.special_indices();
  d["positioning"] = std::string(to_string(l.positioning));
  d["lints"] = lints;
  d["text"] = write_layout(l);
  return d;
}

py::dict report_dict(const CostReport& r) {
  py::dict d;
  d["layout_id"] = r.layout_id;
  d["l_ctx"] = r.l_ctx;
  d["tokens"] = r.tokens;
  d["flops_per_sample"] = r.flops_per_sample;
  d["train_flops"] = r.train_flops;
  d["params_nonemb"] = r.params_nonemb;
  d["params_emb"] = r.params_emb;
  d["params_head"] = r.params_head;
  d["params_per_block"] = r.params_per_block;
  d["cache_bytes"] = r.cache_bytes;
  d["cache_mib"] = static_cast<double>(r.cache_bytes) / kMiB;
  d["activated_params"] = r.activated_params;
  return d;
}

py::list trace_list(const std::vector<DecodeTraceRow>& rows) {
  py::list out;
  for (const auto& r : rows) out.append(py::make_tuple(r.step, r.ops, r.state_bytes));
  return out;
}

/// Thin owner so Python sees a single mutable model object.
struct PyModel {
  HybridModel model;

  py::array_t<double> forward(const std::vector<std::int64_t>& tokens) const {
    const Tensor logits = model.forward(tokens);
    py::array_t<double> out({logits.dim(0), logits.dim(1)});
    auto data = logits.data();
    std::copy(data.begin(), data.end(), out.mutable_data());
    return out;
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Hybrid attention / state-space language model toolkit";

  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("preset_names", &preset_names);

  m.def(
      "plan",
      [](std::int64_t depth, const std::string& ratio, const std::string& kind, const std::string& pos) {
        return layout_dict(plan_layout(depth, parse_ratio(ratio), parse_block_kind(kind), parse_positioning(pos)));
      },
      py::arg("depth"), py::arg("ratio"), py::arg("kind") = "attn", py::arg("pos") = "scatter",
      "Plan a layout from a special:mamba ratio.");

  m.def(
      "plan_counts",
      [](std::int64_t n_special, std::int64_t n_mamba, const std::string& kind, const std::string& pos) {
        return layout_dict(plan_layout_counts(n_special, n_mamba, parse_block_kind(kind), parse_positioning(pos)));
      },
      py::arg("n_special"), py::arg("n_mamba"), py::arg("kind") = "attn", py::arg("pos") = "scatter");

  m.def(
      "cost",
      [](const std::string& name, std::int64_t ctx, double tokens) {
        const Preset p = preset(name);
        return report_dict(cost_report(p.layout, p.model, ctx, tokens, name));
      },
      py::arg("preset"), py::arg("ctx") = 8192, py::arg("tokens") = 60e9,
      "Parameter, FLOPs and cache accounting for a named preset.");

  m.def(
      "decode_trace",
      [](const std::string& name, std::int64_t prompt_len, std::int64_t gen_len) {
        const Preset p = preset(name);
        return trace_list(decode_trace(p.layout, p.model, prompt_len, gen_len));
      },
      py::arg("preset"), py::arg("prompt_len"), py::arg("gen_len"),
      "Analytic per-step (step, ops, state_bytes) rows.");

  m.def("verify_suites", &verify_suite_names);
  m.def(
      "verify",
      [](const std::vector<std::string>& suites, std::uint64_t seed) {
        VerifyOptions opts;
        opts.suites = suites;
        opts.seed = seed;
        py::list out;
        for (const auto& r : run_verify(opts)) out.append(py::make_tuple(r.suite, r.name, r.passed, r.detail));
        return out;
      },
      py::arg("suites") = std::vector<std::string>{}, py::arg("seed") = 0,
      "Run property suites; returns (suite, name, passed, detail) tuples.");

  py::class_<PyModel>(m, "Model")
      .def(py::init([](const std::string& name, std::uint64_t seed) {
             const Preset p = preset(name);
             return PyModel{HybridModel::build(p.model, p.layout, seed)};
           }),
           py::arg("preset"), py::arg("seed") = 0)
      .def_static(
          "load", [](const std::string& path) { return PyModel{load_checkpoint(path).model}; }, py::arg("path"))
      .def(
          "save", [](PyModel& self, const std::string& path) { save_checkpoint(path, self.model); }, py::arg("path"))
      .def_property_readonly("vocab", [](const PyModel& self) { return self.model.cfg.vocab; })
      .def_property_readonly("depth", [](const PyModel& self) { return self.model.layout.depth(); })
      .def("parameter_count", [](const PyModel& self) { return self.model.parameter_count(); })
      .def("forward", &PyModel::forward, py::arg("tokens"), "Logits of shape (len(tokens), vocab).")
      .def(
          "generate",
          [](const PyModel& self, const std::vector<std::int64_t>& prompt, std::int64_t n) {
            return greedy_generate(self.model, prompt, n);
          },
          py::arg("prompt"), py::arg("n"))
      .def(
          "train_copy",
          [](PyModel& self, std::int64_t steps, std::int64_t seq_len, std::int64_t batch, double lr, std::uint64_t seed) {
            TrainConfig tc;
            tc.steps = steps;
            tc.batch = batch;
            tc.peak_lr = lr;
            tc.seed = seed;
            py::list out;
            for (const auto& s : train(self.model, copy_source(self.model.cfg.vocab, seq_len, batch, seed), tc)) {
              out.append(py::make_tuple(s.step, s.lr, s.loss, s.accuracy));
            }
            return out;
          },
          py::arg("steps"), py::arg("seq_len") = 32, py::arg("batch") = 4, py::arg("lr") = 1e-3, py::arg("seed") = 0,
          "Train on the copy task; returns (step, lr, loss, accuracy) rows.")
      .def(
          "niah",
          [](const PyModel& self, const std::vector<double>& depths, const std::vector<std::int64_t>& lengths,
             std::int64_t trials, std::uint64_t seed) {
            return niah_eval(self.model, depths, lengths, trials, seed).accuracy;
          },
          py::arg("depths"), py::arg("lengths"), py::arg("trials") = 10, py::arg("seed") = 0,
          "Retrieval accuracy indexed [length][depth].")
      .def(
          "decode_trace",
          [](const PyModel& self, std::int64_t prompt_len, std::int64_t gen_len, std::uint64_t seed) {
            return trace_list(measure_decode(self.model, prompt_len, gen_len, seed));
          },
          py::arg("prompt_len"), py::arg("gen_len"), py::arg("seed") = 0);
}
