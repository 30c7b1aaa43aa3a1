#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tfnas/errors.hpp"
#include "tfnas/export.hpp"
#include "tfnas/io.hpp"
#include "tfnas/properties.hpp"

namespace py = pybind11;
using namespace tfnas;

namespace {

RunConfig run_config(const std::string& text) {
  RunConfig r = parse_json(text, "config").get<RunConfig>();
  r.validate();
  return r;
}

SearchSpaceConfig space_config(const std::string& text) {
  auto s = parse_json(text, "space").get<SearchSpaceConfig>();
  s.validate();
  return s;
}

std::string baseline_arch(const std::string& space_json) {
  SearchSpace s(space_config(space_json));
  return arch_to_json(init_arch(s, InitMode::Baseline)).dump();
}

std::string describe(const std::string& space_json, const std::string& arch_json, const std::string& profile) {
  SearchSpace s(space_config(space_json));
  const auto a = arch_from_json(parse_json(arch_json, "arch"), s);
  const auto p = resolve_profile(profile);
  Provenance prov;
  prov.profile_id = p.id;
  return Json(extract_description(a, s, assign_costs(s, p), prov)).dump();
}

std::string dot(const std::string& desc_json) {
  return export_dot(parse_json(desc_json, "description").get<ArchitectureDescription>());
}

std::string slot_costs(const std::string& space_json, const std::string& profile) {
  SearchSpace s(space_config(space_json));
  const auto c = assign_costs(s, resolve_profile(profile));
  Json slots = Json::array();
  for (std::size_t i = 0; i < s.num_slots(); ++i)
    slots.push_back({{"id", s.layout()->slots()[i].id}, {"cost", c.slot[i]}});
  return Json{{"slots", slots}, {"fixed", c.fixed}}.dump();
}

// Runs one search from a config; the metrics stream is passed to `on_metric`
// as JSON text when given.
std::string search(const std::string& config_json, const std::function<void(std::string)>& on_metric) {
  const RunConfig r = run_config(config_json);
  SearchSpace space(r.space);
  const Task task = make_task(r.task);
  const auto profile = resolve_profile(r.cost_profile);
  const auto c = assign_costs(space, profile);
  Json metrics = Json::array();
  RunResult res;
  {
    py::gil_scoped_release release;
    res = train_search(space, task, r.model(), r.hp, c, [&](const MetricRecord& m) {
      Json j = metric_to_json(m);
      metrics.push_back(j);
      if (on_metric) {
        py::gil_scoped_acquire acquire;
        on_metric(j.dump());
      }
    });
  }
  const Provenance prov{to_string(r.hp.algorithm), r.hp.lambda, r.hp.nu, r.hp.seed, profile.id, config_hash(r)};
  return Json{{"metric", res.metric},
              {"cost", res.cost},
              {"speedup", res.speedup_infinite ? Json(nullptr) : Json(res.speedup)},
              {"description", extract_description(res.selected, space, c, prov)},
              {"metrics", metrics}}
      .dump();
}

py::list property_suite(const std::string& name, std::uint64_t seed) {
  py::list out;
  for (const auto& p : run_property_suite(name, seed)) {
    py::dict d;
    d["suite"] = p.suite;
    d["name"] = p.name;
    d["passed"] = p.passed;
    d["value"] = p.value;
    d["threshold"] = p.threshold;
    d["detail"] = p.detail;
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the tfnas architecture search library; JSON travels as text.";
  m.attr("SCHEMA_VERSION") = kSchemaVersion;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ArchitectureError>(m, "ArchitectureError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("config_hash", [](const std::string& j) { return config_hash(run_config(j)); });
  m.def("default_config", [] { return Json(RunConfig{}).dump(); });
  m.def("profile", [](const std::string& name) { return Json(resolve_profile(name)).dump(); },
        py::arg("name") = "table1");
  m.def("baseline_arch", &baseline_arch, py::arg("space_json"));
  m.def("slot_costs", &slot_costs, py::arg("space_json"), py::arg("profile") = "table1");
  m.def("describe", &describe, py::arg("space_json"), py::arg("arch_json"), py::arg("profile") = "table1");
  m.def("export_dot", &dot, py::arg("description_json"));
  m.def("search", &search, py::arg("config_json"), py::arg("on_metric") = nullptr);
  m.def("ramp_weight", [](double progress, double p, double q) {
    return ramp_weight(static_cast<Real>(progress), static_cast<Real>(p), static_cast<Real>(q));
  }, py::arg("progress_pct"), py::arg("p") = 80.0, py::arg("q") = 100.0);
  m.def("property_suites", &property_suites);
  m.def("run_property_suite", &property_suite, py::arg("name"), py::arg("seed") = 1);
}
