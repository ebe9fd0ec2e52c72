#include <fstream>
#include <sstream>

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "boat/calibration.hpp"
#include "boat/csv.hpp"
#include "boat/deformation.hpp"
#include "boat/design_opt.hpp"
#include "boat/raytrace.hpp"
#include "boat/shadow.hpp"

namespace py = pybind11;
using namespace boat;

namespace {

PatternSpec to_spec(const std::tuple<int, double, double, double>& t) {
  PatternSpec s{std::get<0>(t), std::get<1>(t), std::get<2>(t), std::get<3>(t)};
  s.validate();
  return s;
}

py::dict trace_dict(const TraceResult& r) {
  py::dict d;
  d["ndr"] = r.ndr;
  d["detected_power"] = r.detected_power;
  d["receiver_hits"] = r.receiver_hits;
  d["interface_events"] = r.interface_events;
  d["secondary_rays"] = r.secondary_rays;
  d["max_energy_residual"] = r.max_energy_residual;
  d["ledger"] = py::dict(py::arg("detected") = r.ledger.detected, py::arg("escaped") = r.ledger.escaped,
                         py::arg("absorbed") = r.ledger.absorbed, py::arg("bounce_limited") = r.ledger.bounce_limited,
                         py::arg("budget_dropped") = r.ledger.budget_dropped);
  return d;
}

TraceConfig make_trace_config(int n_primary, double aperture_deg, double power_floor) {
  TraceConfig c;
  c.n_primary = n_primary;
  c.aperture_deg = aperture_deg;
  c.power_floor = power_floor;
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "BOAT core: waveguide scenes, ray tracing, design sweeps, calibration and digital shadow";
  m.attr("__version__") = BOAT_VERSION;

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

  py::class_<StateLibrary>(m, "StateLibrary")
      .def_property_readonly("labels",
                             [](const StateLibrary& lib) {
                               std::vector<std::string> out;
                               for (const auto& s : lib.states) out.push_back(s.label.str());
                               return out;
                             })
      .def_property_readonly("tip_displacements",
                             [](const StateLibrary& lib) {
                               std::vector<double> out;
                               for (const auto& s : lib.states) out.push_back(s.tip_displacement_mm);
                               return out;
                             })
      .def("waveguide",
           [](const StateLibrary& lib, const std::string& label, int id) {
             if (id != 1 && id != 2) throw ValidationError("waveguide id must be 1 or 2");
             std::vector<std::pair<double, double>> out;
             for (const auto& p : lib.find(label).waveguides[static_cast<std::size_t>(id - 1)]) out.emplace_back(p.x, p.z);
             return out;
           },
           py::arg("label"), py::arg("waveguide"))
      .def("to_csv",
           [](const StateLibrary& lib) {
             std::ostringstream out;
             write_states(lib, out);
             return out.str();
           })
      .def("__len__", &StateLibrary::size);

  m.def("synthesize_states",
        [](double arc_span, double rest_bow, double bow_min, double bow_max, int n_states, double aspect) {
          SynthesisParams p;
          p.arc_span_mm = arc_span;
          p.rest_bow_mm = rest_bow;
          p.bow_min_mm = bow_min;
          p.bow_max_mm = bow_max;
          p.n_states = n_states;
          p.aspect = aspect;
          return synthesize_states(p);
        },
        py::arg("arc_span") = 50.0, py::arg("rest_bow") = 2.5, py::arg("bow_min") = 0.0, py::arg("bow_max") = 5.0,
        py::arg("n_states") = 15, py::arg("aspect") = 0.5);

  m.def("load_states", &load_states_file, py::arg("path"));

  m.def("fresnel",
        [](double n1, double n2, double incidence) {
          const auto f = fresnel(n1, n2, incidence);
          return py::make_tuple(f.reflectance, f.transmittance, f.total_internal_reflection);
        },
        py::arg("n1"), py::arg("n2"), py::arg("incidence"), "Unpolarized (R, T, tir) at an interface");

  m.def("critical_angle", &critical_angle, py::arg("n_core"), py::arg("n_exterior"));

  m.def("trace_straight",
        [](double length, std::tuple<int, double, double, double> pattern, int n_primary, double aperture_deg,
           double power_floor) {
          const SceneOptions opt;
          return trace_dict(trace(straight_guide_scene(length, to_spec(pattern), opt),
                                  make_trace_config(n_primary, aperture_deg, power_floor)));
        },
        py::arg("length"), py::arg("pattern") = std::make_tuple(0, 0.0, 0.0, 0.0), py::arg("n_primary") = 250,
        py::arg("aperture_deg") = 120.0, py::arg("power_floor") = 1e-3);

  m.def("trace_state",
        [](const StateLibrary& lib, const std::string& label, std::tuple<int, double, double, double> pattern,
           int n_primary, double aperture_deg, double power_floor) {
          const SceneOptions opt;
          const Scene scene = build_scene(prepare_state(lib.find(label), opt), to_spec(pattern), opt);
          return trace_dict(trace(scene, make_trace_config(n_primary, aperture_deg, power_floor)));
        },
        py::arg("library"), py::arg("label"), py::arg("pattern") = std::make_tuple(0, 0.0, 0.0, 0.0),
        py::arg("n_primary") = 250, py::arg("aperture_deg") = 120.0, py::arg("power_floor") = 1e-3);

  m.def("ndr_vs_state",
        [](const StateLibrary& lib, std::tuple<int, double, double, double> pattern) {
          return ndr_vs_state(lib, to_spec(pattern), TraceConfig{}).ndr;
        },
        py::arg("library"), py::arg("pattern"));

  m.def("fit_cubic",
        [](const std::vector<double>& xs, const std::vector<double>& ys) {
          const auto f = fit_cubic(xs, ys);
          return py::make_tuple(f.coeffs, f.rmse);
        },
        py::arg("xs"), py::arg("ys"), "Least-squares cubic: (ascending coefficients, rmse)");

  m.def("p_metric",
        [](double delta, int n_sign, double rmse, bool literal) {
          const auto s = p_metric(delta, n_sign, rmse, literal);
          return py::make_tuple(s.p, s.guard_fired, s.perfect_fit);
        },
        py::arg("delta"), py::arg("n_sign"), py::arg("rmse"), py::arg("literal") = false);

  m.def("run_sweep",
        [](const StateLibrary& lib, std::vector<double> widths, std::vector<double> depths,
           std::vector<double> spacings, std::vector<int> counts, int workers) {
          SweepGrid g{std::move(widths), std::move(depths), std::move(spacings), std::move(counts)};
          SweepConfig cfg;
          cfg.workers = workers;
          SweepResult r;
          {
            py::gil_scoped_release release;
            r = run_sweep(lib, g, cfg);
          }
          py::list out;
          for (const auto& rec : r.records) {
            py::dict d;
            d["spec"] = py::make_tuple(rec.spec.cavity_count, rec.spec.width, rec.spec.depth, rec.spec.spacing);
            d["ndr"] = rec.ndr;
            d["coeffs"] = rec.fit.coeffs;
            d["delta"] = rec.score.delta;
            d["n_sign"] = rec.score.n_sign;
            d["rmse"] = rec.score.rmse;
            d["p"] = rec.score.p;
            d["p_norm"] = rec.p_normalized;
            d["failed"] = rec.failed;
            d["flags"] = rec.flags();
            out.append(d);
          }
          return out;
        },
        py::arg("library"), py::arg("widths"), py::arg("depths"), py::arg("spacings"), py::arg("cavity_counts"),
        py::arg("workers") = 1);

  py::class_<CalibrationModel>(m, "CalibrationModel")
      .def(py::init(&make_model), py::arg("sensor"), py::arg("coeffs"), py::arg("x_min"), py::arg("x_max"))
      .def_readonly("sensor", &CalibrationModel::sensor)
      .def_readonly("coeffs", &CalibrationModel::coeffs)
      .def_readonly("r_squared", &CalibrationModel::r_squared)
      .def_readonly("x_min", &CalibrationModel::x_min)
      .def_readonly("x_max", &CalibrationModel::x_max)
      .def_readonly("monotone", &CalibrationModel::monotone)
      .def("evaluate", &CalibrationModel::evaluate, py::arg("x"))
      .def("invert",
           [](const CalibrationModel& model, double v) {
             const auto r = invert(model, v);
             return py::make_tuple(r.displacement_mm, r.saturated);
           },
           py::arg("v"));

  m.def("fit_calibration",
        [](const std::vector<double>& displacement, const std::vector<double>& voltage, int sensor) {
          if (displacement.size() != voltage.size()) throw ValidationError("displacement and voltage differ in length");
          std::vector<CalibrationSample> samples(displacement.size());
          for (std::size_t i = 0; i < samples.size(); ++i) {
            samples[i].displacement_mm = displacement[i];
            (sensor == 1 ? samples[i].v1_mv : samples[i].v2_mv) = voltage[i];
          }
          return fit_calibration(samples, sensor);
        },
        py::arg("displacement"), py::arg("voltage"), py::arg("sensor") = 1);

  m.def("calibration_metrics",
        [](const std::string& log_path) {
          const auto samples = load_calibration_file(log_path);
          py::list out;
          for (int s = 1; s <= 2; ++s) {
            const auto model = fit_calibration(samples, s);
            const auto q = compute_metrics(samples, model);
            py::dict d;
            d["coeffs"] = model.coeffs;
            d["r_squared"] = model.r_squared;
            d["sensitivity"] = q.sensitivity_mv_per_mm;
            d["hysteresis_pct"] = q.hysteresis_defined ? py::object(py::float_(q.hysteresis_pct)) : py::object(py::none());
            d["snr_db"] = q.snr_db;
            out.append(d);
          }
          return out;
        },
        py::arg("log_path"));

  m.def("compensate",
        [](double v1_active, double v1_ambient, double v2_active, double v2_ambient) {
          SensorFrame f;
          f.v1_active_mv = v1_active;
          f.v1_ambient_mv = v1_ambient;
          f.v2_active_mv = v2_active;
          f.v2_ambient_mv = v2_ambient;
          const auto c = compensate(f);
          return py::make_tuple(c.v[0], c.v[1], c.clamped[0], c.clamped[1]);
        });

  m.def("replay",
        [](const std::string& stream, const std::string& models, const std::string& nominal, const std::string& states,
           std::size_t decimate) {
          const ShadowEngine engine(load_models_file(models), load_nominal_file(nominal), load_states_file(states));
          std::ifstream in(stream);
          if (!in) throw ValidationError("cannot open stream '" + stream + "'");
          FrameReader reader(in, stream_format_for(stream));
          ReplaySummary s;
          {
            py::gil_scoped_release release;
            s = replay(engine, reader, {decimate}, nullptr);
          }
          py::dict d;
          d["frames"] = s.frames;
          d["emitted"] = s.emitted;
          d["dropped_regressions"] = s.dropped_regressions;
          d["max_abs_deviation"] = s.max_abs_deviation;
          d["realtime_factor"] = s.realtime_factor;
          py::list eps;
          for (const auto& e : s.episodes)
            eps.append(py::make_tuple(to_string(e.alarm), e.t_start, e.t_end, e.frames));
          d["episodes"] = eps;
          return d;
        },
        py::arg("stream"), py::arg("models"), py::arg("nominal"), py::arg("states"), py::arg("decimate") = 1);
}
