// Command-line driver for the BOAT pipeline.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "boat/calibration.hpp"
#include "boat/csv.hpp"
#include "boat/deformation.hpp"
#include "boat/design_opt.hpp"
#include "boat/geometry.hpp"
#include "boat/raytrace.hpp"
#include "boat/shadow.hpp"
#include "boat/types.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::string out_dir = ".";
  int workers = 0;
};

struct Inputs {
  std::vector<std::pair<std::string, std::string>> files;  // path, hash
  void add(const std::string& path) { files.emplace_back(path, boat::hash_file(path)); }
};

fs::path out_path(const Common& c, const std::string& name) {
  fs::create_directories(c.out_dir);
  return fs::path(c.out_dir) / name;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  return out;
}

void echo_config(const CLI::App& app, const CLI::App* sub, const Common& common, const Inputs& inputs) {
  auto out = open_out(out_path(common, sub->get_name() + "_config.ini"));
  out << "# boat " << BOAT_VERSION << " " << sub->get_name() << '\n';
  for (const auto& [path, hash] : inputs.files) out << "# input " << path << " fnv1a64=" << hash << '\n';
  out << "out-dir=\"" << common.out_dir << "\"\n";
  out << "workers=" << common.workers << '\n';
  out << '[' << sub->get_name() << "]\n";
  out << app.get_config_formatter_base()->to_config(sub, true, false, "");
}

boat::PatternSpec parse_pattern(const std::string& text) {
  const auto f = boat::split(text);
  if (f.size() != 4) throw boat::ValidationError("pattern must be count,width,depth,spacing");
  boat::PatternSpec s;
  try {
    s.cavity_count = boat::parse_int(f[0], 0, "cavity_count");
    s.width = boat::parse_double(f[1], 0, "width");
    s.depth = boat::parse_double(f[2], 0, "depth");
    s.spacing = boat::parse_double(f[3], 0, "spacing");
  } catch (const boat::ParseError&) {
    throw boat::ValidationError("pattern '" + text + "' is not numeric");
  }
  s.validate();
  return s;
}

boat::SweepGrid parse_grid(const std::vector<std::string>& tokens) {
  boat::SweepGrid g = boat::SweepGrid::full();
  for (const auto& t : tokens) {
    if (t == "full") continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw boat::ValidationError("grid token '" + t + "' is not key=values");
    const std::string key = t.substr(0, eq);
    const auto values = boat::split(std::string_view(t).substr(eq + 1));
    try {
      if (key == "cavities" || key == "cavity_count") {
        g.cavity_counts.clear();
        for (const auto& v : values) g.cavity_counts.push_back(boat::parse_int(v, 0, key));
        continue;
      }
      std::vector<double>* axis =
          key == "width" ? &g.widths : key == "depth" ? &g.depths : key == "spacing" ? &g.spacings : nullptr;
      if (!axis) throw boat::ValidationError("unknown grid key '" + key + "'");
      axis->clear();
      for (const auto& v : values) axis->push_back(boat::parse_double(v, 0, key));
    } catch (const boat::ParseError&) {
      throw boat::ValidationError("grid token '" + t + "' has a non-numeric value");
    }
  }
  g.validate();
  return g;
}

void add_scene_options(CLI::App* cmd, boat::SceneOptions& o, std::string& side) {
  cmd->add_option("--thickness", o.thickness_mm, "Waveguide thickness [mm]")->capture_default_str();
  cmd->add_option("--standoff", o.standoff_mm, "Emitter/receiver distance from the junctions [mm]")->capture_default_str();
  cmd->add_option("--cavity-side", side, "Surface receiving the cavities")
      ->check(CLI::IsMember({"outer", "inner"}))
      ->capture_default_str();
  cmd->add_option("--core-index", o.core_index)->capture_default_str();
  cmd->add_option("--exterior-index", o.exterior_index)->capture_default_str();
}

void add_trace_options(CLI::App* cmd, boat::TraceConfig& t) {
  cmd->add_option("--rays", t.n_primary, "Primary rays in the fan")->capture_default_str();
  cmd->add_option("--aperture", t.aperture_deg, "Full fan aperture [deg]")->capture_default_str();
  cmd->add_option("--max-secondary", t.max_secondary, "Secondary rays per primary")->capture_default_str();
  cmd->add_option("--power-floor", t.power_floor, "Rays below this power are absorbed")->capture_default_str();
  cmd->add_option("--max-bounces", t.max_bounces)->capture_default_str();
  cmd->add_option("--detect-threshold", t.detect_threshold)->capture_default_str();
}

boat::CavitySide parse_side(const std::string& s) { return s == "inner" ? boat::CavitySide::inner : boat::CavitySide::outer; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BOAT: bidirectional optical sensor design, calibration and digital shadow"};
  app.set_version_flag("--version", std::string(BOAT_VERSION));
  app.set_config("--config", "", "INI file with option values; command-line flags take precedence");
  app.require_subcommand(1);

  Common common;
  app.add_option("--out-dir", common.out_dir, "Directory for all outputs")->capture_default_str();
  app.add_option("--workers", common.workers, "Sweep worker threads (0 = logical cores)")->capture_default_str();

  // synth-states ------------------------------------------------------------
  boat::SynthesisParams synth;
  std::string synth_out = "states.csv";
  auto* cmd_synth = app.add_subcommand("synth-states", "Generate a twin elliptical-arc state library");
  cmd_synth->add_option("--arc-span", synth.arc_span_mm, "Centerline arc length [mm]")->capture_default_str();
  cmd_synth->add_option("--rest-bow", synth.rest_bow_mm)->capture_default_str();
  cmd_synth->add_option("--bow-min", synth.bow_min_mm, "Bow at maximum compression [mm]")->capture_default_str();
  cmd_synth->add_option("--bow-max", synth.bow_max_mm, "Bow at maximum elongation [mm]")->capture_default_str();
  cmd_synth->add_option("--n-states", synth.n_states)->capture_default_str();
  cmd_synth->add_option("--aspect", synth.aspect)->capture_default_str();
  cmd_synth->add_option("--points", synth.points_per_waveguide)->capture_default_str();
  cmd_synth->add_option("--pressure-span", synth.pressure_span_kpa)->capture_default_str();
  cmd_synth->add_option("--out", synth_out, "Output file name inside --out-dir")->capture_default_str();

  // trace -------------------------------------------------------------------
  std::string trace_states, trace_state = "rest", trace_pattern = "0,0,0,0", trace_svg, trace_out = "trace.json",
              trace_side = "outer", trace_scene_json;
  double trace_straight = 0.0;
  boat::SceneOptions trace_scene;
  boat::TraceConfig trace_cfg;
  auto* cmd_trace = app.add_subcommand("trace", "Trace one scene and report the detected ray count");
  cmd_trace->add_option("--states", trace_states, "State library CSV");
  cmd_trace->add_option("--state", trace_state, "State label")->capture_default_str();
  cmd_trace->add_option("--straight", trace_straight, "Trace a straight single guide of this length [mm] instead");
  cmd_trace->add_option("--pattern", trace_pattern, "count,width,depth,spacing")->capture_default_str();
  cmd_trace->add_option("--svg", trace_svg, "Write a ray-path SVG to this file inside --out-dir");
  cmd_trace->add_option("--scene-json", trace_scene_json, "Write the scene JSON to this file inside --out-dir");
  cmd_trace->add_option("--out", trace_out)->capture_default_str();
  add_scene_options(cmd_trace, trace_scene, trace_side);
  add_trace_options(cmd_trace, trace_cfg);

  // sweep -------------------------------------------------------------------
  std::string sweep_states, sweep_regressor = "state_index", sweep_metric = "ndr", sweep_side = "outer",
              sweep_heatmap = "5,1.0";
  std::vector<std::string> sweep_grid{"full"};
  bool sweep_literal = false;
  boat::SweepConfig sweep_cfg;
  auto* cmd_sweep = app.add_subcommand("sweep", "Sweep the pattern grid over every state and rank designs");
  cmd_sweep->add_option("--states", sweep_states, "State library CSV")->required();
  cmd_sweep->add_option("--grid", sweep_grid, "full | key=v1,v2 tokens (width, depth, spacing, cavities)")
      ->capture_default_str();
  cmd_sweep->add_option("--regressor", sweep_regressor, "state_index | tip_displacement")->capture_default_str();
  cmd_sweep->add_option("--metric", sweep_metric, "ndr | detected_power")->capture_default_str();
  cmd_sweep->add_flag("--literal-p", sweep_literal, "Error on n_sign = 0 instead of guarding");
  cmd_sweep->add_option("--heatmap", sweep_heatmap, "cavity_count,width slice for the heatmap table")->capture_default_str();
  add_scene_options(cmd_sweep, sweep_cfg.scene, sweep_side);
  add_trace_options(cmd_sweep, sweep_cfg.trace);

  // calibrate ---------------------------------------------------------------
  std::string cal_log, cal_out = "models.json", cal_nominal = "nominal.json";
  double cal_floor = 0.99;
  boat::MetricsOptions cal_metrics;
  auto* cmd_cal = app.add_subcommand("calibrate", "Fit per-sensor cubic calibrations and quality metrics");
  cmd_cal->add_option("--log", cal_log, "Calibration CSV")->required();
  cmd_cal->add_option("--r2-floor", cal_floor, "Warn below this r_squared")->capture_default_str();
  cmd_cal->add_option("--grid", cal_metrics.grid_mm, "Hysteresis grid [mm]")->capture_default_str();
  cmd_cal->add_option("--settle", cal_metrics.settle_fraction, "Leading share of each hold ignored for noise")
      ->capture_default_str();
  cmd_cal->add_option("--out", cal_out)->capture_default_str();
  cmd_cal->add_option("--nominal-out", cal_nominal, "Nominal pressure-displacement table")->capture_default_str();

  // shadow ------------------------------------------------------------------
  std::string sh_stream, sh_models, sh_nominal, sh_states, sh_out = "shadow_states.jsonl",
              sh_summary = "shadow_summary.json";
  std::size_t sh_decimate = 1;
  boat::ShadowConfig sh_cfg;
  auto* cmd_shadow = app.add_subcommand("shadow", "Replay a sensor stream through the digital shadow");
  cmd_shadow->add_option("--stream", sh_stream, "Stream CSV or JSONL")->required();
  cmd_shadow->add_option("--models", sh_models, "Calibration model JSON")->required();
  cmd_shadow->add_option("--nominal", sh_nominal, "Nominal table JSON")->required();
  cmd_shadow->add_option("--states", sh_states, "State library CSV")->required();
  cmd_shadow->add_option("--decimate", sh_decimate, "Emit one state per N frames")->capture_default_str();
  cmd_shadow->add_option("--ewma-alpha", sh_cfg.ewma_alpha)->capture_default_str();
  cmd_shadow->add_option("--drift-threshold", sh_cfg.drift_threshold_mm)->capture_default_str();
  cmd_shadow->add_option("--drift-hold", sh_cfg.drift_hold_s)->capture_default_str();
  cmd_shadow->add_option("--leak-band", sh_cfg.leak_band_kpa)->capture_default_str();
  cmd_shadow->add_option("--leak-hold", sh_cfg.leak_hold_s)->capture_default_str();
  cmd_shadow->add_option("--leak-drop", sh_cfg.leak_drop_mm)->capture_default_str();
  cmd_shadow->add_option("--out", sh_out)->capture_default_str();
  cmd_shadow->add_option("--summary", sh_summary)->capture_default_str();

  // synth-fixtures ------------------------------------------------------------
  boat::CalibrationFixtureParams fx;
  boat::StreamFixtureParams sx;
  std::string fx_cal_out = "calibration.csv", fx_stream_out = "stream.csv";
  auto* cmd_fx = app.add_subcommand("synth-fixtures", "Generate a calibration log and a sensor stream");
  cmd_fx->add_option("--cycles", fx.cycles, "Calibration cycles")->capture_default_str();
  cmd_fx->add_option("--hold", fx.hold_s, "Seconds per pressure setpoint")->capture_default_str();
  cmd_fx->add_option("--noise", fx.noise_mv, "Gaussian voltage noise [mV]")->capture_default_str();
  cmd_fx->add_option("--hysteresis", fx.hysteresis_fraction, "Loading-branch offset as a share of span")
      ->capture_default_str();
  cmd_fx->add_option("--mm-per-kpa", fx.mm_per_kpa)->capture_default_str();
  cmd_fx->add_option("--seed", fx.seed)->capture_default_str();
  cmd_fx->add_option("--stream-cycles", sx.cycles)->capture_default_str();
  cmd_fx->add_option("--ambient", sx.ambient_mv)->capture_default_str();
  cmd_fx->add_option("--stream-noise", sx.noise_mv, "Gaussian voltage noise on the stream [mV]")->capture_default_str();
  cmd_fx->add_option("--ramp", sx.ramp_mv_per_s, "Voltage ramp added to the stream [mV/s]")->capture_default_str();
  cmd_fx->add_option("--ramp-start", sx.ramp_start_s)->capture_default_str();
  cmd_fx->add_option("--leak-hold", sx.hold_s, "Trailing constant-pressure hold [s]")->capture_default_str();
  cmd_fx->add_option("--leak-pressure", sx.hold_pressure_kpa)->capture_default_str();
  cmd_fx->add_option("--leak-decay", sx.hold_decay_per_s, "Displacement decay per second during the hold")
      ->capture_default_str();
  cmd_fx->add_option("--calibration-out", fx_cal_out)->capture_default_str();
  cmd_fx->add_option("--stream-out", fx_stream_out)->capture_default_str();

  for (auto* sub : {cmd_synth, cmd_trace, cmd_sweep, cmd_cal, cmd_shadow, cmd_fx}) sub->configurable();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    Inputs inputs;
    if (cmd_synth->parsed()) {
      const auto lib = boat::synthesize_states(synth);
      auto out = open_out(out_path(common, synth_out));
      boat::write_states(lib, out);
      echo_config(app, cmd_synth, common, inputs);
      std::cout << "wrote " << lib.size() << " states to " << out_path(common, synth_out).string() << '\n';
    } else if (cmd_trace->parsed()) {
      trace_scene.cavity_side = parse_side(trace_side);
      const auto spec = parse_pattern(trace_pattern);
      boat::Scene scene;
      if (trace_straight > 0.0) {
        scene = boat::straight_guide_scene(trace_straight, spec, trace_scene);
      } else {
        if (trace_states.empty()) throw boat::ValidationError("trace needs --states or --straight");
        const auto lib = boat::load_states_file(trace_states);
        inputs.add(trace_states);
        scene = boat::build_scene(boat::prepare_state(lib.find(trace_state), trace_scene), spec, trace_scene);
      }
      trace_cfg.record_paths = !trace_svg.empty();
      const auto result = boat::trace(scene, trace_cfg);
      {
        auto out = open_out(out_path(common, trace_out));
        boat::write_trace_json(result, scene, trace_cfg, out);
      }
      if (!trace_svg.empty()) {
        auto out = open_out(out_path(common, trace_svg));
        boat::write_scene_svg(scene, result.ray_paths, out);
      }
      if (!trace_scene_json.empty()) {
        auto out = open_out(out_path(common, trace_scene_json));
        boat::write_scene_json(scene, out);
      }
      echo_config(app, cmd_trace, common, inputs);
      std::cout << "ndr " << result.ndr << " detected_power " << boat::format_double(result.detected_power) << '\n';
    } else if (cmd_sweep->parsed()) {
      sweep_cfg.scene.cavity_side = parse_side(sweep_side);
      sweep_cfg.regressor = boat::parse_regressor(sweep_regressor);
      sweep_cfg.metric = boat::parse_metric(sweep_metric);
      sweep_cfg.literal_formula = sweep_literal;
      sweep_cfg.workers = common.workers;
      const auto grid = parse_grid(sweep_grid);
      const auto heat = boat::split(sweep_heatmap);
      if (heat.size() != 2) throw boat::ValidationError("--heatmap must be cavity_count,width");
      const int heat_n = boat::parse_int(heat[0], 0, "cavity_count");
      const double heat_w = boat::parse_double(heat[1], 0, "width");
      const auto lib = boat::load_states_file(sweep_states);
      inputs.add(sweep_states);

      const auto t0 = std::chrono::steady_clock::now();
      const auto result = boat::run_sweep(lib, grid, sweep_cfg);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      {
        auto out = open_out(out_path(common, "sweep.csv"));
        boat::write_sweep_csv(result, out);
      }
      {
        auto out = open_out(out_path(common, "sweep.json"));
        boat::write_sweep_sidecar(result, grid, sweep_cfg, out);
      }
      const auto table = boat::emit_heatmap_table(result.records, grid, heat_n, heat_w);
      std::ostringstream heat_name;
      heat_name << "heatmap_n" << heat_n << "_w" << boat::format_double(heat_w) << ".csv";
      {
        auto out = open_out(out_path(common, heat_name.str()));
        boat::write_heatmap_csv(table, out);
      }
      if (table.filled == 0) std::cerr << "warning: heatmap slice matches no records\n";
      {
        auto out = open_out(out_path(common, "best.json"));
        nlohmann::json j;
        if (result.best) {
          const auto& b = result.records[*result.best];
          j = {{"cavity_count", b.spec.cavity_count}, {"width_mm", b.spec.width},   {"depth_mm", b.spec.depth},
               {"spacing_mm", b.spec.spacing},        {"ndr", b.ndr},               {"delta", b.score.delta},
               {"n_sign", b.score.n_sign},             {"rmse", b.score.rmse},       {"p_norm", b.p_normalized},
               {"p", boat::format_double(b.score.p)}, {"flags", b.flags()}};
        }
        out << j.dump(2) << '\n';
      }
      echo_config(app, cmd_sweep, common, inputs);
      std::size_t failed = 0;
      for (const auto& r : result.records) failed += r.failed;
      std::cout << result.records.size() << " records (" << failed << " failed) in " << secs << " s\n";
      if (result.best) std::cout << "best " << result.records[*result.best].spec.str() << '\n';
    } else if (cmd_cal->parsed()) {
      const auto samples = boat::load_calibration_file(cal_log);
      inputs.add(cal_log);
      boat::CalibrationReport report;
      report.source_hash = inputs.files.back().second;
      for (int s = 1; s <= 2; ++s) {
        const auto i = static_cast<std::size_t>(s - 1);
        report.models[i] = boat::fit_calibration(samples, s, cal_floor);
        report.metrics[i] = boat::compute_metrics(samples, report.models[i], cal_metrics);
        const auto& m = report.models[i];
        const auto& q = report.metrics[i];
        if (m.below_r_squared_floor)
          std::cerr << "warning: sensor " << s << " r_squared " << m.r_squared << " below " << cal_floor << '\n';
        if (!m.monotone) std::cerr << "warning: sensor " << s << " model is not monotone; inversion disabled\n";
        std::cout << "sensor " << s << ": r2 " << boat::format_double(m.r_squared) << " sensitivity "
                  << q.sensitivity_mv_per_mm << " mV/mm hysteresis "
                  << (q.hysteresis_defined ? std::to_string(q.hysteresis_pct) + " %" : std::string("n/a")) << " snr "
                  << boat::format_double(q.snr_db) << " dB\n";
      }
      std::cout << "system sensitivity " << boat::system_sensitivity(report.metrics[0], report.metrics[1])
                << " mV/mm\n";
      {
        auto out = open_out(out_path(common, cal_out));
        boat::write_models_json(report, out);
      }
      {
        auto out = open_out(out_path(common, cal_nominal));
        boat::write_nominal_json(boat::NominalModel::fit(samples), out);
      }
      echo_config(app, cmd_cal, common, inputs);
    } else if (cmd_shadow->parsed()) {
      auto models = boat::load_models_file(sh_models);
      auto nominal = boat::load_nominal_file(sh_nominal);
      auto lib = boat::load_states_file(sh_states);
      for (const auto& p : {sh_stream, sh_models, sh_nominal, sh_states}) inputs.add(p);
      const boat::ShadowEngine engine(models, nominal, lib, sh_cfg);
      std::ifstream in(sh_stream);
      if (!in) throw boat::ValidationError("cannot open stream '" + sh_stream + "'");
      boat::FrameReader reader(in, boat::stream_format_for(sh_stream));
      auto out = open_out(out_path(common, sh_out));
      const auto summary = boat::replay(engine, reader, {sh_decimate},
                                        [&](const boat::ShadowState& s) { boat::write_state_json(s, out); });
      {
        auto sout = open_out(out_path(common, sh_summary));
        boat::write_summary_json(summary, sout);
      }
      echo_config(app, cmd_shadow, common, inputs);
      std::cout << summary.frames << " frames, " << summary.emitted << " states, " << summary.episodes.size()
                << " alarm episodes, max |deviation| " << summary.max_abs_deviation << " mm, "
                << summary.realtime_factor << "x real time\n";
    } else if (cmd_fx->parsed()) {
      const auto samples = boat::synthesize_calibration(fx);
      {
        auto out = open_out(out_path(common, fx_cal_out));
        boat::write_calibration(samples, out);
      }
      sx.protocol = fx;
      sx.protocol.seed = fx.seed + 1;
      const auto frames = boat::synthesize_stream(sx);
      {
        const auto path = out_path(common, fx_stream_out);
        auto out = open_out(path);
        if (boat::stream_format_for(path.string()) == boat::StreamFormat::jsonl)
          boat::write_stream_jsonl(frames, out);
        else
          boat::write_stream_csv(frames, out);
      }
      echo_config(app, cmd_fx, common, inputs);
      std::cout << "wrote " << samples.size() << " calibration samples and " << frames.size() << " stream frames\n";
    }
  } catch (const boat::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
