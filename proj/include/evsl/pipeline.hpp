#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "evsl/calibration.hpp"
#include "evsl/decode.hpp"
#include "evsl/deflectometry.hpp"
#include "evsl/error.hpp"
#include "evsl/events.hpp"
#include "evsl/io.hpp"
#include "evsl/metrics.hpp"
#include "evsl/separation.hpp"
#include "evsl/simulator.hpp"
#include "evsl/triangulation.hpp"

namespace evsl {

inline constexpr const char* kVersion = "0.1.0";

enum class Mode { mixed, diffuse_only };

inline std::string_view to_string(Mode m) { return m == Mode::mixed ? "mixed" : "diffuse-only"; }

inline Mode mode_from_string(const std::string& s) {
  if (s == "mixed") return Mode::mixed;
  if (s == "diffuse-only") return Mode::diffuse_only;
  throw Error(ErrorCode::config, "mode must be 'mixed' or 'diffuse-only', got '" + s + "'");
}

struct PipelineConfig {
  std::string scene;                      // resolved path
  std::string calibration = "from-scene";  // or resolved path to a bundle
  Json schedule_overrides = Json::object();
  Json noise_overrides = Json::object();
  double tau_px = 2.0;
  double g_max_mm = 1.0;
  DecodeOptions decode;
  DeflectometryOptions deflectometry;
  std::string output_dir = "out";
  std::optional<std::uint64_t> seed;
  Mode mode = Mode::mixed;
  int workers = 1;
  bool binary_events = true;

  Json to_json() const {
    Json d{{"init_depth_mm", deflectometry.init_depth},
           {"max_iter", deflectometry.max_iter},
           {"tol_mm", deflectometry.tol_mm},
           {"integrator", std::string(evsl::to_string(deflectometry.integrator))},
           {"resolve_scale", deflectometry.resolve_scale},
           {"scale_min", deflectometry.scale_min},
           {"scale_max", deflectometry.scale_max},
           {"outlier_sigma", deflectometry.outlier_sigma},
           {"min_facing", deflectometry.min_facing},
           {"boundary_px", deflectometry.boundary_px}};
    Json j{{"scene", scene},
           {"calibration", calibration},
           {"schedule", schedule_overrides},
           {"noise", noise_overrides},
           {"tau_px", tau_px},
           {"g_max_mm", g_max_mm},
           {"decode",
            Json{{"policy", std::string(evsl::to_string(decode.policy))},
                 {"subpixel", decode.subpixel},
                 {"cluster_gap_fraction", decode.cluster_gap_fraction},
                 {"low_quality_fraction", decode.low_quality_fraction}}},
           {"deflectometry", d},
           {"mode", std::string(evsl::to_string(mode))},
           {"workers", workers},
           {"event_format", binary_events ? "binary" : "text"}};
    if (seed) j["seed"] = *seed;
    return j;
  }
};

namespace detail {

inline std::string resolve_relative(const std::string& base_dir, const std::string& p) {
  namespace fs = std::filesystem;
  if (p.empty() || fs::path(p).is_absolute() || base_dir.empty()) return p;
  return (fs::path(base_dir) / p).lexically_normal().string();
}

template <typename F>
auto config_field(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(ErrorCode::config, where + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, where + ": " + e.what());
  }
}

}  // namespace detail

/// Parses a pipeline config; relative paths resolve against `base_dir`. Unknown keys are errors.
inline PipelineConfig pipeline_config_from_json(const Json& j, const std::string& base_dir = "") {
  return detail::config_field("config", [&] {
    using namespace json_io;
    check_keys(j,
               {"scene", "calibration", "schedule", "noise", "tau_px", "g_max_mm", "decode", "deflectometry", "output_dir",
                "seed", "mode", "workers", "event_format"},
               "config");
    PipelineConfig c;
    c.scene = detail::resolve_relative(base_dir, get<std::string>(j, "scene", "config"));
    const auto calib = get_or<std::string>(j, "calibration", "from-scene", "config");
    c.calibration = calib == "from-scene" ? calib : detail::resolve_relative(base_dir, calib);
    if (j.contains("schedule")) {
      c.schedule_overrides = j.at("schedule");
      schedule_from_json(c.schedule_overrides, "config.schedule");
    }
    if (j.contains("noise")) {
      c.noise_overrides = j.at("noise");
      noise_from_json(c.noise_overrides, "config.noise");
    }
    c.tau_px = get_or<double>(j, "tau_px", c.tau_px, "config");
    if (!(c.tau_px > 0.0)) throw Error(ErrorCode::config, "config.tau_px must be > 0");
    c.g_max_mm = get_or<double>(j, "g_max_mm", c.g_max_mm, "config");
    if (!(c.g_max_mm > 0.0)) throw Error(ErrorCode::config, "config.g_max_mm must be > 0");
    if (j.contains("decode")) {
      const Json& d = j.at("decode");
      check_keys(d, {"policy", "subpixel", "cluster_gap_fraction", "low_quality_fraction"}, "config.decode");
      if (d.contains("policy")) c.decode.policy = polarity_policy_from_string(get<std::string>(d, "policy", "config.decode"));
      c.decode.subpixel = get_or<bool>(d, "subpixel", c.decode.subpixel, "config.decode");
      c.decode.cluster_gap_fraction =
          get_or<double>(d, "cluster_gap_fraction", c.decode.cluster_gap_fraction, "config.decode");
      c.decode.low_quality_fraction =
          get_or<double>(d, "low_quality_fraction", c.decode.low_quality_fraction, "config.decode");
    }
    if (j.contains("deflectometry")) {
      const Json& d = j.at("deflectometry");
      const std::string p = "config.deflectometry";
      check_keys(d,
                 {"init_depth_mm", "max_iter", "tol_mm", "integrator", "resolve_scale", "scale_min", "scale_max",
                  "outlier_sigma", "min_facing", "boundary_px"},
                 p);
      auto& o = c.deflectometry;
      o.init_depth = get_or<double>(d, "init_depth_mm", o.init_depth, p);
      o.max_iter = get_or<int>(d, "max_iter", o.max_iter, p);
      o.tol_mm = get_or<double>(d, "tol_mm", o.tol_mm, p);
      if (d.contains("integrator")) o.integrator = integrator_from_string(get<std::string>(d, "integrator", p));
      o.resolve_scale = get_or<bool>(d, "resolve_scale", o.resolve_scale, p);
      o.scale_min = get_or<double>(d, "scale_min", o.scale_min, p);
      o.scale_max = get_or<double>(d, "scale_max", o.scale_max, p);
      o.outlier_sigma = get_or<double>(d, "outlier_sigma", o.outlier_sigma, p);
      o.min_facing = get_or<double>(d, "min_facing", o.min_facing, p);
      o.boundary_px = get_or<double>(d, "boundary_px", o.boundary_px, p);
      o.validate();
    }
    c.output_dir = detail::resolve_relative(base_dir, get_or<std::string>(j, "output_dir", c.output_dir, "config"));
    if (j.contains("seed")) c.seed = get<std::uint64_t>(j, "seed", "config");
    if (j.contains("mode")) c.mode = mode_from_string(get<std::string>(j, "mode", "config"));
    c.workers = get_or<int>(j, "workers", c.workers, "config");
    if (c.workers < 0) throw Error(ErrorCode::config, "config.workers must be >= 0");
    if (j.contains("event_format")) {
      const auto f = get<std::string>(j, "event_format", "config");
      if (f != "binary" && f != "text") throw Error(ErrorCode::config, "config.event_format must be binary or text");
      c.binary_events = f == "binary";
    }
    return c;
  });
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  Json j;
  try {
    j = read_json_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::config, e.what());
  }
  return pipeline_config_from_json(j, std::filesystem::path(path).parent_path().string());
}

/// Failure of a named pipeline stage.
class StageError : public Error {
 public:
  StageError(std::string stage, ErrorCode cause, const std::string& what)
      : Error(cause, what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

template <typename F>
auto run_stage(const std::string& name, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e.code(), e.what());
  } catch (const std::exception& e) {
    throw StageError(name, ErrorCode::stage, e.what());
  }
}

// ---------------------------------------------------------------------------
// Effective inputs

struct Setup {
  SceneFile scene;
  CalibrationBundle calibration;
};

/// Scene with config overrides applied, plus the calibration used for reconstruction.
inline Setup effective_setup(const PipelineConfig& cfg) {
  Setup s;
  s.scene = detail::config_field(cfg.scene, [&] { return load_scene_file(cfg.scene); });
  s.scene.schedule = schedule_from_json(cfg.schedule_overrides, "config.schedule", s.scene.schedule);
  s.scene.noise = noise_from_json(cfg.noise_overrides, "config.noise", s.scene.noise);
  if (cfg.mode == Mode::diffuse_only) s.scene.schedule.sweeps = 1;
  if (cfg.seed) s.scene.noise.seed = *cfg.seed;
  s.scene.simulation.workers = cfg.workers;
  const int steps = s.scene.schedule.steps_per_sweep;
  if (s.scene.projector.width != steps || s.scene.projector.height != steps)
    s.scene.projector = resample_projector(s.scene.projector, steps);
  if (cfg.calibration == "from-scene") {
    s.calibration = {s.scene.camera, s.scene.projector};
  } else {
    s.calibration = detail::config_field(cfg.calibration, [&] { return bundle_from_json(read_json_file(cfg.calibration), cfg.calibration); });
    if (s.calibration.projector.width != steps || s.calibration.projector.height != steps)
      s.calibration.projector = resample_projector(s.calibration.projector, steps);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Stages

inline SimulationResult stage_simulate(const Setup& s) {
  return run_stage("simulate", [&] {
    return simulate_scan(s.scene.scene, s.scene.camera, s.scene.projector, s.scene.schedule, s.scene.noise,
                         s.scene.simulation, s.scene.sync);
  });
}

inline std::int64_t stage_scan_start(const Setup& s, const EventStream& events) {
  return run_stage("sync", [&] {
    if (!s.scene.sync.enabled) return s.scene.schedule.scan_start;
    SyncConfig cfg;
    cfg.known_offset = s.scene.sync.known_offset;
    cfg.burst_duration = s.scene.sync.burst_duration;
    return detect_scan_start(events, cfg);
  });
}

inline DecodeResult stage_decode(const PipelineConfig& cfg, const Setup& s, const EventStream& events,
                                 std::int64_t scan_start) {
  return run_stage("decode", [&] { return decode_scan(events, s.scene.schedule, scan_start, cfg.decode); });
}

inline std::vector<ClassifiedCorrespondence> stage_separate(const PipelineConfig& cfg, const Setup& s,
                                                            const std::vector<PixelCorrespondence>& table) {
  return run_stage("separate", [&] {
    const auto f = fundamental_from_models(s.calibration.camera, s.calibration.projector);
    return separate(table, f, cfg.tau_px);
  });
}

/// Mixed mode triangulates direct entries; diffuse-only mode takes every single-sweep entry.
inline TriangulationResult stage_triangulate(const PipelineConfig& cfg, const Setup& s,
                                             const std::vector<ClassifiedCorrespondence>& classified) {
  return run_stage("triangulate", [&] {
    return triangulate_direct(classified, s.calibration.camera, s.calibration.projector,
                              TriangulationOptions{cfg.g_max_mm});
  });
}

inline std::vector<ClassifiedCorrespondence> as_direct(const std::vector<PixelCorrespondence>& table) {
  std::vector<ClassifiedCorrespondence> out;
  out.reserve(table.size());
  for (const auto& c : table) out.push_back({c, CorrespondenceClass::direct, 0.0});
  return out;
}

struct DeflectOutcome {
  ScreenBinding binding;
  std::optional<DeflectometryResult> result;
  std::string skipped;
};

inline DeflectOutcome stage_deflect(const PipelineConfig& cfg, const Setup& s,
                                    const std::vector<ClassifiedCorrespondence>& classified,
                                    const std::vector<DiffusePoint>& diffuse) {
  return run_stage("deflect", [&] {
    DeflectOutcome out;
    const VirtualScreen screen = build_virtual_screen(diffuse);
    out.binding = bind_screen(classified, screen);
    if (out.binding.bound.empty()) {
      out.skipped = "no indirect correspondence binds to the virtual screen";
      return out;
    }
    DeflectometryOptions o = cfg.deflectometry;
    if (o.init_depth <= 0.0)
      o.init_depth = default_init_depth(diffuse, s.calibration.camera, out.binding.bound, o.boundary_px);
    try {
      out.result = iterative_shape(out.binding.bound, s.calibration.camera, o);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::empty_mask) throw;
      out.skipped = std::string("no usable specular cell (") + e.what() + ")";
    }
    return out;
  });
}

// ---------------------------------------------------------------------------
// Metrics

/// Per-object evaluation of a cloud: points go to the object with the nearest analytic surface.
inline Json evaluate_cloud(const std::vector<Vec3>& points, const Scene& scene, double assign_mm = 5.0) {
  Json out = Json::object();
  std::vector<std::vector<Vec3>> groups(scene.objects.size());
  std::size_t unassigned = 0;
  for (const auto& p : points) {
    int best = -1;
    double best_d = assign_mm;
    for (std::size_t k = 0; k < scene.objects.size(); ++k) {
      const double d = std::abs(surface_distance(scene.objects[k], p));
      if (d <= best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    if (best < 0)
      ++unassigned;
    else
      groups[best].push_back(p);
  }
  Json objects = Json::object();
  for (std::size_t k = 0; k < scene.objects.size(); ++k) {
    const auto& pts = groups[k];
    if (pts.empty()) continue;
    const SceneObject& obj = scene.objects[k];
    Json o{{"points", pts.size()}};
    double truth = 0.0;
    for (const auto& p : pts) truth += std::pow(surface_distance(obj, p), 2);
    o["rmse_to_truth_mm"] = std::sqrt(truth / pts.size());
    auto fit_json = [&](const FitReport& f) {
      Json fj{{"model", std::string(to_string(f.model))},
              {"rmse_mm", f.rmse},
              {"inliers", f.inlier_count},
              {"rejected_fraction", f.rejected_fraction}};
      if (f.model == FitModel::plane) {
        fj["point"] = json_io::to_json(f.point);
        fj["normal"] = json_io::to_json(f.normal);
      } else {
        fj["center"] = json_io::to_json(f.center);
        fj["radius_mm"] = f.radius;
      }
      return fj;
    };
    try {
      std::optional<FitReport> fit, robust;
      if (std::holds_alternative<Sphere>(obj.shape)) {
        fit = fit_sphere(pts);
        robust = fit_sphere(pts, FitOptions{6.0, 10});
        o["true_radius_mm"] = std::get<Sphere>(obj.shape).radius;
      } else if (std::holds_alternative<Plane>(obj.shape)) {
        fit = fit_plane(pts);
        robust = fit_plane(pts, FitOptions{6.0, 10});
      }
      if (fit) {
        o["fit"] = fit_json(*fit);
        o["precision_mm"] = precision(pts, *fit);
        o["fit_6sigma"] = fit_json(*robust);
      }
    } catch (const Error& e) {
      o["fit_error"] = e.what();
    }
    objects[obj.label] = o;
  }
  out["points"] = points.size();
  out["unassigned"] = unassigned;
  out["objects"] = objects;
  return out;
}

inline Json classification_json(const ClassificationScore& s) {
  auto cls = [](const ClassScore& c) {
    return Json{{"true_positive", c.true_positive},
                {"false_positive", c.false_positive},
                {"false_negative", c.false_negative},
                {"precision", c.precision()},
                {"recall", c.recall()}};
  };
  Json confusion = Json::object();
  const char* pred[3] = {"direct", "indirect", "rejected"};
  for (int p = 0; p < 3; ++p)
    confusion[pred[p]] = Json{{"truth_direct", s.confusion[p][0]}, {"truth_indirect", s.confusion[p][1]}};
  return Json{{"direct", cls(s.direct)}, {"indirect", cls(s.indirect)}, {"confusion", confusion}, {"excluded", s.excluded}};
}

inline std::vector<Vec3> positions(const std::vector<DiffusePoint>& pts) {
  std::vector<Vec3> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(p.position);
  return out;
}

struct MetricsInputs {
  const std::vector<DiffusePoint>* diffuse = nullptr;
  const std::vector<DiffusePoint>* specular = nullptr;
  const std::vector<ClassifiedCorrespondence>* classified = nullptr;
  const EventStream* events = nullptr;
  const GroundTruth* truth = nullptr;
};

inline Json stage_metrics(const Scene& scene, const MetricsInputs& in) {
  return run_stage("metrics", [&] {
    Json m = Json::object();
    if (in.diffuse) m["diffuse"] = evaluate_cloud(positions(*in.diffuse), scene);
    if (in.specular) m["specular"] = evaluate_cloud(positions(*in.specular), scene);
    if (in.classified && in.events && in.truth && !in.classified->empty())
      m["classification"] = classification_json(classification_score(*in.classified, *in.events, *in.truth));
    return m;
  });
}

// ---------------------------------------------------------------------------
// Artifact writers

namespace detail {

template <typename W>
void write_file(const std::filesystem::path& path, W&& writer) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  writer(out);
  if (!out) throw Error(ErrorCode::io, "write failed: " + path.string());
}

}  // namespace detail

inline void write_rejections(std::ostream& out, const std::vector<Rejection>& rejections) {
  out << "# index reason\n";
  for (const auto& r : rejections) out << r.index << ' ' << r.reason << '\n';
}

inline void write_fail_marker(const std::filesystem::path& dir, const StageError& e) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::ofstream out(dir / "FAILED", std::ios::binary);
  out << "stage: " << e.stage() << "\ncode: " << to_string(e.code()) << "\nmessage: " << e.what() << '\n';
}

struct RunReport {
  std::size_t events = 0;
  std::size_t correspondences = 0;
  std::size_t direct = 0;
  std::size_t indirect = 0;
  std::size_t rejected = 0;
  std::size_t diffuse_points = 0;
  std::size_t specular_points = 0;
  std::int64_t scan_start = 0;
  std::vector<std::string> artifacts;
  Json metrics;
};

/// Runs simulate -> decode -> separate -> triangulate -> deflect -> metrics, writing every
/// intermediate into cfg.output_dir. Throws StageError after writing a FAILED marker.
inline RunReport run_pipeline(const PipelineConfig& cfg, std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  const fs::path dir(cfg.output_dir);
  RunReport report;
  auto note = [&](const std::string& what) {
    if (log) *log << "[evsl] " << what << '\n';
  };
  auto artifact = [&](const std::string& name, auto&& writer) {
    detail::write_file(dir / name, writer);
    report.artifacts.push_back(name);
  };
  auto clock = std::chrono::steady_clock::now();
  auto lap = [&](const std::string& stage) {
    const auto now = std::chrono::steady_clock::now();
    note(stage + " " + std::to_string(std::chrono::duration<double>(now - clock).count()) + " s");
    clock = now;
  };

  try {
    const Setup setup = effective_setup(cfg);
    run_stage("output", [&] {
      fs::create_directories(dir);
      fs::remove(dir / "FAILED");
      return 0;
    });

    const SimulationResult sim = stage_simulate(setup);
    const std::string events_name = cfg.binary_events ? "events.bin" : "events.txt";
    run_stage("simulate", [&] {
      artifact(events_name, [&](std::ostream& o) {
        cfg.binary_events ? write_events_binary(o, sim.events) : write_events_text(o, sim.events);
      });
      artifact("truth.txt", [&](std::ostream& o) { write_ground_truth(o, sim.truth); });
      return 0;
    });
    report.events = sim.events.size();
    if (sim.empty_warning) note("warning: the laser lit nothing visible; event stream is empty");
    lap("simulate");

    report.scan_start = stage_scan_start(setup, sim.events);
    const DecodeResult decoded = stage_decode(cfg, setup, sim.events, report.scan_start);
    run_stage("decode", [&] {
      artifact("correspondences.txt", [&](std::ostream& o) { write_correspondences(o, decoded.correspondences); });
      return 0;
    });
    report.correspondences = decoded.correspondences.size();
    if (decoded.correspondences.empty()) note("warning: decode produced no correspondences");
    lap("decode");

    std::vector<ClassifiedCorrespondence> classified;
    if (cfg.mode == Mode::mixed) {
      classified = stage_separate(cfg, setup, decoded.correspondences);
      run_stage("separate", [&] {
        artifact("classified.txt", [&](std::ostream& o) { write_classified(o, classified); });
        return 0;
      });
      lap("separate");
    } else {
      classified = as_direct(decoded.correspondences);
    }
    for (const auto& c : classified) {
      if (c.cls == CorrespondenceClass::direct) ++report.direct;
      if (c.cls == CorrespondenceClass::indirect) ++report.indirect;
      if (c.cls == CorrespondenceClass::rejected) ++report.rejected;
    }

    const TriangulationResult tri = stage_triangulate(cfg, setup, classified);
    run_stage("triangulate", [&] {
      artifact("diffuse.ply", [&](std::ostream& o) { write_points_ply(o, tri.points); });
      artifact("rejections.txt", [&](std::ostream& o) { write_rejections(o, tri.rejections); });
      if (cfg.mode == Mode::mixed)
        artifact("screen.txt", [&](std::ostream& o) { write_virtual_screen(o, build_virtual_screen(tri.points)); });
      return 0;
    });
    report.diffuse_points = tri.points.size();
    lap("triangulate");

    std::optional<DeflectOutcome> deflect;
    std::vector<DiffusePoint> specular;
    if (cfg.mode == Mode::mixed) {
      const auto diffuse = run_stage("deflect", [&] { return load_points_ply((dir / "diffuse.ply").string()); });
      deflect = stage_deflect(cfg, setup, classified, diffuse);
      if (deflect->result) {
        specular = surface_points(deflect->result->surface, setup.calibration.camera);
        run_stage("deflect", [&] {
          artifact("specular.ply", [&](std::ostream& o) { write_points_ply(o, specular); });
          artifact("normals.pfm", [&](std::ostream& o) { write_normals_pfm(o, deflect->result->normals); });
          artifact("normals_mask.pgm", [&](std::ostream& o) { write_mask_pgm(o, deflect->result->normals); });
          artifact("residuals.txt", [&](std::ostream& o) { write_residual_history(o, deflect->result->surface); });
          return 0;
        });
      } else {
        note("deflectometry skipped: " + deflect->skipped);
      }
      report.specular_points = specular.size();
      lap("deflect");
    }

    MetricsInputs mi;
    mi.diffuse = &tri.points;
    if (deflect && deflect->result) mi.specular = &specular;
    if (cfg.mode == Mode::mixed) {
      mi.classified = &classified;
      mi.events = &sim.events;
      mi.truth = &sim.truth;
    }
    report.metrics = stage_metrics(setup.scene.scene, mi);
    Json stats{{"events", report.events},
               {"distinct_projector_slots", sim.distinct_slots},
               {"lit_pixels", sim.lit_pixels},
               {"scan_start_us", report.scan_start},
               {"assigned_events", decoded.assigned},
               {"recovery_discarded", decoded.recovery_discarded},
               {"outside_discarded", decoded.outside_discarded},
               {"correspondences", report.correspondences},
               {"direct", report.direct},
               {"indirect", report.indirect},
               {"rejected", report.rejected},
               {"diffuse_points", report.diffuse_points},
               {"gap_rejections", tri.rejections.size()}};
    if (deflect) {
      Json d{{"bound", deflect->binding.bound.size()}, {"uncovered", deflect->binding.uncovered}};
      if (deflect->result) {
        const auto& r = *deflect->result;
        d["init_depth_mm"] = r.init_depth;
        d["anchor_scale"] = r.anchor_scale;
        d["cells"] = r.cells;
        d["facing_masked"] = r.facing_masked;
        d["rejected_cells"] = r.rejected_cells;
        d["rejected_fraction"] = r.rejected_fraction();
        d["iterations"] = r.surface.iterations;
        d["converged"] = r.surface.converged;
        d["integrability_rms"] = r.integrability_rms;
      } else {
        d["skipped"] = deflect->skipped;
      }
      stats["deflectometry"] = d;
    }
    run_stage("metrics", [&] {
      artifact("metrics.json", [&](std::ostream& o) { o << Json{{"run", stats}, {"metrics", report.metrics}}.dump(2) << '\n'; });
      return 0;
    });
    lap("metrics");

    report.artifacts.push_back("manifest.json");
    const Json manifest{{"tool", "evsl"},
                        {"version", kVersion},
                        {"seed", setup.scene.noise.seed},
                        {"mode", std::string(to_string(cfg.mode))},
                        {"config", cfg.to_json()},
                        {"scene", scene_file_to_json(setup.scene)},
                        {"calibration", bundle_to_json(setup.calibration)},
                        {"scan_start_us", report.scan_start},
                        {"artifacts", report.artifacts}};
    run_stage("manifest", [&] {
      detail::write_file(dir / "manifest.json", [&](std::ostream& o) { o << manifest.dump(2) << '\n'; });
      return 0;
    });
  } catch (const StageError& e) {
    write_fail_marker(dir, e);
    throw;
  }
  return report;
}

}  // namespace evsl
