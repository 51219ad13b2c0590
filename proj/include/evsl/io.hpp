#pragma once

#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evsl/calibration.hpp"
#include "evsl/error.hpp"
#include "evsl/events.hpp"
#include "evsl/geometry.hpp"
#include "evsl/scene.hpp"
#include "evsl/simulator.hpp"

namespace evsl {

using Json = nlohmann::ordered_json;

namespace json_io {

inline void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& path) {
  if (!j.is_object()) throw Error(ErrorCode::schema, path + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items())
    if (!ok.count(key)) throw Error(ErrorCode::schema, path + ": unknown key '" + key + "'");
}

template <typename T>
T get(const Json& j, const char* key, const std::string& path) {
  if (!j.contains(key)) throw Error(ErrorCode::schema, path + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema, path + "." + key + ": " + e.what());
  }
}

template <typename T>
T get_or(const Json& j, const char* key, T fallback, const std::string& path) {
  return j.contains(key) ? get<T>(j, key, path) : fallback;
}

inline Vec3 vec3(const Json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::schema, path + ": expected [x, y, z]");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw Error(ErrorCode::schema, path + ": expected numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

inline Vec3 vec3(const Json& j, const char* key, const std::string& path) {
  if (!j.contains(key)) throw Error(ErrorCode::schema, path + ": missing key '" + key + "'");
  return vec3(j.at(key), path + "." + key);
}

inline Json to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }
inline Json to_json(const Vec2& v) { return Json::array({v.x(), v.y()}); }

inline Vec2 vec2(const Json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw Error(ErrorCode::schema, path + ": expected [x, y]");
  return Vec2(j[0].get<double>(), j[1].get<double>());
}

}  // namespace json_io

// ---------------------------------------------------------------------------
// Pinhole models

inline Json model_to_json(const PinholeModel& m) {
  Json rot = Json::array();
  for (int r = 0; r < 3; ++r) rot.push_back(Json::array({m.rotation(r, 0), m.rotation(r, 1), m.rotation(r, 2)}));
  return Json{{"fx", m.fx},       {"fy", m.fy},         {"cx", m.cx},
              {"cy", m.cy},       {"skew", m.skew},     {"width", m.width},
              {"height", m.height}, {"k1", m.k1},       {"rotation", rot},
              {"translation", json_io::to_json(m.translation)}};
}

/// Pose is given either as rotation + translation or as look_at {eye, target, up}.
inline PinholeModel model_from_json(const Json& j, const std::string& path) {
  using namespace json_io;
  check_keys(j, {"fx", "fy", "cx", "cy", "skew", "width", "height", "k1", "rotation", "translation", "look_at"}, path);
  PinholeModel m;
  m.fx = get<double>(j, "fx", path);
  m.fy = get<double>(j, "fy", path);
  m.cx = get<double>(j, "cx", path);
  m.cy = get<double>(j, "cy", path);
  m.skew = get_or<double>(j, "skew", 0.0, path);
  m.width = get<int>(j, "width", path);
  m.height = get<int>(j, "height", path);
  m.k1 = get_or<double>(j, "k1", 0.0, path);
  if (j.contains("look_at")) {
    if (j.contains("rotation") || j.contains("translation"))
      throw Error(ErrorCode::schema, path + ": give either look_at or rotation/translation");
    const Json& la = j.at("look_at");
    check_keys(la, {"eye", "target", "up"}, path + ".look_at");
    const Vec3 up = la.contains("up") ? vec3(la, "up", path + ".look_at") : Vec3(0, -1, 0);
    set_pose_look_at(m, vec3(la, "eye", path + ".look_at"), vec3(la, "target", path + ".look_at"), up);
  } else {
    if (j.contains("rotation")) {
      const Json& r = j.at("rotation");
      if (!r.is_array() || r.size() != 3) throw Error(ErrorCode::schema, path + ".rotation: expected 3x3 rows");
      for (int i = 0; i < 3; ++i) m.rotation.row(i) = vec3(r[i], path + ".rotation").transpose();
    }
    if (j.contains("translation")) m.translation = vec3(j, "translation", path);
  }
  try {
    m.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::schema, path + ": " + e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Scene file

struct SceneFile {
  Scene scene;
  PinholeModel camera;
  PinholeModel projector;
  ScanSchedule schedule;
  NoiseModel noise;
  SyncBurst sync;
  SimulationOptions simulation;
};

inline Json schedule_to_json(const ScanSchedule& s) {
  return Json{{"steps_per_sweep", s.steps_per_sweep}, {"sweep_duration_us", s.sweep_duration},
              {"recovery_time_us", s.recovery_time},  {"scan_start_us", s.scan_start},
              {"sweeps", s.sweeps},                   {"timing", s.timing == Timing::stepped ? "stepped" : "continuous"}};
}

inline ScanSchedule schedule_from_json(const Json& j, const std::string& path, ScanSchedule s = {}) {
  using namespace json_io;
  check_keys(j, {"steps_per_sweep", "sweep_duration_us", "recovery_time_us", "scan_start_us", "sweeps", "timing"},
             path);
  s.steps_per_sweep = get_or<int>(j, "steps_per_sweep", s.steps_per_sweep, path);
  s.sweep_duration = get_or<std::int64_t>(j, "sweep_duration_us", s.sweep_duration, path);
  s.recovery_time = get_or<std::int64_t>(j, "recovery_time_us", s.recovery_time, path);
  s.scan_start = get_or<std::int64_t>(j, "scan_start_us", s.scan_start, path);
  s.sweeps = get_or<int>(j, "sweeps", s.sweeps, path);
  if (j.contains("timing")) {
    const auto t = get<std::string>(j, "timing", path);
    if (t == "stepped")
      s.timing = Timing::stepped;
    else if (t == "continuous")
      s.timing = Timing::continuous;
    else
      throw Error(ErrorCode::schema, path + ".timing: expected 'continuous' or 'stepped'");
  }
  try {
    s.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::schema, path + ": " + e.what());
  }
  return s;
}

inline Json noise_to_json(const NoiseModel& n) {
  return Json{{"timestamp_jitter_sigma_us", n.timestamp_jitter_sigma},
              {"spurious_rate", n.spurious_rate},
              {"drop_probability", n.drop_probability},
              {"seed", n.seed}};
}

inline NoiseModel noise_from_json(const Json& j, const std::string& path, NoiseModel n = {}) {
  using namespace json_io;
  check_keys(j, {"timestamp_jitter_sigma_us", "spurious_rate", "drop_probability", "seed"}, path);
  n.timestamp_jitter_sigma = get_or<double>(j, "timestamp_jitter_sigma_us", n.timestamp_jitter_sigma, path);
  n.spurious_rate = get_or<double>(j, "spurious_rate", n.spurious_rate, path);
  n.drop_probability = get_or<double>(j, "drop_probability", n.drop_probability, path);
  n.seed = get_or<std::uint64_t>(j, "seed", n.seed, path);
  try {
    n.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::schema, path + ": " + e.what());
  }
  return n;
}

inline Json sync_to_json(const SyncBurst& s) {
  return Json{{"enabled", s.enabled},
              {"known_offset_us", s.known_offset},
              {"burst_duration_us", s.burst_duration},
              {"count", s.count},
              {"jitter_sigma_us", s.jitter_sigma}};
}

inline SyncBurst sync_from_json(const Json& j, const std::string& path) {
  using namespace json_io;
  check_keys(j, {"enabled", "known_offset_us", "burst_duration_us", "count", "jitter_sigma_us"}, path);
  SyncBurst s;
  s.enabled = get_or<bool>(j, "enabled", s.enabled, path);
  s.known_offset = get_or<std::int64_t>(j, "known_offset_us", s.known_offset, path);
  s.burst_duration = get_or<std::int64_t>(j, "burst_duration_us", s.burst_duration, path);
  s.count = get_or<int>(j, "count", s.count, path);
  s.jitter_sigma = get_or<double>(j, "jitter_sigma_us", s.jitter_sigma, path);
  try {
    s.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::schema, path + ": " + e.what());
  }
  return s;
}

inline Json simulation_to_json(const SimulationOptions& o) {
  return Json{{"max_bounces", o.max_bounces},
              {"specular_first", o.specular_first},
              {"raster", o.raster},
              {"epipolar_annotation_px", o.epipolar_annotation_px}};
}

inline SimulationOptions simulation_from_json(const Json& j, const std::string& path) {
  using namespace json_io;
  check_keys(j, {"max_bounces", "specular_first", "raster", "epipolar_annotation_px"}, path);
  SimulationOptions o;
  o.max_bounces = get_or<int>(j, "max_bounces", o.max_bounces, path);
  o.specular_first = get_or<bool>(j, "specular_first", o.specular_first, path);
  o.raster = get_or<bool>(j, "raster", o.raster, path);
  o.epipolar_annotation_px = get_or<double>(j, "epipolar_annotation_px", o.epipolar_annotation_px, path);
  try {
    o.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::schema, path + ": " + e.what());
  }
  return o;
}

inline Json material_to_json(const Material& m) {
  return Json{{"kind", std::string(to_string(m.kind))},
              {"diffuse_albedo", m.diffuse_albedo},
              {"specular_strength", m.specular_strength}};
}

inline Material material_from_json(const Json& j, const std::string& path) {
  using namespace json_io;
  check_keys(j, {"kind", "diffuse_albedo", "specular_strength"}, path);
  const auto kind = get<std::string>(j, "kind", path);
  Material m;
  if (kind == "diffuse")
    m = Material::diffuse();
  else if (kind == "specular")
    m = Material::specular();
  else if (kind == "shiny")
    m = Material::shiny(0.5, 0.5);
  else
    throw Error(ErrorCode::schema, path + ".kind: expected diffuse, specular or shiny");
  m.diffuse_albedo = get_or<double>(j, "diffuse_albedo", m.diffuse_albedo, path);
  m.specular_strength = get_or<double>(j, "specular_strength", m.specular_strength, path);
  try {
    m.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::schema, path + ": " + e.what());
  }
  return m;
}

inline Json object_to_json(const SceneObject& o) {
  Json j{{"label", o.label}, {"material", material_to_json(o.material)}};
  if (const auto* p = std::get_if<Plane>(&o.shape)) {
    j["plane"] = Json{{"point", json_io::to_json(p->point)},
                      {"normal", json_io::to_json(p->normal)},
                      {"u_axis", json_io::to_json(p->u_axis)},
                      {"half_u", p->half_u},
                      {"half_v", p->half_v}};
  } else if (const auto* s = std::get_if<Sphere>(&o.shape)) {
    j["sphere"] = Json{{"center", json_io::to_json(s->center)}, {"radius", s->radius}};
  } else {
    const auto& mesh = std::get<Mesh>(o.shape);
    Json v = Json::array(), f = Json::array();
    for (const auto& p : mesh.vertices()) v.push_back(json_io::to_json(p));
    for (const auto& face : mesh.faces()) f.push_back(Json::array({face[0], face[1], face[2]}));
    j["mesh"] = Json{{"vertices", v}, {"faces", f}};
  }
  return j;
}

inline SceneObject object_from_json(const Json& j, const std::string& path) {
  using namespace json_io;
  check_keys(j, {"label", "material", "plane", "sphere", "mesh"}, path);
  SceneObject o;
  o.label = get<std::string>(j, "label", path);
  if (o.label.empty() || o.label.find_first_of(" \t\r\n") != std::string::npos)
    throw Error(ErrorCode::schema, path + ".label: must be non-empty without whitespace");
  if (!j.contains("material")) throw Error(ErrorCode::schema, path + ": missing key 'material'");
  o.material = material_from_json(j.at("material"), path + ".material");
  const int shapes = int(j.contains("plane")) + int(j.contains("sphere")) + int(j.contains("mesh"));
  if (shapes != 1) throw Error(ErrorCode::schema, path + ": exactly one of plane, sphere, mesh is required");
  if (j.contains("plane")) {
    const Json& p = j.at("plane");
    const std::string pp = path + ".plane";
    check_keys(p, {"point", "normal", "u_axis", "half_u", "half_v"}, pp);
    Plane pl;
    pl.point = vec3(p, "point", pp);
    const Vec3 n = vec3(p, "normal", pp);
    if (!(n.norm() > 0.0)) throw Error(ErrorCode::schema, pp + ".normal: zero vector");
    pl.normal = std::abs(n.norm() - 1.0) <= 1e-12 ? n : Vec3(n.normalized());
    if (p.contains("u_axis")) {
      Vec3 u = vec3(p, "u_axis", pp);
      if (std::abs(u.dot(pl.normal)) > 1e-12 || std::abs(u.norm() - 1.0) > 1e-12) {
        u -= u.dot(pl.normal) * pl.normal;
        if (!(u.norm() > 0.0)) throw Error(ErrorCode::schema, pp + ".u_axis: parallel to the normal");
        u.normalize();
      }
      pl.u_axis = u;
    } else {
      pl.u_axis = Plane::default_u_axis(pl.normal);
    }
    pl.half_u = get_or<double>(p, "half_u", 0.0, pp);
    pl.half_v = get_or<double>(p, "half_v", 0.0, pp);
    o.shape = pl;
  } else if (j.contains("sphere")) {
    const Json& s = j.at("sphere");
    check_keys(s, {"center", "radius"}, path + ".sphere");
    o.shape = Sphere{vec3(s, "center", path + ".sphere"), get<double>(s, "radius", path + ".sphere")};
  } else {
    const Json& m = j.at("mesh");
    check_keys(m, {"vertices", "faces"}, path + ".mesh");
    std::vector<Vec3> verts;
    std::vector<std::array<int, 3>> faces;
    for (const auto& v : get<Json>(m, "vertices", path + ".mesh")) verts.push_back(vec3(v, path + ".mesh.vertices"));
    for (const auto& f : get<Json>(m, "faces", path + ".mesh")) {
      if (!f.is_array() || f.size() != 3) throw Error(ErrorCode::schema, path + ".mesh.faces: expected index triples");
      faces.push_back({f[0].get<int>(), f[1].get<int>(), f[2].get<int>()});
    }
    try {
      o.shape = Mesh(std::move(verts), std::move(faces));
    } catch (const Error& e) {
      throw Error(ErrorCode::schema, path + ".mesh: " + e.what());
    }
  }
  try {
    o.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::schema, path + ": " + e.what());
  }
  return o;
}

inline Json scene_file_to_json(const SceneFile& s) {
  Json objects = Json::array();
  for (const auto& o : s.scene.objects) objects.push_back(object_to_json(o));
  return Json{{"camera", model_to_json(s.camera)},          {"projector", model_to_json(s.projector)},
              {"schedule", schedule_to_json(s.schedule)},   {"noise", noise_to_json(s.noise)},
              {"sync", sync_to_json(s.sync)},               {"simulation", simulation_to_json(s.simulation)},
              {"objects", objects}};
}

inline SceneFile scene_file_from_json(const Json& j, const std::string& path = "scene") {
  using namespace json_io;
  check_keys(j, {"camera", "projector", "schedule", "noise", "sync", "simulation", "objects"}, path);
  SceneFile s;
  s.camera = model_from_json(get<Json>(j, "camera", path), path + ".camera");
  s.projector = model_from_json(get<Json>(j, "projector", path), path + ".projector");
  if (j.contains("schedule")) s.schedule = schedule_from_json(j.at("schedule"), path + ".schedule");
  if (j.contains("noise")) s.noise = noise_from_json(j.at("noise"), path + ".noise");
  if (j.contains("sync")) s.sync = sync_from_json(j.at("sync"), path + ".sync");
  if (j.contains("simulation")) s.simulation = simulation_from_json(j.at("simulation"), path + ".simulation");
  const Json objects = get<Json>(j, "objects", path);
  if (!objects.is_array()) throw Error(ErrorCode::schema, path + ".objects: expected an array");
  for (std::size_t i = 0; i < objects.size(); ++i)
    s.scene.objects.push_back(object_from_json(objects[i], path + ".objects[" + std::to_string(i) + "]"));
  return s;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::parse, path + ": " + e.what());
  }
}

inline void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path);
  out << j.dump(2) << '\n';
}

inline SceneFile load_scene_file(const std::string& path) { return scene_file_from_json(read_json_file(path), path); }

// ---------------------------------------------------------------------------
// Calibration bundle: both models; the fundamental matrix is always recomputed.

struct CalibrationBundle {
  PinholeModel camera;
  PinholeModel projector;
};

inline Json bundle_to_json(const CalibrationBundle& b) {
  return Json{{"camera", model_to_json(b.camera)}, {"projector", model_to_json(b.projector)}};
}

inline CalibrationBundle bundle_from_json(const Json& j, const std::string& path = "calibration") {
  json_io::check_keys(j, {"camera", "projector"}, path);
  return {model_from_json(json_io::get<Json>(j, "camera", path), path + ".camera"),
          model_from_json(json_io::get<Json>(j, "projector", path), path + ".projector")};
}

// ---------------------------------------------------------------------------
// Checkerboard observations

inline Json observations_to_json(const std::vector<CheckerboardObservation>& obs) {
  Json boards = Json::array();
  for (const auto& o : obs) {
    Json cam = Json::array(), board = Json::array(), proj = Json::array();
    for (const auto& p : o.corners_camera) cam.push_back(json_io::to_json(p));
    for (const auto& p : o.corners_board) board.push_back(json_io::to_json(p));
    for (const auto& p : o.corners_projector) proj.push_back(json_io::to_json(p));
    Json b{{"board_id", o.board_id}, {"corners_board", board}, {"corners_camera", cam}};
    if (!o.corners_projector.empty()) b["corners_projector"] = proj;
    boards.push_back(b);
  }
  return Json{{"boards", boards}};
}

inline std::vector<CheckerboardObservation> observations_from_json(const Json& j, const std::string& path = "boards") {
  using namespace json_io;
  check_keys(j, {"boards"}, path);
  std::vector<CheckerboardObservation> out;
  const Json boards = get<Json>(j, "boards", path);
  for (std::size_t i = 0; i < boards.size(); ++i) {
    const std::string bp = path + ".boards[" + std::to_string(i) + "]";
    check_keys(boards[i], {"board_id", "corners_board", "corners_camera", "corners_projector"}, bp);
    CheckerboardObservation o;
    o.board_id = get<int>(boards[i], "board_id", bp);
    for (const auto& p : get<Json>(boards[i], "corners_board", bp)) o.corners_board.push_back(vec2(p, bp));
    for (const auto& p : get<Json>(boards[i], "corners_camera", bp)) o.corners_camera.push_back(vec2(p, bp));
    if (boards[i].contains("corners_projector"))
      for (const auto& p : boards[i].at("corners_projector")) o.corners_projector.push_back(vec2(p, bp));
    try {
      o.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::schema, bp + ": " + e.what());
    }
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace evsl
