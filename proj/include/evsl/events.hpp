#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "evsl/error.hpp"
#include "evsl/geometry.hpp"

namespace evsl {

struct Event {
  std::int64_t t = 0;  // microseconds
  int x = 0;
  int y = 0;
  int polarity = 1;

  friend bool operator==(const Event&, const Event&) = default;
};

/// Stream order: timestamp, then row, column, polarity.
inline bool event_less(const Event& a, const Event& b) {
  if (a.t != b.t) return a.t < b.t;
  if (a.y != b.y) return a.y < b.y;
  if (a.x != b.x) return a.x < b.x;
  return a.polarity < b.polarity;
}

using EventStream = std::vector<Event>;

enum class SweepKind { vertical = 0, horizontal = 1 };

inline std::string_view to_string(SweepKind s) { return s == SweepKind::vertical ? "vertical" : "horizontal"; }

/// How laser crossings map to timestamps.
///   stepped:    the line dwells on integer projector positions k; onset at ceil(k * step).
///   continuous: the line moves continuously; a point at projector coordinate u fires at round(u * step).
enum class Timing { continuous, stepped };

struct ScanSchedule {
  int steps_per_sweep = 801;
  std::int64_t sweep_duration = 30000;
  std::int64_t recovery_time = 5000;
  std::int64_t scan_start = 10000;
  int sweeps = 2;
  Timing timing = Timing::continuous;

  void validate() const {
    if (steps_per_sweep < 2) throw Error(ErrorCode::invalid_argument, "schedule: steps_per_sweep must be >= 2");
    if (sweep_duration <= 0) throw Error(ErrorCode::invalid_argument, "schedule: sweep_duration must be > 0");
    if (recovery_time < 0) throw Error(ErrorCode::invalid_argument, "schedule: recovery_time must be >= 0");
    if (sweeps != 1 && sweeps != 2) throw Error(ErrorCode::invalid_argument, "schedule: sweeps must be 1 or 2");
  }

  double step_duration() const { return static_cast<double>(sweep_duration) / steps_per_sweep; }

  std::int64_t sweep_start(SweepKind s, std::int64_t start) const {
    return s == SweepKind::vertical ? start : start + sweep_duration + recovery_time;
  }
  std::int64_t sweep_start(SweepKind s) const { return sweep_start(s, scan_start); }

  std::int64_t total_duration() const { return sweeps * (sweep_duration + recovery_time); }

  /// Whether projector coordinate u is swept at all.
  bool lit(double u) const {
    if (timing == Timing::stepped) {
      const double k = std::round(u);
      return k >= 0.0 && k < steps_per_sweep;
    }
    return u >= 0.0 && u < steps_per_sweep;
  }

  /// Onset time offset (from the sweep start) of the line reaching coordinate u.
  std::int64_t crossing_offset(double u) const {
    if (timing == Timing::stepped) return static_cast<std::int64_t>(std::ceil(std::round(u) * step_duration()));
    return std::llround(u * step_duration());
  }

  std::int64_t onset_time(SweepKind s, double u) const { return sweep_start(s) + crossing_offset(u); }
  std::int64_t offset_time(SweepKind s, double u) const { return sweep_start(s) + crossing_offset(u + 1.0); }
};

// ---------------------------------------------------------------------------
// Event stream files

inline void write_events_text(std::ostream& out, const EventStream& events) {
  char buf[64];
  for (const auto& e : events) {
    const int n = std::snprintf(buf, sizeof buf, "%lld %d %d %d\n", static_cast<long long>(e.t), e.x, e.y, e.polarity);
    out.write(buf, n);
  }
}

namespace detail {

inline Error schema_error(const std::string& source, std::size_t line, const std::string& field,
                          const std::string& what) {
  return Error(ErrorCode::schema, source + ":" + std::to_string(line) + ": field '" + field + "': " + what);
}

template <typename T>
T parse_field(std::istringstream& in, const std::string& source, std::size_t line, const char* field) {
  T value{};
  if (!(in >> value)) throw schema_error(source, line, field, "missing or malformed value");
  return value;
}

inline void expect_end(std::istringstream& in, const std::string& source, std::size_t line) {
  std::string extra;
  if (in >> extra) throw schema_error(source, line, "<end>", "unexpected trailing token '" + extra + "'");
}

inline bool skip_line(const std::string& line) {
  const auto pos = line.find_first_not_of(" \t\r");
  return pos == std::string::npos || line[pos] == '#';
}

}  // namespace detail

inline EventStream read_events_text(std::istream& in, const std::string& source = "<events>") {
  EventStream events;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (detail::skip_line(line)) continue;
    std::istringstream fields(line);
    Event e;
    e.t = detail::parse_field<long long>(fields, source, number, "t_us");
    e.x = detail::parse_field<int>(fields, source, number, "x");
    e.y = detail::parse_field<int>(fields, source, number, "y");
    e.polarity = detail::parse_field<int>(fields, source, number, "polarity");
    detail::expect_end(fields, source, number);
    if (e.t < 0) throw detail::schema_error(source, number, "t_us", "negative timestamp");
    if (e.x < 0 || e.y < 0) throw detail::schema_error(source, number, "x/y", "negative pixel coordinate");
    if (e.polarity != 1 && e.polarity != -1) throw detail::schema_error(source, number, "polarity", "must be +1 or -1");
    if (!events.empty() && event_less(e, events.back()))
      throw detail::schema_error(source, number, "t_us", "stream is not sorted");
    events.push_back(e);
  }
  return events;
}

/// 16-byte little-endian records: u64 t, u16 x, u16 y, i8 polarity, 3 pad bytes.
inline void write_events_binary(std::ostream& out, const EventStream& events) {
  unsigned char rec[16];
  for (const auto& e : events) {
    std::fill(std::begin(rec), std::end(rec), 0);
    const auto t = static_cast<std::uint64_t>(e.t);
    for (int i = 0; i < 8; ++i) rec[i] = static_cast<unsigned char>(t >> (8 * i));
    rec[8] = static_cast<unsigned char>(e.x & 0xff);
    rec[9] = static_cast<unsigned char>((e.x >> 8) & 0xff);
    rec[10] = static_cast<unsigned char>(e.y & 0xff);
    rec[11] = static_cast<unsigned char>((e.y >> 8) & 0xff);
    rec[12] = static_cast<unsigned char>(static_cast<std::int8_t>(e.polarity));
    out.write(reinterpret_cast<const char*>(rec), 16);
  }
}

inline EventStream read_events_binary(std::istream& in, const std::string& source = "<events>") {
  EventStream events;
  unsigned char rec[16];
  std::size_t index = 0;
  while (in.read(reinterpret_cast<char*>(rec), 16)) {
    ++index;
    Event e;
    std::uint64_t t = 0;
    for (int i = 0; i < 8; ++i) t |= static_cast<std::uint64_t>(rec[i]) << (8 * i);
    e.t = static_cast<std::int64_t>(t);
    e.x = rec[8] | (rec[9] << 8);
    e.y = rec[10] | (rec[11] << 8);
    e.polarity = static_cast<std::int8_t>(rec[12]);
    if (e.polarity != 1 && e.polarity != -1)
      throw detail::schema_error(source, index, "polarity", "must be +1 or -1");
    events.push_back(e);
  }
  if (in.gcount() != 0) throw Error(ErrorCode::schema, source + ": truncated record at end of file");
  return events;
}

inline bool is_binary_path(const std::string& path) {
  return path.size() >= 4 && path.compare(path.size() - 4, 4, ".bin") == 0;
}

inline void save_events(const std::string& path, const EventStream& events) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path);
  if (is_binary_path(path))
    write_events_binary(out, events);
  else
    write_events_text(out, events);
  if (!out) throw Error(ErrorCode::io, "write failed: " + path);
}

inline EventStream load_events(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot read " + path);
  return is_binary_path(path) ? read_events_binary(in, path) : read_events_text(in, path);
}

// ---------------------------------------------------------------------------
// Ground truth

struct EventAnnotation {
  int bounce_count = 1;
  SweepKind sweep = SweepKind::vertical;
  Vec2 projector_pixel = Vec2::Zero();  // real projector coordinate of the lit point
  Vec3 surface_point = Vec3::Zero();    // surface seen by the camera pixel
  std::string object_label;
  Vec3 source_point = Vec3::Zero();     // diffuse point lit by the laser
  std::string source_label;
  bool specular_first = false;
  bool on_epipolar = false;
  double epipolar_distance = 0.0;
};

/// Per-event annotations; empty entries mark sync-burst or spurious events.
using GroundTruth = std::vector<std::optional<EventAnnotation>>;

namespace detail {

inline const char* label_field(const std::string& label) { return label.empty() ? "-" : label.c_str(); }
inline std::string label_value(std::string field) { return field == "-" ? std::string() : field; }

}  // namespace detail

/// Empty labels are written as "-".
inline void write_ground_truth(std::ostream& out, const GroundTruth& truth) {
  out << "# index bounce sweep x_P y_P sx sy sz label src_x src_y src_z src_label specular_first on_epipolar epi_dist\n";
  char buf[512];
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!truth[i]) continue;
    const auto& a = *truth[i];
    const int n = std::snprintf(
        buf, sizeof buf, "%zu %d %d %.17g %.17g %.17g %.17g %.17g %s %.17g %.17g %.17g %s %d %d %.17g\n", i,
        a.bounce_count, static_cast<int>(a.sweep), a.projector_pixel.x(), a.projector_pixel.y(), a.surface_point.x(),
        a.surface_point.y(), a.surface_point.z(), detail::label_field(a.object_label), a.source_point.x(),
        a.source_point.y(), a.source_point.z(), detail::label_field(a.source_label), a.specular_first ? 1 : 0,
        a.on_epipolar ? 1 : 0, a.epipolar_distance);
    out.write(buf, n);
  }
}

inline GroundTruth read_ground_truth(std::istream& in, std::size_t event_count, const std::string& source = "<truth>") {
  GroundTruth truth(event_count);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (detail::skip_line(line)) continue;
    std::istringstream f(line);
    const auto index = detail::parse_field<std::size_t>(f, source, number, "index");
    if (index >= event_count) throw detail::schema_error(source, number, "index", "beyond event count");
    EventAnnotation a;
    a.bounce_count = detail::parse_field<int>(f, source, number, "bounce");
    const int sweep = detail::parse_field<int>(f, source, number, "sweep");
    if (sweep != 0 && sweep != 1) throw detail::schema_error(source, number, "sweep", "must be 0 or 1");
    a.sweep = static_cast<SweepKind>(sweep);
    a.projector_pixel.x() = detail::parse_field<double>(f, source, number, "x_P");
    a.projector_pixel.y() = detail::parse_field<double>(f, source, number, "y_P");
    for (int k = 0; k < 3; ++k) a.surface_point[k] = detail::parse_field<double>(f, source, number, "surface_point");
    a.object_label = detail::label_value(detail::parse_field<std::string>(f, source, number, "label"));
    for (int k = 0; k < 3; ++k) a.source_point[k] = detail::parse_field<double>(f, source, number, "source_point");
    a.source_label = detail::label_value(detail::parse_field<std::string>(f, source, number, "src_label"));
    a.specular_first = detail::parse_field<int>(f, source, number, "specular_first") != 0;
    a.on_epipolar = detail::parse_field<int>(f, source, number, "on_epipolar") != 0;
    a.epipolar_distance = detail::parse_field<double>(f, source, number, "epi_dist");
    detail::expect_end(f, source, number);
    if (a.bounce_count < 1) throw detail::schema_error(source, number, "bounce", "must be >= 1");
    truth[index] = std::move(a);
  }
  return truth;
}

}  // namespace evsl
