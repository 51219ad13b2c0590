#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "evsl/error.hpp"
#include "evsl/events.hpp"
#include "evsl/geometry.hpp"

namespace evsl {

struct SweepAssignment {
  std::size_t event = 0;  // index into the event stream
  SweepKind sweep = SweepKind::vertical;
  int projector_index = 0;
  double residual_time = 0.0;  // us past the start of the step
};

struct SweepAssignments {
  std::vector<SweepAssignment> items;
  std::size_t recovery_discarded = 0;
  std::size_t outside_discarded = 0;
};

/// Labels each event with its sweep and projector index relative to `scan_start`.
inline SweepAssignments assign_sweeps(const EventStream& events, const ScanSchedule& schedule,
                                      std::int64_t scan_start) {
  schedule.validate();
  SweepAssignments out;
  const double step = schedule.step_duration();
  const std::int64_t period = schedule.sweep_duration + schedule.recovery_time;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const std::int64_t rel = events[i].t - scan_start;
    if (rel < 0 || rel >= schedule.sweeps * period) {
      ++out.outside_discarded;
      continue;
    }
    const std::int64_t sweep = rel / period;
    const std::int64_t within = rel - sweep * period;
    if (within >= schedule.sweep_duration) {
      ++out.recovery_discarded;
      continue;
    }
    auto index = static_cast<int>(std::floor(static_cast<double>(within) * schedule.steps_per_sweep /
                                             static_cast<double>(schedule.sweep_duration)));
    index = std::clamp(index, 0, schedule.steps_per_sweep - 1);
    out.items.push_back(SweepAssignment{i, sweep == 0 ? SweepKind::vertical : SweepKind::horizontal, index,
                                        static_cast<double>(within) - index * step});
  }
  return out;
}

enum class PolarityPolicy { onset, validated, both };

inline std::string_view to_string(PolarityPolicy p) {
  switch (p) {
    case PolarityPolicy::onset: return "onset";
    case PolarityPolicy::validated: return "validated";
    case PolarityPolicy::both: return "both";
  }
  return "onset";
}

inline PolarityPolicy polarity_policy_from_string(const std::string& s) {
  if (s == "onset") return PolarityPolicy::onset;
  if (s == "validated") return PolarityPolicy::validated;
  if (s == "both") return PolarityPolicy::both;
  throw Error(ErrorCode::invalid_argument, "unknown polarity policy '" + s + "'");
}

struct DecodeOptions {
  PolarityPolicy policy = PolarityPolicy::onset;
  bool subpixel = true;                // add residual_time / step to the projector index
  double cluster_gap_fraction = 0.05;  // of steps_per_sweep; larger gaps start a new cluster
  double low_quality_fraction = 0.05;  // of steps_per_sweep; larger spreads are flagged
};

inline constexpr std::size_t kNoEvent = static_cast<std::size_t>(-1);

/// A camera pixel linked to a projector pixel. y_P < 0 marks a single-sweep (column only) link.
struct PixelCorrespondence {
  PixelIndex camera;
  Vec2 projector = Vec2::Zero();
  int support = 0;
  double quality = 1.0;
  bool low_quality = false;
  std::size_t event_v = kNoEvent;  // median onset event of each sweep
  std::size_t event_h = kNoEvent;

  bool has_row() const { return projector.y() >= 0.0; }
};

namespace detail {

struct Sample {
  PixelIndex pixel;
  int sweep;
  double coord;
  int polarity;
  std::size_t event;
};

struct Cluster {
  double median = 0.0;
  double spread = 0.0;
  int support = 0;
  std::size_t event = kNoEvent;
};

inline std::vector<Cluster> cluster_samples(const std::vector<Sample>& onsets, const std::vector<Sample>& offsets,
                                            double gap, PolarityPolicy policy) {
  std::vector<Cluster> clusters;
  std::size_t i = 0;
  while (i < onsets.size()) {
    std::size_t j = i + 1;
    while (j < onsets.size() && onsets[j].coord - onsets[j - 1].coord <= gap) ++j;
    const std::size_t mid = i + (j - i - 1) / 2;
    Cluster c{onsets[mid].coord, onsets[j - 1].coord - onsets[i].coord, static_cast<int>(j - i), onsets[mid].event};
    bool keep = true;
    if (policy == PolarityPolicy::validated) {
      keep = std::any_of(offsets.begin(), offsets.end(), [&](const Sample& s) {
        return s.coord >= onsets[i].coord - gap && s.coord <= onsets[j - 1].coord + gap;
      });
    }
    if (keep) clusters.push_back(c);
    i = j;
  }
  return clusters;
}

}  // namespace detail

/// Intersects vertical (x_P) and horizontal (y_P) detections per camera pixel.
inline std::vector<PixelCorrespondence> intersect_sweeps(const EventStream& events,
                                                         const SweepAssignments& assignments,
                                                         const ScanSchedule& schedule,
                                                         const DecodeOptions& options = {}) {
  const double step = schedule.step_duration();
  const double gap = options.cluster_gap_fraction * schedule.steps_per_sweep;
  std::vector<detail::Sample> samples;
  samples.reserve(assignments.items.size());
  for (const auto& a : assignments.items) {
    const Event& e = events.at(a.event);
    double coord = a.projector_index;
    if (options.subpixel) coord += a.residual_time / step;
    if (e.polarity < 0) coord -= 1.0;  // the line left this pixel one step after arriving
    samples.push_back({PixelIndex{e.x, e.y}, static_cast<int>(a.sweep), coord, e.polarity, a.event});
  }
  std::sort(samples.begin(), samples.end(), [](const detail::Sample& a, const detail::Sample& b) {
    if (a.pixel != b.pixel) return a.pixel < b.pixel;
    if (a.sweep != b.sweep) return a.sweep < b.sweep;
    if (a.coord != b.coord) return a.coord < b.coord;
    return a.event < b.event;
  });

  std::vector<PixelCorrespondence> out;
  std::size_t i = 0;
  std::vector<detail::Sample> on[2], off[2];
  while (i < samples.size()) {
    const PixelIndex px = samples[i].pixel;
    for (int s = 0; s < 2; ++s) {
      on[s].clear();
      off[s].clear();
    }
    for (; i < samples.size() && samples[i].pixel == px; ++i) {
      const auto& s = samples[i];
      if (s.polarity > 0 || options.policy == PolarityPolicy::both)
        on[s.sweep].push_back(s);
      else
        off[s.sweep].push_back(s);
    }
    if (options.policy == PolarityPolicy::both)
      for (int s = 0; s < 2; ++s)
        std::sort(on[s].begin(), on[s].end(), [](const auto& a, const auto& b) {
          return a.coord != b.coord ? a.coord < b.coord : a.event < b.event;
        });

    const auto clusters_v = detail::cluster_samples(on[0], off[0], gap, options.policy);
    if (clusters_v.empty()) continue;
    const double spread_v = on[0].back().coord - on[0].front().coord;

    if (schedule.sweeps == 1) {
      for (const auto& cv : clusters_v) {
        PixelCorrespondence c;
        c.camera = px;
        c.projector = Vec2(cv.median, -1.0);
        c.support = cv.support;
        c.quality = std::clamp(1.0 - cv.spread / schedule.steps_per_sweep, 0.0, 1.0);
        c.low_quality = spread_v > options.low_quality_fraction * schedule.steps_per_sweep;
        c.event_v = cv.event;
        out.push_back(c);
      }
      continue;
    }

    const auto clusters_h = detail::cluster_samples(on[1], off[1], gap, options.policy);
    if (clusters_h.empty()) continue;
    const double spread_h = on[1].back().coord - on[1].front().coord;
    const bool low = std::max(spread_v, spread_h) > options.low_quality_fraction * schedule.steps_per_sweep;
    for (const auto& cv : clusters_v)
      for (const auto& ch : clusters_h) {
        PixelCorrespondence c;
        c.camera = px;
        c.projector = Vec2(cv.median, ch.median);
        c.support = cv.support + ch.support;
        c.quality = std::clamp(1.0 - std::max(cv.spread, ch.spread) / schedule.steps_per_sweep, 0.0, 1.0);
        c.low_quality = low;
        c.event_v = cv.event;
        c.event_h = ch.event;
        out.push_back(c);
      }
  }
  return out;
}

struct DecodeResult {
  std::vector<PixelCorrespondence> correspondences;
  std::size_t assigned = 0;
  std::size_t recovery_discarded = 0;
  std::size_t outside_discarded = 0;
};

inline DecodeResult decode_scan(const EventStream& events, const ScanSchedule& schedule, std::int64_t scan_start,
                                const DecodeOptions& options = {}) {
  const auto assigned = assign_sweeps(events, schedule, scan_start);
  DecodeResult r;
  r.correspondences = intersect_sweeps(events, assigned, schedule, options);
  r.assigned = assigned.items.size();
  r.recovery_discarded = assigned.recovery_discarded;
  r.outside_discarded = assigned.outside_discarded;
  return r;
}

// ---------------------------------------------------------------------------
// Correspondence table: x_C y_C x_P y_P support quality low ev_v ev_h

namespace detail {

inline long long event_column(std::size_t e) { return e == kNoEvent ? -1 : static_cast<long long>(e); }

inline std::size_t event_from_column(long long v) { return v < 0 ? kNoEvent : static_cast<std::size_t>(v); }

inline int format_correspondence(char* buf, std::size_t size, const PixelCorrespondence& c) {
  return std::snprintf(buf, size, "%d %d %.17g %.17g %d %.17g %d %lld %lld", c.camera.x, c.camera.y,
                       c.projector.x(), c.projector.y(), c.support, c.quality, c.low_quality ? 1 : 0,
                       event_column(c.event_v), event_column(c.event_h));
}

inline PixelCorrespondence parse_correspondence(std::istringstream& f, const std::string& source, std::size_t line) {
  PixelCorrespondence c;
  c.camera.x = parse_field<int>(f, source, line, "x_C");
  c.camera.y = parse_field<int>(f, source, line, "y_C");
  c.projector.x() = parse_field<double>(f, source, line, "x_P");
  c.projector.y() = parse_field<double>(f, source, line, "y_P");
  c.support = parse_field<int>(f, source, line, "support");
  c.quality = parse_field<double>(f, source, line, "quality");
  c.low_quality = parse_field<int>(f, source, line, "low") != 0;
  c.event_v = event_from_column(parse_field<long long>(f, source, line, "ev_v"));
  c.event_h = event_from_column(parse_field<long long>(f, source, line, "ev_h"));
  if (c.camera.x < 0 || c.camera.y < 0) throw schema_error(source, line, "x_C/y_C", "negative pixel");
  if (!(c.quality >= 0.0 && c.quality <= 1.0)) throw schema_error(source, line, "quality", "must lie in [0, 1]");
  if (c.support < 1) throw schema_error(source, line, "support", "must be >= 1");
  return c;
}

}  // namespace detail

inline void write_correspondences(std::ostream& out, const std::vector<PixelCorrespondence>& table) {
  out << "# x_C y_C x_P y_P support quality low ev_v ev_h\n";
  char buf[256];
  for (const auto& c : table) {
    const int n = detail::format_correspondence(buf, sizeof buf, c);
    out.write(buf, n);
    out.put('\n');
  }
}

inline std::vector<PixelCorrespondence> read_correspondences(std::istream& in, const std::string& source = "<table>") {
  std::vector<PixelCorrespondence> table;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (detail::skip_line(line)) continue;
    std::istringstream f(line);
    table.push_back(detail::parse_correspondence(f, source, number));
    detail::expect_end(f, source, number);
  }
  return table;
}

}  // namespace evsl
