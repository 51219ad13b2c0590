#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "evsl/error.hpp"
#include "evsl/events.hpp"
#include "evsl/geometry.hpp"
#include "evsl/parallel.hpp"
#include "evsl/scene.hpp"

namespace evsl {

struct NoiseModel {
  double timestamp_jitter_sigma = 50.0;  // us
  double spurious_rate = 0.0;            // events per us per megapixel
  double drop_probability = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(timestamp_jitter_sigma >= 0.0) || !(spurious_rate >= 0.0))
      throw Error(ErrorCode::invalid_argument, "noise: rates must be >= 0");
    if (!(drop_probability >= 0.0 && drop_probability <= 1.0))
      throw Error(ErrorCode::invalid_argument, "noise: drop_probability must lie in [0, 1]");
  }
};

/// Laser burst fired `known_offset` before the scan, used for synchronization.
struct SyncBurst {
  bool enabled = false;
  std::int64_t known_offset = 5000;
  std::int64_t burst_duration = 1000;
  int count = 200;
  double jitter_sigma = 0.0;

  void validate() const {
    if (!enabled) return;
    if (!(known_offset > burst_duration && burst_duration >= 0))
      throw Error(ErrorCode::invalid_argument, "sync: need known_offset > burst_duration >= 0");
    if (count < 1) throw Error(ErrorCode::invalid_argument, "sync: count must be >= 1");
    if (!(jitter_sigma >= 0.0)) throw Error(ErrorCode::invalid_argument, "sync: jitter must be >= 0");
  }
};

struct SimulationOptions {
  int max_bounces = 2;          // > 2 follows specular chains further
  bool specular_first = false;  // also generate projector -> specular -> diffuse -> camera paths
  bool raster = false;          // explicit point raster instead of the dual line sweep
  double epipolar_annotation_px = 2.0;
  int workers = 1;

  void validate() const {
    if (max_bounces < 1) throw Error(ErrorCode::invalid_argument, "simulation: max_bounces must be >= 1");
    if (!(epipolar_annotation_px >= 0.0))
      throw Error(ErrorCode::invalid_argument, "simulation: epipolar_annotation_px must be >= 0");
  }
};

struct SimulationResult {
  EventStream events;
  GroundTruth truth;
  std::size_t distinct_slots = 0;  // projector positions that produced at least one onset
  std::size_t lit_pixels = 0;
  bool empty_warning = false;
};

/// Rescales a projector model to a square grid of `steps` pixels covering the same field of view.
inline PinholeModel resample_projector(const PinholeModel& projector, int steps) {
  PinholeModel out = projector;
  const double sx = static_cast<double>(steps) / projector.width;
  const double sy = static_cast<double>(steps) / projector.height;
  out.fx *= sx;
  out.skew *= sx;
  out.fy *= sy;
  out.cx = (projector.cx + 0.5) * sx - 0.5;
  out.cy = (projector.cy + 0.5) * sy - 0.5;
  out.width = steps;
  out.height = steps;
  return out;
}

namespace detail {

struct Contribution {
  Vec2 uv;
  EventAnnotation annotation;
  PixelIndex pixel;
};

class Tracer {
 public:
  Tracer(const Scene& scene, const PinholeModel& camera, const PinholeModel& projector,
         const ScanSchedule& schedule, const SimulationOptions& options)
      : scene_(scene), camera_(camera), projector_(projector), schedule_(schedule), options_(options),
        fundamental_(fundamental_from_models(camera, projector)) {}

  /// Projector coordinate lighting `hit`, if the laser reaches it unoccluded.
  std::optional<Vec2> illuminated(const Hit& hit) const {
    const Vec3 p = projector_.center();
    const Vec3 to_projector = p - hit.point;
    if (hit.normal.dot(to_projector) <= 0.0) return std::nullopt;
    if (device_depth(projector_, hit.point) <= 1e-9) return std::nullopt;
    const Vec2 uv = project(projector_, hit.point);
    if (!schedule_.lit(uv.x()) || !schedule_.lit(uv.y())) return std::nullopt;
    const double dist = to_projector.norm();
    const auto blocker = intersect(Ray{p, -to_projector / dist}, scene_);
    if (!blocker || blocker->distance < dist * (1.0 - 1e-9) - 1e-6) return std::nullopt;
    return uv;
  }

  void trace_pixel(const PixelIndex& px, std::vector<Contribution>& out) const {
    const Vec2 centre(px.x, px.y);
    const Ray ray = pixel_to_ray(camera_, centre);
    const auto first = intersect(ray, scene_);
    if (!first) return;
    const SceneObject& obj0 = scene_.objects[first->object];
    if (obj0.material.scatters()) {
      if (auto uv = illuminated(*first)) {
        EventAnnotation a;
        a.bounce_count = 1;
        a.surface_point = first->point;
        a.object_label = obj0.label;
        a.source_point = first->point;
        a.source_label = obj0.label;
        push(px, *uv, std::move(a), out);
      }
    }
    if (!obj0.material.mirrors() || options_.max_bounces < 2) return;
    Ray r = reflect_ray(ray, first->point, first->normal);
    for (int bounce = 2; bounce <= options_.max_bounces; ++bounce) {
      const auto h = intersect(r, scene_);
      if (!h) break;
      const SceneObject& obj = scene_.objects[h->object];
      if (obj.material.scatters()) {
        if (auto uv = illuminated(*h)) {
          EventAnnotation a;
          a.bounce_count = bounce;
          a.surface_point = first->point;
          a.object_label = obj0.label;
          a.source_point = h->point;
          a.source_label = obj.label;
          push(px, *uv, std::move(a), out);
        }
      }
      if (!obj.material.mirrors()) break;
      r = reflect_ray(r, h->point, h->normal);
    }
  }

  /// Projector pixel whose ray is mirrored onto a diffuse point seen by the camera.
  void trace_projector_pixel(int k, int j, std::vector<Contribution>& out) const {
    const Ray ray = pixel_to_ray(projector_, Vec2(k, j));
    auto h = intersect(ray, scene_);
    if (!h || !scene_.objects[h->object].material.mirrors()) return;
    const Hit mirror = *h;
    Ray r = reflect_ray(ray, h->point, h->normal);
    for (int bounce = 2; bounce <= options_.max_bounces; ++bounce) {
      h = intersect(r, scene_);
      if (!h) return;
      const SceneObject& obj = scene_.objects[h->object];
      if (obj.material.scatters()) {
        if (auto px = camera_pixel(*h)) {
          EventAnnotation a;
          a.bounce_count = bounce;
          a.surface_point = h->point;
          a.object_label = obj.label;
          a.source_point = mirror.point;
          a.source_label = scene_.objects[mirror.object].label;
          a.specular_first = true;
          push(*px, Vec2(k, j), std::move(a), out);
        }
      }
      if (!obj.material.mirrors()) return;
      r = reflect_ray(r, h->point, h->normal);
    }
  }

 private:
  std::optional<PixelIndex> camera_pixel(const Hit& hit) const {
    const Vec3 c = camera_.center();
    const Vec3 to_camera = c - hit.point;
    if (hit.normal.dot(to_camera) <= 0.0 || device_depth(camera_, hit.point) <= 1e-9) return std::nullopt;
    const Vec2 px = project(camera_, hit.point);
    const int x = static_cast<int>(std::lround(px.x()));
    const int y = static_cast<int>(std::lround(px.y()));
    if (x < 0 || y < 0 || x >= camera_.width || y >= camera_.height) return std::nullopt;
    const double dist = to_camera.norm();
    const auto blocker = intersect(Ray{c, -to_camera / dist}, scene_);
    if (!blocker || blocker->distance < dist * (1.0 - 1e-9) - 1e-6) return std::nullopt;
    return PixelIndex{x, y};
  }

  void push(const PixelIndex& px, const Vec2& uv, EventAnnotation a, std::vector<Contribution>& out) const {
    a.projector_pixel = uv;
    a.epipolar_distance = fundamental_.distance(Vec2(px.x, px.y), uv);
    a.on_epipolar = a.epipolar_distance <= options_.epipolar_annotation_px;
    out.push_back(Contribution{uv, std::move(a), px});
  }

  const Scene& scene_;
  const PinholeModel& camera_;
  const PinholeModel& projector_;
  const ScanSchedule& schedule_;
  const SimulationOptions& options_;
  FundamentalMatrix fundamental_;
};

struct Emitted {
  Event event;
  std::optional<EventAnnotation> annotation;
};

inline void emit_contribution(const Contribution& c, const ScanSchedule& schedule, bool raster,
                              std::vector<Emitted>& out) {
  auto emit = [&](SweepKind sweep, std::int64_t on, std::int64_t off) {
    EventAnnotation a = c.annotation;
    a.sweep = sweep;
    out.push_back(Emitted{Event{on, c.pixel.x, c.pixel.y, +1}, a});
    out.push_back(Emitted{Event{off, c.pixel.x, c.pixel.y, -1}, std::move(a)});
  };
  if (raster) {
    const double slot = std::round(c.uv.y()) * schedule.steps_per_sweep + std::round(c.uv.x());
    const double step = schedule.step_duration();
    emit(SweepKind::vertical, schedule.scan_start + static_cast<std::int64_t>(std::ceil(slot * step)),
         schedule.scan_start + static_cast<std::int64_t>(std::ceil((slot + 1.0) * step)));
    return;
  }
  emit(SweepKind::vertical, schedule.onset_time(SweepKind::vertical, c.uv.x()),
       schedule.offset_time(SweepKind::vertical, c.uv.x()));
  if (schedule.sweeps == 2)
    emit(SweepKind::horizontal, schedule.onset_time(SweepKind::horizontal, c.uv.y()),
         schedule.offset_time(SweepKind::horizontal, c.uv.y()));
}

}  // namespace detail

/// Synthesizes the event stream of an ideal event camera watching the crosshair laser scan.
inline SimulationResult simulate_scan(const Scene& scene, const PinholeModel& camera, const PinholeModel& projector,
                                      const ScanSchedule& schedule, const NoiseModel& noise,
                                      const SimulationOptions& options = {}, const SyncBurst& sync = {}) {
  scene.validate();
  camera.validate();
  projector.validate();
  schedule.validate();
  noise.validate();
  options.validate();
  sync.validate();
  if (scene.objects.empty()) throw Error(ErrorCode::invalid_argument, "simulate_scan: scene is empty");
  if (projector.width != schedule.steps_per_sweep || projector.height != schedule.steps_per_sweep)
    throw Error(ErrorCode::invalid_argument,
                "simulate_scan: projector grid must be steps_per_sweep square (see resample_projector)");
  if (sync.enabled && schedule.scan_start < sync.known_offset + sync.burst_duration)
    throw Error(ErrorCode::invalid_argument, "simulate_scan: scan_start leaves no room for the sync burst");

  const detail::Tracer tracer(scene, camera, projector, schedule, options);

  const std::size_t rows = static_cast<std::size_t>(camera.height);
  std::vector<std::vector<detail::Contribution>> per_chunk(rows);
  parallel_chunks(rows, rows, options.workers, [&](std::size_t begin, std::size_t end, std::size_t chunk) {
    for (std::size_t y = begin; y < end; ++y)
      for (int x = 0; x < camera.width; ++x) tracer.trace_pixel(PixelIndex{x, static_cast<int>(y)}, per_chunk[chunk]);
  });
  std::vector<detail::Contribution> contributions;
  for (auto& c : per_chunk) std::move(c.begin(), c.end(), std::back_inserter(contributions));

  if (options.specular_first) {
    const auto steps = static_cast<std::size_t>(schedule.steps_per_sweep);
    std::vector<std::vector<detail::Contribution>> forward(steps);
    parallel_chunks(steps, steps, options.workers, [&](std::size_t begin, std::size_t end, std::size_t chunk) {
      for (std::size_t j = begin; j < end; ++j)
        for (int k = 0; k < schedule.steps_per_sweep; ++k)
          tracer.trace_projector_pixel(k, static_cast<int>(j), forward[chunk]);
    });
    for (auto& c : forward) std::move(c.begin(), c.end(), std::back_inserter(contributions));
  }

  SimulationResult result;
  std::vector<detail::Emitted> emitted;
  emitted.reserve(contributions.size() * 4);
  {
    std::vector<PixelIndex> lit;
    const std::size_t n = static_cast<std::size_t>(schedule.steps_per_sweep);
    std::vector<char> slots(options.raster ? n * n : 2 * n, 0);
    for (const auto& c : contributions) {
      detail::emit_contribution(c, schedule, options.raster, emitted);
      lit.push_back(c.pixel);
      const auto clamp_index = [&](double u) {
        return static_cast<std::size_t>(std::clamp<long>(std::lround(u), 0, static_cast<long>(n) - 1));
      };
      if (options.raster) {
        slots[clamp_index(c.uv.y()) * n + clamp_index(c.uv.x())] = 1;
      } else {
        const double step = schedule.step_duration();
        const auto slot_of = [&](double u) {
          const auto idx = static_cast<std::size_t>(std::floor(schedule.crossing_offset(u) / step));
          return std::min(idx, n - 1);
        };
        slots[slot_of(c.uv.x())] = 1;
        if (schedule.sweeps == 2) slots[n + slot_of(c.uv.y())] = 1;
      }
    }
    result.distinct_slots = static_cast<std::size_t>(std::count(slots.begin(), slots.end(), 1));
    std::sort(lit.begin(), lit.end());
    result.lit_pixels = static_cast<std::size_t>(std::unique(lit.begin(), lit.end()) - lit.begin());
  }
  result.empty_warning = emitted.empty();

  std::mt19937_64 rng(noise.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<detail::Emitted> kept;
  kept.reserve(emitted.size());
  for (auto& e : emitted) {
    if (noise.drop_probability > 0.0 && unit(rng) < noise.drop_probability) continue;
    if (noise.timestamp_jitter_sigma > 0.0)
      e.event.t += std::llround(noise.timestamp_jitter_sigma * gauss(rng));
    kept.push_back(std::move(e));
  }

  const std::int64_t window = options.raster
                                  ? static_cast<std::int64_t>(std::ceil(schedule.step_duration() *
                                                                        schedule.steps_per_sweep *
                                                                        schedule.steps_per_sweep))
                                  : schedule.total_duration();
  if (noise.spurious_rate > 0.0) {
    const double mean = noise.spurious_rate * static_cast<double>(window) *
                        (static_cast<double>(camera.width) * camera.height / 1e6);
    std::poisson_distribution<long long> count(mean);
    const long long n = count(rng);
    std::uniform_int_distribution<int> ux(0, camera.width - 1);
    std::uniform_int_distribution<int> uy(0, camera.height - 1);
    std::uniform_int_distribution<std::int64_t> ut(schedule.scan_start, schedule.scan_start + window - 1);
    for (long long i = 0; i < n; ++i) {
      Event e;
      e.x = ux(rng);
      e.y = uy(rng);
      e.t = ut(rng);
      e.polarity = unit(rng) < 0.5 ? -1 : 1;
      kept.push_back(detail::Emitted{e, std::nullopt});
    }
  }

  if (sync.enabled) {
    const double centre = static_cast<double>(schedule.scan_start - sync.known_offset);
    std::uniform_int_distribution<int> ux(0, camera.width - 1);
    std::uniform_int_distribution<int> uy(0, camera.height - 1);
    for (int i = 0; i < sync.count; ++i) {
      const double offset = sync.count == 1 ? 0.0
                                            : (i - (sync.count - 1) / 2.0) * static_cast<double>(sync.burst_duration) /
                                                  (sync.count - 1);
      Event e;
      e.t = std::llround(centre + offset);
      if (sync.jitter_sigma > 0.0) e.t += std::llround(sync.jitter_sigma * gauss(rng));
      e.x = ux(rng);
      e.y = uy(rng);
      e.polarity = 1;
      kept.push_back(detail::Emitted{e, std::nullopt});
    }
  }

  for (auto& e : kept) e.event.t = std::max<std::int64_t>(0, e.event.t);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const detail::Emitted& a, const detail::Emitted& b) { return event_less(a.event, b.event); });
  result.events.reserve(kept.size());
  result.truth.reserve(kept.size());
  for (auto& e : kept) {
    result.events.push_back(e.event);
    result.truth.push_back(std::move(e.annotation));
  }
  return result;
}

}  // namespace evsl
