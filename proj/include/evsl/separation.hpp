#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "evsl/decode.hpp"
#include "evsl/error.hpp"
#include "evsl/geometry.hpp"

namespace evsl {

enum class CorrespondenceClass { direct, indirect, rejected };

inline std::string_view to_string(CorrespondenceClass c) {
  switch (c) {
    case CorrespondenceClass::direct: return "direct";
    case CorrespondenceClass::indirect: return "indirect";
    case CorrespondenceClass::rejected: return "rejected";
  }
  return "rejected";
}

inline CorrespondenceClass correspondence_class_from_string(const std::string& s) {
  if (s == "direct") return CorrespondenceClass::direct;
  if (s == "indirect") return CorrespondenceClass::indirect;
  if (s == "rejected") return CorrespondenceClass::rejected;
  throw Error(ErrorCode::invalid_argument, "unknown correspondence class '" + s + "'");
}

struct ClassifiedCorrespondence {
  PixelCorrespondence base;
  CorrespondenceClass cls = CorrespondenceClass::direct;
  double epipolar_distance = 0.0;
};

inline std::vector<ClassifiedCorrespondence> epipolar_classify(const std::vector<PixelCorrespondence>& input,
                                                               const FundamentalMatrix& f, double tau = 2.0) {
  if (!(tau > 0.0)) throw Error(ErrorCode::invalid_argument, "epipolar_classify: tau must be > 0");
  std::vector<ClassifiedCorrespondence> out;
  out.reserve(input.size());
  for (const auto& c : input) {
    if (!c.has_row()) throw Error(ErrorCode::invalid_argument, "epipolar_classify: single-sweep correspondence");
    const double d = f.distance(Vec2(c.camera.x, c.camera.y), c.projector);
    out.push_back({c, d <= tau ? CorrespondenceClass::direct : CorrespondenceClass::indirect, d});
  }
  return out;
}

/// At most one direct entry survives per camera pixel; indirect entries sharing a pixel with a
/// direct one are rejected.
inline std::vector<ClassifiedCorrespondence> resolve_mixed_pixels(std::vector<ClassifiedCorrespondence> items) {
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return items[a].base.camera < items[b].base.camera; });
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    const PixelIndex px = items[order[i]].base.camera;
    std::size_t best = kNoEvent;
    while (j < order.size() && items[order[j]].base.camera == px) {
      const auto& c = items[order[j]];
      if (c.cls == CorrespondenceClass::direct) {
        if (best == kNoEvent) {
          best = order[j];
        } else {
          const auto& b = items[best];
          if (c.base.quality > b.base.quality ||
              (c.base.quality == b.base.quality && c.epipolar_distance < b.epipolar_distance))
            best = order[j];
        }
      }
      ++j;
    }
    if (best != kNoEvent)
      for (std::size_t k = i; k < j; ++k)
        if (order[k] != best) items[order[k]].cls = CorrespondenceClass::rejected;
    i = j;
  }
  return items;
}

inline std::vector<ClassifiedCorrespondence> separate(const std::vector<PixelCorrespondence>& input,
                                                      const FundamentalMatrix& f, double tau = 2.0) {
  return resolve_mixed_pixels(epipolar_classify(input, f, tau));
}

inline void write_classified(std::ostream& out, const std::vector<ClassifiedCorrespondence>& table) {
  out << "# x_C y_C x_P y_P support quality low ev_v ev_h class epi_dist\n";
  char buf[320];
  for (const auto& c : table) {
    int n = detail::format_correspondence(buf, sizeof buf, c.base);
    n += std::snprintf(buf + n, sizeof buf - n, " %s %.17g\n", std::string(to_string(c.cls)).c_str(),
                       c.epipolar_distance);
    out.write(buf, n);
  }
}

inline std::vector<ClassifiedCorrespondence> read_classified(std::istream& in, const std::string& source = "<table>") {
  std::vector<ClassifiedCorrespondence> table;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (detail::skip_line(line)) continue;
    std::istringstream f(line);
    ClassifiedCorrespondence c;
    c.base = detail::parse_correspondence(f, source, number);
    const auto cls = detail::parse_field<std::string>(f, source, number, "class");
    try {
      c.cls = correspondence_class_from_string(cls);
    } catch (const Error&) {
      throw detail::schema_error(source, number, "class", "unknown class '" + cls + "'");
    }
    c.epipolar_distance = detail::parse_field<double>(f, source, number, "epi_dist");
    detail::expect_end(f, source, number);
    table.push_back(c);
  }
  return table;
}

}  // namespace evsl
