#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace layoutforge {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

/// Parent id of objects resting on the floor; not a node itself.
inline constexpr std::string_view kGroundId = "GROUND";

/// Base class for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text (JSON, OBJ, cache header).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A data-model invariant does not hold. `rule` names the violated invariant.
class ValidationError : public Error {
 public:
  ValidationError(std::string rule, std::string subject)
      : Error(rule + ": " + subject), rule_(std::move(rule)), subject_(std::move(subject)) {}
  const std::string& rule() const noexcept { return rule_; }
  const std::string& subject() const noexcept { return subject_; }

 private:
  std::string rule_;
  std::string subject_;
};

/// File system or stream failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an operation precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Axis-aligned bounding box. Default-constructed boxes are empty.
struct Aabb {
  Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

  bool empty() const { return (min.array() > max.array()).any(); }
  void expand(const Vec3& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
  void expand(const Aabb& b) {
    min = min.cwiseMin(b.min);
    max = max.cwiseMax(b.max);
  }
  Vec3 extent() const { return max - min; }
  Vec3 center() const { return 0.5 * (min + max); }
  Aabb inflated(double r) const { return {min.array() - r, max.array() + r}; }
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  bool overlaps(const Aabb& o) const {
    return (min.array() <= o.max.array()).all() && (o.min.array() <= max.array()).all();
  }
  /// Euclidean distance from p to the box (0 inside).
  double distance(const Vec3& p) const {
    const Vec3 c = p.cwiseMax(min).cwiseMin(max);
    return (p - c).norm();
  }
};

/// 64-bit FNV-1a, used for stable cache keys and per-node seeds.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t fnv1a_bytes(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  return fnv1a(std::string_view(static_cast<const char*>(data), n), h);
}

/// Worker count for internal parallel loops; `LAYOUTFORGE_THREADS` caps it.
inline unsigned thread_budget() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("LAYOUTFORGE_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(v));
  }
  return n;
}

/// Runs fn(begin, end) over contiguous chunks of [0, count). Each index is
/// visited exactly once, so results written per index are independent of the
/// worker count.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t, std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(thread_budget(), count);
  if (workers <= 1) {
    if (count > 0) fn(0, count);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (count + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t b = w * chunk;
    const std::size_t e = std::min(count, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
}

}  // namespace layoutforge
