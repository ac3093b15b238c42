#include "dietfield/posedist.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <numbers>

#include "dietfield/error.hpp"

namespace dietfield::posedist {

namespace {

// Right-handed basis (e1, e2, up) with e1 the projection of +x (or +y) off `up`.
void tangent_basis(const Eigen::Vector3d& up, Eigen::Vector3d& e1, Eigen::Vector3d& e2) {
  const Eigen::Vector3d helper = std::abs(up.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
  e1 = (helper - helper.dot(up) * up).normalized();
  e2 = up.cross(e1);
}

Eigen::Vector3d unit(const Eigen::Vector3d& v, const char* what) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw ValidationError(std::string(what) + " must be a nonzero finite vector");
  return v / n;
}

}  // namespace

void Hemisphere::validate() const {
  if (!(radius_min > 0.0) || !(radius_max >= radius_min) || !std::isfinite(radius_max)) {
    throw ValidationError("hemisphere: need 0 < radius_min <= radius_max");
  }
  unit(up, "hemisphere up");
}

void Interpolation::validate() const {
  if (sources.size() < 3) {
    throw ValidationError("interpolation: need at least 3 source poses, got " + std::to_string(sources.size()));
  }
  unit(up, "interpolation up");
}

scene::Pose look_at_pose(const Eigen::Vector3d& origin, const Eigen::Vector3d& target, const Eigen::Vector3d& up) {
  const Eigen::Vector3d forward = unit(target - origin, "look-at direction");
  Eigen::Vector3d u = unit(up, "up");
  Eigen::Vector3d right = forward.cross(u);
  if (right.norm() < 1e-6) {
    Eigen::Vector3d e1, e2;
    tangent_basis(u, e1, e2);
    right = forward.cross(e2);
  }
  right.normalize();
  const Eigen::Vector3d cam_up = right.cross(forward);
  Eigen::Matrix3d r;
  r.col(0) = right;
  r.col(1) = cam_up;
  r.col(2) = -forward;
  return scene::Pose::from_rotation_origin(r, origin);
}

Eigen::Vector3d sample_hemisphere_direction(const Eigen::Vector3d& up, Rng& rng) {
  const Eigen::Vector3d u = unit(up, "up");
  Eigen::Vector3d e1, e2;
  tangent_basis(u, e1, e2);
  // Uniform area on the hemisphere <=> height uniform on [0, 1] (Archimedes).
  const double z = rng.uniform_double();
  const double phi = 2.0 * std::numbers::pi * rng.uniform_double();
  const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
  return rho * (std::cos(phi) * e1 + std::sin(phi) * e2) + z * u;
}

scene::Pose sample_hemisphere_pose(const Hemisphere& dist, Rng& rng) {
  dist.validate();
  const Eigen::Vector3d dir = sample_hemisphere_direction(dist.up, rng);
  const double radius = rng.uniform(dist.radius_min, dist.radius_max);
  return look_at_pose(dist.look_at + radius * dir, dist.look_at, dist.up);
}

Eigen::Vector3d blend(const Eigen::Vector3d& a, const Eigen::Vector3d& b, double alpha) {
  return alpha * a + (1.0 - alpha) * b;
}

Eigen::Vector3d interpolate_origin(const Eigen::Vector3d& p1, const Eigen::Vector3d& p2, const Eigen::Vector3d& p3,
                                   double alpha1, double alpha2) {
  return blend(blend(p1, p2, alpha1), p3, alpha2);
}

scene::Pose sample_interpolated_pose(const Interpolation& dist, Rng& rng) {
  dist.validate();
  const std::size_t n = dist.sources.size();
  std::size_t idx[3];
  idx[0] = static_cast<std::size_t>(rng.below(n));
  do idx[1] = static_cast<std::size_t>(rng.below(n));
  while (idx[1] == idx[0]);
  do idx[2] = static_cast<std::size_t>(rng.below(n));
  while (idx[2] == idx[0] || idx[2] == idx[1]);
  const double a1 = rng.uniform_double(), a2 = rng.uniform_double();
  const Eigen::Vector3d origin = interpolate_origin(dist.sources[idx[0]].origin(), dist.sources[idx[1]].origin(),
                                                    dist.sources[idx[2]].origin(), a1, a2);
  return look_at_pose(origin, dist.center, dist.up);
}

scene::Pose sample_pose(const PoseDistribution& dist, Rng& rng) {
  if (const auto* h = std::get_if<Hemisphere>(&dist)) return sample_hemisphere_pose(*h, rng);
  return sample_interpolated_pose(std::get<Interpolation>(dist), rng);
}

Hemisphere hemisphere_for(const std::vector<scene::Pose>& cameras, const Eigen::Vector3d& look_at,
                          const Eigen::Vector3d& up) {
  if (cameras.empty()) throw ValidationError("hemisphere_for: no cameras");
  double mean = 0.0;
  for (const auto& c : cameras) mean += (c.origin() - look_at).norm();
  mean /= static_cast<double>(cameras.size());
  Hemisphere h;
  h.radius_min = 0.9 * mean;
  h.radius_max = 1.1 * mean;
  h.look_at = look_at;
  h.up = up;
  h.validate();
  return h;
}

scene::Pose orbit_pose(double azimuth, double elevation, double radius, const Eigen::Vector3d& look_at,
                       const Eigen::Vector3d& up) {
  const Eigen::Vector3d u = unit(up, "up");
  Eigen::Vector3d e1, e2;
  tangent_basis(u, e1, e2);
  const Eigen::Vector3d dir =
      std::cos(elevation) * (std::cos(azimuth) * e1 + std::sin(azimuth) * e2) + std::sin(elevation) * u;
  return look_at_pose(look_at + radius * dir, look_at, u);
}

}  // namespace dietfield::posedist
