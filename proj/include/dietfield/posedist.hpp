#pragma once

#include <Eigen/Core>
#include <variant>
#include <vector>

#include "dietfield/rng.hpp"
#include "dietfield/scene.hpp"

namespace dietfield::posedist {

// Cameras on the upper hemisphere around `look_at`, radius uniform in [radius_min, radius_max].
struct Hemisphere {
  double radius_min = 3.6;
  double radius_max = 4.4;
  Eigen::Vector3d look_at = Eigen::Vector3d::Zero();
  Eigen::Vector3d up = Eigen::Vector3d::UnitZ();

  void validate() const;
};

// Origins blended from three distinct source poses, oriented toward `center`.
struct Interpolation {
  std::vector<scene::Pose> sources;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d up = Eigen::Vector3d::UnitZ();

  void validate() const;
};

using PoseDistribution = std::variant<Hemisphere, Interpolation>;

// Camera at `origin` looking at `target`; camera up is `up` projected off the viewing axis. When
// the axis is parallel to `up` another helper axis is used.
scene::Pose look_at_pose(const Eigen::Vector3d& origin, const Eigen::Vector3d& target, const Eigen::Vector3d& up);

// Unit vector uniform on the hemisphere {u : u.up >= 0}.
Eigen::Vector3d sample_hemisphere_direction(const Eigen::Vector3d& up, Rng& rng);

scene::Pose sample_hemisphere_pose(const Hemisphere& dist, Rng& rng);
scene::Pose sample_interpolated_pose(const Interpolation& dist, Rng& rng);
scene::Pose sample_pose(const PoseDistribution& dist, Rng& rng);

// alpha a + (1 - alpha) b.
Eigen::Vector3d blend(const Eigen::Vector3d& a, const Eigen::Vector3d& b, double alpha);
// blend(blend(p1, p2, alpha1), p3, alpha2)
Eigen::Vector3d interpolate_origin(const Eigen::Vector3d& p1, const Eigen::Vector3d& p2, const Eigen::Vector3d& p3,
                                   double alpha1, double alpha2);

// Radius bounds [0.9 r, 1.1 r] around the mean camera distance r to `look_at`.
Hemisphere hemisphere_for(const std::vector<scene::Pose>& cameras, const Eigen::Vector3d& look_at,
                          const Eigen::Vector3d& up);

// Camera at the given azimuth/elevation (radians) and radius around `look_at`. Azimuth 0 lies on
// the first axis orthogonal to `up` (+x for up = +z).
scene::Pose orbit_pose(double azimuth, double elevation, double radius, const Eigen::Vector3d& look_at,
                       const Eigen::Vector3d& up);

}  // namespace dietfield::posedist
