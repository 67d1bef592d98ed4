// Displacement-field quality metrics.
#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "bsreg/bspline.hpp"
#include "bsreg/sampling.hpp"
#include "bsreg/volume.hpp"

namespace bsreg {

struct LandmarkSet {
    std::vector<Vec3> points;
    std::string label;

    std::size_t size() const { return points.size(); }
};

/// One landmark per line, three whitespace-separated coordinates in mm;
/// '#' starts a comment.
LandmarkSet read_landmarks(std::istream& is, std::string label = {});
LandmarkSet read_landmarks(const std::string& path);
void write_landmarks(const LandmarkSet& set, std::ostream& os);
void write_landmarks(const LandmarkSet& set, const std::string& path);

/// Voxel indices to physical mm using a reference volume's geometry.
LandmarkSet voxel_to_physical(const LandmarkSet& set, const Volume& reference);

struct JacobianMap {
    Volume map;
    double min = 0.0;
};

/// det(I + grad nu) at every sample, using analytic first derivatives.
JacobianMap jacobian_map(const ControlPointGrid& grid, const SamplingSpec& sampling);
/// Same, sampled at the voxel centres of a reference volume (must lie inside
/// the grid).
JacobianMap jacobian_map(const ControlPointGrid& grid, const Volume& reference);

struct WarpResult {
    LandmarkSet warped;
    /// Indices (into the input) of points outside the grid, left unwarped.
    std::vector<std::size_t> outside;
};

/// x -> x + nu(x).
WarpResult warp_landmarks(const ControlPointGrid& grid, const LandmarkSet& landmarks);

/// Mean Euclidean distance between paired points.
double mls(const LandmarkSet& a, const LandmarkSet& b);

struct MlsReport {
    double mls = 0.0;
    std::size_t used = 0;
    std::size_t excluded = 0;
};

/// Warps `fixed` and measures against `moving`, excluding pairs whose fixed
/// point falls outside the grid.
MlsReport registration_mls(const ControlPointGrid& grid, const LandmarkSet& fixed, const LandmarkSet& moving);

}  // namespace bsreg
