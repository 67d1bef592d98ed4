// Synthetic control-point grids and ground-truth deformations.
#pragma once

#include <cstdint>

#include "bsreg/bspline.hpp"
#include "bsreg/metrics.hpp"

namespace bsreg {

/// Coefficients drawn i.i.d. uniform in [-amplitude, amplitude].
ControlPointGrid random_grid(const GridGeometry& geom, double amplitude, std::uint64_t seed);

struct GroundTruth {
    ControlPointGrid field;
    LandmarkSet fixed;   ///< random points inside the grid
    LandmarkSet moving;  ///< fixed + field(fixed)
};

/// Smooth random field: a sum of sinusoidal modes with wavelengths of at
/// least `smoothness` mm, evaluated at the control-point knots and scaled so
/// the largest coefficient magnitude equals `amplitude`. Draws are rejected
/// until the field's minimum Jacobian determinant is positive.
///
/// Requires amplitude < smoothness / 3. Throws NumericalError when no
/// acceptable field is found within `max_attempts`.
GroundTruth make_ground_truth_field(const GridGeometry& geom, double amplitude, double smoothness,
                                    std::uint64_t seed, std::size_t landmark_count = 300,
                                    double landmark_margin = 0.0, int max_attempts = 50);

}  // namespace bsreg
