// Sampled implementations of the five regularizers: finite differences of a
// dense displacement field (the conventional baseline) and midpoint
// quadrature of exact spline derivatives (an accuracy oracle for the
// closed-form penalties).
#pragma once

#include <array>

#include "bsreg/analytic_penalty.hpp"
#include "bsreg/bspline.hpp"
#include "bsreg/sampling.hpp"
#include "bsreg/volume.hpp"

namespace bsreg {

struct PenaltyBreakdown {
    double value = 0.0;
    std::array<double, 5> terms{};
    std::array<bool, 5> evaluated{};
};

class InsufficientSampling : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Displacement at every sample of the cell-centred lattice.
Volume dense_field(const ControlPointGrid& grid, const SamplingSpec& sampling, int threads = 1);

/// Finite-difference penalty. Derivatives use tensor products of 1D central
/// stencils; third derivatives along one axis compose three half-step
/// central differences, (f[+2] - 3f[+1] + 3f[0] - f[-1]) / h^3, which
/// estimates the derivative midway between samples 0 and +1. Each squared
/// term is summed
/// over the samples where its own stencil fits (skip) or over all samples
/// with edge replication (clamp), times the sample cell volume. The dense
/// field evaluation is part of the work.
PenaltyBreakdown fd_penalty(const ControlPointGrid& grid, const RegularizerWeights& weights,
                            const SamplingSpec& sampling, int threads = 1);

/// Same, on an already-evaluated dense field.
PenaltyBreakdown fd_penalty(const Volume& field, const RegularizerWeights& weights, BoundaryPolicy boundary,
                            int threads = 1);

/// Midpoint rule with exact spline derivatives: samples_per_tile^3 cell
/// centres per tile.
PenaltyBreakdown quadrature_penalty(const ControlPointGrid& grid, const RegularizerWeights& weights,
                                    const Index3& samples_per_tile);

}  // namespace bsreg
