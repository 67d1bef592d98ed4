// B-spline registration: mean-squared-error similarity plus the analytic
// smoothness penalty, minimized stage by stage over a coarse-to-fine
// pyramid.
#pragma once

#include <string>
#include <vector>

#include "bsreg/analytic_penalty.hpp"
#include "bsreg/bspline.hpp"
#include "bsreg/lbfgs.hpp"
#include "bsreg/volume.hpp"

namespace bsreg {

struct RegistrationStage {
    Vec3 grid_spacing{10.0, 10.0, 10.0};
    int max_iterations = 50;
    int downsample = 1;
};

struct OptimizerSettings {
    int history_size = 10;
    double gradient_tolerance = 1e-6;
    double step_tolerance = 1e-6;
};

struct RegistrationConfig {
    std::vector<RegistrationStage> stages;
    RegularizerWeights weights;
    OptimizerSettings optimizer;
    int threads = 1;

    /// At least one stage, positive spacings that never increase from one
    /// stage to the next, non-negative iteration counts, positive factors.
    void validate() const;
};

struct CostGradient {
    double value = 0.0;
    CoefficientLattices gradient;
    std::size_t samples = 0;  ///< fixed samples that landed inside the moving image
};

/// sum_x (M(x + nu(x)) - F(x))^2 over fixed samples inside the grid whose
/// warped position lies inside the moving image (others are skipped). M is
/// trilinearly interpolated and the gradient is the exact derivative of that
/// interpolant, chained through the B-spline weights.
CostGradient mse_cost_grad(const Volume& fixed, const Volume& moving, const ControlPointGrid& grid,
                           int threads = 1);

/// Grid anchored at the volume origin with enough tiles to cover every sample.
GridGeometry grid_for_volume(const Volume& vol, const Vec3& spacing);

/// Least-squares fit of `target` coefficients to samples of `source` taken on
/// a tensor lattice (samples_per_tile per tile plus the far edge). Exact for
/// fields representable on the target grid.
ControlPointGrid transfer_field(const ControlPointGrid& source, const GridGeometry& target,
                               int samples_per_tile = 4);

struct IterationRecord {
    int stage = 0;
    int iteration = 0;
    double cost = 0.0;
};

struct StageSummary {
    GridGeometry geometry;
    int iterations = 0;
    int evaluations = 0;
    std::string stop_reason;
    double initial_cost = 0.0;
    double final_cost = 0.0;
    double final_mse = 0.0;
    double final_penalty = 0.0;
};

struct RegistrationResult {
    ControlPointGrid grid;
    std::vector<IterationRecord> history;
    std::vector<StageSummary> stages;
};

/// Flattened optimizer vector <-> coefficient lattices (component-major).
std::vector<double> pack(const CoefficientLattices& lat);
void unpack(const std::vector<double>& x, CoefficientLattices& lat);

RegistrationResult optimize(const Volume& fixed, const Volume& moving, const RegistrationConfig& config);

}  // namespace bsreg
