#include "bsreg/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace bsreg {

ControlPointGrid random_grid(const GridGeometry& geom, double amplitude, std::uint64_t seed)
{
    ControlPointGrid grid(geom);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-amplitude, amplitude);
    for (auto& lat : grid.coefficients)
        for (double& v : lat) v = dist(rng);
    return grid;
}

namespace {

struct Mode {
    Vec3 wave;  // radians per mm
    double phase;
    double weight;
};

}  // namespace

GroundTruth make_ground_truth_field(const GridGeometry& geom, double amplitude, double smoothness,
                                    std::uint64_t seed, std::size_t landmark_count, double landmark_margin,
                                    int max_attempts)
{
    if (!(amplitude >= 0.0) || !(smoothness > 0.0)) throw std::invalid_argument("amplitude and smoothness must be >= 0");
    if (!(amplitude < smoothness / 3.0)) throw std::invalid_argument("amplitude must be below smoothness / 3");
    const Vec3 lo = geom.origin();
    const Vec3 ext = geom.extent();
    for (int d = 0; d < 3; ++d)
        if (2.0 * landmark_margin >= ext[d]) throw std::invalid_argument("landmark margin exceeds grid extent");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Index3 dims = geom.lattice_dims();

    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        ControlPointGrid field(geom);
        if (amplitude > 0.0) {
            double peak = 0.0;
            for (int c = 0; c < 3; ++c) {
                std::vector<Mode> modes(6);
                for (auto& m : modes) {
                    Vec3 dir{normal(rng), normal(rng), normal(rng)};
                    const double len = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]) + 1e-12;
                    const double wavelength = smoothness * (1.0 + unit(rng));
                    for (int d = 0; d < 3; ++d) m.wave[d] = 2.0 * std::numbers::pi * dir[d] / (len * wavelength);
                    m.phase = 2.0 * std::numbers::pi * unit(rng);
                    m.weight = 0.5 + unit(rng);
                }
                for (int i = 0; i < dims[0]; ++i)
                    for (int j = 0; j < dims[1]; ++j)
                        for (int k = 0; k < dims[2]; ++k) {
                            const Vec3 x = geom.control_point_position({i, j, k});
                            double v = 0.0;
                            for (const auto& m : modes)
                                v += m.weight * std::sin(m.wave[0] * x[0] + m.wave[1] * x[1] + m.wave[2] * x[2] + m.phase);
                            field.at(c, i, j, k) = v;
                            peak = std::max(peak, std::abs(v));
                        }
            }
            const double scale = peak > 0.0 ? amplitude / peak : 0.0;
            for (auto& lat : field.coefficients)
                for (double& v : lat) v *= scale;

            const auto jac = jacobian_map(field, SamplingSpec::per_tile_samples({4, 4, 4}));
            if (!(jac.min > 0.0)) continue;
        }

        GroundTruth gt{std::move(field), {}, {}};
        gt.fixed.label = "fixed";
        for (std::size_t n = 0; n < landmark_count; ++n) {
            Vec3 p;
            for (int d = 0; d < 3; ++d) p[d] = lo[d] + landmark_margin + (ext[d] - 2.0 * landmark_margin) * unit(rng);
            gt.fixed.points.push_back(p);
        }
        gt.moving = warp_landmarks(gt.field, gt.fixed).warped;
        gt.moving.label = "moving";
        return gt;
    }
    throw NumericalError("could not draw a field with positive Jacobian determinant");
}

}  // namespace bsreg
