#include "bsreg/registration.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace bsreg {

void RegistrationConfig::validate() const
{
    if (stages.empty()) throw std::invalid_argument("registration needs at least one stage");
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const auto& st = stages[s];
        for (int d = 0; d < 3; ++d) {
            if (!(st.grid_spacing[d] >= kMinSpacing)) throw std::invalid_argument("stage grid spacing must be positive");
            if (s > 0 && st.grid_spacing[d] > stages[s - 1].grid_spacing[d])
                throw std::invalid_argument("stage grid spacings must not increase");
        }
        if (st.max_iterations < 0) throw std::invalid_argument("stage iterations must be >= 0");
        if (st.downsample < 1) throw std::invalid_argument("stage downsample factor must be >= 1");
    }
    weights.validate();
    if (optimizer.history_size < 1) throw std::invalid_argument("optimizer history must be >= 1");
    if (threads < 1) throw std::invalid_argument("threads must be >= 1");
}

namespace {

// Neumaier summation: the cost is a sum of ~1e5-1e7 squares and its finite
// differences should only see the samples that actually changed.
struct CompensatedSum {
    double sum = 0.0;
    double carry = 0.0;
    void add(double x)
    {
        const double t = sum + x;
        carry += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
        sum = t;
    }
    double value() const { return sum + carry; }
};

struct AxisWeights {
    bool inside;
    int tile;
    std::array<double, 4> w;
};

std::vector<AxisWeights> axis_weights(const Volume& vol, const GridGeometry& geom, const QTable& table, int axis)
{
    std::vector<AxisWeights> out(vol.dims()[axis]);
    const double r = geom.spacing()[axis];
    const double o = geom.origin()[axis];
    const double tol = 1e-9 * r;
    for (int s = 0; s < vol.dims()[axis]; ++s) {
        const double x = vol.origin()[axis] + s * vol.spacing()[axis];
        const double rel = x - o;
        auto& a = out[s];
        a.inside = rel >= -tol && rel <= geom.tiles()[axis] * r + tol;
        if (!a.inside) continue;
        a.tile = std::clamp(static_cast<int>(std::floor(rel / r)), 0, geom.tiles()[axis] - 1);
        a.w = table.weights(axis, 0, std::clamp(rel - a.tile * r, 0.0, r));
    }
    return out;
}

}  // namespace

CostGradient mse_cost_grad(const Volume& fixed, const Volume& moving, const ControlPointGrid& grid, int threads)
{
    if (fixed.components() != 1 || moving.components() != 1)
        throw std::invalid_argument("mse_cost_grad expects scalar volumes");
    if (!fixed.same_geometry(moving)) throw std::invalid_argument("fixed and moving volumes differ in geometry");
    if (threads < 1) throw std::invalid_argument("threads must be >= 1");

    const GridGeometry& geom = grid.geometry;
    const QTable table(geom.spacing());
    std::array<std::vector<AxisWeights>, 3> ax;
    for (int d = 0; d < 3; ++d) ax[d] = axis_weights(fixed, geom, table, d);

    const Index3 n = fixed.dims();
    const std::size_t chunks = std::min<std::size_t>(threads, n[0]);
    struct Partial {
        CompensatedSum value;
        std::size_t samples = 0;
        CoefficientLattices grad;
    };
    std::vector<Partial> partial(chunks);

#pragma omp parallel for schedule(static, 1) num_threads(threads)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(chunks); ++c) {
        Partial& P = partial[c];
        P.grad = zero_lattices(geom);
        const int i_begin = static_cast<int>(n[0] * c / chunks);
        const int i_end = static_cast<int>(n[0] * (c + 1) / chunks);
        for (int i = i_begin; i < i_end; ++i) {
            const auto& a0 = ax[0][i];
            if (!a0.inside) continue;
            for (int j = 0; j < n[1]; ++j) {
                const auto& a1 = ax[1][j];
                if (!a1.inside) continue;
                for (int k = 0; k < n[2]; ++k) {
                    const auto& a2 = ax[2][k];
                    if (!a2.inside) continue;
                    std::array<double, 64> w;
                    for (int l = 0; l < 4; ++l)
                        for (int m = 0; m < 4; ++m)
                            for (int q = 0; q < 4; ++q) w[tile_offset(l, m, q)] = a0.w[l] * a1.w[m] * a2.w[q];

                    Vec3 y = fixed.position(i, j, k);
                    for (int comp = 0; comp < 3; ++comp) {
                        const Lattice& lat = grid.coefficients[comp];
                        double nu = 0.0;
                        for (int l = 0; l < 4; ++l)
                            for (int m = 0; m < 4; ++m) {
                                const double* p = &lat[geom.lattice_index(a0.tile + l, a1.tile + m, a2.tile)];
                                for (int q = 0; q < 4; ++q) nu += w[tile_offset(l, m, q)] * p[q];
                            }
                        y[comp] += nu;
                    }
                    double mv;
                    Vec3 gm;
                    if (!sample_trilinear(moving, y, mv, gm)) continue;
                    const double diff = mv - fixed.at(i, j, k);
                    P.value.add(diff * diff);
                    ++P.samples;
                    for (int comp = 0; comp < 3; ++comp) {
                        const double s = 2.0 * diff * gm[comp];
                        if (s == 0.0) continue;
                        Lattice& g = P.grad[comp];
                        for (int l = 0; l < 4; ++l)
                            for (int m = 0; m < 4; ++m) {
                                double* p = &g[geom.lattice_index(a0.tile + l, a1.tile + m, a2.tile)];
                                for (int q = 0; q < 4; ++q) p[q] += s * w[tile_offset(l, m, q)];
                            }
                    }
                }
            }
        }
    }

    CostGradient out;
    out.gradient = std::move(partial[0].grad);
    CompensatedSum total = partial[0].value;
    out.samples = partial[0].samples;
    for (std::size_t c = 1; c < chunks; ++c) {
        total.add(partial[c].value.sum);
        total.add(partial[c].value.carry);
        out.samples += partial[c].samples;
        for (int comp = 0; comp < 3; ++comp)
            for (std::size_t i = 0; i < out.gradient[comp].size(); ++i) out.gradient[comp][i] += partial[c].grad[comp][i];
    }
    out.value = total.value();
    return out;
}

GridGeometry grid_for_volume(const Volume& vol, const Vec3& spacing)
{
    Index3 tiles;
    for (int d = 0; d < 3; ++d) {
        const double extent = (vol.dims()[d] - 1) * vol.spacing()[d];
        tiles[d] = std::max(1, static_cast<int>(std::ceil(extent / spacing[d] - 1e-9)));
    }
    return GridGeometry(tiles, spacing, vol.origin());
}

namespace {

// (A^T A)^-1 A^T for the 1D design matrix of one axis.
Eigen::MatrixXd axis_pseudo_inverse(const GridGeometry& target, int axis, int spp, std::vector<double>& positions)
{
    const int tiles = target.tiles()[axis];
    const int samples = tiles * spp + 1;
    const int coeffs = tiles + 3;
    const double r = target.spacing()[axis];
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(samples, coeffs);
    positions.resize(samples);
    for (int s = 0; s < samples; ++s) {
        const double off = static_cast<double>(s) / spp;
        const int t = std::min(static_cast<int>(std::floor(off)), tiles - 1);
        const double u = std::clamp(off - t, 0.0, 1.0);
        positions[s] = target.origin()[axis] + off * r;
        for (int l = 0; l < 4; ++l) A(s, t + l) = eval_basis(u, l, 0);
    }
    const Eigen::MatrixXd normal = A.transpose() * A;
    return normal.ldlt().solve(A.transpose());
}

}  // namespace

ControlPointGrid transfer_field(const ControlPointGrid& source, const GridGeometry& target, int samples_per_tile)
{
    if (samples_per_tile < 1) throw std::invalid_argument("samples_per_tile must be >= 1");
    std::array<Eigen::MatrixXd, 3> pinv;
    std::array<std::vector<double>, 3> pos;
    for (int d = 0; d < 3; ++d) pinv[d] = axis_pseudo_inverse(target, d, samples_per_tile, pos[d]);

    const Index3 ns = {static_cast<int>(pos[0].size()), static_cast<int>(pos[1].size()), static_cast<int>(pos[2].size())};
    const Index3 nc = target.lattice_dims();
    const QTable table(source.geometry.spacing());
    const Vec3 lo = source.geometry.origin();
    const Vec3 hi = source.geometry.upper();

    std::array<std::vector<double>, 3> samples;
    for (auto& s : samples) s.resize(static_cast<std::size_t>(ns[0]) * ns[1] * ns[2]);
    for (int i = 0; i < ns[0]; ++i)
        for (int j = 0; j < ns[1]; ++j)
            for (int k = 0; k < ns[2]; ++k) {
                Vec3 x = {pos[0][i], pos[1][j], pos[2][k]};
                for (int d = 0; d < 3; ++d) x[d] = std::clamp(x[d], lo[d], hi[d]);
                const Vec3 v = eval_displacement(source, table, x);
                const std::size_t idx = (static_cast<std::size_t>(i) * ns[1] + j) * ns[2] + k;
                for (int c = 0; c < 3; ++c) samples[c][idx] = v[c];
            }

    ControlPointGrid out(target);
    for (int c = 0; c < 3; ++c) {
        // Apply the per-axis pseudo-inverses one axis at a time.
        const auto& Y = samples[c];
        std::vector<double> t2(static_cast<std::size_t>(ns[0]) * ns[1] * nc[2], 0.0);
        for (int i = 0; i < ns[0]; ++i)
            for (int j = 0; j < ns[1]; ++j)
                for (int kc = 0; kc < nc[2]; ++kc) {
                    double s = 0.0;
                    for (int k = 0; k < ns[2]; ++k) s += pinv[2](kc, k) * Y[(static_cast<std::size_t>(i) * ns[1] + j) * ns[2] + k];
                    t2[(static_cast<std::size_t>(i) * ns[1] + j) * nc[2] + kc] = s;
                }
        std::vector<double> t1(static_cast<std::size_t>(ns[0]) * nc[1] * nc[2], 0.0);
        for (int i = 0; i < ns[0]; ++i)
            for (int jc = 0; jc < nc[1]; ++jc)
                for (int kc = 0; kc < nc[2]; ++kc) {
                    double s = 0.0;
                    for (int j = 0; j < ns[1]; ++j) s += pinv[1](jc, j) * t2[(static_cast<std::size_t>(i) * ns[1] + j) * nc[2] + kc];
                    t1[(static_cast<std::size_t>(i) * nc[1] + jc) * nc[2] + kc] = s;
                }
        for (int ic = 0; ic < nc[0]; ++ic)
            for (int jc = 0; jc < nc[1]; ++jc)
                for (int kc = 0; kc < nc[2]; ++kc) {
                    double s = 0.0;
                    for (int i = 0; i < ns[0]; ++i) s += pinv[0](ic, i) * t1[(static_cast<std::size_t>(i) * nc[1] + jc) * nc[2] + kc];
                    out.at(c, ic, jc, kc) = s;
                }
    }
    return out;
}

std::vector<double> pack(const CoefficientLattices& lat)
{
    std::vector<double> x;
    x.reserve(lat[0].size() * 3);
    for (const auto& l : lat) x.insert(x.end(), l.begin(), l.end());
    return x;
}

void unpack(const std::vector<double>& x, CoefficientLattices& lat)
{
    std::size_t off = 0;
    for (auto& l : lat) {
        if (off + l.size() > x.size()) throw std::invalid_argument("unpack: vector too short");
        std::copy(x.begin() + off, x.begin() + off + l.size(), l.begin());
        off += l.size();
    }
}

RegistrationResult optimize(const Volume& fixed, const Volume& moving, const RegistrationConfig& config)
{
    config.validate();
    if (!fixed.same_geometry(moving)) throw std::invalid_argument("fixed and moving volumes differ in geometry");

    RegistrationResult result;
    ControlPointGrid current(grid_for_volume(fixed, config.stages.front().grid_spacing));

    for (std::size_t s = 0; s < config.stages.size(); ++s) {
        const RegistrationStage& stage = config.stages[s];
        const GridGeometry geom = grid_for_volume(fixed, stage.grid_spacing);
        if (!(geom == current.geometry)) current = transfer_field(current, geom);

        const Volume f = downsample(fixed, stage.downsample);
        const Volume m = downsample(moving, stage.downsample);
        const VMatrixBank bank(geom.spacing());
        const bool regularized = std::any_of(config.weights.mu.begin(), config.weights.mu.end(),
                                             [](double w) { return w != 0.0; });

        ControlPointGrid work = current;
        double last_mse = 0.0, last_penalty = 0.0;
        const Objective objective = [&](const std::vector<double>& x, std::vector<double>& g) {
            unpack(x, work.coefficients);
            const CostGradient sim = mse_cost_grad(f, m, work, config.threads);
            double value = sim.value;
            g = pack(sim.gradient);
            last_mse = sim.value;
            last_penalty = 0.0;
            if (regularized) {
                const PenaltyResult pen = penalty_parallel(work, config.weights, bank, config.threads);
                value += pen.value;
                last_penalty = pen.value;
                std::size_t off = 0;
                for (const auto& lat : pen.gradient)
                    for (double v : lat) g[off++] += v;
            }
            if (!std::isfinite(value)) throw NumericalError("registration cost became non-finite");
            return value;
        };

        LbfgsSettings settings;
        settings.history_size = config.optimizer.history_size;
        settings.max_iterations = stage.max_iterations;
        settings.gradient_tolerance = config.optimizer.gradient_tolerance;
        settings.step_tolerance = config.optimizer.step_tolerance;
        const LbfgsResult opt = minimize_lbfgs(objective, pack(current.coefficients), settings);

        unpack(opt.x, current.coefficients);
        for (std::size_t it = 0; it < opt.history.size(); ++it)
            result.history.push_back({static_cast<int>(s), static_cast<int>(it), opt.history[it]});

        StageSummary summary;
        summary.geometry = geom;
        summary.iterations = opt.iterations;
        summary.evaluations = opt.evaluations;
        summary.stop_reason = opt.stop_reason;
        summary.initial_cost = opt.history.front();
        summary.final_cost = opt.value;
        // Re-evaluate at the accepted point; the last objective call may have been a rejected trial.
        std::vector<double> scratch(opt.x.size());
        objective(opt.x, scratch);
        summary.final_mse = last_mse;
        summary.final_penalty = last_penalty;
        result.stages.push_back(summary);
    }
    result.grid = std::move(current);
    return result;
}

}  // namespace bsreg
