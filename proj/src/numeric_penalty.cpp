#include "bsreg/numeric_penalty.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "multi_index.hpp"

namespace bsreg {

namespace {

constexpr int kS1 = static_cast<int>(Regularizer::diffusion);
constexpr int kS2 = static_cast<int>(Regularizer::curvature);
constexpr int kS3 = static_cast<int>(Regularizer::linear_elastic);
constexpr int kS4 = static_cast<int>(Regularizer::third_order);
constexpr int kS5 = static_cast<int>(Regularizer::total_displacement);

// Per-axis evaluation of one sample coordinate: supporting tile and the
// basis weights (value and derivatives) at the offset inside it.
struct AxisSample {
    int tile;
    std::array<std::array<double, 4>, 4> w;  // [order][piece]
};

std::vector<AxisSample> axis_samples(const GridGeometry& geom, const QTable& table, int axis, int count,
                                     double first, double step, int max_order)
{
    std::vector<AxisSample> out(count);
    const double r = geom.spacing()[axis];
    const double o = geom.origin()[axis];
    for (int s = 0; s < count; ++s) {
        const double x = first + s * step;
        int t = static_cast<int>(std::floor((x - o) / r));
        t = std::clamp(t, 0, geom.tiles()[axis] - 1);
        out[s].tile = t;
        const double offset = x - o - t * r;
        for (int k = 0; k <= max_order; ++k) out[s].w[k] = table.weights(axis, k, offset);
    }
    return out;
}

struct Term1D {
    int offset;
    double weight;
};

// Central stencils. Third order composes three half-step central
// differences, so its value belongs to the midpoint between samples 0 and +1.
std::vector<Term1D> stencil_1d(int order, double h)
{
    switch (order) {
    case 0: return {{0, 1.0}};
    case 1: return {{-1, -0.5 / h}, {1, 0.5 / h}};
    case 2: return {{-1, 1.0 / (h * h)}, {0, -2.0 / (h * h)}, {1, 1.0 / (h * h)}};
    case 3: {
        const double c = 1.0 / (h * h * h);
        return {{-1, -c}, {0, 3.0 * c}, {1, -3.0 * c}, {2, c}};
    }
    default: throw std::invalid_argument("stencil order outside 0..3");
    }
}

int reach_below(int order) { return order == 0 ? 0 : 1; }
int reach_above(int order) { return order == 3 ? 2 : (order == 0 ? 0 : 1); }

struct Stencil3D {
    struct Point {
        Index3 d;
        double w;
    };
    std::vector<Point> points;
    Index3 below{};
    Index3 above{};
};

Stencil3D stencil_3d(const MultiIndex& m, const Vec3& h)
{
    Stencil3D s;
    const auto a = stencil_1d(m[0], h[0]);
    const auto b = stencil_1d(m[1], h[1]);
    const auto c = stencil_1d(m[2], h[2]);
    for (const auto& x : a)
        for (const auto& y : b)
            for (const auto& z : c) s.points.push_back({{x.offset, y.offset, z.offset}, x.weight * y.weight * z.weight});
    for (int d = 0; d < 3; ++d) {
        s.below[d] = reach_below(m[d]);
        s.above[d] = reach_above(m[d]);
    }
    return s;
}

// Scalar samples of one field component, axis-3 fastest.
struct Grid3 {
    Index3 n;
    std::vector<double> v;

    std::size_t idx(int i, int j, int k) const { return (static_cast<std::size_t>(i) * n[1] + j) * n[2] + k; }
};

class Differentiator {
public:
    Differentiator(const Grid3& g, const Stencil3D& s, BoundaryPolicy policy) : g_(g), s_(s), policy_(policy)
    {
        for (const auto& p : s.points) flat_.push_back({static_cast<std::ptrdiff_t>((static_cast<std::ptrdiff_t>(p.d[0]) * g.n[1] + p.d[1]) * g.n[2] + p.d[2]), p.w});
    }

    /// Whether the stencil is usable at this sample.
    bool valid(int i, int j, int k) const
    {
        if (policy_ == BoundaryPolicy::clamp) return true;
        const Index3 p = {i, j, k};
        for (int d = 0; d < 3; ++d)
            if (p[d] < s_.below[d] || p[d] >= g_.n[d] - s_.above[d]) return false;
        return true;
    }

    double operator()(int i, int j, int k) const
    {
        if (policy_ == BoundaryPolicy::skip) {
            const double* base = g_.v.data() + g_.idx(i, j, k);
            double s = 0.0;
            for (const auto& f : flat_) s += f.w * base[f.off];
            return s;
        }
        double s = 0.0;
        for (const auto& p : s_.points) {
            const int a = std::clamp(i + p.d[0], 0, g_.n[0] - 1);
            const int b = std::clamp(j + p.d[1], 0, g_.n[1] - 1);
            const int c = std::clamp(k + p.d[2], 0, g_.n[2] - 1);
            s += p.w * g_.v[g_.idx(a, b, c)];
        }
        return s;
    }

private:
    struct Flat {
        std::ptrdiff_t off;
        double w;
    };
    const Grid3& g_;
    const Stencil3D& s_;
    BoundaryPolicy policy_;
    std::vector<Flat> flat_;
};

// Ordered reduction over i-slabs so the result is independent of thread count.
template <typename PerSample>
double reduce_slabs(const Index3& n, int threads, PerSample&& f)
{
    std::vector<double> slab(n[0], 0.0);
#pragma omp parallel for schedule(static) num_threads(threads)
    for (int i = 0; i < n[0]; ++i) {
        double s = 0.0;
        for (int j = 0; j < n[1]; ++j)
            for (int k = 0; k < n[2]; ++k) s += f(i, j, k);
        slab[i] = s;
    }
    double total = 0.0;
    for (double s : slab) total += s;
    return total;
}

}  // namespace

Volume dense_field(const ControlPointGrid& grid, const SamplingSpec& sampling, int threads)
{
    if (threads < 1) throw std::invalid_argument("threads must be >= 1");
    Volume out = sample_lattice(grid.geometry, sampling, 3);
    const QTable table(grid.geometry.spacing());
    const GridGeometry& geom = grid.geometry;
    std::array<std::vector<AxisSample>, 3> ax;
    for (int d = 0; d < 3; ++d)
        ax[d] = axis_samples(geom, table, d, out.dims()[d], out.origin()[d], out.spacing()[d], 0);

    const Index3 n = out.dims();
#pragma omp parallel for schedule(static) num_threads(threads)
    for (int i = 0; i < n[0]; ++i)
        for (int j = 0; j < n[1]; ++j)
            for (int k = 0; k < n[2]; ++k) {
                const auto& a0 = ax[0][i];
                const auto& a1 = ax[1][j];
                const auto& a2 = ax[2][k];
                // Per-voxel B-spline interpolation over the 64 supporting coefficients.
                for (int c = 0; c < 3; ++c) {
                    const Lattice& lat = grid.coefficients[c];
                    double sum = 0.0;
                    for (int l = 0; l < 4; ++l)
                        for (int m = 0; m < 4; ++m) {
                            const double* p = &lat[geom.lattice_index(a0.tile + l, a1.tile + m, a2.tile)];
                            const double wlm = a0.w[0][l] * a1.w[0][m];
                            for (int q = 0; q < 4; ++q) sum += wlm * a2.w[0][q] * p[q];
                        }
                    out.at(i, j, k, c) = sum;
                }
            }
    return out;
}

PenaltyBreakdown fd_penalty(const Volume& field, const RegularizerWeights& weights, BoundaryPolicy boundary,
                            int threads)
{
    weights.validate();
    if (threads < 1) throw std::invalid_argument("threads must be >= 1");
    if (field.components() != 3) throw std::invalid_argument("fd_penalty expects a 3-component field");

    PenaltyBreakdown out;
    for (int t = 0; t < 5; ++t) out.evaluated[t] = weights.mu[t] != 0.0;

    int max_order = 0;
    if (out.evaluated[kS1] || out.evaluated[kS3]) max_order = 1;
    if (out.evaluated[kS2]) max_order = 2;
    if (out.evaluated[kS4]) max_order = 3;
    const int need = max_order == 3 ? 4 : 3;
    for (int d = 0; d < 3; ++d)
        if (max_order > 0 && field.dims()[d] < need)
            throw InsufficientSampling("finite differences need at least " + std::to_string(need) + " samples per axis");

    const Index3 n = field.dims();
    std::array<Grid3, 3> comp;
    for (int c = 0; c < 3; ++c) {
        comp[c].n = n;
        comp[c].v.resize(field.voxel_count());
        for (std::size_t i = 0; i < field.voxel_count(); ++i) comp[c].v[i] = field.data()[i * 3 + c];
    }
    const Vec3& h = field.spacing();
    const double cell = h[0] * h[1] * h[2];

    // Sum of squares of D^m nu_c over the samples where D^m is usable.
    std::map<std::pair<int, int>, double> sum_sq;
    auto squares = [&](int c, const MultiIndex& m) {
        const auto key = std::make_pair(c, detail::multi_index_key(m));
        if (auto it = sum_sq.find(key); it != sum_sq.end()) return it->second;
        const Stencil3D st = stencil_3d(m, h);
        const Differentiator D(comp[c], st, boundary);
        const double s = reduce_slabs(n, threads, [&](int i, int j, int k) {
            if (!D.valid(i, j, k)) return 0.0;
            const double v = D(i, j, k);
            return v * v;
        });
        sum_sq[key] = s;
        return s;
    };

    // Regularizer integrands, with the ordered derivative tuples summed literally.
    auto sum_order = [&](int order) {
        double s = 0.0;
        for (int c = 0; c < 3; ++c)
            for (const auto& m : detail::ordered_axis_tuples(order)) s += squares(c, m);
        return s;
    };

    if (out.evaluated[kS5]) out.terms[kS5] = sum_order(0) * cell;
    if (out.evaluated[kS1] || out.evaluated[kS3]) {
        const double first = sum_order(1) * cell;
        if (out.evaluated[kS1]) out.terms[kS1] = first;
        if (out.evaluated[kS3]) {
            double cross = 0.0;
            for (int a = 0; a < 3; ++a)
                for (int b = a + 1; b < 3; ++b) {
                    MultiIndex ma{}, mb{};
                    ma[a] = 1;
                    mb[b] = 1;
                    const Stencil3D sa = stencil_3d(ma, h);
                    const Stencil3D sb = stencil_3d(mb, h);
                    const Differentiator Da(comp[a], sa, boundary);
                    const Differentiator Db(comp[b], sb, boundary);
                    cross += reduce_slabs(n, threads, [&](int i, int j, int k) {
                        if (!Da.valid(i, j, k) || !Db.valid(i, j, k)) return 0.0;
                        return Da(i, j, k) * Db(i, j, k);
                    });
                }
            out.terms[kS3] = first + cross * cell;
        }
    }
    if (out.evaluated[kS2]) out.terms[kS2] = sum_order(2) * cell;
    if (out.evaluated[kS4]) out.terms[kS4] = sum_order(3) * cell;

    for (int t = 0; t < 5; ++t) out.value += weights.mu[t] * out.terms[t];
    return out;
}

PenaltyBreakdown fd_penalty(const ControlPointGrid& grid, const RegularizerWeights& weights,
                            const SamplingSpec& sampling, int threads)
{
    const Volume lattice = sample_lattice(grid.geometry, sampling, 3);
    for (int d = 0; d < 3; ++d)
        if (lattice.dims()[d] < 4 * grid.geometry.tiles()[d])
            throw InsufficientSampling("finite differences need at least 4 samples per tile along each axis");
    const Volume field = dense_field(grid, sampling, threads);
    return fd_penalty(field, weights, sampling.boundary, threads);
}

PenaltyBreakdown quadrature_penalty(const ControlPointGrid& grid, const RegularizerWeights& weights,
                                    const Index3& samples_per_tile)
{
    weights.validate();
    for (int s : samples_per_tile)
        if (s < 2) throw InsufficientSampling("quadrature needs at least 2 samples per tile axis");

    PenaltyBreakdown out;
    for (int t = 0; t < 5; ++t) out.evaluated[t] = weights.mu[t] != 0.0;

    const GridGeometry& geom = grid.geometry;
    const Vec3& r = geom.spacing();
    const QTable table(r);
    const Index3& S = samples_per_tile;
    const double cell = (r[0] / S[0]) * (r[1] / S[1]) * (r[2] / S[2]);
    const std::size_t npts = static_cast<std::size_t>(S[0]) * S[1] * S[2];

    // Basis derivatives at the cell centres of one tile (same for every tile).
    std::array<std::vector<std::array<std::array<double, 4>, 4>>, 3> W;
    for (int d = 0; d < 3; ++d) {
        W[d].resize(S[d]);
        for (int s = 0; s < S[d]; ++s)
            for (int k = 0; k < 4; ++k) W[d][s][k] = table.weights(d, k, (s + 0.5) * r[d] / S[d]);
    }

    // Which derivative orders are needed.
    std::vector<MultiIndex> needed;
    auto want = [&](int order) {
        for (const auto& m : detail::multi_indices(order)) needed.push_back(m);
    };
    if (out.evaluated[kS5]) want(0);
    if (out.evaluated[kS1] || out.evaluated[kS3]) want(1);
    if (out.evaluated[kS2]) want(2);
    if (out.evaluated[kS4]) want(3);

    // Exact D^m nu_c at every sample of a tile by separable contraction.
    auto contract = [&](const TileVector& p, const MultiIndex& m, std::vector<double>& dst) {
        std::vector<double> t1(16 * S[2]);
        for (int lm = 0; lm < 16; ++lm)
            for (int s2 = 0; s2 < S[2]; ++s2) {
                const auto& w = W[2][s2][m[2]];
                t1[lm * S[2] + s2] = w[0] * p[lm * 4] + w[1] * p[lm * 4 + 1] + w[2] * p[lm * 4 + 2] + w[3] * p[lm * 4 + 3];
            }
        std::vector<double> t2(4 * S[1] * S[2]);
        for (int l = 0; l < 4; ++l)
            for (int s1 = 0; s1 < S[1]; ++s1) {
                const auto& w = W[1][s1][m[1]];
                for (int s2 = 0; s2 < S[2]; ++s2) {
                    double v = 0.0;
                    for (int mm = 0; mm < 4; ++mm) v += w[mm] * t1[(l * 4 + mm) * S[2] + s2];
                    t2[(l * S[1] + s1) * S[2] + s2] = v;
                }
            }
        dst.assign(npts, 0.0);
        for (int s0 = 0; s0 < S[0]; ++s0) {
            const auto& w = W[0][s0][m[0]];
            for (int l = 0; l < 4; ++l) {
                const double* src = &t2[static_cast<std::size_t>(l) * S[1] * S[2]];
                double* row = &dst[static_cast<std::size_t>(s0) * S[1] * S[2]];
                for (int q = 0; q < S[1] * S[2]; ++q) row[q] += w[l] * src[q];
            }
        }
    };

    std::array<double, 5> total{};
    std::map<int, std::vector<double>> deriv[3];
    for (std::size_t tidx = 0; tidx < geom.tile_count(); ++tidx) {
        const auto p = tile_coefficients(grid, geom.tile_from_linear(tidx));
        for (int c = 0; c < 3; ++c)
            for (const auto& m : needed) contract(p[c], m, deriv[c][detail::multi_index_key(m)]);

        auto sum_sq = [&](int c, const MultiIndex& m) {
            const auto& v = deriv[c][detail::multi_index_key(m)];
            double s = 0.0;
            for (double x : v) s += x * x;
            return s;
        };
        auto sum_order = [&](int order) {
            double s = 0.0;
            for (int c = 0; c < 3; ++c)
                for (const auto& m : detail::ordered_axis_tuples(order)) s += sum_sq(c, m);
            return s;
        };

        if (out.evaluated[kS5]) total[kS5] += sum_order(0) * cell;
        if (out.evaluated[kS1] || out.evaluated[kS3]) {
            const double first = sum_order(1) * cell;
            if (out.evaluated[kS1]) total[kS1] += first;
            if (out.evaluated[kS3]) {
                double cross = 0.0;
                for (int a = 0; a < 3; ++a)
                    for (int b = a + 1; b < 3; ++b) {
                        MultiIndex ma{}, mb{};
                        ma[a] = 1;
                        mb[b] = 1;
                        const auto& da = deriv[a][detail::multi_index_key(ma)];
                        const auto& db = deriv[b][detail::multi_index_key(mb)];
                        for (std::size_t q = 0; q < npts; ++q) cross += da[q] * db[q];
                    }
                total[kS3] += first + cross * cell;
            }
        }
        if (out.evaluated[kS2]) total[kS2] += sum_order(2) * cell;
        if (out.evaluated[kS4]) total[kS4] += sum_order(3) * cell;
    }
    out.terms = total;
    for (int t = 0; t < 5; ++t) out.value += weights.mu[t] * out.terms[t];
    return out;
}

}  // namespace bsreg
