#include "bsreg/analytic_penalty.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "binary_io.hpp"

namespace bsreg {

DerivPair DerivPair::canonical() const
{
    return second < first ? DerivPair{second, first} : *this;
}

std::string to_string(const DerivPair& pair)
{
    std::string s = "(";
    for (int v : pair.first) s += std::to_string(v);
    s += ",";
    for (int v : pair.second) s += std::to_string(v);
    return s + ")";
}

Psi build_psi(double spacing, int order_a, int order_b)
{
    if (order_a < 0 || order_a > 3 || order_b < 0 || order_b > 3)
        throw std::domain_error("build_psi: derivative order outside 0..3");
    const QMatrix qa = build_q(spacing, order_a);
    const QMatrix qb = build_q(spacing, order_b);

    // int_0^r x^k dx for k = 0..6
    std::array<double, 7> moment;
    double rp = spacing;
    for (int k = 0; k < 7; ++k) {
        moment[k] = rp / (k + 1);
        rp *= spacing;
    }

    Psi psi{};
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
            double s = 0.0;
            for (int m = 0; m < 4; ++m)
                for (int n = 0; n < 4; ++n) s += qa.entries[a][m] * qb.entries[b][n] * moment[m + n];
            psi[a][b] = s;
        }
    return psi;
}

VMatrix kron(const Psi& a, const Psi& b, const Psi& c)
{
    VMatrix v;
    for (int l = 0; l < 4; ++l)
        for (int m = 0; m < 4; ++m)
            for (int n = 0; n < 4; ++n)
                for (int l2 = 0; l2 < 4; ++l2)
                    for (int m2 = 0; m2 < 4; ++m2)
                        for (int n2 = 0; n2 < 4; ++n2)
                            v(tile_offset(l, m, n), tile_offset(l2, m2, n2)) = a[l][l2] * b[m][m2] * c[n][n2];
    return v;
}

VMatrix build_v(const Vec3& spacing, const DerivPair& pair)
{
    validate_multi_index(pair.first);
    validate_multi_index(pair.second);
    return kron(build_psi(spacing[0], pair.first[0], pair.second[0]),
                build_psi(spacing[1], pair.first[1], pair.second[1]),
                build_psi(spacing[2], pair.first[2], pair.second[2]));
}

namespace {

// Multi-indices of total order k, in descending lexicographic order.
std::vector<MultiIndex> multi_indices(int k)
{
    std::vector<MultiIndex> out;
    for (int a = k; a >= 0; --a)
        for (int b = k - a; b >= 0; --b) out.push_back({a, b, k - a - b});
    return out;
}

MultiIndex unit(int axis)
{
    MultiIndex m{};
    m[axis] = 1;
    return m;
}

int factorial(int n) { return n <= 1 ? 1 : n * factorial(n - 1); }

// Number of ordered derivative sequences giving the multi-index.
double multiplicity(const MultiIndex& m)
{
    return static_cast<double>(factorial(m[0] + m[1] + m[2])) /
           (factorial(m[0]) * factorial(m[1]) * factorial(m[2]));
}

int axis_of_unit(const MultiIndex& m)
{
    for (int d = 0; d < 3; ++d)
        if (m[d] == 1) return d;
    return -1;
}

}  // namespace

const std::vector<DerivPair>& canonical_pairs()
{
    static const std::vector<DerivPair> pairs = [] {
        std::vector<DerivPair> p;
        p.push_back({{0, 0, 0}, {0, 0, 0}});
        for (const auto& m : multi_indices(1)) p.push_back({m, m});
        for (int a = 0; a < 3; ++a)
            for (int b = a + 1; b < 3; ++b) p.push_back(DerivPair{unit(a), unit(b)}.canonical());
        for (const auto& m : multi_indices(2)) p.push_back({m, m});
        for (const auto& m : multi_indices(3)) p.push_back({m, m});
        return p;
    }();
    return pairs;
}

VMatrixBank::VMatrixBank(const Vec3& spacing) : spacing_(spacing)
{
    for (double r : spacing)
        if (!(r >= kMinSpacing) || !std::isfinite(r)) throw std::domain_error("V bank spacing must be >= 1e-6 mm");
    matrices_.reserve(canonical_pairs().size());
    for (const auto& pair : canonical_pairs()) matrices_.push_back(build_v(spacing, pair));
}

std::size_t VMatrixBank::index_of(const DerivPair& pair) const
{
    const DerivPair c = pair.canonical();
    const auto& p = canonical_pairs();
    const auto it = std::find(p.begin(), p.end(), c);
    if (it == p.end()) throw std::out_of_range("derivative pair " + to_string(pair) + " is not in the V bank");
    return static_cast<std::size_t>(it - p.begin());
}

const VMatrix& VMatrixBank::at(const DerivPair& pair) const { return matrices_[index_of(pair)]; }

void VMatrixBank::write(std::ostream& os) const
{
    using detail::format_double;
    os << "VBANK1\n";
    os << "spacing " << format_double(spacing_[0]) << ' ' << format_double(spacing_[1]) << ' '
       << format_double(spacing_[2]) << '\n';
    os << "pairs " << matrices_.size() << '\n';
    for (const auto& pair : pairs()) {
        for (int v : pair.first) os << v << ' ';
        os << pair.second[0] << ' ' << pair.second[1] << ' ' << pair.second[2] << '\n';
    }
    for (const auto& m : matrices_) detail::write_f64(os, m.data());
}

void VMatrixBank::write(const std::string& path) const
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    write(os);
}

Regularizer parse_regularizer(const std::string& name)
{
    for (int i = 0; i < 5; ++i)
        if (name == kRegularizerNames[i] || name == "S" + std::to_string(i + 1)) return static_cast<Regularizer>(i);
    throw std::invalid_argument("unknown regularizer '" + name + "'");
}

RegularizerWeights RegularizerWeights::only(Regularizer r, double weight)
{
    RegularizerWeights w;
    w.mu[static_cast<int>(r)] = weight;
    return w;
}

RegularizerWeights RegularizerWeights::all(double weight)
{
    RegularizerWeights w;
    w.mu.fill(weight);
    return w;
}

void RegularizerWeights::validate() const
{
    for (double m : mu)
        if (!std::isfinite(m) || m < 0.0) throw std::invalid_argument("regularizer weights must be finite and >= 0");
}

double tile_term(const TileVector& pi, const VMatrix& v, const TileVector& pj)
{
    double sum = 0.0;
    for (int a = 0; a < 64; ++a) {
        const double* row = v.row(a);
        double s = 0.0;
        for (int b = 0; b < 64; ++b) s += row[b] * pj[b];
        sum += pi[a] * s;
    }
    return sum;
}

namespace {

constexpr int kTerms = 5;

// Squared terms of one derivative order share a component-diagonal form,
// so their banked operators are summed (with multiplicities) into a single
// operator; cross terms couple two components and are kept separate.
struct TermPlan {
    VMatrix v;
    bool square = true;
    // Cross pairs: p_{comp_a}^T V p_{comp_b}.
    int comp_a = 0;
    int comp_b = 0;
    std::array<double, kTerms> multiplicity{};
    double weighted = 0.0;  // sum_n mu_n * multiplicity_n
};

std::vector<TermPlan> make_plan(const VMatrixBank& bank, const RegularizerWeights& w,
                                std::array<bool, kTerms>& evaluated)
{
    for (int n = 0; n < kTerms; ++n) evaluated[n] = w.mu[n] != 0.0;
    const int s1 = static_cast<int>(Regularizer::diffusion);
    const int s2 = static_cast<int>(Regularizer::curvature);
    const int s3 = static_cast<int>(Regularizer::linear_elastic);
    const int s4 = static_cast<int>(Regularizer::third_order);
    const int s5 = static_cast<int>(Regularizer::total_displacement);

    // Regularizers fed by the squared terms of each derivative order.
    const std::array<std::vector<int>, 4> users = {{{s5}, {s1, s3}, {s2}, {s4}}};

    std::vector<TermPlan> plan;
    for (int order = 0; order < 4; ++order) {
        TermPlan t;
        for (int n : users[order])
            if (evaluated[n]) t.multiplicity[n] = 1.0;
        bool used = false;
        for (int n = 0; n < kTerms; ++n) {
            used = used || t.multiplicity[n] != 0.0;
            t.weighted += w.mu[n] * t.multiplicity[n];
        }
        if (!used) continue;
        std::vector<double> sum(64 * 64, 0.0);
        for (std::size_t i = 0; i < bank.size(); ++i) {
            const DerivPair& pair = bank.pairs()[i];
            if (!pair.is_square() || pair.first[0] + pair.first[1] + pair.first[2] != order) continue;
            const double m = multiplicity(pair.first);
            const auto& src = bank.at_index(i).data();
            for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += m * src[k];
        }
        for (int a = 0; a < 64; ++a)
            for (int b = 0; b < 64; ++b) t.v(a, b) = sum[a * 64 + b];
        plan.push_back(std::move(t));
    }

    if (evaluated[s3]) {
        for (std::size_t i = 0; i < bank.size(); ++i) {
            const DerivPair& pair = bank.pairs()[i];
            if (pair.is_square()) continue;
            // (d nu_a / d x_a)(d nu_b / d x_b)
            TermPlan t;
            t.v = bank.at_index(i);
            t.square = false;
            t.comp_a = axis_of_unit(pair.first);
            t.comp_b = axis_of_unit(pair.second);
            t.multiplicity[s3] = 1.0;
            t.weighted = w.mu[s3];
            plan.push_back(std::move(t));
        }
    }
    return plan;
}

// out_c = V * p_c for the three components at once.
void matvec3(const VMatrix& v, const std::array<TileVector, 3>& p, std::array<TileVector, 3>& out)
{
    for (int a = 0; a < 64; ++a) {
        const double* row = v.row(a);
        double s0 = 0.0, s1 = 0.0, s2 = 0.0;
        for (int b = 0; b < 64; ++b) {
            s0 += row[b] * p[0][b];
            s1 += row[b] * p[1][b];
            s2 += row[b] * p[2][b];
        }
        out[0][a] = s0;
        out[1][a] = s1;
        out[2][a] = s2;
    }
}

void matvec(const VMatrix& v, const TileVector& p, TileVector& out)
{
    for (int a = 0; a < 64; ++a) {
        const double* row = v.row(a);
        double s = 0.0;
        for (int b = 0; b < 64; ++b) s += row[b] * p[b];
        out[a] = s;
    }
}

void matvec_transposed(const VMatrix& v, const TileVector& p, TileVector& out)
{
    out.fill(0.0);
    for (int a = 0; a < 64; ++a) {
        const double* row = v.row(a);
        const double pa = p[a];
        for (int b = 0; b < 64; ++b) out[b] += row[b] * pa;
    }
}

double dot(const TileVector& a, const TileVector& b)
{
    double s = 0.0;
    for (int i = 0; i < 64; ++i) s += a[i] * b[i];
    return s;
}

struct Accumulator {
    std::array<double, kTerms> terms{};
    CoefficientLattices gradient;
};

void scatter(const GridGeometry& geom, const Index3& tile, const TileVector& g, Lattice& lat)
{
    for (int l = 0; l < 4; ++l)
        for (int m = 0; m < 4; ++m) {
            double* p = &lat[geom.lattice_index(tile[0] + l, tile[1] + m, tile[2])];
            for (int n = 0; n < 4; ++n) p[n] += g[tile_offset(l, m, n)];
        }
}

void accumulate_tiles(const ControlPointGrid& grid, const std::vector<TermPlan>& plan, std::size_t first,
                      std::size_t last, bool with_gradient, Accumulator& acc)
{
    const GridGeometry& geom = grid.geometry;
    std::array<TileVector, 3> vp;
    std::array<TileVector, 3> grad;
    TileVector tmp;
    for (std::size_t idx = first; idx < last; ++idx) {
        const Index3 tile = geom.tile_from_linear(idx);
        const auto p = tile_coefficients(grid, tile);
        std::array<double, kTerms> tile_terms{};
        if (with_gradient)
            for (auto& g : grad) g.fill(0.0);

        for (const TermPlan& t : plan) {
            if (t.square) {
                matvec3(t.v, p, vp);
                double q = 0.0;
                for (int c = 0; c < 3; ++c) q += dot(p[c], vp[c]);
                for (int n = 0; n < kTerms; ++n) tile_terms[n] += t.multiplicity[n] * q;
                if (with_gradient) {
                    // V is symmetric for squared terms: d(p^T V p)/dp = 2 V p.
                    const double s = 2.0 * t.weighted;
                    for (int c = 0; c < 3; ++c)
                        for (int i = 0; i < 64; ++i) grad[c][i] += s * vp[c][i];
                }
            } else {
                matvec(t.v, p[t.comp_b], tmp);
                const double q = dot(p[t.comp_a], tmp);
                for (int n = 0; n < kTerms; ++n) tile_terms[n] += t.multiplicity[n] * q;
                if (with_gradient) {
                    for (int i = 0; i < 64; ++i) grad[t.comp_a][i] += t.weighted * tmp[i];
                    matvec_transposed(t.v, p[t.comp_a], tmp);
                    for (int i = 0; i < 64; ++i) grad[t.comp_b][i] += t.weighted * tmp[i];
                }
            }
        }
        for (int n = 0; n < kTerms; ++n) acc.terms[n] += tile_terms[n];
        if (with_gradient)
            for (int c = 0; c < 3; ++c) scatter(geom, tile, grad[c], acc.gradient[c]);
    }
}

void check_inputs(const ControlPointGrid& grid, const RegularizerWeights& weights, const VMatrixBank& bank)
{
    weights.validate();
    const Vec3& gs = grid.geometry.spacing();
    const Vec3& bs = bank.spacing();
    for (int d = 0; d < 3; ++d)
        if (std::abs(gs[d] - bs[d]) > 1e-12 * std::max(std::abs(gs[d]), 1.0))
            throw std::invalid_argument("V bank spacing does not match the grid spacing");
}

PenaltyResult finish(Accumulator&& acc, const ControlPointGrid& grid, const RegularizerWeights& weights,
                     const std::array<bool, kTerms>& evaluated, const PenaltyOptions& options)
{
    PenaltyResult res;
    res.evaluated = evaluated;
    res.terms = acc.terms;
    res.gradient = std::move(acc.gradient);
    if (options.normalize_by_volume) {
        const Vec3 e = grid.geometry.extent();
        const double inv = 1.0 / (e[0] * e[1] * e[2]);
        for (double& t : res.terms) t *= inv;
        for (auto& lat : res.gradient)
            for (double& g : lat) g *= inv;
    }
    res.value = 0.0;
    for (int n = 0; n < kTerms; ++n) res.value += weights.mu[n] * res.terms[n];
    return res;
}

Accumulator make_accumulator(const GridGeometry& geom, bool with_gradient)
{
    Accumulator acc;
    if (with_gradient) acc.gradient = zero_lattices(geom);
    return acc;
}

}  // namespace

PenaltyResult penalty_tiles(const ControlPointGrid& grid, const RegularizerWeights& weights,
                            const VMatrixBank& bank, std::size_t first, std::size_t last,
                            const PenaltyOptions& options)
{
    check_inputs(grid, weights, bank);
    if (first > last || last > grid.geometry.tile_count()) throw std::out_of_range("tile range out of bounds");
    std::array<bool, kTerms> evaluated;
    const auto plan = make_plan(bank, weights, evaluated);
    Accumulator acc = make_accumulator(grid.geometry, options.compute_gradient);
    accumulate_tiles(grid, plan, first, last, options.compute_gradient, acc);
    return finish(std::move(acc), grid, weights, evaluated, options);
}

PenaltyResult penalty(const ControlPointGrid& grid, const RegularizerWeights& weights, const VMatrixBank& bank,
                      const PenaltyOptions& options)
{
    return penalty_tiles(grid, weights, bank, 0, grid.geometry.tile_count(), options);
}

PenaltyResult penalty_parallel(const ControlPointGrid& grid, const RegularizerWeights& weights,
                               const VMatrixBank& bank, int thread_count, const PenaltyOptions& options)
{
    if (thread_count < 1) throw std::invalid_argument("thread_count must be >= 1");
    check_inputs(grid, weights, bank);
    std::array<bool, kTerms> evaluated;
    const auto plan = make_plan(bank, weights, evaluated);

    const std::size_t tiles = grid.geometry.tile_count();
    const std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(thread_count), std::max<std::size_t>(tiles, 1));
    std::vector<Accumulator> partial(chunks);

#pragma omp parallel for schedule(static, 1) num_threads(thread_count)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(chunks); ++c) {
        const std::size_t first = tiles * c / chunks;
        const std::size_t last = tiles * (c + 1) / chunks;
        partial[c] = make_accumulator(grid.geometry, options.compute_gradient);
        accumulate_tiles(grid, plan, first, last, options.compute_gradient, partial[c]);
    }

    Accumulator total = std::move(partial[0]);
    for (std::size_t c = 1; c < chunks; ++c) {
        for (int n = 0; n < kTerms; ++n) total.terms[n] += partial[c].terms[n];
        if (options.compute_gradient)
            for (int k = 0; k < 3; ++k) {
                Lattice& dst = total.gradient[k];
                const Lattice& src = partial[c].gradient[k];
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
            }
    }
    return finish(std::move(total), grid, weights, evaluated, options);
}

}  // namespace bsreg
