#include "bsreg/bspline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"

namespace bsreg {

namespace detail {

std::string format_double(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace detail

namespace {

using Mat4 = std::array<std::array<double, 4>, 4>;

// Basis coefficient matrix: row l holds the monomial coefficients of beta_l(u).
constexpr Mat4 kBasis = {{
    {1.0 / 6, -3.0 / 6, 3.0 / 6, -1.0 / 6},
    {4.0 / 6, 0.0, -6.0 / 6, 3.0 / 6},
    {1.0 / 6, 3.0 / 6, 3.0 / 6, -3.0 / 6},
    {0.0, 0.0, 0.0, 1.0 / 6},
}};

// Monomial differentiation: Delta^(d) maps [1,x,x^2,x^3] to its d-th derivative.
Mat4 delta_matrix(int order)
{
    Mat4 d{};
    switch (order) {
    case 0:
        for (int i = 0; i < 4; ++i) d[i][i] = 1.0;
        break;
    case 1:
        d[1][0] = 1.0;
        d[2][1] = 2.0;
        d[3][2] = 3.0;
        break;
    case 2:
        d[2][0] = 2.0;
        d[3][1] = 6.0;
        break;
    case 3:
        d[3][0] = 6.0;
        break;
    default:
        throw std::domain_error("derivative order must be in 0..3");
    }
    return d;
}

Mat4 multiply(const Mat4& a, const Mat4& b)
{
    Mat4 c{};
    for (int i = 0; i < 4; ++i)
        for (int k = 0; k < 4; ++k)
            for (int j = 0; j < 4; ++j) c[i][j] += a[i][k] * b[k][j];
    return c;
}

void check_spacing(double r)
{
    if (!(r >= kMinSpacing) || !std::isfinite(r))
        throw std::domain_error("tile spacing must be finite and >= 1e-6 mm");
}

}  // namespace

GridGeometry::GridGeometry(Index3 tiles, Vec3 spacing, Vec3 origin)
    : tiles_(tiles), spacing_(spacing), origin_(origin)
{
    for (int d = 0; d < 3; ++d) {
        if (tiles_[d] < 1) throw std::invalid_argument("tile counts must be >= 1");
        check_spacing(spacing_[d]);
        if (!std::isfinite(origin_[d])) throw std::invalid_argument("origin must be finite");
    }
}

std::size_t GridGeometry::lattice_size() const
{
    const Index3 d = lattice_dims();
    return static_cast<std::size_t>(d[0]) * d[1] * d[2];
}

std::size_t GridGeometry::tile_count() const
{
    return static_cast<std::size_t>(tiles_[0]) * tiles_[1] * tiles_[2];
}

Vec3 GridGeometry::extent() const
{
    return {tiles_[0] * spacing_[0], tiles_[1] * spacing_[1], tiles_[2] * spacing_[2]};
}

Vec3 GridGeometry::upper() const
{
    const Vec3 e = extent();
    return {origin_[0] + e[0], origin_[1] + e[1], origin_[2] + e[2]};
}

Index3 GridGeometry::tile_from_linear(std::size_t idx) const
{
    Index3 t;
    t[2] = static_cast<int>(idx % tiles_[2]);
    idx /= tiles_[2];
    t[1] = static_cast<int>(idx % tiles_[1]);
    t[0] = static_cast<int>(idx / tiles_[1]);
    return t;
}

Vec3 GridGeometry::control_point_position(const Index3& k) const
{
    Vec3 p;
    for (int d = 0; d < 3; ++d) p[d] = origin_[d] + (k[d] - 1) * spacing_[d];
    return p;
}

bool GridGeometry::contains(const Vec3& x) const
{
    for (int d = 0; d < 3; ++d) {
        const double tol = 1e-9 * spacing_[d];
        const double rel = x[d] - origin_[d];
        if (!(rel >= -tol) || !(rel <= tiles_[d] * spacing_[d] + tol)) return false;
    }
    return true;
}

ControlPointGrid::ControlPointGrid(GridGeometry geom)
    : geometry(geom), coefficients(zero_lattices(geom))
{
}

void ControlPointGrid::check_finite() const
{
    for (const auto& lat : coefficients)
        for (double v : lat)
            if (!std::isfinite(v)) throw NumericalError("non-finite B-spline coefficient");
}

CoefficientLattices zero_lattices(const GridGeometry& geom)
{
    const std::size_t n = geom.lattice_size();
    return {Lattice(n, 0.0), Lattice(n, 0.0), Lattice(n, 0.0)};
}

std::array<double, 4> QMatrix::apply(double x) const
{
    const double x2 = x * x;
    const double x3 = x2 * x;
    std::array<double, 4> out;
    for (int a = 0; a < 4; ++a) {
        const auto& row = entries[a];
        out[a] = row[0] + row[1] * x + row[2] * x2 + row[3] * x3;
    }
    return out;
}

double eval_basis(double u, int l, int order)
{
    if (!(u >= 0.0 && u <= 1.0)) throw std::domain_error("eval_basis: u outside [0,1]");
    if (l < 0 || l > 3) throw std::domain_error("eval_basis: piece index outside 0..3");
    if (order < 0 || order > 3) throw std::domain_error("eval_basis: derivative order outside 0..3");

    // Differentiate the monomial expansion term by term.
    std::array<double, 4> c = kBasis[l];
    for (int d = 0; d < order; ++d) {
        for (int k = 0; k < 3; ++k) c[k] = c[k + 1] * (k + 1);
        c[3] = 0.0;
    }
    return c[0] + u * (c[1] + u * (c[2] + u * c[3]));
}

QMatrix build_q(double spacing, int order, int axis)
{
    check_spacing(spacing);
    if (axis < 0 || axis > 2) throw std::domain_error("build_q: axis outside 0..2");
    Mat4 scale{};
    scale[0][0] = 1.0;
    scale[1][1] = 1.0 / spacing;
    scale[2][2] = 1.0 / (spacing * spacing);
    scale[3][3] = 1.0 / (spacing * spacing * spacing);

    QMatrix q;
    q.entries = multiply(multiply(kBasis, scale), delta_matrix(order));
    q.axis = axis;
    q.order = order;
    return q;
}

QTable::QTable(const Vec3& spacing)
{
    for (int axis = 0; axis < 3; ++axis)
        for (int order = 0; order < 4; ++order) q_[axis][order] = build_q(spacing[axis], order, axis);
}

LocalCoord locate(const GridGeometry& geom, const Vec3& x)
{
    if (!geom.contains(x)) throw OutOfDomain("point outside the control-point grid extent");
    LocalCoord lc;
    for (int d = 0; d < 3; ++d) {
        const double s = (x[d] - geom.origin()[d]) / geom.spacing()[d];
        int t = static_cast<int>(std::floor(s));
        t = std::clamp(t, 0, geom.tiles()[d] - 1);
        lc.tile[d] = t;
        lc.u[d] = std::clamp(s - t, 0.0, 1.0);
    }
    return lc;
}

namespace {

// Sum over the 64 supporting coefficients of a tensor-product weight.
double contract(const Lattice& lat, const GridGeometry& geom, const Index3& tile,
                const std::array<double, 4>& w0, const std::array<double, 4>& w1,
                const std::array<double, 4>& w2)
{
    double sum = 0.0;
    for (int l = 0; l < 4; ++l) {
        double s1 = 0.0;
        for (int m = 0; m < 4; ++m) {
            const double* p = &lat[geom.lattice_index(tile[0] + l, tile[1] + m, tile[2])];
            const double s2 = w2[0] * p[0] + w2[1] * p[1] + w2[2] * p[2] + w2[3] * p[3];
            s1 += w1[m] * s2;
        }
        sum += w0[l] * s1;
    }
    return sum;
}

}  // namespace

Vec3 eval_displacement(const ControlPointGrid& grid, const QTable& table, const Vec3& x)
{
    const LocalCoord lc = locate(grid.geometry, x);
    const Vec3& r = grid.geometry.spacing();
    const auto w0 = table.weights(0, 0, lc.u[0] * r[0]);
    const auto w1 = table.weights(1, 0, lc.u[1] * r[1]);
    const auto w2 = table.weights(2, 0, lc.u[2] * r[2]);
    Vec3 out;
    for (int c = 0; c < 3; ++c) out[c] = contract(grid.coefficients[c], grid.geometry, lc.tile, w0, w1, w2);
    return out;
}

Vec3 eval_displacement(const ControlPointGrid& grid, const Vec3& x)
{
    return eval_displacement(grid, QTable(grid.geometry.spacing()), x);
}

void validate_multi_index(const MultiIndex& order)
{
    int total = 0;
    for (int d : order) {
        if (d < 0 || d > 3) throw std::invalid_argument("derivative order per axis must be in 0..3");
        total += d;
    }
    if (total > 3) throw std::invalid_argument("total derivative order must be <= 3");
}

double eval_partial(const ControlPointGrid& grid, const Vec3& x, int component, const MultiIndex& order)
{
    validate_multi_index(order);
    if (component < 0 || component > 2) throw std::invalid_argument("component must be 0..2");
    const LocalCoord lc = locate(grid.geometry, x);
    const Vec3& r = grid.geometry.spacing();
    std::array<std::array<double, 4>, 3> w;
    for (int d = 0; d < 3; ++d) w[d] = build_q(r[d], order[d], d).apply(lc.u[d] * r[d]);
    return contract(grid.coefficients[component], grid.geometry, lc.tile, w[0], w[1], w[2]);
}

Mat3 eval_gradient(const ControlPointGrid& grid, const QTable& table, const Vec3& x)
{
    const LocalCoord lc = locate(grid.geometry, x);
    const Vec3& r = grid.geometry.spacing();
    std::array<std::array<std::array<double, 4>, 2>, 3> w;
    for (int d = 0; d < 3; ++d)
        for (int o = 0; o < 2; ++o) w[d][o] = table.weights(d, o, lc.u[d] * r[d]);
    Mat3 g;
    for (int c = 0; c < 3; ++c) {
        const Lattice& lat = grid.coefficients[c];
        g[c][0] = contract(lat, grid.geometry, lc.tile, w[0][1], w[1][0], w[2][0]);
        g[c][1] = contract(lat, grid.geometry, lc.tile, w[0][0], w[1][1], w[2][0]);
        g[c][2] = contract(lat, grid.geometry, lc.tile, w[0][0], w[1][0], w[2][1]);
    }
    return g;
}

std::array<TileVector, 3> tile_coefficients(const ControlPointGrid& grid, const Index3& tile)
{
    const Index3& n = grid.geometry.tiles();
    for (int d = 0; d < 3; ++d)
        if (tile[d] < 0 || tile[d] >= n[d]) throw std::out_of_range("tile index out of range");
    std::array<TileVector, 3> out;
    for (int c = 0; c < 3; ++c) {
        const Lattice& lat = grid.coefficients[c];
        for (int l = 0; l < 4; ++l)
            for (int m = 0; m < 4; ++m) {
                const double* p = &lat[grid.geometry.lattice_index(tile[0] + l, tile[1] + m, tile[2])];
                for (int k = 0; k < 4; ++k) out[c][tile_offset(l, m, k)] = p[k];
            }
    }
    return out;
}

void write_grid(const ControlPointGrid& grid, std::ostream& os)
{
    using detail::format_double;
    const auto& g = grid.geometry;
    os << "BSPG1\n";
    os << "tiles " << g.tiles()[0] << ' ' << g.tiles()[1] << ' ' << g.tiles()[2] << '\n';
    os << "spacing " << format_double(g.spacing()[0]) << ' ' << format_double(g.spacing()[1]) << ' '
       << format_double(g.spacing()[2]) << '\n';
    os << "origin " << format_double(g.origin()[0]) << ' ' << format_double(g.origin()[1]) << ' '
       << format_double(g.origin()[2]) << '\n';
    for (const auto& lat : grid.coefficients) detail::write_f64(os, lat);
}

void write_grid(const ControlPointGrid& grid, const std::string& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    write_grid(grid, os);
}

ControlPointGrid read_grid(std::istream& is)
{
    constexpr const char* what = "BSPG1";
    std::string magic;
    if (!std::getline(is, magic) || magic != "BSPG1") throw FormatError("BSPG1: bad magic line");
    auto tl = detail::header_line(is, "tiles", what);
    const auto tiles = detail::parse_fields<int, 3>(tl, what);
    auto sl = detail::header_line(is, "spacing", what);
    const auto spacing = detail::parse_fields<double, 3>(sl, what);
    auto ol = detail::header_line(is, "origin", what);
    const auto origin = detail::parse_fields<double, 3>(ol, what);

    GridGeometry geom = [&] {
        try {
            return GridGeometry(tiles, spacing, origin);
        } catch (const std::exception& e) {
            throw FormatError(std::string("BSPG1: invalid geometry: ") + e.what());
        }
    }();
    ControlPointGrid grid(geom);
    for (auto& lat : grid.coefficients) detail::read_f64(is, lat, what);
    for (const auto& lat : grid.coefficients)
        for (double v : lat)
            if (!std::isfinite(v)) throw FormatError("BSPG1: non-finite coefficient");
    return grid;
}

ControlPointGrid read_grid(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path + "'");
    return read_grid(is);
}

}  // namespace bsreg
