// Uniform cubic B-spline displacement fields on a regular control-point lattice.
//
// A grid of N1 x N2 x N3 tiles is parameterized by (N1+3) x (N2+3) x (N3+3)
// coefficients per displacement component. Tile t along an axis covers the
// physical interval [origin + t*r, origin + (t+1)*r] and is supported by the
// lattice entries t..t+3 on that axis. Lattices are stored with the axis-3
// index varying fastest.
//
// Components and axes are zero-based in this API (component 0 is nu_1).
#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace bsreg {

using Vec3 = std::array<double, 3>;
using Index3 = std::array<int, 3>;
/// Derivative order along each axis, e.g. {1,0,1} is d^2/dx1 dx3.
using MultiIndex = std::array<int, 3>;
/// The 4x4x4 coefficients supporting one tile, flattened as 16*l + 4*m + n.
using TileVector = std::array<double, 64>;
using Mat3 = std::array<std::array<double, 3>, 3>;

class OutOfDomain : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Malformed or truncated files.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values where a finite result is required.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Spacings below this are rejected instead of producing huge 1/r^3 factors.
inline constexpr double kMinSpacing = 1e-6;

constexpr int tile_offset(int l, int m, int n) { return 16 * l + 4 * m + n; }

class GridGeometry {
public:
    GridGeometry() : GridGeometry({1, 1, 1}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}) {}
    GridGeometry(Index3 tiles, Vec3 spacing, Vec3 origin);

    const Index3& tiles() const { return tiles_; }
    const Vec3& spacing() const { return spacing_; }
    const Vec3& origin() const { return origin_; }

    /// Control points per axis (tiles + 3).
    Index3 lattice_dims() const { return {tiles_[0] + 3, tiles_[1] + 3, tiles_[2] + 3}; }
    std::size_t lattice_size() const;
    std::size_t tile_count() const;
    Vec3 extent() const;
    Vec3 upper() const;

    std::size_t lattice_index(int i, int j, int k) const
    {
        const Index3 d = lattice_dims();
        return (static_cast<std::size_t>(i) * d[1] + j) * d[2] + k;
    }
    std::size_t tile_linear_index(const Index3& t) const
    {
        return (static_cast<std::size_t>(t[0]) * tiles_[1] + t[1]) * tiles_[2] + t[2];
    }
    Index3 tile_from_linear(std::size_t idx) const;

    /// Physical position of the knot where the basis for lattice entry k peaks
    /// (origin + (k-1)*r per axis).
    Vec3 control_point_position(const Index3& k) const;

    bool contains(const Vec3& x) const;

    friend bool operator==(const GridGeometry&, const GridGeometry&) = default;

private:
    Index3 tiles_;
    Vec3 spacing_;
    Vec3 origin_;
};

using Lattice = std::vector<double>;
using CoefficientLattices = std::array<Lattice, 3>;

struct ControlPointGrid {
    ControlPointGrid() : ControlPointGrid(GridGeometry{}) {}
    /// All coefficients zero.
    explicit ControlPointGrid(GridGeometry geom);

    GridGeometry geometry;
    CoefficientLattices coefficients;

    double& at(int component, int i, int j, int k)
    {
        return coefficients[component][geometry.lattice_index(i, j, k)];
    }
    double at(int component, int i, int j, int k) const
    {
        return coefficients[component][geometry.lattice_index(i, j, k)];
    }

    /// Throws NumericalError on any non-finite coefficient.
    void check_finite() const;
};

/// Lattices shaped like the grid's coefficients, filled with zeros.
CoefficientLattices zero_lattices(const GridGeometry& geom);

struct LocalCoord {
    Index3 tile;
    Vec3 u;  ///< normalized position within the tile, each in [0,1]
};

/// Q = B * R * Delta^(order): rows map [1, x, x^2, x^3] (x the physical
/// offset inside the tile) to the order-th physical derivative of the four
/// basis pieces.
struct QMatrix {
    std::array<std::array<double, 4>, 4> entries{};
    int axis = 0;
    int order = 0;

    std::array<double, 4> apply(double x) const;
};

/// d^order beta_l / du^order at u.
double eval_basis(double u, int l, int order);

QMatrix build_q(double spacing, int order, int axis = 0);

/// Q matrices for every axis and derivative order of one tile spacing.
class QTable {
public:
    explicit QTable(const Vec3& spacing);

    const QMatrix& q(int axis, int order) const { return q_[axis][order]; }
    std::array<double, 4> weights(int axis, int order, double offset) const
    {
        return q_[axis][order].apply(offset);
    }

private:
    std::array<std::array<QMatrix, 4>, 3> q_;
};

LocalCoord locate(const GridGeometry& geom, const Vec3& x);

Vec3 eval_displacement(const ControlPointGrid& grid, const Vec3& x);
Vec3 eval_displacement(const ControlPointGrid& grid, const QTable& table, const Vec3& x);

/// Mixed partial of one displacement component; total order at most 3.
double eval_partial(const ControlPointGrid& grid, const Vec3& x, int component,
                    const MultiIndex& order);

/// Spatial gradient: result[i][j] = d nu_i / d x_j.
Mat3 eval_gradient(const ControlPointGrid& grid, const QTable& table, const Vec3& x);

std::array<TileVector, 3> tile_coefficients(const ControlPointGrid& grid, const Index3& tile);

void validate_multi_index(const MultiIndex& order);

// BSPG1 coefficient files: text header then little-endian float64 payload,
// component-major, lattice index axis-3 fastest.
void write_grid(const ControlPointGrid& grid, std::ostream& os);
void write_grid(const ControlPointGrid& grid, const std::string& path);
ControlPointGrid read_grid(std::istream& is);
ControlPointGrid read_grid(const std::string& path);

}  // namespace bsreg
