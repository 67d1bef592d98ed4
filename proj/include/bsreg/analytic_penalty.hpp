// Closed-form smoothness penalties for cubic B-spline displacement fields.
//
// Every penalty term has the form  integral over a tile of
// (d^a nu_i)(d^b nu_j),  which for B-spline coefficients p_i, p_j of that
// tile is the quadratic form p_i^T V p_j with a fixed 64x64 operator
//
//     V = Psi_1 (x) Psi_2 (x) Psi_3,
//     Psi_d(a,b) = int_0^{r_d} [Q_d^(a_d) x]_a [Q_d^(b_d) x]_b dx.
//
// The operators depend only on the tile spacing, so they are built once
// (VMatrixBank) and the penalty reduces to a sum of small dense products
// over tiles.
//
// The five regularizers:
//   S1 diffusion           sum_{i,j} (d nu_i / d x_j)^2
//   S2 curvature           sum_{i,j,k} (d^2 nu_i / d x_j d x_k)^2
//   S3 linear elastic      S1 integrand + sum_{i<j} (d nu_i/d x_i)(d nu_j/d x_j)
//   S4 third order         sum_{i,j,k,q} (d^3 nu_i / d x_j d x_k d x_q)^2
//   S5 total displacement  sum_i nu_i^2
// all integrated over the grid's full extent in physical units.
#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "bsreg/bspline.hpp"

namespace bsreg {

using Psi = std::array<std::array<double, 4>, 4>;

/// Dense 64x64 operator, row-major.
class VMatrix {
public:
    VMatrix() : data_(64 * 64, 0.0) {}

    double operator()(int row, int col) const { return data_[row * 64 + col]; }
    double& operator()(int row, int col) { return data_[row * 64 + col]; }
    const double* row(int r) const { return data_.data() + r * 64; }
    const std::vector<double>& data() const { return data_; }

    friend bool operator==(const VMatrix&, const VMatrix&) = default;

private:
    std::vector<double> data_;
};

/// Derivative multi-indices of the two factors of a penalty term.
struct DerivPair {
    MultiIndex first{};
    MultiIndex second{};

    /// Swaps the factors so that first <= second lexicographically.
    DerivPair canonical() const;
    bool is_square() const { return first == second; }

    friend auto operator<=>(const DerivPair&, const DerivPair&) = default;
};

std::string to_string(const DerivPair& pair);

/// Integrated per-axis block for one spacing and pair of derivative orders.
Psi build_psi(double spacing, int order_a, int order_b);

/// Kronecker composition; row index 16*l + 4*m + n matches TileVector layout.
VMatrix kron(const Psi& a, const Psi& b, const Psi& c);

VMatrix build_v(const Vec3& spacing, const DerivPair& pair);

/// The 23 canonical pairs used by the five regularizers: the zeroth-order
/// square, 3 first-order squares, 3 first-order cross pairs, 6 second-order
/// squares and 10 third-order squares, in that order.
const std::vector<DerivPair>& canonical_pairs();

class VMatrixBank {
public:
    explicit VMatrixBank(const Vec3& spacing);

    const Vec3& spacing() const { return spacing_; }
    const std::vector<DerivPair>& pairs() const { return canonical_pairs(); }
    std::size_t size() const { return matrices_.size(); }

    /// Operator for a pair in any factor order; throws std::out_of_range if
    /// the pair is not banked. For a swapped cross pair the caller must use
    /// the transpose.
    const VMatrix& at(const DerivPair& pair) const;
    const VMatrix& at_index(std::size_t i) const { return matrices_[i]; }
    std::size_t index_of(const DerivPair& pair) const;

    /// Bytes needed to hold every matrix at the given element width.
    std::size_t payload_bytes(std::size_t element_bytes = sizeof(double)) const
    {
        return matrices_.size() * 64 * 64 * element_bytes;
    }

    // VBANK1 export: text header (magic, spacing, pair list) then the
    // matrices as little-endian float64, row-major, in pair order.
    void write(std::ostream& os) const;
    void write(const std::string& path) const;

private:
    Vec3 spacing_;
    std::vector<VMatrix> matrices_;
};

inline VMatrixBank build_vbank(const Vec3& spacing) { return VMatrixBank(spacing); }

enum class Regularizer : int {
    diffusion = 0,
    curvature = 1,
    linear_elastic = 2,
    third_order = 3,
    total_displacement = 4,
};

inline constexpr std::array<const char*, 5> kRegularizerNames = {
    "diffusion", "curvature", "linear_elastic", "third_order", "total_displacement"};

/// Accepts the names above or S1..S5.
Regularizer parse_regularizer(const std::string& name);

struct RegularizerWeights {
    std::array<double, 5> mu{};

    static RegularizerWeights only(Regularizer r, double weight = 1.0);
    static RegularizerWeights all(double weight = 1.0);
    double operator[](Regularizer r) const { return mu[static_cast<int>(r)]; }
    /// Throws std::invalid_argument on negative or non-finite weights.
    void validate() const;
};

struct PenaltyResult {
    double value = 0.0;
    CoefficientLattices gradient;
    /// S1..S5. Terms with zero weight are not evaluated and stay 0.
    std::array<double, 5> terms{};
    std::array<bool, 5> evaluated{};
};

struct PenaltyOptions {
    bool compute_gradient = true;
    /// Divide every term by the grid volume (off: raw integrals).
    bool normalize_by_volume = false;
};

/// p_i^T V p_j.
double tile_term(const TileVector& pi, const VMatrix& v, const TileVector& pj);

/// Serial reference: tiles visited in linear order.
PenaltyResult penalty(const ControlPointGrid& grid, const RegularizerWeights& weights,
                      const VMatrixBank& bank, const PenaltyOptions& options = {});

/// OpenMP version. Tiles are split into `thread_count` contiguous chunks with
/// private accumulators merged in chunk order, so the result is bitwise
/// reproducible for a fixed thread count and identical to penalty() for 1.
PenaltyResult penalty_parallel(const ControlPointGrid& grid, const RegularizerWeights& weights,
                               const VMatrixBank& bank, int thread_count,
                               const PenaltyOptions& options = {});

/// Penalty restricted to tiles [first, last) in linear tile order.
PenaltyResult penalty_tiles(const ControlPointGrid& grid, const RegularizerWeights& weights,
                            const VMatrixBank& bank, std::size_t first, std::size_t last,
                            const PenaltyOptions& options = {});

}  // namespace bsreg
