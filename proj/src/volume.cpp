#include "bsreg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "binary_io.hpp"

namespace bsreg {

Volume::Volume(Index3 dims, Vec3 spacing, Vec3 origin, int components)
    : dims_(dims), spacing_(spacing), origin_(origin), components_(components)
{
    for (int d = 0; d < 3; ++d) {
        if (dims_[d] < 1) throw std::invalid_argument("volume dims must be >= 1");
        if (!(spacing_[d] > 0.0) || !std::isfinite(spacing_[d]))
            throw std::invalid_argument("volume spacing must be finite and > 0");
        if (!std::isfinite(origin_[d])) throw std::invalid_argument("volume origin must be finite");
    }
    if (components_ != 1 && components_ != 3) throw std::invalid_argument("volume components must be 1 or 3");
    data_.assign(voxel_count() * components_, 0.0);
}

Vec3 Volume::upper() const
{
    return position(dims_[0] - 1, dims_[1] - 1, dims_[2] - 1);
}

bool Volume::same_geometry(const Volume& other, double tol) const
{
    if (dims_ != other.dims_) return false;
    for (int d = 0; d < 3; ++d) {
        if (std::abs(spacing_[d] - other.spacing_[d]) > tol * spacing_[d]) return false;
        if (std::abs(origin_[d] - other.origin_[d]) > tol * spacing_[d]) return false;
    }
    return true;
}

namespace {

struct AxisCell {
    int i0;
    int i1;
    double f;  // fractional position in [0,1]
};

bool axis_cell(double s, int n, AxisCell& cell)
{
    constexpr double eps = 1e-9;
    if (!(s >= -eps) || !(s <= (n - 1) + eps)) return false;
    if (n == 1) {
        cell = {0, 0, 0.0};
        return true;
    }
    int i0 = std::clamp(static_cast<int>(std::floor(s)), 0, n - 2);
    cell = {i0, i0 + 1, std::clamp(s - i0, 0.0, 1.0)};
    return true;
}

template <bool WithGradient>
bool trilinear(const Volume& vol, const Vec3& x, double& value, Vec3* gradient)
{
    std::array<AxisCell, 3> c;
    for (int d = 0; d < 3; ++d)
        if (!axis_cell((x[d] - vol.origin()[d]) / vol.spacing()[d], vol.dims()[d], c[d])) return false;

    double v[2][2][2];
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            for (int e = 0; e < 2; ++e)
                v[a][b][e] = vol.at(a ? c[0].i1 : c[0].i0, b ? c[1].i1 : c[1].i0, e ? c[2].i1 : c[2].i0);

    const double fx = c[0].f, fy = c[1].f, fz = c[2].f;
    // Interpolate along axis 3 first.
    double yz[2][2];
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) yz[a][b] = v[a][b][0] + fz * (v[a][b][1] - v[a][b][0]);
    double z0 = yz[0][0] + fy * (yz[0][1] - yz[0][0]);
    double z1 = yz[1][0] + fy * (yz[1][1] - yz[1][0]);
    value = z0 + fx * (z1 - z0);

    if constexpr (WithGradient) {
        // d/dx1
        const double gx = (z1 - z0);
        // d/dx2
        const double gy0 = yz[0][1] - yz[0][0];
        const double gy1 = yz[1][1] - yz[1][0];
        const double gy = gy0 + fx * (gy1 - gy0);
        // d/dx3
        double dz[2][2];
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) dz[a][b] = v[a][b][1] - v[a][b][0];
        const double dz0 = dz[0][0] + fy * (dz[0][1] - dz[0][0]);
        const double dz1 = dz[1][0] + fy * (dz[1][1] - dz[1][0]);
        const double gz = dz0 + fx * (dz1 - dz0);
        const Index3& n = vol.dims();
        (*gradient)[0] = n[0] > 1 ? gx / vol.spacing()[0] : 0.0;
        (*gradient)[1] = n[1] > 1 ? gy / vol.spacing()[1] : 0.0;
        (*gradient)[2] = n[2] > 1 ? gz / vol.spacing()[2] : 0.0;
    }
    return true;
}

}  // namespace

bool sample_trilinear(const Volume& vol, const Vec3& x, double& value)
{
    return trilinear<false>(vol, x, value, nullptr);
}

bool sample_trilinear(const Volume& vol, const Vec3& x, double& value, Vec3& gradient)
{
    return trilinear<true>(vol, x, value, &gradient);
}

Volume downsample(const Volume& vol, int factor)
{
    if (factor < 1) throw std::invalid_argument("downsample factor must be >= 1");
    if (factor == 1) return vol;
    Index3 dims;
    Vec3 spacing, origin;
    for (int d = 0; d < 3; ++d) {
        dims[d] = std::max(1, vol.dims()[d] / factor);
        const int f = std::min(factor, vol.dims()[d]);
        spacing[d] = vol.spacing()[d] * f;
        origin[d] = vol.origin()[d] + 0.5 * (f - 1) * vol.spacing()[d];
    }
    Volume out(dims, spacing, origin, vol.components());
    const Index3 f = {std::min(factor, vol.dims()[0]), std::min(factor, vol.dims()[1]),
                      std::min(factor, vol.dims()[2])};
    const double inv = 1.0 / (f[0] * f[1] * f[2]);
    for (int i = 0; i < dims[0]; ++i)
        for (int j = 0; j < dims[1]; ++j)
            for (int k = 0; k < dims[2]; ++k)
                for (int c = 0; c < vol.components(); ++c) {
                    double s = 0.0;
                    for (int a = 0; a < f[0]; ++a)
                        for (int b = 0; b < f[1]; ++b)
                            for (int e = 0; e < f[2]; ++e) s += vol.at(i * f[0] + a, j * f[1] + b, k * f[2] + e, c);
                    out.at(i, j, k, c) = s * inv;
                }
    return out;
}

Volume warp_volume(const Volume& moving, const ControlPointGrid& grid, const Volume& fixed_geometry, double outside)
{
    if (moving.components() != 1) throw std::invalid_argument("warp_volume expects a scalar volume");
    Volume out(fixed_geometry.dims(), fixed_geometry.spacing(), fixed_geometry.origin(), 1);
    const QTable table(grid.geometry.spacing());
    const Index3& n = out.dims();
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n[0]; ++i)
        for (int j = 0; j < n[1]; ++j)
            for (int k = 0; k < n[2]; ++k) {
                const Vec3 x = out.position(i, j, k);
                double v = outside;
                if (grid.geometry.contains(x)) {
                    const Vec3 nu = eval_displacement(grid, table, x);
                    const Vec3 y = {x[0] + nu[0], x[1] + nu[1], x[2] + nu[2]};
                    if (!sample_trilinear(moving, y, v)) v = outside;
                }
                out.at(i, j, k) = v;
            }
    return out;
}

void write_volume(const Volume& vol, std::ostream& os)
{
    using detail::format_double;
    os << "VOL1\n";
    os << "dims " << vol.dims()[0] << ' ' << vol.dims()[1] << ' ' << vol.dims()[2] << '\n';
    os << "spacing " << format_double(vol.spacing()[0]) << ' ' << format_double(vol.spacing()[1]) << ' '
       << format_double(vol.spacing()[2]) << '\n';
    os << "origin " << format_double(vol.origin()[0]) << ' ' << format_double(vol.origin()[1]) << ' '
       << format_double(vol.origin()[2]) << '\n';
    os << "type float32\n";
    os << "components " << vol.components() << '\n';
    detail::write_f32(os, vol.data());
}

void write_volume(const Volume& vol, const std::string& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    write_volume(vol, os);
}

Volume read_volume(std::istream& is)
{
    constexpr const char* what = "VOL1";
    std::string magic;
    if (!std::getline(is, magic) || magic != "VOL1") throw FormatError("VOL1: bad magic line");
    auto dl = detail::header_line(is, "dims", what);
    const auto dims = detail::parse_fields<int, 3>(dl, what);
    auto sl = detail::header_line(is, "spacing", what);
    const auto spacing = detail::parse_fields<double, 3>(sl, what);
    auto ol = detail::header_line(is, "origin", what);
    const auto origin = detail::parse_fields<double, 3>(ol, what);
    auto tl = detail::header_line(is, "type", what);
    const auto type = detail::parse_fields<std::string, 1>(tl, what)[0];
    auto cl = detail::header_line(is, "components", what);
    const int components = detail::parse_fields<int, 1>(cl, what)[0];
    if (type != "float32" && type != "float64") throw FormatError("VOL1: unsupported element type '" + type + "'");

    Volume vol = [&] {
        try {
            return Volume(dims, spacing, origin, components);
        } catch (const std::exception& e) {
            throw FormatError(std::string("VOL1: invalid header: ") + e.what());
        }
    }();
    if (type == "float32")
        detail::read_f32(is, vol.data(), what);
    else
        detail::read_f64(is, vol.data(), what);
    return vol;
}

Volume read_volume(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path + "'");
    return read_volume(is);
}

PhantomKind parse_phantom_kind(const std::string& name)
{
    if (name == "blobs") return PhantomKind::blobs;
    if (name == "gradient") return PhantomKind::gradient;
    if (name == "checker") return PhantomKind::checker;
    throw std::invalid_argument("unknown phantom kind '" + name + "'");
}

Volume make_phantom(PhantomKind kind, Index3 dims, Vec3 spacing, std::uint64_t seed, Vec3 origin)
{
    Volume vol(dims, spacing, origin, 1);
    switch (kind) {
    case PhantomKind::gradient:
        for (int i = 0; i < dims[0]; ++i)
            for (int j = 0; j < dims[1]; ++j)
                for (int k = 0; k < dims[2]; ++k) vol.at(i, j, k) = vol.position(i, j, k)[0];
        break;
    case PhantomKind::checker: {
        constexpr int cube = 8;
        for (int i = 0; i < dims[0]; ++i)
            for (int j = 0; j < dims[1]; ++j)
                for (int k = 0; k < dims[2]; ++k) vol.at(i, j, k) = ((i / cube + j / cube + k / cube) % 2) ? 1.0 : 0.0;
        break;
    }
    case PhantomKind::blobs: {
        struct Blob {
            Vec3 center;
            Vec3 inv_width;
            double amplitude;
        };
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        Vec3 extent;
        for (int d = 0; d < 3; ++d) extent[d] = std::max(spacing[d], (dims[d] - 1) * spacing[d]);
        const double mean_extent = (extent[0] + extent[1] + extent[2]) / 3.0;

        const int count = 48;
        std::vector<Blob> blobs(count);
        for (auto& b : blobs) {
            for (int d = 0; d < 3; ++d) {
                b.center[d] = origin[d] + extent[d] * (0.1 + 0.8 * unit(rng));
                const double width = mean_extent * (0.03 + 0.07 * unit(rng));
                b.inv_width[d] = 1.0 / width;
            }
            b.amplitude = (unit(rng) < 0.75 ? 1.0 : -0.6) * (0.5 + 0.5 * unit(rng));
        }
        for (int i = 0; i < dims[0]; ++i)
            for (int j = 0; j < dims[1]; ++j)
                for (int k = 0; k < dims[2]; ++k) {
                    const Vec3 x = vol.position(i, j, k);
                    double v = 0.0;
                    for (const auto& b : blobs) {
                        double q = 0.0;
                        for (int d = 0; d < 3; ++d) {
                            const double t = (x[d] - b.center[d]) * b.inv_width[d];
                            q += t * t;
                        }
                        if (q < 40.0) v += b.amplitude * std::exp(-0.5 * q);
                    }
                    vol.at(i, j, k) = v;
                }
        break;
    }
    }
    return vol;
}

}  // namespace bsreg
