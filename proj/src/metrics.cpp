#include "bsreg/metrics.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace bsreg {

LandmarkSet read_landmarks(std::istream& is, std::string label)
{
    LandmarkSet set;
    set.label = std::move(label);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        Vec3 p;
        if (!(ss >> p[0])) continue;  // blank or comment-only
        if (!(ss >> p[1] >> p[2])) throw FormatError("landmarks line " + std::to_string(lineno) + ": expected 3 values");
        std::string extra;
        if (ss >> extra) throw FormatError("landmarks line " + std::to_string(lineno) + ": trailing data");
        for (double v : p)
            if (!std::isfinite(v)) throw FormatError("landmarks line " + std::to_string(lineno) + ": non-finite value");
        set.points.push_back(p);
    }
    return set;
}

LandmarkSet read_landmarks(const std::string& path)
{
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open '" + path + "'");
    return read_landmarks(is, path);
}

void write_landmarks(const LandmarkSet& set, std::ostream& os)
{
    os.precision(std::numeric_limits<double>::max_digits10);
    if (!set.label.empty()) os << "# " << set.label << '\n';
    for (const auto& p : set.points) os << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
}

void write_landmarks(const LandmarkSet& set, const std::string& path)
{
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    write_landmarks(set, os);
}

LandmarkSet voxel_to_physical(const LandmarkSet& set, const Volume& reference)
{
    LandmarkSet out;
    out.label = set.label;
    out.points.reserve(set.size());
    for (const auto& p : set.points) {
        Vec3 q;
        for (int d = 0; d < 3; ++d) q[d] = reference.origin()[d] + p[d] * reference.spacing()[d];
        out.points.push_back(q);
    }
    return out;
}

namespace {

double det_identity_plus(const Mat3& g)
{
    const double a = 1.0 + g[0][0], b = g[0][1], c = g[0][2];
    const double d = g[1][0], e = 1.0 + g[1][1], f = g[1][2];
    const double h = g[2][0], i = g[2][1], k = 1.0 + g[2][2];
    return a * (e * k - f * i) - b * (d * k - f * h) + c * (d * i - e * h);
}

JacobianMap jacobian_at(const ControlPointGrid& grid, Volume map)
{
    const QTable table(grid.geometry.spacing());
    const Index3 n = map.dims();
    std::vector<double> slab_min(n[0], std::numeric_limits<double>::infinity());
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n[0]; ++i) {
        double mn = std::numeric_limits<double>::infinity();
        for (int j = 0; j < n[1]; ++j)
            for (int k = 0; k < n[2]; ++k) {
                const double det = det_identity_plus(eval_gradient(grid, table, map.position(i, j, k)));
                map.at(i, j, k) = det;
                mn = std::min(mn, det);
            }
        slab_min[i] = mn;
    }
    JacobianMap out{std::move(map), std::numeric_limits<double>::infinity()};
    for (double m : slab_min) out.min = std::min(out.min, m);
    return out;
}

}  // namespace

JacobianMap jacobian_map(const ControlPointGrid& grid, const SamplingSpec& sampling)
{
    return jacobian_at(grid, sample_lattice(grid.geometry, sampling, 1));
}

JacobianMap jacobian_map(const ControlPointGrid& grid, const Volume& reference)
{
    Volume map(reference.dims(), reference.spacing(), reference.origin(), 1);
    if (!grid.geometry.contains(map.origin()) || !grid.geometry.contains(map.upper()))
        throw OutOfDomain("reference volume extends outside the control-point grid");
    return jacobian_at(grid, std::move(map));
}

WarpResult warp_landmarks(const ControlPointGrid& grid, const LandmarkSet& landmarks)
{
    const QTable table(grid.geometry.spacing());
    WarpResult out;
    out.warped.label = landmarks.label;
    out.warped.points.reserve(landmarks.size());
    for (std::size_t i = 0; i < landmarks.size(); ++i) {
        const Vec3& x = landmarks.points[i];
        if (!grid.geometry.contains(x)) {
            out.outside.push_back(i);
            out.warped.points.push_back(x);
            continue;
        }
        const Vec3 nu = eval_displacement(grid, table, x);
        out.warped.points.push_back({x[0] + nu[0], x[1] + nu[1], x[2] + nu[2]});
    }
    return out;
}

double mls(const LandmarkSet& a, const LandmarkSet& b)
{
    if (a.size() != b.size()) throw std::invalid_argument("landmark sets differ in length");
    if (a.size() == 0) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double dx = a.points[i][0] - b.points[i][0];
        const double dy = a.points[i][1] - b.points[i][1];
        const double dz = a.points[i][2] - b.points[i][2];
        s += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    return s / static_cast<double>(a.size());
}

MlsReport registration_mls(const ControlPointGrid& grid, const LandmarkSet& fixed, const LandmarkSet& moving)
{
    if (fixed.size() != moving.size()) throw std::invalid_argument("landmark sets differ in length");
    const WarpResult w = warp_landmarks(grid, fixed);
    LandmarkSet a, b;
    std::size_t next_outside = 0;
    for (std::size_t i = 0; i < fixed.size(); ++i) {
        if (next_outside < w.outside.size() && w.outside[next_outside] == i) {
            ++next_outside;
            continue;
        }
        a.points.push_back(w.warped.points[i]);
        b.points.push_back(moving.points[i]);
    }
    return {mls(a, b), a.size(), w.outside.size()};
}

}  // namespace bsreg
