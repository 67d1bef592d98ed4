// Volumes (images, dense displacement fields, Jacobian maps) and the VOL1
// file format.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "bsreg/bspline.hpp"

namespace bsreg {

/// Regular sample lattice. Sample (i,j,k) sits at origin + (i,j,k) * spacing;
/// samples are stored axis-3 fastest with vector components interleaved.
class Volume {
public:
    Volume() : Volume({1, 1, 1}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}, 1) {}
    Volume(Index3 dims, Vec3 spacing, Vec3 origin, int components);

    const Index3& dims() const { return dims_; }
    const Vec3& spacing() const { return spacing_; }
    const Vec3& origin() const { return origin_; }
    int components() const { return components_; }
    std::size_t voxel_count() const
    {
        return static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
    }

    std::size_t index(int i, int j, int k) const
    {
        return (static_cast<std::size_t>(i) * dims_[1] + j) * dims_[2] + k;
    }
    double& at(int i, int j, int k, int c = 0) { return data_[index(i, j, k) * components_ + c]; }
    double at(int i, int j, int k, int c = 0) const { return data_[index(i, j, k) * components_ + c]; }

    Vec3 position(int i, int j, int k) const
    {
        return {origin_[0] + i * spacing_[0], origin_[1] + j * spacing_[1], origin_[2] + k * spacing_[2]};
    }
    /// Physical bounding box of the sample centers.
    Vec3 upper() const;

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_geometry(const Volume& other, double tol = 1e-9) const;

private:
    Index3 dims_;
    Vec3 spacing_;
    Vec3 origin_;
    int components_;
    std::vector<double> data_;
};

/// Trilinear interpolation of a scalar volume at a physical point. Returns
/// false (leaving outputs untouched) when the point lies outside the sample
/// box. The gradient is the exact derivative of the interpolant.
bool sample_trilinear(const Volume& vol, const Vec3& x, double& value);
bool sample_trilinear(const Volume& vol, const Vec3& x, double& value, Vec3& gradient);

/// Box-filter downsampling by an integer factor; the new origin is the center
/// of the first box.
Volume downsample(const Volume& vol, int factor);

/// Resamples `moving` at x + nu(x) for every sample x of `fixed_geometry`;
/// samples that leave the moving volume get `outside`.
Volume warp_volume(const Volume& moving, const ControlPointGrid& grid, const Volume& fixed_geometry,
                   double outside = 0.0);

// VOL1: "VOL1", "dims", "spacing", "origin", "type float32", "components c",
// then the little-endian payload. Values are narrowed to float32 on write.
void write_volume(const Volume& vol, std::ostream& os);
void write_volume(const Volume& vol, const std::string& path);
Volume read_volume(std::istream& is);
Volume read_volume(const std::string& path);

enum class PhantomKind { blobs, gradient, checker };

PhantomKind parse_phantom_kind(const std::string& name);

/// Deterministic synthetic image. `blobs` sums anisotropic Gaussians with
/// random centers (inside the central 80% of each axis), widths and signs;
/// `checker` alternates 0/1 cubes.
Volume make_phantom(PhantomKind kind, Index3 dims, Vec3 spacing, std::uint64_t seed,
                    Vec3 origin = {0.0, 0.0, 0.0});

}  // namespace bsreg
