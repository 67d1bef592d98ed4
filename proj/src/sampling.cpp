#include "bsreg/sampling.hpp"

#include <cmath>
#include <stdexcept>

namespace bsreg {

Volume sample_lattice(const GridGeometry& geom, const SamplingSpec& spec, int components)
{
    Index3 dims;
    Vec3 h, origin;
    const Vec3 extent = geom.extent();
    for (int d = 0; d < 3; ++d) {
        if (spec.mode == SamplingSpec::Mode::voxel_grid) {
            if (!(spec.voxel_spacing[d] > 0.0) || !std::isfinite(spec.voxel_spacing[d]))
                throw std::invalid_argument("sampling spacing must be > 0");
            const long n = std::lround(extent[d] / spec.voxel_spacing[d]);
            dims[d] = static_cast<int>(std::max(1L, n));
        } else {
            if (spec.samples_per_tile[d] < 1) throw std::invalid_argument("samples per tile must be >= 1");
            dims[d] = geom.tiles()[d] * spec.samples_per_tile[d];
        }
        h[d] = extent[d] / dims[d];
        origin[d] = geom.origin()[d] + 0.5 * h[d];
    }
    return Volume(dims, h, origin, components);
}

}  // namespace bsreg
