// Sample placement over a control-point grid.
#pragma once

#include "bsreg/bspline.hpp"
#include "bsreg/volume.hpp"

namespace bsreg {

enum class BoundaryPolicy {
    skip,   ///< drop samples whose stencil leaves the sampled volume
    clamp,  ///< replicate edge samples
};

struct SamplingSpec {
    enum class Mode { voxel_grid, per_tile };

    Mode mode = Mode::per_tile;
    /// voxel_grid: requested sample spacing in mm. The count per axis is
    /// round(extent / spacing) and the spacing is adjusted so the samples
    /// tile the grid extent exactly.
    Vec3 voxel_spacing{1.0, 1.0, 1.0};
    /// per_tile: samples per tile along each axis.
    Index3 samples_per_tile{4, 4, 4};
    BoundaryPolicy boundary = BoundaryPolicy::skip;

    static SamplingSpec voxels(const Vec3& spacing, BoundaryPolicy b = BoundaryPolicy::skip)
    {
        SamplingSpec s;
        s.mode = Mode::voxel_grid;
        s.voxel_spacing = spacing;
        s.boundary = b;
        return s;
    }
    static SamplingSpec per_tile_samples(const Index3& n, BoundaryPolicy b = BoundaryPolicy::skip)
    {
        SamplingSpec s;
        s.mode = Mode::per_tile;
        s.samples_per_tile = n;
        s.boundary = b;
        return s;
    }
};

/// Cell-centred sample lattice covering the grid extent: sample k along an
/// axis sits at origin + (k + 0.5) * h. Returned as an empty volume carrying
/// the geometry.
Volume sample_lattice(const GridGeometry& geom, const SamplingSpec& spec, int components);

}  // namespace bsreg
