#pragma once

#include "skel/core.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace skel {

// Binary occupancy grid. Cells are stored x-fastest:
// index = x + Gx * (y + Gy * z).
struct VoxelGrid {
    std::array<int, 3> resolution{0, 0, 0};
    std::vector<std::uint8_t> occupancy;

    VoxelGrid() = default;
    explicit VoxelGrid(const std::array<int, 3>& res)
        : resolution(res),
          occupancy(static_cast<std::size_t>(res[0]) * res[1] * res[2], 0) {}

    std::size_t cell_count() const { return occupancy.size(); }

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(resolution[0]) *
                   (static_cast<std::size_t>(y) +
                    static_cast<std::size_t>(resolution[1]) * static_cast<std::size_t>(z));
    }

    bool occupied(std::size_t i) const { return occupancy[i] != 0; }
    bool occupied(int x, int y, int z) const { return occupancy[index(x, y, z)] != 0; }
    void set(int x, int y, int z, bool v = true) { occupancy[index(x, y, z)] = v ? 1 : 0; }

    std::size_t occupied_count() const {
        std::size_t n = 0;
        for (std::uint8_t c : occupancy) n += c != 0;
        return n;
    }

    // Cell center in the unit cube.
    Vec3 cell_center(std::size_t i) const {
        const int gx = resolution[0], gy = resolution[1];
        const int x = static_cast<int>(i % gx);
        const int y = static_cast<int>((i / gx) % gy);
        const int z = static_cast<int>(i / (static_cast<std::size_t>(gx) * gy));
        return Vec3((x + 0.5) / resolution[0], (y + 0.5) / resolution[1],
                    (z + 0.5) / resolution[2]);
    }

    bool operator==(const VoxelGrid& o) const {
        return resolution == o.resolution && occupancy == o.occupancy;
    }
};

// A sequence of grids sharing one resolution and bounding box.
struct VoxelSequence {
    std::vector<VoxelGrid> frames;
    BBox bbox;

    int frame_count() const { return static_cast<int>(frames.size()); }
};

// Smallest box containing every point of every frame. Degenerate axes are
// expanded symmetrically so downstream normalization never divides by zero.
inline BBox compute_shared_bbox(const std::vector<PointFrame>& frames, double padding) {
    bool any = false;
    BBox box;
    box.min = Vec3::Constant(std::numeric_limits<double>::infinity());
    box.max = Vec3::Constant(-std::numeric_limits<double>::infinity());
    for (const PointFrame& f : frames) {
        for (const Vec3& p : f.points) {
            box.min = box.min.cwiseMin(p);
            box.max = box.max.cwiseMax(p);
            any = true;
        }
    }
    if (!any) throw input_error("empty sequence");

    const Vec3 extent = box.extent();
    const double largest = extent.maxCoeff();
    for (int a = 0; a < 3; ++a) {
        const double scale = std::max({1.0, std::abs(box.min[a]), std::abs(box.max[a])});
        if (extent[a] <= 1e-12 * scale) {
            const double half = std::max(padding * largest, 1e-6 * scale);
            box.min[a] -= half;
            box.max[a] += half;
        }
    }
    return box;
}

// Cells are half-open: a point lands in cell floor(u * G), with the bbox max
// face clamped to the last cell.
inline VoxelSequence voxelize_sequence(const std::vector<PointFrame>& frames, const BBox& bbox,
                                       const std::array<int, 3>& resolution) {
    for (int a = 0; a < 3; ++a) {
        if (resolution[a] < 1) throw input_error("voxel resolution must be positive");
    }
    VoxelSequence seq;
    seq.bbox = bbox;
    seq.frames.reserve(frames.size());
    for (std::size_t t = 0; t < frames.size(); ++t) {
        VoxelGrid grid(resolution);
        for (std::size_t i = 0; i < frames[t].points.size(); ++i) {
            const Vec3 u = bbox.normalize(frames[t].points[i]);
            int cell[3];
            for (int a = 0; a < 3; ++a) {
                if (u[a] < 0.0 || u[a] > 1.0) {
                    throw input_error("point outside bbox (frame " + std::to_string(t) +
                                      ", point " + std::to_string(i) + ")");
                }
                cell[a] = std::min(static_cast<int>(u[a] * resolution[a]), resolution[a] - 1);
            }
            grid.set(cell[0], cell[1], cell[2]);
        }
        seq.frames.push_back(std::move(grid));
    }
    return seq;
}

// One point per occupied cell, at the cell center in world coordinates.
inline PointFrame sample_points_from_voxels(const VoxelGrid& grid, const BBox& bbox) {
    PointFrame frame;
    frame.points.reserve(grid.occupied_count());
    for (std::size_t i = 0; i < grid.cell_count(); ++i) {
        if (grid.occupied(i)) frame.points.push_back(bbox.denormalize(grid.cell_center(i)));
    }
    return frame;
}

// Centers of cells occupied in v_t but not v_prev, and vice versa.
inline std::pair<PointFrame, PointFrame> voxel_difference(const VoxelGrid& v_t,
                                                          const VoxelGrid& v_prev,
                                                          const BBox& bbox) {
    if (v_t.resolution != v_prev.resolution)
        throw input_error("voxel grids have different resolutions");
    PointFrame gained, lost;
    for (std::size_t i = 0; i < v_t.cell_count(); ++i) {
        const bool a = v_t.occupied(i);
        const bool b = v_prev.occupied(i);
        if (a == b) continue;
        (a ? gained : lost).points.push_back(bbox.denormalize(v_t.cell_center(i)));
    }
    return {std::move(gained), std::move(lost)};
}

}  // namespace skel
