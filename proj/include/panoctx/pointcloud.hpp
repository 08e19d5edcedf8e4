#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "panoctx/geom.hpp"

namespace panoctx {

// Camera at origin, y up, meters. source_pixel[i] is the flattened
// row*width+col index of the depth pixel a point came from (-1 if unknown).
struct PointCloud {
    std::vector<Vec3> points;
    std::vector<int64_t> source_pixel;

    size_t size() const { return points.size(); }
};

PointCloud depth_to_pointcloud(const EquirectRaster& depth);

// Golden-angle lattice directions on the unit sphere, y_i = 1 - 2(i+0.5)/n.
std::vector<Vec3> fibonacci_directions(size_t n);

// Lift each lattice direction by the depth of its nearest panorama pixel.
PointCloud fibonacci_sample(const EquirectRaster& depth, size_t n_samples);

// Resize to exactly target_n points: without replacement when shrinking,
// with replacement when growing.
PointCloud normalize_cloud(const PointCloud& cloud, size_t target_n, uint64_t rng_seed);

// One "x y z" triple per line, 9 significant digits.
void write_pointcloud_txt(const PointCloud& cloud, const std::string& path);
PointCloud read_pointcloud_txt(const std::string& path);

}  // namespace panoctx
