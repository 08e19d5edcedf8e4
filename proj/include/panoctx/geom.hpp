#pragma once

#include <Eigen/Dense>
#include <vector>

#include "panoctx/errors.hpp"

namespace panoctx {

using Vec3 = Eigen::Vector3d;

// Azimuth/elevation pair. theta in [-pi, pi), measured from +z toward +x;
// phi in [-pi/2, pi/2], positive toward +y (gravity up axis).
struct SphericalDir {
    double theta = 0.0;
    double phi = 0.0;
};

// Row-major panoramic raster, top row first. channels == 1 for depth
// (meters, 0 means "no return") or 3 for RGB in [0,1].
struct EquirectRaster {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<double> data;

    EquirectRaster() = default;
    EquirectRaster(int w, int h, int c, double fill = 0.0);

    double& at(int row, int col, int c = 0) {
        return data[(static_cast<size_t>(row) * width + col) * channels + c];
    }
    double at(int row, int col, int c = 0) const {
        return data[(static_cast<size_t>(row) * width + col) * channels + c];
    }
    void validate() const;
};

// Pinhole view into the panorama. pitch=+pi/2 looks at the ceiling.
struct PerspectiveView {
    double fov = 1.5707963267948966;  // horizontal, radians
    double yaw = 0.0;
    double pitch = 0.0;
    int width = 0;
    int height = 0;

    double focal() const;
    void validate() const;
};

// u, v are continuous pixel coordinates (column + 0.5, row + 0.5).
SphericalDir pixel_to_dir(double u, double v, int width, int height);
// Inverse map; returns continuous (u, v) with theta wrapping into [0, W).
void dir_to_pixel(const SphericalDir& d, int width, int height, double& u, double& v);

Vec3 dir_to_unit_vector(const SphericalDir& d);
SphericalDir unit_vector_to_dir(const Vec3& v);

// Bilinear sample at continuous (u, v); theta wraps, phi clamps.
double sample_bilinear(const EquirectRaster& src, double u, double v, int channel = 0);

// Per-pixel (u, v) map into the source panorama for a perspective view.
// Layout: (u, v) interleaved, row-major over the view raster.
std::vector<double> e2p_grid(const PerspectiveView& view, int src_width, int src_height);

EquirectRaster e2p_project(const EquirectRaster& src, const PerspectiveView& view);

// Apply a precomputed e2p_grid to a source raster.
EquirectRaster sample_grid(const EquirectRaster& src, const std::vector<double>& grid,
                           int out_width, int out_height);

}  // namespace panoctx
