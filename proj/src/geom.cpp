#include "panoctx/geom.hpp"

#include <cmath>

namespace panoctx {

namespace {
constexpr double kPi = 3.141592653589793238462643383279502884;
}

EquirectRaster::EquirectRaster(int w, int h, int c, double fill)
    : width(w), height(h), channels(c), data(static_cast<size_t>(w) * h * c, fill) {
    validate();
}

void EquirectRaster::validate() const {
    if (width < 2 || width % 2 != 0)
        throw DataError("raster width must be even and >= 2");
    if (height != width / 2)
        throw DataError("raster height must equal width/2");
    if (channels != 1 && channels != 3)
        throw DataError("raster channels must be 1 or 3");
    if (data.size() != static_cast<size_t>(width) * height * channels)
        throw DataError("raster data length mismatch");
}

double PerspectiveView::focal() const {
    return (width / 2.0) / std::tan(fov / 2.0);
}

void PerspectiveView::validate() const {
    if (!(fov > 0.0 && fov < kPi)) throw DomainError("fov out of (0, pi)");
    if (!(pitch >= -kPi / 2 && pitch <= kPi / 2)) throw DomainError("pitch out of [-pi/2, pi/2]");
    if (width < 1 || height < 1) throw DomainError("view dimensions must be positive");
    double f = focal();
    if (!(std::isfinite(f) && f > 0.0)) throw DomainError("invalid focal length");
}

SphericalDir pixel_to_dir(double u, double v, int width, int height) {
    if (!(u >= 0.0 && u < width) || !(v >= 0.0 && v < height))
        throw DomainError("pixel coordinate out of raster bounds");
    return {2.0 * kPi * (u / width) - kPi, kPi / 2 - kPi * (v / height)};
}

void dir_to_pixel(const SphericalDir& d, int width, int height, double& u, double& v) {
    double theta = std::remainder(d.theta + kPi, 2.0 * kPi);
    if (theta < 0.0) theta += 2.0 * kPi;  // [0, 2pi)
    u = theta / (2.0 * kPi) * width;
    if (u >= width) u -= width;
    v = (kPi / 2 - d.phi) / kPi * height;
}

Vec3 dir_to_unit_vector(const SphericalDir& d) {
    double cp = std::cos(d.phi);
    return {cp * std::sin(d.theta), std::sin(d.phi), cp * std::cos(d.theta)};
}

SphericalDir unit_vector_to_dir(const Vec3& v) {
    double y = std::clamp(v.y() / v.norm(), -1.0, 1.0);
    double theta = (v.x() == 0.0 && v.z() == 0.0) ? 0.0 : std::atan2(v.x(), v.z());
    if (theta >= kPi) theta -= 2.0 * kPi;
    return {theta, std::asin(y)};
}

double sample_bilinear(const EquirectRaster& src, double u, double v, int channel) {
    // Pixel center i sits at coordinate i + 0.5.
    double fu = u - 0.5;
    double fv = v - 0.5;
    int u0 = static_cast<int>(std::floor(fu));
    int v0 = static_cast<int>(std::floor(fv));
    double au = fu - u0;
    double av = fv - v0;
    auto wrap_u = [&](int i) {
        i %= src.width;
        return i < 0 ? i + src.width : i;
    };
    auto clamp_v = [&](int i) { return std::clamp(i, 0, src.height - 1); };
    int u1 = u0 + 1, v1 = v0 + 1;
    double s00 = src.at(clamp_v(v0), wrap_u(u0), channel);
    double s01 = src.at(clamp_v(v0), wrap_u(u1), channel);
    double s10 = src.at(clamp_v(v1), wrap_u(u0), channel);
    double s11 = src.at(clamp_v(v1), wrap_u(u1), channel);
    return (1 - av) * ((1 - au) * s00 + au * s01) + av * ((1 - au) * s10 + au * s11);
}

std::vector<double> e2p_grid(const PerspectiveView& view, int src_width, int src_height) {
    view.validate();
    double f = view.focal();
    double cy = std::cos(view.yaw), sy = std::sin(view.yaw);
    double cp = std::cos(view.pitch), sp = std::sin(view.pitch);
    std::vector<double> grid(static_cast<size_t>(view.width) * view.height * 2);
    for (int r = 0; r < view.height; ++r) {
        for (int c = 0; c < view.width; ++c) {
            // Camera frame: +z forward, +x right, +y up.
            double x = (c + 0.5 - view.width / 2.0) / f;
            double y = (view.height / 2.0 - (r + 0.5)) / f;
            double z = 1.0;
            // Pitch about x, then yaw about y (gravity).
            double y1 = cp * y + sp * z;
            double z1 = -sp * y + cp * z;
            Vec3 w{cy * x + sy * z1, y1, -sy * x + cy * z1};
            double u, v;
            dir_to_pixel(unit_vector_to_dir(w), src_width, src_height, u, v);
            size_t i = (static_cast<size_t>(r) * view.width + c) * 2;
            grid[i] = u;
            grid[i + 1] = v;
        }
    }
    return grid;
}

EquirectRaster sample_grid(const EquirectRaster& src, const std::vector<double>& grid,
                           int out_width, int out_height) {
    src.validate();
    if (grid.size() != static_cast<size_t>(out_width) * out_height * 2)
        throw DataError("grid size does not match output dimensions");
    EquirectRaster out;
    out.width = out_width;
    out.height = out_height;
    out.channels = src.channels;
    out.data.resize(static_cast<size_t>(out_width) * out_height * src.channels);
    for (int r = 0; r < out_height; ++r) {
        for (int c = 0; c < out_width; ++c) {
            size_t i = (static_cast<size_t>(r) * out_width + c) * 2;
            for (int ch = 0; ch < src.channels; ++ch)
                out.data[(static_cast<size_t>(r) * out_width + c) * src.channels + ch] =
                    sample_bilinear(src, grid[i], grid[i + 1], ch);
        }
    }
    return out;
}

EquirectRaster e2p_project(const EquirectRaster& src, const PerspectiveView& view) {
    return sample_grid(src, e2p_grid(view, src.width, src.height), view.width, view.height);
}

}  // namespace panoctx
