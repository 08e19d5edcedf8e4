#include "panoctx/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace panoctx {

namespace {
constexpr double kPi = 3.141592653589793238462643383279502884;
}

PointCloud depth_to_pointcloud(const EquirectRaster& depth) {
    depth.validate();
    if (depth.channels != 1) throw DataError("depth raster must be 1-channel");
    PointCloud out;
    out.points.reserve(static_cast<size_t>(depth.width) * depth.height);
    for (int r = 0; r < depth.height; ++r) {
        for (int c = 0; c < depth.width; ++c) {
            double d = depth.at(r, c);
            if (!(d > 0.0)) continue;
            if (!std::isfinite(d)) throw NumericalError("non-finite depth value");
            SphericalDir dir = pixel_to_dir(c + 0.5, r + 0.5, depth.width, depth.height);
            out.points.push_back(d * dir_to_unit_vector(dir));
            out.source_pixel.push_back(static_cast<int64_t>(r) * depth.width + c);
        }
    }
    if (out.points.empty()) throw DataError("depth raster has no valid pixels");
    return out;
}

std::vector<Vec3> fibonacci_directions(size_t n) {
    if (n == 0) throw DomainError("n_samples must be >= 1");
    const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
    const double step = 2.0 * kPi * (1.0 - 1.0 / golden);
    std::vector<Vec3> dirs(n);
    for (size_t i = 0; i < n; ++i) {
        double y = 1.0 - 2.0 * (i + 0.5) / static_cast<double>(n);
        double az = std::fmod(step * static_cast<double>(i), 2.0 * kPi);
        double r = std::sqrt(std::max(0.0, 1.0 - y * y));
        dirs[i] = {r * std::sin(az), y, r * std::cos(az)};
    }
    return dirs;
}

PointCloud fibonacci_sample(const EquirectRaster& depth, size_t n_samples) {
    depth.validate();
    if (depth.channels != 1) throw DataError("depth raster must be 1-channel");
    if (n_samples == 0) throw DomainError("n_samples must be >= 1");
    PointCloud out;
    out.points.reserve(n_samples);
    for (const Vec3& d : fibonacci_directions(n_samples)) {
        double u, v;
        dir_to_pixel(unit_vector_to_dir(d), depth.width, depth.height, u, v);
        int c = std::clamp(static_cast<int>(std::floor(u)), 0, depth.width - 1);
        int r = std::clamp(static_cast<int>(std::floor(v)), 0, depth.height - 1);
        double z = depth.at(r, c);
        if (!(z > 0.0)) continue;
        SphericalDir pd = pixel_to_dir(c + 0.5, r + 0.5, depth.width, depth.height);
        out.points.push_back(z * dir_to_unit_vector(pd));
        out.source_pixel.push_back(static_cast<int64_t>(r) * depth.width + c);
    }
    return out;
}

PointCloud normalize_cloud(const PointCloud& cloud, size_t target_n, uint64_t rng_seed) {
    if (cloud.points.empty()) throw DataError("cannot normalize an empty cloud");
    if (target_n == 0) throw DomainError("target_n must be >= 1");
    std::mt19937_64 rng(rng_seed);
    PointCloud out;
    out.points.reserve(target_n);
    out.source_pixel.reserve(target_n);
    auto push = [&](size_t i) {
        out.points.push_back(cloud.points[i]);
        out.source_pixel.push_back(i < cloud.source_pixel.size() ? cloud.source_pixel[i] : -1);
    };
    size_t n = cloud.points.size();
    if (n >= target_n) {
        // Partial Fisher-Yates over index array.
        std::vector<size_t> idx(n);
        for (size_t i = 0; i < n; ++i) idx[i] = i;
        for (size_t i = 0; i < target_n; ++i) {
            std::uniform_int_distribution<size_t> pick(i, n - 1);
            std::swap(idx[i], idx[pick(rng)]);
            push(idx[i]);
        }
    } else {
        std::uniform_int_distribution<size_t> pick(0, n - 1);
        for (size_t i = 0; i < target_n; ++i) push(pick(rng));
    }
    return out;
}

void write_pointcloud_txt(const PointCloud& cloud, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open for writing: " + path);
    char buf[128];
    for (const Vec3& p : cloud.points) {
        std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", p.x(), p.y(), p.z());
        os << buf;
    }
}

PointCloud read_pointcloud_txt(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open: " + path);
    PointCloud out;
    double x, y, z;
    while (is >> x >> y >> z) {
        out.points.push_back({x, y, z});
        out.source_pixel.push_back(-1);
    }
    if (out.points.empty()) throw DataError("empty point cloud file: " + path);
    return out;
}

}  // namespace panoctx
