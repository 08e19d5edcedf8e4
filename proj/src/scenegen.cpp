#include "panoctx/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace panoctx {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

struct P2 {
    double x, z;
};

// Extrude a star-shaped (from vertex 0) CCW plan polygon into a watertight prism.
LayoutMesh extrude_polygon(const std::vector<P2>& poly, double y_bottom, double y_top) {
    int n = static_cast<int>(poly.size());
    LayoutMesh m;
    m.vertices.resize(2 * n, 3);
    for (int i = 0; i < n; ++i) {
        m.vertices.row(i) = Vec3{poly[i].x, y_bottom, poly[i].z};
        m.vertices.row(n + i) = Vec3{poly[i].x, y_top, poly[i].z};
    }
    // Plan-CCW fan gives -y normals: floor as-is, ceiling reversed.
    for (int i = 1; i + 1 < n; ++i) {
        m.faces.push_back({0, i, i + 1});
        m.faces.push_back({n, n + i + 1, n + i});
    }
    for (int i = 0; i < n; ++i) {
        int j = (i + 1) % n;
        m.faces.push_back({i, n + i, n + j});
        m.faces.push_back({i, n + j, j});
    }
    return m;
}

bool point_in_footprint(const std::vector<P2>& poly, double x, double z) {
    bool in = false;
    int n = static_cast<int>(poly.size());
    for (int i = 0, j = n - 1; i < n; j = i++) {
        if ((poly[i].z > z) != (poly[j].z > z) &&
            x < (poly[j].x - poly[i].x) * (z - poly[i].z) / (poly[j].z - poly[i].z) + poly[i].x)
            in = !in;
    }
    return in;
}

// Slab test in the box frame; returns nearest positive hit distance or -1.
double ray_box(const Vec3& origin, const Vec3& dir, const OrientedBox& box) {
    double c = std::cos(box.heading), s = std::sin(box.heading);
    Vec3 ro = origin - box.center;
    Vec3 o{c * ro.x() - s * ro.z(), ro.y(), s * ro.x() + c * ro.z()};
    Vec3 d{c * dir.x() - s * dir.z(), dir.y(), s * dir.x() + c * dir.z()};
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        double h = box.size[a] / 2;
        if (std::abs(d[a]) < 1e-15) {
            if (std::abs(o[a]) > h) return -1.0;
            continue;
        }
        double ta = (-h - o[a]) / d[a], tb = (h - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return -1.0;
    }
    if (t1 <= 0.0) return -1.0;
    return t0 > 1e-12 ? t0 : t1;  // inside the box: report the exit face
}

uint64_t mix64(uint64_t x) {
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    x *= 0xc4ceb9fe1a85ec53ULL;
    x ^= x >> 33;
    return x;
}

}  // namespace

SyntheticScene generate_scene(uint64_t seed, const SceneSpec& spec) {
    if (!(spec.room_min > 0 && spec.room_max >= spec.room_min))
        throw DomainError("bad room size range");
    if (!(spec.height_min > spec.camera_height))
        throw DomainError("room height range must exceed the camera height");
    if (!(spec.obj_min > 0 && spec.obj_max >= spec.obj_min))
        throw DomainError("bad object size range");
    if (spec.obj_max >= spec.room_min - 0.2)
        throw DomainError("objects do not fit in the smallest room");

    std::mt19937_64 rng(mix64(seed ^ 0x9e3779b97f4a7c15ULL));
    std::uniform_real_distribution<double> uroom(spec.room_min, spec.room_max);
    std::uniform_real_distribution<double> uheight(spec.height_min, spec.height_max);
    std::uniform_real_distribution<double> usize(spec.obj_min, spec.obj_max);
    std::uniform_real_distribution<double> uyaw(-kPi, kPi);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_int_distribution<int> ucat(0, std::max(0, spec.n_categories - 1));

    double wx = uroom(rng), wz = uroom(rng), h = uheight(rng);
    double yb = -spec.camera_height, yt = h - spec.camera_height;
    double x0 = -wx / 2, x1 = wx / 2, z0 = -wz / 2, z1 = wz / 2;

    std::vector<P2> poly;
    if (spec.l_shaped) {
        // Cut the (+x, +z) corner; the camera quadrant stays intact.
        double xm = x0 + wx * (0.55 + 0.2 * u01(rng));
        double zm = z0 + wz * (0.55 + 0.2 * u01(rng));
        poly = {{x0, z0}, {x1, z0}, {x1, zm}, {xm, zm}, {xm, z1}, {x0, z1}};
    } else {
        poly = {{x0, z0}, {x1, z0}, {x1, z1}, {x0, z1}};
    }

    SyntheticScene scene;
    scene.seed = seed;
    scene.camera_height = spec.camera_height;
    scene.layout = extrude_polygon(poly, yb, yt);

    auto is_exempt = [&](int cat) {
        return std::find(spec.exempt_categories.begin(), spec.exempt_categories.end(), cat) !=
               spec.exempt_categories.end();
    };

    for (int k = 0; k < spec.n_objects; ++k) {
        OrientedBox b;
        bool placed = false;
        for (int attempt = 0; attempt < 256 && !placed; ++attempt) {
            b.size = {usize(rng), usize(rng), usize(rng)};
            b.heading = uyaw(rng);
            b.category = ucat(rng);
            double r = std::hypot(b.size.x(), b.size.z()) / 2;
            double margin = 0.05;
            double cx0 = x0 + r + margin, cx1 = x1 - r - margin;
            double cz0 = z0 + r + margin, cz1 = z1 - r - margin;
            if (cx1 <= cx0 || cz1 <= cz0) continue;
            b.center = {cx0 + (cx1 - cx0) * u01(rng),
                        yb + b.size.y() / 2 + margin,
                        cz0 + (cz1 - cz0) * u01(rng)};
            if (b.size.y() + 2 * margin > h) continue;
            // Keep the camera pillar clear so it never sits inside a box.
            if (std::hypot(b.center.x(), b.center.z()) < r + 0.3) continue;
            bool inside = true;
            for (const auto& c : b.corners())
                if (!point_in_footprint(poly, c.x(), c.z())) inside = false;
            if (!inside) continue;
            placed = true;
        }
        if (!placed) throw DomainError("could not place object inside the room");
        scene.boxes.push_back(b);
    }

    if (spec.plant_violation) {
        OrientedBox v;
        v.size = {1.0, 1.0, 1.0};
        v.heading = 0.0;
        v.category = 0;
        while (is_exempt(v.category)) ++v.category;
        // Straddle the +x wall: half in, half out.
        v.center = {x1, yb + 0.55, 0.25 * (z0 + z1)};
        scene.boxes.push_back(v);
    }
    return scene;
}

EquirectRaster render_depth(const SyntheticScene& scene, int width, int height) {
    if (!scene.layout.is_watertight()) throw DataError("render requires a watertight layout");
    // Camera-inside check by ray parity straight up from the origin.
    {
        int crossings = 0;
        // Slightly off-axis probe avoids shared triangle diagonals.
        Vec3 probe = Vec3{1.2345e-4, 1.0, 2.7182e-4}.normalized();
        for (const auto& f : scene.layout.faces) {
            double t = ray_triangle(Vec3::Zero(), probe, scene.layout.vertices.row(f[0]),
                                    scene.layout.vertices.row(f[1]),
                                    scene.layout.vertices.row(f[2]));
            if (t >= 0.0) ++crossings;
        }
        if (crossings % 2 == 0) throw DataError("camera lies outside the layout");
    }
    EquirectRaster out(width, height, 1);
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            Vec3 dir = dir_to_unit_vector(pixel_to_dir(c + 0.5, r + 0.5, width, height));
            double best = std::numeric_limits<double>::infinity();
            for (const auto& f : scene.layout.faces) {
                double t = ray_triangle(Vec3::Zero(), dir, scene.layout.vertices.row(f[0]),
                                        scene.layout.vertices.row(f[1]),
                                        scene.layout.vertices.row(f[2]));
                if (t > 1e-9 && t < best) best = t;
            }
            for (const auto& b : scene.boxes) {
                double t = ray_box(Vec3::Zero(), dir, b);
                if (t > 0.0 && t < best) best = t;
            }
            if (!std::isfinite(best) || best <= 0.0)
                throw NumericalError("ray escaped a watertight scene");
            out.at(r, c) = best;
        }
    }
    return out;
}

std::vector<double> pseudo_shape_code(int category, const Vec3& size, int dims) {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](uint64_t v) { h = mix64(h ^ v); };
    feed(static_cast<uint64_t>(category) + 0x51ed270b0ULL);
    for (int a = 0; a < 3; ++a) {
        uint64_t bits;
        double d = size[a];
        std::memcpy(&bits, &d, 8);
        feed(bits);
    }
    std::mt19937_64 rng(h);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> code(dims);
    double norm2 = 0.0;
    for (double& c : code) {
        c = gauss(rng);
        norm2 += c * c;
    }
    double inv = 1.0 / std::sqrt(norm2);
    for (double& c : code) c *= inv;
    return code;
}

GroundTruth scene_to_groundtruth(const SyntheticScene& scene) {
    GroundTruth gt;
    gt.layout = scene.layout;
    gt.boxes = scene.boxes;
    for (auto& b : gt.boxes) b.shape_code = pseudo_shape_code(b.category, b.size);
    return gt;
}

void write_scene_json(const SyntheticScene& scene, const std::string& json_path,
                      const std::string& obj_path) {
    write_obj(scene.layout, obj_path);
    nlohmann::json j;
    j["seed"] = scene.seed;
    j["camera_height"] = scene.camera_height;
    j["layout_obj"] = obj_path;
    j["boxes"] = nlohmann::json::parse(boxes_to_json(scene.boxes, false));
    nlohmann::json codes = nlohmann::json::array();
    for (const auto& b : scene.boxes) codes.push_back(pseudo_shape_code(b.category, b.size));
    j["codes"] = std::move(codes);
    std::ofstream os(json_path);
    if (!os) throw DataError("cannot open for writing: " + json_path);
    os << j.dump(2) << "\n";
}

SyntheticScene read_scene_json(const std::string& json_path) {
    std::ifstream is(json_path);
    if (!is) throw DataError("cannot open: " + json_path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad scene JSON: ") + e.what());
    }
    SyntheticScene scene;
    scene.seed = j.at("seed").get<uint64_t>();
    scene.camera_height = j.at("camera_height").get<double>();
    scene.layout = read_obj(j.at("layout_obj").get<std::string>());
    scene.boxes = boxes_from_json(j.at("boxes").dump());
    return scene;
}

}  // namespace panoctx
