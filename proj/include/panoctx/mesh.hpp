#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <utility>
#include <vector>

#include "panoctx/errors.hpp"
#include "panoctx/geom.hpp"

namespace panoctx {

// Watertight triangle mesh with outward-facing CCW winding.
struct LayoutMesh {
    Eigen::MatrixXd vertices;            // n x 3
    std::vector<std::array<int, 3>> faces;

    int vertex_count() const { return static_cast<int>(vertices.rows()); }
    int face_count() const { return static_cast<int>(faces.size()); }

    // Undirected edges, each as (min, max) vertex pair, sorted.
    std::vector<std::array<int, 2>> edges() const;
    bool is_watertight() const;
    double signed_volume() const;
    // Componentwise min/max over vertices.
    void aabb(Vec3& lo, Vec3& hi) const;
};

LayoutMesh icosphere(int level);

// Midpoint subdivision without re-projection; n -> 4n - 6 vertices.
LayoutMesh subdivide(const LayoutMesh& mesh);

LayoutMesh deform(const LayoutMesh& mesh, const Eigen::MatrixXd& offsets);

// out_i = f_i * W_self^T + mean_{j in N(i)} f_j * W_nbr^T
Eigen::MatrixXd graph_conv(const LayoutMesh& mesh, const Eigen::MatrixXd& vertex_features,
                           const Eigen::MatrixXd& w_self, const Eigen::MatrixXd& w_nbr);

// Volumetric IoU on a shared voxel grid plus footprint (plan projection) IoU.
std::pair<double, double> layout_iou(const LayoutMesh& pred, const LayoutMesh& gt,
                                     int voxel_res = 128);

// Parity-based occupancy of voxel cell centers over [lo, hi], res cells/axis.
std::vector<uint8_t> voxelize(const LayoutMesh& mesh, const Vec3& lo, const Vec3& hi, int res);

// Ray-triangle intersection (Moller-Trumbore). Returns t >= 0 or -1.
double ray_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                    const Vec3& c);

// OBJ subset: "v x y z" and "f i j k" lines, 1-indexed.
void write_obj(const LayoutMesh& mesh, const std::string& path);
LayoutMesh read_obj(const std::string& path);

}  // namespace panoctx
