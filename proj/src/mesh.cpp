#include "panoctx/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>

namespace panoctx {

std::vector<std::array<int, 2>> LayoutMesh::edges() const {
    std::map<std::pair<int, int>, int> seen;
    for (const auto& f : faces) {
        for (int e = 0; e < 3; ++e) {
            int a = f[e], b = f[(e + 1) % 3];
            seen[{std::min(a, b), std::max(a, b)}]++;
        }
    }
    std::vector<std::array<int, 2>> out;
    out.reserve(seen.size());
    for (const auto& [k, v] : seen) out.push_back({k.first, k.second});
    return out;
}

bool LayoutMesh::is_watertight() const {
    if (faces.empty() || vertices.rows() == 0) return false;
    if (!vertices.allFinite()) return false;
    std::map<std::pair<int, int>, int> directed, undirected;
    for (const auto& f : faces) {
        if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) return false;
        for (int e = 0; e < 3; ++e) {
            int a = f[e], b = f[(e + 1) % 3];
            if (a < 0 || b < 0 || a >= vertices.rows() || b >= vertices.rows()) return false;
            directed[{a, b}]++;
            undirected[{std::min(a, b), std::max(a, b)}]++;
        }
    }
    for (const auto& [k, v] : directed)
        if (v != 1) return false;
    for (const auto& [k, v] : undirected)
        if (v != 2) return false;
    // Euler characteristic of a sphere.
    long V = vertices.rows(), E = static_cast<long>(undirected.size()), F = faces.size();
    return V - E + F == 2;
}

double LayoutMesh::signed_volume() const {
    double vol = 0.0;
    for (const auto& f : faces) {
        Vec3 a = vertices.row(f[0]), b = vertices.row(f[1]), c = vertices.row(f[2]);
        vol += a.dot(b.cross(c)) / 6.0;
    }
    return vol;
}

void LayoutMesh::aabb(Vec3& lo, Vec3& hi) const {
    lo = vertices.colwise().minCoeff();
    hi = vertices.colwise().maxCoeff();
}

namespace {

LayoutMesh icosahedron() {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    const double verts[12][3] = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0},
                                 {0, -1, t}, {0, 1, t},  {0, -1, -t}, {0, 1, -t},
                                 {t, 0, -1}, {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
    const int tris[20][3] = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                             {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                             {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                             {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    LayoutMesh m;
    m.vertices.resize(12, 3);
    for (int i = 0; i < 12; ++i) {
        Vec3 v{verts[i][0], verts[i][1], verts[i][2]};
        m.vertices.row(i) = v.normalized();
    }
    for (const auto& t3 : tris) m.faces.push_back({t3[0], t3[1], t3[2]});
    return m;
}

LayoutMesh midpoint_split(const LayoutMesh& mesh, bool project_to_sphere) {
    auto edge_list = mesh.edges();
    std::map<std::pair<int, int>, int> midpoint;
    int n = mesh.vertex_count();
    LayoutMesh out;
    out.vertices.resize(n + static_cast<int>(edge_list.size()), 3);
    out.vertices.topRows(n) = mesh.vertices;
    int next = n;
    for (const auto& e : edge_list) {
        Vec3 mid = 0.5 * (mesh.vertices.row(e[0]) + mesh.vertices.row(e[1]));
        if (project_to_sphere) mid.normalize();
        out.vertices.row(next) = mid;
        midpoint[{e[0], e[1]}] = next++;
    }
    auto mid_of = [&](int a, int b) { return midpoint[{std::min(a, b), std::max(a, b)}]; };
    out.faces.reserve(mesh.faces.size() * 4);
    for (const auto& f : mesh.faces) {
        int ab = mid_of(f[0], f[1]), bc = mid_of(f[1], f[2]), ca = mid_of(f[2], f[0]);
        out.faces.push_back({f[0], ab, ca});
        out.faces.push_back({f[1], bc, ab});
        out.faces.push_back({f[2], ca, bc});
        out.faces.push_back({ab, bc, ca});
    }
    return out;
}

}  // namespace

LayoutMesh icosphere(int level) {
    if (level < 0) throw DomainError("subdivision level must be >= 0");
    if (level > 7) throw DomainError("subdivision level > 7 exceeds the resource guard");
    LayoutMesh m = icosahedron();
    for (int i = 0; i < level; ++i) m = midpoint_split(m, true);
    return m;
}

LayoutMesh subdivide(const LayoutMesh& mesh) {
    if (!mesh.is_watertight()) throw DataError("subdivide requires a watertight mesh");
    return midpoint_split(mesh, false);
}

LayoutMesh deform(const LayoutMesh& mesh, const Eigen::MatrixXd& offsets) {
    if (offsets.rows() != mesh.vertices.rows() || offsets.cols() != 3)
        throw DataError("offset shape must match the vertex array");
    if (!offsets.allFinite()) throw NumericalError("non-finite vertex offsets");
    LayoutMesh out = mesh;
    out.vertices += offsets;
    return out;
}

Eigen::MatrixXd graph_conv(const LayoutMesh& mesh, const Eigen::MatrixXd& vertex_features,
                           const Eigen::MatrixXd& w_self, const Eigen::MatrixXd& w_nbr) {
    int n = mesh.vertex_count();
    long d = vertex_features.cols();
    if (vertex_features.rows() != n) throw DataError("feature row count must equal vertex count");
    if (w_self.rows() != d || w_self.cols() != d || w_nbr.rows() != d || w_nbr.cols() != d)
        throw DataError("graph_conv weight shape mismatch");
    std::vector<std::vector<int>> nbrs(n);
    for (const auto& e : mesh.edges()) {
        nbrs[e[0]].push_back(e[1]);
        nbrs[e[1]].push_back(e[0]);
    }
    Eigen::MatrixXd out(n, d);
    for (int i = 0; i < n; ++i) {
        Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(d);
        for (int j : nbrs[i]) mean += vertex_features.row(j);
        if (!nbrs[i].empty()) mean /= static_cast<double>(nbrs[i].size());
        out.row(i) = vertex_features.row(i) * w_self.transpose() + mean * w_nbr.transpose();
    }
    return out;
}

double ray_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                    const Vec3& c) {
    const double eps = 1e-14;
    Vec3 ab = b - a, ac = c - a;
    Vec3 p = dir.cross(ac);
    double det = ab.dot(p);
    if (std::abs(det) < eps) return -1.0;
    double inv = 1.0 / det;
    Vec3 s = origin - a;
    double u = s.dot(p) * inv;
    if (u < 0.0 || u > 1.0) return -1.0;
    Vec3 q = s.cross(ab);
    double v = dir.dot(q) * inv;
    if (v < 0.0 || u + v > 1.0) return -1.0;
    double t = ac.dot(q) * inv;
    return t >= 0.0 ? t : -1.0;
}

std::vector<uint8_t> voxelize(const LayoutMesh& mesh, const Vec3& lo, const Vec3& hi, int res) {
    if (res < 1) throw DomainError("voxel resolution must be >= 1");
    Vec3 ext = hi - lo;
    if (!(ext.x() > 0 && ext.y() > 0 && ext.z() > 0)) throw DataError("degenerate voxel bounds");
    Vec3 cell = ext / res;
    std::vector<uint8_t> occ(static_cast<size_t>(res) * res * res, 0);
    // Tiny irrational offsets keep column rays off triangle edges.
    const double jx = 1.2345678901e-7, jz = 2.7182818284e-7;
    std::vector<double> crossings;
    for (int i = 0; i < res; ++i) {
        double x = lo.x() + (i + 0.5 + jx) * cell.x();
        for (int k = 0; k < res; ++k) {
            double z = lo.z() + (k + 0.5 + jz) * cell.z();
            Vec3 origin{x, lo.y() - 1.0, z};
            Vec3 dir{0.0, 1.0, 0.0};
            crossings.clear();
            for (const auto& f : mesh.faces) {
                double t = ray_triangle(origin, dir, mesh.vertices.row(f[0]),
                                        mesh.vertices.row(f[1]), mesh.vertices.row(f[2]));
                if (t >= 0.0) crossings.push_back(origin.y() + t);
            }
            std::sort(crossings.begin(), crossings.end());
            for (int j = 0; j < res; ++j) {
                double y = lo.y() + (j + 0.5) * cell.y();
                size_t below =
                    std::upper_bound(crossings.begin(), crossings.end(), y) - crossings.begin();
                if (below % 2 == 1)
                    occ[(static_cast<size_t>(i) * res + j) * res + k] = 1;
            }
        }
    }
    return occ;
}

std::pair<double, double> layout_iou(const LayoutMesh& pred, const LayoutMesh& gt,
                                     int voxel_res) {
    if (voxel_res < 16) throw DomainError("voxel_res must be >= 16");
    if (!pred.is_watertight() || !gt.is_watertight())
        throw DataError("layout_iou requires watertight meshes");
    Vec3 lo_a, hi_a, lo_b, hi_b;
    pred.aabb(lo_a, hi_a);
    gt.aabb(lo_b, hi_b);
    Vec3 lo = lo_a.cwiseMin(lo_b), hi = hi_a.cwiseMax(hi_b);
    auto occ_a = voxelize(pred, lo, hi, voxel_res);
    auto occ_b = voxelize(gt, lo, hi, voxel_res);
    size_t inter3 = 0, uni3 = 0;
    for (size_t i = 0; i < occ_a.size(); ++i) {
        inter3 += occ_a[i] & occ_b[i];
        uni3 += occ_a[i] | occ_b[i];
    }
    // Footprint: project occupied cells onto the ground plane.
    int res = voxel_res;
    size_t inter2 = 0, uni2 = 0;
    for (int i = 0; i < res; ++i) {
        for (int k = 0; k < res; ++k) {
            bool a = false, b = false;
            for (int j = 0; j < res && !(a && b); ++j) {
                size_t idx = (static_cast<size_t>(i) * res + j) * res + k;
                a = a || occ_a[idx];
                b = b || occ_b[idx];
            }
            inter2 += (a && b) ? 1 : 0;
            uni2 += (a || b) ? 1 : 0;
        }
    }
    double iou3 = uni3 ? static_cast<double>(inter3) / uni3 : 0.0;
    double iou2 = uni2 ? static_cast<double>(inter2) / uni2 : 0.0;
    return {iou2, iou3};
}

void write_obj(const LayoutMesh& mesh, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open for writing: " + path);
    char buf[160];
    for (long i = 0; i < mesh.vertices.rows(); ++i) {
        std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", mesh.vertices(i, 0),
                      mesh.vertices(i, 1), mesh.vertices(i, 2));
        os << buf;
    }
    for (const auto& f : mesh.faces) os << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
}

LayoutMesh read_obj(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open: " + path);
    std::vector<Vec3> verts;
    std::vector<std::array<int, 3>> faces;
    std::string line;
    while (std::getline(is, line)) {
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "v") {
            double x, y, z;
            if (!(ss >> x >> y >> z)) throw DataError("bad vertex line in " + path);
            verts.push_back({x, y, z});
        } else if (tag == "f") {
            int a, b, c;
            if (!(ss >> a >> b >> c)) throw DataError("bad face line in " + path);
            faces.push_back({a - 1, b - 1, c - 1});
        }
    }
    LayoutMesh m;
    m.vertices.resize(static_cast<long>(verts.size()), 3);
    for (size_t i = 0; i < verts.size(); ++i) m.vertices.row(static_cast<long>(i)) = verts[i];
    m.faces = std::move(faces);
    return m;
}

}  // namespace panoctx
