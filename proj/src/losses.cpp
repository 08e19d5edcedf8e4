#include "panoctx/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include <json.hpp>

namespace panoctx {

namespace {

constexpr double kDegenerateArea = 1e-14;

bool nonneg_finite(double v) { return std::isfinite(v) && v >= 0.0; }

Vec3 face_cross(const LayoutMesh& m, const std::array<int, 3>& f) {
    Vec3 a = m.vertices.row(f[0]), b = m.vertices.row(f[1]), c = m.vertices.row(f[2]);
    return (b - a).cross(c - a);
}

// Accumulates vertex gradients of a scalar that depends on a face's unit
// normal, given the gradient w.r.t. that normal.
void unit_normal_backward(const LayoutMesh& m, const std::array<int, 3>& f, const Vec3& gn,
                          Eigen::MatrixXd& d_vertices) {
    Vec3 a = m.vertices.row(f[0]), b = m.vertices.row(f[1]), c = m.vertices.row(f[2]);
    Vec3 e1 = b - a, e2 = c - a;
    Vec3 u = e1.cross(e2);
    double len = u.norm();
    if (len < kDegenerateArea) return;
    Vec3 n = u / len;
    Vec3 gu = (gn - n * n.dot(gn)) / len;
    d_vertices.row(f[0]) += ((e1 - e2).cross(gu)).transpose();
    d_vertices.row(f[1]) += (e2.cross(gu)).transpose();
    d_vertices.row(f[2]) += (gu.cross(e1)).transpose();
}

double logsumexp(const Eigen::RowVectorXd& v) {
    double mx = v.maxCoeff();
    return mx + std::log((v.array() - mx).exp().sum());
}

Eigen::RowVectorXd softmax_row(const Eigen::RowVectorXd& v) {
    double mx = v.maxCoeff();
    Eigen::ArrayXd e = (v.transpose().array() - mx).exp();
    return (e / e.sum()).matrix().transpose();
}

// Numerically stable BCE with logits and its gradient.
double bce_logit(double x, double y) {
    return std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
}
double bce_logit_grad(double x, double y) { return 1.0 / (1.0 + std::exp(-x)) - y; }

struct EdgeInfo {
    int a, b;        // a < b
    int f1, f2;      // f1 holds the directed edge a->b
    double angle;    // signed dihedral
    Vec3 midpoint;
    bool valid;
};

std::vector<EdgeInfo> edge_dihedrals(const LayoutMesh& m, bool* warn) {
    std::map<std::pair<int, int>, std::array<int, 2>> adj;  // (min,max) -> {fwd, rev}
    for (int fi = 0; fi < m.face_count(); ++fi) {
        const auto& f = m.faces[fi];
        for (int e = 0; e < 3; ++e) {
            int s = f[e], t = f[(e + 1) % 3];
            auto key = std::minmax(s, t);
            auto& slot = adj[{key.first, key.second}];
            slot[s < t ? 0 : 1] = fi + 1;  // 1-based so 0 means "missing"
        }
    }
    std::vector<EdgeInfo> out;
    for (const auto& [key, faces] : adj) {
        EdgeInfo e;
        e.a = key.first;
        e.b = key.second;
        e.f1 = faces[0] - 1;
        e.f2 = faces[1] - 1;
        e.valid = e.f1 >= 0 && e.f2 >= 0;
        if (!e.valid) {
            out.push_back(e);
            continue;
        }
        Vec3 u1 = face_cross(m, m.faces[e.f1]);
        Vec3 u2 = face_cross(m, m.faces[e.f2]);
        if (u1.norm() < kDegenerateArea || u2.norm() < kDegenerateArea) {
            e.valid = false;
            if (warn) *warn = true;
            out.push_back(e);
            continue;
        }
        Vec3 n1 = u1.normalized(), n2 = u2.normalized();
        Vec3 va = m.vertices.row(e.a), vb = m.vertices.row(e.b);
        Vec3 eh = (vb - va).normalized();
        e.angle = std::atan2(n1.cross(n2).dot(eh), n1.dot(n2));
        e.midpoint = 0.5 * (va + vb);
        out.push_back(e);
    }
    return out;
}

// Vertex gradients of one signed dihedral angle, scaled by `gscale`.
void dihedral_backward(const LayoutMesh& m, const EdgeInfo& e, double gscale,
                       Eigen::MatrixXd& d_vertices) {
    Vec3 n1 = face_cross(m, m.faces[e.f1]).normalized();
    Vec3 n2 = face_cross(m, m.faces[e.f2]).normalized();
    Vec3 va = m.vertices.row(e.a), vb = m.vertices.row(e.b);
    Vec3 edge = vb - va;
    double elen = edge.norm();
    Vec3 eh = edge / elen;
    double s = n1.cross(n2).dot(eh);
    double c = n1.dot(n2);
    double denom = s * s + c * c;
    // theta = atan2(s, c): dtheta = (c ds - s dc) / (s^2 + c^2)
    double ws = gscale * c / denom, wc = -gscale * s / denom;
    Vec3 gn1 = ws * n2.cross(eh) + wc * n2;
    Vec3 gn2 = ws * eh.cross(n1) + wc * n1;
    Vec3 geh = ws * n1.cross(n2);
    unit_normal_backward(m, m.faces[e.f1], gn1, d_vertices);
    unit_normal_backward(m, m.faces[e.f2], gn2, d_vertices);
    Vec3 gedge = (geh - eh * eh.dot(geh)) / elen;
    d_vertices.row(e.b) += gedge.transpose();
    d_vertices.row(e.a) -= gedge.transpose();
}

}  // namespace

void LossWeights::validate() const {
    for (double v : {lambda_p, lambda_n, lambda_e, beta_objness, beta_cls, beta_cen,
                     beta_size_cls, beta_size_off, beta_head_cls, beta_head_off, beta_shape,
                     beta_samp, sigma_l, sigma_o, sigma_p})
        if (!nonneg_finite(v)) throw DomainError("loss weights must be finite and >= 0");
}

double smooth_l1(double x, double beta) {
    if (!std::isfinite(x)) throw NumericalError("smooth_l1 on non-finite input");
    double ax = std::abs(x);
    return ax < beta ? 0.5 * x * x / beta : ax - 0.5 * beta;
}

double smooth_l1_grad(double x, double beta) {
    double ax = std::abs(x);
    return ax < beta ? x / beta : (x > 0 ? 1.0 : -1.0);
}

SurfaceSamples sample_surface(const LayoutMesh& mesh, int n_samples, uint64_t seed) {
    if (n_samples < 1) throw DomainError("need at least one surface sample");
    SurfaceSamples s;
    std::vector<int> usable;
    for (int fi = 0; fi < mesh.face_count(); ++fi) {
        if (face_cross(mesh, mesh.faces[fi]).norm() >= kDegenerateArea)
            usable.push_back(fi);
        else
            s.degenerate_warning = true;
    }
    if (usable.empty()) throw DataError("mesh has no non-degenerate faces");

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<size_t> pick(0, usable.size() - 1);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    s.face.resize(n_samples);
    s.bary.resize(n_samples, 3);
    s.points.resize(n_samples, 3);
    s.normals.resize(n_samples, 3);
    for (int i = 0; i < n_samples; ++i) {
        int fi = usable[pick(rng)];
        double r1 = std::sqrt(u01(rng)), r2 = u01(rng);
        double b0 = 1.0 - r1, b1 = r1 * (1.0 - r2), b2 = r1 * r2;
        s.face[i] = fi;
        s.bary.row(i) = Eigen::RowVector3d(b0, b1, b2);
        const auto& f = mesh.faces[fi];
        s.points.row(i) = b0 * mesh.vertices.row(f[0]) + b1 * mesh.vertices.row(f[1]) +
                          b2 * mesh.vertices.row(f[2]);
        s.normals.row(i) = face_cross(mesh, f).normalized().transpose();
    }
    return s;
}

LayoutLossResult layout_loss(const LayoutMesh& pred, const LayoutMesh& gt,
                             const LossWeights& w, int n_samples, uint64_t seed) {
    w.validate();
    if (!pred.is_watertight() || !gt.is_watertight())
        throw DataError("layout_loss requires watertight meshes");
    LayoutLossResult r;
    r.d_vertices = Eigen::MatrixXd::Zero(pred.vertex_count(), 3);

    SurfaceSamples sp = sample_surface(pred, n_samples, seed);
    SurfaceSamples sg = sample_surface(gt, n_samples, seed);
    r.degenerate_warning = sp.degenerate_warning || sg.degenerate_warning;
    int np = n_samples, ng = n_samples;

    // Nearest counterparts in both directions.
    std::vector<int> near_pg(np), near_gp(ng);
    for (int i = 0; i < np; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (int j = 0; j < ng; ++j) {
            double d2 = (sp.points.row(i) - sg.points.row(j)).squaredNorm();
            if (d2 < best) {
                best = d2;
                near_pg[i] = j;
            }
        }
    }
    for (int j = 0; j < ng; ++j) {
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < np; ++i) {
            double d2 = (sg.points.row(j) - sp.points.row(i)).squaredNorm();
            if (d2 < best) {
                best = d2;
                near_gp[j] = i;
            }
        }
    }

    // Symmetric Chamfer (squared distances, halves averaged) and the normal
    // agreement term over the same correspondences.
    Eigen::MatrixXd d_points = Eigen::MatrixXd::Zero(np, 3);
    std::vector<Vec3> d_normal(np, Vec3::Zero());
    double pos = 0.0, norm = 0.0;
    for (int i = 0; i < np; ++i) {
        Eigen::RowVector3d diff = sp.points.row(i) - sg.points.row(near_pg[i]);
        pos += diff.squaredNorm() / (2.0 * np);
        d_points.row(i) += w.lambda_p * diff / np;
        norm += (1.0 - sp.normals.row(i).dot(sg.normals.row(near_pg[i]))) / (2.0 * np);
        d_normal[i] -= w.lambda_n * Vec3(sg.normals.row(near_pg[i])) / (2.0 * np);
    }
    for (int j = 0; j < ng; ++j) {
        int i = near_gp[j];
        Eigen::RowVector3d diff = sp.points.row(i) - sg.points.row(j);
        pos += diff.squaredNorm() / (2.0 * ng);
        d_points.row(i) += w.lambda_p * diff / ng;
        norm += (1.0 - sg.normals.row(j).dot(sp.normals.row(i))) / (2.0 * ng);
        d_normal[i] -= w.lambda_n * Vec3(sg.normals.row(j)) / (2.0 * ng);
    }
    r.pos = pos;
    r.norm = norm;
    for (int i = 0; i < np; ++i) {
        const auto& f = pred.faces[sp.face[i]];
        for (int v = 0; v < 3; ++v)
            r.d_vertices.row(f[v]) += sp.bary(i, v) * d_points.row(i);
        unit_normal_backward(pred, f, d_normal[i], r.d_vertices);
    }

    // Edge sharpness: |pred dihedral - nearest GT dihedral| averaged.
    bool warn = false;
    std::vector<EdgeInfo> ep = edge_dihedrals(pred, &warn);
    std::vector<EdgeInfo> eg = edge_dihedrals(gt, &warn);
    r.degenerate_warning = r.degenerate_warning || warn;
    std::vector<const EdgeInfo*> gvalid;
    for (const auto& e : eg)
        if (e.valid) gvalid.push_back(&e);
    int n_edges = 0;
    double sharp = 0.0;
    std::vector<std::pair<const EdgeInfo*, double>> sharp_grads;
    for (const auto& e : ep) {
        if (!e.valid || gvalid.empty()) continue;
        const EdgeInfo* best = gvalid[0];
        double bd = std::numeric_limits<double>::infinity();
        for (const EdgeInfo* g : gvalid) {
            double d2 = (e.midpoint - g->midpoint).squaredNorm();
            if (d2 < bd) {
                bd = d2;
                best = g;
            }
        }
        double diff = e.angle - best->angle;
        sharp += std::abs(diff);
        sharp_grads.emplace_back(&e, diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0));
        ++n_edges;
    }
    if (n_edges > 0) {
        sharp /= n_edges;
        for (const auto& [e, sign] : sharp_grads)
            dihedral_backward(pred, *e, w.lambda_e * sign / n_edges, r.d_vertices);
    }
    r.sharp = sharp;
    r.total = w.lambda_p * r.pos + w.lambda_n * r.norm + w.lambda_e * r.sharp;
    return r;
}

ObjectTargets assign_objects(const Eigen::MatrixXd& candidate_centers,
                             const GroundTruthSet& gts,
                             const std::vector<Vec3>& size_templates, int heading_bins,
                             int shape_dim, double radius) {
    int k = static_cast<int>(candidate_centers.rows());
    ObjectTargets t;
    t.match.assign(k, -1);
    t.target.resize(k);
    t.gt_codes = Eigen::MatrixXd::Zero(k, shape_dim);

    struct Pair {
        double d;
        int cand, gt;
    };
    std::vector<Pair> pairs;
    for (int c = 0; c < k; ++c)
        for (size_t g = 0; g < gts.size(); ++g) {
            double d = (Vec3(candidate_centers.row(c)) - gts[g].center).norm();
            if (d <= radius) pairs.push_back({d, c, static_cast<int>(g)});
        }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.d != b.d) return a.d < b.d;
        if (a.cand != b.cand) return a.cand < b.cand;
        return a.gt < b.gt;
    });
    std::vector<bool> gt_used(gts.size(), false);
    for (const auto& p : pairs) {
        if (t.match[p.cand] >= 0 || gt_used[p.gt]) continue;
        t.match[p.cand] = p.gt;
        gt_used[p.gt] = true;
        t.target[p.cand] = encode_box(gts[p.gt], Vec3(candidate_centers.row(p.cand)),
                                      size_templates, heading_bins);
        const auto& code = gts[p.gt].shape_code;
        if (!code.empty()) {
            if (static_cast<int>(code.size()) != shape_dim)
                throw DataError("shape code length does not match the shape head");
            for (int i = 0; i < shape_dim; ++i) t.gt_codes(p.cand, i) = code[i];
            t.has_codes = true;
        }
    }
    return t;
}

double shape_loss(const Eigen::MatrixXd& pred_rows, const Eigen::MatrixXd& gt_rows) {
    if (pred_rows.rows() != gt_rows.rows() || pred_rows.cols() != gt_rows.cols())
        throw DataError("shape_loss shape mismatch");
    if (pred_rows.rows() == 0) return 0.0;
    double total = 0.0;
    for (long i = 0; i < pred_rows.rows(); ++i)
        for (long j = 0; j < pred_rows.cols(); ++j)
            total += smooth_l1(pred_rows(i, j) - gt_rows(i, j));
    return total / pred_rows.rows();
}

ObjectLossResult object_losses(const std::vector<ObjectPredictions>& per_layer,
                               const ObjectTargets& tgt, const LossWeights& w,
                               const ContextConfig& cfg,
                               const Eigen::VectorXd* samp_logits,
                               const Eigen::VectorXd* samp_labels) {
    w.validate();
    int L = static_cast<int>(per_layer.size());
    if (L == 0) throw DomainError("object_losses needs at least one layer");
    int K = cfg.t_object;

    ObjectLossResult r;
    r.d_preds.assign(L, ObjectPredictions::zeros(cfg));
    std::vector<int> matched;
    for (int k = 0; k < K; ++k)
        if (tgt.match[k] >= 0) matched.push_back(k);
    int nm = static_cast<int>(matched.size());
    r.no_matches = nm == 0;

    for (int l = 0; l < L; ++l) {
        const ObjectPredictions& p = per_layer[l];
        ObjectPredictions& g = r.d_preds[l];

        double objn = 0.0;
        for (int k = 0; k < K; ++k) {
            double y = tgt.match[k] >= 0 ? 1.0 : 0.0;
            objn += bce_logit(p.objectness(k), y) / K;
            g.objectness(k) = w.beta_objness * bce_logit_grad(p.objectness(k), y) / (K * L);
        }
        r.objness += objn / L;
        if (nm == 0) continue;

        double cls = 0, cen = 0, scls = 0, soff = 0, hcls = 0, hoff = 0, shp = 0;
        for (int k : matched) {
            const BoxTarget& t = tgt.target[k];
            // Category cross-entropy.
            cls += (logsumexp(p.category.row(k)) - p.category(k, t.category)) / nm;
            Eigen::RowVectorXd sm = softmax_row(p.category.row(k));
            sm(t.category) -= 1.0;
            g.category.row(k) += w.beta_cls * sm / (nm * L);
            // Center offset.
            for (int a = 0; a < 3; ++a) {
                double d = p.center_off(k, a) - t.center_off[a];
                cen += smooth_l1(d) / nm;
                g.center_off(k, a) += w.beta_cen * smooth_l1_grad(d) / (nm * L);
            }
            // Size class + offset at the target class slot.
            scls += (logsumexp(p.size_cls.row(k)) - p.size_cls(k, t.size_cls)) / nm;
            Eigen::RowVectorXd ssm = softmax_row(p.size_cls.row(k));
            ssm(t.size_cls) -= 1.0;
            g.size_cls.row(k) += w.beta_size_cls * ssm / (nm * L);
            for (int a = 0; a < 3; ++a) {
                double d = p.size_off(k, 3 * t.size_cls + a) - t.size_off[a];
                soff += smooth_l1(d) / nm;
                g.size_off(k, 3 * t.size_cls + a) +=
                    w.beta_size_off * smooth_l1_grad(d) / (nm * L);
            }
            // Heading bin + offset at the target bin.
            hcls += (logsumexp(p.head_cls.row(k)) - p.head_cls(k, t.head_cls)) / nm;
            Eigen::RowVectorXd hsm = softmax_row(p.head_cls.row(k));
            hsm(t.head_cls) -= 1.0;
            g.head_cls.row(k) += w.beta_head_cls * hsm / (nm * L);
            {
                double d = p.head_off(k, t.head_cls) - t.head_off;
                hoff += smooth_l1(d) / nm;
                g.head_off(k, t.head_cls) += w.beta_head_off * smooth_l1_grad(d) / (nm * L);
            }
            // Shape code.
            if (tgt.has_codes) {
                for (int j = 0; j < cfg.shape_dim; ++j) {
                    double d = p.shape(k, j) - tgt.gt_codes(k, j);
                    shp += smooth_l1(d) / nm;
                    g.shape(k, j) += w.beta_shape * smooth_l1_grad(d) / (nm * L);
                }
            }
        }
        r.cls += cls / L;
        r.cen += cen / L;
        r.size_cls += scls / L;
        r.size_off += soff / L;
        r.head_cls += hcls / L;
        r.head_off += hoff / L;
        r.shape += shp / L;
    }

    if (samp_logits && samp_labels) {
        if (samp_logits->size() != K || samp_labels->size() != K)
            throw DataError("sampling loss vectors must have one entry per candidate");
        r.samp_omitted = false;
        r.d_samp_logits = Eigen::VectorXd::Zero(K);
        for (int k = 0; k < K; ++k) {
            r.samp += bce_logit((*samp_logits)(k), (*samp_labels)(k)) / K;
            r.d_samp_logits(k) =
                w.beta_samp * bce_logit_grad((*samp_logits)(k), (*samp_labels)(k)) / K;
        }
    }

    r.total = w.beta_objness * r.objness + w.beta_cls * r.cls + w.beta_cen * r.cen +
              w.beta_size_cls * r.size_cls + w.beta_size_off * r.size_off +
              w.beta_head_cls * r.head_cls + w.beta_head_off * r.head_off +
              w.beta_shape * r.shape + w.beta_samp * r.samp;
    return r;
}

PhysicalLossResult physical_violation_terms(const std::vector<OrientedBox>& boxes,
                                            const Vec3& layout_lo, const Vec3& layout_hi,
                                            const std::vector<int>& exempt_categories) {
    PhysicalLossResult r;
    size_t K = boxes.size();
    r.d_center.assign(K, Vec3::Zero());
    r.d_size.assign(K, Vec3::Zero());
    r.d_heading.assign(K, 0.0);
    r.active.assign(K, 0);
    if (K == 0) return r;

    // Corner sign pattern matching OrientedBox::corners().
    const double sx[8] = {1, -1, -1, 1, 1, -1, -1, 1};
    const double sz[8] = {1, 1, -1, -1, 1, 1, -1, -1};
    const double sy[8] = {-1, -1, -1, -1, 1, 1, 1, 1};

    for (size_t k = 0; k < K; ++k) {
        const OrientedBox& b = boxes[k];
        if (std::find(exempt_categories.begin(), exempt_categories.end(), b.category) !=
            exempt_categories.end())
            continue;
        auto corners = b.corners();
        Vec3 blo = corners[0], bhi = corners[0];
        for (const auto& c : corners) {
            blo = blo.cwiseMin(c);
            bhi = bhi.cwiseMax(c);
        }
        bool outside = false;
        for (int a = 0; a < 3; ++a)
            if (bhi[a] < layout_lo[a] || blo[a] > layout_hi[a]) outside = true;
        if (outside) continue;  // completely outside: indicator off
        r.active[k] = 1;

        double c = std::cos(b.heading), s = std::sin(b.heading);
        for (int ci = 0; ci < 8; ++ci) {
            const Vec3& x = corners[ci];
            for (int a = 0; a < 3; ++a) {
                double over = x[a] - layout_hi[a];
                double under = layout_lo[a] - x[a];
                double sign = 0.0;  // d loss / d corner coordinate
                if (over > 0) {
                    r.loss += over / K;
                    sign = 1.0 / K;
                    r.d_hi[a] -= 1.0 / K;
                } else if (under > 0) {
                    r.loss += under / K;
                    sign = -1.0 / K;
                    r.d_lo[a] += 1.0 / K;
                }
                if (sign == 0.0) continue;
                r.d_center[k][a] += sign;
                // Corner = center + R(heading) * (sx*l/2, sy*h/2, sz*w/2) with
                // world_x = c*lx + s*lz and world_z = -s*lx + c*lz.
                double lx = sx[ci] * b.size.x() / 2, lz = sz[ci] * b.size.z() / 2;
                if (a == 0) {
                    r.d_size[k].x() += sign * c * sx[ci] / 2;
                    r.d_size[k].z() += sign * s * sz[ci] / 2;
                    r.d_heading[k] += sign * (-s * lx + c * lz);
                } else if (a == 1) {
                    r.d_size[k].y() += sign * sy[ci] / 2;
                } else {
                    r.d_size[k].x() += sign * -s * sx[ci] / 2;
                    r.d_size[k].z() += sign * c * sz[ci] / 2;
                    r.d_heading[k] += sign * (-c * lx - s * lz);
                }
            }
        }
    }
    return r;
}

double physical_violation_loss(const std::vector<OrientedBox>& boxes,
                               const LayoutMesh& layout,
                               const std::vector<int>& exempt_categories) {
    if (!layout.is_watertight())
        throw DataError("physical_violation_loss requires a watertight layout");
    Vec3 lo, hi;
    layout.aabb(lo, hi);
    return physical_violation_terms(boxes, lo, hi, exempt_categories).loss;
}

JointLossResult joint_loss(const ModelOutputs& out, const SceneTargets& tgt,
                           const LossWeights& w, const ContextConfig& cfg,
                           int chamfer_samples, uint64_t chamfer_seed) {
    w.validate();
    if (tgt.base_layout.vertex_count() != cfg.t_layout)
        throw DataError("base layout vertex count must match the layout token count");
    if (tgt.candidate_centers.rows() != cfg.t_object)
        throw DataError("need one candidate center per object token");

    JointLossResult r;
    LayoutMesh pred_mesh = tgt.base_layout;
    pred_mesh.vertices += out.layout_offsets;

    r.layout_terms =
        layout_loss(pred_mesh, tgt.gt_layout, w, chamfer_samples, chamfer_seed);
    r.layout = r.layout_terms.total;
    r.grad.d_layout_offsets = w.sigma_l * r.layout_terms.d_vertices;

    ObjectTargets targets =
        assign_objects(tgt.candidate_centers, tgt.gt_boxes, tgt.size_templates,
                       cfg.heading_bins, cfg.shape_dim);
    r.object_terms = object_losses(out.objects, targets, w, cfg);
    r.object = r.object_terms.total;
    r.grad.d_objects = r.object_terms.d_preds;
    for (auto& d : r.grad.d_objects) {
        d.center_off *= w.sigma_o;
        d.size_cls *= w.sigma_o;
        d.size_off *= w.sigma_o;
        d.head_cls *= w.sigma_o;
        d.head_off *= w.sigma_o;
        d.objectness *= w.sigma_o;
        d.category *= w.sigma_o;
        d.shape *= w.sigma_o;
    }

    // Physical term on the decoded final-layer boxes against the predicted
    // layout's per-axis extents.
    int last = cfg.layers - 1;
    for (int k = 0; k < cfg.t_object; ++k)
        r.decoded_boxes.push_back(decode_box(out.objects[last], k,
                                             Vec3(tgt.candidate_centers.row(k)),
                                             tgt.size_templates, cfg.heading_bins));
    Vec3 lo, hi;
    pred_mesh.aabb(lo, hi);
    PhysicalLossResult ph =
        physical_violation_terms(r.decoded_boxes, lo, hi, tgt.exempt_categories);
    r.physic = ph.loss;
    for (int k = 0; k < cfg.t_object; ++k) {
        if (!ph.active[k]) continue;
        ObjectPredictions& d = r.grad.d_objects[last];
        d.center_off.row(k) += w.sigma_p * ph.d_center[k].transpose();
        int s_cls;
        out.objects[last].size_cls.row(k).maxCoeff(&s_cls);
        d.size_off.row(k).segment(3 * s_cls, 3) += w.sigma_p * ph.d_size[k].transpose();
        int h_cls;
        out.objects[last].head_cls.row(k).maxCoeff(&h_cls);
        d.head_off(k, h_cls) += w.sigma_p * ph.d_heading[k];
    }
    // Bounds gradient lands on the extremal predicted vertices per axis.
    for (int a = 0; a < 3; ++a) {
        if (ph.d_lo[a] != 0.0) {
            int idx;
            pred_mesh.vertices.col(a).minCoeff(&idx);
            r.grad.d_layout_offsets(idx, a) += w.sigma_p * ph.d_lo[a];
        }
        if (ph.d_hi[a] != 0.0) {
            int idx;
            pred_mesh.vertices.col(a).maxCoeff(&idx);
            r.grad.d_layout_offsets(idx, a) += w.sigma_p * ph.d_hi[a];
        }
    }

    r.total = w.sigma_l * r.layout + w.sigma_o * r.object + w.sigma_p * r.physic;
    if (!std::isfinite(r.total)) throw NumericalError("non-finite joint loss");
    return r;
}

std::string loss_report_json(const JointLossResult& r, const LossWeights& w) {
    nlohmann::json j;
    j["total"] = r.total;
    j["layout"] = {{"total", r.layout},
                   {"pos", r.layout_terms.pos},
                   {"norm", r.layout_terms.norm},
                   {"sharp", r.layout_terms.sharp},
                   {"degenerate_warning", r.layout_terms.degenerate_warning}};
    j["object"] = {{"total", r.object},
                   {"objness", r.object_terms.objness},
                   {"cls", r.object_terms.cls},
                   {"cen", r.object_terms.cen},
                   {"size_cls", r.object_terms.size_cls},
                   {"size_off", r.object_terms.size_off},
                   {"head_cls", r.object_terms.head_cls},
                   {"head_off", r.object_terms.head_off},
                   {"shape", r.object_terms.shape},
                   {"samp", r.object_terms.samp},
                   {"samp_omitted", r.object_terms.samp_omitted},
                   {"no_matches", r.object_terms.no_matches}};
    j["physic"] = r.physic;
    j["weights"] = {{"lambda_p", w.lambda_p}, {"lambda_n", w.lambda_n},
                    {"lambda_e", w.lambda_e}, {"beta_objness", w.beta_objness},
                    {"beta_cls", w.beta_cls}, {"beta_cen", w.beta_cen},
                    {"beta_size_cls", w.beta_size_cls}, {"beta_size_off", w.beta_size_off},
                    {"beta_head_cls", w.beta_head_cls}, {"beta_head_off", w.beta_head_off},
                    {"beta_shape", w.beta_shape}, {"beta_samp", w.beta_samp},
                    {"sigma_l", w.sigma_l}, {"sigma_o", w.sigma_o}, {"sigma_p", w.sigma_p}};
    return j.dump(2);
}

}  // namespace panoctx
