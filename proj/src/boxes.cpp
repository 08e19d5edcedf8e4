#include "panoctx/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace panoctx {

namespace {
constexpr double kPi = 3.141592653589793238462643383279502884;

struct P2 {
    double x, z;
};

double cross2(const P2& o, const P2& a, const P2& b) {
    return (a.x - o.x) * (b.z - o.z) - (a.z - o.z) * (b.x - o.x);
}

std::array<P2, 4> plan_rect(const OrientedBox& b) {
    double c = std::cos(b.heading), s = std::sin(b.heading);
    double hx = b.size.x() / 2, hz = b.size.z() / 2;
    // CCW in the (x, z) plane.
    const double lx[4] = {hx, -hx, -hx, hx};
    const double lz[4] = {hz, hz, -hz, -hz};
    std::array<P2, 4> out;
    for (int i = 0; i < 4; ++i)
        out[i] = {b.center.x() + c * lx[i] + s * lz[i],
                  b.center.z() - s * lx[i] + c * lz[i]};
    return out;
}

double polygon_area(const std::vector<P2>& poly) {
    double a = 0.0;
    size_t n = poly.size();
    for (size_t i = 0; i < n; ++i) {
        const P2& p = poly[i];
        const P2& q = poly[(i + 1) % n];
        a += p.x * q.z - q.x * p.z;
    }
    return a / 2.0;
}

// Sutherland-Hodgman clip of a convex CCW polygon by a convex CCW polygon.
std::vector<P2> clip_convex(std::vector<P2> subject, const std::array<P2, 4>& clip) {
    const double eps = 1e-12;  // collinearity guard
    for (int e = 0; e < 4 && !subject.empty(); ++e) {
        const P2& c0 = clip[e];
        const P2& c1 = clip[(e + 1) % 4];
        std::vector<P2> out;
        size_t n = subject.size();
        for (size_t i = 0; i < n; ++i) {
            const P2& a = subject[i];
            const P2& b = subject[(i + 1) % n];
            double da = cross2(c0, c1, a);
            double db = cross2(c0, c1, b);
            bool ina = da >= -eps, inb = db >= -eps;
            if (ina) out.push_back(a);
            if (ina != inb) {
                double t = da / (da - db);
                out.push_back({a.x + t * (b.x - a.x), a.z + t * (b.z - a.z)});
            }
        }
        subject = std::move(out);
    }
    return subject;
}

bool box_less(const OrientedBox& a, const OrientedBox& b) {
    auto key = [](const OrientedBox& x) {
        return std::array<double, 8>{x.center.x(), x.center.y(), x.center.z(),
                                     x.size.x(),   x.size.y(),   x.size.z(),
                                     x.heading,    static_cast<double>(x.category)};
    };
    return key(a) < key(b);
}

}  // namespace

void OrientedBox::validate() const {
    if (!(size.x() > 0 && size.y() > 0 && size.z() > 0))
        throw DomainError("box size components must be positive");
    if (!center.allFinite() || !std::isfinite(heading))
        throw NumericalError("non-finite box parameters");
}

std::array<Vec3, 8> OrientedBox::corners() const {
    double c = std::cos(heading), s = std::sin(heading);
    double hx = size.x() / 2, hy = size.y() / 2, hz = size.z() / 2;
    const double lx[4] = {hx, -hx, -hx, hx};
    const double lz[4] = {hz, hz, -hz, -hz};
    std::array<Vec3, 8> out;
    for (int i = 0; i < 4; ++i) {
        Vec3 d{c * lx[i] + s * lz[i], -hy, -s * lx[i] + c * lz[i]};
        out[i] = center + d;
        out[i + 4] = center + Vec3{d.x(), hy, d.z()};
    }
    return out;
}

double plan_intersection_area(const OrientedBox& a, const OrientedBox& b) {
    auto ra = plan_rect(a);
    auto rb = plan_rect(b);
    std::vector<P2> subject(ra.begin(), ra.end());
    auto poly = clip_convex(std::move(subject), rb);
    if (poly.size() < 3) return 0.0;
    return std::max(0.0, polygon_area(poly));
}

double iou3d(const OrientedBox& a, const OrientedBox& b) {
    a.validate();
    b.validate();
    // Canonical argument order makes the result exactly symmetric.
    if (box_less(b, a)) return iou3d(b, a);
    double y_lo = std::max(a.center.y() - a.size.y() / 2, b.center.y() - b.size.y() / 2);
    double y_hi = std::min(a.center.y() + a.size.y() / 2, b.center.y() + b.size.y() / 2);
    double dy = y_hi - y_lo;
    if (dy <= 0.0) return 0.0;
    double inter = plan_intersection_area(a, b) * dy;
    double uni = a.volume() + b.volume() - inter;
    return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

ApResult average_precision(const DetectionSet& dets, const GroundTruthSet& gts,
                           double iou_thresh) {
    std::map<int, std::vector<size_t>> gt_by_cat, det_by_cat;
    for (size_t i = 0; i < gts.size(); ++i) gt_by_cat[gts[i].category].push_back(i);
    for (size_t i = 0; i < dets.size(); ++i) det_by_cat[dets[i].category].push_back(i);
    if (gt_by_cat.empty()) throw NumericalError("AP undefined without any ground truth");

    ApResult res;
    for (const auto& [cat, gt_idx] : gt_by_cat) {
        std::vector<size_t> d_idx;
        if (auto it = det_by_cat.find(cat); it != det_by_cat.end()) d_idx = it->second;
        std::stable_sort(d_idx.begin(), d_idx.end(), [&](size_t a, size_t b) {
            return dets[a].score > dets[b].score;
        });
        std::vector<bool> gt_used(gt_idx.size(), false);
        size_t n_gt = gt_idx.size();
        std::vector<double> recall, precision;
        size_t tp = 0;
        for (size_t rank = 0; rank < d_idx.size(); ++rank) {
            double best = -1.0;
            size_t best_g = 0;
            for (size_t g = 0; g < gt_idx.size(); ++g) {
                if (gt_used[g]) continue;
                double v = iou3d(dets[d_idx[rank]], gts[gt_idx[g]]);
                if (v > best) {
                    best = v;
                    best_g = g;
                }
            }
            if (best >= iou_thresh) {
                gt_used[best_g] = true;
                ++tp;
            }
            recall.push_back(static_cast<double>(tp) / n_gt);
            precision.push_back(static_cast<double>(tp) / (rank + 1));
        }
        // Precision envelope, then area under the PR curve.
        double ap = 0.0;
        for (size_t i = precision.size(); i-- > 1;)
            precision[i - 1] = std::max(precision[i - 1], precision[i]);
        double prev_r = 0.0;
        for (size_t i = 0; i < recall.size(); ++i) {
            ap += (recall[i] - prev_r) * precision[i];
            prev_r = recall[i];
        }
        res.per_category[cat] = ap;
    }
    double sum = 0.0;
    for (const auto& [cat, ap] : res.per_category) sum += ap;
    res.map = sum / res.per_category.size();
    return res;
}

std::string boxes_to_json(const std::vector<OrientedBox>& boxes, bool with_scores) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& b : boxes) {
        nlohmann::json o;
        o["center"] = {b.center.x(), b.center.y(), b.center.z()};
        o["size"] = {b.size.x(), b.size.y(), b.size.z()};
        o["heading"] = b.heading;
        o["category"] = b.category;
        if (with_scores) o["score"] = b.score;
        if (!b.shape_code.empty()) o["shape_code"] = b.shape_code;
        arr.push_back(std::move(o));
    }
    return arr.dump(2);
}

std::vector<OrientedBox> boxes_from_json(const std::string& json_text) {
    nlohmann::json arr;
    try {
        arr = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad box JSON: ") + e.what());
    }
    if (!arr.is_array()) throw DataError("box JSON must be an array");
    std::vector<OrientedBox> out;
    for (const auto& o : arr) {
        OrientedBox b;
        auto c = o.at("center");
        auto s = o.at("size");
        b.center = {c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()};
        b.size = {s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()};
        b.heading = o.at("heading").get<double>();
        b.category = o.at("category").get<int>();
        if (o.contains("score")) b.score = o["score"].get<double>();
        if (o.contains("shape_code")) b.shape_code = o["shape_code"].get<std::vector<double>>();
        b.validate();
        out.push_back(std::move(b));
    }
    return out;
}

std::vector<OrientedBox> read_boxes_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return boxes_from_json(ss.str());
}

void write_boxes_json(const std::vector<OrientedBox>& boxes, const std::string& path,
                      bool with_scores) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open for writing: " + path);
    os << boxes_to_json(boxes, with_scores) << "\n";
}

}  // namespace panoctx
