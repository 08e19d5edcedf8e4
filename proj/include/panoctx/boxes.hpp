#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "panoctx/errors.hpp"
#include "panoctx/geom.hpp"

namespace panoctx {

// Gravity-aligned box: yaw rotation about the y axis only.
// Local axes before rotation: l along x, h along y, w along z.
struct OrientedBox {
    Vec3 center = Vec3::Zero();
    Vec3 size = Vec3::Ones();  // (l, h, w), all > 0
    double heading = 0.0;      // yaw in [-pi, pi)
    int category = 0;
    double score = 1.0;
    std::vector<double> shape_code;  // empty or 512 values

    void validate() const;
    double volume() const { return size.x() * size.y() * size.z(); }
    // 8 corners: bottom face CCW viewed from above (+y), then the top face
    // in the same column order.
    std::array<Vec3, 8> corners() const;
};

using DetectionSet = std::vector<OrientedBox>;
using GroundTruthSet = std::vector<OrientedBox>;

double iou3d(const OrientedBox& a, const OrientedBox& b);

struct ApResult {
    std::map<int, double> per_category;  // categories with >= 1 GT
    double map = 0.0;
};

// Greedy score-descending matching, each GT used at most once; AP is the
// area under the interpolated precision-recall curve.
ApResult average_precision(const DetectionSet& dets, const GroundTruthSet& gts,
                           double iou_thresh);

// JSON interchange: array of {center, size, heading, category, score?}.
std::string boxes_to_json(const std::vector<OrientedBox>& boxes, bool with_scores);
std::vector<OrientedBox> boxes_from_json(const std::string& json_text);
std::vector<OrientedBox> read_boxes_json(const std::string& path);
void write_boxes_json(const std::vector<OrientedBox>& boxes, const std::string& path,
                      bool with_scores);

// Convex polygon area of the yaw-rotated plan rectangles' intersection.
double plan_intersection_area(const OrientedBox& a, const OrientedBox& b);

}  // namespace panoctx
