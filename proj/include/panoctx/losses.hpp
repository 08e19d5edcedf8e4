#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "panoctx/boxes.hpp"
#include "panoctx/mesh.hpp"
#include "panoctx/transformer.hpp"

namespace panoctx {

struct LossWeights {
    // Layout terms (vertex position, surface normal, edge sharpness).
    double lambda_p = 1.0, lambda_n = 0.5, lambda_e = 0.1;
    // Per object-loss term.
    double beta_objness = 1.0, beta_cls = 1.0, beta_cen = 1.0;
    double beta_size_cls = 1.0, beta_size_off = 1.0;
    double beta_head_cls = 1.0, beta_head_off = 1.0;
    double beta_shape = 1.0, beta_samp = 1.0;
    // Joint weights.
    double sigma_l = 1.0, sigma_o = 1.0, sigma_p = 1.0;

    void validate() const;  // all finite and >= 0
};

double smooth_l1(double x, double beta = 1.0);
double smooth_l1_grad(double x, double beta = 1.0);

// Seeded surface sampling: faces drawn uniformly (degenerate faces excluded),
// barycentric coordinates drawn independently of the geometry so nearby
// meshes with equal topology get corresponding samples.
struct SurfaceSamples {
    std::vector<int> face;
    Eigen::MatrixXd bary;       // n x 3
    Eigen::MatrixXd points;     // n x 3
    Eigen::MatrixXd normals;    // n x 3, unit, of the carrying face
    bool degenerate_warning = false;
};
SurfaceSamples sample_surface(const LayoutMesh& mesh, int n_samples, uint64_t seed);

struct LayoutLossResult {
    double total = 0.0;
    double pos = 0.0, norm = 0.0, sharp = 0.0;  // unweighted terms
    Eigen::MatrixXd d_vertices;                 // d total / d pred vertices
    bool degenerate_warning = false;
};
LayoutLossResult layout_loss(const LayoutMesh& pred, const LayoutMesh& gt,
                             const LossWeights& w, int n_samples = 1024,
                             uint64_t seed = 0);

// Candidate <-> GT matching: greedy nearest center within `radius` meters,
// each GT claimed at most once. Targets are box regression encodings plus
// the matched shape code (resized/checked against shape_dim by the caller).
struct ObjectTargets {
    std::vector<int> match;          // per candidate: GT index or -1
    std::vector<BoxTarget> target;   // valid where match >= 0
    Eigen::MatrixXd gt_codes;        // K x shape_dim, zero rows when unmatched
    bool has_codes = false;
};
ObjectTargets assign_objects(const Eigen::MatrixXd& candidate_centers,
                             const GroundTruthSet& gts,
                             const std::vector<Vec3>& size_templates, int heading_bins,
                             int shape_dim, double radius = 1.0);

// Mean over matched rows of the elementwise smooth-L1 summed across dims.
double shape_loss(const Eigen::MatrixXd& pred_rows, const Eigen::MatrixXd& gt_rows);

struct ObjectLossResult {
    double total = 0.0;
    // Per-term values, each already averaged over layers (unweighted).
    double objness = 0, cls = 0, cen = 0, size_cls = 0, size_off = 0;
    double head_cls = 0, head_off = 0, shape = 0, samp = 0;
    bool samp_omitted = true;
    bool no_matches = false;
    std::vector<ObjectPredictions> d_preds;  // d total / d predictions, per layer
    Eigen::VectorXd d_samp_logits;
};
ObjectLossResult object_losses(const std::vector<ObjectPredictions>& per_layer,
                               const ObjectTargets& tgt, const LossWeights& w,
                               const ContextConfig& cfg,
                               const Eigen::VectorXd* samp_logits = nullptr,
                               const Eigen::VectorXd* samp_labels = nullptr);

// Per-axis layout extents penalty on box corners (active only for boxes whose
// AABB overlaps the layout AABB), mean over all boxes.
struct PhysicalLossResult {
    double loss = 0.0;
    std::vector<Vec3> d_center, d_size;  // per box
    std::vector<double> d_heading;
    Vec3 d_lo = Vec3::Zero(), d_hi = Vec3::Zero();  // w.r.t. the layout bounds
    std::vector<uint8_t> active;
};
PhysicalLossResult physical_violation_terms(const std::vector<OrientedBox>& boxes,
                                            const Vec3& layout_lo, const Vec3& layout_hi,
                                            const std::vector<int>& exempt_categories);
double physical_violation_loss(const std::vector<OrientedBox>& boxes,
                               const LayoutMesh& layout,
                               const std::vector<int>& exempt_categories = {});

// Everything joint training needs to score one scene.
struct SceneTargets {
    LayoutMesh base_layout;   // vertex count == cfg.t_layout; offsets deform it
    LayoutMesh gt_layout;
    GroundTruthSet gt_boxes;  // shape codes sized to cfg.shape_dim when present
    std::vector<Vec3> size_templates;
    Eigen::MatrixXd candidate_centers;  // t_object x 3
    std::vector<int> exempt_categories;
};

struct JointLossResult {
    double total = 0.0;
    double layout = 0.0, object = 0.0, physic = 0.0;
    LayoutLossResult layout_terms;
    ObjectLossResult object_terms;
    std::vector<OrientedBox> decoded_boxes;  // final layer
    ModelGradInput grad;                     // feeds model_backward
};

// sigma_l * L_layout + sigma_o * L_object + sigma_p * L_physic with gradients
// back to the per-layer predictions and the layout offsets. The physical term
// is evaluated against the predicted (deformed) layout.
JointLossResult joint_loss(const ModelOutputs& out, const SceneTargets& tgt,
                           const LossWeights& w, const ContextConfig& cfg,
                           int chamfer_samples = 1024, uint64_t chamfer_seed = 0);

std::string loss_report_json(const JointLossResult& r, const LossWeights& w);

}  // namespace panoctx
