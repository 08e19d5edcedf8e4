#include "panoctx/toytrain.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "panoctx/pointcloud.hpp"

namespace panoctx {

namespace {

uint64_t mix(uint64_t x) {
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    x *= 0xc4ceb9fe1a85ec53ULL;
    x ^= x >> 33;
    return x;
}

}  // namespace

void TrainConfig::validate() const {
    if (steps < 1) throw DomainError("steps must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw DomainError("bad learning rate");
    if (!(mask_fraction >= 0.0 && mask_fraction < 1.0))
        throw DomainError("mask_fraction must be in [0, 1)");
    if (chamfer_samples < 1) throw DomainError("chamfer_samples must be >= 1");
    weights.validate();
    ctx.validate();
}

LayoutMesh base_layout_for(int t_layout) {
    int level = -1;
    for (int l = 0, n = 12; l <= 4; ++l, n = 4 * n - 6)
        if (n == t_layout) level = l;
    if (level < 0) throw DomainError("t_layout does not match an icosphere vertex count");
    LayoutMesh m = icosphere(level);
    m.vertices *= 2.0;
    return m;
}

std::vector<Vec3> default_size_templates(int size_classes) {
    std::vector<Vec3> t = {{0.5, 0.5, 0.5}, {0.8, 0.8, 0.8}, {1.0, 1.0, 1.0},
                           {1.2, 0.8, 1.2}, {0.6, 1.0, 0.6}};
    while (static_cast<int>(t.size()) < size_classes) {
        double s = 0.4 + 0.2 * t.size();
        t.push_back({s, s, s});
    }
    t.resize(size_classes);
    return t;
}

SceneData scene_to_data(const SyntheticScene& scene, const ContextConfig& cfg,
                        uint64_t seed) {
    SceneData d;
    int gh = static_cast<int>(std::lround(std::sqrt(cfg.t_image / 2.0)));
    int gw = 2 * gh;
    int W = 4 * gw, H = 4 * gh;
    EquirectRaster depth = render_depth(scene, W, H);

    // Image tokens: each grid cell's 4x4 depth patch plus simple stats.
    d.inputs.image_feats = Eigen::MatrixXd::Zero(cfg.t_image, cfg.image_feat_dim);
    for (int r = 0; r < gh; ++r) {
        for (int c = 0; c < gw; ++c) {
            int row = r * gw + c;
            double mn = 1e30, mx = -1e30, mean = 0;
            int idx = 0;
            for (int dr = 0; dr < 4; ++dr)
                for (int dc = 0; dc < 4; ++dc) {
                    double v = depth.at(4 * r + dr, 4 * c + dc) * 0.25;
                    if (idx < cfg.image_feat_dim - 3) d.inputs.image_feats(row, idx++) = v;
                    mn = std::min(mn, v);
                    mx = std::max(mx, v);
                    mean += v / 16.0;
                }
            int tail = cfg.image_feat_dim;
            d.inputs.image_feats(row, tail - 3) = mean;
            d.inputs.image_feats(row, tail - 2) = mn;
            d.inputs.image_feats(row, tail - 1) = mx;
        }
    }

    d.targets.base_layout = base_layout_for(cfg.t_layout);
    d.inputs.layout_pos = d.targets.base_layout.vertices;
    d.inputs.layout_feats = Eigen::MatrixXd::Zero(cfg.t_layout, cfg.d);

    PointCloud cloud = fibonacci_sample(depth, cfg.t_point);
    d.inputs.point_pos.resize(cfg.t_point, 3);
    for (int i = 0; i < cfg.t_point; ++i) d.inputs.point_pos.row(i) = cloud.points[i];

    // Object tokens: jittered GT centers first (proposal stand-in with full
    // recall), the rest uniform in the room.
    std::mt19937_64 rng(mix(seed ^ 0x7f4a7c15ULL));
    std::uniform_real_distribution<double> jit(-0.3, 0.3);
    Vec3 lo, hi;
    scene.layout.aabb(lo, hi);
    std::uniform_real_distribution<double> ux(lo.x() + 0.3, hi.x() - 0.3);
    std::uniform_real_distribution<double> uy(lo.y() + 0.3, hi.y() - 0.3);
    std::uniform_real_distribution<double> uz(lo.z() + 0.3, hi.z() - 0.3);
    d.targets.candidate_centers.resize(cfg.t_object, 3);
    d.inputs.object_pos.resize(cfg.t_object, 6);
    for (int k = 0; k < cfg.t_object; ++k) {
        Vec3 c;
        if (k < static_cast<int>(scene.boxes.size()))
            c = scene.boxes[k].center + Vec3{jit(rng), jit(rng), jit(rng)};
        else
            c = {ux(rng), uy(rng), uz(rng)};
        d.targets.candidate_centers.row(k) = c;
        d.inputs.object_pos.row(k) << c.x(), c.y(), c.z(), 1.0, 1.0, 1.0;
    }

    d.targets.gt_layout = scene.layout;
    d.targets.gt_boxes = scene.boxes;
    for (auto& b : d.targets.gt_boxes)
        b.shape_code = pseudo_shape_code(b.category, b.size, cfg.shape_dim);
    d.targets.size_templates = default_size_templates(cfg.size_classes);
    return d;
}

namespace {

// Heads applied straight to the assembled tokens: the no-context baseline.
ModelOutputs forward_nocontext(const SceneData& data, const EncoderParams& p,
                               ModelCache* cache) {
    TokenSet tokens = assemble_tokens(data.inputs, p);
    ModelOutputs out;
    ObjectPredictions obj = object_head(tokens.embeddings, p);
    out.objects.assign(p.cfg.layers, obj);
    out.layout_offsets = layout_head(tokens.embeddings, p);
    if (cache) {
        cache->inputs = data.inputs;
        cache->tokens = tokens;
        cache->layers.clear();
        cache->layer_outputs.clear();
    }
    return out;
}

EncoderParams backward_nocontext(const ModelCache& cache, const EncoderParams& p,
                                 const ModelGradInput& grad) {
    const ContextConfig& cfg = p.cfg;
    EncoderParams grads = p.zeros_like();
    const Eigen::MatrixXd& emb = cache.tokens.embeddings;
    int layout0 = cfg.t_image;
    int object0 = cfg.t_image + cfg.t_layout + cfg.t_point;
    Eigen::MatrixXd d_emb = Eigen::MatrixXd::Zero(emb.rows(), cfg.d);
    Eigen::MatrixXd obj_tok = emb.middleRows(object0, cfg.t_object);
    for (const auto& d_obj : grad.d_objects) {
        Eigen::MatrixXd raw = object_grads_to_matrix(d_obj, cfg);
        grads.object_head.w += obj_tok.transpose() * raw;
        grads.object_head.b += raw.colwise().sum();
        d_emb.middleRows(object0, cfg.t_object) += raw * p.object_head.w.transpose();
    }
    if (grad.d_layout_offsets.size() > 0) {
        Eigen::MatrixXd lay_tok = emb.middleRows(layout0, cfg.t_layout);
        grads.layout_head.w += lay_tok.transpose() * grad.d_layout_offsets;
        grads.layout_head.b += grad.d_layout_offsets.colwise().sum();
        d_emb.middleRows(layout0, cfg.t_layout) +=
            grad.d_layout_offsets * p.layout_head.w.transpose();
    }
    assemble_backward(cache.inputs, p, d_emb, grads);
    return grads;
}

}  // namespace

ModelOutputs toy_forward(const SceneData& data, const EncoderParams& p,
                         const TrainConfig& cfg, const MaskSpec& mask, ModelCache* cache) {
    if (cfg.use_context) return model_forward(data.inputs, p, mask, cache);
    return forward_nocontext(data, p, cache);
}

TrainResult train(const std::vector<SyntheticScene>& scenes, const TrainConfig& cfg) {
    cfg.validate();
    if (scenes.empty()) throw DomainError("train needs at least one scene");

    std::vector<SceneData> data;
    for (size_t i = 0; i < scenes.size(); ++i)
        data.push_back(scene_to_data(scenes[i], cfg.ctx, cfg.seed + 1000 * i + 1));

    LossWeights w = cfg.weights;
    if (!cfg.use_physical) w.sigma_p = 0.0;

    TrainResult r;
    r.params = EncoderParams::init(cfg.ctx, cfg.seed);
    std::vector<double> flat = flatten_params(r.params);
    int T = cfg.ctx.total_tokens();

    for (int step = 0; step < cfg.steps; ++step) {
        MaskSpec mask = cfg.mask_fraction > 0.0
                            ? MaskSpec::draw(T, cfg.mask_fraction,
                                             mix(cfg.seed * 0x9e3779b9ULL + step))
                            : MaskSpec::none();
        std::vector<double> accum(flat.size(), 0.0);
        StepLog log;
        log.step = step;
        for (const SceneData& sd : data) {
            ModelCache cache;
            ModelOutputs out = toy_forward(sd, r.params, cfg, mask, &cache);
            JointLossResult jr =
                joint_loss(out, sd.targets, w, cfg.ctx, cfg.chamfer_samples, 1234);
            if (!std::isfinite(jr.total))
                throw NumericalError("training diverged at step " + std::to_string(step));
            EncoderParams g = cfg.use_context
                                  ? model_backward(cache, r.params, jr.grad)
                                  : backward_nocontext(cache, r.params, jr.grad);
            std::vector<double> gflat = flatten_params(g);
            for (size_t i = 0; i < accum.size(); ++i) accum[i] += gflat[i];
            log.layout += jr.layout / scenes.size();
            log.object += jr.object / scenes.size();
            log.physic += jr.physic / scenes.size();
            log.total += jr.total / scenes.size();
        }
        r.history.push_back(log);
        double scale = cfg.lr / scenes.size();
        for (size_t i = 0; i < flat.size(); ++i) flat[i] -= scale * accum[i];
        unflatten_params(r.params, flat);
    }
    return r;
}

EvalMetrics evaluate(const EncoderParams& p, const std::vector<SyntheticScene>& scenes,
                     const TrainConfig& cfg, int voxel_res) {
    if (scenes.empty()) throw DomainError("evaluate needs at least one scene");
    EvalMetrics m;
    int last = cfg.ctx.layers - 1;
    for (size_t si = 0; si < scenes.size(); ++si) {
        SceneData sd = scene_to_data(scenes[si], cfg.ctx, cfg.seed + 1000 * si + 1);
        ModelOutputs out = toy_forward(sd, p, cfg, MaskSpec::none(), nullptr);
        DetectionSet dets;
        for (int k = 0; k < cfg.ctx.t_object; ++k)
            dets.push_back(decode_box(out.objects[last], k,
                                      Vec3(sd.targets.candidate_centers.row(k)),
                                      sd.targets.size_templates, cfg.ctx.heading_bins));
        m.map += average_precision(dets, scenes[si].boxes, 0.15).map / scenes.size();
        LayoutMesh pred = sd.targets.base_layout;
        pred.vertices += out.layout_offsets;
        auto [iou2, iou3] = layout_iou(pred, scenes[si].layout, voxel_res);
        m.iou2d += iou2 / scenes.size();
        m.iou3d += iou3 / scenes.size();
    }
    return m;
}

std::vector<AblationRow> ablate(const std::vector<SyntheticScene>& train_scenes,
                                const std::vector<SyntheticScene>& eval_scenes,
                                const TrainConfig& base,
                                const std::vector<AblationToggles>& combos) {
    std::vector<AblationRow> rows;
    for (const AblationToggles& t : combos) {
        TrainConfig c = base;
        c.use_context = t.context_module;
        c.use_physical = t.physical_loss;
        c.mask_fraction =
            t.token_masking ? (base.mask_fraction > 0.0 ? base.mask_fraction : 0.1) : 0.0;
        TrainResult r = train(train_scenes, c);
        rows.push_back({t, evaluate(r.params, eval_scenes, c)});
    }
    return rows;
}

std::string history_csv(const std::vector<StepLog>& history) {
    std::ostringstream os;
    os << "step,L_layout,L_object,L_physic,total\n";
    os << std::setprecision(12);
    for (const auto& h : history)
        os << h.step << ',' << h.layout << ',' << h.object << ',' << h.physic << ','
           << h.total << '\n';
    return os.str();
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "context_module,physical_loss,token_masking,mAP@0.15,layout_iou_2d,layout_iou_3d\n";
    os << std::setprecision(12);
    for (const auto& r : rows)
        os << (r.toggles.context_module ? 1 : 0) << ','
           << (r.toggles.physical_loss ? 1 : 0) << ','
           << (r.toggles.token_masking ? 1 : 0) << ',' << r.metrics.map << ','
           << r.metrics.iou2d << ',' << r.metrics.iou3d << '\n';
    return os.str();
}

}  // namespace panoctx
