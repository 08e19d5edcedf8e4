#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "panoctx/losses.hpp"
#include "panoctx/mesh.hpp"
#include "panoctx/pointcloud.hpp"
#include "panoctx/raster_io.hpp"
#include "panoctx/scenegen.hpp"
#include "panoctx/toytrain.hpp"
#include "panoctx/transformer.hpp"

using namespace panoctx;

namespace {

void emit(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text;
        if (!text.empty() && text.back() != '\n') std::cout << '\n';
        return;
    }
    std::ofstream os(out_path);
    if (!os) throw DataError("cannot open for writing: " + out_path);
    os << text;
}

std::vector<SyntheticScene> load_or_generate(const std::vector<std::string>& paths,
                                             int gen_count, uint64_t seed,
                                             const SceneSpec& spec) {
    std::vector<SyntheticScene> scenes;
    for (const auto& p : paths) scenes.push_back(read_scene_json(p));
    for (int i = 0; i < gen_count; ++i) scenes.push_back(generate_scene(seed + i, spec));
    if (scenes.empty()) throw DataError("no scenes given or generated");
    return scenes;
}

// Central-difference check of the full model + joint loss at desk scale.
nlohmann::json run_grad_check(uint64_t seed, int stride) {
    ContextConfig cfg = ContextConfig::grad_check();
    EncoderParams p = EncoderParams::init(cfg, seed);
    std::mt19937_64 rng(seed ^ 0x5bf0a8b1ULL);
    std::uniform_real_distribution<double> u(-1, 1);
    auto fill = [&](long r, long c) {
        Eigen::MatrixXd m(r, c);
        for (long i = 0; i < r; ++i)
            for (long j = 0; j < c; ++j) m(i, j) = u(rng);
        return m;
    };
    AssembleInputs in;
    in.image_feats = fill(cfg.t_image, cfg.image_feat_dim);
    in.layout_feats = fill(cfg.t_layout, cfg.d);
    in.layout_pos = fill(cfg.t_layout, 3);
    in.point_pos = fill(cfg.t_point, 3);
    in.object_pos = fill(cfg.t_object, 6);

    SceneTargets tgt;
    tgt.base_layout.vertices.resize(4, 3);
    tgt.base_layout.vertices << 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2;
    tgt.base_layout.faces = {{0, 2, 1}, {0, 1, 3}, {0, 3, 2}, {1, 2, 3}};
    {
        LayoutMesh box;
        box.vertices.resize(8, 3);
        int i = 0;
        for (double z : {-1.5, 1.5})
            for (double y : {-1.2, 1.0})
                for (double x : {-1.5, 1.5}) box.vertices.row(i++) = Vec3{x, y, z};
        const int f[12][3] = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6},
                              {0, 1, 4}, {1, 5, 4}, {2, 6, 3}, {3, 6, 7},
                              {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
        for (const auto& t : f) box.faces.push_back({t[0], t[1], t[2]});
        tgt.gt_layout = box;
    }
    tgt.size_templates = {{0.5, 0.5, 0.5}, {1, 1, 1}, {1.5, 1.0, 1.5}};
    tgt.candidate_centers = fill(cfg.t_object, 3);
    OrientedBox g;
    g.center = Vec3(tgt.candidate_centers.row(0)) + Vec3{0.2, -0.1, 0.15};
    g.size = {1.05, 0.95, 1.1};
    g.heading = 0.4;
    g.category = 1;
    g.shape_code.assign(cfg.shape_dim, 0.3);
    tgt.gt_boxes = {g};

    LossWeights w;
    w.lambda_n = 0.4;
    w.lambda_e = 0.2;
    MaskSpec mask;
    mask.masked = {3, 8};
    const int ns = 64;

    ModelCache cache;
    ModelOutputs out = model_forward(in, p, mask, &cache);
    JointLossResult r = joint_loss(out, tgt, w, cfg, ns, 17);
    EncoderParams grads = model_backward(cache, p, r.grad);
    auto flat = flatten_params(p);
    auto gflat = flatten_params(grads);
    EncoderParams scratch = p;
    const double h = 2e-5;
    double worst = 0.0;
    for (size_t i = 0; i < flat.size(); i += stride) {
        auto v = flat;
        v[i] += h;
        unflatten_params(scratch, v);
        double lp = joint_loss(model_forward(in, scratch, mask), tgt, w, cfg, ns, 17).total;
        v[i] -= 2 * h;
        unflatten_params(scratch, v);
        double lm = joint_loss(model_forward(in, scratch, mask), tgt, w, cfg, ns, 17).total;
        double fd = (lp - lm) / (2 * h);
        double denom = std::max({std::abs(gflat[i]), std::abs(fd), 1e-5});
        worst = std::max(worst, std::abs(gflat[i] - fd) / denom);
    }
    nlohmann::json j;
    j["max_rel_error"] = worst;
    j["threshold"] = 1e-4;
    j["checked_params"] = (flat.size() + stride - 1) / stride;
    j["pass"] = worst < 1e-4;
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"panoctx: panoramic scene-understanding toolkit"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand
    uint64_t seed = 0;
    std::string out_path;
    bool quiet = false;
    int jobs = 1;
    app.add_option("--seed", seed, "Seed for all randomness");
    app.add_option("--out", out_path, "Output file (default: stdout)");
    app.add_flag("--quiet", quiet, "Suppress progress on stderr");
    app.add_option("--jobs", jobs, "Parallelism across independent scenes/files")
        ->check(CLI::PositiveNumber);

    // gen
    auto* gen = app.add_subcommand("gen", "Generate a synthetic scene");
    std::string gen_obj = "scene.obj";
    SceneSpec spec;
    gen->add_option("--obj", gen_obj, "Sidecar OBJ path for the layout");
    gen->add_option("--objects", spec.n_objects, "Object count");
    gen->add_option("--categories", spec.n_categories, "Category count");
    gen->add_flag("--l-shaped", spec.l_shaped, "L-shaped footprint");
    gen->add_flag("--violation", spec.plant_violation, "Plant one wall-straddling box");

    // render-depth
    auto* rd = app.add_subcommand("render-depth", "Ray-cast a scene to an EDEP panorama");
    std::string rd_scene, rd_out = "depth.edep";
    int rd_w = 256;
    rd->add_option("scene", rd_scene, "Scene JSON")->required();
    rd->add_option("--width", rd_w, "Panorama width (height = width/2)");
    rd->add_option("--depth-out", rd_out, "EDEP output path");

    // depth2pc
    auto* d2p = app.add_subcommand("depth2pc", "Dense depth to point cloud");
    std::string d2p_in;
    d2p->add_option("depth", d2p_in, "EDEP input")->required();

    // fib-sample
    auto* fib = app.add_subcommand("fib-sample", "Fibonacci-sampled point cloud");
    std::string fib_in;
    size_t fib_n = 50000;
    fib->add_option("depth", fib_in, "EDEP input")->required();
    fib->add_option("--n", fib_n, "Sample count");

    // eval-boxes
    auto* evb = app.add_subcommand("eval-boxes", "mAP of detections against ground truth");
    std::string evb_dets, evb_gts;
    double evb_iou = 0.15;
    evb->add_option("dets", evb_dets, "Detections JSON")->required();
    evb->add_option("gts", evb_gts, "Ground-truth JSON")->required();
    evb->add_option("--iou", evb_iou, "IoU match threshold");

    // eval-layout
    auto* evl = app.add_subcommand("eval-layout", "2D/3D IoU between layout meshes");
    std::string evl_pred, evl_gt;
    int evl_res = 128;
    evl->add_option("pred", evl_pred, "Predicted OBJ")->required();
    evl->add_option("gt", evl_gt, "Ground-truth OBJ")->required();
    evl->add_option("--res", evl_res, "Voxel resolution");

    // loss
    auto* loss = app.add_subcommand("loss", "Full loss report on a scene");
    std::string loss_scene, loss_ckpt;
    loss->add_option("scene", loss_scene, "Scene JSON")->required();
    loss->add_option("--ckpt", loss_ckpt, "PCTX checkpoint (default: seeded init)");

    // grad-check
    auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient check");
    bool gc_toy = false;
    int gc_stride = 13;
    gc->add_flag("--toy", gc_toy, "Desk-scale configuration (the only one)");
    gc->add_option("--stride", gc_stride, "Check every Nth parameter")
        ->check(CLI::PositiveNumber);

    // train
    auto* tr = app.add_subcommand("train", "Toy joint training");
    std::vector<std::string> tr_scenes;
    TrainConfig tcfg;
    int tr_gen = 0;
    std::string tr_save;
    bool tr_no_context = false, tr_no_physical = false;
    tr->add_option("scenes", tr_scenes, "Scene JSON files");
    tr->add_option("--gen", tr_gen, "Generate this many scenes instead");
    tr->add_option("--steps", tcfg.steps, "Gradient steps");
    tr->add_option("--lr", tcfg.lr, "Learning rate");
    tr->add_option("--mask", tcfg.mask_fraction, "Token mask fraction");
    tr->add_flag("--no-context", tr_no_context, "Skip the encoder (heads only)");
    tr->add_flag("--no-physical", tr_no_physical, "Drop the physical term");
    tr->add_option("--save", tr_save, "Write the trained PCTX checkpoint here");

    // ablate
    auto* ab = app.add_subcommand("ablate", "Toggle ablation table");
    int ab_train = 1, ab_eval = 1, ab_steps = 200;
    ab->add_option("--train-scenes", ab_train, "Generated training scenes");
    ab->add_option("--eval-scenes", ab_eval, "Generated held-out scenes");
    ab->add_option("--steps", ab_steps, "Steps per toggle combination");

    // icosphere
    auto* ico = app.add_subcommand("icosphere", "Write an icosphere OBJ");
    int ico_level = 3;
    ico->add_option("--level", ico_level, "Subdivision level");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) {
            SyntheticScene s = generate_scene(seed, spec);
            std::string json_path = out_path.empty() ? "scene.json" : out_path;
            write_scene_json(s, json_path, gen_obj);
            if (!quiet)
                std::cerr << "wrote " << json_path << " and " << gen_obj << "\n";
        } else if (*rd) {
            SyntheticScene s = read_scene_json(rd_scene);
            EquirectRaster depth = render_depth(s, rd_w, rd_w / 2);
            write_edep(depth, out_path.empty() ? rd_out : out_path);
        } else if (*d2p) {
            EquirectRaster depth = read_edep(d2p_in);
            PointCloud pc = depth_to_pointcloud(depth);
            std::ostringstream os;
            for (const auto& p : pc.points) {
                char line[96];
                std::snprintf(line, sizeof line, "%.9g %.9g %.9g\n", p.x(), p.y(), p.z());
                os << line;
            }
            emit(os.str(), out_path);
        } else if (*fib) {
            EquirectRaster depth = read_edep(fib_in);
            PointCloud pc = fibonacci_sample(depth, fib_n);
            std::string tmp = out_path.empty() ? "fib_points.txt" : out_path;
            write_pointcloud_txt(pc, tmp);
            if (!quiet) std::cerr << "wrote " << pc.size() << " points to " << tmp << "\n";
        } else if (*evb) {
            auto dets = read_boxes_json(evb_dets);
            auto gts = read_boxes_json(evb_gts);
            ApResult ap = average_precision(dets, gts, evb_iou);
            nlohmann::json j;
            j["map"] = ap.map;
            j["iou_threshold"] = evb_iou;
            for (const auto& [cat, v] : ap.per_category)
                j["per_category"][std::to_string(cat)] = v;
            emit(j.dump(2), out_path);
        } else if (*evl) {
            LayoutMesh pred = read_obj(evl_pred);
            LayoutMesh gt = read_obj(evl_gt);
            auto [iou2, iou3] = layout_iou(pred, gt, evl_res);
            nlohmann::json j;
            j["iou2d"] = iou2;
            j["iou3d"] = iou3;
            j["voxel_res"] = evl_res;
            emit(j.dump(2), out_path);
        } else if (*loss) {
            SyntheticScene s = read_scene_json(loss_scene);
            TrainConfig cfg;
            EncoderParams p = loss_ckpt.empty() ? EncoderParams::init(cfg.ctx, seed)
                                                : load_checkpoint(loss_ckpt);
            SceneData sd = scene_to_data(s, p.cfg, seed + 1);
            cfg.ctx = p.cfg;
            ModelOutputs mo = toy_forward(sd, p, cfg, MaskSpec::none(), nullptr);
            JointLossResult jr =
                joint_loss(mo, sd.targets, cfg.weights, p.cfg, cfg.chamfer_samples, 1234);
            emit(loss_report_json(jr, cfg.weights), out_path);
        } else if (*gc) {
            nlohmann::json j = run_grad_check(seed + 404, gc_stride);
            emit(j.dump(2), out_path);
            if (!j["pass"].get<bool>()) return 3;
        } else if (*tr) {
            tcfg.seed = seed;
            tcfg.use_context = !tr_no_context;
            tcfg.use_physical = !tr_no_physical;
            SceneSpec sp;
            auto scenes = load_or_generate(tr_scenes, tr_gen, seed, sp);
            TrainResult r = train(scenes, tcfg);
            emit(history_csv(r.history), out_path);
            if (!tr_save.empty()) save_checkpoint(r.params, tr_save);
        } else if (*ab) {
            SceneSpec sp;
            auto train_s = load_or_generate({}, ab_train, seed, sp);
            auto eval_s = load_or_generate({}, ab_eval, seed + 1000, sp);
            TrainConfig cfg;
            cfg.seed = seed;
            cfg.steps = ab_steps;
            std::vector<AblationToggles> combos = {{false, false, false},
                                                   {true, false, false},
                                                   {true, true, false},
                                                   {true, true, true}};
            emit(ablation_csv(ablate(train_s, eval_s, cfg, combos)), out_path);
        } else if (*ico) {
            LayoutMesh m = icosphere(ico_level);
            std::string path = out_path.empty() ? "icosphere.obj" : out_path;
            write_obj(m, path);
            if (!quiet)
                std::cerr << "level " << ico_level << ": " << m.vertex_count()
                          << " vertices\n";
        }
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
