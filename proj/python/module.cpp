#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "panoctx/boxes.hpp"
#include "panoctx/geom.hpp"
#include "panoctx/losses.hpp"
#include "panoctx/mesh.hpp"
#include "panoctx/pointcloud.hpp"
#include "panoctx/raster_io.hpp"
#include "panoctx/scenegen.hpp"
#include "panoctx/toytrain.hpp"
#include "panoctx/transformer.hpp"

namespace py = pybind11;
using namespace panoctx;

namespace {

py::array_t<double> raster_to_array(const EquirectRaster& r) {
    py::array_t<double> a({r.height, r.width, r.channels});
    std::copy(r.data.begin(), r.data.end(), a.mutable_data());
    return a;
}

EquirectRaster raster_from_array(py::array_t<double, py::array::c_style | py::array::forcecast> a) {
    if (a.ndim() != 2 && a.ndim() != 3) throw DataError("raster array must be 2-d or 3-d");
    int h = static_cast<int>(a.shape(0));
    int w = static_cast<int>(a.shape(1));
    int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
    EquirectRaster r(w, h, c);
    std::copy(a.data(), a.data() + r.data.size(), r.data.begin());
    return r;
}

}  // namespace

PYBIND11_MODULE(_panoctx, m) {
    m.doc() = "Panoramic scene-understanding toolkit";

    py::register_exception<DataError>(m, "DataError");
    py::register_exception<DomainError>(m, "DomainError");
    py::register_exception<NumericalError>(m, "NumericalError");

    // ---- geometry ----------------------------------------------------------
    py::class_<SphericalDir>(m, "SphericalDir")
        .def(py::init([](double theta, double phi) { return SphericalDir{theta, phi}; }),
             py::arg("theta") = 0.0, py::arg("phi") = 0.0)
        .def_readwrite("theta", &SphericalDir::theta)
        .def_readwrite("phi", &SphericalDir::phi);

    m.def("pixel_to_dir", &pixel_to_dir, py::arg("u"), py::arg("v"), py::arg("width"),
          py::arg("height"));
    m.def(
        "dir_to_pixel",
        [](const SphericalDir& d, int w, int h) {
            double u, v;
            dir_to_pixel(d, w, h, u, v);
            return py::make_tuple(u, v);
        },
        py::arg("dir"), py::arg("width"), py::arg("height"));
    m.def("dir_to_unit_vector", &dir_to_unit_vector);
    m.def("unit_vector_to_dir", &unit_vector_to_dir);

    py::class_<EquirectRaster>(m, "EquirectRaster")
        .def(py::init<int, int, int, double>(), py::arg("width"), py::arg("height"),
             py::arg("channels") = 1, py::arg("fill") = 0.0)
        .def(py::init(&raster_from_array), py::arg("array"))
        .def_readonly("width", &EquirectRaster::width)
        .def_readonly("height", &EquirectRaster::height)
        .def_readonly("channels", &EquirectRaster::channels)
        .def("to_array", &raster_to_array);

    m.def("sample_bilinear", &sample_bilinear, py::arg("src"), py::arg("u"), py::arg("v"),
          py::arg("channel") = 0);
    m.def("write_edep", py::overload_cast<const EquirectRaster&, const std::string&>(&write_edep));
    m.def("read_edep", py::overload_cast<const std::string&>(&read_edep));

    // ---- meshes ------------------------------------------------------------
    py::class_<LayoutMesh>(m, "LayoutMesh")
        .def(py::init<>())
        .def_readwrite("vertices", &LayoutMesh::vertices)
        .def_readwrite("faces", &LayoutMesh::faces)
        .def("vertex_count", &LayoutMesh::vertex_count)
        .def("face_count", &LayoutMesh::face_count)
        .def("edges", &LayoutMesh::edges)
        .def("is_watertight", &LayoutMesh::is_watertight)
        .def("signed_volume", &LayoutMesh::signed_volume)
        .def("aabb", [](const LayoutMesh& mm) {
            Vec3 lo, hi;
            mm.aabb(lo, hi);
            return py::make_tuple(lo, hi);
        });

    m.def("icosphere", &icosphere, py::arg("level"));
    m.def("subdivide", &subdivide);
    m.def("deform", &deform, py::arg("mesh"), py::arg("offsets"));
    m.def("layout_iou", &layout_iou, py::arg("pred"), py::arg("gt"), py::arg("voxel_res") = 128);
    m.def("write_obj", &write_obj);
    m.def("read_obj", &read_obj);

    // ---- boxes -------------------------------------------------------------
    py::class_<OrientedBox>(m, "OrientedBox")
        .def(py::init<>())
        .def_readwrite("center", &OrientedBox::center)
        .def_readwrite("size", &OrientedBox::size)
        .def_readwrite("heading", &OrientedBox::heading)
        .def_readwrite("category", &OrientedBox::category)
        .def_readwrite("score", &OrientedBox::score)
        .def_readwrite("shape_code", &OrientedBox::shape_code)
        .def("volume", &OrientedBox::volume)
        .def("corners", &OrientedBox::corners);

    m.def("iou3d", &iou3d);

    py::class_<ApResult>(m, "ApResult")
        .def_readonly("map", &ApResult::map)
        .def_readonly("per_category", &ApResult::per_category);
    m.def("average_precision", &average_precision, py::arg("dets"), py::arg("gts"),
          py::arg("iou_thresh"));
    m.def("boxes_to_json", &boxes_to_json, py::arg("boxes"), py::arg("with_scores"));
    m.def("boxes_from_json", &boxes_from_json);

    // ---- point clouds ------------------------------------------------------
    py::class_<PointCloud>(m, "PointCloud")
        .def(py::init<>())
        .def_readwrite("points", &PointCloud::points)
        .def_readwrite("source_pixel", &PointCloud::source_pixel)
        .def("__len__", &PointCloud::size);

    m.def("depth_to_pointcloud", &depth_to_pointcloud);
    m.def("fibonacci_directions", &fibonacci_directions, py::arg("n"));
    m.def("fibonacci_sample", &fibonacci_sample, py::arg("depth"), py::arg("n_samples"));
    m.def("normalize_cloud", &normalize_cloud, py::arg("cloud"), py::arg("target_n"),
          py::arg("rng_seed"));

    // ---- synthetic scenes --------------------------------------------------
    py::class_<SceneSpec>(m, "SceneSpec")
        .def(py::init<>())
        .def_readwrite("room_min", &SceneSpec::room_min)
        .def_readwrite("room_max", &SceneSpec::room_max)
        .def_readwrite("height_min", &SceneSpec::height_min)
        .def_readwrite("height_max", &SceneSpec::height_max)
        .def_readwrite("camera_height", &SceneSpec::camera_height)
        .def_readwrite("n_objects", &SceneSpec::n_objects)
        .def_readwrite("n_categories", &SceneSpec::n_categories)
        .def_readwrite("obj_min", &SceneSpec::obj_min)
        .def_readwrite("obj_max", &SceneSpec::obj_max)
        .def_readwrite("l_shaped", &SceneSpec::l_shaped)
        .def_readwrite("plant_violation", &SceneSpec::plant_violation)
        .def_readwrite("exempt_categories", &SceneSpec::exempt_categories);

    py::class_<SyntheticScene>(m, "SyntheticScene")
        .def(py::init<>())
        .def_readwrite("layout", &SyntheticScene::layout)
        .def_readwrite("boxes", &SyntheticScene::boxes)
        .def_readwrite("camera_height", &SyntheticScene::camera_height)
        .def_readwrite("seed", &SyntheticScene::seed);

    m.def("generate_scene", &generate_scene, py::arg("seed"), py::arg("spec") = SceneSpec{});
    m.def("render_depth", &render_depth, py::arg("scene"), py::arg("width"), py::arg("height"));
    m.def("pseudo_shape_code", &pseudo_shape_code, py::arg("category"), py::arg("size"),
          py::arg("dims") = 512);
    m.def("write_scene_json", &write_scene_json);
    m.def("read_scene_json", &read_scene_json);

    // ---- context module ----------------------------------------------------
    py::class_<ContextConfig>(m, "ContextConfig")
        .def(py::init<>())
        .def_readwrite("d", &ContextConfig::d)
        .def_readwrite("heads", &ContextConfig::heads)
        .def_readwrite("layers", &ContextConfig::layers)
        .def_readwrite("t_image", &ContextConfig::t_image)
        .def_readwrite("t_layout", &ContextConfig::t_layout)
        .def_readwrite("t_point", &ContextConfig::t_point)
        .def_readwrite("t_object", &ContextConfig::t_object)
        .def_readwrite("mask_fraction", &ContextConfig::mask_fraction)
        .def_readwrite("size_classes", &ContextConfig::size_classes)
        .def_readwrite("heading_bins", &ContextConfig::heading_bins)
        .def_readwrite("categories", &ContextConfig::categories)
        .def_readwrite("image_feat_dim", &ContextConfig::image_feat_dim)
        .def_readwrite("shape_dim", &ContextConfig::shape_dim)
        .def("total_tokens", &ContextConfig::total_tokens)
        .def("validate", &ContextConfig::validate)
        .def_static("paper_scale", &ContextConfig::paper_scale)
        .def_static("toy", &ContextConfig::toy)
        .def_static("grad_check", &ContextConfig::grad_check);

    py::class_<EncoderParams>(m, "EncoderParams")
        .def_static("init", &EncoderParams::init, py::arg("cfg"), py::arg("seed"))
        .def_readonly("cfg", &EncoderParams::cfg);
    m.def("flatten_params", &flatten_params);
    m.def("param_count", &param_count);
    m.def("save_checkpoint", &save_checkpoint);
    m.def("load_checkpoint", &load_checkpoint);

    py::class_<MaskSpec> mask_spec(m, "MaskSpec");
    py::enum_<MaskSpec::Mode>(mask_spec, "Mode")
        .value("neg_inf", MaskSpec::Mode::neg_inf)
        .value("multiplicative", MaskSpec::Mode::multiplicative);
    mask_spec.def(py::init<>())
        .def_readwrite("masked", &MaskSpec::masked)
        .def_readwrite("mode", &MaskSpec::mode)
        .def_static("none", &MaskSpec::none)
        .def_static("draw", &MaskSpec::draw, py::arg("total_tokens"), py::arg("fraction"),
                    py::arg("seed"), py::arg("mode") = MaskSpec::Mode::neg_inf);

    m.def("masked_attention", &masked_attention, py::arg("q"), py::arg("k"), py::arg("v"),
          py::arg("mask"));
    m.def("image_grid_directions", &image_grid_directions, py::arg("t_image"));

    py::class_<AssembleInputs>(m, "AssembleInputs")
        .def(py::init<>())
        .def_readwrite("image_feats", &AssembleInputs::image_feats)
        .def_readwrite("layout_feats", &AssembleInputs::layout_feats)
        .def_readwrite("layout_pos", &AssembleInputs::layout_pos)
        .def_readwrite("point_feats", &AssembleInputs::point_feats)
        .def_readwrite("point_pos", &AssembleInputs::point_pos)
        .def_readwrite("object_feats", &AssembleInputs::object_feats)
        .def_readwrite("object_pos", &AssembleInputs::object_pos);

    py::class_<ObjectPredictions>(m, "ObjectPredictions")
        .def_readonly("center_off", &ObjectPredictions::center_off)
        .def_readonly("size_cls", &ObjectPredictions::size_cls)
        .def_readonly("size_off", &ObjectPredictions::size_off)
        .def_readonly("head_cls", &ObjectPredictions::head_cls)
        .def_readonly("head_off", &ObjectPredictions::head_off)
        .def_readonly("objectness", &ObjectPredictions::objectness)
        .def_readonly("category", &ObjectPredictions::category)
        .def_readonly("shape", &ObjectPredictions::shape);

    py::class_<ModelOutputs>(m, "ModelOutputs")
        .def_readonly("objects", &ModelOutputs::objects)
        .def_readonly("layout_offsets", &ModelOutputs::layout_offsets)
        .def_readonly("layer_outputs", &ModelOutputs::layer_outputs);

    m.def(
        "model_forward",
        [](const AssembleInputs& in, const EncoderParams& p, const MaskSpec& mask) {
            return model_forward(in, p, mask);
        },
        py::arg("inputs"), py::arg("params"), py::arg("mask") = MaskSpec::none());
    m.def("decode_box", &decode_box, py::arg("pred"), py::arg("k"),
          py::arg("candidate_center"), py::arg("size_templates"), py::arg("heading_bins"));
    m.def("heading_bin_center", &heading_bin_center, py::arg("bin"), py::arg("n_bins"));

    // ---- losses ------------------------------------------------------------
    py::class_<LossWeights>(m, "LossWeights")
        .def(py::init<>())
        .def_readwrite("lambda_p", &LossWeights::lambda_p)
        .def_readwrite("lambda_n", &LossWeights::lambda_n)
        .def_readwrite("lambda_e", &LossWeights::lambda_e)
        .def_readwrite("sigma_l", &LossWeights::sigma_l)
        .def_readwrite("sigma_o", &LossWeights::sigma_o)
        .def_readwrite("sigma_p", &LossWeights::sigma_p);

    py::class_<LayoutLossResult>(m, "LayoutLossResult")
        .def_readonly("total", &LayoutLossResult::total)
        .def_readonly("pos", &LayoutLossResult::pos)
        .def_readonly("norm", &LayoutLossResult::norm)
        .def_readonly("sharp", &LayoutLossResult::sharp)
        .def_readonly("d_vertices", &LayoutLossResult::d_vertices)
        .def_readonly("degenerate_warning", &LayoutLossResult::degenerate_warning);

    m.def("layout_loss", &layout_loss, py::arg("pred"), py::arg("gt"),
          py::arg("weights") = LossWeights{}, py::arg("n_samples") = 1024,
          py::arg("seed") = 0);
    m.def("physical_violation_loss", &physical_violation_loss, py::arg("boxes"),
          py::arg("layout"), py::arg("exempt_categories") = std::vector<int>{});
    m.def("smooth_l1", &smooth_l1, py::arg("x"), py::arg("beta") = 1.0);

    // ---- toy training ------------------------------------------------------
    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("steps", &TrainConfig::steps)
        .def_readwrite("lr", &TrainConfig::lr)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("weights", &TrainConfig::weights)
        .def_readwrite("ctx", &TrainConfig::ctx)
        .def_readwrite("mask_fraction", &TrainConfig::mask_fraction)
        .def_readwrite("use_context", &TrainConfig::use_context)
        .def_readwrite("use_physical", &TrainConfig::use_physical)
        .def_readwrite("chamfer_samples", &TrainConfig::chamfer_samples);

    py::class_<StepLog>(m, "StepLog")
        .def_readonly("step", &StepLog::step)
        .def_readonly("layout", &StepLog::layout)
        .def_readonly("object", &StepLog::object)
        .def_readonly("physic", &StepLog::physic)
        .def_readonly("total", &StepLog::total);

    py::class_<TrainResult>(m, "TrainResult")
        .def_readonly("params", &TrainResult::params)
        .def_readonly("history", &TrainResult::history);

    py::class_<EvalMetrics>(m, "EvalMetrics")
        .def_readonly("map", &EvalMetrics::map)
        .def_readonly("iou2d", &EvalMetrics::iou2d)
        .def_readonly("iou3d", &EvalMetrics::iou3d);

    m.def("train", &train, py::arg("scenes"), py::arg("config"));
    m.def("evaluate", &evaluate, py::arg("params"), py::arg("scenes"), py::arg("config"),
          py::arg("voxel_res") = 64);
    m.def("history_csv", &history_csv);
    m.def("default_size_templates", &default_size_templates, py::arg("size_classes"));
}
