#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "panoctx/boxes.hpp"
#include "panoctx/mesh.hpp"

namespace panoctx {

struct SceneSpec {
    double room_min = 4.0, room_max = 8.0;        // footprint extents, meters
    double height_min = 2.4, height_max = 3.2;    // floor-to-ceiling
    double camera_height = 1.6;                   // above the floor
    int n_objects = 4;
    int n_categories = 5;
    double obj_min = 0.4, obj_max = 1.2;          // object edge lengths
    bool l_shaped = false;
    bool plant_violation = false;                 // one box straddling a wall
    std::vector<int> exempt_categories;           // e.g. doors/windows
};

struct SyntheticScene {
    LayoutMesh layout;            // camera at the origin, floor at y = -camera_height
    std::vector<OrientedBox> boxes;
    double camera_height = 1.6;
    uint64_t seed = 0;
};

SyntheticScene generate_scene(uint64_t seed, const SceneSpec& spec);

EquirectRaster render_depth(const SyntheticScene& scene, int width, int height);

// Deterministic stand-in latent for (category, size); unit length, 512 dims.
std::vector<double> pseudo_shape_code(int category, const Vec3& size, int dims = 512);

struct GroundTruth {
    GroundTruthSet boxes;     // with shape codes attached
    LayoutMesh layout;
};

GroundTruth scene_to_groundtruth(const SyntheticScene& scene);

// Scene JSON {seed, camera_height, layout_obj, boxes, codes} with sidecar OBJ.
void write_scene_json(const SyntheticScene& scene, const std::string& json_path,
                      const std::string& obj_path);
SyntheticScene read_scene_json(const std::string& json_path);

}  // namespace panoctx
