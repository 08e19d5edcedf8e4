#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "panoctx/losses.hpp"
#include "panoctx/scenegen.hpp"
#include "panoctx/transformer.hpp"

namespace panoctx {

struct TrainConfig {
    int steps = 2000;
    double lr = 0.05;
    uint64_t seed = 0;
    LossWeights weights;
    ContextConfig ctx = ContextConfig::toy();
    double mask_fraction = 0.0;
    bool use_context = true;   // off: heads applied directly to the tokens
    bool use_physical = true;  // off: sigma_p forced to zero
    int chamfer_samples = 256;

    // Softer layout regularizers than the general defaults: the 42-vertex toy
    // sphere cannot drive the normal/sharpness floors low enough otherwise.
    TrainConfig() {
        weights.lambda_n = 0.1;
        weights.lambda_e = 0.02;
    }

    void validate() const;  // steps >= 1, lr >= 0, weights/ctx valid
};

// Tokenization of one scene: rendered depth pooled into the image grid,
// icosphere layout tokens, Fibonacci point tokens, and jittered ground-truth
// centers as a proposal stand-in for the object tokens.
struct SceneData {
    AssembleInputs inputs;
    SceneTargets targets;
};
SceneData scene_to_data(const SyntheticScene& scene, const ContextConfig& cfg,
                        uint64_t seed);

// Icosphere (scaled to radius 2) whose vertex count matches t_layout.
LayoutMesh base_layout_for(int t_layout);
std::vector<Vec3> default_size_templates(int size_classes);

struct StepLog {
    int step = 0;
    double layout = 0, object = 0, physic = 0, total = 0;
};

struct TrainResult {
    EncoderParams params;
    std::vector<StepLog> history;
};

TrainResult train(const std::vector<SyntheticScene>& scenes, const TrainConfig& cfg);

// Forward pass honoring use_context; exposed so evaluation, the CLI, and the
// trainer agree on the non-context baseline.
ModelOutputs toy_forward(const SceneData& data, const EncoderParams& p,
                         const TrainConfig& cfg, const MaskSpec& mask,
                         ModelCache* cache = nullptr);

struct EvalMetrics {
    double map = 0.0;    // mAP at IoU 0.15
    double iou2d = 0.0;  // mean layout footprint IoU
    double iou3d = 0.0;  // mean layout volumetric IoU
};
EvalMetrics evaluate(const EncoderParams& p, const std::vector<SyntheticScene>& scenes,
                     const TrainConfig& cfg, int voxel_res = 64);

struct AblationToggles {
    bool context_module = true;
    bool physical_loss = true;
    bool token_masking = true;
};

struct AblationRow {
    AblationToggles toggles;
    EvalMetrics metrics;
};

std::vector<AblationRow> ablate(const std::vector<SyntheticScene>& train_scenes,
                                const std::vector<SyntheticScene>& eval_scenes,
                                const TrainConfig& base,
                                const std::vector<AblationToggles>& combos);

// CSV: step,L_layout,L_object,L_physic,total
std::string history_csv(const std::vector<StepLog>& history);
// CSV: context_module,physical_loss,token_masking,mAP@0.15,layout_iou_2d,layout_iou_3d
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace panoctx
