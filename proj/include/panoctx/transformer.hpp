#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "panoctx/boxes.hpp"
#include "panoctx/errors.hpp"

namespace panoctx {

enum class Segment : uint8_t { image = 0, layout = 1, point = 2, object = 3 };

struct ContextConfig {
    int d = 288;
    int heads = 8;
    int layers = 6;
    int t_image = 512;   // grid cells, height x width with width = 2*height
    int t_layout = 642;
    int t_point = 1024;
    int t_object = 256;
    double mask_fraction = 0.1;
    int size_classes = 5;
    int heading_bins = 12;
    int categories = 5;
    int image_feat_dim = 512;
    int shape_dim = 512;

    int d_head() const { return d / heads; }
    int d_ff() const { return 4 * d; }
    int total_tokens() const { return t_image + t_layout + t_point + t_object; }
    int object_out_dim() const {
        return 3 + size_classes + 3 * size_classes + 2 * heading_bins + 1 + categories +
               shape_dim;
    }
    void validate() const;

    static ContextConfig paper_scale();
    static ContextConfig toy();        // d=32 H=4 L=2, tokens 128/42/256/16
    static ContextConfig grad_check(); // T=12, d=8, H=2, L=2
};

// out = x * w + b, with w of shape (in, out).
struct Linear {
    Eigen::MatrixXd w;
    Eigen::VectorXd b;
};

struct LayerParams {
    std::vector<Eigen::MatrixXd> wq, wk, wv;  // per head, d x d_head
    std::vector<Eigen::MatrixXd> wh;          // per head, d_head x d
    Eigen::VectorXd ln1_g, ln1_b, ln2_g, ln2_b;
    Linear ffn1, ffn2;
};

struct EncoderParams {
    ContextConfig cfg;
    std::vector<LayerParams> layers;
    Linear pos_image;    // 3 -> d (unit-sphere direction)
    Linear pos_layout;   // 3 -> d
    Linear pos_point;    // 3 -> d
    Linear pos_object;   // 6 -> d (x, y, z, l, h, w)
    Linear image_proj;   // image_feat_dim -> d
    Linear object_head;  // d -> object_out_dim
    Linear layout_head;  // d -> 3

    static EncoderParams init(const ContextConfig& cfg, uint64_t seed);
    EncoderParams zeros_like() const;
};

// Enumerates every parameter block in checkpoint order.
void for_each_param(EncoderParams& p, const std::function<void(Eigen::Map<Eigen::VectorXd>)>& fn);
std::vector<double> flatten_params(const EncoderParams& p);
void unflatten_params(EncoderParams& p, const std::vector<double>& flat);
size_t param_count(const EncoderParams& p);

// "PCTX" checkpoint: magic, config as u32 LE (mask_fraction in ppm),
// then all parameter blocks as f64 LE in flatten order.
void save_checkpoint(const EncoderParams& p, const std::string& path);
EncoderParams load_checkpoint(const std::string& path);

struct MaskSpec {
    enum class Mode { neg_inf, multiplicative };
    std::vector<int> masked;  // sorted, unique token indices
    Mode mode = Mode::neg_inf;

    static MaskSpec none() { return {}; }
    static MaskSpec draw(int total_tokens, double fraction, uint64_t seed,
                         Mode mode = Mode::neg_inf);
};

struct TokenSet {
    Eigen::MatrixXd embeddings;  // T x d
    std::vector<Segment> segments;
    Eigen::MatrixXd positions;   // T x 6, unused tail dims zero
};

struct AssembleInputs {
    Eigen::MatrixXd image_feats;   // t_image x image_feat_dim
    Eigen::MatrixXd layout_feats;  // t_layout x d
    Eigen::MatrixXd layout_pos;    // t_layout x 3
    Eigen::MatrixXd point_feats;   // t_point x d (may be 0 x 0 for raw points)
    Eigen::MatrixXd point_pos;     // t_point x 3
    Eigen::MatrixXd object_feats;  // t_object x d (may be 0 x 0)
    Eigen::MatrixXd object_pos;    // t_object x 6
};

// Unit-sphere directions of the image grid cells (row-major, height x 2*height).
Eigen::MatrixXd image_grid_directions(int t_image);

TokenSet assemble_tokens(const AssembleInputs& in, const EncoderParams& p);

// Gradients of a scalar loss w.r.t. assemble inputs, given d(embeddings).
struct AssembleGrads {
    Eigen::MatrixXd d_image_feats, d_layout_feats, d_point_feats, d_object_feats;
    Eigen::MatrixXd d_layout_pos, d_point_pos, d_object_pos;
};
AssembleGrads assemble_backward(const AssembleInputs& in, const EncoderParams& p,
                                const Eigen::MatrixXd& d_embeddings, EncoderParams& grads);

// Single-head scaled-dot attention with token masking over keys/values.
Eigen::MatrixXd masked_attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                                 const Eigen::MatrixXd& v, const MaskSpec& mask);

// Cached activations of one encoder layer, kept for the backward pass.
struct LayerCache {
    Eigen::MatrixXd z_in;
    Eigen::MatrixXd ln1_out, ln1_xhat;
    Eigen::VectorXd ln1_inv_sigma;
    std::vector<Eigen::MatrixXd> q, k, v, att, head_out;  // per head
    Eigen::MatrixXd z_mid;
    Eigen::MatrixXd ln2_out, ln2_xhat;
    Eigen::VectorXd ln2_inv_sigma;
    Eigen::MatrixXd ffn_pre, ffn_act;
};

struct ModelCache {
    AssembleInputs inputs;
    TokenSet tokens;
    std::vector<LayerCache> layers;
    std::vector<Eigen::MatrixXd> layer_outputs;
    MaskSpec mask;
};

struct ForwardResult {
    std::vector<Eigen::MatrixXd> layer_outputs;  // L matrices, T x d
    MaskSpec mask;
};

ForwardResult encode(const TokenSet& tokens, const EncoderParams& p, const MaskSpec& mask);
ForwardResult encode(const TokenSet& tokens, const EncoderParams& p, uint64_t mask_seed);

// One full encoder layer (pre-norm MHSA + FFN with residuals).
Eigen::MatrixXd encoder_layer(const Eigen::MatrixXd& z, const LayerParams& lp,
                              const ContextConfig& cfg, const MaskSpec& mask);

struct ObjectPredictions {
    Eigen::MatrixXd center_off;  // K x 3
    Eigen::MatrixXd size_cls;    // K x S (logits)
    Eigen::MatrixXd size_off;    // K x 3S
    Eigen::MatrixXd head_cls;    // K x B (logits)
    Eigen::MatrixXd head_off;    // K x B
    Eigen::VectorXd objectness;  // K (logits)
    Eigen::MatrixXd category;    // K x C (logits)
    Eigen::MatrixXd shape;       // K x shape_dim

    static ObjectPredictions zeros(const ContextConfig& cfg);
};

// Heads over a layer's token matrix; block offsets come from the config.
ObjectPredictions object_head(const Eigen::MatrixXd& layer_out, const EncoderParams& p);
Eigen::MatrixXd layout_head(const Eigen::MatrixXd& layer_out, const EncoderParams& p);

// Prediction-block gradients flattened back into the raw head output layout.
Eigen::MatrixXd object_grads_to_matrix(const ObjectPredictions& d, const ContextConfig& cfg);

struct ModelOutputs {
    std::vector<ObjectPredictions> objects;  // one per encoder layer
    Eigen::MatrixXd layout_offsets;          // t_layout x 3, final layer
    std::vector<Eigen::MatrixXd> layer_outputs;
    MaskSpec mask;
};

ModelOutputs model_forward(const AssembleInputs& in, const EncoderParams& p,
                           const MaskSpec& mask, ModelCache* cache = nullptr);

struct ModelGradInput {
    std::vector<ObjectPredictions> d_objects;  // per layer, shapes as ObjectPredictions
    Eigen::MatrixXd d_layout_offsets;          // t_layout x 3
};

// Analytic gradients for every parameter block; optionally also for inputs.
EncoderParams model_backward(const ModelCache& cache, const EncoderParams& p,
                             const ModelGradInput& grad_in,
                             AssembleGrads* input_grads = nullptr);

// Box target codec (bin centers documented in decode_box).
double heading_bin_center(int bin, int n_bins);

struct BoxTarget {
    Vec3 center_off;
    int size_cls = 0;
    Vec3 size_off;
    int head_cls = 0;
    double head_off = 0.0;
    int category = 0;
};

BoxTarget encode_box(const OrientedBox& gt, const Vec3& candidate_center,
                     const std::vector<Vec3>& size_templates, int heading_bins);
OrientedBox decode_box(const ObjectPredictions& pred, int k, const Vec3& candidate_center,
                       const std::vector<Vec3>& size_templates, int heading_bins);

}  // namespace panoctx
