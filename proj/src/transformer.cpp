#include "panoctx/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

namespace panoctx {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;
constexpr double kLnEps = 1e-5;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) +
           x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
}

// Row-wise layer norm; fills xhat and inv_sigma for the backward pass.
Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::VectorXd& g,
                           const Eigen::VectorXd& b, Eigen::MatrixXd& xhat,
                           Eigen::VectorXd& inv_sigma) {
    long t = x.rows(), d = x.cols();
    xhat.resize(t, d);
    inv_sigma.resize(t);
    Eigen::MatrixXd out(t, d);
    for (long i = 0; i < t; ++i) {
        double mu = x.row(i).mean();
        double var = (x.row(i).array() - mu).square().mean();
        double inv = 1.0 / std::sqrt(var + kLnEps);
        inv_sigma(i) = inv;
        xhat.row(i) = (x.row(i).array() - mu) * inv;
        out.row(i) = xhat.row(i).cwiseProduct(g.transpose()) + b.transpose();
    }
    return out;
}

Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& xhat,
                                    const Eigen::VectorXd& inv_sigma, const Eigen::VectorXd& g,
                                    Eigen::VectorXd& dg, Eigen::VectorXd& db) {
    long t = dy.rows(), d = dy.cols();
    Eigen::MatrixXd dx(t, d);
    for (long i = 0; i < t; ++i) {
        Eigen::RowVectorXd dyg = dy.row(i).cwiseProduct(g.transpose());
        double m1 = dyg.mean();
        double m2 = dyg.cwiseProduct(xhat.row(i)).mean();
        dx.row(i) = inv_sigma(i) * (dyg.array() - m1 - xhat.row(i).array() * m2);
    }
    dg += (dy.cwiseProduct(xhat)).colwise().sum();
    db += dy.colwise().sum();
    return dx;
}

// Row softmax of masked logits. In neg_inf mode masked key columns get zero
// weight; a row with no unmasked keys becomes all-zero. In multiplicative
// mode masked logits are zeroed before a regular softmax.
Eigen::MatrixXd masked_softmax(Eigen::MatrixXd logits, const MaskSpec& mask) {
    long t = logits.rows(), n = logits.cols();
    std::vector<bool> is_masked(n, false);
    for (int idx : mask.masked) {
        if (idx < 0 || idx >= n) throw DataError("mask index out of range");
        is_masked[idx] = true;
    }
    if (mask.mode == MaskSpec::Mode::multiplicative) {
        for (long j = 0; j < n; ++j)
            if (is_masked[j]) logits.col(j).setZero();
        Eigen::MatrixXd out(t, n);
        for (long i = 0; i < t; ++i) {
            double mx = logits.row(i).maxCoeff();
            Eigen::ArrayXd e = (logits.row(i).array() - mx).exp();
            out.row(i) = e / e.sum();
        }
        return out;
    }
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(t, n);
    bool all_masked = mask.masked.size() == static_cast<size_t>(n);
    if (all_masked) return out;
    for (long i = 0; i < t; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (long j = 0; j < n; ++j)
            if (!is_masked[j]) mx = std::max(mx, logits(i, j));
        double sum = 0.0;
        for (long j = 0; j < n; ++j) {
            if (is_masked[j]) continue;
            double e = std::exp(logits(i, j) - mx);
            out(i, j) = e;
            sum += e;
        }
        out.row(i) /= sum;
    }
    return out;
}

// d(logits) from d(softmax) for one already-computed attention matrix.
Eigen::MatrixXd softmax_backward(const Eigen::MatrixXd& att, const Eigen::MatrixXd& datt,
                                 const MaskSpec& mask) {
    long t = att.rows(), n = att.cols();
    Eigen::MatrixXd dlogits(t, n);
    for (long i = 0; i < t; ++i) {
        double dot = att.row(i).dot(datt.row(i));
        dlogits.row(i) = att.row(i).cwiseProduct(datt.row(i).array().operator-(dot).matrix());
    }
    if (mask.mode == MaskSpec::Mode::multiplicative) {
        for (int idx : mask.masked) dlogits.col(idx).setZero();
    }
    // neg_inf mode: att is already exactly zero on masked columns, so the
    // product above zeroes their gradient.
    return dlogits;
}

void init_linear(Linear& lin, long in, long out, std::mt19937_64& rng,
                 std::uniform_real_distribution<double>& u) {
    lin.w.resize(in, out);
    for (long i = 0; i < in; ++i)
        for (long j = 0; j < out; ++j) lin.w(i, j) = u(rng);
    lin.b = Eigen::VectorXd::Zero(out);
}

Eigen::MatrixXd apply_linear(const Linear& lin, const Eigen::MatrixXd& x) {
    return (x * lin.w).rowwise() + lin.b.transpose();
}

// dx for out = x*w + b; accumulates dw, db.
Eigen::MatrixXd linear_backward(const Linear& lin, const Eigen::MatrixXd& x,
                                const Eigen::MatrixXd& dout, Linear& grad) {
    grad.w += x.transpose() * dout;
    grad.b += dout.colwise().sum();
    return dout * lin.w.transpose();
}

struct BlockSpans {
    int image0, layout0, point0, object0, total;
};

BlockSpans spans(const ContextConfig& cfg) {
    BlockSpans s;
    s.image0 = 0;
    s.layout0 = cfg.t_image;
    s.point0 = s.layout0 + cfg.t_layout;
    s.object0 = s.point0 + cfg.t_point;
    s.total = s.object0 + cfg.t_object;
    return s;
}

}  // namespace

void ContextConfig::validate() const {
    if (d < 1 || heads < 1 || layers < 1) throw DomainError("bad transformer dimensions");
    if (d % heads != 0) throw DomainError("d must be divisible by the head count");
    if (t_image < 0 || t_layout < 0 || t_point < 0 || t_object < 0 || total_tokens() < 1)
        throw DomainError("bad token counts");
    if (!(mask_fraction >= 0.0 && mask_fraction < 1.0))
        throw DomainError("mask_fraction must be in [0, 1)");
    if (size_classes < 1 || heading_bins < 1 || categories < 1 || shape_dim < 1)
        throw DomainError("bad head dimensions");
    if (t_image > 0) {
        int gh = static_cast<int>(std::lround(std::sqrt(t_image / 2.0)));
        if (2 * gh * gh != t_image)
            throw DomainError("t_image must be 2*h*h for an h x 2h grid");
    }
}

ContextConfig ContextConfig::paper_scale() { return ContextConfig{}; }

ContextConfig ContextConfig::toy() {
    ContextConfig c;
    c.d = 32;
    c.heads = 4;
    c.layers = 2;
    c.t_image = 128;
    c.t_layout = 42;
    c.t_point = 256;
    c.t_object = 16;
    c.image_feat_dim = 32;
    c.shape_dim = 32;
    c.size_classes = 5;
    c.categories = 5;
    return c;
}

ContextConfig ContextConfig::grad_check() {
    ContextConfig c;
    c.d = 8;
    c.heads = 2;
    c.layers = 2;
    c.t_image = 2;
    c.t_layout = 4;
    c.t_point = 4;
    c.t_object = 2;
    c.image_feat_dim = 6;
    c.shape_dim = 4;
    c.size_classes = 3;
    c.heading_bins = 4;
    c.categories = 3;
    return c;
}

EncoderParams EncoderParams::init(const ContextConfig& cfg, uint64_t seed) {
    cfg.validate();
    EncoderParams p;
    p.cfg = cfg;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.02, 0.02);
    p.layers.resize(cfg.layers);
    for (auto& l : p.layers) {
        l.wq.resize(cfg.heads);
        l.wk.resize(cfg.heads);
        l.wv.resize(cfg.heads);
        l.wh.resize(cfg.heads);
        for (int h = 0; h < cfg.heads; ++h) {
            auto fill = [&](Eigen::MatrixXd& m, long r, long c) {
                m.resize(r, c);
                for (long i = 0; i < r; ++i)
                    for (long j = 0; j < c; ++j) m(i, j) = u(rng);
            };
            fill(l.wq[h], cfg.d, cfg.d_head());
            fill(l.wk[h], cfg.d, cfg.d_head());
            fill(l.wv[h], cfg.d, cfg.d_head());
            fill(l.wh[h], cfg.d_head(), cfg.d);
        }
        l.ln1_g = Eigen::VectorXd::Ones(cfg.d);
        l.ln1_b = Eigen::VectorXd::Zero(cfg.d);
        l.ln2_g = Eigen::VectorXd::Ones(cfg.d);
        l.ln2_b = Eigen::VectorXd::Zero(cfg.d);
        init_linear(l.ffn1, cfg.d, cfg.d_ff(), rng, u);
        init_linear(l.ffn2, cfg.d_ff(), cfg.d, rng, u);
    }
    init_linear(p.pos_image, 3, cfg.d, rng, u);
    init_linear(p.pos_layout, 3, cfg.d, rng, u);
    init_linear(p.pos_point, 3, cfg.d, rng, u);
    init_linear(p.pos_object, 6, cfg.d, rng, u);
    init_linear(p.image_proj, cfg.image_feat_dim, cfg.d, rng, u);
    init_linear(p.object_head, cfg.d, cfg.object_out_dim(), rng, u);
    init_linear(p.layout_head, cfg.d, 3, rng, u);
    return p;
}

EncoderParams EncoderParams::zeros_like() const {
    EncoderParams z = *this;
    for_each_param(z, [](Eigen::Map<Eigen::VectorXd> v) { v.setZero(); });
    return z;
}

void for_each_param(EncoderParams& p,
                    const std::function<void(Eigen::Map<Eigen::VectorXd>)>& fn) {
    auto mat = [&](Eigen::MatrixXd& m) { fn({m.data(), m.size()}); };
    auto vec = [&](Eigen::VectorXd& v) { fn({v.data(), v.size()}); };
    auto lin = [&](Linear& l) {
        mat(l.w);
        vec(l.b);
    };
    for (auto& l : p.layers) {
        for (auto& m : l.wq) mat(m);
        for (auto& m : l.wk) mat(m);
        for (auto& m : l.wv) mat(m);
        for (auto& m : l.wh) mat(m);
        vec(l.ln1_g);
        vec(l.ln1_b);
        vec(l.ln2_g);
        vec(l.ln2_b);
        lin(l.ffn1);
        lin(l.ffn2);
    }
    lin(p.pos_image);
    lin(p.pos_layout);
    lin(p.pos_point);
    lin(p.pos_object);
    lin(p.image_proj);
    lin(p.object_head);
    lin(p.layout_head);
}

std::vector<double> flatten_params(const EncoderParams& p) {
    std::vector<double> out;
    auto& mp = const_cast<EncoderParams&>(p);
    for_each_param(mp, [&](Eigen::Map<Eigen::VectorXd> v) {
        out.insert(out.end(), v.data(), v.data() + v.size());
    });
    return out;
}

void unflatten_params(EncoderParams& p, const std::vector<double>& flat) {
    size_t off = 0;
    for_each_param(p, [&](Eigen::Map<Eigen::VectorXd> v) {
        if (off + v.size() > flat.size()) throw DataError("parameter vector too short");
        std::copy(flat.begin() + off, flat.begin() + off + v.size(), v.data());
        off += v.size();
    });
    if (off != flat.size()) throw DataError("parameter vector length mismatch");
}

size_t param_count(const EncoderParams& p) {
    size_t n = 0;
    auto& mp = const_cast<EncoderParams&>(p);
    for_each_param(mp, [&](Eigen::Map<Eigen::VectorXd> v) { n += v.size(); });
    return n;
}

namespace {

void put_u32le(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw DataError("truncated checkpoint");
    return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const EncoderParams& p, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    os.write("PCTX", 4);
    const ContextConfig& c = p.cfg;
    for (uint32_t v : {static_cast<uint32_t>(c.d), static_cast<uint32_t>(c.heads),
                       static_cast<uint32_t>(c.layers), static_cast<uint32_t>(c.t_image),
                       static_cast<uint32_t>(c.t_layout), static_cast<uint32_t>(c.t_point),
                       static_cast<uint32_t>(c.t_object),
                       static_cast<uint32_t>(std::lround(c.mask_fraction * 1e6)),
                       static_cast<uint32_t>(c.size_classes),
                       static_cast<uint32_t>(c.heading_bins),
                       static_cast<uint32_t>(c.categories),
                       static_cast<uint32_t>(c.image_feat_dim),
                       static_cast<uint32_t>(c.shape_dim)})
        put_u32le(os, v);
    auto flat = flatten_params(p);
    for (double d : flat) {
        uint64_t bits;
        std::memcpy(&bits, &d, 8);
        put_u32le(os, static_cast<uint32_t>(bits));
        put_u32le(os, static_cast<uint32_t>(bits >> 32));
    }
}

EncoderParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "PCTX", 4) != 0) throw DataError("bad PCTX magic");
    ContextConfig c;
    c.d = static_cast<int>(get_u32le(is));
    c.heads = static_cast<int>(get_u32le(is));
    c.layers = static_cast<int>(get_u32le(is));
    c.t_image = static_cast<int>(get_u32le(is));
    c.t_layout = static_cast<int>(get_u32le(is));
    c.t_point = static_cast<int>(get_u32le(is));
    c.t_object = static_cast<int>(get_u32le(is));
    c.mask_fraction = get_u32le(is) / 1e6;
    c.size_classes = static_cast<int>(get_u32le(is));
    c.heading_bins = static_cast<int>(get_u32le(is));
    c.categories = static_cast<int>(get_u32le(is));
    c.image_feat_dim = static_cast<int>(get_u32le(is));
    c.shape_dim = static_cast<int>(get_u32le(is));
    EncoderParams p = EncoderParams::init(c, 0);
    std::vector<double> flat(param_count(p));
    for (double& d : flat) {
        uint64_t lo = get_u32le(is), hi = get_u32le(is);
        uint64_t bits = lo | (hi << 32);
        std::memcpy(&d, &bits, 8);
    }
    unflatten_params(p, flat);
    return p;
}

MaskSpec MaskSpec::draw(int total_tokens, double fraction, uint64_t seed, Mode mode) {
    if (!(fraction >= 0.0 && fraction < 1.0)) throw DomainError("mask fraction out of [0,1)");
    MaskSpec m;
    m.mode = mode;
    int count = static_cast<int>(std::floor(fraction * total_tokens));
    if (count == 0) return m;
    std::vector<int> idx(total_tokens);
    for (int i = 0; i < total_tokens; ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    for (int i = 0; i < count; ++i) {
        std::uniform_int_distribution<int> pick(i, total_tokens - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    m.masked.assign(idx.begin(), idx.begin() + count);
    std::sort(m.masked.begin(), m.masked.end());
    return m;
}

Eigen::MatrixXd image_grid_directions(int t_image) {
    int gh = static_cast<int>(std::lround(std::sqrt(t_image / 2.0)));
    int gw = 2 * gh;
    if (gh * gw != t_image) throw DomainError("t_image must form an h x 2h grid");
    Eigen::MatrixXd dirs(t_image, 3);
    for (int r = 0; r < gh; ++r) {
        for (int c = 0; c < gw; ++c) {
            double theta = 2.0 * kPi * ((c + 0.5) / gw) - kPi;
            double phi = kPi / 2 - kPi * ((r + 0.5) / gh);
            double cp = std::cos(phi);
            dirs.row(r * gw + c) = Vec3{cp * std::sin(theta), std::sin(phi),
                                        cp * std::cos(theta)};
        }
    }
    return dirs;
}

TokenSet assemble_tokens(const AssembleInputs& in, const EncoderParams& p) {
    const ContextConfig& cfg = p.cfg;
    auto s = spans(cfg);
    auto expect = [](const Eigen::MatrixXd& m, long r, long c, const char* what) {
        if (m.rows() != r || m.cols() != c)
            throw DataError(std::string("assemble_tokens: bad shape for ") + what);
    };
    expect(in.image_feats, cfg.t_image, cfg.image_feat_dim, "image_feats");
    expect(in.layout_feats, cfg.t_layout, cfg.d, "layout_feats");
    expect(in.layout_pos, cfg.t_layout, 3, "layout_pos");
    expect(in.point_pos, cfg.t_point, 3, "point_pos");
    if (in.point_feats.size() > 0) expect(in.point_feats, cfg.t_point, cfg.d, "point_feats");
    if (in.object_feats.size() > 0)
        expect(in.object_feats, cfg.t_object, cfg.d, "object_feats");
    expect(in.object_pos, cfg.t_object, 6, "object_pos");

    TokenSet t;
    t.embeddings.resize(s.total, cfg.d);
    t.positions = Eigen::MatrixXd::Zero(s.total, 6);
    t.segments.resize(s.total);

    Eigen::MatrixXd img_dirs = image_grid_directions(cfg.t_image);
    t.embeddings.middleRows(s.image0, cfg.t_image) =
        apply_linear(p.image_proj, in.image_feats) + apply_linear(p.pos_image, img_dirs);
    t.positions.block(s.image0, 0, cfg.t_image, 3) = img_dirs;

    t.embeddings.middleRows(s.layout0, cfg.t_layout) =
        in.layout_feats + apply_linear(p.pos_layout, in.layout_pos);
    t.positions.block(s.layout0, 0, cfg.t_layout, 3) = in.layout_pos;

    Eigen::MatrixXd point_block = apply_linear(p.pos_point, in.point_pos);
    if (in.point_feats.size() > 0) point_block += in.point_feats;
    t.embeddings.middleRows(s.point0, cfg.t_point) = point_block;
    t.positions.block(s.point0, 0, cfg.t_point, 3) = in.point_pos;

    Eigen::MatrixXd object_block = apply_linear(p.pos_object, in.object_pos);
    if (in.object_feats.size() > 0) object_block += in.object_feats;
    t.embeddings.middleRows(s.object0, cfg.t_object) = object_block;
    t.positions.block(s.object0, 0, cfg.t_object, 6) = in.object_pos;

    for (int i = 0; i < s.total; ++i) {
        Segment seg = Segment::object;
        if (i < s.layout0)
            seg = Segment::image;
        else if (i < s.point0)
            seg = Segment::layout;
        else if (i < s.object0)
            seg = Segment::point;
        t.segments[i] = seg;
    }
    if (!t.embeddings.allFinite()) throw NumericalError("non-finite token embeddings");
    return t;
}

AssembleGrads assemble_backward(const AssembleInputs& in, const EncoderParams& p,
                                const Eigen::MatrixXd& d_embeddings, EncoderParams& grads) {
    const ContextConfig& cfg = p.cfg;
    auto s = spans(cfg);
    if (d_embeddings.rows() != s.total || d_embeddings.cols() != cfg.d)
        throw DataError("assemble_backward: gradient shape mismatch");
    AssembleGrads g;

    Eigen::MatrixXd img_dirs = image_grid_directions(cfg.t_image);
    Eigen::MatrixXd d_img = d_embeddings.middleRows(s.image0, cfg.t_image);
    g.d_image_feats = linear_backward(p.image_proj, in.image_feats, d_img, grads.image_proj);
    linear_backward(p.pos_image, img_dirs, d_img, grads.pos_image);

    Eigen::MatrixXd d_lay = d_embeddings.middleRows(s.layout0, cfg.t_layout);
    g.d_layout_feats = d_lay;
    g.d_layout_pos = linear_backward(p.pos_layout, in.layout_pos, d_lay, grads.pos_layout);

    Eigen::MatrixXd d_pt = d_embeddings.middleRows(s.point0, cfg.t_point);
    if (in.point_feats.size() > 0) g.d_point_feats = d_pt;
    g.d_point_pos = linear_backward(p.pos_point, in.point_pos, d_pt, grads.pos_point);

    Eigen::MatrixXd d_obj = d_embeddings.middleRows(s.object0, cfg.t_object);
    if (in.object_feats.size() > 0) g.d_object_feats = d_obj;
    g.d_object_pos = linear_backward(p.pos_object, in.object_pos, d_obj, grads.pos_object);
    return g;
}

namespace {

// Sums in ascending value order, so the result is invariant to any
// permutation of the inputs (same multiset -> same rounding sequence).
double ordered_sum(std::vector<double>& vals) {
    std::sort(vals.begin(), vals.end());
    double s = 0.0;
    for (double v : vals) s += v;
    return s;
}

}  // namespace

Eigen::MatrixXd masked_attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                                 const Eigen::MatrixXd& v, const MaskSpec& mask) {
    if (q.cols() != k.cols() || k.rows() != v.rows())
        throw DataError("masked_attention shape mismatch");
    if (!q.allFinite() || !k.allFinite() || !v.allFinite())
        throw NumericalError("non-finite attention inputs");
    long t = q.rows(), n = k.rows(), dv = v.cols();
    std::vector<bool> is_masked(n, false);
    for (int idx : mask.masked) {
        if (idx < 0 || idx >= n) throw DataError("mask index out of range");
        is_masked[idx] = true;
    }
    bool mult = mask.mode == MaskSpec::Mode::multiplicative;
    double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));

    // All reductions run in value-sorted order, making the op exactly
    // equivariant under simultaneous permutation of queries and keys/values.
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(t, dv);
    std::vector<double> logits(n), expo(n), terms;
    for (long i = 0; i < t; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (long j = 0; j < n; ++j) {
            bool drop = is_masked[j] && !mult;
            logits[j] = drop ? 0.0 : (is_masked[j] ? 0.0 : q.row(i).dot(k.row(j)) * scale);
            if (!drop) mx = std::max(mx, logits[j]);
        }
        if (mx == -std::numeric_limits<double>::infinity()) continue;  // all keys masked
        terms.clear();
        for (long j = 0; j < n; ++j) {
            bool drop = is_masked[j] && !mult;
            expo[j] = drop ? 0.0 : std::exp(logits[j] - mx);
            if (!drop) terms.push_back(expo[j]);
        }
        double denom = ordered_sum(terms);
        for (long d = 0; d < dv; ++d) {
            terms.clear();
            for (long j = 0; j < n; ++j)
                if (expo[j] != 0.0) terms.push_back(expo[j] * v(j, d));
            out(i, d) = ordered_sum(terms) / denom;
        }
    }
    return out;
}

namespace {

Eigen::MatrixXd run_layer(const Eigen::MatrixXd& z, const LayerParams& lp,
                          const ContextConfig& cfg, const MaskSpec& mask, LayerCache* cache) {
    LayerCache local;
    LayerCache& c = cache ? *cache : local;
    c.z_in = z;
    Eigen::MatrixXd a = layer_norm(z, lp.ln1_g, lp.ln1_b, c.ln1_xhat, c.ln1_inv_sigma);
    c.ln1_out = a;
    double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_head()));
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(z.rows(), cfg.d);
    c.q.resize(cfg.heads);
    c.k.resize(cfg.heads);
    c.v.resize(cfg.heads);
    c.att.resize(cfg.heads);
    c.head_out.resize(cfg.heads);
    for (int h = 0; h < cfg.heads; ++h) {
        c.q[h] = a * lp.wq[h];
        c.k[h] = a * lp.wk[h];
        c.v[h] = a * lp.wv[h];
        c.att[h] = masked_softmax(c.q[h] * c.k[h].transpose() * scale, mask);
        c.head_out[h] = c.att[h] * c.v[h];
        m += c.head_out[h] * lp.wh[h];
    }
    c.z_mid = z + m;
    Eigen::MatrixXd b =
        layer_norm(c.z_mid, lp.ln2_g, lp.ln2_b, c.ln2_xhat, c.ln2_inv_sigma);
    c.ln2_out = b;
    c.ffn_pre = apply_linear(lp.ffn1, b);
    c.ffn_act = c.ffn_pre.unaryExpr([](double x) { return gelu(x); });
    Eigen::MatrixXd out = c.z_mid + apply_linear(lp.ffn2, c.ffn_act);
    if (!cache) {
        // Free the per-head attention maps eagerly at large scales.
        local = LayerCache{};
    }
    return out;
}

Eigen::MatrixXd layer_backward(const Eigen::MatrixXd& dout, const LayerParams& lp,
                               LayerParams& grad, const ContextConfig& cfg,
                               const MaskSpec& mask, const LayerCache& c) {
    double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_head()));
    // FFN with residual.
    Eigen::MatrixXd dz_mid = dout;
    Eigen::MatrixXd dact = linear_backward(lp.ffn2, c.ffn_act, dout, grad.ffn2);
    Eigen::MatrixXd dpre =
        dact.cwiseProduct(c.ffn_pre.unaryExpr([](double x) { return gelu_grad(x); }));
    Eigen::MatrixXd db = linear_backward(lp.ffn1, c.ln2_out, dpre, grad.ffn1);
    dz_mid += layer_norm_backward(db, c.ln2_xhat, c.ln2_inv_sigma, lp.ln2_g, grad.ln2_g,
                                  grad.ln2_b);
    // MHSA with residual.
    Eigen::MatrixXd dz = dz_mid;
    Eigen::MatrixXd da = Eigen::MatrixXd::Zero(c.z_in.rows(), cfg.d);
    for (int h = 0; h < cfg.heads; ++h) {
        grad.wh[h] += c.head_out[h].transpose() * dz_mid;
        Eigen::MatrixXd dhead = dz_mid * lp.wh[h].transpose();
        Eigen::MatrixXd datt = dhead * c.v[h].transpose();
        Eigen::MatrixXd dv = c.att[h].transpose() * dhead;
        Eigen::MatrixXd dlogits = softmax_backward(c.att[h], datt, mask);
        Eigen::MatrixXd dq = dlogits * c.k[h] * scale;
        Eigen::MatrixXd dk = dlogits.transpose() * c.q[h] * scale;
        grad.wq[h] += c.ln1_out.transpose() * dq;
        grad.wk[h] += c.ln1_out.transpose() * dk;
        grad.wv[h] += c.ln1_out.transpose() * dv;
        da += dq * lp.wq[h].transpose() + dk * lp.wk[h].transpose() +
              dv * lp.wv[h].transpose();
    }
    dz += layer_norm_backward(da, c.ln1_xhat, c.ln1_inv_sigma, lp.ln1_g, grad.ln1_g,
                              grad.ln1_b);
    return dz;
}

}  // namespace

Eigen::MatrixXd encoder_layer(const Eigen::MatrixXd& z, const LayerParams& lp,
                              const ContextConfig& cfg, const MaskSpec& mask) {
    return run_layer(z, lp, cfg, mask, nullptr);
}

ForwardResult encode(const TokenSet& tokens, const EncoderParams& p, const MaskSpec& mask) {
    ForwardResult r;
    r.mask = mask;
    Eigen::MatrixXd z = tokens.embeddings;
    for (const auto& lp : p.layers) {
        z = run_layer(z, lp, p.cfg, mask, nullptr);
        r.layer_outputs.push_back(z);
    }
    return r;
}

ForwardResult encode(const TokenSet& tokens, const EncoderParams& p, uint64_t mask_seed) {
    MaskSpec mask = MaskSpec::draw(static_cast<int>(tokens.embeddings.rows()),
                                   p.cfg.mask_fraction, mask_seed);
    return encode(tokens, p, mask);
}

ObjectPredictions ObjectPredictions::zeros(const ContextConfig& cfg) {
    ObjectPredictions o;
    int k = cfg.t_object;
    o.center_off = Eigen::MatrixXd::Zero(k, 3);
    o.size_cls = Eigen::MatrixXd::Zero(k, cfg.size_classes);
    o.size_off = Eigen::MatrixXd::Zero(k, 3 * cfg.size_classes);
    o.head_cls = Eigen::MatrixXd::Zero(k, cfg.heading_bins);
    o.head_off = Eigen::MatrixXd::Zero(k, cfg.heading_bins);
    o.objectness = Eigen::VectorXd::Zero(k);
    o.category = Eigen::MatrixXd::Zero(k, cfg.categories);
    o.shape = Eigen::MatrixXd::Zero(k, cfg.shape_dim);
    return o;
}

namespace {

ObjectPredictions split_object_out(const Eigen::MatrixXd& raw, const ContextConfig& cfg) {
    ObjectPredictions o;
    int S = cfg.size_classes, B = cfg.heading_bins, C = cfg.categories;
    long col = 0;
    o.center_off = raw.middleCols(col, 3);
    col += 3;
    o.size_cls = raw.middleCols(col, S);
    col += S;
    o.size_off = raw.middleCols(col, 3 * S);
    col += 3 * S;
    o.head_cls = raw.middleCols(col, B);
    col += B;
    o.head_off = raw.middleCols(col, B);
    col += B;
    o.objectness = raw.col(col);
    col += 1;
    o.category = raw.middleCols(col, C);
    col += C;
    o.shape = raw.middleCols(col, cfg.shape_dim);
    return o;
}

Eigen::MatrixXd join_object_grads(const ObjectPredictions& d, const ContextConfig& cfg) {
    Eigen::MatrixXd raw(cfg.t_object, cfg.object_out_dim());
    int S = cfg.size_classes, B = cfg.heading_bins, C = cfg.categories;
    long col = 0;
    raw.middleCols(col, 3) = d.center_off;
    col += 3;
    raw.middleCols(col, S) = d.size_cls;
    col += S;
    raw.middleCols(col, 3 * S) = d.size_off;
    col += 3 * S;
    raw.middleCols(col, B) = d.head_cls;
    col += B;
    raw.middleCols(col, B) = d.head_off;
    col += B;
    raw.col(col) = d.objectness;
    col += 1;
    raw.middleCols(col, C) = d.category;
    col += C;
    raw.middleCols(col, cfg.shape_dim) = d.shape;
    return raw;
}

}  // namespace

Eigen::MatrixXd object_grads_to_matrix(const ObjectPredictions& d, const ContextConfig& cfg) {
    return join_object_grads(d, cfg);
}

ObjectPredictions object_head(const Eigen::MatrixXd& layer_out, const EncoderParams& p) {
    auto s = spans(p.cfg);
    Eigen::MatrixXd obj_tokens = layer_out.middleRows(s.object0, p.cfg.t_object);
    return split_object_out(apply_linear(p.object_head, obj_tokens), p.cfg);
}

Eigen::MatrixXd layout_head(const Eigen::MatrixXd& layer_out, const EncoderParams& p) {
    auto s = spans(p.cfg);
    Eigen::MatrixXd lay_tokens = layer_out.middleRows(s.layout0, p.cfg.t_layout);
    return apply_linear(p.layout_head, lay_tokens);
}

ModelOutputs model_forward(const AssembleInputs& in, const EncoderParams& p,
                           const MaskSpec& mask, ModelCache* cache) {
    TokenSet tokens = assemble_tokens(in, p);
    ModelOutputs out;
    out.mask = mask;
    Eigen::MatrixXd z = tokens.embeddings;
    if (cache) {
        cache->inputs = in;
        cache->tokens = tokens;
        cache->mask = mask;
        cache->layers.assign(p.cfg.layers, {});
        cache->layer_outputs.clear();
    }
    for (int l = 0; l < p.cfg.layers; ++l) {
        z = run_layer(z, p.layers[l], p.cfg, mask, cache ? &cache->layers[l] : nullptr);
        out.layer_outputs.push_back(z);
        if (cache) cache->layer_outputs.push_back(z);
        out.objects.push_back(object_head(z, p));
    }
    out.layout_offsets = layout_head(z, p);
    if (!z.allFinite()) throw NumericalError("non-finite encoder outputs");
    return out;
}

EncoderParams model_backward(const ModelCache& cache, const EncoderParams& p,
                             const ModelGradInput& grad_in, AssembleGrads* input_grads) {
    const ContextConfig& cfg = p.cfg;
    auto s = spans(cfg);
    if (static_cast<int>(grad_in.d_objects.size()) != cfg.layers)
        throw DataError("model_backward: need one object gradient per layer");
    EncoderParams grads = p.zeros_like();
    grads.cfg = cfg;

    Eigen::MatrixXd dz = Eigen::MatrixXd::Zero(s.total, cfg.d);
    for (int l = cfg.layers - 1; l >= 0; --l) {
        // Inject this layer's head gradients at its output.
        Eigen::MatrixXd raw_grad = join_object_grads(grad_in.d_objects[l], cfg);
        Eigen::MatrixXd obj_tokens =
            cache.layer_outputs[l].middleRows(s.object0, cfg.t_object);
        Eigen::MatrixXd d_obj_tokens =
            linear_backward(p.object_head, obj_tokens, raw_grad, grads.object_head);
        dz.middleRows(s.object0, cfg.t_object) += d_obj_tokens;
        if (l == cfg.layers - 1 && grad_in.d_layout_offsets.size() > 0) {
            Eigen::MatrixXd lay_tokens =
                cache.layer_outputs[l].middleRows(s.layout0, cfg.t_layout);
            Eigen::MatrixXd d_lay = linear_backward(p.layout_head, lay_tokens,
                                                    grad_in.d_layout_offsets,
                                                    grads.layout_head);
            dz.middleRows(s.layout0, cfg.t_layout) += d_lay;
        }
        dz = layer_backward(dz, p.layers[l], grads.layers[l], cfg, cache.mask,
                            cache.layers[l]);
    }
    AssembleGrads ag = assemble_backward(cache.inputs, p, dz, grads);
    if (input_grads) *input_grads = std::move(ag);
    return grads;
}

double heading_bin_center(int bin, int n_bins) {
    return -kPi + (bin + 0.5) * 2.0 * kPi / n_bins;
}

BoxTarget encode_box(const OrientedBox& gt, const Vec3& candidate_center,
                     const std::vector<Vec3>& size_templates, int heading_bins) {
    if (size_templates.empty()) throw DomainError("need at least one size template");
    BoxTarget t;
    t.center_off = gt.center - candidate_center;
    t.category = gt.category;
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < size_templates.size(); ++i) {
        double d = (gt.size - size_templates[i]).squaredNorm();
        if (d < best) {
            best = d;
            t.size_cls = static_cast<int>(i);
        }
    }
    t.size_off = gt.size - size_templates[t.size_cls];
    double width = 2.0 * kPi / heading_bins;
    double yaw = std::remainder(gt.heading, 2.0 * kPi);
    if (yaw >= kPi) yaw -= 2.0 * kPi;
    t.head_cls = std::min(static_cast<int>((yaw + kPi) / width), heading_bins - 1);
    t.head_off = std::remainder(gt.heading - heading_bin_center(t.head_cls, heading_bins),
                                2.0 * kPi);
    return t;
}

OrientedBox decode_box(const ObjectPredictions& pred, int k, const Vec3& candidate_center,
                       const std::vector<Vec3>& size_templates, int heading_bins) {
    OrientedBox b;
    b.center = candidate_center + Vec3(pred.center_off.row(k));
    int s_cls;
    pred.size_cls.row(k).maxCoeff(&s_cls);
    if (s_cls >= static_cast<int>(size_templates.size()))
        throw DataError("size class out of template range");
    b.size = size_templates[s_cls] + Vec3(pred.size_off.row(k).segment(3 * s_cls, 3));
    int h_cls;
    pred.head_cls.row(k).maxCoeff(&h_cls);
    double yaw = heading_bin_center(h_cls, heading_bins) + pred.head_off(k, h_cls);
    b.heading = std::remainder(yaw, 2.0 * kPi);
    if (b.heading >= kPi) b.heading -= 2.0 * kPi;
    int cat;
    pred.category.row(k).maxCoeff(&cat);
    b.category = cat;
    b.score = 1.0 / (1.0 + std::exp(-pred.objectness(k)));
    b.shape_code.assign(pred.shape.row(k).data(),
                        pred.shape.row(k).data() + pred.shape.cols());
    return b;
}

}  // namespace panoctx
