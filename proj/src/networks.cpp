#include "psra/networks.hpp"

#include <cmath>
#include <map>
#include <mutex>

namespace psra::networks {

namespace {

constexpr std::size_t kPosFreqs = 4;   // per coordinate: 4 sin + 4 cos
constexpr std::size_t kTimeFreqs = 8;  // per time scalar: 8 sin + 8 cos
constexpr double kPi = 3.14159265358979323846;

// frozen internal seeds for the stub encoders; independent of every run seed
constexpr std::uint64_t kStubImageSeed = 0xF00DF00DULL;
constexpr std::uint64_t kStubTextSeed = 0xCAFEBABEULL;
constexpr std::size_t kSilhouetteBins = 16;

TracedValue linear(const TracedValue& x, ModelVars& vars, const std::string& prefix) {
    return add(matmul(x, vars(prefix + ".w")), vars(prefix + ".b"));
}

TracedValue affine_ln(const TracedValue& x, ModelVars& vars, const std::string& prefix) {
    return add(mul(layer_norm_last(x), vars(prefix + ".g")), vars(prefix + ".b"));
}

TracedValue mha(const TracedValue& x, ModelVars& vars, const std::string& prefix,
                const TransformerConfig& cfg, AttnCapture* capture) {
    const std::size_t hd = cfg.head_dim();
    TracedValue q = linear(x, vars, prefix + ".wq");
    TracedValue k = linear(x, vars, prefix + ".wk");
    TracedValue v = linear(x, vars, prefix + ".wv");
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<TracedValue> heads;
    heads.reserve(cfg.heads);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        TracedValue qh = slice(q, 1, h * hd, hd);
        TracedValue kh = slice(k, 1, h * hd, hd);
        TracedValue vh = slice(v, 1, h * hd, hd);
        TracedValue probs = softmax_last(scale(matmul(qh, transpose(kh)), inv_sqrt));
        if (capture) capture->push_back(probs.val);
        heads.push_back(matmul(probs, vh));
    }
    TracedValue o = cfg.heads == 1 ? heads[0] : concat(heads, 1);
    return linear(o, vars, prefix + ".wo");
}

TracedValue block(const TracedValue& x_in, ModelVars& vars, const std::string& prefix,
                  const TransformerConfig& cfg, AttnCapture* capture) {
    TracedValue x = add(x_in, mha(affine_ln(x_in, vars, prefix + ".ln1"), vars,
                                  prefix + ".attn", cfg, capture));
    TracedValue h = gelu(linear(affine_ln(x, vars, prefix + ".ln2"), vars, prefix + ".mlp.1"));
    return add(x, linear(h, vars, prefix + ".mlp.2"));
}

void init_lin(ParamStore& s, const std::string& prefix, std::size_t in, std::size_t out,
              Rng& rng) {
    s.add(prefix + ".w", init_normal(Shape{in, out}, 1.0 / std::sqrt(static_cast<double>(in)),
                                     rng));
    s.add(prefix + ".b", Array{Shape{out}, 0.0});
}

void init_ln(ParamStore& s, const std::string& prefix, std::size_t dim) {
    s.add(prefix + ".g", Array{Shape{dim}, 1.0});
    s.add(prefix + ".b", Array{Shape{dim}, 0.0});
}

void init_block(ParamStore& s, const std::string& prefix, const TransformerConfig& cfg,
                Rng& rng) {
    init_lin(s, prefix + ".attn.wq", cfg.dim, cfg.dim, rng);
    init_lin(s, prefix + ".attn.wk", cfg.dim, cfg.dim, rng);
    init_lin(s, prefix + ".attn.wv", cfg.dim, cfg.dim, rng);
    init_lin(s, prefix + ".attn.wo", cfg.dim, cfg.dim, rng);
    init_ln(s, prefix + ".ln1", cfg.dim);
    init_ln(s, prefix + ".ln2", cfg.dim);
    init_lin(s, prefix + ".mlp.1", cfg.dim, 4 * cfg.dim, rng);
    init_lin(s, prefix + ".mlp.2", 4 * cfg.dim, cfg.dim, rng);
}

Array time_freqs() {
    Array f{Shape{kTimeFreqs}};
    for (std::size_t i = 0; i < kTimeFreqs; ++i)
        f.data[i] = kPi * std::pow(2.0, static_cast<double>(i));
    return f;
}

// [1, 2*kTimeFreqs] sinusoidal features of a traced scalar
TracedValue time_features(const TracedValue& t) {
    static const Array freqs = time_freqs();
    TracedValue phase = mul(t, TracedValue{freqs});
    return reshape(concat({sin(phase), cos(phase)}, 0), Shape{1, 2 * kTimeFreqs});
}

}  // namespace

void TransformerConfig::validate() const {
    if (dim == 0 || heads == 0 || enc_layers == 0 || dec_layers == 0 || mft_layers == 0 ||
        k == 0 || g == 0)
        throw EngineError("TransformerConfig: all counts must be >= 1");
    if (dim % heads != 0)
        throw EngineError("TransformerConfig: dim " + std::to_string(dim) +
                          " not divisible by heads " + std::to_string(heads));
}

void init_mae_params(ParamStore& s, const TransformerConfig& cfg, Rng& rng) {
    cfg.validate();
    init_lin(s, "embed.mlp.1", 3, cfg.dim, rng);
    init_lin(s, "embed.mlp.2", cfg.dim, cfg.dim, rng);
    init_lin(s, "embed.pos", 6 * kPosFreqs, cfg.dim, rng);
    s.add("mae.cls", init_normal(Shape{1, cfg.dim}, 0.02, rng));
    s.add("mae.mask_token", init_normal(Shape{1, cfg.dim}, 0.02, rng));
    for (std::size_t i = 0; i < cfg.enc_layers; ++i)
        init_block(s, "mae.enc." + std::to_string(i), cfg, rng);
    init_ln(s, "mae.enc.ln", cfg.dim);
    init_lin(s, "mae.dec.pos", 6 * kPosFreqs, cfg.dim, rng);
    for (std::size_t i = 0; i < cfg.dec_layers; ++i)
        init_block(s, "mae.dec." + std::to_string(i), cfg, rng);
    init_ln(s, "mae.dec.ln", cfg.dim);
    init_lin(s, "mae.head", cfg.dim, cfg.k * 3, rng);
    init_lin(s, "csc.img", cfg.dim, cfg.dim_modal(), rng);
    init_lin(s, "csc.text", cfg.dim, cfg.dim_modal(), rng);
}

void init_mft_params(ParamStore& s, const TransformerConfig& cfg, Rng& rng) {
    cfg.validate();
    init_lin(s, "mft.in", 3, cfg.dim, rng);
    init_lin(s, "mft.time_t", 2 * kTimeFreqs, cfg.dim, rng);
    init_lin(s, "mft.time_r", 2 * kTimeFreqs, cfg.dim, rng);
    s.add("mft.cond.img.w",
          init_normal(Shape{cfg.dim_modal(), cfg.dim},
                      1.0 / std::sqrt(static_cast<double>(cfg.dim_modal())), rng));
    s.add("mft.cond.text.w",
          init_normal(Shape{cfg.dim_modal(), cfg.dim},
                      1.0 / std::sqrt(static_cast<double>(cfg.dim_modal())), rng));
    for (std::size_t i = 0; i < cfg.mft_layers; ++i)
        init_block(s, "mft.blk." + std::to_string(i), cfg, rng);
    init_ln(s, "mft.ln", cfg.dim);
    init_lin(s, "mft.vel", cfg.dim, 3, rng);
}

void init_finetune_params(ParamStore& s, const TransformerConfig& cfg, std::size_t n_classes,
                          Rng& rng) {
    init_lin(s, "ft.proj.1", 3, cfg.dim, rng);
    init_lin(s, "ft.proj.2", cfg.dim, cfg.dim, rng);
    init_lin(s, "ft.gate.1", cfg.dim, cfg.dim, rng);
    init_lin(s, "ft.gate.2", cfg.dim, cfg.dim, rng);
    s.add("ft.alpha", Array{Shape{}, 0.0});  // start exactly at the baseline
    s.add("ft.beta", Array{Shape{}, 0.0});
    init_lin(s, "ft.head", cfg.dim, n_classes, rng);
}

Array center_pos_features(const Array& centers) {
    const std::size_t g = centers.shape[0];
    Array out{Shape{g, 6 * kPosFreqs}};
    for (std::size_t i = 0; i < g; ++i)
        for (std::size_t d = 0; d < 3; ++d)
            for (std::size_t f = 0; f < kPosFreqs; ++f) {
                const double w = kPi * std::pow(2.0, static_cast<double>(f));
                const double v = centers.data[i * 3 + d] * w;
                out.data[i * 6 * kPosFreqs + d * 2 * kPosFreqs + 2 * f] = std::sin(v);
                out.data[i * 6 * kPosFreqs + d * 2 * kPosFreqs + 2 * f + 1] = std::cos(v);
            }
    return out;
}

namespace {

TracedValue embed_groups_impl(const Array& rel_flat, const Array& centers, std::size_t g,
                              std::size_t k, ModelVars& vars, const std::string& pos_prefix) {
    TracedValue h = gelu(linear(TracedValue{rel_flat}, vars, "embed.mlp.1"));
    h = linear(h, vars, "embed.mlp.2");
    const std::size_t dim = h.shape()[1];
    TracedValue pooled = max_axis(reshape(h, Shape{g, k, dim}), 1);  // [g, dim]
    TracedValue pos = linear(TracedValue{center_pos_features(centers)}, vars, pos_prefix);
    return add(pooled, pos);
}

}  // namespace

TracedValue embed_groups(const geometry::GroupedCloud& grouped, ModelVars& vars,
                         const TransformerConfig& cfg) {
    const std::size_t g = grouped.group_count(), k = grouped.group_size();
    if (k != cfg.k)
        throw EngineError("embed_groups: group size " + std::to_string(k) +
                          " does not match config k " + std::to_string(cfg.k));
    Array rel{Shape{g * k, 3}, grouped.groups.data};
    return embed_groups_impl(rel, grouped.centers, g, k, vars, "embed.pos");
}

TracedValue embed_groups_subset(const geometry::GroupedCloud& grouped,
                                const std::vector<std::size_t>& subset, ModelVars& vars,
                                const TransformerConfig& cfg) {
    const std::size_t k = grouped.group_size();
    if (k != cfg.k) throw EngineError("embed_groups_subset: group size mismatch");
    const std::size_t g = subset.size();
    Array rel{Shape{g * k, 3}};
    Array ctr{Shape{g, 3}};
    for (std::size_t i = 0; i < g; ++i) {
        std::copy_n(grouped.groups.data.data() + subset[i] * k * 3, k * 3,
                    rel.data.data() + i * k * 3);
        std::copy_n(grouped.centers.data.data() + subset[i] * 3, 3, ctr.data.data() + i * 3);
    }
    return embed_groups_impl(rel, ctr, g, k, vars, "embed.pos");
}

EncodeResult mae_encode(const TracedValue& visible_tokens, ModelVars& vars,
                        const TransformerConfig& cfg, AttnCapture* capture) {
    if (visible_tokens.val.rank() != 2 || visible_tokens.shape()[1] != cfg.dim)
        throw EngineError("mae_encode: expected [V,dim] tokens, got " +
                          shape_str(visible_tokens.shape()));
    if (visible_tokens.shape()[0] == 0)
        throw EngineError("mae_encode: empty visible set (mask ratio 1 misuse)");
    TracedValue x = concat({vars("mae.cls"), visible_tokens}, 0);
    for (std::size_t i = 0; i < cfg.enc_layers; ++i)
        x = block(x, vars, "mae.enc." + std::to_string(i), cfg, capture);
    x = affine_ln(x, vars, "mae.enc.ln");
    const std::size_t v = visible_tokens.shape()[0];
    EncodeResult out;
    out.cls = slice(x, 0, 0, 1);
    out.tokens = slice(x, 0, 1, v);
    out.pooled = reshape(mean_axis(out.tokens, 0), Shape{cfg.dim});
    return out;
}

TracedValue assemble_decoder_input(const TracedValue& encoded_visible,
                                   const geometry::MaskSpec& mask, const Array& centers,
                                   ModelVars& vars, const TransformerConfig& cfg) {
    const std::size_t g = mask.masked.size();
    auto visible = mask.visible_indices();
    if (encoded_visible.shape()[0] != visible.size())
        throw EngineError("assemble_decoder_input: visible token count mismatch");
    // rows: [visible features; mask token]; slot i picks its visible row or
    // the shared mask token row
    TracedValue bank = concat({encoded_visible, vars("mae.mask_token")}, 0);
    std::vector<std::size_t> pick(g, visible.size());
    for (std::size_t i = 0; i < visible.size(); ++i) pick[visible[i]] = i;
    TracedValue tokens = take_rows(bank, std::move(pick));
    TracedValue pos = linear(TracedValue{center_pos_features(centers)}, vars, "mae.dec.pos");
    (void)cfg;
    return add(tokens, pos);
}

TracedValue mae_decode(const TracedValue& full_tokens, const std::vector<std::size_t>& masked,
                       ModelVars& vars, const TransformerConfig& cfg) {
    if (full_tokens.val.rank() != 2 || full_tokens.shape()[1] != cfg.dim)
        throw EngineError("mae_decode: expected [G,dim] tokens, got " +
                          shape_str(full_tokens.shape()));
    TracedValue x = full_tokens;
    for (std::size_t i = 0; i < cfg.dec_layers; ++i)
        x = block(x, vars, "mae.dec." + std::to_string(i), cfg, nullptr);
    x = affine_ln(x, vars, "mae.dec.ln");
    TracedValue masked_feats = take_rows(x, masked);
    return linear(masked_feats, vars, "mae.head");  // [M, k*3]
}

Array stub_image_feature(const Array& points, std::size_t dim_modal) {
    // z-axis silhouette: 16x16 occupancy over the xy square [-1,1]^2
    const std::size_t b = kSilhouetteBins;
    Array occ{Shape{1, b * b}, 0.0};
    const std::size_t n = points.shape[0];
    for (std::size_t i = 0; i < n; ++i) {
        const double x = points.data[i * 3];
        const double y = points.data[i * 3 + 1];
        auto bx = static_cast<long>(std::floor((x + 1.0) * 0.5 * static_cast<double>(b)));
        auto by = static_cast<long>(std::floor((y + 1.0) * 0.5 * static_cast<double>(b)));
        bx = std::min<long>(std::max<long>(bx, 0), static_cast<long>(b) - 1);
        by = std::min<long>(std::max<long>(by, 0), static_cast<long>(b) - 1);
        occ.data[static_cast<std::size_t>(bx) * b + static_cast<std::size_t>(by)] = 1.0;
    }
    // fixed random projection, seeded once, never trained (cached per width)
    static std::mutex proj_mutex;
    static std::map<std::size_t, Array> proj_cache;
    const Array* proj = nullptr;
    {
        std::lock_guard<std::mutex> lock(proj_mutex);
        auto it = proj_cache.find(dim_modal);
        if (it == proj_cache.end()) {
            Rng rng(mix64(kStubImageSeed ^ dim_modal));
            it = proj_cache
                     .emplace(dim_modal,
                              init_normal(Shape{b * b, dim_modal},
                                          1.0 / std::sqrt(static_cast<double>(b * b)), rng))
                     .first;
        }
        proj = &it->second;
    }
    Array out{Shape{dim_modal}};
    for (std::size_t j = 0; j < dim_modal; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < b * b; ++i)
            s += occ.data[i] * proj->data[i * dim_modal + j];
        out.data[j] = s;
    }
    return out;
}

Array stub_text_feature(geometry::Family family, std::size_t dim_modal) {
    Rng rng(mix64(kStubTextSeed ^ dim_modal));
    Array table = init_normal(Shape{geometry::kFamilyCount, dim_modal}, 1.0, rng);
    Array out{Shape{dim_modal}};
    const auto row = static_cast<std::size_t>(family);
    std::copy_n(table.data.data() + row * dim_modal, dim_modal, out.data.data());
    return out;
}

TracedValue build_condition(const TracedValue& t, const TracedValue& r, const Array& f_img,
                            const Array& f_text, ModelVars& vars,
                            const TransformerConfig& cfg) {
    const double tv = t.item(), rv = r.item();
    if (rv < 0.0 || tv > 1.0 || tv < rv)
        throw EngineError("build_condition: need 0 <= r <= t <= 1, got t=" +
                          std::to_string(tv) + " r=" + std::to_string(rv));
    if (f_img.numel() != cfg.dim_modal() || f_text.numel() != cfg.dim_modal())
        throw EngineError("build_condition: modal feature length mismatch");
    TracedValue et = linear(time_features(t), vars, "mft.time_t");
    TracedValue er = linear(time_features(r), vars, "mft.time_r");
    TracedValue ci = matmul(TracedValue{Array{Shape{1, cfg.dim_modal()}, f_img.data}},
                            vars("mft.cond.img.w"));
    TracedValue ct = matmul(TracedValue{Array{Shape{1, cfg.dim_modal()}, f_text.data}},
                            vars("mft.cond.text.w"));
    return reshape(add(add(et, er), add(ci, ct)), Shape{cfg.dim});
}

MftResult mft_forward(const TracedValue& z_t, const TracedValue& condition, ModelVars& vars,
                      const TransformerConfig& cfg, AttnCapture* capture) {
    if (z_t.val.rank() != 2 || z_t.shape()[1] != 3)
        throw EngineError("mft_forward: expected [G,3] centers, got " + shape_str(z_t.shape()));
    if (condition.val.numel() != cfg.dim)
        throw EngineError("mft_forward: condition length " +
                          std::to_string(condition.val.numel()) + " != dim " +
                          std::to_string(cfg.dim));
    TracedValue x = linear(z_t, vars, "mft.in");
    for (std::size_t i = 0; i < cfg.mft_layers; ++i)
        x = block(add(x, condition), vars, "mft.blk." + std::to_string(i), cfg, capture);
    x = affine_ln(x, vars, "mft.ln");
    MftResult out;
    out.velocity = linear(x, vars, "mft.vel");
    out.pooled = reshape(mean_axis(x, 0), Shape{cfg.dim});
    return out;
}

TracedValue csc_loss(const TracedValue& f_cls, const Array& f_img, const Array& f_text,
                     ModelVars& vars) {
    TracedValue pi = linear(f_cls, vars, "csc.img");
    TracedValue pt = linear(f_cls, vars, "csc.text");
    TracedValue li = mean_all(huber(sub(pi, TracedValue{f_img})));
    TracedValue lt = mean_all(huber(sub(pt, TracedValue{f_text})));
    return add(li, lt);
}

}  // namespace psra::networks
