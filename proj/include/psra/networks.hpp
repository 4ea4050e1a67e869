#pragma once

#include <optional>
#include <vector>

#include "psra/geometry.hpp"
#include "psra/params.hpp"

namespace psra::networks {

struct TransformerConfig {
    std::size_t dim = 64;
    std::size_t heads = 4;
    std::size_t enc_layers = 3;
    std::size_t dec_layers = 2;
    std::size_t mft_layers = 3;
    std::size_t k = 16;  // points per group
    std::size_t g = 16;  // groups

    std::size_t dim_modal() const { return dim; }
    std::size_t head_dim() const { return dim / heads; }
    void validate() const;
};

// parameter construction (names are dotted paths, see README)
void init_mae_params(ParamStore& store, const TransformerConfig& cfg, Rng& rng);
void init_mft_params(ParamStore& store, const TransformerConfig& cfg, Rng& rng);
void init_finetune_params(ParamStore& store, const TransformerConfig& cfg,
                          std::size_t n_classes, Rng& rng);

// sinusoidal features of the group centers (plain data, no trace)
Array center_pos_features(const Array& centers);

// One dim-length token per group: shared pointwise MLP over the K relative
// points, max-pooled, plus the positional encoding of the absolute center.
TracedValue embed_groups(const geometry::GroupedCloud& grouped, ModelVars& vars,
                         const TransformerConfig& cfg);
// variant for a subset of groups (by index), used for the visible set
TracedValue embed_groups_subset(const geometry::GroupedCloud& grouped,
                                const std::vector<std::size_t>& subset, ModelVars& vars,
                                const TransformerConfig& cfg);

// captured attention rows (one [S,S] matrix per layer/head) for tests
using AttnCapture = std::vector<Array>;

// one multi-head self-attention sublayer (exposed for the closed-form and
// row-normalization checks)
TracedValue mha_forward(const TracedValue& x, ModelVars& vars, const std::string& prefix,
                        const TransformerConfig& cfg, AttnCapture* capture = nullptr);

struct EncodeResult {
    TracedValue tokens;  // [V, dim] per-token features (cls removed)
    TracedValue cls;     // [1, dim]
    TracedValue pooled;  // [dim] mean over non-cls tokens
};

// Pre-norm transformer encoder over [cls; visible tokens]. Rejects an empty
// visible set.
EncodeResult mae_encode(const TracedValue& visible_tokens, ModelVars& vars,
                        const TransformerConfig& cfg, AttnCapture* capture = nullptr);

// Decoder over the full group sequence (mask tokens already inserted),
// followed by the reconstruction head on the masked rows:
// returns [M, k*3] relative offsets, one row per masked group.
TracedValue mae_decode(const TracedValue& full_tokens,
                       const std::vector<std::size_t>& masked, ModelVars& vars,
                       const TransformerConfig& cfg);

// Assembles the decoder input: encoder outputs at visible slots, the learned
// mask token at masked slots, decoder positional encoding everywhere.
TracedValue assemble_decoder_input(const TracedValue& encoded_visible,
                                   const geometry::MaskSpec& mask, const Array& centers,
                                   ModelVars& vars, const TransformerConfig& cfg);

// Frozen stub modality encoders (never trained, fixed internal seeds).
Array stub_image_feature(const Array& points, std::size_t dim_modal);
Array stub_text_feature(geometry::Family family, std::size_t dim_modal);

// c = e_t(t) + e_r(r) + W_img f_img + W_text f_text, shape [dim].
// Requires 0 <= r <= t <= 1 (by value); rejects t < r.
TracedValue build_condition(const TracedValue& t, const TracedValue& r, const Array& f_img,
                            const Array& f_text, ModelVars& vars,
                            const TransformerConfig& cfg);

struct MftResult {
    TracedValue velocity;  // [G, 3]
    TracedValue pooled;    // [dim] mean over final-layer tokens
};

// MeanFlow transformer: input-projected noisy centers, condition added to
// every token at every block input, velocity head + pooled feature readout.
MftResult mft_forward(const TracedValue& z_t, const TracedValue& condition, ModelVars& vars,
                      const TransformerConfig& cfg, AttnCapture* capture = nullptr);

// SmoothL1 alignment of the projected cls feature to the frozen modal
// features; transition point 1, mean over elements.
TracedValue csc_loss(const TracedValue& f_cls, const Array& f_img, const Array& f_text,
                     ModelVars& vars);

}  // namespace psra::networks
