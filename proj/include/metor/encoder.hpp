#pragma once

#include "metor/config.hpp"
#include "metor/data.hpp"
#include "metor/nn.hpp"

// Contextual refinement encoding: patchified frames run through a small ViT
// alongside learnable CLS / object-context / relationship-context tokens;
// the context embeddings then refine the object queries (attention with a
// residual) and condition the prompt sequences that produce per-category
// text features.

namespace metor {

template <typename T>
Tensor<T> cast_frames(const Tensor<float>& frames) {
    if constexpr (std::is_same_v<T, float>) {
        return frames;
    } else {
        std::vector<T> data(frames.data().begin(), frames.data().end());
        return Tensor<T>(frames.shape(), std::move(data));
    }
}

template <typename T>
struct EncoderOutput {
    Tensor<T> h_cls;    // (T, d)
    Tensor<T> h_patch;  // (T, Np, d)
    Tensor<T> c_obj;    // (T, Nc, d), empty when context tokens are disabled
    Tensor<T> c_rel;    // (T, Nc, d)
    bool has_context = false;
};

// Non-overlapping patches, flattened row-major, linearly projected, plus a
// fixed 2-D sinusoidal position code.
template <typename T>
class PatchEmbed {
public:
    PatchEmbed() = default;
    PatchEmbed(nn::ParamRegistry<T>& reg, const ModelConfig& m, std::uint64_t seed)
        : proj_(reg, "patch_embed.proj", m.patch_size * m.patch_size * 3, m.dim, seed),
          patch_size_(m.patch_size),
          dim_(m.dim) {}

    // frames: (T,H,W,3) -> (T, Np, d)
    Tensor<T> apply(nn::Ctx<T>& ctx, const Tensor<T>& frames) const {
        if (frames.rank() != 4 || frames.dim(3) != 3)
            throw std::invalid_argument("patchify: expected (T,H,W,3) frames");
        const long t = frames.dim(0), h = frames.dim(1), w = frames.dim(2);
        if (h % patch_size_ != 0 || w % patch_size_ != 0)
            throw std::invalid_argument("patchify: frame size not divisible by patch size");
        const long gh = h / patch_size_, gw = w / patch_size_;
        const long np = gh * gw;
        const long pdim = patch_size_ * patch_size_ * 3;

        Tensor<T> patches =
            gather(frames, patch_table(t, h, w), Shape{t * np, pdim});
        Tensor<T> tokens = reshape(proj_.apply(ctx, patches), Shape{t, np, dim_});
        return add_broadcast(tokens, position_code(gh, gw));
    }

    long patches_per_frame(long h, long w) const {
        return (h / patch_size_) * (w / patch_size_);
    }

private:
    const IndexTable& patch_table(long t, long h, long w) const {
        auto key = std::make_tuple(t, h, w);
        auto it = table_cache_.find(key);
        if (it != table_cache_.end()) return it->second;
        const long gh = h / patch_size_, gw = w / patch_size_;
        std::vector<long> idx;
        idx.reserve(static_cast<size_t>(t * gh * gw * patch_size_ * patch_size_ * 3));
        for (long f = 0; f < t; ++f)
            for (long gr = 0; gr < gh; ++gr)
                for (long gc = 0; gc < gw; ++gc)
                    for (long py = 0; py < patch_size_; ++py)
                        for (long px = 0; px < patch_size_; ++px)
                            for (long c = 0; c < 3; ++c)
                                idx.push_back(
                                    ((f * h + gr * patch_size_ + py) * w + gc * patch_size_ + px) *
                                        3 +
                                    c);
        auto [ins, ok] = table_cache_.emplace(key, make_index_table(std::move(idx)));
        return ins->second;
    }

    const Tensor<T>& position_code(long gh, long gw) const {
        auto key = std::make_pair(gh, gw);
        auto it = pos_cache_.find(key);
        if (it != pos_cache_.end()) return it->second;
        auto [ins, ok] = pos_cache_.emplace(key, nn::sincos_position_grid<T>(gh, gw, dim_));
        return ins->second;
    }

    nn::Linear<T> proj_;
    long patch_size_ = 0;
    long dim_ = 0;
    mutable std::map<std::tuple<long, long, long>, IndexTable> table_cache_;
    mutable std::map<std::pair<long, long>, Tensor<T>> pos_cache_;
};

// Per-frame ViT over [CLS; patches; c_o; c_r]; the output sequence is split
// back into the four blocks by position.
template <typename T>
class VisualEncoder {
public:
    VisualEncoder() = default;
    VisualEncoder(nn::ParamRegistry<T>& reg, const ModelConfig& m, std::uint64_t seed)
        : cls_token_(nn::init::normal<T>(reg, "visual.cls_token", Shape{1, m.dim}, seed)),
          obj_tokens_(nn::init::normal<T>(reg, "visual.obj_context_tokens",
                                          Shape{m.context_tokens, m.dim}, seed)),
          rel_tokens_(nn::init::normal<T>(reg, "visual.rel_context_tokens",
                                          Shape{m.context_tokens, m.dim}, seed)),
          n_ctx_(m.context_tokens),
          with_context_(m.context_refinement) {
        for (long i = 0; i < m.encoder_layers; ++i)
            blocks_.emplace_back(reg, "visual.block" + std::to_string(i), m.dim, m.heads, seed);
    }

    EncoderOutput<T> apply(nn::Ctx<T>& ctx, const Tensor<T>& patch_tokens,
                           std::vector<std::vector<T>>* attn_weights = nullptr) const {
        const long t = patch_tokens.dim(0), np = patch_tokens.dim(1), d = patch_tokens.dim(2);
        std::vector<Tensor<T>> parts;
        parts.push_back(tile_token(ctx.use(cls_token_), t, 1, d));
        parts.push_back(patch_tokens);
        if (with_context_) {
            parts.push_back(tile_token(ctx.use(obj_tokens_), t, n_ctx_, d));
            parts.push_back(tile_token(ctx.use(rel_tokens_), t, n_ctx_, d));
        }
        Tensor<T> x = concat(parts, 1);
        for (const auto& block : blocks_) {
            std::vector<T> weights;
            x = block.apply(ctx, x, attn_weights ? &weights : nullptr);
            if (attn_weights) attn_weights->push_back(std::move(weights));
        }

        EncoderOutput<T> out;
        out.h_cls = reshape(slice(x, 1, 0, 1), Shape{t, d});
        out.h_patch = slice(x, 1, 1, np);
        out.has_context = with_context_;
        if (with_context_) {
            out.c_obj = slice(x, 1, 1 + np, n_ctx_);
            out.c_rel = slice(x, 1, 1 + np + n_ctx_, n_ctx_);
        }
        return out;
    }

    long context_tokens() const { return n_ctx_; }
    bool with_context() const { return with_context_; }
    long sequence_length(long np) const { return 1 + np + (with_context_ ? 2 * n_ctx_ : 0); }

private:
    Tensor<T> tile_token(const Tensor<T>& token, long t, long n, long d) const {
        auto key = std::make_pair(t, n);
        auto it = tile_cache_.find(key);
        if (it == tile_cache_.end())
            it = tile_cache_.emplace(key, build_tile_table(n * d, t)).first;
        return gather(token, it->second, Shape{t, n, d});
    }

    nn::Param<T>* cls_token_ = nullptr;
    nn::Param<T>* obj_tokens_ = nullptr;
    nn::Param<T>* rel_tokens_ = nullptr;
    std::vector<nn::EncoderBlock<T>> blocks_;
    long n_ctx_ = 0;
    bool with_context_ = true;
    mutable std::map<std::pair<long, long>, IndexTable> tile_cache_;
};

// Q̂_t = MHA(Q, C_o[t], C_o[t]) + Q, per frame; the residual keeps query
// identity stable across frames.
template <typename T>
class QueryRefiner {
public:
    QueryRefiner() = default;
    QueryRefiner(nn::ParamRegistry<T>& reg, const ModelConfig& m, std::uint64_t seed)
        // unit-scale init: queries must start well separated for candidates
        // to specialize per object
        : queries_(nn::init::normal<T>(reg, "queries", Shape{m.num_queries, m.dim}, seed, T(1))),
          attn_(reg, "query_refiner.attn", m.dim, m.heads, seed),
          n_q_(m.num_queries) {}

    // c_obj: (T,Nc,d) -> refined queries (T,Nq,d)
    Tensor<T> apply(nn::Ctx<T>& ctx, const Tensor<T>& c_obj, bool refine,
                    std::vector<T>* attn_weights = nullptr) const {
        const long t = c_obj.dim(0), d = c_obj.dim(2);
        Tensor<T> tiled = tiled_queries(ctx, t, d);
        if (!refine) return tiled;
        return add(attn_.apply(ctx, tiled, c_obj, attn_weights), tiled);
    }

    Tensor<T> tiled_queries(nn::Ctx<T>& ctx, long t, long d) const {
        auto it = tile_cache_.find(t);
        if (it == tile_cache_.end())
            it = tile_cache_.emplace(t, build_tile_table(n_q_ * d, t)).first;
        return gather(ctx.use(queries_), it->second, Shape{t, n_q_, d});
    }

    long num_queries() const { return n_q_; }

private:
    nn::Param<T>* queries_ = nullptr;
    nn::MultiHeadAttention<T> attn_;
    long n_q_ = 0;
    mutable std::map<long, IndexTable> tile_cache_;
};

// Prompt bank + mini text encoder. Each category row comes from the sequence
// [prompt vectors; mapped context tokens; category embedding] read at the
// last position and unit-normalized. Rows are computed per requested
// category id, so restricting training to base categories never touches
// novel embeddings.
template <typename T>
class TextEncoder {
public:
    TextEncoder() = default;
    TextEncoder(nn::ParamRegistry<T>& reg, const ModelConfig& m, const Vocabulary& vocab,
                std::uint64_t seed)
        : v_obj_(nn::init::normal<T>(reg, "prompt.v_obj", Shape{m.prompt_tokens, m.dim}, seed)),
          v_rel_(nn::init::normal<T>(reg, "prompt.v_rel", Shape{m.prompt_tokens, m.dim}, seed)),
          obj_embed_(nn::init::normal<T>(
              reg, "prompt.obj_embed",
              Shape{static_cast<long>(vocab.objects.size()), m.dim}, seed)),
          rel_embed_(nn::init::normal<T>(
              reg, "prompt.rel_embed",
              Shape{static_cast<long>(vocab.relations.size()), m.dim}, seed)),
          map_obj_(reg, "prompt.map_obj", m.dim, m.dim, m.context_tokens * m.dim, seed),
          map_rel_(reg, "prompt.map_rel", m.dim, m.dim, m.context_tokens * m.dim, seed),
          n_ctx_(m.context_tokens),
          n_prompt_(m.prompt_tokens),
          dim_(m.dim) {
        for (long i = 0; i < m.text_layers; ++i)
            blocks_.emplace_back(reg, "text.block" + std::to_string(i), m.dim, m.heads, seed);
    }

    // context: (T,Nc,d) pooled inside; pass a null pointer to zero the
    // mapped tokens (the context-free prompt pathway).
    Tensor<T> encode_object_rows(nn::Ctx<T>& ctx, const Tensor<T>* c_obj,
                                 const std::vector<long>& category_ids) const {
        return encode_rows(ctx, c_obj, category_ids, v_obj_, obj_embed_, map_obj_);
    }

    Tensor<T> encode_relation_rows(nn::Ctx<T>& ctx, const Tensor<T>* c_rel,
                                   const std::vector<long>& category_ids) const {
        return encode_rows(ctx, c_rel, category_ids, v_rel_, rel_embed_, map_rel_);
    }

    nn::Param<T>* object_embeddings() const { return obj_embed_; }
    nn::Param<T>* relation_embeddings() const { return rel_embed_; }
    long prompt_length() const { return n_prompt_ + n_ctx_ + 1; }

private:
    Tensor<T> encode_rows(nn::Ctx<T>& ctx, const Tensor<T>* context,
                          const std::vector<long>& ids, nn::Param<T>* prompt,
                          nn::Param<T>* embed, const nn::Mlp<T>& mapper) const {
        const long c = static_cast<long>(ids.size());
        if (c == 0) throw std::invalid_argument("text encoder: no category ids requested");
        const long len = prompt_length();

        // mapped context tokens: mean over frames and context tokens, then
        // the mapping MLP emits Nc prompt-token embeddings
        Tensor<T> mapped;
        if (context) {
            Tensor<T> pooled = mean_axis(mean_axis(*context, 0), 0);  // (d,)
            mapped = reshape(mapper.apply(ctx, reshape(pooled, Shape{1, dim_})),
                             Shape{n_ctx_, dim_});
        } else {
            mapped = Tensor<T>(Shape{n_ctx_, dim_});
        }

        std::vector<Tensor<T>> parts;
        parts.push_back(gather(ctx.use(prompt), tile_table(n_prompt_ * dim_, c),
                               Shape{c, n_prompt_, dim_}));
        parts.push_back(gather(mapped, tile_table(n_ctx_ * dim_, c), Shape{c, n_ctx_, dim_}));
        parts.push_back(reshape(select_rows(ctx.use(embed), ids), Shape{c, 1, dim_}));
        Tensor<T> x = concat(parts, 1);
        for (const auto& block : blocks_) x = block.apply(ctx, x);
        Tensor<T> last = reshape(slice(x, 1, len - 1, 1), Shape{c, dim_});
        return rows_normalize(last);
    }

    const IndexTable& tile_table(long numel, long repeat) const {
        auto key = std::make_pair(numel, repeat);
        auto it = tile_cache_.find(key);
        if (it == tile_cache_.end())
            it = tile_cache_.emplace(key, build_tile_table(numel, repeat)).first;
        return it->second;
    }

    nn::Param<T>* v_obj_ = nullptr;
    nn::Param<T>* v_rel_ = nullptr;
    nn::Param<T>* obj_embed_ = nullptr;
    nn::Param<T>* rel_embed_ = nullptr;
    nn::Mlp<T> map_obj_, map_rel_;
    std::vector<nn::EncoderBlock<T>> blocks_;
    long n_ctx_ = 0, n_prompt_ = 0, dim_ = 0;
    mutable std::map<std::pair<long, long>, IndexTable> tile_cache_;
};

}  // namespace metor
