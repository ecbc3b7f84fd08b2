#pragma once

#include "metor/config.hpp"
#include "metor/nn.hpp"

// Iterative enhancement: each layer runs a factorized spatio-temporal
// Transformer over per-frame token groups [subject; object; CLS; readout],
// reads the relation feature stream off the readout token, and feeds the
// mapped relation features back into both entity streams with a convex
// combination controlled by alpha. alpha endpoints short-circuit so the
// identities hold bit-exactly.

namespace metor {

template <typename T>
struct EnhancedFeatures {
    Tensor<T> subject;   // (T, d)
    Tensor<T> object;    // (T, d)
    Tensor<T> relation;  // (T, d): readout stream of the last executed layer
};

template <typename T>
class EnhanceLayer {
public:
    EnhanceLayer() = default;
    EnhanceLayer(nn::ParamRegistry<T>& reg, const std::string& prefix, long dim, long heads,
                 std::uint64_t seed)
        : readout_(nn::init::normal<T>(reg, prefix + ".readout", Shape{1, dim}, seed)),
          spatial_(reg, prefix + ".spatial", dim, heads, seed),
          temporal_(reg, prefix + ".temporal", dim, heads, seed),
          map_(reg, prefix + ".map", dim, dim, dim, seed),
          dim_(dim) {}

    // subject/object/cls: (T,d). Returns the relation stream (T,d).
    Tensor<T> relation_stream(nn::Ctx<T>& ctx, const Tensor<T>& subject,
                              const Tensor<T>& object, const Tensor<T>& cls) const {
        const long t = subject.dim(0), d = dim_;
        std::vector<Tensor<T>> parts;
        parts.push_back(reshape(subject, Shape{t, 1, d}));
        parts.push_back(reshape(object, Shape{t, 1, d}));
        parts.push_back(reshape(cls, Shape{t, 1, d}));
        parts.push_back(tile_readout(ctx, t, d));
        Tensor<T> tokens = concat(parts, 1);             // (T, 4, d)
        tokens = spatial_.apply(ctx, tokens);            // attention within each frame
        Tensor<T> streams = permute(tokens, {1, 0, 2});  // (4, T, d)
        streams = temporal_.apply(ctx, streams);         // attention across frames
        return reshape(slice(streams, 0, 3, 1), Shape{t, d});
    }

    Tensor<T> map_relation(nn::Ctx<T>& ctx, const Tensor<T>& relation) const {
        return map_.apply(ctx, relation);
    }

private:
    Tensor<T> tile_readout(nn::Ctx<T>& ctx, long t, long d) const {
        auto it = tile_cache_.find(t);
        if (it == tile_cache_.end()) it = tile_cache_.emplace(t, build_tile_table(d, t)).first;
        return gather(ctx.use(readout_), it->second, Shape{t, 1, d});
    }

    nn::Param<T>* readout_ = nullptr;
    nn::EncoderBlock<T> spatial_;
    nn::EncoderBlock<T> temporal_;
    nn::Mlp<T> map_;
    long dim_ = 0;
    mutable std::map<long, IndexTable> tile_cache_;
};

template <typename T>
class IterativeEnhancer {
public:
    IterativeEnhancer() = default;
    IterativeEnhancer(nn::ParamRegistry<T>& reg, const ModelConfig& m, std::uint64_t seed)
        : alpha_(m.alpha) {
        // at least one layer exists so the zero-iteration baseline can still
        // produce relation features (no feedback applied)
        const long count = std::max<long>(1, m.iter_layers);
        for (long i = 0; i < count; ++i)
            layers_.emplace_back(reg, "enhance.layer" + std::to_string(i), m.dim, m.heads, seed);
        iterations_ = m.iter_layers;
    }

    // One enhancement step through layer k.
    std::array<Tensor<T>, 3> step(nn::Ctx<T>& ctx, long k, const Tensor<T>& subject,
                                  const Tensor<T>& object, const Tensor<T>& cls) const {
        const auto& layer = layers_[static_cast<size_t>(k)];
        Tensor<T> rel = layer.relation_stream(ctx, subject, object, cls);
        if (alpha_ == 1.0) return {subject, object, rel};  // exact endpoint
        Tensor<T> fed = layer.map_relation(ctx, rel);
        if (alpha_ == 0.0) return {fed, fed, rel};  // subject == object exactly
        const T a = static_cast<T>(alpha_);
        Tensor<T> new_s = add(affine(subject, a, T(0)), affine(fed, T(1) - a, T(0)));
        Tensor<T> new_o = add(affine(object, a, T(0)), affine(fed, T(1) - a, T(0)));
        return {new_s, new_o, rel};
    }

    // Chains the configured number of layers; with zero iterations a single
    // relation pass runs and the entity features come back untouched.
    EnhancedFeatures<T> run(nn::Ctx<T>& ctx, const Tensor<T>& subject, const Tensor<T>& object,
                            const Tensor<T>& cls) const {
        EnhancedFeatures<T> out{subject, object, Tensor<T>{}};
        if (iterations_ == 0) {
            out.relation = layers_[0].relation_stream(ctx, subject, object, cls);
            return out;
        }
        for (long k = 0; k < iterations_; ++k) {
            auto [s, o, r] = step(ctx, k, out.subject, out.object, cls);
            out.subject = s;
            out.object = o;
            out.relation = r;
        }
        return out;
    }

    long iterations() const { return iterations_; }
    double alpha() const { return alpha_; }

private:
    std::vector<EnhanceLayer<T>> layers_;
    double alpha_ = 0.9;
    long iterations_ = 0;
};

}  // namespace metor
