#pragma once

#include <map>
#include <memory>
#include <unordered_map>

#include "metor/ops.hpp"

namespace metor::nn {

template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    bool trainable = true;
};

// Owns every parameter; modules keep stable Param* handles so they stay
// freely movable. Registration order drives optimizer and checkpoint
// traversal deterministically.
template <typename T>
class ParamRegistry {
public:
    Param<T>* create(const std::string& name, Tensor<T> value) {
        if (by_name_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
        params_.push_back(std::make_unique<Param<T>>(Param<T>{name, std::move(value)}));
        Param<T>* p = params_.back().get();
        by_name_[name] = p;
        return p;
    }

    const std::vector<std::unique_ptr<Param<T>>>& all() const { return params_; }

    Param<T>* find(const std::string& name) const {
        auto it = by_name_.find(name);
        return it == by_name_.end() ? nullptr : it->second;
    }

    long total_size() const {
        long n = 0;
        for (const auto& p : params_) n += p->value.numel();
        return n;
    }

private:
    std::vector<std::unique_ptr<Param<T>>> params_;
    std::unordered_map<std::string, Param<T>*> by_name_;
};

// Forward context: places each parameter on the tape exactly once per pass
// so gradient contributions from reuse accumulate on a single leaf. With a
// null tape this is a plain inference pass.
template <typename T>
class Ctx {
public:
    Ctx() = default;
    explicit Ctx(Tape<T>* tape) : tape_(tape) {}

    Tensor<T> use(const Param<T>* p) {
        if (!tape_) return p->value;
        auto it = placed_.find(p);
        if (it != placed_.end()) return it->second;
        Tensor<T> leaf = tape_->leaf(p->value, p->trainable);
        placed_.emplace(p, leaf);
        return leaf;
    }

    Tape<T>* tape() const { return tape_; }
    bool recording() const { return tape_ != nullptr; }

    // Valid after Tape::backward; zero vector if the parameter was unused
    // or frozen.
    std::vector<T> grad_of(const Param<T>* p) const {
        auto it = placed_.find(p);
        if (it == placed_.end() || !p->trainable)
            return std::vector<T>(static_cast<size_t>(p->value.numel()), T(0));
        return tape_->grad(it->second);
    }

    bool used(const Param<T>* p) const { return placed_.count(p) > 0; }

private:
    Tape<T>* tape_ = nullptr;
    std::unordered_map<const Param<T>*, Tensor<T>> placed_;
};

namespace init {

template <typename T>
Param<T>* normal(ParamRegistry<T>& reg, const std::string& name, Shape shape,
                 std::uint64_t seed, T stddev = T(0.02)) {
    Rng rng = Rng::for_name(seed, name);
    return reg.create(name, Tensor<T>::randn(std::move(shape), rng, stddev));
}

template <typename T>
Param<T>* constant(ParamRegistry<T>& reg, const std::string& name, Shape shape, T v) {
    return reg.create(name, Tensor<T>::full(std::move(shape), v));
}

}  // namespace init

template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(ParamRegistry<T>& reg, const std::string& prefix, long in, long out,
           std::uint64_t seed)
        // fan-in scaled init keeps activations and attention logits O(1)
        : w_(init::normal<T>(reg, prefix + ".w", Shape{in, out}, seed,
                             T(1) / std::sqrt(static_cast<T>(in)))),
          b_(init::constant<T>(reg, prefix + ".b", Shape{out}, T(0))),
          in_(in),
          out_(out) {}

    // x: (..., in) -> (..., out)
    Tensor<T> apply(Ctx<T>& ctx, const Tensor<T>& x) const {
        const long rows = x.numel() / in_;
        Tensor<T> flat = reshape(x, Shape{rows, in_});
        Tensor<T> y = add_broadcast(matmul(flat, ctx.use(w_)), ctx.use(b_));
        Shape out_shape = x.shape();
        out_shape.back() = out_;
        return reshape(y, std::move(out_shape));
    }

    long in_features() const { return in_; }
    long out_features() const { return out_; }
    Param<T>* weight() const { return w_; }
    Param<T>* bias() const { return b_; }

private:
    Param<T>* w_ = nullptr;
    Param<T>* b_ = nullptr;
    long in_ = 0, out_ = 0;
};

template <typename T>
class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(ParamRegistry<T>& reg, const std::string& prefix, long dim)
        : gamma_(init::constant<T>(reg, prefix + ".gamma", Shape{dim}, T(1))),
          beta_(init::constant<T>(reg, prefix + ".beta", Shape{dim}, T(0))) {}

    Tensor<T> apply(Ctx<T>& ctx, const Tensor<T>& x) const {
        return layer_norm(x, ctx.use(gamma_), ctx.use(beta_));
    }

private:
    Param<T>* gamma_ = nullptr;
    Param<T>* beta_ = nullptr;
};

// Two-layer GELU MLP.
template <typename T>
class Mlp {
public:
    Mlp() = default;
    Mlp(ParamRegistry<T>& reg, const std::string& prefix, long in, long hidden, long out,
        std::uint64_t seed)
        : fc1_(reg, prefix + ".fc1", in, hidden, seed),
          fc2_(reg, prefix + ".fc2", hidden, out, seed) {}

    Tensor<T> apply(Ctx<T>& ctx, const Tensor<T>& x) const {
        return fc2_.apply(ctx, gelu(fc1_.apply(ctx, x)));
    }

    const Linear<T>& fc1() const { return fc1_; }
    const Linear<T>& fc2() const { return fc2_; }

private:
    Linear<T> fc1_, fc2_;
};

// Standard multi-head attention over batched token sequences: projections,
// per-head scaled dot-product softmax, value mixing, output projection.
template <typename T>
class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(ParamRegistry<T>& reg, const std::string& prefix, long dim, long heads,
                       std::uint64_t seed)
        : wq_(reg, prefix + ".wq", dim, dim, seed),
          wk_(reg, prefix + ".wk", dim, dim, seed),
          wv_(reg, prefix + ".wv", dim, dim, seed),
          wo_(reg, prefix + ".wo", dim, dim, seed),
          dim_(dim),
          heads_(heads) {
        if (dim % heads != 0)
            throw std::invalid_argument("attention: dim must be divisible by head count");
    }

    // q: (B,Nq,d), kv: (B,Nk,d) -> (B,Nq,d). When `weights_out` is non-null
    // the post-softmax attention weights (B*heads,Nq,Nk) are copied there.
    Tensor<T> apply(Ctx<T>& ctx, const Tensor<T>& q, const Tensor<T>& kv,
                    std::vector<T>* weights_out = nullptr) const {
        if (q.rank() != 3 || kv.rank() != 3)
            throw std::invalid_argument("attention: expected 3-D (batch, tokens, dim) inputs");
        if (q.dim(2) != dim_ || kv.dim(2) != dim_ || q.dim(0) != kv.dim(0))
            throw std::invalid_argument("attention: shape mismatch q=" + shape_str(q.shape()) +
                                        " kv=" + shape_str(kv.shape()));
        const long b = q.dim(0), nq = q.dim(1), nk = kv.dim(1);
        const long dh = dim_ / heads_;

        Tensor<T> qp = split_heads(wq_.apply(ctx, q), b, nq);
        Tensor<T> kp = split_heads(wk_.apply(ctx, kv), b, nk);
        Tensor<T> vp = split_heads(wv_.apply(ctx, kv), b, nk);

        Tensor<T> scores = affine(bmm_nt(qp, kp), T(1) / std::sqrt(static_cast<T>(dh)), T(0));
        Tensor<T> attn = softmax(scores, 2);
        if (weights_out) *weights_out = attn.data();
        Tensor<T> mixed = bmm(attn, vp);
        return wo_.apply(ctx, merge_heads(mixed, b, nq));
    }

    long heads() const { return heads_; }
    const Linear<T>& out_proj() const { return wo_; }

private:
    // (B,N,d) -> (B*H,N,dh)
    Tensor<T> split_heads(const Tensor<T>& x, long b, long n) const {
        const long dh = dim_ / heads_;
        const IndexTable& t = head_table(b, n, /*split=*/true);
        return gather(x, t, Shape{b * heads_, n, dh});
    }

    // (B*H,N,dh) -> (B,N,d)
    Tensor<T> merge_heads(const Tensor<T>& x, long b, long n) const {
        const IndexTable& t = head_table(b, n, /*split=*/false);
        return gather(x, t, Shape{b, n, dim_});
    }

    const IndexTable& head_table(long b, long n, bool split) const {
        auto& cache = split ? split_cache_ : merge_cache_;
        auto key = std::make_pair(b, n);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
        const long dh = dim_ / heads_;
        std::vector<long> idx(static_cast<size_t>(b * n * dim_));
        if (split) {
            // out[((bb*H+h)*n + t)*dh + k] = in[(bb*n + t)*d + h*dh + k]
            size_t w = 0;
            for (long bb = 0; bb < b; ++bb)
                for (long h = 0; h < heads_; ++h)
                    for (long t = 0; t < n; ++t)
                        for (long k = 0; k < dh; ++k)
                            idx[w++] = (bb * n + t) * dim_ + h * dh + k;
        } else {
            // out[(bb*n + t)*d + h*dh + k] = in[((bb*H+h)*n + t)*dh + k]
            size_t w = 0;
            for (long bb = 0; bb < b; ++bb)
                for (long t = 0; t < n; ++t)
                    for (long h = 0; h < heads_; ++h)
                        for (long k = 0; k < dh; ++k)
                            idx[w++] = ((bb * heads_ + h) * n + t) * dh + k;
        }
        auto [ins, ok] = cache.emplace(key, make_index_table(std::move(idx)));
        return ins->second;
    }

    Linear<T> wq_, wk_, wv_, wo_;
    long dim_ = 0, heads_ = 0;
    mutable std::map<std::pair<long, long>, IndexTable> split_cache_;
    mutable std::map<std::pair<long, long>, IndexTable> merge_cache_;
};

// Pre-norm self-attention block: x += MHA(LN(x)); x += MLP(LN(x)).
template <typename T>
class EncoderBlock {
public:
    EncoderBlock() = default;
    EncoderBlock(ParamRegistry<T>& reg, const std::string& prefix, long dim, long heads,
                 std::uint64_t seed)
        : ln1_(reg, prefix + ".ln1", dim),
          ln2_(reg, prefix + ".ln2", dim),
          attn_(reg, prefix + ".attn", dim, heads, seed),
          mlp_(reg, prefix + ".mlp", dim, 4 * dim, dim, seed) {}

    Tensor<T> apply(Ctx<T>& ctx, const Tensor<T>& x,
                    std::vector<T>* attn_weights = nullptr) const {
        Tensor<T> normed = ln1_.apply(ctx, x);
        Tensor<T> h = add(x, attn_.apply(ctx, normed, normed, attn_weights));
        return add(h, mlp_.apply(ctx, ln2_.apply(ctx, h)));
    }

private:
    LayerNorm<T> ln1_, ln2_;
    MultiHeadAttention<T> attn_;
    Mlp<T> mlp_;
};

// Pre-norm decoder block: query self-attention, cross-attention to memory,
// then the MLP.
template <typename T>
class DecoderBlock {
public:
    DecoderBlock() = default;
    DecoderBlock(ParamRegistry<T>& reg, const std::string& prefix, long dim, long heads,
                 std::uint64_t seed)
        : ln1_(reg, prefix + ".ln1", dim),
          ln2_(reg, prefix + ".ln2", dim),
          ln3_(reg, prefix + ".ln3", dim),
          self_attn_(reg, prefix + ".self_attn", dim, heads, seed),
          cross_attn_(reg, prefix + ".cross_attn", dim, heads, seed),
          mlp_(reg, prefix + ".mlp", dim, 4 * dim, dim, seed) {}

    Tensor<T> apply(Ctx<T>& ctx, const Tensor<T>& x, const Tensor<T>& memory,
                    std::vector<T>* cross_weights = nullptr) const {
        Tensor<T> normed = ln1_.apply(ctx, x);
        Tensor<T> h = add(x, self_attn_.apply(ctx, normed, normed));
        h = add(h, cross_attn_.apply(ctx, ln2_.apply(ctx, h), memory, cross_weights));
        return add(h, mlp_.apply(ctx, ln3_.apply(ctx, h)));
    }

private:
    LayerNorm<T> ln1_, ln2_, ln3_;
    MultiHeadAttention<T> self_attn_, cross_attn_;
    Mlp<T> mlp_;
};

// Fixed 2-D sinusoidal position encoding for a gh x gw patch grid: the first
// half of the channels encodes the row, the second half the column.
template <typename T>
Tensor<T> sincos_position_grid(long gh, long gw, long dim) {
    if (dim % 4 != 0)
        throw std::invalid_argument("position encoding: dim must be a multiple of 4");
    const long half = dim / 2;
    const long quarter = dim / 4;
    Tensor<T> out(Shape{gh * gw, dim});
    auto& d = out.mutable_data();
    for (long r = 0; r < gh; ++r)
        for (long c = 0; c < gw; ++c) {
            const long base = (r * gw + c) * dim;
            for (long k = 0; k < quarter; ++k) {
                const double freq =
                    std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(half));
                d[static_cast<size_t>(base + 2 * k)] = static_cast<T>(std::sin(r * freq));
                d[static_cast<size_t>(base + 2 * k + 1)] = static_cast<T>(std::cos(r * freq));
                d[static_cast<size_t>(base + half + 2 * k)] = static_cast<T>(std::sin(c * freq));
                d[static_cast<size_t>(base + half + 2 * k + 1)] =
                    static_cast<T>(std::cos(c * freq));
            }
        }
    return out;
}

}  // namespace metor::nn
