#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>

#include "metor/tensor.hpp"

// Differentiable tensor ops. Each op computes its forward value eagerly and,
// when an input is gradient-tracked, records a backward closure on that
// input's tape. Forward outputs are checked for NaN/Inf except for pure
// data-movement ops, which cannot create them.

namespace metor {

namespace detail {

template <typename T>
bool tracked(const Tensor<T>& t) {
    return t.on_tape() && t.requires_grad();
}

template <typename T>
Tape<T>* common_tape(std::initializer_list<const Tensor<T>*> ts) {
    Tape<T>* tape = nullptr;
    for (const Tensor<T>* t : ts) {
        if (!tracked(*t)) continue;
        if (!tape)
            tape = t->tape();
        else if (tape != t->tape())
            throw std::logic_error("op inputs live on different tapes");
    }
    return tape;
}

template <typename T>
void finite_or_throw(const std::vector<T>& v, const char* op) {
    for (const T& x : v)
        if (!std::isfinite(static_cast<double>(x)))
            throw NumericError(std::string(op) + ": non-finite value in forward output");
}

// C(M,N) += A(M,K) * B(K,N)
template <typename T>
void mm_acc_nn(const T* a, const T* b, T* c, long m, long n, long k) {
    for (long i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (long p = 0; p < k; ++p) {
            const T aip = a[i * k + p];
            if (aip == T(0)) continue;
            const T* brow = b + p * n;
            for (long j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

// C(M,N) += A(M,K) * B(N,K)^T
template <typename T>
void mm_acc_nt(const T* a, const T* b, T* c, long m, long n, long k) {
    for (long i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        for (long j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T s = 0;
            for (long p = 0; p < k; ++p) s += arow[p] * brow[p];
            c[i * n + j] += s;
        }
    }
}

// C(M,N) += A(K,M)^T * B(K,N)
template <typename T>
void mm_acc_tn(const T* a, const T* b, T* c, long m, long n, long k) {
    for (long p = 0; p < k; ++p) {
        const T* brow = b + p * n;
        for (long i = 0; i < m; ++i) {
            const T api = a[p * m + i];
            if (api == T(0)) continue;
            T* crow = c + i * n;
            for (long j = 0; j < n; ++j) crow[j] += api * brow[j];
        }
    }
}

inline std::atomic<bool> g_zero_norm_warned{false};

inline void warn_zero_norm_once() {
    if (!g_zero_norm_warned.exchange(true))
        log_warn("cosine: zero-norm vector encountered; similarity defined as 0");
}

// Shared emit-or-plain helper: builds the result tensor and, when a tape is
// involved, registers `make_backward(out_node)`.
template <typename T, typename MakeBackward>
Tensor<T> finish(Tape<T>* tape, Shape shape, std::vector<T> values, MakeBackward&& make_backward) {
    if (!tape) return Tensor<T>(std::move(shape), std::move(values));
    Tensor<T> out = tape->emit(std::move(shape), std::move(values));
    tape->set_backward(out.node(), make_backward(out.node()));
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    std::vector<T> out(a.data());
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    detail::finite_or_throw(out, "add");
    Tape<T>* tape = detail::common_tape<T>({&a, &b});
    const bool ta = detail::tracked(a), tb = detail::tracked(b);
    const long na = a.node(), nb = b.node();
    return detail::finish(tape, a.shape(), std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            if (ta) {
                auto& ga = tp.grad_buffer(na);
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (tb) {
                auto& gb = tp.grad_buffer(nb);
                for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
        };
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    std::vector<T> out(a.data());
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
    detail::finite_or_throw(out, "sub");
    Tape<T>* tape = detail::common_tape<T>({&a, &b});
    const bool ta = detail::tracked(a), tb = detail::tracked(b);
    const long na = a.node(), nb = b.node();
    return detail::finish(tape, a.shape(), std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            if (ta) {
                auto& ga = tp.grad_buffer(na);
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (tb) {
                auto& gb = tp.grad_buffer(nb);
                for (size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
            }
        };
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    std::vector<T> out(a.data());
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
    detail::finite_or_throw(out, "mul");
    Tape<T>* tape = detail::common_tape<T>({&a, &b});
    const bool ta = detail::tracked(a), tb = detail::tracked(b);
    const long na = a.node(), nb = b.node();
    auto pa = a.data_ptr();
    auto pb = b.data_ptr();
    return detail::finish(tape, a.shape(), std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            if (ta) {
                auto& ga = tp.grad_buffer(na);
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * (*pb)[i];
            }
            if (tb) {
                auto& gb = tp.grad_buffer(nb);
                for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * (*pa)[i];
            }
        };
    });
}

// y = m*x + c with scalar constants.
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T m, T c) {
    std::vector<T> out(x.data());
    for (auto& v : out) v = m * v + c;
    detail::finite_or_throw(out, "affine");
    Tape<T>* tape = detail::common_tape<T>({&x});
    const long nx = x.node();
    return detail::finish(tape, x.shape(), std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            auto& gx = tp.grad_buffer(nx);
            for (size_t i = 0; i < go.size(); ++i) gx[i] += m * go[i];
        };
    });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
    return affine(x, T(-1), T(0));
}

// y = x * s where s is a scalar tensor (e.g. a learnable logit scale).
template <typename T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& s) {
    if (s.numel() != 1) throw std::invalid_argument("scale_by: scale must be a scalar tensor");
    const T sv = s.data()[0];
    std::vector<T> out(x.data());
    for (auto& v : out) v *= sv;
    detail::finite_or_throw(out, "scale_by");
    Tape<T>* tape = detail::common_tape<T>({&x, &s});
    const bool tx = detail::tracked(x), ts = detail::tracked(s);
    const long nx = x.node(), ns = s.node();
    auto px = x.data_ptr();
    return detail::finish(tape, x.shape(), std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            if (tx) {
                auto& gx = tp.grad_buffer(nx);
                for (size_t i = 0; i < go.size(); ++i) gx[i] += sv * go[i];
            }
            if (ts) {
                T acc = 0;
                for (size_t i = 0; i < go.size(); ++i) acc += go[i] * (*px)[i];
                tp.grad_buffer(ns)[0] += acc;
            }
        };
    });
}

// a + b where b's shape is a suffix of a's shape (broadcast over leading dims).
template <typename T>
Tensor<T> add_broadcast(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (bs.size() > as.size() ||
        !std::equal(bs.begin(), bs.end(), as.end() - static_cast<long>(bs.size())))
        throw std::invalid_argument("add_broadcast: " + shape_str(bs) + " is not a suffix of " +
                                    shape_str(as));
    const long bn = b.numel();
    std::vector<T> out(a.data());
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i % bn];
    detail::finite_or_throw(out, "add_broadcast");
    Tape<T>* tape = detail::common_tape<T>({&a, &b});
    const bool ta = detail::tracked(a), tb = detail::tracked(b);
    const long na = a.node(), nb = b.node();
    return detail::finish(tape, a.shape(), std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            if (ta) {
                auto& ga = tp.grad_buffer(na);
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (tb) {
                auto& gb = tp.grad_buffer(nb);
                for (size_t i = 0; i < go.size(); ++i) gb[i % bn] += go[i];
            }
        };
    });
}

// ---------------------------------------------------------------------------
// Matrix products

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()));
    const long m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(static_cast<size_t>(m * n), T(0));
    detail::mm_acc_nn(a.data().data(), b.data().data(), out.data(), m, n, k);
    detail::finite_or_throw(out, "matmul");
    Tape<T>* tape = detail::common_tape<T>({&a, &b});
    const bool ta = detail::tracked(a), tb = detail::tracked(b);
    const long na = a.node(), nb = b.node();
    auto pa = a.data_ptr();
    auto pb = b.data_ptr();
    return detail::finish(tape, Shape{m, n}, std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            if (ta)
                detail::mm_acc_nt(go.data(), pb->data(), tp.grad_buffer(na).data(), m, k, n);
            if (tb)
                detail::mm_acc_tn(pa->data(), go.data(), tp.grad_buffer(nb).data(), k, n, m);
        };
    });
}

// Batched (B,M,K) x (B,K,N) -> (B,M,N).
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw std::invalid_argument("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    const long bsz = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    std::vector<T> out(static_cast<size_t>(bsz * m * n), T(0));
    for (long i = 0; i < bsz; ++i)
        detail::mm_acc_nn(a.data().data() + i * m * k, b.data().data() + i * k * n,
                          out.data() + i * m * n, m, n, k);
    detail::finite_or_throw(out, "bmm");
    Tape<T>* tape = detail::common_tape<T>({&a, &b});
    const bool ta = detail::tracked(a), tb = detail::tracked(b);
    const long na = a.node(), nb = b.node();
    auto pa = a.data_ptr();
    auto pb = b.data_ptr();
    return detail::finish(tape, Shape{bsz, m, n}, std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            if (ta) {
                auto& ga = tp.grad_buffer(na);
                for (long i = 0; i < bsz; ++i)
                    detail::mm_acc_nt(go.data() + i * m * n, pb->data() + i * k * n,
                                      ga.data() + i * m * k, m, k, n);
            }
            if (tb) {
                auto& gb = tp.grad_buffer(nb);
                for (long i = 0; i < bsz; ++i)
                    detail::mm_acc_tn(pa->data() + i * m * k, go.data() + i * m * n,
                                      gb.data() + i * k * n, k, n, m);
            }
        };
    });
}

// Batched (B,M,K) x (B,N,K)^T -> (B,M,N); attention score layout.
template <typename T>
Tensor<T> bmm_nt(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2))
        throw std::invalid_argument("bmm_nt: incompatible shapes " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()));
    const long bsz = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
    std::vector<T> out(static_cast<size_t>(bsz * m * n), T(0));
    for (long i = 0; i < bsz; ++i)
        detail::mm_acc_nt(a.data().data() + i * m * k, b.data().data() + i * n * k,
                          out.data() + i * m * n, m, n, k);
    detail::finite_or_throw(out, "bmm_nt");
    Tape<T>* tape = detail::common_tape<T>({&a, &b});
    const bool ta = detail::tracked(a), tb = detail::tracked(b);
    const long na = a.node(), nb = b.node();
    auto pa = a.data_ptr();
    auto pb = b.data_ptr();
    return detail::finish(tape, Shape{bsz, m, n}, std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            if (ta) {
                auto& ga = tp.grad_buffer(na);
                for (long i = 0; i < bsz; ++i)
                    detail::mm_acc_nn(go.data() + i * m * n, pb->data() + i * n * k,
                                      ga.data() + i * m * k, m, k, n);
            }
            if (tb) {
                auto& gb = tp.grad_buffer(nb);
                for (long i = 0; i < bsz; ++i)
                    detail::mm_acc_tn(go.data() + i * m * n, pa->data() + i * m * k,
                                      gb.data() + i * n * k, n, k, m);
            }
        };
    });
}

// ---------------------------------------------------------------------------
// Data movement

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw std::invalid_argument("reshape: element count mismatch " + shape_str(x.shape()) +
                                    " -> " + shape_str(shape));
    std::vector<T> out(x.data());
    Tape<T>* tape = detail::common_tape<T>({&x});
    const long nx = x.node();
    return detail::finish(tape, std::move(shape), std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            auto& gx = tp.grad_buffer(nx);
            for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
        };
    });
}

using IndexTable = std::shared_ptr<const std::vector<long>>;

// out[i] = x.flat[idx[i]]. Covers transpose, slicing, tiling and patch
// extraction through precomputed index tables; backward scatter-adds.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, const IndexTable& idx, Shape out_shape) {
    if (static_cast<long>(idx->size()) != shape_numel(out_shape))
        throw std::invalid_argument("gather: index table does not match output shape");
    std::vector<T> out(idx->size());
    const auto& xd = x.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = xd[static_cast<size_t>((*idx)[i])];
    Tape<T>* tape = detail::common_tape<T>({&x});
    const long nx = x.node();
    return detail::finish(tape, std::move(out_shape), std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            auto& gx = tp.grad_buffer(nx);
            for (size_t i = 0; i < go.size(); ++i) gx[static_cast<size_t>((*idx)[i])] += go[i];
        };
    });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const int rank = parts[0].rank();
    if (axis < 0 || axis >= rank) throw std::invalid_argument("concat: axis out of range");
    Shape out_shape = parts[0].shape();
    out_shape[static_cast<size_t>(axis)] = 0;
    for (const auto& p : parts) {
        if (p.rank() != rank) throw std::invalid_argument("concat: rank mismatch");
        for (int i = 0; i < rank; ++i)
            if (i != axis && p.dim(i) != parts[0].dim(i))
                throw std::invalid_argument("concat: shape mismatch off the concat axis");
        out_shape[static_cast<size_t>(axis)] += p.dim(axis);
    }
    long outer = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
    long inner = 1;
    for (int i = axis + 1; i < rank; ++i) inner *= out_shape[static_cast<size_t>(i)];
    const long out_block = out_shape[static_cast<size_t>(axis)] * inner;

    std::vector<T> out(static_cast<size_t>(outer * out_block));
    std::vector<long> offsets;  // start of each part along the axis, in elements
    long off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const long blk = p.dim(axis) * inner;
        const auto& pd = p.data();
        for (long o = 0; o < outer; ++o)
            std::copy(pd.begin() + o * blk, pd.begin() + (o + 1) * blk,
                      out.begin() + o * out_block + off);
        off += blk;
    }

    Tape<T>* tape = nullptr;
    for (const auto& p : parts)
        if (detail::tracked(p)) {
            if (tape && tape != p.tape())
                throw std::logic_error("concat: inputs on different tapes");
            tape = p.tape();
        }

    struct PartInfo {
        long node;
        bool tracked;
        long block;
        long offset;
    };
    std::vector<PartInfo> infos;
    for (size_t i = 0; i < parts.size(); ++i)
        infos.push_back({parts[i].node(), detail::tracked(parts[i]),
                         parts[i].dim(axis) * inner, offsets[i]});

    return detail::finish(tape, std::move(out_shape), std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            for (const auto& pi : infos) {
                if (!pi.tracked) continue;
                auto& gp = tp.grad_buffer(pi.node);
                for (long o = 0; o < outer; ++o) {
                    const T* src = go.data() + o * out_block + pi.offset;
                    T* dst = gp.data() + o * pi.block;
                    for (long j = 0; j < pi.block; ++j) dst[j] += src[j];
                }
            }
        };
    });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    T acc = 0;
    for (const T& v : x.data()) acc += v;
    std::vector<T> out{acc};
    detail::finite_or_throw(out, "sum_all");
    Tape<T>* tape = detail::common_tape<T>({&x});
    const long nx = x.node();
    return detail::finish(tape, Shape{}, std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const T g = tp.grad_buffer(no)[0];
            auto& gx = tp.grad_buffer(nx);
            for (auto& v : gx) v += g;
        };
    });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    return affine(sum_all(x), T(1) / static_cast<T>(x.numel()), T(0));
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, int axis) {
    if (axis < 0 || axis >= x.rank()) throw std::invalid_argument("sum_axis: axis out of range");
    const Shape& s = x.shape();
    long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (int i = axis + 1; i < x.rank(); ++i) inner *= s[static_cast<size_t>(i)];
    const long n = s[static_cast<size_t>(axis)];
    Shape out_shape;
    for (int i = 0; i < x.rank(); ++i)
        if (i != axis) out_shape.push_back(s[static_cast<size_t>(i)]);

    std::vector<T> out(static_cast<size_t>(outer * inner), T(0));
    const auto& xd = x.data();
    for (long o = 0; o < outer; ++o)
        for (long j = 0; j < n; ++j) {
            const T* src = xd.data() + (o * n + j) * inner;
            T* dst = out.data() + o * inner;
            for (long i = 0; i < inner; ++i) dst[i] += src[i];
        }
    detail::finite_or_throw(out, "sum_axis");
    Tape<T>* tape = detail::common_tape<T>({&x});
    const long nx = x.node();
    return detail::finish(tape, std::move(out_shape), std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            auto& gx = tp.grad_buffer(nx);
            for (long o = 0; o < outer; ++o)
                for (long j = 0; j < n; ++j) {
                    T* dst = gx.data() + (o * n + j) * inner;
                    const T* src = go.data() + o * inner;
                    for (long i = 0; i < inner; ++i) dst[i] += src[i];
                }
        };
    });
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis) {
    const T n = static_cast<T>(x.dim(axis));
    return affine(sum_axis(x, axis), T(1) / n, T(0));
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    if (axis < 0 || axis >= x.rank()) throw std::invalid_argument("softmax: axis out of range");
    const Shape& s = x.shape();
    long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (int i = axis + 1; i < x.rank(); ++i) inner *= s[static_cast<size_t>(i)];
    const long n = s[static_cast<size_t>(axis)];

    std::vector<T> out(x.data().size());
    const auto& xd = x.data();
    for (long o = 0; o < outer; ++o)
        for (long i = 0; i < inner; ++i) {
            const auto at = [&](long j) { return (o * n + j) * inner + i; };
            T mx = xd[static_cast<size_t>(at(0))];
            for (long j = 1; j < n; ++j) mx = std::max(mx, xd[static_cast<size_t>(at(j))]);
            T denom = 0;
            for (long j = 0; j < n; ++j) {
                const T e = std::exp(xd[static_cast<size_t>(at(j))] - mx);
                out[static_cast<size_t>(at(j))] = e;
                denom += e;
            }
            for (long j = 0; j < n; ++j) out[static_cast<size_t>(at(j))] /= denom;
        }
    detail::finite_or_throw(out, "softmax");
    Tape<T>* tape = detail::common_tape<T>({&x});
    const long nx = x.node();
    auto saved = std::make_shared<std::vector<T>>(out);
    return detail::finish(tape, x.shape(), std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            auto& gx = tp.grad_buffer(nx);
            for (long o = 0; o < outer; ++o)
                for (long i = 0; i < inner; ++i) {
                    const auto at = [&](long j) {
                        return static_cast<size_t>((o * n + j) * inner + i);
                    };
                    T dot = 0;
                    for (long j = 0; j < n; ++j) dot += go[at(j)] * (*saved)[at(j)];
                    for (long j = 0; j < n; ++j)
                        gx[at(j)] += (*saved)[at(j)] * (go[at(j)] - dot);
                }
        };
    });
}

template <typename T>
Tensor<T> logsoftmax(const Tensor<T>& x, int axis) {
    if (axis < 0 || axis >= x.rank())
        throw std::invalid_argument("logsoftmax: axis out of range");
    const Shape& s = x.shape();
    long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (int i = axis + 1; i < x.rank(); ++i) inner *= s[static_cast<size_t>(i)];
    const long n = s[static_cast<size_t>(axis)];

    std::vector<T> out(x.data().size());
    const auto& xd = x.data();
    for (long o = 0; o < outer; ++o)
        for (long i = 0; i < inner; ++i) {
            const auto at = [&](long j) { return static_cast<size_t>((o * n + j) * inner + i); };
            T mx = xd[at(0)];
            for (long j = 1; j < n; ++j) mx = std::max(mx, xd[at(j)]);
            T denom = 0;
            for (long j = 0; j < n; ++j) denom += std::exp(xd[at(j)] - mx);
            const T lse = mx + std::log(denom);
            for (long j = 0; j < n; ++j) out[at(j)] = xd[at(j)] - lse;
        }
    detail::finite_or_throw(out, "logsoftmax");
    Tape<T>* tape = detail::common_tape<T>({&x});
    const long nx = x.node();
    auto saved = std::make_shared<std::vector<T>>(out);
    return detail::finish(tape, x.shape(), std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            auto& gx = tp.grad_buffer(nx);
            for (long o = 0; o < outer; ++o)
                for (long i = 0; i < inner; ++i) {
                    const auto at = [&](long j) {
                        return static_cast<size_t>((o * n + j) * inner + i);
                    };
                    T gsum = 0;
                    for (long j = 0; j < n; ++j) gsum += go[at(j)];
                    for (long j = 0; j < n; ++j)
                        gx[at(j)] += go[at(j)] - std::exp((*saved)[at(j)]) * gsum;
                }
        };
    });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    std::vector<T> out(x.data());
    for (auto& v : out) {
        const double xv = static_cast<double>(v);
        v = static_cast<T>(0.5 * xv * (1.0 + std::erf(xv * inv_sqrt2)));
    }
    detail::finite_or_throw(out, "gelu");
    Tape<T>* tape = detail::common_tape<T>({&x});
    const long nx = x.node();
    auto px = x.data_ptr();
    return detail::finish(tape, x.shape(), std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            auto& gx = tp.grad_buffer(nx);
            for (size_t i = 0; i < go.size(); ++i) {
                const double xv = static_cast<double>((*px)[i]);
                const double phi = 0.5 * (1.0 + std::erf(xv * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * xv * xv);
                gx[i] += go[i] * static_cast<T>(phi + xv * pdf);
            }
        };
    });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    std::vector<T> out(x.data());
    for (auto& v : out) {
        if (v >= T(0)) {
            v = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            v = e / (T(1) + e);
        }
    }
    detail::finite_or_throw(out, "sigmoid");
    Tape<T>* tape = detail::common_tape<T>({&x});
    const long nx = x.node();
    auto saved = std::make_shared<std::vector<T>>(out);
    return detail::finish(tape, x.shape(), std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            auto& gx = tp.grad_buffer(nx);
            for (size_t i = 0; i < go.size(); ++i) {
                const T y = (*saved)[i];
                gx[i] += go[i] * y * (T(1) - y);
            }
        };
    });
}

template <typename T>
Tensor<T> exp_of(const Tensor<T>& x) {
    std::vector<T> out(x.data());
    for (auto& v : out) v = std::exp(v);
    detail::finite_or_throw(out, "exp");
    Tape<T>* tape = detail::common_tape<T>({&x});
    const long nx = x.node();
    auto saved = std::make_shared<std::vector<T>>(out);
    return detail::finish(tape, x.shape(), std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            auto& gx = tp.grad_buffer(nx);
            for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * (*saved)[i];
        };
    });
}

template <typename T>
Tensor<T> log_of(const Tensor<T>& x) {
    std::vector<T> out(x.data());
    for (auto& v : out) v = std::log(v);
    detail::finite_or_throw(out, "log");
    Tape<T>* tape = detail::common_tape<T>({&x});
    const long nx = x.node();
    auto px = x.data_ptr();
    return detail::finish(tape, x.shape(), std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            auto& gx = tp.grad_buffer(nx);
            for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i] / (*px)[i];
        };
    });
}

template <typename T>
Tensor<T> abs_of(const Tensor<T>& x) {
    std::vector<T> out(x.data());
    for (auto& v : out) v = std::abs(v);
    Tape<T>* tape = detail::common_tape<T>({&x});
    const long nx = x.node();
    auto px = x.data_ptr();
    return detail::finish(tape, x.shape(), std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            auto& gx = tp.grad_buffer(nx);
            for (size_t i = 0; i < go.size(); ++i) {
                const T xv = (*px)[i];
                gx[i] += go[i] * (xv > T(0) ? T(1) : (xv < T(0) ? T(-1) : T(0)));
            }
        };
    });
}

// Gradient passes where lo <= x <= hi and is cut outside.
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    std::vector<T> out(x.data());
    for (auto& v : out) v = std::min(hi, std::max(lo, v));
    Tape<T>* tape = detail::common_tape<T>({&x});
    const long nx = x.node();
    auto px = x.data_ptr();
    return detail::finish(tape, x.shape(), std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            auto& gx = tp.grad_buffer(nx);
            for (size_t i = 0; i < go.size(); ++i) {
                const T xv = (*px)[i];
                if (xv >= lo && xv <= hi) gx[i] += go[i];
            }
        };
    });
}

// Elementwise Smooth L1 with transition point 1: 0.5x^2 for |x|<1, |x|-0.5 else.
template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& x) {
    std::vector<T> out(x.data());
    for (auto& v : out) {
        const T a = std::abs(v);
        v = a < T(1) ? T(0.5) * v * v : a - T(0.5);
    }
    detail::finite_or_throw(out, "smooth_l1");
    Tape<T>* tape = detail::common_tape<T>({&x});
    const long nx = x.node();
    auto px = x.data_ptr();
    return detail::finish(tape, x.shape(), std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            auto& gx = tp.grad_buffer(nx);
            for (size_t i = 0; i < go.size(); ++i) {
                const T xv = (*px)[i];
                const T d = std::abs(xv) < T(1) ? xv : (xv > T(0) ? T(1) : T(-1));
                gx[i] += go[i] * d;
            }
        };
    });
}

// Normalizes over the last axis (the feature vector), then applies the
// affine parameters.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    const long d = x.dim(x.rank() - 1);
    if (gamma.numel() != d || beta.numel() != d)
        throw std::invalid_argument("layer_norm: affine parameter size mismatch");
    const long rows = x.numel() / d;

    std::vector<T> out(x.data().size());
    auto xhat = std::make_shared<std::vector<T>>(x.data().size());
    auto rstd = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
    const auto& xd = x.data();
    const auto& gd = gamma.data();
    const auto& bd = beta.data();
    for (long r = 0; r < rows; ++r) {
        const T* row = xd.data() + r * d;
        T mu = 0;
        for (long i = 0; i < d; ++i) mu += row[i];
        mu /= static_cast<T>(d);
        T var = 0;
        for (long i = 0; i < d; ++i) {
            const T c = row[i] - mu;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T rs = T(1) / std::sqrt(var + eps);
        (*rstd)[static_cast<size_t>(r)] = rs;
        for (long i = 0; i < d; ++i) {
            const T xh = (row[i] - mu) * rs;
            (*xhat)[static_cast<size_t>(r * d + i)] = xh;
            out[static_cast<size_t>(r * d + i)] = xh * gd[static_cast<size_t>(i)] +
                                                  bd[static_cast<size_t>(i)];
        }
    }
    detail::finite_or_throw(out, "layer_norm");
    Tape<T>* tape = detail::common_tape<T>({&x, &gamma, &beta});
    const bool tx = detail::tracked(x), tg = detail::tracked(gamma), tb = detail::tracked(beta);
    const long nx = x.node(), ng = gamma.node(), nb = beta.node();
    auto pg = gamma.data_ptr();
    return detail::finish(tape, x.shape(), std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            for (long r = 0; r < rows; ++r) {
                const size_t base = static_cast<size_t>(r * d);
                if (tg) {
                    auto& gg = tp.grad_buffer(ng);
                    for (long i = 0; i < d; ++i)
                        gg[static_cast<size_t>(i)] +=
                            go[base + i] * (*xhat)[base + static_cast<size_t>(i)];
                }
                if (tb) {
                    auto& gb = tp.grad_buffer(nb);
                    for (long i = 0; i < d; ++i) gb[static_cast<size_t>(i)] += go[base + i];
                }
                if (tx) {
                    auto& gx = tp.grad_buffer(nx);
                    T mean_dxhat = 0, mean_dxhat_xhat = 0;
                    for (long i = 0; i < d; ++i) {
                        const T dxh = go[base + i] * (*pg)[static_cast<size_t>(i)];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * (*xhat)[base + static_cast<size_t>(i)];
                    }
                    mean_dxhat /= static_cast<T>(d);
                    mean_dxhat_xhat /= static_cast<T>(d);
                    const T rs = (*rstd)[static_cast<size_t>(r)];
                    for (long i = 0; i < d; ++i) {
                        const T dxh = go[base + i] * (*pg)[static_cast<size_t>(i)];
                        gx[base + i] += rs * (dxh - mean_dxhat -
                                              (*xhat)[base + static_cast<size_t>(i)] *
                                                  mean_dxhat_xhat);
                    }
                }
            }
        };
    });
}

// ---------------------------------------------------------------------------
// Cosine geometry

// Pairwise cosine similarities between rows: (N,d) x (M,d) -> (N,M).
// Zero-norm rows yield similarity 0 (logged once) and pass no gradient.
template <typename T>
Tensor<T> rows_cosine(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw std::invalid_argument("rows_cosine: incompatible shapes " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    const long n = a.dim(0), m = b.dim(0), d = a.dim(1);
    const auto& ad = a.data();
    const auto& bd = b.data();

    auto norms_a = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
    auto norms_b = std::make_shared<std::vector<T>>(static_cast<size_t>(m));
    for (long i = 0; i < n; ++i) {
        T s = 0;
        for (long k = 0; k < d; ++k) s += ad[i * d + k] * ad[i * d + k];
        (*norms_a)[static_cast<size_t>(i)] = std::sqrt(s);
    }
    for (long j = 0; j < m; ++j) {
        T s = 0;
        for (long k = 0; k < d; ++k) s += bd[j * d + k] * bd[j * d + k];
        (*norms_b)[static_cast<size_t>(j)] = std::sqrt(s);
    }

    std::vector<T> out(static_cast<size_t>(n * m), T(0));
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < m; ++j) {
            const T na = (*norms_a)[static_cast<size_t>(i)];
            const T nb = (*norms_b)[static_cast<size_t>(j)];
            if (na == T(0) || nb == T(0)) {
                detail::warn_zero_norm_once();
                continue;
            }
            T dot = 0;
            for (long k = 0; k < d; ++k) dot += ad[i * d + k] * bd[j * d + k];
            // Clamp away float round-off outside [-1,1].
            out[static_cast<size_t>(i * m + j)] =
                std::min(T(1), std::max(T(-1), dot / (na * nb)));
        }
    detail::finite_or_throw(out, "rows_cosine");
    Tape<T>* tape = detail::common_tape<T>({&a, &b});
    const bool ta = detail::tracked(a), tb = detail::tracked(b);
    const long nna = a.node(), nnb = b.node();
    auto pa = a.data_ptr();
    auto pb = b.data_ptr();
    auto saved = std::make_shared<std::vector<T>>(out);
    return detail::finish(tape, Shape{n, m}, std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            for (long i = 0; i < n; ++i)
                for (long j = 0; j < m; ++j) {
                    const T g = go[static_cast<size_t>(i * m + j)];
                    if (g == T(0)) continue;
                    const T na = (*norms_a)[static_cast<size_t>(i)];
                    const T nb = (*norms_b)[static_cast<size_t>(j)];
                    if (na == T(0) || nb == T(0)) continue;
                    const T c = (*saved)[static_cast<size_t>(i * m + j)];
                    if (ta) {
                        auto& ga = tp.grad_buffer(nna);
                        for (long k = 0; k < d; ++k) {
                            const T av = (*pa)[static_cast<size_t>(i * d + k)];
                            const T bv = (*pb)[static_cast<size_t>(j * d + k)];
                            ga[static_cast<size_t>(i * d + k)] +=
                                g * (bv / (na * nb) - c * av / (na * na));
                        }
                    }
                    if (tb) {
                        auto& gb = tp.grad_buffer(nnb);
                        for (long k = 0; k < d; ++k) {
                            const T av = (*pa)[static_cast<size_t>(i * d + k)];
                            const T bv = (*pb)[static_cast<size_t>(j * d + k)];
                            gb[static_cast<size_t>(j * d + k)] +=
                                g * (av / (na * nb) - c * bv / (nb * nb));
                        }
                    }
                }
        };
    });
}

// cos(a, b) for two vectors; scale-invariant in each argument.
template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.numel() != b.numel())
        throw std::invalid_argument("cosine_similarity: length mismatch");
    Tensor<T> a2 = reshape(a, Shape{1, a.numel()});
    Tensor<T> b2 = reshape(b, Shape{1, b.numel()});
    return reshape(rows_cosine(a2, b2), Shape{});
}

// Unit-normalizes each row; zero rows pass through unchanged (logged once).
template <typename T>
Tensor<T> rows_normalize(const Tensor<T>& x) {
    if (x.rank() != 2) throw std::invalid_argument("rows_normalize: expected a 2-D tensor");
    const long n = x.dim(0), d = x.dim(1);
    const auto& xd = x.data();
    auto norms = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
    std::vector<T> out(xd.size());
    for (long i = 0; i < n; ++i) {
        T s = 0;
        for (long k = 0; k < d; ++k) s += xd[i * d + k] * xd[i * d + k];
        const T norm = std::sqrt(s);
        (*norms)[static_cast<size_t>(i)] = norm;
        if (norm == T(0)) {
            detail::warn_zero_norm_once();
            for (long k = 0; k < d; ++k) out[static_cast<size_t>(i * d + k)] = T(0);
        } else {
            for (long k = 0; k < d; ++k)
                out[static_cast<size_t>(i * d + k)] = xd[i * d + k] / norm;
        }
    }
    detail::finite_or_throw(out, "rows_normalize");
    Tape<T>* tape = detail::common_tape<T>({&x});
    const long nx = x.node();
    auto saved = std::make_shared<std::vector<T>>(out);
    return detail::finish(tape, x.shape(), std::move(out), [=](long no) {
        return [=](Tape<T>& tp) {
            const auto& go = tp.grad_buffer(no);
            auto& gx = tp.grad_buffer(nx);
            for (long i = 0; i < n; ++i) {
                const T norm = (*norms)[static_cast<size_t>(i)];
                if (norm == T(0)) continue;
                T dot = 0;
                for (long k = 0; k < d; ++k)
                    dot += go[static_cast<size_t>(i * d + k)] *
                           (*saved)[static_cast<size_t>(i * d + k)];
                for (long k = 0; k < d; ++k)
                    gx[static_cast<size_t>(i * d + k)] +=
                        (go[static_cast<size_t>(i * d + k)] -
                         (*saved)[static_cast<size_t>(i * d + k)] * dot) /
                        norm;
            }
        };
    });
}

// ---------------------------------------------------------------------------
// Index table builders (plain helpers; feed gather())

inline IndexTable make_index_table(std::vector<long> idx) {
    return std::make_shared<const std::vector<long>>(std::move(idx));
}

// Permutes tensor axes: out[perm-order coords] = in[coords].
inline IndexTable build_permute_table(const Shape& in_shape, const std::vector<int>& perm,
                                      Shape* out_shape) {
    const int rank = static_cast<int>(in_shape.size());
    Shape os(static_cast<size_t>(rank));
    for (int i = 0; i < rank; ++i) os[static_cast<size_t>(i)] = in_shape[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    const Shape in_strides = shape_strides(in_shape);
    const Shape out_strides = shape_strides(os);
    const long n = shape_numel(os);
    std::vector<long> idx(static_cast<size_t>(n));
    for (long flat = 0; flat < n; ++flat) {
        long rem = flat, src = 0;
        for (int i = 0; i < rank; ++i) {
            const long coord = rem / out_strides[static_cast<size_t>(i)];
            rem %= out_strides[static_cast<size_t>(i)];
            src += coord * in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
        }
        idx[static_cast<size_t>(flat)] = src;
    }
    if (out_shape) *out_shape = os;
    return make_index_table(std::move(idx));
}

// Slice [start, start+len) along an axis.
inline IndexTable build_slice_table(const Shape& in_shape, int axis, long start, long len,
                                    Shape* out_shape) {
    Shape os = in_shape;
    os[static_cast<size_t>(axis)] = len;
    long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= in_shape[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < in_shape.size(); ++i)
        inner *= in_shape[i];
    const long n_in = in_shape[static_cast<size_t>(axis)];
    std::vector<long> idx;
    idx.reserve(static_cast<size_t>(outer * len * inner));
    for (long o = 0; o < outer; ++o)
        for (long j = start; j < start + len; ++j)
            for (long i = 0; i < inner; ++i) idx.push_back((o * n_in + j) * inner + i);
    if (out_shape) *out_shape = os;
    return make_index_table(std::move(idx));
}

// Tiles a whole tensor `repeat` times along a new leading axis.
inline IndexTable build_tile_table(long numel, long repeat) {
    std::vector<long> idx;
    idx.reserve(static_cast<size_t>(numel * repeat));
    for (long r = 0; r < repeat; ++r)
        for (long i = 0; i < numel; ++i) idx.push_back(i);
    return make_index_table(std::move(idx));
}

// Picks rows of a 2-D tensor (duplicates allowed).
inline IndexTable build_row_select_table(long row_len, const std::vector<long>& rows) {
    std::vector<long> idx;
    idx.reserve(rows.size() * static_cast<size_t>(row_len));
    for (long r : rows)
        for (long k = 0; k < row_len; ++k) idx.push_back(r * row_len + k);
    return make_index_table(std::move(idx));
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
    Shape out_shape;
    IndexTable t = build_permute_table(x.shape(), perm, &out_shape);
    return gather(x, t, out_shape);
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, long start, long len) {
    if (axis < 0 || axis >= x.rank()) throw std::invalid_argument("slice: axis out of range");
    if (start < 0 || start + len > x.dim(axis))
        throw std::invalid_argument("slice: range out of bounds");
    Shape out_shape;
    IndexTable t = build_slice_table(x.shape(), axis, start, len, &out_shape);
    return gather(x, t, out_shape);
}

// Selects rows of a 2-D tensor: (N,d) -> (|rows|,d).
template <typename T>
Tensor<T> select_rows(const Tensor<T>& x, const std::vector<long>& rows) {
    if (x.rank() != 2) throw std::invalid_argument("select_rows: expected a 2-D tensor");
    IndexTable t = build_row_select_table(x.dim(1), rows);
    return gather(x, t, Shape{static_cast<long>(rows.size()), x.dim(1)});
}

}  // namespace metor
