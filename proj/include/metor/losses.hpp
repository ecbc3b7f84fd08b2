#pragma once

#include "metor/nn.hpp"

// The training objective: relationship/object contrastive terms, the
// trajectory term (Smooth L1 boxes + temporal consistency), the two
// contextual terms, and their weighted composition
//   total = rel_ctr + obj_ctr + theta_traj*(box + theta_cst*cst)
//         + theta_ctx*(rel_ctx + obj_ctx)  [+ aux_weight*aux]
// where aux carries the detection plumbing (candidate classification,
// candidate boxes, presence suppression) that the composition above does
// not cover.

namespace metor {

inline constexpr double kBceClamp = 1e-7;

template <typename T>
struct LossBreakdown {
    double rel_ctr = 0;
    double obj_ctr = 0;
    double box = 0;
    double cst = 0;
    double rel_ctx = 0;
    double obj_ctx = 0;
    double aux = 0;
    double total = 0;
    long matched_pairs = 0;
    Tensor<T> total_tensor;  // on the tape; backward target
};

// Elementwise binary cross-entropy on probabilities, clamped away from the
// log singularities. Targets are plain (no gradient).
template <typename T>
Tensor<T> bce_elements(const Tensor<T>& probs, const Tensor<T>& targets) {
    if (probs.shape() != targets.shape())
        throw std::invalid_argument("bce: shape mismatch " + shape_str(probs.shape()) + " vs " +
                                    shape_str(targets.shape()));
    Tensor<T> p = clamp(probs, static_cast<T>(kBceClamp), T(1) - static_cast<T>(kBceClamp));
    Tensor<T> one_minus_p =
        clamp(affine(probs, T(-1), T(1)), static_cast<T>(kBceClamp),
              T(1) - static_cast<T>(kBceClamp));
    Tensor<T> pos = mul(targets, log_of(p));
    Tensor<T> negt = mul(affine(targets, T(-1), T(1)), log_of(one_minus_p));
    return neg(add(pos, negt));
}

// Relationship contrastive term: BCE over base-relation columns summed per
// pair, divided by |base relations|, averaged over matched pairs.
// scores: (P, Cb) sigmoid probabilities restricted to base columns;
// targets: (P, Cb) multi-hot.
template <typename T>
Tensor<T> rel_contrastive_loss(const Tensor<T>& scores, const Tensor<T>& targets) {
    const long pairs = scores.dim(0);
    const long base_count = scores.dim(1);
    Tensor<T> bce = bce_elements(scores, targets);
    return affine(sum_all(bce), T(1) / static_cast<T>(pairs * base_count), T(0));
}

// Object contrastive term: CE(subject) + CE(object) on gamma-scaled cosine
// logits over base categories, each a mean over matched pairs.
template <typename T>
Tensor<T> cross_entropy_mean(const Tensor<T>& logits, const std::vector<long>& labels) {
    const long n = logits.dim(0);
    const long c = logits.dim(1);
    if (static_cast<long>(labels.size()) != n)
        throw std::invalid_argument("cross_entropy: label count mismatch");
    for (long lab : labels)
        if (lab < 0 || lab >= c)
            throw DataError("cross_entropy: label " + std::to_string(lab) +
                            " outside the class set (base-only training violated?)");
    Tensor<T> ls = logsoftmax(logits, 1);
    std::vector<long> flat;
    flat.reserve(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) flat.push_back(i * c + labels[static_cast<size_t>(i)]);
    IndexTable table = make_index_table(std::move(flat));
    Tensor<T> picked = gather(ls, table, Shape{n});
    return neg(mean_all(picked));
}

template <typename T>
Tensor<T> obj_contrastive_loss(const Tensor<T>& subject_logits,
                               const std::vector<long>& subject_labels,
                               const Tensor<T>& object_logits,
                               const std::vector<long>& object_labels) {
    return add(cross_entropy_mean(subject_logits, subject_labels),
               cross_entropy_mean(object_logits, object_labels));
}

// One entity's boxes over its ground-truth extent: predictions on the tape,
// targets plain, both normalized center form (L,4).
template <typename T>
struct EntityBoxes {
    Tensor<T> pred;
    Tensor<T> target;
};

// box: per entity, mean over frames of the per-box Smooth L1 (itself a mean
// over the 4 coordinates). cst: per entity, mean over consecutive-frame
// gaps of the L1 displacement (defined as 0 for single-frame extents).
// Both are summed over entities and divided by `normalizer` (the number of
// matched pairs).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> trajectory_loss(const std::vector<EntityBoxes<T>>& entities,
                                                long normalizer) {
    Tensor<T> box = Tensor<T>::scalar(T(0));
    Tensor<T> cst = Tensor<T>::scalar(T(0));
    for (const auto& e : entities) {
        const long frames = e.pred.dim(0);
        if (e.target.shape() != e.pred.shape())
            throw std::invalid_argument("trajectory_loss: pred/target shape mismatch");
        Tensor<T> sl1 = smooth_l1(sub(e.pred, e.target));
        box = add(box, affine(sum_all(sl1), T(1) / static_cast<T>(4 * frames), T(0)));
        if (frames > 1) {
            Tensor<T> head = slice(e.pred, 0, 0, frames - 1);
            Tensor<T> tail = slice(e.pred, 0, 1, frames - 1);
            Tensor<T> l1 = abs_of(sub(tail, head));
            cst = add(cst, affine(sum_all(l1), T(1) / static_cast<T>(frames - 1), T(0)));
        }
    }
    const T inv = normalizer > 0 ? T(1) / static_cast<T>(normalizer) : T(0);
    return {affine(box, inv, T(0)), affine(cst, inv, T(0))};
}

// Contextual term for one kind: BCE between per-frame context/category
// scores (T, Cb) and the frame-presence multi-hot, mean over categories and
// frames.
template <typename T>
Tensor<T> contextual_loss(const Tensor<T>& frame_scores, const Tensor<T>& presence) {
    return mean_all(bce_elements(frame_scores, presence));
}

struct LossWeights {
    double theta_traj = 1.0;
    double theta_ctx = 0.2;
    double theta_cst = 0.1;
    double aux_weight = 1.0;
};

// Composes the total exactly as the breakdown invariant states; each
// component must be finite.
template <typename T>
LossBreakdown<T> total_loss(const Tensor<T>& rel_ctr, const Tensor<T>& obj_ctr,
                            const Tensor<T>& box, const Tensor<T>& cst,
                            const Tensor<T>& rel_ctx, const Tensor<T>& obj_ctx,
                            const Tensor<T>& aux, const LossWeights& w) {
    auto check = [](const Tensor<T>& t, const char* name) {
        if (!std::isfinite(static_cast<double>(t.value())))
            throw NumericError(std::string("loss component '") + name + "' is non-finite");
    };
    check(rel_ctr, "rel_ctr");
    check(obj_ctr, "obj_ctr");
    check(box, "box");
    check(cst, "cst");
    check(rel_ctx, "rel_ctx");
    check(obj_ctx, "obj_ctx");
    check(aux, "aux");

    Tensor<T> traj = add(box, affine(cst, static_cast<T>(w.theta_cst), T(0)));
    Tensor<T> ctx_sum = add(rel_ctx, obj_ctx);
    Tensor<T> total = add(add(rel_ctr, obj_ctr),
                          add(affine(traj, static_cast<T>(w.theta_traj), T(0)),
                              affine(ctx_sum, static_cast<T>(w.theta_ctx), T(0))));
    total = add(total, affine(aux, static_cast<T>(w.aux_weight), T(0)));

    LossBreakdown<T> out;
    out.rel_ctr = static_cast<double>(rel_ctr.value());
    out.obj_ctr = static_cast<double>(obj_ctr.value());
    out.box = static_cast<double>(box.value());
    out.cst = static_cast<double>(cst.value());
    out.rel_ctx = static_cast<double>(rel_ctx.value());
    out.obj_ctx = static_cast<double>(obj_ctx.value());
    out.aux = static_cast<double>(aux.value());
    out.total = static_cast<double>(total.value());
    out.total_tensor = total;
    return out;
}

}  // namespace metor
