#pragma once

#include "metor/encoder.hpp"
#include "metor/hungarian.hpp"

// Query-based object decoding and the shared prediction heads: per-frame
// Transformer decoding of refined queries against patch embeddings,
// trajectory regression (boxes + presence), cosine/text classification,
// top-K pair formation, and optimal query <-> ground-truth assignment.

namespace metor {

// Candidate object derived from one query in one segment. Frames are local
// to the segment; boxes are normalized center form per frame.
struct Candidate {
    long query = 0;
    long begin = 0, end = 0;              // local frame extent [begin, end)
    std::vector<std::array<double, 4>> boxes;  // per frame over the whole segment
    std::vector<double> presence;              // sigmoid presence per frame
    std::vector<double> scores;                // per category, sigmoid cosine
    double best_score = 0;
    int best_category = -1;
};

// Longest run of frames with presence >= threshold, earliest on ties.
inline std::pair<long, long> presence_extent(const std::vector<double>& presence,
                                             double threshold) {
    long best_start = 0, best_len = 0, start = -1;
    const long n = static_cast<long>(presence.size());
    for (long i = 0; i <= n; ++i) {
        const bool on = i < n && presence[static_cast<size_t>(i)] >= threshold;
        if (on && start < 0) start = i;
        if (!on && start >= 0) {
            if (i - start > best_len) {
                best_len = i - start;
                best_start = start;
            }
            start = -1;
        }
    }
    return {best_start, best_start + best_len};  // empty run: [0,0)
}

// MLP head emitting per-frame (cx,cy,w,h) squashed to [0,1] plus a raw
// presence logit.
template <typename T>
class TrajectoryHead {
public:
    TrajectoryHead() = default;
    TrajectoryHead(nn::ParamRegistry<T>& reg, const std::string& prefix, long dim,
                   std::uint64_t seed)
        : mlp_(reg, prefix, dim, dim, 5, seed) {}

    struct Output {
        Tensor<T> boxes;            // (..., 4) in [0,1]
        Tensor<T> presence_logits;  // (..., 1)
    };

    Output apply(nn::Ctx<T>& ctx, const Tensor<T>& features) const {
        Tensor<T> raw = mlp_.apply(ctx, features);
        const int last = raw.rank() - 1;
        Output out;
        out.boxes = sigmoid(slice(raw, last, 0, 4));
        out.presence_logits = slice(raw, last, 4, 1);
        return out;
    }

private:
    nn::Mlp<T> mlp_;
};

// sigma(gamma * cos(features, text_rows)); gamma is a learnable scalar so the
// cosine range can spread before the sigmoid/CE.
template <typename T>
class CosineClassifier {
public:
    CosineClassifier() = default;
    CosineClassifier(nn::ParamRegistry<T>& reg, const std::string& name, double gamma_init)
        : gamma_(reg.create(name + ".gamma", Tensor<T>::scalar(static_cast<T>(gamma_init)))) {}

    // features: (N,d), text_rows: (C,d) -> logits (N,C)
    Tensor<T> logits(nn::Ctx<T>& ctx, const Tensor<T>& features,
                     const Tensor<T>& text_rows) const {
        return scale_by(rows_cosine(features, text_rows), ctx.use(gamma_));
    }

    Tensor<T> scores(nn::Ctx<T>& ctx, const Tensor<T>& features,
                     const Tensor<T>& text_rows) const {
        return sigmoid(logits(ctx, features, text_rows));
    }

    nn::Param<T>* gamma() const { return gamma_; }

private:
    nn::Param<T>* gamma_ = nullptr;
};

// Per-frame Transformer decoder over refined queries and patch embeddings;
// the output is rearranged to (Nq, T, d) so a query indexes one candidate
// across frames.
template <typename T>
class ObjectDecoder {
public:
    ObjectDecoder() = default;
    ObjectDecoder(nn::ParamRegistry<T>& reg, const ModelConfig& m, std::uint64_t seed) {
        for (long i = 0; i < m.decoder_layers; ++i)
            blocks_.emplace_back(reg, "decoder.block" + std::to_string(i), m.dim, m.heads, seed);
    }

    // refined_queries: (T,Nq,d), patches: (T,Np,d) -> (Nq,T,d)
    Tensor<T> apply(nn::Ctx<T>& ctx, const Tensor<T>& refined_queries,
                    const Tensor<T>& patches,
                    std::vector<std::vector<T>>* cross_weights = nullptr) const {
        Tensor<T> x = refined_queries;
        for (const auto& block : blocks_) {
            std::vector<T> w;
            x = block.apply(ctx, x, patches, cross_weights ? &w : nullptr);
            if (cross_weights) cross_weights->push_back(std::move(w));
        }
        return permute(x, {1, 0, 2});
    }

private:
    std::vector<nn::DecoderBlock<T>> blocks_;
};

// --- assignment --------------------------------------------------------------

struct Assignment {
    // aligned with the segment's gt_objects order
    std::vector<int> track_to_query;
    std::vector<char> query_matched;  // size Nq
};

// DETR-style matching cost: lambda_cls * (1 - S[q][class]) + lambda_box *
// (mean per-frame L1 distance between normalized center-form boxes), both
// evaluated over the ground-truth track's extent.
inline constexpr double kAssignLambdaCls = 1.0;
inline constexpr double kAssignLambdaBox = 5.0;

// Plain-value view of per-query predictions inside one segment: features
// (Nq,T,d), normalized center-form boxes (Nq,T,4), and the text rows (C,d)
// the class scores are taken against.
template <typename T>
struct AssignInputs {
    long num_queries = 0;
    long frames = 0;
    long dim = 0;
    const std::vector<T>* features = nullptr;
    const std::vector<T>* boxes = nullptr;
    const std::vector<T>* text_rows = nullptr;  // indexed by absolute category id
    long text_dim = 0;
    double gamma = 10.0;
    long segment_begin = 0;
    double frame_w = 1.0, frame_h = 1.0;
};

template <typename T>
std::vector<std::vector<double>> assignment_cost_matrix(
    const std::vector<ObjectTrack>& gt_objects, const AssignInputs<T>& in) {
    const long d = in.dim;
    std::vector<std::vector<double>> cost(
        gt_objects.size(), std::vector<double>(static_cast<size_t>(in.num_queries), 0.0));
    for (size_t g = 0; g < gt_objects.size(); ++g) {
        const auto& track = gt_objects[g];
        const long lo = track.traj.begin_fid - in.segment_begin;
        const long hi = track.traj.end_fid - in.segment_begin;
        const long extent = hi - lo;
        for (long q = 0; q < in.num_queries; ++q) {
            std::vector<double> pooled(static_cast<size_t>(d), 0.0);
            for (long f = lo; f < hi; ++f)
                for (long k = 0; k < d; ++k)
                    pooled[static_cast<size_t>(k)] += static_cast<double>(
                        (*in.features)[static_cast<size_t>((q * in.frames + f) * d + k)]);
            double norm_p = 0, dot = 0, norm_t = 0;
            for (long k = 0; k < d; ++k) {
                const double pv = pooled[static_cast<size_t>(k)];
                const double tv = static_cast<double>(
                    (*in.text_rows)[static_cast<size_t>(track.category * in.text_dim + k)]);
                norm_p += pv * pv;
                dot += pv * tv;
                norm_t += tv * tv;
            }
            double cosv = 0;
            if (norm_p > 0 && norm_t > 0) cosv = dot / std::sqrt(norm_p * norm_t);
            const double score = 1.0 / (1.0 + std::exp(-in.gamma * cosv));

            double l1 = 0;
            for (long f = lo; f < hi; ++f) {
                const auto gt = track.traj.boxes[static_cast<size_t>(f + in.segment_begin -
                                                                     track.traj.begin_fid)]
                                    .to_center_norm(in.frame_w, in.frame_h);
                const size_t base = static_cast<size_t>((q * in.frames + f) * 4);
                for (int k = 0; k < 4; ++k)
                    l1 += std::abs(static_cast<double>((*in.boxes)[base + static_cast<size_t>(k)]) -
                                   gt[static_cast<size_t>(k)]);
            }
            cost[g][static_cast<size_t>(q)] =
                kAssignLambdaCls * (1.0 - score) +
                kAssignLambdaBox * (l1 / static_cast<double>(extent));
        }
    }
    return cost;
}

template <typename T>
Assignment assign_targets(const std::vector<ObjectTrack>& gt_objects,
                          const AssignInputs<T>& in) {
    Assignment out;
    out.query_matched.assign(static_cast<size_t>(in.num_queries), 0);
    if (gt_objects.empty()) return out;
    if (static_cast<long>(gt_objects.size()) > in.num_queries)
        throw DataError("assignment: more ground-truth tracks (" +
                        std::to_string(gt_objects.size()) + ") than queries (" +
                        std::to_string(in.num_queries) + "); raise model.num_queries");
    const auto cost = assignment_cost_matrix(gt_objects, in);
    out.track_to_query = hungarian_assign(cost);
    for (int q : out.track_to_query) out.query_matched[static_cast<size_t>(q)] = 1;
    return out;
}

// --- candidate extraction and pair formation ---------------------------------

// Builds per-query candidates from plain head values, applying the presence
// run rule and the classification keep-threshold.
inline std::vector<Candidate> extract_candidates(
    long num_queries, long frames, long num_categories,
    const std::vector<double>& boxes,       // (Nq,T,4)
    const std::vector<double>& presence,    // (Nq,T)
    const std::vector<double>& scores,      // (Nq,C) pooled over each extent
    double presence_threshold, double score_threshold) {
    std::vector<Candidate> out;
    for (long q = 0; q < num_queries; ++q) {
        Candidate c;
        c.query = q;
        c.presence.assign(presence.begin() + q * frames, presence.begin() + (q + 1) * frames);
        const auto [b, e] = presence_extent(c.presence, presence_threshold);
        if (e <= b) continue;  // no frame passes: dropped
        c.begin = b;
        c.end = e;
        c.boxes.resize(static_cast<size_t>(frames));
        for (long f = 0; f < frames; ++f)
            for (int k = 0; k < 4; ++k)
                c.boxes[static_cast<size_t>(f)][static_cast<size_t>(k)] =
                    boxes[static_cast<size_t>((q * frames + f) * 4 + k)];
        c.scores.assign(scores.begin() + q * num_categories,
                        scores.begin() + (q + 1) * num_categories);
        c.best_category = 0;
        for (long k = 0; k < num_categories; ++k)
            if (c.scores[static_cast<size_t>(k)] > c.scores[static_cast<size_t>(c.best_category)])
                c.best_category = static_cast<int>(k);
        c.best_score = c.scores[static_cast<size_t>(c.best_category)];
        if (c.best_score < score_threshold) continue;
        out.push_back(std::move(c));
    }
    return out;
}

// Top-K candidates by best class score (ties by query index ascending), then
// all ordered pairs of distinct candidates. Fewer than two candidates yield
// no pairs.
inline std::vector<std::pair<long, long>> form_pairs(std::vector<Candidate>& candidates,
                                                     long top_k) {
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.best_score != b.best_score) return a.best_score > b.best_score;
        return a.query < b.query;
    });
    if (static_cast<long>(candidates.size()) > top_k)
        candidates.resize(static_cast<size_t>(top_k));
    std::vector<std::pair<long, long>> pairs;
    for (size_t i = 0; i < candidates.size(); ++i)
        for (size_t j = 0; j < candidates.size(); ++j)
            if (i != j) pairs.emplace_back(static_cast<long>(i), static_cast<long>(j));
    return pairs;
}

}  // namespace metor
