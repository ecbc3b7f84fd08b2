#pragma once

#include "metor/detector.hpp"
#include "metor/enhance.hpp"
#include "metor/losses.hpp"
#include "metor/metrics.hpp"

// The full model: contextual refinement encoding, query-based object
// decoding, iterative subject/object/relationship enhancement, cosine/text
// classification heads, and the segment-level training objective and
// inference pipeline built on top of them.

namespace metor {

template <typename T>
class Model {
public:
    Model(const ModelConfig& m, const Vocabulary& vocab, std::uint64_t seed)
        : cfg_(m),
          vocab_(vocab),
          patch_embed_(reg_, m, seed),
          visual_(reg_, m, seed),
          query_refiner_(reg_, m, seed),
          text_(reg_, m, vocab, seed),
          decoder_(reg_, m, seed),
          traj_head_(reg_, "traj_head", m.dim, seed),
          obj_cls_(reg_, "cls_obj", m.gamma_init),
          rel_cls_(reg_, "cls_rel", m.gamma_init),
          ctx_cls_(reg_, "cls_ctx", m.gamma_init),
          enhancer_(reg_, m, seed) {
        if (m.freeze_encoders) {
            for (const auto& p : reg_.all()) {
                const auto& n = p->name;
                if (n.rfind("patch_embed.", 0) == 0 || n.rfind("visual.", 0) == 0 ||
                    n.rfind("text.block", 0) == 0 || n.rfind("prompt.obj_embed", 0) == 0 ||
                    n.rfind("prompt.rel_embed", 0) == 0)
                    p->trainable = false;
            }
        }
    }

    nn::ParamRegistry<T>& params() { return reg_; }
    const nn::ParamRegistry<T>& params() const { return reg_; }
    const ModelConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }

    bool use_context() const { return cfg_.context_refinement; }
    bool use_query_refinement() const { return cfg_.context_refinement && cfg_.query_refinement; }
    bool use_text_refinement() const { return cfg_.context_refinement && cfg_.text_refinement; }

    // --- shared encode path -------------------------------------------------

    struct Encoded {
        EncoderOutput<T> enc;
        Tensor<T> refined_queries;  // (T,Nq,d)
        Tensor<T> obj_feats;        // (Nq,T,d)
        Tensor<T> cand_boxes;       // (Nq,T,4)
        Tensor<T> cand_presence;    // (Nq,T,1) logits
        long frames = 0;
    };

    Encoded encode(nn::Ctx<T>& ctx, const Tensor<float>& frames_f32) const {
        Encoded out;
        Tensor<T> frames = cast_frames<T>(frames_f32);
        out.frames = frames.dim(0);
        Tensor<T> patch_tokens = patch_embed_.apply(ctx, frames);
        out.enc = visual_.apply(ctx, patch_tokens);
        out.refined_queries = query_refiner_.apply(
            ctx, use_context() ? out.enc.c_obj : placeholder_context(out.frames),
            use_query_refinement());
        out.obj_feats = decoder_.apply(ctx, out.refined_queries, out.enc.h_patch);
        auto heads = traj_head_.apply(ctx, out.obj_feats);
        out.cand_boxes = heads.boxes;
        out.cand_presence = heads.presence_logits;
        return out;
    }

    Tensor<T> object_text_rows(nn::Ctx<T>& ctx, const Encoded& enc,
                               const std::vector<long>& ids) const {
        const Tensor<T>* c = (use_context() && use_text_refinement()) ? &enc.enc.c_obj : nullptr;
        return text_.encode_object_rows(ctx, c, ids);
    }

    Tensor<T> relation_text_rows(nn::Ctx<T>& ctx, const Encoded& enc,
                                 const std::vector<long>& ids) const {
        const Tensor<T>* c = (use_context() && use_text_refinement()) ? &enc.enc.c_rel : nullptr;
        return text_.encode_relation_rows(ctx, c, ids);
    }

    // (T,d) feature slice of one query from (Nq,T,d).
    Tensor<T> query_slice(const Tensor<T>& obj_feats, long q) const {
        const long t = obj_feats.dim(1), d = obj_feats.dim(2);
        return reshape(slice(obj_feats, 0, q, 1), Shape{t, d});
    }

    static Tensor<T> pool_frames(const Tensor<T>& x, long lo, long hi) {
        if (hi <= lo) throw DataError("pooling window is empty");
        return mean_axis(slice(x, 0, lo, hi - lo), 0);
    }

    const IterativeEnhancer<T>& enhancer() const { return enhancer_; }
    const TrajectoryHead<T>& trajectory_head() const { return traj_head_; }
    const CosineClassifier<T>& object_classifier() const { return obj_cls_; }
    const CosineClassifier<T>& relation_classifier() const { return rel_cls_; }

    // --- training -------------------------------------------------------------

    struct TrainOutputs {
        LossBreakdown<T> losses;
        Assignment assignment;
        long matched_pairs = 0;
    };

    TrainOutputs train_forward(nn::Ctx<T>& ctx, const SegmentBatch& seg,
                               const LossWeights& weights, double frame_w,
                               double frame_h) const {
        TrainOutputs out;
        Encoded enc = encode(ctx, seg.frames);
        const long frames = enc.frames;
        const long nq = cfg_.num_queries;
        const long d = cfg_.dim;

        const std::vector<long> base_obj = vocab_.base_object_ids();
        const std::vector<long> base_rel = vocab_.base_relation_ids();
        Tensor<T> t_obj = object_text_rows(ctx, enc, base_obj);
        Tensor<T> t_rel = relation_text_rows(ctx, enc, base_rel);

        // absolute-id indexed rows for the assignment cost (base rows only;
        // training data is base-filtered upstream)
        std::vector<T> text_rows_abs(vocab_.objects.size() * static_cast<size_t>(d), T(0));
        for (size_t bi = 0; bi < base_obj.size(); ++bi)
            for (long k = 0; k < d; ++k)
                text_rows_abs[static_cast<size_t>(base_obj[bi]) * static_cast<size_t>(d) +
                              static_cast<size_t>(k)] =
                    t_obj.data()[bi * static_cast<size_t>(d) + static_cast<size_t>(k)];

        AssignInputs<T> ain;
        ain.num_queries = nq;
        ain.frames = frames;
        ain.dim = d;
        const auto feat_data = enc.obj_feats.data_ptr();
        const auto box_data = enc.cand_boxes.data_ptr();
        ain.features = feat_data.get();
        ain.boxes = box_data.get();
        ain.text_rows = &text_rows_abs;
        ain.text_dim = d;
        ain.gamma = static_cast<double>(obj_cls_.gamma()->value.data()[0]);
        ain.segment_begin = seg.begin_fid;
        ain.frame_w = frame_w;
        ain.frame_h = frame_h;
        out.assignment = assign_targets(seg.gt_objects, ain);

        std::map<int, long> base_obj_index;  // absolute id -> base row
        for (size_t i = 0; i < base_obj.size(); ++i)
            base_obj_index[static_cast<int>(base_obj[i])] = static_cast<long>(i);
        std::map<int, long> base_rel_index;
        for (size_t i = 0; i < base_rel.size(); ++i)
            base_rel_index[static_cast<int>(base_rel[i])] = static_cast<long>(i);

        // --- matched ordered pairs and the enhancement pass -------------------
        struct PairInfo {
            size_t track_a, track_b;
        };
        std::vector<PairInfo> pairs;
        for (size_t a = 0; a < seg.gt_objects.size(); ++a)
            for (size_t b = 0; b < seg.gt_objects.size(); ++b)
                if (a != b) pairs.push_back({a, b});
        out.matched_pairs = static_cast<long>(pairs.size());

        Tensor<T> rel_ctr = Tensor<T>::scalar(T(0));
        Tensor<T> obj_ctr = Tensor<T>::scalar(T(0));
        Tensor<T> box = Tensor<T>::scalar(T(0));
        Tensor<T> cst = Tensor<T>::scalar(T(0));
        Tensor<T> aux = Tensor<T>::scalar(T(0));

        // candidate presence suppression: matched queries target their track
        // extent, everything else targets zero
        {
            Tensor<T> presence_target(Shape{nq, frames, 1});
            auto& pt = presence_target.mutable_data();
            for (size_t g = 0; g < seg.gt_objects.size(); ++g) {
                const long q = out.assignment.track_to_query[g];
                const auto& tr = seg.gt_objects[g].traj;
                for (long f = tr.begin_fid - seg.begin_fid; f < tr.end_fid - seg.begin_fid; ++f)
                    pt[static_cast<size_t>(q * frames + f)] = T(1);
            }
            aux = add(aux, mean_all(bce_elements(sigmoid(enc.cand_presence), presence_target)));
        }

        if (!seg.gt_objects.empty()) {
            // candidate-level box regression and classification over ground
            // truth extents (the decoder features need direct supervision for
            // candidate selection to work at inference)
            std::vector<EntityBoxes<T>> cand_boxes;
            std::vector<Tensor<T>> cand_pooled;
            std::vector<long> cand_labels;
            for (size_t g = 0; g < seg.gt_objects.size(); ++g) {
                const long q = out.assignment.track_to_query[g];
                const auto& track = seg.gt_objects[g];
                const long lo = track.traj.begin_fid - seg.begin_fid;
                const long hi = track.traj.end_fid - seg.begin_fid;
                Tensor<T> qboxes = reshape(slice(enc.cand_boxes, 0, q, 1), Shape{frames, 4});
                cand_boxes.push_back(EntityBoxes<T>{slice(qboxes, 0, lo, hi - lo),
                                                    gt_boxes_tensor(track.traj, frame_w, frame_h)});
                cand_pooled.push_back(
                    reshape(pool_frames(query_slice(enc.obj_feats, q), lo, hi), Shape{1, d}));
                cand_labels.push_back(base_obj_index.at(track.category));
            }
            auto [cbox, ccst] = trajectory_loss(cand_boxes,
                                                static_cast<long>(seg.gt_objects.size()));
            aux = add(aux, cbox);
            Tensor<T> pooled = concat(cand_pooled, 0);
            aux = add(aux, cross_entropy_mean(obj_cls_.logits(ctx, pooled, t_obj), cand_labels));
        }

        Tensor<T> rel_ctx = Tensor<T>::scalar(T(0));
        Tensor<T> obj_ctx = Tensor<T>::scalar(T(0));
        if (use_context()) {
            // frame-level category presence against pooled context tokens
            Tensor<T> c_obj_frame = mean_axis(enc.enc.c_obj, 1);  // (T,d)
            Tensor<T> c_rel_frame = mean_axis(enc.enc.c_rel, 1);
            Tensor<T> obj_scores = sigmoid(ctx_cls_.logits(ctx, c_obj_frame, t_obj));
            Tensor<T> rel_scores = sigmoid(ctx_cls_.logits(ctx, c_rel_frame, t_rel));
            obj_ctx = contextual_loss(obj_scores,
                                      frame_presence_objects(seg, base_obj_index, frames));
            rel_ctx = contextual_loss(rel_scores,
                                      frame_presence_relations(seg, base_rel_index, frames));
        }

        if (!pairs.empty()) {
            std::vector<Tensor<T>> subj_pooled, obj_pooled, rel_pooled;
            std::vector<long> subj_labels, obj_labels;
            Tensor<T> rel_targets(Shape{static_cast<long>(pairs.size()),
                                        static_cast<long>(base_rel.size())});
            auto& rt = rel_targets.mutable_data();
            std::vector<EntityBoxes<T>> pair_boxes;
            std::vector<Tensor<T>> pair_presence_logits;
            std::vector<Tensor<T>> pair_presence_targets;

            for (size_t p = 0; p < pairs.size(); ++p) {
                const auto& track_s = seg.gt_objects[pairs[p].track_a];
                const auto& track_o = seg.gt_objects[pairs[p].track_b];
                const long qs = out.assignment.track_to_query[pairs[p].track_a];
                const long qo = out.assignment.track_to_query[pairs[p].track_b];

                EnhancedFeatures<T> ef =
                    enhancer_.run(ctx, query_slice(enc.obj_feats, qs),
                                  query_slice(enc.obj_feats, qo), enc.enc.h_cls);

                const long s_lo = track_s.traj.begin_fid - seg.begin_fid;
                const long s_hi = track_s.traj.end_fid - seg.begin_fid;
                const long o_lo = track_o.traj.begin_fid - seg.begin_fid;
                const long o_hi = track_o.traj.end_fid - seg.begin_fid;

                subj_pooled.push_back(reshape(pool_frames(ef.subject, s_lo, s_hi), Shape{1, d}));
                obj_pooled.push_back(reshape(pool_frames(ef.object, o_lo, o_hi), Shape{1, d}));
                rel_pooled.push_back(reshape(mean_axis(ef.relation, 0), Shape{1, d}));
                subj_labels.push_back(base_obj_index.at(track_s.category));
                obj_labels.push_back(base_obj_index.at(track_o.category));

                for (const auto& gt_rel : seg.gt_relations)
                    if (gt_rel.subject_tid == track_s.tid && gt_rel.object_tid == track_o.tid) {
                        auto it = base_rel_index.find(gt_rel.relation);
                        if (it == base_rel_index.end())
                            throw DataError("training segment carries a novel relation; "
                                            "base-only filter violated");
                        rt[p * base_rel.size() + static_cast<size_t>(it->second)] = T(1);
                    }

                // trajectory heads on the enhanced features (these define the
                // final predicted trajectories)
                auto heads_s = traj_head_.apply(ctx, ef.subject);  // (T,4)+(T,1)
                auto heads_o = traj_head_.apply(ctx, ef.object);
                pair_boxes.push_back(EntityBoxes<T>{
                    slice(heads_s.boxes, 0, s_lo, s_hi - s_lo),
                    gt_boxes_tensor(track_s.traj, frame_w, frame_h)});
                pair_boxes.push_back(EntityBoxes<T>{
                    slice(heads_o.boxes, 0, o_lo, o_hi - o_lo),
                    gt_boxes_tensor(track_o.traj, frame_w, frame_h)});
                pair_presence_logits.push_back(heads_s.presence_logits);
                pair_presence_targets.push_back(extent_target(frames, s_lo, s_hi));
                pair_presence_logits.push_back(heads_o.presence_logits);
                pair_presence_targets.push_back(extent_target(frames, o_lo, o_hi));
            }

            Tensor<T> subj_logits = obj_cls_.logits(ctx, concat(subj_pooled, 0), t_obj);
            Tensor<T> obj_logits = obj_cls_.logits(ctx, concat(obj_pooled, 0), t_obj);
            obj_ctr = obj_contrastive_loss(subj_logits, subj_labels, obj_logits, obj_labels);

            Tensor<T> rel_scores = sigmoid(rel_cls_.logits(ctx, concat(rel_pooled, 0), t_rel));
            rel_ctr = rel_contrastive_loss(rel_scores, rel_targets);

            auto [pbox, pcst] = trajectory_loss(pair_boxes, static_cast<long>(pairs.size()));
            box = pbox;
            cst = pcst;

            Tensor<T> logits_cat = concat(pair_presence_logits, 0);
            Tensor<T> targets_cat = concat(pair_presence_targets, 0);
            aux = add(aux, mean_all(bce_elements(sigmoid(logits_cat), targets_cat)));
        } else {
            log_debug("segment %s [%ld,%ld): no matched pairs; contrastive terms contribute 0",
                      seg.video_id.c_str(), seg.begin_fid, seg.end_fid);
        }

        out.losses = total_loss(rel_ctr, obj_ctr, box, cst, rel_ctx, obj_ctx, aux, weights);
        out.losses.matched_pairs = out.matched_pairs;
        return out;
    }

    // --- inference --------------------------------------------------------------

    struct SegmentInference {
        SegmentPrediction prediction;
        std::vector<ScoredTrack> candidate_tracks;
        long surviving_candidates = 0;
    };

    SegmentInference infer_segment(const SegmentBatch& seg, const EvalConfig& eval,
                                   double frame_w, double frame_h) const {
        nn::Ctx<T> ctx;  // no tape
        Encoded enc = encode(ctx, seg.frames);
        const long frames = enc.frames;
        const long nq = cfg_.num_queries;
        const long d = cfg_.dim;
        const long n_obj = static_cast<long>(vocab_.objects.size());
        const long n_rel = static_cast<long>(vocab_.relations.size());

        std::vector<long> all_obj(static_cast<size_t>(n_obj));
        for (long i = 0; i < n_obj; ++i) all_obj[static_cast<size_t>(i)] = i;
        std::vector<long> all_rel(static_cast<size_t>(n_rel));
        for (long i = 0; i < n_rel; ++i) all_rel[static_cast<size_t>(i)] = i;
        Tensor<T> t_obj = object_text_rows(ctx, enc, all_obj);
        Tensor<T> t_rel = relation_text_rows(ctx, enc, all_rel);

        // candidate extraction on plain values
        std::vector<double> boxes_v(enc.cand_boxes.data().begin(), enc.cand_boxes.data().end());
        std::vector<double> presence_v;
        presence_v.reserve(static_cast<size_t>(nq * frames));
        for (const T& logit : enc.cand_presence.data())
            presence_v.push_back(1.0 / (1.0 + std::exp(-static_cast<double>(logit))));

        // per-query pooled class scores over each query's own extent
        std::vector<double> scores_v(static_cast<size_t>(nq * n_obj), 0.0);
        for (long q = 0; q < nq; ++q) {
            std::vector<double> pres(presence_v.begin() + q * frames,
                                     presence_v.begin() + (q + 1) * frames);
            const auto [lo, hi] = presence_extent(pres, eval.presence_threshold);
            if (hi <= lo) continue;
            Tensor<T> pooled = pool_frames(query_slice(enc.obj_feats, q), lo, hi);
            Tensor<T> s = obj_cls_.scores(ctx, reshape(pooled, Shape{1, d}), t_obj);
            for (long c = 0; c < n_obj; ++c)
                scores_v[static_cast<size_t>(q * n_obj + c)] =
                    static_cast<double>(s.data()[static_cast<size_t>(c)]);
        }

        std::vector<Candidate> candidates =
            extract_candidates(nq, frames, n_obj, boxes_v, presence_v, scores_v,
                               eval.presence_threshold, eval.score_threshold);
        SegmentInference out;
        out.prediction.begin_fid = seg.begin_fid;
        out.prediction.end_fid = seg.end_fid;
        out.surviving_candidates = static_cast<long>(candidates.size());

        // candidate trajectories for the object-detection metric
        const auto pairs = form_pairs(candidates, cfg_.pair_top_k);
        for (const auto& c : candidates) {
            ScoredTrack st;
            st.category = c.best_category;
            st.score = c.best_score;
            st.traj = candidate_trajectory(c, seg.begin_fid, frame_w, frame_h);
            out.candidate_tracks.push_back(std::move(st));
        }

        for (const auto& [ia, ib] : pairs) {
            const Candidate& cs = candidates[static_cast<size_t>(ia)];
            const Candidate& co = candidates[static_cast<size_t>(ib)];
            EnhancedFeatures<T> ef = enhancer_.run(ctx, query_slice(enc.obj_feats, cs.query),
                                                   query_slice(enc.obj_feats, co.query),
                                                   enc.enc.h_cls);
            auto heads_s = traj_head_.apply(ctx, ef.subject);
            auto heads_o = traj_head_.apply(ctx, ef.object);
            const auto ext_s = logits_extent(heads_s.presence_logits, eval.presence_threshold);
            const auto ext_o = logits_extent(heads_o.presence_logits, eval.presence_threshold);
            if (ext_s.second <= ext_s.first || ext_o.second <= ext_o.first) continue;
            // the pair must share at least one frame
            if (std::min(ext_s.second, ext_o.second) <= std::max(ext_s.first, ext_o.first))
                continue;

            Tensor<T> s_scores = obj_cls_.scores(
                ctx,
                reshape(pool_frames(ef.subject, ext_s.first, ext_s.second), Shape{1, d}), t_obj);
            Tensor<T> o_scores = obj_cls_.scores(
                ctx,
                reshape(pool_frames(ef.object, ext_o.first, ext_o.second), Shape{1, d}), t_obj);
            Tensor<T> r_scores = rel_cls_.scores(
                ctx, reshape(mean_axis(ef.relation, 0), Shape{1, d}), t_rel);

            const auto s_best = argmax_row(s_scores.data(), n_obj);
            const auto o_best = argmax_row(o_scores.data(), n_obj);
            Trajectory subj_traj = head_trajectory(heads_s.boxes, ext_s, seg.begin_fid, frame_w,
                                                   frame_h);
            Trajectory obj_traj = head_trajectory(heads_o.boxes, ext_o, seg.begin_fid, frame_w,
                                                  frame_h);
            for (long r = 0; r < n_rel; ++r) {
                RelationInstance tri;
                tri.subject_category = static_cast<int>(s_best.first);
                tri.relation = static_cast<int>(r);
                tri.object_category = static_cast<int>(o_best.first);
                tri.subject_traj = subj_traj;
                tri.object_traj = obj_traj;
                tri.score = s_best.second *
                            static_cast<double>(r_scores.data()[static_cast<size_t>(r)]) *
                            o_best.second;
                out.prediction.triplets.push_back(std::move(tri));
            }
        }

        std::sort(out.prediction.triplets.begin(), out.prediction.triplets.end(),
                  [](const RelationInstance& a, const RelationInstance& b) {
                      if (a.score != b.score) return a.score > b.score;
                      return std::make_tuple(a.subject_category, a.relation,
                                             a.object_category) <
                             std::make_tuple(b.subject_category, b.relation, b.object_category);
                  });
        if (static_cast<long>(out.prediction.triplets.size()) > eval.max_per_segment)
            out.prediction.triplets.resize(static_cast<size_t>(eval.max_per_segment));
        return out;
    }

    // --- diagnostics ------------------------------------------------------------

    // Ground-truth-matched pairs with their relation scores and pooled pre/
    // post-enhancement features; backs the error analysis (relation accuracy
    // given correct objects) and the raw feature dump.
    struct PairDiagnostics {
        int subject_category = -1;
        int object_category = -1;
        std::vector<int> gt_relations;
        std::vector<double> relation_scores;  // over all relation categories
        std::vector<double> pre_subject, pre_object;
        std::vector<double> post_subject, post_object, relation;
    };

    std::vector<PairDiagnostics> matched_pair_diagnostics(const SegmentBatch& seg,
                                                          double frame_w,
                                                          double frame_h) const {
        std::vector<PairDiagnostics> out;
        if (seg.gt_objects.size() < 2) return out;
        nn::Ctx<T> ctx;
        Encoded enc = encode(ctx, seg.frames);
        const long d = cfg_.dim;
        const long n_obj = static_cast<long>(vocab_.objects.size());
        const long n_rel = static_cast<long>(vocab_.relations.size());
        std::vector<long> all_obj(static_cast<size_t>(n_obj));
        for (long i = 0; i < n_obj; ++i) all_obj[static_cast<size_t>(i)] = i;
        std::vector<long> all_rel(static_cast<size_t>(n_rel));
        for (long i = 0; i < n_rel; ++i) all_rel[static_cast<size_t>(i)] = i;
        Tensor<T> t_obj = object_text_rows(ctx, enc, all_obj);
        Tensor<T> t_rel = relation_text_rows(ctx, enc, all_rel);

        std::vector<T> text_rows_abs(t_obj.data());
        AssignInputs<T> ain;
        ain.num_queries = cfg_.num_queries;
        ain.frames = enc.frames;
        ain.dim = d;
        const auto feat_data = enc.obj_feats.data_ptr();
        const auto box_data = enc.cand_boxes.data_ptr();
        ain.features = feat_data.get();
        ain.boxes = box_data.get();
        ain.text_rows = &text_rows_abs;
        ain.text_dim = d;
        ain.gamma = static_cast<double>(obj_cls_.gamma()->value.data()[0]);
        ain.segment_begin = seg.begin_fid;
        ain.frame_w = frame_w;
        ain.frame_h = frame_h;
        Assignment assign = assign_targets(seg.gt_objects, ain);

        for (size_t a = 0; a < seg.gt_objects.size(); ++a)
            for (size_t b = 0; b < seg.gt_objects.size(); ++b) {
                if (a == b) continue;
                const auto& tr_s = seg.gt_objects[a];
                const auto& tr_o = seg.gt_objects[b];
                PairDiagnostics pd;
                pd.subject_category = tr_s.category;
                pd.object_category = tr_o.category;
                for (const auto& gt : seg.gt_relations)
                    if (gt.subject_tid == tr_s.tid && gt.object_tid == tr_o.tid)
                        pd.gt_relations.push_back(gt.relation);

                Tensor<T> pre_s = query_slice(enc.obj_feats,
                                              assign.track_to_query[a]);
                Tensor<T> pre_o = query_slice(enc.obj_feats,
                                              assign.track_to_query[b]);
                EnhancedFeatures<T> ef = enhancer_.run(ctx, pre_s, pre_o, enc.enc.h_cls);
                Tensor<T> rel_scores =
                    rel_cls_.scores(ctx, reshape(mean_axis(ef.relation, 0), Shape{1, d}), t_rel);
                for (const T& v : rel_scores.data())
                    pd.relation_scores.push_back(static_cast<double>(v));
                auto pull = [&](const Tensor<T>& x, std::vector<double>& dst) {
                    Tensor<T> pooled = mean_axis(x, 0);
                    for (const T& v : pooled.data()) dst.push_back(static_cast<double>(v));
                };
                pull(pre_s, pd.pre_subject);
                pull(pre_o, pd.pre_object);
                pull(ef.subject, pd.post_subject);
                pull(ef.object, pd.post_object);
                pull(ef.relation, pd.relation);
                out.push_back(std::move(pd));
            }
        return out;
    }

private:
    Tensor<T> placeholder_context(long frames) const {
        // context tokens disabled: query refinement is off and this tensor
        // is only shape-carrying for the no-refine path
        return Tensor<T>(Shape{frames, cfg_.context_tokens, cfg_.dim});
    }

    static std::pair<long, double> argmax_row(const std::vector<T>& row, long n) {
        long best = 0;
        for (long i = 1; i < n; ++i)
            if (row[static_cast<size_t>(i)] > row[static_cast<size_t>(best)]) best = i;
        return {best, static_cast<double>(row[static_cast<size_t>(best)])};
    }

    static std::pair<long, long> logits_extent(const Tensor<T>& presence_logits,
                                               double threshold) {
        std::vector<double> p;
        p.reserve(presence_logits.data().size());
        for (const T& logit : presence_logits.data())
            p.push_back(1.0 / (1.0 + std::exp(-static_cast<double>(logit))));
        return presence_extent(p, threshold);
    }

    static Tensor<T> extent_target(long frames, long lo, long hi) {
        Tensor<T> t(Shape{frames, 1});
        auto& td = t.mutable_data();
        for (long f = lo; f < hi; ++f) td[static_cast<size_t>(f)] = T(1);
        return t;
    }

    static Tensor<T> gt_boxes_tensor(const Trajectory& traj, double frame_w, double frame_h) {
        Tensor<T> t(Shape{traj.length(), 4});
        auto& td = t.mutable_data();
        for (long i = 0; i < traj.length(); ++i) {
            const auto c = traj.boxes[static_cast<size_t>(i)].to_center_norm(frame_w, frame_h);
            for (int k = 0; k < 4; ++k)
                td[static_cast<size_t>(i * 4 + k)] = static_cast<T>(c[static_cast<size_t>(k)]);
        }
        return t;
    }

    static Trajectory candidate_trajectory(const Candidate& c, long segment_begin,
                                           double frame_w, double frame_h) {
        Trajectory t;
        t.begin_fid = segment_begin + c.begin;
        t.end_fid = segment_begin + c.end;
        for (long f = c.begin; f < c.end; ++f) {
            const auto& b = c.boxes[static_cast<size_t>(f)];
            t.boxes.push_back(BBox::from_center_norm(b[0], b[1], b[2], b[3], frame_w, frame_h));
        }
        return t;
    }

    static Trajectory head_trajectory(const Tensor<T>& boxes, std::pair<long, long> extent,
                                      long segment_begin, double frame_w, double frame_h) {
        Trajectory t;
        t.begin_fid = segment_begin + extent.first;
        t.end_fid = segment_begin + extent.second;
        const auto& bd = boxes.data();
        for (long f = extent.first; f < extent.second; ++f)
            t.boxes.push_back(BBox::from_center_norm(
                static_cast<double>(bd[static_cast<size_t>(f * 4 + 0)]),
                static_cast<double>(bd[static_cast<size_t>(f * 4 + 1)]),
                static_cast<double>(bd[static_cast<size_t>(f * 4 + 2)]),
                static_cast<double>(bd[static_cast<size_t>(f * 4 + 3)]), frame_w, frame_h));
        return t;
    }

    static Tensor<T> frame_presence_objects(const SegmentBatch& seg,
                                            const std::map<int, long>& base_index, long frames) {
        Tensor<T> t(Shape{frames, static_cast<long>(base_index.size())});
        auto& td = t.mutable_data();
        const long c = static_cast<long>(base_index.size());
        for (const auto& obj : seg.gt_objects) {
            auto it = base_index.find(obj.category);
            if (it == base_index.end()) continue;
            for (long f = obj.traj.begin_fid - seg.begin_fid;
                 f < obj.traj.end_fid - seg.begin_fid; ++f)
                td[static_cast<size_t>(f * c + it->second)] = T(1);
        }
        return t;
    }

    static Tensor<T> frame_presence_relations(const SegmentBatch& seg,
                                              const std::map<int, long>& base_index,
                                              long frames) {
        Tensor<T> t(Shape{frames, static_cast<long>(base_index.size())});
        auto& td = t.mutable_data();
        const long c = static_cast<long>(base_index.size());
        for (const auto& rel : seg.gt_relations) {
            auto it = base_index.find(rel.relation);
            if (it == base_index.end()) continue;
            const long lo = std::max(rel.subject_traj.begin_fid, rel.object_traj.begin_fid) -
                            seg.begin_fid;
            const long hi =
                std::min(rel.subject_traj.end_fid, rel.object_traj.end_fid) - seg.begin_fid;
            for (long f = lo; f < hi; ++f) td[static_cast<size_t>(f * c + it->second)] = T(1);
        }
        return t;
    }

    ModelConfig cfg_;
    Vocabulary vocab_;
    nn::ParamRegistry<T> reg_;
    PatchEmbed<T> patch_embed_;
    VisualEncoder<T> visual_;
    QueryRefiner<T> query_refiner_;
    TextEncoder<T> text_;
    ObjectDecoder<T> decoder_;
    TrajectoryHead<T> traj_head_;
    CosineClassifier<T> obj_cls_;
    CosineClassifier<T> rel_cls_;
    CosineClassifier<T> ctx_cls_;
    IterativeEnhancer<T> enhancer_;
};

}  // namespace metor
