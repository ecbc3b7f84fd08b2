#pragma once

#include <optional>

#include <json.hpp>

#include "metor/annotations.hpp"
#include "metor/assoc.hpp"

// SGDet evaluation: relation detection mAP (per-video AP averaged over
// videos), Recall@K, trajectory mAP_o (per-category AP pooled across
// videos), novel/all split filtering, and the object-error /
// relationship-error taxonomy of examined false positives.

namespace metor {

struct VideoGroundTruth {
    std::string video_id;
    std::vector<RelationInstance> relations;
    std::vector<ObjectTrack> objects;
};

// --- matching ---------------------------------------------------------------

// Greedy by rank: a prediction is a true positive when its (s,r,o) matches
// an unmatched ground-truth instance and both trajectories reach the vIoU
// threshold. Among eligible instances the one with the largest
// min(subject vIoU, object vIoU) wins; ties go to the lowest index.
inline std::vector<int> match_predictions(const std::vector<RelationInstance>& ranked_preds,
                                          const std::vector<RelationInstance>& gts,
                                          double viou_thresh) {
    std::vector<int> pred_to_gt(ranked_preds.size(), -1);
    std::vector<char> taken(gts.size(), 0);
    for (size_t p = 0; p < ranked_preds.size(); ++p) {
        const auto& pred = ranked_preds[p];
        int best = -1;
        double best_overlap = -1;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (taken[g]) continue;
            const auto& gt = gts[g];
            if (gt.subject_category != pred.subject_category || gt.relation != pred.relation ||
                gt.object_category != pred.object_category)
                continue;
            const double vs = viou(pred.subject_traj, gt.subject_traj);
            if (vs < viou_thresh) continue;
            const double vo = viou(pred.object_traj, gt.object_traj);
            if (vo < viou_thresh) continue;
            const double overlap = std::min(vs, vo);
            if (overlap > best_overlap) {
                best_overlap = overlap;
                best = static_cast<int>(g);
            }
        }
        if (best >= 0) {
            pred_to_gt[p] = best;
            taken[static_cast<size_t>(best)] = 1;
        }
    }
    return pred_to_gt;
}

// All-point interpolated average precision from a ranked TP/FP sequence.
inline double average_precision(const std::vector<int>& pred_to_gt, long gt_count) {
    if (gt_count <= 0) return 0.0;
    std::vector<double> precision_at_tp;
    std::vector<double> recall_at_tp;
    long tp = 0;
    for (size_t i = 0; i < pred_to_gt.size(); ++i) {
        if (pred_to_gt[i] < 0) continue;
        ++tp;
        precision_at_tp.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
        recall_at_tp.push_back(static_cast<double>(tp) / static_cast<double>(gt_count));
    }
    // interpolate: precision at each recall level is the max at any deeper rank
    for (int i = static_cast<int>(precision_at_tp.size()) - 2; i >= 0; --i)
        precision_at_tp[static_cast<size_t>(i)] =
            std::max(precision_at_tp[static_cast<size_t>(i)],
                     precision_at_tp[static_cast<size_t>(i) + 1]);
    double ap = 0, prev_recall = 0;
    for (size_t i = 0; i < precision_at_tp.size(); ++i) {
        ap += (recall_at_tp[i] - prev_recall) * precision_at_tp[i];
        prev_recall = recall_at_tp[i];
    }
    return ap;
}

// --- relation metrics --------------------------------------------------------

// Mean over videos of per-video AP; videos without ground truth are
// excluded from the mean. Predictions must be ranked per video.
inline std::optional<double> relation_detection_map(
    const std::vector<VideoPrediction>& preds, const std::vector<VideoGroundTruth>& gts,
    double viou_thresh = 0.5) {
    double sum = 0;
    long counted = 0;
    for (size_t v = 0; v < gts.size(); ++v) {
        if (gts[v].relations.empty()) continue;
        const auto matches = match_predictions(preds[v].triplets, gts[v].relations, viou_thresh);
        sum += average_precision(matches, static_cast<long>(gts[v].relations.size()));
        ++counted;
    }
    if (counted == 0) return std::nullopt;
    return sum / static_cast<double>(counted);
}

// Fraction of ground-truth instances matched within each video's top-K
// predictions, averaged over videos with ground truth.
inline std::optional<double> recall_at_k(const std::vector<VideoPrediction>& preds,
                                         const std::vector<VideoGroundTruth>& gts, long k,
                                         double viou_thresh = 0.5) {
    double sum = 0;
    long counted = 0;
    for (size_t v = 0; v < gts.size(); ++v) {
        if (gts[v].relations.empty()) continue;
        std::vector<RelationInstance> top(preds[v].triplets.begin(),
                                          preds[v].triplets.begin() +
                                              std::min<size_t>(preds[v].triplets.size(),
                                                               static_cast<size_t>(k)));
        const auto matches = match_predictions(top, gts[v].relations, viou_thresh);
        long hit = 0;
        for (int m : matches)
            if (m >= 0) ++hit;
        sum += static_cast<double>(hit) / static_cast<double>(gts[v].relations.size());
        ++counted;
    }
    if (counted == 0) return std::nullopt;
    return sum / static_cast<double>(counted);
}

// --- trajectory metric --------------------------------------------------------

// AP per object category over predictions pooled across videos, matched
// greedily by score against same-video ground-truth tracks; the mean runs
// over categories present in the ground truth.
inline std::optional<double> trajectory_map(
    const std::vector<std::vector<ScoredTrack>>& preds_per_video,
    const std::vector<VideoGroundTruth>& gts, double viou_thresh,
    std::map<int, double>* per_category_ap = nullptr) {
    std::map<int, long> gt_counts;
    for (const auto& v : gts)
        for (const auto& o : v.objects) gt_counts[o.category]++;
    if (gt_counts.empty()) return std::nullopt;

    struct PooledPred {
        size_t video;
        size_t index;
        double score;
        const ScoredTrack* track;
    };
    double sum_ap = 0;
    for (const auto& [category, count] : gt_counts) {
        std::vector<PooledPred> pooled;
        for (size_t v = 0; v < preds_per_video.size(); ++v)
            for (size_t i = 0; i < preds_per_video[v].size(); ++i)
                if (preds_per_video[v][i].category == category)
                    pooled.push_back({v, i, preds_per_video[v][i].score,
                                      &preds_per_video[v][i]});
        std::sort(pooled.begin(), pooled.end(), [](const PooledPred& a, const PooledPred& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.video != b.video) return a.video < b.video;
            return a.index < b.index;
        });
        std::vector<std::vector<char>> taken(gts.size());
        for (size_t v = 0; v < gts.size(); ++v) taken[v].assign(gts[v].objects.size(), 0);
        std::vector<int> tp_flags;
        for (const auto& p : pooled) {
            int best = -1;
            double best_v = -1;
            const auto& objs = gts[p.video].objects;
            for (size_t g = 0; g < objs.size(); ++g) {
                if (taken[p.video][g] || objs[g].category != category) continue;
                const double v = viou(p.track->traj, objs[g].traj);
                if (v >= viou_thresh && v > best_v) {
                    best_v = v;
                    best = static_cast<int>(g);
                }
            }
            if (best >= 0) taken[p.video][static_cast<size_t>(best)] = 1;
            tp_flags.push_back(best);
        }
        const double ap = average_precision(tp_flags, count);
        if (per_category_ap) (*per_category_ap)[category] = ap;
        sum_ap += ap;
    }
    return sum_ap / static_cast<double>(gt_counts.size());
}

// --- split filtering -----------------------------------------------------------

enum class EvalSplit { Novel, All };

inline EvalSplit parse_split(const std::string& name) {
    if (name == "novel") return EvalSplit::Novel;
    if (name == "all") return EvalSplit::All;
    throw UsageError("unknown split '" + name + "' (expected novel or all)");
}

// Novel split: ground-truth relation instances (and predictions) whose
// relationship category is novel; all object categories are admitted. For
// the trajectory metric the novel split restricts to novel object
// categories.
inline std::vector<VideoGroundTruth> filter_gt_split(const std::vector<VideoGroundTruth>& gts,
                                                     const Vocabulary& vocab, EvalSplit split) {
    if (split == EvalSplit::All) return gts;
    std::vector<VideoGroundTruth> out = gts;
    for (auto& v : out) {
        std::vector<RelationInstance> kept;
        for (auto& r : v.relations)
            if (vocab.relations[static_cast<size_t>(r.relation)].is_novel)
                kept.push_back(std::move(r));
        v.relations = std::move(kept);
        std::vector<ObjectTrack> kept_objs;
        for (auto& o : v.objects)
            if (vocab.objects[static_cast<size_t>(o.category)].is_novel)
                kept_objs.push_back(std::move(o));
        v.objects = std::move(kept_objs);
    }
    return out;
}

inline std::vector<VideoPrediction> filter_pred_split(const std::vector<VideoPrediction>& preds,
                                                      const Vocabulary& vocab,
                                                      EvalSplit split) {
    if (split == EvalSplit::All) return preds;
    std::vector<VideoPrediction> out = preds;
    for (auto& v : out) {
        std::vector<RelationInstance> kept;
        for (auto& r : v.triplets)
            if (vocab.relations[static_cast<size_t>(r.relation)].is_novel)
                kept.push_back(std::move(r));
        v.triplets = std::move(kept);
    }
    return out;
}

inline std::vector<std::vector<ScoredTrack>> filter_tracks_split(
    const std::vector<std::vector<ScoredTrack>>& tracks, const Vocabulary& vocab,
    EvalSplit split) {
    if (split == EvalSplit::All) return tracks;
    std::vector<std::vector<ScoredTrack>> out = tracks;
    for (auto& v : out) {
        std::vector<ScoredTrack> kept;
        for (auto& t : v)
            if (vocab.objects[static_cast<size_t>(t.category)].is_novel)
                kept.push_back(std::move(t));
        v = std::move(kept);
    }
    return out;
}

// --- error taxonomy -------------------------------------------------------------

struct ErrorCounts {
    long object_errors = 0;
    long relationship_errors = 0;
    long examined_false_positives = 0;
};

// Within each video's examined top-k, a false positive is a relationship
// error when some ground-truth pair has both entity categories matched with
// both vIoUs above threshold (entities were right, the predicate was not);
// otherwise it is an object error. The two classes partition the examined
// false positives.
inline ErrorCounts categorize_errors(const std::vector<VideoPrediction>& preds,
                                     const std::vector<VideoGroundTruth>& gts,
                                     long examine_top_k, double viou_thresh = 0.5) {
    ErrorCounts out;
    for (size_t v = 0; v < gts.size(); ++v) {
        std::vector<RelationInstance> top(preds[v].triplets.begin(),
                                          preds[v].triplets.begin() +
                                              std::min<size_t>(preds[v].triplets.size(),
                                                               static_cast<size_t>(examine_top_k)));
        const auto matches = match_predictions(top, gts[v].relations, viou_thresh);
        for (size_t p = 0; p < top.size(); ++p) {
            if (matches[p] >= 0) continue;  // true positive
            ++out.examined_false_positives;
            bool entities_ok = false;
            for (const auto& gt : gts[v].relations) {
                if (gt.subject_category != top[p].subject_category ||
                    gt.object_category != top[p].object_category)
                    continue;
                if (viou(top[p].subject_traj, gt.subject_traj) >= viou_thresh &&
                    viou(top[p].object_traj, gt.object_traj) >= viou_thresh) {
                    entities_ok = true;
                    break;
                }
            }
            if (entities_ok)
                ++out.relationship_errors;
            else
                ++out.object_errors;
        }
    }
    return out;
}

// --- report ----------------------------------------------------------------------

struct EvalReport {
    std::string split;
    std::optional<double> map;
    std::optional<double> r50;
    std::optional<double> r100;
    std::optional<double> map_o;
    ErrorCounts errors;
    long gt_relation_instances = 0;
    long prediction_count = 0;
    std::map<std::string, double> per_object_category_ap;
    std::map<std::string, double> per_relation_category_ap;
};

// Diagnostic per-relation-category AP: predictions pooled across videos per
// category, matched within their own video.
inline std::map<int, double> per_relation_ap_table(const std::vector<VideoPrediction>& preds,
                                                   const std::vector<VideoGroundTruth>& gts,
                                                   double viou_thresh) {
    std::map<int, long> gt_counts;
    for (const auto& v : gts)
        for (const auto& r : v.relations) gt_counts[r.relation]++;
    std::map<int, double> table;
    for (const auto& [rel, count] : gt_counts) {
        struct P {
            size_t video, index;
            double score;
        };
        std::vector<P> pooled;
        for (size_t v = 0; v < preds.size(); ++v)
            for (size_t i = 0; i < preds[v].triplets.size(); ++i)
                if (preds[v].triplets[i].relation == rel)
                    pooled.push_back({v, i, preds[v].triplets[i].score.value_or(0.0)});
        std::sort(pooled.begin(), pooled.end(), [](const P& a, const P& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.video != b.video) return a.video < b.video;
            return a.index < b.index;
        });
        std::vector<std::vector<char>> taken(gts.size());
        for (size_t v = 0; v < gts.size(); ++v) taken[v].assign(gts[v].relations.size(), 0);
        std::vector<int> flags;
        for (const auto& p : pooled) {
            const auto& pred = preds[p.video].triplets[p.index];
            int best = -1;
            double best_overlap = -1;
            const auto& rels = gts[p.video].relations;
            for (size_t g = 0; g < rels.size(); ++g) {
                if (taken[p.video][g]) continue;
                const auto& gt = rels[g];
                if (gt.relation != rel || gt.subject_category != pred.subject_category ||
                    gt.object_category != pred.object_category)
                    continue;
                const double vs = viou(pred.subject_traj, gt.subject_traj);
                if (vs < viou_thresh) continue;
                const double vo = viou(pred.object_traj, gt.object_traj);
                if (vo < viou_thresh) continue;
                if (std::min(vs, vo) > best_overlap) {
                    best_overlap = std::min(vs, vo);
                    best = static_cast<int>(g);
                }
            }
            if (best >= 0) taken[p.video][static_cast<size_t>(best)] = 1;
            flags.push_back(best);
        }
        table[rel] = average_precision(flags, count);
    }
    return table;
}

inline json report_to_json(const EvalReport& r) {
    json j;
    j["split"] = r.split;
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v.has_value())
            j[key] = *v;
        else
            j[key] = nullptr;
    };
    put("mAP", r.map);
    put("R@50", r.r50);
    put("R@100", r.r100);
    put("mAP_o", r.map_o);
    j["undefined_metrics"] = !r.map.has_value();
    j["errors"] = {{"object_errors", r.errors.object_errors},
                   {"relationship_errors", r.errors.relationship_errors},
                   {"examined_false_positives", r.errors.examined_false_positives}};
    j["gt_relation_instances"] = r.gt_relation_instances;
    j["prediction_count"] = r.prediction_count;
    j["per_object_category_ap"] = r.per_object_category_ap;
    j["per_relation_category_ap"] = r.per_relation_category_ap;
    return j;
}

// --- prediction dump ---------------------------------------------------------------

inline json trajectory_to_json(const Trajectory& t) {
    json boxes = json::array();
    for (const auto& b : t.boxes) boxes.push_back({b.xmin, b.ymin, b.xmax, b.ymax});
    return {{"begin_fid", t.begin_fid}, {"end_fid", t.end_fid}, {"boxes", boxes}};
}

inline Trajectory trajectory_from_json(const json& j) {
    Trajectory t;
    t.begin_fid = j.at("begin_fid").get<long>();
    t.end_fid = j.at("end_fid").get<long>();
    for (const auto& b : j.at("boxes"))
        t.boxes.push_back(BBox{b.at(0).get<double>(), b.at(1).get<double>(),
                               b.at(2).get<double>(), b.at(3).get<double>()});
    if (!t.valid()) throw DataError("prediction dump: malformed trajectory");
    return t;
}

// Ranked triplets (+ object tracks when available) for one video; the
// evaluator can score these dumps directly so external models are scorable.
inline json prediction_dump_to_json(const VideoPrediction& pred,
                                    const std::vector<ScoredTrack>& object_tracks,
                                    const Vocabulary& vocab) {
    json j;
    j["video_id"] = pred.video_id;
    json arr = json::array();
    for (const auto& t : pred.triplets)
        arr.push_back(
            {{"subject_category", vocab.objects[static_cast<size_t>(t.subject_category)].name},
             {"predicate", vocab.relations[static_cast<size_t>(t.relation)].name},
             {"object_category", vocab.objects[static_cast<size_t>(t.object_category)].name},
             {"score", t.score.value_or(0.0)},
             {"subject_traj", trajectory_to_json(t.subject_traj)},
             {"object_traj", trajectory_to_json(t.object_traj)}});
    j["predictions"] = arr;
    json tracks = json::array();
    for (const auto& t : object_tracks)
        tracks.push_back({{"category", vocab.objects[static_cast<size_t>(t.category)].name},
                          {"score", t.score},
                          {"traj", trajectory_to_json(t.traj)}});
    j["object_trajectories"] = tracks;
    return j;
}

struct PredictionDump {
    VideoPrediction video;
    std::vector<ScoredTrack> object_tracks;
    bool has_object_tracks = false;
};

inline PredictionDump prediction_dump_from_json(const json& j, const Vocabulary& vocab,
                                                const std::string& origin) {
    PredictionDump out;
    out.video.video_id = j.at("video_id").get<std::string>();
    for (const auto& p : j.at("predictions")) {
        RelationInstance r;
        const std::string s = p.at("subject_category").get<std::string>();
        const std::string rel = p.at("predicate").get<std::string>();
        const std::string o = p.at("object_category").get<std::string>();
        r.subject_category = vocab.object_id(s);
        r.relation = vocab.relation_id(rel);
        r.object_category = vocab.object_id(o);
        if (r.subject_category < 0 || r.relation < 0 || r.object_category < 0)
            throw DataError(origin + ": unknown category in prediction dump");
        r.score = p.at("score").get<double>();
        r.subject_traj = trajectory_from_json(p.at("subject_traj"));
        r.object_traj = trajectory_from_json(p.at("object_traj"));
        out.video.triplets.push_back(std::move(r));
    }
    std::sort(out.video.triplets.begin(), out.video.triplets.end(),
              [](const RelationInstance& a, const RelationInstance& b) {
                  return a.score.value_or(0) > b.score.value_or(0);
              });
    if (j.contains("object_trajectories")) {
        out.has_object_tracks = true;
        for (const auto& t : j.at("object_trajectories")) {
            ScoredTrack st;
            st.category = vocab.object_id(t.at("category").get<std::string>());
            if (st.category < 0)
                throw DataError(origin + ": unknown object category in dump");
            st.score = t.at("score").get<double>();
            st.traj = trajectory_from_json(t.at("traj"));
            out.object_tracks.push_back(std::move(st));
        }
    }
    return out;
}

}  // namespace metor
