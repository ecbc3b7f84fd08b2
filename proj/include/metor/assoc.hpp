#pragma once

#include <tuple>

#include "metor/data.hpp"

// Volume IoU and the greedy association that merges per-segment relation
// triplets into video-level instances.

namespace metor {

// Volume intersection over volume union across the temporal union of both
// extents; a trajectory contributes zero area outside its own extent.
inline double viou(const Trajectory& a, const Trajectory& b) {
    const long lo = std::min(a.begin_fid, b.begin_fid);
    const long hi = std::max(a.end_fid, b.end_fid);
    double inter = 0, uni = 0;
    for (long fid = lo; fid < hi; ++fid) {
        const BBox* ba = a.box_at(fid);
        const BBox* bb = b.box_at(fid);
        if (ba && bb) {
            const double ix =
                std::max(0.0, std::min(ba->xmax, bb->xmax) - std::max(ba->xmin, bb->xmin));
            const double iy =
                std::max(0.0, std::min(ba->ymax, bb->ymax) - std::max(ba->ymin, bb->ymin));
            const double iv = ix * iy;
            inter += iv;
            uni += ba->area() + bb->area() - iv;
        } else if (ba) {
            uni += ba->area();
        } else if (bb) {
            uni += bb->area();
        }
    }
    if (uni <= 0) return 0.0;
    return std::min(1.0, std::max(0.0, inter / uni));
}

// One segment's scored triplets.
struct SegmentPrediction {
    long begin_fid = 0;
    long end_fid = 0;
    std::vector<RelationInstance> triplets;  // scores set; trajectories inside the range
};

struct VideoPrediction {
    std::string video_id;
    std::vector<RelationInstance> triplets;  // ranked by descending score
};

namespace detail {

// Deterministic processing order: score desc, then segment begin, then
// lexicographic categories, then insertion index.
struct RankedTriplet {
    const RelationInstance* rel;
    size_t segment;
    size_t index;
    double score;
};

inline bool ranked_before(const RankedTriplet& a, const RankedTriplet& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.rel->subject_traj.begin_fid != b.rel->subject_traj.begin_fid)
        return a.rel->subject_traj.begin_fid < b.rel->subject_traj.begin_fid;
    const auto ka = std::make_tuple(a.rel->subject_category, a.rel->relation,
                                    a.rel->object_category);
    const auto kb = std::make_tuple(b.rel->subject_category, b.rel->relation,
                                    b.rel->object_category);
    if (ka != kb) return ka < kb;
    if (a.segment != b.segment) return a.segment < b.segment;
    return a.index < b.index;
}

inline double boundary_iou(const Trajectory& earlier, const Trajectory& later) {
    return box_iou(earlier.boxes.back(), later.boxes.front());
}

}  // namespace detail

// True when `later` may directly continue `earlier` within one track:
// adjacent trajectories with matching boundary boxes, or (overlapping
// segmentation) temporally overlapping trajectories with sufficient vIoU
// over the shared region.
inline bool triplets_linkable(const RelationInstance& earlier, const RelationInstance& later,
                              double merge_viou) {
    if (earlier.subject_category != later.subject_category ||
        earlier.relation != later.relation ||
        earlier.object_category != later.object_category)
        return false;
    const auto& es = earlier.subject_traj;
    const auto& eo = earlier.object_traj;
    const auto& ls = later.subject_traj;
    const auto& lo = later.object_traj;
    if (es.end_fid == ls.begin_fid && eo.end_fid == lo.begin_fid) {
        return detail::boundary_iou(es, ls) >= merge_viou &&
               detail::boundary_iou(eo, lo) >= merge_viou;
    }
    // overlapping segments: compare the trajectories over the overlap region
    const long s_lo = std::max(es.begin_fid, ls.begin_fid);
    const long s_hi = std::min(es.end_fid, ls.end_fid);
    const long o_lo = std::max(eo.begin_fid, lo.begin_fid);
    const long o_hi = std::min(eo.end_fid, lo.end_fid);
    if (s_hi <= s_lo || o_hi <= o_lo) return false;
    if (ls.begin_fid <= es.begin_fid) return false;  // must extend forward
    return viou(es.clipped(s_lo, s_hi), ls.clipped(s_lo, s_hi)) >= merge_viou &&
           viou(eo.clipped(o_lo, o_hi), lo.clipped(o_lo, o_hi)) >= merge_viou;
}

// Splices `later` onto `earlier`, keeping the earlier segment's boxes over
// any overlap.
inline Trajectory splice_trajectories(const Trajectory& earlier, const Trajectory& later) {
    Trajectory out = earlier;
    for (long fid = std::max(later.begin_fid, earlier.end_fid); fid < later.end_fid; ++fid)
        out.boxes.push_back(*later.box_at(fid));
    out.end_fid = std::max(earlier.end_fid, later.end_fid);
    return out;
}

// Greedy relation association: triplets are processed in descending score
// order; each one extends the first compatible track (at its tail or head)
// or starts a new track. A triplet joins at most one track. The merged
// score is the mean (or max) of member scores.
inline VideoPrediction greedy_associate(const std::vector<SegmentPrediction>& segments,
                                        double merge_viou = 0.5, bool score_max = false,
                                        const std::string& video_id = "") {
    std::vector<detail::RankedTriplet> ranked;
    for (size_t s = 0; s < segments.size(); ++s)
        for (size_t i = 0; i < segments[s].triplets.size(); ++i)
            ranked.push_back({&segments[s].triplets[i], s, i,
                              segments[s].triplets[i].score.value_or(0.0)});
    std::sort(ranked.begin(), ranked.end(), detail::ranked_before);

    struct Track {
        std::vector<const RelationInstance*> members;  // in temporal order
    };
    std::vector<Track> tracks;
    for (const auto& rt : ranked) {
        bool attached = false;
        for (auto& track : tracks) {
            if (triplets_linkable(*track.members.back(), *rt.rel, merge_viou)) {
                track.members.push_back(rt.rel);
                attached = true;
                break;
            }
            if (triplets_linkable(*rt.rel, *track.members.front(), merge_viou)) {
                track.members.insert(track.members.begin(), rt.rel);
                attached = true;
                break;
            }
        }
        if (!attached) tracks.push_back(Track{{rt.rel}});
    }

    VideoPrediction out;
    out.video_id = video_id;
    for (const auto& track : tracks) {
        RelationInstance merged = *track.members.front();
        double score_acc = merged.score.value_or(0.0);
        for (size_t i = 1; i < track.members.size(); ++i) {
            const RelationInstance& next = *track.members[i];
            merged.subject_traj = splice_trajectories(merged.subject_traj, next.subject_traj);
            merged.object_traj = splice_trajectories(merged.object_traj, next.object_traj);
            const double s = next.score.value_or(0.0);
            score_acc = score_max ? std::max(score_acc, s) : score_acc + s;
        }
        merged.score = score_max
                           ? score_acc
                           : score_acc / static_cast<double>(track.members.size());
        out.triplets.push_back(std::move(merged));
    }
    std::sort(out.triplets.begin(), out.triplets.end(),
              [](const RelationInstance& a, const RelationInstance& b) {
                  if (a.score != b.score) return a.score > b.score;
                  if (a.subject_traj.begin_fid != b.subject_traj.begin_fid)
                      return a.subject_traj.begin_fid < b.subject_traj.begin_fid;
                  return std::make_tuple(a.subject_category, a.relation, a.object_category) <
                         std::make_tuple(b.subject_category, b.relation, b.object_category);
              });
    return out;
}

// Same greedy merge applied to per-segment object trajectories (category +
// boundary IoU rule); used to build video-level object tracks for the
// trajectory detection metric.
struct ScoredTrack {
    int category = -1;
    double score = 0;
    Trajectory traj;
};

inline std::vector<ScoredTrack> associate_object_tracks(
    const std::vector<std::vector<ScoredTrack>>& per_segment, double merge_viou = 0.5) {
    struct Ranked {
        const ScoredTrack* t;
        size_t segment, index;
    };
    std::vector<Ranked> ranked;
    for (size_t s = 0; s < per_segment.size(); ++s)
        for (size_t i = 0; i < per_segment[s].size(); ++i)
            ranked.push_back({&per_segment[s][i], s, i});
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
        if (a.t->score != b.t->score) return a.t->score > b.t->score;
        if (a.segment != b.segment) return a.segment < b.segment;
        return a.index < b.index;
    });

    auto linkable = [&](const ScoredTrack& earlier, const ScoredTrack& later) {
        if (earlier.category != later.category) return false;
        if (earlier.traj.end_fid != later.traj.begin_fid) return false;
        return box_iou(earlier.traj.boxes.back(), later.traj.boxes.front()) >= merge_viou;
    };

    struct Chain {
        std::vector<const ScoredTrack*> members;
    };
    std::vector<Chain> chains;
    for (const auto& r : ranked) {
        bool attached = false;
        for (auto& chain : chains) {
            if (linkable(*chain.members.back(), *r.t)) {
                chain.members.push_back(r.t);
                attached = true;
                break;
            }
            if (linkable(*r.t, *chain.members.front())) {
                chain.members.insert(chain.members.begin(), r.t);
                attached = true;
                break;
            }
        }
        if (!attached) chains.push_back(Chain{{r.t}});
    }

    std::vector<ScoredTrack> out;
    for (const auto& chain : chains) {
        ScoredTrack merged = *chain.members.front();
        double acc = merged.score;
        for (size_t i = 1; i < chain.members.size(); ++i) {
            merged.traj = splice_trajectories(merged.traj, chain.members[i]->traj);
            acc += chain.members[i]->score;
        }
        merged.score = acc / static_cast<double>(chain.members.size());
        out.push_back(std::move(merged));
    }
    std::sort(out.begin(), out.end(), [](const ScoredTrack& a, const ScoredTrack& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.traj.begin_fid != b.traj.begin_fid) return a.traj.begin_fid < b.traj.begin_fid;
        return a.category < b.category;
    });
    return out;
}

}  // namespace metor
