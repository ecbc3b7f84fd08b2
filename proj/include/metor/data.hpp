#pragma once

#include <array>
#include <optional>

#include "metor/tensor.hpp"

namespace metor {

struct Category {
    int id = 0;
    std::string name;
    bool is_novel = false;
};

// Object and relationship category tables with base/novel flags. Ids are
// dense from 0; base and novel partition each table.
struct Vocabulary {
    std::vector<Category> objects;
    std::vector<Category> relations;

    int object_id(const std::string& name) const {
        for (const auto& c : objects)
            if (c.name == name) return c.id;
        return -1;
    }
    int relation_id(const std::string& name) const {
        for (const auto& c : relations)
            if (c.name == name) return c.id;
        return -1;
    }

    std::vector<long> base_object_ids() const {
        std::vector<long> ids;
        for (const auto& c : objects)
            if (!c.is_novel) ids.push_back(c.id);
        return ids;
    }
    std::vector<long> base_relation_ids() const {
        std::vector<long> ids;
        for (const auto& c : relations)
            if (!c.is_novel) ids.push_back(c.id);
        return ids;
    }

    bool has_novel_relations() const {
        for (const auto& c : relations)
            if (c.is_novel) return true;
        return false;
    }

    std::uint64_t fingerprint() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        auto mix = [&](const std::string& s, bool novel) {
            for (unsigned char c : s) {
                h ^= c;
                h *= 0x100000001b3ULL;
            }
            h ^= novel ? 0x9eU : 0x31U;
            h *= 0x100000001b3ULL;
        };
        for (const auto& c : objects) mix(c.name, c.is_novel);
        for (const auto& c : relations) mix(c.name, c.is_novel);
        return h;
    }
};

// Corner-form box in pixel coordinates.
struct BBox {
    double xmin = 0, ymin = 0, xmax = 0, ymax = 0;

    double width() const { return xmax - xmin; }
    double height() const { return ymax - ymin; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    bool valid() const { return xmin < xmax && ymin < ymax; }

    // Normalized center form (cx, cy, w, h) in [0,1].
    std::array<double, 4> to_center_norm(double frame_w, double frame_h) const {
        return {(xmin + xmax) / 2.0 / frame_w, (ymin + ymax) / 2.0 / frame_h,
                (xmax - xmin) / frame_w, (ymax - ymin) / frame_h};
    }

    static BBox from_center_norm(double cx, double cy, double w, double h, double frame_w,
                                 double frame_h) {
        return BBox{(cx - w / 2) * frame_w, (cy - h / 2) * frame_h, (cx + w / 2) * frame_w,
                    (cy + h / 2) * frame_h};
    }
};

inline double box_iou(const BBox& a, const BBox& b) {
    const double ix = std::max(0.0, std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin));
    const double iy = std::max(0.0, std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

// One box per frame over a contiguous span [begin_fid, end_fid).
struct Trajectory {
    long begin_fid = 0;
    long end_fid = 0;
    std::vector<BBox> boxes;

    long length() const { return end_fid - begin_fid; }
    bool valid() const {
        return end_fid > begin_fid && static_cast<long>(boxes.size()) == length();
    }

    const BBox* box_at(long fid) const {
        if (fid < begin_fid || fid >= end_fid) return nullptr;
        return &boxes[static_cast<size_t>(fid - begin_fid)];
    }

    // Intersection with [lo, hi); empty trajectory when disjoint.
    Trajectory clipped(long lo, long hi) const {
        Trajectory out;
        out.begin_fid = std::max(begin_fid, lo);
        out.end_fid = std::min(end_fid, hi);
        if (out.end_fid <= out.begin_fid) {
            out.begin_fid = out.end_fid = 0;
            return out;
        }
        out.boxes.assign(boxes.begin() + (out.begin_fid - begin_fid),
                         boxes.begin() + (out.end_fid - begin_fid));
        return out;
    }

    long overlap_length(const Trajectory& other) const {
        return std::max(0L, std::min(end_fid, other.end_fid) -
                                std::max(begin_fid, other.begin_fid));
    }
};

// (s, r, o) with the two trajectories; subject_tid/object_tid link ground
// truth back to tracks (-1 on predictions), score is set on predictions.
struct RelationInstance {
    int subject_category = -1;
    int relation = -1;
    int object_category = -1;
    Trajectory subject_traj;
    Trajectory object_traj;
    int subject_tid = -1;
    int object_tid = -1;
    std::optional<double> score;
};

struct ObjectTrack {
    int tid = 0;
    int category = 0;
    Trajectory traj;
};

struct VideoSample {
    std::string video_id;
    long frame_count = 0;
    long width = 0;
    long height = 0;
    std::optional<Tensor<float>> frames;  // (T,H,W,3) in [0,1] when materialized
    std::vector<ObjectTrack> gt_objects;
    std::vector<RelationInstance> gt_relations;
};

// One fixed-length window of a video with ground truth clipped to its range.
struct SegmentBatch {
    std::string video_id;
    long begin_fid = 0;
    long end_fid = 0;
    Tensor<float> frames;  // (L,H,W,3); empty (numel 1 placeholder) when the video has no pixels
    bool has_frames = false;
    std::vector<ObjectTrack> gt_objects;
    std::vector<RelationInstance> gt_relations;

    long length() const { return end_fid - begin_fid; }
};

inline constexpr long kSegmentLength = 30;
inline constexpr long kMinRelationFramesPerSegment = 2;

// Consecutive windows of `segment_length` frames starting at frame 0 with
// the given stride; a trailing partial window is dropped. Ground truth is
// clipped to each window; relations keep global frame ids and are dropped
// when the clipped overlap is shorter than 2 frames.
inline std::vector<SegmentBatch> segmentize(const VideoSample& video,
                                            long segment_length = kSegmentLength,
                                            long stride = 0) {
    if (stride <= 0) stride = segment_length;
    std::vector<SegmentBatch> out;
    if (video.frame_count < segment_length) {
        log_warn("segmentize: video %s has %ld frames (< %ld); producing no segments",
                 video.video_id.c_str(), video.frame_count, segment_length);
        return out;
    }
    for (long start = 0; start + segment_length <= video.frame_count; start += stride) {
        SegmentBatch seg;
        seg.video_id = video.video_id;
        seg.begin_fid = start;
        seg.end_fid = start + segment_length;
        if (video.frames.has_value()) {
            const Tensor<float>& f = *video.frames;
            const long frame_elems = f.dim(1) * f.dim(2) * f.dim(3);
            std::vector<float> slice(f.data().begin() + start * frame_elems,
                                     f.data().begin() + seg.end_fid * frame_elems);
            seg.frames = Tensor<float>(Shape{segment_length, f.dim(1), f.dim(2), f.dim(3)},
                                       std::move(slice));
            seg.has_frames = true;
        }
        for (const auto& obj : video.gt_objects) {
            Trajectory clipped = obj.traj.clipped(seg.begin_fid, seg.end_fid);
            if (clipped.length() >= 1)
                seg.gt_objects.push_back(ObjectTrack{obj.tid, obj.category, clipped});
        }
        for (const auto& rel : video.gt_relations) {
            RelationInstance r = rel;
            r.subject_traj = rel.subject_traj.clipped(seg.begin_fid, seg.end_fid);
            r.object_traj = rel.object_traj.clipped(seg.begin_fid, seg.end_fid);
            const long span =
                std::min(r.subject_traj.end_fid, r.object_traj.end_fid) -
                std::max(r.subject_traj.begin_fid, r.object_traj.begin_fid);
            if (r.subject_traj.length() >= kMinRelationFramesPerSegment &&
                r.object_traj.length() >= kMinRelationFramesPerSegment &&
                span >= kMinRelationFramesPerSegment)
                seg.gt_relations.push_back(std::move(r));
        }
        out.push_back(std::move(seg));
    }
    return out;
}

// Marks the `ceil(fraction * |categories|)` rarest categories (by ground
// truth instance count) as novel; ties break by ascending category id. The
// base set must stay non-empty.
inline std::vector<Category> mark_rarest_novel(std::vector<Category> categories,
                                               const std::vector<long>& instance_counts,
                                               double fraction, const char* kind) {
    const long n = static_cast<long>(categories.size());
    if (fraction < 0.0 || fraction >= 1.0)
        throw DataError(std::string("novel fraction for ") + kind + " must lie in [0,1)");
    const long novel_count = static_cast<long>(std::ceil(fraction * static_cast<double>(n)));
    if (novel_count >= n && n > 0)
        throw DataError(std::string("novel fraction for ") + kind +
                        " would leave the base set empty");
    std::vector<long> order(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](long a, long b) {
        if (instance_counts[static_cast<size_t>(a)] != instance_counts[static_cast<size_t>(b)])
            return instance_counts[static_cast<size_t>(a)] <
                   instance_counts[static_cast<size_t>(b)];
        return a < b;
    });
    for (auto& c : categories) c.is_novel = false;
    for (long i = 0; i < novel_count; ++i)
        categories[static_cast<size_t>(order[static_cast<size_t>(i)])].is_novel = true;
    return categories;
}

struct InstanceCounts {
    std::vector<long> objects;
    std::vector<long> relations;
};

inline InstanceCounts count_instances(const Vocabulary& vocab,
                                      const std::vector<VideoSample>& corpus) {
    InstanceCounts counts;
    counts.objects.assign(vocab.objects.size(), 0);
    counts.relations.assign(vocab.relations.size(), 0);
    for (const auto& v : corpus) {
        for (const auto& o : v.gt_objects) counts.objects[static_cast<size_t>(o.category)]++;
        for (const auto& r : v.gt_relations) counts.relations[static_cast<size_t>(r.relation)]++;
    }
    return counts;
}

inline Vocabulary split_vocabulary(const Vocabulary& vocab, const InstanceCounts& counts,
                                   double novel_fraction_obj, double novel_fraction_rel) {
    Vocabulary out = vocab;
    out.objects = mark_rarest_novel(out.objects, counts.objects, novel_fraction_obj, "objects");
    out.relations =
        mark_rarest_novel(out.relations, counts.relations, novel_fraction_rel, "relations");
    return out;
}

// Drops novel-category ground truth from a sample: novel object tracks
// vanish along with every relation that touches them or carries a novel
// predicate. This is the only view of the data the trainer may see.
inline VideoSample filter_to_base(const VideoSample& video, const Vocabulary& vocab) {
    VideoSample out = video;
    out.gt_objects.clear();
    out.gt_relations.clear();
    std::vector<bool> track_kept;
    for (const auto& obj : video.gt_objects) {
        const bool keep = !vocab.objects[static_cast<size_t>(obj.category)].is_novel;
        track_kept.push_back(keep);
        if (keep) out.gt_objects.push_back(obj);
    }
    auto tid_kept = [&](int tid) -> bool {
        for (size_t i = 0; i < video.gt_objects.size(); ++i)
            if (video.gt_objects[i].tid == tid) return track_kept[i];
        return false;
    };
    for (const auto& rel : video.gt_relations) {
        if (vocab.relations[static_cast<size_t>(rel.relation)].is_novel) continue;
        if (!tid_kept(rel.subject_tid) || !tid_kept(rel.object_tid)) continue;
        out.gt_relations.push_back(rel);
    }
    return out;
}

}  // namespace metor
