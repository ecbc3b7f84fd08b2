#pragma once

#include "metor/data.hpp"
#include "metor/rng.hpp"

// Deterministic moving-shapes video generator. Objects are flat-colored
// shapes on a textured background moving along linear or gently curved
// paths; ground-truth relations are derived from the stored boxes by fixed
// geometric predicates, so they can always be re-derived by evaluating the
// same predicates on the annotations.

namespace metor::synth {

struct GenConfig {
    long videos = 4;
    long frames_per_video = 60;
    long width = 64;
    long height = 64;
    long min_objects = 2;
    long max_objects = 3;
    long object_categories = 6;    // prefix of the shape x color inventory
    long relation_categories = 12;  // prefix of the predicate inventory
    long min_run_frames = 3;        // shortest relation run kept as ground truth
    double follow_prob = 0.35;      // chance an object shadows an earlier one
    double curve_prob = 0.4;
    double static_prob = 0.15;
};

// --- category inventories -------------------------------------------------

inline const std::vector<std::string>& shape_names() {
    static const std::vector<std::string> v{"square", "disc", "triangle"};
    return v;
}

struct ColorDef {
    const char* name;
    float r, g, b;
};

inline const std::vector<ColorDef>& color_defs() {
    static const std::vector<ColorDef> v{
        {"red", 0.90f, 0.15f, 0.15f},    {"green", 0.15f, 0.80f, 0.20f},
        {"blue", 0.20f, 0.30f, 0.90f},   {"yellow", 0.90f, 0.85f, 0.20f},
        {"magenta", 0.85f, 0.20f, 0.80f}, {"cyan", 0.20f, 0.85f, 0.85f}};
    return v;
}

inline const std::vector<std::string>& predicate_names() {
    static const std::vector<std::string> v{
        "left-of",       "right-of",         "above",       "below",
        "near",          "apart-from",       "moving-toward", "moving-away-from",
        "faster-than",   "slower-than",      "following",   "leading",
        "larger-than",   "smaller-than"};
    return v;
}

inline Vocabulary build_vocabulary(const GenConfig& cfg) {
    const long inventory =
        static_cast<long>(shape_names().size() * color_defs().size());
    if (cfg.object_categories < 1 || cfg.object_categories > inventory)
        throw DataError("object_categories must lie in [1," + std::to_string(inventory) +
                        "]: the shape x color inventory has " + std::to_string(inventory) +
                        " entries");
    if (cfg.relation_categories < 1 ||
        cfg.relation_categories > static_cast<long>(predicate_names().size()))
        throw DataError("relation_categories must lie in [1," +
                        std::to_string(predicate_names().size()) + "]");
    Vocabulary vocab;
    for (long i = 0; i < cfg.object_categories; ++i) {
        const auto& color = color_defs()[static_cast<size_t>(i) % color_defs().size()];
        const auto& shape =
            shape_names()[static_cast<size_t>(i) / color_defs().size() % shape_names().size()];
        vocab.objects.push_back(
            Category{static_cast<int>(i), std::string(color.name) + "-" + shape, false});
    }
    for (long i = 0; i < cfg.relation_categories; ++i)
        vocab.relations.push_back(
            Category{static_cast<int>(i), predicate_names()[static_cast<size_t>(i)], false});
    return vocab;
}

// --- geometric predicates ---------------------------------------------------

// Per-frame kinematic state in normalized coordinates. Velocity at frame t
// is c(t+1)-c(t); the last frame reuses the previous velocity.
struct FrameState {
    double cx, cy;     // normalized center
    double vx, vy;     // normalized per-frame velocity
    double area;       // normalized box area
};

// Fixed thresholds the predicates (and any oracle) are defined on.
inline constexpr double kSideMargin = 0.05;         // left-of / above separation
inline constexpr double kNearDist = 0.25;           // fraction of the frame diagonal
inline constexpr double kApartDist = 0.5;           // fraction of the frame diagonal
inline constexpr double kApproachDelta = 0.003;     // per-frame distance change
inline constexpr double kSpeedMargin = 0.002;       // faster-than separation
inline constexpr double kMovingSpeed = 0.002;       // "is moving" cutoff
inline constexpr double kAlignCos = 0.8;            // velocity alignment for following
inline constexpr double kAreaRatio = 1.5;           // larger-than ratio

inline std::vector<FrameState> frame_states(const Trajectory& traj, double frame_w,
                                            double frame_h) {
    std::vector<FrameState> states(static_cast<size_t>(traj.length()));
    for (long i = 0; i < traj.length(); ++i) {
        const auto c = traj.boxes[static_cast<size_t>(i)].to_center_norm(frame_w, frame_h);
        states[static_cast<size_t>(i)] = FrameState{c[0], c[1], 0.0, 0.0, c[2] * c[3]};
    }
    for (long i = 0; i + 1 < traj.length(); ++i) {
        states[static_cast<size_t>(i)].vx =
            states[static_cast<size_t>(i + 1)].cx - states[static_cast<size_t>(i)].cx;
        states[static_cast<size_t>(i)].vy =
            states[static_cast<size_t>(i + 1)].cy - states[static_cast<size_t>(i)].cy;
    }
    if (traj.length() >= 2) {
        states.back().vx = states[states.size() - 2].vx;
        states.back().vy = states[states.size() - 2].vy;
    }
    return states;
}

inline bool eval_predicate(const std::string& name, const FrameState& a, const FrameState& b) {
    constexpr double diag = std::numbers::sqrt2;  // unit-square diagonal
    const double dist = std::hypot(a.cx - b.cx, a.cy - b.cy);
    if (name == "left-of") return a.cx + kSideMargin < b.cx;
    if (name == "right-of") return a.cx > b.cx + kSideMargin;
    if (name == "above") return a.cy + kSideMargin < b.cy;
    if (name == "below") return a.cy > b.cy + kSideMargin;
    if (name == "near") return dist < kNearDist * diag;
    if (name == "apart-from") return dist > kApartDist * diag;
    if (name == "moving-toward" || name == "moving-away-from") {
        const double next_dist =
            std::hypot((a.cx + a.vx) - (b.cx + b.vx), (a.cy + a.vy) - (b.cy + b.vy));
        const double delta = next_dist - dist;
        return name == "moving-toward" ? delta < -kApproachDelta : delta > kApproachDelta;
    }
    const double speed_a = std::hypot(a.vx, a.vy);
    const double speed_b = std::hypot(b.vx, b.vy);
    if (name == "faster-than") return speed_a > speed_b + kSpeedMargin;
    if (name == "slower-than") return speed_a + kSpeedMargin < speed_b;
    auto follows = [&](const FrameState& f, const FrameState& l) {
        const double sf = std::hypot(f.vx, f.vy), sl = std::hypot(l.vx, l.vy);
        if (sf <= kMovingSpeed || sl <= kMovingSpeed) return false;
        const double cosv = (f.vx * l.vx + f.vy * l.vy) / (sf * sl);
        if (cosv <= kAlignCos) return false;
        // the leader sits ahead of the follower along the follower's heading
        const double ahead = (l.cx - f.cx) * f.vx + (l.cy - f.cy) * f.vy;
        return ahead > 0 && dist < kApartDist * diag;
    };
    if (name == "following") return follows(a, b);
    if (name == "leading") return follows(b, a);
    if (name == "larger-than") return a.area > kAreaRatio * b.area;
    if (name == "smaller-than") return kAreaRatio * a.area < b.area;
    throw std::logic_error("unknown predicate: " + name);
}

// Evaluates one predicate per frame over the common extent of two tracks.
inline std::vector<bool> predicate_series(const std::string& name, const Trajectory& ta,
                                          const Trajectory& tb, double frame_w,
                                          double frame_h) {
    const long lo = std::max(ta.begin_fid, tb.begin_fid);
    const long hi = std::min(ta.end_fid, tb.end_fid);
    std::vector<bool> series;
    if (hi <= lo) return series;
    const auto sa = frame_states(ta, frame_w, frame_h);
    const auto sb = frame_states(tb, frame_w, frame_h);
    series.resize(static_cast<size_t>(hi - lo));
    for (long fid = lo; fid < hi; ++fid)
        series[static_cast<size_t>(fid - lo)] =
            eval_predicate(name, sa[static_cast<size_t>(fid - ta.begin_fid)],
                           sb[static_cast<size_t>(fid - tb.begin_fid)]);
    return series;
}

// Maximal contiguous true-runs of at least min_run frames, as global
// [begin, end) frame spans.
inline std::vector<std::pair<long, long>> true_runs(const std::vector<bool>& series,
                                                    long offset, long min_run) {
    std::vector<std::pair<long, long>> runs;
    long start = -1;
    for (long i = 0; i <= static_cast<long>(series.size()); ++i) {
        const bool on = i < static_cast<long>(series.size()) && series[static_cast<size_t>(i)];
        if (on && start < 0) start = i;
        if (!on && start >= 0) {
            if (i - start >= min_run) runs.emplace_back(offset + start, offset + i);
            start = -1;
        }
    }
    return runs;
}

// Ground-truth relations between all ordered track pairs: per-frame
// predicate evaluation merged over maximal contiguous runs.
inline std::vector<RelationInstance> derive_relations(const std::vector<ObjectTrack>& tracks,
                                                      const Vocabulary& vocab, double frame_w,
                                                      double frame_h, long min_run) {
    std::vector<RelationInstance> rels;
    for (size_t i = 0; i < tracks.size(); ++i)
        for (size_t j = 0; j < tracks.size(); ++j) {
            if (i == j) continue;
            const auto& ta = tracks[i].traj;
            const auto& tb = tracks[j].traj;
            const long lo = std::max(ta.begin_fid, tb.begin_fid);
            for (const auto& cat : vocab.relations) {
                const auto series = predicate_series(cat.name, ta, tb, frame_w, frame_h);
                for (const auto& [rb, re] : true_runs(series, lo, min_run)) {
                    RelationInstance r;
                    r.subject_category = tracks[i].category;
                    r.relation = cat.id;
                    r.object_category = tracks[j].category;
                    r.subject_tid = tracks[i].tid;
                    r.object_tid = tracks[j].tid;
                    r.subject_traj = ta.clipped(rb, re);
                    r.object_traj = tb.clipped(rb, re);
                    rels.push_back(std::move(r));
                }
            }
        }
    return rels;
}

// --- motion + rendering -----------------------------------------------------

namespace detail {

struct SceneObject {
    int tid;
    int category;
    double half_w, half_h;         // normalized half extents
    std::vector<double> cx, cy;    // per-frame centers
};

inline void clamp_center(double& cx, double& cy, double margin_x, double margin_y) {
    cx = std::min(1.0 - margin_x, std::max(margin_x, cx));
    cy = std::min(1.0 - margin_y, std::max(margin_y, cy));
}

inline std::vector<SceneObject> build_scene(Rng& rng, const GenConfig& cfg,
                                            const Vocabulary& vocab) {
    const long count =
        cfg.min_objects + static_cast<long>(rng.next_below(
                              static_cast<std::uint64_t>(cfg.max_objects - cfg.min_objects + 1)));
    const long T = cfg.frames_per_video;
    std::vector<SceneObject> objs;
    for (long i = 0; i < count; ++i) {
        SceneObject o;
        o.tid = static_cast<int>(i);
        // bias categories so instance counts are skewed; rarity then gives
        // the base/novel split something to rank
        double u = rng.uniform();
        u = u * u;
        o.category = static_cast<int>(static_cast<double>(vocab.objects.size()) * u);
        o.category = std::min<int>(o.category, static_cast<int>(vocab.objects.size()) - 1);
        o.half_w = rng.uniform(0.06, 0.14);
        o.half_h = rng.uniform(0.06, 0.14);
        const double mx = o.half_w + 0.02, my = o.half_h + 0.02;

        const bool follows = i > 0 && T >= 2 && rng.uniform() < cfg.follow_prob;
        if (follows) {
            const auto& leader = objs[static_cast<size_t>(rng.next_below(
                static_cast<std::uint64_t>(objs.size())))];
            // shadow the leader's displacement from an offset start
            const double lag = rng.uniform(0.10, 0.28);
            const double dirx = leader.cx[1] - leader.cx[0];
            const double diry = leader.cy[1] - leader.cy[0];
            const double norm = std::hypot(dirx, diry);
            double ox = -lag, oy = 0.0;
            if (norm > 1e-9) {
                ox = -dirx / norm * lag;
                oy = -diry / norm * lag;
            }
            o.cx.resize(static_cast<size_t>(T));
            o.cy.resize(static_cast<size_t>(T));
            for (long t = 0; t < T; ++t) {
                o.cx[static_cast<size_t>(t)] = leader.cx[static_cast<size_t>(t)] + ox;
                o.cy[static_cast<size_t>(t)] = leader.cy[static_cast<size_t>(t)] + oy;
                clamp_center(o.cx[static_cast<size_t>(t)], o.cy[static_cast<size_t>(t)], mx, my);
            }
        } else {
            const bool is_static = rng.uniform() < cfg.static_prob;
            const double x0 = rng.uniform(mx, 1.0 - mx), y0 = rng.uniform(my, 1.0 - my);
            double x1 = x0, y1 = y0;
            if (!is_static) {
                x1 = rng.uniform(mx, 1.0 - mx);
                y1 = rng.uniform(my, 1.0 - my);
            }
            const bool curved = !is_static && rng.uniform() < cfg.curve_prob;
            const double amp = curved ? rng.uniform(0.02, 0.08) : 0.0;
            const double cycles = 1.0 + static_cast<double>(rng.next_below(2));
            const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            double px = -(y1 - y0), py = x1 - x0;
            const double pn = std::hypot(px, py);
            if (pn > 1e-9) {
                px /= pn;
                py /= pn;
            } else {
                px = 0.0;
                py = 1.0;
            }
            o.cx.resize(static_cast<size_t>(T));
            o.cy.resize(static_cast<size_t>(T));
            for (long t = 0; t < T; ++t) {
                const double s = T > 1 ? static_cast<double>(t) / static_cast<double>(T - 1) : 0.0;
                const double wig =
                    amp * std::sin(2.0 * std::numbers::pi * cycles * s + phase);
                o.cx[static_cast<size_t>(t)] = x0 + (x1 - x0) * s + px * wig;
                o.cy[static_cast<size_t>(t)] = y0 + (y1 - y0) * s + py * wig;
                clamp_center(o.cx[static_cast<size_t>(t)], o.cy[static_cast<size_t>(t)], mx, my);
            }
        }
        objs.push_back(std::move(o));
    }
    return objs;
}

inline Tensor<float> render(const std::vector<SceneObject>& objs,
                            const std::vector<ObjectTrack>& tracks, const GenConfig& cfg,
                            std::uint64_t video_seed) {
    const long T = cfg.frames_per_video, H = cfg.height, W = cfg.width;
    Tensor<float> frames(Shape{T, H, W, 3});
    auto& px = frames.mutable_data();

    // static textured background shared by all frames
    std::vector<float> bg(static_cast<size_t>(H * W));
    Rng bg_rng(video_seed, hash_string("background"));
    for (auto& v : bg) v = static_cast<float>(0.22 + 0.10 * bg_rng.uniform());
    for (long t = 0; t < T; ++t)
        for (long y = 0; y < H; ++y)
            for (long x = 0; x < W; ++x) {
                const size_t base = static_cast<size_t>(((t * H + y) * W + x) * 3);
                const float v = bg[static_cast<size_t>(y * W + x)];
                px[base] = v;
                px[base + 1] = v;
                px[base + 2] = v;
            }

    for (size_t oi = 0; oi < objs.size(); ++oi) {
        const auto& obj = objs[oi];
        const auto& color = color_defs()[static_cast<size_t>(obj.category) % color_defs().size()];
        const size_t shape_idx = static_cast<size_t>(obj.category) / color_defs().size();
        const std::string& shape = shape_names()[shape_idx % shape_names().size()];
        for (long t = 0; t < T; ++t) {
            const BBox& b = tracks[oi].traj.boxes[static_cast<size_t>(t)];
            const long x0 = std::max(0L, static_cast<long>(std::floor(b.xmin)));
            const long x1 = std::min(W, static_cast<long>(std::ceil(b.xmax)));
            const long y0 = std::max(0L, static_cast<long>(std::floor(b.ymin)));
            const long y1 = std::min(H, static_cast<long>(std::ceil(b.ymax)));
            const double cx = (b.xmin + b.xmax) / 2.0, cy = (b.ymin + b.ymax) / 2.0;
            const double rx = (b.xmax - b.xmin) / 2.0, ry = (b.ymax - b.ymin) / 2.0;
            for (long y = y0; y < y1; ++y)
                for (long x = x0; x < x1; ++x) {
                    const double fx = static_cast<double>(x) + 0.5;
                    const double fy = static_cast<double>(y) + 0.5;
                    bool inside = true;
                    if (shape == "disc") {
                        const double dx = (fx - cx) / rx, dy = (fy - cy) / ry;
                        inside = dx * dx + dy * dy <= 1.0;
                    } else if (shape == "triangle") {
                        // isoceles: apex top-center, base at the bottom
                        const double u = (fy - b.ymin) / (2.0 * ry);  // 0 top .. 1 bottom
                        inside = std::abs(fx - cx) <= rx * u;
                    }
                    if (!inside) continue;
                    const size_t base = static_cast<size_t>(((t * H + y) * W + x) * 3);
                    px[base] = color.r;
                    px[base + 1] = color.g;
                    px[base + 2] = color.b;
                }
        }
    }
    return frames;
}

}  // namespace detail

inline std::uint64_t video_stream_seed(std::uint64_t seed, long video_index) {
    return metor::detail::mix64(seed ^
                                metor::detail::mix64(0x5eedULL + static_cast<std::uint64_t>(video_index)));
}

// Deterministic in `seed`: per-video streams are derived from it, so the
// result is independent of generation order.
inline VideoSample generate_video(std::uint64_t seed, long video_index, const GenConfig& cfg,
                                  const Vocabulary& vocab, bool with_frames = true) {
    const std::uint64_t video_seed = video_stream_seed(seed, video_index);
    Rng rng(video_seed);
    VideoSample video;
    video.video_id = "synth" + std::to_string(video_index);
    video.frame_count = cfg.frames_per_video;
    video.width = cfg.width;
    video.height = cfg.height;

    const auto objs = detail::build_scene(rng, cfg, vocab);
    for (const auto& o : objs) {
        ObjectTrack track;
        track.tid = o.tid;
        track.category = o.category;
        track.traj.begin_fid = 0;
        track.traj.end_fid = cfg.frames_per_video;
        for (long t = 0; t < cfg.frames_per_video; ++t)
            track.traj.boxes.push_back(BBox::from_center_norm(
                o.cx[static_cast<size_t>(t)], o.cy[static_cast<size_t>(t)], 2.0 * o.half_w,
                2.0 * o.half_h, static_cast<double>(cfg.width),
                static_cast<double>(cfg.height)));
        video.gt_objects.push_back(std::move(track));
    }
    video.gt_relations =
        derive_relations(video.gt_objects, vocab, static_cast<double>(cfg.width),
                         static_cast<double>(cfg.height), cfg.min_run_frames);
    if (with_frames)
        video.frames = detail::render(objs, video.gt_objects, cfg, video_seed);
    return video;
}

inline std::vector<VideoSample> generate_corpus(std::uint64_t seed, const GenConfig& cfg,
                                                const Vocabulary& vocab,
                                                bool with_frames = true) {
    std::vector<VideoSample> corpus;
    for (long i = 0; i < cfg.videos; ++i)
        corpus.push_back(generate_video(seed, i, cfg, vocab, with_frames));
    return corpus;
}

}  // namespace metor::synth
