#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "metor/metrics.hpp"
#include "support/oracles.hpp"

using namespace metor;
using Catch::Approx;

namespace {

Trajectory box_run(long begin, long end, double xmin, double ymin, double xmax, double ymax) {
    Trajectory t;
    t.begin_fid = begin;
    t.end_fid = end;
    for (long f = begin; f < end; ++f) t.boxes.push_back(BBox{xmin, ymin, xmax, ymax});
    return t;
}

RelationInstance triplet(int s, int r, int o, Trajectory ts, Trajectory to, double score) {
    RelationInstance t;
    t.subject_category = s;
    t.relation = r;
    t.object_category = o;
    t.subject_traj = std::move(ts);
    t.object_traj = std::move(to);
    t.score = score;
    return t;
}

// ---------------------------------------------------------------------------
// Chain-enumeration oracle for the greedy association. Links are recomputed
// from scratch with per-frame loops; every valid chain is enumerated by DFS
// and the greedy selection is replayed over explicit index chains.

struct FlatTriplet {
    RelationInstance rel;
    size_t segment;
    size_t index;
};

bool oracle_link(const RelationInstance& a, const RelationInstance& b, double thresh) {
    if (a.subject_category != b.subject_category || a.relation != b.relation ||
        a.object_category != b.object_category)
        return false;
    if (a.subject_traj.end_fid != b.subject_traj.begin_fid ||
        a.object_traj.end_fid != b.object_traj.begin_fid)
        return false;
    auto iou = [](const BBox& x, const BBox& y) {
        const double ix = std::max(0.0, std::min(x.xmax, y.xmax) - std::max(x.xmin, y.xmin));
        const double iy = std::max(0.0, std::min(x.ymax, y.ymax) - std::max(x.ymin, y.ymin));
        const double inter = ix * iy;
        const double ua = (x.xmax - x.xmin) * (x.ymax - x.ymin) +
                          (y.xmax - y.xmin) * (y.ymax - y.ymin) - inter;
        return ua > 0 ? inter / ua : 0.0;
    };
    return iou(a.subject_traj.boxes.back(), b.subject_traj.boxes.front()) >= thresh &&
           iou(a.object_traj.boxes.back(), b.object_traj.boxes.front()) >= thresh;
}

// all valid chains (as index sequences), grown by DFS over the link relation
std::set<std::vector<size_t>> enumerate_chains(const std::vector<FlatTriplet>& flat,
                                               double thresh) {
    std::set<std::vector<size_t>> chains;
    std::function<void(std::vector<size_t>&)> grow = [&](std::vector<size_t>& chain) {
        chains.insert(chain);
        for (size_t n = 0; n < flat.size(); ++n) {
            if (std::find(chain.begin(), chain.end(), n) != chain.end()) continue;
            if (oracle_link(flat[chain.back()].rel, flat[n].rel, thresh)) {
                chain.push_back(n);
                grow(chain);
                chain.pop_back();
            }
        }
    };
    for (size_t i = 0; i < flat.size(); ++i) {
        std::vector<size_t> chain{i};
        grow(chain);
    }
    return chains;
}

// replay of the documented greedy order over explicit chains
std::vector<std::vector<size_t>> oracle_greedy_chains(const std::vector<FlatTriplet>& flat,
                                                      double thresh) {
    std::vector<size_t> order(flat.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t x, size_t y) {
        const auto& a = flat[x];
        const auto& b = flat[y];
        const double sa = a.rel.score.value_or(0), sb = b.rel.score.value_or(0);
        if (sa != sb) return sa > sb;
        if (a.rel.subject_traj.begin_fid != b.rel.subject_traj.begin_fid)
            return a.rel.subject_traj.begin_fid < b.rel.subject_traj.begin_fid;
        const auto ka = std::make_tuple(a.rel.subject_category, a.rel.relation,
                                        a.rel.object_category);
        const auto kb = std::make_tuple(b.rel.subject_category, b.rel.relation,
                                        b.rel.object_category);
        if (ka != kb) return ka < kb;
        if (a.segment != b.segment) return a.segment < b.segment;
        return a.index < b.index;
    });
    std::vector<std::vector<size_t>> chains;
    for (size_t idx : order) {
        bool attached = false;
        for (auto& chain : chains) {
            if (oracle_link(flat[chain.back()].rel, flat[idx].rel, thresh)) {
                chain.push_back(idx);
                attached = true;
                break;
            }
            if (oracle_link(flat[idx].rel, flat[chain.front()].rel, thresh)) {
                chain.insert(chain.begin(), idx);
                attached = true;
                break;
            }
        }
        if (!attached) chains.push_back({idx});
    }
    return chains;
}

using MergedKey = std::tuple<int, int, int, long, long, double>;  // s,r,o,begin,end,score

std::set<MergedKey> merged_key_set(const std::vector<RelationInstance>& rels) {
    std::set<MergedKey> out;
    for (const auto& r : rels)
        out.insert({r.subject_category, r.relation, r.object_category,
                    r.subject_traj.begin_fid, r.subject_traj.end_fid,
                    std::round(r.score.value_or(0) * 1e9) / 1e9});
    return out;
}

std::set<MergedKey> oracle_merged_set(const std::vector<FlatTriplet>& flat, double thresh) {
    const auto chains = oracle_greedy_chains(flat, thresh);
    const auto valid = enumerate_chains(flat, thresh);
    std::set<MergedKey> out;
    for (const auto& chain : chains) {
        REQUIRE(valid.count(chain) == 1);  // every greedy track is a valid chain
        double score = 0;
        long begin = flat[chain.front()].rel.subject_traj.begin_fid;
        long end = flat[chain.back()].rel.subject_traj.end_fid;
        for (size_t idx : chain) score += flat[idx].rel.score.value_or(0);
        score /= static_cast<double>(chain.size());
        const auto& head = flat[chain.front()].rel;
        out.insert({head.subject_category, head.relation, head.object_category, begin, end,
                    std::round(score * 1e9) / 1e9});
    }
    return out;
}

}  // namespace

TEST_CASE("viou closed forms and symmetry", "[metrics]") {
    SECTION("identical trajectories overlap fully") {
        auto t = box_run(0, 10, 0, 0, 10, 10);
        REQUIRE(viou(t, t) == 1.0);
    }

    SECTION("temporally disjoint trajectories never overlap") {
        REQUIRE(viou(box_run(0, 5, 0, 0, 10, 10), box_run(5, 10, 0, 0, 10, 10)) == 0.0);
    }

    SECTION("constant per-frame IoU of one half gives one half") {
        // boxes of equal area overlapping exactly half their union each frame
        auto a = box_run(0, 10, 0, 0, 2, 3);
        auto b = box_run(0, 10, 0, 1, 2, 4);  // inter 2x2=4, union 6+6-4=8
        REQUIRE(viou(a, b) == Approx(0.5).margin(1e-12));
        auto c = box_run(0, 10, 0, 0, 3, 2);
        auto d = box_run(0, 10, 1, 0, 4, 2);  // inter 2x2=4, union 12-4=8
        REQUIRE(viou(c, d) == Approx(0.5).margin(1e-12));
    }

    SECTION("random trajectories match the per-frame summation oracle") {
        Rng rng(20);
        for (int trial = 0; trial < 100; ++trial) {
            auto rand_traj = [&]() {
                const long begin = static_cast<long>(rng.next_below(5));
                const long len = 1 + static_cast<long>(rng.next_below(6));
                Trajectory t;
                t.begin_fid = begin;
                t.end_fid = begin + len;
                for (long f = 0; f < len; ++f) {
                    const double x = rng.uniform(0, 30), y = rng.uniform(0, 30);
                    t.boxes.push_back(BBox{x, y, x + rng.uniform(1, 10), y + rng.uniform(1, 10)});
                }
                return t;
            };
            const auto a = rand_traj();
            const auto b = rand_traj();
            REQUIRE(viou(a, b) == Approx(oracles::ref_viou(a, b)).margin(1e-12));
            REQUIRE(viou(a, b) == Approx(viou(b, a)).margin(1e-15));
            REQUIRE(viou(a, b) >= 0.0);
            REQUIRE(viou(a, b) <= 1.0);
        }
    }
}

TEST_CASE("greedy association basics", "[metrics]") {
    SECTION("a single segment re-ranks without merging") {
        SegmentPrediction seg;
        seg.begin_fid = 0;
        seg.end_fid = 30;
        seg.triplets = {triplet(0, 0, 1, box_run(0, 30, 0, 0, 5, 5), box_run(0, 30, 6, 6, 9, 9), 0.4),
                        triplet(1, 2, 0, box_run(0, 30, 1, 1, 4, 4), box_run(0, 30, 5, 5, 8, 8), 0.9)};
        auto out = greedy_associate({seg}, 0.5);
        REQUIRE(out.triplets.size() == 2);
        REQUIRE(out.triplets[0].score.value() == 0.9);
        REQUIRE(out.triplets[1].score.value() == 0.4);
    }

    SECTION("adjacent segments with identical boundary boxes merge into one") {
        SegmentPrediction s0, s1;
        s0.begin_fid = 0;
        s0.end_fid = 30;
        s1.begin_fid = 30;
        s1.end_fid = 60;
        s0.triplets = {
            triplet(0, 1, 2, box_run(0, 30, 0, 0, 5, 5), box_run(0, 30, 8, 8, 12, 12), 0.8)};
        s1.triplets = {
            triplet(0, 1, 2, box_run(30, 60, 0, 0, 5, 5), box_run(30, 60, 8, 8, 12, 12), 0.6)};
        auto out = greedy_associate({s0, s1}, 0.5);
        REQUIRE(out.triplets.size() == 1);
        REQUIRE(out.triplets[0].subject_traj.begin_fid == 0);
        REQUIRE(out.triplets[0].subject_traj.end_fid == 60);
        REQUIRE(out.triplets[0].subject_traj.boxes.size() == 60);
        REQUIRE(out.triplets[0].score.value() == Approx(0.7).margin(1e-12));
    }

    SECTION("category mismatch or poor boundary IoU blocks the merge") {
        SegmentPrediction s0, s1;
        s0.begin_fid = 0;
        s0.end_fid = 30;
        s1.begin_fid = 30;
        s1.end_fid = 60;
        s0.triplets = {
            triplet(0, 1, 2, box_run(0, 30, 0, 0, 5, 5), box_run(0, 30, 8, 8, 12, 12), 0.8)};
        s1.triplets = {
            triplet(0, 2, 2, box_run(30, 60, 0, 0, 5, 5), box_run(30, 60, 8, 8, 12, 12), 0.6)};
        REQUIRE(greedy_associate({s0, s1}, 0.5).triplets.size() == 2);

        s1.triplets = {
            triplet(0, 1, 2, box_run(30, 60, 20, 20, 25, 25), box_run(30, 60, 8, 8, 12, 12), 0.6)};
        REQUIRE(greedy_associate({s0, s1}, 0.5).triplets.size() == 2);
    }

    SECTION("input order within a segment does not change the result") {
        Rng rng(21);
        SegmentPrediction s0, s1;
        s0.begin_fid = 0;
        s0.end_fid = 30;
        s1.begin_fid = 30;
        s1.end_fid = 60;
        for (int i = 0; i < 3; ++i) {
            const double x = rng.uniform(0, 20);
            s0.triplets.push_back(triplet(i % 2, i, 1 - i % 2, box_run(0, 30, x, 0, x + 5, 5),
                                          box_run(0, 30, x + 6, 0, x + 11, 5),
                                          rng.uniform(0.1, 0.9)));
            s1.triplets.push_back(triplet(i % 2, i, 1 - i % 2, box_run(30, 60, x, 0, x + 5, 5),
                                          box_run(30, 60, x + 6, 0, x + 11, 5),
                                          rng.uniform(0.1, 0.9)));
        }
        auto base = greedy_associate({s0, s1}, 0.5);
        std::reverse(s0.triplets.begin(), s0.triplets.end());
        std::reverse(s1.triplets.begin(), s1.triplets.end());
        auto flipped = greedy_associate({s0, s1}, 0.5);
        REQUIRE(merged_key_set(base.triplets) == merged_key_set(flipped.triplets));
    }
}

TEST_CASE("greedy association equals the chain-enumeration oracle", "[metrics]") {
    Rng rng(22);
    for (int trial = 0; trial < 60; ++trial) {
        const long segments = 1 + static_cast<long>(rng.next_below(4));
        std::vector<SegmentPrediction> segs(static_cast<size_t>(segments));
        std::vector<FlatTriplet> flat;
        for (long s = 0; s < segments; ++s) {
            auto& seg = segs[static_cast<size_t>(s)];
            seg.begin_fid = s * 30;
            seg.end_fid = (s + 1) * 30;
            const long count = 1 + static_cast<long>(rng.next_below(3));
            for (long i = 0; i < count; ++i) {
                // small discrete palette so cross-segment links actually occur
                const int sc = static_cast<int>(rng.next_below(2));
                const int rc = static_cast<int>(rng.next_below(2));
                const int oc = static_cast<int>(rng.next_below(2));
                const double x = 4.0 * static_cast<double>(rng.next_below(3));
                const double y = 4.0 * static_cast<double>(rng.next_below(2));
                auto tripl = triplet(
                    sc, rc, oc, box_run(seg.begin_fid, seg.end_fid, x, y, x + 6, y + 6),
                    box_run(seg.begin_fid, seg.end_fid, x + 8, y, x + 14, y + 6),
                    0.1 + 0.8 * rng.uniform());
                seg.triplets.push_back(tripl);
                flat.push_back({tripl, static_cast<size_t>(s),
                                static_cast<size_t>(seg.triplets.size() - 1)});
            }
        }
        const auto got = greedy_associate(segs, 0.5);
        REQUIRE(merged_key_set(got.triplets) == oracle_merged_set(flat, 0.5));
    }
}

TEST_CASE("relation detection mAP matches hand computations and brute force", "[metrics]") {
    const double thresh = 0.5;

    SECTION("all predictions correct and covering gives 1.0") {
        VideoGroundTruth gt;
        gt.video_id = "v";
        gt.relations = {triplet(0, 1, 2, box_run(0, 30, 0, 0, 5, 5), box_run(0, 30, 6, 0, 11, 5), 0)};
        VideoPrediction pred;
        pred.video_id = "v";
        pred.triplets = {
            triplet(0, 1, 2, box_run(0, 30, 0, 0, 5, 5), box_run(0, 30, 6, 0, 11, 5), 0.9)};
        REQUIRE(relation_detection_map({pred}, {gt}, thresh).value() == 1.0);
    }

    SECTION("one ground truth, correct prediction ranked second gives AP one half") {
        VideoGroundTruth gt;
        gt.video_id = "v";
        gt.relations = {triplet(0, 1, 2, box_run(0, 30, 0, 0, 5, 5), box_run(0, 30, 6, 0, 11, 5), 0)};
        VideoPrediction pred;
        pred.video_id = "v";
        pred.triplets = {
            triplet(3, 1, 2, box_run(0, 30, 0, 0, 5, 5), box_run(0, 30, 6, 0, 11, 5), 0.9),
            triplet(0, 1, 2, box_run(0, 30, 0, 0, 5, 5), box_run(0, 30, 6, 0, 11, 5), 0.8)};
        REQUIRE(relation_detection_map({pred}, {gt}, thresh).value() == 0.5);
    }

    SECTION("category-correct but low subject vIoU counts as a false positive") {
        VideoGroundTruth gt;
        gt.video_id = "v";
        gt.relations = {triplet(0, 1, 2, box_run(0, 30, 0, 0, 10, 10), box_run(0, 30, 20, 0, 30, 10), 0)};
        VideoPrediction pred;
        pred.video_id = "v";
        // subject box shifted so IoU = (10-6)*10 / (2*100-40) = 0.25 < 0.5
        pred.triplets = {triplet(0, 1, 2, box_run(0, 30, 6, 0, 16, 10),
                                 box_run(0, 30, 20, 0, 30, 10), 0.9)};
        REQUIRE(relation_detection_map({pred}, {gt}, thresh).value() == 0.0);
    }

    SECTION("videos with no ground truth are excluded from the mean") {
        VideoGroundTruth gt_empty;
        gt_empty.video_id = "empty";
        VideoGroundTruth gt;
        gt.video_id = "v";
        gt.relations = {triplet(0, 1, 2, box_run(0, 30, 0, 0, 5, 5), box_run(0, 30, 6, 0, 11, 5), 0)};
        VideoPrediction p_empty;
        p_empty.video_id = "empty";
        VideoPrediction pred;
        pred.video_id = "v";
        pred.triplets = {
            triplet(0, 1, 2, box_run(0, 30, 0, 0, 5, 5), box_run(0, 30, 6, 0, 11, 5), 0.9)};
        REQUIRE(relation_detection_map({p_empty, pred}, {gt_empty, gt}, thresh).value() == 1.0);
        REQUIRE_FALSE(relation_detection_map({p_empty}, {gt_empty}, thresh).has_value());
    }
}

TEST_CASE("recall at K definition cases", "[metrics]") {
    const double thresh = 0.5;
    VideoGroundTruth gt;
    gt.video_id = "v";
    gt.relations = {
        triplet(0, 1, 2, box_run(0, 30, 0, 0, 5, 5), box_run(0, 30, 6, 0, 11, 5), 0),
        triplet(1, 0, 2, box_run(0, 30, 12, 0, 17, 5), box_run(0, 30, 18, 0, 23, 5), 0)};

    SECTION("zero predictions recall nothing") {
        VideoPrediction pred;
        pred.video_id = "v";
        REQUIRE(recall_at_k({pred}, {gt}, 50, thresh).value() == 0.0);
    }

    SECTION("full coverage within K recalls everything") {
        VideoPrediction pred;
        pred.video_id = "v";
        pred.triplets = {
            triplet(0, 1, 2, box_run(0, 30, 0, 0, 5, 5), box_run(0, 30, 6, 0, 11, 5), 0.9),
            triplet(1, 0, 2, box_run(0, 30, 12, 0, 17, 5), box_run(0, 30, 18, 0, 23, 5), 0.8)};
        REQUIRE(recall_at_k({pred}, {gt}, 50, thresh).value() == 1.0);
    }

    SECTION("matching one of two gives one half") {
        VideoPrediction pred;
        pred.video_id = "v";
        pred.triplets = {
            triplet(0, 1, 2, box_run(0, 30, 0, 0, 5, 5), box_run(0, 30, 6, 0, 11, 5), 0.9)};
        REQUIRE(recall_at_k({pred}, {gt}, 50, thresh).value() == 0.5);
    }
}

TEST_CASE("randomized relation metrics match brute-force references", "[metrics]") {
    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        const long videos = 1 + static_cast<long>(rng.next_below(3));
        std::vector<VideoPrediction> preds(static_cast<size_t>(videos));
        std::vector<VideoGroundTruth> gts(static_cast<size_t>(videos));
        std::vector<std::vector<oracles::RefPred>> rp(static_cast<size_t>(videos));
        std::vector<std::vector<oracles::RefGt>> rg(static_cast<size_t>(videos));
        for (long v = 0; v < videos; ++v) {
            preds[static_cast<size_t>(v)].video_id = "v" + std::to_string(v);
            gts[static_cast<size_t>(v)].video_id = "v" + std::to_string(v);
            const long n_gt = static_cast<long>(rng.next_below(4));
            const long n_pred = static_cast<long>(rng.next_below(21));
            auto rand_box_run = [&]() {
                const double x = 5.0 * static_cast<double>(rng.next_below(4));
                return box_run(0, 10, x, 0, x + 7, 7);
            };
            for (long g = 0; g < n_gt; ++g) {
                auto ts = rand_box_run();
                auto to = rand_box_run();
                const int s = static_cast<int>(rng.next_below(2));
                const int r = static_cast<int>(rng.next_below(2));
                const int o = static_cast<int>(rng.next_below(2));
                gts[static_cast<size_t>(v)].relations.push_back(triplet(s, r, o, ts, to, 0));
                rg[static_cast<size_t>(v)].push_back({s, r, o, ts, to});
            }
            std::vector<RelationInstance> scored;
            for (long p = 0; p < n_pred; ++p) {
                auto ts = rand_box_run();
                auto to = rand_box_run();
                const int s = static_cast<int>(rng.next_below(2));
                const int r = static_cast<int>(rng.next_below(2));
                const int o = static_cast<int>(rng.next_below(2));
                const double score = rng.uniform();
                scored.push_back(triplet(s, r, o, ts, to, score));
                rp[static_cast<size_t>(v)].push_back({s, r, o, score, ts, to});
            }
            std::sort(scored.begin(), scored.end(),
                      [](const RelationInstance& a, const RelationInstance& b) {
                          return a.score.value() > b.score.value();
                      });
            preds[static_cast<size_t>(v)].triplets = std::move(scored);
        }
        const auto got_map = relation_detection_map(preds, gts, 0.5);
        const auto want_map = oracles::ref_relation_map(rp, rg, 0.5);
        REQUIRE(got_map.has_value() == want_map.has_value());
        if (got_map) REQUIRE(*got_map == Approx(*want_map).margin(1e-9));
        for (long k : {50L, 100L, 2L}) {
            const auto got_r = recall_at_k(preds, gts, k, 0.5);
            const auto want_r = oracles::ref_recall_at_k(rp, rg, k, 0.5);
            REQUIRE(got_r.has_value() == want_r.has_value());
            if (got_r) REQUIRE(*got_r == Approx(*want_r).margin(1e-9));
        }
    }
}

TEST_CASE("trajectory mAP over categories", "[metrics]") {
    const double thresh = 0.5;

    SECTION("perfect detections give 1.0") {
        VideoGroundTruth gt;
        gt.video_id = "v";
        gt.objects = {{0, 0, box_run(0, 30, 0, 0, 5, 5)}, {1, 1, box_run(0, 30, 10, 0, 15, 5)}};
        std::vector<std::vector<ScoredTrack>> preds{{
            {0, 0.9, box_run(0, 30, 0, 0, 5, 5)},
            {1, 0.8, box_run(0, 30, 10, 0, 15, 5)},
        }};
        REQUIRE(trajectory_map(preds, {gt}, thresh).value() == 1.0);
    }

    SECTION("correct box with the wrong class is a false positive for that class") {
        VideoGroundTruth gt;
        gt.video_id = "v";
        gt.objects = {{0, 0, box_run(0, 30, 0, 0, 5, 5)}};
        std::vector<std::vector<ScoredTrack>> preds{{{1, 0.9, box_run(0, 30, 0, 0, 5, 5)}}};
        REQUIRE(trajectory_map(preds, {gt}, thresh).value() == 0.0);
    }

    SECTION("two categories with one miss each match the hand-computed mean") {
        VideoGroundTruth gt;
        gt.video_id = "v";
        gt.objects = {{0, 0, box_run(0, 30, 0, 0, 5, 5)},
                      {1, 0, box_run(0, 30, 40, 0, 45, 5)},
                      {2, 1, box_run(0, 30, 10, 0, 15, 5)},
                      {3, 1, box_run(0, 30, 50, 0, 55, 5)}};
        std::vector<std::vector<ScoredTrack>> preds{{
            // category 0: one hit at rank 1 of its list
            {0, 0.9, box_run(0, 30, 0, 0, 5, 5)},
            // category 1: a false positive outranks the hit
            {1, 0.8, box_run(0, 30, 90, 0, 95, 5)},
            {1, 0.7, box_run(0, 30, 10, 0, 15, 5)},
        }};
        // AP(cat0) = 0.5 (1 of 2 recalled at precision 1)
        // AP(cat1) = 0.5 * 0.5 (1 of 2 recalled at interpolated precision 0.5)
        REQUIRE(trajectory_map(preds, {gt}, thresh).value() ==
                Approx((0.5 + 0.25) / 2).margin(1e-12));
    }
}

TEST_CASE("split filtering keeps novel relations with all object categories", "[metrics]") {
    Vocabulary vocab;
    vocab.objects = {{0, "a", false}, {1, "b", true}};
    vocab.relations = {{0, "r0", false}, {1, "r1", true}};

    VideoGroundTruth gt;
    gt.video_id = "v";
    gt.relations = {triplet(0, 0, 1, box_run(0, 5, 0, 0, 1, 1), box_run(0, 5, 2, 0, 3, 1), 0),
                    triplet(0, 1, 0, box_run(0, 5, 0, 0, 1, 1), box_run(0, 5, 2, 0, 3, 1), 0),
                    triplet(1, 1, 1, box_run(0, 5, 0, 0, 1, 1), box_run(0, 5, 2, 0, 3, 1), 0)};
    gt.objects = {{0, 0, box_run(0, 5, 0, 0, 1, 1)}, {1, 1, box_run(0, 5, 2, 0, 3, 1)}};

    SECTION("the all split is the identity") {
        const auto out = filter_gt_split({gt}, vocab, EvalSplit::All);
        REQUIRE(out[0].relations.size() == 3);
        REQUIRE(out[0].objects.size() == 2);
    }

    SECTION("the novel split keeps exactly the novel-relation instances") {
        const auto out = filter_gt_split({gt}, vocab, EvalSplit::Novel);
        REQUIRE(out[0].relations.size() == 2);
        for (const auto& r : out[0].relations) REQUIRE(r.relation == 1);
        // trajectory metric side: novel object categories only
        REQUIRE(out[0].objects.size() == 1);
        REQUIRE(out[0].objects[0].category == 1);
    }

    SECTION("a brute-force recount agrees on a mixed corpus") {
        Rng rng(24);
        std::vector<VideoGroundTruth> gts(3);
        long expected = 0;
        for (auto& v : gts) {
            v.video_id = "v";
            const long n = rng.next_below(6);
            for (long i = 0; i < n; ++i) {
                const int rel = static_cast<int>(rng.next_below(2));
                v.relations.push_back(
                    triplet(0, rel, 0, box_run(0, 5, 0, 0, 1, 1), box_run(0, 5, 2, 0, 3, 1), 0));
                if (vocab.relations[static_cast<size_t>(rel)].is_novel) ++expected;
            }
        }
        long got = 0;
        for (const auto& v : filter_gt_split(gts, vocab, EvalSplit::Novel))
            got += static_cast<long>(v.relations.size());
        REQUIRE(got == expected);
    }

    SECTION("unknown split names are rejected") {
        REQUIRE_THROWS_AS(parse_split("base"), UsageError);
    }
}

TEST_CASE("error taxonomy partitions examined false positives", "[metrics]") {
    VideoGroundTruth gt;
    gt.video_id = "v";
    gt.relations = {triplet(0, 1, 2, box_run(0, 30, 0, 0, 5, 5), box_run(0, 30, 6, 0, 11, 5), 0)};

    SECTION("wrong subject class is an object error") {
        VideoPrediction pred;
        pred.video_id = "v";
        pred.triplets = {
            triplet(3, 1, 2, box_run(0, 30, 0, 0, 5, 5), box_run(0, 30, 6, 0, 11, 5), 0.9)};
        const auto e = categorize_errors({pred}, {gt}, 100, 0.5);
        REQUIRE(e.object_errors == 1);
        REQUIRE(e.relationship_errors == 0);
    }

    SECTION("correct entities with the wrong predicate is a relationship error") {
        VideoPrediction pred;
        pred.video_id = "v";
        pred.triplets = {
            triplet(0, 0, 2, box_run(0, 30, 0, 0, 5, 5), box_run(0, 30, 6, 0, 11, 5), 0.9)};
        const auto e = categorize_errors({pred}, {gt}, 100, 0.5);
        REQUIRE(e.object_errors == 0);
        REQUIRE(e.relationship_errors == 1);
    }

    SECTION("true positives are not errors") {
        VideoPrediction pred;
        pred.video_id = "v";
        pred.triplets = {
            triplet(0, 1, 2, box_run(0, 30, 0, 0, 5, 5), box_run(0, 30, 6, 0, 11, 5), 0.9)};
        const auto e = categorize_errors({pred}, {gt}, 100, 0.5);
        REQUIRE(e.examined_false_positives == 0);
    }

    SECTION("randomized inputs partition exactly, matching a recount") {
        Rng rng(25);
        for (int trial = 0; trial < 50; ++trial) {
            VideoGroundTruth g;
            g.video_id = "v";
            const long n_gt = 1 + static_cast<long>(rng.next_below(3));
            auto rand_run = [&]() {
                const double x = 6.0 * static_cast<double>(rng.next_below(3));
                return box_run(0, 10, x, 0, x + 5, 5);
            };
            for (long i = 0; i < n_gt; ++i)
                g.relations.push_back(triplet(static_cast<int>(rng.next_below(2)),
                                              static_cast<int>(rng.next_below(2)),
                                              static_cast<int>(rng.next_below(2)), rand_run(),
                                              rand_run(), 0));
            VideoPrediction p;
            p.video_id = "v";
            const long n_pred = static_cast<long>(rng.next_below(8));
            for (long i = 0; i < n_pred; ++i)
                p.triplets.push_back(triplet(static_cast<int>(rng.next_below(2)),
                                             static_cast<int>(rng.next_below(2)),
                                             static_cast<int>(rng.next_below(2)), rand_run(),
                                             rand_run(), rng.uniform()));
            std::sort(p.triplets.begin(), p.triplets.end(),
                      [](const RelationInstance& a, const RelationInstance& b) {
                          return a.score.value() > b.score.value();
                      });
            const long examine = 1 + static_cast<long>(rng.next_below(8));
            const auto e = categorize_errors({p}, {g}, examine, 0.5);
            REQUIRE(e.object_errors + e.relationship_errors == e.examined_false_positives);

            // independent recount of the examined false positives
            std::vector<RelationInstance> top(
                p.triplets.begin(),
                p.triplets.begin() + std::min<size_t>(p.triplets.size(),
                                                      static_cast<size_t>(examine)));
            std::vector<oracles::RefPred> rp;
            for (const auto& t : top)
                rp.push_back({t.subject_category, t.relation, t.object_category,
                              t.score.value(), t.subject_traj, t.object_traj});
            std::vector<oracles::RefGt> rg;
            for (const auto& t : g.relations)
                rg.push_back({t.subject_category, t.relation, t.object_category,
                              t.subject_traj, t.object_traj});
            const auto matches = oracles::ref_match(rp, rg, 0.5);
            long fp = 0;
            for (int m : matches)
                if (m < 0) ++fp;
            REQUIRE(e.examined_false_positives == fp);
        }
    }
}

TEST_CASE("monotonicity: a correct prediction on top never lowers AP", "[metrics]") {
    // holds whenever ground-truth eligibility is unambiguous; with duplicate
    // category triples the greedy matcher can cascade reassignments, so each
    // instance here gets a distinct triple
    Rng rng(26);
    for (int trial = 0; trial < 30; ++trial) {
        VideoGroundTruth gt;
        gt.video_id = "v";
        auto rand_run = [&]() {
            const double x = 6.0 * static_cast<double>(rng.next_below(3));
            return box_run(0, 10, x, 0, x + 5, 5);
        };
        const long n_gt = 1 + static_cast<long>(rng.next_below(3));
        for (long i = 0; i < n_gt; ++i)
            gt.relations.push_back(triplet(static_cast<int>(i), 0, static_cast<int>(i),
                                           rand_run(), rand_run(), 0));
        VideoPrediction pred;
        pred.video_id = "v";
        for (int i = 0; i < 6; ++i)
            pred.triplets.push_back(triplet(static_cast<int>(rng.next_below(3)), 0,
                                            static_cast<int>(rng.next_below(3)), rand_run(),
                                            rand_run(), 0.5 - 0.05 * i));
        const double before = relation_detection_map({pred}, {gt}, 0.5).value();
        // prepend an exact copy of the first ground-truth instance
        VideoPrediction boosted = pred;
        const auto& g = gt.relations[0];
        boosted.triplets.insert(boosted.triplets.begin(),
                                triplet(g.subject_category, g.relation, g.object_category,
                                        g.subject_traj, g.object_traj, 0.99));
        const double after = relation_detection_map({boosted}, {gt}, 0.5).value();
        REQUIRE(after >= before - 1e-12);
    }
}
