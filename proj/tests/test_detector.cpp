#include <catch2/catch_amalgamated.hpp>

#include "metor/detector.hpp"
#include "support/oracles.hpp"

using namespace metor;
using Catch::Approx;

namespace {

ModelConfig tiny_config() {
    ModelConfig m;
    m.dim = 16;
    m.heads = 4;
    m.encoder_layers = 1;
    m.decoder_layers = 1;
    m.text_layers = 1;
    m.patch_size = 8;
    m.context_tokens = 2;
    m.prompt_tokens = 2;
    m.num_queries = 4;
    return m;
}

// independent extent oracle: scan every [i,j) window
std::pair<long, long> window_scan_extent(const std::vector<double>& presence, double thresh) {
    const long n = static_cast<long>(presence.size());
    long best_b = 0, best_e = 0;
    for (long i = 0; i < n; ++i)
        for (long j = i + 1; j <= n; ++j) {
            bool all = true;
            for (long k = i; k < j; ++k) all = all && presence[static_cast<size_t>(k)] >= thresh;
            if (all && (j - i > best_e - best_b)) {
                best_b = i;
                best_e = j;
            }
        }
    return {best_b, best_e};
}

}  // namespace

TEST_CASE("object decoder identity and determinism cases", "[model]") {
    ModelConfig m = tiny_config();

    SECTION("zero decoder layers transpose the refined queries") {
        m.decoder_layers = 0;
        nn::ParamRegistry<double> reg;
        ObjectDecoder<double> dec(reg, m, 1);
        nn::Ctx<double> ctx;
        Rng rng(2);
        Tensor<double> q = Tensor<double>::randn({3, 4, 16}, rng);
        Tensor<double> patches = Tensor<double>::randn({3, 5, 16}, rng);
        Tensor<double> out = dec.apply(ctx, q, patches);
        REQUIRE(out.shape() == Shape{4, 3, 16});
        for (long t = 0; t < 3; ++t)
            for (long qq = 0; qq < 4; ++qq)
                for (long k = 0; k < 16; ++k)
                    REQUIRE(out[(qq * 3 + t) * 16 + k] == q[(t * 4 + qq) * 16 + k]);
    }

    SECTION("cross-attention weights sum to one per query") {
        nn::ParamRegistry<double> reg;
        ObjectDecoder<double> dec(reg, m, 1);
        nn::Ctx<double> ctx;
        Rng rng(3);
        Tensor<double> q = Tensor<double>::randn({2, 4, 16}, rng);
        Tensor<double> patches = Tensor<double>::randn({2, 5, 16}, rng);
        std::vector<std::vector<double>> weights;
        dec.apply(ctx, q, patches, &weights);
        REQUIRE(weights.size() == 1);
        const size_t rows = weights[0].size() / 5;
        for (size_t r = 0; r < rows; ++r) {
            double sum = 0;
            for (size_t c = 0; c < 5; ++c) sum += weights[0][r * 5 + c];
            REQUIRE(sum == Approx(1.0).margin(1e-9));
        }
    }

    SECTION("identical frames give identical per-frame feature slices") {
        nn::ParamRegistry<double> reg;
        ObjectDecoder<double> dec(reg, m, 1);
        nn::Ctx<double> ctx;
        Rng rng(4);
        Tensor<double> q1 = Tensor<double>::randn({1, 4, 16}, rng);
        std::vector<double> q2(q1.data());
        q2.insert(q2.end(), q1.data().begin(), q1.data().end());
        Tensor<double> q(Shape{2, 4, 16}, std::move(q2));
        Tensor<double> p1 = Tensor<double>::randn({1, 5, 16}, rng);
        std::vector<double> p2(p1.data());
        p2.insert(p2.end(), p1.data().begin(), p1.data().end());
        Tensor<double> patches(Shape{2, 5, 16}, std::move(p2));
        Tensor<double> out = dec.apply(ctx, q, patches);
        for (long qq = 0; qq < 4; ++qq)
            for (long k = 0; k < 16; ++k)
                REQUIRE(out[(qq * 2 + 0) * 16 + k] ==
                        Approx(out[(qq * 2 + 1) * 16 + k]).margin(1e-12));
    }
}

TEST_CASE("trajectory head squashes boxes and exposes presence logits", "[model]") {
    nn::ParamRegistry<double> reg;
    TrajectoryHead<double> head(reg, "head", 16, 5);
    nn::Ctx<double> ctx;
    Rng rng(6);
    Tensor<double> feats = Tensor<double>::randn({7, 16}, rng, 3.0);
    auto out = head.apply(ctx, feats);
    REQUIRE(out.boxes.shape() == Shape{7, 4});
    REQUIRE(out.presence_logits.shape() == Shape{7, 1});
    for (long i = 0; i < out.boxes.numel(); ++i) {
        REQUIRE(out.boxes[i] >= 0.0);
        REQUIRE(out.boxes[i] <= 1.0);
    }
}

TEST_CASE("presence extent follows the longest-earliest rule", "[model]") {
    SECTION("the documented [1,1,0,1] case spans frames 0-1") {
        const auto [b, e] = presence_extent({1, 1, 0, 1}, 0.35);
        REQUIRE(b == 0);
        REQUIRE(e == 2);
    }

    SECTION("threshold uses >= 0.35") {
        const auto [b, e] = presence_extent({0.35, 0.349, 0.36, 0.4}, 0.35);
        REQUIRE(b == 2);
        REQUIRE(e == 4);
    }

    SECTION("all sixteen 4-frame patterns match the window-scan oracle") {
        for (int mask = 0; mask < 16; ++mask) {
            std::vector<double> p(4);
            for (int i = 0; i < 4; ++i) p[static_cast<size_t>(i)] = (mask >> i) & 1 ? 1.0 : 0.0;
            const auto got = presence_extent(p, 0.35);
            const auto want = window_scan_extent(p, 0.35);
            INFO("mask=" << mask);
            REQUIRE(got == want);
        }
    }
}

TEST_CASE("cosine classifier closed forms and scale invariance", "[model]") {
    nn::ParamRegistry<double> reg;

    SECTION("cos 0 scores one half for any gamma") {
        CosineClassifier<double> cls(reg, "c1", 7.3);
        nn::Ctx<double> ctx;
        Tensor<double> f(Shape{1, 2}, {1, 0});
        Tensor<double> t(Shape{1, 2}, {0, 1});
        REQUIRE(cls.scores(ctx, f, t)[0] == Approx(0.5).margin(1e-12));
    }

    SECTION("cos 1 at gamma 1 scores sigma(1)") {
        CosineClassifier<double> cls(reg, "c2", 1.0);
        nn::Ctx<double> ctx;
        Tensor<double> f(Shape{1, 2}, {2, 0});
        Tensor<double> t(Shape{1, 2}, {5, 0});
        REQUIRE(cls.scores(ctx, f, t)[0] == Approx(0.73105858).margin(1e-8));
    }

    SECTION("positive rescaling changes nothing") {
        CosineClassifier<double> cls(reg, "c3", 10.0);
        nn::Ctx<double> ctx;
        Rng rng(7);
        Tensor<double> f = Tensor<double>::randn({3, 8}, rng);
        Tensor<double> t = Tensor<double>::randn({5, 8}, rng);
        Tensor<double> base = cls.scores(ctx, f, t);
        Tensor<double> scaled = cls.scores(ctx, affine(f, 3.7, 0.0), t);
        for (long i = 0; i < base.numel(); ++i)
            REQUIRE(scaled[i] == Approx(base[i]).margin(1e-6));
    }
}

TEST_CASE("candidate extraction applies both eval filters", "[model]") {
    const long nq = 3, frames = 4, cats = 2;
    std::vector<double> boxes(static_cast<size_t>(nq * frames * 4), 0.5);
    std::vector<double> presence = {
        0.9, 0.9, 0.9, 0.9,   // query 0: full extent
        0.1, 0.1, 0.1, 0.1,   // query 1: no extent -> dropped
        0.9, 0.9, 0.1, 0.1,   // query 2: half extent
    };
    std::vector<double> scores = {
        0.8, 0.3,   // query 0 keeps (best 0.8)
        0.9, 0.9,   // query 1 would keep but has no extent
        0.1, 0.15,  // query 2 fails the 0.2 threshold
    };
    auto cands = extract_candidates(nq, frames, cats, boxes, presence, scores, 0.35, 0.2);
    REQUIRE(cands.size() == 1);
    REQUIRE(cands[0].query == 0);
    REQUIRE(cands[0].best_category == 0);
    REQUIRE(cands[0].begin == 0);
    REQUIRE(cands[0].end == 4);
}

TEST_CASE("pair formation is top-k with deterministic ordering", "[model]") {
    auto make = [](long q, double score) {
        Candidate c;
        c.query = q;
        c.best_score = score;
        c.begin = 0;
        c.end = 1;
        return c;
    };

    SECTION("two candidates give both ordered pairs") {
        std::vector<Candidate> cands{make(0, 0.9), make(1, 0.5)};
        auto pairs = form_pairs(cands, 2);
        REQUIRE(pairs == std::vector<std::pair<long, long>>{{0, 1}, {1, 0}});
    }

    SECTION("three candidates give six ordered pairs") {
        std::vector<Candidate> cands{make(0, 0.9), make(1, 0.5), make(2, 0.7)};
        REQUIRE(form_pairs(cands, 3).size() == 6);
    }

    SECTION("equal scores break by query index ascending") {
        std::vector<Candidate> cands{make(2, 0.5), make(0, 0.5), make(1, 0.5)};
        form_pairs(cands, 2);
        REQUIRE(cands[0].query == 0);
        REQUIRE(cands[1].query == 1);
    }

    SECTION("fewer than two candidates yield no pairs") {
        std::vector<Candidate> one{make(0, 0.9)};
        REQUIRE(form_pairs(one, 6).empty());
    }
}

TEST_CASE("hungarian assignment is optimal", "[model]") {
    SECTION("identity-favoring diagonal") {
        const auto r = hungarian_assign({{0.1, 5, 5}, {5, 0.1, 5}, {5, 5, 0.1}});
        REQUIRE(r == std::vector<int>{0, 1, 2});
    }

    SECTION("the documented 2x2 case") {
        const auto r = hungarian_assign({{1, 2}, {2, 1}});
        REQUIRE(r == std::vector<int>{0, 1});
        REQUIRE(assignment_cost({{1, 2}, {2, 1}}, r) == 2.0);
    }

    SECTION("random rectangular instances match factorial enumeration") {
        Rng rng(99);
        for (int trial = 0; trial < 200; ++trial) {
            const size_t n = 1 + rng.next_below(5);  // rows
            const size_t m = n + rng.next_below(4);  // cols >= rows
            oracles::Mat cost(n, std::vector<double>(m));
            for (auto& row : cost)
                for (auto& v : row) v = rng.uniform(0.0, 10.0);
            const auto assignment = hungarian_assign(cost);
            REQUIRE(assignment_cost(cost, assignment) ==
                    Approx(oracles::brute_force_assignment(cost)).margin(1e-9));
        }
    }

    SECTION("more rows than columns is a data error") {
        REQUIRE_THROWS_AS(hungarian_assign({{1.0}, {2.0}}), DataError);
    }
}
