#include <catch2/catch_amalgamated.hpp>

#include "metor/encoder.hpp"

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

Tensor<float> random_frames(long t, long h, long w, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<float> f(Shape{t, h, w, 3});
    for (auto& v : f.mutable_data()) v = static_cast<float>(rng.uniform());
    return f;
}

Vocabulary tiny_vocab() {
    Vocabulary v;
    v.objects = {{0, "a", false}, {1, "b", false}, {2, "c", true}};
    v.relations = {{0, "r0", false}, {1, "r1", false}, {2, "r2", true}};
    return v;
}

}  // namespace

TEST_CASE("patchify token count and reference gather", "[model]") {
    nn::ParamRegistry<double> reg;
    ModelConfig m = tiny_config();
    PatchEmbed<double> embed(reg, m, 1);
    nn::Ctx<double> ctx;

    SECTION("64x64 frames at patch 8 give 64 tokens per frame") {
        Tensor<double> frames = cast_frames<double>(random_frames(2, 64, 64, 3));
        Tensor<double> tokens = embed.apply(ctx, frames);
        REQUIRE(tokens.shape() == Shape{2, 64, 16});
    }

    SECTION("non-divisible frame size is rejected") {
        Tensor<double> frames = cast_frames<double>(random_frames(1, 60, 64, 4));
        REQUIRE_THROWS_AS(embed.apply(ctx, frames), std::invalid_argument);
    }

    SECTION("constant frames give identical tokens before the position code") {
        Tensor<float> frames_f(Shape{1, 16, 16, 3});
        for (auto& v : frames_f.mutable_data()) v = 0.5f;
        Tensor<double> tokens = embed.apply(ctx, cast_frames<double>(frames_f));
        const Tensor<double> pos = nn::sincos_position_grid<double>(2, 2, 16);
        // subtract the position code; all four patch tokens must agree
        for (long p = 1; p < 4; ++p)
            for (long k = 0; k < 16; ++k)
                REQUIRE(tokens[p * 16 + k] - pos[p * 16 + k] ==
                        Approx(tokens[k] - pos[k]).margin(1e-12));
    }

    SECTION("matches a straight-line per-patch gather and multiply") {
        const long h = 16, w = 16, ps = 8, d = 16;
        Tensor<double> frames = cast_frames<double>(random_frames(1, h, w, 5));
        Tensor<double> tokens = embed.apply(ctx, frames);
        const auto& wmat = reg.find("patch_embed.proj.w")->value.data();
        const auto& bias = reg.find("patch_embed.proj.b")->value.data();
        const Tensor<double> pos = nn::sincos_position_grid<double>(2, 2, d);
        for (long gr = 0; gr < 2; ++gr)
            for (long gc = 0; gc < 2; ++gc) {
                std::vector<double> flat;
                for (long py = 0; py < ps; ++py)
                    for (long px = 0; px < ps; ++px)
                        for (long c = 0; c < 3; ++c)
                            flat.push_back(
                                frames[((gr * ps + py) * w + gc * ps + px) * 3 + c]);
                for (long k = 0; k < d; ++k) {
                    double acc = bias[static_cast<size_t>(k)];
                    for (size_t i = 0; i < flat.size(); ++i)
                        acc += flat[i] * wmat[i * static_cast<size_t>(d) + static_cast<size_t>(k)];
                    acc += pos[(gr * 2 + gc) * d + k];
                    REQUIRE(tokens[(gr * 2 + gc) * d + k] == Approx(acc).margin(1e-10));
                }
            }
    }
}

TEST_CASE("visual encoder splits exactly undo the token concatenation", "[model]") {
    ModelConfig m = tiny_config();

    SECTION("zero layers: outputs equal inputs blockwise") {
        m.encoder_layers = 0;
        nn::ParamRegistry<double> reg;
        VisualEncoder<double> enc(reg, m, 2);
        nn::Ctx<double> ctx;
        Rng rng(6);
        Tensor<double> patches = Tensor<double>::randn({3, 4, 16}, rng);
        auto out = enc.apply(ctx, patches);
        REQUIRE(out.h_patch.data() == patches.data());
        const auto& cls = reg.find("visual.cls_token")->value;
        for (long t = 0; t < 3; ++t)
            for (long k = 0; k < 16; ++k) REQUIRE(out.h_cls[t * 16 + k] == cls[k]);
        const auto& cobj = reg.find("visual.obj_context_tokens")->value;
        for (long t = 0; t < 3; ++t)
            for (long i = 0; i < 2 * 16; ++i) REQUIRE(out.c_obj[t * 2 * 16 + i] == cobj[i]);
    }

    SECTION("per-frame token count is 1 + Np + 2*Nc") {
        nn::ParamRegistry<double> reg;
        VisualEncoder<double> enc(reg, m, 2);
        REQUIRE(enc.sequence_length(64) == 1 + 64 + 2 * m.context_tokens);
        m.context_refinement = false;
        nn::ParamRegistry<double> reg2;
        VisualEncoder<double> enc2(reg2, m, 2);
        REQUIRE(enc2.sequence_length(64) == 1 + 64);
    }

    SECTION("one layer: split blocks equal a manual pass through an identical block") {
        nn::ParamRegistry<double> reg;
        VisualEncoder<double> enc(reg, m, 2);
        nn::Ctx<double> ctx;
        Rng rng(7);
        Tensor<double> patches = Tensor<double>::randn({2, 4, 16}, rng);
        auto out = enc.apply(ctx, patches);

        // same seed + same parameter names reproduce identical block weights
        nn::ParamRegistry<double> reg2;
        nn::EncoderBlock<double> block(reg2, "visual.block0", m.dim, m.heads, 2);
        auto* cls = nn::init::normal<double>(reg2, "visual.cls_token", Shape{1, m.dim}, 2);
        auto* cobj = nn::init::normal<double>(reg2, "visual.obj_context_tokens",
                                              Shape{m.context_tokens, m.dim}, 2);
        auto* crel = nn::init::normal<double>(reg2, "visual.rel_context_tokens",
                                              Shape{m.context_tokens, m.dim}, 2);
        nn::Ctx<double> ctx2;
        std::vector<Tensor<double>> parts;
        parts.push_back(gather(cls->value, build_tile_table(m.dim, 2), Shape{2, 1, m.dim}));
        parts.push_back(patches);
        parts.push_back(gather(cobj->value, build_tile_table(2 * m.dim, 2), Shape{2, 2, m.dim}));
        parts.push_back(gather(crel->value, build_tile_table(2 * m.dim, 2), Shape{2, 2, m.dim}));
        Tensor<double> x = block.apply(ctx2, concat(parts, 1));

        // reassembling the split blocks reproduces the full hidden sequence
        Tensor<double> reassembled = concat(
            std::vector<Tensor<double>>{reshape(out.h_cls, Shape{2, 1, 16}), out.h_patch,
                                        out.c_obj, out.c_rel},
            1);
        REQUIRE(reassembled.shape() == x.shape());
        for (long i = 0; i < x.numel(); ++i)
            REQUIRE(reassembled[i] == Approx(x[i]).margin(1e-12));
    }
}

TEST_CASE("query refinement is residual and per-frame", "[model]") {
    ModelConfig m = tiny_config();
    nn::ParamRegistry<double> reg;
    QueryRefiner<double> refiner(reg, m, 3);
    nn::Ctx<double> ctx;
    Rng rng(8);

    SECTION("zero output projection forces refined queries back to the originals") {
        auto* wo = reg.find("query_refiner.attn.wo.w");
        std::fill(wo->value.mutable_data().begin(), wo->value.mutable_data().end(), 0.0);
        Tensor<double> c_obj = Tensor<double>::randn({3, 2, 16}, rng);
        Tensor<double> refined = refiner.apply(ctx, c_obj, true);
        const auto& q = reg.find("queries")->value;
        for (long t = 0; t < 3; ++t)
            for (long i = 0; i < q.numel(); ++i)
                REQUIRE(refined[t * q.numel() + i] == q[i]);
    }

    SECTION("refine disabled yields tiled queries bit-exactly") {
        Tensor<double> c_obj = Tensor<double>::randn({2, 2, 16}, rng);
        Tensor<double> refined = refiner.apply(ctx, c_obj, false);
        const auto& q = reg.find("queries")->value;
        for (long t = 0; t < 2; ++t)
            for (long i = 0; i < q.numel(); ++i)
                REQUIRE(refined[t * q.numel() + i] == q[i]);
    }

    SECTION("identical context across frames gives identical refined queries") {
        Tensor<double> one = Tensor<double>::randn({1, 2, 16}, rng);
        std::vector<double> rep;
        for (int t = 0; t < 3; ++t)
            rep.insert(rep.end(), one.data().begin(), one.data().end());
        Tensor<double> c_obj(Shape{3, 2, 16}, std::move(rep));
        Tensor<double> refined = refiner.apply(ctx, c_obj, true);
        const long block = 4 * 16;
        for (long t = 1; t < 3; ++t)
            for (long i = 0; i < block; ++i)
                REQUIRE(refined[t * block + i] == Approx(refined[i]).margin(1e-12));
    }

    SECTION("a single context token receives attention weight one") {
        std::vector<double> weights;
        Tensor<double> c_obj = Tensor<double>::randn({2, 1, 16}, rng);
        refiner.apply(ctx, c_obj, true, &weights);
        for (double w : weights) REQUIRE(w == 1.0);
    }
}

TEST_CASE("text features follow the prompt assembly rules", "[model]") {
    ModelConfig m = tiny_config();
    Vocabulary vocab = tiny_vocab();

    SECTION("rows are unit-normalized") {
        nn::ParamRegistry<double> reg;
        TextEncoder<double> text(reg, m, vocab, 4);
        nn::Ctx<double> ctx;
        Rng rng(9);
        Tensor<double> c_obj = Tensor<double>::randn({2, 2, 16}, rng);
        Tensor<double> rows = text.encode_object_rows(ctx, &c_obj, {0, 1, 2});
        for (long r = 0; r < 3; ++r) {
            double norm = 0;
            for (long k = 0; k < 16; ++k) norm += rows[r * 16 + k] * rows[r * 16 + k];
            REQUIRE(std::sqrt(norm) == Approx(1.0).margin(1e-6));
        }
    }

    SECTION("equal category embeddings give equal rows; distinct ones differ") {
        nn::ParamRegistry<double> reg;
        TextEncoder<double> text(reg, m, vocab, 4);
        auto* embed = reg.find("prompt.obj_embed");
        auto& e = embed->value.mutable_data();
        for (long k = 0; k < 16; ++k) e[16 + k] = e[k];  // category 1 copies category 0
        nn::Ctx<double> ctx;
        Rng rng(10);
        Tensor<double> c_obj = Tensor<double>::randn({2, 2, 16}, rng);
        Tensor<double> rows = text.encode_object_rows(ctx, &c_obj, {0, 1, 2});
        for (long k = 0; k < 16; ++k) REQUIRE(rows[k] == rows[16 + k]);
        bool differs = false;
        for (long k = 0; k < 16; ++k) differs = differs || rows[k] != rows[32 + k];
        REQUIRE(differs);
    }

    SECTION("zeroing the mapping layer reproduces the context-free pathway") {
        nn::ParamRegistry<double> reg;
        TextEncoder<double> text(reg, m, vocab, 4);
        for (const char* name : {"prompt.map_obj.fc1.w", "prompt.map_obj.fc1.b",
                                 "prompt.map_obj.fc2.w", "prompt.map_obj.fc2.b"}) {
            auto* p = reg.find(name);
            std::fill(p->value.mutable_data().begin(), p->value.mutable_data().end(), 0.0);
        }
        nn::Ctx<double> ctx;
        Rng rng(11);
        Tensor<double> c_obj = Tensor<double>::randn({2, 2, 16}, rng);
        Tensor<double> with_ctx = text.encode_object_rows(ctx, &c_obj, {0, 1});
        Tensor<double> without_ctx = text.encode_object_rows(ctx, nullptr, {0, 1});
        for (long i = 0; i < with_ctx.numel(); ++i) REQUIRE(with_ctx[i] == without_ctx[i]);
    }

    SECTION("zero text layers read the normalized category embedding") {
        ModelConfig m0 = m;
        m0.text_layers = 0;
        nn::ParamRegistry<double> reg;
        TextEncoder<double> text(reg, m0, vocab, 4);
        nn::Ctx<double> ctx;
        Tensor<double> rows = text.encode_relation_rows(ctx, nullptr, {1});
        const auto& embed = reg.find("prompt.rel_embed")->value;
        double norm = 0;
        for (long k = 0; k < 16; ++k) norm += embed[16 + k] * embed[16 + k];
        norm = std::sqrt(norm);
        for (long k = 0; k < 16; ++k)
            REQUIRE(rows[k] == Approx(embed[16 + k] / norm).margin(1e-12));
    }

    SECTION("text features depend on the video only through pooled context") {
        nn::ParamRegistry<double> reg;
        TextEncoder<double> text(reg, m, vocab, 4);
        nn::Ctx<double> ctx;
        Rng rng(12);
        Tensor<double> c1 = Tensor<double>::randn({2, 2, 16}, rng);
        Tensor<double> c2 = c1;  // equal context
        Tensor<double> r1 = text.encode_object_rows(ctx, &c1, {0, 1, 2});
        Tensor<double> r2 = text.encode_object_rows(ctx, &c2, {0, 1, 2});
        REQUIRE(r1.data() == r2.data());
    }

    SECTION("empty category list is rejected") {
        nn::ParamRegistry<double> reg;
        TextEncoder<double> text(reg, m, vocab, 4);
        nn::Ctx<double> ctx;
        REQUIRE_THROWS_AS(text.encode_object_rows(ctx, nullptr, {}), std::invalid_argument);
    }
}
