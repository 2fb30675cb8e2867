#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "brainit/image.hpp"
#include "brainit/training.hpp"
#include "test_util.hpp"

using namespace brainit;
using namespace brainit::train;
using testutil::random_tensor;

namespace {

struct ToySetup {
    data::SyntheticDataset ds;
    v2c::V2CMapping mapping;
    BitModel model;
    feat::ToySemanticBackbone backbone;
    std::map<std::string, Tensor> targets;
};

ToySetup make_setup(std::uint64_t seed, int pairs = 16) {
    data::SyntheticConfig cfg;
    cfg.image_size = 16;
    cfg.feature_grid = 2;
    cfg.voxels_per_subject = 16;
    cfg.subjects = 1;
    cfg.pairs = pairs;
    cfg.seed = seed;
    auto ds = data::make_synthetic_dataset(cfg);

    const std::int64_t d = 8;
    std::map<int, Tensor> emb;
    emb[0] = ds.encoder->voxel_embeddings(0, d);
    v2c::GmmConfig gmm;
    gmm.k = 2;
    gmm.max_iter = 15;
    gmm.seed = seed;
    auto mapping = v2c::fit_v2c(emb, gmm);

    BitModelConfig mc;
    mc.clusters = 2;
    mc.d = d;
    mc.queries = 4;
    mc.d_out = 6;
    mc.blocks = 1;
    mc.heads = 2;
    mc.ff_width = 16;
    auto model = BitModel::init(mc, mapping, emb, seed + 1);

    feat::ToySemanticBackbone backbone(2, 6, 2, seed + 2);
    std::map<std::string, Tensor> targets;
    for (const auto& im : ds.unique_images()) targets[im.image_id] = backbone.tokens(im);
    return {std::move(ds), std::move(mapping), std::move(model), std::move(backbone),
            std::move(targets)};
}

}  // namespace

TEST_CASE("canonical conv layout: token counts and padded dims") {
    auto layout = feat::canonical_conv_layout();
    const std::vector<std::int64_t> want = {3136, 3025, 784, 196, 49};
    REQUIRE(layout.layers.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(layout.layers[i].token_count() == want[i]);
        CHECK(layout.layers[i].token_dim == 512);
        CHECK(512 % layout.layers[i].raw_dim() == 0);
    }
    CHECK(layout.total_tokens() == 3136 + 3025 + 784 + 196 + 49);
    const std::vector<std::int64_t> samples = {512, 512, 128, 64, 16};
    for (std::size_t i = 0; i < 5; ++i) CHECK(layout.layers[i].train_samples == samples[i]);
}

TEST_CASE("extract/untokenize: identity roundtrip on a toy extractor") {
    auto layout = feat::toy_conv_layout(32, 64);
    feat::ToyConvExtractor ex(32, {4, 8, 8, 8, 8}, 3);
    Rng rng(4);
    data::ImageRecord im{"x", random_tensor({32, 32, 3}, rng, 0.2)};
    for (std::int64_t i = 0; i < im.pixels.numel(); ++i)
        im.pixels[i] = std::abs(im.pixels[i]);

    auto set = extract_conv_tokens(im, ex, layout);
    CHECK(set.tokens.dim(0) == layout.total_tokens());
    CHECK(set.tokens.dim(1) == 64);

    auto maps = feat::untokenize(set, layout);
    auto truth = ex.extract(img::hwc_to_chw(im.pixels));
    REQUIRE(maps.size() == truth.size());
    for (std::size_t l = 0; l < maps.size(); ++l) {
        REQUIRE(maps[l].shape() == truth[l].shape());
        for (std::int64_t i = 0; i < maps[l].numel(); ++i)
            CHECK(maps[l][i] == doctest::Approx(truth[l][i]).epsilon(1e-10));
    }
}

TEST_CASE("replication padding: copies identical, averaged back on inverse") {
    auto layout = feat::toy_conv_layout(32, 64);
    feat::ToyConvExtractor ex(32, {4, 8, 8, 8, 8}, 5);
    Rng rng(6);
    data::ImageRecord im{"x", random_tensor({32, 32, 3}, rng, 0.3)};
    auto set = extract_conv_tokens(im, ex, layout);
    // layer 0: raw dim 16, replicated 4x inside 64
    for (std::int64_t row = 0; row < layout.layers[0].token_count(); ++row)
        for (std::int64_t j = 0; j < 16; ++j)
            for (std::int64_t r = 1; r < 4; ++r)
                CHECK(set.tokens.at2(row, j) == set.tokens.at2(row, r * 16 + j));
}

TEST_CASE("overlapping merge: sliding-window tokens and overlap-average inverse") {
    // tiny handmade map: 1 channel, 4x4 grid, overlap merge -> 3x3 tokens
    feat::LayerSpec l;
    l.grid = 4;
    l.merge = feat::Merge::kOverlap2x2;
    l.channels = 1;
    l.token_dim = 4;
    l.train_samples = 1;
    feat::ConvTokenLayout layout;
    layout.input_size = 16;  // unused below
    layout.layers = {l};

    CHECK(l.token_count() == 9);

    feat::FeatureTokenSet set;
    set.kind = "conv-layer";
    set.layer_offsets = {0};
    Rng rng(7);
    set.tokens = random_tensor({9, 4}, rng);
    auto maps = feat::untokenize(set, layout);
    REQUIRE(maps.size() == 1);

    // loop oracle: each position is the mean of all windows covering it
    for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < 4; ++j) {
            Real sum = 0;
            int covering = 0;
            for (std::int64_t ti = 0; ti < 3; ++ti)
                for (std::int64_t tj = 0; tj < 3; ++tj)
                    for (std::int64_t wi = 0; wi < 2; ++wi)
                        for (std::int64_t wj = 0; wj < 2; ++wj)
                            if (ti + wi == i && tj + wj == j) {
                                sum += set.tokens.at2(ti * 3 + tj, (wi * 2 + wj));
                                ++covering;
                            }
            CHECK(maps[0].at3(0, i, j) == doctest::Approx(sum / covering).epsilon(1e-12));
        }
}

TEST_CASE("infonce: singleton pool, hand value, scale invariance, gradient") {
    loss::InfoNCEConfig cfg;
    cfg.tau = 1.0;

    Tensor p1({1, 2});
    p1.at2(0, 0) = 1.0;
    Tensor t1 = p1;
    CHECK(loss::infonce_loss(nn::constant(p1), nn::constant(t1), cfg).value()[0] == 0.0);

    // sim(p_i, t_i) = 1, sim(p_i, t_j) = 0 -> -ln(e / (e + 1))
    Tensor p({2, 2}), t({2, 2});
    p.at2(0, 0) = 1.0;
    p.at2(1, 1) = 1.0;
    t.at2(0, 0) = 2.0;
    t.at2(1, 1) = 3.0;
    const Real want = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
    CHECK(loss::infonce_loss(nn::constant(p), nn::constant(t), cfg).value()[0] ==
          doctest::Approx(want).epsilon(1e-12));
    CHECK(want == doctest::Approx(0.3133).epsilon(1e-3));

    Rng rng(8);
    Tensor a = random_tensor({4, 8}, rng), b = random_tensor({4, 8}, rng);
    loss::InfoNCEConfig cfg7;
    const Real base = loss::infonce_loss(nn::constant(a), nn::constant(b), cfg7).value()[0];
    CHECK(base >= 0.0);
    Tensor a2 = a, b2 = b;
    for (std::int64_t i = 0; i < a2.numel(); ++i) a2[i] *= 3.7;
    for (std::int64_t i = 0; i < b2.numel(); ++i) b2[i] *= 3.7;
    CHECK(loss::infonce_loss(nn::constant(a2), nn::constant(b2), cfg7).value()[0] ==
          doctest::Approx(base).epsilon(1e-12));

    auto build = [&](const std::vector<nn::Var>& leaves) {
        return loss::infonce_loss(leaves[0], leaves[1], cfg7);
    };
    CHECK(testutil::max_grad_rel_err(build, {a, b}) < 1e-3);
}

TEST_CASE("optimizer and schedules") {
    Rng rng(9);
    Tensor w0 = random_tensor({3, 3}, rng);
    nn::Var w(w0, true);
    optim::AdamWConfig oc;
    oc.lr = 0.0;
    oc.weight_decay = 0.5;
    optim::AdamW opt({{"w", w}}, oc);
    nn::sum(nn::mul(w, w)).backward();
    opt.step();
    CHECK(w.value().vec() == w0.vec());  // lr 0 is the identity

    CHECK(optim::warmup_lr(5e-4, 0, 15) == doctest::Approx(5e-4 / 15.0));
    CHECK(optim::warmup_lr(5e-4, 7, 15) == doctest::Approx(5e-4 * 8.0 / 15.0));
    CHECK(optim::warmup_lr(5e-4, 14, 15) == doctest::Approx(5e-4));
    CHECK(optim::warmup_lr(5e-4, 40, 15) == doctest::Approx(5e-4));

    optim::PlateauScheduler sched(0.1, 2);
    sched.observe(1.0);
    CHECK(sched.scale() == 1.0);
    sched.observe(1.1);
    sched.observe(1.2);
    CHECK(sched.scale() == 1.0);
    sched.observe(1.3);  // third non-improving epoch trips patience 2
    CHECK(sched.scale() == doctest::Approx(0.1));
}

TEST_CASE("stage 1: validation loss drops below the untrained model") {
    auto s = make_setup(41);
    TrainSchedule sched;
    sched.epochs = 6;
    sched.lr = 3e-3;
    sched.warmup_epochs = 2;
    sched.batch = 8;
    sched.seed = 5;
    auto report = train_stage1_semantic(s.model, s.ds.pairs, s.targets, sched);
    REQUIRE(report.val_loss.size() == 6);
    CHECK(report.best_val < report.initial_val);
    for (Real v : report.train_loss) CHECK(std::isfinite(v));
}

TEST_CASE("stage 1: lr=0 leaves parameters unchanged; reruns are bitwise identical") {
    auto s = make_setup(42);
    auto before = s.model.snapshot();
    TrainSchedule sched;
    sched.epochs = 1;
    sched.lr = 0.0;
    sched.batch = 8;
    sched.seed = 3;
    train_stage1_semantic(s.model, s.ds.pairs, s.targets, sched);
    for (const auto& [name, t] : s.model.snapshot()) CHECK(t.vec() == before.at(name).vec());

    auto s1 = make_setup(43);
    auto s2 = make_setup(43);
    TrainSchedule sched2;
    sched2.epochs = 3;
    sched2.lr = 2e-3;
    sched2.batch = 8;
    sched2.seed = 11;
    auto r1 = train_stage1_semantic(s1.model, s1.ds.pairs, s1.targets, sched2);
    auto r2 = train_stage1_semantic(s2.model, s2.ds.pairs, s2.targets, sched2);
    CHECK(r1.val_loss == r2.val_loss);
    for (const auto& [name, t] : s1.model.snapshot()) CHECK(t.vec() == s2.model.snapshot().at(name).vec());
}

TEST_CASE("stage 1 with enrichment uses encoder-predicted samples") {
    auto s = make_setup(44, 8);
    auto images = s.ds.unique_images();
    EnrichmentSource enrich;
    enrich.images = &images;
    enrich.encoder = s.ds.encoder.get();
    enrich.subjects = {0};
    TrainSchedule sched;
    sched.epochs = 2;
    sched.lr = 1e-3;
    sched.batch = 8;
    sched.seed = 2;
    auto report = train_stage1_semantic(s.model, s.ds.pairs, s.targets, sched, &enrich);
    CHECK(report.val_loss.size() == 2);
    for (Real v : report.val_loss) CHECK(std::isfinite(v));
}

TEST_CASE("stage 2: joint loss decreases; freeze flag pins the decoder model") {
    auto s = make_setup(45);
    gen::LinearToyBackend backend(8, 6, 0.25, 0.0, 7);
    TrainSchedule sched;
    sched.epochs = 4;
    sched.lr = 5e-3;
    sched.warmup_epochs = 0;
    sched.batch = 4;
    sched.accum = 2;
    sched.seed = 9;
    auto report = train_stage2_joint(s.model, backend, s.ds.pairs, sched);
    CHECK(report.best_val < report.initial_val);

    // frozen decoder: every model tensor bit-identical, backend still moves
    auto s2 = make_setup(46);
    gen::LinearToyBackend backend2(8, 6, 0.25, 0.0, 8);
    auto model_before = s2.model.snapshot();
    auto backend_w_before = backend2.trainable_params().at("backend/decode_w").value();
    auto report2 = train_stage2_joint(s2.model, backend2, s2.ds.pairs, sched, true);
    for (const auto& [name, t] : s2.model.snapshot()) CHECK(t.vec() == model_before.at(name).vec());
    bool moved = false;
    const Tensor& after = backend2.trainable_params().at("backend/decode_w").value();
    for (std::int64_t i = 0; i < after.numel(); ++i)
        if (after[i] != backend_w_before[i]) moved = true;
    CHECK(moved);

    // non-trainable backend is rejected with a capability error
    gen::IdentityToyBackend ident(8, 6);
    auto s3 = make_setup(47);
    CHECK_THROWS_AS(train_stage2_joint(s3.model, ident, s3.ds.pairs, sched), CapabilityError);
}

TEST_CASE("stage 2 loss is exact reconstruction error of the conditioning decode") {
    gen::LinearToyBackend backend(8, 6, 0.25, 0.0, 3);
    Rng rng(12);
    Tensor cond = random_tensor({4, 6}, rng);
    Tensor img = backend.decode_cond(cond);
    CHECK(backend.denoise_training_loss(nn::constant(cond), img, 1).value()[0] ==
          doctest::Approx(0.0).epsilon(1e-15));

    Tensor other = random_tensor({8, 8, 3}, rng);
    Real want = 0;
    for (std::int64_t i = 0; i < other.numel(); ++i) {
        const Real d = img[i] - other[i];
        want += d * d;
    }
    want /= static_cast<Real>(other.numel());
    CHECK(backend.denoise_training_loss(nn::constant(cond), other, 1).value()[0] ==
          doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("low-level head: InfoNCE training runs and improves") {
    data::SyntheticConfig cfg;
    cfg.image_size = 32;
    cfg.feature_grid = 2;
    cfg.voxels_per_subject = 16;
    cfg.subjects = 1;
    cfg.pairs = 6;
    cfg.seed = 51;
    auto ds = data::make_synthetic_dataset(cfg);
    const std::int64_t d = 8;
    std::map<int, Tensor> emb;
    emb[0] = ds.encoder->voxel_embeddings(0, d);
    v2c::GmmConfig gmm;
    gmm.k = 2;
    gmm.max_iter = 10;
    auto mapping = v2c::fit_v2c(emb, gmm);

    auto layout = feat::toy_conv_layout(32, 64);
    feat::ToyConvExtractor ex(32, {4, 8, 8, 8, 8}, 13);

    BitModelConfig mc;
    mc.clusters = 2;
    mc.d = d;
    mc.queries = layout.total_tokens();
    mc.d_out = 64;
    mc.blocks = 1;
    mc.heads = 2;
    mc.ff_width = 16;
    auto model = BitModel::init(mc, mapping, emb, 3);

    loss::InfoNCEConfig nce;
    TrainSchedule sched;
    sched.epochs = 2;
    sched.lr = 2e-3;
    sched.warmup_epochs = 0;
    sched.batch = 3;
    sched.seed = 4;
    auto report = train_lowlevel(model, ds.pairs, ex, layout, nce, sched);
    REQUIRE(report.val_loss.size() == 2);
    CHECK(report.best_val < report.initial_val);
    for (Real v : report.val_loss) {
        CHECK(std::isfinite(v));
        CHECK(v >= 0.0);
    }

    BitModelConfig bad = mc;
    bad.queries = 7;
    auto wrong = BitModel::init(bad, mapping, emb, 3);
    CHECK_THROWS_AS(train_lowlevel(wrong, ds.pairs, ex, layout, nce, sched), ConfigError);
}

TEST_CASE("model checkpoint roundtrip preserves behavior") {
    auto s = make_setup(48);
    const std::string dir = (std::filesystem::temp_directory_path() / "brainit_model_test").string();
    save_model(dir, s.model);
    auto loaded = load_model(dir);
    auto a = s.model.forward(s.ds.pairs[0].first).value();
    auto b = loaded.forward(s.ds.pairs[0].first).value();
    for (std::int64_t i = 0; i < a.numel(); ++i)
        CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-4));
    std::filesystem::remove_all(dir);
}
