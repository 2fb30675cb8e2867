#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "brainit/transfer.hpp"
#include "test_util.hpp"

using namespace brainit;
using namespace brainit::xfer;

namespace {

struct XferSetup {
    data::SyntheticDataset ds;
    train::BitModel model;
    std::map<std::string, Tensor> targets;
    train::Pairs subj0, subj1;
};

XferSetup make_setup(std::uint64_t seed, bool train_base = true) {
    data::SyntheticConfig cfg;
    cfg.image_size = 16;
    cfg.feature_grid = 2;
    cfg.voxels_per_subject = 16;
    cfg.subjects = 2;
    cfg.pairs = 12;
    cfg.seed = seed;
    auto ds = data::make_synthetic_dataset(cfg);

    const std::int64_t d = 8;
    std::map<int, Tensor> emb;
    emb[0] = ds.encoder->voxel_embeddings(0, d);  // subject 1 joins later, via transfer
    v2c::GmmConfig gmm;
    gmm.k = 2;
    gmm.max_iter = 15;
    gmm.seed = seed;
    auto mapping = v2c::fit_v2c(emb, gmm);

    train::BitModelConfig mc;
    mc.clusters = 2;
    mc.d = d;
    mc.queries = 4;
    mc.d_out = 6;
    mc.blocks = 1;
    mc.heads = 2;
    mc.ff_width = 16;
    auto model = train::BitModel::init(mc, mapping, emb, seed + 1);

    feat::ToySemanticBackbone backbone(2, 6, 2, seed + 2);
    std::map<std::string, Tensor> targets;
    for (const auto& im : ds.unique_images()) targets[im.image_id] = backbone.tokens(im);

    train::Pairs subj0, subj1;
    for (const auto& p : ds.pairs) (p.first.subject_id == 0 ? subj0 : subj1).push_back(p);

    if (train_base) {
        train::TrainSchedule sched;
        sched.epochs = 5;
        sched.lr = 3e-3;
        sched.warmup_epochs = 1;
        sched.batch = 8;
        sched.seed = seed + 3;
        train::train_stage1_semantic(model, subj0, targets, sched);
    }
    return {std::move(ds), std::move(model), std::move(targets), std::move(subj0),
            std::move(subj1)};
}

Real semantic_loss(const train::BitModel& m, const train::Pairs& pairs,
                   const std::map<std::string, Tensor>& targets) {
    Real total = 0;
    for (const auto& [s, im] : pairs) {
        Tensor pred = m.forward(s).value();
        const Tensor& want = targets.at(im.image_id);
        Real acc = 0;
        for (std::int64_t i = 0; i < pred.numel(); ++i)
            acc += (pred[i] - want[i]) * (pred[i] - want[i]);
        total += acc / static_cast<Real>(pred.numel());
    }
    return total / static_cast<Real>(pairs.size());
}

TransferConfig toy_transfer(std::uint64_t seed, std::size_t samples) {
    TransferConfig c;
    c.minutes = static_cast<Real>(samples);
    c.samples_per_minute = 1.0;
    c.enrichment = false;
    c.run_joint = false;
    c.alignment_schedule.epochs = 4;
    c.alignment_schedule.lr = 3e-3;
    c.alignment_schedule.warmup_epochs = 0;
    c.alignment_schedule.batch = 8;
    c.alignment_schedule.val_fraction = 0.25;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("budget: minutes to sample counts at the trial rate") {
    CHECK(budget_to_samples(15) == 450);
    CHECK(budget_to_samples(60) == 1800);
    CHECK(budget_to_samples(0.5) == 15);
    CHECK(budget_to_samples(10, 3) == 30);
    CHECK_THROWS_AS(budget_to_samples(0), ArgumentError);
    CHECK_THROWS_AS(budget_to_samples(-1), ArgumentError);
    CHECK_THROWS_AS(budget_to_samples(5, 0), ArgumentError);
}

TEST_CASE("freeze contract: only the new subject's embedding rows move") {
    auto s = make_setup(3);
    auto before = s.model.snapshot();

    Tensor emb1 = s.ds.encoder->voxel_embeddings(1, 8);
    auto report = adapt_subject(s.model, 1, s.subj1, emb1, s.targets, nullptr, toy_transfer(5, 12));
    CHECK(report.samples_used == 12);
    CHECK(report.assignment.size() == 16);

    auto after = s.model.snapshot();
    for (const auto& [name, t] : before) {
        REQUIRE(after.count(name) == 1);
        CHECK_MESSAGE(after.at(name).vec() == t.vec(), name);
    }
    // the new rows exist and left their init
    REQUIRE(after.count("voxel_emb/subj1") == 1);
    CHECK(after.at("voxel_emb/subj1").vec() != emb1.vec());

    // structural masking: no gradient ever reached the shared tensors
    for (const auto& [name, v] : s.model.named_params(true))
        if (name.rfind("voxel_emb/subj1", 0) != 0) CHECK_MESSAGE(!v.has_grad(), name);
    CHECK(report.alignment.best_val <= report.alignment.initial_val);
}

TEST_CASE("adaptation learns: validation loss drops from the encoder init") {
    auto s = make_setup(4);
    Tensor emb1 = s.ds.encoder->voxel_embeddings(1, 8);
    auto cfg = toy_transfer(7, 12);
    cfg.alignment_schedule.epochs = 8;
    auto report = adapt_subject(s.model, 1, s.subj1, emb1, s.targets, nullptr, cfg);
    CHECK(report.alignment.best_val < report.alignment.initial_val);
}

TEST_CASE("re-adapting a trained subject from its own embeddings stays consistent") {
    auto s = make_setup(5);
    const Real base_loss = semantic_loss(s.model, s.subj0, s.targets);

    auto cfg = toy_transfer(77, s.subj0.size());
    cfg.alignment_schedule.epochs = 3;
    cfg.alignment_schedule.lr = 5e-4;
    Tensor own = s.model.named_params(true).at("voxel_emb/subj0").value();
    adapt_subject(s.model, 0, s.subj0, own, s.targets, nullptr, cfg);
    const Real adapted_loss = semantic_loss(s.model, s.subj0, s.targets);
    CHECK(std::abs(adapted_loss - base_loss) <= 0.05 * base_loss);
}

TEST_CASE("joint part: backend frozen by default, trainable on request") {
    auto s = make_setup(6);
    gen::LinearToyBackend backend(16, 6, 0.25, 0.0, 9);
    Tensor decode_before = backend.trainable_params().at("backend/decode_w").value();
    auto shared_before = s.model.snapshot();

    Tensor emb1 = s.ds.encoder->voxel_embeddings(1, 8);
    auto cfg = toy_transfer(8, 12);
    cfg.run_joint = true;
    cfg.joint_schedule.epochs = 2;
    cfg.joint_schedule.lr = 1e-3;
    cfg.joint_schedule.batch = 8;
    cfg.joint_schedule.accum = 1;
    adapt_subject(s.model, 1, s.subj1, emb1, s.targets, &backend, cfg);

    CHECK(backend.trainable_params().at("backend/decode_w").value().vec() == decode_before.vec());
    for (const auto& [name, t] : shared_before)
        CHECK(s.model.snapshot().at(name).vec() == t.vec());

    auto s2 = make_setup(6);
    gen::LinearToyBackend backend2(16, 6, 0.25, 0.0, 9);
    cfg.unfreeze_backend = true;
    adapt_subject(s2.model, 1, s2.subj1, emb1, s2.targets, &backend2, cfg);
    CHECK(backend2.trainable_params().at("backend/decode_w").value().vec() != decode_before.vec());
    for (const auto& [name, t] : shared_before)
        CHECK(s2.model.snapshot().at(name).vec() == t.vec());
}

TEST_CASE("same seed reproduces the adapted embedding bitwise") {
    auto a = make_setup(9);
    auto b = make_setup(9);
    Tensor emb1 = a.ds.encoder->voxel_embeddings(1, 8);
    auto cfg = toy_transfer(11, 12);
    adapt_subject(a.model, 1, a.subj1, emb1, a.targets, nullptr, cfg);
    adapt_subject(b.model, 1, b.subj1, emb1, b.targets, nullptr, cfg);
    CHECK(a.model.snapshot().at("voxel_emb/subj1").vec() ==
          b.model.snapshot().at("voxel_emb/subj1").vec());
}

TEST_CASE("error paths: wrong embedding dim, wrong subject, missing backend") {
    auto s = make_setup(10);
    Tensor bad({16, 5});
    CHECK_THROWS_AS(adapt_subject(s.model, 1, s.subj1, bad, s.targets, nullptr, toy_transfer(1, 4)),
                    ConfigError);

    Tensor emb1 = s.ds.encoder->voxel_embeddings(1, 8);
    CHECK_THROWS_AS(adapt_subject(s.model, 1, s.subj0, emb1, s.targets, nullptr,
                                  toy_transfer(1, 4)),
                    ArgumentError);

    auto cfg = toy_transfer(1, 4);
    cfg.run_alignment = false;
    cfg.run_joint = true;
    CHECK_THROWS_AS(adapt_subject(s.model, 1, s.subj1, emb1, s.targets, nullptr, cfg), ConfigError);
}
