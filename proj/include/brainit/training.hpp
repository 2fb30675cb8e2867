#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "brainit/backend.hpp"
#include "brainit/cross_transformer.hpp"
#include "brainit/datasets.hpp"
#include "brainit/extractor.hpp"
#include "brainit/io.hpp"
#include "brainit/layout.hpp"
#include "brainit/losses.hpp"
#include "brainit/optim.hpp"
#include "brainit/tokenizer.hpp"
#include "brainit/v2c.hpp"

namespace brainit::train {

struct BitModelConfig {
    int clusters = 128;
    std::int64_t d = 512;
    std::int64_t queries = 256;
    std::int64_t d_out = 512;
    int blocks = 5;
    int heads = 8;
    std::int64_t ff_width = 0;
    std::int64_t voxel_sample_n = 0;  // 0: every voxel once, in order

    xform::CrossTransformerConfig transformer_config() const {
        xform::CrossTransformerConfig c;
        c.blocks = blocks;
        c.heads = heads;
        c.d = d;
        c.d_out = d_out;
        c.ff_width = ff_width;
        return c;
    }
};

/// Full fMRI-to-feature-tokens model: per-subject voxel embeddings (the
/// only subject-specific parameters), shared tokenizer, shared
/// cross-transformer. The cluster mapping is fixed, not trained.
struct BitModel {
    BitModelConfig config;
    v2c::V2CMapping mapping;
    std::map<int, nn::Var> voxel_emb;  // subject -> [V_s, d]
    tok::TokenizerParams tokenizer;
    xform::CrossTransformerParams transformer;

    static BitModel init(const BitModelConfig& config, const v2c::V2CMapping& mapping,
                         const std::map<int, Tensor>& voxel_emb_init, std::uint64_t seed);

    /// Predicted feature tokens [queries, d_out] for one recording.
    nn::Var forward(const data::FmriSample& sample, std::uint64_t sample_seed = 0) const;

    /// Subject-qualified names: voxel_emb/subj{n}, tokenizer/*, xf/*.
    std::map<std::string, nn::Var> named_params(bool include_voxel_emb = true) const;

    io::NamedTensors snapshot() const;
    void restore(const io::NamedTensors& params);
    void add_subject(int subject, Tensor embeddings, std::vector<int> assignment);
};

void save_model(const std::string& dir, const BitModel& model);
BitModel load_model(const std::string& dir);

struct TrainSchedule {
    int epochs = 60;
    Real lr = 5e-4;
    int warmup_epochs = 15;
    int batch = 128;
    Real plateau_factor = 0.1;
    int plateau_patience = 3;
    int accum = 1;
    Real weight_decay = 0.0;
    Real val_fraction = 0.1;
    std::uint64_t seed = 0;
};

TrainSchedule semantic_stage1_schedule();  // 60 epochs, lr 5e-4, warmup 15, batch 128
TrainSchedule lowlevel_schedule();         // as stage 1 but batch 64
TrainSchedule stage2_schedule();           // 10 epochs, lr 1e-5, batch 16, accum 4

/// Optional per-epoch augmentation with encoder-predicted responses to
/// unlabeled images (targets must cover these image ids too).
struct EnrichmentSource {
    const std::vector<data::ImageRecord>* images = nullptr;
    const data::EncoderInterface* encoder = nullptr;
    std::vector<int> subjects;
};

struct TrainReport {
    std::vector<Real> train_loss;  // per epoch
    std::vector<Real> val_loss;    // per epoch
    Real initial_val = 0;
    Real best_val = 0;
    io::NamedTensors best_params;
};

using Pairs = std::vector<std::pair<data::FmriSample, data::ImageRecord>>;

/// Stage 1: L2 alignment of predicted tokens to precomputed per-image
/// targets. Model is left at the best-validation parameters.
TrainReport train_stage1_semantic(BitModel& model, const Pairs& pairs,
                                  const std::map<std::string, Tensor>& targets,
                                  const TrainSchedule& schedule,
                                  const EnrichmentSource* enrichment = nullptr,
                                  const std::vector<std::string>* trainable_filter = nullptr);

/// Stage 2: joint denoising objective through a trainable backend.
TrainReport train_stage2_joint(BitModel& model, gen::DiffusionBackendInterface& backend,
                               const Pairs& pairs, const TrainSchedule& schedule,
                               bool freeze_bit = false,
                               const std::vector<std::string>* trainable_filter = nullptr);

/// Low-level head: per-layer InfoNCE over sampled conv-feature tokens.
TrainReport train_lowlevel(BitModel& model, const Pairs& pairs,
                           const feat::FeatureExtractorInterface& extractor,
                           const feat::ConvTokenLayout& layout,
                           const loss::InfoNCEConfig& nce_config, const TrainSchedule& schedule,
                           const std::vector<std::string>* trainable_filter = nullptr);

}  // namespace brainit::train
