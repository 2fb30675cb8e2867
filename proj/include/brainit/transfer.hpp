#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "brainit/training.hpp"

namespace brainit::xfer {

/// Recording minutes to sample count at the dataset trial rate
/// (default 30 samples per minute, i.e. 450 samples per 15 minutes).
std::int64_t budget_to_samples(Real minutes, Real samples_per_minute = 30.0);

struct TransferConfig {
    Real minutes = 60.0;
    Real samples_per_minute = 30.0;
    bool enrichment = true;
    bool run_alignment = true;  // part (i): token targets, L2
    bool run_joint = true;      // part (ii): denoising objective through the backend
    bool unfreeze_backend = false;
    train::TrainSchedule alignment_schedule = train::semantic_stage1_schedule();
    train::TrainSchedule joint_schedule = train::stage2_schedule();
    std::uint64_t seed = 0;
};

struct TransferReport {
    int subject = 0;
    std::int64_t samples_used = 0;
    std::vector<int> assignment;  // voxel -> cluster for the new subject
    train::TrainReport alignment;
    train::TrainReport joint;
};

/// Adapts the model to a new subject: clusters the subject's voxels under
/// the frozen mixture, installs encoder-derived voxel embeddings, then runs
/// the two-part training sequence with only that subject's embedding rows
/// trainable. Every other tensor is bit-identical afterwards.
TransferReport adapt_subject(train::BitModel& model, int subject,
                             const train::Pairs& subject_data, const Tensor& encoder_embeddings,
                             const std::map<std::string, Tensor>& targets,
                             gen::DiffusionBackendInterface* backend,
                             const TransferConfig& config,
                             const train::EnrichmentSource* enrichment = nullptr);

}  // namespace brainit::xfer
