#include "brainit/transfer.hpp"

#include <algorithm>
#include <cmath>

#include "brainit/rng.hpp"

namespace brainit::xfer {

std::int64_t budget_to_samples(Real minutes, Real samples_per_minute) {
    if (minutes <= 0 || samples_per_minute <= 0)
        throw ArgumentError("transfer: budget must be positive");
    return std::llround(minutes * samples_per_minute);
}

TransferReport adapt_subject(train::BitModel& model, int subject,
                             const train::Pairs& subject_data, const Tensor& encoder_embeddings,
                             const std::map<std::string, Tensor>& targets,
                             gen::DiffusionBackendInterface* backend,
                             const TransferConfig& config,
                             const train::EnrichmentSource* enrichment) {
    if (subject_data.empty()) throw ArgumentError("transfer: no data for the new subject");
    for (const auto& [s, im] : subject_data)
        if (s.subject_id != subject)
            throw ArgumentError("transfer: sample from subject " + std::to_string(s.subject_id) +
                                " in subject " + std::to_string(subject) + " data");
    if (encoder_embeddings.rank() != 2 || encoder_embeddings.dim(1) != model.config.d)
        throw ConfigError("transfer: encoder embedding dim " +
                          std::to_string(encoder_embeddings.rank() == 2 ? encoder_embeddings.dim(1)
                                                                        : -1) +
                          " does not match model dim " + std::to_string(model.config.d));

    TransferReport report;
    report.subject = subject;
    report.assignment = v2c::assign_new_subject(model.mapping, encoder_embeddings);
    model.add_subject(subject, encoder_embeddings, report.assignment);

    // budget cut: seeded shuffle, then the first n recordings
    const std::int64_t budget = budget_to_samples(config.minutes, config.samples_per_minute);
    const std::size_t n =
        std::min<std::size_t>(subject_data.size(), static_cast<std::size_t>(budget));
    std::vector<std::size_t> order(subject_data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng pick = Rng::with_stream(config.seed, 0xB0D6);
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(pick.uniform_int(
                                    static_cast<std::int64_t>(i)))]);
    train::Pairs pairs;
    for (std::size_t i = 0; i < n; ++i) pairs.push_back(subject_data[order[i]]);
    report.samples_used = static_cast<std::int64_t>(pairs.size());

    const std::vector<std::string> own_rows = {"voxel_emb/subj" + std::to_string(subject)};

    train::EnrichmentSource own_enrichment;
    const train::EnrichmentSource* enrich_ptr = nullptr;
    if (config.enrichment && enrichment && enrichment->images && enrichment->encoder) {
        own_enrichment = *enrichment;
        own_enrichment.subjects = {subject};  // predicted responses for this subject only
        enrich_ptr = &own_enrichment;
    }

    if (config.run_alignment) {
        train::TrainSchedule sched = config.alignment_schedule;
        sched.seed = Rng::with_stream(config.seed, 1).next_u64();
        report.alignment =
            train::train_stage1_semantic(model, pairs, targets, sched, enrich_ptr, &own_rows);
    }
    if (config.run_joint) {
        if (backend == nullptr) throw ConfigError("transfer: joint part needs a backend");
        std::vector<std::string> filter = own_rows;
        if (config.unfreeze_backend) filter.push_back("backend/");
        train::TrainSchedule sched = config.joint_schedule;
        sched.seed = Rng::with_stream(config.seed, 2).next_u64();
        report.joint = train::train_stage2_joint(model, *backend, pairs, sched,
                                                 /*freeze_bit=*/false, &filter);
    }
    return report;
}

}  // namespace brainit::xfer
