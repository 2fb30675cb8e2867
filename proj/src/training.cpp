#include "brainit/training.hpp"

#include <algorithm>
#include <cmath>

#include "brainit/image.hpp"
#include "brainit/rng.hpp"

namespace brainit::train {

namespace {

std::vector<std::size_t> shuffled(std::size_t n, Rng rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i)));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

Tensor to_tensor(const std::vector<Real>& v) {
    Tensor t({static_cast<std::int64_t>(v.size())});
    for (std::size_t i = 0; i < v.size(); ++i) t[static_cast<std::int64_t>(i)] = v[i];
    return t;
}

}  // namespace

BitModel BitModel::init(const BitModelConfig& config, const v2c::V2CMapping& mapping,
                        const std::map<int, Tensor>& voxel_emb_init, std::uint64_t seed) {
    if (config.clusters != mapping.k)
        throw ConfigError("bit model: cluster count differs from the fitted mapping");
    BitModel m;
    m.config = config;
    m.mapping = mapping;
    m.tokenizer = tok::init_tokenizer_params(config.clusters, config.d, Rng::with_stream(seed, 1).next_u64());
    m.transformer = xform::init_cross_transformer(config.transformer_config(), config.queries,
                                                  Rng::with_stream(seed, 2).next_u64());
    for (const auto& [sid, emb] : voxel_emb_init) {
        if (!mapping.assignments.count(sid))
            throw ConfigError("bit model: subject " + std::to_string(sid) + " missing from mapping");
        if (emb.rank() != 2 || emb.dim(1) != config.d ||
            emb.dim(0) != static_cast<std::int64_t>(mapping.assignments.at(sid).size()))
            throw ConfigError("bit model: voxel embedding shape mismatch for subject " +
                              std::to_string(sid));
        m.voxel_emb[sid] = nn::parameter(emb);
    }
    return m;
}

void BitModel::add_subject(int subject, Tensor embeddings, std::vector<int> assignment) {
    if (embeddings.rank() != 2 || embeddings.dim(1) != config.d ||
        embeddings.dim(0) != static_cast<std::int64_t>(assignment.size()))
        throw ConfigError("bit model: bad embedding/assignment shapes for new subject");
    mapping.assignments[subject] = std::move(assignment);
    voxel_emb[subject] = nn::parameter(std::move(embeddings));
}

nn::Var BitModel::forward(const data::FmriSample& sample, std::uint64_t sample_seed) const {
    auto it = voxel_emb.find(sample.subject_id);
    if (it == voxel_emb.end())
        throw ConfigError("bit model: no voxel embeddings for subject " +
                          std::to_string(sample.subject_id));
    const auto& assignment = mapping.assignments.at(sample.subject_id);
    std::vector<std::int64_t> indices;
    Tensor acts;
    if (config.voxel_sample_n > 0) {
        auto [idx, vals] = data::sample_voxels(sample, config.voxel_sample_n, sample_seed);
        indices = std::move(idx);
        acts = to_tensor(vals);
    } else {
        indices.resize(sample.activations.size());
        for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = static_cast<std::int64_t>(i);
        acts = to_tensor(sample.activations);
    }
    nn::Var tokens = tok::tokenize(nn::constant(acts), indices, assignment, it->second, tokenizer);
    return xform::decode(tokens, transformer, config.transformer_config());
}

std::map<std::string, nn::Var> BitModel::named_params(bool include_voxel_emb) const {
    auto m = xform::named_params(transformer, "xf");
    m["tokenizer/cluster_emb"] = tokenizer.cluster_emb;
    m["tokenizer/wq"] = tokenizer.wq;
    m["tokenizer/wk"] = tokenizer.wk;
    m["tokenizer/wv"] = tokenizer.wv;
    if (include_voxel_emb)
        for (const auto& [sid, v] : voxel_emb) m["voxel_emb/subj" + std::to_string(sid)] = v;
    return m;
}

io::NamedTensors BitModel::snapshot() const {
    io::NamedTensors out;
    for (const auto& [name, v] : named_params(true)) out[name] = v.value();
    return out;
}

void BitModel::restore(const io::NamedTensors& params) {
    auto mine = named_params(true);
    for (const auto& [name, value] : params) {
        auto it = mine.find(name);
        if (it == mine.end()) throw ConfigError("restore: unknown parameter " + name);
        if (it->second.value().shape() != value.shape())
            throw ConfigError("restore: shape mismatch for " + name);
        it->second.value() = value;
    }
}

void save_model(const std::string& dir, const BitModel& model) {
    v2c::save_mapping(dir + "/mapping", model.mapping);
    io::json extra;
    extra["kind"] = "bit-model";
    extra["config"] = {{"clusters", model.config.clusters},
                       {"d", model.config.d},
                       {"queries", model.config.queries},
                       {"d_out", model.config.d_out},
                       {"blocks", model.config.blocks},
                       {"heads", model.config.heads},
                       {"ff_width", model.config.ff_width},
                       {"voxel_sample_n", model.config.voxel_sample_n}};
    io::save_named_tensors(dir + "/params", model.snapshot(), extra);
}

BitModel load_model(const std::string& dir) {
    io::json extra;
    io::NamedTensors params = io::load_named_tensors(dir + "/params", &extra);
    if (extra.value("kind", "") != "bit-model")
        throw ConfigError("load_model: " + dir + " is not a model checkpoint");
    const auto& c = extra.at("config");
    BitModelConfig config;
    config.clusters = c.at("clusters").get<int>();
    config.d = c.at("d").get<std::int64_t>();
    config.queries = c.at("queries").get<std::int64_t>();
    config.d_out = c.at("d_out").get<std::int64_t>();
    config.blocks = c.at("blocks").get<int>();
    config.heads = c.at("heads").get<int>();
    config.ff_width = c.at("ff_width").get<std::int64_t>();
    config.voxel_sample_n = c.at("voxel_sample_n").get<std::int64_t>();

    v2c::V2CMapping mapping = v2c::load_mapping(dir + "/mapping");
    std::map<int, Tensor> vemb;
    for (const auto& [sid, a] : mapping.assignments) {
        auto it = params.find("voxel_emb/subj" + std::to_string(sid));
        if (it == params.end())
            throw ConfigError("load_model: missing voxel embeddings for subject " +
                              std::to_string(sid));
        vemb[sid] = it->second;
    }
    BitModel model = BitModel::init(config, mapping, vemb, 0);
    model.restore(params);
    return model;
}

TrainSchedule semantic_stage1_schedule() {
    return TrainSchedule{};  // 60 epochs, lr 5e-4, warmup 15, batch 128
}

TrainSchedule lowlevel_schedule() {
    TrainSchedule s;
    s.batch = 64;
    return s;
}

TrainSchedule stage2_schedule() {
    TrainSchedule s;
    s.epochs = 10;
    s.lr = 1e-5;
    s.warmup_epochs = 0;
    s.batch = 16;
    s.accum = 4;
    return s;
}

namespace {

using SampleLoss =
    std::function<nn::Var(const data::FmriSample&, const data::ImageRecord&, std::uint64_t)>;

std::map<std::string, nn::Var> apply_filter(std::map<std::string, nn::Var> params,
                                            const std::vector<std::string>* filter) {
    if (!filter) return params;
    std::map<std::string, nn::Var> out;
    for (auto& [name, v] : params)
        for (const auto& prefix : *filter)
            if (name.rfind(prefix, 0) == 0) {
                out[name] = v;
                break;
            }
    return out;
}

/// Shared epoch loop: deterministic split and order, optimizer with warmup
/// and plateau decay, gradient accumulation, best-checkpoint tracking.
TrainReport train_loop(const std::string& tag, std::map<std::string, nn::Var> trainable,
                       std::map<std::string, nn::Var> all_params, const Pairs& pairs,
                       const SampleLoss& sample_loss, const TrainSchedule& sched,
                       const EnrichmentSource* enrichment) {
    if (pairs.empty()) throw ArgumentError(tag + ": no training pairs");
    if (sched.epochs < 1 || sched.batch < 1 || sched.accum < 1)
        throw ArgumentError(tag + ": bad schedule");

    // Frozen params leave the backward pass entirely: no gradient is ever
    // accumulated on them, not just ignored by the optimizer.
    struct FreezeGuard {
        std::vector<std::shared_ptr<nn::Node>> nodes;
        ~FreezeGuard() {
            for (auto& n : nodes) n->requires_grad = true;
        }
    } guard;
    for (auto& [name, v] : all_params)
        if (trainable.count(name) == 0 && v.node()->requires_grad) {
            v.node()->requires_grad = false;
            guard.nodes.push_back(v.node());
        }

    auto split = shuffled(pairs.size(), Rng::with_stream(sched.seed, 7));
    std::size_t n_val = pairs.size() >= 2
                            ? std::max<std::size_t>(
                                  1, static_cast<std::size_t>(std::llround(
                                         sched.val_fraction * static_cast<Real>(pairs.size()))))
                            : 0;
    if (sched.val_fraction <= 0.0) n_val = 0;
    std::vector<std::size_t> val_idx(split.begin(), split.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train_idx(split.begin() + static_cast<std::ptrdiff_t>(n_val), split.end());
    if (train_idx.empty()) throw ArgumentError(tag + ": validation split consumed all pairs");

    auto evaluate = [&](const std::vector<std::size_t>& idx) {
        const auto& which = idx.empty() ? train_idx : idx;
        Real total = 0;
        for (std::size_t k = 0; k < which.size(); ++k) {
            const auto& [s, im] = pairs[which[k]];
            total += sample_loss(s, im, Rng::with_stream(sched.seed, 0xE0A1 + k).next_u64())
                         .value()[0];
        }
        return total / static_cast<Real>(which.size());
    };

    optim::AdamWConfig oc;
    oc.lr = sched.lr;
    oc.weight_decay = sched.weight_decay;
    optim::AdamW opt(trainable, oc);
    optim::PlateauScheduler plateau(sched.plateau_factor, sched.plateau_patience);

    TrainReport report;
    report.initial_val = evaluate(val_idx);
    report.best_val = report.initial_val;
    report.best_params.clear();
    for (const auto& [name, v] : all_params) report.best_params[name] = v.value();

    std::uint64_t step_counter = 0;
    for (int epoch = 0; epoch < sched.epochs; ++epoch) {
        // epoch-local pair list: training split plus fresh enrichment
        std::vector<std::pair<const data::FmriSample*, const data::ImageRecord*>> epoch_pairs;
        for (std::size_t i : train_idx) epoch_pairs.push_back({&pairs[i].first, &pairs[i].second});
        std::vector<data::FmriSample> enriched;
        if (enrichment && enrichment->images && !enrichment->images->empty()) {
            enriched = data::enrich_with_unlabeled(
                *enrichment->images, *enrichment->encoder, enrichment->subjects,
                Rng::with_stream(sched.seed, 0x3A00 + static_cast<std::uint64_t>(epoch)).next_u64());
            for (std::size_t i = 0; i < enriched.size(); ++i)
                epoch_pairs.push_back({&enriched[i], &(*enrichment->images)[i]});
        }
        auto order = shuffled(epoch_pairs.size(),
                              Rng::with_stream(sched.seed, 100 + static_cast<std::uint64_t>(epoch)));

        const Real lr_scale = optim::warmup_lr(1.0, epoch, sched.warmup_epochs) * plateau.scale();
        Real epoch_loss = 0;
        std::size_t batches = 0;
        int pending = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(sched.batch)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(sched.batch));
            nn::Var batch_sum;
            for (std::size_t k = start; k < stop; ++k) {
                const auto& [s, im] = epoch_pairs[order[k]];
                nn::Var l = sample_loss(*s, *im, Rng::with_stream(sched.seed, 0xB000 + step_counter++)
                                                     .next_u64());
                batch_sum = batch_sum.defined() ? nn::add(batch_sum, l) : l;
            }
            nn::Var batch_loss = nn::mul_scalar(batch_sum, 1.0 / static_cast<Real>(stop - start));
            const Real lv = batch_loss.value()[0];
            if (!std::isfinite(lv))
                throw ConfigError(tag + ": training diverged (non-finite loss at epoch " +
                                  std::to_string(epoch) + ")");
            epoch_loss += lv;
            ++batches;
            nn::mul_scalar(batch_loss, 1.0 / static_cast<Real>(sched.accum)).backward();
            if (++pending == sched.accum) {
                opt.step(lr_scale);
                opt.zero_grad();
                pending = 0;
            }
        }
        if (pending > 0) {
            opt.step(lr_scale);
            opt.zero_grad();
        }
        report.train_loss.push_back(epoch_loss / static_cast<Real>(std::max<std::size_t>(1, batches)));

        const Real val = evaluate(val_idx);
        if (!std::isfinite(val))
            throw ConfigError(tag + ": validation loss non-finite at epoch " + std::to_string(epoch));
        report.val_loss.push_back(val);
        plateau.observe(val);
        if (val < report.best_val) {
            report.best_val = val;
            for (const auto& [name, v] : all_params) report.best_params[name] = v.value();
        }
    }

    for (auto& [name, v] : all_params) v.value() = report.best_params.at(name);
    return report;
}

}  // namespace

TrainReport train_stage1_semantic(BitModel& model, const Pairs& pairs,
                                  const std::map<std::string, Tensor>& targets,
                                  const TrainSchedule& schedule,
                                  const EnrichmentSource* enrichment,
                                  const std::vector<std::string>* trainable_filter) {
    auto lookup = [&](const std::string& id) -> const Tensor& {
        auto it = targets.find(id);
        if (it == targets.end()) throw ConfigError("stage1: no target tokens for image " + id);
        if (it->second.rank() != 2 || it->second.dim(0) != model.config.queries ||
            it->second.dim(1) != model.config.d_out)
            throw ConfigError("stage1: target token shape mismatch for image " + id);
        return it->second;
    };
    SampleLoss loss = [&](const data::FmriSample& s, const data::ImageRecord& im,
                          std::uint64_t seed) {
        return nn::mse(model.forward(s, seed), nn::constant(lookup(im.image_id)));
    };
    return train_loop("stage1", apply_filter(model.named_params(true), trainable_filter),
                      model.named_params(true), pairs, loss, schedule, enrichment);
}

TrainReport train_stage2_joint(BitModel& model, gen::DiffusionBackendInterface& backend,
                               const Pairs& pairs, const TrainSchedule& schedule, bool freeze_bit,
                               const std::vector<std::string>* trainable_filter) {
    if (!backend.info().trainable)
        throw CapabilityError("stage2: backend '" + backend.info().name +
                              "' is not trainable; use the 'toy-linear' backend");
    if (backend.info().token_width != model.config.d_out)
        throw ConfigError("stage2: backend conditioning width differs from model output dim");

    auto all = model.named_params(true);
    for (auto& [name, v] : backend.trainable_params()) all[name] = v;
    std::map<std::string, nn::Var> trainable = backend.trainable_params();
    if (!freeze_bit)
        for (auto& [name, v] : model.named_params(true)) trainable[name] = v;
    trainable = apply_filter(std::move(trainable), trainable_filter);

    const std::int64_t res = backend.info().image_size;
    SampleLoss loss = [&](const data::FmriSample& s, const data::ImageRecord& im,
                          std::uint64_t seed) {
        nn::Var cond = model.forward(s, seed);
        if (freeze_bit) cond = nn::constant(cond.value());
        Tensor image = im.pixels;
        if (image.dim(0) != res || image.dim(1) != res) image = img::resize(image, res, res);
        return backend.denoise_training_loss(cond, image, seed);
    };
    return train_loop("stage2", std::move(trainable), std::move(all), pairs, loss, schedule,
                      nullptr);
}

TrainReport train_lowlevel(BitModel& model, const Pairs& pairs,
                           const feat::FeatureExtractorInterface& extractor,
                           const feat::ConvTokenLayout& layout,
                           const loss::InfoNCEConfig& nce_config, const TrainSchedule& schedule,
                           const std::vector<std::string>* trainable_filter) {
    layout.validate();
    extractor.check_layout(layout);
    if (model.config.queries != layout.total_tokens() ||
        model.config.d_out != layout.token_dim())
        throw ConfigError("lowlevel: model head does not match the conv-token layout");

    // target tokens once per unique image
    std::map<std::string, Tensor> target_tokens;
    for (const auto& [s, im] : pairs)
        if (!target_tokens.count(im.image_id))
            target_tokens[im.image_id] = feat::extract_conv_tokens(im, extractor, layout).tokens;

    const auto offsets = layout.layer_offsets();
    SampleLoss loss = [&](const data::FmriSample& s, const data::ImageRecord& im,
                          std::uint64_t seed) {
        auto tit = target_tokens.find(im.image_id);
        if (tit == target_tokens.end()) {
            tit = target_tokens.emplace(im.image_id,
                                        feat::extract_conv_tokens(im, extractor, layout).tokens)
                      .first;
        }
        nn::Var pred = model.forward(s, seed);
        nn::Var total;
        Rng rng = Rng::with_stream(seed, 0x10CE);
        for (std::size_t li = 0; li < layout.layers.size(); ++li) {
            const auto& l = layout.layers[li];
            const std::int64_t count = l.token_count();
            const std::int64_t take = std::min<std::int64_t>(l.train_samples, count);
            // sample token rows without replacement
            std::vector<std::int64_t> rows(static_cast<std::size_t>(count));
            for (std::int64_t i = 0; i < count; ++i) rows[static_cast<std::size_t>(i)] = offsets[li] + i;
            for (std::int64_t i = 0; i < take; ++i) {
                const std::int64_t j = i + rng.uniform_int(count - i);
                std::swap(rows[static_cast<std::size_t>(i)], rows[static_cast<std::size_t>(j)]);
            }
            rows.resize(static_cast<std::size_t>(take));
            nn::Var p = nn::gather_rows(pred, rows);
            Tensor t({take, layout.token_dim()});
            for (std::int64_t i = 0; i < take; ++i)
                for (std::int64_t j = 0; j < layout.token_dim(); ++j)
                    t.at2(i, j) = tit->second.at2(rows[static_cast<std::size_t>(i)], j);
            nn::Var layer_loss = loss::infonce_loss(p, nn::constant(t), nce_config);
            total = total.defined() ? nn::add(total, layer_loss) : layer_loss;
        }
        return total;
    };
    return train_loop("lowlevel", apply_filter(model.named_params(true), trainable_filter),
                      model.named_params(true), pairs, loss, schedule, nullptr);
}

}  // namespace brainit::train
