#include "brainit/datasets.hpp"

#include <algorithm>
#include <cmath>

#include "brainit/autodiff.hpp"
#include "brainit/image.hpp"
#include "brainit/io.hpp"
#include "brainit/rng.hpp"

namespace brainit::data {

void SubjectRegistry::register_subject(int id, std::int64_t voxel_count) {
    if (voxel_count <= 0) throw ArgumentError("subject voxel count must be positive");
    if (counts_.count(id)) throw ArgumentError("subject id already registered: " + std::to_string(id));
    counts_[id] = voxel_count;
}

std::int64_t SubjectRegistry::voxel_count(int id) const {
    auto it = counts_.find(id);
    if (it == counts_.end()) throw ConfigError("unknown subject: " + std::to_string(id));
    return it->second;
}

std::vector<int> SubjectRegistry::subjects() const {
    std::vector<int> out;
    out.reserve(counts_.size());
    for (const auto& [id, _] : counts_) out.push_back(id);
    return out;
}

// ---------------------------------------------------------------------------

SyntheticEncoder::SyntheticEncoder(SyntheticConfig config, std::uint64_t seed) : config_(config) {
    const std::int64_t v = config_.voxels_per_subject;
    const std::int64_t f = config_.feature_dim();
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(f));
    for (int s = 0; s < config_.subjects; ++s) {
        Rng rng = Rng::with_stream(seed, 1000 + static_cast<std::uint64_t>(s));
        Tensor w({v, f});
        for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = scale * rng.normal();
        Tensor b({v});
        for (std::int64_t i = 0; i < v; ++i) b[i] = 0.1 * rng.normal();
        weights_[s] = std::move(w);
        biases_[s] = std::move(b);
    }
}

Tensor SyntheticEncoder::features(const ImageRecord& image) const {
    const Tensor small = img::resize(image.pixels, config_.feature_grid, config_.feature_grid);
    return small.reshaped({config_.feature_dim()});
}

std::vector<Real> SyntheticEncoder::predict(const ImageRecord& image, int subject) const {
    auto it = weights_.find(subject);
    if (it == weights_.end()) throw ConfigError("encoder has no subject " + std::to_string(subject));
    const Tensor feat = features(image);
    const Tensor& w = it->second;
    const Tensor& b = biases_.at(subject);
    const std::int64_t v = w.dim(0), f = w.dim(1);
    std::vector<Real> out(static_cast<std::size_t>(v));
    for (std::int64_t i = 0; i < v; ++i) {
        Real acc = b[i];
        for (std::int64_t j = 0; j < f; ++j) acc += w.at2(i, j) * feat[j];
        out[static_cast<std::size_t>(i)] = acc;
    }
    return out;
}

Tensor SyntheticEncoder::voxel_embeddings(int subject, std::int64_t dim) const {
    const Tensor& w = weights_.at(subject);
    const std::int64_t v = w.dim(0), f = w.dim(1);
    if (dim == f) return w;
    Tensor out({v, dim});
    if (dim > f) {
        for (std::int64_t i = 0; i < v; ++i)
            for (std::int64_t j = 0; j < f; ++j) out.at2(i, j) = w.at2(i, j);
        return out;
    }
    // Shared random projection so all subjects land in the same space.
    Rng rng = Rng::with_stream(config_.seed, 555);
    Tensor proj({f, dim});
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(f));
    for (std::int64_t i = 0; i < proj.numel(); ++i) proj[i] = scale * rng.normal();
    for (std::int64_t i = 0; i < v; ++i)
        for (std::int64_t j = 0; j < dim; ++j) {
            Real acc = 0;
            for (std::int64_t k = 0; k < f; ++k) acc += w.at2(i, k) * proj.at2(k, j);
            out.at2(i, j) = acc;
        }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

Tensor random_image(std::int64_t size, Rng& rng) {
    // Smooth texture: low-resolution noise upsampled, plus one colored shape.
    const std::int64_t coarse = std::max<std::int64_t>(2, size / 4);
    Tensor low({3, coarse, coarse});
    for (std::int64_t i = 0; i < low.numel(); ++i) low[i] = 0.5 + 0.25 * rng.normal();
    Tensor chw = nn::upsample_bilinear_value(low, size, size);

    const bool circle = rng.uniform() < 0.5;
    const Real cx = rng.uniform(0.2, 0.8) * static_cast<Real>(size);
    const Real cy = rng.uniform(0.2, 0.8) * static_cast<Real>(size);
    const Real radius = rng.uniform(0.1, 0.3) * static_cast<Real>(size);
    Real color[3] = {rng.uniform(), rng.uniform(), rng.uniform()};
    for (std::int64_t y = 0; y < size; ++y)
        for (std::int64_t x = 0; x < size; ++x) {
            bool inside;
            if (circle) {
                const Real dx = static_cast<Real>(x) - cx, dy = static_cast<Real>(y) - cy;
                inside = dx * dx + dy * dy <= radius * radius;
            } else {
                inside = std::abs(static_cast<Real>(x) - cx) <= radius &&
                         std::abs(static_cast<Real>(y) - cy) <= radius;
            }
            if (inside)
                for (int c = 0; c < 3; ++c) chw.at3(c, y, x) = color[c];
        }
    return img::clip01(img::chw_to_hwc(chw));
}

std::string image_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "img%05d", i);
    return buf;
}

}  // namespace

SyntheticDataset make_synthetic_dataset(const SyntheticConfig& config) {
    if (config.voxels_per_subject <= 0 || config.pairs <= 0 || config.subjects <= 0 ||
        config.image_size <= 0 || config.feature_grid <= 0 || config.feature_grid > config.image_size ||
        config.noise < 0)
        throw ArgumentError("degenerate synthetic dataset config");

    SyntheticDataset ds;
    ds.config = config;
    ds.encoder = std::make_shared<SyntheticEncoder>(config, config.seed);
    for (int s = 0; s < config.subjects; ++s) ds.registry.register_subject(s, config.voxels_per_subject);

    for (int i = 0; i < config.pairs; ++i) {
        Rng img_rng = Rng::with_stream(config.seed, 10000 + static_cast<std::uint64_t>(i));
        ImageRecord rec{image_name(i), random_image(config.image_size, img_rng)};
        for (int s = 0; s < config.subjects; ++s) {
            FmriSample sample;
            sample.subject_id = s;
            sample.image_id = rec.image_id;
            sample.activations = ds.encoder->predict(rec, s);
            if (config.noise > 0) {
                Rng noise_rng = Rng::with_stream(
                    config.seed, 20000 + static_cast<std::uint64_t>(i) * 64 + static_cast<std::uint64_t>(s));
                for (Real& a : sample.activations) a += config.noise * noise_rng.normal();
            }
            ds.pairs.emplace_back(std::move(sample), rec);
        }
    }
    return ds;
}

std::vector<ImageRecord> SyntheticDataset::unique_images() const {
    std::vector<ImageRecord> out;
    std::string last;
    for (const auto& [sample, image] : pairs) {
        if (image.image_id != last) {
            out.push_back(image);
            last = image.image_id;
        }
    }
    return out;
}

std::pair<std::vector<std::int64_t>, std::vector<Real>> sample_voxels(const FmriSample& sample,
                                                                      std::int64_t n,
                                                                      std::uint64_t seed) {
    if (n <= 0) throw ArgumentError("sample_voxels: n must be >= 1");
    if (!sample.valid()) throw ArgumentError("sample_voxels: invalid sample");
    const std::int64_t v = static_cast<std::int64_t>(sample.activations.size());
    Rng rng(seed);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    std::vector<Real> acts(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t j = rng.uniform_int(v);
        idx[static_cast<std::size_t>(i)] = j;
        acts[static_cast<std::size_t>(i)] = sample.activations[static_cast<std::size_t>(j)];
    }
    return {std::move(idx), std::move(acts)};
}

std::vector<FmriSample> enrich_with_unlabeled(const std::vector<ImageRecord>& images,
                                              const EncoderInterface& encoder,
                                              const std::vector<int>& subjects, std::uint64_t seed) {
    for (int s : subjects)
        if (!encoder.has_subject(s)) throw ConfigError("encoder missing subject " + std::to_string(s));
    std::vector<FmriSample> out;
    out.reserve(images.size());
    Rng rng(seed);
    for (const auto& image : images) {
        const int s = subjects[static_cast<std::size_t>(rng.uniform_int(
            static_cast<std::int64_t>(subjects.size())))];
        FmriSample sample;
        sample.subject_id = s;
        sample.image_id = image.image_id;
        sample.activations = encoder.predict(image, s);
        sample.enriched = true;
        out.push_back(std::move(sample));
    }
    return out;
}

void zscore_ingest(std::vector<FmriSample>& samples) {
    std::map<int, std::vector<FmriSample*>> by_subject;
    for (auto& s : samples) by_subject[s.subject_id].push_back(&s);
    for (auto& [subject, group] : by_subject) {
        const std::size_t v = group.front()->activations.size();
        for (const auto* s : group)
            if (s->activations.size() != v) throw ArgumentError("inconsistent voxel counts within subject");
        const Real n = static_cast<Real>(group.size());
        for (std::size_t j = 0; j < v; ++j) {
            Real mu = 0;
            for (const auto* s : group) mu += s->activations[j];
            mu /= n;
            Real var = 0;
            for (const auto* s : group) {
                const Real c = s->activations[j] - mu;
                var += c * c;
            }
            const Real sd = std::sqrt(var / n);
            for (auto* s : group) s->activations[j] = sd > 0 ? (s->activations[j] - mu) / sd : Real(0);
        }
    }
}

// ---------------------------------------------------------------------------

void save_dataset(const std::string& dir, const SyntheticDataset& ds) {
    io::NamedTensors tensors;
    const auto images = ds.unique_images();
    const std::int64_t h = ds.config.image_size;
    Tensor imgs({static_cast<std::int64_t>(images.size()), h, h, 3});
    for (std::size_t i = 0; i < images.size(); ++i)
        std::copy_n(images[i].pixels.data(), h * h * 3, imgs.data() + static_cast<std::int64_t>(i) * h * h * 3);
    tensors["images"] = std::move(imgs);

    io::json provenance = io::json::array();
    std::map<int, std::vector<const FmriSample*>> by_subject;
    for (const auto& [sample, image] : ds.pairs) by_subject[sample.subject_id].push_back(&sample);
    for (const auto& [s, rows] : by_subject) {
        const std::int64_t v = ds.registry.voxel_count(s);
        Tensor acts({static_cast<std::int64_t>(rows.size()), v});
        io::json ids = io::json::array();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::copy_n(rows[i]->activations.data(), v, acts.data() + static_cast<std::int64_t>(i) * v);
            ids.push_back(rows[i]->image_id);
            provenance.push_back(rows[i]->enriched ? "enriched" : "labeled");
        }
        tensors["activations/subj" + std::to_string(s)] = std::move(acts);
        tensors["encoder/weight/subj" + std::to_string(s)] = ds.encoder->weight(s);
        tensors["encoder/bias/subj" + std::to_string(s)] = ds.encoder->bias(s);
    }

    io::json extra;
    extra["kind"] = "brainit-synthetic-dataset";
    extra["config"] = {{"image_size", ds.config.image_size},
                       {"feature_grid", ds.config.feature_grid},
                       {"voxels_per_subject", ds.config.voxels_per_subject},
                       {"subjects", ds.config.subjects},
                       {"pairs", ds.config.pairs},
                       {"noise", ds.config.noise},
                       {"seed", ds.config.seed}};
    io::json image_ids = io::json::array();
    for (const auto& image : images) image_ids.push_back(image.image_id);
    extra["image_ids"] = image_ids;
    extra["provenance"] = provenance;
    io::save_named_tensors(dir, tensors, extra);
}

SyntheticDataset load_dataset(const std::string& dir) {
    io::json extra;
    io::NamedTensors tensors = io::load_named_tensors(dir, &extra);
    if (extra.value("kind", "") != "brainit-synthetic-dataset")
        throw ConfigError("not a dataset directory: " + dir);
    SyntheticConfig config;
    const auto& c = extra.at("config");
    config.image_size = c.at("image_size").get<std::int64_t>();
    config.feature_grid = c.at("feature_grid").get<std::int64_t>();
    config.voxels_per_subject = c.at("voxels_per_subject").get<std::int64_t>();
    config.subjects = c.at("subjects").get<int>();
    config.pairs = c.at("pairs").get<int>();
    config.noise = c.at("noise").get<Real>();
    config.seed = c.at("seed").get<std::uint64_t>();

    SyntheticDataset ds;
    ds.config = config;
    ds.encoder = std::make_shared<SyntheticEncoder>(config, config.seed);
    for (int s = 0; s < config.subjects; ++s) ds.registry.register_subject(s, config.voxels_per_subject);

    const Tensor& imgs = tensors.at("images");
    const std::int64_t h = config.image_size;
    std::vector<ImageRecord> images;
    const auto image_ids = extra.at("image_ids").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < image_ids.size(); ++i) {
        Tensor px({h, h, 3});
        std::copy_n(imgs.data() + static_cast<std::int64_t>(i) * h * h * 3, h * h * 3, px.data());
        images.push_back({image_ids[i], std::move(px)});
    }

    for (std::size_t i = 0; i < images.size(); ++i) {
        for (int s = 0; s < config.subjects; ++s) {
            const Tensor& acts = tensors.at("activations/subj" + std::to_string(s));
            FmriSample sample;
            sample.subject_id = s;
            sample.image_id = images[i].image_id;
            sample.activations.assign(acts.data() + static_cast<std::int64_t>(i) * acts.dim(1),
                                      acts.data() + (static_cast<std::int64_t>(i) + 1) * acts.dim(1));
            ds.pairs.emplace_back(std::move(sample), images[i]);
        }
    }
    return ds;
}

}  // namespace brainit::data
