#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "brainit/errors.hpp"
#include "brainit/tensor.hpp"

namespace brainit::data {

/// One fMRI recording. Activations are z-scored signal amplitudes.
struct FmriSample {
    int subject_id = 0;
    std::vector<Real> activations;
    std::string image_id;   // empty when unpaired
    bool enriched = false;  // true for encoder-predicted (unlabeled-image) records

    bool valid() const {
        for (Real v : activations)
            if (!std::isfinite(v)) return false;
        return !activations.empty();
    }
};

struct ImageRecord {
    std::string image_id;
    Tensor pixels;  // [H,W,3] in [0,1], H == W
};

class SubjectRegistry {
public:
    void register_subject(int id, std::int64_t voxel_count);
    std::int64_t voxel_count(int id) const;
    bool has(int id) const { return counts_.count(id) != 0; }
    std::vector<int> subjects() const;

private:
    std::map<int, std::int64_t> counts_;
};

/// Image-to-fMRI encoder slot. The real Brain Encoder plugs in here;
/// a synthetic affine encoder ships for tests and toy runs.
class EncoderInterface {
public:
    virtual ~EncoderInterface() = default;
    virtual bool has_subject(int subject) const = 0;
    virtual std::vector<Real> predict(const ImageRecord& image, int subject) const = 0;
};

struct SyntheticConfig {
    std::int64_t image_size = 16;
    std::int64_t feature_grid = 4;  // encoder features = image downsampled to this grid
    std::int64_t voxels_per_subject = 512;
    int subjects = 2;
    int pairs = 200;  // images; every subject views every image
    Real noise = 0.0;
    std::uint64_t seed = 0;

    std::int64_t feature_dim() const { return 3 * feature_grid * feature_grid; }
};

/// Affine image-to-fMRI map: activations = W_s * feat(image) + b_s, where
/// feat is the image downsampled to the feature grid. Invertible by least
/// squares, which the dataset oracles rely on.
class SyntheticEncoder : public EncoderInterface {
public:
    SyntheticEncoder(SyntheticConfig config, std::uint64_t seed);

    bool has_subject(int subject) const override { return weights_.count(subject) != 0; }
    std::vector<Real> predict(const ImageRecord& image, int subject) const override;

    Tensor features(const ImageRecord& image) const;  // [F]
    const Tensor& weight(int subject) const { return weights_.at(subject); }
    const Tensor& bias(int subject) const { return biases_.at(subject); }

    /// Per-voxel embedding table derived from the encoder weights: row v is
    /// voxel v's selectivity profile, zero-padded or projected to `dim`.
    Tensor voxel_embeddings(int subject, std::int64_t dim) const;

    const SyntheticConfig& config() const { return config_; }

private:
    SyntheticConfig config_;
    std::map<int, Tensor> weights_;  // [V, F]
    std::map<int, Tensor> biases_;   // [V]
};

struct SyntheticDataset {
    std::vector<std::pair<FmriSample, ImageRecord>> pairs;
    std::shared_ptr<SyntheticEncoder> encoder;
    SubjectRegistry registry;
    SyntheticConfig config;

    std::vector<ImageRecord> unique_images() const;
};

SyntheticDataset make_synthetic_dataset(const SyntheticConfig& config);

/// Uniform sampling with replacement of n voxel indices (App-style 15K of 40K).
std::pair<std::vector<std::int64_t>, std::vector<Real>> sample_voxels(const FmriSample& sample,
                                                                      std::int64_t n,
                                                                      std::uint64_t seed);

/// One epoch worth of enrichment: for each unlabeled image, the predicted
/// fMRI of one randomly chosen subject. Call once per epoch with a
/// seed derived from (base seed, epoch).
std::vector<FmriSample> enrich_with_unlabeled(const std::vector<ImageRecord>& images,
                                              const EncoderInterface& encoder,
                                              const std::vector<int>& subjects, std::uint64_t seed);

/// Per-voxel z-scoring over the given samples (grouped by subject); the
/// ingestion normalization for real recordings.
void zscore_ingest(std::vector<FmriSample>& samples);

void save_dataset(const std::string& dir, const SyntheticDataset& ds);
SyntheticDataset load_dataset(const std::string& dir);

}  // namespace brainit::data
