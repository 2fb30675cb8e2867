// Python surface: config validation, the CLI entry point, and direct access
// to the core operations (synthetic data, clustering, tokenization,
// generator inversion, metrics) on numpy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "brainit/cli.hpp"
#include "brainit/generation.hpp"
#include "brainit/metrics.hpp"
#include "brainit/tokenizer.hpp"

namespace py = pybind11;
using namespace brainit;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from(const DoubleArray& a) {
    std::vector<std::int64_t> shape;
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(a.shape(i));
    Tensor t(shape);
    std::memcpy(t.vec().data(), a.data(), sizeof(double) * static_cast<std::size_t>(t.numel()));
    return t;
}

py::array_t<double> array_from(const Tensor& t) {
    std::vector<py::ssize_t> shape;
    for (std::int64_t i = 0; i < t.rank(); ++i) shape.push_back(t.dim(i));
    py::array_t<double> a(shape);
    std::memcpy(a.mutable_data(), t.vec().data(),
                sizeof(double) * static_cast<std::size_t>(t.numel()));
    return a;
}

data::ImageRecord image_from(const DoubleArray& a, const std::string& id) {
    if (a.ndim() != 3 || a.shape(2) != 3)
        throw ArgumentError("expected an image array of shape [H, W, 3]");
    return {id, tensor_from(a)};
}

std::vector<data::ImageRecord> image_list(const DoubleArray& batch, const char* what) {
    if (batch.ndim() != 4 || batch.shape(3) != 3)
        throw ArgumentError(std::string(what) + ": expected shape [N, H, W, 3]");
    std::vector<data::ImageRecord> out;
    const std::int64_t n = batch.shape(0);
    Tensor all = tensor_from(batch);
    const std::int64_t per = all.numel() / n;
    for (std::int64_t i = 0; i < n; ++i) {
        Tensor im({batch.shape(1), batch.shape(2), 3});
        std::copy(all.vec().begin() + i * per, all.vec().begin() + (i + 1) * per,
                  im.vec().begin());
        out.push_back({"im" + std::to_string(i), std::move(im)});
    }
    return out;
}

std::string validate_config_str(const std::string& user, bool toy) {
    io::json j = user.empty() ? io::json::object() : io::json::parse(user);
    return cli::validate_config(j, toy).dump(2);
}

int run_args(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("brainit");
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli::run_cli(static_cast<int>(argv.size()), argv.data());
}

py::dict synthetic_dataset(int pairs, int subjects, std::int64_t voxels, std::int64_t image_size,
                           std::int64_t feature_grid, double noise, std::uint64_t seed) {
    data::SyntheticConfig cfg;
    cfg.pairs = pairs;
    cfg.subjects = subjects;
    cfg.voxels_per_subject = voxels;
    cfg.image_size = image_size;
    cfg.feature_grid = feature_grid;
    cfg.noise = noise;
    cfg.seed = seed;
    auto ds = data::make_synthetic_dataset(cfg);

    const std::int64_t n = static_cast<std::int64_t>(ds.pairs.size());
    py::array_t<double> acts({n, voxels});
    py::array_t<double> images({n, image_size, image_size, static_cast<std::int64_t>(3)});
    py::list image_ids;
    py::list subject_ids;
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& [sample, image] = ds.pairs[static_cast<std::size_t>(i)];
        std::memcpy(acts.mutable_data(i, 0), sample.activations.data(),
                    sizeof(double) * static_cast<std::size_t>(voxels));
        std::memcpy(images.mutable_data(i, 0, 0, 0), image.pixels.vec().data(),
                    sizeof(double) * static_cast<std::size_t>(image.pixels.numel()));
        image_ids.append(sample.image_id);
        subject_ids.append(sample.subject_id);
    }

    py::dict emb;
    for (int s : ds.registry.subjects())
        emb[py::int_(s)] = array_from(ds.encoder->voxel_embeddings(s, feature_grid * feature_grid * 3));

    py::dict out;
    out["activations"] = acts;
    out["images"] = images;
    out["image_ids"] = image_ids;
    out["subject_ids"] = subject_ids;
    out["voxel_embeddings"] = emb;
    return out;
}

py::dict fit_clusters(const py::dict& embeddings, int k, std::uint64_t seed) {
    std::map<int, Tensor> emb;
    for (const auto& item : embeddings)
        emb[item.first.cast<int>()] = tensor_from(item.second.cast<DoubleArray>());
    v2c::GmmConfig cfg;
    cfg.k = k;
    cfg.seed = seed;
    auto mapping = v2c::fit_v2c(emb, cfg);

    py::dict assignments;
    for (const auto& [subject, assign] : mapping.assignments)
        assignments[py::int_(subject)] = assign;
    py::dict out;
    out["k"] = mapping.k;
    out["means"] = array_from(mapping.means);
    out["assignments"] = assignments;
    return out;
}

py::array_t<double> brain_tokens(const DoubleArray& activations, const DoubleArray& voxel_emb,
                                 const std::vector<int>& assignment, int clusters,
                                 std::uint64_t seed) {
    Tensor acts = tensor_from(activations);
    Tensor emb = tensor_from(voxel_emb);
    if (emb.rank() != 2) throw ArgumentError("voxel embeddings must be [V, d]");
    auto params = tok::init_tokenizer_params(clusters, emb.dim(1), seed);
    std::vector<std::int64_t> vidx(static_cast<std::size_t>(acts.numel()));
    for (std::size_t i = 0; i < vidx.size(); ++i) vidx[i] = static_cast<std::int64_t>(i);
    return array_from(
        tok::tokenize(nn::constant(acts), vidx, assignment, nn::constant(emb), params).value());
}

py::dict invert_features(const DoubleArray& image, int iterations, std::int64_t width,
                         std::uint64_t seed) {
    auto im = image_from(image, "target");
    const std::int64_t size = im.pixels.dim(0);
    auto layout = feat::toy_conv_layout(size, 64);
    feat::ToyConvExtractor ex(size, {4, 8, 8, 8, 8}, seed + 1);
    auto target = feat::extract_conv_tokens(im, ex, layout);

    dip::DipConfig cfg;
    cfg.input_channels = 8;
    cfg.width = width;
    cfg.iterations = iterations;
    cfg.seed = seed;
    auto res = dip::dip_invert(target, ex, layout, cfg);

    py::dict out;
    out["image"] = array_from(res.image.pixels);
    out["relative_l2"] = res.final_relative_l2;
    out["iterations"] = res.iterations_run;
    return out;
}

double pixcorr_py(const DoubleArray& recon, const DoubleArray& gt) {
    return metrics::pixcorr(image_from(recon, "recon"), image_from(gt, "gt"));
}

double ssim_py(const DoubleArray& recon, const DoubleArray& gt) {
    return metrics::ssim_gray(image_from(recon, "recon"), image_from(gt, "gt"));
}

py::dict evaluate_py(const DoubleArray& recons, const DoubleArray& gts, std::uint64_t seed) {
    auto r = image_list(recons, "recons");
    auto g = image_list(gts, "gts");
    auto report = metrics::evaluate_all(r, g, seed);
    py::dict out;
    for (const auto& [name, value] : report.values) out[py::str(name)] = value;
    return out;
}

}  // namespace

PYBIND11_MODULE(_brainit, m) {
    m.doc() = "fMRI-to-image reconstruction toolkit (C++ core)";

    py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<CapabilityError>(m, "CapabilityError", PyExc_RuntimeError);

    m.def("validate_config", &validate_config_str, py::arg("config_json") = "",
          py::arg("toy") = false,
          "Normalize and validate a JSON run config; returns the full config as JSON.");
    m.def("run", &run_args, py::arg("args"),
          "Run the command-line interface with the given argument list.");
    m.def("synthetic_dataset", &synthetic_dataset, py::arg("pairs") = 20, py::arg("subjects") = 1,
          py::arg("voxels") = 64, py::arg("image_size") = 16, py::arg("feature_grid") = 4,
          py::arg("noise") = 0.0, py::arg("seed") = 0,
          "Paired recordings and images from the synthetic affine encoder.");
    m.def("fit_clusters", &fit_clusters, py::arg("embeddings"), py::arg("k") = 8,
          py::arg("seed") = 0,
          "Fit the shared voxel-to-cluster mixture over per-subject embedding matrices.");
    m.def("brain_tokens", &brain_tokens, py::arg("activations"), py::arg("voxel_embeddings"),
          py::arg("assignment"), py::arg("clusters"), py::arg("seed") = 0,
          "Cluster-masked attention tokens for one recording, with seeded projections.");
    m.def("invert_features", &invert_features, py::arg("image"), py::arg("iterations") = 200,
          py::arg("width") = 8, py::arg("seed") = 0,
          "Optimize a generator so the frozen extractor's features match the image's.");
    m.def("pixcorr", &pixcorr_py, py::arg("recon"), py::arg("gt"));
    m.def("ssim", &ssim_py, py::arg("recon"), py::arg("gt"));
    m.def("evaluate", &evaluate_py, py::arg("recons"), py::arg("gts"), py::arg("seed") = 0,
          "Full metric table over aligned [N, H, W, 3] reconstruction/target stacks.");
}
