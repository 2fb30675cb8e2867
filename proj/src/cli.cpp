#include "brainit/cli.hpp"

#include <algorithm>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "brainit/generation.hpp"
#include "brainit/image.hpp"
#include "brainit/metrics.hpp"
#include "brainit/rng.hpp"
#include "brainit/transfer.hpp"

namespace brainit::cli {

namespace fs = std::filesystem;
using io::json;

io::json default_config() {
    return {
        {"seed", 0},
        {"clusters", 128},
        {"d", 512},
        {"queries", 256},
        {"d_out", 512},
        {"blocks", 5},
        {"heads", 8},
        {"ff_width", 0},
        {"steps", 38},
        {"start", 14},
        {"epochs", 60},
        {"lr", 5e-4},
        {"warmup", 15},
        {"batch", 128},
        {"val_fraction", 0.1},
        {"stage2_epochs", 10},
        {"stage2_lr", 1e-5},
        {"stage2_batch", 16},
        {"stage2_accum", 4},
        {"tau", 0.07},
        {"dip_iterations", 2000},
        {"dip_width", 128},
        {"dip_input_channels", 32},
        {"backend", "toy-linear"},
        {"backend_size", 256},
        {"image_size", 112},
        {"token_dim", 512},
        {"backbone_grid", 16},
        {"feature_grid", 4},
    };
}

io::json toy_overrides() {
    return {
        {"clusters", 4},   {"d", 8},
        {"queries", 4},    {"d_out", 6},
        {"blocks", 1},     {"heads", 2},
        {"epochs", 3},     {"lr", 3e-3},
        {"warmup", 0},     {"batch", 8},
        {"val_fraction", 0.25},
        {"stage2_epochs", 2},
        {"stage2_lr", 1e-3},
        {"stage2_batch", 8},
        {"stage2_accum", 1},
        {"dip_iterations", 60},
        {"dip_width", 8},
        {"dip_input_channels", 8},
        {"backend_size", 16},
        {"image_size", 16},
        {"token_dim", 64},
        {"backbone_grid", 2},
        {"feature_grid", 2},
    };
}

io::json validate_config(const io::json& user, bool toy) {
    json cfg = default_config();
    if (toy) {
        const json overrides = toy_overrides();
        for (const auto& [k, v] : overrides.items()) cfg[k] = v;
    }
    if (!user.is_object()) throw ConfigError("config: expected a JSON object");
    for (const auto& [k, v] : user.items()) {
        if (!cfg.contains(k)) throw ConfigError("config: unknown key '" + k + "'");
        if (cfg.at(k).is_string() != v.is_string() ||
            (cfg.at(k).is_number() && !v.is_number()))
            throw ConfigError("config: wrong type for key '" + k + "'");
        cfg[k] = v;
    }

    auto positive = [&](const char* k) {
        if (cfg.at(k).get<Real>() <= 0) throw ConfigError(std::string("config: ") + k + " must be positive");
    };
    for (const char* k : {"clusters", "d", "queries", "d_out", "blocks", "heads", "steps",
                          "epochs", "lr", "batch", "stage2_epochs", "stage2_lr", "stage2_batch",
                          "stage2_accum", "tau", "dip_iterations", "dip_width",
                          "dip_input_channels", "backend_size", "image_size", "token_dim",
                          "backbone_grid", "feature_grid"})
        positive(k);
    if (cfg.at("start").get<int>() < 0 || cfg.at("start").get<int>() >= cfg.at("steps").get<int>())
        throw ConfigError("config: need 0 <= start < steps");
    if (cfg.at("d").get<std::int64_t>() % cfg.at("heads").get<std::int64_t>() != 0)
        throw ConfigError("config: heads must divide d");
    const auto g = cfg.at("backbone_grid").get<std::int64_t>();
    if (g * g != cfg.at("queries").get<std::int64_t>())
        throw ConfigError("config: queries must equal backbone_grid^2");
    const Real vf = cfg.at("val_fraction").get<Real>();
    if (vf < 0 || vf >= 1) throw ConfigError("config: val_fraction must be in [0, 1)");
    return cfg;
}

io::json read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    std::string text = buf.str();
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return json::object();
    return json::parse(text);
}

namespace {

struct Ctx {
    json config;
    std::string artifacts = "artifacts";
    bool toy = false;
};

std::string out_dir_for(const Ctx& ctx, const std::string& cmd, const std::string& requested) {
    if (!requested.empty()) return requested;
    return ctx.artifacts + "/" + cmd + "-" + io::hash_hex(io::config_hash(ctx.config));
}

void write_manifest(const Ctx& ctx, const std::string& dir, const std::string& command,
                    const json& inputs, const json& outputs) {
    fs::create_directories(dir);
    json m;
    m["command"] = command;
    m["config"] = ctx.config;
    m["config_hash"] = io::hash_hex(io::config_hash(ctx.config));
    m["seed"] = ctx.config.at("seed");
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    m["timestamp"] = static_cast<std::int64_t>(std::time(nullptr));
    io::write_json(dir + "/manifest.json", m);
}

train::BitModelConfig model_config(const json& c) {
    train::BitModelConfig mc;
    mc.clusters = c.at("clusters").get<int>();
    mc.d = c.at("d").get<std::int64_t>();
    mc.queries = c.at("queries").get<std::int64_t>();
    mc.d_out = c.at("d_out").get<std::int64_t>();
    mc.blocks = c.at("blocks").get<int>();
    mc.heads = c.at("heads").get<int>();
    mc.ff_width = c.at("ff_width").get<std::int64_t>();
    return mc;
}

feat::ConvTokenLayout conv_layout(const json& c) {
    const std::int64_t s = c.at("image_size").get<std::int64_t>();
    if (s == 112) return feat::canonical_conv_layout();
    return feat::toy_conv_layout(s, c.at("token_dim").get<std::int64_t>());
}

std::vector<std::int64_t> conv_channels(const feat::ConvTokenLayout& layout) {
    std::vector<std::int64_t> chans;
    for (const auto& l : layout.layers) chans.push_back(l.channels);
    return chans;
}

train::TrainSchedule schedule_from(const json& c, std::uint64_t seed, int epochs_override) {
    train::TrainSchedule s;
    s.epochs = epochs_override > 0 ? epochs_override : c.at("epochs").get<int>();
    s.lr = c.at("lr").get<Real>();
    s.warmup_epochs = c.at("warmup").get<int>();
    s.batch = c.at("batch").get<int>();
    s.val_fraction = c.at("val_fraction").get<Real>();
    s.seed = seed;
    return s;
}

train::TrainSchedule stage2_schedule_from(const json& c, std::uint64_t seed, int epochs_override) {
    train::TrainSchedule s;
    s.epochs = epochs_override > 0 ? epochs_override : c.at("stage2_epochs").get<int>();
    s.lr = c.at("stage2_lr").get<Real>();
    s.warmup_epochs = 0;
    s.batch = c.at("stage2_batch").get<int>();
    s.accum = c.at("stage2_accum").get<int>();
    s.val_fraction = c.at("val_fraction").get<Real>();
    s.seed = seed;
    return s;
}

dip::DipConfig dip_config(const json& c, std::uint64_t seed) {
    dip::DipConfig d;
    d.input_channels = c.at("dip_input_channels").get<std::int64_t>();
    d.width = c.at("dip_width").get<std::int64_t>();
    d.iterations = c.at("dip_iterations").get<int>();
    d.seed = seed;
    return d;
}

std::uint64_t cfg_seed(const json& c) { return c.at("seed").get<std::uint64_t>(); }

std::map<int, Tensor> embeddings_for(const data::SyntheticDataset& ds, std::int64_t d) {
    std::map<int, Tensor> emb;
    for (int s : ds.registry.subjects()) emb[s] = ds.encoder->voxel_embeddings(s, d);
    return emb;
}

feat::ToySemanticBackbone backbone_from(const json& c) {
    return {c.at("backbone_grid").get<std::int64_t>(), c.at("d_out").get<std::int64_t>(),
            c.at("feature_grid").get<std::int64_t>(),
            Rng::with_stream(cfg_seed(c), 0xBB).next_u64()};
}

std::map<std::string, Tensor> backbone_targets(const data::SyntheticDataset& ds,
                                               const feat::ToySemanticBackbone& backbone) {
    std::map<std::string, Tensor> targets;
    for (const auto& im : ds.unique_images()) targets[im.image_id] = backbone.tokens(im);
    return targets;
}

json train_report_json(const train::TrainReport& r) {
    return {{"initial_val", r.initial_val},
            {"best_val", r.best_val},
            {"train_loss", r.train_loss},
            {"val_loss", r.val_loss}};
}

std::shared_ptr<gen::LinearToyBackend> linear_backend(const json& c, std::int64_t token_width) {
    return std::make_shared<gen::LinearToyBackend>(
        c.at("backend_size").get<std::int64_t>(), token_width, 0.25, 0.0,
        Rng::with_stream(cfg_seed(c), 0xBE).next_u64());
}

void save_backend(const std::string& dir, gen::DiffusionBackendInterface& backend) {
    io::NamedTensors t;
    for (auto& [name, v] : backend.trainable_params()) t[name] = v.value();
    if (!t.empty()) io::save_named_tensors(dir, t, {{"kind", "backend-params"}});
}

void maybe_load_backend(const std::string& dir, gen::DiffusionBackendInterface& backend) {
    if (!fs::exists(dir + "/manifest.json")) return;
    io::NamedTensors t = io::load_named_tensors(dir);
    for (auto& [name, v] : backend.trainable_params()) {
        auto it = t.find(name);
        if (it == t.end()) throw ConfigError("backend params: missing tensor " + name);
        if (it->second.shape() != v.value().shape())
            throw ConfigError("backend params: shape mismatch for " + name);
        v.value() = it->second;
    }
}

std::shared_ptr<gen::DiffusionBackendInterface> backend_from(const json& c,
                                                             std::int64_t token_width,
                                                             const std::string& params_dir) {
    const std::string name = c.at("backend").get<std::string>();
    std::shared_ptr<gen::DiffusionBackendInterface> b;
    if (name == "toy-linear")
        b = linear_backend(c, token_width);
    else
        b = gen::make_backend(name, c.at("backend_size").get<std::int64_t>(), token_width,
                              Rng::with_stream(cfg_seed(c), 0xBE).next_u64());
    if (!params_dir.empty()) maybe_load_backend(params_dir, *b);
    return b;
}

train::Pairs subject_pairs(const data::SyntheticDataset& ds, int subject) {
    train::Pairs out;
    for (const auto& p : ds.pairs)
        if (p.first.subject_id == subject) out.push_back(p);
    return out;
}

// ---- subcommand bodies ------------------------------------------------

int cmd_synth(const Ctx& ctx, int pairs, int subjects, std::int64_t voxels, Real noise,
              const std::string& out_req) {
    data::SyntheticConfig sc;
    sc.image_size = ctx.config.at("image_size").get<std::int64_t>();
    sc.feature_grid = ctx.config.at("feature_grid").get<std::int64_t>();
    sc.voxels_per_subject = voxels;
    sc.subjects = subjects;
    sc.pairs = pairs;
    sc.noise = noise;
    sc.seed = cfg_seed(ctx.config);
    auto ds = data::make_synthetic_dataset(sc);

    const std::string out = out_dir_for(ctx, "synth", out_req);
    fs::create_directories(out);
    data::save_dataset(out + "/dataset", ds);
    write_manifest(ctx, out, "synth", json::object(), {{"dataset", out + "/dataset"}});
    std::cout << "dataset: " << out << "/dataset (" << ds.pairs.size() << " recordings)\n";
    return 0;
}

int cmd_cluster(const Ctx& ctx, const std::string& data_dir, int k, const std::string& out_req) {
    auto ds = data::load_dataset(data_dir + "/dataset");
    auto emb = embeddings_for(ds, ctx.config.at("d").get<std::int64_t>());
    v2c::GmmConfig gc;
    gc.k = k > 0 ? k : ctx.config.at("clusters").get<int>();
    gc.seed = cfg_seed(ctx.config);
    auto mapping = v2c::fit_v2c(emb, gc);

    const std::string out = out_dir_for(ctx, "cluster", out_req);
    fs::create_directories(out);
    v2c::save_mapping(out + "/mapping", mapping);
    write_manifest(ctx, out, "cluster", {{"dataset", data_dir}}, {{"mapping", out + "/mapping"}});
    std::cout << "mapping: " << out << "/mapping (k=" << mapping.k << ")\n";
    return 0;
}

int cmd_train(const Ctx& ctx, const std::string& data_dir, const std::string& mapping_dir,
              const std::string& base_dir, const std::string& head, int epochs,
              const std::string& out_req) {
    const json& c = ctx.config;
    auto ds = data::load_dataset(data_dir + "/dataset");
    const std::string out = out_dir_for(ctx, "train-" + head, out_req);
    fs::create_directories(out);

    json head_info = {{"head", head}};
    json report;

    if (head == "semantic" || head == "lowlevel") {
        if (mapping_dir.empty()) throw ConfigError("train: --mapping is required for " + head);
        auto mapping = v2c::load_mapping(mapping_dir + "/mapping");
        auto emb = embeddings_for(ds, c.at("d").get<std::int64_t>());
        train::BitModelConfig mc = model_config(c);
        mc.clusters = mapping.k;

        if (head == "semantic") {
            auto model =
                train::BitModel::init(mc, mapping, emb, Rng::with_stream(cfg_seed(c), 1).next_u64());
            auto backbone = backbone_from(c);
            auto targets = backbone_targets(ds, backbone);
            auto sched = schedule_from(c, Rng::with_stream(cfg_seed(c), 2).next_u64(), epochs);
            auto r = train::train_stage1_semantic(model, ds.pairs, targets, sched);
            train::save_model(out + "/model", model);
            head_info["backbone_grid"] = c.at("backbone_grid");
            head_info["feature_grid"] = c.at("feature_grid");
            report = train_report_json(r);
        } else {
            auto layout = conv_layout(c);
            mc.queries = layout.total_tokens();
            mc.d_out = layout.token_dim();
            auto model =
                train::BitModel::init(mc, mapping, emb, Rng::with_stream(cfg_seed(c), 3).next_u64());
            feat::ToyConvExtractor extractor(layout.input_size, conv_channels(layout),
                                             Rng::with_stream(cfg_seed(c), 0xCE).next_u64());
            auto sched = schedule_from(c, Rng::with_stream(cfg_seed(c), 4).next_u64(), epochs);
            sched.batch = std::min(sched.batch, 64);
            loss::InfoNCEConfig nce;
            nce.tau = c.at("tau").get<Real>();
            auto r = train::train_lowlevel(model, ds.pairs, extractor, layout, nce, sched);
            train::save_model(out + "/model", model);
            head_info["image_size"] = layout.input_size;
            head_info["token_dim"] = layout.token_dim();
            report = train_report_json(r);
        }
    } else if (head == "joint") {
        if (base_dir.empty()) throw ConfigError("train: --base semantic checkpoint required for joint");
        auto model = train::load_model(base_dir + "/model");
        auto backend = backend_from(c, model.config.d_out, "");
        auto sched = stage2_schedule_from(c, Rng::with_stream(cfg_seed(c), 5).next_u64(), epochs);
        auto r = train::train_stage2_joint(model, *backend, ds.pairs, sched);
        train::save_model(out + "/model", model);
        save_backend(out + "/backend", *backend);
        json base_head = io::read_json(base_dir + "/head.json");
        head_info = base_head;
        head_info["head"] = "joint";
        report = train_report_json(r);
    } else {
        throw ConfigError("train: unknown head '" + head + "' (semantic|lowlevel|joint)");
    }

    io::write_json(out + "/head.json", head_info);
    io::write_json(out + "/report.json", report);
    write_manifest(ctx, out, "train",
                   {{"dataset", data_dir}, {"mapping", mapping_dir}, {"base", base_dir}},
                   {{"model", out + "/model"}, {"report", out + "/report.json"}});
    std::cout << "model: " << out << "/model (best val " << report.value("best_val", 0.0) << ")\n";
    return 0;
}

struct LoadedLowlevel {
    train::BitModel model;
    feat::ConvTokenLayout layout;
    std::shared_ptr<feat::ToyConvExtractor> extractor;
};

LoadedLowlevel load_lowlevel(const json& c, const std::string& dir) {
    LoadedLowlevel ll{train::load_model(dir + "/model"), {}, nullptr};
    json head = io::read_json(dir + "/head.json");
    if (head.value("head", "") != "lowlevel")
        throw ConfigError("reconstruct: " + dir + " is not a low-level checkpoint");
    json c2 = c;
    c2["image_size"] = head.at("image_size");
    c2["token_dim"] = head.at("token_dim");
    ll.layout = conv_layout(c2);
    ll.extractor = std::make_shared<feat::ToyConvExtractor>(
        ll.layout.input_size, conv_channels(ll.layout),
        Rng::with_stream(cfg_seed(c), 0xCE).next_u64());
    return ll;
}

int cmd_reconstruct(const Ctx& ctx, const std::string& model_dir, const std::string& lowlevel_dir,
                    const std::string& data_dir, const std::string& mode, int steps, int start,
                    bool refine, int subject, int count, const std::string& out_req) {
    const json& c = ctx.config;
    auto ds = data::load_dataset(data_dir + "/dataset");
    auto pairs = subject_pairs(ds, subject);
    if (pairs.empty()) throw ConfigError("reconstruct: no recordings for subject " + std::to_string(subject));
    if (count > 0 && static_cast<std::size_t>(count) < pairs.size())
        pairs.resize(static_cast<std::size_t>(count));

    gen::GenerationConfig gc;
    gc.steps = steps > 0 ? steps : c.at("steps").get<int>();
    gc.start = start >= 0 ? start : c.at("start").get<int>();
    gc.refine = refine;

    std::optional<train::BitModel> semantic;
    std::optional<LoadedLowlevel> lowlevel;
    std::shared_ptr<gen::DiffusionBackendInterface> backend;
    gen::GenerationModels models;
    models.dip = dip_config(c, 0);

    if (mode == "semantic" || mode == "dual") {
        if (model_dir.empty()) throw ConfigError("reconstruct: --model is required");
        semantic.emplace(train::load_model(model_dir + "/model"));
        models.semantic = &*semantic;
        backend = backend_from(c, semantic->config.d_out, model_dir + "/backend");
    }
    if (mode == "lowlevel" || mode == "dual") {
        if (lowlevel_dir.empty()) throw ConfigError("reconstruct: --lowlevel is required");
        lowlevel.emplace(load_lowlevel(c, lowlevel_dir));
        models.lowlevel = &lowlevel->model;
        models.extractor = lowlevel->extractor.get();
        models.layout = &lowlevel->layout;
    }
    if (mode != "semantic" && mode != "dual" && mode != "lowlevel")
        throw ConfigError("reconstruct: unknown mode '" + mode + "' (dual|semantic|lowlevel)");

    const std::string out = out_dir_for(ctx, "reconstruct", out_req);
    fs::create_directories(out + "/recon");
    fs::create_directories(out + "/gt");

    json outputs = json::array();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& [sample, image] = pairs[i];
        gc.seed = Rng::with_stream(cfg_seed(c), 0x6E0 + i).next_u64();
        data::ImageRecord recon;
        if (mode == "dual")
            recon = gen::dual_branch_generate(sample, models, *backend, gc);
        else if (mode == "semantic")
            recon = gen::semantic_only_generate(sample, models, *backend, gc);
        else
            recon = gen::lowlevel_only_generate(sample, models,
                                                c.at("backend_size").get<std::int64_t>(), gc.seed);
        const std::string name = sample.image_id + ".png";
        img::write_png(out + "/recon/" + name, recon.pixels);
        img::write_png(out + "/gt/" + name, image.pixels);
        outputs.push_back(name);
    }

    json prov = {{"mode", mode},
                 {"steps", gc.steps},
                 {"start", gc.start},
                 {"refine", gc.refine},
                 {"seed", cfg_seed(c)},
                 {"semantic_checkpoint", model_dir},
                 {"lowlevel_checkpoint", lowlevel_dir},
                 {"backend", backend ? backend->info().name : "none"},
                 {"images", outputs},
                 {"config", c}};
    io::write_json(out + "/provenance.json", prov);
    write_manifest(ctx, out, "reconstruct",
                   {{"dataset", data_dir}, {"model", model_dir}, {"lowlevel", lowlevel_dir}},
                   {{"recon", out + "/recon"}, {"gt", out + "/gt"}});
    std::cout << "reconstructions: " << out << "/recon (" << pairs.size() << " images)\n";
    return 0;
}

std::vector<data::ImageRecord> read_png_dir(const std::string& dir) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".png") names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    std::vector<data::ImageRecord> out;
    for (const auto& n : names) out.push_back({n, img::read_png(dir + "/" + n)});
    return out;
}

int cmd_evaluate(const Ctx& ctx, const std::string& recon_dir, const std::string& gt_dir,
                 const std::string& report_path) {
    auto recons = read_png_dir(recon_dir);
    auto gts = read_png_dir(gt_dir);
    if (recons.size() != gts.size())
        throw ConfigError("evaluate: recon and gt directories hold different image counts");
    for (std::size_t i = 0; i < recons.size(); ++i)
        if (recons[i].image_id != gts[i].image_id)
            throw ConfigError("evaluate: name mismatch at " + recons[i].image_id + " vs " +
                              gts[i].image_id);

    auto report = metrics::evaluate_all(recons, gts, cfg_seed(ctx.config));
    json j = {{"n", report.n}, {"seed", report.seed}, {"extractors", report.extractors}};
    for (const auto& [k, v] : report.values) j["metrics"][k] = v;
    const std::string path = report_path.empty()
                                 ? out_dir_for(ctx, "evaluate", "") + "/report.json"
                                 : report_path;
    fs::create_directories(fs::path(path).parent_path().empty()
                               ? "."
                               : fs::path(path).parent_path().string());
    io::write_json(path, j);
    std::cout << "report: " << path << "\n";
    return 0;
}

int cmd_transfer(const Ctx& ctx, int subject, Real minutes, const std::string& base_dir,
                 const std::string& data_dir, bool joint, const std::string& out_req) {
    const json& c = ctx.config;
    auto ds = data::load_dataset(data_dir + "/dataset");
    auto model = train::load_model(base_dir + "/model");
    auto pairs = subject_pairs(ds, subject);
    if (pairs.empty()) throw ConfigError("transfer: dataset has no subject " + std::to_string(subject));

    json head = io::read_json(base_dir + "/head.json");
    if (head.value("head", "") == "lowlevel")
        throw ConfigError("transfer: adapt the semantic checkpoint, not the low-level head");
    auto backbone = backbone_from(c);
    auto targets = backbone_targets(ds, backbone);

    xfer::TransferConfig tc;
    tc.minutes = minutes;
    tc.run_joint = joint;
    tc.alignment_schedule = schedule_from(c, 0, 0);
    tc.joint_schedule = stage2_schedule_from(c, 0, 0);
    tc.seed = cfg_seed(c);

    std::shared_ptr<gen::DiffusionBackendInterface> backend;
    if (joint) backend = backend_from(c, model.config.d_out, base_dir + "/backend");

    Tensor emb = ds.encoder->voxel_embeddings(subject, model.config.d);
    auto report = xfer::adapt_subject(model, subject, pairs, emb, targets, backend.get(), tc);

    const std::string out = out_dir_for(ctx, "transfer", out_req);
    fs::create_directories(out);
    train::save_model(out + "/model", model);
    io::write_json(out + "/head.json", head);
    if (backend) save_backend(out + "/backend", *backend);
    json rj = {{"subject", report.subject},
               {"samples_used", report.samples_used},
               {"alignment", train_report_json(report.alignment)}};
    if (joint) rj["joint"] = train_report_json(report.joint);
    io::write_json(out + "/report.json", rj);
    write_manifest(ctx, out, "transfer", {{"dataset", data_dir}, {"base", base_dir}},
                   {{"model", out + "/model"}});
    std::cout << "adapted model: " << out << "/model (subject " << subject << ", "
              << report.samples_used << " samples)\n";
    return 0;
}

// In-memory toy pipeline used by the ablation studies: cluster, train the
// requested heads, reconstruct a few held-out images, score them.
struct AblationRun {
    json metrics_row;
    Real best_val = 0;
};

AblationRun run_toy_pipeline(const Ctx& ctx, const data::SyntheticDataset& ds, int k,
                             const std::string& mode, bool enrichment) {
    const json& c = ctx.config;
    auto emb = embeddings_for(ds, c.at("d").get<std::int64_t>());
    v2c::GmmConfig gc;
    gc.k = k;
    gc.seed = cfg_seed(c);
    auto mapping = v2c::fit_v2c(emb, gc);

    train::BitModelConfig mc = model_config(c);
    mc.clusters = mapping.k;

    const std::size_t held_out = std::min<std::size_t>(4, ds.pairs.size() / 2);
    train::Pairs train_pairs(ds.pairs.begin(),
                             ds.pairs.end() - static_cast<std::ptrdiff_t>(held_out));
    train::Pairs eval_pairs(ds.pairs.end() - static_cast<std::ptrdiff_t>(held_out), ds.pairs.end());

    gen::GenerationModels models;
    models.dip = dip_config(c, 0);

    std::optional<train::BitModel> semantic;
    std::optional<train::BitModel> lowlevel;
    feat::ConvTokenLayout layout;
    std::shared_ptr<feat::ToyConvExtractor> extractor;
    std::shared_ptr<gen::DiffusionBackendInterface> backend;
    Real best_val = 0;

    if (mode == "semantic" || mode == "dual") {
        semantic.emplace(train::BitModel::init(mc, mapping, emb,
                                               Rng::with_stream(cfg_seed(c), 1).next_u64()));
        auto backbone = backbone_from(c);
        auto targets = backbone_targets(ds, backbone);
        auto sched = schedule_from(c, Rng::with_stream(cfg_seed(c), 2).next_u64(), 0);

        data::SyntheticConfig ec = ds.config;
        ec.seed = ds.config.seed + 100;  // unlabeled external pool
        auto extra = data::make_synthetic_dataset(ec);
        auto extra_images = extra.unique_images();
        std::map<std::string, Tensor> all_targets = targets;
        for (const auto& im : extra_images) all_targets[im.image_id] = backbone.tokens(im);
        train::EnrichmentSource src;
        src.images = &extra_images;
        src.encoder = ds.encoder.get();
        src.subjects = ds.registry.subjects();

        auto r = train::train_stage1_semantic(*semantic, train_pairs, all_targets, sched,
                                              enrichment ? &src : nullptr);
        best_val = r.best_val;
        models.semantic = &*semantic;

        // joint pass so the toy backend can decode the semantic tokens
        backend = linear_backend(c, mc.d_out);
        auto s2 = stage2_schedule_from(c, Rng::with_stream(cfg_seed(c), 5).next_u64(), 0);
        train::train_stage2_joint(*semantic, *backend, train_pairs, s2, /*freeze_bit=*/true);
    }
    if (mode == "lowlevel" || mode == "dual") {
        layout = conv_layout(c);
        train::BitModelConfig lc = mc;
        lc.queries = layout.total_tokens();
        lc.d_out = layout.token_dim();
        lowlevel.emplace(train::BitModel::init(lc, mapping, emb,
                                               Rng::with_stream(cfg_seed(c), 3).next_u64()));
        extractor = std::make_shared<feat::ToyConvExtractor>(
            layout.input_size, conv_channels(layout), Rng::with_stream(cfg_seed(c), 0xCE).next_u64());
        auto sched = schedule_from(c, Rng::with_stream(cfg_seed(c), 4).next_u64(), 0);
        loss::InfoNCEConfig nce;
        nce.tau = c.at("tau").get<Real>();
        auto r = train::train_lowlevel(*lowlevel, train_pairs, *extractor, layout, nce, sched);
        if (mode == "lowlevel") best_val = r.best_val;
        models.lowlevel = &*lowlevel;
        models.extractor = extractor.get();
        models.layout = &layout;
    }

    gen::GenerationConfig gcfg;
    gcfg.steps = c.at("steps").get<int>();
    gcfg.start = c.at("start").get<int>();

    std::vector<data::ImageRecord> recons, gts;
    for (std::size_t i = 0; i < eval_pairs.size(); ++i) {
        const auto& [sample, image] = eval_pairs[i];
        gcfg.seed = Rng::with_stream(cfg_seed(c), 0x6E0 + i).next_u64();
        data::ImageRecord r;
        if (mode == "dual")
            r = gen::dual_branch_generate(sample, models, *backend, gcfg);
        else if (mode == "semantic")
            r = gen::semantic_only_generate(sample, models, *backend, gcfg);
        else
            r = gen::lowlevel_only_generate(sample, models,
                                            c.at("backend_size").get<std::int64_t>(), gcfg.seed);
        r.image_id = sample.image_id + "#" + std::to_string(i);
        recons.push_back(std::move(r));
        gts.push_back({sample.image_id + "#" + std::to_string(i), image.pixels});
    }
    auto mr = metrics::evaluate_all(recons, gts, cfg_seed(c));

    AblationRun run;
    run.best_val = best_val;
    for (const auto& [name, v] : mr.values) run.metrics_row[name] = v;
    return run;
}

int cmd_ablate(const Ctx& ctx, const std::string& study, const std::string& data_dir,
               const std::string& k_list, const std::string& out_req) {
    auto ds = data::load_dataset(data_dir + "/dataset");
    const int default_k = ctx.config.at("clusters").get<int>();

    json rows = json::array();
    if (study == "clusters") {
        std::vector<int> ks;
        std::stringstream ss(k_list.empty() ? std::to_string(default_k) : k_list);
        for (std::string tok; std::getline(ss, tok, ',');) ks.push_back(std::stoi(tok));
        for (int k : ks) {
            auto run = run_toy_pipeline(ctx, ds, k, "semantic", false);
            json row = {{"clusters", k}, {"best_val", run.best_val}};
            row["metrics"] = run.metrics_row;
            rows.push_back(row);
        }
    } else if (study == "branches") {
        for (const char* mode : {"lowlevel", "semantic", "dual"}) {
            auto run = run_toy_pipeline(ctx, ds, default_k, mode, false);
            json row = {{"branch", mode}};
            row["metrics"] = run.metrics_row;
            rows.push_back(row);
        }
    } else if (study == "enrichment") {
        for (bool on : {false, true}) {
            auto run = run_toy_pipeline(ctx, ds, default_k, "semantic", on);
            json row = {{"enrichment", on}, {"best_val", run.best_val}};
            row["metrics"] = run.metrics_row;
            rows.push_back(row);
        }
    } else {
        throw ConfigError("ablate: unknown study '" + study + "' (clusters|branches|enrichment)");
    }

    const std::string out = out_dir_for(ctx, "ablate-" + study, out_req);
    fs::create_directories(out);
    json report = {{"study", study}, {"rows", rows}};
    io::write_json(out + "/report.json", report);
    write_manifest(ctx, out, "ablate", {{"dataset", data_dir}},
                   {{"report", out + "/report.json"}});
    std::cout << "ablation report: " << out << "/report.json (" << rows.size() << " rows)\n";
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"fMRI-to-image reconstruction toolkit"};
    app.require_subcommand(1);

    Ctx ctx;
    std::string config_path;
    std::int64_t seed_flag = -1;
    app.add_flag("--toy", ctx.toy, "desk-scale profile with stub backbones");
    app.add_option("--config", config_path, "run config file (JSON)");
    app.add_option("--artifacts", ctx.artifacts, "artifact root directory");
    app.add_option("--seed", seed_flag, "override the config seed");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    int pairs = 200, subjects = 2;
    std::int64_t voxels = 512;
    Real noise = 0.0;
    std::string synth_out;
    synth->add_option("--pairs", pairs);
    synth->add_option("--subjects", subjects);
    synth->add_option("--voxels", voxels);
    synth->add_option("--noise", noise);
    synth->add_option("--out", synth_out);

    // cluster
    auto* cluster = app.add_subcommand("cluster", "fit the voxel-to-cluster mapping");
    std::string cluster_data, cluster_out;
    int cluster_k = 0;
    cluster->add_option("--data", cluster_data)->required();
    cluster->add_option("--k", cluster_k);
    cluster->add_option("--out", cluster_out);

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model head");
    std::string train_data, train_mapping, train_base, train_head = "semantic", train_out;
    int train_epochs = 0;
    train_cmd->add_option("--data", train_data)->required();
    train_cmd->add_option("--mapping", train_mapping);
    train_cmd->add_option("--base", train_base);
    train_cmd->add_option("--head", train_head);
    train_cmd->add_option("--epochs", train_epochs);
    train_cmd->add_option("--out", train_out);

    // reconstruct
    auto* recon = app.add_subcommand("reconstruct", "generate images from recordings");
    std::string recon_model, recon_lowlevel, recon_data, recon_mode = "dual", recon_out;
    int recon_steps = 0, recon_start = -1, recon_subject = 0, recon_count = 4;
    bool recon_refine = false;
    recon->add_option("--model", recon_model);
    recon->add_option("--lowlevel", recon_lowlevel);
    recon->add_option("--data", recon_data)->required();
    recon->add_option("--mode", recon_mode);
    recon->add_option("--steps", recon_steps);
    recon->add_option("--start", recon_start);
    recon->add_flag("--refine", recon_refine);
    recon->add_option("--subject", recon_subject);
    recon->add_option("--count", recon_count);
    recon->add_option("--out", recon_out);

    // transfer
    auto* transfer = app.add_subcommand("transfer", "adapt to a new subject");
    int xfer_subject = 0;
    Real xfer_minutes = 60;
    bool xfer_joint = false;
    std::string xfer_base, xfer_data, xfer_out;
    transfer->add_option("--subject", xfer_subject)->required();
    transfer->add_option("--minutes", xfer_minutes);
    transfer->add_option("--base", xfer_base)->required();
    transfer->add_option("--data", xfer_data)->required();
    transfer->add_flag("--joint", xfer_joint);
    transfer->add_option("--out", xfer_out);

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "score reconstructions");
    std::string eval_recon, eval_gt, eval_report;
    evaluate->add_option("--recon", eval_recon)->required();
    evaluate->add_option("--gt", eval_gt)->required();
    evaluate->add_option("--report", eval_report);

    // ablate
    auto* ablate = app.add_subcommand("ablate", "run an ablation study");
    std::string abl_study, abl_data, abl_k, abl_out;
    ablate->add_option("--study", abl_study)->required();
    ablate->add_option("--data", abl_data)->required();
    ablate->add_option("--k", abl_k);
    ablate->add_option("--out", abl_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        json user = config_path.empty() ? json::object() : read_config_file(config_path);
        if (seed_flag >= 0) user["seed"] = seed_flag;
        ctx.config = validate_config(user, ctx.toy);
        if (const char* root = std::getenv("BRAINIT_ARTIFACTS"); root && ctx.artifacts == "artifacts")
            ctx.artifacts = root;

        if (synth->parsed()) return cmd_synth(ctx, pairs, subjects, voxels, noise, synth_out);
        if (cluster->parsed()) return cmd_cluster(ctx, cluster_data, cluster_k, cluster_out);
        if (train_cmd->parsed())
            return cmd_train(ctx, train_data, train_mapping, train_base, train_head, train_epochs,
                             train_out);
        if (recon->parsed())
            return cmd_reconstruct(ctx, recon_model, recon_lowlevel, recon_data, recon_mode,
                                   recon_steps, recon_start, recon_refine, recon_subject,
                                   recon_count, recon_out);
        if (transfer->parsed())
            return cmd_transfer(ctx, xfer_subject, xfer_minutes, xfer_base, xfer_data, xfer_joint,
                                xfer_out);
        if (evaluate->parsed()) return cmd_evaluate(ctx, eval_recon, eval_gt, eval_report);
        if (ablate->parsed()) return cmd_ablate(ctx, abl_study, abl_data, abl_k, abl_out);
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace brainit::cli
