#include "brainit/io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace brainit::io {

namespace fs = std::filesystem;

namespace {

std::string sanitize(const std::string& name) {
    std::string s = name;
    for (char& c : s)
        if (c == '/' || c == '\\' || c == ':') c = '_';
    return s;
}

}  // namespace

void save_tensor_f32(const std::string& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    std::vector<float> buf(static_cast<std::size_t>(t.numel()));
    for (std::int64_t i = 0; i < t.numel(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(t[i]);
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

Tensor load_tensor_f32(const std::string& path, const std::vector<std::int64_t>& shape) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for read: " + path);
    Tensor t(shape);
    std::vector<float> buf(static_cast<std::size_t>(t.numel()));
    f.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (f.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
        throw std::runtime_error("truncated tensor file: " + path);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<Real>(buf[static_cast<std::size_t>(i)]);
    return t;
}

void save_named_tensors(const std::string& dir, const NamedTensors& tensors, const json& extra_manifest) {
    fs::create_directories(dir);
    json manifest;
    manifest["format"] = "brainit-tensors-v1";
    manifest["extra"] = extra_manifest;
    json entries = json::object();
    for (const auto& [name, t] : tensors) {
        const std::string file = sanitize(name) + ".bin";
        save_tensor_f32((fs::path(dir) / file).string(), t);
        entries[name] = {{"file", file}, {"shape", t.shape()}};
    }
    manifest["tensors"] = entries;
    write_json((fs::path(dir) / "manifest.json").string(), manifest);
}

NamedTensors load_named_tensors(const std::string& dir, json* extra_manifest) {
    const json manifest = read_json((fs::path(dir) / "manifest.json").string());
    if (manifest.value("format", "") != "brainit-tensors-v1")
        throw std::runtime_error("unrecognized tensor directory: " + dir);
    if (extra_manifest) *extra_manifest = manifest.value("extra", json::object());
    NamedTensors out;
    for (const auto& [name, entry] : manifest.at("tensors").items()) {
        std::vector<std::int64_t> shape = entry.at("shape").get<std::vector<std::int64_t>>();
        out[name] = load_tensor_f32((fs::path(dir) / entry.at("file").get<std::string>()).string(), shape);
    }
    return out;
}

void write_json(const std::string& path, const json& j) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << j.dump(2) << "\n";
}

json read_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open for read: " + path);
    json j;
    f >> j;
    return j;
}

std::uint64_t config_hash(const json& j) {
    // dump() emits object keys sorted, so the serialization is canonical.
    const std::string s = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

}  // namespace brainit::io
