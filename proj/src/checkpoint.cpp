#include "dsdg/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "dsdg/error.hpp"

namespace dsdg {

namespace {
constexpr char kMagic[8] = {'D', 'S', 'D', 'G', 'C', 'K', 'P', 'T'};
}

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& meta,
                     const ParamList& params) {
    nlohmann::json header;
    header["kind"] = kind;
    header["meta"] = meta;
    header["tensors"] = nlohmann::json::array();
    for (const auto& p : params) header["tensors"].push_back({{"name", p.name}, {"shape", p.var.shape()}});
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ResolutionError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : params)
        out.write(reinterpret_cast<const char*>(p.var.value().data()),
                  static_cast<std::streamsize>(p.var.value().size() * sizeof(double)));
    if (!out) throw ResolutionError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ResolutionError("cannot open checkpoint " + path.string());
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw ParseError(path.string() + ": not a checkpoint");
    if (version != kCheckpointVersion)
        throw ParseError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));

    Checkpoint ck;
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": bad header: " + e.what());
    }
    ck.kind = header.at("kind").get<std::string>();
    ck.meta = header.at("meta");
    for (const auto& entry : header.at("tensors")) {
        Tensor t(entry.at("shape").get<Shape>());
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!in) throw ParseError(path.string() + ": truncated tensor data");
        ck.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
    }
    return ck;
}

void load_params(ParamList& params, const Checkpoint& ckpt) {
    for (auto& p : params) {
        auto it = ckpt.tensors.find(p.name);
        if (it == ckpt.tensors.end()) throw ParseError("checkpoint lacks parameter " + p.name);
        if (it->second.shape() != p.var.shape())
            throw ShapeError("checkpoint parameter " + p.name + " has shape " + to_string(it->second.shape()) +
                             ", expected " + to_string(p.var.shape()));
        p.var.mutable_value() = it->second;
    }
}

}  // namespace dsdg
