#include "clem/models/serialize.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "clem/error.hpp"

namespace clem {

using nlohmann::json;

namespace {

constexpr char kBlobMagic[4] = {'C', 'L', 'M', 'P'};
constexpr std::uint32_t kBlobVersion = 1;

using Sections = std::vector<std::pair<std::string, std::vector<float>>>;

void write_blob(const std::string& path, const Sections& sections) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write model blob: " + path);
    out.write(kBlobMagic, 4);
    auto u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto u64 = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    u32(kBlobVersion);
    u32(static_cast<std::uint32_t>(sections.size()));
    for (const auto& [name, data] : sections) {
        u32(static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        u64(data.size());
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size() * sizeof(float)));
    }
    if (!out) throw IoError("write failed: " + path);
}

std::map<std::string, std::vector<float>> read_blob(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model blob: " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kBlobMagic, 4) != 0)
        throw VersionError("not a model blob (bad magic): " + path);
    auto u32 = [&] {
        std::uint32_t v = 0;
        if (!in.read(reinterpret_cast<char*>(&v), 4)) throw IoError("truncated blob: " + path);
        return v;
    };
    auto u64 = [&] {
        std::uint64_t v = 0;
        if (!in.read(reinterpret_cast<char*>(&v), 8)) throw IoError("truncated blob: " + path);
        return v;
    };
    if (u32() != kBlobVersion) throw VersionError("unsupported model blob version: " + path);
    const std::uint32_t n = u32();
    std::map<std::string, std::vector<float>> out;
    for (std::uint32_t s = 0; s < n; ++s) {
        const std::uint32_t len = u32();
        if (len > 256) throw SchemaError("implausible section name in " + path);
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw IoError("truncated blob: " + path);
        const std::uint64_t count = u64();
        if (count > (1ull << 32)) throw SchemaError("implausible section size in " + path);
        std::vector<float> data(count);
        if (!in.read(reinterpret_cast<char*>(data.data()),
                     static_cast<std::streamsize>(count * sizeof(float))))
            throw IoError("truncated blob: " + path);
        out.emplace(std::move(name), std::move(data));
    }
    return out;
}

const std::vector<float>& section(const std::map<std::string, std::vector<float>>& blob,
                                  const std::string& name, const std::string& path) {
    auto it = blob.find(name);
    if (it == blob.end()) throw SchemaError("model blob missing section '" + name + "': " + path);
    return it->second;
}

void write_manifest(const std::string& path, json j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write model manifest: " + path);
    out << j.dump(2) << '\n';
}

json read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model manifest: " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw SchemaError(path + ": " + e.what());
    }
}

std::vector<float> to_f32(const std::vector<double>& v) {
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = float(v[i]);
    return out;
}

std::vector<double> to_f64(const std::vector<float>& v) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = double(v[i]);
    return out;
}

json transformer_config_json(const TransformerConfig& c) {
    return json{{"layers", c.layers},   {"heads", c.heads},
                {"dim", c.dim},         {"ffn", c.ffn},
                {"max_len", c.max_len}, {"mask_rate", c.mask_rate}};
}

TransformerConfig transformer_config_from_json(const json& j) {
    TransformerConfig c;
    c.layers = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.dim = j.at("dim").get<int>();
    c.ffn = j.at("ffn").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.mask_rate = j.at("mask_rate").get<double>();
    return c;
}

} // namespace

void save_model(const Classifier& model, const std::string& base) {
    json manifest;
    manifest["version"] = 1;
    manifest["kind"] = model_kind_tag(model.kind());
    manifest["blob"] = base.substr(base.find_last_of('/') + 1) + ".clmp";
    Sections sections;

    switch (model.kind()) {
        case ModelKind::RiskLogit: {
            const auto& m = dynamic_cast<const RiskLogitModel&>(model);
            manifest["n_features"] = m.weights().size();
            manifest["n_risks"] = m.risk_map().size();
            sections.emplace_back("weights", to_f32(m.weights()));
            sections.emplace_back("bias", std::vector<float>{float(m.bias())});
            break;
        }
        case ModelKind::BowSvm: {
            const auto& m = dynamic_cast<const BowSvmModel&>(model);
            manifest["vocab_size"] = m.vocab().size();
            sections.emplace_back("weights", to_f32(m.weights()));
            sections.emplace_back("bias", std::vector<float>{float(m.bias())});
            sections.emplace_back("platt", std::vector<float>{float(m.platt_a()), float(m.platt_b())});
            break;
        }
        case ModelKind::EmbedGbm: {
            const auto& m = dynamic_cast<const EmbedGbmModel&>(model);
            manifest["vocab_size"] = m.vocab().size();
            manifest["dim"] = m.table().dim();
            manifest["n_trees"] = m.core().trees.size();
            std::vector<float> shapes, nodes, f0{m.core().f0};
            for (const auto& tree : m.core().trees) {
                shapes.push_back(float(tree.nodes.size()));
                for (const auto& nd : tree.nodes) {
                    nodes.push_back(float(nd.feature));
                    nodes.push_back(nd.threshold);
                    nodes.push_back(float(nd.left));
                    nodes.push_back(float(nd.right));
                    nodes.push_back(nd.value);
                }
            }
            sections.emplace_back("f0", std::move(f0));
            sections.emplace_back("tree_shapes", std::move(shapes));
            sections.emplace_back("nodes", std::move(nodes));
            break;
        }
        case ModelKind::MlmTransformer: {
            const auto& m = dynamic_cast<const MlmClassifierModel&>(model);
            manifest["vocab_size"] = m.vocab().size();
            manifest["transformer"] = transformer_config_json(m.encoder().config());
            sections.emplace_back("params", m.encoder().params());
            break;
        }
    }
    write_manifest(base + ".json", std::move(manifest));
    write_blob(base + ".clmp", sections);
}

std::unique_ptr<Classifier> load_model(const std::string& base, const ModelArtifacts& art) {
    const json manifest = read_manifest(base + ".json");
    if (manifest.at("version").get<int>() != 1)
        throw VersionError("unsupported model manifest version: " + base + ".json");
    const auto kind = model_kind_from_tag(manifest.at("kind").get<std::string>());
    const std::string blob_path = base + ".clmp";
    auto blob = read_blob(blob_path);

    auto require_vocab = [&]() {
        if (!art.vocab) throw Error("model '" + base + "' needs a vocabulary artifact");
        const auto want = manifest.at("vocab_size").get<std::int32_t>();
        if (art.vocab->size() != want)
            throw VersionError("vocabulary size mismatch for " + base + ": model built with " +
                               std::to_string(want) + ", supplied " +
                               std::to_string(art.vocab->size()));
    };

    switch (kind) {
        case ModelKind::RiskLogit: {
            if (!art.risk_map) throw Error("model '" + base + "' needs a risk map artifact");
            auto w = to_f64(section(blob, "weights", blob_path));
            if (w.size() != art.risk_map->size() + 2)
                throw VersionError("risk map size mismatch for " + base);
            double bias = section(blob, "bias", blob_path).at(0);
            return std::make_unique<RiskLogitModel>(*art.risk_map, art.buckets, std::move(w), bias);
        }
        case ModelKind::BowSvm: {
            require_vocab();
            auto w = to_f64(section(blob, "weights", blob_path));
            const auto& platt = section(blob, "platt", blob_path);
            if (platt.size() != 2) throw SchemaError("bad platt section in " + blob_path);
            return std::make_unique<BowSvmModel>(art.vocab, std::move(w),
                                                 double(section(blob, "bias", blob_path).at(0)),
                                                 double(platt[0]), double(platt[1]));
        }
        case ModelKind::EmbedGbm: {
            require_vocab();
            if (!art.table) throw Error("model '" + base + "' needs an embedding artifact");
            if (art.table->dim() != manifest.at("dim").get<int>())
                throw VersionError("embedding dim mismatch for " + base);
            GbmCore core;
            core.f0 = section(blob, "f0", blob_path).at(0);
            const auto& shapes = section(blob, "tree_shapes", blob_path);
            const auto& nodes = section(blob, "nodes", blob_path);
            std::size_t at = 0;
            for (float sf : shapes) {
                GbmTree tree;
                auto count = static_cast<std::size_t>(sf);
                if (at + count * 5 > nodes.size()) throw SchemaError("bad tree data in " + blob_path);
                for (std::size_t k = 0; k < count; ++k) {
                    GbmNode nd;
                    nd.feature = static_cast<std::int32_t>(nodes[at]);
                    nd.threshold = nodes[at + 1];
                    nd.left = static_cast<std::int32_t>(nodes[at + 2]);
                    nd.right = static_cast<std::int32_t>(nodes[at + 3]);
                    nd.value = nodes[at + 4];
                    at += 5;
                    tree.nodes.push_back(nd);
                }
                core.trees.push_back(std::move(tree));
            }
            return std::make_unique<EmbedGbmModel>(art.vocab, art.table, art.buckets,
                                                   std::move(core));
        }
        case ModelKind::MlmTransformer: {
            require_vocab();
            TransformerConfig cfg = transformer_config_from_json(manifest.at("transformer"));
            EncoderF enc(cfg, art.vocab->size());
            const auto& params = section(blob, "params", blob_path);
            if (params.size() != enc.n_params())
                throw VersionError("encoder parameter count mismatch for " + base);
            enc.params() = params;
            return std::make_unique<MlmClassifierModel>(art.vocab, art.buckets, std::move(enc));
        }
    }
    throw Error("unreachable model kind");
}

void save_encoder(const EncoderF& encoder, const std::string& base) {
    json manifest;
    manifest["version"] = 1;
    manifest["kind"] = "mlm-encoder";
    manifest["vocab_size"] = encoder.vocab_size();
    manifest["transformer"] = transformer_config_json(encoder.config());
    manifest["blob"] = base.substr(base.find_last_of('/') + 1) + ".clmp";
    write_manifest(base + ".json", std::move(manifest));
    write_blob(base + ".clmp", {{"params", encoder.params()}});
}

EncoderF load_encoder(const std::string& base, const Vocabulary& vocab) {
    const json manifest = read_manifest(base + ".json");
    if (manifest.at("kind").get<std::string>() != "mlm-encoder")
        throw VersionError("not an encoder artifact: " + base);
    if (manifest.at("vocab_size").get<std::int32_t>() != vocab.size())
        throw VersionError("vocabulary size mismatch for encoder " + base);
    TransformerConfig cfg = transformer_config_from_json(manifest.at("transformer"));
    EncoderF enc(cfg, vocab.size());
    auto blob = read_blob(base + ".clmp");
    const auto& params = section(blob, "params", base + ".clmp");
    if (params.size() != enc.n_params())
        throw VersionError("encoder parameter count mismatch for " + base);
    enc.params() = params;
    return enc;
}

} // namespace clem
