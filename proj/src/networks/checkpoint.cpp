#include "networks/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "networks/blockio.hpp"

namespace morphsdf {

using ad::Tensor;
using ckpt::read_block;
using ckpt::read_u32;
using ckpt::write_block;
using ckpt::write_u32;
using nlohmann::json;

json model_config_json(const ModelConfig& c) {
    return json{{"latent_dim", c.latent_dim},
                {"pe_freqs_geom", c.pe_freqs_geom},
                {"pe_freqs_uv", c.pe_freqs_uv},
                {"f_hidden", c.f_hidden},
                {"f_layers", c.f_layers},
                {"g_hidden", c.g_hidden},
                {"g_layers", c.g_layers},
                {"ginv_hidden", c.ginv_hidden},
                {"ginv_layers", c.ginv_layers},
                {"h_hidden", c.h_hidden},
                {"h_layers", c.h_layers},
                {"softplus_beta", c.softplus_beta},
                {"geom_radius", c.geom_radius},
                {"geom_scale", c.geom_scale}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.latent_dim = j.at("latent_dim");
    c.pe_freqs_geom = j.at("pe_freqs_geom");
    c.pe_freqs_uv = j.at("pe_freqs_uv");
    c.f_hidden = j.at("f_hidden");
    c.f_layers = j.at("f_layers");
    c.g_hidden = j.at("g_hidden");
    c.g_layers = j.at("g_layers");
    c.ginv_hidden = j.at("ginv_hidden");
    c.ginv_layers = j.at("ginv_layers");
    c.h_hidden = j.at("h_hidden");
    c.h_layers = j.at("h_layers");
    c.softplus_beta = j.at("softplus_beta");
    c.geom_radius = j.at("geom_radius");
    c.geom_scale = j.at("geom_scale");
    return c;
}

void save_checkpoint(const std::string& path, Model& model, LatentTables& tables, int stage) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    os.write("MSDF", 4);
    write_u32(os, 1);

    json meta;
    meta["config"] = model_config_json(model.cfg);
    meta["stage"] = stage;
    meta["num_subjects"] = tables.geom.size();
    meta["expr_subject"] = tables.expr_subject;
    std::string meta_str = meta.dump();
    write_u32(os, uint32_t(meta_str.size()));
    os.write(meta_str.data(), std::streamsize(meta_str.size()));

    auto params = model.params();
    uint32_t num_blocks = uint32_t(params.size() + tables.geom.size() + tables.color.size() +
                                   tables.expr.size());
    write_u32(os, num_blocks);
    for (auto& [name, t] : params) write_block(os, name, *t);
    for (size_t i = 0; i < tables.geom.size(); ++i)
        write_block(os, "latent.geom." + std::to_string(i), tables.geom[i]);
    for (size_t i = 0; i < tables.color.size(); ++i)
        write_block(os, "latent.color." + std::to_string(i), tables.color[i]);
    for (size_t i = 0; i < tables.expr.size(); ++i)
        write_block(os, "latent.expr." + std::to_string(i), tables.expr[i]);
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MSDF", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    // version 2 is the trainer-state superset: same model/latent blocks plus
    // optimizer blocks (skipped here) and a "train" meta section (ignored).
    uint32_t version = read_u32(is);
    if (version != 1 && version != 2)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

    uint32_t meta_len = read_u32(is);
    std::string meta_str(meta_len, '\0');
    is.read(meta_str.data(), std::streamsize(meta_len));
    json meta = json::parse(meta_str);

    Checkpoint ck;
    ck.stage = meta.at("stage");
    ModelConfig cfg = model_config_from_json(meta.at("config"));
    ck.model = Model::make(cfg, 0);

    int num_subjects = meta.at("num_subjects");
    std::vector<int> expr_subject = meta.at("expr_subject");
    ck.tables = LatentTables::make(num_subjects, expr_subject, cfg.latent_dim, 0);

    std::unordered_map<std::string, Tensor*> slots;
    for (auto& [name, t] : ck.model.params()) slots[name] = t;
    for (size_t i = 0; i < ck.tables.geom.size(); ++i)
        slots["latent.geom." + std::to_string(i)] = &ck.tables.geom[i];
    for (size_t i = 0; i < ck.tables.color.size(); ++i)
        slots["latent.color." + std::to_string(i)] = &ck.tables.color[i];
    for (size_t i = 0; i < ck.tables.expr.size(); ++i)
        slots["latent.expr." + std::to_string(i)] = &ck.tables.expr[i];

    uint32_t num_blocks = read_u32(is);
    size_t filled = 0;
    for (uint32_t i = 0; i < num_blocks; ++i) {
        ckpt::Block b = read_block(is);
        if (version >= 2 && b.name.rfind("opt.", 0) == 0) continue;
        auto it = slots.find(b.name);
        if (it == slots.end())
            throw std::runtime_error("checkpoint: unexpected block " + b.name);
        if (!same_shape(*it->second, b.tensor))
            throw std::runtime_error("checkpoint: shape mismatch for " + b.name + ": " +
                                     it->second->shape_str() + " vs " + b.tensor.shape_str());
        *it->second = b.tensor;
        ++filled;
    }
    if (filled != slots.size())
        throw std::runtime_error("checkpoint: missing parameter blocks in " + path);
    return ck;
}

}  // namespace morphsdf
