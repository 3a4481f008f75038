#include "fairstg/checkpoint.hpp"

#include "fairstg/errors.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace fairstg {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'F', 'S', 'T', 'G'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 4);
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) throw DataError("truncated checkpoint: " + path);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
    return v;
}

void write_f32(std::ofstream& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_u32(out, bits);
}

float read_f32(std::ifstream& in, const std::string& path) {
    std::uint32_t bits = read_u32(in, path);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

json header_json(const Model& model, const std::string& mode, const std::string& ablation) {
    const ModelConfig& c = model.config();
    json h;
    h["schema_version"] = kVersion;
    h["w"] = c.w;
    h["h"] = c.h;
    h["N"] = c.num_nodes;
    h["d"] = c.d;
    h["channels"] = c.channels;
    h["d_emb"] = c.d_emb;
    h["d_k"] = c.d_k;
    h["gate_hidden"] = c.gate_hidden;
    h["ext_embed"] = c.ext_embed;
    h["rec_arch"] = c.rec_arch == RecognizerArch::gcn3 ? "gcn3" : "linear3";
    h["rec_h1"] = c.rec_h1;
    h["rec_h2"] = c.rec_h2;
    h["adjacency"] = c.adjacency == AdjacencyKind::adaptive ? "adaptive" : "fixed";
    h["seed"] = c.seed;
    h["norm_mean"] = model.norm().mean;
    h["norm_std"] = model.norm().std;
    h["mode"] = mode;
    h["ablation"] = ablation;
    if (c.adjacency == AdjacencyKind::fixed) {
        std::vector<std::vector<double>> adj(static_cast<std::size_t>(c.num_nodes));
        for (int i = 0; i < c.num_nodes; ++i) {
            adj[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(c.num_nodes));
            for (int j = 0; j < c.num_nodes; ++j) {
                adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                    c.fixed_adjacency(i, j);
            }
        }
        h["fixed_adjacency"] = adj;
    }
    return h;
}

} // namespace

void save_checkpoint(const std::string& path, const Model& model, const std::string& mode,
                     const std::string& ablation) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    write_u32(out, kVersion);

    std::string header = header_json(model, mode, ablation).dump();
    write_u32(out, static_cast<std::uint32_t>(header.size()));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));

    const ParamStore& store = model.params();
    write_u32(out, static_cast<std::uint32_t>(store.size()));
    for (int i = 0; i < store.size(); ++i) {
        const std::string& name = store.name(i);
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const Matrix& m = store.value(i);
        write_u32(out, static_cast<std::uint32_t>(m.rows()));
        write_u32(out, static_cast<std::uint32_t>(m.cols()));
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index col = 0; col < m.cols(); ++col) {
                write_f32(out, static_cast<float>(m(r, col)));
            }
        }
    }
    if (!out) throw DataError("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw DataError("not a checkpoint file: " + path);
    }
    std::uint32_t version = read_u32(in, path);
    if (version != kVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    std::uint32_t header_len = read_u32(in, path);
    std::string header(header_len, '\0');
    in.read(header.data(), header_len);
    if (!in) throw DataError("truncated checkpoint header: " + path);

    json h = json::parse(header, nullptr, false);
    if (h.is_discarded()) throw DataError("corrupt checkpoint header JSON: " + path);

    ModelConfig cfg;
    cfg.w = h.at("w").get<int>();
    cfg.h = h.at("h").get<int>();
    cfg.num_nodes = h.at("N").get<int>();
    cfg.d = h.at("d").get<int>();
    cfg.channels = h.at("channels").get<int>();
    cfg.d_emb = h.at("d_emb").get<int>();
    cfg.d_k = h.at("d_k").get<int>();
    cfg.gate_hidden = h.at("gate_hidden").get<int>();
    cfg.ext_embed = h.at("ext_embed").get<int>();
    cfg.rec_arch = h.at("rec_arch").get<std::string>() == "linear3" ? RecognizerArch::linear3
                                                                    : RecognizerArch::gcn3;
    cfg.rec_h1 = h.at("rec_h1").get<int>();
    cfg.rec_h2 = h.at("rec_h2").get<int>();
    cfg.seed = h.at("seed").get<unsigned>();
    const bool fixed = h.at("adjacency").get<std::string>() == "fixed";
    cfg.adjacency = fixed ? AdjacencyKind::fixed : AdjacencyKind::adaptive;
    if (fixed) {
        auto adj = h.at("fixed_adjacency").get<std::vector<std::vector<double>>>();
        cfg.fixed_adjacency = Matrix::Zero(cfg.num_nodes, cfg.num_nodes);
        for (int i = 0; i < cfg.num_nodes; ++i) {
            for (int j = 0; j < cfg.num_nodes; ++j) {
                cfg.fixed_adjacency(i, j) = adj.at(static_cast<std::size_t>(i))
                                                .at(static_cast<std::size_t>(j));
            }
        }
    }

    NormalizationState norm;
    norm.mean = h.at("norm_mean").get<double>();
    norm.std = h.at("norm_std").get<double>();

    LoadedCheckpoint loaded;
    loaded.mode = h.at("mode").get<std::string>();
    loaded.ablation = h.at("ablation").get<std::string>();
    loaded.model = std::make_unique<Model>(cfg, norm);

    std::uint32_t count = read_u32(in, path);
    ParamStore& store = loaded.model->params();
    std::vector<bool> seen(static_cast<std::size_t>(store.size()), false);
    for (std::uint32_t p = 0; p < count; ++p) {
        std::uint32_t name_len = read_u32(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        std::uint32_t rows = read_u32(in, path);
        std::uint32_t cols = read_u32(in, path);
        Matrix m(rows, cols);
        for (std::uint32_t r = 0; r < rows; ++r) {
            for (std::uint32_t c2 = 0; c2 < cols; ++c2) {
                m(r, c2) = static_cast<double>(read_f32(in, path));
            }
        }
        int id = store.find(name);
        if (id < 0) throw DataError("checkpoint has unknown parameter '" + name + "'");
        if (store.value(id).rows() != m.rows() || store.value(id).cols() != m.cols()) {
            throw DataError("checkpoint parameter '" + name + "' has unexpected shape");
        }
        store.value(id) = std::move(m);
        seen[static_cast<std::size_t>(id)] = true;
    }
    for (int i = 0; i < store.size(); ++i) {
        if (!seen[static_cast<std::size_t>(i)]) {
            throw DataError("checkpoint is missing parameter '" + store.name(i) + "'");
        }
    }
    return loaded;
}

} // namespace fairstg
