#include "pflow/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "pflow/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace pflow {
namespace {

using nlohmann::json;

std::pair<std::string, std::string> checkpoint_paths(const std::string& path) {
    std::filesystem::path p(path);
    if (p.extension() == ".json" || p.extension() == ".bin") p.replace_extension();
    return {p.string() + ".json", p.string() + ".bin"};
}

struct NamedTensor {
    std::string name;
    std::vector<int> shape;
    std::span<float> data;
};

std::vector<NamedTensor> inventory(ModelParams& params, AdamState* opt) {
    std::vector<NamedTensor> out;
    visit_tensors(params, [&](TensorRef<float> t) { out.push_back({t.name, t.shape, t.data}); });
    if (opt) {
        visit_tensors(opt->m, [&](TensorRef<float> t) {
            out.push_back({"adam.m." + t.name, t.shape, t.data});
        });
        visit_tensors(opt->v, [&](TensorRef<float> t) {
            out.push_back({"adam.v." + t.name, t.shape, t.data});
        });
    }
    return out;
}

json config_json(const ModelConfig& c) {
    return json{{"channels", c.channels},
                {"feature_width", c.feature_width},
                {"kernel_resolution",
                 {c.kernel_resolution.nx, c.kernel_resolution.ny, c.kernel_resolution.nz}},
                {"support_radius", c.support_radius}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.channels = j.at("channels").get<int>();
    c.feature_width = j.at("feature_width").get<int>();
    const auto res = j.at("kernel_resolution");
    c.kernel_resolution = {res.at(0).get<int>(), res.at(1).get<int>(), res.at(2).get<int>()};
    c.support_radius = j.at("support_radius").get<float>();
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params, const AdamState* opt,
                     long iteration) {
    auto [json_path, bin_path] = checkpoint_paths(path);
    auto& mutable_params = const_cast<ModelParams&>(params);
    auto tensors = inventory(mutable_params, const_cast<AdamState*>(opt));

    json manifest;
    manifest["format_version"] = 1;
    manifest["config"] = config_json(params.config);
    manifest["iteration"] = iteration;
    if (opt) manifest["adam_step"] = opt->step;

    std::string blob;
    json jt = json::array();
    for (const auto& t : tensors) {
        json entry;
        entry["name"] = t.name;
        entry["shape"] = t.shape;
        entry["offset"] = blob.size();
        entry["nbytes"] = t.data.size() * sizeof(float);
        jt.push_back(entry);
        blob.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
    }
    manifest["tensors"] = jt;
    manifest["blob_bytes"] = blob.size();

    {
        std::ofstream os(bin_path, std::ios::binary | std::ios::trunc);
        PFLOW_CHECK(os.good(), "save_checkpoint: cannot open " + bin_path);
        os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        PFLOW_CHECK(os.good(), "save_checkpoint: write failed for " + bin_path);
    }
    {
        std::ofstream os(json_path, std::ios::trunc);
        PFLOW_CHECK(os.good(), "save_checkpoint: cannot open " + json_path);
        os << manifest.dump(2) << "\n";
        PFLOW_CHECK(os.good(), "save_checkpoint: write failed for " + json_path);
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    auto [json_path, bin_path] = checkpoint_paths(path);
    std::ifstream is(json_path);
    PFLOW_CHECK(is.good(), "load_checkpoint: cannot open " + json_path);
    json manifest;
    try {
        is >> manifest;
    } catch (const json::exception& e) {
        throw Error("load_checkpoint: " + json_path + ": invalid JSON: " + e.what());
    }
    PFLOW_CHECK(manifest.at("format_version").get<int>() == 1,
                "load_checkpoint: unsupported format_version");

    std::ifstream bs(bin_path, std::ios::binary);
    PFLOW_CHECK(bs.good(), "load_checkpoint: cannot open " + bin_path);
    std::string blob((std::istreambuf_iterator<char>(bs)), std::istreambuf_iterator<char>());
    PFLOW_CHECK(blob.size() == manifest.at("blob_bytes").get<std::size_t>(),
                "load_checkpoint: blob size differs from manifest");

    Checkpoint ck;
    ck.params = ModelParams::zeros(config_from_json(manifest.at("config")));
    ck.iteration = manifest.value("iteration", 0L);
    const bool has_adam = manifest.contains("adam_step");
    if (has_adam) {
        ck.opt = AdamState::zeros(ck.params.config);
        ck.opt->step = manifest.at("adam_step").get<long>();
    }

    struct Entry {
        std::vector<int> shape;
        std::size_t offset = 0, nbytes = 0;
        bool used = false;
    };
    std::map<std::string, Entry> entries;
    std::size_t covered = 0;
    for (const auto& e : manifest.at("tensors")) {
        Entry en;
        en.shape = e.at("shape").get<std::vector<int>>();
        en.offset = e.at("offset").get<std::size_t>();
        en.nbytes = e.at("nbytes").get<std::size_t>();
        PFLOW_CHECK(en.offset + en.nbytes <= blob.size(),
                    "load_checkpoint: tensor " + e.at("name").get<std::string>() +
                        " extends past the blob");
        covered += en.nbytes;
        const bool inserted =
            entries.emplace(e.at("name").get<std::string>(), std::move(en)).second;
        PFLOW_CHECK(inserted, "load_checkpoint: duplicate tensor " +
                                  e.at("name").get<std::string>());
    }
    PFLOW_CHECK(covered == blob.size(),
                "load_checkpoint: tensor extents do not cover the blob exactly");

    auto tensors = inventory(ck.params, ck.opt ? &*ck.opt : nullptr);
    for (auto& t : tensors) {
        auto it = entries.find(t.name);
        PFLOW_CHECK(it != entries.end(), "load_checkpoint: missing tensor " + t.name);
        PFLOW_CHECK(it->second.shape == t.shape,
                    "load_checkpoint: shape mismatch for tensor " + t.name);
        PFLOW_CHECK(it->second.nbytes == t.data.size() * sizeof(float),
                    "load_checkpoint: byte size mismatch for tensor " + t.name);
        std::memcpy(t.data.data(), blob.data() + it->second.offset, it->second.nbytes);
        it->second.used = true;
    }
    for (const auto& [name, e] : entries)
        PFLOW_CHECK(e.used, "load_checkpoint: unexpected tensor " + name);
    return ck;
}

}  // namespace pflow
