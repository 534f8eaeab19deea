#include "bitkit/checkpoint.hpp"

#include <fstream>

#include "bitkit/wire.hpp"

namespace bitkit {

namespace {
constexpr uint32_t kVersion = 1;
constexpr size_t kMaxNameLen = 1 << 16;
constexpr uint32_t kMaxRank = 8;
}  // namespace

void save_checkpoint(const std::string& path, const Params<float>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open checkpoint for writing: " + path);
    os.write("BITC", 4);
    wire::put_u32(os, kVersion);
    for (const auto& name : tensors.names()) {
        const Tensor<float>& t = tensors.at(name);
        wire::put_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        wire::put_u32(os, static_cast<uint32_t>(t.rank()));
        for (int64_t d : t.shape) wire::put_u32(os, static_cast<uint32_t>(d));
        wire::put_f32_array(os, t.ptr(), static_cast<size_t>(t.numel()));
    }
    if (!os) throw Error("write failure on checkpoint: " + path);
}

Params<float> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open checkpoint: " + path);
    wire::Reader r(is, "checkpoint " + path);

    char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::string(magic, 4) != "BITC") r.fail("bad magic, expected BITC");
    const uint32_t version = r.u32("version");
    if (version != kVersion) r.fail("unsupported version " + std::to_string(version));

    Params<float> out;
    while (!r.at_eof()) {
        const uint32_t name_len = r.u32("name length");
        if (name_len == 0 || name_len > kMaxNameLen) r.fail("implausible name length");
        std::string name(name_len, '\0');
        r.bytes(name.data(), name_len, "name");
        const uint32_t rank = r.u32("rank");
        if (rank > kMaxRank) r.fail("implausible rank in record " + name);
        std::vector<int64_t> shape;
        int64_t numel = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            const uint32_t d = r.u32("dims");
            shape.push_back(static_cast<int64_t>(d));
            numel *= static_cast<int64_t>(d);
        }
        Tensor<float> t = Tensor<float>::zeros(shape);
        r.f32_array(t.ptr(), static_cast<size_t>(numel), name.c_str());
        out.add(name, std::move(t));
    }
    return out;
}

Tensor<float> encode_model_config(const ModelConfig& config) {
    float depth_code = 0;
    switch (config.depth_preset) {
        case DepthPreset::Toy8: depth_code = 0; break;
        case DepthPreset::D26: depth_code = 1; break;
        case DepthPreset::D50: depth_code = 2; break;
        case DepthPreset::D101: depth_code = 3; break;
        case DepthPreset::D152: depth_code = 4; break;
    }
    return Tensor<float>::from({7}, {depth_code, static_cast<float>(config.widen_factor),
                                     static_cast<float>(config.num_groups),
                                     static_cast<float>(config.gn_eps),
                                     static_cast<float>(config.ws_eps),
                                     static_cast<float>(config.num_classes),
                                     static_cast<float>(config.input_channels)});
}

ModelConfig decode_model_config(const Tensor<float>& t) {
    if (t.numel() != 7) throw FormatError("meta/model_config record has wrong size", 0);
    ModelConfig c;
    switch (static_cast<int>(t[0])) {
        case 0: c.depth_preset = DepthPreset::Toy8; break;
        case 1: c.depth_preset = DepthPreset::D26; break;
        case 2: c.depth_preset = DepthPreset::D50; break;
        case 3: c.depth_preset = DepthPreset::D101; break;
        case 4: c.depth_preset = DepthPreset::D152; break;
        default: throw FormatError("unknown depth preset code in checkpoint", 0);
    }
    c.widen_factor = static_cast<int64_t>(t[1]);
    c.num_groups = static_cast<int64_t>(t[2]);
    c.gn_eps = t[3];
    c.ws_eps = t[4];
    c.num_classes = static_cast<int64_t>(t[5]);
    c.input_channels = static_cast<int64_t>(t[6]);
    return c;
}

void save_model(const std::string& path, const ModelConfig& config, const Params<float>& params) {
    Params<float> all;
    all.add("meta/model_config", encode_model_config(config));
    for (const auto& name : params.names()) all.add(name, params.at(name));
    save_checkpoint(path, all);
}

LoadedModel load_model(const std::string& path) {
    Params<float> all = load_checkpoint(path);
    if (!all.contains("meta/model_config"))
        throw FormatError("checkpoint " + path + " lacks meta/model_config record", 0);
    LoadedModel out;
    out.config = decode_model_config(all.at("meta/model_config"));
    for (const auto& name : all.names())
        if (name.rfind("meta/", 0) != 0 && name.rfind("optim/", 0) != 0)
            out.params.add(name, all.at(name));
    return out;
}

}  // namespace bitkit
