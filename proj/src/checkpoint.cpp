#include "af3d/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "af3d/config.hpp"
#include "binary_io.hpp"

namespace af3d {

namespace {

template <typename Values>
void write_record(std::ostream& out, const std::string& name, const std::vector<int>& shape, const Values& values) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (const int d : shape) {
        detail::put_u32(out, static_cast<std::uint32_t>(d));
    }
    for (const auto v : values) {
        detail::put_f32(out, static_cast<float>(v));
    }
}

struct Record {
    std::string name;
    std::vector<int> shape;
    std::vector<float> values;
};

Record read_record(std::istream& in) {
    Record r;
    const auto name_len = detail::expect_u32(in, "record name length");
    require(name_len < (1u << 16), ErrorCode::BadFormat, "checkpoint record name too long");
    r.name.resize(name_len);
    require(static_cast<bool>(in.read(r.name.data(), name_len)), ErrorCode::BadFormat, "truncated record name");
    const auto rank = detail::expect_u32(in, "record rank");
    require(rank <= 8, ErrorCode::BadFormat, "checkpoint record rank too large: " + r.name);
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const auto d = detail::expect_u32(in, "record dims");
        r.shape.push_back(static_cast<int>(d));
        count *= d;
    }
    require(count < (1u << 30), ErrorCode::BadFormat, "checkpoint record too large: " + r.name);
    r.values.resize(count);
    for (auto& v : r.values) {
        require(detail::get_f32(in, v), ErrorCode::BadFormat, "truncated payload in record " + r.name);
    }
    return r;
}

nlohmann::json header_json(const NetworkConfig& cfg, const SgdConfig& sgd, std::int64_t step,
                           const std::string& extra_json) {
    nlohmann::json j;
    j["format"] = "af3d-checkpoint";
    j["network"] = to_json(cfg);
    j["step"] = step;
    j["optimizer"] = {{"lr", sgd.lr}, {"momentum", sgd.momentum}, {"weight_decay", sgd.weight_decay}};
    j["extra"] = nlohmann::json::parse(extra_json);
    return j;
}

std::string read_header(std::istream& in, const std::filesystem::path& path) {
    char magic[4] = {};
    in.read(magic, 4);
    require(in.gcount() == 4 && std::string_view(magic, 4) == "AF3D", ErrorCode::BadFormat,
            "bad checkpoint magic in " + path.string());
    const auto version = detail::expect_u32(in, "version");
    require(version == kCheckpointVersion, ErrorCode::BadFormat,
            "checkpoint version mismatch: file has " + std::to_string(version) + ", expected " +
                std::to_string(kCheckpointVersion));
    const auto len = detail::expect_u32(in, "config length");
    require(len < (1u << 24), ErrorCode::BadFormat, "checkpoint config block too large");
    std::string text(len, '\0');
    require(static_cast<bool>(in.read(text.data(), len)), ErrorCode::BadFormat, "truncated checkpoint config");
    return text;
}

std::ifstream open_checkpoint(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) {
        fail(ErrorCode::NotFound, "checkpoint not found: " + path.string());
    }
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::Io, "cannot open checkpoint: " + path.string());
    return in;
}

}  // namespace

void save_checkpoint(const Network<float>& net, const SgdOptimizer<float>& opt, std::int64_t step,
                     const std::filesystem::path& path, const std::string& extra_json) {
    const auto text = header_json(net.config(), opt.config(), step, extra_json).dump();
    // Write to a sibling file first so an interrupted save never clobbers the previous checkpoint.
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(static_cast<bool>(out), ErrorCode::Io, "cannot open for writing: " + tmp.string());
        out.write("AF3D", 4);
        detail::put_u32(out, kCheckpointVersion);
        detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));

        const auto& params = net.params();
        detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
        for (const auto& p : params) {
            write_record(out, p.name, p.shape, p.value);
        }
        detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
        const auto& velocity = opt.velocity();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& p = params[i];
            if (velocity.size() == params.size()) {
                write_record(out, p.name + ".momentum", p.shape, velocity[i]);
            } else {
                write_record(out, p.name + ".momentum", p.shape, std::vector<float>(p.value.size(), 0.0f));
            }
        }
        require(static_cast<bool>(out), ErrorCode::Io, "write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string read_checkpoint_config(const std::filesystem::path& path) {
    auto in = open_checkpoint(path);
    return read_header(in, path);
}

TrainingState load_checkpoint(const std::filesystem::path& path) {
    auto in = open_checkpoint(path);
    const auto header = nlohmann::json::parse(read_header(in, path), nullptr, false);
    require(!header.is_discarded() && header.is_object(), ErrorCode::BadFormat, "checkpoint config is not JSON");

    TrainingState state{Network<float>(network_config_from_json(header.at("network")), 0), SgdOptimizer<float>{}, 0};
    state.step = header.at("step").get<std::int64_t>();
    state.extra_json = header.value("extra", nlohmann::json::object()).dump();
    const auto& o = header.at("optimizer");
    state.optimizer.config() = {o.at("lr").get<double>(), o.at("momentum").get<double>(),
                                o.at("weight_decay").get<double>()};

    auto& params = state.network.params();
    const auto n_params = detail::expect_u32(in, "parameter count");
    require(n_params == params.size(), ErrorCode::SizeMismatch,
            "checkpoint holds " + std::to_string(n_params) + " parameters, network expects " +
                std::to_string(params.size()));
    for (auto& p : params) {
        auto r = read_record(in);
        require(r.name == p.name, ErrorCode::SizeMismatch, "checkpoint parameter " + r.name + " where " + p.name + " expected");
        require(r.shape == p.shape, ErrorCode::SizeMismatch, "shape mismatch for parameter " + p.name);
        p.value = std::move(r.values);
    }
    const auto n_opt = detail::expect_u32(in, "optimizer record count");
    require(n_opt == params.size(), ErrorCode::SizeMismatch, "optimizer record count mismatch");
    auto& velocity = state.optimizer.velocity();
    velocity.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto r = read_record(in);
        require(r.name == params[i].name + ".momentum", ErrorCode::SizeMismatch, "unexpected optimizer record " + r.name);
        require(r.shape == params[i].shape, ErrorCode::SizeMismatch, "shape mismatch for optimizer record " + r.name);
        velocity[i] = std::move(r.values);
    }
    return state;
}

}  // namespace af3d
