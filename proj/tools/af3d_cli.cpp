#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "af3d/commands.hpp"
#include "af3d/error.hpp"

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string mode;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "JSON run configuration");
    cmd->add_option("--seed", c.seed, "Random seed override");
    cmd->add_option("--threads", c.threads, "Worker threads (1 = fully deterministic)");
    cmd->add_option("--mode", c.mode, "anchor_free or anchor_based");
}

af3d::RunConfig resolve(const Common& c) {
    af3d::CommonOptions opts;
    if (!c.config.empty()) {
        opts.config = c.config;
    }
    opts.seed = c.seed;
    opts.threads = c.threads;
    if (!c.mode.empty()) {
        opts.mode = af3d::parse_mode(c.mode);
    }
    return af3d::resolve_config(opts);
}

af3d::Dims3 parse_dims(const std::string& text) {
    std::vector<int> v;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto comma = text.find(',', pos);
        const auto part = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        try {
            v.push_back(std::stoi(part));
        } catch (const std::exception&) {
            af3d::fail(af3d::ErrorCode::InvalidArgument, "crop must be Z,Y,X, got '" + text + "'");
        }
        if (comma == std::string::npos) {
            break;
        }
        pos = comma + 1;
    }
    af3d::require(v.size() == 3, af3d::ErrorCode::InvalidArgument, "crop must be Z,Y,X, got '" + text + "'");
    return {v[0], v[1], v[2]};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"3D lesion detector: synthesis, training, prediction and FROC evaluation"};
    app.require_subcommand(1);

    Common synth_c;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    add_common(synth, synth_c);

    Common train_c;
    std::string resume;
    std::optional<int> steps;
    std::string train_out;
    auto* train = app.add_subcommand("train", "Train a detector");
    add_common(train, train_c);
    train->add_option("--resume", resume, "Checkpoint to resume from");
    train->add_option("--steps", steps, "Override train.steps");
    train->add_option("--out-dir", train_out, "Override train.out_dir");

    Common predict_c;
    af3d::PredictOptions predict_opts;
    std::vector<std::string> volumes;
    auto* predict = app.add_subcommand("predict", "Run sliding-window detection");
    add_common(predict, predict_c);
    predict->add_option("--checkpoint", predict_opts.checkpoint, "Checkpoint file")->required();
    predict->add_option("--out", predict_opts.out, "Prediction CSV");
    predict->add_option("--split", predict_opts.split, "Manifest split when no volumes are given (train|val)");
    predict->add_option("volumes", volumes, "VOL3 files");

    af3d::EvalOptions eval_opts;
    auto* eval = app.add_subcommand("eval", "Score predictions with FROC");
    eval->add_option("--predictions", eval_opts.predictions, "Prediction CSV")->required();
    eval->add_option("--annotations", eval_opts.annotations, "Ground-truth annotation CSV")->required();
    eval->add_option("--out-dir", eval_opts.out_dir, "Report directory");
    eval->add_flag("--wide-rates", eval_opts.wide_rates, "Average over 0.5..16 FPs per scan instead of 1/8..8");
    eval->add_flag("--plot-data", eval_opts.plot_data, "Also write every operating point");

    Common dump_c;
    af3d::AssignDumpOptions dump_opts;
    std::string crop = "64,128,128";
    auto* dump = app.add_subcommand("assign-dump", "Write training targets for one crop as CSV");
    add_common(dump, dump_c);
    dump->add_option("--annotations", dump_opts.annotations, "Boxes in crop-local mm")->required();
    dump->add_option("--crop", crop, "Crop dims Z,Y,X");
    dump->add_option("--out", dump_opts.out, "Output CSV");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            af3d::cmd_synth(resolve(synth_c), std::cout);
        } else if (train->parsed()) {
            auto cfg = resolve(train_c);
            if (steps) {
                cfg.train.steps = *steps;
            }
            if (!train_out.empty()) {
                cfg.train.out_dir = train_out;
            }
            std::optional<std::filesystem::path> from;
            if (!resume.empty()) {
                from = resume;
            }
            af3d::cmd_train(cfg, from, std::cout);
        } else if (predict->parsed()) {
            predict_opts.volumes.assign(volumes.begin(), volumes.end());
            const int failures = af3d::cmd_predict(resolve(predict_c), predict_opts, std::cout, std::cerr);
            return failures > 0 ? 3 : 0;
        } else if (eval->parsed()) {
            af3d::cmd_eval(eval_opts, std::cout, std::cerr);
        } else if (dump->parsed()) {
            dump_opts.crop = parse_dims(crop);
            af3d::cmd_assign_dump(resolve(dump_c), dump_opts, std::cout);
        }
    } catch (const af3d::Error& e) {
        std::cerr << "error[" << af3d::to_string(e.code()) << "]: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
