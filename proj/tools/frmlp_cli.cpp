#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "frmlp/gradcheck.hpp"
#include "frmlp/train.hpp"
#include "frmlp/volume_io.hpp"

namespace {

using namespace frmlp;

struct CommonFlags {
    std::string task = "restore";
    std::string block = "gmlp";
    std::string stages;
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--task", f.task, "restore | register | segment");
    cmd->add_option("--block", f.block, "gmlp | hire | smlp | swinmlp | conv");
    cmd->add_option("--stages", f.stages, "five-letter stage code, e.g. PPPPP or CCPPP");
    cmd->add_option("--config", f.config_path, "JSON run config");
    cmd->add_option("--seed", f.seed, "run seed")->each([&f](const std::string&) { f.seed_set = true; });
    cmd->add_option("--out", f.out_dir, "output directory");
}

RunConfig resolve_config(const CommonFlags& f) {
    RunConfig cfg;
    if (!f.config_path.empty()) {
        std::ifstream in(f.config_path);
        if (!in) throw IoError("cannot open config " + f.config_path);
        std::stringstream buf;
        buf << in.rdbuf();
        cfg = parse_config_json(buf.str());
    } else {
        cfg = default_config(task_from_string(f.task));
    }
    if (f.config_path.empty() || !f.task.empty()) {
        // Flags override the file when both are present.
    }
    const BlockKind mlp = block_kind_from_string(f.block);
    if (!f.stages.empty())
        cfg.network.stage_kinds = parse_stage_code(f.stages, mlp);
    else if (f.block != "gmlp")
        cfg.network.stage_kinds = parse_stage_code("PPPPP", mlp);
    if (f.seed_set) cfg.seed = f.seed;
    if (!f.out_dir.empty()) cfg.out_dir = f.out_dir;
    cfg.validate();
    return cfg;
}

int cmd_train(const CommonFlags& f) {
    RunConfig cfg = resolve_config(f);
    std::cout << "training " << task_name(cfg.task) << " (seed " << cfg.seed << ", "
              << cfg.iterations << " iterations)\n";
    TrainResult result = train(cfg);
    std::filesystem::create_directories(cfg.out_dir);
    const std::string ckpt_path = cfg.out_dir + "/checkpoint.frmc";
    io::save_checkpoint(ckpt_path, result.checkpoint);
    std::ofstream cfg_out(cfg.out_dir + "/config.json");
    cfg_out << config_to_json(cfg);
    std::cout << "best validation metric " << result.best_val_metric << " at iteration "
              << result.best_iteration << "\n"
              << "checkpoint written to " << ckpt_path << "\n";
    return 0;
}

int cmd_eval(const CommonFlags& f, const std::string& ckpt_path) {
    RunConfig cfg = resolve_config(f);
    io::Checkpoint ckpt = io::load_checkpoint(ckpt_path);
    metrics::MetricReport report = evaluate(ckpt, cfg);
    std::cout << report.to_text();
    if (!cfg.out_dir.empty())
        std::cout << "report written to " << cfg.out_dir << "/report.{txt,json}\n";
    return 0;
}

int cmd_gradcheck(const CommonFlags& f, const std::string& scope, bool use_f64) {
    const DType dt = use_f64 ? DType::F64 : DType::F32;
    const std::uint64_t seed = f.seed_set ? f.seed : 1;
    auto results = gradcheck::run_scope(scope, dt, seed);
    std::cout << gradcheck::report_text(results);
    int failures = 0;
    for (const auto& r : results) failures += r.pass ? 0 : 1;
    std::cout << results.size() - failures << "/" << results.size() << " checks passed ("
              << dtype_name(dt) << ")\n";
    return failures == 0 ? 0 : 1;
}

int cmd_synth(const CommonFlags& f) {
    RunConfig cfg = resolve_config(f);
    const std::string dir = cfg.out_dir.empty() ? "synth_out" : cfg.out_dir;
    std::filesystem::create_directories(dir);
    switch (cfg.task) {
        case Task::Restore: {
            data::Phantom ph = data::synth_phantom(cfg.network.input_dims, cfg.n_blobs, cfg.seed);
            Tensor noisy = data::synth_low_dose(ph.volume, cfg.drf, cfg.seed + 1,
                                                cfg.counts_full_dose);
            io::write_volume(dir + "/clean.frv", ph.volume);
            io::write_volume(dir + "/noisy.frv", noisy);
            std::cout << "wrote clean.frv and noisy.frv (drf " << cfg.drf << ") to " << dir << "\n";
            break;
        }
        case Task::Register: {
            data::RegistrationPair pair = data::synth_registration_pair(
                cfg.network.input_dims, cfg.reg_amplitude, cfg.seed, cfg.n_blobs, cfg.reg_sigma);
            io::write_volume(dir + "/fixed.frv", pair.fixed);
            io::write_volume(dir + "/moving.frv", pair.moving);
            io::write_labels(dir + "/fixed_mask.frv", pair.fixed_mask);
            io::write_labels(dir + "/moving_mask.frv", pair.moving_mask);
            io::write_volume(dir + "/field.frv", pair.u_true);
            std::cout << "wrote registration pair to " << dir << "\n";
            break;
        }
        case Task::Segment: {
            data::Phantom ph = data::synth_phantom(cfg.network.input_dims, cfg.n_blobs, cfg.seed);
            io::write_volume(dir + "/volume.frv", ph.volume);
            io::write_labels(dir + "/labels.frv", ph.labels);
            std::cout << "wrote volume.frv and labels.frv to " << dir << "\n";
            break;
        }
    }
    return 0;
}

int cmd_info(const CommonFlags& f) {
    RunConfig cfg = resolve_config(f);
    auto net = build_network(cfg);
    std::cout << "task: " << task_name(cfg.task) << "\n";
    std::cout << "stages: " << cfg.network.n_stages << ", base channels "
              << cfg.network.base_channels << "\n";
    std::cout << "stage kinds:";
    for (int s = 0; s < cfg.network.n_stages; ++s)
        std::cout << " " << block_kind_name(cfg.network.stage_kinds[static_cast<std::size_t>(s)]);
    std::cout << "\n";
    std::cout << "input dims: " << cfg.network.input_dims[0] << "x" << cfg.network.input_dims[1]
              << "x" << cfg.network.input_dims[2] << " (padded to multiples of "
              << cfg.network.pad_multiple() << ")\n";
    std::cout << "channel ladder:";
    for (int s = 1; s <= cfg.network.n_stages; ++s)
        std::cout << " " << cfg.network.stage_channels(s);
    std::cout << "\n";
    std::cout << "parameters: " << net->param_count() << "\n";
    if (cfg.task == Task::Restore) {
        Discriminator disc(2 * cfg.network.in_channels, cfg.seed, DType::F32);
        std::cout << "discriminator parameters: " << disc.param_count() << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"full-resolution hierarchical MLP framework for 3D dense prediction"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string ckpt_path;
    std::string scope = "all";
    bool use_f64 = false;

    CLI::App* train_cmd = app.add_subcommand("train", "train a network on synthetic volumes");
    add_common(train_cmd, flags);

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on held-out volumes");
    add_common(eval_cmd, flags);
    eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();

    CLI::App* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suites");
    add_common(grad_cmd, flags);
    grad_cmd->add_option("--scope", scope, "ops | blocks | networks | losses | all");
    grad_cmd->add_flag("--f64", use_f64, "run at double precision");

    CLI::App* synth_cmd = app.add_subcommand("synth", "write synthetic volumes as FRV1 files");
    add_common(synth_cmd, flags);

    CLI::App* info_cmd = app.add_subcommand("info", "print network configuration and parameter count");
    add_common(info_cmd, flags);

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return cmd_train(flags);
        if (eval_cmd->parsed()) return cmd_eval(flags, ckpt_path);
        if (grad_cmd->parsed()) return cmd_gradcheck(flags, scope, use_f64);
        if (synth_cmd->parsed()) return cmd_synth(flags);
        if (info_cmd->parsed()) return cmd_info(flags);
    } catch (const frmlp::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
