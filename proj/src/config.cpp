#include "frmlp/config.hpp"

#include <set>

#include "json.hpp"

#include "frmlp/checkpoint.hpp"

namespace frmlp {

using nlohmann::json;

void RunConfig::validate() const {
    network.validate();
    loss.validate();
    if (lr <= 0 || min_lr <= 0 || step_lr2 <= 0 || step_lr3 <= 0)
        throw ConfigError("learning rates must be positive");
    if (batch_size < 1 || iterations < 0 || val_interval < 1)
        throw ConfigError("batch size, iterations and validation cadence must be positive");
    if (plateau_factor <= 0 || plateau_factor >= 1) throw ConfigError("plateau factor must be in (0,1)");
    if (plateau_patience < 1) throw ConfigError("plateau patience must be >= 1");
    if (n_blobs < 0 || train_cases < 1 || val_cases < 1 || eval_cases < 1)
        throw ConfigError("dataset sizes must be positive");
    if (drf <= 0 || counts_full_dose <= 0) throw ConfigError("dose parameters must be positive");
    if (reg_amplitude < 0 || reg_sigma <= 0) throw ConfigError("field parameters invalid");
    if (network.task != task) throw ConfigError("network task must match the run task");
}

RunConfig default_config(Task task) {
    RunConfig cfg;
    cfg.task = task;
    cfg.network.task = task;
    switch (task) {
        case Task::Restore:
            // lr 2e-4 with plateau decay x0.1; desk-scale network on 24^3 inputs.
            cfg.lr = 2e-4;
            cfg.batch_size = 2;
            cfg.iterations = 300;
            cfg.val_interval = 25;
            cfg.network.n_stages = 3;
            cfg.network.input_dims = {24, 24, 24};
            cfg.network.in_channels = 1;
            cfg.network.out_channels = 1;
            break;
        case Task::Register:
            cfg.lr = 1e-4;
            cfg.batch_size = 2;
            cfg.iterations = 600;
            cfg.val_interval = 50;
            cfg.network.n_stages = 5;
            cfg.network.input_dims = {32, 32, 32};
            cfg.network.in_channels = 2;
            cfg.network.out_channels = 3;
            break;
        case Task::Segment:
            cfg.lr = 1e-4;
            cfg.batch_size = 2;
            cfg.iterations = 240;
            cfg.val_interval = 20;
            cfg.network.n_stages = 5;
            cfg.network.input_dims = {32, 32, 32};
            cfg.network.in_channels = 1;
            cfg.network.out_channels = 1;
            break;
    }
    return cfg;
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key))
            throw ConfigError("unknown config key '" + key + "' in " + where);
}

std::array<std::int64_t, 3> parse_dims(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3) throw ConfigError(where + " must be a 3-element array");
    return {j[0].get<std::int64_t>(), j[1].get<std::int64_t>(), j[2].get<std::int64_t>()};
}

}  // namespace

RunConfig parse_config_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(j, {"task", "network", "loss", "train", "data", "seed", "out_dir"}, "top level");

    RunConfig cfg = default_config(task_from_string(j.value("task", "restore")));
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();

    if (j.contains("network")) {
        const json& n = j["network"];
        check_keys(n,
                   {"stage_kinds", "n_stages", "in_channels", "out_channels", "base_channels",
                    "input_dims"},
                   "network");
        if (n.contains("n_stages")) cfg.network.n_stages = n["n_stages"].get<int>();
        if (n.contains("in_channels")) cfg.network.in_channels = n["in_channels"].get<std::int64_t>();
        if (n.contains("out_channels"))
            cfg.network.out_channels = n["out_channels"].get<std::int64_t>();
        if (n.contains("base_channels"))
            cfg.network.base_channels = n["base_channels"].get<std::int64_t>();
        if (n.contains("input_dims"))
            cfg.network.input_dims = parse_dims(n["input_dims"], "network.input_dims");
        if (n.contains("stage_kinds")) {
            const json& sk = n["stage_kinds"];
            if (!sk.is_array() || sk.size() != 5)
                throw ConfigError("network.stage_kinds must list five block kinds");
            for (std::size_t i = 0; i < 5; ++i)
                cfg.network.stage_kinds[i] = block_kind_from_string(sk[i].get<std::string>());
        }
    }
    if (j.contains("loss")) {
        const json& l = j["loss"];
        check_keys(l, {"lambda1", "lambda2", "lambda_reg", "focal_alpha", "focal_gamma",
                       "ncc_window"},
                   "loss");
        if (l.contains("lambda1")) cfg.loss.lambda1 = l["lambda1"].get<double>();
        if (l.contains("lambda2")) cfg.loss.lambda2 = l["lambda2"].get<double>();
        if (l.contains("lambda_reg")) cfg.loss.lambda_reg = l["lambda_reg"].get<double>();
        if (l.contains("focal_alpha")) cfg.loss.focal_alpha = l["focal_alpha"].get<double>();
        if (l.contains("focal_gamma")) cfg.loss.focal_gamma = l["focal_gamma"].get<double>();
        if (l.contains("ncc_window")) cfg.loss.ncc_window = l["ncc_window"].get<int>();
    }
    if (j.contains("train")) {
        const json& t = j["train"];
        check_keys(t,
                   {"lr", "adam_beta1", "adam_beta2", "batch_size", "iterations", "val_interval",
                    "plateau_factor", "plateau_patience", "min_lr", "step_lr2", "step_lr3"},
                   "train");
        if (t.contains("lr")) cfg.lr = t["lr"].get<double>();
        if (t.contains("adam_beta1")) cfg.adam_beta1 = t["adam_beta1"].get<double>();
        if (t.contains("adam_beta2")) cfg.adam_beta2 = t["adam_beta2"].get<double>();
        if (t.contains("batch_size")) cfg.batch_size = t["batch_size"].get<int>();
        if (t.contains("iterations")) cfg.iterations = t["iterations"].get<int>();
        if (t.contains("val_interval")) cfg.val_interval = t["val_interval"].get<int>();
        if (t.contains("plateau_factor")) cfg.plateau_factor = t["plateau_factor"].get<double>();
        if (t.contains("plateau_patience")) cfg.plateau_patience = t["plateau_patience"].get<int>();
        if (t.contains("min_lr")) cfg.min_lr = t["min_lr"].get<double>();
        if (t.contains("step_lr2")) cfg.step_lr2 = t["step_lr2"].get<double>();
        if (t.contains("step_lr3")) cfg.step_lr3 = t["step_lr3"].get<double>();
    }
    if (j.contains("data")) {
        const json& d = j["data"];
        check_keys(d,
                   {"n_blobs", "drf", "counts_full_dose", "reg_amplitude", "reg_sigma",
                    "train_cases", "val_cases", "eval_cases"},
                   "data");
        if (d.contains("n_blobs")) cfg.n_blobs = d["n_blobs"].get<int>();
        if (d.contains("drf")) cfg.drf = d["drf"].get<double>();
        if (d.contains("counts_full_dose"))
            cfg.counts_full_dose = d["counts_full_dose"].get<double>();
        if (d.contains("reg_amplitude")) cfg.reg_amplitude = d["reg_amplitude"].get<double>();
        if (d.contains("reg_sigma")) cfg.reg_sigma = d["reg_sigma"].get<double>();
        if (d.contains("train_cases")) cfg.train_cases = d["train_cases"].get<int>();
        if (d.contains("val_cases")) cfg.val_cases = d["val_cases"].get<int>();
        if (d.contains("eval_cases")) cfg.eval_cases = d["eval_cases"].get<int>();
    }
    cfg.validate();
    return cfg;
}

std::string config_to_json(const RunConfig& cfg) {
    json n;
    json kinds = json::array();
    for (BlockKind k : cfg.network.stage_kinds) kinds.push_back(block_kind_name(k));
    n["stage_kinds"] = kinds;
    n["n_stages"] = cfg.network.n_stages;
    n["in_channels"] = cfg.network.in_channels;
    n["out_channels"] = cfg.network.out_channels;
    n["base_channels"] = cfg.network.base_channels;
    n["input_dims"] = {cfg.network.input_dims[0], cfg.network.input_dims[1],
                       cfg.network.input_dims[2]};

    json l;
    l["lambda1"] = cfg.loss.lambda1;
    l["lambda2"] = cfg.loss.lambda2;
    l["lambda_reg"] = cfg.loss.lambda_reg;
    l["focal_alpha"] = cfg.loss.focal_alpha;
    l["focal_gamma"] = cfg.loss.focal_gamma;
    l["ncc_window"] = cfg.loss.ncc_window;

    json t;
    t["lr"] = cfg.lr;
    t["adam_beta1"] = cfg.adam_beta1;
    t["adam_beta2"] = cfg.adam_beta2;
    t["batch_size"] = cfg.batch_size;
    t["iterations"] = cfg.iterations;
    t["val_interval"] = cfg.val_interval;
    t["plateau_factor"] = cfg.plateau_factor;
    t["plateau_patience"] = cfg.plateau_patience;
    t["min_lr"] = cfg.min_lr;
    t["step_lr2"] = cfg.step_lr2;
    t["step_lr3"] = cfg.step_lr3;

    json d;
    d["n_blobs"] = cfg.n_blobs;
    d["drf"] = cfg.drf;
    d["counts_full_dose"] = cfg.counts_full_dose;
    d["reg_amplitude"] = cfg.reg_amplitude;
    d["reg_sigma"] = cfg.reg_sigma;
    d["train_cases"] = cfg.train_cases;
    d["val_cases"] = cfg.val_cases;
    d["eval_cases"] = cfg.eval_cases;

    json j;
    j["task"] = task_name(cfg.task);
    j["network"] = n;
    j["loss"] = l;
    j["train"] = t;
    j["data"] = d;
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;
    return j.dump(2);
}

std::uint32_t config_hash(const RunConfig& cfg) { return io::fingerprint(config_to_json(cfg)); }

std::array<BlockKind, 5> parse_stage_code(const std::string& code, BlockKind mlp_kind) {
    if (code.size() != 5) throw ConfigError("stage code must have five letters, e.g. PPPPP");
    std::array<BlockKind, 5> kinds;
    for (std::size_t i = 0; i < 5; ++i) {
        switch (code[i]) {
            case 'P': kinds[i] = mlp_kind; break;
            case 'C': kinds[i] = BlockKind::Conv; break;
            case 'T':
                throw ConfigError("stage code 'T' (windowed self-attention) is not part of this build");
            default:
                throw ConfigError(std::string("unknown stage code letter '") + code[i] + "'");
        }
    }
    return kinds;
}

}  // namespace frmlp
