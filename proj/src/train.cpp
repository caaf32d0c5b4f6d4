#include "frmlp/train.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "frmlp/objectives.hpp"

namespace frmlp {

namespace {

// Seed streams so training, validation and held-out data never overlap.
constexpr std::uint64_t kTrainStream = 0x1000;
constexpr std::uint64_t kValStream = 0x2000;
constexpr std::uint64_t kEvalStream = 0x3000;
constexpr std::uint64_t kNoiseStream = 0x4000;

std::uint64_t case_seed(const RunConfig& cfg, std::uint64_t stream, std::uint64_t index) {
    return cfg.seed * 0x9e3779b97f4a7c15ULL + stream * 0x100000001b3ULL + index;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(9);
    os << v;
    return os.str();
}

Tensor concat_pair(const Tensor& a, const Tensor& b) {
    std::array<Tensor, 2> parts{a, b};
    return ops::concat(std::span<const Tensor>(parts.data(), 2), 0);
}

}  // namespace

std::unique_ptr<Network> build_network(const RunConfig& cfg, DType dt) {
    return std::make_unique<Network>(cfg.network, cfg.seed, dt);
}

void load_params(nn::ParamStore& params, const io::Checkpoint& ckpt) {
    for (const auto& [name, p] : params.entries()) {
        Tensor stored = ckpt.find(name);
        if (stored.dims() != p.dims() || stored.dtype() != p.dtype())
            throw FormatError("checkpoint tensor " + name + " does not match the network", 0);
        Tensor dst = p;
        std::memcpy(dst.impl()->data.data(), stored.impl()->data.data(),
                    stored.impl()->data.size());
    }
}

io::Checkpoint snapshot(const RunConfig& cfg, const nn::ParamStore& params,
                        const std::vector<std::pair<std::string, Tensor>>& opt_state,
                        std::int64_t iteration, std::int64_t opt_step) {
    io::Checkpoint ckpt;
    ckpt.config_hash = config_hash(cfg);
    ckpt.iteration = iteration;
    ckpt.optimizer_step = opt_step;
    for (const auto& [name, t] : params.entries()) ckpt.tensors.emplace_back(name, t.clone());
    for (const auto& [name, t] : opt_state) ckpt.tensors.emplace_back(name, t.clone());
    return ckpt;
}

data::Phantom train_phantom(const RunConfig& cfg, int index) {
    return data::synth_phantom(cfg.network.input_dims, cfg.n_blobs,
                               case_seed(cfg, kTrainStream, static_cast<std::uint64_t>(index)));
}
data::Phantom val_phantom(const RunConfig& cfg, int index) {
    return data::synth_phantom(cfg.network.input_dims, cfg.n_blobs,
                               case_seed(cfg, kValStream, static_cast<std::uint64_t>(index)));
}
data::Phantom eval_phantom(const RunConfig& cfg, int index) {
    return data::synth_phantom(cfg.network.input_dims, cfg.n_blobs,
                               case_seed(cfg, kEvalStream, static_cast<std::uint64_t>(index)));
}
data::RegistrationPair train_reg_pair(const RunConfig& cfg, std::uint64_t index) {
    return data::synth_registration_pair(cfg.network.input_dims, cfg.reg_amplitude,
                                         case_seed(cfg, kTrainStream, index), cfg.n_blobs,
                                         cfg.reg_sigma);
}
data::RegistrationPair val_reg_pair(const RunConfig& cfg, int index) {
    return data::synth_registration_pair(cfg.network.input_dims, cfg.reg_amplitude,
                                         case_seed(cfg, kValStream, static_cast<std::uint64_t>(index)),
                                         cfg.n_blobs, cfg.reg_sigma);
}
data::RegistrationPair eval_reg_pair(const RunConfig& cfg, int index) {
    return data::synth_registration_pair(
        cfg.network.input_dims, cfg.reg_amplitude,
        case_seed(cfg, kEvalStream, static_cast<std::uint64_t>(index)), cfg.n_blobs, cfg.reg_sigma);
}

Tensor labels_to_onehot(const LabelMap& labels, DType dt) {
    Tensor t = Tensor::zeros({1, labels.dims[0], labels.dims[1], labels.dims[2]}, dt);
    for (std::int64_t i = 0; i < t.numel(); ++i)
        if (labels.values[static_cast<std::size_t>(i)] != 0) t.set_value_at(i, 1.0);
    return t;
}

LabelMap logits_to_labels(const Tensor& logits) {
    if (logits.rank() != 4 || logits.dim(0) != 1)
        throw ShapeError("logits_to_labels expects a single-channel [1,H,W,D] map");
    LabelMap m;
    m.dims = {logits.dim(1), logits.dim(2), logits.dim(3)};
    m.values.resize(static_cast<std::size_t>(m.numel()));
    for (std::int64_t i = 0; i < logits.numel(); ++i)
        m.values[static_cast<std::size_t>(i)] = logits.value_at(i) > 0.0 ? 1 : 0;  // sigmoid > 0.5
    return m;
}

namespace {

struct BestTracker {
    double metric = -std::numeric_limits<double>::infinity();
    int iteration = -1;
    io::Checkpoint ckpt;

    void offer(double value, int iter, io::Checkpoint snap) {
        if (value > metric) {
            metric = value;
            iteration = iter;
            ckpt = std::move(snap);
        }
    }
};

void check_finite(double loss, int iter) {
    if (!std::isfinite(loss))
        throw DomainError("non-finite loss at iteration " + std::to_string(iter));
}

TrainResult finish(const RunConfig& cfg, BestTracker& best, std::ostringstream& log) {
    TrainResult result;
    result.checkpoint = std::move(best.ckpt);
    result.best_val_metric = best.metric;
    result.best_iteration = best.iteration;
    log << "best iter=" << best.iteration << " metric=" << fmt(best.metric) << "\n";
    result.log = log.str();
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        std::ofstream f(cfg.out_dir + "/train_log.txt");
        f << result.log;
    }
    return result;
}

TrainResult train_restore(const RunConfig& cfg) {
    auto net = build_network(cfg);
    Discriminator disc(2 * cfg.network.in_channels, cfg.seed ^ 0xD15C, DType::F32);
    Adam opt_g(net->params(), {cfg.lr, cfg.adam_beta1, cfg.adam_beta2, 1e-8});
    Adam opt_d(disc.params(), {cfg.lr, cfg.adam_beta1, cfg.adam_beta2, 1e-8});

    struct Sample {
        Tensor clean, noisy;
    };
    std::vector<Sample> train_set, val_set;
    for (int i = 0; i < cfg.train_cases; ++i) {
        data::Phantom ph = train_phantom(cfg, i);
        Tensor noisy = data::synth_low_dose(ph.volume, cfg.drf,
                                            case_seed(cfg, kNoiseStream, static_cast<std::uint64_t>(i)),
                                            cfg.counts_full_dose);
        train_set.push_back({ph.volume, noisy});
    }
    for (int i = 0; i < cfg.val_cases; ++i) {
        data::Phantom ph = val_phantom(cfg, i);
        Tensor noisy = data::synth_low_dose(
            ph.volume, cfg.drf, case_seed(cfg, kValStream + kNoiseStream, static_cast<std::uint64_t>(i)),
            cfg.counts_full_dose);
        val_set.push_back({ph.volume, noisy});
    }

    Rng order_rng = make_rng(cfg.seed, 0xBA7C);
    std::ostringstream log;
    BestTracker best;
    int stall = 0;
    double last_val = -std::numeric_limits<double>::infinity();

    for (int iter = 1; iter <= cfg.iterations; ++iter) {
        double g_total = 0.0, d_total = 0.0;
        std::vector<Tensor> fakes;
        std::vector<const Sample*> batch;
        std::uniform_int_distribution<std::size_t> pick(0, train_set.size() - 1);
        for (int b = 0; b < cfg.batch_size; ++b) batch.push_back(&train_set[pick(order_rng)]);

        // Generator step (per-sample backward keeps one graph alive at a time).
        opt_g.zero_grad();
        for (const Sample* s : batch) {
            Tensor pred = net->forward(s->noisy);
            Tensor d_fake = disc.forward(concat_pair(s->noisy, pred));
            Tensor loss = ops::scale(restoration_loss(pred, s->clean, d_fake, cfg.loss),
                                     1.0 / cfg.batch_size);
            g_total += loss.item() * cfg.batch_size;
            loss.backward();
            fakes.push_back(pred.detach());
        }
        check_finite(g_total, iter);
        opt_g.step();

        // Discriminator step with detached fakes, alternating 1:1.
        opt_d.zero_grad();
        for (std::size_t b = 0; b < batch.size(); ++b) {
            Tensor d_real = disc.forward(concat_pair(batch[b]->noisy, batch[b]->clean));
            Tensor d_fake = disc.forward(concat_pair(batch[b]->noisy, fakes[b]));
            Tensor loss = ops::scale(lsgan_d_loss(d_real, d_fake), 1.0 / cfg.batch_size);
            d_total += loss.item() * cfg.batch_size;
            loss.backward();
        }
        check_finite(d_total, iter);
        opt_d.step();

        log << "iter=" << iter << " loss_g=" << fmt(g_total / cfg.batch_size)
            << " loss_d=" << fmt(d_total / cfg.batch_size) << " lr=" << fmt(opt_g.lr()) << "\n";

        if (iter % cfg.val_interval == 0 || iter == cfg.iterations) {
            NoGradGuard ng;
            double mean_psnr = 0.0;
            for (const Sample& s : val_set)
                mean_psnr += metrics::psnr(net->forward(s.noisy), s.clean);
            mean_psnr /= static_cast<double>(val_set.size());
            log << "val iter=" << iter << " psnr=" << fmt(mean_psnr) << "\n";
            best.offer(mean_psnr, iter,
                       snapshot(cfg, net->params(), opt_g.state(), iter, opt_g.steps_taken()));
            // Plateau schedule with early stop on vanishing lr.
            if (mean_psnr <= last_val) {
                if (++stall >= cfg.plateau_patience) {
                    opt_g.set_lr(opt_g.lr() * cfg.plateau_factor);
                    opt_d.set_lr(opt_d.lr() * cfg.plateau_factor);
                    stall = 0;
                    if (opt_g.lr() < cfg.min_lr) {
                        log << "early stop iter=" << iter << " lr=" << fmt(opt_g.lr()) << "\n";
                        break;
                    }
                }
            } else {
                stall = 0;
            }
            last_val = std::max(last_val, mean_psnr);
        }
    }
    return finish(cfg, best, log);
}

TrainResult train_register(const RunConfig& cfg) {
    auto net = build_network(cfg);
    Adam opt(net->params(), {cfg.lr, cfg.adam_beta1, cfg.adam_beta2, 1e-8});

    std::vector<data::RegistrationPair> val_set;
    for (int i = 0; i < cfg.val_cases; ++i) val_set.push_back(val_reg_pair(cfg, i));

    std::ostringstream log;
    BestTracker best;
    std::uint64_t pair_index = 0;

    for (int iter = 1; iter <= cfg.iterations; ++iter) {
        opt.zero_grad();
        double total = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            data::RegistrationPair pair = train_reg_pair(cfg, pair_index++);
            Tensor u = net->forward(concat_pair(pair.moving, pair.fixed));
            Tensor loss = ops::scale(registration_loss(pair.fixed, pair.moving, u, cfg.loss),
                                     1.0 / cfg.batch_size);
            total += loss.item() * cfg.batch_size;
            loss.backward();
        }
        check_finite(total, iter);
        opt.step();
        log << "iter=" << iter << " loss=" << fmt(total / cfg.batch_size) << " lr=" << fmt(opt.lr())
            << "\n";

        if (iter % cfg.val_interval == 0 || iter == cfg.iterations) {
            NoGradGuard ng;
            double mean_dsc = 0.0;
            for (const data::RegistrationPair& pair : val_set) {
                Tensor u = net->forward(concat_pair(pair.moving, pair.fixed));
                LabelMap warped = warp_nearest(pair.moving_mask, u);
                mean_dsc += metrics::dsc(pair.fixed_mask, warped, {1});
            }
            mean_dsc /= static_cast<double>(val_set.size());
            log << "val iter=" << iter << " dsc=" << fmt(mean_dsc) << "\n";
            best.offer(mean_dsc, iter,
                       snapshot(cfg, net->params(), opt.state(), iter, opt.steps_taken()));
        }
    }
    return finish(cfg, best, log);
}

TrainResult train_segment(const RunConfig& cfg) {
    auto net = build_network(cfg);
    Adam opt(net->params(), {cfg.lr, cfg.adam_beta1, cfg.adam_beta2, 1e-8});

    struct Sample {
        Tensor volume, onehot;
        LabelMap labels;
    };
    std::vector<Sample> train_set;
    std::vector<Sample> val_set;
    for (int i = 0; i < cfg.train_cases; ++i) {
        data::Phantom ph = train_phantom(cfg, i);
        train_set.push_back({ph.volume, labels_to_onehot(ph.labels), ph.labels});
    }
    for (int i = 0; i < cfg.val_cases; ++i) {
        data::Phantom ph = val_phantom(cfg, i);
        val_set.push_back({ph.volume, labels_to_onehot(ph.labels), ph.labels});
    }

    Rng order_rng = make_rng(cfg.seed, 0x5E6);
    std::ostringstream log;
    BestTracker best;

    for (int iter = 1; iter <= cfg.iterations; ++iter) {
        // Step schedule: lr resets at one third and two thirds of the budget.
        if (iter == cfg.iterations / 3 + 1)
            opt.set_lr(cfg.step_lr2);
        else if (iter == 2 * cfg.iterations / 3 + 1)
            opt.set_lr(cfg.step_lr3);

        opt.zero_grad();
        double total = 0.0;
        std::uniform_int_distribution<std::size_t> pick(0, train_set.size() - 1);
        for (int b = 0; b < cfg.batch_size; ++b) {
            const Sample& s = train_set[pick(order_rng)];
            Tensor logits = net->forward(s.volume);
            Tensor loss =
                ops::scale(segmentation_loss(logits, s.onehot, cfg.loss), 1.0 / cfg.batch_size);
            total += loss.item() * cfg.batch_size;
            loss.backward();
        }
        check_finite(total, iter);
        opt.step();
        log << "iter=" << iter << " loss=" << fmt(total / cfg.batch_size) << " lr=" << fmt(opt.lr())
            << "\n";

        if (iter % cfg.val_interval == 0 || iter == cfg.iterations) {
            NoGradGuard ng;
            double mean_dsc = 0.0;
            for (const Sample& s : val_set) {
                LabelMap pred = logits_to_labels(net->forward(s.volume));
                mean_dsc += metrics::dsc(s.labels, pred, {1});
            }
            mean_dsc /= static_cast<double>(val_set.size());
            log << "val iter=" << iter << " dsc=" << fmt(mean_dsc) << "\n";
            best.offer(mean_dsc, iter,
                       snapshot(cfg, net->params(), opt.state(), iter, opt.steps_taken()));
        }
    }
    return finish(cfg, best, log);
}

}  // namespace

TrainResult train(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.iterations == 0) {
        // Zero-budget runs return the initialization.
        auto net = build_network(cfg);
        Adam opt(net->params(), {cfg.lr, cfg.adam_beta1, cfg.adam_beta2, 1e-8});
        std::ostringstream log;
        BestTracker best;
        best.offer(0.0, 0, snapshot(cfg, net->params(), opt.state(), 0, 0));
        return finish(cfg, best, log);
    }
    switch (cfg.task) {
        case Task::Restore: return train_restore(cfg);
        case Task::Register: return train_register(cfg);
        case Task::Segment: return train_segment(cfg);
    }
    throw ConfigError("unknown task");
}

metrics::MetricReport evaluate(const io::Checkpoint& ckpt, const RunConfig& cfg) {
    cfg.validate();
    auto net = build_network(cfg);
    load_params(net->params(), ckpt);
    NoGradGuard ng;

    metrics::MetricReport report;
    report.task = task_name(cfg.task);
    report.metadata["iteration"] = std::to_string(ckpt.iteration);
    report.metadata["dims"] = shape_str({cfg.network.input_dims[0], cfg.network.input_dims[1],
                                         cfg.network.input_dims[2]});

    auto add_aggregate = [&](const std::string& name, double total, int count) {
        report.aggregate[name] = total / static_cast<double>(count);
    };

    switch (cfg.task) {
        case Task::Restore: {
            const std::array<double, 5> drfs{100, 50, 20, 10, 4};  // weighted-score order
            std::array<double, 5> psnr_by_drf{}, ssim_by_drf{}, nrmse_by_drf{};
            for (std::size_t di = 0; di < drfs.size(); ++di) {
                double psnr_acc = 0, ssim_acc = 0, nrmse_acc = 0;
                for (int i = 0; i < cfg.eval_cases; ++i) {
                    data::Phantom ph = eval_phantom(cfg, i);
                    Tensor noisy = data::synth_low_dose(
                        ph.volume, drfs[di],
                        case_seed(cfg, kEvalStream + kNoiseStream,
                                  static_cast<std::uint64_t>(i) * 16 + di),
                        cfg.counts_full_dose);
                    Tensor pred = net->forward(noisy);
                    const std::string case_id =
                        "case" + std::to_string(i) + "_drf" + std::to_string(int(drfs[di]));
                    const double p = metrics::psnr(pred, ph.volume);
                    const double s = metrics::ssim(pred, ph.volume, 1.0);
                    const double e = metrics::nrmse(pred, ph.volume);
                    report.records.push_back({case_id, "psnr", "", p});
                    report.records.push_back({case_id, "ssim", "", s});
                    report.records.push_back({case_id, "nrmse", "", e});
                    psnr_acc += p;
                    ssim_acc += s;
                    nrmse_acc += e;
                }
                psnr_by_drf[di] = psnr_acc / cfg.eval_cases;
                ssim_by_drf[di] = ssim_acc / cfg.eval_cases;
                nrmse_by_drf[di] = nrmse_acc / cfg.eval_cases;
                const std::string suffix = "_drf" + std::to_string(int(drfs[di]));
                report.aggregate["psnr" + suffix] = psnr_by_drf[di];
                report.aggregate["ssim" + suffix] = ssim_by_drf[di];
                report.aggregate["nrmse" + suffix] = nrmse_by_drf[di];
            }
            report.aggregate["psnr_weighted"] = metrics::weighted_score(psnr_by_drf);
            report.aggregate["ssim_weighted"] = metrics::weighted_score(ssim_by_drf);
            report.aggregate["nrmse_weighted"] = metrics::weighted_score(nrmse_by_drf);
            break;
        }
        case Task::Register: {
            double dsc_acc = 0, njd_acc = 0, time_acc = 0;
            for (int i = 0; i < cfg.eval_cases; ++i) {
                data::RegistrationPair pair = eval_reg_pair(cfg, i);
                const auto t0 = std::chrono::steady_clock::now();
                Tensor u = net->forward(concat_pair(pair.moving, pair.fixed));
                const auto t1 = std::chrono::steady_clock::now();
                LabelMap warped = warp_nearest(pair.moving_mask, u);
                const double d = metrics::dsc(pair.fixed_mask, warped, {1});
                const double nj = metrics::njd(u);
                const double secs = std::chrono::duration<double>(t1 - t0).count();
                const std::string case_id = "case" + std::to_string(i);
                report.records.push_back({case_id, "dsc", "1", d});
                report.records.push_back({case_id, "njd_percent", "", nj});
                report.records.push_back({case_id, "seconds", "", secs});
                dsc_acc += d;
                njd_acc += nj;
                time_acc += secs;
            }
            add_aggregate("dsc", dsc_acc, cfg.eval_cases);
            add_aggregate("njd_percent", njd_acc, cfg.eval_cases);
            add_aggregate("seconds", time_acc, cfg.eval_cases);
            break;
        }
        case Task::Segment: {
            double dsc_acc = 0, hd_acc = 0;
            for (int i = 0; i < cfg.eval_cases; ++i) {
                data::Phantom ph = eval_phantom(cfg, i);
                LabelMap pred = logits_to_labels(net->forward(ph.volume));
                const double d = metrics::dsc(ph.labels, pred, {1});
                double h;
                try {
                    h = metrics::hd95(pred, ph.labels);
                } catch (const DomainError&) {
                    h = std::numeric_limits<double>::infinity();  // empty prediction
                }
                const std::string case_id = "case" + std::to_string(i);
                report.records.push_back({case_id, "dsc", "1", d});
                report.records.push_back({case_id, "hd95", "1", h});
                dsc_acc += d;
                hd_acc += h;
            }
            add_aggregate("dsc", dsc_acc, cfg.eval_cases);
            add_aggregate("hd95", hd_acc, cfg.eval_cases);
            break;
        }
    }

    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        std::ofstream t(cfg.out_dir + "/report.txt");
        t << report.to_text();
        std::ofstream j(cfg.out_dir + "/report.json");
        j << report.to_json();
    }
    return report;
}

}  // namespace frmlp
