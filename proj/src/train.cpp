#include "astromae/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "astromae/checkpoint.hpp"
#include "astromae/data.hpp"
#include "astromae/optim.hpp"
#include "astromae/zoo.hpp"
#include "json.hpp"

namespace astromae {

namespace {

namespace fs = std::filesystem;
using F = float;

enum StreamTag : std::uint64_t {
    kInit = 1,
    kShuffle = 2,
    kAug = 3,
    kMask = 4,
    kValMask = 5,
};

VitConfig vit_config_from(const RunConfig& cfg, BlockKind kind) {
    VitConfig vc;
    vc.img_size = cfg.crop;
    vc.in_chans = 5;
    vc.patch = cfg.patch;
    vc.embed_dim = cfg.embed_dim;
    vc.depth = cfg.enc_depth;
    vc.heads = cfg.heads;
    vc.kind = kind;
    return vc;
}

BlockKind pretrain_kind(const std::string& variant) {
    if (variant == "plain") return BlockKind::Plain;
    if (variant == "pcm") return BlockKind::Pcm;
    return variant_block_kind(variant_from_string(variant));
}

void prepare_run_dir(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    std::ofstream os(fs::path(cfg.out_dir) / "config.resolved");
    if (!os) throw DataError("cannot write resolved config under '" + cfg.out_dir + "'");
    os << cfg.resolve_text();
}

// Machine-parseable per-epoch log, mirrored to stdout and out/log.txt.
class RunLog {
public:
    explicit RunLog(const std::string& out_dir, bool truncate)
        : file_(fs::path(out_dir) / "log.txt",
                truncate ? std::ios::trunc : std::ios::app) {
        if (!file_) throw DataError("cannot open log under '" + out_dir + "'");
    }
    void epoch_line(std::int64_t epoch, double lr, double train_loss, double val_loss) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "epoch=%lld lr=%.9g train_loss=%.9g val_loss=%.9g",
                      static_cast<long long>(epoch), lr, train_loss, val_loss);
        file_ << buf << "\n";
        file_.flush();
        std::printf("%s\n", buf);
        std::fflush(stdout);
    }

private:
    std::ofstream file_;
};

// Cropped, normalized tensors for one phase. The pretraining variant of this
// struct intentionally carries images only, so the pretraining loop cannot
// read labels or magnitudes.
struct PretrainData {
    std::vector<std::vector<F>> images;  // dataset order
    DatasetSplit split;
    NormStats stats;
    std::int64_t crop = 0;
};

struct FinetuneData {
    std::vector<std::vector<F>> images;
    std::vector<std::array<F, 5>> mags;  // standardized
    std::vector<double> z;
    DatasetSplit split;
    NormStats stats;
    std::array<double, 5> mag_mean{}, mag_std{};
    std::int64_t crop = 0;
};

Dataset load_and_check(const RunConfig& cfg) {
    if (cfg.data_path.empty()) throw ConfigError("no dataset given (use --data)");
    Dataset ds = load_dataset(cfg.data_path);
    if (ds.channels != 5) throw DataError("expected a 5-band dataset");
    if (cfg.crop > ds.height || cfg.crop > ds.width) {
        throw ConfigError("crop " + std::to_string(cfg.crop) + " exceeds stored images");
    }
    return ds;
}

std::vector<std::vector<F>> crop_all(const Dataset& ds, std::int64_t crop) {
    std::vector<std::vector<F>> images(ds.samples.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        images[i] = center_crop(ds.samples[i].image, ds.channels, ds.height, ds.width, crop);
    }
    return images;
}

NormStats stats_over(const std::vector<std::vector<F>>& images,
                     const std::vector<std::int64_t>& subset, std::int64_t hw) {
    std::vector<std::vector<F>> train_imgs;
    train_imgs.reserve(subset.size());
    for (std::int64_t i : subset) train_imgs.push_back(images[static_cast<std::size_t>(i)]);
    return compute_norm_stats(train_imgs, 5, hw);
}

PretrainData prepare_pretrain(const RunConfig& cfg) {
    Dataset ds = load_and_check(cfg);
    PretrainData out;
    out.crop = cfg.crop;
    out.split = pretrain_split(ds.size(), cfg.seed);
    out.images = crop_all(ds, cfg.crop);
    out.stats = stats_over(out.images, out.split.train, cfg.crop * cfg.crop);
    for (auto& img : out.images) normalize_inplace(img, out.stats, 5, cfg.crop * cfg.crop);
    return out;
}

FinetuneData prepare_finetune(const RunConfig& cfg) {
    Dataset ds = load_and_check(cfg);
    FinetuneData out;
    out.crop = cfg.crop;
    out.split = split(ds.size(), cfg.seed);
    out.images = crop_all(ds, cfg.crop);
    out.stats = stats_over(out.images, out.split.train, cfg.crop * cfg.crop);
    for (auto& img : out.images) normalize_inplace(img, out.stats, 5, cfg.crop * cfg.crop);

    for (int b = 0; b < 5; ++b) {
        double sum = 0.0;
        for (std::int64_t i : out.split.train) sum += ds.samples[i].magnitudes[b];
        const double mean = sum / double(out.split.train.size());
        double sq = 0.0;
        for (std::int64_t i : out.split.train) {
            const double d = ds.samples[i].magnitudes[b] - mean;
            sq += d * d;
        }
        const double stddev = std::sqrt(sq / double(out.split.train.size()));
        if (stddev == 0.0) throw DegenerateDataError("magnitude band " + std::to_string(b) + " is constant");
        out.mag_mean[b] = mean;
        out.mag_std[b] = stddev;
    }
    out.mags.resize(ds.samples.size());
    out.z.resize(ds.samples.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        for (int b = 0; b < 5; ++b) {
            out.mags[i][b] = static_cast<F>((ds.samples[i].magnitudes[b] - out.mag_mean[b]) /
                                            out.mag_std[b]);
        }
        out.z[i] = ds.samples[i].z_spec;
    }
    return out;
}

TensorPtr<F> stack_images(const std::vector<std::vector<F>>& images, std::int64_t crop) {
    const std::int64_t n = static_cast<std::int64_t>(images.size());
    std::vector<F> data;
    data.reserve(static_cast<std::size_t>(n) * 5 * crop * crop);
    for (const auto& img : images) data.insert(data.end(), img.begin(), img.end());
    return Tensor<F>::from({n, 5, crop, crop}, std::move(data));
}

// ---------------------------------------------------------------------------
// checkpoint plumbing
// ---------------------------------------------------------------------------

ParamList<F> weights_only(const ParamList<F>& params) {
    ParamList<F> out;
    for (const auto& p : params) {
        if (!p.buffer) out.push_back(p);
    }
    return out;
}

Checkpoint export_encoder_with_dims(const MaeModel<F>& model, const RunConfig& cfg) {
    Checkpoint ckpt = export_encoder(model);
    ckpt.metadata["patch_size"] = std::to_string(cfg.patch);
    ckpt.metadata["embed_dim"] = std::to_string(cfg.embed_dim);
    ckpt.metadata["enc_depth"] = std::to_string(cfg.enc_depth);
    ckpt.metadata["heads"] = std::to_string(cfg.heads);
    ckpt.metadata["img_size"] = std::to_string(cfg.crop);
    return ckpt;
}

Checkpoint make_state_checkpoint(const ParamList<F>& all_params, const ParamList<F>& trainable,
                                 AdamW<F>& opt, std::int64_t epoch) {
    Checkpoint ckpt = snapshot_params(all_params);
    for (std::size_t i = 0; i < trainable.size(); ++i) {
        ckpt.entries.push_back({"adam.m." + trainable[i].name,
                                {trainable[i].tensor->shape, opt.moment1(i)}});
        ckpt.entries.push_back({"adam.v." + trainable[i].name,
                                {trainable[i].tensor->shape, opt.moment2(i)}});
    }
    ckpt.metadata["epoch"] = std::to_string(epoch);
    ckpt.metadata["adam_t"] = std::to_string(opt.step_count());
    return ckpt;
}

// Returns the next epoch to run.
std::int64_t restore_state(const std::string& path, const ParamList<F>& all_params,
                           const ParamList<F>& trainable, AdamW<F>& opt) {
    Checkpoint ckpt = load_checkpoint(path);
    restore_params(ckpt, all_params);
    for (std::size_t i = 0; i < trainable.size(); ++i) {
        const CheckpointEntry* m = ckpt.find("adam.m." + trainable[i].name);
        const CheckpointEntry* v = ckpt.find("adam.v." + trainable[i].name);
        if (!m || !v) throw DataError("resume checkpoint lacks optimizer state for " + trainable[i].name);
        opt.moment1(i) = m->data;
        opt.moment2(i) = v->data;
    }
    if (!ckpt.metadata.count("epoch") || !ckpt.metadata.count("adam_t")) {
        throw DataError("resume checkpoint lacks epoch metadata");
    }
    opt.set_step_count(std::stoll(ckpt.metadata.at("adam_t")));
    return std::stoll(ckpt.metadata.at("epoch")) + 1;
}

// ---------------------------------------------------------------------------
// pretraining
// ---------------------------------------------------------------------------

std::vector<MaskPlan> fixed_val_plans(const RunConfig& cfg, const PretrainData& data,
                                      std::int64_t tokens) {
    std::vector<MaskPlan> plans;
    plans.reserve(data.split.val.size());
    for (std::int64_t idx : data.split.val) {
        Rng rng(mix_seed({cfg.seed, kValMask, static_cast<std::uint64_t>(idx)}));
        plans.push_back(make_mask(tokens, cfg.mask_ratio, rng));
    }
    return plans;
}

double eval_recon_loss(const MaeModel<F>& model, const RunConfig& cfg, const PretrainData& data,
                       const std::vector<MaskPlan>& val_plans) {
    double loss_sum = 0.0;
    std::int64_t count = 0;
    const std::int64_t nval = static_cast<std::int64_t>(data.split.val.size());
    for (std::int64_t start = 0; start < nval; start += cfg.batch) {
        const std::int64_t bs = std::min(cfg.batch, nval - start);
        std::vector<std::vector<F>> imgs(bs);
        std::vector<MaskPlan> plans(bs);
        for (std::int64_t i = 0; i < bs; ++i) {
            imgs[i] = data.images[static_cast<std::size_t>(data.split.val[start + i])];
            plans[i] = val_plans[static_cast<std::size_t>(start + i)];
        }
        auto batch = stack_images(imgs, data.crop);
        auto recon = model.forward(batch, plans, /*training=*/false);
        auto orig = patchify(batch, cfg.patch).tokens;
        auto loss = reconstruction_loss(recon, orig, plans);
        loss_sum += double(loss->data[0]) * double(bs);
        count += bs;
    }
    return loss_sum / double(count);
}

}  // namespace

void cmd_gen_data(const RunConfig& cfg) {
    if (cfg.data_path.empty()) throw ConfigError("gen-data needs --data for the output file");
    prepare_run_dir(cfg);
    Dataset ds = generate_synthetic(cfg.n_samples, cfg.seed);
    const fs::path parent = fs::path(cfg.data_path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    save_dataset(ds, cfg.data_path);
    std::printf("gen-data: wrote %lld samples to %s\n", static_cast<long long>(ds.size()),
                cfg.data_path.c_str());
}

void cmd_pretrain(const RunConfig& cfg) {
    cfg.validate();
    prepare_run_dir(cfg);
    PretrainData data = prepare_pretrain(cfg);

    const BlockKind kind = pretrain_kind(cfg.variant);
    MaeConfig mc;
    mc.encoder = vit_config_from(cfg, kind);
    mc.decoder_depth = cfg.dec_depth;
    mc.decoder_heads = cfg.heads;
    mc.mask_ratio = cfg.mask_ratio;
    Rng init_rng(mix_seed({cfg.seed, kInit}));
    MaeModel<F> model(mc, init_rng);

    ParamList<F> all_params;
    model.collect(all_params);
    ParamList<F> trainable = weights_only(all_params);
    std::vector<TensorPtr<F>> opt_params;
    for (const auto& p : trainable) opt_params.push_back(p.tensor);
    AdamW<F>::Settings opt_settings;
    opt_settings.beta1 = static_cast<F>(cfg.beta1);
    opt_settings.beta2 = static_cast<F>(cfg.beta2);
    opt_settings.weight_decay = static_cast<F>(cfg.weight_decay);
    AdamW<F> opt(opt_params, opt_settings);

    std::int64_t start_epoch = 0;
    if (!cfg.resume.empty()) {
        start_epoch = restore_state(cfg.resume, all_params, trainable, opt);
    }
    RunLog log(cfg.out_dir, /*truncate=*/start_epoch == 0);

    ScheduleConfig sched;
    sched.kind = ScheduleKind::CosineWarmup;
    sched.lr_peak = cfg.lr_peak;
    sched.warmup_epochs = cfg.warmup_epochs;
    sched.total_epochs = cfg.epochs;

    const std::int64_t tokens = mc.encoder.tokens();
    const auto val_plans = fixed_val_plans(cfg, data, tokens);
    double best_val = std::numeric_limits<double>::infinity();
    const fs::path out(cfg.out_dir);

    for (std::int64_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_warmup_lr(epoch, sched);
        std::vector<std::int64_t> order = data.split.train;
        Rng shuffle_rng(mix_seed({cfg.seed, kShuffle, static_cast<std::uint64_t>(epoch)}));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::int64_t count = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::int64_t bs =
                std::min<std::int64_t>(cfg.batch, static_cast<std::int64_t>(order.size() - start));
            if (bs < 2) continue;  // batch-norm floor
            std::vector<std::vector<F>> imgs(bs);
            std::vector<MaskPlan> plans(bs);
            for (std::int64_t i = 0; i < bs; ++i) {
                const std::int64_t idx = order[start + i];
                imgs[i] = data.images[static_cast<std::size_t>(idx)];
                Rng aug_rng(mix_seed({cfg.seed, kAug, static_cast<std::uint64_t>(epoch),
                                      static_cast<std::uint64_t>(idx)}));
                augment_inplace(imgs[i], 5, data.crop, aug_rng, AugmentPhase::Pretrain, 0.0f);
                Rng mask_rng(mix_seed({cfg.seed, kMask, static_cast<std::uint64_t>(epoch),
                                       static_cast<std::uint64_t>(idx)}));
                plans[i] = make_mask(tokens, cfg.mask_ratio, mask_rng);
            }
            auto batch = stack_images(imgs, data.crop);
            Tape<F> tape;
            Tape<F>::Scope scope(tape);
            auto recon = model.forward(batch, plans, /*training=*/true);
            auto orig = patchify(batch, cfg.patch).tokens;
            auto loss = reconstruction_loss(recon, orig, plans);
            if (!std::isfinite(loss->data[0])) {
                throw NumericError("pretrain: non-finite loss at epoch " + std::to_string(epoch));
            }
            tape.backward(loss);
            opt.step(static_cast<F>(lr));
            opt.zero_grad();
            loss_sum += double(loss->data[0]) * double(bs);
            count += bs;
        }
        const double train_loss = loss_sum / double(count);
        const double val_loss = eval_recon_loss(model, cfg, data, val_plans);
        log.epoch_line(epoch, lr, train_loss, val_loss);

        if (val_loss < best_val) {
            best_val = val_loss;
            Checkpoint best = export_encoder_with_dims(model, cfg);
            best.metadata["epoch"] = std::to_string(epoch);
            save_checkpoint(best, (out / "encoder_best.amck").string());
        }
        save_checkpoint(make_state_checkpoint(all_params, trainable, opt, epoch),
                        (out / "state_last.amck").string());
    }
    Checkpoint final_ckpt = export_encoder_with_dims(model, cfg);
    final_ckpt.metadata["epoch"] = std::to_string(cfg.epochs - 1);
    save_checkpoint(final_ckpt, (out / "encoder_final.amck").string());
}

// ---------------------------------------------------------------------------
// fine-tuning / evaluation
// ---------------------------------------------------------------------------

namespace {

TensorPtr<F> stack_mags(const FinetuneData& data, const std::vector<std::int64_t>& idx) {
    std::vector<F> mags;
    mags.reserve(idx.size() * 5);
    for (std::int64_t i : idx) {
        const auto& m = data.mags[static_cast<std::size_t>(i)];
        mags.insert(mags.end(), m.begin(), m.end());
    }
    return Tensor<F>::from({static_cast<std::int64_t>(idx.size()), 5}, std::move(mags));
}

std::vector<double> predict(const FusionModel<F>& model, const FinetuneData& data,
                            const std::vector<std::int64_t>& idx, std::int64_t batch) {
    std::vector<double> preds;
    preds.reserve(idx.size());
    const std::int64_t n = static_cast<std::int64_t>(idx.size());
    for (std::int64_t start = 0; start < n; start += batch) {
        const std::int64_t bs = std::min(batch, n - start);
        std::vector<std::vector<F>> imgs(bs);
        std::vector<std::int64_t> sel(idx.begin() + start, idx.begin() + start + bs);
        for (std::int64_t i = 0; i < bs; ++i) {
            imgs[i] = data.images[static_cast<std::size_t>(sel[i])];
        }
        auto out = model.forward(stack_images(imgs, data.crop), stack_mags(data, sel),
                                 /*training=*/false);
        for (std::int64_t i = 0; i < bs; ++i) preds.push_back(out->data[i]);
    }
    return preds;
}

double mse_of(const std::vector<double>& truth, const std::vector<double>& pred) {
    double s = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = truth[i] - pred[i];
        s += d * d;
    }
    return s / double(truth.size());
}

std::string stats_json(const std::array<double, 5>& v) {
    nlohmann::json j = v;
    return j.dump();
}

std::array<double, 5> stats_from_json(const std::string& s) {
    nlohmann::json j = nlohmann::json::parse(s);
    std::array<double, 5> out{};
    for (int i = 0; i < 5; ++i) out[i] = j[i].get<double>();
    return out;
}

MetricsReport finish_run(const FusionModel<F>& model, const RunConfig& cfg, FinetuneData& data) {
    std::vector<double> z_test;
    for (std::int64_t i : data.split.test) z_test.push_back(data.z[static_cast<std::size_t>(i)]);
    auto preds = predict(model, data, data.split.test, cfg.batch);
    MetricsReport report = compute_metrics(z_test, preds);
    const fs::path out(cfg.out_dir);
    export_density_scatter(z_test, preds, (out / "scatter.csv").string());
    std::ofstream mj(out / "metrics.json");
    mj << metrics_to_json(report) << "\n";
    std::printf("test: mse=%.6g mae=%.6g bias=%.6g precision=%.6g r2=%.6g n=%lld\n", report.mse,
                report.mae, report.bias, report.precision, report.r2,
                static_cast<long long>(report.n));
    return report;
}

}  // namespace

MetricsReport cmd_finetune(const RunConfig& cfg) {
    cfg.validate();
    prepare_run_dir(cfg);
    FinetuneData data = prepare_finetune(cfg);

    const VariantId variant = variant_from_string(cfg.variant);
    Rng init_rng(mix_seed({cfg.seed, kInit}));
    FusionModel<F> model(variant, vit_config_from(cfg, variant_block_kind(variant)), init_rng);

    if (variant_uses_pretrained(variant)) {
        if (cfg.checkpoint.empty()) {
            throw ConfigError("variant '" + cfg.variant + "' requires a pretrained encoder (--checkpoint)");
        }
        Checkpoint ckpt = load_checkpoint(cfg.checkpoint);
        const std::string kind = variant_block_kind(variant) == BlockKind::Pcm ? "pcm" : "plain";
        auto it = ckpt.metadata.find("block_kind");
        if (it != ckpt.metadata.end() && it->second != kind) {
            throw ConfigError("checkpoint holds a " + it->second + " encoder but variant '" +
                              cfg.variant + "' needs " + kind);
        }
        ParamList<F> enc_params;
        model.encoder->collect("encoder", enc_params);
        restore_params(ckpt, enc_params);
        apply_freeze_policy(model);
    } else if (!cfg.checkpoint.empty()) {
        throw ConfigError("variant '" + cfg.variant + "' trains from scratch and takes no checkpoint");
    }

    ParamList<F> all_params;
    model.collect(all_params);
    ParamList<F> trainable;
    for (const auto& p : all_params) {
        if (!p.buffer && p.tensor->requires_grad) trainable.push_back(p);
    }
    std::vector<TensorPtr<F>> opt_params;
    for (const auto& p : trainable) opt_params.push_back(p.tensor);
    AdamW<F>::Settings opt_settings;
    opt_settings.beta1 = static_cast<F>(cfg.beta1);
    opt_settings.beta2 = static_cast<F>(cfg.beta2);
    opt_settings.weight_decay = static_cast<F>(cfg.weight_decay);
    AdamW<F> opt(opt_params, opt_settings);

    std::int64_t start_epoch = 0;
    if (!cfg.resume.empty()) {
        start_epoch = restore_state(cfg.resume, all_params, trainable, opt);
    }
    RunLog log(cfg.out_dir, start_epoch == 0);

    ScheduleConfig sched;
    sched.kind = ScheduleKind::CyclicRestart;
    sched.lr_initial = cfg.lr_initial;
    sched.cycle_length = cfg.cycle_length;
    sched.decay_base = cfg.decay_base;
    sched.cyclic_mode = cfg.cyclic_mode == "envelope" ? CyclicMode::Envelope : CyclicMode::Restart;

    std::vector<double> z_val;
    for (std::int64_t i : data.split.val) z_val.push_back(data.z[static_cast<std::size_t>(i)]);

    double best_val = std::numeric_limits<double>::infinity();
    Checkpoint best_snapshot;
    const fs::path out(cfg.out_dir);

    for (std::int64_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = cyclic_restart_lr(epoch, sched);
        std::vector<std::int64_t> order = data.split.train;
        Rng shuffle_rng(mix_seed({cfg.seed, kShuffle, static_cast<std::uint64_t>(epoch)}));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::int64_t count = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::int64_t bs =
                std::min<std::int64_t>(cfg.batch, static_cast<std::int64_t>(order.size() - start));
            if (bs < 2) continue;
            std::vector<std::vector<F>> imgs(bs);
            std::vector<std::int64_t> sel(order.begin() + start, order.begin() + start + bs);
            std::vector<F> targets(bs);
            for (std::int64_t i = 0; i < bs; ++i) {
                const std::int64_t idx = sel[i];
                imgs[i] = data.images[static_cast<std::size_t>(idx)];
                Rng aug_rng(mix_seed({cfg.seed, kAug, static_cast<std::uint64_t>(epoch),
                                      static_cast<std::uint64_t>(idx)}));
                augment_inplace(imgs[i], 5, data.crop, aug_rng, AugmentPhase::Finetune,
                                static_cast<float>(cfg.noise_std));
                targets[i] = static_cast<F>(data.z[static_cast<std::size_t>(idx)]);
            }
            auto batch = stack_images(imgs, data.crop);
            auto mags = stack_mags(data, sel);
            auto target = Tensor<F>::from({bs, 1}, std::move(targets));
            Tape<F> tape;
            Tape<F>::Scope scope(tape);
            auto pred = model.forward(batch, mags, /*training=*/true);
            auto loss = mse(pred, target);
            if (!std::isfinite(loss->data[0])) {
                throw NumericError("finetune: non-finite loss at epoch " + std::to_string(epoch));
            }
            tape.backward(loss);
            opt.step(static_cast<F>(lr));
            opt.zero_grad();
            loss_sum += double(loss->data[0]) * double(bs);
            count += bs;
        }
        const double train_loss = loss_sum / double(count);
        const double val_loss = mse_of(z_val, predict(model, data, data.split.val, cfg.batch));
        log.epoch_line(epoch, lr, train_loss, val_loss);

        if (val_loss < best_val) {
            best_val = val_loss;
            best_snapshot = snapshot_params(all_params);
            best_snapshot.metadata["epoch"] = std::to_string(epoch);
        }
        save_checkpoint(make_state_checkpoint(all_params, trainable, opt, epoch),
                        (out / "state_last.amck").string());
    }

    // Test metrics come from the best-validation weights.
    if (!best_snapshot.entries.empty()) restore_params(best_snapshot, all_params);
    Checkpoint model_ckpt = snapshot_params(all_params);
    model_ckpt.metadata["variant"] = cfg.variant;
    model_ckpt.metadata["block_kind"] =
        variant_block_kind(variant) == BlockKind::Pcm ? "pcm" : "plain";
    model_ckpt.metadata["patch_size"] = std::to_string(cfg.patch);
    model_ckpt.metadata["embed_dim"] = std::to_string(cfg.embed_dim);
    model_ckpt.metadata["enc_depth"] = std::to_string(cfg.enc_depth);
    model_ckpt.metadata["heads"] = std::to_string(cfg.heads);
    model_ckpt.metadata["img_size"] = std::to_string(cfg.crop);
    model_ckpt.metadata["seed"] = std::to_string(cfg.seed);
    model_ckpt.metadata["img_mean"] = nlohmann::json(data.stats.mean).dump();
    model_ckpt.metadata["img_std"] = nlohmann::json(data.stats.stddev).dump();
    model_ckpt.metadata["mag_mean"] = stats_json(data.mag_mean);
    model_ckpt.metadata["mag_std"] = stats_json(data.mag_std);
    save_checkpoint(model_ckpt, (out / "model_best.amck").string());

    return finish_run(model, cfg, data);
}

MetricsReport cmd_evaluate(const RunConfig& cfg) {
    prepare_run_dir(cfg);
    if (cfg.checkpoint.empty()) throw ConfigError("eval needs a model checkpoint (--checkpoint)");
    Checkpoint ckpt = load_checkpoint(cfg.checkpoint);
    for (const char* key :
         {"variant", "patch_size", "embed_dim", "enc_depth", "heads", "img_size", "seed",
          "img_mean", "img_std", "mag_mean", "mag_std"}) {
        if (!ckpt.metadata.count(key)) {
            throw DataError("model checkpoint manifest lacks '" + std::string(key) + "'");
        }
    }
    RunConfig model_cfg = cfg;
    model_cfg.variant = ckpt.metadata.at("variant");
    model_cfg.patch = std::stoll(ckpt.metadata.at("patch_size"));
    model_cfg.embed_dim = std::stoll(ckpt.metadata.at("embed_dim"));
    model_cfg.enc_depth = std::stoll(ckpt.metadata.at("enc_depth"));
    model_cfg.heads = std::stoll(ckpt.metadata.at("heads"));
    model_cfg.crop = std::stoll(ckpt.metadata.at("img_size"));
    model_cfg.seed = std::stoull(ckpt.metadata.at("seed"));

    if (cfg.eval_split == "train" && !cfg.allow_train_eval) {
        throw ConfigError("refusing to evaluate on the training split (set allow_train_eval=true)");
    }

    const VariantId variant = variant_from_string(model_cfg.variant);
    Rng dummy_rng(0);
    FusionModel<F> model(variant, vit_config_from(model_cfg, variant_block_kind(variant)), dummy_rng);
    ParamList<F> all_params;
    model.collect(all_params);
    restore_params(ckpt, all_params);

    // Reapply the statistics and split the model was trained with.
    Dataset ds = load_and_check(model_cfg);
    FinetuneData data;
    data.crop = model_cfg.crop;
    data.split = split(ds.size(), model_cfg.seed);
    data.images = crop_all(ds, model_cfg.crop);
    NormStats stats;
    stats.mean = stats_from_json(ckpt.metadata.at("img_mean"));
    stats.stddev = stats_from_json(ckpt.metadata.at("img_std"));
    data.stats = stats;
    for (auto& img : data.images) normalize_inplace(img, stats, 5, model_cfg.crop * model_cfg.crop);
    data.mag_mean = stats_from_json(ckpt.metadata.at("mag_mean"));
    data.mag_std = stats_from_json(ckpt.metadata.at("mag_std"));
    data.mags.resize(ds.samples.size());
    data.z.resize(ds.samples.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        for (int b = 0; b < 5; ++b) {
            data.mags[i][b] = static_cast<F>((ds.samples[i].magnitudes[b] - data.mag_mean[b]) /
                                             data.mag_std[b]);
        }
        data.z[i] = ds.samples[i].z_spec;
    }

    const std::vector<std::int64_t>& idx = cfg.eval_split == "train"
                                               ? data.split.train
                                               : (cfg.eval_split == "val" ? data.split.val
                                                                          : data.split.test);
    std::vector<double> z_true;
    for (std::int64_t i : idx) z_true.push_back(data.z[static_cast<std::size_t>(i)]);
    auto preds = predict(model, data, idx, cfg.batch);
    MetricsReport report = compute_metrics(z_true, preds);
    const fs::path out(cfg.out_dir);
    export_density_scatter(z_true, preds, (out / "scatter.csv").string());
    std::ofstream mj(out / "metrics.json");
    mj << metrics_to_json(report) << "\n";
    std::printf("eval(%s): mse=%.6g mae=%.6g bias=%.6g precision=%.6g r2=%.6g n=%lld\n",
                cfg.eval_split.c_str(), report.mse, report.mae, report.bias, report.precision,
                report.r2, static_cast<long long>(report.n));
    return report;
}

}  // namespace astromae
