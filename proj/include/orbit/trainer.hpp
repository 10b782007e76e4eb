#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "orbit/adam.hpp"
#include "orbit/common.hpp"
#include "orbit/degrade.hpp"
#include "orbit/image.hpp"
#include "orbit/image_io.hpp"
#include "orbit/jsonio.hpp"
#include "orbit/model.hpp"
#include "orbit/perceptual.hpp"
#include "orbit/schedule.hpp"

namespace orbit {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct PhaseConfig {
    int image_size = 64;  // multiple of 32
    int epochs = 10;
    int batch_size = 8;
    double max_lr = 1e-3;
    bool encoder_frozen = false;
};

struct TrainConfig {
    // Progressive resizing: frozen transfer-learning warmup at small size,
    // then unfrozen fine-tuning at growing sizes. Small default batch — the
    // architecture favors small batches at large image sizes.
    std::vector<PhaseConfig> phases = {{64, 10, 8, 1e-3, true}, {128, 10, 8, 1e-4, false}, {256, 10, 8, 1e-4, false}};
    OneCycleConfig one_cycle;
    PlateauConfig plateau;
    EarlyStopConfig early_stop;
    AdamConfig adam;
    LossConfig loss;
    std::uint64_t seed = 0;
    double validation_fraction = 0.1;

    void validate() const {
        if (phases.empty()) throw ConfigError("train: at least one phase required");
        int prev = 0;
        for (const PhaseConfig& p : phases) {
            if (p.image_size < 32 || p.image_size % 32 != 0)
                throw ConfigError("train: phase image_size must be a positive multiple of 32");
            if (p.image_size < prev) throw ConfigError("train: phase image sizes must be nondecreasing");
            prev = p.image_size;
            if (p.epochs < 1 || p.batch_size < 1) throw ConfigError("train: epochs and batch_size must be >= 1");
            if (p.max_lr <= 0) throw ConfigError("train: max_lr must be > 0");
        }
        one_cycle.validate();
        plateau.validate();
        early_stop.validate();
        adam.validate();
        loss.validate();
        if (!(validation_fraction > 0 && validation_fraction < 1))
            throw ConfigError("train: validation_fraction must be in (0,1)");
    }

    Json to_json() const {
        Json phs = Json::array();
        for (const PhaseConfig& p : phases) {
            phs.push_back(Json{{"image_size", p.image_size},
                               {"epochs", p.epochs},
                               {"batch_size", p.batch_size},
                               {"max_lr", p.max_lr},
                               {"encoder_frozen", p.encoder_frozen}});
        }
        return Json{{"phases", phs},
                    {"one_cycle",
                     {{"pct_start", one_cycle.pct_start},
                      {"div_start", one_cycle.div_start},
                      {"div_final", one_cycle.div_final}}},
                    {"plateau",
                     {{"patience", plateau.patience}, {"factor", plateau.factor}, {"min_delta", plateau.min_delta}}},
                    {"early_stop", {{"patience", early_stop.patience}, {"min_delta", early_stop.min_delta}}},
                    {"adam", adam_to_json(adam)},
                    {"seed", seed},
                    {"validation_fraction", validation_fraction}};
    }

    // `loss` lives in its own top-level config section; from_json here takes
    // the train section only.
    static TrainConfig from_json(const Json& j) {
        TrainConfig c;
        check_keys(j, {"phases", "one_cycle", "plateau", "early_stop", "adam", "seed", "validation_fraction"},
                   "train");
        if (j.contains("phases")) {
            c.phases.clear();
            for (const auto& jp : j.at("phases")) {
                check_keys(jp, {"image_size", "epochs", "batch_size", "max_lr", "encoder_frozen"}, "train.phases");
                PhaseConfig p;
                p.image_size = get_or<int>(jp, "image_size", p.image_size);
                p.epochs = get_or<int>(jp, "epochs", p.epochs);
                p.batch_size = get_or<int>(jp, "batch_size", p.batch_size);
                p.max_lr = get_or<double>(jp, "max_lr", p.max_lr);
                p.encoder_frozen = get_or<bool>(jp, "encoder_frozen", p.encoder_frozen);
                c.phases.push_back(p);
            }
        }
        if (j.contains("one_cycle")) {
            const auto& oc = j.at("one_cycle");
            check_keys(oc, {"pct_start", "div_start", "div_final"}, "train.one_cycle");
            c.one_cycle.pct_start = get_or<double>(oc, "pct_start", c.one_cycle.pct_start);
            c.one_cycle.div_start = get_or<double>(oc, "div_start", c.one_cycle.div_start);
            c.one_cycle.div_final = get_or<double>(oc, "div_final", c.one_cycle.div_final);
        }
        if (j.contains("plateau")) {
            const auto& pl = j.at("plateau");
            check_keys(pl, {"patience", "factor", "min_delta"}, "train.plateau");
            c.plateau.patience = get_or<int>(pl, "patience", c.plateau.patience);
            c.plateau.factor = get_or<double>(pl, "factor", c.plateau.factor);
            c.plateau.min_delta = get_or<double>(pl, "min_delta", c.plateau.min_delta);
        }
        if (j.contains("early_stop")) {
            const auto& es = j.at("early_stop");
            check_keys(es, {"patience", "min_delta"}, "train.early_stop");
            c.early_stop.patience = get_or<int>(es, "patience", c.early_stop.patience);
            c.early_stop.min_delta = get_or<double>(es, "min_delta", c.early_stop.min_delta);
        }
        if (j.contains("adam")) c.adam = adam_from_json(j.at("adam"));
        c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
        c.validation_fraction = get_or<double>(j, "validation_fraction", c.validation_fraction);
        return c;
    }
};

// ---------------------------------------------------------------------------
// Dataset access
// ---------------------------------------------------------------------------

struct TrainPair {
    std::string degraded;
    std::string target;
};

struct DatasetSplit {
    std::vector<TrainPair> train;
    std::vector<TrainPair> validation;
};

// Splits by target image so variants of one source never straddle the split.
// The validation side gets round(fraction * groups), at least 1 group; both
// sides must end up non-empty.
inline DatasetSplit split_dataset(const DatasetManifest& manifest, double fraction, std::uint64_t seed) {
    if (manifest.pairs.empty()) throw EmptyDatasetError("manifest has no pairs");

    std::vector<std::string> group_order;
    std::map<std::string, std::vector<TrainPair>> groups;
    for (const ManifestPair& p : manifest.pairs) {
        if (!groups.count(p.target)) group_order.push_back(p.target);
        groups[p.target].push_back({p.degraded, p.target});
    }

    // Seeded Fisher-Yates over the group list, on its own substream so it
    // cannot collide with the per-epoch shuffles.
    SplitMix64 rng(SplitMix64::derive(seed, 1ull << 40));
    for (std::size_t i = group_order.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.next() % i);
        std::swap(group_order[i - 1], group_order[j]);
    }

    const std::int64_t n_groups = static_cast<std::int64_t>(group_order.size());
    std::int64_t n_val = std::llround(fraction * static_cast<double>(n_groups));
    n_val = std::max<std::int64_t>(1, n_val);
    if (n_groups - n_val < 1)
        throw SplitError("dataset too small to split: " + std::to_string(n_groups) + " target groups");

    DatasetSplit split;
    for (std::int64_t g = 0; g < n_groups; ++g) {
        auto& dst = g < n_val ? split.validation : split.train;
        for (const TrainPair& p : groups[group_order[static_cast<std::size_t>(g)]]) dst.push_back(p);
    }
    if (split.validation.empty()) throw SplitError("validation split smaller than 1 pair");
    if (split.train.empty()) throw SplitError("training split smaller than 1 pair");
    return split;
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

// Writes the archive only when val_loss strictly improves on everything seen
// before, so the archive on disk always matches the minimum of history.
// save_archive writes temp files and renames, keeping the previous archive
// intact if interrupted.
template <typename T>
void checkpoint_best(const TrainState& state, const Ures34p<T>& model, double val_loss,
                     const std::filesystem::path& dir) {
    if (val_loss < state.best_val_loss) {
        save_weights(model, dir, state.global_step, val_loss);
    }
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitResult {
    TrainState state;
    std::filesystem::path best_archive_dir;
};

namespace detail {

inline void write_history_files(const TrainState& state, const std::filesystem::path& out_dir) {
    write_json_file(out_dir / "history.json", state_to_json(state));
    std::ostringstream csv;
    csv << "epoch,train_loss,val_loss,lr\n";
    char buf[128];
    for (const EpochRecord& r : state.history) {
        std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g\n", static_cast<long long>(r.epoch), r.train_loss,
                      r.val_loss, r.lr);
        csv << buf;
    }
    write_file_atomic(out_dir / "history.csv", csv.str());
}

template <typename T>
Tensor<T> batch_tensor(const std::vector<ImageTensor>& images, const std::vector<std::size_t>& order,
                       std::size_t begin, std::size_t end) {
    const int h = images[order[begin]].height;
    const int w = images[order[begin]].width;
    Tensor<T> out({static_cast<std::int64_t>(end - begin), 3, h, w});
    for (std::size_t b = begin; b < end; ++b) {
        const ImageTensor& img = images[order[b]];
        T* dst = out.data() + static_cast<std::int64_t>(b - begin) * 3 * h * w;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) *dst++ = static_cast<T>(img.at(y, x, c));
    }
    return out;
}

}  // namespace detail

// The full protocol: per-phase transfer freezing, progressive resizing,
// one-cycle LR scaled by the plateau multiplier, best-model checkpointing
// and early stopping (which aborts remaining epochs of the current phase
// only). Deterministic for a fixed seed and single data-loading thread.
template <typename T>
FitResult fit(Ures34p<T>& model, const std::filesystem::path& manifest_path, const TrainConfig& config,
              const std::filesystem::path& out_dir, TrainState initial_state = TrainState{}) {
    config.validate();
    const DatasetManifest manifest = load_manifest(manifest_path);
    if (manifest.pairs.empty()) throw EmptyDatasetError("manifest has no pairs");
    const std::filesystem::path root = manifest_path.parent_path();

    const DatasetSplit split = split_dataset(manifest, config.validation_fraction, config.seed);
    std::filesystem::create_directories(out_dir);
    // The best archive (weights.json/weights.bin) lives at the output root.
    const std::filesystem::path best_dir = out_dir;

    // Decode every image once; phases resize from these.
    std::map<std::string, ImageTensor> raw;
    for (const auto& pairs : {split.train, split.validation})
        for (const TrainPair& p : pairs) {
            if (!raw.count(p.degraded)) raw.emplace(p.degraded, load_image(root / p.degraded));
            if (!raw.count(p.target)) raw.emplace(p.target, load_image(root / p.target));
        }

    FeatureLoss<T> loss(config.loss);
    Adam<T> optimizer(config.adam);
    std::vector<typename Adam<T>::ParamRef> trainable;

    TrainState state = std::move(initial_state);

    // Calibrate every normalization layer (encoder included) to the actual
    // training distribution before the schedule starts. A randomly
    // initialized encoder otherwise normalizes frozen phases against its
    // init-time statistics, and residual stages compound that mismatch.
    {
        const int s0 = config.phases.front().image_size;
        std::vector<ImageTensor> calib_in;
        for (const TrainPair& p : split.train) calib_in.push_back(resize_bilinear(raw.at(p.degraded), s0, s0));
        std::vector<std::size_t> order(calib_in.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::vector<Tensor<T>> batches;
        const std::size_t b0 = static_cast<std::size_t>(config.phases.front().batch_size);
        for (std::size_t begin = 0; begin < calib_in.size(); begin += b0)
            batches.push_back(detail::batch_tensor<T>(calib_in, order, begin, std::min(begin + b0, calib_in.size())));
        const bool was_frozen = model.encoder_frozen();
        model.freeze_encoder(false);
        model.recalibrate_normalization(batches);
        model.freeze_encoder(was_frozen);
    }

    for (std::size_t phase_idx = 0; phase_idx < config.phases.size(); ++phase_idx) {
        const PhaseConfig& phase = config.phases[phase_idx];
        state.current_phase = static_cast<int>(phase_idx);
        model.freeze_encoder(phase.encoder_frozen);
        trainable.clear();
        for (const auto& p : model.trainable_named_params()) trainable.push_back({p.name, p.var});

        // Phase-resized copies, exactly image_size x image_size.
        const int s = phase.image_size;
        std::vector<ImageTensor> train_in, train_tgt, val_in, val_tgt;
        for (const TrainPair& p : split.train) {
            train_in.push_back(resize_bilinear(raw.at(p.degraded), s, s));
            train_tgt.push_back(resize_bilinear(raw.at(p.target), s, s));
        }
        for (const TrainPair& p : split.validation) {
            val_in.push_back(resize_bilinear(raw.at(p.degraded), s, s));
            val_tgt.push_back(resize_bilinear(raw.at(p.target), s, s));
        }

        const std::size_t n_train = train_in.size();
        const std::size_t batch = static_cast<std::size_t>(phase.batch_size);
        const std::int64_t steps_per_epoch = static_cast<std::int64_t>((n_train + batch - 1) / batch);
        const std::int64_t total_steps = steps_per_epoch * phase.epochs;

        for (int epoch = 0; epoch < phase.epochs; ++epoch) {
            // Deterministic per-epoch shuffle from the substream (seed, phase, epoch).
            std::vector<std::size_t> order(n_train);
            for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
            SplitMix64 rng(SplitMix64::derive(SplitMix64::derive(config.seed, phase_idx), static_cast<std::uint64_t>(epoch)));
            for (std::size_t i = n_train; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng.next() % i)]);

            double train_loss_sum = 0.0;
            double epoch_lr = 0.0;
            for (std::size_t begin = 0; begin < n_train; begin += batch) {
                const std::size_t end = std::min(begin + batch, n_train);
                Var<T> input = make_var(detail::batch_tensor<T>(train_in, order, begin, end));
                Var<T> target = make_var(detail::batch_tensor<T>(train_tgt, order, begin, end));

                Var<T> pred = model.forward_graph(input, /*training=*/true);
                Var<T> batch_loss = loss(pred, target);
                backward(batch_loss);

                const std::int64_t step_in_phase =
                    static_cast<std::int64_t>(epoch) * steps_per_epoch + static_cast<std::int64_t>(begin / batch);
                epoch_lr = one_cycle_lr(step_in_phase, total_steps, phase.max_lr, config.one_cycle.pct_start,
                                        config.one_cycle.div_start, config.one_cycle.div_final) *
                           state.lr_scale;
                optimizer.step(trainable, epoch_lr);
                for (const auto& p : trainable) p.var->zero_grad();

                train_loss_sum += static_cast<double>(batch_loss->value[0]) * static_cast<double>(end - begin);
                ++state.global_step;
            }
            const double train_loss = train_loss_sum / static_cast<double>(n_train);

            // Validation in eval mode (running statistics, no graph).
            double val_loss_sum = 0.0;
            {
                NoGradGuard no_grad;
                std::vector<std::size_t> val_order(val_in.size());
                for (std::size_t i = 0; i < val_in.size(); ++i) val_order[i] = i;
                for (std::size_t begin = 0; begin < val_in.size(); begin += batch) {
                    const std::size_t end = std::min(begin + batch, val_in.size());
                    Var<T> input = make_var(detail::batch_tensor<T>(val_in, val_order, begin, end));
                    Var<T> target = make_var(detail::batch_tensor<T>(val_tgt, val_order, begin, end));
                    Var<T> pred = model.forward_graph(input, /*training=*/false);
                    val_loss_sum += static_cast<double>(loss(pred, target)->value[0]) * static_cast<double>(end - begin);
                }
            }
            const double val_loss = val_loss_sum / static_cast<double>(val_in.size());

            checkpoint_best(state, model, val_loss, best_dir);
            plateau_step(state, val_loss, config.plateau);

            EpochRecord rec;
            rec.epoch = static_cast<std::int64_t>(state.history.size());
            rec.phase = static_cast<int>(phase_idx);
            rec.train_loss = train_loss;
            rec.val_loss = val_loss;
            rec.lr = epoch_lr;
            state.history.push_back(rec);
            detail::write_history_files(state, out_dir);

            if (early_stop_check(state, config.early_stop)) break;  // abort the rest of this phase
        }

        // Short runs leave the momentum-averaged statistics behind the final
        // parameters; replace them with exact averages over this phase's
        // training batches so eval-mode inference matches what was trained.
        {
            std::vector<std::size_t> order(n_train);
            for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
            std::vector<Tensor<T>> batches;
            for (std::size_t begin = 0; begin < n_train; begin += batch)
                batches.push_back(detail::batch_tensor<T>(train_in, order, begin, std::min(begin + batch, n_train)));
            model.recalibrate_normalization(batches);
        }
    }

    return {std::move(state), best_dir};
}

}  // namespace orbit
