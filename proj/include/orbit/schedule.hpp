#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include "orbit/common.hpp"
#include "orbit/jsonio.hpp"

namespace orbit {

// ---------------------------------------------------------------------------
// One-cycle learning rate
// ---------------------------------------------------------------------------

struct OneCycleConfig {
    double pct_start = 0.25;
    double div_start = 25.0;
    double div_final = 1e4;

    void validate() const {
        if (!(pct_start > 0 && pct_start < 1)) throw ConfigError("one_cycle: pct_start must be in (0,1)");
        if (div_start <= 1 || div_final <= 1) throw ConfigError("one_cycle: divisors must be > 1");
    }
};

// Cosine warmup from max_lr/div_start to max_lr over round(pct_start*total)
// steps, then cosine descent to max_lr/div_final. Continuous at the peak.
inline double one_cycle_lr(std::int64_t step, std::int64_t total_steps, double max_lr, double pct_start,
                           double div_start, double div_final) {
    if (total_steps < 1) throw ParamError("one_cycle_lr: total_steps must be >= 1");
    if (step < 0 || step > total_steps) throw ParamError("one_cycle_lr: step out of range");
    const std::int64_t warmup = static_cast<std::int64_t>(std::llround(pct_start * static_cast<double>(total_steps)));
    const double lo = max_lr / div_start;
    const double fin = max_lr / div_final;
    if (step < warmup) {
        const double t = static_cast<double>(step) / static_cast<double>(warmup);
        return lo + (max_lr - lo) * (1.0 - std::cos(std::numbers::pi * t)) / 2.0;
    }
    if (step == warmup) return max_lr;
    const double t = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
    return fin + (max_lr - fin) * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

// ---------------------------------------------------------------------------
// Plateau / early stop
// ---------------------------------------------------------------------------

struct PlateauConfig {
    int patience = 3;
    double factor = 0.5;
    double min_delta = 0.0;

    void validate() const {
        if (patience < 1) throw ConfigError("plateau: patience must be >= 1");
        if (!(factor > 0 && factor < 1)) throw ConfigError("plateau: factor must be in (0,1)");
        if (min_delta < 0) throw ConfigError("plateau: min_delta must be >= 0");
    }
};

struct EarlyStopConfig {
    int patience = 6;
    double min_delta = 0.0;

    void validate() const {
        if (patience < 1) throw ConfigError("early_stop: patience must be >= 1");
        if (min_delta < 0) throw ConfigError("early_stop: min_delta must be >= 0");
    }
};

struct EpochRecord {
    std::int64_t epoch = 0;  // global index across phases (and resumes)
    int phase = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;  // learning rate of the last optimizer step in the epoch
};

struct TrainState {
    std::int64_t global_step = 0;
    int current_phase = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    int epochs_since_improvement = 0;  // consecutive epochs without a plateau-grade improvement
    int plateau_counter = 0;           // resets each time the plateau fires
    double lr_scale = 1.0;             // cumulative plateau multiplier
    std::vector<EpochRecord> history;
};

// Epoch-end bookkeeping: an epoch counts as improved when val_loss beats the
// best seen so far by more than min_delta. After `patience` consecutive
// non-improving epochs the lr scale is multiplied by `factor` and the
// plateau counter starts over. best_val_loss always tracks the true minimum.
inline void plateau_step(TrainState& state, double val_loss, const PlateauConfig& cfg) {
    const bool improved = val_loss < state.best_val_loss - cfg.min_delta;
    if (improved) {
        state.plateau_counter = 0;
        state.epochs_since_improvement = 0;
    } else {
        ++state.plateau_counter;
        ++state.epochs_since_improvement;
        if (state.plateau_counter >= cfg.patience) {
            state.lr_scale *= cfg.factor;
            state.plateau_counter = 0;
        }
    }
    if (val_loss < state.best_val_loss) state.best_val_loss = val_loss;
}

// True when the validation loss has not improved by more than the early-stop
// min_delta for `patience` consecutive epochs. Replays the recorded history
// so its min_delta is independent of the plateau's.
inline bool early_stop_check(const TrainState& state, const EarlyStopConfig& cfg) {
    if (state.history.empty()) return false;
    double best = std::numeric_limits<double>::infinity();
    std::int64_t last_improvement = -1;
    for (std::size_t i = 0; i < state.history.size(); ++i) {
        const double v = state.history[i].val_loss;
        if (v < best - cfg.min_delta) last_improvement = static_cast<std::int64_t>(i);
        if (v < best) best = v;
    }
    const std::int64_t idle = static_cast<std::int64_t>(state.history.size()) - 1 - last_improvement;
    return idle >= cfg.patience;
}

// --- history serialization ----------------------------------------------------

inline Json state_to_json(const TrainState& s) {
    Json epochs = Json::array();
    for (const EpochRecord& r : s.history) {
        epochs.push_back(Json{{"epoch", r.epoch},
                              {"phase", r.phase},
                              {"train_loss", r.train_loss},
                              {"val_loss", r.val_loss},
                              {"lr", r.lr}});
    }
    return Json{{"global_step", s.global_step},
                {"current_phase", s.current_phase},
                {"best_val_loss", s.best_val_loss},
                {"epochs_since_improvement", s.epochs_since_improvement},
                {"plateau_counter", s.plateau_counter},
                {"lr_scale", s.lr_scale},
                {"epochs", epochs}};
}

inline TrainState state_from_json(const Json& j) {
    TrainState s;
    s.global_step = get_required<std::int64_t>(j, "global_step", "history");
    s.current_phase = get_required<int>(j, "current_phase", "history");
    s.best_val_loss = j.at("best_val_loss").is_null() ? std::numeric_limits<double>::infinity()
                                                      : j.at("best_val_loss").get<double>();
    s.epochs_since_improvement = get_required<int>(j, "epochs_since_improvement", "history");
    s.plateau_counter = get_required<int>(j, "plateau_counter", "history");
    s.lr_scale = get_required<double>(j, "lr_scale", "history");
    for (const auto& r : j.at("epochs")) {
        EpochRecord rec;
        rec.epoch = get_required<std::int64_t>(r, "epoch", "history.epochs");
        rec.phase = get_required<int>(r, "phase", "history.epochs");
        rec.train_loss = get_required<double>(r, "train_loss", "history.epochs");
        rec.val_loss = get_required<double>(r, "val_loss", "history.epochs");
        rec.lr = get_required<double>(r, "lr", "history.epochs");
        s.history.push_back(rec);
    }
    return s;
}

}  // namespace orbit
