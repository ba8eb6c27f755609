#pragma once

#include <map>
#include <string>
#include <vector>

#include "ccdet/data.hpp"
#include "ccdet/eval.hpp"
#include "ccdet/model.hpp"

namespace ccdet {

// ---------------------------------------------------------------------------
// SGD with momentum and additive L2:
//   v <- momentum*v + grad + weight_decay*param;  param <- param - lr*v
// ---------------------------------------------------------------------------

template <typename T>
struct SgdState {
    std::map<std::string, std::vector<T>> velocity;
};

template <typename T>
void sgd_step(ParamStore<T>& ps, const TrainConfig& cfg, SgdState<T>& state) {
    for (const auto& [name, param] : ps.all()) {
        auto p = ps.at(name);
        auto& g = p.grad();
        // A parameter outside the loss graph has no gradient buffer and is
        // skipped entirely: no decay, no momentum drift (frozen modules).
        if (g.empty()) continue;
        auto& v = state.velocity[name];
        if (v.empty()) v.assign(std::size_t(p.numel()), T(0));
        auto& val = p.data();
        for (std::size_t i = 0; i < val.size(); ++i) {
            v[i] = T(cfg.momentum) * v[i] + g[i] + T(cfg.weight_decay) * val[i];
            val[i] -= T(cfg.lr) * v[i];
        }
        (void)param;
    }
}

// ---------------------------------------------------------------------------
// Checkpoints: "CCDETCKP" magic, u32 version, u64 metadata length, canonical
// JSON metadata, then raw float32 little-endian payloads in name order.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    TrainConfig config;
    int epoch = 0;
    int best_epoch = 0;
    double best_total = 0, final_total = 0;
    // ordered by name, matching the payload order on disk
    std::vector<std::pair<std::string, std::pair<Shape, std::vector<float>>>> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint make_checkpoint(const TrainConfig& cfg, ParamStore<float>& ps, int epoch,
                           int best_epoch, double best_total, double final_total);
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint tensors into the store; name or shape mismatches raise a
// ContractError listing every missing and extra parameter.
void apply_checkpoint(const Checkpoint& ckpt, ParamStore<float>& ps);

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct EpochLog {
    int epoch = 0;
    double total = 0, loc = 0, conf = 0, cls = 0, seconds = 0;
};

struct TrainResult {
    std::vector<EpochLog> log;
    std::string final_path, best_path, log_path;
    int best_epoch = 0;
    double best_total = 0, final_total = 0;
};

// Runs seeded shuffled-batch SGD training, writing train_log.csv plus
// final.ckpt and best.ckpt under out_dir. A non-finite loss aborts with a
// diagnostic naming the first non-finite parameter gradient. When progress
// is non-null a one-line summary is streamed per epoch.
TrainResult train_loop(const TrainConfig& cfg, const std::vector<Sample>& dataset,
                       const std::string& out_dir, std::ostream* progress = nullptr);

// Decodes, suppresses, and scores the model over a dataset.
EvalReport evaluate_model(Model<float>& model, const std::vector<Sample>& dataset,
                          double conf_thresh = 0.05, double nms_thresh = 0.45, int top_k = 300);

}  // namespace ccdet
