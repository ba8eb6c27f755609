#include "ccdet/train.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "ccdet/head.hpp"

namespace fs = std::filesystem;

namespace ccdet {

namespace {

constexpr char kMagic[8] = {'C', 'C', 'D', 'E', 'T', 'C', 'K', 'P'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t((unsigned char)in[pos + std::size_t(i)]) << (8 * i);
    return v;
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t((unsigned char)in[pos + std::size_t(i)]) << (8 * i);
    return v;
}

std::uint64_t epoch_sample_seed(std::uint64_t seed, int epoch, std::size_t index) {
    return splitmix64(splitmix64(seed ^ 0xae5eedull) ^
                      (std::uint64_t(epoch) * 0x100000001b3ull + std::uint64_t(index)));
}

}  // namespace

Checkpoint make_checkpoint(const TrainConfig& cfg, ParamStore<float>& ps, int epoch,
                           int best_epoch, double best_total, double final_total) {
    Checkpoint ckpt;
    ckpt.config = cfg;
    ckpt.epoch = epoch;
    ckpt.best_epoch = best_epoch;
    ckpt.best_total = best_total;
    ckpt.final_total = final_total;
    for (const auto& [name, t] : ps.all())
        ckpt.tensors.emplace_back(name, std::make_pair(t.shape(), t.data()));
    return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    nlohmann::json meta;
    meta["config"] = ckpt.config;
    meta["epoch"] = ckpt.epoch;
    meta["stats"] = {{"best_epoch", ckpt.best_epoch},
                     {"best_total", ckpt.best_total},
                     {"final_total", ckpt.final_total}};
    nlohmann::json params = nlohmann::json::array();
    for (const auto& [name, payload] : ckpt.tensors)
        params.push_back({{"name", name}, {"shape", payload.first}});
    meta["params"] = params;
    const std::string meta_str = meta.dump();

    std::string out;
    out.append(kMagic, 8);
    put_u32(out, kCheckpointVersion);
    put_u64(out, meta_str.size());
    out += meta_str;
    for (const auto& [name, payload] : ckpt.tensors) {
        (void)name;
        for (float f : payload.second) put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot write checkpoint: " + path);
    file.write(out.data(), std::streamsize(out.size()));
    if (!file) throw IoError("short write saving checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot open checkpoint: " + path);
    std::ostringstream buf;
    buf << file.rdbuf();
    const std::string in = buf.str();

    if (in.size() < 20 || std::memcmp(in.data(), kMagic, 8) != 0)
        throw FormatError("not a checkpoint file (bad magic): " + path);
    const std::uint32_t version = get_u32(in, 8);
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint version mismatch in " + path + ": file has " +
                          std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
    const std::uint64_t meta_len = get_u64(in, 12);
    if (20 + meta_len > in.size()) throw FormatError("truncated checkpoint metadata: " + path);

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(in.substr(20, meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("invalid checkpoint metadata in " + path + ": " + e.what());
    }
    Checkpoint ckpt;
    try {
        ckpt.config = meta.at("config").get<TrainConfig>();
        ckpt.epoch = meta.at("epoch").get<int>();
        ckpt.best_epoch = meta.at("stats").at("best_epoch").get<int>();
        ckpt.best_total = meta.at("stats").at("best_total").get<double>();
        ckpt.final_total = meta.at("stats").at("final_total").get<double>();
        std::size_t pos = 20 + meta_len;
        for (const auto& p : meta.at("params")) {
            const std::string name = p.at("name").get<std::string>();
            const Shape shape = p.at("shape").get<Shape>();
            const std::size_t count = std::size_t(shape_numel(shape));
            if (pos + 4 * count > in.size())
                throw FormatError("truncated checkpoint payload at parameter " + name + ": " + path);
            std::vector<float> values(count, 0.0f);
            for (std::size_t i = 0; i < count; ++i)
                values[i] = std::bit_cast<float>(get_u32(in, pos + 4 * i));
            pos += 4 * count;
            ckpt.tensors.emplace_back(name, std::make_pair(shape, std::move(values)));
        }
        if (pos != in.size()) throw FormatError("trailing bytes in checkpoint: " + path);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("invalid checkpoint metadata in " + path + ": " + e.what());
    }
    return ckpt;
}

void apply_checkpoint(const Checkpoint& ckpt, ParamStore<float>& ps) {
    std::vector<std::string> missing, extra;
    std::map<std::string, const std::pair<Shape, std::vector<float>>*> by_name;
    for (const auto& [name, payload] : ckpt.tensors) by_name[name] = &payload;
    for (const auto& [name, t] : ps.all()) {
        (void)t;
        if (!by_name.count(name)) missing.push_back(name);
    }
    for (const auto& [name, payload] : by_name) {
        (void)payload;
        if (!ps.all().count(name)) extra.push_back(name);
    }
    if (!missing.empty() || !extra.empty()) {
        std::string msg = "checkpoint does not match the model architecture;";
        if (!missing.empty()) {
            msg += " missing from checkpoint:";
            for (const auto& n : missing) msg += " " + n;
            msg += ";";
        }
        if (!extra.empty()) {
            msg += " extra in checkpoint:";
            for (const auto& n : extra) msg += " " + n;
        }
        throw ContractError(msg);
    }
    for (const auto& [name, payload] : by_name) {
        auto p = ps.at(name);
        if (p.shape() != payload->first)
            throw ContractError("checkpoint shape mismatch for " + name + ": " +
                                shape_str(payload->first) + " vs model " + shape_str(p.shape()));
        p.data() = payload->second;
    }
}

TrainResult train_loop(const TrainConfig& cfg, const std::vector<Sample>& dataset,
                       const std::string& out_dir, std::ostream* progress) {
    cfg.validate();
    if (dataset.empty()) throw ContractError("train_loop: dataset is empty");
    fs::create_directories(out_dir);

    Model<float> model(cfg);
    SgdState<float> sgd;
    RngStream shuffle_rng(splitmix64(cfg.seed ^ 0x5f0f5f0f5f0f5f0full));
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t(0));

    TrainResult result;
    result.log_path = (fs::path(out_dir) / "train_log.csv").string();
    result.final_path = (fs::path(out_dir) / "final.ckpt").string();
    result.best_path = (fs::path(out_dir) / "best.ckpt").string();
    std::ofstream csv(result.log_path, std::ios::trunc);
    if (!csv) throw IoError("cannot write training log: " + result.log_path);
    csv << "epoch,total,loc,conf,cls,seconds\n";
    result.best_total = std::numeric_limits<double>::infinity();

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        TrainConfig step_cfg = cfg;
        if (cfg.lr_decay != 1.0 && epoch > cfg.lr_decay_epoch) step_cfg.lr = cfg.lr * cfg.lr_decay;
        shuffle_rng.shuffle(order);
        double sum_total = 0, sum_loc = 0, sum_conf = 0, sum_cls = 0;
        for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
            const std::size_t bsz = std::min(std::size_t(cfg.batch_size), order.size() - start);
            model.params().zero_grads();
            for (std::size_t k = 0; k < bsz; ++k) {
                const std::size_t idx = order[start + k];
                const Sample* sp = &dataset[idx];
                Sample augmented;
                if (cfg.augment) {
                    augmented = augment(*sp, epoch_sample_seed(cfg.seed, epoch, idx));
                    sp = &augmented;
                }
                auto raw = model(sp->rgb, sp->ir);
                auto asg = assign_targets(sp->boxes, cfg.model);
                auto parts = detection_loss(raw, asg, cfg.model);
                const double total = double(parts.total.item());
                if (!std::isfinite(total)) {
                    backward(parts.total);
                    std::string bad = "(no parameter gradient is non-finite)";
                    for (const auto& [name, t] : model.params().all()) {
                        bool finite = true;
                        for (float g : t.grad()) finite = finite && std::isfinite(g);
                        if (!finite) {
                            bad = name;
                            break;
                        }
                    }
                    throw ContractError("non-finite loss at epoch " + std::to_string(epoch) +
                                        "; first non-finite parameter gradient: " + bad);
                }
                backward(scale(parts.total, 1.0f / float(bsz)));
                sum_total += total;
                sum_loc += double(parts.loc.item());
                sum_conf += double(parts.conf.item());
                sum_cls += double(parts.cls.item());
            }
            sgd_step(model.params(), step_cfg, sgd);
        }
        const double n = double(dataset.size());
        EpochLog entry;
        entry.epoch = epoch;
        entry.total = sum_total / n;
        entry.loc = sum_loc / n;
        entry.conf = sum_conf / n;
        entry.cls = sum_cls / n;
        entry.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back(entry);
        csv << entry.epoch << "," << std::setprecision(10) << entry.total << "," << entry.loc << ","
            << entry.conf << "," << entry.cls << "," << std::setprecision(4) << entry.seconds
            << "\n";
        csv.flush();
        if (progress)
            (*progress) << "epoch " << epoch << "/" << cfg.epochs << " total " << std::setprecision(6)
                        << entry.total << " (" << std::setprecision(3) << entry.seconds << "s)\n";

        result.final_total = entry.total;
        if (entry.total < result.best_total) {
            result.best_total = entry.total;
            result.best_epoch = epoch;
            save_checkpoint(result.best_path, make_checkpoint(cfg, model.params(), epoch,
                                                              result.best_epoch, result.best_total,
                                                              entry.total));
        }
    }
    if (!std::isfinite(result.best_total)) {  // zero-epoch run: final doubles as best
        result.best_total = 0;
        save_checkpoint(result.best_path, make_checkpoint(cfg, model.params(), 0, 0, 0, 0));
    }
    save_checkpoint(result.final_path,
                    make_checkpoint(cfg, model.params(), cfg.epochs, result.best_epoch,
                                    result.best_total, result.final_total));
    return result;
}

EvalReport evaluate_model(Model<float>& model, const std::vector<Sample>& dataset,
                          double conf_thresh, double nms_thresh, int top_k) {
    NoGradGuard no_grad;
    std::vector<std::vector<Detection>> dets_by_image;
    std::vector<std::vector<BoxLabel>> gts_by_image;
    for (const auto& s : dataset) {
        auto raw = model(s.rgb, s.ir);
        auto dets = nms(decode(raw, model.config().model, conf_thresh), nms_thresh);
        if (int(dets.size()) > top_k) {
            std::stable_sort(dets.begin(), dets.end(),
                             [](const Detection& a, const Detection& b) { return a.score > b.score; });
            dets.resize(std::size_t(top_k));
        }
        dets_by_image.push_back(std::move(dets));
        gts_by_image.push_back(s.boxes);
    }
    return map50(dets_by_image, gts_by_image, model.config().model.num_classes);
}

}  // namespace ccdet
