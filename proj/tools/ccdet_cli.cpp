// Command-line entry point: dataset generation, training, evaluation, the
// two ablation studies, and the finite-difference gradient suite. Every
// command writes a run_manifest.json recording the resolved configuration,
// dataset hash, and content ids of its outputs.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ccdet/gradcheck.hpp"
#include "ccdet/manifest.hpp"
#include "ccdet/train.hpp"

namespace fs = std::filesystem;
using namespace ccdet;

namespace {

std::string join_args(int argc, char** argv) {
    std::string out;
    for (int i = 0; i < argc; ++i) {
        if (i) out += " ";
        out += argv[i];
    }
    return out;
}

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream file(path);
    if (!file) throw IoError("cannot open config file: " + path);
    try {
        return nlohmann::json::parse(file);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid JSON in " + path + ": " + e.what());
    }
}

std::vector<int> parse_stages(const std::string& s) {
    if (s == "none" || s.empty()) return {};
    std::vector<int> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ','))
        try {
            out.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw ConfigError("invalid conv-ffn stage list: '" + s + "'");
        }
    return out;
}

std::string stages_label(const std::vector<int>& stages) {
    if (stages.empty()) return "none";
    std::string out;
    for (std::size_t i = 0; i < stages.size(); ++i) out += (i ? "+" : "") + std::to_string(stages[i]);
    return out;
}

std::vector<Sample> load_dataset(const std::string& data_dir, bool quiet = false) {
    LoadReport report;
    auto samples = load_vedai_format((fs::path(data_dir) / "images").string(),
                                     (fs::path(data_dir) / "labels").string(), &report);
    if (!quiet)
        for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
    return samples;
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

// Aligned markdown: first column left, the rest right-justified.
std::string markdown_table(const std::vector<std::string>& header,
                           const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    for (const auto& row : rows)
        for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    auto pad = [&](const std::string& s, std::size_t c) {
        std::string p(width[c] - s.size(), ' ');
        return c == 0 ? s + p : p + s;
    };
    std::ostringstream os;
    os << "|";
    for (std::size_t c = 0; c < header.size(); ++c) os << " " << pad(header[c], c) << " |";
    os << "\n|";
    for (std::size_t c = 0; c < header.size(); ++c)
        os << " " << (c == 0 ? std::string(width[c], '-') : std::string(width[c] - 1, '-') + ":") << " |";
    os << "\n";
    for (const auto& row : rows) {
        os << "|";
        for (std::size_t c = 0; c < row.size(); ++c) os << " " << pad(row[c], c) << " |";
        os << "\n";
    }
    return os.str();
}

std::string csv_table(const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
    std::ostringstream os;
    for (std::size_t c = 0; c < header.size(); ++c) os << (c ? "," : "") << header[c];
    os << "\n";
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << row[c];
        os << "\n";
    }
    return os.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream file(path, std::ios::trunc);
    if (!file) throw IoError("cannot write " + path);
    file << text;
}

// Deterministic 80/20 split used by the ablation commands.
void split_dataset(const std::vector<Sample>& all, std::vector<Sample>& train,
                   std::vector<Sample>& eval) {
    const std::size_t n_train = all.size() - all.size() / 5;
    train.assign(all.begin(), all.begin() + std::ptrdiff_t(n_train));
    eval.assign(all.begin() + std::ptrdiff_t(n_train), all.end());
}

struct AblationRow {
    std::string label;
    EvalReport report;
    double final_loss = 0;
    double seconds = 0;
};

AblationRow run_variant(const std::string& label, const TrainConfig& cfg,
                        const std::vector<Sample>& train, const std::vector<Sample>& eval,
                        const std::string& out_dir) {
    std::cerr << "== " << label << " ==\n";
    const auto t0 = std::chrono::steady_clock::now();
    auto tr = train_loop(cfg, train, out_dir, &std::cerr);
    Model<float> model(cfg);
    apply_checkpoint(load_checkpoint(tr.final_path), model.params());
    AblationRow row;
    row.label = label;
    row.report = evaluate_model(model, eval);
    row.final_loss = tr.final_total;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << label << ": mAP50 " << fmt(row.report.map50) << "\n";
    return row;
}

void emit_ablation_tables(const std::string& study, const std::string& label_col,
                          const std::vector<AblationRow>& rows, const std::string& out_dir,
                          RunManifest& manifest) {
    std::vector<std::string> header = {label_col, "mAP50"};
    const int C = rows.empty() ? 0 : int(rows.front().report.ap.size());
    for (int c = 0; c < C; ++c) header.push_back("ap_class" + std::to_string(c));
    header.push_back("final_loss");
    header.push_back("seconds");
    std::vector<std::vector<std::string>> cells;
    for (const auto& r : rows) {
        std::vector<std::string> row = {r.label, fmt(r.report.map50)};
        for (int c = 0; c < C; ++c)
            row.push_back(r.report.ap[std::size_t(c)] < 0 ? "n/a" : fmt(r.report.ap[std::size_t(c)]));
        row.push_back(fmt(r.final_loss));
        row.push_back(fmt(r.seconds, 1));
        cells.push_back(row);
    }
    const std::string csv_path = (fs::path(out_dir) / (study + ".csv")).string();
    const std::string md_path = (fs::path(out_dir) / (study + ".md")).string();
    write_text(csv_path, csv_table(header, cells));
    write_text(md_path, markdown_table(header, cells));
    manifest.add_artifact(study + ".csv", csv_path);
    manifest.add_artifact(study + ".md", md_path);
    std::cout << markdown_table(header, cells);
}

struct CliState {
    std::string command_line;
    std::function<int()> action;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-channel attention fusion detector for RGB+IR small objects"};
    app.require_subcommand(1);
    CliState st;
    st.command_line = join_args(argc, argv);

    // ---- gen-data ----
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic RGB+IR dataset");
    struct {
        std::string out, config;
        int n = 100;
        std::optional<std::uint64_t> seed;
        std::optional<int> image_size;
    } g;
    gen->add_option("--out", g.out, "output dataset directory")->required();
    gen->add_option("--n", g.n, "number of samples")->required();
    gen->add_option("--seed", g.seed, "generator seed (overrides config)");
    gen->add_option("--config", g.config, "JSON file with SynthConfig fields");
    gen->add_option("--image-size", g.image_size, "square image extent (overrides config)");
    gen->callback([&]() {
        st.action = [&]() {
            SynthConfig sc;
            if (!g.config.empty()) sc = read_json_file(g.config).get<SynthConfig>();
            if (g.seed) sc.seed = *g.seed;
            if (g.image_size) sc.image_size = *g.image_size;
            if (g.n < 0) throw ConfigError("--n must be nonnegative");
            const auto t0 = std::chrono::steady_clock::now();
            auto samples = gen_synthetic(g.n, sc);
            save_vedai_format(samples, g.out);
            RunManifest manifest;
            manifest.command = st.command_line;
            manifest.config = sc;
            manifest.dataset_hash = hash_dataset_dir(g.out);
            manifest.artifacts.emplace_back("dataset", manifest.dataset_hash);
            manifest.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            manifest.write((fs::path(g.out) / "run_manifest.json").string());
            std::cout << "wrote " << samples.size() << " samples to " << g.out << "\n";
            return 0;
        };
    });

    // ---- shared train-style options ----
    struct TrainArgs {
        std::string data, out, config;
        std::optional<std::uint64_t> seed;
        std::optional<int> epochs, batch_size, lr_decay_epoch;
        std::optional<double> lr, lr_decay;
        std::optional<std::string> fusion, stages;
        bool no_augment = false;
    };
    auto add_train_options = [](CLI::App* cmd, TrainArgs& a, bool with_variant) {
        cmd->add_option("--data", a.data, "dataset directory (images/ + labels/)")->required();
        cmd->add_option("--out", a.out, "output directory")->required();
        cmd->add_option("--config", a.config, "JSON file with TrainConfig fields");
        cmd->add_option("--seed", a.seed, "training seed (overrides config)");
        cmd->add_option("--epochs", a.epochs, "epoch count (overrides config)");
        cmd->add_option("--batch-size", a.batch_size, "batch size (overrides config)");
        cmd->add_option("--lr", a.lr, "learning rate (overrides config)");
        cmd->add_option("--lr-decay", a.lr_decay, "late-epoch lr multiplier in (0,1]");
        cmd->add_option("--lr-decay-epoch", a.lr_decay_epoch, "full-rate epochs before the decay");
        if (with_variant) {
            cmd->add_option("--fusion", a.fusion,
                            "fusion variant: cc|concat|vanilla_self|vanilla_cross|rgb_only|ir_only");
            cmd->add_option("--conv-ffn-stages", a.stages, "comma list of stages, or 'none'");
        }
        cmd->add_flag("--no-augment", a.no_augment, "disable training-time augmentation");
    };
    auto resolve_train_config = [](const TrainArgs& a, bool with_variant) {
        TrainConfig tc;
        if (!a.config.empty()) tc = read_json_file(a.config).get<TrainConfig>();
        if (a.seed) tc.seed = *a.seed;
        if (a.epochs) tc.epochs = *a.epochs;
        if (a.batch_size) tc.batch_size = *a.batch_size;
        if (a.lr) tc.lr = *a.lr;
        if (a.lr_decay) tc.lr_decay = *a.lr_decay;
        if (a.lr_decay_epoch) tc.lr_decay_epoch = *a.lr_decay_epoch;
        if (with_variant && a.fusion) tc.fusion_variant = fusion_variant_from(*a.fusion);
        if (with_variant && a.stages) tc.conv_ffn_stages = parse_stages(*a.stages);
        if (a.no_augment) tc.augment = false;
        tc.validate();
        return tc;
    };

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "train one model");
    static TrainArgs ta;
    add_train_options(train_cmd, ta, /*with_variant=*/true);
    train_cmd->callback([&]() {
        st.action = [&]() {
            TrainConfig tc = resolve_train_config(ta, true);
            auto dataset = load_dataset(ta.data);
            const auto t0 = std::chrono::steady_clock::now();
            auto tr = train_loop(tc, dataset, ta.out, &std::cout);
            RunManifest manifest;
            manifest.command = st.command_line;
            manifest.config = tc;
            manifest.dataset_hash = hash_dataset_dir(ta.data);
            manifest.add_artifact("final.ckpt", tr.final_path);
            manifest.add_artifact("best.ckpt", tr.best_path);
            manifest.add_artifact("train_log.csv", tr.log_path);
            manifest.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            manifest.write((fs::path(ta.out) / "run_manifest.json").string());
            std::cout << "best epoch " << tr.best_epoch << " (loss " << fmt(tr.best_total)
                      << "), final loss " << fmt(tr.final_total) << "\n";
            return 0;
        };
    });

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    struct {
        std::string data, ckpt, out = ".";
        double conf_thresh = 0.05, nms_thresh = 0.45;
    } e;
    eval_cmd->add_option("--data", e.data, "dataset directory (images/ + labels/)")->required();
    eval_cmd->add_option("--ckpt", e.ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--out", e.out, "directory for eval_report.json");
    eval_cmd->add_option("--conf-thresh", e.conf_thresh, "decode score threshold");
    eval_cmd->add_option("--nms-thresh", e.nms_thresh, "NMS IoU threshold");
    eval_cmd->callback([&]() {
        st.action = [&]() {
            const auto t0 = std::chrono::steady_clock::now();
            auto ckpt = load_checkpoint(e.ckpt);
            Model<float> model(ckpt.config);
            apply_checkpoint(ckpt, model.params());
            auto dataset = load_dataset(e.data);
            auto report = evaluate_model(model, dataset, e.conf_thresh, e.nms_thresh);
            std::cout << report.to_table();
            fs::create_directories(e.out);
            const std::string json_path = (fs::path(e.out) / "eval_report.json").string();
            write_text(json_path, report.to_json() + "\n");
            RunManifest manifest;
            manifest.command = st.command_line;
            manifest.config = ckpt.config;
            manifest.dataset_hash = hash_dataset_dir(e.data);
            manifest.add_artifact("eval_report.json", json_path);
            manifest.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            manifest.write((fs::path(e.out) / "run_manifest.json").string());
            return 0;
        };
    });

    // ---- ablate-fusion ----
    auto* abf = app.add_subcommand("ablate-fusion",
                                   "train all six fusion variants under one seed and compare");
    static TrainArgs fa;
    add_train_options(abf, fa, /*with_variant=*/false);
    abf->callback([&]() {
        st.action = [&]() {
            TrainConfig base = resolve_train_config(fa, false);
            auto all = load_dataset(fa.data);
            std::vector<Sample> train, eval;
            split_dataset(all, train, eval);
            const auto t0 = std::chrono::steady_clock::now();
            fs::create_directories(fa.out);
            RunManifest manifest;
            manifest.command = st.command_line;
            manifest.dataset_hash = hash_dataset_dir(fa.data);
            std::vector<AblationRow> rows;
            const FusionVariant variants[] = {FusionVariant::ir_only,       FusionVariant::rgb_only,
                                              FusionVariant::concat,        FusionVariant::vanilla_self,
                                              FusionVariant::vanilla_cross, FusionVariant::cc};
            nlohmann::json run_cfgs = nlohmann::json::array();
            for (FusionVariant v : variants) {
                TrainConfig tc = base;
                tc.fusion_variant = v;
                run_cfgs.push_back(tc);
                rows.push_back(run_variant(to_string(v), tc, train, eval,
                                           (fs::path(fa.out) / to_string(v)).string()));
            }
            manifest.config = {{"train", base}, {"runs", run_cfgs}};
            emit_ablation_tables("ablate_fusion", "variant", rows, fa.out, manifest);
            manifest.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            manifest.write((fs::path(fa.out) / "run_manifest.json").string());
            return 0;
        };
    });

    // ---- ablate-convffn ----
    auto* abc = app.add_subcommand(
        "ablate-convffn", "train conv-FFN stage deployments {none, 1, 1+2} and compare");
    static TrainArgs ca;
    add_train_options(abc, ca, /*with_variant=*/false);
    abc->callback([&]() {
        st.action = [&]() {
            TrainConfig base = resolve_train_config(ca, false);
            auto all = load_dataset(ca.data);
            std::vector<Sample> train, eval;
            split_dataset(all, train, eval);
            const auto t0 = std::chrono::steady_clock::now();
            fs::create_directories(ca.out);
            RunManifest manifest;
            manifest.command = st.command_line;
            manifest.dataset_hash = hash_dataset_dir(ca.data);
            std::vector<AblationRow> rows;
            const std::vector<std::vector<int>> deployments = {{}, {1}, {1, 2}};
            nlohmann::json run_cfgs = nlohmann::json::array();
            for (const auto& stages : deployments) {
                TrainConfig tc = base;
                tc.conv_ffn_stages = stages;
                run_cfgs.push_back(tc);
                const std::string label = stages_label(stages);
                rows.push_back(run_variant(label, tc, train, eval,
                                           (fs::path(ca.out) / ("stages_" + label)).string()));
            }
            manifest.config = {{"train", base}, {"runs", run_cfgs}};
            emit_ablation_tables("ablate_convffn", "conv_ffn_stages", rows, ca.out, manifest);
            manifest.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            manifest.write((fs::path(ca.out) / "run_manifest.json").string());
            return 0;
        };
    });

    // ---- gradcheck ----
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    struct {
        int seeds = 10;
        std::string out = ".";
    } gcargs;
    gc->add_option("--seeds", gcargs.seeds, "seeds per operation");
    gc->add_option("--out", gcargs.out, "directory for run_manifest.json");
    gc->callback([&]() {
        st.action = [&]() {
            const auto t0 = std::chrono::steady_clock::now();
            auto results = run_gradcheck(gcargs.seeds);
            bool all_pass = true;
            std::cout << std::left << std::setw(16) << "op" << std::setw(14) << "max_rel_err"
                      << std::setw(12) << "tolerance"
                      << "status\n";
            for (const auto& r : results) {
                std::ostringstream err;
                err << std::scientific << std::setprecision(3) << r.max_err;
                std::ostringstream tol;
                tol << std::scientific << std::setprecision(0) << r.tolerance;
                std::cout << std::left << std::setw(16) << r.op << std::setw(14) << err.str()
                          << std::setw(12) << tol.str() << (r.pass ? "pass" : "FAIL") << "\n";
                all_pass = all_pass && r.pass;
            }
            RunManifest manifest;
            manifest.command = st.command_line;
            manifest.config = {{"seeds", gcargs.seeds}};
            manifest.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            fs::create_directories(gcargs.out);
            manifest.write((fs::path(gcargs.out) / "run_manifest.json").string());
            if (!all_pass) {
                std::cerr << "error: gradient check failed\n";
                return 1;
            }
            return 0;
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& help) {
        return app.exit(help);
    } catch (const CLI::ParseError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    }
    try {
        return st.action();
    } catch (const ConfigError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    } catch (const IoError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
}
