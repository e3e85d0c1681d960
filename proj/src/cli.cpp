#include "hads/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "hads/augment.hpp"
#include "hads/data.hpp"
#include "hads/edge.hpp"
#include "hads/errors.hpp"
#include "hads/metrics.hpp"
#include "hads/trainer.hpp"

namespace hads {

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;

std::string one_line(std::string s) {
    for (auto& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

int fail(const char* kind, const std::string& message, int code) {
    std::cerr << "error: kind=" << kind << " message=" << one_line(message) << '\n';
    return code;
}

std::array<std::size_t, 3> parse_counts(const std::string& text) {
    std::array<std::size_t, 3> out{};
    std::stringstream ss(text);
    std::string tok;
    std::size_t i = 0;
    while (std::getline(ss, tok, ',')) {
        if (i == 3) throw ConfigError("--counts takes three comma-separated integers");
        try {
            std::size_t used = 0;
            const long long v = std::stoll(tok, &used);
            if (used != tok.size() || v < 1) throw std::invalid_argument(tok);
            out[i++] = static_cast<std::size_t>(v);
        } catch (const std::logic_error&) {
            throw ConfigError("--counts: bad count '" + tok + "'");
        }
    }
    if (i != 3) throw ConfigError("--counts takes three comma-separated integers");
    return out;
}

TrainConfig build_config(const std::string& profile, const std::string& config_file,
                         const std::vector<std::string>& overrides) {
    TrainConfig cfg;
    if (profile == "desk")
        cfg = TrainConfig::desk();
    else if (profile != "full")
        throw ConfigError("--profile must be desk or full, got " + profile);
    if (!config_file.empty()) apply_config_file(cfg, config_file);
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

void print_report(const EvalReport& report) { std::cout << render_report(report); }

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"hadsnet: dual-stream ultrasound lesion classifier (train, evaluate, infer)", "hadsnet"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "hadsnet 0.1.0");

    // generate-data
    auto* gen = app.add_subcommand("generate-data", "Write a synthetic three-class dataset (PGM + manifest.csv)");
    std::string gen_out, gen_counts = "200,100,60";
    int gen_size = 64;
    std::uint64_t gen_seed = 7;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--counts", gen_counts, "Images per class: benign,malignant,normal")->capture_default_str();
    gen->add_option("--size", gen_size, "Image side in pixels (multiple of 16)")->capture_default_str();
    gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();

    // augment
    auto* aug = app.add_subcommand("augment", "Write augmented variants of one image with their drawn parameters");
    std::string aug_in, aug_out;
    int aug_count = 8, aug_size = 0;
    std::uint64_t aug_seed = 1;
    bool aug_edges = false, aug_no_geo = false;
    aug->add_option("--image", aug_in, "Input image (PGM or PNG)")->required();
    aug->add_option("--out", aug_out, "Output directory")->required();
    aug->add_option("--count", aug_count, "Number of variants")->capture_default_str();
    aug->add_option("--size", aug_size, "Resize to this side first (0 keeps the input size)");
    aug->add_option("--seed", aug_seed, "Augmentation seed")->capture_default_str();
    aug->add_flag("--emit-edges", aug_edges, "Also write the Sobel edge map of each variant");
    aug->add_flag("--no-geometric", aug_no_geo, "Skip flip/rotation/elastic jitter");

    // train
    auto* train = app.add_subcommand("train", "Cross-validated training with held-out evaluation");
    std::string tr_data, tr_out, tr_config, tr_profile = "desk";
    std::vector<std::string> tr_set;
    bool tr_quiet = false;
    train->add_option("--data", tr_data, "Dataset root with benign/, malignant/, normal/")->required();
    train->add_option("--out", tr_out, "Output directory")->required();
    train->add_option("--config", tr_config, "Flat key=value configuration file");
    train->add_option("--profile", tr_profile, "Base settings: desk or full")->capture_default_str();
    train->add_option("--set", tr_set, "Override one key (key=value); repeatable");
    train->add_flag("--quiet", tr_quiet, "No per-epoch progress lines");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "Evaluate a checkpoint on a dataset");
    std::string ev_ckpt, ev_data, ev_split = "test", ev_config, ev_out, ev_profile = "desk";
    std::vector<std::string> ev_set;
    bool ev_ablate = false;
    eval->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
    eval->add_option("--data", ev_data, "Dataset root")->required();
    eval->add_option("--split", ev_split, "test (held-out part of the configured split) or all")->capture_default_str();
    eval->add_option("--config", ev_config, "Configuration used for training (split seed, test_frac, model)");
    eval->add_option("--profile", ev_profile, "Base settings: desk or full")->capture_default_str();
    eval->add_option("--set", ev_set, "Override one key (key=value); repeatable");
    eval->add_option("--out", ev_out, "Directory for predictions.csv, report.txt, report.csv");
    eval->add_flag("--zero-edge-stream", ev_ablate, "Replace the edge-stream features with zeros");

    // infer
    auto* inf = app.add_subcommand("infer", "Classify one image");
    std::string in_ckpt, in_image;
    inf->add_option("--checkpoint", in_ckpt, "Checkpoint file")->required();
    inf->add_option("--image", in_image, "Image file (PGM or PNG)")->required();

    // report
    auto* rep = app.add_subcommand("report", "Metrics table from a predictions CSV (id,true_label,p0,p1,p2)");
    std::string rep_in, rep_csv;
    rep->add_option("--predictions", rep_in, "Predictions CSV")->required();
    rep->add_option("--csv", rep_csv, "Write the machine-readable metrics CSV here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), kExitUsage);
    }

    try {
        if (gen->parsed()) {
            const LabeledDataset ds = generate_synthetic(parse_counts(gen_counts), gen_size, gen_seed);
            write_dataset(gen_out, ds);
            std::cout << "wrote " << ds.size() << " images (" << ds.class_counts[0] << " benign, " << ds.class_counts[1]
                      << " malignant, " << ds.class_counts[2] << " normal) to " << gen_out << '\n';
        } else if (aug->parsed()) {
            if (aug_count < 1) throw ConfigError("--count must be at least 1");
            Image img = read_image(aug_in);
            if (aug_size > 0) img = resize(img, aug_size);
            AugConfig cfg = AugConfig::for_size(img.width);
            if (aug_no_geo) {
                cfg.flip_prob = 0.0;
                cfg.max_rotation_deg = 0.0;
                cfg.elastic_alpha_px = 0.0;
            }
            fs::create_directories(aug_out);
            std::ofstream manifest(fs::path(aug_out) / "augment_manifest.csv");
            manifest << "index,file,edges,kind,sigma_s,x0,width,alpha,g_min,g_max,flipped,angle_deg,seed\n";
            for (int i = 0; i < aug_count; ++i) {
                Rng rng = derive_rng(aug_seed, {static_cast<std::uint64_t>(i)});
                GeometricDraw g;
                PhysicsDraw p;
                const Image shared = apply_geometric(img, cfg, rng, &g);
                const Image out = apply_physics(shared, cfg, rng, &p);
                char name[32];
                std::snprintf(name, sizeof name, "aug_%04d.pgm", i);
                write_pgm(fs::path(aug_out) / name, out);
                std::string edge_name;
                if (aug_edges) {
                    char en[32];
                    std::snprintf(en, sizeof en, "edge_%04d.pgm", i);
                    edge_name = en;
                    write_pgm(fs::path(aug_out) / edge_name, edge_to_image(sobel(shared)));
                }
                char row[256];
                std::snprintf(row, sizeof row, "%d,%s,%s,%s,%.6f,%d,%d,%.6f,%.6f,%.6f,%d,%.6f,%llu\n", i, name,
                              edge_name.c_str(), to_string(p.kind), p.sigma_s, p.x0, p.width, p.alpha, p.g_min, p.g_max,
                              g.flipped ? 1 : 0, g.angle_deg, static_cast<unsigned long long>(aug_seed));
                manifest << row;
            }
            std::cout << "wrote " << aug_count << " variants to " << aug_out << '\n';
        } else if (train->parsed()) {
            const TrainConfig cfg = build_config(tr_profile, tr_config, tr_set);
            const LabeledDataset ds = load_dataset(tr_data);
            TrainHooks hooks;
            if (!tr_quiet)
                hooks.on_epoch = [](const EpochLog& r) {
                    std::printf("fold %d epoch %d lr %.3g train_loss %.4f train_acc %.3f val_loss %.4f val_acc %.3f\n",
                                r.fold, r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc);
                    std::fflush(stdout);
                };
            const RunSummary s = run_training(ds, cfg, tr_out, tr_data, hooks);
            std::printf("global best: fold %d epoch %d val_loss %.6f\n", s.cv.global_best.fold, s.cv.global_best.epoch,
                        s.cv.global_best.val_loss);
            if (!s.split.test.empty()) print_report(s.test.report);
        } else if (eval->parsed()) {
            const TrainConfig cfg = build_config(ev_profile, ev_config, ev_set);
            const LabeledDataset ds = load_dataset(ev_data);
            std::vector<std::size_t> indices;
            if (ev_split == "test") {
                indices = stratified_split(ds, cfg.test_frac, cfg.seed).test;
            } else if (ev_split == "all") {
                for (std::size_t i = 0; i < ds.size(); ++i) indices.push_back(i);
            } else {
                throw ConfigError("--split must be test or all");
            }
            LoadedCheckpoint loaded = load_checkpoint(ev_ckpt);
            if (!ev_config.empty() || !ev_set.empty()) check_model_config(cfg.model, loaded.model.config());
            ForwardOptions opts;
            opts.zero_edge_stream = ev_ablate;
            const Evaluation ev = evaluate(loaded.model, ds, indices, opts);
            print_report(ev.report);
            if (!ev_out.empty()) {
                fs::create_directories(ev_out);
                std::ofstream pred(fs::path(ev_out) / "predictions.csv");
                write_predictions_csv(pred, ev.predictions);
                std::ofstream txt(fs::path(ev_out) / "report.txt");
                txt << render_report(ev.report);
                std::ofstream csv(fs::path(ev_out) / "report.csv");
                write_report_csv(csv, ev.report);
            }
        } else if (inf->parsed()) {
            const InferResult r = infer(fs::path(in_ckpt), fs::path(in_image));
            std::printf("benign=%.17g malignant=%.17g normal=%.17g\n", r.probs[0], r.probs[1], r.probs[2]);
            std::printf("prediction=%s\n", r.class_name.c_str());
        } else if (rep->parsed()) {
            const auto rows = read_predictions_csv(rep_in);
            const EvalReport report = report_from_predictions(rows);
            print_report(report);
            if (!rep_csv.empty()) {
                std::ofstream csv(rep_csv);
                if (!csv) throw DataError("cannot write " + rep_csv);
                write_report_csv(csv, report);
            }
        }
    } catch (const Error& e) {
        switch (e.kind()) {
            case ErrorKind::Config: return fail("config", e.what(), kExitUsage);
            case ErrorKind::Data: return fail("data", e.what(), kExitData);
            default: return fail(to_string(e.kind()), e.what(), kExitRuntime);
        }
    } catch (const fs::filesystem_error& e) {
        return fail("data", e.what(), kExitData);
    } catch (const std::exception& e) {
        return fail("internal", e.what(), kExitRuntime);
    }
    return kExitOk;
}

}  // namespace hads
