// dti — command-line front end for the thermal texture classification
// pipeline: synthetic corpus generation, quantization, dynamics statistics,
// training, cross-validation, evaluation, serving and streaming
// classification.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "dti/dataset.hpp"
#include "dti/gradcheck.hpp"
#include "dti/model.hpp"
#include "dti/netserve.hpp"
#include "dti/train.hpp"

namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_stop{false};

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw dti::IoError("cannot write " + path);
    out << content;
}

void write_pgm(const std::string& path, const dti::QuantizedImage& img) {
    if (img.range.lo < 0 || img.range.hi > 255)
        throw dti::InvalidConfig("PGM output needs a range within [0,255]");
    std::string out = "P5\n" + std::to_string(img.n) + " " + std::to_string(img.n) + "\n" +
                      std::to_string(img.range.hi) + "\n";
    for (int p : img.pixels) out.push_back(static_cast<char>(static_cast<unsigned char>(p)));
    write_file(path, out);
}

struct CorpusOptions {
    std::string dir;
    int crop = 75;
    int lo = 0;
    int hi = 255;

    void attach(CLI::App* cmd, bool required = true) {
        auto* o = cmd->add_option("--corpus", dir, "corpus directory (per-class DTIF folders or manifest.tsv)");
        if (required) o->required();
        cmd->add_option("--crop", crop, "center-crop side length")->check(CLI::PositiveNumber);
        cmd->add_option("--lo", lo, "lower quantization bound");
        cmd->add_option("--hi", hi, "upper quantization bound");
    }

    dti::LabeledDataset load() const {
        return dti::load_corpus(dir, crop, dti::QuantizationRange{lo, hi});
    }
};

struct TrainOptions {
    std::string arch = "study2";
    std::string st = "off";
    int epochs = 30; // desk-scale default; the full-scale run is --epochs 350
    double lr = 0.001;
    int batch = 256;
    double momentum = 0.9;

    void attach(CLI::App* cmd) {
        cmd->add_option("--arch", arch, "network architecture")
            ->check(CLI::IsMember({"study1", "study2"}));
        cmd->add_option("--st", st, "spatial transformer front end")
            ->check(CLI::IsMember({"on", "off"}));
        cmd->add_option("--epochs", epochs, "training epochs")->check(CLI::PositiveNumber);
        cmd->add_option("--lr", lr, "learning rate")->check(CLI::NonNegativeNumber);
        cmd->add_option("--batch", batch, "batch size")->check(CLI::PositiveNumber);
        cmd->add_option("--momentum", momentum, "SGD momentum");
    }

    dti::NetworkSpec spec(int classes) const {
        dti::NetworkSpec s =
            arch == "study1" ? dti::build_study1_spec(classes) : dti::build_study2_spec(classes);
        if (st == "on") s = dti::attach_spatial_transformer(s);
        return s;
    }

    dti::TrainConfig config(std::uint64_t seed) const {
        dti::TrainConfig c;
        c.learning_rate = lr;
        c.batch_size = batch;
        c.epochs = epochs;
        c.momentum = momentum;
        c.seed = seed;
        return c;
    }
};

void print_report(const dti::EvalReport& rep, bool verbose) {
    std::printf("samples:             %lld\n",
                static_cast<long long>([&] {
                    std::int64_t n = 0;
                    for (auto s : rep.support) n += s;
                    return n;
                }()));
    std::printf("overall accuracy:    %.4f\n", rep.overall_accuracy);
    std::printf("mean class accuracy: %.4f\n", rep.mean_class_accuracy);
    if (rep.fold_accuracies.size() > 1)
        std::printf("fold accuracy:       mean %.4f, sd %.4f over %zu folds\n", rep.fold_mean,
                    rep.fold_sd, rep.fold_accuracies.size());
    for (std::size_t i = 0; i < rep.labels.size(); ++i)
        std::printf("  %-12s acc %.4f  (n=%lld)\n", rep.labels[i].c_str(),
                    rep.per_class_accuracy[i], static_cast<long long>(rep.support[i]));
    if (!rep.unseen_conditions.empty()) {
        std::printf("conditions unseen in training:");
        for (const auto& c : rep.unseen_conditions) std::printf(" %s", c.c_str());
        std::printf("\n");
    }
    if (verbose) std::fputs(dti::report_to_json(rep).c_str(), stdout);
}

void save_report(const dti::EvalReport& rep, const std::string& report_path,
                 const std::string& csv_path) {
    if (!report_path.empty()) write_file(report_path, dti::report_to_json(rep));
    if (!csv_path.empty()) write_file(csv_path, dti::confusion_to_csv(rep));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deep thermal texture classification pipeline"};
    app.require_subcommand(1);

    std::uint64_t seed = 1;
    bool verbose = false;
    app.add_option("--seed", seed, "master seed; all randomness derives from it");
    app.add_flag("--verbose", verbose, "chatty output");

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate a synthetic thermal texture corpus");
    std::string synth_out;
    int synth_classes = 5, synth_frames = 200;
    std::string synth_condition = "base";
    double synth_shift = 1.0, synth_noise = 0.05, synth_amplitude = 1.0;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--classes", synth_classes, "number of texture classes (max 5 families)")
        ->check(CLI::Range(1, 5));
    synth->add_option("--frames-per-class", synth_frames, "frames per class")
        ->check(CLI::PositiveNumber);
    synth->add_option("--condition", synth_condition, "condition tag recorded in the manifest");
    synth->add_option("--shift", synth_shift,
                      "texture-parameter shift factor (use != 1 for a held-out condition)");
    synth->add_option("--noise", synth_noise, "sensor noise SD in degrees C")
        ->check(CLI::NonNegativeNumber);
    synth->add_option("--amplitude", synth_amplitude, "texture amplitude in degrees C");

    // ---- quantize ----
    auto* quant = app.add_subcommand("quantize", "dynamic-range quantize one DTIF frame");
    std::string quant_in, quant_out;
    int quant_crop = 75, quant_lo = 0, quant_hi = 255;
    quant->add_option("--in", quant_in, "input DTIF frame")->required();
    quant->add_option("--out", quant_out, "output PGM image")->required();
    quant->add_option("--crop", quant_crop, "center-crop side")->check(CLI::PositiveNumber);
    quant->add_option("--lo", quant_lo, "lower pixel bound");
    quant->add_option("--hi", quant_hi, "upper pixel bound");

    // ---- stats ----
    auto* stats = app.add_subcommand("stats", "thermal-dynamics statistics of a corpus");
    CorpusOptions stats_corpus;
    stats_corpus.attach(stats);

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "train a model on a corpus");
    CorpusOptions train_corpus;
    TrainOptions train_opts;
    std::string train_out;
    train_corpus.attach(train_cmd);
    train_opts.attach(train_cmd);
    train_cmd->add_option("--out", train_out, "output DTIM model path")->required();

    // ---- xval ----
    auto* xval = app.add_subcommand("xval", "stratified k-fold cross-validation");
    CorpusOptions xval_corpus;
    TrainOptions xval_opts;
    int xval_k = 5, xval_jobs = 1;
    std::string xval_report, xval_csv;
    xval_corpus.attach(xval);
    xval_opts.attach(xval);
    xval->add_option("--k", xval_k, "fold count")->check(CLI::Range(2, 1000));
    xval->add_option("--jobs", xval_jobs, "concurrent fold training jobs")
        ->check(CLI::PositiveNumber);
    xval->add_option("--report", xval_report, "write the JSON report here");
    xval->add_option("--csv", xval_csv, "write the confusion matrix CSV here");

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a model on a corpus");
    CorpusOptions eval_corpus;
    std::string eval_model, eval_held, eval_report, eval_csv;
    eval_cmd->add_option("--model", eval_model, "DTIM model path")->required();
    eval_corpus.attach(eval_cmd);
    eval_cmd->add_option("--held-condition", eval_held,
                         "evaluate only samples with this condition tag (cross-condition test)");
    eval_cmd->add_option("--report", eval_report, "write the JSON report here");
    eval_cmd->add_option("--csv", eval_csv, "write the confusion matrix CSV here");

    // ---- serve ----
    auto* serve_cmd = app.add_subcommand("serve", "serve a model over the TCP wire protocol");
    std::string serve_model, serve_bind = "127.0.0.1:5907";
    double serve_threshold = 0.5;
    serve_cmd->add_option("--model", serve_model, "DTIM model path")->required();
    serve_cmd->add_option("--bind", serve_bind, "host:port to listen on");
    serve_cmd->add_option("--threshold", serve_threshold, "gated-prediction threshold")
        ->check(CLI::Range(0.0, 1.0));

    // ---- classify ----
    auto* classify = app.add_subcommand("classify", "stream a corpus to a server, log predictions");
    std::string classify_server, classify_corpus, classify_out;
    int classify_crop = 75, classify_lo = 0, classify_hi = 255;
    classify->add_option("--server", classify_server, "server host:port")->required();
    classify->add_option("--corpus", classify_corpus, "corpus directory or single .dtif frame")
        ->required();
    classify->add_option("--crop", classify_crop, "center-crop side")->check(CLI::PositiveNumber);
    classify->add_option("--lo", classify_lo, "lower pixel bound");
    classify->add_option("--hi", classify_hi, "upper pixel bound");
    classify->add_option("--out", classify_out, "prediction log path (default stdout)");

    // ---- gradcheck ----
    auto* gc = app.add_subcommand("gradcheck", "run the operator gradient suite");
    int gc_instances = 10;
    double gc_tolerance = 1e-6;
    gc->add_option("--instances", gc_instances, "random instances per operator")
        ->check(CLI::PositiveNumber);
    gc->add_option("--tolerance", gc_tolerance, "max relative error allowed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e); // prints help, exit 0
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        std::cerr << app.help() << "\n";
        return 1;
    }

    try {
        if (*synth) {
            dti::SynthConfig cfg = dti::SynthConfig::default_corpus(seed);
            cfg.classes.resize(synth_classes);
            cfg.frames_per_class = synth_frames;
            cfg.noise_sd = synth_noise;
            for (auto& c : cfg.classes) c.amplitude = synth_amplitude;
            if (synth_shift != 1.0)
                cfg = cfg.shifted(synth_shift, 1.0, 1.0, synth_condition);
            cfg.condition = synth_condition;
            dti::generate_synthetic(cfg, synth_out);
            if (verbose)
                std::printf("wrote %d x %d frames to %s\n", synth_classes, synth_frames,
                            synth_out.c_str());
        } else if (*quant) {
            const dti::ThermalFrame frame = dti::read_dtif(quant_in);
            const dti::Roi roi = dti::center_crop(frame, quant_crop);
            const dti::QuantizedImage img =
                dti::quantize(frame, roi, dti::QuantizationRange{quant_lo, quant_hi});
            if (img.dynamics == 0.0)
                std::fprintf(stderr, "warning: dynamics=0 (flat frame), image is all %d\n",
                             quant_lo);
            write_pgm(quant_out, img);
            std::printf("dynamics: %.6g\n", img.dynamics);
        } else if (*stats) {
            const dti::LabeledDataset ds = stats_corpus.load();
            const dti::DynamicsStats all = dti::thermal_dynamics(ds.samples);
            std::printf("images: %zu\n", ds.size());
            std::printf("dynamics: min %.4g  max %.4g  mean %.4g  sd %.4g\n", all.min, all.max,
                        all.mean, all.sd);
            for (std::size_t c = 0; c < ds.vocabulary.size(); ++c) {
                std::vector<dti::QuantizedImage> cls;
                for (std::size_t i = 0; i < ds.size(); ++i)
                    if (ds.labels[i] == static_cast<int>(c)) cls.push_back(ds.samples[i]);
                const dti::DynamicsStats s = dti::thermal_dynamics(cls);
                std::printf("  %-12s min %.4g  max %.4g  mean %.4g  sd %.4g  (n=%zu)\n",
                            ds.vocabulary[c].c_str(), s.min, s.max, s.mean, s.sd, cls.size());
            }
        } else if (*train_cmd) {
            const dti::LabeledDataset ds = train_corpus.load();
            const dti::NetworkSpec spec =
                train_opts.spec(static_cast<int>(ds.vocabulary.size()));
            dti::Model model = dti::init_parameters(spec, dti::derive_seed(seed, 0x1717));
            const auto t0 = std::chrono::steady_clock::now();
            dti::TrainResult r = dti::train(std::move(model), ds, train_opts.config(seed));
            const double secs =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            dti::save_model(r.model, train_out);
            std::printf("trained %d epochs on %zu samples in %.1fs; loss %.4f -> %.4f\n",
                        train_opts.epochs, ds.size(), secs, r.loss_curve.front(),
                        r.loss_curve.back());
            if (verbose)
                for (std::size_t e = 0; e < r.loss_curve.size(); ++e)
                    std::printf("  epoch %3zu  loss %.5f\n", e + 1, r.loss_curve[e]);
        } else if (*xval) {
            const dti::LabeledDataset ds = xval_corpus.load();
            const dti::NetworkSpec spec = xval_opts.spec(static_cast<int>(ds.vocabulary.size()));
            const dti::EvalReport rep =
                dti::cross_validate(spec, ds, xval_k, xval_opts.config(seed), xval_jobs);
            print_report(rep, verbose);
            save_report(rep, xval_report, xval_csv);
        } else if (*eval_cmd) {
            const dti::Model model = dti::load_model(eval_model);
            dti::LabeledDataset ds = eval_corpus.load();
            dti::EvalReport rep;
            if (!eval_held.empty()) {
                auto [rest, held] = dti::split_by_condition(ds, {eval_held});
                rep = dti::cross_condition_eval(model, held);
            } else {
                rep = dti::evaluate(model, ds);
            }
            print_report(rep, verbose);
            save_report(rep, eval_report, eval_csv);
        } else if (*serve_cmd) {
            auto server = dti::serve(serve_model, serve_bind,
                                     static_cast<float>(serve_threshold));
            std::printf("serving %s on %s (threshold %.2f); Ctrl-C stops\n", serve_model.c_str(),
                        serve_bind.c_str(), serve_threshold);
            std::fflush(stdout);
            std::signal(SIGINT, [](int) { g_stop = true; });
            std::signal(SIGTERM, [](int) { g_stop = true; });
            while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
            server->stop();
        } else if (*classify) {
            const auto [host, port] = dti::parse_addr(classify_server);
            const dti::PredictionLog log =
                dti::client_stream(classify_corpus, host, port, classify_crop,
                                   dti::QuantizationRange{classify_lo, classify_hi});
            const std::string text = dti::log_to_text(log);
            if (classify_out.empty())
                std::fputs(text.c_str(), stdout);
            else
                write_file(classify_out, text);
        } else if (*gc) {
            const auto reports = dti::gradient_suite(gc_instances, gc_tolerance, seed);
            bool all_pass = true;
            for (const auto& r : reports) {
                std::printf("%-14s %2d instances  max rel err %.3e  %s\n", r.op.c_str(),
                            r.instances, r.max_rel_error, r.pass ? "ok" : "FAIL");
                all_pass = all_pass && r.pass;
            }
            if (!all_pass) throw dti::InvalidConfig("gradient suite failed");
        }
    } catch (const dti::Error& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
