// bcpnn: train, evaluate and distort on MNIST IDX files.

#include "bcpnn/experiment.hpp"
#include "bcpnn/parallel.hpp"

#include <CLI11.hpp>
#include <fmt/core.h>
#include <fmt/os.h>

#include <filesystem>
#include <optional>

using namespace bcpnn;
namespace fs = std::filesystem;

namespace {

struct Options {
    std::string config;
    std::string images, labels;
    std::string train_images, train_labels;
    std::string model;
    std::string out;
    std::string mode;
    std::string drive_mode;
    std::optional<double> scale;
    std::optional<std::uint64_t> seed;
    int threads = 0;
    bool no_rewire = false;
};

ExperimentConfig build_config(const Options& o) {
    ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
    if (o.scale) apply_scale(c, *o.scale);
    if (o.seed) c.seed = *o.seed;
    if (o.no_rewire) c.rewire_epochs = 0;
    if (!o.drive_mode.empty()) set_config_value(c, "drive_mode", o.drive_mode);
    validate(c);
    return c;
}

void apply_threads(int n) {
    set_thread_count(n);
    Eigen::setNbThreads(n > 0 ? n : thread_count());
}

int cmd_train(const Options& o) {
    const auto cfg = build_config(o);
    const auto train = load_mnist(o.images, o.labels);
    fmt::print("training on {} of {} samples from {}\n", cfg.train_samples > 0 ? std::min(cfg.train_samples, train.size()) : train.size(),
               train.size(), o.images);
    fmt::print("hidden {}x{}, p_conn {}, alpha {}, epochs {} (rewiring {}), seed {}\n", cfg.hidden_hypercolumns, cfg.hidden_minicolumns,
               cfg.p_conn, cfg.alpha, cfg.epochs, cfg.rewire_epochs, cfg.seed);
    const auto bundle = train_system(
        cfg, train,
        [](const EpochReport& r) {
            fmt::print("epoch {}: {:.1f} s, mean max activity {:.4f}, rewired {}, min trace {:.3g}, max |w| {:.3f}\n", r.epoch, r.seconds,
                       r.mean_max_activity, r.rewired, r.min_trace, r.max_weight);
            std::fflush(stdout);
        },
        [](const std::string& stage, double s) {
            fmt::print("{}: {:.1f} s\n", stage, s);
            std::fflush(stdout);
        });
    if (const auto parent = fs::path(o.model).parent_path(); !parent.empty()) fs::create_directories(parent);
    save_model(o.model, bundle);
    fmt::print("wrote {}\n", o.model);
    return 0;
}

void write_ortho(const ModelBundle& b, const ExperimentConfig& cfg, const EncodedDataset& test, const fs::path& out) {
    const auto r = evaluate_orthogonality(b, test.head(cfg.test_samples));
    auto csv = fmt::output_file((out / "ortho.csv").string());
    csv.print("repr_kind,ratio,n\n");
    for (auto kind : kRepresentations) csv.print("{},{:.6f},{}\n", to_string(kind), r.of(kind), r.samples);
    for (auto kind : kRepresentations) fmt::print("{:<22} {:.3f}\n", to_string(kind), r.of(kind));
    fmt::print("on pixel intensities only: input {:.3f}, input_attractor {:.3f}\n", r.input_pixels, r.input_attractor_pixels);
    fmt::print("hidden attractor: {}/{} converged, median steps {}\n", r.hidden.converged, r.hidden.total, r.hidden.median_steps);
    fmt::print("input attractor: {}/{} converged, median steps {}\n", r.input.converged, r.input.total, r.input.median_steps);
}

void write_protos(const ModelBundle& b, const ExperimentConfig& cfg, const EncodedDataset& test, const fs::path& out) {
    const auto data = test.head(cfg.test_samples);
    const auto labels = labels_of(data);
    const auto net = run_network(b, data.batch(0, data.size()));
    for (double theta : {cfg.theta_low, cfg.theta_high}) {
        const auto r = summarize_prototypes(net.attractor.final_states, labels, theta);
        const auto tag = fmt::format("theta_{}", theta);
        fs::create_directories(out / tag);
        auto csv = fmt::output_file((out / ("prototypes_" + tag + ".csv")).string());
        csv.print("prototype_id,count,label_majority\n");
        Eigen::MatrixXd leaders(static_cast<Eigen::Index>(r.rows.size()), net.attractor.final_states.cols());
        for (std::size_t k = 0; k < r.rows.size(); ++k) {
            csv.print("{},{},{}\n", r.rows[k].id, r.rows[k].count, r.rows[k].label_majority);
            leaders.row(static_cast<Eigen::Index>(k)) = net.attractor.final_states.row(static_cast<Eigen::Index>(r.rows[k].leader));
        }
        const auto pixels = reconstruct_pixels(b.feedforward, leaders);
        for (std::size_t k = 0; k < r.rows.size(); ++k)
            write_pgm(out / tag / fmt::format("proto_{}_n{}.pgm", r.rows[k].id, r.rows[k].count),
                      image_from_intensities(pixels.row(static_cast<Eigen::Index>(k)).transpose()));
        fmt::print("theta {}: {} prototypes, majority labels cover {} classes\n", theta, r.rows.size(), r.classes_covered);
    }
}

void write_robust(const ModelBundle& b, const ExperimentConfig& cfg, const EncodedDataset& test, const Options& o, const fs::path& out) {
    if (o.train_images.empty() || o.train_labels.empty())
        throw CLI::ValidationError("--mode robust", "needs --train-images and --train-labels for the probes");
    const auto train = load_mnist(o.train_images, o.train_labels);
    const auto probes = train_robustness_probes(b, train, cfg.probe());
    fmt::print("trained {} probes on {} feedforward representations\n", probes.size(), train.size());
    const auto set = build_distorted_set(test.images(), cfg.samples_per_cell, cfg.distort_seed);
    const auto r = evaluate_robustness(probes, b, set);

    auto csv = fmt::output_file((out / "robustness.csv").string());
    csv.print("type,level,repr_kind,trial,accuracy\n");
    for (const auto& row : r.rows)
        csv.print("{},{},{},{},{:.6f}\n", to_string(row.spec.type), row.spec.level_string(), to_string(row.kind), row.trial, row.accuracy);

    fs::create_directories(out / "gallery");
    const auto pixels = reconstruct_pixels(b.feedforward, r.attractor);
    std::size_t idx = 0;
    for (std::size_t k = 0; k < set.size(); ++k) {
        if (k > 0 && (set[k].spec.type != set[k - 1].spec.type || set[k].spec.tenths != set[k - 1].spec.tenths)) idx = 0;
        const auto stem = fmt::format("distort_{}_{}_{}", to_string(set[k].spec.type), set[k].spec.level_string(), idx++);
        write_pgm(out / "gallery" / (stem + "_in.pgm"), set[k].image);
        write_pgm(out / "gallery" / (stem + "_out.pgm"), image_from_intensities(pixels.row(static_cast<Eigen::Index>(k)).transpose()));
    }
    fmt::print("level  feedforward  attractor\n");
    for (int t = 1; t <= kDistortionLevels; ++t)
        fmt::print("{:.1f}    {:.3f}        {:.3f}\n", t / 10.0, r.level_mean(RobustKind::feedforward, t), r.level_mean(RobustKind::attractor, t));
}

int cmd_eval(const Options& o) {
    auto bundle = load_model(o.model);
    auto cfg = parse_config(bundle.config_text);
    if (!o.drive_mode.empty()) bundle.recurrent.drive_mode = parse_drive_mode(o.drive_mode);
    if (o.seed) cfg.distort_seed = *o.seed;
    const auto test = load_mnist(o.images, o.labels);
    require_same(test.geometry(), bundle.feedforward.input_geometry, "test data");
    const fs::path out(o.out);
    fs::create_directories(out);
    if (o.mode == "ortho")
        write_ortho(bundle, cfg, test, out);
    else if (o.mode == "protos")
        write_protos(bundle, cfg, test, out);
    else
        write_robust(bundle, cfg, test, o, out);
    return 0;
}

int cmd_distort(const Options& o) {
    auto cfg = build_config(o);
    const auto seed = o.seed.value_or(cfg.distort_seed);
    const auto set = build_distorted_set(load_idx(o.images, o.labels), cfg.samples_per_cell, seed);
    export_distorted_set(set, o.out);
    fmt::print("wrote {} images and manifest.csv to {}\n", set.size(), o.out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"BCPNN feedforward + recurrent attractor network on MNIST"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--images", o.images, "IDX image file")->required()->check(CLI::ExistingFile);
        sub->add_option("--labels", o.labels, "IDX label file")->required()->check(CLI::ExistingFile);
        sub->add_option("--threads", o.threads, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    };

    auto* train = app.add_subcommand("train", "train the feedforward and recurrent projections");
    common(train);
    train->add_option("--config", o.config, "key = value configuration file")->check(CLI::ExistingFile);
    train->add_option("--model", o.model, "output model file")->required();
    train->add_option("--scale", o.scale, "desk preset: scale hidden layer and training set (0, 1]");
    train->add_option("--seed", o.seed, "overrides the configured seed");
    train->add_option("--drive-mode", o.drive_mode, "clamped-init or persistent-drive");
    train->add_flag("--no-rewire", o.no_rewire, "keep the initial random mask");

    auto* eval = app.add_subcommand("eval", "evaluate a trained model on test data");
    common(eval);
    eval->add_option("--model", o.model, "model file")->required()->check(CLI::ExistingFile);
    eval->add_option("--mode", o.mode, "ortho, protos or robust")->required()->check(CLI::IsMember({"ortho", "protos", "robust"}));
    eval->add_option("--out", o.out, "output directory")->required();
    eval->add_option("--seed", o.seed, "overrides the distortion seed (robust)");
    eval->add_option("--drive-mode", o.drive_mode, "overrides the model's drive mode");
    eval->add_option("--train-images", o.train_images, "training images for the probes (robust)")->check(CLI::ExistingFile);
    eval->add_option("--train-labels", o.train_labels, "training labels for the probes (robust)")->check(CLI::ExistingFile);

    auto* dist = app.add_subcommand("distort", "write the distorted test set as PGM files");
    common(dist);
    dist->add_option("--config", o.config, "key = value configuration file")->check(CLI::ExistingFile);
    dist->add_option("--out", o.out, "output directory")->required();
    dist->add_option("--seed", o.seed, "distortion seed");

    CLI11_PARSE(app, argc, argv);
    try {
        apply_threads(o.threads);
        if (train->parsed()) return cmd_train(o);
        if (eval->parsed()) return cmd_eval(o);
        return cmd_distort(o);
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const config_error& e) {
        fmt::print(stderr, "config error: {}\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
}
