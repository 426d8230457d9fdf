#include "dub/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>

#include "dub/config.hpp"
#include "dub/io.hpp"
#include "dub/random.hpp"
#include "dub/recalib.hpp"
#include "dub/uncertainty.hpp"

namespace dub {

namespace {

namespace fs = std::filesystem;

struct Options {
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    std::string data;
    std::string checkpoint;
    std::string recal;
    std::string image;
    std::string predictions;
    std::string split = "test";
    std::string variant;
    std::string levels = "1,2,4";
    std::string seeds = "0";
    double coverage = 0.90;
    double threshold = 20.0;
    int epochs = 0;
    bool heatmaps = false;
};

PipelineConfig effective_config(const Options& o) {
    PipelineConfig cfg = o.config.empty() ? PipelineConfig{} : load_config(o.config);
    if (!o.variant.empty()) cfg.train.variant = parse_variant(o.variant);
    if (o.epochs > 0) cfg.train.epochs = o.epochs;
    return cfg;
}

fs::path checkpoint_path(const Options& o) {
    return o.checkpoint.empty() ? fs::path(o.out) / "model.dubn" : fs::path(o.checkpoint);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    for (const std::string& f : detail::split_csv_line(text)) {
        std::uint64_t v = 0;
        auto [end, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
        if (ec != std::errc{} || end != f.data() + f.size()) throw std::invalid_argument("bad seed '" + f + "'");
        seeds.push_back(v);
    }
    if (seeds.empty()) throw std::invalid_argument("no seeds given");
    return seeds;
}

std::vector<int> parse_levels(const std::string& text) {
    std::vector<int> levels;
    for (const std::string& f : detail::split_csv_line(text)) {
        int v = 0;
        auto [end, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
        if (ec != std::errc{} || end != f.data() + f.size()) throw std::invalid_argument("bad zoom level '" + f + "'");
        levels.push_back(v);
    }
    return levels;
}

std::string svg_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

// Expected-vs-observed quantile curve on the calibration residuals, before
// and after recalibration.
std::string calibration_svg(const std::vector<double>& z, const RecalibrationMap& map) {
    constexpr double size = 400.0, margin = 40.0, span = size - 2 * margin;
    auto px = [&](double p) { return svg_number(margin + p * span); };
    auto py = [&](double p) { return svg_number(size - margin - p * span); };
    auto observed = [&](double threshold) {
        const auto hits = std::count_if(z.begin(), z.end(), [&](double v) { return v <= threshold; });
        return static_cast<double>(hits) / static_cast<double>(z.size());
    };
    std::string raw, cal;
    for (int i = 1; i < 20; ++i) {
        const double p = i / 20.0;
        raw += px(p) + "," + py(observed(normal_quantile(p))) + " ";
        cal += px(p) + "," + py(observed(invert_quantile(map, p))) + " ";
    }
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"400\" height=\"400\" viewBox=\"0 0 400 400\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"400\" height=\"400\" fill=\"white\"/>\n"
      << "<rect x=\"40\" y=\"40\" width=\"320\" height=\"320\" fill=\"none\" stroke=\"black\"/>\n"
      << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\"" << py(1)
      << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n"
      << "<polyline fill=\"none\" stroke=\"#d95f02\" stroke-width=\"2\" points=\"" << raw << "\"/>\n"
      << "<polyline fill=\"none\" stroke=\"#1b9e77\" stroke-width=\"2\" points=\"" << cal << "\"/>\n"
      << "<text x=\"200\" y=\"390\" text-anchor=\"middle\" font-size=\"12\">expected quantile</text>\n"
      << "<text x=\"12\" y=\"200\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 12 200)\">"
         "observed fraction</text>\n"
      << "<text x=\"50\" y=\"60\" font-size=\"12\" fill=\"#d95f02\">gaussian</text>\n"
      << "<text x=\"50\" y=\"76\" font-size=\"12\" fill=\"#1b9e77\">recalibrated</text>\n"
      << "</svg>\n";
    return s.str();
}

int cmd_config(const Options& o, std::ostream& out) {
    out << format_config(effective_config(o));
    return kExitOk;
}

int cmd_synth(const Options& o, std::ostream& out) {
    const PipelineConfig cfg = effective_config(o);
    const SyntheticDataset data = generate_dataset(cfg.scene, cfg.sizes, derive_seed(o.seed, "data"));
    write_dataset(o.out, data);
    out << "wrote " << data.images.size() << " scenes to " << o.out << "\n";
    return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
    PipelineConfig cfg = effective_config(o);
    cfg.train.seed = derive_seed(o.seed, "train");
    const SyntheticDataset data = read_dataset(o.data);
    const auto examples = make_examples(data.subset(Split::train), cfg.kernel, cfg.arch.downsample_factor());
    const TrainResult result = train(examples, cfg.arch, cfg.train, [&out](const LossRecord& r) {
        out << "epoch " << r.epoch << " loss " << detail::format_double(r.mean_loss) << "\n";
    });
    save_checkpoint(result.params, checkpoint_path(o));
    write_loss_log(fs::path(o.out) / "loss.csv", result.history);
    out << "wrote " << checkpoint_path(o).string() << "\n";
    return kExitOk;
}

int cmd_calibrate(const Options& o, std::ostream& out) {
    const DubNetParams params = load_checkpoint(checkpoint_path(o));
    const SyntheticDataset data = read_dataset(o.data);
    const auto records = residual_records(params, data.subset(Split::val));
    if (records.size() < 2) throw std::runtime_error("calibrate: need at least 2 validation images");
    const RecalibrationMap map = recalibrate(records);
    write_recalibration(fs::path(o.out) / "recal.csv", map);
    detail::write_file(fs::path(o.out) / "calibration.svg", calibration_svg(standardized_residuals(records), map));
    out << "fitted " << map.size() << " knots from " << records.size() << " validation images\n";
    return kExitOk;
}

int cmd_predict(const Options& o, std::ostream& out) {
    const DubNetParams params = load_checkpoint(checkpoint_path(o));
    std::optional<RecalibrationMap> recal;
    if (!o.recal.empty()) recal = read_recalibration(o.recal);

    std::vector<DotAnnotatedImage> images;
    if (!o.image.empty()) {
        images.push_back(DotAnnotatedImage{fs::path(o.image).stem().string(), read_pgm(o.image), {}});
    } else {
        images = read_dataset(o.data).subset(parse_split(o.split));
    }
    const RecalibrationMap* map = recal ? &*recal : nullptr;
    const auto rows = predict_images(params, images, map, o.coverage);
    write_predictions(fs::path(o.out) / "predictions.csv", rows, recal.has_value(), o.coverage);
    if (o.heatmaps) {
        for (const DotAnnotatedImage& img : images) {
            write_heatmaps(fs::path(o.out) / "heatmaps", img.id, decompose(params, img.pixels));
        }
    }
    if (!recal) out << "no recalibration map: intervals are uncalibrated\n";
    out << "predicted " << rows.size() << " images\n";
    return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
    const PredictionReport report = read_predictions(o.predictions);
    const SyntheticDataset data = read_dataset(o.data);
    std::map<std::string, double> truth;
    for (const DotAnnotatedImage& img : data.images) truth[img.id] = img.count();
    std::vector<double> pred, gt;
    std::vector<Interval> intervals;
    for (const PredictionRow& r : report.rows) {
        const auto it = truth.find(r.id);
        if (it == truth.end()) throw std::runtime_error("eval: no annotations for '" + r.id + "'");
        pred.push_back(r.count_mean);
        gt.push_back(it->second);
        intervals.push_back(r.interval);
    }
    MetricsReport m = metrics(pred, gt);
    m.coverage_at[report.coverage] = coverage(intervals, gt);
    write_metrics(fs::path(o.out) / "metrics.csv", m);
    out << "n " << m.n << " mae " << detail::format_double(m.mae) << " rmse " << detail::format_double(m.rmse)
        << " coverage " << detail::format_double(m.coverage_at[report.coverage])
        << (report.calibrated ? "" : " (uncalibrated intervals)") << "\n";
    return kExitOk;
}

int cmd_ablate(const Options& o, std::ostream& out) {
    const PipelineConfig cfg = effective_config(o);
    AblationConfig ac{cfg.train, cfg.sizes, cfg.kernel};
    const auto seeds = parse_seed_list(o.seeds);
    const auto rows = ablation_run(cfg.arch, cfg.scene, seeds, ac);
    write_ablation(fs::path(o.out) / "ablation.csv", rows);
    for (const AblationRow& r : rows) {
        out << "seed " << r.seed << " " << variant_name(r.variant) << " mae " << detail::format_double(r.mae)
            << " rmse " << detail::format_double(r.rmse) << "\n";
    }
    return kExitOk;
}

int cmd_partition(const Options& o, std::ostream& out) {
    const DubNetParams params = load_checkpoint(checkpoint_path(o));
    std::optional<RecalibrationMap> recal;
    if (!o.recal.empty()) recal = read_recalibration(o.recal);
    const Tensor image = read_pgm(o.image);
    PartitionConfig pc;
    pc.threshold = o.threshold;
    pc.levels = parse_levels(o.levels);
    pc.coverage = o.coverage;
    const PartitionReport report = adaptive_partition(params, image, pc, recal ? &*recal : nullptr);
    write_partition_report(fs::path(o.out) / "partition.csv", report, image.dim(1), image.dim(2));
    out << report.tiles.size() << " tiles, total count " << detail::format_double(report.total_count) << "\n";
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Counting with decomposed uncertainty from bootstrapped heads", "dubcount"};
    app.require_subcommand(1);
    Options o;

    auto add_config = [&](CLI::App* c) { c->add_option("--config", o.config, "INI configuration file")->check(CLI::ExistingFile); };
    auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "root random seed"); };
    auto add_out = [&](CLI::App* c) { c->add_option("--out", o.out, "output directory")->required(); };
    auto add_coverage = [&](CLI::App* c) {
        c->add_option("--coverage", o.coverage, "interval coverage level")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    };

    CLI::App* config = app.add_subcommand("config", "print the effective configuration");
    add_config(config);

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    add_config(synth);
    add_seed(synth);
    add_out(synth);

    CLI::App* train_cmd = app.add_subcommand("train", "train a model on the training split");
    add_config(train_cmd);
    add_seed(train_cmd);
    add_out(train_cmd);
    train_cmd->add_option("--data", o.data, "dataset directory")->required();
    train_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint to write (default OUT/model.dubn)");
    train_cmd->add_option("--variant", o.variant, "base|aleatoric|epistemic|combined")
        ->check(CLI::IsMember({"base", "aleatoric", "aleatoric_only", "epistemic", "epistemic_only", "combined"}));
    train_cmd->add_option("--epochs", o.epochs, "override the configured epoch count")->check(CLI::PositiveNumber);

    CLI::App* calibrate = app.add_subcommand("calibrate", "fit a recalibration map on the validation split");
    add_out(calibrate);
    calibrate->add_option("--data", o.data, "dataset directory")->required();
    calibrate->add_option("--checkpoint", o.checkpoint, "trained model")->required();

    CLI::App* predict = app.add_subcommand("predict", "predict counts with intervals");
    add_out(predict);
    add_coverage(predict);
    predict->add_option("--checkpoint", o.checkpoint, "trained model")->required();
    predict->add_option("--recal", o.recal, "recalibration map (intervals are uncalibrated without it)");
    auto* pdata = predict->add_option("--data", o.data, "dataset directory");
    auto* pimage = predict->add_option("--image", o.image, "single PGM image");
    pdata->excludes(pimage);
    predict->add_option("--split", o.split, "split to predict with --data")
        ->check(CLI::IsMember({"train", "val", "test"}))
        ->capture_default_str();
    predict->add_flag("--heatmaps", o.heatmaps, "write mean/epistemic/aleatoric heatmaps");

    CLI::App* eval = app.add_subcommand("eval", "score predictions against annotations");
    add_out(eval);
    eval->add_option("--data", o.data, "dataset directory")->required();
    eval->add_option("--predictions", o.predictions, "predictions.csv from predict")->required();

    CLI::App* ablate = app.add_subcommand("ablate", "train and score all four variants");
    add_config(ablate);
    add_out(ablate);
    ablate->add_option("--seeds", o.seeds, "comma-separated seeds")->capture_default_str();
    ablate->add_option("--epochs", o.epochs, "override the configured epoch count")->check(CLI::PositiveNumber);

    CLI::App* partition = app.add_subcommand("partition", "adaptive zoom partition of a large image");
    add_out(partition);
    add_coverage(partition);
    partition->add_option("--checkpoint", o.checkpoint, "trained model")->required();
    partition->add_option("--image", o.image, "PGM image")->required();
    partition->add_option("--recal", o.recal, "recalibration map");
    partition->add_option("--threshold", o.threshold, "minimum predicted count of a zoomed tile")->capture_default_str();
    partition->add_option("--levels", o.levels, "tiles per side at each zoom level")->capture_default_str();

    try {
        app.parse(argc, argv);
        if (*predict && o.data.empty() && o.image.empty()) {
            throw CLI::RequiredError("predict needs --data or --image");
        }
        if (*predict && (o.coverage <= 0.0 || o.coverage >= 1.0)) throw CLI::ValidationError("--coverage must lie in (0,1)");
        if (*partition && (o.coverage <= 0.0 || o.coverage >= 1.0)) throw CLI::ValidationError("--coverage must lie in (0,1)");
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return kExitOk;
        }
        err << "error: " << e.what() << "\n\n";
        const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << sub->help();
        return kExitUsage;
    }

    try {
        if (*config) return cmd_config(o, out);
        if (*synth) return cmd_synth(o, out);
        if (*train_cmd) return cmd_train(o, out);
        if (*calibrate) return cmd_calibrate(o, out);
        if (*predict) return cmd_predict(o, out);
        if (*eval) return cmd_eval(o, out);
        if (*ablate) return cmd_ablate(o, out);
        if (*partition) return cmd_partition(o, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntimeError;
    }
    return kExitRuntimeError;
}

}  // namespace dub
