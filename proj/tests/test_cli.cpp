#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <sstream>

#include "dub/cli.hpp"
#include "dub/config.hpp"
#include "dub/io.hpp"
#include "dub/uncertainty.hpp"

using namespace dub;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out, err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "dubcount");
    std::vector<const char*> argv;
    for (const std::string& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

const char* kTinyConfig = R"([arch]
front_channels = 4,4
back_channels = 4
heads = 3

[train]
epochs = 2

[scene]
height = 32
width = 32
count_min = 2
count_max = 12
glare_min_size = 4
glare_max_size = 12

[data]
train = 6
val = 4
test = 4
)";

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    detail::write_file(dir / "tiny.ini", kTinyConfig);
    return dir;
}

// synth -> train -> calibrate -> predict -> eval inside `dir`.
void pipeline(const fs::path& dir, const std::string& seed) {
    const std::string cfg = (dir / "tiny.ini").string(), data = (dir / "data").string(),
                      run_dir = (dir / "run").string(), model = (dir / "run" / "model.dubn").string();
    REQUIRE(run({"synth", "--config", cfg, "--seed", seed, "--out", data}).code == 0);
    REQUIRE(run({"train", "--config", cfg, "--seed", seed, "--data", data, "--out", run_dir}).code == 0);
    REQUIRE(run({"calibrate", "--data", data, "--checkpoint", model, "--out", run_dir}).code == 0);
    REQUIRE(run({"predict", "--checkpoint", model, "--data", data, "--recal", run_dir + "/recal.csv", "--out",
                 run_dir, "--heatmaps"})
                .code == 0);
    REQUIRE(run({"eval", "--data", data, "--predictions", run_dir + "/predictions.csv", "--out", run_dir}).code == 0);
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = detail::read_file(e.path());
    }
    return files;
}

}  // namespace

TEST_CASE("usage errors exit with 2 and print usage") {
    const Run none = run({});
    CHECK(none.code == kExitUsage);
    CHECK(none.err.find("Usage") != std::string::npos);
    CHECK(run({"frobnicate"}).code == kExitUsage);
    CHECK(run({"synth"}).code == kExitUsage);
    CHECK(run({"synth", "--out", "x", "--bogus"}).code == kExitUsage);
    CHECK(run({"train", "--data", "d", "--out", "o", "--variant", "both"}).code == kExitUsage);
    CHECK(run({"predict", "--checkpoint", "m", "--out", "o"}).code == kExitUsage);
    CHECK(run({"predict", "--checkpoint", "m", "--out", "o", "--image", "a.pgm", "--coverage", "1.5"}).code ==
          kExitUsage);
    const Run help = run({"--help"});
    CHECK(help.code == kExitOk);
    CHECK(help.out.find("partition") != std::string::npos);
}

TEST_CASE("runtime failures exit with 1") {
    const fs::path dir = scratch("dub_cli_rt");
    const Run r = run({"predict", "--checkpoint", (dir / "missing.dubn").string(), "--image",
                       (dir / "missing.pgm").string(), "--out", dir.string()});
    CHECK(r.code == kExitRuntimeError);
    CHECK(r.err.find("error") != std::string::npos);

    detail::write_file(dir / "bad.ini", "[arch]\nwidth_multiplier = 2\n");
    CHECK(run({"config", "--config", (dir / "bad.ini").string()}).code == kExitRuntimeError);
    fs::remove_all(dir);
}

TEST_CASE("config file round trips and flags override it") {
    PipelineConfig c;
    c.arch.heads = 7;
    c.train.variant = Variant::epistemic_only;
    c.scene.glare_probability = 0.55;
    c.sizes.val = 17;
    const PipelineConfig back = parse_config(format_config(c));
    CHECK(back.arch == c.arch);
    CHECK(back.train.variant == Variant::epistemic_only);
    CHECK(back.scene.glare_probability == 0.55);
    CHECK(back.sizes.val == 17);
    CHECK_THROWS_AS(parse_config("[train]\nepochs = many\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("[optimizer]\nlr = 1\n"), std::invalid_argument);

    const fs::path dir = scratch("dub_cli_cfg");
    const std::string cfg = (dir / "tiny.ini").string();
    const Run shown = run({"config", "--config", cfg});
    REQUIRE(shown.code == 0);
    CHECK(parse_config(shown.out).arch.heads == 3);

    REQUIRE(run({"synth", "--config", cfg, "--out", (dir / "data").string()}).code == 0);
    REQUIRE(run({"train", "--config", cfg, "--data", (dir / "data").string(), "--out", (dir / "run").string(),
                 "--epochs", "1", "--variant", "base"})
                .code == 0);
    const std::string log = detail::read_file(dir / "run" / "loss.csv");
    CHECK(log.rfind("epoch,mean_loss,head_0\n1,", 0) == 0);
    CHECK(std::count(log.begin(), log.end(), '\n') == 2);
    fs::remove_all(dir);
}

TEST_CASE("pipeline outputs and interval labelling") {
    const fs::path dir = scratch("dub_cli_pipe");
    pipeline(dir, "5");
    const fs::path run_dir = dir / "run";
    CHECK(read_predictions(run_dir / "predictions.csv").calibrated);
    CHECK(detail::read_file(run_dir / "calibration.svg").rfind("<svg", 0) == 0);
    CHECK(detail::read_file(run_dir / "metrics.csv").rfind("n,mae,rmse,coverage_0.9\n4,", 0) == 0);
    CHECK(fs::exists(run_dir / "heatmaps" / "img_00010_epistemic.pgm"));

    const Run uncal = run({"predict", "--checkpoint", (run_dir / "model.dubn").string(), "--data",
                           (dir / "data").string(), "--split", "val", "--out", (dir / "uncal").string()});
    REQUIRE(uncal.code == 0);
    CHECK(uncal.out.find("uncalibrated") != std::string::npos);
    const PredictionReport rep = read_predictions(dir / "uncal" / "predictions.csv");
    CHECK_FALSE(rep.calibrated);
    CHECK(rep.rows.size() == 4);

    const Run part = run({"partition", "--checkpoint", (run_dir / "model.dubn").string(), "--image",
                          (dir / "data" / "images" / "img_00000.pgm").string(), "--levels", "1,2", "--out",
                          (dir / "part").string()});
    REQUIRE(part.code == 0);
    CHECK(detail::read_file(dir / "part" / "partition.csv").find("\ntotal,") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("the pipeline is byte-for-byte reproducible") {
    const fs::path a = scratch("dub_cli_det_a"), b = scratch("dub_cli_det_b");
    pipeline(a, "11");
    pipeline(b, "11");
    const auto fa = snapshot(a), fb = snapshot(b);
    CHECK(fa.size() > 10);
    CHECK(fa == fb);

    const fs::path c = scratch("dub_cli_det_c");
    pipeline(c, "12");
    CHECK(snapshot(c).at("run/model.dubn") != fa.at("run/model.dubn"));
    for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST_CASE("ablate writes four rows per seed") {
    const fs::path dir = scratch("dub_cli_ablate");
    const Run r = run({"ablate", "--config", (dir / "tiny.ini").string(), "--seeds", "3,4", "--epochs", "1", "--out",
                       dir.string()});
    REQUIRE(r.code == 0);
    const std::string text = detail::read_file(dir / "ablation.csv");
    CHECK(std::count(text.begin(), text.end(), '\n') == 9);
    CHECK(run({"ablate", "--seeds", "x", "--out", dir.string()}).code == kExitRuntimeError);
    fs::remove_all(dir);
}
