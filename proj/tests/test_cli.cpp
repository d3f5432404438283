#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "calibra/dataset_io.hpp"
#include "calibra/npy.hpp"

using namespace calibra;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
};

std::string binary() {
    const char* env = std::getenv("CALIBRA_BIN");
    REQUIRE_MESSAGE(env != nullptr, "CALIBRA_BIN must point at the calibra binary");
    return env;
}

RunResult run(const std::string& args) {
    const std::string cmd = binary() + " " + args + " 2>/dev/null";
    RunResult result;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buffer[4096];
    while (std::size_t n = fread(buffer, 1, sizeof buffer, pipe)) result.out.append(buffer, n);
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "calibra_cli" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("gen writes a dataset and is deterministic per seed") {
    const fs::path dir = fresh_dir("gen");
    const std::string flags =
        " --preset stripes --shape 48x48 --classes 4 --miscal global:2 --samples 1:1:1 "
        "--seed 7 --out ";

    const RunResult first = run("gen" + flags + (dir / "a").string());
    CHECK(first.exit_code == 0);
    const json doc = json::parse(first.out);
    CHECK(doc.at("kind") == "dataset");
    CHECK(fs::exists(dir / "a" / "train.json"));
    CHECK(fs::exists(dir / "a" / "val.json"));
    CHECK(fs::exists(dir / "a" / "test.json"));
    CHECK(fs::exists(dir / "a" / "truth" / "temps" / "val-000.npy"));

    const RunResult second = run("gen" + flags + (dir / "b").string());
    CHECK(second.exit_code == 0);
    for (const char* rel : {"data/val-000.logits.npy", "data/val-000.labels.npy",
                            "data/test-000.image.npy"})
        CHECK(read_file(dir / "a" / rel) == read_file(dir / "b" / rel));
}

TEST_CASE("gen without --out is a usage error") {
    const RunResult r = run("gen --preset stripes");
    CHECK(r.exit_code == 2);
}

TEST_CASE("fit, apply and eval round the pipeline") {
    const fs::path dir = fresh_dir("pipeline");
    const std::string data = (dir / "d").string();
    REQUIRE(run("gen --preset stripes --shape 48x48 --classes 4 --miscal global:3 "
                "--samples 1:3:3 --seed 3 --out " + data)
                .exit_code == 0);

    SUBCASE("ts model fits and applies") {
        const std::string model = (dir / "m.json").string();
        const RunResult fit = run("fit --method ts --data " + data + " --out " + model);
        CHECK(fit.exit_code == 0);
        const json fit_doc = json::parse(fit.out);
        CHECK(fit_doc.at("t_global").get<double>() > 1.5);

        const std::string pred = (dir / "pred").string();
        const RunResult apply =
            run("apply --model " + model + " --data " + data + " --split test --out " + pred);
        CHECK(apply.exit_code == 0);
        CHECK(fs::exists(fs::path(pred) / "probs" / "test-000.npy"));
        CHECK(fs::exists(fs::path(pred) / "temps" / "test-000.npy"));

        // identical re-application produces identical bytes
        const std::string pred2 = (dir / "pred2").string();
        run("apply --model " + model + " --data " + data + " --split test --out " + pred2);
        CHECK(read_file(fs::path(pred) / "probs" / "test-000.npy") ==
              read_file(fs::path(pred2) / "probs" / "test-000.npy"));

        const std::string report = (dir / "report.json").string();
        const RunResult eval = run("eval --pred " + pred + " --data " + data +
                                   " --split test --out " + report + " --diagram " +
                                   (dir / "diag.csv").string());
        CHECK(eval.exit_code == 0);
        const json report_doc = json::parse(read_file(report));
        CHECK(report_doc.contains("mean"));
        CHECK(report_doc.at("mean").at("all").at("ece").is_number());
        CHECK(report_doc.at("samples").size() == 3);
        const std::string csv = read_file(dir / "diag.csv");
        CHECK(csv.rfind("bin_lo,bin_hi,count,acc,conf", 0) == 0);
    }

    SUBCASE("identity model reproduces the plain softmax") {
        const fs::path model = dir / "identity.json";
        std::ofstream(model) << R"({"method": "ts", "t_global": 1.0})";
        const std::string pred = (dir / "pred_id").string();
        REQUIRE(run("apply --model " + model.string() + " --data " + data +
                    " --split test --out " + pred)
                    .exit_code == 0);
        const Dataset test = load_dataset(fs::path(data) / "test.json");
        const auto probs = npy::load_tensor3(fs::path(pred) / "probs" / "test-000.npy");
        // spot-check one pixel against a locally computed softmax
        const auto& z = test.samples[0].logits;
        double denom = 0.0;
        for (int l = 0; l < 4; ++l) denom += std::exp(static_cast<double>(z(l, 5, 5)));
        for (int l = 0; l < 4; ++l)
            CHECK(probs(l, 5, 5) ==
                  doctest::Approx(std::exp(static_cast<double>(z(l, 5, 5))) / denom)
                      .epsilon(1e-5));
    }

    SUBCASE("uncalibrated vs fitted ordering holds end to end") {
        const std::string model = (dir / "m.json").string();
        run("fit --method ts --data " + data + " --out " + model);
        const fs::path identity = dir / "id.json";
        std::ofstream(identity) << R"({"method": "ts", "t_global": 1.0})";

        auto mean_ece = [&](const std::string& model_path, const std::string& tag) {
            const std::string pred = (dir / ("p_" + tag)).string();
            run("apply --model " + model_path + " --data " + data + " --split test --out " +
                pred);
            const RunResult eval =
                run("eval --pred " + pred + " --data " + data + " --split test");
            REQUIRE(eval.exit_code == 0);
            return json::parse(eval.out).at("mean").at("all").at("ece").get<double>();
        };
        CHECK(mean_ece(model, "ts") < mean_ece(identity.string(), "uc"));
    }

    SUBCASE("lts training writes a params directory and loss curve") {
        const std::string model = (dir / "lts_model").string();
        const RunResult fit =
            run("fit --method lts --data " + data + " --out " + model +
                " --epochs 3 --lr-schedule 0:1e-2 --seed 1");
        CHECK(fit.exit_code == 0);
        CHECK(fs::exists(fs::path(model) / "header.json"));
        CHECK(fs::exists(fs::path(model) / "leaf_logits_a.npy"));
        CHECK(fs::exists(fs::path(model) / "gate_root.npy"));
        const std::string curve = read_file(fs::path(model) / "loss_curve.csv");
        CHECK(curve.rfind("epoch,train_nll,val_nll", 0) == 0);

        const std::string pred = (dir / "pred_lts").string();
        const RunResult apply =
            run("apply --model " + model + " --data " + data + " --split test --out " + pred);
        CHECK(apply.exit_code == 0);
        const auto temps = npy::load_tensor2(fs::path(pred) / "temps" / "test-000.npy");
        CHECK(temps.rows() == 48);  // local field, not a scalar
    }

    SUBCASE("network ibts predicts one scalar per image") {
        const std::string model = (dir / "ibts_model").string();
        const RunResult fit =
            run("fit --method ibts --data " + data + " --out " + model +
                " --epochs 2 --lr-schedule 0:1e-2 --seed 1");
        CHECK(fit.exit_code == 0);
        const json header = json::parse(read_file(fs::path(model) / "header.json"));
        CHECK(header.at("method") == "ibts");

        const std::string pred = (dir / "pred_ibts").string();
        const RunResult apply =
            run("apply --model " + model + " --data " + data + " --split test --out " + pred);
        CHECK(apply.exit_code == 0);
        const auto scalar = npy::load(fs::path(pred) / "temps" / "test-000.npy");
        CHECK(scalar.shape == std::vector<std::size_t>{1});  // pooled scalar, not a field
        CHECK(scalar.data[0] > 0.0f);
    }

    SUBCASE("ibts-opt writes per-image temperatures") {
        const std::string model = (dir / "ibts.json").string();
        const RunResult fit = run("fit --method ibts-opt --data " + data + " --out " + model);
        CHECK(fit.exit_code == 0);
        const json doc = json::parse(read_file(model));
        CHECK(doc.at("method") == "ibts-opt");
        CHECK(doc.at("per_image").size() == 3);
        // it carries no predictor: applying to the test split must fail
        const RunResult apply = run("apply --model " + model + " --data " + data +
                                    " --split test --out " + (dir / "nope").string());
        CHECK(apply.exit_code == 1);
        // but applies cleanly to the split it was fitted on
        const RunResult apply_val = run("apply --model " + model + " --data " + data +
                                        " --split val --out " + (dir / "pv").string());
        CHECK(apply_val.exit_code == 0);
    }

    SUBCASE("class-count mismatch between model and data fails") {
        const fs::path other = dir / "d6";
        REQUIRE(run("gen --preset stripes --shape 48x48 --classes 6 --samples 1:1:1 "
                    "--seed 4 --out " + other.string())
                    .exit_code == 0);
        const std::string model = (dir / "lts_model").string();
        if (!fs::exists(model))
            run("fit --method lts --data " + data + " --out " + model +
                " --epochs 1 --lr-schedule 0:1e-2");
        const RunResult apply = run("apply --model " + model + " --data " + other.string() +
                                    " --split test --out " + (dir / "bad").string());
        CHECK(apply.exit_code == 1);
    }
}

TEST_CASE("fit without a val split exits 1 with the documented message") {
    const fs::path dir = fresh_dir("noval");
    REQUIRE(run("gen --preset stripes --shape 48x48 --samples 1:0:0 --seed 1 --out " +
                (dir / "d").string())
                .exit_code == 0);
    const std::string cmd = binary() + " fit --method ts --data " + (dir / "d").string() +
                            " --out " + (dir / "m.json").string() + " 2> " +
                            (dir / "err.txt").string();
    const int status = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(status) == 1);
    CHECK(read_file(dir / "err.txt").find("no validation samples") != std::string::npos);
}

TEST_CASE("eval on constant labels warns and reports null boundary metrics") {
    const fs::path dir = fresh_dir("constlab");
    // hand-build a one-sample dataset with constant labels
    Tensor3<float> z(3, 8, 8);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = static_cast<float>(i % 5) * 0.3f;
    Dataset ds;
    ds.classes = 3;
    ds.split = Split::Test;
    ds.samples.push_back(Sample{"t-0", LogitMap(z), LabelMap(Tensor2<label_t>(8, 8, 1), 3),
                                std::nullopt});
    save_dataset(ds, dir / "d", "test.json");

    const fs::path identity = dir / "id.json";
    std::ofstream(identity) << R"({"method": "ts", "t_global": 1.0})";
    REQUIRE(run("apply --model " + identity.string() + " --data " + (dir / "d").string() +
                " --split test --out " + (dir / "pred").string())
                .exit_code == 0);
    const RunResult eval = run("eval --pred " + (dir / "pred").string() + " --data " +
                               (dir / "d").string() + " --split test --regions boundary");
    CHECK(eval.exit_code == 0);
    CHECK(json::parse(eval.out).at("mean").at("boundary").at("ece").is_null());
}

TEST_CASE("fusion bench end to end") {
    const fs::path dir = fresh_dir("fuse");
    const std::string bench = (dir / "bench").string();
    REQUIRE(run("gen --fusion --preset voronoi-blobs --shape 48x48 --classes 4 --atlases 5 "
                "--seed 9 --out " + bench)
                .exit_code == 0);
    CHECK(fs::exists(fs::path(bench) / "bench.json"));
    CHECK(fs::exists(fs::path(bench) / "probs_true" / "atlas_000.npy"));

    for (const std::string method : {"mv", "pv", "svwv", "jlf"}) {
        const RunResult fuse = run("fuse --bench " + bench + " --method " + method +
                                   " --probs true --out " + (dir / method).string() +
                                   (method == "jlf" ? " --dump-weights" : ""));
        CHECK(fuse.exit_code == 0);
        const json doc = json::parse(fuse.out);
        CHECK(doc.at("seg").at("vd").get<double>() > 0.5);
        CHECK(fs::exists(dir / method / "fused.npy"));
    }
    CHECK(fs::exists(dir / "jlf" / "weights.npy"));

    // vote-change report appears when calibrated probs drive a weighted method
    const RunResult jlf_true =
        run("fuse --bench " + bench + " --method jlf --probs true");
    const json doc = json::parse(jlf_true.out);
    CHECK(doc.contains("vote_change"));
    CHECK(doc.at("vote_change").at("rate").is_number());

    const RunResult jlf_uncal =
        run("fuse --bench " + bench + " --method jlf --probs uncal");
    CHECK_FALSE(json::parse(jlf_uncal.out).contains("vote_change"));

    // recalibrated probabilities drop into probs_calibrated/ and fuse reads them
    fs::create_directories(fs::path(bench) / "probs_calibrated");
    for (const auto& entry : fs::directory_iterator(fs::path(bench) / "probs_true"))
        fs::copy_file(entry.path(),
                      fs::path(bench) / "probs_calibrated" / entry.path().filename());
    const RunResult jlf_cal =
        run("fuse --bench " + bench + " --method jlf --probs calibrated");
    CHECK(jlf_cal.exit_code == 0);
    CHECK(json::parse(jlf_cal.out).at("seg").at("vd").get<double>() ==
          doctest::Approx(doc.at("seg").at("vd").get<double>()));
}

TEST_CASE("verify subcommand") {
    SUBCASE("a single suite can be selected") {
        const RunResult r = run("verify --suite lemma1 --seed 2");
        CHECK(r.exit_code == 0);
        const json doc = json::parse(r.out);
        CHECK(doc.at("pass") == true);
        CHECK(doc.at("suites").size() == 1);
        CHECK(doc.at("suites")[0].at("name") == "lemma1");
    }
    SUBCASE("the sabotage negative control fails loudly") {
        const RunResult r = run("verify --suite lemma1 --sabotage");
        CHECK(r.exit_code == 1);
        CHECK(json::parse(r.out).at("pass") == false);
    }
    SUBCASE("unknown suites are usage errors at runtime") {
        const RunResult r = run("verify --suite nonsense");
        CHECK(r.exit_code == 1);
    }
}

TEST_CASE("config file values are overridden by explicit flags") {
    const fs::path dir = fresh_dir("config");
    const fs::path config = dir / "gen.json";
    std::ofstream(config) << R"({"preset": "stripes", "shape": "32x32", "classes": 5,
                                 "samples": "0:1:0", "seed": 12})";
    const RunResult r = run("gen --config " + config.string() + " --classes 3 --out " +
                            (dir / "out").string());
    CHECK(r.exit_code == 0);
    const json doc = json::parse(r.out);
    CHECK(doc.at("classes") == 3);        // CLI wins
    CHECK(doc.at("shape") == "32x32");    // config fills the rest
    const json manifest = json::parse(read_file(dir / "out" / "val.json"));
    CHECK(manifest.at("classes") == 3);
}
