// Acceptance suite: one criterion per check, one pass/fail line each.
// Runs the full set even after a failure and exits non-zero if any failed.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "calibra/fusion.hpp"
#include "calibra/metrics.hpp"
#include "calibra/rng.hpp"
#include "calibra/scaling.hpp"
#include "calibra/synthgen.hpp"
#include "calibra/tree_net.hpp"
#include "calibra/ts_opt.hpp"
#include "calibra/verify.hpp"
#include "oracles.hpp"

using namespace calibra;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    bool pass = false;
    std::string detail;
};

// --------------------------------------------------------- criterion 1 ---
// Calibrated argmax equals the raw argmax at 100% of pixels for 200 random
// (logits, temperature-field) pairs of each kind. Exact, no tolerance.
Criterion argmax_invariance() {
    Rng rng(101);
    std::size_t mismatches = 0, pixels = 0;
    for (int kind = 0; kind < 3; ++kind) {
        for (int trial = 0; trial < 200; ++trial) {
            const int L = 2 + rng.below_int(5);
            const int H = 2 + rng.below_int(15), W = 2 + rng.below_int(15);
            Tensor3<float> z(L, H, W);
            for (std::size_t i = 0; i < z.size(); ++i)
                z[i] = static_cast<float>(rng.normal(0.0, 3.0));
            const LogitMap logits(std::move(z));

            Tensor2<float> field(H, W);
            SampleTemps temps = SampleTemps::scalar(1.0);
            if (kind == 0) {  // global scalar, including the clamp extremes
                const double t = trial % 7 == 0   ? kTempMax
                                 : trial % 7 == 1 ? 1.0 / kTempMax
                                                  : rng.log_uniform(1e-3, 1e3);
                temps = SampleTemps::scalar(t);
            } else if (kind == 1) {  // per-image scalar draw
                temps = SampleTemps::scalar(rng.log_uniform(1e-2, 1e2));
            } else {  // local field
                for (std::size_t i = 0; i < field.size(); ++i)
                    field[i] = static_cast<float>(rng.log_uniform(1e-2, 1e2));
                temps = SampleTemps::local(field);
            }

            const auto raw = softmax_temp(logits, SampleTemps::scalar(1.0));
            const auto calibrated = softmax_temp(logits, temps);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    ++pixels;
                    mismatches += raw.pred_labels(y, x) != calibrated.pred_labels(y, x);
                }
        }
    }
    Criterion c;
    c.pass = mismatches == 0;
    std::ostringstream detail;
    detail << mismatches << " mismatched pixels out of " << pixels
           << " across 3 x 200 random pairs";
    c.detail = detail.str();
    return c;
}

Criterion from_suite(const verify::SuiteResult& r) { return Criterion{r.pass, r.detail}; }

// --------------------------------------------------------- criterion 6 ---
// Spatial miscalibration: trained local scaling must beat the global fit on
// test ECE (All region and Local-Avg) in >= 18/20 seeds, and the global fit
// must beat the uncalibrated output in >= 18/20.
Criterion lts_beats_ts() {
    const int kSeeds = 20;
    int lts_wins_all = 0, lts_wins_local = 0, ts_wins = 0;

    for (int seed = 0; seed < kSeeds; ++seed) {
        SynthSpec spec;
        spec.miscal = MiscalSpec::parse("spatial:halves:3:0.5");
        spec.train_count = 30;
        spec.val_count = 10;
        spec.test_count = 10;
        spec.seed = static_cast<std::uint64_t>(seed);
        const GeneratedData data = generate(spec);

        const ScalarFitResult ts = fit_ts_bisection(data.val);

        TrainConfig config;
        config.epochs = 40;
        config.lr_schedule = {{0, 1e-2}, {26, 1e-3}};
        config.seed = static_cast<std::uint64_t>(seed);
        const FitArtifacts artifacts = train(data.train, data.val, NetMode::Lts, config);

        // mean test ECE over the All region and the local patches
        double uc_all = 0.0, ts_all = 0.0, lts_all = 0.0;
        double ts_local = 0.0, lts_local = 0.0;
        int n = 0;
        for (std::size_t i = 0; i < data.test.samples.size(); ++i) {
            const Sample& s = data.test.samples[i];
            RegionConfig rc;
            rc.boundary = false;
            rc.seed = mix_seed(1000 + seed, i);

            auto ece_of = [&](const SampleTemps& temps) {
                const auto out = softmax_temp(s.logits, temps);
                return evaluate(out, s.labels, rc);
            };
            const CalibrationReport uc = ece_of(SampleTemps::scalar(1.0));
            const CalibrationReport tsr = ece_of(SampleTemps::scalar(ts.temperature));
            const Tensor2<float> f = field_as_f32(
                forward(artifacts.params, s.logits, s.image ? &*s.image : nullptr));
            const CalibrationReport ltsr = ece_of(SampleTemps::local(f));
            if (!uc.all.ece || !tsr.all.ece || !ltsr.all.ece) continue;
            uc_all += *uc.all.ece;
            ts_all += *tsr.all.ece;
            lts_all += *ltsr.all.ece;
            ts_local += *tsr.local_avg.ece;
            lts_local += *ltsr.local_avg.ece;
            ++n;
        }
        uc_all /= n;
        ts_all /= n;
        lts_all /= n;
        ts_local /= n;
        lts_local /= n;

        lts_wins_all += lts_all < ts_all;
        lts_wins_local += lts_local < ts_local;
        ts_wins += ts_all < uc_all;
        std::fprintf(stderr,
                     "  [c6] seed %2d: ECE(all) uc=%.4f ts=%.4f lts=%.4f | "
                     "ECE(local-avg) ts=%.4f lts=%.4f\n",
                     seed, uc_all, ts_all, lts_all, ts_local, lts_local);
    }

    Criterion c;
    c.pass = lts_wins_all >= 18 && ts_wins >= 18 && lts_wins_local >= 18;
    std::ostringstream detail;
    detail << "LTS<TS on ECE(All) " << lts_wins_all << "/20, TS<UC " << ts_wins
           << "/20, LTS<TS on Local-Avg " << lts_wins_local << "/20 (need >= 18)";
    c.detail = detail.str();
    return c;
}

// --------------------------------------------------------- criterion 7 ---
Criterion metric_oracles() {
    Rng rng(107);
    int violations = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const int L = 2 + rng.below_int(4);
        const int H = 4 + rng.below_int(61), W = 4 + rng.below_int(61);
        Tensor3<float> z(L, H, W);
        for (std::size_t i = 0; i < z.size(); ++i)
            z[i] = static_cast<float>(rng.normal(0.0, 1.5));
        const auto out = softmax_temp(LogitMap(std::move(z)), SampleTemps::scalar(1.0));
        Tensor2<label_t> s(H, W);
        for (std::size_t i = 0; i < s.size(); ++i)
            s[i] = static_cast<label_t>(rng.below_int(L));
        const LabelMap labels(s, L);
        Mask mask(H, W, 0);
        std::size_t selected = 0;
        for (std::size_t i = 0; i < mask.size(); ++i) {
            mask[i] = rng.uniform() < 0.7 ? 1 : 0;
            selected += mask[i];
        }
        if (selected == 0) mask(0, 0) = 1;

        const auto bins = bin_predictions(out, labels, mask, BinScheme::EqualWidth, 10);
        const auto records = oracles::collect(out, labels, mask);
        const auto [oece, omce] = oracles::ece_mce(records, 10);
        const double d1 = std::abs(ece(bins) - oece);
        const double d2 = std::abs(mce(bins) - omce);
        const double d3 = std::abs(sce(out, labels, mask, 10) -
                                   oracles::sce(out, labels, mask, 10));
        const double d4 = std::abs(ace(out, labels, mask, 10) -
                                   oracles::ace(out, labels, mask, 10));
        worst = std::max({worst, d1, d2, d3, d4});
        if (d1 >= 1e-12 || d2 >= 1e-12 || d3 >= 1e-12 || d4 >= 1e-12) ++violations;
        if (ece(bins) > mce(bins) + 1e-15) ++violations;
    }
    Criterion c;
    c.pass = violations == 0;
    std::ostringstream detail;
    detail << violations << " violations over 50 instances, worst |impl - oracle| = "
           << worst;
    c.detail = detail.str();
    return c;
}

// --------------------------------------------------------- criterion 8 ---
Criterion fusion_suite() {
    Rng rng(108);
    std::ostringstream detail;
    bool pass = true;

    // weight normalization on random stacks
    double worst_sum = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + rng.below_int(5);
        std::vector<double> p(n);
        for (double& v : p) v = rng.uniform();
        const auto w = jlf_weights(p, 0.01);
        worst_sum = std::max(worst_sum,
                             std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0));
    }
    pass = pass && worst_sum < 1e-9;
    detail << "weight-sum err " << worst_sum << "; ";

    // permutation equivariance
    {
        std::vector<double> p = {0.9, 0.2, 0.55, 0.7};
        const auto w = jlf_weights(p, 0.01);
        const int perm[4] = {2, 0, 3, 1};
        std::vector<double> shuffled(4);
        for (int i = 0; i < 4; ++i) shuffled[i] = p[perm[i]];
        const auto w2 = jlf_weights(shuffled, 0.01);
        bool equivariant = true;
        for (int i = 0; i < 4; ++i)
            equivariant = equivariant && std::abs(w2[i] - w[perm[i]]) < 1e-12;
        pass = pass && equivariant;
        detail << (equivariant ? "permutation ok; " : "permutation FAIL; ");
    }

    // uniform p -> exactly uniform weights
    {
        bool uniform_ok = true;
        for (double p : {0.0, 0.25, 0.5, 0.99, 1.0})
            for (int n : {2, 3, 5, 7}) {
                const auto w = jlf_weights(std::vector<double>(n, p), 0.01);
                for (double wi : w) uniform_ok = uniform_ok && wi == w[0];
            }
        pass = pass && uniform_ok;
        detail << (uniform_ok ? "uniform exact; " : "uniform FAIL; ");
    }

    // benchmark ordering over 20 seeds
    int chain = 0;
    for (int seed = 0; seed < 20; ++seed) {
        FusionBenchSpec spec;
        spec.n_atlases = 5;
        spec.seed = static_cast<std::uint64_t>(seed);
        const FusionBench bench = generate_fusion_bench(spec);
        const double vd_true =
            seg_metrics(fuse_jlf(bench.stack_with(bench.probs_true), 0.01).labels,
                        bench.truth)
                .vd;
        const double vd_uncal =
            seg_metrics(fuse_jlf(bench.stack_with(bench.probs_uncal), 0.01).labels,
                        bench.truth)
                .vd;
        const double vd_mv =
            seg_metrics(fuse_vote(bench.stack_with(bench.probs_true), VoteMode::Majority)
                            .labels,
                        bench.truth)
                .vd;
        chain += vd_true >= vd_uncal && vd_uncal >= vd_mv;
    }
    pass = pass && chain >= 16;
    detail << "VD ordering " << chain << "/20 (need >= 16)";

    return Criterion{pass, detail.str()};
}

// --------------------------------------------------------- criterion 9 ---
// The CLI pipeline must be byte-deterministic across reruns and thread
// counts: identical NPY outputs and identical report JSON.
Criterion determinism() {
    const char* bin = std::getenv("CALIBRA_BIN");
    if (bin == nullptr)
        return Criterion{false, "CALIBRA_BIN not set; cannot drive the pipeline"};

    const fs::path root = fs::temp_directory_path() / "calibra_acceptance";
    fs::remove_all(root);
    fs::create_directories(root);

    auto run_pipeline = [&](const std::string& tag, int threads) -> fs::path {
        const fs::path dir = root / tag;
        std::ostringstream cmd;
        const std::string log = (dir / "log.txt").string();
        fs::create_directories(dir);
        cmd << bin << " gen --preset stripes --shape 64x64 --classes 4"
            << " --miscal spatial:halves:3:0.5 --samples 2:3:3 --seed 5 --out " << (dir / "d")
            << " > /dev/null 2>> " << log << " && " << bin << " fit --method ts --data "
            << (dir / "d") << " --out " << (dir / "m.json") << " > /dev/null 2>> " << log
            << " && " << bin << " apply --model " << (dir / "m.json") << " --data "
            << (dir / "d") << " --split test --threads " << threads << " --out "
            << (dir / "pred") << " > /dev/null 2>> " << log << " && " << bin
            << " eval --pred " << (dir / "pred") << " --data " << (dir / "d")
            << " --split test --threads " << threads << " --out " << (dir / "report.json")
            << " --diagram " << (dir / "diagram.csv") << " > /dev/null 2>> " << log;
        if (std::system(cmd.str().c_str()) != 0) return {};
        return dir;
    };

    const fs::path a = run_pipeline("a", 1);
    const fs::path b = run_pipeline("b", 4);
    const fs::path c = run_pipeline("c", 1);
    if (a.empty() || b.empty() || c.empty())
        return Criterion{false, "pipeline run failed (see logs under " + root.string() + ")"};

    auto bytes = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string{std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>()};
    };
    std::size_t compared = 0, differing = 0;
    // every NPY the pipeline produced, plus the report and diagram
    std::vector<std::string> rels = {"report.json", "diagram.csv"};
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (entry.path().extension() == ".npy")
            rels.push_back(fs::relative(entry.path(), a).string());
    }
    for (const std::string& rel : rels) {
        ++compared;
        const std::string ref = bytes(a / rel);
        if (ref.empty() || ref != bytes(b / rel) || ref != bytes(c / rel)) ++differing;
    }

    Criterion result;
    result.pass = differing == 0 && compared > 10;
    std::ostringstream detail;
    detail << compared << " artifacts compared across reruns and thread counts, "
           << differing << " differed";
    result.detail = detail.str();
    return result;
}

}  // namespace

int main() {
    struct Entry {
        const char* name;
        std::function<Criterion()> run;
    };
    const std::vector<Entry> criteria = {
        {"1. argmax invariance under every temperature kind", argmax_invariance},
        {"2. weighted-logit monotonicity and bounds",
         [] { return from_suite(verify::check_lemma1(0)); }},
        {"3. equilibrium solve: residual, method agreement, scale recovery",
         [] { return from_suite(verify::check_thm1(0)); }},
        {"4. nll equals entropy at the fitted optimum",
         [] { return from_suite(verify::check_thm3(0)); }},
        {"5. network gradients match finite differences",
         [] { return from_suite(verify::check_gradcheck(0)); }},
        {"6. local scaling beats global scaling under spatial miscalibration",
         lts_beats_ts},
        {"7. calibration metrics equal brute-force oracles", metric_oracles},
        {"8. fusion weights and benchmark ordering", fusion_suite},
        {"9. pipeline determinism across reruns and thread counts", determinism},
    };

    int failures = 0;
    for (const Entry& entry : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Criterion result;
        try {
            result = entry.run();
        } catch (const std::exception& e) {
            result.pass = false;
            result.detail = std::string("exception: ") + e.what();
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("[%s] %s — %s (%.1fs)\n", result.pass ? "PASS" : "FAIL", entry.name,
                    result.detail.c_str(), seconds);
        std::fflush(stdout);
        failures += result.pass ? 0 : 1;
    }
    if (failures > 0) std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
