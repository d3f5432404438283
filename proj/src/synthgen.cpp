#include "calibra/synthgen.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <sstream>

#include "calibra/error.hpp"
#include "calibra/rng.hpp"

namespace calibra {

Scene scene_from_name(const std::string& name) {
    if (name == "stripes") return Scene::Stripes;
    if (name == "nested-squares") return Scene::NestedSquares;
    if (name == "voronoi-blobs") return Scene::VoronoiBlobs;
    throw ValidationError("unknown scene preset '" + name + "'");
}

std::string scene_name(Scene scene) {
    switch (scene) {
        case Scene::Stripes: return "stripes";
        case Scene::NestedSquares: return "nested-squares";
        case Scene::VoronoiBlobs: return "voronoi-blobs";
    }
    return "stripes";
}

MiscalSpec MiscalSpec::parse(const std::string& text) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ':')) parts.push_back(item);
    if (parts.empty()) throw ValidationError("miscal: empty spec");

    MiscalSpec spec;
    try {
        if (parts[0] == "none" && parts.size() == 1) {
            spec.kind = Kind::None;
        } else if (parts[0] == "global" && parts.size() == 2) {
            spec.kind = Kind::Global;
            spec.k = std::stod(parts[1]);
        } else if (parts[0] == "per-image" && parts.size() == 3) {
            spec.kind = Kind::PerImage;
            spec.k_lo = std::stod(parts[1]);
            spec.k_hi = std::stod(parts[2]);
        } else if (parts[0] == "spatial" && parts.size() == 4 && parts[1] == "halves") {
            spec.kind = Kind::SpatialHalves;
            spec.k_left = std::stod(parts[2]);
            spec.k_right = std::stod(parts[3]);
        } else {
            throw ValidationError("miscal: unrecognized spec '" + text + "'");
        }
    } catch (const std::invalid_argument&) {
        throw ValidationError("miscal: bad number in '" + text + "'");
    }
    if (spec.k <= 0.0 || spec.k_lo <= 0.0 || spec.k_hi < spec.k_lo || spec.k_left <= 0.0 ||
        spec.k_right <= 0.0)
        throw ValidationError("miscal: scale factors must be positive");
    return spec;
}

std::string MiscalSpec::to_string() const {
    std::ostringstream out;
    switch (kind) {
        case Kind::None: out << "none"; break;
        case Kind::Global: out << "global:" << k; break;
        case Kind::PerImage: out << "per-image:" << k_lo << ":" << k_hi; break;
        case Kind::SpatialHalves:
            out << "spatial:halves:" << k_left << ":" << k_right;
            break;
    }
    return out.str();
}

void SynthSpec::validate() const {
    if (rows < 8 || cols < 8) throw ValidationError("synth: shape too small");
    if (classes < 2) throw ValidationError("synth: needs at least 2 classes");
    if (!(conf_lo > 1.0 / classes && conf_hi > conf_lo && conf_hi < 1.0))
        throw ValidationError("synth: confidence range must lie in (1/classes, 1)");
    if (!(boundary_noise >= 0.0 && boundary_noise < 1.0))
        throw ValidationError("synth: boundary noise must be in [0, 1)");
    if (train_count < 0 || val_count < 0 || test_count < 0 ||
        train_count + val_count + test_count == 0)
        throw ValidationError("synth: no samples requested");
}

namespace {

// Scene label maps use only the non-background classes 1..L-1; class 0
// shows up in the sampled annotations purely as labeling error, which keeps
// the All evaluation region essentially unbiased for calibrated data.
Tensor2<label_t> draw_scene(Scene scene, int rows, int cols, int classes, Rng& rng) {
    Tensor2<label_t> map(rows, cols, 1);
    const int fg = classes - 1;  // usable scene classes, mapped to 1..L-1
    auto fg_class = [&](long idx) {
        return static_cast<label_t>(1 + ((idx % fg) + fg) % fg);
    };
    switch (scene) {
        case Scene::Stripes: {
            const int width = 5 + rng.below_int(5);
            const int offset = rng.below_int(width * fg);
            const bool diagonal = rng.uniform() < 0.5;
            for (int y = 0; y < rows; ++y)
                for (int x = 0; x < cols; ++x) {
                    const int t = diagonal ? x + y : x;
                    map(y, x) = fg_class((t + offset) / width);
                }
            break;
        }
        case Scene::NestedSquares: {
            const int cy = rows / 2 + rng.below_int(rows / 4) - rows / 8;
            const int cx = cols / 2 + rng.below_int(cols / 4) - cols / 8;
            const int ring = 4 + rng.below_int(4);
            for (int y = 0; y < rows; ++y)
                for (int x = 0; x < cols; ++x) {
                    const int d = std::max(std::abs(y - cy), std::abs(x - cx));
                    map(y, x) = fg_class(d / ring);
                }
            break;
        }
        case Scene::VoronoiBlobs: {
            const int sites = std::max(fg, 8) + rng.below_int(5);
            std::vector<int> sy(sites), sx(sites);
            std::vector<label_t> sc(sites);
            for (int i = 0; i < sites; ++i) {
                sy[i] = rng.below_int(rows);
                sx[i] = rng.below_int(cols);
                sc[i] = fg_class(i);
            }
            for (int y = 0; y < rows; ++y)
                for (int x = 0; x < cols; ++x) {
                    long best = LONG_MAX;
                    label_t cls = 1;
                    for (int i = 0; i < sites; ++i) {
                        const long dy = y - sy[i], dx = x - sx[i];
                        const long d = dy * dy + dx * dx;
                        if (d < best) {
                            best = d;
                            cls = sc[i];
                        }
                    }
                    map(y, x) = cls;
                }
            break;
        }
    }
    return map;
}

Mask scene_boundary_zone(const Tensor2<label_t>& scene, int radius) {
    const int H = scene.rows(), W = scene.cols();
    Mask base(H, W, 0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const label_t v = scene(y, x);
            if ((y > 0 && scene(y - 1, x) != v) || (y + 1 < H && scene(y + 1, x) != v) ||
                (x > 0 && scene(y, x - 1) != v) || (x + 1 < W && scene(y, x + 1) != v))
                base(y, x) = 1;
        }
    Mask out(H, W, 0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!base(y, x)) continue;
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy >= 0 && yy < H && xx >= 0 && xx < W) out(yy, xx) = 1;
                }
        }
    return out;
}

struct SampleDraw {
    Sample sample;
    Tensor2<float> true_temps;
};

SampleDraw draw_sample(const SynthSpec& spec, Split split, int index, std::uint64_t stream) {
    Rng rng(mix_seed(spec.seed, stream));
    const int H = spec.rows, W = spec.cols, L = spec.classes;

    const Tensor2<label_t> scene = draw_scene(spec.scene, H, W, L, rng);
    const Mask near_edge = scene_boundary_zone(scene, 2);

    // Temperature field k(x) injected into the observable logits.
    Tensor2<float> k_field(H, W, 1.0f);
    switch (spec.miscal.kind) {
        case MiscalSpec::Kind::None: break;
        case MiscalSpec::Kind::Global:
            for (std::size_t i = 0; i < k_field.size(); ++i)
                k_field[i] = static_cast<float>(spec.miscal.k);
            break;
        case MiscalSpec::Kind::PerImage: {
            const float k = static_cast<float>(rng.log_uniform(spec.miscal.k_lo,
                                                               spec.miscal.k_hi));
            for (std::size_t i = 0; i < k_field.size(); ++i) k_field[i] = k;
            break;
        }
        case MiscalSpec::Kind::SpatialHalves:
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    k_field(y, x) = static_cast<float>(x < W / 2 ? spec.miscal.k_left
                                                                 : spec.miscal.k_right);
            break;
    }

    // Boundary-zone confidence floor slides toward chance as rho grows.
    const double chance = 1.0 / L;
    const double edge_lo = chance + 0.02 + (1.0 - spec.boundary_noise) *
                                               (spec.conf_lo - chance - 0.02);
    const double edge_hi = std::min(spec.conf_hi, spec.conf_lo + 0.35);

    Tensor3<float> logits(L, H, W);
    Tensor2<label_t> labels(H, W);
    std::vector<double> z0(static_cast<std::size_t>(L));
    std::vector<double> probs(static_cast<std::size_t>(L));
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double c = near_edge(y, x) ? rng.uniform(edge_lo, edge_hi)
                                             : rng.uniform(spec.conf_lo, spec.conf_hi);
            const double spike = std::log(c * (L - 1) / (1.0 - c));
            const label_t scene_cls = scene(y, x);
            for (int l = 0; l < L; ++l)
                z0[l] = (l == scene_cls ? spike : 0.0) + rng.normal(0.0, 0.3);

            // Sample the annotation from softmax(z0): T = 1 is calibrated
            // by construction.
            double m = *std::max_element(z0.begin(), z0.end());
            double denom = 0.0;
            for (int l = 0; l < L; ++l) {
                probs[l] = std::exp(z0[l] - m);
                denom += probs[l];
            }
            for (int l = 0; l < L; ++l) probs[l] /= denom;
            labels(y, x) = static_cast<label_t>(rng.categorical(probs));

            const double k = k_field(y, x);
            for (int l = 0; l < L; ++l)
                logits(l, y, x) = static_cast<float>(k * z0[l]);
        }
    }

    std::optional<ImageTensor> image;
    if (spec.with_image) {
        Tensor3<float> img(1, H, W);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                img(0, y, x) = static_cast<float>(
                    static_cast<double>(scene(y, x)) / L + rng.normal(0.0, 0.05));
        image.emplace(std::move(img));
    }

    std::ostringstream id;
    id << split_name(split) << "-";
    id.width(3);
    id.fill('0');
    id << index;

    return SampleDraw{
        Sample{id.str(), LogitMap(std::move(logits)), LabelMap(std::move(labels), L),
               std::move(image)},
        std::move(k_field)};
}

}  // namespace

GeneratedData generate(const SynthSpec& spec) {
    spec.validate();
    GeneratedData out;
    out.train.split = Split::Train;
    out.val.split = Split::Val;
    out.test.split = Split::Test;
    out.train.classes = out.val.classes = out.test.classes = spec.classes;

    // Distinct deterministic streams per (split, index).
    const auto fill = [&](Dataset& ds, std::vector<Tensor2<float>>& temps, Split split,
                          int count, std::uint64_t base) {
        for (int i = 0; i < count; ++i) {
            SampleDraw draw = draw_sample(spec, split, i, base + static_cast<std::uint64_t>(i));
            ds.samples.push_back(std::move(draw.sample));
            temps.push_back(std::move(draw.true_temps));
        }
    };
    fill(out.train, out.train_temps, Split::Train, spec.train_count, 0);
    fill(out.val, out.val_temps, Split::Val, spec.val_count, 1u << 20);
    fill(out.test, out.test_temps, Split::Test, spec.test_count, 2u << 20);
    return out;
}

void FusionBenchSpec::validate() const {
    if (rows < 8 || cols < 8) throw ValidationError("fusion bench: shape too small");
    if (classes < 2) throw ValidationError("fusion bench: needs at least 2 classes");
    if (n_atlases < 2) throw ValidationError("fusion bench: needs at least 2 atlases");
    if (corruption.scale < 0.0) throw ValidationError("fusion bench: negative corruption scale");
    if (distort_temp <= 0.0) throw ValidationError("fusion bench: distort temperature <= 0");
    if (corruption.correlated_pairs * 2 > n_atlases)
        throw ValidationError("fusion bench: more correlated pairs than atlases");
}

AtlasStack FusionBench::stack_with(const std::vector<Tensor2<float>>& probs) const {
    AtlasStack stack;
    stack.classes = classes;
    for (std::size_t i = 0; i < atlas_labels.size(); ++i)
        stack.atlases.push_back(Atlas{atlas_labels[i], probs[i]});
    stack.validate();
    return stack;
}

namespace {

// Nearest different label per pixel (BFS over the 4-neighborhood): the label
// a registration shift toward the closest other region would produce.
Tensor2<label_t> confuser_map(const Tensor2<label_t>& truth, int classes) {
    const int H = truth.rows(), W = truth.cols();
    Tensor2<label_t> out(H, W, 0);
    Tensor2<std::int32_t> dist(H, W, -1);
    std::vector<std::pair<int, int>> frontier;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const label_t v = truth(y, x);
            label_t other = v;
            if (y > 0 && truth(y - 1, x) != v) other = truth(y - 1, x);
            else if (y + 1 < H && truth(y + 1, x) != v) other = truth(y + 1, x);
            else if (x > 0 && truth(y, x - 1) != v) other = truth(y, x - 1);
            else if (x + 1 < W && truth(y, x + 1) != v) other = truth(y, x + 1);
            if (other != v) {
                out(y, x) = other;
                dist(y, x) = 0;
                frontier.emplace_back(y, x);
            }
        }
    std::size_t head = 0;
    while (head < frontier.size()) {
        const auto [y, x] = frontier[head++];
        const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
            const int yy = y + dy[k], xx = x + dx[k];
            if (yy < 0 || yy >= H || xx < 0 || xx >= W || dist(yy, xx) >= 0) continue;
            dist(yy, xx) = dist(y, x) + 1;
            // propagate a label different from the local truth if possible
            out(yy, xx) = out(y, x) != truth(yy, xx)
                              ? out(y, x)
                              : truth(y, x) != truth(yy, xx) ? truth(y, x) : out(y, x);
            frontier.emplace_back(yy, xx);
        }
    }
    // degenerate single-label map: fall back to the next class index
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            if (out(y, x) == truth(y, x))
                out(y, x) = static_cast<label_t>((truth(y, x) + 1) % classes);
    return out;
}

}  // namespace

FusionBench generate_fusion_bench(const FusionBenchSpec& spec) {
    spec.validate();
    Rng rng(mix_seed(spec.seed, 0xF05EULL));
    const int H = spec.rows, W = spec.cols, L = spec.classes;
    const int n = spec.n_atlases;

    const Tensor2<label_t> truth = draw_scene(spec.scene, H, W, L, rng);
    const Tensor2<label_t> confuser = confuser_map(truth, L);
    const Mask near_edge = scene_boundary_zone(truth, 1);
    const CorruptionProfile& prof = spec.corruption;

    // Per-atlas novice rates; the expertise band index rotates with the
    // atlas so every pixel has exactly one expert (when n divides evenly).
    std::vector<double> novice(n);
    for (int i = 0; i < n; ++i)
        novice[i] = prof.novice_lo +
                    (prof.novice_hi - prof.novice_lo) *
                        (n == 1 ? 0.0 : static_cast<double>(i) / (n - 1));
    auto rate_at = [&](int atlas, int y, int x) {
        const int band = std::min(n - 1, x * n / W);
        const bool expert = (band - atlas) % n == 0;
        double r = (expert ? prof.expert_rate : novice[atlas]) * prof.scale;
        if (near_edge(y, x)) r *= prof.boundary_boost;
        return std::clamp(r, 0.0, 0.95);
    };

    FusionBench bench{LabelMap(truth, L), {}, {}, {}, L};

    // Correlated pairs reuse one uniform draw per pixel, so their corruption
    // events overlap wherever both rates exceed the shared draw.
    const int pairs = prof.correlated_pairs;
    std::vector<Tensor2<float>> shared_draw(pairs);
    for (int p = 0; p < pairs; ++p) {
        shared_draw[p] = Tensor2<float>(H, W);
        for (std::size_t j = 0; j < shared_draw[p].size(); ++j)
            shared_draw[p][j] = static_cast<float>(rng.uniform());
    }

    for (int i = 0; i < n; ++i) {
        const int pair = i / 2 < pairs ? i / 2 : -1;
        Tensor2<label_t> labels(H, W);
        Tensor2<float> p_true(H, W);
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double rate = rate_at(i, y, x);
                const double draw =
                    pair >= 0 ? static_cast<double>(shared_draw[pair](y, x)) : rng.uniform();
                label_t value = truth(y, x);
                if (draw < rate) {
                    if (rng.uniform() < prof.confuser_prob) {
                        value = confuser(y, x);
                    } else {
                        const int wrong = rng.below_int(L - 1);
                        value = static_cast<label_t>(wrong >= truth(y, x) ? wrong + 1
                                                                          : wrong);
                    }
                }
                labels(y, x) = value;
                p_true(y, x) = static_cast<float>(1.0 - rate);
            }
        }
        bench.atlas_labels.emplace_back(std::move(labels), L);
        bench.probs_true.push_back(std::move(p_true));
    }

    // Miscalibrated probabilities: each atlas's binary logit is scaled by
    // its own temperature, spread across [1/distort_temp, distort_temp].
    // A shared temperature would preserve the per-pixel reliability order
    // and leave the fused labels untouched; per-atlas distortion is what
    // actually misleads probability-aware fusion.
    for (int i = 0; i < n; ++i) {
        const double exponent = n == 1 ? 0.0 : 2.0 * i / (n - 1.0) - 1.0;
        const double t = std::pow(spec.distort_temp, exponent);
        const Tensor2<float>& p = bench.probs_true[i];
        Tensor2<float> distorted(H, W);
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double clamped = std::clamp(static_cast<double>(p[j]), 1e-4, 1.0 - 1e-4);
            const double logit = std::log(clamped / (1.0 - clamped));
            distorted[j] = static_cast<float>(1.0 / (1.0 + std::exp(-logit / t)));
        }
        bench.probs_uncal.push_back(std::move(distorted));
    }
    return bench;
}

LabelMap best_fusion_labels(const FusionBench& bench) {
    const int H = bench.truth.rows(), W = bench.truth.cols();
    AtlasStack stack = bench.stack_with(bench.probs_true);
    const VoteResult plurality = fuse_vote(stack, VoteMode::Plurality);
    Tensor2<label_t> out(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            bool any_correct = false;
            for (const LabelMap& a : bench.atlas_labels)
                if (a(y, x) == bench.truth(y, x)) {
                    any_correct = true;
                    break;
                }
            out(y, x) = any_correct ? bench.truth(y, x) : plurality.labels(y, x);
        }
    return LabelMap(std::move(out), bench.classes);
}

AtlasStack best_calibration_stack(const FusionBench& bench) {
    std::vector<Tensor2<float>> probs;
    const float chance = 1.0f / static_cast<float>(bench.classes);
    for (const LabelMap& a : bench.atlas_labels) {
        Tensor2<float> p(a.rows(), a.cols());
        for (int y = 0; y < a.rows(); ++y)
            for (int x = 0; x < a.cols(); ++x)
                p(y, x) = a(y, x) == bench.truth(y, x) ? 1.0f : chance;
        probs.push_back(std::move(p));
    }
    return bench.stack_with(probs);
}

}  // namespace calibra
