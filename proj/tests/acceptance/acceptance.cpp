// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails or runs over its time budget. Everything runs on the toy
// backend.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "pico/error.hpp"
#include "pico/grid_io.hpp"
#include "pico/maskctl.hpp"
#include "pico/pipeline.hpp"
#include "pico/scoring.hpp"
#include "pico/toy_backend.hpp"
#include "support/counting_backend.hpp"
#include "support/gen.hpp"
#include "support/oracles.hpp"

using namespace pico;
namespace fs = std::filesystem;

namespace {

const std::string two_concepts = "a blue apple and a green vase";

struct Outcome {
    bool pass = false;
    std::string detail;
};

/// Collects mismatches without stopping at the first one.
struct Tally {
    std::size_t cases = 0;
    std::size_t failures = 0;
    std::string first;

    void check(bool ok, const std::string& what)
    {
        ++cases;
        if (!ok) {
            if (failures++ == 0) {
                first = what;
            }
        }
    }
    bool ok() const { return failures == 0; }
    std::string summary(const char* name) const
    {
        std::string s = std::string(name) + " " + std::to_string(cases - failures) + "/" + std::to_string(cases);
        if (!ok()) {
            s += " (first: " + first + ")";
        }
        return s;
    }
};

bool close(double got, double want, double tol = 1e-9)
{
    return got == want || testkit::rel_err(got, want) <= tol;
}

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

const ToyBackend& toy()
{
    static const ToyBackend backend;
    return backend;
}

Image final_image(const Backend& backend, std::uint64_t seed, const std::string& prompt, int steps)
{
    LatentState z = backend.init_latent(seed, steps);
    const Condition c = backend.encode(prompt);
    while (z.timestep > 0) {
        z = backend.step(z, c);
    }
    return backend.decode(z);
}

// -- 1 ----------------------------------------------------------------------

Outcome oracle_suite()
{
    constexpr std::size_t n = 250;
    Tally pct, disp, stats, score, val, elim, aug;
    std::size_t discarded = 0;

    for (std::size_t i = 0; i < n; ++i) {
        auto rng = testkit::case_rng(0xacc1, i);
        const auto g = testkit::random_shape_grid(rng, 40, -5.0, 5.0, i % 2 == 0);
        static const double fixed[] = {100.0, 90.0, 50.0, 1.0, 0.001};
        const double q = i < 5 ? fixed[i] : rng.uniform(0.0, 100.0) + 1e-9;
        pct.check(percentile(g, q) == oracle::percentile(g, q), "q=" + std::to_string(q));
    }

    for (std::size_t i = 0; i < n; ++i) {
        auto rng = testkit::case_rng(0xacc2, i);
        const auto g = testkit::random_shape_grid(rng, 64, 0.0, 1.0, i % 3 == 0);
        const double t = i % 2 ? oracle::percentile(g, 90.0) : rng.uniform(-0.1, 1.0);
        const auto got = coord_dispersion(g, t);
        const auto want = oracle::dispersion(g, t);
        disp.check(close(got.sigma_x, want.sx) && close(got.sigma_y, want.sy) && close(got.sigma, want.s),
                   "case " + std::to_string(i));
    }

    for (std::size_t i = 0; i < n; ++i) {
        auto rng = testkit::case_rng(0xacc3, i);
        const auto g = i % 2 ? testkit::blobby_probabilities(rng, testkit::pick(rng, 4, 48), testkit::pick(rng, 4, 48), 3)
                             : testkit::random_shape_grid(rng, 30, 0.0, 1.0, true);
        const double q = i % 4 == 0 ? 90.0 : rng.uniform(1.0, 100.0);
        const auto got = concept_statistics(g, q);
        const auto want = oracle::concept_statistics(g, q);
        stats.check(close(got.v_avg, want.v_avg) && close(got.v_max, want.v_max), "case " + std::to_string(i));
    }

    for (std::size_t i = 0; i < n; ++i) {
        auto rng = testkit::case_rng(0xacc4, i);
        const double v_max = i % 10 == 0 ? rng.uniform(0.0, 2e-8) : rng.uniform(1e-6, 1.0);
        const double v_avg = rng.uniform(0.0, v_max);
        const double delta = i % 3 == 0 ? 2.0 : rng.uniform(0.0, 10.0);
        score.check(close(concept_score(v_avg, v_max, delta), oracle::concept_score(v_avg, v_max, delta)),
                    "case " + std::to_string(i));
    }

    for (std::size_t i = 0; i < n; ++i) {
        auto rng = testkit::case_rng(0xacc5, i);
        const std::size_t side = testkit::pick(rng, 8, 160);
        auto logits = testkit::random_grid(rng, side, side, -6.0, rng.uniform(-1.0, 3.0), i % 4 == 0);
        const double alpha_l = i % 2 ? 0.7 : rng.uniform(-1.0, 2.0);
        const double alpha_h = i % 2 ? 1500.0 : rng.uniform(0.0, 3000.0);
        const double q = i % 3 ? 90.0 : rng.uniform(50.0, 99.0);
        const auto v = validate(RawConceptMask{0, logits}, alpha_l, alpha_h, q);
        const bool keep = oracle::keeps(logits, alpha_l, alpha_h, q);
        bool ok = v.active() == keep;
        if (keep) {
            for (std::size_t c = 0; c < logits.size() && ok; ++c) {
                ok = close(v.probabilities.values()[c], 1.0 / (1.0 + std::exp(-logits.values()[c])));
            }
        }
        discarded += keep ? 0 : 1;
        val.check(ok, "case " + std::to_string(i));
    }

    for (std::size_t i = 0; i < n; ++i) {
        auto rng = testkit::case_rng(0xacc6, i);
        const std::size_t h = testkit::pick(rng, 2, 32), w = testkit::pick(rng, 2, 32);
        const std::size_t k = testkit::pick(rng, 1, 4);
        const double thr = i % 2 ? 0.5 : rng.uniform(0.05, 0.95);
        std::vector<ValidatedMask> masks;
        std::vector<Grid2D> active;
        for (std::size_t r = 0; r < k; ++r) {
            ValidatedMask m;
            m.concept_index = r;
            if (rng.uniform() < 0.8) {
                m.state = MaskState::active;
                m.probabilities = i % 3 ? testkit::blobby_probabilities(rng, h, w, 2)
                                        : testkit::random_grid(rng, h, w, 0.0, 1.0, true, GridRole::probability);
                active.push_back(m.probabilities);
            }
            masks.push_back(m);
        }
        const auto got = eliminate_conflicts(masks, thr);
        const auto want = oracle::eliminate(active, thr);
        bool ok = got.masks.size() == masks.size();
        std::size_t a = 0;
        for (std::size_t r = 0; r < masks.size() && ok; ++r) {
            if (masks[r].active()) {
                ok = got.masks[r].active() && got.masks[r].probabilities.values().size() == want[a].size() &&
                     std::equal(want[a].values().begin(), want[a].values().end(), got.masks[r].probabilities.values().begin());
                ++a;
            } else {
                ok = !got.masks[r].active();
            }
        }
        elim.check(ok, "case " + std::to_string(i));
    }

    for (std::size_t i = 0; i < n; ++i) {
        auto rng = testkit::case_rng(0xacc7, i);
        const double beta_l = i % 2 ? 0.5 : rng.uniform(0.0, 0.6);
        const double beta_h = i % 2 ? 0.7 : rng.uniform(beta_l, 1.0);
        const double gamma = i % 2 ? 15.0 : rng.uniform(1.0, 60.0);
        // band edges get hit on purpose
        const double edges[] = {beta_l, beta_h, 0.0, 1.0};
        const double v = i % 5 == 0 ? edges[(i / 5) % 4] : rng.uniform(0.0, 1.0);
        bool ok = close(augment(v, beta_l, beta_h, gamma), oracle::augment(v, beta_l, beta_h, gamma));
        const auto g = testkit::random_grid(rng, 6, 7, 0.0, 1.0, true, GridRole::probability);
        const auto ga = augment(g, beta_l, beta_h, gamma);
        for (std::size_t c = 0; c < g.size() && ok; ++c) {
            ok = close(ga.values()[c], oracle::augment(g.values()[c], beta_l, beta_h, gamma));
        }
        aug.check(ok, "case " + std::to_string(i));
    }

    const bool pass = pct.ok() && disp.ok() && stats.ok() && score.ok() && val.ok() && elim.ok() && aug.ok();
    std::string d = pct.summary("percentile") + ", " + disp.summary("coord_dispersion") + ", " +
                    stats.summary("concept_statistics") + ", " + score.summary("concept_score") + ", " +
                    val.summary("validate") + " [" + std::to_string(discarded) + " discarded], " +
                    elim.summary("eliminate_conflicts") + ", " + aug.summary("augment");
    return {pass, d};
}

// -- 2 ----------------------------------------------------------------------

Grid2D compact_high(SplitMix64& rng, std::size_t side)
{
    Grid2D g(side, side, 0.0);
    const double cx = rng.uniform(20.0, side - 20.0), cy = rng.uniform(20.0, side - 20.0);
    const double radius = rng.uniform(6.0, 18.0), peak = rng.uniform(1.0, 6.0);
    for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
            const double d = std::hypot(x - cx, y - cy) / radius;
            g.at(y, x) = -6.0 + rng.uniform(0.0, 0.2) + (peak + 6.0) * std::exp(-d * d);
        }
    }
    return g;
}

/// Faint speckles pushed into the four corners, so the cells above the 90th
/// percentile spread across the whole canvas.
Grid2D sparse_low(SplitMix64& rng, std::size_t side)
{
    Grid2D g(side, side, -6.0);
    for (int corner = 0; corner < 4; ++corner) {
        const std::size_t size = testkit::pick(rng, 2, 5);
        const std::size_t off_y = testkit::pick(rng, 0, 4), off_x = testkit::pick(rng, 0, 4);
        const std::size_t y0 = corner & 1 ? side - size - off_y : off_y;
        const std::size_t x0 = corner & 2 ? side - size - off_x : off_x;
        for (std::size_t y = y0; y < y0 + size; ++y) {
            for (std::size_t x = x0; x < x0 + size; ++x) {
                g.at(y, x) = rng.uniform(-1.0, 0.6);
            }
        }
    }
    return g;
}

Outcome gate_corpus()
{
    const ControlConfig cfg;
    std::size_t right = 0;
    double min_sparse_sigma = 1e300, max_compact_sigma = 0.0;
    std::string wrong;
    for (std::size_t i = 0; i < 100; ++i) {
        auto rng = testkit::case_rng(0xacc8, i);
        const bool sparse = i >= 50;
        const std::size_t side = testkit::pick(rng, 128, 160);
        const auto logits = sparse ? sparse_low(rng, side) : compact_high(rng, side);
        const auto v = validate(RawConceptMask{i, logits}, cfg.alpha_l, cfg.alpha_h, cfg.percentile);
        if (v.active() != sparse) {
            ++right;
        } else if (wrong.empty()) {
            wrong = " first wrong #" + std::to_string(i);
        }
        (sparse ? min_sparse_sigma : max_compact_sigma) =
            sparse ? std::min(min_sparse_sigma, v.sigma) : std::max(max_compact_sigma, v.sigma);
    }
    return {right == 100, std::to_string(right) + "/100 classified; sparse-low sigma >= " + fmt("%.0f", min_sparse_sigma) +
                              ", compact-high sigma <= " + fmt("%.0f", max_compact_sigma) + wrong};
}

// -- 3 ----------------------------------------------------------------------

Outcome conflict_invariant()
{
    constexpr std::size_t n = 600;
    std::size_t bad = 0, conflicts = 0;
    for (std::size_t i = 0; i < n; ++i) {
        auto rng = testkit::case_rng(0xacc9, i);
        const std::size_t h = testkit::pick(rng, 4, 48), w = testkit::pick(rng, 4, 48);
        const double thr = i % 2 ? 0.5 : rng.uniform(0.05, 0.95);
        std::vector<ValidatedMask> masks;
        for (std::size_t r = 0, k = testkit::pick(rng, 2, 5); r < k; ++r) {
            ValidatedMask m;
            m.concept_index = r;
            m.state = rng.uniform() < 0.85 ? MaskState::active : MaskState::discarded;
            if (m.active()) {
                m.probabilities = testkit::blobby_probabilities(rng, h, w, static_cast<int>(testkit::pick(rng, 1, 4)));
            }
            masks.push_back(m);
        }
        const auto out = eliminate_conflicts(masks, thr);
        conflicts += out.conflict_pixels;
        bool ok = true;
        for (std::size_t c = 0; c < h * w; ++c) {
            int above = 0;
            for (std::size_t r = 0; r < masks.size(); ++r) {
                if (!masks[r].active()) {
                    continue;
                }
                const double before = masks[r].probabilities.values()[c];
                const double after = out.masks[r].probabilities.values()[c];
                ok = ok && after <= before;
                above += after > thr ? 1 : 0;
            }
            ok = ok && above < 2;
        }
        bad += ok ? 0 : 1;
    }
    return {bad == 0, std::to_string(n - bad) + "/" + std::to_string(n) + " instances hold (" + std::to_string(conflicts) +
                          " conflict pixels resolved)"};
}

// -- 4 ----------------------------------------------------------------------

Outcome hook_transparency()
{
    const auto tp = tokenize(two_concepts);
    const auto concepts = extract_concepts(tp);
    ControlConfig off;
    off.mask_control = false;
    std::size_t same = 0;
    for (std::uint64_t i = 0; i < 20; ++i) {
        const std::uint64_t seed = mix64(0x4000 + i);
        const Condition c = toy().encode(two_concepts);
        LatentState plain = toy().init_latent(seed, 50), hooked = plain, ctl = plain;
        MaskController disabled(toy(), tp, concepts, off);
        const AttentionHook identity = [](const LatentState&, std::vector<AttentionStack>&) {};
        const AttentionHook off_hook = disabled.hook();
        while (plain.timestep > 0) {
            plain = toy().step(plain, c);
            hooked = toy().step(hooked, c, identity);
            ctl = toy().step(ctl, c, off_hook);
        }
        same += (plain == hooked && plain == ctl) ? 1 : 0;
    }
    return {same == 20, std::to_string(same) + "/20 seeds bit-identical (identity hook and disabled controller)"};
}

// -- 5 ----------------------------------------------------------------------

Outcome selection_efficacy()
{
    const auto concepts = extract_concepts(tokenize(two_concepts));
    const ControlConfig cfg;
    const auto universe = build_candidate_set(20, 10, 7);

    // exhaustive expectation from the layout hash
    std::set<std::uint64_t> expected_both;
    for (const auto& c : universe) {
        bool both = true;
        for (const auto& k : concepts) {
            both = both && toy().layout(c.seed, k.text).present;
        }
        if (both) {
            expected_both.insert(c.seed);
        }
    }

    std::map<std::uint64_t, bool> measured;
    std::size_t disagree = 0;
    for (const auto& c : universe) {
        const Image img = final_image(toy(), c.seed, two_concepts, cfg.total_steps);
        bool both = true;
        for (const auto& k : concepts) {
            both = both && toy().segment(img, k.text).max() > cfg.alpha_l;
        }
        measured[c.seed] = both;
        disagree += both != (expected_both.count(c.seed) > 0) ? 1 : 0;
    }

    const auto reports = score_candidates(universe, two_concepts, concepts, toy(),
                                          {cfg.fast_steps, cfg.percentile, cfg.delta}, cfg.parallelism);
    const auto top = select_top(universe, reports, 20);
    std::size_t all_hits = 0, top_hits = 0, top_expected = 0;
    for (const auto& [seed, both] : measured) {
        all_hits += both ? 1 : 0;
    }
    for (const auto& c : top) {
        top_hits += measured.at(c.seed) ? 1 : 0;
        top_expected += expected_both.count(c.seed);
    }
    const double all_rate = 100.0 * all_hits / 200.0;
    const double top_rate = 100.0 * top_hits / 20.0;
    const bool rates_exact = disagree == 0 && all_hits == expected_both.size() && top_hits == top_expected;
    const bool pass = rates_exact && top_rate - all_rate >= 15.0;
    return {pass, "all seeds " + fmt("%.1f%%", all_rate) + " (layout " + fmt("%.1f%%", 100.0 * expected_both.size() / 200.0) +
                      "), top 10% " + fmt("%.1f%%", top_rate) + " (layout " + fmt("%.1f%%", 100.0 * top_expected / 20.0) +
                      "), gain " + fmt("%+.1f pp", top_rate - all_rate) + ", " + std::to_string(disagree) +
                      " layout/measurement disagreements"};
}

// -- 6 ----------------------------------------------------------------------

/// Attention mass of the dropped concept's noun token inside the region its
/// blob owns, averaged over layers, at the last denoising step.
double final_noun_mass(std::uint64_t seed, std::size_t r, bool control)
{
    const auto tp = tokenize(two_concepts);
    const auto concepts = extract_concepts(tp);
    const auto d = toy().describe();
    ControlConfig cfg;
    cfg.mask_control = control;
    MaskController mc(toy(), tp, concepts, cfg);

    auto region = toy().footprint(toy().layout(seed, concepts[r].text));
    const auto other = toy().footprint(toy().layout(seed, concepts[1 - r].text));
    for (std::size_t i = 0; i < region.size(); ++i) {
        if (!(region.values()[i] > other.values()[i])) {
            region.values()[i] = 0.0;
        }
    }
    const std::size_t noun = concepts[r].span.last;
    const Condition c = toy().encode(two_concepts);
    double mass = 0.0;
    const AttentionHook hook = [&](const LatentState& z, std::vector<AttentionStack>& stacks) {
        if (z.timestep == 1) {
            double m = 0.0;
            for (const auto& s : stacks) {
                const auto up = resample(s.maps[noun], d.latent.height, d.latent.width);
                for (std::size_t i = 0; i < up.size(); ++i) {
                    m += up.values()[i] * region.values()[i];
                }
            }
            mass = m / static_cast<double>(stacks.size());
        }
        mc(z, stacks);
    };
    LatentState z = toy().init_latent(seed, cfg.total_steps);
    while (z.timestep > 0) {
        z = toy().step(z, c, hook);
    }
    return mass;
}

Outcome control_efficacy()
{
    const auto concepts = extract_concepts(tokenize(two_concepts));
    std::size_t found = 0, wins = 0;
    double min_ratio = 1e300;
    for (std::uint64_t i = 0; found < 20 && i < 2000; ++i) {
        const std::uint64_t seed = mix64(1000 + i);
        const bool a = toy().layout(seed, concepts[0].text).present;
        const bool b = toy().layout(seed, concepts[1].text).present;
        if (a == b) {
            continue;
        }
        ++found;
        const std::size_t dropped = a ? 1 : 0;
        const double u = final_noun_mass(seed, dropped, false);
        const double c = final_noun_mass(seed, dropped, true);
        wins += c > u ? 1 : 0;
        min_ratio = std::min(min_ratio, u > 0 ? c / u : 0.0);
    }
    return {found == 20 && wins >= 18, std::to_string(wins) + "/" + std::to_string(found) +
                                           " seeds with higher noun-token mass under control (min ratio " +
                                           fmt("%.2f", min_ratio) + ")"};
}

// -- 7 ----------------------------------------------------------------------

fs::path scratch_dir(const std::string& name)
{
    auto p = fs::temp_directory_path() / ("pico_accept_" + std::to_string(::getpid()) + "_" + name);
    fs::remove_all(p);
    return p;
}

Outcome ablation_monotonicity()
{
    RunConfig rc;
    rc.prompt = two_concepts;
    rc.n_images = 2;
    rc.master_seed = 7;
    rc.control.candidate_ratio = 1;
    const std::vector<std::string> values{"5", "25", "50"};
    const auto reports = run_ablation(rc, toy(), "T_c", values);
    std::vector<std::size_t> counts;
    bool per_image_equal = true;
    for (const auto& r : reports) {
        counts.push_back(r.images[0].events.size());
        for (const auto& img : r.images) {
            per_image_equal = per_image_equal && img.events.size() == r.images[0].events.size() &&
                              static_cast<int>(img.events.size()) == expected_control_events(r.config.control);
        }
    }
    const bool order = counts == std::vector<std::size_t>{5, 25, 50};

    // gamma = 1: dumps must show post = pre * mask * prod(1 - other masks)
    const auto tp = tokenize(two_concepts);
    const auto concepts = extract_concepts(tp);
    const auto labels = token_labels(tp);
    ControlConfig g1;
    g1.gamma = 1.0;
    const std::uint64_t seed = mix64(0x7777);
    const auto dir = scratch_dir("gamma1");
    MaskControllerOptions opt;
    opt.dump_dir = dir;
    const auto res = generate_image(toy(), seed, tp, concepts, g1, opt);

    std::size_t checked = 0, mismatched = 0, identity_bands = 0;
    bool first_matches_uncontrolled = true;
    const auto first_pre = toy().attention(toy().init_latent(seed, g1.total_steps), toy().encode(two_concepts));
    for (const auto& ev : res.events) {
        const auto root = dir / ("t" + std::string(ev.timestep < 10 ? "00" : "0") + std::to_string(ev.timestep));
        std::vector<Grid2D> m(concepts.size());
        for (std::size_t r = 0; r < concepts.size(); ++r) {
            const auto base = root / "masks" / ("concept" + std::to_string(r));
            if (fs::exists(base.string() + "_validated.pgrd")) {
                m[r] = read_pgrd(base.string() + "_validated.pgrd");
                const auto a = read_pgrd(base.string() + "_augmented.pgrd");
                identity_bands +=
                    std::equal(a.values().begin(), a.values().end(), m[r].values().begin(), m[r].values().end()) ? 0 : 1;
            }
        }
        for (std::size_t l = 0; fs::exists(root / ("layer" + std::to_string(l))); ++l) {
            for (std::size_t q = 0; q < labels.size(); ++q) {
                const auto pre = read_pgrd(root / ("layer" + std::to_string(l)) / (labels[q] + "_pre.pgrd"));
                const auto post = read_pgrd(root / ("layer" + std::to_string(l)) / (labels[q] + "_post.pgrd"));
                if (ev.step == 0 && !(l < first_pre.size() && pre.values().size() == first_pre[l].maps[q].size() &&
                                      std::equal(pre.values().begin(), pre.values().end(), first_pre[l].maps[q].values().begin(),
                                                 [](double a, double b) { return a == static_cast<double>(static_cast<float>(b)); }))) {
                    first_matches_uncontrolled = false;
                }
                std::size_t owner = concepts.size();
                for (std::size_t r = 0; r < concepts.size(); ++r) {
                    if (q >= concepts[r].span.first && q <= concepts[r].span.last) {
                        owner = r;
                    }
                }
                const bool special = q == 0 || q + 1 == labels.size();
                for (std::size_t y = 0; y < pre.height(); ++y) {
                    for (std::size_t x = 0; x < pre.width(); ++x) {
                        double factor = 1.0;
                        if (!special) {
                            for (std::size_t r = 0; r < concepts.size(); ++r) {
                                if (m[r].empty()) {
                                    continue;
                                }
                                const double v = oracle::bilinear(m[r], pre.height(), pre.width(), y, x);
                                factor *= r == owner ? v : 1.0 - v;
                            }
                        }
                        const double want = pre.at(y, x) * factor;
                        const double got = post.at(y, x);
                        ++checked;
                        // dumps are float32, so allow a few ulps on the inputs
                        const double tol = 1e-6 * std::max(std::abs(pre.at(y, x)), std::abs(want)) + 1e-12;
                        if (special ? got != pre.at(y, x) : std::abs(got - want) > tol) {
                            ++mismatched;
                        }
                    }
                }
            }
        }
    }
    fs::remove_all(dir);
    const bool dumps_ok = checked > 0 && mismatched == 0 && identity_bands == 0 && first_matches_uncontrolled;
    return {order && per_image_equal && dumps_ok,
            "events T_c=5/25/50: " + std::to_string(counts[0]) + " < " + std::to_string(counts[1]) + " < " +
                std::to_string(counts[2]) + "; gamma=1 dump diff over " + std::to_string(res.events.size()) + " steps, " +
                std::to_string(checked) + " cells, " + std::to_string(mismatched) + " off the mask product, " +
                (first_matches_uncontrolled ? "first-step pre maps equal the uncontrolled run" : "first-step pre maps differ") + ", " + std::to_string(identity_bands) + " augmented masks differ from validated" + (per_image_equal ? "" : ", per-image event counts uneven")};
}

// -- 8 ----------------------------------------------------------------------

std::map<std::string, std::string> tree(const fs::path& root)
{
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) {
            std::ifstream in(e.path(), std::ios::binary);
            std::ostringstream ss;
            ss << in.rdbuf();
            files[fs::relative(e.path(), root).generic_string()] = ss.str();
        }
    }
    return files;
}

Outcome cli_determinism(const std::string& cli)
{
    const auto a = scratch_dir("run_a"), b = scratch_dir("run_b");
    const std::string args = " run --prompt '" + two_concepts + "' --n 2 --seed 7 --set r_s=5 --dump-masks --out ";
    for (const auto& d : {a, b}) {
        const std::string cmd = "'" + cli + "'" + args + "'" + d.string() + "' > /dev/null";
        if (std::system(cmd.c_str()) != 0) {
            return {false, "pico run failed: " + cmd};
        }
    }
    auto ta = tree(a), tb = tree(b);
    std::size_t differing = 0, images = 0, masks = 0;
    for (const auto& [path, bytes] : ta) {
        images += path.starts_with("images/") ? 1 : 0;
        masks += path.starts_with("masks/") ? 1 : 0;
        const auto it = tb.find(path);
        if (it == tb.end()) {
            ++differing;
            continue;
        }
        if (path == "report.json") {
            auto ja = nlohmann::json::parse(bytes), jb = nlohmann::json::parse(it->second);
            ja.erase("timing");
            jb.erase("timing");
            differing += ja == jb ? 0 : 1;
        } else {
            differing += bytes == it->second ? 0 : 1;
        }
    }
    differing += ta.size() == tb.size() ? 0 : 1;
    const bool has_report = ta.count("report.json") > 0;
    fs::remove_all(a);
    fs::remove_all(b);
    return {has_report && images > 0 && masks > 0 && differing == 0,
            std::to_string(ta.size()) + " files (" + std::to_string(images) + " image, " + std::to_string(masks) +
                " mask), " + std::to_string(differing) + " differ"};
}

// -- 9 ----------------------------------------------------------------------

Outcome fast_sampling_budget()
{
    const auto concepts = extract_concepts(tokenize(two_concepts));
    const testkit::CountingBackend counting(toy());
    const auto report = score_candidate({mix64(9)}, two_concepts, concepts, counting, {5, 90.0, 2.0});
    bool log_ok = report.provenance.size() == 3;
    std::set<std::string> conditions;
    for (const auto& p : report.provenance) {
        log_ok = log_ok && p.steps == 5;
        conditions.insert(p.condition);
    }
    log_ok = log_ok && conditions == std::set<std::string>{two_concepts, concepts[0].text, concepts[1].text};
    const int traj = counting.trajectories.load(), steps = counting.steps.load();
    return {log_ok && traj == 3 && steps == 15, "R=" + std::to_string(concepts.size()) + ": provenance " +
                                                    std::to_string(report.provenance.size()) + " fast samples, backend saw " +
                                                    std::to_string(traj) + " trajectories / " + std::to_string(steps) + " steps"};
}

} // namespace

int main(int argc, char** argv)
{
    const std::string cli = argc > 1 ? argv[1] : PICO_CLI_PATH;
    struct Criterion {
        int id;
        const char* name;
        double budget_s;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "kernel oracle suite", 10, oracle_suite},
        {2, "validity gate corpus", 1, gate_corpus},
        {3, "conflict elimination invariant", 5, conflict_invariant},
        {4, "hook transparency", 5, hook_transparency},
        {5, "noise selection efficacy", 60, selection_efficacy},
        {6, "mask control efficacy", 60, control_efficacy},
        {7, "ablation monotonicity", 30, ablation_monotonicity},
        {8, "end-to-end determinism", 30, [&] { return cli_determinism(cli); }},
        {9, "fast sampling budget", 5, fast_sampling_budget},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = s < c.budget_s;
        const bool pass = o.pass && in_time;
        failed += pass ? 0 : 1;
        std::printf("%s %d %s [%.2f s of %.0f s%s] %s\n", pass ? "PASS" : "FAIL", c.id, c.name, s, c.budget_s,
                    in_time ? "" : ", over budget", o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
