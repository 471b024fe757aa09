#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "wlfm/corpus.hpp"

using namespace wlfm;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / name; }

well_log tiny_well(std::size_t n, double spacing = 0.125) {
    well_log w;
    w.well_id = "T";
    w.depths.resize(n);
    for (std::size_t i = 0; i < n; ++i) w.depths[i] = 100.0 + spacing * static_cast<double>(i);
    curve_series gr;
    gr.kind = curve_kind::gr;
    for (std::size_t i = 0; i < n; ++i) gr.values.push_back(static_cast<double>(i % 7));
    w.curves.push_back(std::move(gr));
    return w;
}

}  // namespace

TEST_CASE("curve names map both ways; unknown rejected") {
    CHECK(curve_from_name("GR") == curve_kind::gr);
    CHECK(curve_from_name("RT") == curve_kind::rt);
    CHECK(std::string(curve_name(curve_kind::den)) == "DEN");
    CHECK(log_transformed(curve_kind::rt));
    CHECK_FALSE(log_transformed(curve_kind::gr));
    try {
        curve_from_name("CALIPER");
        FAIL("unknown curve accepted");
    } catch (const error& e) {
        CHECK(e.code() == errc::unknown_curve_name);
    }
}

TEST_CASE("z-scoring uses population std: [1,2,3]") {
    well_log w = tiny_well(3);
    w.curves[0].values = {1.0, 2.0, 3.0};
    well_log n = normalize_well(w);
    // mean 2, population std sqrt(2/3)
    const double expected = 1.0 / std::sqrt(2.0 / 3.0);
    CHECK(n.curves[0].values[0] == Catch::Approx(-1.2247448713915890).epsilon(1e-12));
    CHECK(n.curves[0].values[0] == Catch::Approx(-expected));
    CHECK(n.curves[0].values[1] == Catch::Approx(0.0).margin(1e-15));
    CHECK(n.curves[0].values[2] == Catch::Approx(expected));
    CHECK(n.curves[0].normalized);
    CHECK(n.curves[0].norm_mean == Catch::Approx(2.0));
}

TEST_CASE("constant curve maps to zeros through the std floor") {
    well_log w = tiny_well(3);
    w.curves[0].values = {5.0, 5.0, 5.0};
    well_log n = normalize_well(w);
    for (double v : n.curves[0].values) CHECK(v == 0.0);
    CHECK(n.curves[0].norm_std == 1e-6);
}

TEST_CASE("resistivity is log10-transformed before z-scoring") {
    well_log w = tiny_well(3);
    w.curves[0].kind = curve_kind::rt;
    w.curves[0].values = {10.0, 100.0, 1000.0};
    well_log n = normalize_well(w);
    const double expected = 1.0 / std::sqrt(2.0 / 3.0);
    CHECK(n.curves[0].values[0] == Catch::Approx(-expected));
    CHECK(n.curves[0].values[1] == Catch::Approx(0.0).margin(1e-12));
    CHECK(n.curves[0].values[2] == Catch::Approx(expected));
    CHECK(n.curves[0].log10_applied);

    w.curves[0].values = {10.0, -1.0, 1000.0};
    try {
        normalize_well(w);
        FAIL("nonpositive resistivity accepted");
    } catch (const error& e) {
        CHECK(e.code() == errc::non_positive_resistivity);
    }
}

TEST_CASE("normalize/denormalize round-trip within 1e-9 relative") {
    rng g(31);
    well_log w = tiny_well(200);
    for (auto& v : w.curves[0].values) v = 50.0 + 20.0 * g.normal();
    curve_series rt;
    rt.kind = curve_kind::rt;
    for (std::size_t i = 0; i < 200; ++i) rt.values.push_back(std::pow(10.0, g.uniform(0.0, 2.5)));
    w.curves.push_back(std::move(rt));

    well_log back = denormalize_well(normalize_well(w));
    for (std::size_t c = 0; c < w.curves.size(); ++c)
        for (std::size_t i = 0; i < w.n(); ++i) {
            const double a = w.curves[c].values[i];
            const double b = back.curves[c].values[i];
            CHECK(std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(a)));
        }
}

TEST_CASE("patch extraction: counts, starts, rel_depth") {
    SECTION("n=10, L=4, s=2 gives starts 0,2,4,6") {
        auto ps = extract_patches(tiny_well(10), 4, 2);
        REQUIRE(ps.size() == 4);
        std::vector<std::size_t> starts;
        for (const auto& p : ps) starts.push_back(p.start_index);
        CHECK(starts == std::vector<std::size_t>{0, 2, 4, 6});
    }
    SECTION("short well yields no patches") {
        CHECK(extract_patches(tiny_well(3), 4, 1).empty());
    }
    SECTION("exact-length well yields one centered patch") {
        auto ps = extract_patches(tiny_well(4), 4, 1);
        REQUIRE(ps.size() == 1);
        CHECK(ps[0].rel_depth == Catch::Approx(0.5));
    }
    SECTION("count formula holds for random shapes") {
        rng g(17);
        for (int trial = 0; trial < 50; ++trial) {
            const std::size_t n = 1 + g.below(200);
            const std::size_t L = 1 + g.below(40);
            const std::size_t s = 1 + g.below(20);
            auto ps = extract_patches(tiny_well(n), L, s);
            const std::size_t expected = n >= L ? (n - L) / s + 1 : 0;
            INFO("n=" << n << " L=" << L << " s=" << s);
            CHECK(ps.size() == expected);
            for (const auto& p : ps) {
                CHECK(p.rel_depth >= 0.0);
                CHECK(p.rel_depth <= 1.0);
            }
        }
    }
    SECTION("coverage: every index is inside some patch when s <= L") {
        rng g(18);
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t L = 2 + g.below(30);
            const std::size_t s = 1 + g.below(L);
            const std::size_t n = L + g.below(100);
            auto ps = extract_patches(tiny_well(n), L, s);
            std::vector<char> covered(n, 0);
            for (const auto& p : ps)
                for (std::size_t i = 0; i < L; ++i) covered[p.start_index + i] = 1;
            // all fully strided coverage extends to the last patch's end; the
            // tail shorter than a window is only covered when it fits
            const std::size_t last_end = ps.empty() ? 0 : ps.back().start_index + L;
            for (std::size_t i = 0; i < last_end; ++i) {
                INFO("i=" << i << " L=" << L << " s=" << s << " n=" << n);
                CHECK(covered[i] == 1);
            }
            // the uncovered tail is strictly shorter than one stride
            CHECK(n - last_end < s);
        }
    }
}

TEST_CASE("patches carry canonical channels with missing flags") {
    well_log w = tiny_well(8);  // GR only
    auto ps = extract_patches(w, 4, 4);
    REQUIRE(ps.size() == 2);
    const patch& p = ps[0];
    REQUIRE(p.channels() == n_curve_kinds);
    CHECK_FALSE(p.missing_mask[0]);  // GR present
    for (std::size_t c = 1; c < n_curve_kinds; ++c) CHECK(p.missing_mask[c]);
    CHECK_FALSE(p.all_missing());
    CHECK(p.values.at(0, 0) == w.curves[0].values[0]);
}

TEST_CASE("well CSV round-trip preserves values and labels bit-exactly") {
    synth_config cfg = default_synth_config();
    cfg.n_wells = 1;
    cfg.well_length_min = cfg.well_length_max = 20.0;
    auto wells = generate_corpus(cfg);
    const fs::path p = temp_file("wlfm_roundtrip.csv");
    write_well(wells[0], p);
    well_log r = load_well(p, wells[0].well_id);
    REQUIRE(r.n() == wells[0].n());
    REQUIRE(r.curves.size() == wells[0].curves.size());
    for (std::size_t c = 0; c < r.curves.size(); ++c) {
        CHECK(r.curves[c].kind == wells[0].curves[c].kind);
        for (std::size_t i = 0; i < r.n(); ++i)
            CHECK(r.curves[c].values[i] == wells[0].curves[c].values[i]);
    }
    CHECK(r.litho_labels == wells[0].litho_labels);
    for (std::size_t i = 0; i < r.n(); ++i) CHECK(r.porosity[i] == wells[0].porosity[i]);
    REQUIRE(r.layer_tops.size() == wells[0].layer_tops.size());
    for (std::size_t i = 0; i < r.layer_tops.size(); ++i) {
        CHECK(r.layer_tops[i].depth == wells[0].layer_tops[i].depth);
        CHECK(r.layer_tops[i].layer_id == wells[0].layer_tops[i].layer_id);
    }
    fs::remove(p);
}

TEST_CASE("load_well rejects malformed files") {
    SECTION("minimal valid file") {
        const fs::path p = temp_file("wlfm_min.csv");
        std::ofstream(p) << "DEPTH,GR,SP\n100,50,-20\n100.125,55,-22\n100.25,60,-25\n";
        well_log w = load_well(p);
        CHECK(w.n() == 3);
        CHECK(w.curves.size() == 2);
        fs::remove(p);
    }
    SECTION("missing depth column") {
        const fs::path p = temp_file("wlfm_nodepth.csv");
        std::ofstream(p) << "GR,SP\n50,-20\n";
        try {
            load_well(p);
            FAIL("accepted");
        } catch (const error& e) {
            CHECK(e.code() == errc::missing_depth_column);
        }
        fs::remove(p);
    }
    SECTION("non-monotonic depth") {
        const fs::path p = temp_file("wlfm_badorder.csv");
        std::ofstream(p) << "DEPTH,GR\n100,1\n99,2\n101,3\n";
        try {
            load_well(p);
            FAIL("accepted");
        } catch (const error& e) {
            CHECK(e.code() == errc::non_monotonic_depth);
        }
        fs::remove(p);
    }
    SECTION("unknown curve name") {
        const fs::path p = temp_file("wlfm_badname.csv");
        std::ofstream(p) << "DEPTH,NPHI\n100,0.2\n";
        try {
            load_well(p);
            FAIL("accepted");
        } catch (const error& e) {
            CHECK(e.code() == errc::unknown_curve_name);
        }
        fs::remove(p);
    }
    SECTION("ragged rows") {
        const fs::path p = temp_file("wlfm_ragged.csv");
        std::ofstream(p) << "DEPTH,GR\n100,1\n100.125\n";
        try {
            load_well(p);
            FAIL("accepted");
        } catch (const error& e) {
            CHECK(e.code() == errc::ragged_columns);
        }
        fs::remove(p);
    }
}

TEST_CASE("split: rounded proportions, determinism, disjointness") {
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) ids.push_back("W" + std::to_string(i));
    well_split sp = split_wells(ids, {0.8, 0.1, 0.1}, 5);
    CHECK(sp.train.size() == 8);
    CHECK(sp.val.size() == 1);
    CHECK(sp.test.size() == 1);
    well_split sp2 = split_wells(ids, {0.8, 0.1, 0.1}, 5);
    CHECK(sp.train == sp2.train);
    CHECK(sp.val == sp2.val);
    CHECK(sp.test == sp2.test);

    try {
        split_wells(ids, {0.5, 0.3, 0.1}, 5);
        FAIL("bad ratios accepted");
    } catch (const error& e) {
        CHECK(e.code() == errc::bad_ratios);
    }

    // leakage property over many seeds
    rng g(77);
    for (int trial = 0; trial < 30; ++trial) {
        well_split s = split_wells(ids, {0.6, 0.2, 0.2}, g.next_u64());
        std::set<std::string> seen;
        for (const auto* part : {&s.train, &s.val, &s.test})
            for (const auto& id : *part) CHECK(seen.insert(id).second);
        CHECK(seen.size() == ids.size());
    }
}

TEST_CASE("generator determinism: same seed, identical corpus") {
    synth_config cfg = default_synth_config();
    cfg.n_wells = 3;
    cfg.well_length_min = cfg.well_length_max = 30.0;
    auto a = generate_corpus(cfg);
    auto b = generate_corpus(cfg);
    REQUIRE(a.size() == 3);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].well_id == b[i].well_id);
        CHECK(a[i].depths == b[i].depths);
        REQUIRE(a[i].curves.size() == b[i].curves.size());
        for (std::size_t c = 0; c < a[i].curves.size(); ++c)
            CHECK(a[i].curves[c].values == b[i].curves[c].values);
        CHECK(a[i].litho_labels == b[i].litho_labels);
        CHECK(a[i].porosity == b[i].porosity);
    }
    cfg.seed = 43;
    auto c = generate_corpus(cfg);
    CHECK(a[0].curves[0].values != c[0].curves[0].values);
}

TEST_CASE("identity transition matrix gives single-lithology wells") {
    synth_config cfg = default_synth_config();
    cfg.n_wells = 4;
    cfg.well_length_min = cfg.well_length_max = 25.0;
    cfg.transition = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    auto wells = generate_corpus(cfg);
    for (const auto& w : wells) {
        REQUIRE(w.layer_tops.size() == 1);
        const int only = w.litho_labels[0];
        for (int l : w.litho_labels) CHECK(l == only);
        CHECK(w.layer_tops[0].layer_id == only);
        CHECK(w.layer_tops[0].depth == w.depths[0]);
    }
}

TEST_CASE("invalid transition matrices are rejected") {
    synth_config cfg = default_synth_config();
    cfg.transition[0] = {0.5, 0.4, 0.2};  // sums to 1.1
    try {
        generate_corpus(cfg);
        FAIL("accepted");
    } catch (const error& e) {
        CHECK(e.code() == errc::invalid_transition_matrix);
    }
    cfg = default_synth_config();
    cfg.transition[1][0] = -0.1;
    cfg.transition[1][1] = 1.1;
    CHECK_THROWS_AS(generate_corpus(cfg), error);
}

TEST_CASE("generated porosity matches lithology priors within 3 standard errors") {
    synth_config cfg = default_synth_config();
    cfg.n_wells = 20;
    auto wells = generate_corpus(cfg);
    std::vector<double> sum(cfg.lithologies.size(), 0.0);
    std::vector<std::size_t> count(cfg.lithologies.size(), 0);
    for (const auto& w : wells)
        for (std::size_t i = 0; i < w.n(); ++i) {
            sum[static_cast<std::size_t>(w.litho_labels[i])] += w.porosity[i];
            ++count[static_cast<std::size_t>(w.litho_labels[i])];
        }
    for (std::size_t k = 0; k < cfg.lithologies.size(); ++k) {
        REQUIRE(count[k] > 100);  // all three lithologies must actually occur
        const double mean = sum[k] / static_cast<double>(count[k]);
        const double se = cfg.lithologies[k].poro_std / std::sqrt(static_cast<double>(count[k]));
        INFO("litho " << cfg.lithologies[k].name << " mean " << mean);
        CHECK(std::abs(mean - cfg.lithologies[k].poro_mean) <= 3.0 * se);
    }
}

TEST_CASE("generated wells: spacing uniform, resistivity positive, tops at transitions") {
    synth_config cfg = default_synth_config();
    cfg.n_wells = 5;
    auto wells = generate_corpus(cfg);
    for (const auto& w : wells) {
        for (std::size_t i = 1; i < w.n(); ++i)
            CHECK(w.depths[i] - w.depths[i - 1] == Catch::Approx(cfg.sample_spacing));
        const auto* rt = w.find_curve(curve_kind::rt);
        REQUIRE(rt != nullptr);
        for (double v : rt->values) CHECK(v > 0.0);
        std::size_t transitions = 1;
        for (std::size_t i = 1; i < w.n(); ++i)
            if (w.litho_labels[i] != w.litho_labels[i - 1]) ++transitions;
        CHECK(w.layer_tops.size() == transitions);
    }
}

TEST_CASE("corpus write + manifest read agree") {
    synth_config cfg = default_synth_config();
    cfg.n_wells = 5;
    cfg.well_length_min = cfg.well_length_max = 20.0;
    auto wells = generate_corpus(cfg);
    const fs::path dir = fs::temp_directory_path() / "wlfm_corpus_test";
    fs::remove_all(dir);
    well_split sp = split_wells({"W0000", "W0001", "W0002", "W0003", "W0004"}, {0.6, 0.2, 0.2}, 9);
    const fs::path manifest = write_corpus(wells, dir, &sp);
    auto entries = read_manifest(manifest);
    REQUIRE(entries.size() == 5);
    std::size_t train_n = 0;
    for (const auto& e : entries) {
        CHECK(fs::exists(e.path));
        well_log w = load_well(e.path, e.well_id);
        CHECK(w.n() == wells[0].n());
        if (e.split == "train") ++train_n;
    }
    CHECK(train_n == 3);
    fs::remove_all(dir);
}
