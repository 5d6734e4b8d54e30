#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>

#include "wrsim/harness.hpp"

using namespace wrsim;

namespace {

std::string tmp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("wrsim_test_" + name);
    std::filesystem::remove_all(p);
    return p.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ConfigMap small_dominance() {
    return parse_config_text(R"(
[model]
q = 2
z = 4
D = 21
[experiment]
kind = phase-dominance
L = 8, 12
z_grid = 2, 5
chains = 3
[chain]
sweeps = 6
burn_in = 1
[run]
seed = 42
)");
}

}  // namespace

TEST_CASE("config text parsing") {
    auto m = parse_config_text("# comment\n[model]\nq = 3   # types\nz=2.5\n\n[run]\n seed = 7 \n");
    CHECK(m.at("model.q") == "3");
    CHECK(m.at("model.z") == "2.5");
    CHECK(m.at("run.seed") == "7");
    CHECK(m.size() == 3);
    CHECK_THROWS_WITH_AS(parse_config_text("[model]\nq 3\n"), doctest::Contains("ConfigSyntax"), Error);
    CHECK_THROWS_WITH_AS(load_config_file("/nonexistent/wrsim.ini"), doctest::Contains("IOError"), Error);
}

TEST_CASE("environment overrides") {
    ConfigMap m{{"model.z", "1"}};
    std::string a = "WRSIM_MODEL_Z=3", b = "WRSIM_CHAIN_BURN_IN=5", c = "WRSIM_MODEL_D12=21", d = "WRSIM_MODEL_d=3",
                e = "WRSIM_MODEL_D=30", f = "PATH=/bin", g = "WRSIM_NOSECTION=1";
    std::vector<char*> env{a.data(), b.data(), c.data(), d.data(), e.data(), f.data(), g.data(), nullptr};
    apply_env_overrides(m, env.data());
    CHECK(m.at("model.z") == "3");
    CHECK(m.at("chain.burn_in") == "5");
    CHECK(m.at("model.D12") == "21");
    CHECK(m.at("model.d") == "3");
    CHECK(m.at("model.D") == "30");
    CHECK(m.size() == 5);
    apply_env_overrides(m, nullptr);
    CHECK(m.size() == 5);
}

TEST_CASE("make config validates and fills defaults") {
    auto c = make_config({});
    CHECK(c.experiment == "classify");
    CHECK(c.params.q == 2);
    CHECK(c.L == std::vector<int>{20});
    CHECK(c.threads == 1);

    auto m = parse_config_text("[model]\nq = 3\nD = 42\nD12 = 21\n[experiment]\nL = 10,20\nz_grid = 1, 2.5\n");
    c = make_config(m);
    CHECK(c.params.Dx(1, 2) == Rational(21));
    CHECK(c.params.Dx(2, 3) == Rational(42));
    CHECK(c.L == std::vector<int>{10, 20});
    CHECK(c.z_grid == std::vector<double>{1, 2.5});

    CHECK_THROWS_WITH_AS(make_config({{"experiment.kind", "nope"}}), doctest::Contains("ConfigValue"), Error);
    CHECK_THROWS_WITH_AS(make_config({{"model.z", "abc"}}), doctest::Contains("ConfigValue"), Error);
    CHECK_THROWS_WITH_AS(make_config({{"model.D13", "30"}}), doctest::Contains("ConfigValue"), Error);
    CHECK_THROWS_WITH_AS(make_config({{"experiment.boundary", "5"}}), doctest::Contains("ConfigValue"), Error);
    CHECK_THROWS_WITH_AS(make_config({{"experiment.L", "0"}}), doctest::Contains("ConfigValue"), Error);
    CHECK_THROWS_WITH_AS(make_config({{"experiment.L", "10, x"}}), doctest::Contains("ConfigValue"), Error);
    CHECK_THROWS_WITH_AS(make_config({{"experiment.z_grid", "1, 2q"}}), doctest::Contains("ConfigValue"), Error);
    CHECK_THROWS_AS(make_config({{"model.q", "3"}, {"model.D12", "20"}, {"model.D13", "20"}, {"model.D23", "60"}}),
                    TriangleViolation);
}

TEST_CASE("config hash ignores threads and output only") {
    auto base = small_dominance();
    auto h = make_config(base).hash();
    auto t = base;
    t["run.threads"] = "4";
    CHECK(make_config(t).hash() == h);
    auto s = base;
    s["run.seed"] = "43";
    CHECK(make_config(s).hash() != h);
}

TEST_CASE("record round trip and header-only output") {
    RunRecord empty;
    empty.config_hash = "abc";
    empty.experiment = "classify";
    auto text = observables_jsonl(empty);
    CHECK(std::count(text.begin(), text.end(), '\n') == 1);

    RunRecord r;
    r.config_hash = "ff01";
    r.experiment = "phase-dominance";
    r.rng = {{"algorithm", "x"}, {"seed", 3}};
    r.series.push_back({"central_phase_fraction", {{"L", 10}, {"z", 2}}, 0.5, 0.1, 4});
    r.estimates["k"] = 1.5;
    r.wall_clock = 2.25;
    auto back = parse_record(record_jsonl(r));
    CHECK(back.config_hash == r.config_hash);
    CHECK(back.experiment == r.experiment);
    CHECK(back.rng == r.rng);
    REQUIRE(back.series.size() == 1);
    CHECK(back.series[0].at == r.series[0].at);
    CHECK(back.series[0].mean == 0.5);
    CHECK(back.series[0].n == 4);
    CHECK(back.estimates == r.estimates);
    CHECK(back.wall_clock == 2.25);
    CHECK(observables_jsonl(back) == observables_jsonl(r));
    CHECK_THROWS_WITH_AS(parse_record("{\"kind\":\"other\"}\n"), doctest::Contains("ParseError"), Error);
}

TEST_CASE("classify-only run") {
    auto c = make_config(parse_config_text("[model]\nq = 3\nD = 42\nD12 = 21\n"));
    auto r = run_experiment(c);
    CHECK(r.series.empty());
    CHECK(r.estimates["stability"]["stable"] == nlohmann::json({1, 2}));
    CHECK(r.estimates["prediction"]["case"] == "IIa");
}

TEST_CASE("runs are reproducible and independent of the thread count") {
    auto m = small_dominance();
    auto one = run_experiment(make_config(m));
    m["run.threads"] = "3";
    auto three = run_experiment(make_config(m));
    CHECK(observables_jsonl(one) == observables_jsonl(three));
    CHECK(one.series.size() == 4);
    m["run.seed"] = "7";
    CHECK(observables_jsonl(run_experiment(make_config(m))) != observables_jsonl(one));
}

TEST_CASE("report files") {
    auto dir = tmp_dir("report");
    auto m = small_dominance();
    m["output.dir"] = dir;
    auto c = make_config(m);
    auto r = run_experiment(c);
    emit_report(r, c.out_dir);
    CHECK(slurp(dir + "/observables.jsonl") == observables_jsonl(r));
    CHECK(parse_record(slurp(dir + "/record.jsonl")).series.size() == r.series.size());
    CHECK(slurp(dir + "/summary.txt").find("central_phase_fraction") != std::string::npos);

    m["experiment.kind"] = "contours";
    m["experiment.L"] = "10";
    auto cs = make_config(m);
    auto rs = run_experiment(cs);
    CHECK(std::filesystem::exists(dir + "/snapshot.bin"));
    auto field = field_from_rle(slurp(dir + "/field.rle"));
    CHECK(field.domain.volume() == 100);
    for (const auto& o : rs.series)
        if (o.name == "compatible" || o.name == "admissible") CHECK(o.mean == 1.0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("parallel_for covers every job and rethrows") {
    std::vector<int> hit(17, 0);
    parallel_for(17, 4, [&](int k) { hit[static_cast<size_t>(k)] += 1; });
    CHECK(std::all_of(hit.begin(), hit.end(), [](int h) { return h == 1; }));
    CHECK_THROWS_AS(parallel_for(5, 2, [](int k) {
                        if (k == 3) throw std::runtime_error("boom");
                    }),
                    std::runtime_error);
}

TEST_CASE("central label takes a strict majority") {
    CellField f(Box::cube(2, 12, 0), 1, 1);
    Box central = f.domain.central(0.5);
    CHECK(central_label(phase_map(f), central, 2) == 1);
    for (size_t k = 0; k < f.domain.volume(); ++k)
        if (f.domain.cell(k)[0] < 6) f.values[k] = 2;
    CHECK(central_label(phase_map(f), central, 2) == 0);
    CHECK(phase_fraction(phase_map(f), central, 1) < 0.5);
}
