#include <doctest.h>

#include "wrsim/ensembles.hpp"

using namespace wrsim;

namespace {

Cell C(int x, int y) { return Cell{x, y, 0, 0}; }

// Raw oracle: P(admissible with a type-i collar) / P(every region cell holds type i only), sampled
// straight from the Poisson field without any cell bookkeeping.
std::pair<double, double> raw_xi(const Box& box, int i, const ModelParams& p, long n, uint64_t seed) {
    CounterRng rng(seed, 0xabc);
    long ok = 0;
    for (long s = 0; s < n; ++s) {
        auto bc = make_type_boundary(box, i, p.z, rng, p);
        auto inner = sample_poisson(box, p.z, p.q, rng);
        auto all = bc.particles;
        for (int t = 1; t <= p.q; ++t)
            for (size_t k = 0; k < inner.count(t); ++k) all.add(t, inner.point(t, k));
        ok += is_admissible(all, p);
    }
    double f = static_cast<double>(ok) / static_cast<double>(n);
    double one = (1 - std::exp(-p.z)) * std::exp(-(p.q - 1) * p.z);
    double norm = std::pow(one, -static_cast<double>(box.volume()));
    return {f * norm, std::sqrt(f * (1 - f) / static_cast<double>(n)) * norm};
}

}  // namespace

TEST_CASE("all-phase probability matches the per-cell product") {
    for (double z : {0.5, 1.0, 3.0})
        for (int q : {2, 3, 4}) {
            double one = (1 - std::exp(-z)) * std::exp(-(q - 1) * z);
            CHECK(prob_all_phase(1, z, q) == doctest::Approx(one));
            CHECK(log_prob_all_phase(7, z, q) == doctest::Approx(7 * std::log(one)));
        }
    CHECK(log_prob_all_phase(0, 2, 3) == 0);
}

TEST_CASE("single empty cell weight is v/(1-v)") {
    auto p = ModelParams::uniform(2, 2, 1.0, "21");
    CellField f(Box::cube(2, 11, 0), 1, 1);
    f.set(C(5, 5), 0);
    auto col = extract_contours(f);
    REQUIRE(col.contours.size() == 1);
    auto w = estimate_contour_weight(col.contours[0], p, Budget{});
    double expect = p.v() / (1 - p.v());
    CHECK(w.method == "exact");
    CHECK(w.mean == doctest::Approx(expect));
    CHECK(w.log_mean == doctest::Approx(std::log(expect)));
    CHECK(w.log_bracket_hi == doctest::Approx(std::log(expect)));

    CellField target(Box::cube(2, 1, 0), 0);
    auto direct = direct_field_weight(target, 1, p, Budget{200000, 3});
    CHECK(std::abs(direct.mean - expect) < 4 * direct.stderr_);
}

TEST_CASE("contour weight stays inside its bracket") {
    auto p = ModelParams::uniform(2, 2, 1.0, "1.3");
    CellField f(Box::cube(2, 11, 0), 1, 1);
    f.set(C(5, 5), 0);
    f.set(C(6, 5), 2);
    auto col = extract_contours(f);
    REQUIRE(col.contours.size() == 1);
    auto w = estimate_contour_weight(col.contours[0], p, Budget{20000, 9});
    CHECK(w.method == "monte-carlo");
    CHECK(w.log_mean <= w.log_bracket_hi + 1e-12);
    CHECK(w.log_mean >= w.log_bracket_lo - 1e-12);
    CHECK(w.mean > 0);
    CHECK(w.mean < std::exp(w.log_bracket_hi));
}

TEST_CASE("contour weight is translation invariant") {
    auto p = ModelParams::uniform(2, 2, 2.0, "21");
    CellField a(Box::cube(2, 11, 0), 1, 1), b(Box::cube(2, 11, 0), 1, 1);
    a.set(C(3, 3), 0);
    a.set(C(4, 3), 0);
    b.set(C(6, 7), 0);
    b.set(C(7, 7), 0);
    auto wa = estimate_contour_weight(extract_contours(a).contours.at(0), p, Budget{});
    auto wb = estimate_contour_weight(extract_contours(b).contours.at(0), p, Budget{});
    CHECK(wa.log_mean == wb.log_mean);
}

TEST_CASE("unbounded contours have no weight") {
    auto p = ModelParams::uniform(2, 2, 1.0, "21");
    CellField f(Box::cube(2, 6, 0), 1);
    f.set(C(0, 0), 0);
    auto col = extract_contours(f);
    REQUIRE(col.contours.size() == 1);
    CHECK_THROWS_WITH_AS(estimate_contour_weight(col.contours[0], p, Budget{}), doctest::Contains("UnboundedContour"),
                         Error);
}

TEST_CASE("micro partition function in the blocked regime is (1-v)^{-|region|}") {
    // Any type-2 particle in a 1x2 region meets the type-1 collar, so only {0,1} fields count.
    auto p = ModelParams::uniform(2, 2, 1.5, "10");
    Box b = Box::cube(2, 1, 0);
    b.hi[0] = 1;
    auto xi = micro_partition_function(b, 1, p, PartitionOptions{});
    CHECK(xi.method == "closed-form");
    CHECK(xi.log_mean == doctest::Approx(-2 * std::log1p(-p.v())));
}

TEST_CASE("micro partition function agrees with raw sampling") {
    auto p = ModelParams::uniform(2, 2, 0.8, "1.6");
    Box b = Box::cube(2, 1, 0);
    b.hi[0] = 1;
    PartitionOptions opt;
    opt.samples = 20000;
    auto xi = micro_partition_function(b, 1, p, opt);
    auto [raw, err] = raw_xi(b, 1, p, 200000, 4);
    CHECK(std::abs(xi.mean - raw) < 4 * std::sqrt(err * err + xi.stderr_ * xi.stderr_));
}

TEST_CASE("symmetric types give identical partition functions") {
    auto p = ModelParams::uniform(2, 2, 0.8, "1.6");
    Box b = Box::cube(2, 2, 0);
    PartitionOptions opt;
    opt.samples = 2000;
    auto a = micro_partition_function(b, 1, p, opt);
    auto c = micro_partition_function(b, 2, p, opt);
    CHECK(a.log_mean == c.log_mean);
    CHECK(micro_partition_function(Box::cube(2, 0, 0), 1, p, opt).log_mean == 0);
}

TEST_CASE("collar and reduction") {
    std::vector<CellKey> one{encode(C(0, 0), 2)};
    CHECK(collar_of(one, 2, 2).size() == 24);
    auto box = box_cells(Box::cube(2, 9, 0));
    CHECK(reduced(box, 2, 3).size() == 9);
    CHECK(reduced(one, 2, 1).empty());
}

TEST_CASE("renormalized weights and the Peierls product") {
    auto p = ModelParams::uniform(2, 2, 2.0, "21");
    CellField f(Box::cube(2, 30, 0), 1, 1);
    f.set(C(4, 4), 0);
    f.set(C(20, 20), 0);
    auto col = extract_contours(f);
    REQUIRE(col.contours.size() == 2);
    double sum = 0;
    for (const auto& g : col.contours) {
        auto w = estimate_contour_weight(g, p, Budget{});
        CHECK(renormalized_weight(g, p, Budget{}).log_mean == w.log_mean);
        sum += w.log_mean;
    }
    auto pb = peierls_bound(col, p, Budget{});
    CHECK(pb.log_mean == doctest::Approx(sum));
    CHECK(pb.method == "exact");

    // a type-1 core inside an empty ring carries no interior factor
    CellField r(Box::cube(2, 21, 0), 1, 1);
    for (const auto& o : cube_offsets(2, 5, false))
        if (std::max(std::abs(o[0]), std::abs(o[1])) == 5) r.set(add(C(10, 10), o, 2), 0);
    auto rc = extract_contours(r);
    REQUIRE(rc.contours.size() == 1);
    CHECK(renormalized_weight(rc.contours[0], p, Budget{}).log_mean ==
          estimate_contour_weight(rc.contours[0], p, Budget{}).log_mean);
}

TEST_CASE("boundary layer weight") {
    auto p = ModelParams::uniform(2, 2, 2.0, "21");
    CellField f(Box::cube(2, 10, 0), 1, 1);
    auto empty = boundary_layer(f, f.domain, {1, 2}, p.small_threshold());
    auto lw = boundary_layer_weight(empty, p, 1, Budget{});
    CHECK(lw.w.log_mean == 0);
    CHECK(lw.W.log_mean == 0);
    CHECK(lw.a == 0);

    Box box = Box::cube(2, 12, 0);
    CellField u(box, 1, 2);
    for (size_t k = 0; k < box.volume(); ++k) {
        Cell c = box.cell(k);
        if (std::min({c[0], c[1], 11 - c[0], 11 - c[1]}) < 2) u.set(c, 0);
    }
    auto layer = boundary_layer(u, box, {1}, 1);
    REQUIRE_FALSE(layer.empty());
    // the two-cell band keeps type 2 and type 1 cells more than 1.5 apart
    auto near = ModelParams::uniform(2, 2, 2.0, "1.5");
    auto lw2 = boundary_layer_weight(layer, near, 1, Budget{2000, 1});
    CHECK(std::isfinite(lw2.w.log_mean));
    CHECK(lw2.w.log_mean < 0);
    CHECK(lw2.a > 0);
    CHECK(lw2.W.log_mean == doctest::Approx(lw2.w.log_mean));
}
