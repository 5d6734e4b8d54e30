#include <doctest.h>

#include <random>

#include "wrsim/lattice.hpp"

using namespace wrsim;

namespace {

Cell C(int x, int y) { return Cell{x, y, 0, 0}; }

void paint(CellField& f, const Cell& c, int r, int t) {
    for (const auto& o : cube_offsets(2, r, false)) {
        Cell x = add(c, o, 2);
        if (f.domain.contains(x)) f.set(x, t);
    }
}

// Random field on a box with exterior type 1: non-overlapping square blobs inside the box, each an empty ring around a
// core of type 1 or 2, sometimes with a nested ring and core of the other type.
CellField random_fixture(std::mt19937_64& g, int side = 20) {
    CellField f(Box::cube(2, side, 0), 1, 1);
    std::vector<std::pair<Cell, int>> blobs;
    int k = static_cast<int>(g() % 5);
    for (int b = 0; b < k; ++b) {
        int r = 1 + static_cast<int>(g() % 4);
        auto span = static_cast<unsigned>(side - 2 * r - 2);
        Cell c = C(r + 1 + static_cast<int>(g() % span), r + 1 + static_cast<int>(g() % span));
        bool clash = false;
        for (const auto& [o, ro] : blobs) clash = clash || chebyshev(o, c, 2) <= r + ro + 3;
        if (clash) continue;
        blobs.push_back({c, r});
        int core = 1 + static_cast<int>(g() % 2);
        paint(f, c, r + 1, 0);
        paint(f, c, r, core);
        if (r >= 3 && g() % 3 == 0) {
            paint(f, c, r - 2, 0);
            if (r - 3 >= 0) paint(f, c, r - 3, 3 - core);
        }
        if (g() % 4 == 0) f.set(c, 0);
    }
    return f;
}

bool is_small_ok(const Contour& g) {
    // 5^{-d} |B| <= |O| < |B|
    return 25 * g.empty_count() >= g.volume() && g.empty_count() < g.volume();
}

}  // namespace

TEST_CASE("cell field from particles") {
    ParticleConfiguration c(2, 2, Box::cube(2, 3, 0));
    auto e = cell_field(c, Box::cube(2, 3, 0));
    CHECK(std::all_of(e.values.begin(), e.values.end(), [](int8_t v) { return v == 0; }));
    Box b = Box::cube(2, 3, 0);
    for (size_t k = 0; k < b.volume(); ++k) {
        Cell x = b.cell(k);
        double p[2] = {x[0] + 0.2, x[1] - 0.3};
        c.add(2, p);
    }
    auto f = cell_field(c, b);
    CHECK(std::all_of(f.values.begin(), f.values.end(), [](int8_t v) { return v == 2; }));
    double p[2] = {0.1, 0.1};
    c.add(1, p);
    CHECK_THROWS_WITH_AS(cell_field(c, b), doctest::Contains("MixedCell"), Error);
}

TEST_CASE("phase map rules") {
    CellField f(Box::cube(2, 11, 0), 1, 1);
    auto pm = phase_map(f);
    for (size_t k = 0; k < pm.phase.size(); ++k) CHECK(pm.phase[k] == 1);
    f.set(C(5, 5), 0);
    pm = phase_map(f);
    size_t off = 0;
    for (size_t k = 0; k < pm.window.volume(); ++k) {
        Cell c = pm.window.cell(k);
        bool near = chebyshev(c, C(5, 5), 2) <= 2;
        CHECK((pm.phase[k] == 0) == near);
        off += pm.phase[k] == 0;
    }
    CHECK(off == 25);
    CellField g(Box::cube(2, 11, 0), 1, 1);
    g.set(C(5, 5), 2);
    pm = phase_map(g);
    CHECK(pm.at(C(5, 5)) == 0);
    CHECK(pm.at(C(4, 5)) == 0);
    CHECK(pm.at(C(3, 3)) == 0);
    CHECK(pm.at(C(2, 5)) == 1);
}

TEST_CASE("in-domain phase variant") {
    CellField f(Box::cube(2, 4, 0), 2);
    auto pm = phase_map(f);
    for (size_t k = 0; k < pm.phase.size(); ++k) CHECK(pm.phase[k] == 2);
    CHECK(extract_contours(f).contours.empty());
}

TEST_CASE("single empty cell contour") {
    CellField f(Box::cube(2, 11, 0), 1, 1);
    CHECK(extract_contours(f).contours.empty());
    f.set(C(5, 5), 0);
    auto col = extract_contours(f, 10);
    REQUIRE(col.contours.size() == 1);
    const auto& g = col.contours[0];
    CHECK(g.volume() == 25);
    CHECK(g.empty_count() == 1);
    CHECK(g.external_type == 1);
    CHECK(g.interiors.empty());
    CHECK(g.small);
    CHECK_FALSE(g.separating);
    CHECK(g.external);
}

TEST_CASE("separating contour with an interior") {
    CellField f(Box::cube(2, 21, 0), 1, 1);
    paint(f, C(10, 10), 6, 0);
    paint(f, C(10, 10), 5, 2);
    auto col = extract_contours(f, 5);
    REQUIRE(col.contours.size() == 1);
    const auto& g = col.contours[0];
    CHECK(g.separating);
    REQUIRE(g.interiors.size() == 1);
    CHECK(g.interiors[0].type == 2);
    CHECK(g.interior_diameter() == 7);  // side 11 core minus two layers on each side
    CHECK_FALSE(g.small);
    CHECK(g.external_type == 1);
}

TEST_CASE("unbounded contours without an exterior type") {
    CellField f(Box::cube(2, 10, 0), 1);
    f.set(C(0, 4), 0);
    auto col = extract_contours(f);
    REQUIRE(col.contours.size() == 1);
    CHECK(col.contours[0].unbounded);
    CHECK(col.unbounded.size() == 1);
    CHECK_THROWS_WITH_AS(reconstruct_field(col), doctest::Contains("IncompatibleCollection"), Error);
}

TEST_CASE("compatibility violations") {
    CellField f(Box::cube(2, 11, 0), 1, 1);
    f.set(C(5, 5), 0);
    auto col = extract_contours(f);
    CHECK(check_compatibility(col).ok);
    auto twice = col;
    twice.contours.push_back(col.contours[0]);
    auto rep = check_compatibility(twice);
    CHECK_FALSE(rep.ok);
    CHECK(rep.violations.front().clause == "disjoint");

    CellField n(Box::cube(2, 25, 0), 1, 1);
    paint(n, C(12, 12), 9, 0);
    paint(n, C(12, 12), 8, 2);
    n.set(C(12, 12), 0);
    auto nested = extract_contours(n);
    REQUIRE(nested.contours.size() == 2);
    CHECK(check_compatibility(nested).ok);
    for (auto& g : nested.contours)
        if (g.interiors.empty()) g.external_type = 1;
    rep = check_compatibility(nested);
    CHECK_FALSE(rep.ok);
    CHECK(rep.violations.front().clause == "nesting-type");

    auto ext = col;
    ext.contours[0].external_type = 2;
    CHECK(check_compatibility(ext).violations.front().clause == "external-type");
    CHECK_THROWS_WITH_AS(reconstruct_field(ext), doctest::Contains("IncompatibleCollection"), Error);
}

TEST_CASE("reconstruct an empty collection") {
    ContourCollection col;
    col.d = 2;
    col.ambient = Box::cube(2, 4, 0);
    col.exterior_type = 3;
    auto f = reconstruct_field(col);
    CHECK(std::all_of(f.values.begin(), f.values.end(), [](int8_t v) { return v == 3; }));
}

TEST_CASE("property: random fixtures extract, check and reconstruct") {
    std::mt19937_64 g(123);
    for (int rep = 0; rep < 300; ++rep) {
        auto f = random_fixture(g);
        auto col = extract_contours(f);
        CHECK(check_compatibility(col).ok);
        for (const auto& c : col.contours) {
            CHECK(is_small_ok(c));
            // every 5-cube centred at a base cell meets an empty cell
            for (CellKey k : c.base) {
                bool has = false;
                for (const auto& o : cube_offsets(2, 2, false)) has = has || f.at(add(decode(k, 2), o, 2)) == 0;
                CHECK(has);
            }
        }
        auto back = reconstruct_field(col);
        CHECK(back == f);
        CHECK(extract_contours(back) == col);
    }
}

TEST_CASE("property: translation and relabeling equivariance") {
    std::mt19937_64 g(5);
    for (int rep = 0; rep < 50; ++rep) {
        auto f = random_fixture(g, 16);
        CellField s = f;
        for (int k = 0; k < 2; ++k) {
            s.domain.lo[static_cast<size_t>(k)] += 7;
            s.domain.hi[static_cast<size_t>(k)] += 7;
        }
        auto a = extract_contours(f), b = extract_contours(s);
        REQUIRE(a.contours.size() == b.contours.size());
        std::vector<std::vector<CellKey>> ba, bb;
        for (const auto& c : a.contours) {
            std::vector<CellKey> sh;
            for (CellKey k : c.base) sh.push_back(encode(add(decode(k, 2), C(7, 7), 2), 2));
            ba.push_back(sh);
        }
        for (const auto& c : b.contours) bb.push_back(c.base);
        std::sort(ba.begin(), ba.end());
        std::sort(bb.begin(), bb.end());
        CHECK(ba == bb);

        CellField r = f;
        r.exterior_type = 2;
        for (auto& v : r.values)
            if (v > 0) v = static_cast<int8_t>(3 - v);
        auto c = extract_contours(r);
        REQUIRE(c.contours.size() == a.contours.size());
        size_t vol_a = 0, vol_c = 0;
        for (const auto& x : a.contours) vol_a += x.volume();
        for (const auto& x : c.contours) vol_c += x.volume();
        CHECK(vol_a == vol_c);
        for (const auto& x : c.contours) CHECK(x.external_type == 2);
    }
}

TEST_CASE("boundary layer cases") {
    CellField f(Box::cube(2, 12, 0), 1, 1);
    auto layer = boundary_layer(f, f.domain, {1, 2}, 1);
    CHECK(layer.empty());

    // unstable type 3 outside, a two-cell empty band, stable type 1 inside
    Box box = Box::cube(2, 20, 0);
    CellField u(box, 1, 3);
    for (size_t k = 0; k < box.volume(); ++k) {
        Cell c = box.cell(k);
        int edge = std::min({c[0], c[1], 19 - c[0], 19 - c[1]});
        if (edge < 2) u.set(c, 0);
    }
    layer = boundary_layer(u, box, {1}, 1);
    size_t ring = 0;
    for (size_t k = 0; k < box.volume(); ++k) {
        Cell c = box.cell(k);
        int edge = std::min({c[0], c[1], 19 - c[0], 19 - c[1]});
        bool in = std::binary_search(layer.base.begin(), layer.base.end(), encode(c, 2));
        CHECK(in == (edge < 4));
        ring += edge < 4;
    }
    CHECK(layer.base.size() == ring);
    CHECK(layer.members.size() == 1);
    CHECK(layer.components.empty());
    CHECK(layer.large_part.size() == layer.base.size());

    // a small defect deep inside does not change the layer
    CellField w = u;
    w.set(C(10, 10), 0);
    auto again = boundary_layer(w, box, {1}, 1);
    CHECK(again.base == layer.base);
    auto erased = reconstruct_field(again.large);
    CHECK(boundary_layer(erased, box, {1}, 1).base == again.base);
}

TEST_CASE("interface contours") {
    Box box = Box::cube(2, 20, 0);
    CellField f(box, 1, 1);
    CHECK(interface_contours(extract_contours(f), box).empty());
    f.set(C(10, 10), 0);
    CHECK(interface_contours(extract_contours(f), box).empty());
    CellField s(box, 1, 1);
    for (int y = 0; y < 20; ++y) {
        s.set(C(8, y), 0);
        s.set(C(9, y), 2);
        s.set(C(10, y), 2);
        s.set(C(11, y), 0);
    }
    auto col = extract_contours(s);
    auto ic = interface_contours(col, box);
    REQUIRE(ic.size() == 1);
    bool touches = false;
    for (CellKey k : ic[0].base) touches = touches || !box.contains(decode(k, 2));
    CHECK(touches);
}

TEST_CASE("factorize stable pairs") {
    auto p = ModelParams::uniform(2, 2, 1, "21");
    std::vector<int> merge{0, 1, 1};
    ParticleConfiguration c(2, 2, Box::cube(2, 200, 0));
    auto e = factorize(c, merge, p);
    CHECK(e.components == 0);
    CHECK(e.multiplicity == 1);
    double a[2] = {10, 10}, b[2] = {20, 10}, d[2] = {25, 18};
    c.add(1, a);
    c.add(1, b);
    c.add(1, d);
    auto one = factorize(c, merge, p);
    CHECK(one.components == 1);
    CHECK(one.multiplicity == 2);
    double far[2] = {150, 150};
    c.add(1, far);
    auto two = factorize(c, merge, p);
    CHECK(two.components == 2);
    CHECK(two.multiplicity == 4);
    CHECK(two.config.count(2) == 0);

    auto q3 = ModelParams::uniform(2, 3, 1, "42");
    q3.set(1, 2, "21");
    ParticleConfiguration c3(2, 3, Box::cube(2, 200, 0));
    c3.add(1, a);
    c3.add(2, far);
    c3.add(3, d);
    CHECK_THROWS_WITH_AS(factorize(c3, std::vector<int>{0, 1, 2, 1}, q3), doctest::Contains("AsymmetricMerge"), Error);
    auto m = factorize(c3, std::vector<int>{0, 1, 1, 3}, q3);
    CHECK(m.components == 2);
    CHECK(m.config.count(1) == 2);
    CHECK(m.config.count(3) == 1);
}

TEST_CASE("property: factorize components match a BFS oracle") {
    auto p = ModelParams::uniform(2, 2, 1, "21");
    CounterRng rng(31);
    Box b = Box::cube(2, 150, 0);
    for (int rep = 0; rep < 40; ++rep) {
        ParticleConfiguration c(2, 2, b);
        int n = 1 + static_cast<int>(rng.below(30));
        std::vector<std::array<double, 2>> pts;
        for (int k = 0; k < n; ++k) {
            double x[2] = {rng.uniform(0, 149), rng.uniform(0, 149)};
            c.add(1 + static_cast<int>(rng.below(2)), x);
        }
        for (int t = 1; t <= 2; ++t)
            for (size_t k = 0; k < c.count(t); ++k) pts.push_back({c.point(t, k)[0], c.point(t, k)[1]});
        std::vector<int> seen(pts.size(), 0);
        size_t comps = 0;
        for (size_t s = 0; s < pts.size(); ++s) {
            if (seen[s]) continue;
            ++comps;
            std::vector<size_t> q{s};
            seen[s] = 1;
            while (!q.empty()) {
                size_t u = q.back();
                q.pop_back();
                for (size_t v = 0; v < pts.size(); ++v)
                    if (!seen[v] && dist2(pts[u].data(), pts[v].data(), 2) <= 21.0 * 21.0) {
                        seen[v] = 1;
                        q.push_back(v);
                    }
            }
        }
        CHECK(factorize(c, {0, 1, 1}, p).components == comps);
    }
}

TEST_CASE("rle round trip") {
    std::mt19937_64 g(3);
    auto f = random_fixture(g, 13);
    auto back = field_from_rle(field_to_rle(f));
    CHECK(back == f);
    CellField n(Box::cube(2, 5, -2), 0);
    CHECK(field_from_rle(field_to_rle(n)) == n);
}
