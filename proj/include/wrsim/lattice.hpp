#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "model.hpp"
#include "sampler.hpp"

namespace wrsim {

// Types attached to the cells of `domain`; cells outside take `exterior_type` when it is set.
struct CellField {
    Box domain;
    std::vector<int8_t> values;
    std::optional<int> exterior_type;

    CellField() = default;
    CellField(const Box& box, int fill, std::optional<int> ext = std::nullopt)
        : domain(box), values(box.volume(), static_cast<int8_t>(fill)), exterior_type(ext) {}

    // Type at c, or -1 outside the domain without an exterior type.
    int at(const Cell& c) const {
        if (domain.contains(c)) return values[domain.index(c)];
        return exterior_type ? *exterior_type : -1;
    }
    void set(const Cell& c, int t) { values[domain.index(c)] = static_cast<int8_t>(t); }
    bool operator==(const CellField& o) const {
        return domain == o.domain && values == o.values && exterior_type == o.exterior_type;
    }
};

inline CellField cell_field(const ParticleConfiguration& c, const Box& box, std::optional<int> ext = std::nullopt) {
    CellField f(box, 0, ext);
    for (int t = 1; t <= c.q; ++t)
        for (size_t k = 0; k < c.count(t); ++k) {
            Cell cell = cell_of(c.point(t, k), c.d);
            if (!box.contains(cell)) continue;
            auto& v = f.values[box.index(cell)];
            if (v != 0 && v != t) raise("MixedCell", "a cell holds two particle types");
            v = static_cast<int8_t>(t);
        }
    return f;
}

// Phase labels on a window: 0 = not in phase, t = in phase t.
struct PhaseMap {
    Box window;
    std::vector<int8_t> phase;
    int at(const Cell& c) const { return phase[window.index(c)]; }
};

// With an exterior type the window extends three cells past the domain, far enough that every
// cell outside it is in the exterior phase. Without one, the 5^d cube is intersected with the domain.
inline PhaseMap phase_map(const CellField& f) {
    PhaseMap pm;
    int d = f.domain.d;
    pm.window = f.exterior_type ? f.domain.expanded(3) : f.domain;
    pm.phase.assign(pm.window.volume(), 0);
    auto cube = cube_offsets(d, 2, true);
    for (size_t idx = 0; idx < pm.window.volume(); ++idx) {
        Cell c = pm.window.cell(idx);
        int t = f.at(c);
        if (t <= 0) continue;
        bool ok = true;
        for (const auto& o : cube) {
            int u = f.at(add(c, o, d));
            if (u >= 0 && u != t) {
                ok = false;
                break;
            }
        }
        if (ok) pm.phase[idx] = static_cast<int8_t>(t);
    }
    return pm;
}

struct Region {
    std::vector<CellKey> cells;  // sorted
    int type = 0;
    bool operator==(const Region& o) const { return cells == o.cells && type == o.type; }
    bool contains(CellKey k) const { return std::binary_search(cells.begin(), cells.end(), k); }
};

struct Contour {
    int d = 2;
    std::vector<CellKey> base;  // sorted
    std::vector<int8_t> types;  // aligned with base
    int external_type = 0;
    std::vector<Region> interiors;
    bool small = true;
    bool separating = false;
    bool unbounded = false;
    bool external = true;

    size_t volume() const { return base.size(); }
    size_t empty_count() const { return static_cast<size_t>(std::count(types.begin(), types.end(), 0)); }
    std::vector<CellKey> empty_cells() const {
        std::vector<CellKey> out;
        for (size_t k = 0; k < base.size(); ++k)
            if (types[k] == 0) out.push_back(base[k]);
        return out;
    }
    bool in_base(CellKey k) const { return std::binary_search(base.begin(), base.end(), k); }
    int type_at(CellKey k) const {
        auto it = std::lower_bound(base.begin(), base.end(), k);
        return it != base.end() && *it == k ? types[static_cast<size_t>(it - base.begin())] : -1;
    }
    // Index of the interior component holding k, or -1.
    int interior_of(CellKey k) const {
        for (size_t s = 0; s < interiors.size(); ++s)
            if (interiors[s].contains(k)) return static_cast<int>(s);
        return -1;
    }
    size_t interior_volume() const {
        size_t n = 0;
        for (const auto& r : interiors) n += r.cells.size();
        return n;
    }
    // Chebyshev diameter of the union of interior cubes (0 when there is no interior).
    int interior_diameter() const {
        int best = 0;
        for (int k = 0; k < d; ++k) {
            int lo = INT32_MAX, hi = INT32_MIN;
            for (const auto& r : interiors)
                for (CellKey key : r.cells) {
                    int v = decode(key, d)[static_cast<size_t>(k)];
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
            if (lo <= hi) best = std::max(best, hi - lo + 1);
        }
        return best;
    }
    bool operator==(const Contour& o) const {
        return base == o.base && types == o.types && external_type == o.external_type && interiors == o.interiors;
    }
};

struct ContourCollection {
    int d = 2;
    Box ambient;
    std::optional<int> exterior_type;
    std::vector<Contour> contours;
    std::vector<size_t> unbounded;  // indices of contours touching the domain edge without an exterior type

    bool operator==(const ContourCollection& o) const {
        if (contours.size() != o.contours.size()) return false;
        auto key = [](const Contour& c) { return c.base.empty() ? CellKey(0) : c.base.front(); };
        std::vector<const Contour*> a, b;
        for (const auto& c : contours) a.push_back(&c);
        for (const auto& c : o.contours) b.push_back(&c);
        auto cmp = [&](const Contour* x, const Contour* y) { return key(*x) < key(*y); };
        std::sort(a.begin(), a.end(), cmp);
        std::sort(b.begin(), b.end(), cmp);
        for (size_t k = 0; k < a.size(); ++k)
            if (!(*a[k] == *b[k])) return false;
        return true;
    }
};

namespace detail {

// Face-connected components of the cells of `win` accepted by `free_cell`; `border` marks
// components that touch the window edge.
struct Labels {
    std::vector<int> label;  // -1 for rejected cells
    std::vector<bool> border;
    int count = 0;
};

template <class Accept>
Labels face_components(const Box& win, Accept&& free_cell) {
    int d = win.d;
    Labels L;
    L.label.assign(win.volume(), -2);
    auto faces = face_offsets(d);
    std::vector<size_t> stack;
    for (size_t idx = 0; idx < win.volume(); ++idx) {
        if (L.label[idx] != -2) continue;
        Cell c = win.cell(idx);
        if (!free_cell(c)) {
            L.label[idx] = -1;
            continue;
        }
        int id = L.count++;
        L.border.push_back(false);
        L.label[idx] = id;
        stack.push_back(idx);
        while (!stack.empty()) {
            size_t cur = stack.back();
            stack.pop_back();
            Cell cc = win.cell(cur);
            for (const auto& o : faces) {
                Cell n = add(cc, o, d);
                if (!win.contains(n)) {
                    L.border[static_cast<size_t>(id)] = true;
                    continue;
                }
                size_t ni = win.index(n);
                if (L.label[ni] != -2) continue;
                if (!free_cell(n)) {
                    L.label[ni] = -1;
                    continue;
                }
                L.label[ni] = id;
                stack.push_back(ni);
            }
        }
    }
    return L;
}

inline Box bounding_box(const std::vector<CellKey>& cells, int d) {
    Box b;
    b.d = d;
    for (int k = 0; k < d; ++k) {
        b.lo[static_cast<size_t>(k)] = INT32_MAX;
        b.hi[static_cast<size_t>(k)] = INT32_MIN;
    }
    for (CellKey key : cells) {
        Cell c = decode(key, d);
        for (int k = 0; k < d; ++k) {
            auto u = static_cast<size_t>(k);
            b.lo[u] = std::min(b.lo[u], c[u]);
            b.hi[u] = std::max(b.hi[u], c[u]);
        }
    }
    return b;
}

// Fills exterior type and interiors of a contour whose base and types are set.
// `type_of` returns the field type at a cell (or -1 when unknown).
template <class TypeOf>
void fill_regions(Contour& g, TypeOf&& type_of, bool strict) {
    int d = g.d;
    Box win = bounding_box(g.base, d).expanded(1);
    auto L = face_components(win, [&](const Cell& c) { return !g.in_base(encode(c, d)); });
    auto cheb = cube_offsets(d, 1, true);
    std::vector<std::set<int>> adj_types(static_cast<size_t>(L.count));
    for (CellKey key : g.base) {
        Cell c = decode(key, d);
        for (const auto& o : cheb) {
            Cell n = add(c, o, d);
            int lab = L.label[win.index(n)];
            if (lab < 0) continue;
            int t = type_of(n);
            if (t >= 0) adj_types[static_cast<size_t>(lab)].insert(t);
        }
    }
    std::set<int> ext;
    std::vector<int> interior_ids(static_cast<size_t>(L.count), -1);
    for (int lab = 0; lab < L.count; ++lab) {
        auto u = static_cast<size_t>(lab);
        if (L.border[u]) {
            ext.insert(adj_types[u].begin(), adj_types[u].end());
        } else {
            interior_ids[u] = static_cast<int>(g.interiors.size());
            Region r;
            if (adj_types[u].size() == 1) r.type = *adj_types[u].begin();
            else if (strict) raise("ContourInvariant", "interior adjacent to several types");
            g.interiors.push_back(r);
        }
    }
    for (size_t idx = 0; idx < win.volume(); ++idx) {
        int lab = L.label[idx];
        if (lab >= 0 && interior_ids[static_cast<size_t>(lab)] >= 0)
            g.interiors[static_cast<size_t>(interior_ids[static_cast<size_t>(lab)])].cells.push_back(encode(win.cell(idx), d));
    }
    for (auto& r : g.interiors) std::sort(r.cells.begin(), r.cells.end());
    std::sort(g.interiors.begin(), g.interiors.end(),
              [](const Region& a, const Region& b) { return a.cells.front() < b.cells.front(); });
    if (ext.size() == 1) g.external_type = *ext.begin();
    else if (strict) raise("ContourInvariant", "exterior adjacent to several types");
    else g.external_type = 0;
}

}  // namespace detail

// Connected components (Chebyshev adjacency) of the cells not in any phase, with their regions and flags.
// Contours whose interior diameter reaches `threshold` are flagged large.
inline ContourCollection extract_contours(const CellField& f, double threshold = INFINITY) {
    int d = f.domain.d;
    PhaseMap pm = phase_map(f);
    const Box& win = pm.window;
    ContourCollection out;
    out.d = d;
    out.ambient = f.domain;
    out.exterior_type = f.exterior_type;
    std::vector<int> comp(win.volume(), -1);
    auto cheb = cube_offsets(d, 1, true);
    std::vector<size_t> stack;
    for (size_t idx = 0; idx < win.volume(); ++idx) {
        if (pm.phase[idx] != 0 || comp[idx] >= 0) continue;
        Contour g;
        g.d = d;
        int id = static_cast<int>(out.contours.size());
        comp[idx] = id;
        stack.push_back(idx);
        while (!stack.empty()) {
            size_t cur = stack.back();
            stack.pop_back();
            Cell c = win.cell(cur);
            g.base.push_back(encode(c, d));
            for (const auto& o : cheb) {
                Cell n = add(c, o, d);
                if (!win.contains(n)) {
                    g.unbounded = true;
                    continue;
                }
                size_t ni = win.index(n);
                if (pm.phase[ni] != 0 || comp[ni] >= 0) continue;
                comp[ni] = id;
                stack.push_back(ni);
            }
        }
        std::sort(g.base.begin(), g.base.end());
        std::set<int> nonzero;
        for (CellKey key : g.base) {
            int t = f.at(decode(key, d));
            g.types.push_back(static_cast<int8_t>(t));
            if (t > 0) nonzero.insert(t);
        }
        g.separating = nonzero.size() >= 2;
        bool bounded = f.exterior_type.has_value();
        detail::fill_regions(g, [&](const Cell& c) { return f.at(c); }, bounded && !g.unbounded);
        g.small = g.interior_diameter() < threshold;
        if (g.unbounded) out.unbounded.push_back(out.contours.size());
        out.contours.push_back(std::move(g));
    }
    // A contour is external unless its base lies in another contour's interior.
    std::vector<int> depth(win.volume(), 0);
    for (const auto& g : out.contours)
        for (const auto& r : g.interiors)
            for (CellKey key : r.cells) {
                Cell c = decode(key, d);
                if (win.contains(c)) ++depth[win.index(c)];
            }
    for (auto& g : out.contours) g.external = depth[win.index(decode(g.base.front(), d))] == 0;
    return out;
}

struct Violation {
    std::string clause;  // "disjoint", "external-type" or "nesting-type"
    int i = -1, j = -1;
};

struct CompatibilityReport {
    bool ok = true;
    std::vector<Violation> violations;
};

namespace detail {

// Innermost enclosing (contour, interior component) per contour, or (-1, -1) at top level.
inline std::vector<std::pair<int, int>> parents(const ContourCollection& col) {
    size_t n = col.contours.size();
    std::vector<std::pair<int, int>> par(n, {-1, -1});
    for (size_t c = 0; c < n; ++c) {
        if (col.contours[c].base.empty()) continue;
        CellKey k = col.contours[c].base.front();
        size_t best = SIZE_MAX;
        for (size_t p = 0; p < n; ++p) {
            if (p == c) continue;
            int s = col.contours[p].interior_of(k);
            if (s < 0) continue;
            size_t sz = col.contours[p].interiors[static_cast<size_t>(s)].cells.size();
            if (sz < best) {
                best = sz;
                par[c] = {static_cast<int>(p), s};
            }
        }
    }
    return par;
}

inline std::vector<int> depths(const std::vector<std::pair<int, int>>& par) {
    std::vector<int> dep(par.size(), -1);
    for (size_t c = 0; c < par.size(); ++c) {
        int k = 0;
        int cur = static_cast<int>(c);
        while (par[static_cast<size_t>(cur)].first >= 0 && k <= static_cast<int>(par.size())) {
            cur = par[static_cast<size_t>(cur)].first;
            ++k;
        }
        dep[c] = k;
    }
    return dep;
}

}  // namespace detail

inline CompatibilityReport check_compatibility(const ContourCollection& col) {
    CompatibilityReport rep;
    size_t n = col.contours.size();
    std::unordered_map<CellKey, int> owner;
    std::set<std::pair<int, int>> overlaps;
    for (size_t c = 0; c < n; ++c)
        for (CellKey k : col.contours[c].base) {
            auto [it, fresh] = owner.emplace(k, static_cast<int>(c));
            if (!fresh) overlaps.insert({it->second, static_cast<int>(c)});
        }
    for (auto [a, b] : overlaps) rep.violations.push_back({"disjoint", a, b});
    auto par = detail::parents(col);
    std::map<std::pair<int, int>, int> first_in_group;
    for (size_t c = 0; c < n; ++c) {
        const auto& g = col.contours[c];
        auto [p, s] = par[c];
        if (p >= 0) {
            int inner = col.contours[static_cast<size_t>(p)].interiors[static_cast<size_t>(s)].type;
            if (g.external_type != inner) rep.violations.push_back({"nesting-type", static_cast<int>(c), p});
        } else if (col.exterior_type && g.external_type != *col.exterior_type) {
            rep.violations.push_back({"external-type", static_cast<int>(c), -1});
        }
        auto [it, fresh] = first_in_group.emplace(par[c], static_cast<int>(c));
        if (!fresh && col.contours[static_cast<size_t>(it->second)].external_type != g.external_type)
            rep.violations.push_back({"external-type", it->second, static_cast<int>(c)});
    }
    rep.ok = rep.violations.empty();
    return rep;
}

// Field whose extraction returns the collection: exterior filled with the collection's exterior type,
// each interior with its type, each base with its cell types (outermost contours first).
inline CellField reconstruct_field(const ContourCollection& col) {
    if (!col.exterior_type) raise("IncompatibleCollection", "collection has no exterior type");
    if (!col.unbounded.empty()) raise("IncompatibleCollection", "collection has unbounded contours");
    auto rep = check_compatibility(col);
    if (!rep.ok) raise("IncompatibleCollection", "violated clause: " + rep.violations.front().clause);
    int d = col.d;
    CellField f(col.ambient, *col.exterior_type, col.exterior_type);
    auto dep = detail::depths(detail::parents(col));
    std::vector<size_t> order(col.contours.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return dep[a] < dep[b]; });
    for (size_t c : order) {
        const auto& g = col.contours[c];
        for (const auto& r : g.interiors)
            for (CellKey k : r.cells) {
                Cell cell = decode(k, d);
                if (f.domain.contains(cell)) f.set(cell, r.type);
            }
        for (size_t k = 0; k < g.base.size(); ++k) {
            Cell cell = decode(g.base[k], d);
            if (f.domain.contains(cell)) f.set(cell, g.types[k]);
        }
    }
    return f;
}

// Collar-adjacent non-stable region left after erasing small contours.
struct BoundaryLayer {
    std::vector<CellKey> base;       // cells of the layer inside the box
    std::vector<int8_t> types;       // cell types of the erased field over base
    std::vector<size_t> members;     // indices into `large` of the large contours forming the layer
    std::vector<CellKey> large_part; // base cells covered by member contour bases
    std::vector<Region> components;  // remaining parts, one unstable type each
    std::vector<Region> stable_interiors;
    ContourCollection large;         // large contours of the input field
    bool empty() const { return base.empty(); }
};

inline BoundaryLayer boundary_layer(const CellField& field, const Box& box, const std::vector<int>& stable,
                                    double threshold) {
    if (!field.exterior_type) raise("InvalidField", "boundary layer needs a field with an exterior type");
    int d = field.domain.d;
    auto is_stable = [&](int t) { return std::find(stable.begin(), stable.end(), t) != stable.end(); };
    BoundaryLayer out;
    auto all = extract_contours(field, threshold);
    out.large = all;
    out.large.contours.clear();
    for (const auto& g : all.contours)
        if (!g.small) out.large.contours.push_back(g);
    CellField erased = reconstruct_field(out.large);
    PhaseMap pm = phase_map(erased);
    // U: cells of the box not in a stable phase; keep components adjacent to the complement of the box.
    auto in_u = [&](const Cell& c) { return box.contains(c) && !is_stable(pm.at(c)); };
    auto cheb = cube_offsets(d, 1, true);
    std::vector<int> seen(box.volume(), 0);
    std::vector<size_t> stack;
    for (size_t idx = 0; idx < box.volume(); ++idx) {
        Cell c = box.cell(idx);
        if (seen[idx] || !in_u(c)) continue;
        std::vector<CellKey> comp;
        bool touches = false;
        seen[idx] = 1;
        stack.push_back(idx);
        while (!stack.empty()) {
            Cell cur = box.cell(stack.back());
            stack.pop_back();
            comp.push_back(encode(cur, d));
            for (const auto& o : cheb) {
                Cell nb = add(cur, o, d);
                if (!box.contains(nb)) {
                    touches = true;
                    continue;
                }
                size_t ni = box.index(nb);
                if (seen[ni] || !in_u(nb)) continue;
                seen[ni] = 1;
                stack.push_back(ni);
            }
        }
        if (touches) out.base.insert(out.base.end(), comp.begin(), comp.end());
    }
    std::sort(out.base.begin(), out.base.end());
    for (CellKey k : out.base) out.types.push_back(static_cast<int8_t>(erased.at(decode(k, d))));
    for (size_t m = 0; m < out.large.contours.size(); ++m) {
        const auto& g = out.large.contours[m];
        bool hit = false;
        for (CellKey k : g.base)
            if (std::binary_search(out.base.begin(), out.base.end(), k)) {
                hit = true;
                out.large_part.push_back(k);
            }
        if (!hit) continue;
        out.members.push_back(m);
        for (const auto& r : g.interiors)
            if (is_stable(r.type)) out.stable_interiors.push_back(r);
    }
    std::sort(out.large_part.begin(), out.large_part.end());
    std::vector<CellKey> rest;
    std::set_difference(out.base.begin(), out.base.end(), out.large_part.begin(), out.large_part.end(),
                        std::back_inserter(rest));
    std::set<CellKey> left(rest.begin(), rest.end());
    while (!left.empty()) {
        Region r;
        std::vector<CellKey> todo{*left.begin()};
        left.erase(left.begin());
        r.type = erased.at(decode(todo.front(), d));
        while (!todo.empty()) {
            CellKey k = todo.back();
            todo.pop_back();
            r.cells.push_back(k);
            if (erased.at(decode(k, d)) != r.type) raise("ContourInvariant", "layer component with mixed types");
            for (const auto& o : cheb) {
                CellKey nk = encode(add(decode(k, d), o, d), d);
                auto it = left.find(nk);
                if (it == left.end()) continue;
                left.erase(it);
                todo.push_back(nk);
            }
        }
        std::sort(r.cells.begin(), r.cells.end());
        out.components.push_back(std::move(r));
    }
    return out;
}

// Contours whose exterior meets the box in at least two face-connected pieces.
inline std::vector<Contour> interface_contours(const ContourCollection& col, const Box& box) {
    std::vector<Contour> out;
    int d = col.d;
    auto cheb = cube_offsets(d, 1, false);
    for (const auto& g : col.contours) {
        bool near_edge = false;
        for (CellKey k : g.base) {
            Cell c = decode(k, d);
            for (const auto& o : cheb)
                if (!box.contains(add(c, o, d))) near_edge = true;
            if (near_edge) break;
        }
        // A contour away from the box edge leaves the box-edge ring in one exterior piece.
        if (!near_edge) continue;
        auto L = detail::face_components(box, [&](const Cell& c) {
            CellKey k = encode(c, d);
            return !g.in_base(k) && g.interior_of(k) < 0;
        });
        if (L.count >= 2) out.push_back(g);
    }
    return out;
}

struct FactorizeResult {
    ParticleConfiguration config;
    CellField field;
    size_t components = 0;
    double multiplicity = 1;
};

namespace detail {

struct UnionFind {
    std::vector<size_t> p;
    explicit UnionFind(size_t n) : p(n) { std::iota(p.begin(), p.end(), 0); }
    size_t find(size_t x) {
        while (p[x] != x) x = p[x] = p[p[x]];
        return x;
    }
    void unite(size_t a, size_t b) { p[find(a)] = find(b); }
    size_t roots() {
        size_t n = 0;
        for (size_t k = 0; k < p.size(); ++k) n += find(k) == k;
        return n;
    }
};

// Validates a merge map (types merged in pairs) against the symmetry group and returns the
// permutation swapping each merged pair while fixing the other types.
inline Permutation merge_permutation(const std::vector<int>& merge, const ModelParams& p) {
    if (static_cast<int>(merge.size()) != p.q + 1) raise("AsymmetricMerge", "merge map must cover types 0..q");
    Permutation want(static_cast<size_t>(p.q + 1), 0);
    for (int t = 1; t <= p.q; ++t) {
        want[t] = t;
        int partners = 0;
        for (int u = 1; u <= p.q; ++u)
            if (u != t && merge[u] == merge[t]) {
                want[t] = u;
                ++partners;
            }
        if (partners > 1) raise("AsymmetricMerge", "classes larger than two are not supported");
    }
    for (const auto& g : symmetry_group(p))
        if (g == want) return want;
    raise("AsymmetricMerge", "merge map is not induced by a symmetry of the diameters");
    return {};
}

}  // namespace detail

// Relabels merged types to the smaller member of each pair and counts the connection components of
// merged particles: particles of representatives a and b are linked within D(a, pi(b)).
inline FactorizeResult factorize(const ParticleConfiguration& c, const std::vector<int>& merge, const ModelParams& p) {
    Permutation pi = detail::merge_permutation(merge, p);
    FactorizeResult out;
    out.config = ParticleConfiguration(c.d, c.q, c.domain);
    std::vector<int> rep(static_cast<size_t>(p.q + 1));
    for (int t = 1; t <= p.q; ++t) rep[t] = std::min(t, pi[t]);
    std::vector<double> pts;
    std::vector<int> lab;
    for (int t = 1; t <= c.q; ++t)
        for (size_t k = 0; k < c.count(t); ++k) {
            out.config.add(rep[t], c.point(t, k));
            if (pi[t] != t) {
                pts.insert(pts.end(), c.point(t, k), c.point(t, k) + c.d);
                lab.push_back(rep[t]);
            }
        }
    size_t n = lab.size();
    detail::UnionFind uf(n);
    double reach = 0;
    for (int a = 1; a <= p.q; ++a)
        for (int b = 1; b <= p.q; ++b)
            if (pi[a] != a && pi[b] != b && a != pi[b]) reach = std::max(reach, p.D(a, pi[b]));
    if (n > 0) {
        detail::PointGrid grid(pts, c.d, std::max(reach, 1e-9));
        for (size_t k = 0; k < n; ++k) {
            const double* x = &pts[k * static_cast<size_t>(c.d)];
            grid.any_near(x, [&](size_t m) {
                if (m <= k) return false;
                double thr = p.D(lab[k], pi[lab[m]]);
                if (dist2(x, &pts[m * static_cast<size_t>(c.d)], c.d) <= thr * thr) uf.unite(k, m);
                return false;
            });
        }
    }
    out.components = uf.roots();
    out.multiplicity = std::pow(2.0, static_cast<double>(out.components));
    return out;
}

// Cell version: merged cells are linked when some pair of points in them could be linked.
inline FactorizeResult factorize(const CellField& f, const std::vector<int>& merge, const ModelParams& p) {
    Permutation pi = detail::merge_permutation(merge, p);
    FactorizeResult out;
    out.field = f;
    int d = f.domain.d;
    std::vector<size_t> cells;
    for (size_t idx = 0; idx < f.values.size(); ++idx) {
        int t = f.values[idx];
        if (t > 0 && pi[t] != t) {
            cells.push_back(idx);
            out.field.values[idx] = static_cast<int8_t>(std::min(t, pi[t]));
        }
    }
    detail::UnionFind uf(cells.size());
    for (size_t a = 0; a < cells.size(); ++a)
        for (size_t b = a + 1; b < cells.size(); ++b) {
            int ta = out.field.values[cells[a]], tb = out.field.values[cells[b]];
            double thr = p.D(ta, pi[tb]);
            if (cell_min_dist2(f.domain.cell(cells[a]), f.domain.cell(cells[b]), d) <= thr * thr) uf.unite(a, b);
        }
    out.components = uf.roots();
    out.multiplicity = std::pow(2.0, static_cast<double>(out.components));
    return out;
}

// Run-length encoded rows (last coordinate fastest) after a JSON header line.
inline std::string field_to_rle(const CellField& f) {
    nlohmann::json h;
    h["d"] = f.domain.d;
    h["lo"] = f.domain.lo_vec();
    h["hi"] = f.domain.hi_vec();
    h["exterior"] = f.exterior_type ? nlohmann::json(*f.exterior_type) : nlohmann::json(nullptr);
    std::ostringstream os;
    os << h.dump() << '\n';
    size_t row = static_cast<size_t>(f.domain.side(f.domain.d - 1));
    for (size_t start = 0; start < f.values.size(); start += row) {
        size_t k = start;
        bool first = true;
        while (k < start + row) {
            size_t e = k;
            while (e < start + row && f.values[e] == f.values[k]) ++e;
            os << (first ? "" : " ") << static_cast<int>(f.values[k]) << '*' << (e - k);
            first = false;
            k = e;
        }
        os << '\n';
    }
    return os.str();
}

inline CellField field_from_rle(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) raise("ParseError", "missing field header");
    auto h = nlohmann::json::parse(line);
    Box b;
    b.d = h.at("d");
    auto lo = h.at("lo").get<std::vector<int>>(), hi = h.at("hi").get<std::vector<int>>();
    for (int k = 0; k < b.d; ++k) {
        b.lo[static_cast<size_t>(k)] = lo[static_cast<size_t>(k)];
        b.hi[static_cast<size_t>(k)] = hi[static_cast<size_t>(k)];
    }
    std::optional<int> ext;
    if (!h.at("exterior").is_null()) ext = h.at("exterior").get<int>();
    CellField f(b, 0, ext);
    size_t pos = 0;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string run;
        while (ls >> run) {
            auto star = run.find('*');
            if (star == std::string::npos) raise("ParseError", "bad run: " + run);
            int t = std::stoi(run.substr(0, star));
            size_t n = std::stoul(run.substr(star + 1));
            if (pos + n > f.values.size()) raise("ParseError", "field overflows its domain");
            std::fill_n(f.values.begin() + static_cast<long>(pos), n, static_cast<int8_t>(t));
            pos += n;
        }
    }
    if (pos != f.values.size()) raise("ParseError", "field shorter than its domain");
    return f;
}

inline nlohmann::json contour_to_json(const Contour& g) {
    nlohmann::json j;
    std::vector<std::vector<int>> cells;
    for (CellKey k : g.base) {
        Cell c = decode(k, g.d);
        cells.emplace_back(c.begin(), c.begin() + g.d);
    }
    j["base"] = cells;
    j["types"] = std::vector<int>(g.types.begin(), g.types.end());
    j["external_type"] = g.external_type;
    nlohmann::json ints = nlohmann::json::array();
    for (const auto& r : g.interiors) ints.push_back({{"type", r.type}, {"volume", r.cells.size()}});
    j["interiors"] = ints;
    j["empty_cells"] = g.empty_count();
    j["small"] = g.small;
    j["separating"] = g.separating;
    j["unbounded"] = g.unbounded;
    j["external"] = g.external;
    return j;
}

}  // namespace wrsim
