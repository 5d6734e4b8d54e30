#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "model.hpp"
#include "rational.hpp"

namespace wrsim {

// Finite contour set with signed weights, an incompatibility graph and a KP function a.
struct PolymerSystem {
    std::vector<double> w;
    std::vector<double> a;
    std::vector<std::vector<bool>> incompatible;  // symmetric, true on the diagonal

    size_t size() const { return w.size(); }
    bool compatible(size_t i, size_t j) const { return !incompatible[i][j]; }

    static PolymerSystem make(std::vector<double> weights, std::vector<double> kp,
                              const std::vector<std::pair<size_t, size_t>>& clashes) {
        PolymerSystem s;
        size_t n = weights.size();
        s.w = std::move(weights);
        s.a = std::move(kp);
        s.incompatible.assign(n, std::vector<bool>(n, false));
        for (size_t i = 0; i < n; ++i) s.incompatible[i][i] = true;
        for (auto [i, j] : clashes) s.incompatible[i][j] = s.incompatible[j][i] = true;
        return s;
    }
};

// Multiset of contours: (index, multiplicity) with distinct indices.
struct Polymer {
    std::vector<std::pair<size_t, int>> support;
    int vertices() const {
        int n = 0;
        for (const auto& e : support) n += e.second;
        return n;
    }
};

struct ClusterTerm {
    Polymer polymer;
    Rational r;
    double weight = 0;
};

// Signed count of connected spanning subgraphs of a graph on n <= 20 vertices given as adjacency bitmasks:
// f(S) = g(S) - sum_{T < S, T contains min S} f(T) g(S \ T), where g(S) = [S has no edges].
inline long long connected_spanning_sum(const std::vector<uint32_t>& adj) {
    size_t n = adj.size();
    if (n == 0) return 0;
    if (n > 20) raise("TooManyVertices", "graph too large");
    uint32_t full = (n == 32) ? ~0u : ((1u << n) - 1);
    std::vector<char> indep(static_cast<size_t>(full) + 1, 0);
    indep[0] = 1;
    for (uint32_t S = 1; S <= full; ++S) {
        uint32_t low = S & (~S + 1);
        int v = __builtin_ctz(low);
        uint32_t rest = S ^ low;
        indep[S] = indep[rest] && !(adj[static_cast<size_t>(v)] & rest);
    }
    std::vector<long long> f(static_cast<size_t>(full) + 1, 0);
    for (uint32_t S = 1; S <= full; ++S) {
        uint32_t low = S & (~S + 1);
        long long val = indep[S];
        uint32_t rest = S ^ low;
        // T = low | sub for every proper subset sub of rest
        for (uint32_t sub = (rest - 1) & rest;; sub = (sub - 1) & rest) {
            uint32_t T = low | sub;
            if (indep[S ^ T]) val -= f[T];
            if (sub == 0) break;
        }
        if (rest == 0) val = 1;
        f[S] = val;
    }
    return f[full];
}

inline std::vector<uint32_t> polymer_graph(const PolymerSystem& sys, const Polymer& pi) {
    std::vector<size_t> owner;
    for (const auto& [idx, m] : pi.support)
        for (int k = 0; k < m; ++k) owner.push_back(idx);
    std::vector<uint32_t> adj(owner.size(), 0);
    for (size_t u = 0; u < owner.size(); ++u)
        for (size_t v = 0; v < owner.size(); ++v)
            if (u != v && sys.incompatible[owner[u]][owner[v]]) adj[u] |= 1u << v;
    return adj;
}

inline Rational mobius_coefficient(const PolymerSystem& sys, const Polymer& pi, int vmax = 10) {
    if (pi.vertices() > vmax) raise("TooManyVertices", "polymer exceeds the vertex cap");
    long long s = connected_spanning_sum(polymer_graph(sys, pi));
    BigInt fact = 1;
    for (const auto& e : pi.support)
        for (int k = 2; k <= e.second; ++k) fact *= k;
    return Rational(BigInt(s), fact);
}

inline double polymer_weight(const PolymerSystem& sys, const Polymer& pi, const Rational& r) {
    double w = to_double(r);
    for (const auto& [idx, m] : pi.support) w *= std::pow(sys.w[idx], m);
    return w;
}

// log of the sum over compatible subcollections of `subset` of the product of weights.
inline double exact_log_z(const PolymerSystem& sys, const std::vector<size_t>& subset) {
    if (subset.size() > 25) raise("TooLarge", "exact enumeration is limited to 25 contours");
    double z = 0;
    std::vector<size_t> chosen;
    std::function<void(size_t, double)> rec = [&](size_t k, double prod) {
        if (k == subset.size()) {
            z += prod;
            return;
        }
        rec(k + 1, prod);
        size_t t = subset[k];
        for (size_t c : chosen)
            if (sys.incompatible[c][t]) return;
        chosen.push_back(t);
        rec(k + 1, prod * sys.w[t]);
        chosen.pop_back();
    };
    rec(0, 1.0);
    if (!(z > 0)) raise("NonpositiveZ", "partition function is not positive");
    return std::log(z);
}

struct KPReport {
    bool ok = true;
    std::vector<double> slack;  // a(theta) - sum over incompatible theta' of |w| e^{a}
};

inline KPReport kp_check(const PolymerSystem& sys, const std::vector<size_t>& subset) {
    KPReport rep;
    for (size_t t : subset) {
        double s = 0;
        for (size_t u : subset)
            if (sys.incompatible[t][u]) s += std::abs(sys.w[u]) * std::exp(sys.a[u]);
        rep.slack.push_back(sys.a[t] - s);
        rep.ok = rep.ok && sys.a[t] >= s;
    }
    return rep;
}

inline KPReport kp_check(const PolymerSystem& sys) {
    std::vector<size_t> all(sys.size());
    for (size_t k = 0; k < all.size(); ++k) all[k] = k;
    return kp_check(sys, all);
}

struct TruncatedLogZ {
    double value = 0;
    double tail_bound = 0;
    size_t polymers = 0;
};

// Sum of polymer weights with total multiplicity <= cap. If KP holds with a, it still holds for the
// weights scaled by lambda = min a/S, so polymers of size n carry at most lambda^{-n} of that mass and
// the tail beyond the cap is at most lambda^{-cap} sum |w| e^{a}.
inline TruncatedLogZ truncated_log_z(const PolymerSystem& sys, const std::vector<size_t>& subset, int cap,
                                     std::vector<ClusterTerm>* terms = nullptr) {
    auto kp = kp_check(sys, subset);
    if (!kp.ok) raise("KPViolated", "Kotecky-Preiss condition fails");
    TruncatedLogZ out;
    double lambda = INFINITY, mass = 0;
    for (size_t k = 0; k < subset.size(); ++k) {
        size_t t = subset[k];
        double s = sys.a[t] - kp.slack[k];
        if (s > 0) lambda = std::min(lambda, sys.a[t] / s);
        mass += std::abs(sys.w[t]) * std::exp(sys.a[t]);
    }
    out.tail_bound = mass == 0 ? 0.0 : (std::isinf(lambda) ? 0.0 : mass * std::pow(lambda, -cap));
    Polymer pi;
    std::function<void(size_t, int)> rec = [&](size_t k, int used) {
        if (k == subset.size()) {
            if (pi.support.empty()) return;
            // The multiset graph is connected iff its support is connected under incompatibility.
            size_t n = pi.support.size();
            std::vector<bool> seen(n, false);
            std::vector<size_t> stack{0};
            seen[0] = true;
            size_t reached = 1;
            while (!stack.empty()) {
                size_t u = stack.back();
                stack.pop_back();
                for (size_t v = 0; v < n; ++v)
                    if (!seen[v] && sys.incompatible[pi.support[u].first][pi.support[v].first]) {
                        seen[v] = true;
                        ++reached;
                        stack.push_back(v);
                    }
            }
            if (reached != n) return;
            Rational r = mobius_coefficient(sys, pi, std::max(cap, 10));
            double w = polymer_weight(sys, pi, r);
            out.value += w;
            ++out.polymers;
            if (terms) terms->push_back({pi, r, w});
            return;
        }
        rec(k + 1, used);
        for (int m = 1; used + m <= cap; ++m) {
            pi.support.push_back({subset[k], m});
            rec(k + 1, used + m);
            pi.support.pop_back();
        }
    };
    rec(0, 0);
    return out;
}

inline nlohmann::json cluster_term_to_json(const ClusterTerm& t) {
    nlohmann::json j;
    nlohmann::json sup = nlohmann::json::array();
    for (const auto& [idx, m] : t.polymer.support) sup.push_back({idx, m});
    j["support"] = sup;
    j["r"] = to_string(t.r);
    j["weight"] = t.weight;
    return j;
}

// ---------------------------------------------------------------------------------------------
// Small-contour free energies, written per translation class of small contours.

struct ContourClass {
    std::string key;
    int island_type = 0;      // 0 for non-separating classes
    Rational diameter = 0;    // exclusion diameter between external and island type
    double log_weight = 0;    // log of the (class-aggregated) weight
    std::vector<CellKey> base;
    bool separating() const { return island_type != 0; }
};

struct WeightTable {
    int d = 2;
    int external_type = 1;
    std::vector<ContourClass> classes;
};

// Number of shifts s with B + s within Chebyshev distance 1 of A (overlapping or touching bases).
inline size_t incompatible_shifts(const std::vector<CellKey>& A, const std::vector<CellKey>& B, int d) {
    if (A.empty() || B.empty()) return 0;
    std::vector<CellKey> all;
    Box ba, bb;
    {
        ba.d = bb.d = d;
        auto ext = [&](const std::vector<CellKey>& s, Box& b) {
            for (int k = 0; k < d; ++k) {
                b.lo[static_cast<size_t>(k)] = INT32_MAX;
                b.hi[static_cast<size_t>(k)] = INT32_MIN;
            }
            for (CellKey key : s) {
                Cell c = decode(key, d);
                for (int k = 0; k < d; ++k) {
                    auto u = static_cast<size_t>(k);
                    b.lo[u] = std::min(b.lo[u], c[u]);
                    b.hi[u] = std::max(b.hi[u], c[u]);
                }
            }
        };
        ext(A, ba);
        ext(B, bb);
    }
    Box out;
    out.d = d;
    for (int k = 0; k < d; ++k) {
        auto u = static_cast<size_t>(k);
        out.lo[u] = ba.lo[u] - bb.hi[u] - 1;
        out.hi[u] = ba.hi[u] - bb.lo[u] + 1;
    }
    std::vector<char> hit(out.volume(), 0);
    auto cube = cube_offsets(d, 1, false);
    std::vector<Cell> dil;
    {
        std::vector<CellKey> keys;
        for (CellKey key : A) {
            Cell c = decode(key, d);
            for (const auto& o : cube) keys.push_back(encode(add(c, o, d), d));
        }
        std::sort(keys.begin(), keys.end());
        keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
        for (CellKey key : keys) dil.push_back(decode(key, d));
    }
    for (CellKey key : B) {
        Cell b = decode(key, d);
        for (const auto& a : dil) {
            Cell s{};
            for (int k = 0; k < d; ++k) s[static_cast<size_t>(k)] = a[static_cast<size_t>(k)] - b[static_cast<size_t>(k)];
            hit[out.index(s)] = 1;
        }
    }
    return static_cast<size_t>(std::count(hit.begin(), hit.end(), 1));
}

inline std::vector<CellKey> dilate(const std::vector<CellKey>& s, int d, int m) {
    std::vector<CellKey> out;
    auto cube = cube_offsets(d, m, false);
    for (CellKey key : s) {
        Cell c = decode(key, d);
        for (const auto& o : cube) out.push_back(encode(add(c, o, d), d));
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

namespace detail {

// Volume of the intersection of two d-balls of radius D at distance r.
inline double lens_volume(int d, double D, double r) {
    if (r >= 2 * D) return 0.0;
    if (d == 2) return 2 * D * D * std::acos(r / (2 * D)) - 0.5 * r * std::sqrt(4 * D * D - r * r);
    if (d == 3) return M_PI * (4 * D + r) * (2 * D - r) * (2 * D - r) / 12.0;
    // Two caps of height D - r/2, integrated slice by slice.
    const int n = 400;
    double lo = r / 2, hi = D, h = (hi - lo) / n, s = 0;
    for (int k = 0; k <= n; ++k) {
        double x = lo + k * h;
        double wgt = (k == 0 || k == n) ? 1 : (k % 2 ? 4 : 2);
        s += wgt * ball_volume(d - 1, std::sqrt(std::max(0.0, D * D - x * x)));
    }
    return 2 * s * h / 3;
}

inline double log_add(double a, double b) {
    if (a == -INFINITY) return b;
    if (b == -INFINITY) return a;
    double m = std::max(a, b);
    return m + std::log1p(std::exp(std::min(a, b) - m));
}

}  // namespace detail

// Aggregated weight of the dominating separating class: one island particle of the other type at y0
// clears a ball of radius D of external-type particles. Per unit volume,
// W1 = z * E_{y0}[ prod_c e^{-z |c cap B(y0,D)|} / (1-v) ] = z e^{-z|B|} E[(1-v)^{-N(y0)}],
// with N(y0) the number of cells meeting the ball. The two-particle island adds W1 * delta / 2 where
// delta = z * int_0^{2D} e^{-z (|B| - lens(r))} |S^{d-1}| r^{d-1} dr.
struct IslandWeight {
    double log_w1 = 0;
    double delta = 0;
    double log_w = 0;
};

inline IslandWeight island_weight(int d, double D, double z) {
    IslandWeight out;
    double v = std::exp(-z);
    double lv1 = -std::log1p(-v);
    const int g = 4;
    int reach = static_cast<int>(std::ceil(D)) + 2;
    Box cells = Box::cube(d, 2 * reach + 1, -reach);
    Box grid = Box::cube(d, g, 0);
    double acc = -INFINITY;
    for (size_t gi = 0; gi < grid.volume(); ++gi) {
        Cell gc = grid.cell(gi);
        double y[kMaxDim];
        for (int k = 0; k < d; ++k) y[k] = -0.5 + (gc[static_cast<size_t>(k)] + 0.5) / g;
        long n = 0;
        for (size_t ci = 0; ci < cells.volume(); ++ci) {
            Cell c = cells.cell(ci);
            double s = 0;
            for (int k = 0; k < d; ++k) {
                double e = std::max(0.0, std::abs(c[static_cast<size_t>(k)] - y[k]) - 0.5);
                s += e * e;
            }
            if (s < D * D) ++n;
        }
        acc = detail::log_add(acc, static_cast<double>(n) * lv1);
    }
    acc -= std::log(static_cast<double>(grid.volume()));
    double vb = ball_volume(d, D);
    out.log_w1 = std::log(z) - z * vb + acc;
    const int steps = 4000;
    double h = 2 * D / steps, s = 0;
    double surf = d * ball_volume(d, 1.0);
    for (int k = 0; k <= steps; ++k) {
        double r = k * h;
        double wgt = (k == 0 || k == steps) ? 1 : (k % 2 ? 4 : 2);
        s += wgt * std::exp(-z * (vb - detail::lens_volume(d, D, r))) * surf * std::pow(r, d - 1);
    }
    out.delta = z * s * h / 3;
    out.log_w = out.log_w1 + std::log1p(out.delta / 2);
    return out;
}

// Representative base of the dominating class: cells meeting B(0, D), widened by two cells.
inline std::vector<CellKey> island_base(int d, double D) {
    int reach = static_cast<int>(std::ceil(D)) + 1;
    Box cells = Box::cube(d, 2 * reach + 1, -reach);
    std::vector<CellKey> touched;
    for (size_t ci = 0; ci < cells.volume(); ++ci) {
        Cell c = cells.cell(ci);
        double s = 0;
        for (int k = 0; k < d; ++k) {
            double e = std::max(0.0, std::abs(c[static_cast<size_t>(k)]) - 0.5);
            s += e * e;
        }
        if (s < D * D) touched.push_back(encode(c, d));
    }
    std::sort(touched.begin(), touched.end());
    return dilate(touched, d, 2);
}

// Non-separating classes (one empty cell; two empty cells within Chebyshev distance 4) and one
// dominating class per other type.
inline WeightTable build_weight_table(const ModelParams& p, int i) {
    WeightTable t;
    t.d = p.d;
    t.external_type = i;
    int d = p.d;
    double lr = std::log(p.v() / (1 - p.v()));
    Cell zero{};
    ContourClass single;
    single.key = "empty:1";
    single.log_weight = lr;
    single.base = dilate({encode(zero, d)}, d, 2);
    t.classes.push_back(single);
    for (const auto& o : cube_offsets(d, 4, true)) {
        // one representative per unordered pair: first nonzero coordinate positive
        int first = 0;
        for (int k = 0; k < d && first == 0; ++k) first = o[static_cast<size_t>(k)];
        if (first < 0) continue;
        ContourClass c;
        c.key = "empty:2:";
        for (int k = 0; k < d; ++k) c.key += std::to_string(o[static_cast<size_t>(k)]) + (k + 1 < d ? "," : "");
        c.log_weight = 2 * lr;
        c.base = dilate({encode(zero, d), encode(o, d)}, d, 2);
        t.classes.push_back(c);
    }
    for (int k = 1; k <= p.q; ++k) {
        if (k == i) continue;
        ContourClass c;
        c.key = "island:" + to_string(p.Dx(i, k));
        c.island_type = k;
        c.diameter = p.Dx(i, k);
        c.log_weight = island_weight(d, p.D(i, k), p.z).log_w;
        c.base = island_base(d, p.D(i, k));
        t.classes.push_back(c);
    }
    return t;
}

inline double class_kp(const ContourClass& c, double v, double exponent = 0.9) {
    return static_cast<double>(c.base.size()) * std::log1p(std::pow(v, exponent));
}

// KP check for a table of translation classes: every translate of a class clashing with theta counts.
inline KPReport kp_check(const WeightTable& t, const ModelParams& p) {
    KPReport rep;
    double v = p.v();
    for (const auto& th : t.classes) {
        double s = 0;
        for (const auto& c : t.classes) {
            double n = (th.separating() && c.separating())
                           ? static_cast<double>(dilate(th.base, t.d, 1).size() * c.base.size())
                           : static_cast<double>(incompatible_shifts(th.base, c.base, t.d));
            s += n * std::exp(c.log_weight + class_kp(c, v));
        }
        double a = class_kp(th, v);
        rep.slack.push_back(a - s);
        rep.ok = rep.ok && a >= s;
    }
    return rep;
}

struct FreeEnergy {
    double value = 0;             // f(i;S) as a double (separating part may underflow)
    double nonseparating = 0;     // polymers of non-separating classes only
    std::vector<std::pair<Rational, double>> separating;  // (diameter, log contribution) per other type
    double remainder_bound = 0;
    double boundary_coefficient = 0;  // |r(Lambda)| <= boundary_coefficient * |boundary of Lambda|
};

// Cluster sum per site. Cap 1 keeps single classes. Cap >= 2 adds pairs of non-separating classes
// (-w w' N for distinct classes, -w^2 N / 2 within a class) and multiplies each dominating weight by
// the exponentiated pair term exp(-sum w_ns N) so that it stays positive. The remainder bound is
// sum |w| (e^{a} - 1) over classes beyond the kept order.
inline FreeEnergy small_contour_free_energy(int i, const ModelParams& p, int size_cap, const WeightTable& t) {
    if (t.external_type != i) raise("TableIncomplete", "weight table belongs to another external type");
    for (int k = 1; k <= p.q; ++k) {
        if (k == i) continue;
        bool found = false;
        for (const auto& c : t.classes) found = found || (c.island_type == k);
        if (!found) raise("TableIncomplete", "missing dominating class for type " + std::to_string(k));
    }
    auto kp = kp_check(t, p);
    if (!kp.ok) raise("KPViolated", "Kotecky-Preiss condition fails for the weight table");
    FreeEnergy f;
    double v = p.v();
    std::vector<const ContourClass*> ns, sep;
    for (const auto& c : t.classes) (c.separating() ? sep : ns).push_back(&c);
    for (const auto* c : ns) f.nonseparating += std::exp(c->log_weight);
    if (size_cap >= 2) {
        for (size_t a = 0; a < ns.size(); ++a)
            for (size_t b = a; b < ns.size(); ++b) {
                double n = static_cast<double>(incompatible_shifts(ns[a]->base, ns[b]->base, t.d));
                double w = std::exp(ns[a]->log_weight + ns[b]->log_weight);
                f.nonseparating -= (a == b) ? 0.5 * w * n : w * n;
            }
    }
    double rem = 0;
    for (const auto* c : sep) {
        double lw = c->log_weight;
        if (size_cap >= 2) {
            double excl = 0;
            for (const auto* o : ns)
                excl += std::exp(o->log_weight) * static_cast<double>(incompatible_shifts(c->base, o->base, t.d));
            lw -= excl;
        }
        f.separating.push_back({c->diameter, lw});
        rem += std::exp(lw) * std::expm1(class_kp(*c, v));
    }
    for (const auto* c : ns) rem += std::exp(c->log_weight) * std::expm1(class_kp(*c, v)) * (size_cap >= 2 ? v : 1.0);
    f.value = f.nonseparating;
    for (const auto& [D, lw] : f.separating) f.value += std::exp(lw);
    f.remainder_bound = rem;
    f.boundary_coefficient = std::pow(v, 0.9);
    return f;
}

struct GapResult {
    int sign = 0;                // sign of f(i;S) - f(j;S)
    double log_abs = -INFINITY;  // log |f(i;S) - f(j;S)|
    double value = 0;
    int level = 0;               // first position where the sorted incident diameters differ (1-based), 0 if none
    int winner = 0;              // type with the smaller diameter at that position
    double log_bound = -INFINITY;  // log of 0.5 v^{vol B(D+2)} for the winner's diameter at that level
    bool bound_holds = true;
    bool agrees_with_classifier = true;
};

// f(i;S) - f(j;S): equal diameters give identical separating terms and cancel exactly, the
// non-separating parts are type independent, and what is left is compared in log space.
inline GapResult free_energy_gap(const ModelParams& p, int i, int j, const FreeEnergy& fi, const FreeEnergy& fj) {
    GapResult g;
    auto left = fi.separating, right = fj.separating;
    auto by_d = [](const auto& a, const auto& b) { return a.first < b.first; };
    std::sort(left.begin(), left.end(), by_d);
    std::sort(right.begin(), right.end(), by_d);
    std::vector<std::pair<Rational, double>> li, rj;
    size_t a = 0, b = 0;
    while (a < left.size() || b < right.size()) {
        if (b == right.size() || (a < left.size() && left[a].first < right[b].first)) li.push_back(left[a++]);
        else if (a == left.size() || right[b].first < left[a].first) rj.push_back(right[b++]);
        else {
            ++a;
            ++b;
        }
    }
    double L = -INFINITY, R = -INFINITY;
    for (const auto& e : li) L = detail::log_add(L, e.second);
    for (const auto& e : rj) R = detail::log_add(R, e.second);
    if (L == R) {
        g.sign = 0;
    } else {
        g.sign = L > R ? 1 : -1;
        double hi = std::max(L, R), lo = std::min(L, R);
        g.log_abs = hi + std::log1p(-std::exp(lo - hi));
        g.value = g.sign * std::exp(g.log_abs);
    }
    std::vector<Rational> di, dj;
    for (int k = 1; k <= p.q; ++k) {
        if (k != i) di.push_back(p.Dx(i, k));
        if (k != j) dj.push_back(p.Dx(j, k));
    }
    std::sort(di.begin(), di.end());
    std::sort(dj.begin(), dj.end());
    for (size_t k = 0; k < di.size(); ++k)
        if (di[k] != dj[k]) {
            g.level = static_cast<int>(k) + 1;
            g.winner = di[k] < dj[k] ? i : j;
            double D = to_double(std::min(di[k], dj[k]));
            g.log_bound = std::log(0.5) + ball_volume(p.d, D + 2) * std::log(p.v());
            break;
        }
    if (g.level > 0) {
        int expect = g.winner == i ? 1 : -1;
        g.bound_holds = g.sign == expect && g.log_abs > g.log_bound;
    } else {
        g.bound_holds = g.sign == 0;
    }
    auto rep = incidence_vectors(p);
    const auto& ni = rep.second[static_cast<size_t>(i)];
    const auto& nj = rep.second[static_cast<size_t>(j)];
    int lex = ni > nj ? 1 : (ni < nj ? -1 : 0);
    g.agrees_with_classifier = lex == g.sign;
    return g;
}

inline GapResult free_energy_gap(const ModelParams& p, int i, int j, int size_cap) {
    auto fi = small_contour_free_energy(i, p, size_cap, build_weight_table(p, i));
    auto fj = small_contour_free_energy(j, p, size_cap, build_weight_table(p, j));
    return free_energy_gap(p, i, j, fi, fj);
}

}  // namespace wrsim
