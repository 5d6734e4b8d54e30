#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rational.hpp"

namespace wrsim {

// Volume of a closed d-dimensional ball of radius r.
inline double ball_volume(int d, double r) {
    if (r <= 0) return 0.0;
    return std::pow(M_PI, d / 2.0) / std::tgamma(d / 2.0 + 1.0) * std::pow(r, d);
}

// Types are labelled 1..q; 0 means "empty" wherever a type appears in a cell.
struct ModelParams {
    int d = 2;
    int q = 2;
    double z = 1.0;
    Rational R = 1;
    std::vector<std::string> warnings;

    ModelParams() = default;
    ModelParams(int dim, int types, double fugacity) : d(dim), q(types), z(fugacity) { resize(); }

    static ModelParams uniform(int dim, int types, double fugacity, const std::string& diameter) {
        ModelParams p(dim, types, fugacity);
        for (int i = 1; i <= types; ++i)
            for (int j = i + 1; j <= types; ++j) p.set(i, j, parse_decimal(diameter));
        return p;
    }

    void set(int i, int j, const Rational& v) {
        exact_[idx(i, j)] = v;
        exact_[idx(j, i)] = v;
        approx_[idx(i, j)] = approx_[idx(j, i)] = to_double(v);
    }
    void set(int i, int j, const std::string& v) { set(i, j, parse_decimal(v)); }
    // Sets one entry only; used to build deliberately asymmetric inputs.
    void set_one(int i, int j, const Rational& v) {
        exact_[idx(i, j)] = v;
        approx_[idx(i, j)] = to_double(v);
    }

    const Rational& Dx(int i, int j) const { return exact_[idx(i, j)]; }
    double D(int i, int j) const { return approx_[idx(i, j)]; }
    double v() const { return std::exp(-z); }

    double a() const {
        double m = INFINITY;
        for (int i = 1; i <= q; ++i)
            for (int j = i + 1; j <= q; ++j) m = std::min(m, D(i, j));
        return m;
    }
    double b() const {
        double m = 0;
        for (int i = 1; i <= q; ++i)
            for (int j = i + 1; j <= q; ++j) m = std::max(m, D(i, j));
        return m;
    }

    std::vector<Rational> levels() const {
        std::vector<Rational> out;
        for (int i = 1; i <= q; ++i)
            for (int j = i + 1; j <= q; ++j) out.push_back(Dx(i, j));
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    // Contour size threshold b^{2d} separating small from large contours.
    double small_threshold() const { return std::pow(b(), 2.0 * d); }

    void resize() {
        exact_.assign(static_cast<size_t>((q + 1) * (q + 1)), Rational(0));
        approx_.assign(static_cast<size_t>((q + 1) * (q + 1)), 0.0);
    }

private:
    size_t idx(int i, int j) const { return static_cast<size_t>(i * (q + 1) + j); }
    std::vector<Rational> exact_;
    std::vector<double> approx_;
};

struct TriangleViolation : Error {
    int i, j, l;
    TriangleViolation(int i_, int j_, int l_)
        : Error("TriangleViolation", "D(" + std::to_string(i_) + "," + std::to_string(j_) + ") >= D(" +
                                         std::to_string(i_) + "," + std::to_string(l_) + ") + D(" +
                                         std::to_string(j_) + "," + std::to_string(l_) + ")"),
          i(i_), j(j_), l(l_) {}
};

// Smallest of a and the minimal gap between distinct levels.
inline Rational gap_quantity(const ModelParams& p) {
    auto lv = p.levels();
    Rational g = lv.front();
    for (size_t k = 1; k < lv.size(); ++k) g = std::min(g, Rational(lv[k] - lv[k - 1]));
    return g;
}

// Checks the input, then rescales lengths by 1/R so that the gap quantity exceeds 10d with R = 1.
// The fugacity is rescaled to z R^d, keeping the expected particle number of every region fixed.
inline ModelParams validate_and_rescale(ModelParams p) {
    if (p.d < 2) raise("InvalidParams", "dimension must be >= 2");
    if (p.d > 4) raise("InvalidParams", "dimension must be <= 4");
    if (p.q < 2) raise("InvalidParams", "need at least two types");
    if (!(p.z > 0)) raise("InvalidParams", "fugacity must be positive");
    if (p.R <= 0) raise("InvalidParams", "R must be positive");
    if (p.q > 4) p.warnings.push_back("q > 4: classification runs, phase prediction is unsupported");
    for (int i = 1; i <= p.q; ++i)
        for (int j = i + 1; j <= p.q; ++j) {
            if (p.Dx(i, j) != p.Dx(j, i)) raise("AsymmetricDiameters", std::to_string(i) + "," + std::to_string(j));
            if (p.Dx(i, j) <= 0) raise("NonPositiveDiameter", std::to_string(i) + "," + std::to_string(j));
        }
    for (int i = 1; i <= p.q; ++i)
        for (int j = i + 1; j <= p.q; ++j)
            for (int l = 1; l <= p.q; ++l) {
                if (l == i || l == j) continue;
                if (p.Dx(i, j) >= p.Dx(i, l) + p.Dx(j, l)) throw TriangleViolation(i, j, l);
            }
    Rational g = gap_quantity(p);
    Rational bound = 10 * p.d;
    Rational R = p.R;
    if (!(g > bound * R)) R = std::min(R, Rational(g / (bound + 1)));
    if (R != 1) {
        for (int i = 1; i <= p.q; ++i)
            for (int j = i + 1; j <= p.q; ++j) p.set(i, j, Rational(p.Dx(i, j) / R));
        p.z = p.z * std::pow(to_double(R), p.d);
    }
    p.R = 1;
    return p;
}

using Permutation = std::vector<int>;  // perm[t] is the image of type t; perm[0] == 0

struct StabilityReport {
    std::vector<Rational> levels;
    std::vector<std::vector<int>> vectors;  // vectors[j][l], j in 1..q (row 0 unused)
    std::vector<int> stable_set;
    std::vector<Permutation> symmetry_group;

    bool is_stable(int t) const { return std::find(stable_set.begin(), stable_set.end(), t) != stable_set.end(); }
};

inline std::pair<std::vector<Rational>, std::vector<std::vector<int>>> incidence_vectors(const ModelParams& p) {
    auto lv = p.levels();
    std::vector<std::vector<int>> n(static_cast<size_t>(p.q + 1), std::vector<int>(lv.size(), 0));
    for (int j = 1; j <= p.q; ++j)
        for (int i = 1; i <= p.q; ++i) {
            if (i == j) continue;
            auto it = std::lower_bound(lv.begin(), lv.end(), p.Dx(j, i));
            n[j][static_cast<size_t>(it - lv.begin())] += 1;
        }
    return {lv, n};
}

inline std::vector<Permutation> symmetry_group(const ModelParams& p) {
    Permutation perm(static_cast<size_t>(p.q + 1));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<Permutation> out;
    do {
        bool ok = true;
        for (int i = 1; i <= p.q && ok; ++i)
            for (int j = i + 1; j <= p.q && ok; ++j) ok = p.Dx(perm[i], perm[j]) == p.Dx(i, j);
        if (ok) out.push_back(perm);
    } while (std::next_permutation(perm.begin() + 1, perm.end()));
    return out;
}

inline StabilityReport stable_types(const ModelParams& p) {
    StabilityReport r;
    std::tie(r.levels, r.vectors) = incidence_vectors(p);
    std::vector<int> best;
    for (int j = 1; j <= p.q; ++j) {
        if (best.empty() || r.vectors[j] > r.vectors[best.front()]) best = {j};
        else if (r.vectors[j] == r.vectors[best.front()]) best.push_back(j);
    }
    r.stable_set = best;
    r.symmetry_group = symmetry_group(p);
    return r;
}

struct PhasePrediction {
    // Key 0 is the empty boundary condition; keys 1..q are type boundaries.
    std::map<int, std::map<int, double>> limits;
    std::string case_tag;
};

inline PhasePrediction predict_limits(const StabilityReport& rep, const ModelParams& p) {
    if (p.q > 4) raise("UnsupportedQ", "phase prediction needs q <= 4");
    PhasePrediction out;
    const auto& S = rep.stable_set;
    std::vector<int> unstable;
    for (int t = 1; t <= p.q; ++t)
        if (!rep.is_stable(t)) unstable.push_back(t);
    std::map<int, double> uniform;
    for (int s : S) uniform[s] = 1.0 / static_cast<double>(S.size());
    out.limits[0] = uniform;
    for (int s : S) out.limits[s] = {{s, 1.0}};
    if (unstable.empty()) {
        out.case_tag = "IV";
        return out;
    }
    if (S.size() == 1) {
        out.case_tag = "I";
        for (int u : unstable) out.limits[u] = {{S[0], 1.0}};
    } else if (S.size() == 2) {
        int s1 = S[0], s2 = S[1];
        std::vector<bool> sym;
        for (int u : unstable) sym.push_back(p.Dx(s1, u) == p.Dx(s2, u));
        if (std::adjacent_find(sym.begin(), sym.end(), std::not_equal_to<>()) != sym.end())
            raise("InconsistentCase", "unstable types disagree on symmetry with respect to the stable pair");
        if (sym.front()) {
            out.case_tag = "IIa";
            for (int u : unstable) out.limits[u] = {{s1, 0.5}, {s2, 0.5}};
        } else {
            if (unstable.size() == 2) {
                int u = unstable[0], w = unstable[1];
                if (p.Dx(s1, w) != p.Dx(s2, u) || p.Dx(s1, u) != p.Dx(s2, w))
                    raise("InconsistentCase", "asymmetric stable pair without crossed equalities");
            }
            out.case_tag = "IIb";
            for (int u : unstable) out.limits[u] = {{p.Dx(s1, u) < p.Dx(s2, u) ? s1 : s2, 1.0}};
        }
    } else {
        out.case_tag = "III";
        for (int u : unstable) out.limits[u] = uniform;
    }
    return out;
}

}  // namespace wrsim
