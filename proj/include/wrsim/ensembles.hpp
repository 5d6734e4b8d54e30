#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "lattice.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "sampler.hpp"

namespace wrsim {

// Estimates carry their natural log so that tiny weights stay representable.
struct WeightEstimate {
    double mean = 0;
    double stderr_ = 0;
    double log_mean = -INFINITY;
    long samples = 0;
    std::string method = "exact";
    bool zero_acceptance = false;
    double log_bracket_lo = -INFINITY, log_bracket_hi = 0;

    static WeightEstimate exact(double log_value) {
        WeightEstimate w;
        w.log_mean = log_value;
        w.mean = std::exp(log_value);
        return w;
    }
};

inline double log_prob_all_phase(double volume, double z, int q) {
    if (volume == 0) return 0.0;
    return volume * (-(q - 1) * z + std::log1p(-std::exp(-z)));
}

// Probability that every cell of a region of the given volume holds type i only.
inline double prob_all_phase(double volume, double z, int q) { return std::exp(log_prob_all_phase(volume, z, q)); }

struct Budget {
    long samples = 20000;
    uint64_t seed = 1;
};

struct AdmissibilityResult {
    double p = 1;
    double stderr_ = 0;
    long samples = 0;
    bool exact = true;
};

// Probability that particles placed in typed cells are admissible, each nonempty cell holding a
// Poisson(z) number of points conditioned to be >= 1, uniform in the cell. Cell pairs of different
// types are decided exactly when they are always or never in conflict; the rest are sampled.
inline AdmissibilityResult admissibility_probability(const std::vector<Cell>& cells, const std::vector<int>& types,
                                                     const ModelParams& p, long samples, CounterRng rng) {
    int d = p.d;
    size_t n = cells.size();
    std::vector<std::pair<size_t, size_t>> pairs;
    for (size_t a = 0; a < n; ++a) {
        if (types[a] <= 0) continue;
        for (size_t b = a + 1; b < n; ++b) {
            if (types[b] <= 0 || types[b] == types[a]) continue;
            double D2 = p.D(types[a], types[b]) * p.D(types[a], types[b]);
            if (cell_min_dist2(cells[a], cells[b], d) > D2) continue;
            if (cell_max_dist2(cells[a], cells[b], d) <= D2) return {0.0, 0.0, 0, true};
            pairs.emplace_back(a, b);
        }
    }
    if (pairs.empty()) return {};
    std::vector<size_t> involved;
    for (auto [a, b] : pairs) {
        involved.push_back(a);
        involved.push_back(b);
    }
    std::sort(involved.begin(), involved.end());
    involved.erase(std::unique(involved.begin(), involved.end()), involved.end());
    std::vector<std::vector<double>> pts(n);
    long ok = 0;
    for (long s = 0; s < samples; ++s) {
        for (size_t c : involved) {
            long m = rng.poisson_positive(p.z);
            pts[c].resize(static_cast<size_t>(m * d));
            for (long k = 0; k < m; ++k)
                for (int a = 0; a < d; ++a)
                    pts[c][static_cast<size_t>(k * d + a)] = cells[c][static_cast<size_t>(a)] + rng.uniform(-0.5, 0.5);
        }
        bool good = true;
        for (auto [a, b] : pairs) {
            double D = p.D(types[a], types[b]);
            for (size_t x = 0; good && x < pts[a].size(); x += static_cast<size_t>(d))
                for (size_t y = 0; good && y < pts[b].size(); y += static_cast<size_t>(d))
                    if (dist2(&pts[a][x], &pts[b][y], d) <= D * D) good = false;
            if (!good) break;
        }
        ok += good;
    }
    AdmissibilityResult r;
    r.exact = false;
    r.samples = samples;
    r.p = samples > 0 ? static_cast<double>(ok) / static_cast<double>(samples) : 0.0;
    r.stderr_ = samples > 1 ? std::sqrt(r.p * (1 - r.p) / static_cast<double>(samples)) : 0.0;
    return r;
}

inline double log_ratio(const ModelParams& p) { return std::log(p.v() / (1 - p.v())); }

// Weight of a contour: (v/(1-v))^{|O|} times the admissibility probability of its base cells.
// Cells in phase are screened, so only base cells carry constraints.
inline WeightEstimate estimate_contour_weight(const Contour& g, const ModelParams& p, const Budget& budget) {
    if (g.unbounded) raise("UnboundedContour", "weight needs a finite base");
    std::vector<Cell> cells;
    std::vector<int> types;
    for (size_t k = 0; k < g.base.size(); ++k) {
        cells.push_back(decode(g.base[k], g.d));
        types.push_back(g.types[k]);
    }
    double lr = log_ratio(p);
    auto adm = admissibility_probability(cells, types, p, budget.samples, CounterRng(budget.seed, 0x77));
    WeightEstimate w;
    w.log_bracket_lo = static_cast<double>(g.volume()) * lr;
    w.log_bracket_hi = static_cast<double>(g.empty_count()) * lr;
    w.samples = adm.samples;
    w.method = adm.exact ? "exact" : "monte-carlo";
    if (adm.p == 0 && !adm.exact) {
        w.zero_acceptance = true;
        w.method = "bracket";
        w.log_mean = w.log_bracket_hi;
        w.mean = std::exp(w.log_mean);
        return w;
    }
    double base = std::exp(w.log_bracket_hi);
    w.log_mean = adm.p > 0 ? w.log_bracket_hi + std::log(adm.p) : -INFINITY;
    w.mean = base * adm.p;
    w.stderr_ = base * adm.stderr_;
    return w;
}

// Direct estimate of P(field on the box equals `target` and the sample is admissible) divided by
// the all-phase probability, from raw Poisson samples with a type-i collar.
inline WeightEstimate direct_field_weight(const CellField& target, int i, const ModelParams& p, const Budget& budget) {
    const Box& box = target.domain;
    CounterRng rng(budget.seed, 0xd1ec7);
    long hits = 0;
    for (long s = 0; s < budget.samples; ++s) {
        auto bc = make_type_boundary(box, i, p.z, rng, p);
        auto inner = sample_poisson(box, p.z, p.q, rng);
        ParticleConfiguration all = bc.particles;
        for (int t = 1; t <= p.q; ++t)
            all.pts[static_cast<size_t>(t)].insert(all.pts[static_cast<size_t>(t)].end(),
                                                   inner.pts[static_cast<size_t>(t)].begin(),
                                                   inner.pts[static_cast<size_t>(t)].end());
        CellField f(box, 0);
        bool mixed = false;
        for (int t = 1; t <= p.q && !mixed; ++t)
            for (size_t k = 0; k < inner.count(t); ++k) {
                auto& v = f.values[box.index(cell_of(inner.point(t, k), p.d))];
                if (v != 0 && v != t) {
                    mixed = true;
                    break;
                }
                v = static_cast<int8_t>(t);
            }
        if (mixed || f.values != target.values) continue;
        if (is_admissible(all, p)) ++hits;
    }
    double n = static_cast<double>(budget.samples);
    double freq = hits / n;
    double norm = std::exp(-log_prob_all_phase(static_cast<double>(box.volume()), p.z, p.q));
    WeightEstimate w;
    w.method = "monte-carlo";
    w.samples = budget.samples;
    w.mean = freq * norm;
    w.stderr_ = std::sqrt(freq * (1 - freq) / n) * norm;
    w.log_mean = hits > 0 ? std::log(w.mean) : -INFINITY;
    return w;
}

struct PartitionOptions {
    std::string mode = "exact";  // "exact" or "mc"
    size_t max_cells = 16;
    bool small_only = false;
    double threshold = INFINITY;
    long samples = 20000;
    uint64_t seed = 1;
};

// Cells within Chebyshev distance m of the region but outside it.
inline std::vector<CellKey> collar_of(const std::vector<CellKey>& region, int d, int m) {
    std::vector<CellKey> out;
    auto cube = cube_offsets(d, m, true);
    for (CellKey k : region) {
        Cell c = decode(k, d);
        for (const auto& o : cube) {
            CellKey n = encode(add(c, o, d), d);
            if (!std::binary_search(region.begin(), region.end(), n)) out.push_back(n);
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

// Cells whose (2m+1)-cube lies inside the region.
inline std::vector<CellKey> reduced(const std::vector<CellKey>& region, int d, int m) {
    std::vector<CellKey> out;
    auto cube = cube_offsets(d, m, true);
    for (CellKey k : region) {
        Cell c = decode(k, d);
        bool inside = true;
        for (const auto& o : cube)
            if (!std::binary_search(region.begin(), region.end(), encode(add(c, o, d), d))) {
                inside = false;
                break;
            }
        if (inside) out.push_back(k);
    }
    return out;
}

inline std::vector<CellKey> box_cells(const Box& b) {
    std::vector<CellKey> out;
    for (size_t idx = 0; idx < b.volume(); ++idx) out.push_back(encode(b.cell(idx), b.d));
    std::sort(out.begin(), out.end());
    return out;
}

namespace detail {

// Field over the bounding box of region+collar: region cells take `assign`, everything else type i.
inline CellField embed(const std::vector<CellKey>& region, const std::vector<int>& assign, int d, int i) {
    std::vector<CellKey> all = collar_of(region, d, 2);
    all.insert(all.end(), region.begin(), region.end());
    Box bb = bounding_box(all, d);
    CellField f(bb, i, i);
    for (size_t k = 0; k < region.size(); ++k) f.set(decode(region[k], d), assign[k]);
    return f;
}

// True when any type other than i placed in any region cell is certainly excluded by the collar.
inline bool collar_excludes_all(const std::vector<CellKey>& region, const std::vector<CellKey>& collar, int d, int i,
                                const ModelParams& p) {
    for (CellKey k : region) {
        Cell c = decode(k, d);
        for (int u = 1; u <= p.q; ++u) {
            if (u == i) continue;
            double D2 = p.D(i, u) * p.D(i, u);
            bool hit = false;
            for (CellKey e : collar)
                if (cell_max_dist2(c, decode(e, d), d) <= D2) {
                    hit = true;
                    break;
                }
            if (!hit) return false;
        }
    }
    return true;
}

}  // namespace detail

// Rarefied partition function of a cell region with external type i: P(admissible with a type-i collar)
// divided by the all-phase probability. Exact mode enumerates cell types; admissibility of each field is
// exact when decided by cell geometry and otherwise sampled with a seed derived from the field's type
// pattern up to relabeling, so fields related by a diameter symmetry get identical estimates.
inline WeightEstimate micro_partition_function(const std::vector<CellKey>& region_in, int d, int i,
                                               const ModelParams& p, const PartitionOptions& opt) {
    std::vector<CellKey> region = region_in;
    std::sort(region.begin(), region.end());
    if (region.empty()) return WeightEstimate::exact(0.0);
    size_t n = region.size();
    auto collar = collar_of(region, d, 2);
    double lr = log_ratio(p);
    if (opt.mode == "mc") {
        CounterRng rng(opt.seed, 0x3c);
        std::vector<Cell> cells;
        for (CellKey k : collar) cells.push_back(decode(k, d));
        for (CellKey k : region) cells.push_back(decode(k, d));
        long hits = 0;
        for (long s = 0; s < opt.samples; ++s) {
            ParticleConfiguration c(d, p.q, Box());
            double x[kMaxDim];
            for (size_t k = 0; k < collar.size(); ++k) {
                long m = rng.poisson_positive(p.z);
                for (long j = 0; j < m; ++j) {
                    for (int a = 0; a < d; ++a) x[a] = cells[k][static_cast<size_t>(a)] + rng.uniform(-0.5, 0.5);
                    c.add(i, x);
                }
            }
            std::vector<int> assign(n, 0);
            bool mixed = false;
            for (int t = 1; t <= p.q; ++t)
                for (size_t k = 0; k < n; ++k) {
                    long m = rng.poisson(p.z);
                    if (m == 0) continue;
                    if (assign[k] != 0) mixed = true;
                    assign[k] = t;
                    for (long j = 0; j < m; ++j) {
                        for (int a = 0; a < d; ++a)
                            x[a] = cells[collar.size() + k][static_cast<size_t>(a)] + rng.uniform(-0.5, 0.5);
                        c.add(t, x);
                    }
                }
            if (mixed || !is_admissible(c, p)) continue;
            if (opt.small_only) {
                auto col = extract_contours(detail::embed(region, assign, d, i), opt.threshold);
                bool all_small = true;
                for (const auto& g : col.contours) all_small = all_small && g.small;
                if (!all_small) continue;
            }
            ++hits;
        }
        double N = static_cast<double>(opt.samples);
        double freq = hits / N;
        double norm = std::exp(-log_prob_all_phase(static_cast<double>(n), p.z, p.q));
        WeightEstimate w;
        w.method = "monte-carlo";
        w.samples = opt.samples;
        w.mean = freq * norm;
        w.stderr_ = std::sqrt(freq * (1 - freq) / N) * norm;
        w.log_mean = hits > 0 ? std::log(w.mean) : -INFINITY;
        return w;
    }
    // Only types {0, i} fit and the region is too small to hold a large contour.
    if (detail::collar_excludes_all(region, collar, d, i, p)) {
        Box bb = detail::bounding_box(region, d);
        int diam = 0;
        for (int k = 0; k < d; ++k) diam = std::max(diam, bb.side(k));
        if (!opt.small_only || diam < opt.threshold) {
            auto w = WeightEstimate::exact(-static_cast<double>(n) * std::log1p(-p.v()));
            w.method = "closed-form";
            return w;
        }
    }
    if (n > opt.max_cells) raise("TooLarge", "region has " + std::to_string(n) + " cells, cap " + std::to_string(opt.max_cells));
    std::vector<Cell> cells;
    std::vector<int> types;
    for (CellKey k : collar) {
        cells.push_back(decode(k, d));
        types.push_back(i);
    }
    size_t off = cells.size();
    for (CellKey k : region) {
        cells.push_back(decode(k, d));
        types.push_back(0);
    }
    // Cells that can constrain region cell k: earlier region cells and the collar.
    double mean = 0, var = 0;
    long sampled = 0;
    bool any_mc = false;
    std::vector<int> assign(n, 0);
    std::function<void(size_t)> rec = [&](size_t k) {
        if (k == n) {
            std::vector<uint64_t> relabel(static_cast<size_t>(p.q + 1), 0);
            uint64_t next = 1, h = opt.seed;
            for (size_t c = 0; c < cells.size(); ++c) {
                int t = types[c];
                if (t > 0 && relabel[static_cast<size_t>(t)] == 0) relabel[static_cast<size_t>(t)] = next++;
                h = splitmix64(h ^ (t > 0 ? relabel[static_cast<size_t>(t)] : 0));
            }
            if (opt.small_only) {
                auto col = extract_contours(detail::embed(region, assign, d, i), opt.threshold);
                for (const auto& g : col.contours)
                    if (!g.small) return;
            }
            auto adm = admissibility_probability(cells, types, p, opt.samples, CounterRng(h, 0xadd));
            if (adm.p == 0 && adm.exact) return;
            double log_f = static_cast<double>(std::count(assign.begin(), assign.end(), 0)) * lr;
            double f = std::exp(log_f);
            mean += f * adm.p;
            var += f * f * adm.stderr_ * adm.stderr_;
            if (!adm.exact) {
                any_mc = true;
                sampled += adm.samples;
            }
            return;
        }
        for (int t = 0; t <= p.q; ++t) {
            if (t > 0) {
                bool dead = false;
                for (size_t c = 0; c < off + k && !dead; ++c) {
                    int u = types[c];
                    if (u <= 0 || u == t) continue;
                    double D = p.D(t, u);
                    dead = cell_max_dist2(cells[off + k], cells[c], d) <= D * D;
                }
                if (dead) continue;
            }
            types[off + k] = t;
            assign[k] = t;
            rec(k + 1);
        }
        types[off + k] = 0;
        assign[k] = 0;
    };
    rec(0);
    WeightEstimate w;
    w.method = any_mc ? "enumeration+monte-carlo" : "exact";
    w.samples = sampled;
    w.mean = mean;
    w.stderr_ = std::sqrt(var);
    w.log_mean = mean > 0 ? std::log(mean) : -INFINITY;
    return w;
}

inline WeightEstimate micro_partition_function(const Box& box, int i, const ModelParams& p, const PartitionOptions& opt) {
    if (box.empty()) return WeightEstimate::exact(0.0);
    return micro_partition_function(box_cells(box), box.d, i, p, opt);
}

// W = w * prod_s Xi(3-reduced interior | interior type) / Xi(3-reduced interior | external type).
inline WeightEstimate renormalized_weight(const Contour& g, const ModelParams& p, const Budget& budget,
                                          const PartitionOptions& opt = {}) {
    WeightEstimate w = estimate_contour_weight(g, p, budget);
    double log_factor = 0, rel_var = 0;
    for (const auto& r : g.interiors) {
        auto core = reduced(r.cells, g.d, 3);
        if (core.empty() || r.type == g.external_type) continue;
        auto num = micro_partition_function(core, g.d, r.type, p, opt);
        auto den = micro_partition_function(core, g.d, g.external_type, p, opt);
        log_factor += num.log_mean - den.log_mean;
        if (num.mean > 0) rel_var += std::pow(num.stderr_ / num.mean, 2);
        if (den.mean > 0) rel_var += std::pow(den.stderr_ / den.mean, 2);
    }
    if (log_factor != 0 || rel_var != 0) {
        double f = std::exp(log_factor);
        double rel = w.mean > 0 ? w.stderr_ / w.mean : 0.0;
        w.log_mean += log_factor;
        w.mean *= f;
        w.stderr_ = w.mean * std::sqrt(rel * rel + rel_var);
    }
    return w;
}

// Product of renormalized weights of mutually external contours.
inline WeightEstimate peierls_bound(const ContourCollection& col, const ModelParams& p, const Budget& budget,
                                    const PartitionOptions& opt = {}) {
    WeightEstimate out = WeightEstimate::exact(0.0);
    double rel_var = 0;
    for (const auto& g : col.contours) {
        auto w = renormalized_weight(g, p, budget, opt);
        out.log_mean += w.log_mean;
        if (w.mean > 0) rel_var += std::pow(w.stderr_ / w.mean, 2);
        if (w.method != "exact") out.method = "monte-carlo";
        out.samples += w.samples;
    }
    out.mean = std::exp(out.log_mean);
    out.stderr_ = out.mean * std::sqrt(rel_var);
    return out;
}

struct LayerWeight {
    WeightEstimate w;
    WeightEstimate W;
    double a = 0;
};

// Weight of a boundary layer: large contour weights times small-contour partition functions on
// its unstable components; W divides the latter by the stable reference type; a is the KP functional.
inline LayerWeight boundary_layer_weight(const BoundaryLayer& layer, const ModelParams& p, int stable_type,
                                         const Budget& budget, PartitionOptions opt = {}) {
    LayerWeight out;
    out.w = WeightEstimate::exact(0.0);
    out.W = WeightEstimate::exact(0.0);
    double rel_w = 0, rel_W = 0;
    for (size_t m : layer.members) {
        auto w = estimate_contour_weight(layer.large.contours[m], p, budget);
        out.w.log_mean += w.log_mean;
        out.W.log_mean += w.log_mean;
        if (w.mean > 0) {
            rel_w += std::pow(w.stderr_ / w.mean, 2);
            rel_W += std::pow(w.stderr_ / w.mean, 2);
        }
    }
    opt.small_only = true;
    opt.threshold = p.small_threshold();
    int d = layer.large.d;
    for (const auto& r : layer.components) {
        auto num = micro_partition_function(r.cells, d, r.type, p, opt);
        auto den = micro_partition_function(r.cells, d, stable_type, p, opt);
        out.w.log_mean += num.log_mean;
        out.W.log_mean += num.log_mean - den.log_mean;
        if (num.mean > 0) {
            rel_w += std::pow(num.stderr_ / num.mean, 2);
            rel_W += std::pow(num.stderr_ / num.mean, 2);
        }
        if (den.mean > 0) rel_W += std::pow(den.stderr_ / den.mean, 2);
    }
    out.w.mean = std::exp(out.w.log_mean);
    out.w.stderr_ = out.w.mean * std::sqrt(rel_w);
    out.W.mean = std::exp(out.W.log_mean);
    out.W.stderr_ = out.W.mean * std::sqrt(rel_W);
    double v = p.v();
    double tail = p.small_threshold() * std::log(v);
    size_t vol_v = 0;
    for (const auto& r : layer.components) vol_v += r.cells.size();
    out.a = static_cast<double>(layer.large_part.size()) * std::log1p(std::pow(v, 0.8)) +
            static_cast<double>(vol_v) * std::log1p(std::exp(tail));
    return out;
}

}  // namespace wrsim
