#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace wrsim {

// q lists of points in R^d living inside `domain` (a block of unit cells).
struct ParticleConfiguration {
    int d = 2;
    int q = 2;
    Box domain;
    std::vector<std::vector<double>> pts;  // pts[t] holds flat coordinates of type t; pts[0] unused

    ParticleConfiguration() = default;
    ParticleConfiguration(int dim, int types, const Box& box)
        : d(dim), q(types), domain(box), pts(static_cast<size_t>(types + 1)) {}

    size_t count(int t) const { return pts[static_cast<size_t>(t)].size() / static_cast<size_t>(d); }
    size_t total() const {
        size_t n = 0;
        for (int t = 1; t <= q; ++t) n += count(t);
        return n;
    }
    const double* point(int t, size_t k) const { return pts[static_cast<size_t>(t)].data() + k * static_cast<size_t>(d); }
    void add(int t, const double* x) { pts[static_cast<size_t>(t)].insert(pts[static_cast<size_t>(t)].end(), x, x + d); }
    bool operator==(const ParticleConfiguration& o) const {
        return d == o.d && q == o.q && domain == o.domain && pts == o.pts;
    }
};

inline void uniform_point(const Box& box, CounterRng& rng, double* x) {
    for (int k = 0; k < box.d; ++k) x[k] = rng.uniform(box.lower(k), box.upper(k));
}

inline ParticleConfiguration sample_poisson(const Box& box, double z, int q, CounterRng& rng) {
    ParticleConfiguration c(box.d, q, box);
    if (box.empty()) return c;
    double mean = z * box.continuum_volume();
    double x[kMaxDim];
    for (int t = 1; t <= q; ++t) {
        long n = rng.poisson(mean);
        for (long k = 0; k < n; ++k) {
            uniform_point(box, rng, x);
            c.add(t, x);
        }
    }
    return c;
}

inline double dist2(const double* a, const double* b, int d) {
    double s = 0;
    for (int k = 0; k < d; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return s;
}

namespace detail {

// Buckets one point list on a grid of side h for range queries.
struct PointGrid {
    int d;
    double h;
    std::vector<long> keys;
    std::vector<size_t> order;

    PointGrid(const std::vector<double>& pts, int dim, double side) : d(dim), h(side) {
        size_t n = pts.size() / static_cast<size_t>(d);
        keys.resize(n);
        order.resize(n);
        for (size_t k = 0; k < n; ++k) {
            keys[k] = key(pts.data() + k * static_cast<size_t>(d));
            order[k] = k;
        }
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return keys[a] < keys[b]; });
        std::vector<long> sorted(n);
        for (size_t k = 0; k < n; ++k) sorted[k] = keys[order[k]];
        keys = std::move(sorted);
    }
    long key_of(const long* c) const {
        long k = 0;
        for (int i = 0; i < d; ++i) k = k * 65536 + (c[i] + 32768);
        return k;
    }
    long key(const double* x) const {
        long c[kMaxDim];
        for (int i = 0; i < d; ++i) c[i] = static_cast<long>(std::floor(x[i] / h));
        return key_of(c);
    }
    // Calls f(index) for every point in the 3^d buckets around x; stops when f returns true.
    template <class F>
    bool any_near(const double* x, F&& f) const {
        long base[kMaxDim], c[kMaxDim];
        for (int i = 0; i < d; ++i) base[i] = static_cast<long>(std::floor(x[i] / h));
        int total = 1;
        for (int i = 0; i < d; ++i) total *= 3;
        for (int m = 0; m < total; ++m) {
            int r = m;
            for (int i = 0; i < d; ++i) {
                c[i] = base[i] + (r % 3) - 1;
                r /= 3;
            }
            long k = key_of(c);
            auto lo = std::lower_bound(keys.begin(), keys.end(), k);
            for (auto it = lo; it != keys.end() && *it == k; ++it)
                if (f(order[static_cast<size_t>(it - keys.begin())])) return true;
        }
        return false;
    }
};

}  // namespace detail

// True iff every cross-type pair is at distance strictly greater than its diameter.
inline bool is_admissible(const ParticleConfiguration& c, const ModelParams& p) {
    for (int j = 2; j <= c.q; ++j) {
        if (c.count(j) == 0) continue;
        for (int i = 1; i < j; ++i) {
            if (c.count(i) == 0) continue;
            double D = p.D(i, j);
            detail::PointGrid grid(c.pts[static_cast<size_t>(j)], c.d, std::max(D, 1e-9));
            const auto& pj = c.pts[static_cast<size_t>(j)];
            for (size_t k = 0; k < c.count(i); ++k) {
                const double* x = c.point(i, k);
                bool bad = grid.any_near(x, [&](size_t m) {
                    return dist2(x, pj.data() + m * static_cast<size_t>(c.d), c.d) <= D * D;
                });
                if (bad) return false;
            }
        }
    }
    return true;
}

enum class BoundaryKind { Empty, TypeDense, Explicit };

struct BoundaryCondition {
    BoundaryKind kind = BoundaryKind::Empty;
    int type = 0;                     // boundary type for TypeDense
    ParticleConfiguration particles;  // collar particles (TypeDense) or fixed exterior particles (Explicit)

    static BoundaryCondition empty() { return {}; }
    static BoundaryCondition explicit_boundary(ParticleConfiguration outside) {
        BoundaryCondition bc;
        bc.kind = BoundaryKind::Explicit;
        bc.particles = std::move(outside);
        return bc;
    }
};

inline bool in_box(const Box& b, const double* x) {
    for (int k = 0; k < b.d; ++k)
        if (x[k] < b.lower(k) || x[k] >= b.upper(k)) return false;
    return true;
}

// Type-i particles in every collar cell of the twice-extended box: Poisson counts conditioned to be >= 1.
inline BoundaryCondition make_type_boundary(const Box& box, int i, double z, CounterRng& rng, const ModelParams& p) {
    BoundaryCondition bc;
    bc.kind = BoundaryKind::TypeDense;
    bc.type = i;
    Box outer = box.expanded(2);
    bc.particles = ParticleConfiguration(box.d, p.q, outer);
    double x[kMaxDim];
    for (size_t idx = 0; idx < outer.volume(); ++idx) {
        Cell c = outer.cell(idx);
        if (box.contains(c)) continue;
        long n = rng.poisson_positive(z);
        for (long k = 0; k < n; ++k) {
            for (int a = 0; a < box.d; ++a) x[a] = c[static_cast<size_t>(a)] + rng.uniform(-0.5, 0.5);
            bc.particles.add(i, x);
        }
    }
    return bc;
}

struct ChainSettings {
    uint64_t seed = 1;
    uint64_t stream = 0;
    long sweeps = 100;
    long burn_in = 10;
    long thinning = 1;
    double p_birth = 0.4;
    double p_death = 0.4;
    double p_translate = 0.2;
    double step = 0.5;      // half-width of translation proposals
    int initial_type = 0;   // 0: start empty; t: fill the box with a Poisson sample of type t
};

// Metropolis-Hastings birth/death/translate chain for the hard-core Gibbs law in a box.
class Chain {
public:
    Chain(const Box& box, const BoundaryCondition& bc, const ModelParams& p, const ChainSettings& s)
        : box_(box), bc_(bc), p_(p), s_(s), rng_(s.seed, s.stream), d_(box.d) {
        validate();
        region_ = bc.kind == BoundaryKind::TypeDense ? box.expanded(2) : box;
        volume_ = region_.continuum_volume();
        sweep_len_ = std::max<long>(1, static_cast<long>(std::ceil(p_.z * volume_)));
        setup_bins();
        if (bc.kind == BoundaryKind::Explicit) {
            if (!is_admissible(bc.particles, p_)) raise("InadmissibleBoundary", "explicit boundary is not admissible");
            load(bc.particles, false);
        }
        if (bc.kind == BoundaryKind::TypeDense) {
            collar_count_.assign(region_.volume(), 0);
            for (size_t k = 0; k < bc.particles.count(bc.type); ++k) {
                const double* x = bc.particles.point(bc.type, k);
                if (!in_box(region_, x) || box_.contains(cell_of(x, d_)))
                    raise("InadmissibleBoundary", "collar particle outside the collar");
            }
            for (int t = 1; t <= p_.q; ++t)
                if (t != bc.type && bc.particles.count(t) > 0) raise("InadmissibleBoundary", "foreign type in collar");
            load(bc.particles, true);
            for (size_t idx = 0; idx < region_.volume(); ++idx) {
                Cell c = region_.cell(idx);
                if (!box_.contains(c) && collar_count_[idx] == 0)
                    raise("InadmissibleBoundary", "empty collar cell");
            }
        }
        if (s_.initial_type > 0) {
            CounterRng init = rng_.split(0x1a17);
            auto fill = sample_poisson(box_, p_.z, 1, init);
            for (size_t k = 0; k < fill.count(1); ++k) {
                const double* x = fill.point(1, k);
                if (conflicts(s_.initial_type, x, npos))
                    raise("InadmissibleBoundary", "ordered start conflicts with the boundary");
                insert(s_.initial_type, x, true);
            }
        }
    }

    static constexpr size_t npos = static_cast<size_t>(-1);

    void step() {
        double u = rng_.uniform();
        if (u < s_.p_birth) birth();
        else if (u < s_.p_birth + s_.p_death) death();
        else translate();
    }
    void sweep() {
        for (long k = 0; k < sweep_len_; ++k) step();
    }

    ParticleConfiguration state() const {
        ParticleConfiguration c(d_, p_.q, region_);
        for (size_t k = 0; k < type_.size(); ++k)
            if (movable_[k]) c.add(type_[k], &pos_[k * static_cast<size_t>(d_)]);
        return c;
    }

    size_t movable_count() const { return movable_ids_.size(); }
    long sweep_length() const { return sweep_len_; }
    const Box& region() const { return region_; }
    const CounterRng& rng() const { return rng_; }
    long accepted() const { return accepted_; }
    long proposed() const { return proposed_; }

private:
    void validate() const {
        double total = s_.p_birth + s_.p_death + s_.p_translate;
        if (s_.p_birth < 0 || s_.p_death < 0 || s_.p_translate < 0 || std::abs(total - 1.0) > 1e-9)
            raise("InvalidSettings", "move probabilities must be nonnegative and sum to 1");
        if (s_.p_birth == 0 || s_.p_death == 0)
            raise("NonergodicSettings", "birth and death moves both need positive probability");
        if (s_.sweeps < 0 || s_.burn_in < 0 || s_.thinning < 1 || (s_.sweeps > 0 && s_.sweeps <= s_.burn_in))
            raise("InvalidSettings", "need sweeps > burn_in >= 0 and thinning >= 1");
        if (d_ > kMaxDim) raise("InvalidParams", "dimension above the supported maximum");
    }

    void setup_bins() {
        bin_side_ = std::max(1.0, p_.a() / 4.0);
        Box reach = region_.expanded(static_cast<int>(std::ceil(p_.b())) + 1);
        for (int k = 0; k < d_; ++k) {
            origin_[k] = reach.lower(k);
            nbins_[k] = static_cast<long>(std::ceil((reach.upper(k) - reach.lower(k)) / bin_side_)) + 1;
        }
        size_t total = 1;
        for (int k = 0; k < d_; ++k) total *= static_cast<size_t>(nbins_[k]);
        bins_.assign(total * static_cast<size_t>(p_.q + 1), {});
    }

    long bin_coord(double x, int k) const {
        long c = static_cast<long>(std::floor((x - origin_[k]) / bin_side_));
        return std::clamp<long>(c, 0, nbins_[k] - 1);
    }
    size_t bin_index(const long* c) const {
        size_t idx = 0;
        for (int k = 0; k < d_; ++k) idx = idx * static_cast<size_t>(nbins_[k]) + static_cast<size_t>(c[k]);
        return idx;
    }
    std::vector<uint32_t>& bin(size_t idx, int t) { return bins_[idx * static_cast<size_t>(p_.q + 1) + static_cast<size_t>(t)]; }
    const std::vector<uint32_t>& bin(size_t idx, int t) const {
        return bins_[idx * static_cast<size_t>(p_.q + 1) + static_cast<size_t>(t)];
    }
    size_t bin_of(const double* x) const {
        long c[kMaxDim];
        for (int k = 0; k < d_; ++k) c[k] = bin_coord(x[k], k);
        return bin_index(c);
    }

    void load(const ParticleConfiguration& c, bool movable) {
        for (int t = 1; t <= c.q; ++t)
            for (size_t k = 0; k < c.count(t); ++k) insert(t, c.point(t, k), movable);
    }

    void insert(int t, const double* x, bool movable) {
        size_t id;
        if (!free_.empty()) {
            id = free_.back();
            free_.pop_back();
        } else {
            id = type_.size();
            type_.push_back(0);
            movable_.push_back(false);
            bin_slot_.push_back(0);
            mov_slot_.push_back(0);
            pos_.resize(pos_.size() + static_cast<size_t>(d_));
        }
        type_[id] = t;
        movable_[id] = movable;
        std::copy(x, x + d_, &pos_[id * static_cast<size_t>(d_)]);
        auto& list = bin(bin_of(x), t);
        bin_slot_[id] = list.size();
        list.push_back(static_cast<uint32_t>(id));
        if (movable) {
            mov_slot_[id] = movable_ids_.size();
            movable_ids_.push_back(static_cast<uint32_t>(id));
        }
        if (!collar_count_.empty()) adjust_collar(x, +1);
    }

    void erase(size_t id) {
        const double* x = &pos_[id * static_cast<size_t>(d_)];
        if (!collar_count_.empty()) adjust_collar(x, -1);
        auto& list = bin(bin_of(x), type_[id]);
        size_t slot = bin_slot_[id];
        list[slot] = list.back();
        bin_slot_[list[slot]] = slot;
        list.pop_back();
        size_t ms = mov_slot_[id];
        movable_ids_[ms] = movable_ids_.back();
        mov_slot_[movable_ids_[ms]] = ms;
        movable_ids_.pop_back();
        type_[id] = 0;
        free_.push_back(id);
    }

    void adjust_collar(const double* x, int delta) {
        Cell c = cell_of(x, d_);
        if (region_.contains(c) && !box_.contains(c)) collar_count_[region_.index(c)] += delta;
    }
    // Would removing a particle at x empty a collar cell?
    bool last_in_collar_cell(const double* x) const {
        if (collar_count_.empty()) return false;
        Cell c = cell_of(x, d_);
        return region_.contains(c) && !box_.contains(c) && collar_count_[region_.index(c)] <= 1;
    }

    // Any particle of another type within its exclusion diameter of x (ignoring particle `self`)?
    bool conflicts(int t, const double* x, size_t self) const {
        long lo[kMaxDim], hi[kMaxDim], c[kMaxDim];
        for (int u = 1; u <= p_.q; ++u) {
            if (u == t) continue;
            double D = p_.D(t, u), D2 = D * D;
            for (int k = 0; k < d_; ++k) {
                lo[k] = bin_coord(x[k] - D, k);
                hi[k] = bin_coord(x[k] + D, k);
                c[k] = lo[k];
            }
            for (;;) {
                const auto& list = bin(bin_index(c), u);
                if (!list.empty()) {
                    double mn = 0, mx = 0;
                    for (int k = 0; k < d_; ++k) {
                        double a = origin_[k] + static_cast<double>(c[k]) * bin_side_, b = a + bin_side_;
                        double g = x[k] < a ? a - x[k] : (x[k] > b ? x[k] - b : 0.0);
                        double f = std::max(std::abs(x[k] - a), std::abs(x[k] - b));
                        mn += g * g;
                        mx += f * f;
                    }
                    if (mn <= D2) {
                        if (mx <= D2) {
                            for (uint32_t id : list)
                                if (id != self) return true;
                        } else {
                            for (uint32_t id : list)
                                if (id != self && dist2(x, &pos_[id * static_cast<size_t>(d_)], d_) <= D2) return true;
                        }
                    }
                }
                int k = d_ - 1;
                while (k >= 0 && c[k] == hi[k]) {
                    c[k] = lo[k];
                    --k;
                }
                if (k < 0) break;
                ++c[k];
            }
        }
        return false;
    }

    void birth() {
        ++proposed_;
        int t = 1 + static_cast<int>(rng_.below(static_cast<uint64_t>(p_.q)));
        double x[kMaxDim];
        uniform_point(region_, rng_, x);
        double n = static_cast<double>(movable_ids_.size());
        double ratio = p_.z * p_.q * volume_ * s_.p_death / (s_.p_birth * (n + 1.0));
        if (ratio < 1.0 && rng_.uniform() >= ratio) return;
        if (conflicts(t, x, npos)) return;
        insert(t, x, true);
        ++accepted_;
    }

    void death() {
        ++proposed_;
        if (movable_ids_.empty()) return;
        size_t id = movable_ids_[rng_.below(movable_ids_.size())];
        double n = static_cast<double>(movable_ids_.size());
        double ratio = s_.p_birth * n / (p_.z * p_.q * volume_ * s_.p_death);
        if (ratio < 1.0 && rng_.uniform() >= ratio) return;
        if (last_in_collar_cell(&pos_[id * static_cast<size_t>(d_)])) return;
        erase(id);
        ++accepted_;
    }

    void translate() {
        ++proposed_;
        if (movable_ids_.empty()) return;
        size_t id = movable_ids_[rng_.below(movable_ids_.size())];
        double* old = &pos_[id * static_cast<size_t>(d_)];
        double x[kMaxDim];
        for (int k = 0; k < d_; ++k) x[k] = old[k] + rng_.uniform(-s_.step, s_.step);
        if (!in_box(region_, x)) return;
        int t = type_[id];
        if (!collar_count_.empty()) {
            Cell from = cell_of(old, d_), to = cell_of(x, d_);
            if (from != to && last_in_collar_cell(old)) return;
        }
        if (conflicts(t, x, id)) return;
        erase(id);
        insert(t, x, true);
        ++accepted_;
    }

    Box box_;
    BoundaryCondition bc_;
    ModelParams p_;
    ChainSettings s_;
    CounterRng rng_;
    int d_;
    Box region_;
    double volume_ = 0;
    long sweep_len_ = 1;

    double bin_side_ = 1;
    double origin_[kMaxDim]{};
    long nbins_[kMaxDim]{};
    std::vector<std::vector<uint32_t>> bins_;

    std::vector<int> type_;
    std::vector<bool> movable_;
    std::vector<double> pos_;
    std::vector<size_t> bin_slot_, mov_slot_, free_;
    std::vector<uint32_t> movable_ids_;
    std::vector<int> collar_count_;
    long accepted_ = 0, proposed_ = 0;
};

using SampleCallback = std::function<void(const ParticleConfiguration&, long sweep)>;

// Runs the chain and hands every retained (post burn-in, thinned) state to `emit`.
// With zero sweeps the initial state is emitted once.
inline void run_chain(const Box& box, const BoundaryCondition& bc, const ModelParams& p, const ChainSettings& s,
                      const SampleCallback& emit) {
    Chain chain(box, bc, p, s);
    if (s.sweeps == 0) {
        emit(chain.state(), 0);
        return;
    }
    for (long k = 1; k <= s.sweeps; ++k) {
        chain.sweep();
        if (k > s.burn_in && (k - s.burn_in) % s.thinning == 0) emit(chain.state(), k);
    }
}

inline std::vector<ParticleConfiguration> run_chain(const Box& box, const BoundaryCondition& bc, const ModelParams& p,
                                                    const ChainSettings& s) {
    std::vector<ParticleConfiguration> out;
    run_chain(box, bc, p, s, [&](const ParticleConfiguration& c, long) { out.push_back(c); });
    return out;
}

struct Estimate {
    double mean = 0;
    double stderr_ = 0;
    size_t n = 0;
};

// Mean with a standard error taken as the larger of the binomial and batch-means errors.
inline Estimate estimate_mean(const std::vector<double>& xs) {
    Estimate e;
    e.n = xs.size();
    if (xs.empty()) return e;
    double sum = 0;
    for (double x : xs) sum += x;
    e.mean = sum / static_cast<double>(xs.size());
    double var = 0;
    for (double x : xs) var += (x - e.mean) * (x - e.mean);
    double n = static_cast<double>(xs.size());
    double iid = xs.size() > 1 ? std::sqrt(var / (n - 1) / n) : 0.0;
    size_t nb = static_cast<size_t>(std::sqrt(n));
    double batch = 0;
    if (nb >= 2) {
        size_t len = xs.size() / nb;
        std::vector<double> means(nb, 0.0);
        for (size_t b = 0; b < nb; ++b) {
            for (size_t k = 0; k < len; ++k) means[b] += xs[b * len + k];
            means[b] /= static_cast<double>(len);
        }
        double m = 0, v = 0;
        for (double x : means) m += x;
        m /= static_cast<double>(nb);
        for (double x : means) v += (x - m) * (x - m);
        batch = std::sqrt(v / static_cast<double>(nb - 1) / static_cast<double>(nb));
    }
    e.stderr_ = std::max(iid, batch);
    return e;
}

template <class Pred>
Estimate estimate_probability(Pred&& pred, const std::vector<ParticleConfiguration>& samples) {
    std::vector<double> xs;
    xs.reserve(samples.size());
    for (const auto& c : samples) xs.push_back(pred(c) ? 1.0 : 0.0);
    return estimate_mean(xs);
}

// Snapshot: one JSON header line, then per type a little-endian uint64 count and count*d float64 values.
inline void write_snapshot(std::ostream& os, const ParticleConfiguration& c, double z, uint64_t seed, long sweep) {
    nlohmann::json h;
    h["d"] = c.d;
    h["q"] = c.q;
    h["z"] = z;
    h["box"] = {{"lo", c.domain.lo_vec()}, {"hi", c.domain.hi_vec()}};
    h["seed"] = seed;
    h["sweep"] = sweep;
    std::vector<size_t> counts;
    for (int t = 1; t <= c.q; ++t) counts.push_back(c.count(t));
    h["counts"] = counts;
    os << h.dump() << '\n';
    auto put = [&](uint64_t v) {
        unsigned char b[8];
        for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
        os.write(reinterpret_cast<const char*>(b), 8);
    };
    for (int t = 1; t <= c.q; ++t) {
        put(c.count(t));
        for (double x : c.pts[static_cast<size_t>(t)]) {
            uint64_t bits;
            std::memcpy(&bits, &x, 8);
            put(bits);
        }
    }
}

struct Snapshot {
    ParticleConfiguration config;
    double z = 0;
    uint64_t seed = 0;
    long sweep = 0;
};

inline Snapshot read_snapshot(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) raise("ParseError", "missing snapshot header");
    auto h = nlohmann::json::parse(line);
    Snapshot s;
    int d = h.at("d"), q = h.at("q");
    Box box;
    box.d = d;
    auto lo = h.at("box").at("lo").get<std::vector<int>>();
    auto hi = h.at("box").at("hi").get<std::vector<int>>();
    for (int k = 0; k < d; ++k) {
        box.lo[static_cast<size_t>(k)] = lo[static_cast<size_t>(k)];
        box.hi[static_cast<size_t>(k)] = hi[static_cast<size_t>(k)];
    }
    s.config = ParticleConfiguration(d, q, box);
    s.z = h.at("z");
    s.seed = h.at("seed");
    s.sweep = h.at("sweep");
    auto get = [&]() {
        unsigned char b[8];
        if (!is.read(reinterpret_cast<char*>(b), 8)) raise("ParseError", "truncated snapshot");
        uint64_t v = 0;
        for (int k = 0; k < 8; ++k) v |= static_cast<uint64_t>(b[k]) << (8 * k);
        return v;
    };
    for (int t = 1; t <= q; ++t) {
        uint64_t n = get();
        auto& v = s.config.pts[static_cast<size_t>(t)];
        v.resize(n * static_cast<uint64_t>(d));
        for (double& x : v) {
            uint64_t bits = get();
            std::memcpy(&x, &bits, 8);
        }
    }
    return s;
}

}  // namespace wrsim
