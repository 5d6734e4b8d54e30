#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "errors.hpp"

namespace wrsim {

constexpr int kMaxDim = 4;
using Cell = std::array<int, kMaxDim>;

// Packs a lattice cell into a sortable 64-bit key (16 bits per coordinate).
using CellKey = int64_t;
constexpr int kKeyOffset = 1 << 14;

inline CellKey encode(const Cell& c, int d) {
    CellKey k = 0;
    for (int i = 0; i < d; ++i) k = (k << 16) | static_cast<CellKey>(c[static_cast<size_t>(i)] + kKeyOffset);
    return k;
}

inline Cell decode(CellKey k, int d) {
    Cell c{};
    for (int i = d - 1; i >= 0; --i) {
        c[static_cast<size_t>(i)] = static_cast<int>(k & 0xffff) - kKeyOffset;
        k >>= 16;
    }
    return c;
}

// Axis-aligned block of unit cells given by inclusive integer centres lo..hi.
// Cell y covers the open cube of side 1 centred at y.
struct Box {
    int d = 2;
    Cell lo{}, hi{};

    Box() = default;
    Box(int dim, const Cell& l, const Cell& h) : d(dim), lo(l), hi(h) {}

    static Box cube(int dim, int side, int origin = 0) {
        Box b;
        b.d = dim;
        for (int i = 0; i < dim; ++i) {
            b.lo[static_cast<size_t>(i)] = origin;
            b.hi[static_cast<size_t>(i)] = origin + side - 1;
        }
        return b;
    }

    bool empty() const {
        for (int i = 0; i < d; ++i)
            if (hi[static_cast<size_t>(i)] < lo[static_cast<size_t>(i)]) return true;
        return false;
    }
    int side(int i) const { return std::max(0, hi[static_cast<size_t>(i)] - lo[static_cast<size_t>(i)] + 1); }
    size_t volume() const {
        size_t v = 1;
        for (int i = 0; i < d; ++i) v *= static_cast<size_t>(side(i));
        return v;
    }
    bool contains(const Cell& c) const {
        for (int i = 0; i < d; ++i) {
            auto k = static_cast<size_t>(i);
            if (c[k] < lo[k] || c[k] > hi[k]) return false;
        }
        return true;
    }
    // Chebyshev enlargement by m cells (m < 0 shrinks).
    Box expanded(int m) const {
        Box b = *this;
        for (int i = 0; i < d; ++i) {
            b.lo[static_cast<size_t>(i)] -= m;
            b.hi[static_cast<size_t>(i)] += m;
        }
        return b;
    }
    size_t index(const Cell& c) const {
        size_t idx = 0;
        for (int i = 0; i < d; ++i) {
            auto k = static_cast<size_t>(i);
            idx = idx * static_cast<size_t>(side(i)) + static_cast<size_t>(c[k] - lo[k]);
        }
        return idx;
    }
    Cell cell(size_t idx) const {
        Cell c{};
        for (int i = d - 1; i >= 0; --i) {
            auto k = static_cast<size_t>(i);
            auto s = static_cast<size_t>(side(i));
            c[k] = lo[k] + static_cast<int>(idx % s);
            idx /= s;
        }
        return c;
    }
    double lower(int i) const { return lo[static_cast<size_t>(i)] - 0.5; }
    double upper(int i) const { return hi[static_cast<size_t>(i)] + 0.5; }
    double continuum_volume() const { return static_cast<double>(volume()); }

    // Concentric sub-box whose side is `fraction` of this box's side (at least one cell).
    Box central(double fraction) const {
        Box b = *this;
        for (int i = 0; i < d; ++i) {
            auto k = static_cast<size_t>(i);
            int s = side(i);
            int t = std::max(1, static_cast<int>(std::lround(s * fraction)));
            int off = (s - t) / 2;
            b.lo[k] = lo[k] + off;
            b.hi[k] = b.lo[k] + t - 1;
        }
        return b;
    }

    std::vector<int> lo_vec() const { return {lo.begin(), lo.begin() + d}; }
    std::vector<int> hi_vec() const { return {hi.begin(), hi.begin() + d}; }

    bool operator==(const Box& o) const {
        if (d != o.d) return false;
        for (int i = 0; i < d; ++i) {
            auto k = static_cast<size_t>(i);
            if (lo[k] != o.lo[k] || hi[k] != o.hi[k]) return false;
        }
        return true;
    }
};

// Cell containing a continuum point (cells are centred on integers).
inline Cell cell_of(const double* x, int d) {
    Cell c{};
    for (int i = 0; i < d; ++i) c[static_cast<size_t>(i)] = static_cast<int>(std::floor(x[i] + 0.5));
    return c;
}

inline int chebyshev(const Cell& a, const Cell& b, int d) {
    int m = 0;
    for (int i = 0; i < d; ++i) m = std::max(m, std::abs(a[static_cast<size_t>(i)] - b[static_cast<size_t>(i)]));
    return m;
}

// Offsets of the cube of half-width r (excluding the origin when skip_origin is set).
inline std::vector<Cell> cube_offsets(int d, int r, bool skip_origin) {
    std::vector<Cell> out;
    Box b = Box::cube(d, 2 * r + 1, -r);
    for (size_t i = 0; i < b.volume(); ++i) {
        Cell c = b.cell(i);
        bool zero = true;
        for (int k = 0; k < d; ++k) zero = zero && c[static_cast<size_t>(k)] == 0;
        if (!(skip_origin && zero)) out.push_back(c);
    }
    return out;
}

inline std::vector<Cell> face_offsets(int d) {
    std::vector<Cell> out;
    for (int i = 0; i < d; ++i)
        for (int s : {-1, 1}) {
            Cell c{};
            c[static_cast<size_t>(i)] = s;
            out.push_back(c);
        }
    return out;
}

inline Cell add(const Cell& a, const Cell& b, int d) {
    Cell c{};
    for (int i = 0; i < d; ++i) c[static_cast<size_t>(i)] = a[static_cast<size_t>(i)] + b[static_cast<size_t>(i)];
    return c;
}

// Squared distance range between the unit cells centred at a and b.
inline double cell_min_dist2(const Cell& a, const Cell& b, int d) {
    double s = 0;
    for (int i = 0; i < d; ++i) {
        double g = std::max(0.0, std::abs(a[static_cast<size_t>(i)] - b[static_cast<size_t>(i)]) - 1.0);
        s += g * g;
    }
    return s;
}
inline double cell_max_dist2(const Cell& a, const Cell& b, int d) {
    double s = 0;
    for (int i = 0; i < d; ++i) {
        double g = std::abs(a[static_cast<size_t>(i)] - b[static_cast<size_t>(i)]) + 1.0;
        s += g * g;
    }
    return s;
}

}  // namespace wrsim
