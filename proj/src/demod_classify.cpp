#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

#include "starlink/demod.hpp"

namespace starlink {

std::string to_string(ColumnClass c) {
    switch (c) {
        case ColumnClass::Card4: return "card4";
        case ColumnClass::QAM16: return "16QAM";
        case ColumnClass::QAM32: return "32QAM";
        case ColumnClass::Composite: return "composite";
    }
    return "?";
}

namespace {

struct Clustering {
    std::vector<cplx> centroids;
    double mse = std::numeric_limits<double>::infinity();
};

Clustering lloyd(std::span<const cplx> pts, std::vector<cplx> c);

Clustering kmeans(std::span<const cplx> pts, int K, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = pts.size();
    std::vector<cplx> c;
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    c.push_back(pts[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)]);
    while (static_cast<int>(c.size()) < K) {
        double total = 0;
        for (std::size_t p = 0; p < n; ++p) {
            d2[p] = std::min(d2[p], std::norm(pts[p] - c.back()));
            total += d2[p];
        }
        double pick = std::uniform_real_distribution<double>(0, total)(rng);
        std::size_t chosen = n - 1;
        for (std::size_t p = 0; p < n; ++p) {
            pick -= d2[p];
            if (pick <= 0) {
                chosen = p;
                break;
            }
        }
        c.push_back(pts[chosen]);
    }
    return lloyd(pts, std::move(c));
}

Clustering lloyd(std::span<const cplx> pts, std::vector<cplx> c) {
    const std::size_t n = pts.size();
    const int K = static_cast<int>(c.size());
    std::vector<int> assign(n, -1);
    std::vector<cplx> sum(K);
    std::vector<int> count(K);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (std::size_t p = 0; p < n; ++p) {
            int best = 0;
            double bd = std::norm(pts[p] - c[0]);
            for (int q = 1; q < K; ++q) {
                const double d = std::norm(pts[p] - c[q]);
                if (d < bd) {
                    bd = d;
                    best = q;
                }
            }
            if (assign[p] != best) {
                assign[p] = best;
                changed = true;
            }
        }
        if (!changed) break;
        std::fill(sum.begin(), sum.end(), cplx(0));
        std::fill(count.begin(), count.end(), 0);
        for (std::size_t p = 0; p < n; ++p) {
            sum[assign[p]] += pts[p];
            ++count[assign[p]];
        }
        for (int q = 0; q < K; ++q) {
            if (count[q]) {
                c[q] = sum[q] / static_cast<double>(count[q]);
                continue;
            }
            // empty cluster: move it to the worst-served point
            std::size_t far = 0;
            double fd = -1;
            for (std::size_t p = 0; p < n; ++p) {
                const double d = std::norm(pts[p] - c[assign[p]]);
                if (d > fd) {
                    fd = d;
                    far = p;
                }
            }
            c[q] = pts[far];
        }
    }
    Clustering out;
    out.centroids = c;
    double acc = 0;
    for (auto p : pts) {
        double bd = std::numeric_limits<double>::infinity();
        for (auto q : c) bd = std::min(bd, std::norm(p - q));
        acc += bd;
    }
    out.mse = acc / static_cast<double>(n);
    return out;
}

// Rotation (mod pi/2) that aligns pts with ref by fourth moments.
cplx fourth_power_rotation(std::span<const cplx> pts, const Constellation& ref) {
    cplx m4 = 0, c4 = 0;
    for (auto p : ref.points) m4 += p * p * p * p;
    for (auto c : pts) c4 += c * c * c * c;
    return std::polar(1.0, -std::arg(c4 * std::conj(m4)) / 4);
}

bool matches_reference(std::span<const cplx> centroids, const Constellation& ref) {
    const cplx rot = fourth_power_rotation(centroids, ref);
    const double tol = 0.25 * ref.min_distance();
    std::vector<bool> used(ref.size(), false);
    for (auto c : centroids) {
        const int n = ref.nearest(c * rot);
        if (used[n] || std::abs(c * rot - ref.points[n]) > tol) return false;
        used[n] = true;
    }
    return true;
}

}  // namespace

ColumnClass identify_constellation(std::span<const cplx> column, double noise_var, const DemodConfig& cfg) {
    std::vector<cplx> pts;
    for (auto v : column)
        if (v != cplx(0)) pts.push_back(v);
    if (pts.size() < 100) throw std::domain_error("constellation identification needs at least 100 subcarriers");
    double power = 0;
    for (auto v : pts) power += std::norm(v);
    power /= static_cast<double>(pts.size());
    const double signal = std::max(power - noise_var, 1e-12 * power);
    const double s = 1 / std::sqrt(signal);
    for (auto& v : pts) v *= s;
    const double nv = std::max(noise_var, 0.0) / signal;

    struct Trial {
        int K;
        double dmin;
        const Constellation* ref;
        ColumnClass cls;
    };
    const Trial trials[] = {
        {4, constellation(Modulation::QPSK).min_distance(), &constellation(Modulation::QPSK), ColumnClass::Card4},
        {8, 2 * std::sin(std::numbers::pi / 8), nullptr, ColumnClass::Composite},
        {16, constellation(Modulation::QAM16).min_distance(), &constellation(Modulation::QAM16), ColumnClass::QAM16},
        {32, constellation(Modulation::QAM32).min_distance(), &constellation(Modulation::QAM32), ColumnClass::QAM32},
    };
    auto excess_of = [&](const Clustering& cl) { return std::sqrt(std::max(cl.mse - nv, 0.0)); };
    for (const auto& t : trials) {
        if (!t.ref) continue;
        const cplx back = std::conj(fourth_power_rotation(pts, *t.ref));
        std::vector<cplx> seeds;
        for (auto p : t.ref->points) seeds.push_back(p * back);
        const auto cl = lloyd(pts, std::move(seeds));
        if (excess_of(cl) < cfg.kmeans_threshold * t.dmin && matches_reference(cl.centroids, *t.ref)) return t.cls;
    }
    for (const auto& t : trials) {
        const double thr = cfg.kmeans_threshold * t.dmin;
        double best = std::numeric_limits<double>::infinity();
        for (int r = 0; r < cfg.kmeans_restarts; ++r) {
            const auto cl = kmeans(pts, t.K, 0x9e3779b97f4a7c15ULL * (r + 1) + t.K);
            // spread left after removing the expected noise contribution
            const double excess = excess_of(cl);
            best = std::min(best, excess);
            if (excess < thr && (!t.ref || matches_reference(cl.centroids, *t.ref))) return t.cls;
            if (r >= 2 && best > 3 * thr) break;
        }
    }
    return ColumnClass::Composite;
}

}  // namespace starlink
