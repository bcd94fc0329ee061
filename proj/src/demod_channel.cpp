#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>

#include "starlink/demod.hpp"
#include "starlink/fft.hpp"

namespace starlink {

namespace {

constexpr double kTwoPi = 2 * std::numbers::pi;

cplx ramp(int d, double tau_samples) { return std::polar(1.0, kTwoPi * d * tau_samples / kNs); }

// Local polynomial weights: value at target d from the nearest `window` loaded subcarriers.
struct SmootherWeights {
    std::vector<int> kl_pos;  // positions into Kl
    std::vector<double> w;
};

std::vector<double> solve_small(std::vector<std::vector<double>> A, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
        std::swap(A[c], A[piv]);
        std::swap(b[c], b[piv]);
        if (std::abs(A[c][c]) < 1e-300) throw std::domain_error("singular smoother system");
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = A[r][c] / A[c][c];
            for (std::size_t q = c; q < n; ++q) A[r][q] -= f * A[c][q];
            b[r] -= f * b[c];
        }
    }
    std::vector<double> x(n);
    for (std::size_t r = n; r-- > 0;) {
        double s = b[r];
        for (std::size_t q = r + 1; q < n; ++q) s -= A[r][q] * x[q];
        x[r] = s / A[r][r];
    }
    return x;
}

SmootherWeights smoother_at(int target_d, int window, int order) {
    const auto& kl = default_grid().Kl;
    std::vector<std::pair<int, int>> by_dist;
    for (std::size_t n = 0; n < kl.size(); ++n) {
        const int d = subcarrier_offset(kl[n]);
        by_dist.emplace_back(std::abs(d - target_d), static_cast<int>(n));
    }
    std::sort(by_dist.begin(), by_dist.end());
    SmootherWeights sw;
    const double scale = window / 2.0;
    double shift = 0;
    for (int n = 0; n < window; ++n) shift += subcarrier_offset(kl[by_dist[n].second]) - target_d;
    // near the band ends the window is one-sided; a straight line keeps the variance bounded there
    if (std::abs(shift / window) > 0.5 * scale) order = std::min(order, 1);
    const int p = order + 1;
    std::vector<std::vector<double>> rows;
    for (int n = 0; n < window; ++n) {
        const int pos = by_dist[n].second;
        sw.kl_pos.push_back(pos);
        const double x = (subcarrier_offset(kl[pos]) - target_d) / scale;
        std::vector<double> r(p);
        double v = 1;
        for (int q = 0; q < p; ++q, v *= x) r[q] = v;
        rows.push_back(r);
    }
    // weights = e0^T (A^T A)^{-1} A^T
    std::vector<std::vector<double>> ata(p, std::vector<double>(p));
    for (const auto& r : rows)
        for (int a = 0; a < p; ++a)
            for (int b = 0; b < p; ++b) ata[a][b] += r[a] * r[b];
    std::vector<double> e0(p);
    e0[0] = 1;
    const auto c = solve_small(ata, e0);
    for (const auto& r : rows) {
        double w = 0;
        for (int a = 0; a < p; ++a) w += c[a] * r[a];
        sw.w.push_back(w);
    }
    return sw;
}

// Index 0..1019 follow Kl, index 1020 is the d = 0 point.
const std::vector<SmootherWeights>& smoother_table(int window, int order) {
    static std::mutex mu;
    static std::map<std::pair<int, int>, std::vector<SmootherWeights>> cache;
    std::lock_guard lock(mu);
    auto key = std::make_pair(window, order);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    const auto& kl = default_grid().Kl;
    if (window < order + 1 || window > static_cast<int>(kl.size()))
        throw std::domain_error("smoother window incompatible with order");
    std::vector<SmootherWeights> table;
    for (int k : kl) table.push_back(smoother_at(subcarrier_offset(k), window, order));
    table.push_back(smoother_at(0, window, order));
    return cache.emplace(key, std::move(table)).first->second;
}

double golden_max(auto&& f, double lo, double hi, int iters) {
    const double r = (std::sqrt(5.0) - 1) / 2;
    double a = lo, b = hi;
    double x1 = b - r * (b - a), x2 = a + r * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int n = 0; n < iters; ++n) {
        if (f1 < f2) {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        }
    }
    return (a + b) / 2;
}

}  // namespace

SymbolMatrix ofdm_demod(std::span<const cplx> frame) {
    if (frame.size() != static_cast<std::size_t>(kFrameLen))
        throw std::domain_error("frame must contain exactly 318912 samples");
    SymbolMatrix Y(kNsf);
    Fft fwd(kNs, FftDirection::Forward);
    constexpr int start = kNg / 2;
    std::vector<cplx> twiddle(kNs);
    for (int k = 0; k < kNs; ++k) twiddle[k] = ramp(subcarrier_offset(k), start) / std::sqrt(double(kNs));
    for (int i = 1; i < kNsf; ++i) {
        auto row = Y.row(i);
        fwd.execute(frame.subspan(static_cast<std::size_t>(i) * kSymLen + start, kNs), row);
        for (int k = 0; k < kNs; ++k) row[k] *= twiddle[k];
    }
    return Y;
}

double estimate_delay(std::span<const cplx> z) {
    if (z.size() != static_cast<std::size_t>(kNs)) throw std::domain_error("delay estimator needs 1024 entries");
    constexpr std::size_t L = 16384;
    std::vector<cplx> buf(L);
    for (int k = 0; k < kNs; ++k) {
        const int d = subcarrier_offset(k);
        buf[(d + static_cast<int>(L)) % L] = z[k];
    }
    Fft(L, FftDirection::Inverse).execute(buf);
    std::size_t best = 0;
    for (std::size_t m = 1; m < L; ++m)
        if (std::norm(buf[m]) > std::norm(buf[best])) best = m;
    double t0 = static_cast<double>(best) * kNs / L;
    if (t0 >= kNs / 2.0) t0 -= kNs;
    auto power = [&](double t) {
        cplx acc = 0;
        for (int k = 0; k < kNs; ++k)
            if (z[k] != cplx(0)) acc += z[k] * ramp(subcarrier_offset(k), t);
        return std::norm(acc);
    };
    const double step = static_cast<double>(kNs) / L;
    double t = golden_max(power, t0 - step, t0 + step, 60);
    // polish with Newton on |A(t)|^2
    for (int iter = 0; iter < 3; ++iter) {
        cplx A = 0, A1 = 0, A2 = 0;
        for (int k = 0; k < kNs; ++k) {
            if (z[k] == cplx(0)) continue;
            const double a = kTwoPi * subcarrier_offset(k) / kNs;
            const cplx v = z[k] * ramp(subcarrier_offset(k), t);
            A += v;
            A1 += cplx(0, a) * v;
            A2 += -a * a * v;
        }
        const double g = 2 * (std::conj(A) * A1).real();
        const double h = 2 * (std::norm(A1) + (std::conj(A) * A2).real());
        if (!(h < 0)) break;
        const double dt = -g / h;
        if (std::abs(dt) > step) break;
        t += dt;
    }
    return t * kTs;
}

std::vector<cplx> smooth_transfer(std::span<const cplx> H_raw, int window, int order) {
    const auto& kl = default_grid().Kl;
    if (H_raw.size() != kl.size()) throw std::domain_error("raw transfer must cover Kl");
    const auto& table = smoother_table(window, order);
    std::vector<cplx> out(table.size());
    for (std::size_t t = 0; t < table.size(); ++t) {
        cplx acc = 0;
        for (std::size_t n = 0; n < table[t].w.size(); ++n) acc += table[t].w[n] * H_raw[table[t].kl_pos[n]];
        out[t] = acc;
    }
    return out;
}

namespace {

void finish_equalizer(EqualizerState& eq, std::span<const cplx> Ybar, std::span<const cplx> X, const DemodConfig& cfg) {
    eq.masked.assign(kNs, true);
    eq.masked_count = 0;
    double gsum = 0;
    cplx corr = 0;
    int used = 0;
    for (int k : default_grid().Kl) {
        if (std::abs(eq.H_hat[k]) < cfg.h_floor) {
            ++eq.masked_count;
            continue;
        }
        eq.masked[k] = false;
        const cplx r = Ybar[k] / eq.H_hat[k];
        gsum += std::norm(r);
        corr += r * std::conj(X[k]);
        ++used;
    }
    if (used == 0) throw std::runtime_error("all subcarriers masked by the transfer-function floor");
    eq.g_hat = gsum / used;
    eq.theta_hat = std::arg(corr);
    eq.Z_hat = std::polar(std::sqrt(eq.g_hat), eq.theta_hat);
}

void check_inputs(std::span<const cplx> Ybar, std::span<const cplx> X) {
    if (Ybar.size() != static_cast<std::size_t>(kNs) || X.size() != static_cast<std::size_t>(kNs))
        throw std::domain_error("SSS rows must cover 1024 subcarriers");
    double e = 0;
    for (int k : default_grid().Kl) {
        if (X[k] == cplx(0)) throw std::domain_error("known SSS must be nonzero over Kl");
        e += std::norm(Ybar[k]);
    }
    if (!(e > 1e-20)) throw std::runtime_error("SSS energy below estimation floor");
}

}  // namespace

EqualizerState estimate_channel(std::span<const cplx> Ybar, std::span<const cplx> X, const DemodConfig& cfg) {
    check_inputs(Ybar, X);
    const auto& kl = default_grid().Kl;
    std::vector<cplx> z(kNs);
    for (int k : kl) z[k] = Ybar[k] * std::conj(X[k]);
    EqualizerState eq;
    eq.tau_m1 = estimate_delay(z);
    const double t = eq.tau_m1 / kTs;
    std::vector<cplx> raw(kl.size());
    for (std::size_t n = 0; n < kl.size(); ++n) raw[n] = Ybar[kl[n]] * ramp(subcarrier_offset(kl[n]), t) / X[kl[n]];
    const auto sm = smooth_transfer(raw, cfg.smoother_window, cfg.smoother_order);
    const auto& center = smoother_table(std::max(cfg.center_window, cfg.smoother_order + 1), cfg.smoother_order).back();
    cplx h0 = 0;
    for (std::size_t n = 0; n < center.w.size(); ++n) h0 += center.w[n] * raw[center.kl_pos[n]];
    if (std::abs(h0) < 1e-300) throw std::runtime_error("transfer estimate vanishes at band center");
    eq.H_tilde.assign(kNs, 0);
    eq.H_hat.assign(kNs, 0);
    for (std::size_t n = 0; n < kl.size(); ++n) {
        eq.H_tilde[kl[n]] = sm[n];
        eq.H_hat[kl[n]] = sm[n] / h0;
    }
    eq.H_tilde[0] = h0;
    finish_equalizer(eq, Ybar, X, cfg);
    return eq;
}

EqualizerState refine_channel(std::span<const EqualizerState> frames, std::span<const cplx> Ybar,
                              std::span<const cplx> X, const DemodConfig& cfg) {
    if (frames.empty()) throw std::domain_error("no channel estimates to refine");
    check_inputs(Ybar, X);
    EqualizerState eq;
    eq.H_hat.assign(kNs, 0);
    eq.H_tilde.assign(kNs, 0);
    for (const auto& f : frames)
        for (int k : default_grid().Kl) eq.H_hat[k] += f.H_hat[k] / static_cast<double>(frames.size());
    eq.H_tilde = eq.H_hat;
    eq.H_tilde[0] = 1;
    std::vector<cplx> z(kNs);
    for (int k : default_grid().Kl) z[k] = Ybar[k] * std::conj(X[k]);
    eq.tau_m1 = estimate_delay(z);
    finish_equalizer(eq, Ybar, X, cfg);
    return eq;
}

SymbolMatrix equalize(const SymbolMatrix& Ybar, const EqualizerState& eq) {
    SymbolMatrix out(Ybar.rows());
    for (int i = 1; i < Ybar.rows(); ++i)
        for (int k : default_grid().Kl)
            if (!eq.masked[k]) out(i, k) = Ybar(i, k) / (eq.Z_hat * eq.H_hat[k]);
    return out;
}

double gutter_noise_variance(const SymbolMatrix& Ybar) {
    double acc = 0;
    int n = 0;
    for (int i = 1; i < Ybar.rows(); ++i)
        for (int k : default_grid().Kg) {
            acc += std::norm(Ybar(i, k));
            ++n;
        }
    return n ? acc / n : 0;
}

std::vector<double> equalized_noise_variance(double gutter_var, const EqualizerState& eq, const DemodConfig& cfg) {
    std::vector<double> v(kNs, 0);
    for (int k : default_grid().Kl)
        if (!eq.masked[k]) v[k] = std::max(cfg.noise_floor, gutter_var / (eq.g_hat * std::norm(eq.H_hat[k])));
    return v;
}

}  // namespace starlink
