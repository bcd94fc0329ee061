#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "starlink/demod.hpp"

namespace starlink {

namespace {

constexpr double kTwoPi = 2 * std::numbers::pi;
constexpr double kBetaUnit = 1e-9;  // optimizer works in units of 1e-9

struct Hyp {
    const Constellation* c;
};

struct RowTerm {
    double ll = 0;
    double g[2] = {0, 0};
    double H[2][2] = {{0, 0}, {0, 0}};
};

struct Problem {
    const SymbolMatrix& Y;
    std::span<const double> var;
    std::vector<int> rows;
    std::vector<int> cols;
    double prior;
    const AltSyncConfig& cfg;
};

// Negative log-likelihood with penalties; x[0] = dbeta_c in 1e-9 units, x[1] = phi_m0.
struct Cost {
    double f = 0;
    double g[2] = {0, 0};
    double H[2][2] = {{0, 0}, {0, 0}};
};

Cost evaluate(const Problem& P, double xb, double phi0, bool derivs) {
    static const Modulation hyps[] = {Modulation::QPSK, Modulation::QAM4, Modulation::QAM16, Modulation::QAM32};
    const double span = kTsym / (1 - P.cfg.beta_hat);
    Cost out;
    double dist[64];
    for (int i : P.rows) {
        RowTerm rt[4];
        for (int k : P.cols) {
            const double var = P.var[k];
            if (!(var > 0) || P.Y(i, k) == cplx(0)) continue;
            const double b = kTwoPi * (P.cfg.center_hz + kF * subcarrier_offset(k)) * span * i * kBetaUnit;
            const double phik = phi0 - b * xb;
            const cplx u = P.Y(i, k) * std::polar(1.0, -phik);
            // du/dx = j a u with a = -dphi/dx
            const double a[2] = {b, -1.0};
            for (int h = 0; h < 4; ++h) {
                const auto& pts = constellation(hyps[h]).points;
                double dmin = std::numeric_limits<double>::infinity();
                for (std::size_t n = 0; n < pts.size(); ++n) {
                    dist[n] = std::norm(u - pts[n]);
                    dmin = std::min(dmin, dist[n]);
                }
                double W = 0, s1 = 0, s2 = 0, s3 = 0;
                for (std::size_t n = 0; n < pts.size(); ++n) {
                    const double e = (dist[n] - dmin) / var;
                    if (e > 40) continue;
                    const double w = std::exp(-e);
                    const cplx cu = std::conj(pts[n]) * u;
                    W += w;
                    if (derivs) {
                        s1 += w * cu.imag();
                        s2 += w * cu.real();
                        s3 += w * cu.imag() * cu.imag();
                    }
                }
                rt[h].ll += -dmin / var + std::log(W / static_cast<double>(pts.size()));
                if (!derivs) continue;
                s1 /= W;
                s2 /= W;
                s3 /= W;
                const double hh = -2 / var * s2 + 4 / (var * var) * (s3 - s1 * s1);
                for (int p = 0; p < 2; ++p) {
                    rt[h].g[p] += -2 / var * a[p] * s1;
                    for (int q = 0; q < 2; ++q) rt[h].H[p][q] += a[p] * a[q] * hh;
                }
            }
        }
        double mx = rt[0].ll;
        for (int h = 1; h < 4; ++h) mx = std::max(mx, rt[h].ll);
        double W = 0, w[4];
        for (int h = 0; h < 4; ++h) W += (w[h] = std::exp(rt[h].ll - mx));
        out.f -= mx + std::log(W / 4);
        if (!derivs) continue;
        double g[2] = {0, 0};
        for (int h = 0; h < 4; ++h)
            for (int p = 0; p < 2; ++p) g[p] += w[h] / W * rt[h].g[p];
        for (int p = 0; p < 2; ++p) {
            out.g[p] -= g[p];
            for (int q = 0; q < 2; ++q) {
                double hpq = 0;
                for (int h = 0; h < 4; ++h) hpq += w[h] / W * (rt[h].H[p][q] + rt[h].g[p] * rt[h].g[q]);
                out.H[p][q] -= hpq - g[p] * g[q];
            }
        }
    }
    const double wb = P.cfg.penalty_beta * kBetaUnit * kBetaUnit;
    const double dphi = phi0 - P.prior;
    out.f += wb * xb * xb + P.cfg.penalty_phi * dphi * dphi;
    out.g[0] += 2 * wb * xb;
    out.g[1] += 2 * P.cfg.penalty_phi * dphi;
    out.H[0][0] += 2 * wb;
    out.H[1][1] += 2 * P.cfg.penalty_phi;
    return out;
}

std::vector<int> spaced(const std::vector<int>& all, int count) {
    if (count <= 0 || count >= static_cast<int>(all.size())) return all;
    std::vector<int> out;
    for (int n = 0; n < count; ++n)
        out.push_back(all[static_cast<std::size_t>(std::llround(n * (all.size() - 1.0) / (count - 1)))]);
    return out;
}

}  // namespace

AltSyncResult alt_residual_sync(const SymbolMatrix& Ytilde, std::span<const double> noise_var, double phi_prior,
                                const AltSyncConfig& cfg) {
    if (Ytilde.rows() != kNsf || noise_var.size() != static_cast<std::size_t>(kNs))
        throw std::domain_error("alternate estimator needs a full frame and per-subcarrier noise");
    if (!(cfg.scan_step > 0) || !(cfg.scan_half_range >= cfg.scan_step))
        throw std::domain_error("invalid scan grid");
    const auto& grid = default_grid();
    Problem full{Ytilde, noise_var, grid.I2, grid.Kl, phi_prior, cfg};
    Problem coarse{Ytilde, noise_var, spaced(grid.I2, cfg.scan_symbols), spaced(grid.Kl, cfg.scan_subcarriers),
                   phi_prior, cfg};

    const int half = static_cast<int>(std::llround(cfg.scan_half_range / cfg.scan_step));
    double best_f = std::numeric_limits<double>::infinity();
    int best_b = 0;
    double best_phi = phi_prior;
    for (int nb = -half; nb <= half; ++nb) {
        const double xb = nb * cfg.scan_step / kBetaUnit;
        for (int np = 0; np < 8; ++np) {
            const double phi = phi_prior - std::numbers::pi / 4 + np * std::numbers::pi / 16;
            const double f = evaluate(coarse, xb, phi, false).f;
            if (f < best_f) {
                best_f = f;
                best_b = nb;
                best_phi = phi;
            }
        }
    }
    if (std::abs(best_b) == half) throw std::runtime_error("residual Doppler scan did not bracket a minimum");

    double x[2] = {best_b * cfg.scan_step / kBetaUnit, best_phi};
    Cost cur = evaluate(full, x[0], x[1], true);
    for (int iter = 0; iter < 50; ++iter) {
        double lambda = 0;
        const double scale = std::abs(cur.H[0][0]) + std::abs(cur.H[1][1]);
        bool moved = false, done = false;
        for (int attempt = 0; attempt < 30; ++attempt) {
            const double a = cur.H[0][0] + lambda, b = cur.H[0][1], c = cur.H[1][1] + lambda;
            const double det = a * c - b * b;
            if (a > 0 && det > 0) {
                const double d0 = -(c * cur.g[0] - b * cur.g[1]) / det;
                const double d1 = -(-b * cur.g[0] + a * cur.g[1]) / det;
                if (std::max(std::abs(d0) * 1e-3, std::abs(d1)) < 1e-12) {
                    done = true;
                    break;
                }
                const Cost next = evaluate(full, x[0] + d0, x[1] + d1, true);
                if (next.f <= cur.f + 1e-12 * std::abs(cur.f)) {
                    x[0] += d0;
                    x[1] += d1;
                    moved = next.f < cur.f;
                    cur = next;
                    break;
                }
            }
            lambda = lambda == 0 ? 1e-6 * scale : lambda * 10;
        }
        if (done || !moved) break;
    }
    return {x[0] * kBetaUnit, x[1], cur.f};
}

SymbolMatrix apply_alt_sync(const SymbolMatrix& Ytilde, const AltSyncResult& r, const AltSyncConfig& cfg) {
    SymbolMatrix Y(Ytilde.rows());
    const double span = kTsym / (1 - cfg.beta_hat);
    for (int i : default_grid().I2)
        for (int k : default_grid().Kl) {
            const double phik =
                r.phi_m0 - kTwoPi * (r.dbeta_c * cfg.center_hz + r.dbeta_c * kF * subcarrier_offset(k)) * span * i;
            Y(i, k) = Ytilde(i, k) * std::polar(1.0, -phik);
        }
    return Y;
}

}  // namespace starlink
