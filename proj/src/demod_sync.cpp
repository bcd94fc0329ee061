#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "starlink/demod.hpp"
#include "starlink/fft.hpp"

namespace starlink {

namespace {

constexpr double kTwoPi = 2 * std::numbers::pi;
constexpr double kPrune = 40.0;  // terms below e^-40 of the dominant one are dropped

cplx fourth_moment(const Constellation& c) {
    cplx m = 0;
    for (auto p : c.points) m += p * p * p * p;
    return m / static_cast<double>(c.size());
}

// Log-likelihood of one observation u under a marginal over `pts` (or a single known point),
// with the first and second derivative moments needed for Newton steps.
struct TermStats {
    double ll = 0;
    double s1 = 0;  // E_w Im(c* u)
    double h = 0;   // curvature factor, see per_symbol_ml
};

TermStats term(cplx u, std::span<const cplx> pts, double var) {
    TermStats t;
    std::array<double, 64> dist{};
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < pts.size(); ++n) {
        dist[n] = std::norm(u - pts[n]);
        dmin = std::min(dmin, dist[n]);
    }
    double W = 0, s1 = 0, s2 = 0, s3 = 0;
    for (std::size_t n = 0; n < pts.size(); ++n) {
        const double e = (dist[n] - dmin) / var;
        if (e > kPrune) continue;
        const double w = std::exp(-e);
        const cplx cu = std::conj(pts[n]) * u;
        W += w;
        s1 += w * cu.imag();
        s2 += w * cu.real();
        s3 += w * cu.imag() * cu.imag();
    }
    s1 /= W;
    s2 /= W;
    s3 /= W;
    t.ll = -dmin / var + std::log(W / static_cast<double>(pts.size()));
    t.s1 = s1;
    t.h = -2 / var * s2 + 4 / (var * var) * (s3 - s1 * s1);
    return t;
}

struct Observation {
    int d;
    cplx y;
    double var;
    const cplx* pts;  // single point when known
    int npts;
};

struct Eval {
    double ll = 0;
    double g[2] = {0, 0};
    double H[2][2] = {{0, 0}, {0, 0}};
};

// Parameters: t (delay in samples), phi.
Eval evaluate(std::span<const Observation> obs, double t, double phi, bool derivs) {
    Eval e;
    for (const auto& o : obs) {
        const double at = kTwoPi * o.d / kNs;
        const cplx u = o.y * std::polar(1.0, at * t - phi);
        const auto s = term(u, {o.pts, static_cast<std::size_t>(o.npts)}, o.var);
        e.ll += s.ll;
        if (!derivs) continue;
        const double a[2] = {at, -1.0};
        for (int p = 0; p < 2; ++p) {
            e.g[p] += -2 / o.var * a[p] * s.s1;
            for (int q = 0; q < 2; ++q) e.H[p][q] += a[p] * a[q] * s.h;
        }
    }
    return e;
}

struct Optimum {
    double x[2];
    double ll;
    bool converged;
};

// Damped Newton ascent on a two-parameter log-likelihood.
template <class F>
Optimum newton2(F&& eval, double x0, double x1, int max_iter) {
    double x[2] = {x0, x1};
    Eval cur = eval(x[0], x[1], true);
    bool converged = false;
    for (int iter = 0; iter < max_iter; ++iter) {
        const double scale = std::abs(cur.H[0][0]) + std::abs(cur.H[1][1]) + 1e-300;
        double lambda = 0;
        bool moved = false;
        double step_size = 0;
        for (int attempt = 0; attempt < 30; ++attempt) {
            const double a = cur.H[0][0] - lambda, b = cur.H[0][1], c = cur.H[1][1] - lambda;
            const double det = a * c - b * b;
            if (a < 0 && det > 0) {
                const double dx0 = -(c * cur.g[0] - b * cur.g[1]) / det;
                const double dx1 = -(-b * cur.g[0] + a * cur.g[1]) / det;
                step_size = std::max(std::abs(dx0), std::abs(dx1));
                if (step_size < 1e-12) {
                    converged = true;
                    break;
                }
                Eval next = eval(x[0] + dx0, x[1] + dx1, true);
                if (next.ll >= cur.ll - 1e-12 * std::abs(cur.ll)) {
                    x[0] += dx0;
                    x[1] += dx1;
                    moved = next.ll > cur.ll;
                    cur = next;
                    break;
                }
            }
            lambda = lambda == 0 ? 1e-6 * scale : lambda * 10;
        }
        if (converged) break;
        if (!moved) {
            converged = step_size < 1e-6;
            break;
        }
    }
    return {{x[0], x[1]}, cur.ll, converged};
}

double wrap_pi(double a) { return a - kTwoPi * std::floor((a + std::numbers::pi) / kTwoPi); }

constexpr int kPeriodogramLen = 8192;

// Fourth-power delay periodogram over |t| <= Ng/2 with parabolic peak interpolation.
struct Peak {
    double t;
    cplx value;
};

Peak fourth_power_peak(std::span<const cplx> buf_time) {
    const int L = static_cast<int>(buf_time.size());
    const double grid = static_cast<double>(kNs) / (4.0 * L);
    auto t_of = [&](int m) {
        double t = m * grid;
        if (t >= kNs / 8.0) t -= kNs / 4.0;
        return t;
    };
    int best = 0;
    double bp = -1;
    for (int m = 0; m < L; ++m) {
        if (std::abs(t_of(m)) > kNg / 2.0) continue;
        if (std::norm(buf_time[m]) > bp) {
            bp = std::norm(buf_time[m]);
            best = m;
        }
    }
    const double ym = std::abs(buf_time[(best - 1 + L) % L]), y0 = std::abs(buf_time[best]),
                 yp = std::abs(buf_time[(best + 1) % L]);
    const double den = ym - 2 * y0 + yp;
    const double frac = den < 0 ? std::clamp(0.5 * (ym - yp) / den, -0.5, 0.5) : 0.0;
    return {t_of(best) + frac * grid, buf_time[best]};
}

std::vector<cplx> fourth_power_transform(std::span<const Observation> obs, bool known) {
    std::vector<cplx> buf(kPeriodogramLen);
    for (const auto& o : obs) {
        if ((o.npts == 1) != known) continue;
        const cplx y4 = o.y * o.y * o.y * o.y;
        const cplx w = known ? std::conj(o.pts[0] * o.pts[0] * o.pts[0] * o.pts[0]) : cplx(1);
        buf[(o.d % kPeriodogramLen + kPeriodogramLen) % kPeriodogramLen] += y4 * w;
    }
    Fft(kPeriodogramLen, FftDirection::Inverse).execute(buf);
    return buf;
}

}  // namespace

double coarse_column_delay(std::span<const cplx> column, std::span<const int> k_of) {
    if (column.size() != k_of.size()) throw std::domain_error("column and index list differ in length");
    std::vector<cplx> buf(kPeriodogramLen);
    for (std::size_t n = 0; n < column.size(); ++n) {
        const cplx y = column[n];
        const int d = subcarrier_offset(k_of[n]);
        buf[(d % kPeriodogramLen + kPeriodogramLen) % kPeriodogramLen] += y * y * y * y;
    }
    Fft(kPeriodogramLen, FftDirection::Inverse).execute(buf);
    return fourth_power_peak(buf).t * kTs;
}

PerSymbolEstimate per_symbol_ml(std::span<const cplx> Y, const SymbolHypothesis& hyp, std::span<const double> noise_var,
                                const DemodConfig& cfg) {
    if (Y.size() != static_cast<std::size_t>(kNs) || noise_var.size() != static_cast<std::size_t>(kNs))
        throw std::domain_error("per-symbol estimation needs rows over K");
    if (!hyp.known.empty() && hyp.known.size() != static_cast<std::size_t>(kNs))
        throw std::domain_error("known-symbol mask must cover K");
    std::vector<cplx> known_values(kNs);
    std::vector<Observation> obs;
    bool any_unknown = false;
    for (int k : default_grid().Kl) {
        if (!(noise_var[k] > 0)) continue;
        const int d = subcarrier_offset(k);
        if (!hyp.known.empty() && hyp.known[k]) {
            known_values[k] = *hyp.known[k];
            obs.push_back({d, Y[k], noise_var[k], &known_values[k], 1});
        } else {
            obs.push_back({d, Y[k], noise_var[k], nullptr, 0});
            any_unknown = true;
        }
    }
    if (obs.empty()) throw std::domain_error("no usable subcarriers");
    if (any_unknown && hyp.candidates.empty())
        throw std::domain_error("no constellation hypothesis for unknown subcarriers");

    const auto p_known = fourth_power_transform(obs, true);
    const auto p_unknown = any_unknown ? fourth_power_transform(obs, false) : std::vector<cplx>(kPeriodogramLen);
    std::vector<std::optional<Modulation>> hyps;
    if (hyp.candidates.empty()) hyps.push_back(std::nullopt);
    for (auto m : hyp.candidates) hyps.push_back(m);

    // coarse start for each hypothesis, keep the best by likelihood
    double best_ll = -std::numeric_limits<double>::infinity(), t_start = 0, phi_start = 0;
    std::optional<Modulation> chosen;
    std::vector<Observation> best_obs;
    for (const auto& h : hyps) {
        const Constellation* cons = h ? &constellation(*h) : nullptr;
        const cplx m4 = cons ? std::conj(fourth_moment(*cons)) : cplx(0);
        std::vector<cplx> buf(kPeriodogramLen);
        for (int m = 0; m < kPeriodogramLen; ++m) buf[m] = p_known[m] + m4 * p_unknown[m];
        const auto peak = fourth_power_peak(buf);
        cplx acc = 0;
        for (const auto& o : obs) {
            const cplx y4 = o.y * o.y * o.y * o.y;
            const cplx w = o.npts == 1 ? std::conj(o.pts[0] * o.pts[0] * o.pts[0] * o.pts[0]) : m4;
            acc += y4 * w * std::polar(1.0, kTwoPi * 4 * o.d * peak.t / kNs);
        }
        const double phi4 = std::arg(acc) / 4;
        auto trial = obs;
        for (auto& o : trial)
            if (o.npts != 1) {
                o.pts = cons->points.data();
                o.npts = static_cast<int>(cons->size());
            }
        std::vector<std::pair<double, double>> starts;
        for (int q = 0; q < 4; ++q) starts.emplace_back(peak.t, phi4 + q * std::numbers::pi / 2);
        if (hyp.tau_start)
            for (int q = 0; q < 4; ++q) starts.emplace_back(*hyp.tau_start / kTs, hyp.phi_start + q * std::numbers::pi / 2);
        for (auto [t, phi] : starts) {
            const double ll = evaluate(trial, t, phi, false).ll;
            if (ll > best_ll) {
                best_ll = ll;
                t_start = t;
                phi_start = phi;
                chosen = h;
                best_obs = trial;
            }
        }
    }
    auto f = [&](double t, double phi, bool d) { return evaluate(best_obs, t, phi, d); };
    const auto opt = newton2(f, t_start, phi_start, cfg.newton_iterations);
    PerSymbolEstimate est;
    est.tau = opt.x[0] * kTs;
    est.phi = wrap_pi(opt.x[1]);
    est.log_likelihood = opt.ll;
    est.converged = opt.converged && std::abs(opt.x[0]) <= kNg;
    if (chosen) est.label = *chosen;
    return est;
}

double SyncEstimate::tau_at(int i) const { return tau_m0 + i * kTsym * dbeta_s; }
double SyncEstimate::phi_at(int i) const { return phi_m0 - kTwoPi * i * kTsym * dbeta_c * center_hz; }

namespace {

struct Line {
    double a = 0, b = 0, sse = 0;
};

Line fit_line(std::span<const double> x, std::span<const double> y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        sx += x[j];
        sy += y[j];
    }
    const double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        sxx += (x[j] - mx) * (x[j] - mx);
        sxy += (x[j] - mx) * (y[j] - my);
    }
    if (!(sxx > 0)) throw std::domain_error("joint fit needs at least two distinct symbol indices");
    Line l;
    l.b = sxy / sxx;
    l.a = my - l.b * mx;
    for (std::size_t j = 0; j < x.size(); ++j) l.sse += std::pow(y[j] - l.a - l.b * x[j], 2);
    return l;
}

}  // namespace

SyncEstimate joint_fit(std::span<const PerSymbolEstimate> estimates, const DemodConfig& cfg) {
    std::vector<PerSymbolEstimate> est(estimates.begin(), estimates.end());
    std::sort(est.begin(), est.end(), [](const auto& a, const auto& b) { return a.i < b.i; });
    if (est.size() < 2) throw std::domain_error("joint fit needs at least two retained symbols");

    // sequential unwrap inside segments separated by long gaps
    std::vector<std::vector<std::size_t>> segments;
    for (std::size_t j = 0; j < est.size(); ++j) {
        if (j == 0 || est[j].i - est[j - 1].i > cfg.gap_split) segments.emplace_back();
        segments.back().push_back(j);
    }
    std::vector<double> phi(est.size());
    for (const auto& seg : segments) {
        for (std::size_t q = 0; q < seg.size(); ++q) {
            const std::size_t j = seg[q];
            phi[j] = est[j].phi;
            if (q == 0) continue;
            const std::size_t p = seg[q - 1];
            double slope = 0;
            if (q >= 2) {
                const std::size_t pp = seg[q - 2];
                slope = (phi[p] - phi[pp]) / (est[p].i - est[pp].i);
            }
            const double pred = phi[p] + slope * (est[j].i - est[p].i);
            phi[j] += kTwoPi * std::round((pred - phi[j]) / kTwoPi);
        }
    }
    // join segments by integer-cycle search against the accumulated fit
    std::vector<double> xs, ys;
    for (std::size_t j : segments[0]) {
        xs.push_back(est[j].i);
        ys.push_back(phi[j]);
    }
    for (std::size_t s = 1; s < segments.size(); ++s) {
        const auto& seg = segments[s];
        double pred_mean = 0, seg_mean = 0;
        const bool can_predict = xs.size() >= 2 && xs.front() != xs.back();
        Line base = can_predict ? fit_line(xs, ys) : Line{ys.front(), 0, 0};
        for (std::size_t j : seg) {
            pred_mean += base.a + base.b * est[j].i;
            seg_mean += phi[j];
        }
        const double n0 = std::round((pred_mean - seg_mean) / seg.size() / kTwoPi);
        double best_sse = std::numeric_limits<double>::infinity(), best_n = n0;
        for (int dn = -3; dn <= 3; ++dn) {
            auto x2 = xs, y2 = ys;
            for (std::size_t j : seg) {
                x2.push_back(est[j].i);
                y2.push_back(phi[j] + kTwoPi * (n0 + dn));
            }
            const double sse = fit_line(x2, y2).sse;
            if (sse < best_sse) {
                best_sse = sse;
                best_n = n0 + dn;
            }
        }
        for (std::size_t j : seg) {
            phi[j] += kTwoPi * best_n;
            xs.push_back(est[j].i);
            ys.push_back(phi[j]);
        }
    }
    std::vector<double> idx, tau;
    for (std::size_t j = 0; j < est.size(); ++j) {
        idx.push_back(est[j].i);
        tau.push_back(est[j].tau);
    }
    const Line lp = fit_line(idx, phi);
    const Line lt = fit_line(idx, tau);
    SyncEstimate s;
    s.center_hz = cfg.center_hz;
    s.phi_m0 = lp.a;
    s.dbeta_c = -lp.b / (kTwoPi * kTsym * cfg.center_hz);
    s.tau_m0 = lt.a;
    s.dbeta_s = lt.b / kTsym;
    s.per_symbol = est;
    for (const auto& e : est) s.retained.push_back(e.i);
    return s;
}

SymbolMatrix compensate(const SymbolMatrix& Yt, const SyncEstimate& sync, std::span<const int> rows) {
    SymbolMatrix Y(Yt.rows());
    for (int i : rows) {
        const double t = sync.tau_at(i) / kTs;
        const double phi = sync.phi_at(i);
        for (int k = 0; k < kNs; ++k) {
            if (Yt(i, k) == cplx(0)) continue;
            Y(i, k) = Yt(i, k) * std::polar(1.0, -phi + kTwoPi * subcarrier_offset(k) * t / kNs);
        }
    }
    return Y;
}

DecodedFrame disambiguate_and_decode(const SymbolMatrix& Y, std::span<const int> symbols,
                                     std::span<const ColumnClass> classes, const std::vector<bool>& masked) {
    if (symbols.size() != classes.size()) throw std::domain_error("one class per symbol required");
    if (symbols.empty() || symbols.front() != 1) throw std::domain_error("SSS must lead the retained symbols");
    const auto& grid = default_grid();
    const auto& qam4 = constellation(Modulation::QAM4);
    DecodedFrame out;
    out.X_hat = SymbolMatrix(kNsf);
    cplx ref = 0;
    Modulation ref_label = Modulation::QPSK;
    for (std::size_t n = 0; n < symbols.size(); ++n) {
        const int i = symbols[n];
        Modulation label = Modulation::QPSK;
        if (classes[n] == ColumnClass::Composite) throw std::domain_error("composite columns cannot be decoded");
        if (classes[n] == ColumnClass::QAM16) label = Modulation::QAM16;
        else if (classes[n] == ColumnClass::QAM32) label = Modulation::QAM32;
        else {
            cplx s4 = 0;
            for (int k : (i == 1 ? grid.Kl : grid.Klnp)) {
                const cplx y = Y(i, k);
                s4 += y * y * y * y;
            }
            if (i == 1) label = Modulation::QPSK;
            else {
                const bool same = (s4 * std::conj(ref)).real() >= 0;
                const Modulation other = ref_label == Modulation::QPSK ? Modulation::QAM4 : Modulation::QPSK;
                label = same ? ref_label : other;
            }
            ref = s4;
            ref_label = label;
        }
        const auto& cons = constellation(label);
        std::vector<int> idx(grid.Kl.size(), -1);
        for (std::size_t r = 0; r < grid.Kl.size(); ++r) {
            const int k = grid.Kl[r];
            if (!masked.empty() && masked[k]) continue;
            const bool pilot = i >= kPilotFirstSymbol && grid.is_pilot(k);
            const auto& use = pilot ? qam4 : cons;
            idx[r] = use.nearest(Y(i, k));
            out.X_hat(i, k) = use.points[idx[r]];
        }
        out.symbols.push_back(i);
        out.labels.push_back(label);
        out.point_index.push_back(std::move(idx));
    }
    return out;
}

int DecodedFrame::row_of(int i) const {
    auto it = std::lower_bound(symbols.begin(), symbols.end(), i);
    return (it != symbols.end() && *it == i) ? static_cast<int>(it - symbols.begin()) : -1;
}

}  // namespace starlink
