#include "starlink/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "starlink/fft.hpp"
#include "starlink/pilot_codes.hpp"
#include "starlink/template_tcode.hpp"
#include "starlink/text_io.hpp"
#include "starlink/waveform_synth.hpp"

namespace starlink {

namespace {

constexpr double kPi = std::numbers::pi;

double db(double x) { return 10 * std::log10(x); }
double from_db(double x) { return std::pow(10.0, x / 10); }
double q_function(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

}  // namespace

Gain processing_gain(double N, double mu) {
    if (!(N >= 1)) throw std::domain_error("accumulation length must be at least 1");
    if (!(std::abs(mu) <= 1)) throw std::domain_error("|mu| must not exceed 1");
    const double L = 1 + (N - 1) * mu * mu;
    return {L, db(L)};
}

Gain empirical_gain(const EmpiricalGainConfig& cfg) {
    if (cfg.N < 1 || cfg.trials < 1) throw std::domain_error("need N >= 1 and at least one trial");
    if (!(cfg.flip_probability >= 0 && cfg.flip_probability <= 1)) throw std::domain_error("flip probability outside [0, 1]");
    const auto& pts = constellation(cfg.constellation).points;
    const double noise_var = 1 / from_db(cfg.snr_db);
    Rng rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
    std::bernoulli_distribution flip(cfg.flip_probability);
    std::normal_distribution<double> gauss(0, std::sqrt(noise_var / 2));
    double sx2 = 0, sn2 = 0;
    for (int t = 0; t < cfg.trials; ++t) {
        cplx sx = 0, sn = 0;
        for (int k = 0; k < cfg.N; ++k) {
            const cplx x = pts[pick(rng)];
            cplx l = x;
            if (cfg.policy == ReplicaPolicy::Independent) l = pts[pick(rng)];
            else if (cfg.policy == ReplicaPolicy::SignFlip && flip(rng)) l = -x;
            const cplx n(gauss(rng), gauss(rng));
            sx += std::conj(x) * l;
            sn += std::conj(n) * l;
        }
        sx2 += std::norm(sx);
        sn2 += std::norm(sn);
    }
    const double L = sx2 / sn2 * noise_var;
    return {L, db(L)};
}

TcodeErrorRate tcode_error_rate(double M_bar, double snr_pre) {
    if (!(M_bar >= 1)) throw std::domain_error("stacking factor must be at least 1");
    if (!(snr_pre > 0)) throw std::domain_error("SNR must be positive");
    TcodeErrorRate r;
    r.p_e = 0.5 * std::erfc(std::sqrt(M_bar * snr_pre));
    r.mu = std::abs(1 - 2 * r.p_e);
    return r;
}

FrameGainEstimate frame_gain_estimate(std::span<const FrameStats> frames, double snr_pre_db) {
    if (frames.empty()) throw std::domain_error("no frame statistics");
    const double snr = from_db(snr_pre_db);
    double known = 0, tcode = 0, weighted_mu = 0, M = 0;
    for (const auto& f : frames) {
        if (f.pss_sss_samples < 0 || f.pilot_symbols < 0 || f.tcode_columns < 0)
            throw std::domain_error("negative symbol count");
        const double cells = static_cast<double>(f.tcode_columns) * kTemplateRanks;
        const double Mm = cells / kTcodeLength;
        known += f.pss_sss_samples + f.pilot_symbols;
        tcode += cells;
        M += Mm;
        if (cells > 0) weighted_mu += cells * tcode_error_rate(Mm, snr).mu;
    }
    const double n = static_cast<double>(frames.size());
    FrameGainEstimate out;
    out.known_symbols = known / n;
    out.tcode_symbols = tcode / n;
    out.N_bar = out.known_symbols + out.tcode_symbols;
    out.M_bar = M / n;
    out.mu_bar = (known + weighted_mu) / (known + tcode);
    out.L_bar = processing_gain(std::max(out.N_bar, 1.0), out.mu_bar);
    return out;
}

std::string to_string(ReplicaKind k) {
    switch (k) {
        case ReplicaKind::PssSss: return "pss-sss";
        case ReplicaKind::PssSssEp: return "pss-sss-ep";
        case ReplicaKind::Lee: return "lee";
        case ReplicaKind::Full: return "full";
    }
    throw std::domain_error("unknown replica kind");
}

ReplicaKind parse_replica_kind(std::string_view s) {
    for (auto k : {ReplicaKind::PssSss, ReplicaKind::PssSssEp, ReplicaKind::Lee, ReplicaKind::Full})
        if (s == to_string(k)) return k;
    throw std::domain_error("unknown replica '" + std::string(s) + "'");
}

double edge_pilot_band_center(double bandwidth_hz) {
    int top = 0;
    for (int k : default_grid().Kp) top = std::max(top, subcarrier_offset(k));
    return (top + 0.5) * kF - bandwidth_hz / 2;
}

ReplicaSpectrum build_replica_spectrum(const ReplicaOptions& opt) {
    if (!(opt.bandwidth_hz > 0 && opt.bandwidth_hz <= kFs)) throw std::domain_error("capture bandwidth outside (0, Fs]");
    const auto& g = default_grid();
    SymbolMatrix X(kNsf);
    const auto sss = default_sss();
    for (int k : g.Kl) X(1, k) = sss[static_cast<std::size_t>(k)];
    const bool pilots = opt.kind != ReplicaKind::PssSss;
    if (pilots) {
        const auto& book = PilotCodebook::builtin();
        for (int i = kPilotFirstSymbol; i < kNsf; ++i)
            for (int k : g.Kp) X(i, k) = book.pilot_symbol(i, k);
    }
    Rng rng(opt.seed);
    std::uniform_int_distribution<std::size_t> pick(0, 3);
    const auto& qpsk = constellation(Modulation::QPSK).points;
    for (int i = kPilotFirstSymbol; i < kNsf; ++i) {
        const bool data = opt.kind == ReplicaKind::Full ||
                          (opt.kind == ReplicaKind::Lee && i >= opt.tcode_first && i <= opt.tcode_last);
        if (data)
            for (int k : g.Klnp) X(i, k) = qpsk[pick(rng)];
    }
    auto x = synth_frame(X, default_pss());
    if (!pilots) x.resize(2 * kSymLen);
    double center = 0;
    if (opt.band_center_hz) center = *opt.band_center_hz;
    else if (pilots && opt.kind != ReplicaKind::Full && opt.bandwidth_hz < kFs)
        center = edge_pilot_band_center(opt.bandwidth_hz);
    return replica_spectrum(x, center - opt.bandwidth_hz / 2, center + opt.bandwidth_hz / 2, to_string(opt.kind));
}

ReplicaSpectrum replica_spectrum(std::span<const cplx> replica, double band_lo_hz, double band_hi_hz,
                                 std::string label) {
    if (replica.empty()) throw std::domain_error("empty replica");
    const std::size_t nf = next_pow2(2 * replica.size());
    std::vector<cplx> X(nf);
    std::copy(replica.begin(), replica.end(), X.begin());
    Fft(nf, FftDirection::Forward).execute(X);
    std::vector<double> esd(nf), freq(nf);
    double total = 0, first = 0;
    for (std::size_t j = 0; j < nf; ++j) {
        const auto jj = static_cast<double>(j < nf / 2 ? static_cast<long long>(j) : static_cast<long long>(j) - static_cast<long long>(nf));
        freq[j] = jj * kFs / static_cast<double>(nf);
        if (freq[j] >= band_lo_hz && freq[j] <= band_hi_hz) esd[j] = std::norm(X[j]);
        total += esd[j];
        first += freq[j] * esd[j];
    }
    if (!(total > 0)) throw std::domain_error("replica has no energy in the capture band");
    ReplicaSpectrum r;
    r.label = std::move(label);
    r.energy = total / static_cast<double>(nf);
    r.centroid_hz = first / total;
    for (std::size_t j = 0; j < nf; ++j) r.ms_bandwidth += (freq[j] - r.centroid_hz) * (freq[j] - r.centroid_hz) * esd[j];
    r.ms_bandwidth /= total;
    r.span_s = static_cast<double>(replica.size()) * kTs;
    if (!(r.ms_bandwidth > 0)) throw std::domain_error("replica has zero mean-square bandwidth");

    // fine lags from a compressed spectrum, in ascending frequency order
    const std::size_t nb = std::min<std::size_t>(8192, nf), per = nf / nb;
    std::vector<double> ec, fc;
    for (std::size_t b = 0; b < nb; ++b) {
        double e = 0, fe = 0;
        for (std::size_t u = 0; u < per; ++u) {
            const std::size_t j = (b * per + u + nf / 2) % nf;
            e += esd[j];
            fe += (freq[j] - r.centroid_hz) * esd[j];
        }
        if (e > 0) {
            ec.push_back(e / total);
            fc.push_back(fe / e);
        }
    }
    constexpr double kFineEnd = 16;  // samples
    r.lag.push_back(0);
    r.decorrelation.push_back(0);
    constexpr int kFine = 600;
    for (int n = 0; n < kFine; ++n) {
        const double t = 1e-7 * std::pow(kFineEnd / 1e-7, n / (kFine - 1.0));
        const double h = t * kTs;
        double om;
        if (t < 1e-2) om = 2 * kPi * kPi * r.ms_bandwidth * h * h;
        else {
            cplx rho = 0;
            for (std::size_t b = 0; b < ec.size(); ++b) rho += ec[b] * std::polar(1.0, 2 * kPi * fc[b] * h);
            om = std::max(0.0, 1 - std::abs(rho));
        }
        r.lag.push_back(h);
        r.decorrelation.push_back(om);
    }

    // coarse lags on a quarter-sample grid from the upsampled autocorrelation
    constexpr std::size_t kUp = 4;
    const std::size_t max_lag = std::min<std::size_t>(replica.size() + 8, 4 * kSymLen);
    std::vector<cplx> pad(nf * kUp);
    for (std::size_t j = 0; j < nf / 2; ++j) pad[j] = esd[j];
    for (std::size_t j = nf / 2; j < nf; ++j) pad[nf * kUp - nf + j] = esd[j];
    Fft(pad.size(), FftDirection::Inverse).execute(pad);
    const double r0 = std::abs(pad[0]);
    for (std::size_t m = static_cast<std::size_t>(kFineEnd) * kUp + 1; m <= max_lag * kUp && m < pad.size(); ++m) {
        r.lag.push_back(static_cast<double>(m) / kUp * kTs);
        r.decorrelation.push_back(std::max(0.0, 1 - std::abs(pad[m]) / r0));
    }
    return r;
}

double crb_toa(const ReplicaSpectrum& r, double snr_pre_db) {
    if (!(r.ms_bandwidth > 0)) throw std::domain_error("zero mean-square bandwidth");
    const double snr_post = r.energy * from_db(snr_pre_db);
    return std::sqrt(1 / (8 * kPi * kPi * r.ms_bandwidth * snr_post));
}

double zzb_toa(const ReplicaSpectrum& r, double snr_pre_db, double prior_window_s) {
    if (!(prior_window_s > 0)) throw std::domain_error("prior window must be positive");
    const double Ta = prior_window_s;
    const double S = r.energy * from_db(snr_pre_db);
    std::vector<double> h, g;
    for (std::size_t n = 0; n < r.lag.size() && r.lag[n] < Ta; ++n) {
        h.push_back(r.lag[n]);
        g.push_back((Ta - r.lag[n]) * q_function(std::sqrt(S * r.decorrelation[n])));
    }
    // beyond the tabulated lags the replica is treated as uncorrelated
    const double a = h.back();
    const double p0 = q_function(std::sqrt(S));
    double run = (Ta - a) * p0;
    for (std::size_t n = g.size(); n-- > 0;) {
        run = std::max(run, g[n]);
        g[n] = run;
    }
    double mse = 0;
    for (std::size_t n = 1; n < h.size(); ++n) mse += 0.5 * (h[n] * g[n] + h[n - 1] * g[n - 1]) * (h[n] - h[n - 1]);
    mse += p0 * (Ta * Ta * Ta / 6 - (Ta * a * a / 2 - a * a * a / 3));
    return std::sqrt(mse / Ta);
}

std::vector<BoundPoint> toa_bounds(const ReplicaSpectrum& r, std::span<const double> snr_db, double prior_window_s) {
    std::vector<BoundPoint> out;
    for (double s : snr_db) out.push_back({s, crb_toa(r, s), zzb_toa(r, s, prior_window_s)});
    return out;
}

std::optional<double> bound_knee(std::span<const BoundPoint> pts, double ratio) {
    for (std::size_t n = pts.size(); n-- > 0;) {
        const double rn = pts[n].zzb / pts[n].crb;
        if (rn <= ratio) continue;
        if (n + 1 == pts.size()) return pts[n].snr_db;
        const double rm = pts[n + 1].zzb / pts[n + 1].crb;
        return pts[n].snr_db + (rn - ratio) / (rn - rm) * (pts[n + 1].snr_db - pts[n].snr_db);
    }
    return std::nullopt;
}

std::string format_bounds_csv(std::span<const BoundPoint> pts, const std::string& label) {
    std::ostringstream out;
    out << "snr_db,crb_rmse_s,zzb_rmse_s,replica\n";
    for (const auto& p : pts)
        out << format_double(p.snr_db) << "," << format_double(p.crb) << "," << format_double(p.zzb) << "," << label
            << "\n";
    return out.str();
}

std::vector<BoundPoint> parse_bounds_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || trim(line) != "snr_db,crb_rmse_s,zzb_rmse_s,replica")
        throw ParseError("line 1: missing bounds CSV header");
    std::vector<BoundPoint> out;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto f = split(line, ',');
        const std::string where = "line " + std::to_string(line_no);
        if (f.size() != 4) throw ParseError(where + ": expected 4 fields");
        out.push_back({parse_double(f[0], where + " snr_db"), parse_double(f[1], where + " crb_rmse_s"),
                       parse_double(f[2], where + " zzb_rmse_s")});
    }
    return out;
}

void InvariantAverager::add(const SymbolMatrix& Y) {
    if (Y.rows() != kNsf) throw std::domain_error("frame matrix needs 302 rows");
    for (int i = kPilotFirstSymbol; i < kNsf; ++i)
        for (int k : default_grid().Kl) sum_(i, k) += Y(i, k);
    ++frames_;
}

InvariantAverage InvariantAverager::finish(double sigmas) const {
    if (frames_ == 0) throw std::domain_error("no frames to average");
    const auto& g = default_grid();
    InvariantAverage out;
    out.frames = frames_;
    out.low_confidence = frames_ < 10;
    out.average = SymbolMatrix(kNsf);
    std::vector<double> power;
    for (int i = kPilotFirstSymbol; i < kNsf; ++i)
        for (int k : g.Kl) {
            out.average(i, k) = sum_(i, k) / static_cast<double>(frames_);
            power.push_back(std::norm(out.average(i, k)));
        }
    // |A|^2 of a circular Gaussian average is exponential, so its median is sigma^2 ln 2
    auto mid = power.begin() + static_cast<std::ptrdiff_t>(power.size() / 2);
    std::nth_element(power.begin(), mid, power.end());
    out.noise_sigma = std::sqrt(*mid / std::numbers::ln2);
    out.threshold = sigmas * out.noise_sigma;
    for (int i = kPilotFirstSymbol; i < kNsf; ++i)
        for (int k : g.Kl)
            if (std::abs(out.average(i, k)) > out.threshold) out.flagged.emplace_back(i, k);
    return out;
}

InvariantAverage invariant_symbol_average(std::span<const SymbolMatrix> frames, double sigmas) {
    InvariantAverager acc;
    for (const auto& Y : frames) acc.add(Y);
    return acc.finish(sigmas);
}

PilotReport pilot_report(const InvariantAverage& avg) {
    PilotReport r;
    r.frames = avg.frames;
    r.noise_sigma = avg.noise_sigma;
    r.threshold = avg.threshold;
    r.low_confidence = avg.low_confidence;
    r.flagged_cells = static_cast<int>(avg.flagged.size());
    std::vector<int> count(kNs, 0);
    for (auto [i, k] : avg.flagged) ++count[static_cast<std::size_t>(k)];
    for (int k = 0; k < kNs; ++k)
        if (count[static_cast<std::size_t>(k)] > 0)
            r.subcarriers.push_back({k, subcarrier_offset(k), count[static_cast<std::size_t>(k)]});
    return r;
}

namespace {
constexpr std::string_view kPilotMagic = "STARLINK-PILOTS";
constexpr int kPilotVersion = 1;
}  // namespace

std::string format_pilot_report(const PilotReport& r) {
    std::ostringstream out;
    out << kPilotMagic << " " << kPilotVersion << "\n";
    out << "average frames=" << r.frames << " noise_sigma=" << format_double(r.noise_sigma)
        << " threshold=" << format_double(r.threshold) << " low_confidence=" << (r.low_confidence ? 1 : 0)
        << " flagged=" << r.flagged_cells << "\n";
    for (const auto& s : r.subcarriers) out << "subcarrier k=" << s.k << " d=" << s.d << " cells=" << s.cells << "\n";
    return out.str();
}

PilotReport parse_pilot_report(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    const auto fail = [&](const std::string& msg) { throw ParseError("line " + std::to_string(line_no) + ": " + msg); };
    if (!std::getline(in, line)) throw ParseError("empty pilot report");
    ++line_no;
    {
        std::istringstream h(line);
        std::string magic;
        int version = 0;
        h >> magic >> version;
        if (magic != kPilotMagic) fail("missing pilot report header");
        if (version != kPilotVersion) fail("unsupported pilot report version " + std::to_string(version));
    }
    PilotReport r;
    bool have_average = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::istringstream h(line);
        std::string word;
        h >> word;
        const bool average = word == "average";
        if (!average && word != "subcarrier") fail("expected 'average' or 'subcarrier'");
        if (average == have_average) fail(average ? "repeated average line" : "subcarrier before average line");
        have_average = true;
        PilotSubcarrier s;
        while (h >> word) {
            const auto eq = word.find('=');
            if (eq == std::string::npos) fail("expected key=value");
            const auto key = word.substr(0, eq), val = word.substr(eq + 1);
            const std::string what = "line " + std::to_string(line_no) + " " + key;
            if (average && key == "frames") r.frames = static_cast<int>(parse_int(val, what));
            else if (average && key == "noise_sigma") r.noise_sigma = parse_double(val, what);
            else if (average && key == "threshold") r.threshold = parse_double(val, what);
            else if (average && key == "low_confidence") r.low_confidence = parse_int(val, what) != 0;
            else if (average && key == "flagged") r.flagged_cells = static_cast<int>(parse_int(val, what));
            else if (!average && key == "k") s.k = static_cast<int>(parse_int(val, what));
            else if (!average && key == "d") s.d = static_cast<int>(parse_int(val, what));
            else if (!average && key == "cells") s.cells = static_cast<int>(parse_int(val, what));
            else fail("unknown field '" + key + "'");
        }
        if (!average) r.subcarriers.push_back(s);
    }
    if (!have_average) throw ParseError("pilot report lacks an average line");
    return r;
}

}  // namespace starlink
