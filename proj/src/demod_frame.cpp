#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "starlink/demod.hpp"
#include "starlink/pilot_codes.hpp"
#include "starlink/text_io.hpp"

namespace starlink {

namespace {

struct Track {
    double tau = 0;
    double phi = 0;
};

double wrap_phase(double a) { return std::remainder(a, 2 * std::numbers::pi); }

// Delay and phase expected at symbol i from lines through the last accepted estimates.
Track predicted_track(std::span<const PerSymbolEstimate> est, int i) {
    if (est.empty()) return {};
    if (est.size() < 2) return {est.back().tau, est.back().phi};
    const std::size_t n0 = est.size() > 32 ? est.size() - 32 : 0;
    const double n = static_cast<double>(est.size() - n0);
    double sx = 0, st = 0, sp = 0, sxx = 0, sxt = 0, sxp = 0;
    double phi = est[n0].phi;
    for (std::size_t j = n0; j < est.size(); ++j) {
        if (j > n0) phi += wrap_phase(est[j].phi - est[j - 1].phi);
        const double x = est[j].i;
        sx += x;
        st += est[j].tau;
        sp += phi;
        sxx += x * x;
        sxt += x * est[j].tau;
        sxp += x * phi;
    }
    const double den = n * sxx - sx * sx;
    if (den <= 0) return {est.back().tau, est.back().phi};
    const double bt = (n * sxt - sx * st) / den, bp = (n * sxp - sx * sp) / den;
    return {(st - bt * sx) / n + bt * i, wrap_phase((sp - bp * sx) / n + bp * i)};
}

}  // namespace

DemodResult demodulate_frame(std::span<const cplx> frame, std::span<const cplx> sss, const DemodConfig& cfg,
                             const EqualizerState* channel_prior) {
    const auto& grid = default_grid();
    const auto Ybar = ofdm_demod(frame);
    DemodResult res;
    if (channel_prior) {
        const EqualizerState prior[] = {*channel_prior};
        res.equalizer = refine_channel(prior, Ybar.row(1), sss, cfg);
    } else {
        res.equalizer = estimate_channel(Ybar.row(1), sss, cfg);
    }
    const auto& eq = res.equalizer;
    const auto Yt = equalize(Ybar, eq);
    const double gutter = gutter_noise_variance(Ybar);
    const auto nv = equalized_noise_variance(gutter, eq, cfg);
    double nv_mean = 0;
    int nv_count = 0;
    for (int k : grid.Klnp)
        if (nv[k] > 0) {
            nv_mean += nv[k];
            ++nv_count;
        }
    nv_mean = nv_count ? nv_mean / nv_count : cfg.noise_floor;

    const auto& pilots = PilotCodebook::builtin();
    res.classes.assign(kNsf, ColumnClass::Composite);
    std::vector<PerSymbolEstimate> estimates;
    std::vector<ColumnClass> kept_class;
    std::vector<SymbolHypothesis> hyps;
    for (int i = 1; i < kNsf; ++i) {
        SymbolHypothesis hyp;
        hyp.known.assign(kNs, std::nullopt);
        ColumnClass cls = ColumnClass::Card4;
        if (i == 1) {
            for (int k : grid.Kl) hyp.known[k] = sss[k];
        } else {
            std::vector<cplx> raw;
            for (int k : grid.Klnp) raw.push_back(Yt(i, k));
            auto classify_at = [&](double tau) {
                std::vector<cplx> col(raw.size());
                for (std::size_t n = 0; n < raw.size(); ++n)
                    col[n] = raw[n] * std::polar(1.0, 2 * std::numbers::pi * subcarrier_offset(grid.Klnp[n]) * tau / kTs / kNs);
                return identify_constellation(col, nv_mean, cfg);
            };
            cls = classify_at(predicted_track(estimates, i).tau);
            if (cls == ColumnClass::Composite) cls = classify_at(coarse_column_delay(raw, grid.Klnp));
            res.classes[i] = cls;
            if (cls == ColumnClass::Composite) continue;
            for (int k : grid.Kp) hyp.known[k] = pilots.pilot_symbol(i, k);
            if (cls == ColumnClass::Card4) hyp.candidates = {Modulation::QPSK, Modulation::QAM4};
            else if (cls == ColumnClass::QAM16) hyp.candidates = {Modulation::QAM16};
            else hyp.candidates = {Modulation::QAM32};
        }
        res.classes[i] = cls;
        if (i > 1) {
            const auto start = predicted_track(estimates, i);
            hyp.tau_start = start.tau;
            hyp.phi_start = start.phi;
        }
        auto est = per_symbol_ml(Yt.row(i), hyp, nv, cfg);
        est.i = i;
        if (!est.converged) {
            if (i == 1) throw std::runtime_error("SSS phase/delay estimate did not converge");
            res.classes[i] = ColumnClass::Composite;
            continue;
        }
        estimates.push_back(est);
        kept_class.push_back(cls);
        hyps.push_back(std::move(hyp));
    }
    if (estimates.size() < 2) throw std::runtime_error("too few retained symbols for the joint fit");
    auto sync = joint_fit(estimates, cfg);
    // restart symbols that sit off the fitted lines from the fit itself
    bool refit = false;
    for (std::size_t j = 0; j < estimates.size(); ++j) {
        auto& e = estimates[j];
        if (std::abs(e.tau - sync.tau_at(e.i)) < cfg.outlier_delay && std::abs(wrap_phase(e.phi - sync.phi_at(e.i))) < cfg.outlier_phase)
            continue;
        auto hyp = hyps[j];
        hyp.tau_start = sync.tau_at(e.i);
        hyp.phi_start = sync.phi_at(e.i);
        auto again = per_symbol_ml(Yt.row(e.i), hyp, nv, cfg);
        again.i = e.i;
        if (again.converged && again.log_likelihood > e.log_likelihood) {
            e = again;
            refit = true;
        }
    }
    if (refit) sync = joint_fit(estimates, cfg);
    std::vector<int> rows;
    for (const auto& e : estimates) rows.push_back(e.i);
    res.Y = compensate(Yt, sync, rows);
    res.decoded = disambiguate_and_decode(res.Y, rows, kept_class, eq.masked);
    res.decoded.sync = std::move(sync);

    double inv_h = 0, h2 = 0;
    int n = 0;
    for (int k : grid.Kl)
        if (!eq.masked[k]) {
            inv_h += 1 / std::norm(eq.H_hat[k]);
            h2 += std::norm(eq.H_hat[k]);
            ++n;
        }
    const double g_sig = eq.g_hat - gutter * inv_h / n;
    const double p_sig = std::max(g_sig, 0.0) * h2 / kNs;
    res.decoded.snr_pre_est =
        gutter > 0 ? 10 * std::log10(std::max(p_sig, 1e-300) / gutter) : std::numeric_limits<double>::infinity();
    return res;
}

namespace {

constexpr const char* kMagic = "STARLINK-DECODED";
constexpr int kVersion = 1;
constexpr const char* kDigits = "0123456789abcdefghijklmnopqrstuv";

std::string fmt(double v) { return format_double(v); }

int digit_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'v') return c - 'a' + 10;
    return -1;
}

}  // namespace

std::string format_decoded_frames(std::span<const DecodedFrame> frames) {
    std::ostringstream out;
    out << kMagic << " " << kVersion << "\n";
    for (const auto& f : frames) {
        out << "frame m=" << f.m << " snr_db=" << fmt(f.snr_pre_est) << " phi_m0=" << fmt(f.sync.phi_m0)
            << " dbeta_c=" << fmt(f.sync.dbeta_c) << " tau_m0=" << fmt(f.sync.tau_m0)
            << " dbeta_s=" << fmt(f.sync.dbeta_s) << " symbols=" << f.symbols.size() << "\n";
        for (std::size_t n = 0; n < f.symbols.size(); ++n) {
            out << f.symbols[n] << " " << to_string(f.labels[n]) << " ";
            for (int v : f.point_index[n]) out << (v < 0 ? '-' : kDigits[v]);
            out << "\n";
        }
        out << "end\n";
    }
    return out.str();
}

std::vector<DecodedFrame> parse_decoded_frames(std::string_view text) {
    const auto& grid = default_grid();
    const auto& qam4 = constellation(Modulation::QAM4);
    std::vector<DecodedFrame> frames;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    auto fail = [&](const std::string& msg) { throw ParseError("line " + std::to_string(line_no) + ": " + msg); };
    if (!std::getline(in, line)) throw ParseError("empty decoded-frame file");
    ++line_no;
    {
        std::istringstream h(line);
        std::string magic;
        int version = 0;
        h >> magic >> version;
        if (magic != kMagic) fail("missing decoded-frame header");
        if (version != kVersion) fail("unsupported decoded-frame version " + std::to_string(version));
    }
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::istringstream h(line);
        std::string word;
        h >> word;
        if (word != "frame") fail("expected 'frame'");
        DecodedFrame f;
        f.X_hat = SymbolMatrix(kNsf);
        std::size_t count = 0;
        bool have_count = false;
        while (h >> word) {
            const auto eq = word.find('=');
            if (eq == std::string::npos) fail("expected key=value in frame header");
            const auto key = word.substr(0, eq), val = word.substr(eq + 1);
            const std::string what = "line " + std::to_string(line_no) + " " + key;
            if (key == "m") f.m = static_cast<int>(parse_int(val, what));
            else if (key == "snr_db") f.snr_pre_est = parse_double(val, what);
            else if (key == "phi_m0") f.sync.phi_m0 = parse_double(val, what);
            else if (key == "dbeta_c") f.sync.dbeta_c = parse_double(val, what);
            else if (key == "tau_m0") f.sync.tau_m0 = parse_double(val, what);
            else if (key == "dbeta_s") f.sync.dbeta_s = parse_double(val, what);
            else if (key == "symbols") {
                count = static_cast<std::size_t>(parse_int(val, what));
                have_count = true;
            } else fail("unknown frame field '" + key + "'");
        }
        if (!have_count) fail("frame header lacks symbols=");
        for (std::size_t n = 0; n < count; ++n) {
            if (!std::getline(in, line)) fail("unexpected end of file inside frame");
            ++line_no;
            std::istringstream r(line);
            std::string istr, lstr, cells;
            r >> istr >> lstr >> cells;
            const int i = static_cast<int>(parse_int(istr, "line " + std::to_string(line_no) + " symbol index"));
            if (i < 1 || i >= kNsf) fail("symbol index out of range");
            if (!f.symbols.empty() && i <= f.symbols.back()) fail("symbol indices must ascend");
            Modulation label;
            try {
                label = parse_modulation(lstr);
            } catch (const std::domain_error&) {
                fail("unknown constellation label '" + lstr + "'");
            }
            if (cells.size() != grid.Kl.size()) fail("expected 1020 symbol cells");
            const auto& cons = constellation(label);
            std::vector<int> idx(grid.Kl.size(), -1);
            for (std::size_t c = 0; c < cells.size(); ++c) {
                const int k = grid.Kl[c];
                if (cells[c] == '-') continue;
                const bool pilot = i >= kPilotFirstSymbol && grid.is_pilot(k);
                const auto& use = pilot ? qam4 : cons;
                const int v = digit_value(cells[c]);
                if (v < 0 || v >= static_cast<int>(use.size()))
                    fail("invalid symbol cell '" + std::string(1, cells[c]) + "' at column " + std::to_string(c));
                idx[c] = v;
                f.X_hat(i, k) = use.points[v];
            }
            f.symbols.push_back(i);
            f.labels.push_back(label);
            f.point_index.push_back(std::move(idx));
        }
        if (!std::getline(in, line) || trim(line) != "end") {
            ++line_no;
            fail("expected 'end'");
        }
        ++line_no;
        f.sync.retained = f.symbols;
        frames.push_back(std::move(f));
    }
    return frames;
}

}  // namespace starlink
