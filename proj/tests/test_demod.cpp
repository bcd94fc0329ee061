#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "starlink/demod.hpp"
#include "starlink/pilot_codes.hpp"
#include "starlink/waveform_synth.hpp"

using namespace starlink;

namespace {

constexpr double kTwoPi = 2 * std::numbers::pi;

std::vector<Modulation> mixed_labels() {
    const Modulation all[] = {Modulation::QPSK, Modulation::QAM4, Modulation::QAM16, Modulation::QAM32};
    std::vector<Modulation> labels;
    for (int i = 0; i < 300; ++i) labels.push_back(all[(i / 5) % 4]);
    return labels;
}

std::vector<cplx> noiseless_frame(const SymbolMatrix& X) {
    auto y = synth_frame(X, default_pss());
    return y;
}

cplx gaussian(std::mt19937_64& rng, double var) {
    std::normal_distribution<double> n(0, std::sqrt(var / 2));
    return {n(rng), n(rng)};
}

std::vector<cplx> random_points(Modulation m, std::size_t n, std::mt19937_64& rng) {
    const auto& pts = constellation(m).points;
    std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
    std::vector<cplx> out(n);
    for (auto& v : out) v = pts[pick(rng)];
    return out;
}

// Row over K carrying known pilots for symbol i and random data elsewhere on Kl.
std::vector<cplx> data_row(int i, Modulation m, std::mt19937_64& rng) {
    const auto& grid = default_grid();
    std::vector<cplx> row(kNs);
    const auto data = random_points(m, grid.Kl.size(), rng);
    for (std::size_t n = 0; n < grid.Kl.size(); ++n) {
        const int k = grid.Kl[n];
        row[k] = grid.is_pilot(k) ? PilotCodebook::builtin().pilot_symbol(i, k) : data[n];
    }
    return row;
}

SymbolHypothesis pilot_hypothesis(int i, std::vector<Modulation> candidates) {
    SymbolHypothesis h;
    h.candidates = std::move(candidates);
    h.known.assign(kNs, std::nullopt);
    for (int k : default_grid().Kp) h.known[k] = PilotCodebook::builtin().pilot_symbol(i, k);
    return h;
}

std::vector<double> flat_noise(double var) {
    std::vector<double> nv(kNs, 0.0);
    for (int k : default_grid().Kl) nv[k] = var;
    return nv;
}

}  // namespace

TEST_CASE("ofdm_demod inverts the transmitter") {
    std::mt19937_64 rng(3);
    const auto X = random_frame_symbols(mixed_labels(), default_sss(), rng);
    const auto Ybar = ofdm_demod(noiseless_frame(X));
    double err = 0, ref = 0;
    for (int i = 1; i < kNsf; ++i)
        for (int k = 0; k < kNs; ++k) {
            err = std::max(err, std::abs(Ybar(i, k) - X(i, k)));
            ref = std::max(ref, std::abs(X(i, k)));
        }
    CHECK(err / ref < 1e-9);
    for (int k : default_grid().Kg) CHECK(std::abs(Ybar(7, k)) < 1e-9);
    CHECK_THROWS_AS(ofdm_demod(std::vector<cplx>(kFrameLen - 1)), std::domain_error);
}

TEST_CASE("ofdm_demod of a half-sample delay shows the analytic ramp") {
    std::mt19937_64 rng(4);
    const auto X = random_frame_symbols(std::vector<Modulation>(300, Modulation::QPSK), default_sss(), rng);
    ClockModel clock;
    ChannelParams ch;
    ch.tau_los = 0.5 * kTs;
    auto y = apply_channel(noiseless_frame(X), clock, ch);
    y.resize(kFrameLen);
    const auto Ybar = ofdm_demod(y);
    const double phase = summarize(clock, ch).phase;
    double err = 0;
    for (int i : {1, 100, 301})
        for (int k : default_grid().Kl) {
            const cplx expect = X(i, k) * std::polar(1.0, phase - kTwoPi * subcarrier_offset(k) * kF * kTs / 2);
            err = std::max(err, std::abs(Ybar(i, k) - expect));
        }
    // the delayed window reaches half a sample into the support taper
    CHECK(err < 2e-3);
}

TEST_CASE("estimate_channel on clean and delayed SSS") {
    const auto sss = default_sss();
    SUBCASE("identity") {
        const auto eq = estimate_channel(sss, sss);
        double err = 0;
        for (int k : default_grid().Kl) err = std::max(err, std::abs(eq.H_hat[k] - cplx(1)));
        CHECK(err < 1e-9);
        CHECK(std::abs(eq.Z_hat - cplx(1)) < 1e-9);
        CHECK(eq.masked_count == 0);
    }
    SUBCASE("pure delay") {
        const double tau = 0.3 * kTs;
        std::vector<cplx> row(kNs);
        for (int k : default_grid().Kl) row[k] = sss[k] * std::polar(1.0, -kTwoPi * subcarrier_offset(k) * kF * tau);
        const auto eq = estimate_channel(row, sss);
        CHECK(std::abs(eq.tau_m1 - tau) < 1e-6 * kTs);
        double err = 0;
        for (int k : default_grid().Kl) err = std::max(err, std::abs(eq.H_hat[k] - cplx(1)));
        CHECK(err < 1e-6);
    }
    SUBCASE("silent row is rejected") {
        CHECK_THROWS(estimate_channel(std::vector<cplx>(kNs), sss));
    }
}

TEST_CASE("estimate_channel tracks a tilted channel after 10-frame refinement") {
    const auto sss = default_sss();
    const auto H = tilted_transfer(6);
    std::mt19937_64 rng(5);
    std::vector<EqualizerState> states;
    SymbolMatrix last(kNsf);
    for (int f = 0; f < 10; ++f) {
        const auto X = random_frame_symbols(std::vector<Modulation>(300, Modulation::QPSK), sss, rng);
        ClockModel clock;
        ChannelParams ch;
        ch.H = H;
        ch.snr_db = 15;
        ch.noise_seed = 100 + f;
        auto y = apply_channel(noiseless_frame(X), clock, ch);
        y.resize(kFrameLen);
        last = ofdm_demod(y);
        states.push_back(estimate_channel(last.row(1), sss));
    }
    const auto eq = refine_channel(states, last.row(1), sss);
    double err = 0;
    int worst = 0;
    for (int k : default_grid().Kl)
        if (std::abs(eq.H_hat[k] - H[k]) > err) {
            err = std::abs(eq.H_hat[k] - H[k]);
            worst = k;
        }
    INFO("worst d = " << subcarrier_offset(worst));
    CHECK(err < 0.05);
}

TEST_CASE("equalize divides by Z and H and masks weak subcarriers") {
    SymbolMatrix Ybar(kNsf);
    std::mt19937_64 rng(6);
    for (int i = 1; i < kNsf; ++i)
        for (int k : default_grid().Kl) Ybar(i, k) = gaussian(rng, 1);
    EqualizerState eq;
    eq.H_hat.assign(kNs, cplx(1));
    for (int k : default_grid().Kg) eq.H_hat[k] = 0;
    eq.masked.assign(kNs, false);
    eq.Z_hat = 2;
    const auto Yt = equalize(Ybar, eq);
    CHECK(std::abs(Yt(9, 5) - Ybar(9, 5) / 2.0) < 1e-15);

    DemodConfig cfg;
    std::vector<cplx> row(kNs);
    for (int k : default_grid().Kl) row[k] = default_sss()[k] * (k >= 100 && k < 103 ? 0.01 : 1.0);
    const auto weak = estimate_channel(row, default_sss(), DemodConfig{.smoother_window = 1, .smoother_order = 0});
    int expected = 0;
    for (int k : default_grid().Kl) expected += std::abs(weak.H_hat[k]) < cfg.h_floor;
    CHECK(weak.masked_count == expected);
    CHECK(weak.masked_count == 3);
    const auto out = equalize(Ybar, weak);
    CHECK(out(4, 101) == cplx(0));
}

TEST_CASE("identify_constellation") {
    std::mt19937_64 rng(7);
    const std::size_t n = default_grid().Klnp.size();
    const double rot = 0.4;
    auto rotated = [&](std::vector<cplx> v) {
        for (auto& x : v) x *= std::polar(1.0, rot);
        return v;
    };
    CHECK(identify_constellation(rotated(random_points(Modulation::QPSK, n, rng)), 0) == ColumnClass::Card4);
    CHECK(identify_constellation(rotated(random_points(Modulation::QAM4, n, rng)), 0) == ColumnClass::Card4);
    CHECK(identify_constellation(rotated(random_points(Modulation::QAM16, n, rng)), 0) == ColumnClass::QAM16);
    CHECK(identify_constellation(rotated(random_points(Modulation::QAM32, n, rng)), 0) == ColumnClass::QAM32);
    CHECK_THROWS_AS(identify_constellation(random_points(Modulation::QPSK, 99, rng), 0), std::domain_error);

    const double var = std::pow(10.0, -1.5);
    int composite = 0;
    constexpr int trials = 40;
    for (int t = 0; t < trials; ++t) {
        auto col = random_points(Modulation::QPSK, n, rng);
        const auto q16 = random_points(Modulation::QAM16, n, rng);
        for (std::size_t p = 0; p < n; p += 2) col[p] = q16[p];
        for (auto& v : col) v += gaussian(rng, var);
        composite += identify_constellation(col, var) == ColumnClass::Composite;
    }
    CHECK(composite >= 0.95 * trials);
}

TEST_CASE("per_symbol_ml on noiseless columns") {
    std::mt19937_64 rng(8);
    const int i = 57;
    const auto row = data_row(i, Modulation::QPSK, rng);
    const auto nv = flat_noise(1e-4);
    SUBCASE("phase only") {
        std::vector<cplx> y(kNs);
        for (int k : default_grid().Kl) y[k] = row[k] * std::polar(1.0, 0.3);
        const auto est = per_symbol_ml(y, pilot_hypothesis(i, {Modulation::QPSK, Modulation::QAM4}), nv);
        CHECK(est.converged);
        CHECK(est.label == Modulation::QPSK);
        CHECK(std::abs(est.phi - 0.3) < 1e-9);
        CHECK(std::abs(est.tau) < 1e-9 * kTs);
    }
    SUBCASE("2 ns delay") {
        const double tau = 2e-9;
        std::vector<cplx> y(kNs);
        for (int k : default_grid().Kl) y[k] = row[k] * std::polar(1.0, -kTwoPi * subcarrier_offset(k) * kF * tau);
        const auto est = per_symbol_ml(y, pilot_hypothesis(i, {Modulation::QPSK, Modulation::QAM4}), nv);
        CHECK(est.converged);
        CHECK(std::abs(est.tau - tau) < 0.01 * tau);
    }
}

TEST_CASE("per_symbol_ml delay variance is near the single-symbol CRB at 10 dB") {
    std::mt19937_64 rng(9);
    const double var = 0.1;
    const auto nv = flat_noise(var);
    const auto& grid = default_grid();
    // Known-symbol Fisher information in (t samples, phi); the delay bound is the Schur complement.
    double sa = 0, saa = 0;
    for (int k : grid.Kl) {
        const double a = kTwoPi * subcarrier_offset(k) / kNs;
        sa += a;
        saa += a * a;
    }
    const double crb = (var / 2) / (saa - sa * sa / grid.Kl.size());
    constexpr int trials = 300;
    double s = 0, ss = 0;
    for (int t = 0; t < trials; ++t) {
        const int i = 2 + t % 300;
        const auto row = data_row(i, Modulation::QPSK, rng);
        std::vector<cplx> y(kNs);
        for (int k : grid.Kl) y[k] = row[k] + gaussian(rng, var);
        const auto est = per_symbol_ml(y, pilot_hypothesis(i, {Modulation::QPSK}), nv);
        const double ts = est.tau / kTs;
        s += ts;
        ss += ts * ts;
    }
    const double variance = ss / trials - (s / trials) * (s / trials);
    const double ratio_db = 10 * std::log10(variance / crb);
    CHECK(ratio_db > -3);
    CHECK(ratio_db < 3);
}

TEST_CASE("joint_fit recovers linear sequences") {
    DemodConfig cfg;
    const double dbc = 1e-7, dbs = 3e-7, tau0 = 0.2 * kTs, phi0 = 0.7;
    auto make = [&](double dbc_, double dbs_, std::mt19937_64* rng, double tau_sigma) {
        std::vector<PerSymbolEstimate> est;
        std::normal_distribution<double> n(0, tau_sigma);
        for (int i = 1; i < kNsf; i += (i % 7 == 0 ? 3 : 1)) {
            PerSymbolEstimate e;
            e.i = i;
            e.tau = tau0 + kTsym * dbs_ * i + (rng ? n(*rng) : 0.0);
            const double phi = phi0 - kTwoPi * kTsym * cfg.center_hz * dbc_ * i;
            e.phi = std::remainder(phi, kTwoPi);
            e.converged = true;
            est.push_back(e);
        }
        return est;
    };
    const auto fit = joint_fit(make(dbc, dbs, nullptr, 0), cfg);
    CHECK(std::abs(fit.dbeta_c - dbc) < 1e-9);
    CHECK(std::abs(fit.dbeta_s - dbs) < 1e-12);
    CHECK(std::abs(fit.tau_m0 - tau0) < 1e-15);
    CHECK(std::abs(std::remainder(fit.phi_m0 - phi0, kTwoPi)) < 1e-9);

    SUBCASE("delay slope variance matches the LS covariance") {
        std::mt19937_64 rng(10);
        const double sigma = 0.01 * kTs;
        const auto ref = make(0, 0, nullptr, 0);
        double mean_i = 0, sxx = 0;
        for (const auto& e : ref) mean_i += e.i;
        mean_i /= ref.size();
        for (const auto& e : ref) sxx += (e.i - mean_i) * (e.i - mean_i);
        const double predicted = sigma * sigma / (kTsym * kTsym * sxx);
        constexpr int trials = 400;
        double s = 0, ss = 0;
        for (int t = 0; t < trials; ++t) {
            const double v = joint_fit(make(0, dbs, &rng, sigma), cfg).dbeta_s - dbs;
            s += v;
            ss += v * v;
        }
        const double var = ss / trials - (s / trials) * (s / trials);
        CHECK(var / predicted > 0.8);
        CHECK(var / predicted < 1.25);
    }
    SUBCASE("degenerate input") {
        CHECK_THROWS_AS(joint_fit(std::vector<PerSymbolEstimate>(1)), std::domain_error);
    }
}

TEST_CASE("compensate round trip") {
    std::mt19937_64 rng(11);
    const auto X = random_frame_symbols(std::vector<Modulation>(300, Modulation::QAM16), default_sss(), rng);
    SyncEstimate s;
    s.phi_m0 = -0.4;
    s.dbeta_c = 2e-7;
    s.tau_m0 = 0.3 * kTs;
    s.dbeta_s = -5e-7;
    SymbolMatrix Yt(kNsf);
    std::vector<int> rows;
    for (int i = 1; i < kNsf; ++i) {
        rows.push_back(i);
        for (int k : default_grid().Kl)
            Yt(i, k) = X(i, k) * std::polar(1.0, s.phi_at(i) - kTwoPi * subcarrier_offset(k) * kF * s.tau_at(i));
    }
    const auto Y = compensate(Yt, s, rows);
    double err = 0;
    for (int i : rows)
        for (int k : default_grid().Kl) err += std::norm(Y(i, k) - X(i, k));
    CHECK(std::sqrt(err / (rows.size() * default_grid().Kl.size())) < 1e-6);

    const auto same = compensate(Yt, SyncEstimate{}, rows);
    CHECK(same(10, 10) == Yt(10, 10));

    SyncEstimate neg = s;
    neg.phi_m0 = -s.phi_m0;
    neg.dbeta_c = -s.dbeta_c;
    neg.tau_m0 = -s.tau_m0;
    neg.dbeta_s = -s.dbeta_s;
    const auto back = compensate(Y, neg, rows);
    double err2 = 0;
    for (int i : rows)
        for (int k : default_grid().Kl) err2 = std::max(err2, std::abs(back(i, k) - Yt(i, k)));
    CHECK(err2 < 1e-9);
}

TEST_CASE("disambiguate_and_decode") {
    std::mt19937_64 rng(12);
    std::vector<Modulation> labels;
    for (int i = 0; i < 300; ++i) labels.push_back(i % 2 ? Modulation::QAM4 : Modulation::QPSK);
    const auto X = random_frame_symbols(labels, default_sss(), rng);
    std::vector<int> rows;
    std::vector<ColumnClass> classes;
    for (int i = 1; i < kNsf; ++i) {
        rows.push_back(i);
        classes.push_back(ColumnClass::Card4);
    }
    const auto d = disambiguate_and_decode(X, rows, classes, {});
    bool all_ok = true;
    for (std::size_t n = 1; n < rows.size(); ++n) all_ok = all_ok && d.labels[n] == labels[rows[n] - 2];
    CHECK(all_ok);
    double err = 0;
    for (int i : rows)
        for (int k : default_grid().Kl) err = std::max(err, std::abs(d.X_hat(i, k) - X(i, k)));
    CHECK(err < 1e-12);

    SUBCASE("decoding is idempotent") {
        const auto again = disambiguate_and_decode(d.X_hat, rows, classes, {});
        CHECK(again.labels == d.labels);
        CHECK(again.point_index == d.point_index);
    }
    SUBCASE("powers of j leave labels unchanged") {
        SymbolMatrix R = X;
        for (int i = 2; i < kNsf; ++i)
            for (int k = 0; k < kNs; ++k) R(i, k) *= std::pow(cplx(0, 1), i % 4);
        CHECK(disambiguate_and_decode(R, rows, classes, {}).labels == d.labels);
    }
    SUBCASE("QPSK at 13.8 dB") {
        const auto Q = random_frame_symbols(std::vector<Modulation>(300, Modulation::QPSK), default_sss(), rng);
        const double var = std::pow(10.0, -1.38);
        SymbolMatrix N = Q;
        for (int i = 1; i < kNsf; ++i)
            for (int k : default_grid().Kl) N(i, k) += gaussian(rng, var);
        const auto q = disambiguate_and_decode(N, rows, classes, {});
        long errors = 0, total = 0;
        for (int i = 2; i < kNsf; ++i)
            for (int k : default_grid().Klnp) {
                errors += std::abs(q.X_hat(i, k) - Q(i, k)) > 1e-9;
                ++total;
            }
        CHECK(static_cast<double>(errors) / total < 1e-4);
    }
}

TEST_CASE("alt_residual_sync") {
    std::mt19937_64 rng(13);
    const auto X = random_frame_symbols(mixed_labels(), default_sss(), rng);
    AltSyncConfig cfg;
    auto impaired = [&](double dbc, double phi0, double var) {
        SymbolMatrix Y(kNsf);
        for (int i : default_grid().I2)
            for (int k : default_grid().Kl) {
                const double phik = phi0 - kTwoPi * (cfg.center_hz + kF * subcarrier_offset(k)) * dbc * kTsym * i;
                Y(i, k) = X(i, k) * std::polar(1.0, phik) + (var > 0 ? gaussian(rng, var) : cplx(0));
            }
        return Y;
    };
    SUBCASE("noiseless, no offset") {
        const auto r = alt_residual_sync(impaired(0, 0.2, 0), flat_noise(1e-4), 0.2, cfg);
        CHECK(std::abs(r.dbeta_c) < 1e-12);
        CHECK(std::abs(r.phi_m0 - 0.2) < 1e-6);
    }
    SUBCASE("5e-8 at 14 dB") {
        const double var = std::pow(10.0, -1.4);
        double mean = 0;
        constexpr int trials = 3;
        for (int t = 0; t < trials; ++t)
            mean += alt_residual_sync(impaired(5e-8, -0.1, var), flat_noise(var), -0.1, cfg).dbeta_c / trials;
        CHECK(std::abs(mean - 5e-8) < 5e-10);
    }
    SUBCASE("scan edge is an error") {
        AltSyncConfig narrow = cfg;
        narrow.scan_half_range = 2e-8;
        CHECK_THROWS(alt_residual_sync(impaired(1.5e-7, 0, 0), flat_noise(1e-4), 0, narrow));
    }
}

TEST_CASE("full chain on a noiseless identity frame") {
    std::mt19937_64 rng(14);
    const auto labels = mixed_labels();
    const auto X = random_frame_symbols(labels, default_sss(), rng);
    const auto res = demodulate_frame(noiseless_frame(X), default_sss());
    const auto& d = res.decoded;
    REQUIRE(d.symbols.size() == 301);
    long errors = 0, label_errors = 0;
    for (std::size_t n = 1; n < d.symbols.size(); ++n) {
        const int i = d.symbols[n];
        label_errors += d.labels[n] != labels[i - 2];
        for (int k : default_grid().Kl) errors += std::abs(d.X_hat(i, k) - X(i, k)) > 1e-9;
    }
    CHECK(errors == 0);
    CHECK(label_errors == 0);

    SUBCASE("decoded-frame text round trip") {
        DecodedFrame f = d;
        f.m = 3;
        const DecodedFrame frames[] = {f};
        const auto text = format_decoded_frames(frames);
        const auto parsed = parse_decoded_frames(text);
        REQUIRE(parsed.size() == 1);
        CHECK(parsed[0].m == 3);
        CHECK(parsed[0].symbols == f.symbols);
        CHECK(parsed[0].labels == f.labels);
        CHECK(parsed[0].point_index == f.point_index);
        CHECK(parsed[0].sync.dbeta_c == f.sync.dbeta_c);
        CHECK(format_decoded_frames(parsed) == text);
        CHECK_THROWS(parse_decoded_frames("STARLINK-DECODED 9\n"));
    }
}
