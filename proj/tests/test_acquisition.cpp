#include <doctest.h>

#include <cmath>
#include <random>

#include "starlink/acquisition.hpp"
#include "starlink/waveform_synth.hpp"

using namespace starlink;

namespace {

std::vector<cplx> sss_slot() { return ofdm_symbol_time(default_sss()); }

std::vector<cplx> embed(std::span<const cplx> frame, std::size_t offset, std::size_t total) {
    std::vector<cplx> s(total);
    for (std::size_t n = 0; n < frame.size() && offset + n < total; ++n) s[offset + n] = frame[n];
    return s;
}

SymbolMatrix qpsk_frame(std::uint64_t seed) {
    Rng rng(seed);
    return random_frame_symbols(std::vector<Modulation>(300, Modulation::QPSK), default_sss(), rng);
}

double energy(std::span<const cplx> v) {
    double e = 0;
    for (auto x : v) e += std::norm(x);
    return e;
}

}  // namespace

TEST_CASE("build_replica length and shape") {
    const auto pss = default_pss();
    const auto sss = sss_slot();
    const auto r0 = build_replica(pss, sss, 0);
    REQUIRE(r0.size() == 2112);
    const auto frame = synth_frame(qpsk_frame(1), pss);
    double err = 0;
    for (std::size_t n = 0; n < r0.size(); ++n) err = std::max(err, std::abs(r0[n] - frame[n]));
    CHECK(err < 1e-9);
    CHECK(replica_length(15e-6) == 2113);
    CHECK(build_replica(pss, sss, 15e-6).size() == 2113);
    for (double b : {-25e-6, 12e-6, 25e-6}) CHECK(std::abs(energy(build_replica(pss, sss, b)) / energy(r0) - 1) < 1e-3);
    CHECK_THROWS_AS(build_replica(pss, sss, 26e-6), std::domain_error);
    CHECK_THROWS_AS(build_replica(pss, std::vector<cplx>(10), 0), std::domain_error);
}

TEST_CASE("Doppler grid") {
    DopplerGrid g;
    const auto v = g.values();
    CHECK(v.size() % 2 == 1);
    CHECK(v[v.size() / 2] == 0.0);
    CHECK(std::abs(v.front()) <= kMaxAcquisitionBeta);
    CHECK_THROWS(DopplerGrid{.min = 0, .max = 3e-5}.values());
}

TEST_CASE("ambiguity surface peaks at the replica") {
    const auto pss = default_pss();
    const auto sss = sss_slot();
    const auto rep = build_replica(pss, sss, 0);
    const auto stream = embed(rep, 100, 12000);
    const std::vector<double> betas = {-2e-7, 0, 2e-7};
    const auto s = ambiguity_surface(stream, 0, 9000, betas, pss, sss);
    double best = 0;
    std::size_t bb = 0, bl = 0;
    for (std::size_t b = 0; b < betas.size(); ++b)
        for (std::size_t l = 0; l < s.R[b].size(); ++l)
            if (std::abs(s.R[b][l]) > best) {
                best = std::abs(s.R[b][l]);
                bb = b;
                bl = l;
            }
    CHECK(bb == 1);
    CHECK(bl == 100);
    CHECK(std::abs(best / energy(rep) - 1) < 1e-9);

    SUBCASE("complex scaling") {
        const cplx c(0.3, -1.7);
        auto scaled = stream;
        for (auto& v : scaled) v *= c;
        const auto t = ambiguity_surface(scaled, 0, 9000, betas, pss, sss);
        CHECK(std::abs(std::abs(t.R[1][100]) / (std::abs(c) * best) - 1) < 1e-9);
    }
    CHECK_THROWS_AS(ambiguity_surface(stream, 0, 11000, betas, pss, sss), std::domain_error);
}

TEST_CASE("noise-only exceedance follows the CFAR rule") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> n(0, std::sqrt(0.5));
    std::vector<cplx> noise(400000);
    for (auto& v : noise) v = {n(rng), n(rng)};
    AcquisitionConfig cfg;
    cfg.grid = {.min = -2e-7, .max = 2e-7, .step = 2e-7};
    cfg.pfa = 1e-2;
    const auto r = acquire(noise, default_pss(), sss_slot(), cfg);
    const auto s = ambiguity_surface(noise, 0, 300000, cfg.grid.values(), default_pss(), sss_slot(), cfg);
    long above = 0, total = 0;
    for (const auto& row : s.R)
        for (auto v : row) {
            above += std::abs(v) >= r.threshold;
            ++total;
        }
    // cells are nearly independent at lags a replica length apart; allow a wide band around 1e-2
    const double rate = static_cast<double>(above) / total;
    CHECK(rate > 0.007);
    CHECK(rate < 0.013);

    cfg.pfa = 1e-9;
    CHECK_FALSE(acquire(noise, default_pss(), sss_slot(), cfg).accepted);
}

TEST_CASE("acquire and compensate a Doppler-shifted frame") {
    const auto X = qpsk_frame(2);
    const auto frame = synth_frame(X, default_pss());
    ClockModel clock;
    ChannelParams ch;
    ch.beta = 10e-6;
    auto y = apply_channel(frame, clock, ch);
    const auto stream = embed(y, 700, kFrameLen + 6000);
    AcquisitionConfig cfg;
    cfg.grid = {.min = 8e-6, .max = 12e-6, .step = 2e3 / 11.325e9};
    const auto r = acquire(stream, default_pss(), sss_slot(), cfg);
    REQUIRE(r.accepted);
    CHECK(r.n_hat == 700);
    CHECK(std::abs(r.beta_hat - 10e-6) <= cfg.grid.step);

    const auto out = coarse_compensate(stream, r.n_hat, 10e-6);
    // with the exact beta only the scaling inside each slot remains
    cplx num = 0;
    double den = 0;
    for (int s : {1, 150, 301})
        for (int v = 16; v < 1040; ++v) {
            const std::size_t n = static_cast<std::size_t>(s) * kSymLen + v;
            num += out[n] * std::conj(frame[n]);
            den += std::norm(frame[n]);
        }
    const cplx rot = num / den;
    double rms = 0, ref = 0;
    for (int s : {1, 150, 301})
        for (int v = 16; v < 1040; ++v) {
            const std::size_t n = static_cast<std::size_t>(s) * kSymLen + v;
            rms += std::norm(out[n] - rot * frame[n]);
            ref += std::norm(frame[n]);
        }
    CHECK(std::abs(std::abs(rot) - 1) < 1e-3);
    CHECK(std::sqrt(rms / ref) < 0.02);
}

TEST_CASE("noiseless identity frame is extracted exactly") {
    const auto frame = synth_frame(qpsk_frame(3), default_pss());
    const auto stream = embed(frame, 1234, kFrameLen + 5000);
    AcquisitionConfig cfg;
    cfg.grid = {.min = -4e-7, .max = 4e-7, .step = 2e3 / 11.325e9};
    const auto all = acquire_all(stream, default_pss(), sss_slot(), cfg);
    REQUIRE(all.size() == 1);
    CHECK(all[0].n_hat == 1234);
    CHECK(all[0].beta_hat == 0.0);
    const auto out = coarse_compensate(stream, all[0].n_hat, all[0].beta_hat);
    double err = 0;
    for (std::size_t n = 0; n < out.size(); ++n) err = std::max(err, std::abs(out[n] - frame[n]));
    CHECK(err < 1e-12);
    CHECK_THROWS(coarse_compensate(stream, 6000, 0));
}
