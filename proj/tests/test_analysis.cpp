#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "starlink/analysis.hpp"
#include "starlink/pilot_codes.hpp"
#include "starlink/waveform_synth.hpp"

using namespace starlink;

namespace {

// Maclaurin series of erf, independent of std::erfc
double erfc_series(double x) {
    double term = x, sum = x;
    for (int n = 1; n < 200; ++n) {
        term *= -x * x / n;
        sum += term / (2 * n + 1);
    }
    return 1 - 2 / std::sqrt(std::numbers::pi) * sum;
}

std::vector<double> snr_grid() {
    std::vector<double> s;
    for (int n = -60; n <= 20; ++n) s.push_back(n * 0.5);
    return s;
}

// One OFDM symbol carrying unit QPSK on the listed subcarrier offsets.
std::vector<cplx> tone_block(std::span<const int> offsets) {
    std::vector<cplx> X(kNs);
    for (int d : offsets) X[static_cast<std::size_t>((d + kNs) % kNs)] = 1;
    return ofdm_symbol_time(X);
}

}  // namespace

TEST_CASE("processing_gain") {
    CHECK(processing_gain(1234, 0).linear == 1.0);
    CHECK(std::abs(processing_gain(318912, 1).db - 55.0) < 0.1);
    CHECK(std::abs(processing_gain(69500, 1).db - 10 * std::log10(69500.0)) < 1e-12);
    CHECK(processing_gain(100, 0.5).linear == doctest::Approx(1 + 99 * 0.25));
    CHECK(processing_gain(1000, 0.9).linear > processing_gain(1000, 0.8).linear);
    CHECK(processing_gain(1001, 0.9).linear > processing_gain(1000, 0.9).linear);
    CHECK_THROWS_AS(processing_gain(10, 1.01), std::domain_error);
    CHECK_THROWS_AS(processing_gain(0.5, 0.5), std::domain_error);
}

TEST_CASE("empirical_gain follows the formula") {
    EmpiricalGainConfig cfg;
    cfg.N = 1000;
    cfg.trials = 10000;
    CHECK(std::abs(empirical_gain(cfg).db - 30) < 0.5);
    cfg.policy = ReplicaPolicy::Independent;
    CHECK(std::abs(empirical_gain(cfg).db) < 0.5);
    cfg.policy = ReplicaPolicy::SignFlip;
    cfg.flip_probability = 0.1;
    CHECK(std::abs(empirical_gain(cfg).db - processing_gain(1000, 0.8).db) < 0.5);
    cfg.flip_probability = 2;
    CHECK_THROWS_AS(empirical_gain(cfg), std::domain_error);
}

TEST_CASE("tcode_error_rate") {
    const auto hi = tcode_error_rate(1000, 1e3);
    CHECK(hi.p_e == 0.0);
    CHECK(hi.mu == 1.0);
    const auto half = tcode_error_rate(50, 0.01);
    CHECK(std::abs(half.p_e - 0.5 * erfc_series(std::sqrt(0.5))) < 1e-12);
    CHECK(std::abs(half.mu - std::abs(1 - erfc_series(std::sqrt(0.5)))) < 1e-12);
    CHECK_THROWS_AS(tcode_error_rate(0.5, 1), std::domain_error);
    CHECK_THROWS_AS(tcode_error_rate(10, 0), std::domain_error);
}

TEST_CASE("frame_gain_estimate") {
    std::vector<FrameStats> pilots_only(5);
    const auto p = frame_gain_estimate(pilots_only, 13.8);
    CHECK(p.N_bar == 2 * 1056 + 16 * 300);
    CHECK(std::abs(p.L_bar.db - 10 * std::log10(6912.0)) < 1e-9);
    CHECK(p.mu_bar == 1.0);

    std::vector<FrameStats> tc(3);
    tc[0].tcode_columns = 62;
    tc[1].tcode_columns = 63;
    tc[2].tcode_columns = 62;
    const auto hi = frame_gain_estimate(tc, 13.8);
    CHECK(hi.N_bar == doctest::Approx(6912 + 1004 * (62 + 63 + 62) / 3.0));
    CHECK(hi.M_bar == doctest::Approx(1004 * (62 + 63 + 62) / 3.0 / 60));
    CHECK(hi.mu_bar == 1.0);
    CHECK(std::abs(hi.L_bar.db - 48.4) < 0.1);

    // as the T-code SNR vanishes mu_T -> 0 and the gain falls toward the pilot-only value
    double prev = hi.L_bar.db;
    for (double snr : {-20.0, -30.0, -40.0, -60.0}) {
        const double g = frame_gain_estimate(tc, snr).L_bar.db;
        CHECK(g <= prev);
        prev = g;
    }
    const double floor_db = frame_gain_estimate(tc, -140).L_bar.db;
    // mu_bar -> 6912 / N_bar, so L -> 1 + (N_bar - 1)(6912 / N_bar)^2
    const double expect = 1 + (hi.N_bar - 1) * std::pow(6912 / hi.N_bar, 2);
    CHECK(std::abs(floor_db - 10 * std::log10(expect)) < 0.01);
    CHECK_THROWS_AS(frame_gain_estimate(std::vector<FrameStats>{}, 0), std::domain_error);
}

TEST_CASE("CRB scaling") {
    const auto r = build_replica_spectrum({});
    CHECK(std::abs(crb_toa(r, 3.0103) * std::sqrt(2) / crb_toa(r, 0) - 1) < 1e-4);

    SUBCASE("band-edge energy lowers the bound") {
        std::vector<int> centre, edge;
        for (int d = 2; d < 10; ++d) {
            centre.push_back(d);
            centre.push_back(-d - 1);
        }
        for (int d = 0; d < 8; ++d) {
            edge.push_back(480 + d);
            edge.push_back(-487 + d);
        }
        const auto rc = replica_spectrum(tone_block(centre), -kFs / 2, kFs / 2, "centre");
        const auto re = replica_spectrum(tone_block(edge), -kFs / 2, kFs / 2, "edge");
        // the CP repeats a non-flat envelope, so energies differ slightly
        CHECK(std::abs(rc.energy / re.energy - 1) < 0.1);
        CHECK(re.ms_bandwidth > 100 * rc.ms_bandwidth);
        CHECK(crb_toa(re, 0) < crb_toa(rc, 0) / 10);
    }

    SUBCASE("full frame against PSS+SSS: ratio from substituted energy and bandwidth") {
        ReplicaOptions o;
        o.kind = ReplicaKind::Full;
        const auto f = build_replica_spectrum(o);
        const double expect = std::sqrt(f.energy * f.ms_bandwidth / (r.energy * r.ms_bandwidth));
        CHECK(std::abs(crb_toa(r, -5) / crb_toa(f, -5) / expect - 1) < 1e-12);
        // with nearly equal bandwidths the ratio is close to sqrt of the gain ratio
        CHECK(std::abs(crb_toa(r, -5) / crb_toa(f, -5) / std::sqrt(f.energy / r.energy) - 1) < 0.01);
    }

    CHECK_THROWS_AS(replica_spectrum(std::vector<cplx>(64), -kFs / 2, kFs / 2, "zero"), std::domain_error);
    CHECK_THROWS_AS(build_replica_spectrum({.bandwidth_hz = 300e6}), std::domain_error);
}

TEST_CASE("ZZB against CRB for the PSS+SSS replica") {
    const auto r = build_replica_spectrum({});
    const auto snr = snr_grid();
    const auto b = toa_bounds(r, snr);
    for (std::size_t n = 0; n < b.size(); ++n) {
        // a uniform prior of finite width can pull the ZZB a hair under the CRB
        CHECK(b[n].zzb >= b[n].crb * (1 - 1e-3));
        if (n > 0) {
            CHECK(b[n].zzb <= b[n - 1].zzb * (1 + 1e-12));
            CHECK(b[n].crb < b[n - 1].crb);
        }
    }
    CHECK(b.back().zzb / b.back().crb < 1.05);
    const auto knee = bound_knee(b);
    REQUIRE(knee.has_value());
    CHECK(std::abs(*knee + 17.4) < 2);
    // at low SNR the ZZB saturates near the prior spread
    CHECK(b.front().zzb < kTsym / std::sqrt(6.0) * 1.01);

    const auto csv = format_bounds_csv(b, "pss-sss");
    CHECK(csv.rfind("snr_db,crb_rmse_s,zzb_rmse_s,replica\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(b.size() + 1));
}

TEST_CASE("bound_knee interpolates the crossing") {
    const std::vector<BoundPoint> pts = {{-2, 1, 1.5}, {-1, 1, 1.3}, {0, 1, 1.0}, {1, 1, 1.0}};
    CHECK(*bound_knee(pts) == doctest::Approx(-1 + 0.2 / 0.3));
    const std::vector<BoundPoint> flat = {{0, 1, 1.0}, {1, 1, 1.01}};
    CHECK_FALSE(bound_knee(flat).has_value());
    CHECK(parse_replica_kind("lee") == ReplicaKind::Lee);
    CHECK_THROWS(parse_replica_kind("nope"));
}

TEST_CASE("invariant symbol averaging flags the pilot cells") {
    const auto& g = default_grid();
    const double snr = std::pow(10.0, 1.0);
    const double sigma2 = 1 / snr;
    Rng rng(31);
    std::normal_distribution<double> n(0, std::sqrt(sigma2 / 2));
    const std::vector<Modulation> labels(300, Modulation::QAM16);
    InvariantAverager acc;
    constexpr int M = 100;
    for (int m = 0; m < M; ++m) {
        auto Y = random_frame_symbols(labels, default_sss(), rng);
        for (int i = 2; i < kNsf; ++i)
            for (int k : g.Kl) Y(i, k) += cplx(n(rng), n(rng));
        acc.add(Y);
    }
    const auto out = acc.finish();
    CHECK(out.flagged.size() == 4800);
    bool all_pilots = true;
    for (auto [i, k] : out.flagged) all_pilots &= g.is_pilot(k);
    CHECK(all_pilots);
    // data averages shrink like 1/sqrt(M)
    CHECK(std::abs(out.noise_sigma / std::sqrt((1 + sigma2) / M) - 1) < 0.05);
    const auto& book = PilotCodebook::builtin();
    double worst = 0;
    for (auto [i, k] : out.flagged) worst = std::max(worst, std::abs(out.average(i, k) - book.pilot_symbol(i, k)));
    CHECK(worst < 6 * std::sqrt(sigma2 / M));
    CHECK_FALSE(out.low_confidence);

    InvariantAverager few;
    few.add(random_frame_symbols(labels, default_sss(), rng));
    CHECK(few.finish().low_confidence);
    CHECK_THROWS_AS(InvariantAverager{}.finish(), std::domain_error);
}
