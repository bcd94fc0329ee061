#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "starlink/acquisition.hpp"
#include "starlink/analysis.hpp"
#include "starlink/cli.hpp"
#include "starlink/scenario.hpp"
#include "starlink/text_io.hpp"

using namespace starlink;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("starlink_" + tag)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct Run {
    int status;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "starlink");
    std::ostringstream out, err;
    const int st = run_cli(args, out, err);
    return {st, out.str(), err.str()};
}

bool same_symbols(const DecodedFrame& a, const DecodedFrame& b) {
    return a.symbols == b.symbols && a.labels == b.labels && a.point_index == b.point_index;
}

}  // namespace

TEST_CASE("scenario config parsing") {
    const auto cfg = parse_scenario("# comment\nseed = 9\noccupancy=1011\nsnr_db=3.5\nmodulation=QPSK,16QAM\n");
    CHECK(cfg.seed == 9);
    CHECK(cfg.slots == 4);
    CHECK(cfg.occupancy_pattern == std::vector<bool>{true, false, true, true});
    CHECK(*cfg.snr_db == 3.5);
    CHECK(cfg.modulation_plan == std::vector<Modulation>{Modulation::QPSK, Modulation::QAM16});

    auto message = [](const char* text) {
        try {
            parse_scenario(text, "s.cfg");
        } catch (const ParseError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(message("seed=1\nbogus=2\n").find("s.cfg line 2") != std::string::npos);
    CHECK(message("seed=1\n\nseed=2\n").find("line 3: duplicate") != std::string::npos);
    CHECK(message("snr_db=loud\n").find("line 1") != std::string::npos);
    CHECK(message("slots=3\noccupancy=10\n").find("pattern length") != std::string::npos);
    CHECK(message("modulation=QPSK,64QAM\n").find("64QAM") != std::string::npos);
    CHECK(message("noequals\n").find("s.cfg line 1") != std::string::npos);
}

TEST_CASE("scenario truth lists exactly the occupied slots") {
    auto cfg = parse_scenario("seed=3\nslots=40\noccupancy=0.5\n");
    auto s = build_scenario(cfg);
    std::vector<int> slots;
    for (const auto& t : s.truth) slots.push_back(t.slot);
    CHECK(slots.size() > 10);
    CHECK(slots.size() < 30);
    CHECK(std::is_sorted(slots.begin(), slots.end()));
    CHECK(s.symbols.size() == slots.size());
    CHECK(s.emissions.size() == slots.size());
    for (std::size_t n = 0; n < s.truth.size(); ++n) {
        CHECK(s.truth[n].m == static_cast<int>(n));
        CHECK(s.emissions[n].start_s == doctest::Approx(cfg.lead_s + s.truth[n].slot * kTf));
    }

    const auto parsed = parse_truth(format_truth(cfg, s));
    REQUIRE(parsed.size() == s.truth.size());
    for (std::size_t n = 0; n < parsed.size(); ++n) {
        CHECK(parsed[n].slot == s.truth[n].slot);
        CHECK(parsed[n].theta == s.truth[n].theta);
        CHECK(parsed[n].impairment.phase == s.truth[n].impairment.phase);
    }

    const auto again = build_scenario(cfg);
    CHECK(format_truth(cfg, again) == format_truth(cfg, s));
    CHECK(format_decoded_frames(again.symbols) == format_decoded_frames(s.symbols));
}

TEST_CASE("T-code scenario feeds template and extraction") {
    const auto cfg = parse_scenario("seed=5\nslots=30\ncontent=tcode\ntcode_fraction=0.4\ntcode_pool=3\n");
    const auto s = build_scenario(cfg);
    std::vector<DecodedFrame> pure;
    for (const auto& f : s.symbols)
        if (qpsk_ratio(f) == 1.0) pure.push_back(f);
    const auto tmpl = build_reference_template(pure);
    const auto truth_tmpl = scenario_template(cfg.seed);
    int wrong = 0;
    for (int i = 2; i < kNsf; ++i)
        for (int r = 0; r < kTemplateRanks; ++r) wrong += tmpl.point(i, r) != truth_tmpl.point(i, r);
    CHECK(wrong == 0);

    int coded = 0;
    for (std::size_t n = 0; n < s.truth.size(); ++n) {
        const auto& t = s.truth[n];
        const auto D = deviation(s.symbols[n], tmpl);
        const auto b = detect_header_boundary(D);
        if (!t.code) {
            // an idle frame reads as the all-ones code over every column
            REQUIRE(b.i_hm.has_value());
            CHECK(*b.i_hm == 1);
            const auto c = extract_tcode(D, 1);
            CHECK(std::all_of(c.code.begin(), c.code.end(), [](auto v) { return v == 1; }));
            continue;
        }
        ++coded;
        REQUIRE(b.i_hm.has_value());
        CHECK(*b.i_hm == *t.i_hm);
        const auto c = extract_tcode(D, *b.i_hm);
        CHECK(c.code == t.code->code);
        CHECK(c.phase == t.code->phase);
    }
    CHECK(coded > 3);
    const auto parsed = parse_truth(format_truth(cfg, s));
    for (std::size_t n = 0; n < parsed.size(); ++n) {
        CHECK(parsed[n].i_hm == s.truth[n].i_hm);
        CHECK(parsed[n].code.has_value() == s.truth[n].code.has_value());
        if (parsed[n].code) CHECK(parsed[n].code->code == s.truth[n].code->code);
    }
}

TEST_CASE("detection and pilot report formats round trip") {
    AcquisitionResult a;
    a.n_hat = 1234;
    a.beta_hat = 1.5e-6;
    a.peak = 3.25;
    a.threshold = 1.0 / 3;
    a.accepted = true;
    const AcquisitionResult list[] = {a, AcquisitionResult{}};
    const auto text = format_detections(list);
    const auto back = parse_detections(text);
    REQUIRE(back.size() == 2);
    CHECK(back[0].n_hat == 1234);
    CHECK(back[0].threshold == a.threshold);
    CHECK(back[1].snr_pre_est == -std::numeric_limits<double>::infinity());
    CHECK(format_detections(back) == text);
    CHECK_THROWS_AS(parse_detections("STARLINK-ACQ 1\ndetection n_hat=x\n"), ParseError);

    PilotReport r;
    r.frames = 10;
    r.noise_sigma = 0.1;
    r.threshold = 0.6;
    r.flagged_cells = 600;
    r.subcarriers = {{488, -536, 300}, {535, -489, 300}};
    const auto rt = format_pilot_report(r);
    CHECK(format_pilot_report(parse_pilot_report(rt)) == rt);
    CHECK_THROWS_AS(parse_pilot_report("STARLINK-PILOTS 1\nsubcarrier k=1\n"), ParseError);

    const std::vector<BoundPoint> pts = {{-1.5, 1e-9 / 3, 2e-9 / 7}};
    const auto csv = format_bounds_csv(pts, "lee");
    const auto pb = parse_bounds_csv(csv);
    REQUIRE(pb.size() == 1);
    CHECK(pb[0].crb == pts[0].crb);
    CHECK(pb[0].zzb == pts[0].zzb);
}

TEST_CASE("cli usage and input errors") {
    TempDir dir("cli_errors");
    CHECK(cli({}).status == kExitUsage);
    CHECK(cli({"frobnicate"}).status == kExitUsage);
    CHECK(cli({"synth", "--out", dir / "x"}).status == kExitUsage);
    CHECK(cli({"bounds", "--replica", "nope", "--out", dir / "b.csv"}).status == kExitUsage);
    CHECK(cli({"--help"}).status == kExitOk);

    const auto missing = cli({"acquire", "--iq", dir / "none.iq", "--out", dir / "a.acq"});
    CHECK(missing.status == kExitInput);
    CHECK(missing.err.find("none.meta") != std::string::npos);

    write_text_file(dir / "bad.cfg", "seed=1\nslots=two\n");
    const auto bad = cli({"synth", "--config", dir / "bad.cfg", "--out", dir / "x"});
    CHECK(bad.status == kExitInput);
    CHECK(bad.err.find("line 2") != std::string::npos);

    write_text_file(dir / "c.meta", "sample_rate_hz=240000000\ncenter_freq_hz=11325000000\nepoch=0\n");
    write_text_file(dir / "c.iq", std::string(13, '\0'));
    const auto torn = cli({"acquire", "--iq", dir / "c.iq", "--out", dir / "a.acq"});
    CHECK(torn.status == kExitInput);
    CHECK(torn.err.find("byte") != std::string::npos);

    const auto numeric = cli({"gain", "--n", "10", "--mu", "2", "--out", dir / "g.txt"});
    CHECK(numeric.status == kExitNumeric);
}

TEST_CASE("cli synth, demod and downstream commands") {
    TempDir dir("cli_chain");
    write_text_file(dir / "s.cfg", "seed=7\nslots=3\noccupancy=101\ncontent=tcode\ntcode_fraction=0.5\n");
    const auto synth = cli({"synth", "--config", dir / "s.cfg", "--out", dir / "cap"});
    REQUIRE(synth.status == kExitOk);
    CHECK(synth.out.rfind("{\"command\":\"synth\"", 0) == 0);
    // 3 slots and the lead at 240 MHz, 8 bytes per complex sample
    const auto samples = static_cast<std::uintmax_t>(std::llround((1e-5 + 3 * kTf) * kFs));
    CHECK(fs::file_size(dir / "cap.iq") == 8 * samples);

    const std::vector<std::string> narrow = {"--doppler-min", "-2000", "--doppler-max", "2000"};
    auto acq_args = std::vector<std::string>{"acquire", "--iq", dir / "cap.iq", "--out", dir / "cap.acq"};
    acq_args.insert(acq_args.end(), narrow.begin(), narrow.end());
    REQUIRE(cli(acq_args).status == kExitOk);
    const auto det = parse_detections(read_text_file(dir / "cap.acq"));
    REQUIRE(det.size() == 2);
    const auto truth = parse_truth(read_text_file(dir / "cap.truth"));
    REQUIRE(truth.size() == 2);
    for (std::size_t n = 0; n < 2; ++n) CHECK(det[n].n_hat == std::llround(truth[n].start_s * kFs));

    const auto demod = cli({"demod", "--iq", dir / "cap.iq", "--detections", dir / "cap.acq", "--out", dir / "cap.dec"});
    REQUIRE(demod.status == kExitOk);
    const auto decoded = parse_decoded_frames(read_text_file(dir / "cap.dec"));
    const auto sent = parse_decoded_frames(read_text_file(dir / "cap.symbols"));
    REQUIRE(decoded.size() == sent.size());
    for (std::size_t n = 0; n < sent.size(); ++n) CHECK(same_symbols(decoded[n], sent[n]));

    REQUIRE(cli({"template", "--decoded", dir / "cap.symbols", "--out", dir / "t.txt"}).status == kExitOk);
    REQUIRE(cli({"tcode", "--decoded", dir / "cap.dec", "--template", dir / "t.txt", "--out", dir / "tc.txt"}).status ==
            kExitOk);
    const auto codes = parse_tcodes(read_text_file(dir / "tc.txt"));
    CHECK(codes.size() == 2);
    REQUIRE(cli({"gain", "--tcodes", dir / "tc.txt", "--snr-db", "13.8", "--out", dir / "g.txt"}).status == kExitOk);
    const auto kv = parse_key_values(read_text_file(dir / "g.txt"));
    CHECK(std::any_of(kv.begin(), kv.end(), [](const KeyValue& e) { return e.key == "L_bar_db"; }));

    const auto b = cli({"bounds", "--replica", "pss-sss", "--snr-min", "-25", "--snr-max", "-10", "--snr-step", "1",
                        "--out", dir / "b.csv"});
    REQUIRE(b.status == kExitOk);
    CHECK(parse_bounds_csv(read_text_file(dir / "b.csv")).size() == 16);
    CHECK(b.out.find("\"knee_db\":-17.") != std::string::npos);
}
