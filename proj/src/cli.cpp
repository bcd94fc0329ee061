#include "starlink/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <optional>

#include "starlink/acquisition.hpp"
#include "starlink/analysis.hpp"
#include "starlink/demod.hpp"
#include "starlink/scenario.hpp"
#include "starlink/template_tcode.hpp"
#include "starlink/text_io.hpp"
#include "starlink/waveform_synth.hpp"

namespace starlink {

namespace {

using Summary = nlohmann::ordered_json;

struct CaptureOptions {
    std::string iq;
    std::string meta;
    double pfa = AcquisitionConfig{}.pfa;
    std::optional<double> doppler_min, doppler_max, doppler_step;  // Hz
};

void add_capture_options(CLI::App* cmd, CaptureOptions& o) {
    cmd->add_option("--iq", o.iq, "interleaved float32 IQ capture")->required();
    cmd->add_option("--meta", o.meta, "sidecar metadata (default: IQ path with .meta)");
    cmd->add_option("--pfa", o.pfa, "per-cell false-alarm probability");
    cmd->add_option("--doppler-min", o.doppler_min, "lowest Doppler hypothesis, Hz");
    cmd->add_option("--doppler-max", o.doppler_max, "highest Doppler hypothesis, Hz");
    cmd->add_option("--doppler-step", o.doppler_step, "Doppler step, Hz");
}

std::string meta_path(const CaptureOptions& o) {
    if (!o.meta.empty()) return o.meta;
    const auto dot = o.iq.rfind(".iq");
    if (dot != std::string::npos && dot + 3 == o.iq.size()) return o.iq.substr(0, dot) + ".meta";
    return o.iq + ".meta";
}

struct Capture {
    CaptureStream stream;
    AcquisitionConfig acq;
};

Capture load_capture(const CaptureOptions& o) {
    Capture c;
    c.stream = read_meta(meta_path(o));
    c.stream.samples = read_iq(o.iq);
    c.acq.center_hz = c.stream.center_hz;
    c.acq.pfa = o.pfa;
    // Doppler f maps to beta = f / Fc
    const double fc = c.stream.center_hz;
    if (o.doppler_min) c.acq.grid.min = *o.doppler_min / fc;
    if (o.doppler_max) c.acq.grid.max = *o.doppler_max / fc;
    if (o.doppler_step) c.acq.grid.step = *o.doppler_step / fc;
    else c.acq.grid.step = 2e3 / fc;
    if (!(c.acq.grid.step > 0) || c.acq.grid.max < c.acq.grid.min)
        throw std::domain_error("Doppler grid needs step > 0 and max >= min");
    if (!(c.acq.pfa > 0 && c.acq.pfa < 1)) throw std::domain_error("pfa must lie in (0, 1)");
    return c;
}

std::vector<AcquisitionResult> detect(const Capture& c) {
    const auto sss = ofdm_symbol_time(default_sss());
    return acquire_all(c.stream.samples, default_pss(), sss, c.acq);
}

struct Demodulated {
    std::vector<DecodedFrame> frames;
    std::vector<SymbolMatrix> Y;
    int skipped = 0;
};

Demodulated demodulate_all(const Capture& c, std::span<const AcquisitionResult> detections, std::ostream& err) {
    DemodConfig cfg;
    cfg.center_hz = c.stream.center_hz;
    const auto sss = default_sss();
    Demodulated out;
    for (const auto& d : detections) {
        if (!d.accepted) continue;
        try {
            const auto frame = coarse_compensate(c.stream.samples, d.n_hat, d.beta_hat, c.stream.center_hz);
            auto res = demodulate_frame(frame, sss, cfg);
            res.decoded.m = static_cast<int>(out.frames.size());
            out.frames.push_back(std::move(res.decoded));
            out.Y.push_back(std::move(res.Y));
        } catch (const std::exception& e) {
            err << "warning: detection at sample " << d.n_hat << " skipped: " << e.what() << "\n";
            ++out.skipped;
        }
    }
    return out;
}

std::vector<DecodedFrame> read_decoded(const std::vector<std::string>& paths) {
    std::vector<DecodedFrame> frames;
    for (const auto& p : paths) {
        std::vector<DecodedFrame> part;
        try {
            part = parse_decoded_frames(read_text_file(p));
        } catch (const ParseError& e) {
            throw ParseError(p + ": " + e.what());
        }
        for (auto& f : part) frames.push_back(std::move(f));
    }
    return frames;
}

Summary cmd_synth(const std::string& config, std::optional<std::uint64_t> seed, std::optional<double> snr_db,
                  const std::string& prefix) {
    auto cfg = parse_scenario(read_text_file(config), config);
    if (seed) cfg.seed = *seed;
    if (snr_db) cfg.snr_db = *snr_db;
    const auto s = build_scenario(cfg);
    const auto stream = render_scenario(cfg, s);
    write_iq(prefix + ".iq", stream.samples);
    write_meta(prefix + ".meta", stream);
    write_text_file(prefix + ".truth", format_truth(cfg, s));
    write_text_file(prefix + ".symbols", format_decoded_frames(s.symbols));
    Summary j;
    j["command"] = "synth";
    j["seed"] = cfg.seed;
    j["slots"] = cfg.slots;
    j["frames"] = s.truth.size();
    j["samples"] = stream.samples.size();
    j["iq"] = prefix + ".iq";
    j["meta"] = prefix + ".meta";
    j["truth"] = prefix + ".truth";
    j["symbols"] = prefix + ".symbols";
    return j;
}

Summary cmd_acquire(const CaptureOptions& o, const std::string& out) {
    const auto c = load_capture(o);
    const auto det = detect(c);
    write_text_file(out, format_detections(det));
    Summary j;
    j["command"] = "acquire";
    j["detections"] = det.size();
    j["doppler_bins"] = c.acq.grid.values().size();
    j["out"] = out;
    return j;
}

Summary cmd_demod(const CaptureOptions& o, const std::string& detections, const std::string& out, std::ostream& err) {
    const auto c = load_capture(o);
    std::vector<AcquisitionResult> det;
    if (detections.empty()) det = detect(c);
    else {
        try {
            det = parse_detections(read_text_file(detections));
        } catch (const ParseError& e) {
            throw ParseError(detections + ": " + e.what());
        }
    }
    const auto d = demodulate_all(c, det, err);
    if (d.frames.empty() && d.skipped > 0) throw std::runtime_error("no detection could be demodulated");
    write_text_file(out, format_decoded_frames(d.frames));
    Summary j;
    j["command"] = "demod";
    j["detections"] = det.size();
    j["frames"] = d.frames.size();
    j["skipped"] = d.skipped;
    j["out"] = out;
    return j;
}

Summary cmd_template(const std::vector<std::string>& decoded, const std::string& out) {
    const auto frames = read_decoded(decoded);
    std::vector<DecodedFrame> pure;
    for (const auto& f : frames)
        if (qpsk_ratio(f) == 1.0) pure.push_back(f);
    if (pure.empty()) throw std::domain_error("no pure-QPSK frames to build a template from");
    const auto t = build_reference_template(pure);
    write_text_file(out, format_template(t));
    Summary j;
    j["command"] = "template";
    j["frames"] = frames.size();
    j["pure_qpsk_frames"] = pure.size();
    j["ties"] = t.tie_count();
    j["out"] = out;
    return j;
}

Summary cmd_tcode(const std::vector<std::string>& decoded, const std::string& tmpl_path, double threshold,
                  const std::string& out) {
    const auto frames = read_decoded(decoded);
    ReferenceTemplate tmpl;
    try {
        tmpl = parse_template(read_text_file(tmpl_path));
    } catch (const ParseError& e) {
        throw ParseError(tmpl_path + ": " + e.what());
    }
    HeaderConfig hc;
    hc.threshold = threshold;
    std::vector<TCodeRecord> records;
    int found = 0;
    for (const auto& f : frames) {
        const auto D = deviation(f, tmpl);
        TCodeRecord r;
        r.m = f.m;
        r.boundary = detect_header_boundary(D, hc);
        if (r.boundary.i_hm) {
            r.code = extract_tcode(D, *r.boundary.i_hm);
            ++found;
        }
        records.push_back(std::move(r));
    }
    write_text_file(out, format_tcodes(records));
    Summary j;
    j["command"] = "tcode";
    j["frames"] = frames.size();
    j["tcodes"] = found;
    j["out"] = out;
    return j;
}

Summary cmd_pilots(const CaptureOptions& o, double sigmas, const std::string& out, std::ostream& err) {
    const auto c = load_capture(o);
    const auto d = demodulate_all(c, detect(c), err);
    if (d.Y.empty()) throw std::runtime_error("no frames demodulated");
    InvariantAverager acc;
    for (const auto& Y : d.Y) acc.add(Y);
    const auto report = pilot_report(acc.finish(sigmas));
    write_text_file(out, format_pilot_report(report));
    Summary j;
    j["command"] = "pilots-discover";
    j["frames"] = report.frames;
    j["flagged_cells"] = report.flagged_cells;
    std::vector<int> offsets;
    for (const auto& s : report.subcarriers) offsets.push_back(s.d);
    j["subcarrier_offsets"] = offsets;
    j["low_confidence"] = report.low_confidence;
    j["out"] = out;
    return j;
}

struct BoundsOptions {
    std::string replica = "pss-sss";
    double bw_hz = kFs;
    std::optional<double> band_center_hz;
    double snr_min = -30, snr_max = 10, snr_step = 0.5;
    double prior_s = kTsym;
};

Summary cmd_bounds(const BoundsOptions& o, const std::string& out) {
    ReplicaOptions ro;
    try {
        ro.kind = parse_replica_kind(o.replica);
    } catch (const std::exception& e) {
        throw CLI::ValidationError("--replica", e.what());
    }
    ro.bandwidth_hz = o.bw_hz;
    ro.band_center_hz = o.band_center_hz;
    if (!(o.snr_step > 0) || o.snr_max < o.snr_min) throw std::domain_error("SNR grid needs step > 0 and max >= min");
    std::vector<double> snr;
    const int n = static_cast<int>(std::floor((o.snr_max - o.snr_min) / o.snr_step + 1e-9));
    for (int q = 0; q <= n; ++q) snr.push_back(o.snr_min + q * o.snr_step);
    const auto r = build_replica_spectrum(ro);
    const auto pts = toa_bounds(r, snr, o.prior_s);
    write_text_file(out, format_bounds_csv(pts, to_string(ro.kind)));
    const auto knee = bound_knee(pts);
    Summary j;
    j["command"] = "bounds";
    j["replica"] = to_string(ro.kind);
    j["bw_hz"] = o.bw_hz;
    j["points"] = pts.size();
    j["knee_db"] = knee ? Summary(*knee) : Summary(nullptr);
    j["out"] = out;
    return j;
}

struct GainOptions {
    std::optional<double> n, mu;
    std::string tcodes;
    std::optional<double> snr_db;
    int trials = 0;
    std::uint64_t seed = 1;
};

Summary cmd_gain(const GainOptions& o, const std::string& out) {
    Summary j;
    j["command"] = "gain";
    std::ostringstream text;
    if (o.n) {
        const double mu = o.mu.value_or(1.0);
        const auto g = processing_gain(*o.n, mu);
        text << "formula_n=" << format_double(*o.n) << "\nformula_mu=" << format_double(mu)
             << "\nformula_gain_db=" << format_double(g.db) << "\n";
        j["formula_gain_db"] = g.db;
        if (o.trials > 0) {
            if (mu < 0) throw std::domain_error("empirical gain models mu >= 0");
            EmpiricalGainConfig ec;
            ec.N = static_cast<int>(std::lround(*o.n));
            ec.policy = ReplicaPolicy::SignFlip;
            ec.flip_probability = (1 - mu) / 2;
            ec.snr_db = o.snr_db.value_or(0);
            ec.trials = o.trials;
            ec.seed = o.seed;
            const auto e = empirical_gain(ec);
            text << "empirical_trials=" << o.trials << "\nempirical_gain_db=" << format_double(e.db) << "\n";
            j["empirical_gain_db"] = e.db;
        }
    }
    if (!o.tcodes.empty()) {
        if (!o.snr_db) throw CLI::ValidationError("--snr-db", "required with --tcodes");
        std::vector<TCodeRecord> recs;
        try {
            recs = parse_tcodes(read_text_file(o.tcodes));
        } catch (const ParseError& e) {
            throw ParseError(o.tcodes + ": " + e.what());
        }
        std::vector<FrameStats> stats;
        for (const auto& r : recs) {
            FrameStats s;
            s.tcode_columns = r.code ? r.boundary.tcode_columns : 0;
            stats.push_back(s);
        }
        const auto f = frame_gain_estimate(stats, *o.snr_db);
        text << "frames=" << stats.size() << "\nsnr_db=" << format_double(*o.snr_db) << "\nN_bar=" << format_double(f.N_bar)
             << "\nM_bar=" << format_double(f.M_bar) << "\nmu_bar=" << format_double(f.mu_bar)
             << "\nL_bar_db=" << format_double(f.L_bar.db) << "\n";
        j["frames"] = stats.size();
        j["N_bar"] = f.N_bar;
        j["mu_bar"] = f.mu_bar;
        j["L_bar_db"] = f.L_bar.db;
    }
    if (!o.n && o.tcodes.empty()) throw CLI::ValidationError("gain", "give --n or --tcodes");
    write_text_file(out, text.str());
    j["out"] = out;
    return j;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Starlink downlink frame synthesis and analysis"};
    app.require_subcommand(1);

    std::string config, output, detections, tmpl_path, tcode_path;
    std::vector<std::string> decoded;
    std::optional<std::uint64_t> seed;
    std::optional<double> snr_db;
    double threshold = HeaderConfig{}.threshold;
    double sigmas = 6;
    CaptureOptions cap;
    BoundsOptions bo;
    GainOptions go;

    auto* synth = app.add_subcommand("synth", "render a scenario to IQ, metadata and ground truth");
    synth->add_option("--config", config, "scenario file")->required();
    synth->add_option("--seed", seed, "override the scenario seed");
    synth->add_option("--snr-db", snr_db, "override the pre-correlation SNR");
    synth->add_option("--out", output, "output path prefix")->required();

    auto* acquire = app.add_subcommand("acquire", "detect frames in a capture");
    add_capture_options(acquire, cap);
    acquire->add_option("--out", output, "detection file")->required();

    auto* demod = app.add_subcommand("demod", "decode every detected frame");
    add_capture_options(demod, cap);
    demod->add_option("--detections", detections, "detections from acquire (default: acquire now)");
    demod->add_option("--out", output, "decoded-frame file")->required();

    auto* templ = app.add_subcommand("template", "build the reference template from pure-QPSK frames");
    templ->add_option("--decoded", decoded, "decoded-frame files")->required();
    templ->add_option("--out", output, "template file")->required();

    auto* tcode = app.add_subcommand("tcode", "find header boundaries and extract T-codes");
    tcode->add_option("--decoded", decoded, "decoded-frame files")->required();
    tcode->add_option("--template", tmpl_path, "template file")->required();
    tcode->add_option("--threshold", threshold, "column agreement threshold");
    tcode->add_option("--out", output, "T-code file")->required();

    auto* pilots = app.add_subcommand("pilots-discover", "flag frame-invariant cells by averaging");
    add_capture_options(pilots, cap);
    pilots->add_option("--sigmas", sigmas, "detection threshold in noise standard deviations");
    pilots->add_option("--out", output, "pilot report")->required();

    auto* bounds = app.add_subcommand("bounds", "CRB and ZZB on TOA for a known-symbol replica");
    bounds->add_option("--replica", bo.replica, "pss-sss | pss-sss-ep | lee | full");
    bounds->add_option("--bw-hz", bo.bw_hz, "receiver bandwidth");
    bounds->add_option("--band-center-hz", bo.band_center_hz, "band center relative to the channel center");
    bounds->add_option("--snr-min", bo.snr_min, "lowest pre-correlation SNR, dB");
    bounds->add_option("--snr-max", bo.snr_max, "highest pre-correlation SNR, dB");
    bounds->add_option("--snr-step", bo.snr_step, "SNR step, dB");
    bounds->add_option("--prior-s", bo.prior_s, "width of the uniform delay prior, s");
    bounds->add_option("--out", output, "CSV file")->required();

    auto* gain = app.add_subcommand("gain", "processing gain from the formula, simulation or T-code statistics");
    gain->add_option("--n", go.n, "correlation length");
    gain->add_option("--mu", go.mu, "replica agreement mu");
    gain->add_option("--trials", go.trials, "Monte-Carlo trials (0: formula only)");
    gain->add_option("--seed", go.seed, "Monte-Carlo seed");
    gain->add_option("--tcodes", go.tcodes, "T-code file for the per-frame estimate");
    gain->add_option("--snr-db", go.snr_db, "pre-correlation SNR, dB");
    gain->add_option("--out", output, "key=value result file")->required();

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        Summary j;
        if (*synth) j = cmd_synth(config, seed, snr_db, output);
        else if (*acquire) j = cmd_acquire(cap, output);
        else if (*demod) j = cmd_demod(cap, detections, output, err);
        else if (*templ) j = cmd_template(decoded, output);
        else if (*tcode) j = cmd_tcode(decoded, tmpl_path, threshold, output);
        else if (*pilots) j = cmd_pilots(cap, sigmas, output, err);
        else if (*bounds) j = cmd_bounds(bo, output);
        else j = cmd_gain(go, output);
        out << j.dump() << "\n";
        return kExitOk;
    } catch (const CLI::ValidationError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ParseError& e) {
        err << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const IoError& e) {
        err << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    }
}

}  // namespace starlink
