#include "starlink/scenario.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include "starlink/pilot_codes.hpp"
#include "starlink/text_io.hpp"

namespace starlink {

namespace {

constexpr std::string_view kTruthMagic = "STARLINK-TRUTH";
constexpr int kTruthVersion = 1;
constexpr std::uint64_t kTemplateSalt = 0x9e3779b97f4a7c15ULL;

std::string to_string(FrameContent c) { return c == FrameContent::Tcode ? "tcode" : "random"; }

FrameContent parse_content(std::string_view s) {
    if (s == "random") return FrameContent::Random;
    if (s == "tcode") return FrameContent::Tcode;
    throw ParseError("unknown content '" + std::string(s) + "' (random|tcode)");
}

std::vector<Modulation> parse_plan(std::string_view s) {
    if (s == "mixed") return {};
    std::vector<Modulation> plan;
    for (const auto& item : split(s, ',')) {
        try {
            plan.push_back(parse_modulation(item));
        } catch (const std::domain_error&) {
            throw ParseError("unknown constellation '" + item + "'");
        }
    }
    return plan;
}

std::string format_plan(const std::vector<Modulation>& plan) {
    if (plan.empty()) return "mixed";
    std::string out;
    for (auto m : plan) out += (out.empty() ? "" : ",") + to_string(m);
    return out;
}

}  // namespace

void ScenarioConfig::validate() const {
    if (slots < 1) throw std::domain_error("slots must be at least 1");
    if (!occupancy_pattern.empty() && occupancy_pattern.size() != static_cast<std::size_t>(slots))
        throw std::domain_error("occupancy pattern length differs from slots");
    if (!(occupancy >= 0 && occupancy <= 1)) throw std::domain_error("occupancy must lie in [0, 1]");
    if (!(lead_s >= 0)) throw std::domain_error("lead_s must be non-negative");
    if (!(center_hz >= kFcMin && center_hz <= kFcMax)) throw std::domain_error("center_hz outside the Ku downlink band");
    if (!(gain > 0)) throw std::domain_error("gain must be positive");
    if (!(tcode_fraction >= 0 && tcode_fraction <= 1)) throw std::domain_error("tcode_fraction must lie in [0, 1]");
    if (!(gap_fraction >= 0 && gap_fraction < 0.5)) throw std::domain_error("gap_fraction must lie in [0, 0.5)");
    if (header_min < 1 || header_max < header_min || header_max > 200)
        throw std::domain_error("header bounds must satisfy 1 <= header_min <= header_max <= 200");
    if (content == FrameContent::Tcode && tcode_pool < 1) throw std::domain_error("tcode_pool must be at least 1");
    clock.validate();
}

ScenarioConfig parse_scenario(std::string_view text, std::string_view source) {
    const std::string src(source);
    ScenarioConfig cfg;
    std::set<std::string> seen;
    bool have_slots = false;
    std::vector<KeyValue> kvs;
    try {
        kvs = parse_key_values(text);
    } catch (const ParseError& e) {
        throw ParseError(src + " " + e.what());
    }
    for (const auto& kv : kvs) {
        const std::string where = src + " line " + std::to_string(kv.line);
        if (!seen.insert(kv.key).second) throw ParseError(where + ": duplicate key '" + kv.key + "'");
        const std::string what = where + " " + kv.key;
        const auto num = [&] { return parse_double(kv.value, what); };
        const auto& k = kv.key;
        try {
            if (k == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(kv.value, what));
            else if (k == "slots") {
                cfg.slots = static_cast<int>(parse_int(kv.value, what));
                have_slots = true;
            } else if (k == "occupancy") {
                if (kv.value.find_first_not_of("01") == std::string::npos && kv.value.size() > 1) {
                    cfg.occupancy_pattern.clear();
                    for (char c : kv.value) cfg.occupancy_pattern.push_back(c == '1');
                } else cfg.occupancy = num();
            } else if (k == "lead_s") cfg.lead_s = num();
            else if (k == "center_hz") cfg.center_hz = num();
            else if (k == "dtc0") cfg.clock.dtc0 = num();
            else if (k == "dtc_dot") cfg.clock.dtc_dot = num();
            else if (k == "dts0") cfg.clock.dts0 = num();
            else if (k == "dts_dot") cfg.clock.dts_dot = num();
            else if (k == "t0") cfg.clock.t0 = num();
            else if (k == "beta") cfg.beta = num();
            else if (k == "tau_los") cfg.tau_los = num();
            else if (k == "gain") cfg.gain = num();
            else if (k == "tilt_db") cfg.tilt_db = num();
            else if (k == "theta") cfg.theta = kv.value == "random" ? std::nullopt : std::optional(num());
            else if (k == "snr_db") cfg.snr_db = kv.value == "none" ? std::nullopt : std::optional(num());
            else if (k == "content") cfg.content = parse_content(kv.value);
            else if (k == "modulation") cfg.modulation_plan = parse_plan(kv.value);
            else if (k == "tcode_fraction") cfg.tcode_fraction = num();
            else if (k == "header_min") cfg.header_min = static_cast<int>(parse_int(kv.value, what));
            else if (k == "header_max") cfg.header_max = static_cast<int>(parse_int(kv.value, what));
            else if (k == "tcode_pool") cfg.tcode_pool = static_cast<int>(parse_int(kv.value, what));
            else if (k == "gap_fraction") cfg.gap_fraction = num();
            else throw ParseError("unknown key '" + k + "'");
        } catch (const ParseError& e) {
            const std::string msg = e.what();
            throw ParseError(msg.rfind(where, 0) == 0 ? msg : where + ": " + msg);
        }
    }
    if (!cfg.occupancy_pattern.empty() && !have_slots) cfg.slots = static_cast<int>(cfg.occupancy_pattern.size());
    try {
        cfg.validate();
    } catch (const std::domain_error& e) {
        throw ParseError(src + ": " + e.what());
    }
    return cfg;
}

ReferenceTemplate scenario_template(std::uint64_t seed) {
    Rng rng(seed ^ kTemplateSalt);
    std::uniform_int_distribution<int> pick(0, 3);
    ReferenceTemplate t;
    for (int i = 2; i < kNsf; ++i)
        for (int r = 0; r < kTemplateRanks; ++r) t.set(i, r, pick(rng));
    return t;
}

DecodedFrame symbols_as_decoded(const SymbolMatrix& X, std::span<const Modulation> labels, int m) {
    const auto& grid = default_grid();
    if (labels.size() != grid.I2.size()) throw std::domain_error("need one label per symbol in I2");
    const auto& qam4 = constellation(Modulation::QAM4);
    DecodedFrame f;
    f.m = m;
    f.snr_pre_est = std::numeric_limits<double>::infinity();
    f.X_hat = SymbolMatrix(kNsf);
    for (int i = 1; i < kNsf; ++i) {
        const Modulation label = i == 1 ? Modulation::QPSK : labels[static_cast<std::size_t>(i - 2)];
        const auto& cons = constellation(label);
        std::vector<int> idx(grid.Kl.size());
        for (std::size_t c = 0; c < grid.Kl.size(); ++c) {
            const int k = grid.Kl[c];
            const auto& use = i >= kPilotFirstSymbol && grid.is_pilot(k) ? qam4 : cons;
            idx[c] = use.nearest(X(i, k));
            f.X_hat(i, k) = use.points[static_cast<std::size_t>(idx[c])];
        }
        f.symbols.push_back(i);
        f.labels.push_back(label);
        f.point_index.push_back(std::move(idx));
    }
    return f;
}

Scenario build_scenario(const ScenarioConfig& cfg) {
    cfg.validate();
    const auto& grid = default_grid();
    const auto& pilots = PilotCodebook::builtin();
    const auto& qpsk = constellation(Modulation::QPSK).points;
    const auto sss = default_sss();
    const auto pss = default_pss();

    Rng rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0, 1);
    std::uniform_int_distribution<int> coin(0, 1);
    std::uniform_int_distribution<int> any_label(0, 3);

    Scenario s;
    s.duration_s = cfg.lead_s + cfg.slots * kTf;
    s.noise_seed = rng();

    const bool tcode = cfg.content == FrameContent::Tcode;
    std::optional<ReferenceTemplate> tmpl;
    std::vector<TCode> pool;
    if (tcode) {
        tmpl = scenario_template(cfg.seed);
        for (int n = 0; n < cfg.tcode_pool; ++n) {
            TCode c;
            for (auto& v : c.code) v = coin(rng) ? 1 : -1;
            c.agreement = 1;
            pool.push_back(c);
        }
    }

    ChannelParams ch;
    ch.beta = cfg.beta;
    ch.tau_los = cfg.tau_los;
    ch.gain = cfg.gain;
    ch.center_hz = cfg.center_hz;
    if (cfg.tilt_db != 0) ch.H = tilted_transfer(cfg.tilt_db);

    for (int slot = 0; slot < cfg.slots; ++slot) {
        const bool occupied =
            cfg.occupancy_pattern.empty() ? unit(rng) < cfg.occupancy : cfg.occupancy_pattern[static_cast<std::size_t>(slot)];
        if (!occupied) continue;
        FrameTruth t;
        t.m = static_cast<int>(s.truth.size());
        t.slot = slot;
        t.start_s = cfg.lead_s + slot * kTf;
        t.theta = cfg.theta ? *cfg.theta : 2 * std::numbers::pi * unit(rng);
        t.content = cfg.content;

        std::vector<Modulation> labels(grid.I2.size(), Modulation::QPSK);
        SymbolMatrix X(kNsf);
        if (!tcode) {
            for (std::size_t n = 0; n < labels.size(); ++n)
                labels[n] = cfg.modulation_plan.empty() ? static_cast<Modulation>(any_label(rng))
                                                        : cfg.modulation_plan[n % cfg.modulation_plan.size()];
            X = random_frame_symbols(labels, sss, rng);
        } else {
            for (int k : grid.Kl) X(1, k) = sss[static_cast<std::size_t>(k)];
            const TCode* code = nullptr;
            int i_hm = 1;
            if (unit(rng) < cfg.tcode_fraction) {
                const int id = std::uniform_int_distribution<int>(0, cfg.tcode_pool - 1)(rng);
                code = &pool[static_cast<std::size_t>(id)];
                i_hm = std::uniform_int_distribution<int>(cfg.header_min, cfg.header_max)(rng);
                t.i_hm = i_hm;
                t.code_id = id;
            }
            int first = -1;
            for (int i = 2; i < kNsf; ++i) {
                const bool header = code && i <= i_hm;
                const bool gap = code && !header && unit(rng) < cfg.gap_fraction;
                if (gap) {
                    labels[static_cast<std::size_t>(i - 2)] = Modulation::QAM16;
                    const auto& pts = constellation(Modulation::QAM16).points;
                    std::uniform_int_distribution<int> pick(0, static_cast<int>(pts.size()) - 1);
                    for (int k : grid.Klnp) X(i, k) = pts[static_cast<std::size_t>(pick(rng))];
                } else {
                    if (code && !header && first < 0) first = i;
                    for (int k : grid.Klnp) {
                        const int r = grid.klnp_rank(k);
                        int dev = 1;
                        if (header) dev = coin(rng) ? 1 : -1;
                        else if (code) dev = code->code[static_cast<std::size_t>(tcode_position(i, r))];
                        X(i, k) = qpsk[static_cast<std::size_t>((tmpl->point(i, r) + (dev < 0 ? 2 : 0)) % 4)];
                    }
                }
                for (int k : grid.Kp) X(i, k) = pilots.pilot_symbol(i, k);
            }
            if (code) {
                TCode c = *code;
                c.phase = ((kTcodeShift * (first - kTcodeRefSymbol)) % kTcodeLength + kTcodeLength) % kTcodeLength;
                t.code = c;
            }
        }

        FrameEmission e;
        e.samples = synth_frame(X, pss);
        e.start_s = t.start_s;
        e.clock = cfg.clock;
        e.channel = ch;
        e.channel.theta = t.theta;
        t.impairment = summarize(e.clock, e.channel);

        auto decoded = symbols_as_decoded(X, labels, t.m);
        if (cfg.snr_db) decoded.snr_pre_est = *cfg.snr_db;
        s.symbols.push_back(std::move(decoded));
        s.emissions.push_back(std::move(e));
        s.truth.push_back(std::move(t));
    }
    return s;
}

CaptureStream render_scenario(const ScenarioConfig& cfg, const Scenario& s) {
    return synth_capture(s.emissions, s.duration_s, cfg.snr_db, cfg.center_hz, s.noise_seed);
}

std::string format_truth(const ScenarioConfig& cfg, const Scenario& s) {
    std::ostringstream out;
    out << kTruthMagic << " " << kTruthVersion << "\n";
    out << "scenario seed=" << cfg.seed << " slots=" << cfg.slots << " duration_s=" << format_double(s.duration_s)
        << " center_hz=" << format_double(cfg.center_hz)
        << " snr_db=" << (cfg.snr_db ? format_double(*cfg.snr_db) : "none") << " content=" << to_string(cfg.content)
        << " modulation=" << format_plan(cfg.modulation_plan) << " frames=" << s.truth.size() << "\n";
    for (const auto& t : s.truth) {
        out << "frame m=" << t.m << " slot=" << t.slot << " start_s=" << format_double(t.start_s)
            << " delay_samples=" << format_double(t.impairment.delay_samples)
            << " beta_s=" << format_double(t.impairment.beta_s) << " beta_c=" << format_double(t.impairment.beta_c)
            << " phase=" << format_double(t.impairment.phase) << " theta=" << format_double(t.theta)
            << " content=" << to_string(t.content) << " i_hm=" << (t.i_hm ? std::to_string(*t.i_hm) : "none")
            << " code_id=" << (t.code_id ? std::to_string(*t.code_id) : "none") << "\n";
        if (t.code) {
            out << "code phase=" << t.code->phase << " ";
            for (auto v : t.code->code) out << (v > 0 ? '+' : '-');
            out << "\n";
        }
    }
    return out.str();
}

std::vector<FrameTruth> parse_truth(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    const auto fail = [&](const std::string& msg) { throw ParseError("line " + std::to_string(line_no) + ": " + msg); };
    const auto next = [&] {
        while (std::getline(in, line)) {
            ++line_no;
            if (!trim(line).empty()) return true;
        }
        return false;
    };
    if (!next()) throw ParseError("empty truth file");
    {
        std::istringstream h(line);
        std::string magic;
        int version = 0;
        h >> magic >> version;
        if (magic != kTruthMagic) fail("missing truth header");
        if (version != kTruthVersion) fail("unsupported truth version " + std::to_string(version));
    }
    if (!next() || line.rfind("scenario ", 0) != 0) fail("expected scenario line");

    std::vector<FrameTruth> out;
    while (next()) {
        std::istringstream h(line);
        std::string word;
        h >> word;
        if (word == "code") {
            if (out.empty() || !out.back().code_id) fail("code line without a coded frame");
            std::string phase, bits;
            h >> phase >> bits;
            if (phase.rfind("phase=", 0) != 0) fail("expected phase=");
            TCode c;
            c.phase = static_cast<int>(parse_int(phase.substr(6), "line " + std::to_string(line_no) + " phase"));
            c.agreement = 1;
            if (bits.size() != kTcodeLength) fail("expected 60 code signs");
            for (std::size_t p = 0; p < bits.size(); ++p) {
                if (bits[p] != '+' && bits[p] != '-') fail("code signs must be '+' or '-'");
                c.code[p] = bits[p] == '+' ? 1 : -1;
            }
            out.back().code = c;
            continue;
        }
        if (word != "frame") fail("expected 'frame' or 'code'");
        FrameTruth t;
        while (h >> word) {
            const auto eq = word.find('=');
            if (eq == std::string::npos) fail("expected key=value");
            const auto key = word.substr(0, eq), val = word.substr(eq + 1);
            const std::string what = "line " + std::to_string(line_no) + " " + key;
            const auto opt_int = [&]() -> std::optional<int> {
                if (val == "none") return std::nullopt;
                return static_cast<int>(parse_int(val, what));
            };
            if (key == "m") t.m = static_cast<int>(parse_int(val, what));
            else if (key == "slot") t.slot = static_cast<int>(parse_int(val, what));
            else if (key == "start_s") t.start_s = parse_double(val, what);
            else if (key == "delay_samples") t.impairment.delay_samples = parse_double(val, what);
            else if (key == "beta_s") t.impairment.beta_s = parse_double(val, what);
            else if (key == "beta_c") t.impairment.beta_c = parse_double(val, what);
            else if (key == "phase") t.impairment.phase = parse_double(val, what);
            else if (key == "theta") t.theta = parse_double(val, what);
            else if (key == "content") {
                try {
                    t.content = parse_content(val);
                } catch (const ParseError& e) {
                    fail(e.what());
                }
            } else if (key == "i_hm") t.i_hm = opt_int();
            else if (key == "code_id") t.code_id = opt_int();
            else fail("unknown frame field '" + key + "'");
        }
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace starlink
