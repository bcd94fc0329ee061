#include "starlink/template_tcode.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "starlink/text_io.hpp"

namespace starlink {

namespace {

constexpr const char* kTemplateMagic = "STARLINK-TEMPLATE";
constexpr const char* kTcodeMagic = "STARLINK-TCODE";
constexpr int kFormatVersion = 1;

int mod(int a, int n) { return ((a % n) + n) % n; }

void check_column(int i) {
    if (i < kPilotFirstSymbol || i >= kNsf) throw std::domain_error("symbol index outside I2");
}

// Kl position of each Klnp rank, matching DecodedFrame::point_index.
const std::vector<int>& kl_position_of_rank() {
    static const std::vector<int> table = [] {
        const auto& g = default_grid();
        std::vector<int> out;
        for (std::size_t c = 0; c < g.Kl.size(); ++c)
            if (g.klnp_rank(g.Kl[c]) >= 0) out.push_back(static_cast<int>(c));
        return out;
    }();
    return table;
}

bool is_qpsk(const DecodedFrame& f, int i) {
    const int row = f.row_of(i);
    return row >= 0 && f.labels[static_cast<std::size_t>(row)] == Modulation::QPSK;
}

std::string fmt(double v) { return format_double(v); }

void read_header(std::istream& in, std::string_view magic, int& line_no) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty file, expected " + std::string(magic));
    ++line_no;
    std::istringstream h(line);
    std::string m;
    int version = 0;
    h >> m >> version;
    if (m != magic) throw ParseError("line 1: missing " + std::string(magic) + " header");
    if (version != kFormatVersion) throw ParseError("line 1: unsupported version " + std::to_string(version));
}

}  // namespace

double qpsk_ratio(const DecodedFrame& frame) {
    int n = 0;
    for (int i = kPilotFirstSymbol; i < kNsf; ++i) n += is_qpsk(frame, i);
    return static_cast<double>(n) / kTemplateColumns;
}

PairCorrelation pairwise_correlation(const DecodedFrame& m, const DecodedFrame& n) {
    const auto& g = default_grid();
    PairCorrelation out;
    int common = 0;
    for (int i = kPilotFirstSymbol; i < kNsf; ++i) {
        if (!is_qpsk(m, i) || !is_qpsk(n, i)) continue;
        ++common;
        for (int k : g.Klnp) out.R += std::conj(m.X_hat(i, k)) * n.X_hat(i, k);
    }
    out.rho = static_cast<double>(common) / kTemplateColumns;
    return out;
}

ReferenceTemplate::ReferenceTemplate()
    : point_(static_cast<std::size_t>(kTemplateColumns) * kTemplateRanks, 0),
      tally_(point_.size(), std::array<int, 4>{}), tie_(point_.size(), 0) {}

std::size_t ReferenceTemplate::cell(int i, int rank) {
    check_column(i);
    if (rank < 0 || rank >= kTemplateRanks) throw std::domain_error("subcarrier rank outside Klnp");
    return static_cast<std::size_t>(i - kPilotFirstSymbol) * kTemplateRanks + static_cast<std::size_t>(rank);
}

cplx ReferenceTemplate::value(int i, int rank) const {
    return constellation(Modulation::QPSK).points[static_cast<std::size_t>(point(i, rank))];
}

int ReferenceTemplate::tie_count() const {
    return static_cast<int>(std::count(tie_.begin(), tie_.end(), std::uint8_t{1}));
}

void ReferenceTemplate::set(int i, int rank, int point_index) {
    if (point_index < 0 || point_index > 3) throw std::domain_error("template entries are QPSK indices 0-3");
    point_[cell(i, rank)] = static_cast<std::uint8_t>(point_index);
}

ReferenceTemplate build_reference_template(std::span<const DecodedFrame> frames) {
    if (frames.empty()) throw std::domain_error("no frames for the reference template");
    const auto& pos = kl_position_of_rank();
    ReferenceTemplate t;
    for (const auto& f : frames) {
        if (qpsk_ratio(f) != 1.0)
            throw std::domain_error("frame " + std::to_string(f.m) + " is not pure QPSK");
        for (int i = kPilotFirstSymbol; i < kNsf; ++i) {
            const auto& idx = f.point_index[static_cast<std::size_t>(f.row_of(i))];
            if (idx.size() != default_grid().Kl.size()) throw std::domain_error("decoded row has the wrong width");
            for (int r = 0; r < kTemplateRanks; ++r) {
                const int v = idx[static_cast<std::size_t>(pos[static_cast<std::size_t>(r)])];
                if (v >= 0) ++t.tally_[ReferenceTemplate::cell(i, r)][static_cast<std::size_t>(v)];
            }
        }
    }
    for (std::size_t c = 0; c < t.point_.size(); ++c) {
        const auto& n = t.tally_[c];
        const auto best = std::max_element(n.begin(), n.end());
        t.point_[c] = static_cast<std::uint8_t>(best - n.begin());
        t.tie_[c] = std::count(n.begin(), n.end(), *best) > 1;
    }
    t.frames_ = static_cast<int>(frames.size());
    return t;
}

DeviationMatrix::DeviationMatrix() : cells_(static_cast<std::size_t>(kTemplateColumns) * kTemplateRanks, kMasked) {}

std::size_t DeviationMatrix::cell(int i, int rank) {
    check_column(i);
    if (rank < 0 || rank >= kTemplateRanks) throw std::domain_error("subcarrier rank outside Klnp");
    return static_cast<std::size_t>(i - kPilotFirstSymbol) * kTemplateRanks + static_cast<std::size_t>(rank);
}

void DeviationMatrix::set(int i, int rank, std::int8_t v) {
    if (v != 1 && v != -1 && v != kMasked && v != kNonBpsk) throw std::domain_error("invalid deviation value");
    cells_[cell(i, rank)] = v;
}

void DeviationMatrix::add_column(int i) {
    check_column(i);
    auto it = std::lower_bound(columns_.begin(), columns_.end(), i);
    if (it != columns_.end() && *it == i) return;
    columns_.insert(it, i);
    std::fill_n(cells_.begin() + static_cast<std::ptrdiff_t>(cell(i, 0)), kTemplateRanks, std::int8_t{1});
}

int DeviationMatrix::flagged() const {
    return static_cast<int>(std::count(cells_.begin(), cells_.end(), kNonBpsk));
}

DeviationMatrix deviation(const DecodedFrame& frame, const ReferenceTemplate& tmpl) {
    const auto& pos = kl_position_of_rank();
    if (frame.point_index.size() != frame.symbols.size() || frame.labels.size() != frame.symbols.size())
        throw std::domain_error("decoded frame rows do not match its symbol list");
    DeviationMatrix D;
    D.m = frame.m;
    for (std::size_t row = 0; row < frame.symbols.size(); ++row) {
        const int i = frame.symbols[row];
        if (i < kPilotFirstSymbol || frame.labels[row] != Modulation::QPSK) continue;
        const auto& idx = frame.point_index[row];
        if (idx.size() != default_grid().Kl.size()) throw std::domain_error("decoded row has the wrong width");
        D.add_column(i);
        for (int r = 0; r < kTemplateRanks; ++r) {
            const int v = idx[static_cast<std::size_t>(pos[static_cast<std::size_t>(r)])];
            if (v < 0) {
                D.set(i, r, DeviationMatrix::kMasked);
                continue;
            }
            // QPSK points are powers of j, so the product is j^(v - t)
            switch (mod(v - tmpl.point(i, r), 4)) {
                case 0: D.set(i, r, 1); break;
                case 2: D.set(i, r, -1); break;
                default: D.set(i, r, DeviationMatrix::kNonBpsk);
            }
        }
    }
    return D;
}

int tcode_position(int i, int rank) { return mod(rank - kTcodeShift * (i - kTcodeRefSymbol), kTcodeLength); }

namespace {

struct Votes {
    std::array<int, kTcodeLength> plus{}, minus{};

    void add(const DeviationMatrix& D, int i) {
        for (int r = 0; r < kTemplateRanks; ++r) {
            const auto v = D.at(i, r);
            const auto p = static_cast<std::size_t>(tcode_position(i, r));
            if (v == 1) ++plus[p];
            else if (v == -1) ++minus[p];
        }
    }
    std::int8_t majority(std::size_t p) const { return plus[p] >= minus[p] ? 1 : -1; }
    int covered() const {
        int n = 0;
        for (std::size_t p = 0; p < plus.size(); ++p) n += plus[p] + minus[p] > 0;
        return n;
    }
    double agreement() const {
        long agree = 0, total = 0;
        for (std::size_t p = 0; p < plus.size(); ++p) {
            agree += std::max(plus[p], minus[p]);
            total += plus[p] + minus[p];
        }
        return total ? static_cast<double>(agree) / static_cast<double>(total) : 0.0;
    }
    // fraction of column i's cells matching the current majority; -1 when it has none
    double column_agreement(const DeviationMatrix& D, int i) const {
        int agree = 0, total = 0;
        for (int r = 0; r < kTemplateRanks; ++r) {
            const auto v = D.at(i, r);
            if (v != 1 && v != -1) continue;
            ++total;
            agree += v == majority(static_cast<std::size_t>(tcode_position(i, r)));
        }
        return total ? static_cast<double>(agree) / total : -1.0;
    }
};

}  // namespace

TCode extract_tcode(const DeviationMatrix& D, int i_hm) {
    Votes votes;
    int first = -1;
    for (int i : D.columns())
        if (i > i_hm) {
            if (first < 0) first = i;
            votes.add(D, i);
        }
    if (votes.covered() < kTcodeLength) throw std::domain_error("T-code underdetermined: fewer than 60 positions covered");
    TCode c;
    for (std::size_t p = 0; p < c.code.size(); ++p) c.code[p] = votes.majority(p);
    c.phase = mod(kTcodeShift * (first - kTcodeRefSymbol), kTcodeLength);
    c.agreement = votes.agreement();
    return c;
}

DeviationMatrix synthesize_tcode_region(const TCode& code, std::span<const int> columns) {
    for (auto v : code.code)
        if (v != 1 && v != -1) throw std::domain_error("T-code entries must be +1 or -1");
    DeviationMatrix D;
    for (int i : columns) {
        D.add_column(i);
        for (int r = 0; r < kTemplateRanks; ++r) D.set(i, r, code.code[static_cast<std::size_t>(tcode_position(i, r))]);
    }
    return D;
}

HeaderBoundary detect_header_boundary(const DeviationMatrix& D, const HeaderConfig& cfg) {
    const auto& cols = D.columns();
    Votes votes;
    int accepted = 0;
    std::optional<int> stop;
    for (auto it = cols.rbegin(); it != cols.rend(); ++it) {
        Votes trial = votes;
        trial.add(D, *it);
        const double a = trial.column_agreement(D, *it);
        if (a >= 0 && a < cfg.threshold) {
            stop = *it;
            break;
        }
        votes = trial;
        ++accepted;
    }
    HeaderBoundary out;
    out.agreement = votes.agreement();
    if (accepted < std::max(cfg.min_columns, 1) || votes.covered() < kTcodeLength || out.agreement < cfg.threshold)
        return out;
    out.i_hm = stop.value_or(kPilotFirstSymbol - 1);
    out.tcode_columns = accepted;
    return out;
}

std::string format_template(const ReferenceTemplate& t) {
    std::ostringstream out;
    out << kTemplateMagic << " " << kFormatVersion << " frames=" << t.frame_count() << " ties=" << t.tie_count()
        << "\n";
    std::string row(kTemplateColumns, '0');
    for (int r = 0; r < kTemplateRanks; ++r) {
        for (int i = kPilotFirstSymbol; i < kNsf; ++i)
            row[static_cast<std::size_t>(i - kPilotFirstSymbol)] = static_cast<char>('0' + t.point(i, r));
        out << row << "\n";
    }
    return out.str();
}

// Tallies and tie flags are not stored; a parsed template carries only the mode.
ReferenceTemplate parse_template(std::string_view text) {
    std::istringstream in{std::string(text)};
    int line_no = 0;
    read_header(in, kTemplateMagic, line_no);
    ReferenceTemplate t;
    {
        std::istringstream h{std::string(text.substr(0, text.find('\n')))};
        std::string word;
        while (h >> word)
            if (word.rfind("frames=", 0) == 0) t.frames_ = static_cast<int>(parse_int(word.substr(7), "line 1 frames"));
    }
    std::string line;
    for (int r = 0; r < kTemplateRanks; ++r) {
        if (!std::getline(in, line)) throw ParseError("line " + std::to_string(line_no + 1) + ": expected 1004 template rows");
        ++line_no;
        const auto row = trim(line);
        if (row.size() != static_cast<std::size_t>(kTemplateColumns))
            throw ParseError("line " + std::to_string(line_no) + ": expected 300 template entries");
        for (int i = kPilotFirstSymbol; i < kNsf; ++i) {
            const char ch = row[static_cast<std::size_t>(i - kPilotFirstSymbol)];
            if (ch < '0' || ch > '3')
                throw ParseError("line " + std::to_string(line_no) + ": invalid template entry '" + std::string(1, ch) + "'");
            t.set(i, r, ch - '0');
        }
    }
    while (std::getline(in, line)) {
        ++line_no;
        if (!trim(line).empty()) throw ParseError("line " + std::to_string(line_no) + ": trailing data after template");
    }
    return t;
}

std::string format_tcodes(std::span<const TCodeRecord> records) {
    std::ostringstream out;
    out << kTcodeMagic << " " << kFormatVersion << "\n";
    for (const auto& rec : records) {
        out << "frame m=" << rec.m << " i_hm=";
        if (rec.boundary.i_hm) out << *rec.boundary.i_hm;
        else out << "none";
        out << " columns=" << rec.boundary.tcode_columns << " region_agreement=" << fmt(rec.boundary.agreement);
        if (rec.code) {
            out << " phase=" << rec.code->phase << " agreement=" << fmt(rec.code->agreement) << "\n";
            for (auto v : rec.code->code) out << (v > 0 ? '+' : '-');
        }
        out << "\n";
    }
    return out.str();
}

std::vector<TCodeRecord> parse_tcodes(std::string_view text) {
    std::istringstream in{std::string(text)};
    int line_no = 0;
    read_header(in, kTcodeMagic, line_no);
    std::vector<TCodeRecord> out;
    std::string line;
    auto fail = [&](const std::string& msg) { throw ParseError("line " + std::to_string(line_no) + ": " + msg); };
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::istringstream h(line);
        std::string word;
        h >> word;
        if (word != "frame") fail("expected 'frame'");
        TCodeRecord rec;
        bool has_code = false;
        TCode code;
        while (h >> word) {
            const auto eq = word.find('=');
            if (eq == std::string::npos) fail("expected key=value");
            const auto key = word.substr(0, eq), val = word.substr(eq + 1);
            const std::string what = "line " + std::to_string(line_no) + " " + key;
            if (key == "m") rec.m = static_cast<int>(parse_int(val, what));
            else if (key == "i_hm") {
                if (val != "none") rec.boundary.i_hm = static_cast<int>(parse_int(val, what));
            } else if (key == "columns") rec.boundary.tcode_columns = static_cast<int>(parse_int(val, what));
            else if (key == "region_agreement") rec.boundary.agreement = parse_double(val, what);
            else if (key == "phase") {
                code.phase = static_cast<int>(parse_int(val, what));
                has_code = true;
            } else if (key == "agreement") code.agreement = parse_double(val, what);
            else fail("unknown field '" + key + "'");
        }
        if (has_code) {
            if (!std::getline(in, line)) fail("missing T-code line");
            ++line_no;
            const auto s = trim(line);
            if (s.size() != static_cast<std::size_t>(kTcodeLength)) fail("expected 60 T-code symbols");
            for (std::size_t p = 0; p < s.size(); ++p) {
                if (s[p] != '+' && s[p] != '-') fail("T-code symbols must be '+' or '-'");
                code.code[p] = s[p] == '+' ? 1 : -1;
            }
            rec.code = code;
        }
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace starlink
