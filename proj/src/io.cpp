#include "dsdm/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "dsdm/error.hpp"

namespace dsdm {

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}' for reading", path.string()));
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw IoError(fmt::format("read failed on '{}'", path.string()));
    return std::move(buf).str();
}

void write_text(const fs::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.close();
    if (!out) throw IoError(fmt::format("write failed on '{}'", path.string()));
}

void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw IoError(fmt::format("cannot create directory '{}': {}", dir.string(), ec.message()));
    }
}

namespace {

struct CsvRow {
    std::size_t line = 0;
    std::vector<std::string> cells;
};

// RFC 4180 subset: quoted cells with doubled quotes, LF or CRLF endings,
// blank lines skipped, optional UTF-8 byte order mark.
std::vector<CsvRow> split_csv(std::string_view text, const std::string& source) {
    if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
    std::vector<CsvRow> rows;
    CsvRow row;
    std::string cell;
    std::size_t line = 1;
    bool quoted = false;
    bool any = false;
    row.line = line;
    auto end_row = [&] {
        if (any || !cell.empty() || !row.cells.empty()) {
            row.cells.push_back(std::move(cell));
            rows.push_back(std::move(row));
        }
        row = CsvRow{};
        cell.clear();
        any = false;
    };
    for (std::size_t p = 0; p < text.size(); ++p) {
        const char c = text[p];
        if (quoted) {
            if (c == '"') {
                if (p + 1 < text.size() && text[p + 1] == '"') {
                    cell.push_back('"');
                    ++p;
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n') ++line;
                cell.push_back(c);
            }
            continue;
        }
        if (c == '"' && cell.empty()) {
            quoted = true;
            any = true;
        } else if (c == ',') {
            row.cells.push_back(std::move(cell));
            cell.clear();
            any = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && p + 1 < text.size() && text[p + 1] == '\n') ++p;
            end_row();
            ++line;
            row.line = line;
        } else {
            cell.push_back(c);
        }
    }
    if (quoted) throw ValidationError(fmt::format("{}: unterminated quoted cell", source));
    end_row();
    return rows;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

template <typename T>
bool parse_int(std::string_view s, T& out) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return !s.empty() && ec == std::errc{} && ptr == s.data() + s.size();
}

bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return !s.empty() && ec == std::errc{} && ptr == s.data() + s.size();
}

std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::vector<std::string_view> split_spaces(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t p = 0;
    while (p < s.size()) {
        while (p < s.size() && s[p] == ' ') ++p;
        const std::size_t start = p;
        while (p < s.size() && s[p] != ' ') ++p;
        if (p > start) out.push_back(s.substr(start, p - start));
    }
    return out;
}

void check_unique(const std::vector<std::string>& ids, const std::string& what, const std::string& source) {
    std::set<std::string> seen;
    for (const auto& id : ids) {
        if (!seen.insert(id).second) throw ValidationError(fmt::format("{}: duplicate {} '{}'", source, what, id));
    }
}

}  // namespace

CountMatrix parse_counts_csv(std::string_view text, const std::string& source) {
    const auto rows = split_csv(text, source);
    if (rows.empty()) throw ValidationError(fmt::format("{}: empty file", source));
    const auto& header = rows.front().cells;
    if (header.size() < 3) {
        throw ValidationError(fmt::format("{}: header needs a sample-id column and at least two taxa", source));
    }
    std::vector<std::string> taxa(header.begin() + 1, header.end());
    check_unique(taxa, "taxon id", source);
    const std::size_t n_taxa = taxa.size();

    std::vector<std::string> samples;
    std::vector<Count> counts;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.cells.size() != header.size()) {
            throw ValidationError(fmt::format("{}: line {} has {} cells, expected {}", source, row.line,
                                              row.cells.size(), header.size()));
        }
        samples.push_back(row.cells[0]);
        for (std::size_t c = 1; c < row.cells.size(); ++c) {
            Count v = 0;
            if (!parse_int(row.cells[c], v)) {
                throw ValidationError(fmt::format("{}: line {}, column {} ({}): '{}' is not an integer", source,
                                                  row.line, c + 1, taxa[c - 1], row.cells[c]));
            }
            if (v < 0) {
                throw ValidationError(fmt::format("{}: line {}, column {} ({}): negative count {}", source, row.line,
                                                  c + 1, taxa[c - 1], v));
            }
            counts.push_back(v);
        }
    }
    if (samples.empty()) throw ValidationError(fmt::format("{}: no sample rows", source));
    check_unique(samples, "sample id", source);
    const std::size_t n_samples = samples.size();
    return CountMatrix(n_samples, n_taxa, std::move(counts), std::move(samples), std::move(taxa));
}

CountMatrix read_counts_csv(const fs::path& path) { return parse_counts_csv(read_text(path), path.string()); }

std::string format_counts_csv(const CountMatrix& counts) {
    std::string out = "sample_id";
    for (const auto& t : counts.taxon_ids()) out += "," + quote(t);
    out.push_back('\n');
    for (std::size_t i = 0; i < counts.n_samples(); ++i) {
        out += quote(counts.sample_ids()[i]);
        for (Count v : counts.row(i)) fmt::format_to(std::back_inserter(out), ",{}", v);
        out.push_back('\n');
    }
    return out;
}

LabelTable parse_labels_csv(std::string_view text, const std::string& source) {
    const auto rows = split_csv(text, source);
    LabelTable table;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.cells.size() != 2) {
            throw ValidationError(
                fmt::format("{}: line {} has {} cells, expected 2", source, row.line, row.cells.size()));
        }
        int label = 0;
        if (!parse_int(row.cells[1], label)) {
            if (r == 0) continue;  // header
            throw ValidationError(
                fmt::format("{}: line {}, column 2: '{}' is not an integer", source, row.line, row.cells[1]));
        }
        table.ids.push_back(row.cells[0]);
        table.labels.push_back(label);
    }
    if (table.ids.empty()) throw ValidationError(fmt::format("{}: no label rows", source));
    check_unique(table.ids, "sample id", source);
    return table;
}

LabelTable read_labels_csv(const fs::path& path) { return parse_labels_csv(read_text(path), path.string()); }

std::string format_labels_csv(const std::vector<std::string>& ids, const Partition& p) {
    if (ids.size() != p.size()) throw ValidationError("label count does not match sample ids");
    std::string out = "sample_id,label\n";
    for (std::size_t i = 0; i < ids.size(); ++i) out += fmt::format("{},{}\n", quote(ids[i]), p[i] + 1);
    return out;
}

std::pair<Partition, Partition> join_labels(const LabelTable& a, const LabelTable& b) {
    std::map<std::string, int> in_b;
    for (std::size_t i = 0; i < b.ids.size(); ++i) in_b.emplace(b.ids[i], b.labels[i]);
    std::vector<std::string> only_a;
    std::vector<int> la;
    std::vector<int> lb;
    for (std::size_t i = 0; i < a.ids.size(); ++i) {
        auto it = in_b.find(a.ids[i]);
        if (it == in_b.end()) {
            only_a.push_back(a.ids[i]);
            continue;
        }
        la.push_back(a.labels[i]);
        lb.push_back(it->second);
        in_b.erase(it);
    }
    if (!only_a.empty() || !in_b.empty()) {
        std::vector<std::string> only_b;
        for (const auto& [id, label] : in_b) only_b.push_back(id);
        throw ValidationError(fmt::format("sample ids differ; only in first: [{}]; only in second: [{}]",
                                          fmt::join(only_a, ", "), fmt::join(only_b, ", ")));
    }
    return {Partition(la), Partition(lb)};
}

std::string format_draws_csv(const std::vector<PosteriorDraws>& chains) {
    std::string out = "chain,iteration,K,K_plus,log_density,allocation,weights\n";
    auto it = std::back_inserter(out);
    for (std::size_t m = 0; m < chains.size(); ++m) {
        for (const auto& rec : chains[m].records) {
            fmt::format_to(it, "{},{},{},{},{},", m + 1, rec.iteration, rec.n_active, rec.n_filled,
                           rec.log_density);
            for (std::size_t i = 0; i < rec.alloc.size(); ++i) {
                if (i > 0) out.push_back(' ');
                fmt::format_to(it, "{}", rec.alloc[i] + 1);
            }
            out.push_back(',');
            for (std::size_t k = 0; k < rec.weights.size(); ++k) {
                if (k > 0) out.push_back(' ');
                fmt::format_to(it, "{}", rec.weights[k]);
            }
            out.push_back('\n');
        }
    }
    return out;
}

std::vector<PosteriorDraws> parse_draws_csv(std::string_view text, const std::string& source) {
    const auto rows = split_csv(text, source);
    if (rows.empty()) throw ValidationError(fmt::format("{}: empty file", source));
    const std::vector<std::string> expected{"chain", "iteration", "K", "K_plus", "log_density", "allocation",
                                            "weights"};
    if (rows.front().cells != expected) {
        throw ValidationError(fmt::format("{}: unexpected header, expected {}", source, fmt::join(expected, ",")));
    }
    std::vector<PosteriorDraws> chains;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        auto bad = [&](std::size_t col, const std::string& why) {
            return ValidationError(fmt::format("{}: line {}, column {}: {}", source, row.line, col, why));
        };
        if (row.cells.size() != expected.size()) {
            throw ValidationError(fmt::format("{}: line {} has {} cells, expected {}", source, row.line,
                                              row.cells.size(), expected.size()));
        }
        int chain = 0;
        DrawRecord rec;
        if (!parse_int(row.cells[0], chain) || chain < 1) throw bad(1, "chain must be a positive integer");
        if (!parse_int(row.cells[1], rec.iteration)) throw bad(2, "iteration is not an integer");
        if (!parse_int(row.cells[2], rec.n_active) || rec.n_active < 1) throw bad(3, "K must be positive");
        if (!parse_int(row.cells[3], rec.n_filled) || rec.n_filled < 1 || rec.n_filled > rec.n_active) {
            throw bad(4, "K_plus must lie in [1, K]");
        }
        if (!parse_double(row.cells[4], rec.log_density)) throw bad(5, "log_density is not a number");
        std::vector<bool> used(static_cast<std::size_t>(rec.n_filled), false);
        for (auto tok : split_spaces(row.cells[5])) {
            int label = 0;
            if (!parse_int(tok, label) || label < 1 || label > rec.n_filled) {
                throw bad(6, fmt::format("label '{}' outside 1..K_plus", tok));
            }
            used[static_cast<std::size_t>(label - 1)] = true;
            rec.alloc.push_back(label - 1);
        }
        if (std::find(used.begin(), used.end(), false) != used.end()) throw bad(6, "a filled component is empty");
        for (auto tok : split_spaces(row.cells[6])) {
            double w = 0.0;
            if (!parse_double(tok, w) || !(w >= 0.0)) throw bad(7, fmt::format("bad weight '{}'", tok));
            rec.weights.push_back(w);
        }
        if (rec.weights.size() != static_cast<std::size_t>(rec.n_filled)) throw bad(7, "need K_plus weights");

        if (static_cast<std::size_t>(chain) > chains.size()) chains.resize(static_cast<std::size_t>(chain));
        auto& draws = chains[static_cast<std::size_t>(chain - 1)];
        if (draws.records.empty()) {
            draws.n_samples = rec.alloc.size();
        } else if (rec.alloc.size() != draws.n_samples) {
            throw bad(6, "allocation length differs from earlier rows");
        }
        draws.records.push_back(std::move(rec));
    }
    for (std::size_t m = 0; m < chains.size(); ++m) {
        if (chains[m].records.empty()) throw ValidationError(fmt::format("{}: chain {} has no draws", source, m + 1));
        if (chains[m].n_samples != chains.front().n_samples) {
            throw ValidationError(fmt::format("{}: chains disagree on the number of samples", source));
        }
    }
    return chains;
}

namespace {

constexpr char kXiMagic[8] = {'D', 'S', 'D', 'M', 'X', 'I', '0', '1'};

template <typename T>
void put_le(std::string& out, T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    const U bits = std::bit_cast<U>(value);
    for (std::size_t b = 0; b < sizeof(U); ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

template <typename T>
T get_le(std::string_view bytes, std::size_t& pos) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    if (pos + sizeof(U) > bytes.size()) throw ValidationError("xi sidecar is truncated");
    U bits = 0;
    for (std::size_t b = 0; b < sizeof(U); ++b) {
        bits |= static_cast<U>(static_cast<unsigned char>(bytes[pos + b])) << (8 * b);
    }
    pos += sizeof(U);
    return std::bit_cast<T>(bits);
}

}  // namespace

std::string format_xi_sidecar(const std::vector<PosteriorDraws>& chains) {
    std::uint64_t n_records = 0;
    std::uint64_t n_taxa = 0;
    for (const auto& c : chains) {
        n_records += c.records.size();
        if (c.n_taxa != 0) n_taxa = c.n_taxa;
    }
    std::string out(kXiMagic, sizeof kXiMagic);
    put_le(out, n_records);
    put_le(out, n_taxa);
    for (std::size_t m = 0; m < chains.size(); ++m) {
        for (const auto& rec : chains[m].records) {
            if (rec.xi.size() != static_cast<std::size_t>(rec.n_filled) * n_taxa) {
                throw ValidationError("draw has no recorded xi rows");
            }
            put_le(out, static_cast<std::uint32_t>(m + 1));
            put_le(out, static_cast<std::uint32_t>(rec.iteration));
            put_le(out, static_cast<std::uint32_t>(rec.n_filled));
            for (double v : rec.xi) put_le(out, v);
        }
    }
    return out;
}

void attach_xi_sidecar(std::string_view bytes, std::vector<PosteriorDraws>& chains) {
    if (bytes.size() < sizeof kXiMagic || std::memcmp(bytes.data(), kXiMagic, sizeof kXiMagic) != 0) {
        throw ValidationError("xi sidecar has a bad magic number");
    }
    std::size_t pos = sizeof kXiMagic;
    const auto n_records = get_le<std::uint64_t>(bytes, pos);
    const auto n_taxa = get_le<std::uint64_t>(bytes, pos);
    if (n_taxa < 2) throw ValidationError("xi sidecar declares fewer than two taxa");
    std::map<std::pair<std::uint32_t, std::uint32_t>, DrawRecord*> index;
    for (std::size_t m = 0; m < chains.size(); ++m) {
        for (auto& rec : chains[m].records) {
            index[{static_cast<std::uint32_t>(m + 1), static_cast<std::uint32_t>(rec.iteration)}] = &rec;
        }
    }
    std::size_t attached = 0;
    for (std::uint64_t r = 0; r < n_records; ++r) {
        const auto chain = get_le<std::uint32_t>(bytes, pos);
        const auto iteration = get_le<std::uint32_t>(bytes, pos);
        const auto k_plus = get_le<std::uint32_t>(bytes, pos);
        std::vector<double> xi(static_cast<std::size_t>(k_plus) * n_taxa);
        for (double& v : xi) v = get_le<double>(bytes, pos);
        auto it = index.find({chain, iteration});
        if (it == index.end()) continue;
        if (static_cast<int>(k_plus) != it->second->n_filled) {
            throw ValidationError(
                fmt::format("xi sidecar disagrees with draws on K_plus at chain {}, iteration {}", chain, iteration));
        }
        it->second->xi = std::move(xi);
        ++attached;
    }
    if (pos != bytes.size()) throw ValidationError("xi sidecar has trailing bytes");
    if (attached != index.size()) throw ValidationError("xi sidecar does not cover every draw");
    for (auto& c : chains) c.n_taxa = static_cast<std::size_t>(n_taxa);
}

std::string format_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (c > 0) out.push_back(',');
            out += quote(cells[c]);
        }
        out.push_back('\n');
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out;
}

std::map<std::string, std::string> parse_taxon_groups(std::string_view text, const std::string& source) {
    std::map<std::string, std::string> out;
    const auto rows = split_csv(text, source);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.cells.size() != 2) {
            throw ValidationError(
                fmt::format("{}: line {} has {} cells, expected 2", source, row.line, row.cells.size()));
        }
        if (r == 0 && row.cells[0] == "taxon" && row.cells[1] == "group") continue;
        if (!out.emplace(row.cells[0], row.cells[1]).second) {
            throw ValidationError(fmt::format("{}: taxon '{}' listed twice", source, row.cells[0]));
        }
    }
    return out;
}

}  // namespace dsdm
