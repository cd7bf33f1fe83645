#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dsdm/inference.hpp"
#include "dsdm/model.hpp"
#include "dsdm/sampler.hpp"

namespace dsdm {

namespace fs = std::filesystem;

// Whole-file helpers. Missing or unreadable files raise IoError.
std::string read_text(const fs::path& path);
void write_text(const fs::path& path, std::string_view text);
// Creates the directory (and parents) if needed.
void ensure_directory(const fs::path& dir);

// Counts CSV: header row of taxon ids behind a leading sample-id column,
// then one row per sample with non-negative integer cells. Errors name the
// 1-based line and column of the offending cell.
CountMatrix parse_counts_csv(std::string_view text, const std::string& source = "<counts>");
CountMatrix read_counts_csv(const fs::path& path);
std::string format_counts_csv(const CountMatrix& counts);

// Labels CSV: `sample_id,label` with integer labels.
struct LabelTable {
    std::vector<std::string> ids;
    std::vector<int> labels;
};

LabelTable parse_labels_csv(std::string_view text, const std::string& source = "<labels>");
LabelTable read_labels_csv(const fs::path& path);
// Labels are written 1-based in block order.
std::string format_labels_csv(const std::vector<std::string>& ids, const Partition& p);

// Joins two label tables on sample id, in the order of `a`. Throws
// ValidationError listing ids present in only one table.
std::pair<Partition, Partition> join_labels(const LabelTable& a, const LabelTable& b);

// Draws CSV, one row per retained draw:
//   chain,iteration,K,K_plus,log_density,allocation,weights
// allocation holds space-separated 1-based labels, weights the
// space-separated normalized weights of the filled components.
std::string format_draws_csv(const std::vector<PosteriorDraws>& chains);
// Returns one PosteriorDraws per chain index found, without ξ.
std::vector<PosteriorDraws> parse_draws_csv(std::string_view text, const std::string& source = "<draws>");

// ξ sidecar, all integers and floats little-endian:
//   bytes 0-7    magic "DSDMXI01"
//   uint64       record count R
//   uint64       taxa J
//   R records of
//     uint32 chain, uint32 iteration, uint32 K_plus,
//     K_plus * J float64, row-major by component
std::string format_xi_sidecar(const std::vector<PosteriorDraws>& chains);
// Attaches ξ rows to matching (chain, iteration) records of `chains`.
void attach_xi_sidecar(std::string_view bytes, std::vector<PosteriorDraws>& chains);

// Generic table writer: every cell is already formatted.
std::string format_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows);

// Two-column `taxon,group` CSV.
std::map<std::string, std::string> parse_taxon_groups(std::string_view text, const std::string& source = "<groups>");

}  // namespace dsdm
