#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "augda/core.hpp"

namespace augda::io {

// NumPy .npy (format 1.0), little-endian, C order. Doubles are stored as
// '<f8', masks as '|u1'.
void write_npy(const std::filesystem::path& path, const Grid<double>& grid);
void write_npy(const std::filesystem::path& path, const Grid<std::uint8_t>& grid);
Grid<double> read_npy_f8(const std::filesystem::path& path);
Grid<std::uint8_t> read_npy_u1(const std::filesystem::path& path);

using KeyValues = std::map<std::string, std::string>;
/// `key = value` lines; '#' starts a comment.
void write_key_values(const std::filesystem::path& path, const KeyValues& kv);
KeyValues read_key_values(const std::filesystem::path& path);

/// Sample directory layout:
///
///   <root>/<id>/image.npy     pixels, '<f8'
///   <root>/<id>/mask.npy      labels, '|u1' (labeled samples only)
///   <root>/<id>/partner.npy   second acquisition (paired samples only)
///   <root>/<id>/meta.txt      id, row_mm, col_mm, domain_id[, partner_domain_id]
void write_sample(const std::filesystem::path& root, const LabeledSample& s);
void write_sample(const std::filesystem::path& root, const UnlabeledSample& s);
LabeledSample read_labeled(const std::filesystem::path& sample_dir);
UnlabeledSample read_unlabeled(const std::filesystem::path& sample_dir);

}  // namespace augda::io
