#pragma once

#include <filesystem>
#include <string>

#include "cellgraph/dataset.hpp"

namespace cellgraph {

enum class Pooling { mean, median };

/// Per-cell expression profile: one pooled intensity per channel, columns
/// named after the antigens. Rows are ordered by ascending cell id; labels are
/// left at kUnlabeled. Throws if the mask holds no cells or its dimensions
/// differ from the stack.
CellTable expression_profile(const StainStack& stack, const LabelMask& mask, Pooling pooling = Pooling::mean);

/// Same, with class labels attached from the sample's labels file.
CellTable expression_profile(const Sample& sample, Pooling pooling = Pooling::mean);

/// Concatenates per-sample tables (identical feature names required) and
/// orders rows by (sample_id, cell_id).
CellTable concat_tables(const std::vector<CellTable>& tables);

// Feature table CSV: `cell_id,sample_id,cx,cy,label,<feature names...>`,
// doubles printed with 17 significant digits.
std::string encode_cell_table_csv(const CellTable& table);
CellTable parse_cell_table_csv(const std::string& text);
CellTable read_cell_table_csv(const std::filesystem::path& path);

}  // namespace cellgraph
