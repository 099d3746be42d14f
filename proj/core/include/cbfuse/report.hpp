#pragma once

#include <string>
#include <vector>

#include "cbfuse/grid.hpp"

namespace cbfuse {

// One rendered table cell. delta_vs_base is mean - baseline mean for the same
// alpha_np; bold flags |delta| >= 0.05. sign_vs_prev compares against the
// previous, less accurately aligned row (the first row of each block compares
// against the baseline) and is colored when that change exceeds 0.05.
struct TableEntry {
  std::string row_label;
  std::string mode;
  double alpha_a = 0.0;
  int alpha_np = 0;
  std::string task;  // "liver" | "tumor"
  double mean = 0.0;
  double delta_vs_base = 0.0;
  bool improved = false;
  bool degraded = false;
  bool bold = false;
  int sign_vs_prev = 0;  // +1, -1 or 0
  bool sign_colored = false;
  double change_vs_prev = 0.0;
};

struct RenderedTable {
  std::string csv;
  std::string markdown;
  std::vector<TableEntry> entries;

  const TableEntry* find(const std::string& row_label, int alpha_np,
                         const std::string& task) const;
};

// Renders mean Dice per cell with deltas against the unimodal baseline. Rows
// are ordered no-misalignment, then affine by decreasing alpha_a, then
// elastic by decreasing alpha_a; columns are alpha_np in decreasing order.
// Throws ColumnMismatch when results cover alpha_np values the baseline does
// not, and EmptyInput when either side has no cells.
RenderedTable render_table(const GridResult& results, const GridResult& baseline);

}  // namespace cbfuse
