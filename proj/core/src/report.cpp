#include "cbfuse/report.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace cbfuse {

namespace {

constexpr double kBoldThreshold = 0.05;

std::string format_alpha(double a) {
  std::ostringstream os;
  os << a;
  return os.str();
}

std::string row_label_for(const CellKey& key) {
  if (key.mode == "no_misalignment") return "no misalignment";
  if (key.mode == "affine") return "affine-s" + format_alpha(key.alpha_a);
  if (key.mode == "elastic") return "elastic-s" + format_alpha(key.alpha_a);
  return key.mode;
}

struct RowSpec {
  std::string mode;
  double alpha_a;
  bool block_start;  // first row of a block compares against the baseline
};

std::string fmt(double v, int prec = 3) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

}  // namespace

const TableEntry* RenderedTable::find(const std::string& row_label, int alpha_np,
                                      const std::string& task) const {
  for (const auto& e : entries)
    if (e.row_label == row_label && e.alpha_np == alpha_np && e.task == task) return &e;
  return nullptr;
}

RenderedTable render_table(const GridResult& results, const GridResult& baseline) {
  if (results.cells.empty()) throw EmptyInput("no result cells to render");
  if (baseline.cells.empty()) throw EmptyInput("no baseline cells to render");

  std::set<int> base_np;
  for (const auto& c : baseline.cells) base_np.insert(c.key.alpha_np);
  for (const auto& c : results.cells)
    if (!base_np.count(c.key.alpha_np))
      throw ColumnMismatch("results cover alpha_np=" + std::to_string(c.key.alpha_np) +
                           " but the baseline does not");

  std::vector<int> columns(base_np.begin(), base_np.end());
  std::sort(columns.begin(), columns.end(), std::greater<int>());

  // row order: no misalignment, affine desc alpha, elastic desc alpha
  std::set<double, std::greater<double>> affine_alphas, elastic_alphas;
  bool have_nomis = false;
  for (const auto& c : results.cells) {
    if (c.key.mode == "no_misalignment") have_nomis = true;
    if (c.key.mode == "affine") affine_alphas.insert(c.key.alpha_a);
    if (c.key.mode == "elastic") elastic_alphas.insert(c.key.alpha_a);
  }
  std::vector<RowSpec> rows;
  if (have_nomis) rows.push_back({"no_misalignment", 0.0, true});
  bool first = true;
  for (double a : affine_alphas) {
    rows.push_back({"affine", a, first});
    first = false;
  }
  first = true;
  for (double a : elastic_alphas) {
    rows.push_back({"elastic", a, first});
    first = false;
  }

  RenderedTable table;
  for (const char* task : {"liver", "tumor"}) {
    bool liver = std::string(task) == "liver";
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (int np : columns) {
        const CellResult* cell = results.find(rows[r].mode, rows[r].alpha_a, np);
        if (!cell) continue;
        const CellResult* base = baseline.find("baseline_cbct", 0.0, np);
        if (!base)
          throw ColumnMismatch("baseline row is missing alpha_np=" + std::to_string(np));

        TableEntry e;
        e.mode = rows[r].mode;
        e.alpha_a = rows[r].alpha_a;
        e.alpha_np = np;
        e.task = task;
        e.row_label = row_label_for(cell->key);
        e.mean = liver ? cell->mean_liver() : cell->mean_tumor();
        double base_mean = liver ? base->mean_liver() : base->mean_tumor();
        e.delta_vs_base = e.mean - base_mean;
        e.improved = e.delta_vs_base > 0.0;
        e.degraded = e.delta_vs_base < 0.0;
        e.bold = std::abs(e.delta_vs_base) >= kBoldThreshold - 1e-12;

        double prev_mean = base_mean;
        if (!rows[r].block_start) {
          const CellResult* prev = results.find(rows[r - 1].mode, rows[r - 1].alpha_a, np);
          if (prev) prev_mean = liver ? prev->mean_liver() : prev->mean_tumor();
        }
        e.change_vs_prev = e.mean - prev_mean;
        e.sign_vs_prev = e.change_vs_prev > 0.0 ? 1 : e.change_vs_prev < 0.0 ? -1 : 0;
        e.sign_colored = std::abs(e.change_vs_prev) > kBoldThreshold;
        table.entries.push_back(e);
      }
    }
  }

  // csv
  std::ostringstream csv;
  csv << "task,row,alpha_a,alpha_np,mean_dice,delta_vs_base,improved,bold,sign_vs_prev,"
         "sign_colored\n";
  for (const auto& e : table.entries)
    csv << e.task << "," << e.row_label << "," << e.alpha_a << "," << e.alpha_np << ","
        << fmt(e.mean) << "," << fmt(e.delta_vs_base) << "," << (e.improved ? 1 : 0) << ","
        << (e.bold ? 1 : 0) << "," << e.sign_vs_prev << "," << (e.sign_colored ? 1 : 0) << "\n";
  table.csv = csv.str();

  // markdown, one table per task
  std::ostringstream md;
  for (const char* task : {"liver", "tumor"}) {
    bool liver = std::string(task) == "liver";
    md << "## " << (liver ? "Liver segmentation" : "Liver tumor segmentation") << "\n\n";
    md << "| setting |";
    for (int np : columns) md << " " << np << " | |";
    md << "\n|---|";
    for (std::size_t i = 0; i < columns.size(); ++i) md << "---|---|";
    md << "\n| base CBCT |";
    for (int np : columns) {
      const CellResult* base = baseline.find("baseline_cbct", 0.0, np);
      md << " " << fmt(liver ? base->mean_liver() : base->mean_tumor()) << " | |";
    }
    md << "\n";
    for (const auto& row : rows) {
      const TableEntry* any = nullptr;
      for (const auto& e : table.entries)
        if (e.task == std::string(task) && e.mode == row.mode &&
            std::abs(e.alpha_a - row.alpha_a) < 1e-12) {
          any = &e;
          break;
        }
      if (!any) continue;
      md << "| " << any->row_label << " |";
      for (int np : columns) {
        const TableEntry* e = nullptr;
        for (const auto& cand : table.entries)
          if (cand.task == std::string(task) && cand.mode == row.mode &&
              std::abs(cand.alpha_a - row.alpha_a) < 1e-12 && cand.alpha_np == np) {
            e = &cand;
            break;
          }
        if (!e) {
          md << " | |";
          continue;
        }
        std::string val = fmt(e->mean);
        if (e->bold) val = "**" + val + "**";
        std::string sign = e->sign_vs_prev > 0 ? "+" : e->sign_vs_prev < 0 ? "-" : "=";
        if (e->sign_colored) sign = sign + sign;  // doubled sign marks a >5% swing
        md << " " << val << " (" << (e->delta_vs_base >= 0 ? "+" : "") << fmt(e->delta_vs_base)
           << ") | " << sign << " |";
      }
      md << "\n";
    }
    md << "\n";
  }
  table.markdown = md.str();
  return table;
}

}  // namespace cbfuse
