#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ptok/bench.hpp"
#include "ptok/evaluator.hpp"

namespace ptok {

// One report per line as a JSON record with a "type" discriminator, so
// evaluation and bench records can share a file.
std::string eval_report_json(const EvalReport& r);
EvalReport eval_report_from_json(const std::string& line);
std::string bench_report_json(const BenchReport& r);
BenchReport bench_report_from_json(const std::string& line);

void append_report_line(const std::string& path, const std::string& json_line);
void write_report_lines(const std::string& path, const std::vector<std::string>& json_lines);
std::vector<EvalReport> read_eval_reports(const std::string& path);
std::vector<BenchReport> read_bench_reports(const std::string& path);

// Tab-separated comparison tables. Missing metrics render as "-".
std::string method_table(const std::vector<EvalReport>& reports);
std::string distractor_table(const std::vector<EvalReport>& reports);
// Columns: Model, #Tokens, S, ES, PS, NS, Efficacy, Paraphrase, Specificity.
std::string token_sweep_table(const std::string& model_tag, const std::vector<EvalReport>& reports);
std::string bench_table(const std::vector<BenchReport>& reports);

struct ChartSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

// Minimal self-contained SVG line chart; written atomically.
void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& x_label, const std::string& y_label,
                          const std::vector<ChartSeries>& series);

}  // namespace ptok
