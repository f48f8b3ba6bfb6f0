#include "ptok/reporting.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "ptok/errors.hpp"
#include "ptok/fsio.hpp"

namespace ptok {

namespace {

using nlohmann::json;

const char* variant_name(Variant v) {
  return v == Variant::CounterFact ? "counterfact" : "zsre";
}

Variant parse_variant_name(const std::string& s) {
  if (s == "counterfact") return Variant::CounterFact;
  if (s == "zsre") return Variant::Zsre;
  throw DataError("unknown variant: " + s);
}

void put_opt(json& j, const char* key, const std::optional<double>& v) {
  if (v) j[key] = *v;
}

std::optional<double> get_opt(const json& j, const char* key) {
  if (!j.contains(key)) return std::nullopt;
  return j.at(key).get<double>();
}

std::string fmt2(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", *v);
  return buf;
}

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

json parse_line(const std::string& line) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded()) throw DataError("malformed report line: " + line);
  return j;
}

}  // namespace

std::string eval_report_json(const EvalReport& r) {
  json j;
  j["type"] = "eval";
  j["method"] = method_name(r.method);
  j["variant"] = variant_name(r.variant);
  j["m"] = r.m;
  j["distractor_len"] = r.distractor_len;
  j["n_facts"] = r.n_facts;
  j["seed"] = r.seed;
  put_opt(j, "es", r.es);
  put_opt(j, "ps", r.ps);
  put_opt(j, "ns", r.ns);
  put_opt(j, "s", r.s);
  put_opt(j, "efficacy", r.efficacy);
  put_opt(j, "paraphrase", r.paraphrase);
  put_opt(j, "specificity", r.specificity);
  return j.dump();
}

EvalReport eval_report_from_json(const std::string& line) {
  const json j = parse_line(line);
  if (j.value("type", "") != "eval") throw DataError("not an eval record");
  EvalReport r;
  try {
    r.method = parse_method(j.at("method").get<std::string>());
    r.variant = parse_variant_name(j.at("variant").get<std::string>());
    r.m = j.at("m").get<int>();
    r.distractor_len = j.at("distractor_len").get<int>();
    r.n_facts = j.at("n_facts").get<int>();
    r.seed = j.at("seed").get<uint64_t>();
    r.es = get_opt(j, "es");
    r.ps = get_opt(j, "ps");
    r.ns = get_opt(j, "ns");
    r.s = get_opt(j, "s");
    r.efficacy = get_opt(j, "efficacy");
    r.paraphrase = get_opt(j, "paraphrase");
    r.specificity = get_opt(j, "specificity");
  } catch (const json::exception& e) {
    throw DataError("malformed eval record: " + std::string(e.what()));
  }
  return r;
}

std::string bench_report_json(const BenchReport& r) {
  json j;
  j["type"] = "bench";
  j["method"] = method_name(r.method);
  j["mean_prompt_tokens"] = r.mean_prompt_tokens;
  j["mean_seconds_per_edit"] = r.mean_seconds_per_edit;
  j["n_edits"] = r.n_edits;
  j["batch_size"] = r.batch_size;
  j["hardware_note"] = r.hardware_note;
  return j.dump();
}

BenchReport bench_report_from_json(const std::string& line) {
  const json j = parse_line(line);
  if (j.value("type", "") != "bench") throw DataError("not a bench record");
  BenchReport r;
  try {
    r.method = parse_method(j.at("method").get<std::string>());
    r.mean_prompt_tokens = j.at("mean_prompt_tokens").get<double>();
    r.mean_seconds_per_edit = j.at("mean_seconds_per_edit").get<double>();
    r.n_edits = j.at("n_edits").get<int>();
    r.batch_size = j.at("batch_size").get<int>();
    r.hardware_note = j.at("hardware_note").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError("malformed bench record: " + std::string(e.what()));
  }
  return r;
}

void append_report_line(const std::string& path, const std::string& json_line) {
  std::string existing;
  try {
    existing = read_file(path);
  } catch (const DataError&) {
  }
  write_file_atomic(path, existing + json_line + "\n");
}

void write_report_lines(const std::string& path, const std::vector<std::string>& json_lines) {
  std::string out;
  for (const auto& l : json_lines) out += l + "\n";
  write_file_atomic(path, out);
}

std::vector<EvalReport> read_eval_reports(const std::string& path) {
  std::vector<EvalReport> out;
  for (const std::string& line : read_lines(path)) {
    if (line.empty()) continue;
    if (parse_line(line).value("type", "") == "eval") out.push_back(eval_report_from_json(line));
  }
  return out;
}

std::vector<BenchReport> read_bench_reports(const std::string& path) {
  std::vector<BenchReport> out;
  for (const std::string& line : read_lines(path)) {
    if (line.empty()) continue;
    if (parse_line(line).value("type", "") == "bench") out.push_back(bench_report_from_json(line));
  }
  return out;
}

std::string method_table(const std::vector<EvalReport>& reports) {
  std::string out;
  bool any_cf = false, any_z = false;
  for (const auto& r : reports) (r.variant == Variant::CounterFact ? any_cf : any_z) = true;
  if (any_cf) {
    out += "Method\tS\tES\tPS\tNS\n";
    for (const auto& r : reports)
      if (r.variant == Variant::CounterFact)
        out += std::string(method_name(r.method)) + "\t" + fmt2(r.s) + "\t" + fmt2(r.es) + "\t" +
               fmt2(r.ps) + "\t" + fmt2(r.ns) + "\n";
  }
  if (any_z) {
    if (any_cf) out += "\n";
    out += "Method\tEfficacy\tParaphrase\tSpecificity\n";
    for (const auto& r : reports)
      if (r.variant == Variant::Zsre)
        out += std::string(method_name(r.method)) + "\t" + fmt2(r.efficacy) + "\t" +
               fmt2(r.paraphrase) + "\t" + fmt2(r.specificity) + "\n";
  }
  return out;
}

std::string distractor_table(const std::vector<EvalReport>& reports) {
  std::string out = "Distractors\tS\tES\tPS\tNS\n";
  for (const auto& r : reports)
    out += std::to_string(r.distractor_len) + "\t" + fmt2(r.s) + "\t" + fmt2(r.es) + "\t" +
           fmt2(r.ps) + "\t" + fmt2(r.ns) + "\n";
  return out;
}

std::string token_sweep_table(const std::string& model_tag,
                              const std::vector<EvalReport>& reports) {
  std::string out = "Model\t#Tokens\tS\tES\tPS\tNS\tEfficacy\tParaphrase\tSpecificity\n";
  for (const auto& r : reports)
    out += model_tag + "\t" + std::to_string(r.m) + "\t" + fmt2(r.s) + "\t" + fmt2(r.es) + "\t" +
           fmt2(r.ps) + "\t" + fmt2(r.ns) + "\t" + fmt2(r.efficacy) + "\t" + fmt2(r.paraphrase) +
           "\t" + fmt2(r.specificity) + "\n";
  return out;
}

std::string bench_table(const std::vector<BenchReport>& reports) {
  std::string out = "Method\t#Tokens\tTime per Edit (s)\tBatch\tEdits\n";
  for (const auto& r : reports) {
    char tokens[32], secs[32];
    std::snprintf(tokens, sizeof(tokens), "%.2f", r.mean_prompt_tokens);
    std::snprintf(secs, sizeof(secs), "%.5f", r.mean_seconds_per_edit);
    out += std::string(method_name(r.method)) + "\t" + tokens + "\t" + secs + "\t" +
           std::to_string(r.batch_size) + "\t" + std::to_string(r.n_edits) + "\n";
  }
  return out;
}

void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& x_label, const std::string& y_label,
                          const std::vector<ChartSeries>& series) {
  if (series.empty()) throw ConfigError("chart with no series");
  for (const auto& s : series)
    if (s.points.size() < 2) throw ConfigError("chart series needs at least two points");

  const double W = 640, H = 420, ml = 64, mr = 120, mt = 40, mb = 52;
  double xmin = series[0].points[0].first, xmax = xmin;
  double ymin = series[0].points[0].second, ymax = ymin;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) {
    ymin -= 1;
    ymax += 1;
  }
  const double ypad = (ymax - ymin) * 0.05;
  ymin -= ypad;
  ymax += ypad;

  const auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
  const auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" "
         "viewBox=\"0 0 640 420\" font-family=\"sans-serif\">\n";
  svg += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";
  svg += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" + title +
         "</text>\n";
  svg += "<line x1=\"" + fmt_g(ml) + "\" y1=\"" + fmt_g(H - mb) + "\" x2=\"" + fmt_g(W - mr) +
         "\" y2=\"" + fmt_g(H - mb) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + fmt_g(ml) + "\" y1=\"" + fmt_g(mt) + "\" x2=\"" + fmt_g(ml) +
         "\" y2=\"" + fmt_g(H - mb) + "\" stroke=\"black\"/>\n";

  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 4.0;
    const double yv = ymin + (ymax - ymin) * i / 4.0;
    svg += "<text x=\"" + fmt_g(px(xv)) + "\" y=\"" + fmt_g(H - mb + 18) +
           "\" text-anchor=\"middle\" font-size=\"11\">" + fmt_g(std::round(xv * 100) / 100) +
           "</text>\n";
    svg += "<text x=\"" + fmt_g(ml - 8) + "\" y=\"" + fmt_g(py(yv) + 4) +
           "\" text-anchor=\"end\" font-size=\"11\">" + fmt_g(std::round(yv * 100) / 100) +
           "</text>\n";
    svg += "<line x1=\"" + fmt_g(ml) + "\" y1=\"" + fmt_g(py(yv)) + "\" x2=\"" + fmt_g(W - mr) +
           "\" y2=\"" + fmt_g(py(yv)) + "\" stroke=\"#dddddd\" stroke-width=\"0.5\"/>\n";
  }
  svg += "<text x=\"" + fmt_g((ml + W - mr) / 2) + "\" y=\"" + fmt_g(H - 12) +
         "\" text-anchor=\"middle\" font-size=\"12\">" + x_label + "</text>\n";
  svg += "<text x=\"16\" y=\"" + fmt_g((mt + H - mb) / 2) +
         "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 " +
         fmt_g((mt + H - mb) / 2) + ")\">" + y_label + "</text>\n";

  for (size_t si = 0; si < series.size(); ++si) {
    const char* color = kColors[si % 5];
    std::string pts;
    for (const auto& [x, y] : series[si].points)
      pts += fmt_g(px(x)) + "," + fmt_g(py(y)) + " ";
    svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color +
           "\" stroke-width=\"2\"/>\n";
    for (const auto& [x, y] : series[si].points)
      svg += "<circle cx=\"" + fmt_g(px(x)) + "\" cy=\"" + fmt_g(py(y)) +
             "\" r=\"3\" fill=\"" + color + "\"/>\n";
    const double ly = mt + 16 + 18 * static_cast<double>(si);
    svg += "<line x1=\"" + fmt_g(W - mr + 10) + "\" y1=\"" + fmt_g(ly - 4) + "\" x2=\"" +
           fmt_g(W - mr + 30) + "\" y2=\"" + fmt_g(ly - 4) + "\" stroke=\"" + color +
           "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + fmt_g(W - mr + 36) + "\" y=\"" + fmt_g(ly) + "\" font-size=\"11\">" +
           series[si].name + "</text>\n";
  }
  svg += "</svg>\n";
  write_file_atomic(path, svg);
}

}  // namespace ptok
