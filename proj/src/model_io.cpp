#include "ptok/model_io.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <sstream>

#include "ptok/errors.hpp"
#include "ptok/fsio.hpp"

namespace ptok {

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

std::string hash_hex(uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void append_matrix(std::string& out, const std::string& name, const Eigen::MatrixXd& m) {
  out += "## " + name + " " + std::to_string(m.rows()) + " " + std::to_string(m.cols()) + "\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c > 0) out += ' ';
      out += format_g17(m(r, c));
    }
    out += '\n';
  }
}

class LineReader {
 public:
  explicit LineReader(const std::string& path)
      : path_(path), lines_(read_lines(path)) {}

  const std::string& next(const char* what) {
    if (pos_ >= lines_.size())
      throw DataError(path_ + ": unexpected end of file, wanted " + std::string(what));
    return lines_[pos_++];
  }
  size_t line_no() const { return pos_; }

 private:
  std::string path_;
  std::vector<std::string> lines_;
  size_t pos_ = 0;
};

void read_matrix(LineReader& in, const std::string& name, Eigen::MatrixXd& m) {
  std::istringstream header(in.next("matrix header"));
  std::string marker, got_name;
  long rows = 0, cols = 0;
  header >> marker >> got_name >> rows >> cols;
  if (marker != "##" || got_name != name) throw DataError("expected matrix " + name);
  if (rows != m.rows() || cols != m.cols())
    throw DataError("matrix " + name + " has wrong shape");
  for (long r = 0; r < rows; ++r) {
    const std::string& line = in.next("matrix row");
    const char* p = line.c_str();
    char* end = nullptr;
    for (long c = 0; c < cols; ++c) {
      double v = std::strtod(p, &end);
      if (end == p) throw DataError("matrix " + name + ": bad value at row " + std::to_string(r));
      m(r, c) = v;
      p = end;
    }
    while (*p == ' ') ++p;
    if (*p != '\0') throw DataError("matrix " + name + ": trailing data at row " + std::to_string(r));
  }
}

template <class P, class Fn>
void for_each_named(P& p, Fn&& fn) {
  fn("wte", p.wte);
  for (size_t i = 0; i < p.layers.size(); ++i) {
    std::string prefix = "layer" + std::to_string(i) + ".";
    fn(prefix + "wq", p.layers[i].wq);
    fn(prefix + "wk", p.layers[i].wk);
    fn(prefix + "wv", p.layers[i].wv);
    fn(prefix + "wo", p.layers[i].wo);
    fn(prefix + "wfc1", p.layers[i].wfc1);
    fn(prefix + "wfc2", p.layers[i].wfc2);
  }
  fn("wout", p.wout);
}

json parse_header(const std::string& line, const std::string& kind) {
  json h = json::parse(line, nullptr, false);
  if (h.is_discarded()) throw DataError("checkpoint header is not valid JSON");
  if (h.value("format_version", -1) != kFormatVersion)
    throw DataError("unsupported checkpoint format_version");
  if (h.value("kind", "") != kind)
    throw DataError("checkpoint kind mismatch, wanted " + kind);
  return h;
}

}  // namespace

void save_lm(const LmModel& model, const std::string& path) {
  const LmConfig& c = model.config();
  json header = {
      {"format_version", kFormatVersion},
      {"kind", "lm"},
      {"config",
       {{"vocab_size", c.vocab_size},
        {"d_model", c.d_model},
        {"n_layers", c.n_layers},
        {"n_heads", c.n_heads},
        {"max_context", c.max_context},
        {"seed", c.seed}}},
      {"config_hash", hash_hex(model.config_hash())},
      {"vocab", std::vector<std::string>(model.vocab().entries().begin(),
                                         model.vocab().entries().begin() +
                                             model.vocab().base_size())},
  };
  std::string out = header.dump() + "\n";
  for_each_named(model.params(), [&out](const std::string& name, const Eigen::MatrixXd& m) {
    append_matrix(out, name, m);
  });
  write_file_atomic(path, out);
}

LmModel load_lm(const std::string& path) {
  LineReader in(path);
  json h = parse_header(in.next("header"), "lm");
  LmConfig cfg;
  const json& jc = h.at("config");
  cfg.vocab_size = jc.at("vocab_size").get<int>();
  cfg.d_model = jc.at("d_model").get<int>();
  cfg.n_layers = jc.at("n_layers").get<int>();
  cfg.n_heads = jc.at("n_heads").get<int>();
  cfg.max_context = jc.at("max_context").get<int>();
  cfg.seed = jc.at("seed").get<uint64_t>();
  Vocabulary vocab = Vocabulary::restore(h.at("vocab").get<std::vector<std::string>>());
  LmModel model(cfg, std::move(vocab));
  for_each_named(model.params(), [&in](const std::string& name, Eigen::MatrixXd& m) {
    read_matrix(in, name, m);
  });
  if (hash_hex(model.config_hash()) != h.at("config_hash").get<std::string>())
    throw DataError("checkpoint config_hash mismatch");
  return model;
}

void save_ptokens(const PTokenSet& set, const LmModel& model, const std::string& path) {
  std::vector<std::string> begin_names, end_names;
  for (int id : set.begin_ids) begin_names.push_back(model.vocab().entry(id));
  for (int id : set.end_ids) end_names.push_back(model.vocab().entry(id));
  json header = {
      {"format_version", kFormatVersion},
      {"kind", "ptokens"},
      {"m", set.m},
      {"d_model", static_cast<int>(set.embeddings.cols())},
      {"begin_ids", set.begin_ids},
      {"end_ids", set.end_ids},
      {"begin_names", begin_names},
      {"end_names", end_names},
      {"lm_config_hash", hash_hex(model.config_hash())},
  };
  std::string out = header.dump() + "\n";
  for (Eigen::Index r = 0; r < set.embeddings.rows(); ++r) {
    for (Eigen::Index c = 0; c < set.embeddings.cols(); ++c) {
      if (c > 0) out += ' ';
      out += format_g17(set.embeddings(r, c));
    }
    out += '\n';
  }
  write_file_atomic(path, out);
}

PTokenSet load_ptokens(const std::string& path, LmModel& model) {
  LineReader in(path);
  json h = parse_header(in.next("header"), "ptokens");
  if (h.at("lm_config_hash").get<std::string>() != hash_hex(model.config_hash()))
    throw DataError("prompt-token checkpoint belongs to a different model");
  PTokenSet set;
  set.m = h.at("m").get<int>();
  if (set.m < 1) throw DataError("invalid m in prompt-token checkpoint");
  if (h.at("d_model").get<int>() != model.config().d_model)
    throw DataError("prompt-token d_model mismatch");
  set.begin_ids = h.at("begin_ids").get<std::vector<int>>();
  set.end_ids = h.at("end_ids").get<std::vector<int>>();
  auto begin_names = h.at("begin_names").get<std::vector<std::string>>();
  auto end_names = h.at("end_names").get<std::vector<std::string>>();
  if (static_cast<int>(set.begin_ids.size()) != set.m ||
      static_cast<int>(set.end_ids.size()) != set.m)
    throw DataError("prompt-token id lists have wrong length");

  Vocabulary& vocab = model.mutable_vocab();
  if (vocab.n_special() == 0) {
    for (int i = 0; i < set.m; ++i) {
      int id = vocab.add_special(begin_names[static_cast<size_t>(i)]);
      if (id != set.begin_ids[static_cast<size_t>(i)])
        throw DataError("prompt-token id layout mismatch");
    }
    for (int i = 0; i < set.m; ++i) {
      int id = vocab.add_special(end_names[static_cast<size_t>(i)]);
      if (id != set.end_ids[static_cast<size_t>(i)])
        throw DataError("prompt-token id layout mismatch");
    }
  } else {
    for (int i = 0; i < set.m; ++i) {
      if (vocab.entry(set.begin_ids[static_cast<size_t>(i)]) != begin_names[static_cast<size_t>(i)] ||
          vocab.entry(set.end_ids[static_cast<size_t>(i)]) != end_names[static_cast<size_t>(i)])
        throw DataError("prompt-token ids collide with existing specials");
    }
  }

  set.embeddings.resize(2 * set.m, model.config().d_model);
  for (Eigen::Index r = 0; r < set.embeddings.rows(); ++r) {
    const std::string& line = in.next("embedding row");
    const char* p = line.c_str();
    char* end = nullptr;
    for (Eigen::Index c = 0; c < set.embeddings.cols(); ++c) {
      double v = std::strtod(p, &end);
      if (end == p) throw DataError("bad embedding value in row " + std::to_string(r));
      set.embeddings(r, c) = v;
      p = end;
    }
  }
  return set;
}

}  // namespace ptok
