#include "capsnet/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace capsnet {

namespace {

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open for reading");
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError(path + ": cannot open for writing");
  return out;
}

[[noreturn]] void fail(const std::string& path, std::size_t line, const std::string& what) {
  throw DataError(path + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

std::string join(std::span<const std::string> tokens) {
  std::string s;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (t) s += ' ';
    s += tokens[t];
  }
  return s;
}

void check_tokens(std::span<const std::string> tokens, const std::string& what) {
  if (tokens.empty()) throw DataError(what + ": empty token sequence");
  for (const auto& t : tokens) {
    if (t.find_first_of(" \t\n\r") != std::string::npos) throw DataError(what + ": token contains whitespace");
  }
}

}  // namespace

std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

void EmbeddingTable::add(const std::string& word, std::span<const double> vec) {
  if (vec.size() != dim_) throw std::invalid_argument("EmbeddingTable::add: dimension mismatch");
  if (index_.count(word)) return;
  index_.emplace(word, words_.size());
  words_.push_back(word);
  rows_.insert(rows_.end(), vec.begin(), vec.end());
}

std::span<const double> EmbeddingTable::lookup(const std::string& word) const {
  const auto it = index_.find(word);
  if (it == index_.end()) return oov_;
  return {rows_.data() + it->second * dim_, dim_};
}

DocumentMatrix EmbeddingTable::embed(std::span<const std::string> tokens) const {
  DocumentMatrix m(tokens.size(), dim_);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto row = lookup(tokens[t]);
    std::copy(row.begin(), row.end(), m.row(t).begin());
  }
  return m;
}

EmbeddingTable load_embeddings(const std::string& path) {
  auto in = open_in(path);
  EmbeddingTable table;
  bool have_dim = false;
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> vec;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_tokens(line);
    if (fields.size() < 2) fail(path, line_no, "expected a word followed by at least one value");
    vec.clear();
    for (std::size_t f = 1; f < fields.size(); ++f) {
      double x = 0.0;
      const auto& s = fields[f];
      const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
      if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(x)) {
        fail(path, line_no, "malformed value '" + s + "'");
      }
      vec.push_back(x);
    }
    if (!have_dim) {
      table = EmbeddingTable(vec.size());
      have_dim = true;
    } else if (vec.size() != table.dim()) {
      fail(path, line_no,
           "dimension " + std::to_string(vec.size()) + " differs from " + std::to_string(table.dim()));
    }
    table.add(fields[0], vec);
  }
  if (!have_dim) throw DataError(path + ": no embeddings found");
  return table;
}

void write_embeddings(const std::string& path, const EmbeddingTable& table) {
  auto out = open_out(path);
  out << std::setprecision(17);
  for (const auto& w : table.words()) {
    out << w;
    for (double x : table.lookup(w)) out << ' ' << x;
    out << '\n';
  }
  if (!out) throw DataError(path + ": write failed");
}

std::vector<ClassificationRecord> load_classification(const std::string& path, std::size_t n_labels) {
  auto in = open_in(path);
  std::vector<ClassificationRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) fail(path, line_no, "expected <labels><TAB><tokens>");
    ClassificationRecord rec;
    const std::string label_field = line.substr(0, tab);
    if (!label_field.empty()) {
      for (const auto& s : split_on(label_field, ',')) {
        LabelId id = 0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), id);
        if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
          fail(path, line_no, "malformed label '" + s + "'");
        }
        if (id < 0 || static_cast<std::size_t>(id) >= n_labels) {
          fail(path, line_no, "label " + s + " outside label space of size " + std::to_string(n_labels));
        }
        if (std::find(rec.labels.begin(), rec.labels.end(), id) == rec.labels.end()) rec.labels.push_back(id);
      }
    }
    rec.tokens = split_tokens(line.substr(tab + 1));
    if (rec.tokens.empty()) fail(path, line_no, "empty token sequence");
    records.push_back(std::move(rec));
  }
  return records;
}

void write_classification(const std::string& path, std::span<const ClassificationRecord> records) {
  auto out = open_out(path);
  for (std::size_t r = 0; r < records.size(); ++r) {
    check_tokens(records[r].tokens, path + ": record " + std::to_string(r));
    for (std::size_t q = 0; q < records[r].labels.size(); ++q) {
      if (q) out << ',';
      out << records[r].labels[q];
    }
    out << '\t' << join(records[r].tokens) << '\n';
  }
  if (!out) throw DataError(path + ": write failed");
}

std::vector<QaRecord> load_qa(const std::string& path) {
  auto in = open_in(path);
  std::vector<QaRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_on(line, '\t');
    if (fields.size() != 4) fail(path, line_no, "expected 4 tab-separated fields");
    QaRecord rec;
    rec.question_id = fields[0];
    if (rec.question_id.empty()) fail(path, line_no, "empty question id");
    if (fields[1] == "1") {
      rec.relevant = true;
    } else if (fields[1] != "0") {
      fail(path, line_no, "relevance flag must be 0 or 1");
    }
    rec.question = split_tokens(fields[2]);
    rec.answer = split_tokens(fields[3]);
    if (rec.question.empty() || rec.answer.empty()) fail(path, line_no, "empty token sequence");
    records.push_back(std::move(rec));
  }
  return records;
}

void write_qa(const std::string& path, std::span<const QaRecord> records) {
  auto out = open_out(path);
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    const std::string what = path + ": record " + std::to_string(r);
    check_tokens(rec.question, what);
    check_tokens(rec.answer, what);
    if (rec.question_id.empty() || rec.question_id.find_first_of("\t\n") != std::string::npos) {
      throw DataError(what + ": bad question id");
    }
    out << rec.question_id << '\t' << (rec.relevant ? 1 : 0) << '\t' << join(rec.question) << '\t'
        << join(rec.answer) << '\n';
  }
  if (!out) throw DataError(path + ": write failed");
}

std::vector<QaGroup> group_qa(std::span<const QaRecord> records) {
  std::vector<QaGroup> groups;
  std::unordered_map<std::string, std::size_t> where;
  for (const auto& rec : records) {
    auto [it, fresh] = where.emplace(rec.question_id, groups.size());
    if (fresh) groups.push_back({rec.question_id, rec.question, {}, {}});
    QaGroup& g = groups[it->second];
    if (g.question != rec.question) {
      throw DataError("question id " + rec.question_id + " appears with different question text");
    }
    g.answers.push_back(rec.answer);
    g.relevant.push_back(rec.relevant ? 1 : 0);
  }
  return groups;
}

}  // namespace capsnet
