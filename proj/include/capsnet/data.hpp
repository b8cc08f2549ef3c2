#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "capsnet/model.hpp"
#include "capsnet/numerics.hpp"

namespace capsnet {

/// Malformed input file. The message names the file and line.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Word vectors with a zero row for out-of-vocabulary words.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim), oov_(dim, 0.0) {}

  /// Appends a word; a repeated word keeps its first vector.
  void add(const std::string& word, std::span<const double> vec);

  std::size_t size() const { return words_.size(); }
  std::size_t dim() const { return dim_; }
  bool contains(const std::string& word) const { return index_.count(word) != 0; }
  std::span<const double> lookup(const std::string& word) const;
  const std::vector<std::string>& words() const { return words_; }

  /// Token rows for a whitespace-split document.
  DocumentMatrix embed(std::span<const std::string> tokens) const;

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> words_;
  std::vector<double> rows_;
  Vec oov_;
};

/// GloVe text format: `word f1 ... fv` per line.
EmbeddingTable load_embeddings(const std::string& path);
void write_embeddings(const std::string& path, const EmbeddingTable& table);

struct ClassificationRecord {
  std::vector<LabelId> labels;
  std::vector<std::string> tokens;
  friend bool operator==(const ClassificationRecord&, const ClassificationRecord&) = default;
};

struct QaRecord {
  std::string question_id;
  bool relevant = false;
  std::vector<std::string> question;
  std::vector<std::string> answer;
  friend bool operator==(const QaRecord&, const QaRecord&) = default;
};

/// `3,7<TAB>tok tok ...` per line. Labels must lie in [0, n_labels).
std::vector<ClassificationRecord> load_classification(const std::string& path, std::size_t n_labels);
void write_classification(const std::string& path, std::span<const ClassificationRecord> records);

/// `qid<TAB>0|1<TAB>question tokens<TAB>answer tokens` per line.
std::vector<QaRecord> load_qa(const std::string& path);
void write_qa(const std::string& path, std::span<const QaRecord> records);

/// One question with its judged answers, in file order.
struct QaGroup {
  std::string question_id;
  std::vector<std::string> question;
  std::vector<std::vector<std::string>> answers;
  std::vector<char> relevant;
};
/// Groups pairs by question id in order of first appearance. The question text of a
/// repeated id must match.
std::vector<QaGroup> group_qa(std::span<const QaRecord> records);

std::vector<std::string> split_tokens(const std::string& text);

}  // namespace capsnet
