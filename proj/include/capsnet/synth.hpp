#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "capsnet/data.hpp"

namespace capsnet {

struct SynthOptions {
  std::size_t n_docs = 600;
  std::size_t n_labels = 6;
  std::uint64_t seed = 1;
  std::size_t embed_dim = 32;
  double test_fraction = 0.2;
  /// Share of the training partition kept; the first ceil(f * n_train) docs of a fixed
  /// seeded order, so smaller fractions are subsets of larger ones.
  double train_fraction = 1.0;
  std::size_t signature_size = 5;  // distinct signature tokens per label
  std::size_t tokens_per_label = 3;
  std::size_t filler_vocab = 40;
  std::size_t filler_min = 4;
  std::size_t filler_max = 8;
  /// Chance of appending one signature token of a label the document does not carry.
  double confuser_rate = 0.3;
};

struct SynthCorpus {
  std::vector<ClassificationRecord> train;
  std::vector<ClassificationRecord> test;
  EmbeddingTable embeddings;
  std::size_t n_labels = 0;
};

/// Documents carry 1 to 3 labels; each label contributes tokens from its own signature set.
SynthCorpus synth_multilabel(const SynthOptions& opts);

/// Signature token `t` of label `j`.
std::string signature_token(std::size_t j, std::size_t t);

struct SynthQaOptions {
  std::size_t n_questions = 600;
  std::size_t n_concepts = 30;
  std::uint64_t seed = 1;
  std::size_t embed_dim = 16;
  double test_fraction = 0.2;
  std::size_t paraphrases = 6;  // words per concept
  double paraphrase_noise = 0.35;
  std::size_t concept_tokens = 3;
  std::size_t filler_vocab = 30;
  std::size_t filler_tokens = 2;
  std::size_t negatives = 4;  // irrelevant answers per question
};

struct SynthQaCorpus {
  std::vector<QaRecord> train;
  std::vector<QaRecord> test;
  EmbeddingTable embeddings;
};

/// A question and its relevant answer use different paraphrase words of one concept;
/// irrelevant answers come from other concepts.
SynthQaCorpus synth_qa(const SynthQaOptions& opts);

}  // namespace capsnet
