#include "capsnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace capsnet {

namespace {

std::size_t uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Vec random_vector(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  Vec v(dim);
  for (double& e : v) e = normal(rng);
  return v;
}

void check_fraction(double f, const char* what) {
  if (!(f >= 0.0 && f <= 1.0)) throw std::invalid_argument(std::string("synth: ") + what + " must lie in [0, 1]");
}

std::size_t test_count(std::size_t n, double test_fraction) {
  return static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
}

}  // namespace

std::string signature_token(std::size_t j, std::size_t t) {
  return "sig" + std::to_string(j) + "_" + std::to_string(t);
}

SynthCorpus synth_multilabel(const SynthOptions& opts) {
  if (opts.n_labels < 2) throw std::invalid_argument("synth_multilabel: n_labels must be >= 2");
  if (opts.n_docs == 0 || opts.embed_dim == 0 || opts.signature_size == 0 || opts.tokens_per_label == 0) {
    throw std::invalid_argument("synth_multilabel: sizes must be >= 1");
  }
  if (opts.filler_min > opts.filler_max) throw std::invalid_argument("synth_multilabel: filler_min > filler_max");
  if (opts.filler_max > 0 && opts.filler_vocab == 0) throw std::invalid_argument("synth_multilabel: no filler vocab");
  check_fraction(opts.test_fraction, "test_fraction");
  check_fraction(opts.train_fraction, "train_fraction");
  if (!(opts.confuser_rate >= 0.0 && opts.confuser_rate <= 1.0)) {
    throw std::invalid_argument("synth_multilabel: confuser_rate must lie in [0, 1]");
  }

  std::mt19937_64 rng(opts.seed);
  SynthCorpus corpus;
  corpus.n_labels = opts.n_labels;
  corpus.embeddings = EmbeddingTable(opts.embed_dim);
  for (std::size_t j = 0; j < opts.n_labels; ++j)
    for (std::size_t t = 0; t < opts.signature_size; ++t)
      corpus.embeddings.add(signature_token(j, t), random_vector(rng, opts.embed_dim));
  for (std::size_t t = 0; t < opts.filler_vocab; ++t)
    corpus.embeddings.add("fill" + std::to_string(t), random_vector(rng, opts.embed_dim));

  const std::size_t max_labels = std::min<std::size_t>(3, opts.n_labels - 1);
  std::bernoulli_distribution confuse(opts.confuser_rate);
  std::vector<ClassificationRecord> docs(opts.n_docs);
  std::vector<LabelId> all(opts.n_labels);
  std::iota(all.begin(), all.end(), 0);
  for (auto& doc : docs) {
    std::shuffle(all.begin(), all.end(), rng);
    const std::size_t k = uniform(rng, 1, max_labels);
    doc.labels.assign(all.begin(), all.begin() + k);
    std::sort(doc.labels.begin(), doc.labels.end());
    for (LabelId j : doc.labels)
      for (std::size_t t = 0; t < opts.tokens_per_label; ++t)
        doc.tokens.push_back(signature_token(j, uniform(rng, 0, opts.signature_size - 1)));
    if (confuse(rng)) {
      // all[k..] are exactly the labels this document lacks.
      const LabelId other = all[uniform(rng, k, opts.n_labels - 1)];
      doc.tokens.push_back(signature_token(other, uniform(rng, 0, opts.signature_size - 1)));
    }
    const std::size_t fill = uniform(rng, opts.filler_min, opts.filler_max);
    for (std::size_t t = 0; t < fill; ++t) doc.tokens.push_back("fill" + std::to_string(uniform(rng, 0, opts.filler_vocab - 1)));
    std::shuffle(doc.tokens.begin(), doc.tokens.end(), rng);
  }

  const std::size_t n_test = test_count(opts.n_docs, opts.test_fraction);
  const std::size_t n_train = opts.n_docs - n_test;
  corpus.test.assign(docs.begin() + static_cast<std::ptrdiff_t>(n_train), docs.end());

  // Fixed order over the training partition, independent of the fraction.
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 subsample(opts.seed ^ 0x5bd1e995ULL);
  std::shuffle(order.begin(), order.end(), subsample);
  const auto keep = static_cast<std::size_t>(std::ceil(opts.train_fraction * static_cast<double>(n_train) - 1e-9));
  order.resize(std::min(keep, n_train));
  std::sort(order.begin(), order.end());
  for (std::size_t i : order) corpus.train.push_back(docs[i]);
  return corpus;
}

SynthQaCorpus synth_qa(const SynthQaOptions& opts) {
  if (opts.n_concepts < 2) throw std::invalid_argument("synth_qa: need >= 2 concepts");
  if (opts.paraphrases < 2 || opts.concept_tokens == 0 || opts.n_questions == 0 || opts.embed_dim == 0) {
    throw std::invalid_argument("synth_qa: sizes must be >= 1 (paraphrases >= 2)");
  }
  if (opts.filler_tokens > 0 && opts.filler_vocab == 0) throw std::invalid_argument("synth_qa: no filler vocab");
  check_fraction(opts.test_fraction, "test_fraction");

  std::mt19937_64 rng(opts.seed);
  SynthQaCorpus corpus;
  corpus.embeddings = EmbeddingTable(opts.embed_dim);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(opts.embed_dim)));
  auto word = [](std::size_t c, std::size_t p) { return "c" + std::to_string(c) + "_" + std::to_string(p); };
  for (std::size_t c = 0; c < opts.n_concepts; ++c) {
    const Vec centre = random_vector(rng, opts.embed_dim);
    for (std::size_t p = 0; p < opts.paraphrases; ++p) {
      Vec e = centre;
      for (double& x : e) x += opts.paraphrase_noise * normal(rng);
      corpus.embeddings.add(word(c, p), e);
    }
  }
  for (std::size_t t = 0; t < opts.filler_vocab; ++t)
    corpus.embeddings.add("qfill" + std::to_string(t), random_vector(rng, opts.embed_dim));

  // Question and relevant answer draw from disjoint halves of the concept's paraphrases.
  const std::size_t half = opts.paraphrases / 2;
  auto text = [&](std::size_t c, std::size_t lo, std::size_t hi) {
    std::vector<std::string> toks;
    for (std::size_t t = 0; t < opts.concept_tokens; ++t) toks.push_back(word(c, uniform(rng, lo, hi)));
    for (std::size_t t = 0; t < opts.filler_tokens; ++t)
      toks.push_back("qfill" + std::to_string(uniform(rng, 0, opts.filler_vocab - 1)));
    std::shuffle(toks.begin(), toks.end(), rng);
    return toks;
  };

  const std::size_t n_test = test_count(opts.n_questions, opts.test_fraction);
  const std::size_t n_train = opts.n_questions - n_test;
  for (std::size_t q = 0; q < opts.n_questions; ++q) {
    const std::size_t c = uniform(rng, 0, opts.n_concepts - 1);
    const std::string qid = "q" + std::to_string(q);
    const auto question = text(c, 0, half - 1);
    auto& dest = q < n_train ? corpus.train : corpus.test;
    std::vector<QaRecord> group;
    group.push_back({qid, true, question, text(c, half, opts.paraphrases - 1)});
    for (std::size_t n = 0; n < opts.negatives; ++n) {
      std::size_t other = uniform(rng, 0, opts.n_concepts - 2);
      if (other >= c) ++other;
      group.push_back({qid, false, question, text(other, 0, opts.paraphrases - 1)});
    }
    std::shuffle(group.begin(), group.end(), rng);
    dest.insert(dest.end(), group.begin(), group.end());
  }
  return corpus;
}

}  // namespace capsnet
