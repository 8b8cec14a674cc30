#pragma once

// Token-bias attack on a tiny story corpus: raise log p(target word) over
// log p(probe word) wherever the probe word occurs, by editing the tokens of
// the most influential training stories.

#include <cstdint>
#include <string>
#include <vector>

#include "experiments/image_attack.hpp"
#include "experiments/results.hpp"
#include "perturb/perturb.hpp"

namespace infusion::experiments {

// Word-level vocabulary. Each animal is a single token so the contrastive
// measurement compares whole words.
struct StoryVocab {
  std::vector<std::string> words;
  std::vector<int> animals;  // token ids
  int bos = 0, eos = 1;

  int id(const std::string& word) const;
  std::string decode(const std::vector<int>& tokens) const;
  int size() const { return static_cast<int>(words.size()); }
};
StoryVocab story_vocab();

// Three-sentence stories about one animal; `animal` < 0 draws it uniformly.
// Loss mask covers every token after <bos>.
models::Dataset gen_stories(const StoryVocab& v, std::size_t count, int animal, std::uint64_t seed);
std::size_t max_story_length();

struct TokenBiasConfig {
  std::size_t k = 20;
  influence::Strategy strategy = influence::Strategy::most_negative;
  perturb::DiscreteConfig pgd{0.2, 20, 0.0, 0.2, {}};
  int retrain_epochs = 1;
  std::size_t measurement_docs = 6;
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct WordPair {
  int probe = 0;  // index into StoryVocab::animals
  int target = 0;
};
// Every ordered pair of distinct animals among the first `count`.
std::vector<WordPair> word_pairs(const StoryVocab& v, std::size_t count);

// One result per pair. Probability vectors are over the animal words at the
// probe positions of the measurement set (mean of renormalized rows).
// actual_df is the change of the contrastive measurement; extra carries the
// per-word shifts, rank flips and the edits.
std::vector<ExperimentResult> run_token_bias(const AttackModel& model, const models::Dataset& train,
                                             const StoryVocab& vocab, const std::vector<WordPair>& pairs,
                                             const TokenBiasConfig& cfg);

}  // namespace infusion::experiments
