#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hybridlab/model.hpp"
#include "hybridlab/optim.hpp"

namespace hybridlab {

/// One training or evaluation sequence; targets < 0 are not scored.
struct Sample {
  std::vector<std::int64_t> inputs;
  std::vector<std::int64_t> targets;
};

inline constexpr std::int64_t kCopySeparator = 0;

/// Random content c[0..len/2) in [1, vocab), a separator, then the content
/// again. Inputs have length `len`; only the repeated half is scored.
Sample copy_sample(std::int64_t vocab, std::int64_t len, CounterRng& rng);
std::vector<Sample> copy_batch(std::int64_t vocab, std::int64_t len, std::int64_t n, std::uint64_t seed);

/// Key/value retrieval inside random filler. Token 0 marks the query; keys
/// come from a reserved range that filler never uses.
struct NeedleTask {
  std::int64_t vocab_size = 32;
  std::int64_t context_len = 64;
  std::int64_t key_len = 1;
  std::int64_t value_len = 2;
  double depth_fraction = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
  std::int64_t n_keys() const;
  std::int64_t filler_begin() const { return 1 + n_keys(); }
  /// Filler tokens that surround the needle.
  std::int64_t filler_len() const { return context_len - 2 * (key_len + value_len) - 1; }
  /// Index of the first needle key token for this depth.
  std::int64_t needle_offset() const;
};

inline constexpr std::int64_t kQueryToken = 0;

struct NeedleBatch {
  std::vector<Sample> samples;
  std::vector<double> depths;
  std::vector<std::vector<std::int64_t>> keys;
  std::vector<std::vector<std::int64_t>> values;
};

/// Sequence layout: filler, key, value, filler, query, key, value. The last
/// value_len positions of the inputs' successor are the only targets.
NeedleBatch gen_needle_batch(const NeedleTask& task, std::int64_t n);

/// Rule-based oracle: finds the planted key in the haystack and reads the value after it.
std::vector<std::int64_t> extract_needle(const Sample& s, const NeedleTask& task);

struct NllBucket {
  std::int64_t start = 0;
  double mean_nll = 0.0;
  bool extrapolated = false;
};

/// Mean next-token NLL per bucket of positions over stream[0..n-1] -> stream[1..n].
/// Buckets starting at or beyond `train_len` are flagged (train_len <= 0 disables).
std::vector<NllBucket> positionwise_nll(const HybridModel& model, std::span<const std::int64_t> stream,
                                        std::int64_t bucket, std::int64_t train_len = 0);

struct TrainConfig {
  std::int64_t steps = 500;
  std::int64_t batch = 4;
  double peak_lr = 1e-3;
  double warmup_frac = 0.25;
  double cooldown_frac = 0.2;
  double clip_norm = 1.0;
  double weight_decay = 0.1;
  std::uint64_t seed = 0;
  /// Stop once batch token accuracy reaches this level on `stop_patience`
  /// consecutive steps; zero disables early stopping.
  double stop_accuracy = 0.0;
  std::int64_t stop_patience = 5;

  void validate() const;
  TrapezoidSchedule schedule() const;
};

struct TrainStep {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;
  double grad_norm = 0.0;
};

using BatchSource = std::function<std::vector<Sample>(std::int64_t step)>;

/// Mean loss over the batch, token accuracy, with gradients when a tape is live.
struct BatchLoss {
  Tensor loss;
  double accuracy = 0.0;
  std::vector<std::vector<std::int64_t>> loads;  // per MoE layer
};
BatchLoss batch_loss(const HybridModel& model, const std::vector<Sample>& batch);

/// Trains in place; throws NumericError with step, loss and lr on divergence.
std::vector<TrainStep> train(HybridModel& model, const BatchSource& source, const TrainConfig& cfg,
                             const std::function<void(const TrainStep&)>& on_step = {});

/// Fraction of scored targets predicted exactly by argmax.
double token_accuracy(const HybridModel& model, const std::vector<Sample>& samples);

void write_train_csv(std::ostream& os, const std::vector<TrainStep>& trace, const std::string& config_json);

/// Sample source for needle training with random depth and length in [min_len, max_len].
BatchSource needle_source(std::int64_t vocab, std::int64_t min_len, std::int64_t max_len, std::int64_t batch,
                          std::uint64_t seed);
/// Training mix for retrieval: sequences of length in [max_len/2, max_len]
/// holding 1..n_keys needles with distinct keys, followed by one query per
/// needle in random order. A single-needle draw has the evaluation layout.
Sample multi_needle_sample(std::int64_t vocab, std::int64_t len, std::int64_t n_needles, CounterRng& rng);
BatchSource niah_training_source(std::int64_t vocab, std::int64_t max_len, std::int64_t batch, std::uint64_t seed);
BatchSource copy_source(std::int64_t vocab, std::int64_t len, std::int64_t batch, std::uint64_t seed);
/// Random windows of `len + 1` tokens from a corpus.
BatchSource stream_source(std::vector<std::int64_t> corpus, std::int64_t len, std::int64_t batch, std::uint64_t seed);

struct NiahGrid {
  std::vector<double> depths;
  std::vector<std::int64_t> lengths;
  /// accuracy[length index][depth index]
  std::vector<std::vector<double>> accuracy;
};

/// Exact-match retrieval accuracy per (length, depth) cell. A trial counts
/// when greedy decoding after the query reproduces every value token.
NiahGrid niah_eval(const HybridModel& model, const std::vector<double>& depths, const std::vector<std::int64_t>& lengths,
                   std::int64_t trials, std::uint64_t seed);

/// Header row: "length" then one column per depth; one row per length.
void write_niah_csv(std::ostream& os, const NiahGrid& grid, const std::string& config_json);
NiahGrid read_niah_csv(std::istream& is);

/// Newline- or whitespace-separated integer ids.
std::vector<std::int64_t> read_token_ids(const std::string& path);
/// One token per byte.
std::vector<std::int64_t> read_token_bytes(const std::string& path);

}  // namespace hybridlab
