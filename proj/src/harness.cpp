#include "hybridlab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "hybridlab/csv.hpp"
#include "hybridlab/decode.hpp"
#include "hybridlab/moe.hpp"
#include "hybridlab/ops.hpp"
#include "hybridlab/rng.hpp"

namespace hybridlab {

Sample copy_sample(std::int64_t vocab, std::int64_t len, CounterRng& rng) {
  if (vocab < 3) throw ContractError("copy task needs vocab >= 3");
  if (len < 2 || len % 2 != 0) throw ContractError("copy task length must be even and >= 2");
  const std::int64_t c = len / 2;
  std::vector<std::int64_t> content(static_cast<std::size_t>(c));
  for (auto& t : content) t = 1 + rng.below(vocab - 1);
  std::vector<std::int64_t> seq = content;
  seq.push_back(kCopySeparator);
  seq.insert(seq.end(), content.begin(), content.end());
  Sample s;
  s.inputs.assign(seq.begin(), seq.begin() + len);
  s.targets.assign(static_cast<std::size_t>(len), -1);
  for (std::int64_t i = c; i < len; ++i) s.targets[i] = seq[i + 1];
  return s;
}

std::vector<Sample> copy_batch(std::int64_t vocab, std::int64_t len, std::int64_t n, std::uint64_t seed) {
  std::vector<Sample> out;
  const CounterRng root(seed);
  for (std::int64_t i = 0; i < n; ++i) {
    CounterRng r = root.fork(static_cast<std::uint64_t>(i));
    out.push_back(copy_sample(vocab, len, r));
  }
  return out;
}

std::int64_t NeedleTask::n_keys() const { return std::max<std::int64_t>(1, vocab_size / 8); }

void NeedleTask::validate() const {
  if (key_len < 1 || value_len < 1) throw ContractError("NeedleTask: key and value need at least one token");
  if (depth_fraction < 0.0 || depth_fraction > 1.0) throw ContractError("NeedleTask: depth_fraction must lie in [0, 1]");
  if (vocab_size - filler_begin() < 2) throw ContractError("NeedleTask: vocabulary too small");
  if (filler_len() < 0) {
    throw ContractError("NeedleTask: context " + std::to_string(context_len) + " too small for needle and query (needs " +
                        std::to_string(2 * (key_len + value_len) + 1) + ")");
  }
}

std::int64_t NeedleTask::needle_offset() const {
  return std::llround(depth_fraction * static_cast<double>(filler_len()));
}

NeedleBatch gen_needle_batch(const NeedleTask& task, std::int64_t n) {
  task.validate();
  if (n < 1) throw ContractError("gen_needle_batch: n must be >= 1");
  NeedleBatch b;
  const CounterRng root(task.seed);
  const std::int64_t lo = task.filler_begin();
  const std::int64_t off = task.needle_offset();
  for (std::int64_t i = 0; i < n; ++i) {
    CounterRng r = root.fork(static_cast<std::uint64_t>(i));
    std::vector<std::int64_t> key, value;
    for (std::int64_t j = 0; j < task.key_len; ++j) key.push_back(1 + r.below(task.n_keys()));
    for (std::int64_t j = 0; j < task.value_len; ++j) value.push_back(lo + r.below(task.vocab_size - lo));
    std::vector<std::int64_t> seq;
    for (std::int64_t j = 0; j < task.filler_len(); ++j) {
      if (j == off) {
        seq.insert(seq.end(), key.begin(), key.end());
        seq.insert(seq.end(), value.begin(), value.end());
      }
      seq.push_back(lo + r.below(task.vocab_size - lo));
    }
    if (off == task.filler_len()) {
      seq.insert(seq.end(), key.begin(), key.end());
      seq.insert(seq.end(), value.begin(), value.end());
    }
    seq.push_back(kQueryToken);
    seq.insert(seq.end(), key.begin(), key.end());
    seq.insert(seq.end(), value.begin(), value.end());
    Sample s;
    s.inputs.assign(seq.begin(), seq.end() - 1);
    s.targets.assign(s.inputs.size(), -1);
    const std::int64_t first = static_cast<std::int64_t>(seq.size()) - task.value_len;
    for (std::int64_t j = first; j < static_cast<std::int64_t>(seq.size()); ++j) s.targets[j - 1] = seq[j];
    b.samples.push_back(std::move(s));
    b.depths.push_back(task.depth_fraction);
    b.keys.push_back(std::move(key));
    b.values.push_back(std::move(value));
  }
  return b;
}

std::vector<std::int64_t> extract_needle(const Sample& s, const NeedleTask& task) {
  const auto& in = s.inputs;
  const auto query = std::find(in.begin(), in.end(), kQueryToken);
  if (query == in.end()) throw ContractError("extract_needle: no query marker");
  const std::vector<std::int64_t> key(query + 1, query + 1 + task.key_len);
  const auto hit = std::search(in.begin(), query, key.begin(), key.end());
  if (hit == query) throw ContractError("extract_needle: key not found in haystack");
  const auto v = hit + task.key_len;
  return {v, v + task.value_len};
}

std::vector<NllBucket> positionwise_nll(const HybridModel& model, std::span<const std::int64_t> stream,
                                        std::int64_t bucket, std::int64_t train_len) {
  if (bucket < 1) throw ContractError("positionwise_nll: bucket must be >= 1");
  const std::int64_t n = static_cast<std::int64_t>(stream.size()) - 1;
  if (n < bucket) throw ContractError("positionwise_nll: stream shorter than one bucket");
  const Tensor logits = model.forward(stream.first(static_cast<std::size_t>(n)));
  const std::int64_t v = model.cfg.vocab;
  const auto d = logits.data();
  std::vector<NllBucket> out;
  for (std::int64_t start = 0; start < n; start += bucket) {
    const std::int64_t end = std::min(n, start + bucket);
    double acc = 0.0;
    for (std::int64_t i = start; i < end; ++i) {
      const double* row = d.data() + i * v;
      const double mx = *std::max_element(row, row + v);
      double z = 0.0;
      for (std::int64_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
      acc += mx + std::log(z) - row[stream[static_cast<std::size_t>(i + 1)]];
    }
    out.push_back({start, acc / static_cast<double>(end - start), train_len > 0 && start >= train_len});
  }
  return out;
}

void TrainConfig::validate() const {
  if (steps < 1 || batch < 1) throw ContractError("TrainConfig: steps and batch must be positive");
  if (peak_lr < 0.0) throw ContractError("TrainConfig: negative learning rate");
  if (warmup_frac < 0.0 || cooldown_frac < 0.0 || warmup_frac + cooldown_frac > 1.0) {
    throw ContractError("TrainConfig: schedule fractions must be non-negative and sum to at most 1");
  }
  if (clip_norm <= 0.0) throw ContractError("TrainConfig: clip norm must be positive");
}

TrapezoidSchedule TrainConfig::schedule() const {
  return TrapezoidSchedule{peak_lr, steps, std::llround(warmup_frac * static_cast<double>(steps)),
                           std::llround(cooldown_frac * static_cast<double>(steps))};
}

BatchLoss batch_loss(const HybridModel& model, const std::vector<Sample>& batch) {
  if (batch.empty()) throw ContractError("batch_loss: empty batch");
  BatchLoss out;
  std::int64_t scored = 0, correct = 0;
  std::vector<Tensor> losses;
  for (const auto& s : batch) {
    std::vector<Routing> routings;
    const Tensor logits = model.forward(s.inputs, &routings);
    losses.push_back(cross_entropy(logits, s.targets));
    for (std::size_t li = 0; li < routings.size(); ++li) {
      if (out.loads.size() <= li) out.loads.emplace_back(routings[li].loads.size(), 0);
      for (std::size_t e = 0; e < routings[li].loads.size(); ++e) out.loads[li][e] += routings[li].loads[e];
    }
    for (std::size_t i = 0; i < s.targets.size(); ++i) {
      if (s.targets[i] < 0) continue;
      ++scored;
      correct += argmax_row(logits, static_cast<std::int64_t>(i)) == s.targets[i];
    }
  }
  Tensor total = losses[0];
  for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
  out.loss = scale(total, 1.0 / static_cast<double>(losses.size()));
  out.accuracy = scored ? static_cast<double>(correct) / static_cast<double>(scored) : 0.0;
  return out;
}

std::vector<TrainStep> train(HybridModel& model, const BatchSource& source, const TrainConfig& cfg,
                             const std::function<void(const TrainStep&)>& on_step) {
  cfg.validate();
  model.set_requires_grad(true);
  AdamW opt(model.parameters(), AdamWConfig{cfg.peak_lr, 0.9, 0.95, 1e-8, cfg.weight_decay, cfg.clip_norm});
  const TrapezoidSchedule sched = cfg.schedule();
  std::vector<TrainStep> trace;
  std::int64_t streak = 0;
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    const std::vector<Sample> batch = source(step);
    opt.zero_grad();
    TrainStep rec;
    rec.step = step;
    rec.lr = sched.at(step);
    try {
      GradTape tape;
      BatchLoss bl = batch_loss(model, batch);
      rec.loss = bl.loss.item();
      rec.accuracy = bl.accuracy;
      if (!std::isfinite(rec.loss)) {
        std::ostringstream msg;
        msg << "training diverged at step " << step << ": loss " << rec.loss << " at lr " << rec.lr;
        throw NumericError(msg.str());
      }
      tape.backward(bl.loss);
      std::size_t mi = 0;
      for (auto& layer : model.layers) {
        if (!layer.moe) continue;
        if (mi < bl.loads.size()) layer.router = update_balance(layer.router, bl.loads[mi], layer.cfg.moe);
        ++mi;
      }
    } catch (const NumericError& e) {
      const std::string what = e.what();
      if (what.rfind("training diverged", 0) == 0) throw;
      throw NumericError("training diverged at step " + std::to_string(step) + " (lr " + std::to_string(rec.lr) +
                         "): " + what);
    }
    rec.grad_norm = opt.step(rec.lr);
    trace.push_back(rec);
    if (on_step) on_step(rec);
    if (cfg.stop_accuracy > 0.0) {
      streak = rec.accuracy >= cfg.stop_accuracy ? streak + 1 : 0;
      if (streak >= cfg.stop_patience) break;
    }
  }
  return trace;
}

double token_accuracy(const HybridModel& model, const std::vector<Sample>& samples) {
  std::int64_t scored = 0, correct = 0;
  for (const auto& s : samples) {
    const Tensor logits = model.forward(s.inputs);
    for (std::size_t i = 0; i < s.targets.size(); ++i) {
      if (s.targets[i] < 0) continue;
      ++scored;
      correct += argmax_row(logits, static_cast<std::int64_t>(i)) == s.targets[i];
    }
  }
  return scored ? static_cast<double>(correct) / static_cast<double>(scored) : 0.0;
}

void write_train_csv(std::ostream& os, const std::vector<TrainStep>& trace, const std::string& config_json) {
  write_csv_preamble(os, config_json);
  write_csv_row(os, {"step", "lr", "loss", "accuracy", "grad_norm"});
  for (const auto& r : trace) {
    write_csv_row(os, {std::to_string(r.step), fmt_full(r.lr), fmt_full(r.loss), fmt_full(r.accuracy), fmt_full(r.grad_norm)});
  }
}

BatchSource needle_source(std::int64_t vocab, std::int64_t min_len, std::int64_t max_len, std::int64_t batch,
                          std::uint64_t seed) {
  if (min_len > max_len) throw ContractError("needle_source: min_len > max_len");
  return [=](std::int64_t step) {
    CounterRng r = CounterRng(seed).fork("needle").fork(static_cast<std::uint64_t>(step));
    std::vector<Sample> out;
    for (std::int64_t i = 0; i < batch; ++i) {
      NeedleTask t;
      t.vocab_size = vocab;
      t.context_len = min_len + r.below(max_len - min_len + 1);
      t.depth_fraction = r.uniform();
      t.seed = r.next_u64();
      out.push_back(std::move(gen_needle_batch(t, 1).samples[0]));
    }
    return out;
  };
}

Sample multi_needle_sample(std::int64_t vocab, std::int64_t len, std::int64_t n_needles, CounterRng& rng) {
  NeedleTask shape;
  shape.vocab_size = vocab;
  shape.context_len = len;
  const std::int64_t per = 2 * (shape.key_len + shape.value_len) + 1;
  const std::int64_t filler = len - per * n_needles;
  if (n_needles < 1 || n_needles > shape.n_keys()) throw ContractError("multi_needle_sample: bad needle count");
  if (filler < 0) throw ContractError("multi_needle_sample: context too small");
  const std::int64_t lo = shape.filler_begin();
  std::vector<std::int64_t> keys(static_cast<std::size_t>(shape.n_keys()));
  for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = 1 + static_cast<std::int64_t>(i);
  for (std::size_t i = keys.size(); i > 1; --i) std::swap(keys[i - 1], keys[static_cast<std::size_t>(rng.below(static_cast<std::int64_t>(i)))]);
  keys.resize(static_cast<std::size_t>(n_needles));
  std::vector<std::vector<std::int64_t>> values(keys.size());
  for (auto& v : values) {
    for (std::int64_t j = 0; j < shape.value_len; ++j) v.push_back(lo + rng.below(vocab - lo));
  }
  std::vector<std::int64_t> offsets;
  for (std::int64_t i = 0; i < n_needles; ++i) offsets.push_back(rng.below(filler + 1));
  std::sort(offsets.begin(), offsets.end());
  std::vector<std::int64_t> seq;
  std::size_t next = 0;
  for (std::int64_t j = 0; j <= filler; ++j) {
    while (next < offsets.size() && offsets[next] == j) {
      seq.push_back(keys[next]);
      seq.insert(seq.end(), values[next].begin(), values[next].end());
      ++next;
    }
    if (j < filler) seq.push_back(lo + rng.below(vocab - lo));
  }
  Sample s;
  std::vector<std::size_t> order(keys.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(static_cast<std::int64_t>(i)))]);
  std::vector<std::int64_t> scored;
  for (std::size_t q : order) {
    seq.push_back(kQueryToken);
    seq.push_back(keys[q]);
    for (std::int64_t v : values[q]) {
      scored.push_back(static_cast<std::int64_t>(seq.size()));
      seq.push_back(v);
    }
  }
  s.inputs.assign(seq.begin(), seq.end() - 1);
  s.targets.assign(s.inputs.size(), -1);
  for (std::int64_t pos : scored) s.targets[pos - 1] = seq[pos];
  return s;
}

BatchSource niah_training_source(std::int64_t vocab, std::int64_t max_len, std::int64_t batch, std::uint64_t seed) {
  NeedleTask probe;
  probe.vocab_size = vocab;
  const std::int64_t per = 2 * (probe.key_len + probe.value_len) + 1;
  const std::int64_t min_len = std::max<std::int64_t>(max_len / 2, per);
  return [=](std::int64_t step) {
    CounterRng r = CounterRng(seed).fork("niah-train").fork(static_cast<std::uint64_t>(step));
    std::vector<Sample> out;
    for (std::int64_t i = 0; i < batch; ++i) {
      const std::int64_t len = min_len + r.below(max_len - min_len + 1);
      const std::int64_t most = std::min(probe.n_keys(), len / per);
      out.push_back(multi_needle_sample(vocab, len, 1 + r.below(most), r));
    }
    return out;
  };
}

BatchSource copy_source(std::int64_t vocab, std::int64_t len, std::int64_t batch, std::uint64_t seed) {
  return [=](std::int64_t step) {
    return copy_batch(vocab, len, batch, CounterRng(seed).fork("copy").fork(static_cast<std::uint64_t>(step)).next_u64());
  };
}

BatchSource stream_source(std::vector<std::int64_t> corpus, std::int64_t len, std::int64_t batch, std::uint64_t seed) {
  if (static_cast<std::int64_t>(corpus.size()) < len + 1) {
    throw ContractError("stream_source: corpus has " + std::to_string(corpus.size()) + " tokens, need " +
                        std::to_string(len + 1));
  }
  return [corpus = std::move(corpus), len, batch, seed](std::int64_t step) {
    CounterRng r = CounterRng(seed).fork("stream").fork(static_cast<std::uint64_t>(step));
    const std::int64_t span = static_cast<std::int64_t>(corpus.size()) - len;
    std::vector<Sample> out;
    for (std::int64_t i = 0; i < batch; ++i) {
      const auto at = corpus.begin() + r.below(span);
      out.push_back(Sample{{at, at + len}, {at + 1, at + len + 1}});
    }
    return out;
  };
}

NiahGrid niah_eval(const HybridModel& model, const std::vector<double>& depths, const std::vector<std::int64_t>& lengths,
                   std::int64_t trials, std::uint64_t seed) {
  if (trials < 1) throw ContractError("niah_eval: trials must be >= 1");
  NiahGrid g{depths, lengths, {}};
  const CounterRng root(seed);
  for (std::size_t li = 0; li < lengths.size(); ++li) {
    std::vector<double> row;
    for (std::size_t di = 0; di < depths.size(); ++di) {
      NeedleTask t;
      t.vocab_size = model.cfg.vocab;
      t.context_len = lengths[li];
      t.depth_fraction = depths[di];
      t.seed = root.fork(static_cast<std::uint64_t>(li)).fork(static_cast<std::uint64_t>(di)).next_u64();
      const NeedleBatch b = gen_needle_batch(t, trials);
      std::int64_t hits = 0;
      for (std::int64_t i = 0; i < trials; ++i) {
        const Sample& s = b.samples[i];
        const std::span<const std::int64_t> prompt(s.inputs.data(), s.inputs.size() - (t.value_len - 1));
        hits += greedy_generate(model, prompt, t.value_len) == b.values[i];
      }
      row.push_back(static_cast<double>(hits) / static_cast<double>(trials));
    }
    g.accuracy.push_back(std::move(row));
  }
  return g;
}

void write_niah_csv(std::ostream& os, const NiahGrid& grid, const std::string& config_json) {
  write_csv_preamble(os, config_json);
  std::vector<std::string> header{"length"};
  for (double d : grid.depths) header.push_back(fmt_full(d));
  write_csv_row(os, header);
  for (std::size_t li = 0; li < grid.lengths.size(); ++li) {
    std::vector<std::string> row{std::to_string(grid.lengths[li])};
    for (double a : grid.accuracy[li]) row.push_back(fmt_full(a));
    write_csv_row(os, row);
  }
}

NiahGrid read_niah_csv(std::istream& is) {
  const CsvTable t = read_csv(is);
  if (t.header.empty() || t.header[0] != "length") throw std::runtime_error("niah csv: header must start with 'length'");
  NiahGrid g;
  for (std::size_t i = 1; i < t.header.size(); ++i) g.depths.push_back(std::stod(t.header[i]));
  for (const auto& r : t.rows) {
    if (r.size() != t.header.size()) throw std::runtime_error("niah csv: ragged row");
    g.lengths.push_back(std::stoll(r[0]));
    std::vector<double> acc;
    for (std::size_t i = 1; i < r.size(); ++i) acc.push_back(std::stod(r[i]));
    g.accuracy.push_back(std::move(acc));
  }
  return g;
}

std::vector<std::int64_t> read_token_ids(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read token file " + path);
  std::vector<std::int64_t> out;
  std::string tok;
  while (f >> tok) {
    std::size_t used = 0;
    const long long v = std::stoll(tok, &used);
    if (used != tok.size() || v < 0) throw std::runtime_error("token file " + path + ": bad id '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<std::int64_t> read_token_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read byte file " + path);
  std::vector<std::int64_t> out;
  for (auto it = std::istreambuf_iterator<char>(f); it != std::istreambuf_iterator<char>(); ++it) {
    out.push_back(static_cast<unsigned char>(*it));
  }
  return out;
}

}  // namespace hybridlab
