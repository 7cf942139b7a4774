#include "wasgd/ordering.hpp"

#include <algorithm>
#include <cmath>

#include "wasgd/errors.hpp"

namespace wasgd {

double judge(const std::vector<double>& h, size_t worker) {
  if (worker >= h.size()) throw ConfigError("judge: worker index out of range");
  size_t p = h.size();
  if (p < 2) return 0.0;
  double mean = 0.0;
  for (double v : h) mean += v;
  mean /= static_cast<double>(p);
  double ss = 0.0;
  for (double v : h) ss += (v - mean) * (v - mean);
  double stdev = std::sqrt(ss / static_cast<double>(p - 1));
  if (stdev == 0.0) return 0.0;
  return (h[worker] - mean) / stdev;
}

SampleOrder order_gen(double total_score, uint64_t old_seed, size_t length, Rng& rng) {
  if (length < 1) throw ConfigError("order_gen: length must be >= 1");
  SampleOrder order;
  order.seed = total_score <= -1.0 ? old_seed : rng.next_u64();
  order.permutation = seeded_permutation(order.seed, length);
  order.score = 0.0;
  return order;
}

void accumulate_score(ScoreBoard& board, size_t chunk, double score) {
  if (chunk >= board.scores.size()) throw ConfigError("accumulate_score: chunk out of range");
  board.scores[chunk] += score;
}

std::vector<uint32_t> grouped_order(const std::vector<int>& labels, int delta, Rng& rng) {
  if (delta < 1) throw ConfigError("grouped_order: delta must be >= 1");
  int num_classes = 0;
  for (int l : labels) {
    if (l < 0) throw ConfigError("grouped_order: negative label");
    num_classes = std::max(num_classes, l + 1);
  }
  std::vector<std::vector<uint32_t>> by_class(static_cast<size_t>(num_classes));
  for (size_t i = 0; i < labels.size(); ++i) {
    by_class[static_cast<size_t>(labels[i])].push_back(static_cast<uint32_t>(i));
  }
  for (auto& cls : by_class) {
    for (size_t i = cls.size(); i > 1; --i) {
      std::swap(cls[i - 1], cls[rng.below(i)]);
    }
  }
  // Fixed class rotation for the whole emission; reshuffling it per cycle
  // could place two runs of one label back to back.
  std::vector<uint32_t> rotation(static_cast<size_t>(num_classes));
  for (size_t k = 0; k < rotation.size(); ++k) rotation[k] = static_cast<uint32_t>(k);
  for (size_t i = rotation.size(); i > 1; --i) {
    std::swap(rotation[i - 1], rotation[rng.below(i)]);
  }
  std::vector<size_t> cursor(static_cast<size_t>(num_classes), 0);
  std::vector<uint32_t> out;
  out.reserve(labels.size());
  while (out.size() < labels.size()) {
    bool emitted = false;
    for (uint32_t k : rotation) {
      auto& cls = by_class[k];
      size_t& pos = cursor[k];
      if (pos >= cls.size()) continue;
      size_t take = std::min(static_cast<size_t>(delta), cls.size() - pos);
      for (size_t j = 0; j < take; ++j) out.push_back(cls[pos + j]);
      pos += take;
      emitted = true;
    }
    if (!emitted) break;
  }
  return out;
}

}  // namespace wasgd
