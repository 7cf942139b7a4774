#pragma once

#include <cstdint>
#include <vector>

#include "wasgd/rng.hpp"

namespace wasgd {

// A seeded permutation of one data chunk plus the score it has accumulated
// over the chunk's communications. Regenerating with the same seed yields
// the identical permutation.
struct SampleOrder {
  std::vector<uint32_t> permutation;
  uint64_t seed = 0;
  double score = 0.0;
};

// Per-chunk retained scores and seeds, one slot per chunk.
struct ScoreBoard {
  std::vector<double> scores;
  std::vector<uint64_t> seeds;

  explicit ScoreBoard(size_t n = 0) : scores(n, 0.0), seeds(n, 0) {}
};

// Standardized loss (h_i - mean) / stdev with the (p-1)-denominator stdev.
// All-equal losses (or p < 2) score 0: a tie neither retains nor penalizes
// an order.
double judge(const std::vector<double>& h, size_t worker);

// Retains the previous epoch's order when its accumulated score is <= -1,
// otherwise draws a fresh seed from rng and reshuffles.
SampleOrder order_gen(double total_score, uint64_t old_seed, size_t length, Rng& rng);

// Adds a communication score into chunk l's running total.
void accumulate_score(ScoreBoard& board, size_t chunk, double score);

// A permutation of [0, labels.size()) in which samples appear in runs of
// `delta` consecutive indices sharing one label. Within-class order and the
// class rotation are shuffled from rng; runs are then emitted round-robin
// across classes, so delta = 1 interleaves labels maximally and a delta
// covering a whole class keeps that class contiguous. A class whose size is
// not a multiple of delta ends with one shorter run.
std::vector<uint32_t> grouped_order(const std::vector<int>& labels, int delta, Rng& rng);

}  // namespace wasgd
