#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "cbfuse/volume.hpp"

namespace cbfuse {

// mask = (p >= tau); the threshold is inclusive
std::vector<uint8_t> binarize(const Volume& probs, double tau = 0.5);
std::vector<uint8_t> binarize(const std::vector<float>& probs, double tau = 0.5);

// 2|P^G| / (|P|+|G|); two empty masks count as a perfect match (1.0)
double dice(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt);

// per-volume (liver, tumor) Dice pairs for one evaluation run
struct DiceReport {
  std::vector<std::array<double, 2>> per_volume;

  std::size_t n_volumes() const { return per_volume.size(); }
  double mean(int cls) const;  // throws EmptyInput on an empty report
  double mean_liver() const { return mean(0); }
  double mean_tumor() const { return mean(1); }
};

struct AggregateDice {
  double liver = 0.0, tumor = 0.0;
  std::size_t n_reports = 0;
};

// mean over volumes within each report, then mean over reports; equals the
// grand mean when all reports hold the same number of volumes
AggregateDice aggregate(const std::vector<DiceReport>& reports);

}  // namespace cbfuse
