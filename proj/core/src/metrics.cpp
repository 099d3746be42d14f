#include "cbfuse/metrics.hpp"

#include "cbfuse/errors.hpp"

namespace cbfuse {

std::vector<uint8_t> binarize(const std::vector<float>& probs, double tau) {
  std::vector<uint8_t> mask(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i)
    mask[i] = static_cast<double>(probs[i]) >= tau ? 1 : 0;
  return mask;
}

std::vector<uint8_t> binarize(const Volume& probs, double tau) { return binarize(probs.data, tau); }

double dice(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt) {
  if (pred.size() != gt.size()) throw ShapeMismatch("dice mask sizes differ");
  std::size_t np = 0, ng = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    bool p = pred[i] != 0, g = gt[i] != 0;
    np += p;
    ng += g;
    both += p && g;
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(np + ng);
}

double DiceReport::mean(int cls) const {
  if (per_volume.empty()) throw EmptyInput("mean of an empty report");
  double acc = 0.0;
  for (const auto& d : per_volume) acc += d[cls];
  return acc / static_cast<double>(per_volume.size());
}

AggregateDice aggregate(const std::vector<DiceReport>& reports) {
  if (reports.empty()) throw EmptyInput("aggregate of zero reports");
  AggregateDice out;
  for (const auto& r : reports) {
    out.liver += r.mean(0);
    out.tumor += r.mean(1);
  }
  out.liver /= static_cast<double>(reports.size());
  out.tumor /= static_cast<double>(reports.size());
  out.n_reports = reports.size();
  return out;
}

}  // namespace cbfuse
