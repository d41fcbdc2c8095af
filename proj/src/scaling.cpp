#include "pangaea/scaling.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "pangaea/error.hpp"
#include "pangaea/metrics.hpp"
#include "pangaea/tokenizer.hpp"

namespace pangaea {

double geometric_cdf(double p, std::size_t k) {
  require(p >= 0.0 && p <= 1.0, ErrorKind::Domain, "p must lie in [0,1]");
  return 1.0 - std::pow(1.0 - p, static_cast<double>(k));
}

double predicted_y(double p, double c, double x) {
  require(p >= 0.0 && p <= 1.0, ErrorKind::Domain, "p must lie in [0,1]");
  return 1.0 - std::pow(1.0 - p, x) + c;
}

namespace {

double sse(const std::vector<ScalingPoint>& pts, double p, double c) {
  double s = 0.0;
  for (const auto& q : pts) {
    const double r = q.y - predicted_y(p, c, q.x);
    s += r * r;
  }
  return s;
}

double best_c(const std::vector<ScalingPoint>& pts, double p) {
  double s = 0.0;
  for (const auto& q : pts) s += q.y - (1.0 - std::pow(1.0 - p, q.x));
  return s / static_cast<double>(pts.size());
}

}  // namespace

ScalingFit fit_scaling(const std::vector<ScalingPoint>& points) {
  require(points.size() >= 2, ErrorKind::Fit, "fit needs at least two points");
  std::set<double> xs;
  for (const auto& q : points) {
    require(std::isfinite(q.x) && std::isfinite(q.y), ErrorKind::Fit, "points must be finite");
    require(q.x >= 0.0, ErrorKind::Fit, "x must be non-negative");
    xs.insert(q.x);
  }
  require(xs.size() >= 2, ErrorKind::Fit, "fit needs at least two distinct x values");

  constexpr int kGrid = 1000;
  double p = 0.0, c = best_c(points, 0.0), err = sse(points, p, c);
  for (int i = 1; i <= kGrid; ++i) {
    const double gp = static_cast<double>(i) / kGrid;
    const double gc = best_c(points, gp);
    const double ge = sse(points, gp, gc);
    if (ge < err) {
      p = gp;
      c = gc;
      err = ge;
    }
  }

  ScalingFit fit;
  for (; fit.iterations < 200; ++fit.iterations) {
    // Normal equations of the residual Jacobian [dr/dp, dr/dc] = [-x(1-p)^(x-1), -1].
    double a11 = 0, a12 = 0, a22 = 0, b1 = 0, b2 = 0;
    for (const auto& q : points) {
      const double r = q.y - predicted_y(p, c, q.x);
      const double jp = q.x == 0.0 ? 0.0 : -q.x * std::pow(1.0 - p, q.x - 1.0);
      const double jc = -1.0;
      a11 += jp * jp;
      a12 += jp * jc;
      a22 += jc * jc;
      b1 -= jp * r;
      b2 -= jc * r;
    }
    const double det = a11 * a22 - a12 * a12;
    double dp, dc;
    if (std::abs(det) <= 1e-300 || !std::isfinite(det)) {
      dp = 0.0;
      dc = b2 / a22;
    } else {
      dp = (b1 * a22 - a12 * b2) / det;
      dc = (a11 * b2 - a12 * b1) / det;
    }
    bool moved = false;
    for (double damp = 1.0; damp > 1e-12; damp *= 0.5) {
      const double np = std::clamp(p + damp * dp, 0.0, 1.0);
      const double nc = c + damp * dc;
      const double ne = sse(points, np, nc);
      if (ne < err) {
        moved = np != p || nc != c;
        p = np;
        c = nc;
        err = ne;
        break;
      }
    }
    if (!moved) break;
  }
  fit.p = p;
  fit.c = c;
  fit.residual_sse = err;
  fit.points = points;
  fit.boundary = p <= 1e-9 || p >= 1.0 - 1e-9;
  return fit;
}

std::size_t pretrain_modality_index(const std::string& name) {
  for (std::size_t i = 0; i < kPretrainModalities; ++i)
    if (name == kPretrainModalityNames[i]) return i;
  throw Error(ErrorKind::Config,
              "unknown pre-training modality '" + name +
                  "' (expected text, table, timeseries, graph or vision)");
}

std::uint32_t subset_mask(const std::vector<std::string>& names) {
  std::uint32_t mask = 0;
  for (const auto& n : names) {
    const auto bit = 1u << pretrain_modality_index(n);
    require(!(mask & bit), ErrorKind::Contract, "modality '" + n + "' listed twice");
    mask |= bit;
  }
  return mask;
}

CardinalityCurve aggregate_by_cardinality(const std::vector<CombinationResult>& results) {
  require(!results.empty(), ErrorKind::Contract, "no combination results");
  std::vector<const CombinationResult*> sorted;
  std::set<std::uint32_t> seen;
  for (const auto& r : results) {
    require(r.subset < (1u << kPretrainModalities), ErrorKind::Contract,
            "subset mask has bits beyond the five pre-training modalities");
    require(seen.insert(r.subset).second, ErrorKind::Contract,
            "subset " + std::to_string(r.subset) + " appears twice");
    sorted.push_back(&r);
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const auto* a, const auto* b) { return a->subset < b->subset; });

  // task -> (subset, score) in subset order
  std::map<std::string, std::vector<std::pair<std::uint32_t, double>>> per_task;
  for (const auto* r : sorted)
    for (const auto& [task, score] : r->scores) {
      require(std::isfinite(score), ErrorKind::Contract, "score for '" + task + "' is not finite");
      per_task[task].push_back({r->subset, score});
    }
  require(!per_task.empty(), ErrorKind::Contract, "combination results carry no scores");

  // cardinality -> per-task means
  std::map<std::size_t, std::vector<double>> by_card;
  for (const auto& [task, entries] : per_task) {
    std::vector<double> raw;
    for (const auto& e : entries) raw.push_back(e.second);
    const auto norm = minmax_norm(raw);
    std::map<std::size_t, std::pair<double, std::size_t>> acc;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      auto& slot = acc[static_cast<std::size_t>(std::popcount(entries[i].first))];
      slot.first += norm[i];
      ++slot.second;
    }
    for (const auto& [card, s] : acc) by_card[card].push_back(s.first / static_cast<double>(s.second));
  }

  CardinalityCurve curve;
  for (std::size_t x = 0; x <= kPretrainModalities; ++x) {
    auto it = by_card.find(x);
    if (it == by_card.end()) {
      curve.gaps.push_back(x);
      continue;
    }
    double s = 0.0;
    for (double v : it->second) s += v;
    curve.points.push_back({static_cast<double>(x), s / static_cast<double>(it->second.size())});
  }
  return curve;
}

AffinityMatrix attention_affinity(const std::vector<AttentionMap>& maps,
                                  const std::vector<int>& segments,
                                  const AffinityOptions& options) {
  require(!segments.empty(), ErrorKind::Contract, "segment labels are empty");
  for (int s : segments)
    require(s == kNoSegment || (s >= 0 && s < static_cast<int>(kPretrainModalities)),
            ErrorKind::Contract, "segment label out of range");
  const std::size_t t = segments.size();
  const std::set<std::size_t> layers(options.layers.begin(), options.layers.end());
  const std::set<std::size_t> heads(options.heads.begin(), options.heads.end());

  std::array<std::array<double, kPretrainModalities>, kPretrainModalities> sum{};
  std::array<std::array<std::size_t, kPretrainModalities>, kPretrainModalities> count{};
  std::size_t used = 0;
  for (const auto& m : maps) {
    if (m.sequence != options.sequence) continue;
    if (!layers.empty() && !layers.count(m.layer)) continue;
    require(m.tokens == t, ErrorKind::Contract,
            "attention map has " + std::to_string(m.tokens) + " tokens but " +
                std::to_string(t) + " segment labels were given");
    for (std::size_t h = 0; h < m.heads; ++h) {
      if (!heads.empty() && !heads.count(h)) continue;
      ++used;
      for (std::size_t i = 0; i < t; ++i) {
        if (segments[i] == kNoSegment) continue;
        for (std::size_t j = 0; j < t; ++j) {
          if (segments[j] == kNoSegment) continue;
          sum[segments[i]][segments[j]] += m.at(h, i, j);
          ++count[segments[i]][segments[j]];
        }
      }
    }
  }
  require(used > 0, ErrorKind::Contract, "no attention map matches the selected layers and heads");

  AffinityMatrix out;
  for (int s : segments)
    if (s != kNoSegment) out.present[s] = true;
  for (std::size_t a = 0; a < kPretrainModalities; ++a)
    for (std::size_t b = 0; b < kPretrainModalities; ++b)
      out.values[a][b] = count[a][b] ? sum[a][b] / static_cast<double>(count[a][b])
                                     : std::numeric_limits<double>::quiet_NaN();
  return out;
}

MixedSequence mixed_sequence(const Model& model,
                             const std::vector<std::pair<int, TripletSet>>& parts) {
  require(!parts.empty(), ErrorKind::Contract, "mixed sequence needs at least one part");
  MixedSequence out;
  std::vector<Tensor> rows;
  out.seq.positions.push_back(0);
  out.segments.push_back(kNoSegment);
  std::size_t next = 1;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& [label, set] = parts[k];
    require(label >= 0 && label < static_cast<int>(kPretrainModalities), ErrorKind::Contract,
            "segment label out of range");
    auto seq = model.tokenize(set);
    rows.push_back(k == 0 ? seq.tokens : slice_rows(seq.tokens, 1, seq.length()));
    for (std::size_t i = 1; i < seq.length(); ++i) {
      out.seq.positions.push_back(next++);
      out.segments.push_back(label);
    }
  }
  out.seq.tokens = rows.size() == 1 ? rows.front() : concat_rows(rows);
  return out;
}

}  // namespace pangaea
