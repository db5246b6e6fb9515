// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dirnet/flops.hpp"
#include "dirnet/gating.hpp"
#include "dirnet/inference.hpp"
#include "dirnet/json_util.hpp"
#include "dirnet/training.hpp"

namespace dirnet {

// ---------------------------------------------------------------------------
// Keypoint metrics
// ---------------------------------------------------------------------------

/// Fraction of errors strictly below tau.
inline double pck(std::span<const double> errors, double tau) {
  if (errors.empty()) throw std::invalid_argument("pck: empty error set");
  if (tau < 0) throw std::invalid_argument("pck: negative threshold");
  std::size_t hit = 0;
  for (double e : errors) {
    if (e < 0 || !std::isfinite(e)) throw std::invalid_argument("pck: errors must be finite and non-negative");
    hit += e < tau;
  }
  return static_cast<double>(hit) / static_cast<double>(errors.size());
}

/// PCK evaluated at many thresholds; `sorted` must be ascending.
inline double pck_sorted(const std::vector<double>& sorted, double tau) {
  auto it = std::lower_bound(sorted.begin(), sorted.end(), tau);
  return static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size());
}

struct PckCurve {
  std::vector<double> thresholds;
  std::vector<double> pck;
};

inline std::vector<double> linspace(double a, double b, std::size_t k) {
  std::vector<double> t(k);
  for (std::size_t i = 0; i < k; ++i) t[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(k - 1);
  return t;
}

inline PckCurve pck_curve(std::span<const double> errors, double a, double b, std::size_t k = 100) {
  if (errors.empty()) throw std::invalid_argument("pck_curve: empty error set");
  if (!(b > a) || a < 0) throw std::invalid_argument("pck_curve: need b > a >= 0");
  if (k < 2) throw std::invalid_argument("pck_curve: need at least two thresholds");
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  PckCurve c{linspace(a, b, k), {}};
  for (double t : c.thresholds) c.pck.push_back(pck_sorted(sorted, t));
  return c;
}

/// Trapezoid area under a curve normalised by the abscissa span.
inline double trapezoid_normalized(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("trapezoid: need matching curves of >= 2 points");
  double area = 0;
  for (std::size_t i = 1; i < x.size(); ++i) area += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
  return area / (x.back() - x.front());
}

inline double auc(std::span<const double> errors, double a, double b, std::size_t k = 100) {
  auto c = pck_curve(errors, a, b, k);
  return trapezoid_normalized(c.thresholds, c.pck);
}

struct AucRanges {
  double a2d = 0, b2d = 4.0;  // px; 0.5 * H / 8 at H = 64
  double a3d = 0, b3d = 0.5;  // model units
  std::size_t k = 100;

  static AucRanges for_image(int h) {
    AucRanges r;
    r.b2d = 0.5 * h / 8.0;
    return r;
  }
};

/// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal series of >= 2");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> o(v.size());
    std::iota(o.begin(), o.end(), std::size_t{0});
    std::stable_sort(o.begin(), o.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < o.size();) {
      std::size_t j = i;
      while (j + 1 < o.size() && v[o[j + 1]] == v[o[i]]) ++j;
      double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[o[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n, my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Exit policies over cached predictions
// ---------------------------------------------------------------------------

enum class GateKind { full, threshold, learned };

inline const char* to_string(GateKind k) {
  switch (k) {
    case GateKind::full: return "full";
    case GateKind::threshold: return "threshold";
    case GateKind::learned: return "learned";
  }
  return "?";
}

inline GateKind gate_kind_from_string(const std::string& s) {
  if (s == "full") return GateKind::full;
  if (s == "threshold") return GateKind::threshold;
  if (s == "learned") return GateKind::learned;
  throw ConfigError("gate: unknown value '" + s + "' (full, threshold, learned)");
}

struct GateSpec {
  GateKind kind = GateKind::full;
  double tau_var = 0.2;   // px^2, compared with the mean 2D variance
  double tau_gate = 1.0;
  GateMode mode = GateMode::sample;
  std::uint64_t seed = 13;
};

inline json to_json(const GateSpec& g) {
  return json{{"kind", to_string(g.kind)},
              {"tau_var", g.tau_var},
              {"tau_gate", g.tau_gate},
              {"mode", g.mode == GateMode::sample ? "sample" : "argmax"},
              {"seed", g.seed}};
}

/// Exit loop per cached sample. Learned-gate sampling uses a generator seeded
/// from (seed, dataset index), so results do not depend on evaluation order.
inline std::vector<int> exit_loops(const PredictionCache& cache, const GateSpec& g,
                                   const GatePolicy<float>* policy = nullptr) {
  const int l_max = cache.l_stop;
  std::vector<int> out(cache.size(), l_max);
  if (g.kind == GateKind::full) return out;
  if (g.kind == GateKind::threshold) {
    for (std::size_t i = 0; i < cache.size(); ++i)
      for (int l = 0; l <= l_max; ++l)
        if (threshold_gate(cache.loops[i][l].mean_var2d, g.tau_var, l, l_max) == GateAction::exit) {
          out[i] = l;
          break;
        }
    return out;
  }
  if (!policy || !policy->defined()) throw std::invalid_argument("learned gate requested but the model has no gate");
  if (!(g.tau_gate > 0)) throw ConfigError("tau_gate must be positive");
  GatePolicy<float> p = *policy;
  p.tau = g.tau_gate;
  for (std::size_t i = 0; i < cache.size(); ++i) {
    Rng rng(mix_seed(g.seed, cache.indices[i]));
    out[i] = exit_loop(rollout(cache.loops[i], p, rng, g.mode));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EvalReport {
  std::vector<double> err2d_per_loop, err3d_per_loop;
  std::vector<double> auc2d_per_loop, auc3d_per_loop;
  double err2d_exit = 0, err3d_exit = 0;
  double auc2d = 0, auc3d = 0;
  PckCurve pck2d, pck3d;
  double avg_loops = 0;
  std::vector<int> exit_histogram;
  std::vector<double> gflops_per_exit;  // cumulative cost when exiting at loop l
  double avg_gflops = 0;
  double per_loop_gflops = 0;
  std::vector<int> exits;
  AucRanges ranges;
  GateSpec gate;
};

namespace detail {

inline void gather_errors(const LoopRecord& r, std::vector<double>& e2, std::vector<double>& e3) {
  e2.insert(e2.end(), r.joint_err2d.begin(), r.joint_err2d.end());
  e3.insert(e3.end(), r.joint_err3d.begin(), r.joint_err3d.end());
}

}  // namespace detail

inline EvalReport evaluate(const PredictionCache& cache, const FlopsTable& flops, const GateSpec& gate,
                           const GatePolicy<float>* policy = nullptr, AucRanges ranges = {}) {
  if (cache.size() == 0) throw std::invalid_argument("evaluate: no samples");
  EvalReport r;
  r.ranges = ranges;
  r.gate = gate;
  const std::size_t loops = static_cast<std::size_t>(cache.l_stop) + 1;
  const double n = static_cast<double>(cache.size());
  for (std::size_t l = 0; l < loops; ++l) {
    std::vector<double> e2, e3;
    double s2 = 0, s3 = 0;
    for (const auto& smp : cache.loops) {
      detail::gather_errors(smp[l], e2, e3);
      s2 += smp[l].err2d;
      s3 += smp[l].err3d;
    }
    r.err2d_per_loop.push_back(s2 / n);
    r.err3d_per_loop.push_back(s3 / n);
    r.auc2d_per_loop.push_back(auc(e2, ranges.a2d, ranges.b2d, ranges.k));
    r.auc3d_per_loop.push_back(auc(e3, ranges.a3d, ranges.b3d, ranges.k));
  }
  r.exits = exit_loops(cache, gate, policy);
  r.exit_histogram.assign(loops, 0);
  std::vector<double> e2, e3;
  double s2 = 0, s3 = 0, sl = 0;
  for (std::size_t i = 0; i < cache.size(); ++i) {
    const auto& rec = cache.loops[i][static_cast<std::size_t>(r.exits[i])];
    detail::gather_errors(rec, e2, e3);
    s2 += rec.err2d;
    s3 += rec.err3d;
    sl += r.exits[i];
    ++r.exit_histogram[static_cast<std::size_t>(r.exits[i])];
  }
  r.err2d_exit = s2 / n;
  r.err3d_exit = s3 / n;
  r.avg_loops = sl / n;
  r.pck2d = pck_curve(e2, ranges.a2d, ranges.b2d, ranges.k);
  r.pck3d = pck_curve(e3, ranges.a3d, ranges.b3d, ranges.k);
  r.auc2d = trapezoid_normalized(r.pck2d.thresholds, r.pck2d.pck);
  r.auc3d = trapezoid_normalized(r.pck3d.thresholds, r.pck3d.pck);
  for (std::size_t l = 0; l < loops; ++l) r.gflops_per_exit.push_back(static_cast<double>(flops.cumulative.at(l)) / 1e9);
  r.per_loop_gflops = static_cast<double>(flops.per_loop) / 1e9;
  r.avg_gflops = flops.average(r.avg_loops) / 1e9;
  return r;
}

inline json to_json(const EvalReport& r) {
  return json{{"per_loop",
               {{"err2d", r.err2d_per_loop},
                {"err3d", r.err3d_per_loop},
                {"auc2d", r.auc2d_per_loop},
                {"auc3d", r.auc3d_per_loop}}},
              {"exit",
               {{"err2d", r.err2d_exit},
                {"err3d", r.err3d_exit},
                {"auc2d", r.auc2d},
                {"auc3d", r.auc3d},
                {"avg_loops", r.avg_loops},
                {"histogram", r.exit_histogram}}},
              {"pck2d", {{"thresholds", r.pck2d.thresholds}, {"pck", r.pck2d.pck}}},
              {"pck3d", {{"thresholds", r.pck3d.thresholds}, {"pck", r.pck3d.pck}}},
              {"auc_ranges", {{"2d", {r.ranges.a2d, r.ranges.b2d}}, {"3d", {r.ranges.a3d, r.ranges.b3d}}, {"k", r.ranges.k}}},
              {"gflops", {{"per_exit", r.gflops_per_exit}, {"per_loop", r.per_loop_gflops}, {"average", r.avg_gflops}}},
              {"gate", to_json(r.gate)}};
}

enum class SweepKnob { tau_var, tau_gate };

inline SweepKnob sweep_knob_from_string(const std::string& s) {
  if (s == "tau_var" || s == "tau-var") return SweepKnob::tau_var;
  if (s == "tau_gate" || s == "tau-gate") return SweepKnob::tau_gate;
  throw ConfigError("sweep: unknown knob '" + s + "' (tau_var, tau_gate)");
}

struct SweepRow {
  double knob, auc_3d, auc_2d, avg_loops, avg_gflops;
};

/// One evaluation per knob value over the same cached predictions.
inline std::vector<SweepRow> tradeoff_sweep(const PredictionCache& cache, const FlopsTable& flops, SweepKnob knob,
                                            const std::vector<double>& values, GateSpec base = {},
                                            const GatePolicy<float>* policy = nullptr, AucRanges ranges = {}) {
  if (!std::is_sorted(values.begin(), values.end())) throw std::invalid_argument("tradeoff_sweep: values must be sorted");
  base.kind = knob == SweepKnob::tau_var ? GateKind::threshold : GateKind::learned;
  std::vector<SweepRow> rows;
  for (double v : values) {
    GateSpec g = base;
    (knob == SweepKnob::tau_var ? g.tau_var : g.tau_gate) = v;
    auto r = evaluate(cache, flops, g, policy, ranges);
    rows.push_back({v, r.auc3d, r.auc2d, r.avg_loops, r.avg_gflops});
  }
  return rows;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "knob,auc_3d,auc_2d,avg_loops,avg_gflops\n";
  os.precision(17);
  for (const auto& r : rows)
    os << r.knob << ',' << r.auc_3d << ',' << r.auc_2d << ',' << r.avg_loops << ',' << r.avg_gflops << '\n';
}

struct Quartiles {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

/// Linear-interpolation quantile of an ascending series.
inline double quantile_sorted(const std::vector<double>& s, double q) {
  if (s.empty()) throw std::invalid_argument("quantile: empty series");
  double pos = q * static_cast<double>(s.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

inline Quartiles quartiles(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return {v.front(), quantile_sorted(v, 0.25), quantile_sorted(v, 0.5), quantile_sorted(v, 0.75), v.back()};
}

/// Two-sample permutation test on the difference of means; two-sided p-value.
inline double permutation_test(std::span<const double> a, std::span<const double> b, std::size_t rounds = 2000,
                               std::uint64_t seed = 5) {
  if (a.empty() || b.empty()) throw std::invalid_argument("permutation_test: empty sample");
  std::vector<double> pool(a.begin(), a.end());
  pool.insert(pool.end(), b.begin(), b.end());
  auto mean_diff = [&](const std::vector<double>& v) {
    double sa = std::accumulate(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(a.size()), 0.0);
    double sb = std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(a.size()), v.end(), 0.0);
    return sa / static_cast<double>(a.size()) - sb / static_cast<double>(b.size());
  };
  const double obs = std::abs(mean_diff(pool));
  Rng rng(seed);
  std::size_t extreme = 0;
  for (std::size_t r = 0; r < rounds; ++r) {
    shuffle(pool.begin(), pool.end(), rng);
    extreme += std::abs(mean_diff(pool)) >= obs - 1e-12 * std::max(1.0, obs);
  }
  return static_cast<double>(extreme + 1) / static_cast<double>(rounds + 1);
}

/// Distribution of per-sample loss (L2D + L3D) at each loop.
struct PerLoopReport {
  std::vector<Quartiles> loops;
  std::vector<std::vector<double>> losses;  // [loop][sample]
  double p_first_last = 1.0;                // permutation test, loop 0 vs last loop
};

inline PerLoopReport per_loop_report(const PredictionCache& cache) {
  if (cache.size() == 0) throw std::invalid_argument("per_loop_report: no samples");
  PerLoopReport r;
  const std::size_t loops = static_cast<std::size_t>(cache.l_stop) + 1;
  r.losses.assign(loops, {});
  for (const auto& smp : cache.loops)
    for (std::size_t l = 0; l < loops; ++l) r.losses[l].push_back(smp[l].loss());
  for (const auto& v : r.losses) r.loops.push_back(quartiles(v));
  if (loops > 1) r.p_first_last = permutation_test(r.losses.front(), r.losses.back());
  return r;
}

inline json to_json(const PerLoopReport& r) {
  json loops = json::array();
  for (const auto& q : r.loops)
    loops.push_back({{"min", q.min}, {"q1", q.q1}, {"median", q.median}, {"q3", q.q3}, {"max", q.max}});
  return json{{"loss", "l2d+l3d"}, {"loops", loops}, {"p_first_last", r.p_first_last}};
}

}  // namespace dirnet
