// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <thread>
#include <vector>

#include "dirnet/model.hpp"
#include "dirnet/synthdata.hpp"

namespace dirnet {

/// Network inputs and targets for a set of samples.
struct Batch {
  Tensor<float> x;     // N x 3 x H x H
  Tensor<float> gt2d;  // N x 42
  Tensor<float> gt3d;  // N x 63
};

inline Batch make_batch(const Dataset& ds, std::span<const std::size_t> idx) {
  const std::size_t n = idx.size();
  const std::size_t h = static_cast<std::size_t>(ds.image_size());
  const std::size_t img = 3 * h * h;
  Batch b{Tensor<float>(Shape{n, 3, h, h}), Tensor<float>(Shape{n, 42}), Tensor<float>(Shape{n, 63})};
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = ds.samples.at(idx[i]);
    std::copy(s.image.begin(), s.image.end(), b.x.ptr() + i * img);
    std::copy(s.j2d.begin(), s.j2d.end(), b.gt2d.ptr() + i * 42);
    std::copy(s.j3d.begin(), s.j3d.end(), b.gt3d.ptr() + i * 63);
  }
  return b;
}

/// Everything evaluation needs from one sample at one loop.
struct LoopRecord {
  std::array<float, 2 * kNumJoints> j2d{};
  std::array<float, 3 * kNumJoints> j3d{};
  std::array<float, kAlpha2D> alpha2d{};
  std::array<float, kAlpha3D> alpha3d{};
  std::vector<float> f;  // gate input
  double l2d = 0;        // mean smooth-L1 over coordinates
  double l3d = 0;        // squared error summed over coordinates / 21
  double err2d = 0;      // mean joint distance, px
  double err3d = 0;      // mean joint distance, model units
  double mean_var2d = 0;
  std::array<double, kNumJoints> joint_err2d{};
  std::array<double, kNumJoints> joint_err3d{};

  double loss() const { return l2d + l3d; }
};

/// Predictions of every loop for a range of samples, computed once so that
/// any number of gating policies can be applied without rerunning the net.
struct PredictionCache {
  int l_stop = 0;
  std::vector<std::size_t> indices;           // dataset indices
  std::vector<std::vector<LoopRecord>> loops;  // [sample][loop]

  std::size_t size() const { return loops.size(); }
};

inline void fill_record(LoopRecord& r, const Sample& s) {
  PoseLoss pl = pose_loss(std::vector<double>(r.j2d.begin(), r.j2d.end()),
                          std::vector<double>(r.j3d.begin(), r.j3d.end()),
                          std::vector<double>(s.j2d.begin(), s.j2d.end()),
                          std::vector<double>(s.j3d.begin(), s.j3d.end()));
  r.l2d = pl.l2d;
  r.l3d = pl.l3d;
  double e2 = 0, e3 = 0;
  for (int j = 0; j < kNumJoints; ++j) {
    double dx = double(r.j2d[2 * j]) - s.j2d[2 * j], dy = double(r.j2d[2 * j + 1]) - s.j2d[2 * j + 1];
    r.joint_err2d[j] = std::sqrt(dx * dx + dy * dy);
    double ax = double(r.j3d[3 * j]) - s.j3d[3 * j], ay = double(r.j3d[3 * j + 1]) - s.j3d[3 * j + 1],
           az = double(r.j3d[3 * j + 2]) - s.j3d[3 * j + 2];
    r.joint_err3d[j] = std::sqrt(ax * ax + ay * ay + az * az);
    e2 += r.joint_err2d[j];
    e3 += r.joint_err3d[j];
  }
  r.err2d = e2 / kNumJoints;
  r.err3d = e3 / kNumJoints;
  r.mean_var2d = mean_variance<float>(r.alpha2d);
}

/**
 * Runs loops 0..l_stop in eval mode on `indices` and records per-sample
 * outputs. `jobs` threads split the batches; the result is identical for any
 * thread count because eval-mode inference is per-sample.
 */
inline PredictionCache predict_loops(DIRNet<float>& model, const Dataset& ds, std::vector<std::size_t> indices,
                                     int l_stop, std::size_t batch = 64, int jobs = 1) {
  if (l_stop < 0 || l_stop > model.config().effective_l_max())
    throw std::out_of_range("predict_loops: l_stop " + std::to_string(l_stop) + " outside [0, " +
                            std::to_string(model.config().effective_l_max()) + "]");
  if (batch == 0) throw std::invalid_argument("predict_loops: batch must be positive");
  model.set_mode(NormMode::eval);
  PredictionCache cache;
  cache.l_stop = l_stop;
  cache.indices = std::move(indices);
  const std::size_t n = cache.indices.size();
  cache.loops.assign(n, std::vector<LoopRecord>(static_cast<std::size_t>(l_stop) + 1));
  const std::size_t nb = (n + batch - 1) / batch;

  auto run = [&](std::size_t b) {
    NoGradScope<float> ng;
    std::size_t lo = b * batch, hi = std::min(n, lo + batch);
    auto bt = make_batch(ds, std::span<const std::size_t>(cache.indices).subspan(lo, hi - lo));
    auto outs = model.forward(bt.x, static_cast<std::size_t>(l_stop));
    for (std::size_t l = 0; l < outs.size(); ++l) {
      const auto& o = outs[l];
      const std::size_t fw = o.var.f.dim(1);
      for (std::size_t i = lo; i < hi; ++i) {
        auto& r = cache.loops[i][l];
        std::size_t k = i - lo;
        std::copy_n(o.pose.j2d.ptr() + k * 42, 42, r.j2d.begin());
        std::copy_n(o.pose.j3d.ptr() + k * 63, 63, r.j3d.begin());
        std::copy_n(o.var.alpha2d.ptr() + k * kAlpha2D, kAlpha2D, r.alpha2d.begin());
        std::copy_n(o.var.alpha3d.ptr() + k * kAlpha3D, kAlpha3D, r.alpha3d.begin());
        r.f.assign(o.var.f.ptr() + k * fw, o.var.f.ptr() + (k + 1) * fw);
        fill_record(r, ds.samples[cache.indices[i]]);
      }
    }
  };

  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(nb)));
  if (jobs == 1) {
    for (std::size_t b = 0; b < nb; ++b) run(b);
    return cache;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t b = static_cast<std::size_t>(t); b < nb; b += static_cast<std::size_t>(jobs)) run(b);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return cache;
}

inline std::vector<std::size_t> range_indices(IndexRange r) {
  std::vector<std::size_t> v(r.size());
  std::iota(v.begin(), v.end(), r.begin);
  return v;
}

}  // namespace dirnet
