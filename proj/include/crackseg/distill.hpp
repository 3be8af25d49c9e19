// Copyright 2026 The crackseg Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Knowledge-distillation loss and its gradient with respect to the student
// logits. With N = n*h*w pixels, p = softmax(z / T), q = softmax(z_s):
//
//   kd    = T^2 / N * sum_pixels KL(p_t || p_s)
//   ce    = 1 / N * sum_pixels w[y] * -log q[y]
//   dice  = 1 - (2 * sum(q1 * y) + eps) / (sum(q1) + sum(y) + eps)
//   hard  = ce + lambda_dice * dice
//   total = alpha * kd + (1 - alpha) * hard
//
// where q1 is the crack-class (index 1) probability and the dice sums run
// over the whole batch.

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "crackseg/error.hpp"
#include "crackseg/layers.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

struct KDConfig {
  double temperature = 2.0;
  double alpha = 0.5;
  double lambda_dice = 1.0;
  std::vector<double> class_weights{0.068, 0.932};  // cross-entropy, per class
  double dice_eps = 1.0;

  /// Throws on invalid settings; returns advisory warnings.
  std::vector<std::string> validate() const {
    if (!(temperature > 0.0)) detail::fail(Errc::invalid_parameter, "temperature must be > 0, got ", temperature);
    if (!(alpha >= 0.0 && alpha <= 1.0)) detail::fail(Errc::invalid_parameter, "alpha must be in [0, 1], got ", alpha);
    if (!(lambda_dice >= 0.0)) detail::fail(Errc::invalid_parameter, "lambda_dice must be >= 0, got ", lambda_dice);
    if (!(dice_eps > 0.0)) detail::fail(Errc::invalid_parameter, "dice_eps must be > 0, got ", dice_eps);
    for (double w : class_weights)
      if (!(w >= 0.0)) detail::fail(Errc::invalid_parameter, "class weights must be >= 0");
    std::vector<std::string> warn;
    if (temperature < 1.0) warn.push_back("temperature below 1 sharpens instead of softening");
    return warn;
  }
};

/// Student logits (n, C, h, w), teacher logits (n, C, H, W) and labels
/// (n, 1, h, w) with values in [0, C).
template <std::floating_point F>
struct DistillBatch {
  Tensor<F> student;
  Tensor<F> teacher;
  Tensor<std::uint8_t> labels;
};

struct LossTerms {
  double kd = 0.0;
  double ce = 0.0;
  double dice = 0.0;
  double hard = 0.0;
  double total = 0.0;
};

namespace detail {

template <std::floating_point F>
void check_batch(const DistillBatch<F>& b, const KDConfig& cfg) {
  const auto& s = b.student.shape();
  const auto& t = b.teacher.shape();
  const auto& y = b.labels.shape();
  if (s.c < 2) fail(Errc::shape, "student logits need >= 2 classes, got ", s.c);
  if (t.n != s.n || t.c != s.c) fail(Errc::shape, "teacher logits ", t, " do not match student ", s);
  if (y.n != s.n || y.c != 1 || y.h != s.h || y.w != s.w)
    fail(Errc::shape, "labels ", y, " do not match student ", s);
  if (cfg.class_weights.size() != static_cast<std::size_t>(s.c))
    fail(Errc::invalid_parameter, cfg.class_weights.size(), " class weights for ", s.c, " classes");
  for (std::size_t i = 0; i < b.labels.size(); ++i)
    if (b.labels[i] >= s.c) fail(Errc::invalid_parameter, "label ", int{b.labels[i]}, " at ", i, " is not a class");
}

/// log softmax(z / t) over channels at one pixel.
template <std::floating_point F>
void log_softmax_at(const Tensor<F>& z, int n, int y, int x, double t, std::vector<double>& out) {
  const int c = z.shape().c;
  out.resize(static_cast<std::size_t>(c));
  double m = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < c; ++k) m = std::max(m, static_cast<double>(z(n, k, y, x)) / t);
  double sum = 0.0;
  for (int k = 0; k < c; ++k) sum += std::exp(static_cast<double>(z(n, k, y, x)) / t - m);
  const double lse = m + std::log(sum);
  for (int k = 0; k < c; ++k) out[static_cast<std::size_t>(k)] = static_cast<double>(z(n, k, y, x)) / t - lse;
}

template <std::floating_point F>
Tensor<F> teacher_at_student_size(const DistillBatch<F>& b) {
  const auto& s = b.student.shape();
  const auto& t = b.teacher.shape();
  if (t.h == s.h && t.w == s.w) return b.teacher;
  return bilinear_resize(b.teacher, s.h, s.w);
}

struct DiceSums {
  double inter = 0.0;  // sum q1 * y
  double pred = 0.0;   // sum q1
  double gt = 0.0;     // sum y
};

}  // namespace detail

/// All loss terms in one pass.
template <std::floating_point F>
LossTerms loss_terms(const DistillBatch<F>& b, const KDConfig& cfg) {
  cfg.validate();
  detail::check_batch(b, cfg);
  const auto teacher = detail::teacher_at_student_size(b);
  const auto& s = b.student.shape();
  const double T = cfg.temperature;
  const double npx = static_cast<double>(s.n) * s.h * s.w;
  std::vector<double> lt, ls, lq;
  double kd = 0.0, ce = 0.0;
  detail::DiceSums d;
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        detail::log_softmax_at(teacher, n, y, x, T, lt);
        detail::log_softmax_at(b.student, n, y, x, T, ls);
        detail::log_softmax_at(b.student, n, y, x, 1.0, lq);
        for (int k = 0; k < s.c; ++k) {
          const auto kk = static_cast<std::size_t>(k);
          kd += std::exp(lt[kk]) * (lt[kk] - ls[kk]);
        }
        const int label = b.labels(n, 0, y, x);
        ce -= cfg.class_weights[static_cast<std::size_t>(label)] * lq[static_cast<std::size_t>(label)];
        const double q1 = std::exp(lq[1]);
        const double y1 = label == 1 ? 1.0 : 0.0;
        d.inter += q1 * y1;
        d.pred += q1;
        d.gt += y1;
      }
  LossTerms r;
  r.kd = T * T * kd / npx;
  r.ce = ce / npx;
  r.dice = 1.0 - (2.0 * d.inter + cfg.dice_eps) / (d.pred + d.gt + cfg.dice_eps);
  r.hard = r.ce + cfg.lambda_dice * r.dice;
  r.total = cfg.alpha * r.kd + (1.0 - cfg.alpha) * r.hard;
  return r;
}

template <std::floating_point F>
double kd_loss(const DistillBatch<F>& b, const KDConfig& cfg) {
  return loss_terms(b, cfg).kd;
}

template <std::floating_point F>
double hard_loss(const DistillBatch<F>& b, const KDConfig& cfg) {
  return loss_terms(b, cfg).hard;
}

template <std::floating_point F>
double total_loss(const DistillBatch<F>& b, const KDConfig& cfg) {
  return loss_terms(b, cfg).total;
}

/// d total_loss / d student logits.
template <std::floating_point F>
Tensor<F> loss_grad(const DistillBatch<F>& b, const KDConfig& cfg) {
  cfg.validate();
  detail::check_batch(b, cfg);
  const auto teacher = detail::teacher_at_student_size(b);
  const auto& s = b.student.shape();
  const double T = cfg.temperature;
  const double npx = static_cast<double>(s.n) * s.h * s.w;
  std::vector<double> lt, ls, lq;

  // dice needs the batch sums first
  detail::DiceSums d;
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        detail::log_softmax_at(b.student, n, y, x, 1.0, lq);
        const double q1 = std::exp(lq[1]);
        const double y1 = b.labels(n, 0, y, x) == 1 ? 1.0 : 0.0;
        d.inter += q1 * y1;
        d.pred += q1;
        d.gt += y1;
      }
  const double num = 2.0 * d.inter + cfg.dice_eps;
  const double den = d.pred + d.gt + cfg.dice_eps;

  Tensor<F> g(s);
  const double a = cfg.alpha;
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        detail::log_softmax_at(teacher, n, y, x, T, lt);
        detail::log_softmax_at(b.student, n, y, x, T, ls);
        detail::log_softmax_at(b.student, n, y, x, 1.0, lq);
        const int label = b.labels(n, 0, y, x);
        const double w = cfg.class_weights[static_cast<std::size_t>(label)];
        const double q1 = std::exp(lq[1]);
        const double y1 = label == 1 ? 1.0 : 0.0;
        const double ddice_dq1 = -(2.0 * y1 * den - num) / (den * den);
        for (int k = 0; k < s.c; ++k) {
          const auto kk = static_cast<std::size_t>(k);
          const double pk_s = std::exp(ls[kk]);
          const double pk_t = std::exp(lt[kk]);
          const double qk = std::exp(lq[kk]);
          const double gkd = T * (pk_s - pk_t) / npx;
          const double gce = w * (qk - (k == label ? 1.0 : 0.0)) / npx;
          const double dq1_dzk = q1 * ((k == 1 ? 1.0 : 0.0) - qk);
          const double gdice = ddice_dq1 * dq1_dzk;
          g(n, k, y, x) = static_cast<F>(a * gkd + (1.0 - a) * (gce + cfg.lambda_dice * gdice));
        }
      }
  return g;
}

}  // namespace crackseg
