#include "deffiller/schedule.hpp"

#include <algorithm>
#include <cmath>

#include <torch/torch.h>

#include "deffiller/error.hpp"

namespace deffiller {

namespace {
constexpr double kMaxBeta = 0.999;
}

std::string_view to_string(ScheduleKind kind) {
  return kind == ScheduleKind::linear ? "linear" : "scaled_linear";
}

ScheduleKind parse_schedule_kind(std::string_view text) {
  if (text == "linear") return ScheduleKind::linear;
  if (text == "scaled_linear") return ScheduleKind::scaled_linear;
  fail("unknown schedule kind '{}'", text);
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  require(!betas_.empty(), "a noise schedule needs at least one step");
  alpha_bars_.reserve(betas_.size());
  double product = 1.0;
  for (double beta : betas_) {
    require(beta > 0.0 && beta < 1.0, "beta must lie in (0, 1), got {}", beta);
    product *= 1.0 - beta;
    alpha_bars_.push_back(product);
  }
}

double NoiseSchedule::beta(int t) const {
  require(t >= 1 && t <= steps(), "timestep {} outside 1..{}", t, steps());
  return betas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  require(t >= 1 && t <= steps(), "timestep {} outside 1..{}", t, steps());
  return alpha_bars_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::signal_to_noise(int t) const {
  const double ab = alpha_bar(t);
  return std::sqrt(ab / (1.0 - ab));
}

NoiseSchedule make_schedule(int steps, ScheduleKind kind, double beta_start, double beta_end) {
  require(steps >= 1, "schedule length must be at least 1, got {}", steps);
  if (kind == ScheduleKind::scaled_linear) {
    const double scale = 1000.0 / steps;
    beta_start *= scale;
    beta_end *= scale;
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int t = 1; t <= steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
    betas[static_cast<std::size_t>(t - 1)] = std::min(beta_start + (beta_end - beta_start) * frac, kMaxBeta);
  }
  return NoiseSchedule(std::move(betas));
}

torch::Tensor q_sample(const NoiseSchedule& schedule, const torch::Tensor& z0, int t, const torch::Tensor& eps) {
  require(z0.sizes() == eps.sizes(), "q_sample needs eps shaped like z0");
  const double ab = schedule.alpha_bar(t);
  return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
}

torch::Tensor q_sample(const NoiseSchedule& schedule, const torch::Tensor& z0, const torch::Tensor& t,
                       const torch::Tensor& eps) {
  require(z0.sizes() == eps.sizes(), "q_sample needs eps shaped like z0");
  require(t.dim() == 1 && t.size(0) == z0.size(0), "q_sample needs one timestep per sample");
  const auto t_min = t.min().item<std::int64_t>();
  const auto t_max = t.max().item<std::int64_t>();
  require(t_min >= 1 && t_max <= schedule.steps(), "timestep outside 1..{}", schedule.steps());
  auto table = torch::tensor(schedule.alpha_bars(), torch::kFloat64);
  auto ab = table.index_select(0, t.to(torch::kInt64) - 1);
  std::vector<std::int64_t> shape(static_cast<std::size_t>(z0.dim()), 1);
  shape[0] = z0.size(0);
  auto signal = ab.sqrt().to(z0.scalar_type()).view(shape);
  auto noise = (1.0 - ab).sqrt().to(z0.scalar_type()).view(shape);
  return signal * z0 + noise * eps;
}

std::vector<int> sampling_timesteps(int total_steps, int count) {
  require(count >= 1 && count <= total_steps, "sampler steps must lie in 1..{}, got {}", total_steps, count);
  std::vector<int> timesteps;
  timesteps.reserve(static_cast<std::size_t>(count));
  if (count == 1) return {total_steps};
  for (int i = count - 1; i >= 0; --i) {
    const double position = 1.0 + static_cast<double>(total_steps - 1) * i / (count - 1);
    timesteps.push_back(static_cast<int>(std::lround(position)));
  }
  return timesteps;
}

torch::Tensor ancestral_step(const NoiseSchedule& schedule, const torch::Tensor& z_t, int t, int t_prev,
                             const torch::Tensor& eps_hat, at::Generator& generator) {
  require(t_prev >= 0 && t_prev < t, "ancestral step needs 0 <= t_prev < t (got {} -> {})", t, t_prev);
  const double ab_t = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar_or_one(t_prev);
  const double beta = 1.0 - ab_t / ab_prev;
  const double alpha = 1.0 - beta;
  auto mean = (z_t - (beta / std::sqrt(1.0 - ab_t)) * eps_hat) / std::sqrt(alpha);
  if (t_prev == 0) return mean;
  auto noise = torch::randn(z_t.sizes(), generator, z_t.options());
  return mean + std::sqrt(beta) * noise;
}

}  // namespace deffiller
