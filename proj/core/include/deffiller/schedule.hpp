#pragma once

#include <string_view>
#include <vector>

#include <ATen/core/Generator.h>
#include <torch/types.h>

namespace deffiller {

enum class ScheduleKind {
  /// beta linear from beta_start to beta_end over T steps, as given.
  linear,
  /// Endpoints multiplied by 1000 / T, so short schedules reach the same
  /// terminal noise level as the 1000-step linear schedule.
  scaled_linear,
};

std::string_view to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(std::string_view text);

/// beta_t and alpha_bar_t = prod_{s<=t} (1 - beta_s), indexed 1..T.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  explicit NoiseSchedule(std::vector<double> betas);

  int steps() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const;
  double alpha_bar(int t) const;
  /// alpha_bar(0) == 1 by convention.
  double alpha_bar_or_one(int t) const { return t == 0 ? 1.0 : alpha_bar(t); }
  double signal_to_noise(int t) const;

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

 private:
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

NoiseSchedule make_schedule(int steps, ScheduleKind kind, double beta_start = 1e-4,
                            double beta_end = 0.02);

/// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps for one t.
torch::Tensor q_sample(const NoiseSchedule& schedule, const torch::Tensor& z0, int t,
                       const torch::Tensor& eps);
/// Batched variant: t is an int64 tensor of shape (N,) with values in 1..T.
torch::Tensor q_sample(const NoiseSchedule& schedule, const torch::Tensor& z0,
                       const torch::Tensor& t, const torch::Tensor& eps);

/// Descending timesteps visited by the sampler, T first and ending at 1.
/// With `count == T` every step is visited.
std::vector<int> sampling_timesteps(int total_steps, int count);

/// One ancestral DDPM update from timestep t to t_prev (< t, 0 means the
/// final step) using the re-spaced beta' = 1 - alpha_bar_t / alpha_bar_prev
/// and variance beta'. No noise is added on the final step.
torch::Tensor ancestral_step(const NoiseSchedule& schedule, const torch::Tensor& z_t, int t,
                             int t_prev, const torch::Tensor& eps_hat, at::Generator& generator);

}  // namespace deffiller
