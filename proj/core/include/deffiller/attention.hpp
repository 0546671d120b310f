#pragma once

#include <torch/nn/module.h>
#include <torch/nn/modules/linear.h>
#include <torch/nn/modules/normalization.h>
#include <torch/nn/pimpl.h>

namespace deffiller {

/// Multi-head scaled dot-product attention. Queries come from `x`, keys and
/// values from `context` (pass `x` again for self-attention).
class AttentionImpl : public torch::nn::Module {
 public:
  AttentionImpl(int query_dim, int context_dim, int heads);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context);

  torch::nn::Linear to_q{nullptr};
  torch::nn::Linear to_k{nullptr};
  torch::nn::Linear to_v{nullptr};
  torch::nn::Linear to_out{nullptr};
  int heads;
};
TORCH_MODULE(Attention);

/// Transformer block over image tokens. After plain self-attention, a gated
/// sublayer attends over image and layout tokens together, keeps only the
/// image-token outputs and adds them scaled by tanh(gate_gamma). Cross-attention
/// to the prompt tokens follows. The gate starts at 0, so a fresh block
/// ignores the layout.
class GatedAttentionBlockImpl : public torch::nn::Module {
 public:
  GatedAttentionBlockImpl(int width, int heads);

  torch::Tensor forward(const torch::Tensor& v, const torch::Tensor& layout_tokens,
                        const torch::Tensor& prompt_tokens);

  /// When set, the gated sublayer is skipped entirely.
  void set_gate_ablated(bool ablated) { gate_ablated_ = ablated; }
  bool gate_ablated() const { return gate_ablated_; }

  torch::nn::LayerNorm norm_self{nullptr};
  Attention self_attn{nullptr};
  torch::nn::LayerNorm gated_norm{nullptr};
  Attention gated_attn{nullptr};
  torch::Tensor gamma;
  torch::nn::LayerNorm norm_cross{nullptr};
  Attention cross_attn{nullptr};

 private:
  int width_;
  bool gate_ablated_ = false;
};
TORCH_MODULE(GatedAttentionBlock);

}  // namespace deffiller
