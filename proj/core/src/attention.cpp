#include "deffiller/attention.hpp"

#include <cmath>

#include <torch/torch.h>

#include "deffiller/error.hpp"

namespace deffiller {

namespace nn = torch::nn;

AttentionImpl::AttentionImpl(int query_dim, int context_dim, int heads_) : heads(heads_) {
  require(heads > 0 && query_dim % heads == 0, "attention width {} is not divisible by {} heads", query_dim, heads);
  to_q = register_module("to_q", nn::Linear(nn::LinearOptions(query_dim, query_dim).bias(false)));
  to_k = register_module("to_k", nn::Linear(nn::LinearOptions(context_dim, query_dim).bias(false)));
  to_v = register_module("to_v", nn::Linear(nn::LinearOptions(context_dim, query_dim).bias(false)));
  to_out = register_module("to_out", nn::Linear(query_dim, query_dim));
}

torch::Tensor AttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& context) {
  const auto n = x.size(0);
  const auto width = to_q->options.out_features();
  const auto head_dim = width / heads;
  auto split_heads = [&](const torch::Tensor& t) { return t.view({n, t.size(1), heads, head_dim}).transpose(1, 2); };
  auto q = split_heads(to_q->forward(x));
  auto k = split_heads(to_k->forward(context));
  auto v = split_heads(to_v->forward(context));
  auto weights = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim)), -1);
  auto out = torch::matmul(weights, v).transpose(1, 2).reshape({n, x.size(1), width});
  return to_out->forward(out);
}

GatedAttentionBlockImpl::GatedAttentionBlockImpl(int width, int heads) : width_(width) {
  norm_self = register_module("norm_self", nn::LayerNorm(nn::LayerNormOptions({width})));
  self_attn = register_module("self_attn", Attention(width, width, heads));
  gated_norm = register_module("gated_norm", nn::LayerNorm(nn::LayerNormOptions({width})));
  gated_attn = register_module("gated_attn", Attention(width, width, heads));
  gamma = register_parameter("gate_gamma", torch::zeros({1}));
  norm_cross = register_module("norm_cross", nn::LayerNorm(nn::LayerNormOptions({width})));
  cross_attn = register_module("cross_attn", Attention(width, width, heads));
}

torch::Tensor GatedAttentionBlockImpl::forward(const torch::Tensor& v_in, const torch::Tensor& layout_tokens,
                                               const torch::Tensor& prompt_tokens) {
  require(v_in.dim() == 3 && v_in.size(2) == width_, "image tokens must be (N, L, {})", width_);
  require(layout_tokens.defined() && layout_tokens.dim() == 3 && layout_tokens.size(2) == width_,
          "layout tokens must be (N, M, {})", width_);
  require(prompt_tokens.defined() && prompt_tokens.dim() == 3 && prompt_tokens.size(2) == width_,
          "prompt tokens must be (N, S, {})", width_);
  require(layout_tokens.size(0) == v_in.size(0) && prompt_tokens.size(0) == v_in.size(0),
          "token batches disagree: {} image, {} layout, {} prompt", v_in.size(0), layout_tokens.size(0),
          prompt_tokens.size(0));

  auto v = v_in;
  auto normed = norm_self->forward(v);
  v = v + self_attn->forward(normed, normed);

  if (!gate_ablated_) {
    auto joint = gated_norm->forward(torch::cat({v, layout_tokens}, 1));
    // Token selection: keep the outputs at image-token positions only.
    auto selected = gated_attn->forward(joint, joint).narrow(1, 0, v.size(1));
    v = v + torch::tanh(gamma) * selected;
  }

  v = v + cross_attn->forward(norm_cross->forward(v), prompt_tokens);
  return v;
}

}  // namespace deffiller
