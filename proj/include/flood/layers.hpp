#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flood/ops.hpp"
#include "flood/random.hpp"
#include "flood/tensor.hpp"

namespace flood {

// Per-forward state: the graph, train/inference mode, and the dropout stream.
// Every dropout site draws the next seed, so a forward pass is a pure
// function of (parameters, input, seed).
template <typename T>
struct ForwardContext {
  Graph<T>& graph;
  bool training = false;
  double dropout_rate = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  std::uint64_t next_seed() { return derive_seed(seed, {counter++}); }
};

// fan_in: truncated normal with std sqrt(2 / fan_in), fan_in being the product
// of all but the last dimension (He scaling, used for conv kernels).
enum class Init { zeros, ones, trunc_normal, fan_in };

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  bool trainable = true;
};

// Ordered, uniquely named parameter collection. Initial values are keyed by
// (seed, name), so they do not depend on construction order.
template <typename T>
class ParameterSet {
 public:
  explicit ParameterSet(std::uint64_t seed = 0, double init_std = 0.02) : seed_(seed), init_std_(init_std) {}

  Tensor<T> add(const std::string& name, Shape shape, Init init, bool trainable = true);

  std::vector<Parameter<T>>& items() { return items_; }
  const std::vector<Parameter<T>>& items() const { return items_; }
  const Parameter<T>* find(const std::string& name) const;
  std::size_t size() const { return items_.size(); }

  Index total_count() const;
  Index trainable_count() const;

  void zero_grads();

 private:
  std::uint64_t seed_;
  double init_std_;
  std::vector<Parameter<T>> items_;
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out], undefined when bias-free

  static Linear make(ParameterSet<T>& ps, const std::string& name, Index in, Index out, bool with_bias = true);
  Tensor<T> operator()(Graph<T>& g, const Tensor<T>& x) const {
    return linear(g, x, weight, bias.defined() ? &bias : nullptr);
  }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma, beta;
  T eps = T(1e-5);

  static LayerNorm make(ParameterSet<T>& ps, const std::string& name, Index dim);
  Tensor<T> operator()(Graph<T>& g, const Tensor<T>& x) const { return layer_norm(g, x, gamma, beta, eps); }
};

template <typename T>
struct AttentionParams {
  Index dim = 0;
  Index heads = 1;
  Linear<T> query, key, value, output;

  Index head_dim() const { return dim / heads; }
  static AttentionParams make(ParameterSet<T>& ps, const std::string& name, Index dim, Index heads);
};

template <typename T>
struct ExternalMemory {
  Tensor<T> keys;    // M_k [S, dim]
  Tensor<T> values;  // M_v [S, dim]

  Index units() const { return keys.dim(0); }
  static ExternalMemory make(ParameterSet<T>& ps, const std::string& name, Index units, Index dim);
};

struct WindowSpec {
  Index window = 1;
  Index shift = 0;  // cyclic displacement, in [0, window)
};

// Non-overlapping patches (row-major) flattened and projected:
// [N,H,W,C] -> [N, (H/p)(W/p), dim].
template <typename T>
Tensor<T> patch_embed(Graph<T>& g, const Tensor<T>& image, Index patch_size, const Linear<T>& projection);

// seq [N,L,dim] + table; with a class token ([dim] or [1,dim]) the token is
// prepended first and the table must have L+1 rows.
template <typename T>
Tensor<T> add_positional_embedding(Graph<T>& g, const Tensor<T>& seq, const Tensor<T>& table,
                                   const Tensor<T>* class_token);

// Per head softmax(Q K^T / sqrt(head_dim) + bias + mask) V, heads concatenated
// and projected. mask is additive, [L,L] or [M,L,L] with the batch laid out
// as N/M groups of M; score_bias is [heads,L,L]. When attention_out is given
// it receives the weights as [N, heads, L, L].
template <typename T>
Tensor<T> multi_head_self_attention(Graph<T>& g, const Tensor<T>& seq, const AttentionParams<T>& params,
                                    const Tensor<T>* mask = nullptr, const Tensor<T>* score_bias = nullptr,
                                    Tensor<T>* attention_out = nullptr);

// A = seq M_k^T normalized by softmax over memory units, then L1 over tokens;
// output A M_v. Linear in sequence length.
template <typename T>
Tensor<T> external_attention(Graph<T>& g, const Tensor<T>& seq, const ExternalMemory<T>& memory,
                             Tensor<T>* attention_out = nullptr);

// [N,H,W,C] -> [N*nW, ws*ws, C], windows row-major; a positive shift first
// rolls the map by (-shift, -shift).
template <typename T>
Tensor<T> window_partition(Graph<T>& g, const Tensor<T>& feat, const WindowSpec& spec);
// Inverse of window_partition back to [N,H,W,C].
template <typename T>
Tensor<T> window_reverse(Graph<T>& g, const Tensor<T>& windows, const WindowSpec& spec, Index batch, Index height,
                         Index width);

// Additive mask [nW, L, L] that blocks attention between tokens that were not
// adjacent before the cyclic roll (0 allowed, -inf blocked).
template <typename T>
Tensor<T> shifted_window_mask(Index height, Index width, const WindowSpec& spec);

// Index into a [(2ws-1)^2, heads] relative position table for each (i, j)
// token pair of a window, row-major over L*L.
std::vector<Index> relative_position_index(Index window);

// Attention-weighted average over tokens with learned scalar scores:
// [N,L,dim] -> [N,dim]. weights_out receives [N,1,L].
template <typename T>
Tensor<T> sequence_pool(Graph<T>& g, const Tensor<T>& seq, const Linear<T>& score, Tensor<T>* weights_out = nullptr);

template <typename T>
struct ConvBlock {
  Tensor<T> kernel;  // [k, k, Cin, Cout], no bias
  int stride = 1;
  int padding = 1;
  int pool_kernel = 3;  // 0 disables pooling
  int pool_stride = 2;
  int pool_padding = 1;
};

// Each block: conv2d -> relu -> max-pool; the final map [N,H',W',C] is read
// out as a token sequence [N, H'W', C].
template <typename T>
Tensor<T> conv_tokenizer(Graph<T>& g, const Tensor<T>& image, const std::vector<ConvBlock<T>>& blocks);

// linear -> gelu -> dropout -> linear.
template <typename T>
Tensor<T> mlp_block(ForwardContext<T>& ctx, const Tensor<T>& seq, const Linear<T>& fc1, const Linear<T>& fc2,
                    double dropout_rate);

// 2x2 neighbourhood concat, LayerNorm(4C), linear 4C -> out (no bias):
// [N,H,W,C] -> [N, (H/2)(W/2), out].
template <typename T>
Tensor<T> patch_merging(Graph<T>& g, const Tensor<T>& feat, const LayerNorm<T>& norm, const Linear<T>& reduction);

// Pre-norm encoder block: x + MHSA(LN(x)), then x + MLP(LN(x)).
template <typename T>
struct TransformerBlock {
  LayerNorm<T> norm1, norm2;
  AttentionParams<T> attention;
  Linear<T> fc1, fc2;

  static TransformerBlock make(ParameterSet<T>& ps, const std::string& name, Index dim, Index heads,
                               Index mlp_hidden);
  Tensor<T> operator()(ForwardContext<T>& ctx, const Tensor<T>& x) const;
};

// Swin block over a [N, H*W, C] token grid with (optionally shifted) windows
// and a learned relative position bias.
template <typename T>
struct SwinBlock {
  LayerNorm<T> norm1, norm2;
  AttentionParams<T> attention;
  Tensor<T> relative_bias;  // [(2ws-1)^2, heads]
  Linear<T> fc1, fc2;
  WindowSpec spec;
  Index height = 0, width = 0;
  Tensor<T> mask;                       // [nW, L, L] when shifted
  std::vector<Index> relative_index;    // L*L

  static SwinBlock make(ParameterSet<T>& ps, const std::string& name, Index dim, Index heads, Index mlp_hidden,
                        WindowSpec spec, Index height, Index width);
  Tensor<T> operator()(ForwardContext<T>& ctx, const Tensor<T>& x) const;
};

// Pre-norm block with external attention in place of self-attention.
template <typename T>
struct ExternalAttentionBlock {
  LayerNorm<T> norm1, norm2;
  ExternalMemory<T> memory;
  Linear<T> fc1, fc2;

  static ExternalAttentionBlock make(ParameterSet<T>& ps, const std::string& name, Index dim, Index units,
                                     Index mlp_hidden);
  Tensor<T> operator()(ForwardContext<T>& ctx, const Tensor<T>& x) const;
};

}  // namespace flood
