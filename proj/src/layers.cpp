#include "flood/layers.hpp"

#include <cmath>
#include <limits>

namespace flood {

template <typename T>
Tensor<T> ParameterSet<T>::add(const std::string& name, Shape shape, Init init, bool trainable) {
  if (find(name)) throw InvalidArgument("duplicate parameter name '" + name + "'");
  Tensor<T> t;
  switch (init) {
    case Init::zeros:
      t = Tensor<T>(std::move(shape), T{0});
      break;
    case Init::ones:
      t = Tensor<T>(std::move(shape), T{1});
      break;
    case Init::trunc_normal:
      t = seeded_random<T>(shape, derive_seed(seed_, {hash_string(name)}),
                           TruncatedNormalDist{0.0, init_std_, 2.0});
      break;
    case Init::fan_in: {
      Index fan = 1;
      for (std::size_t i = 0; i + 1 < shape.size(); ++i) fan *= shape[i];
      t = seeded_random<T>(shape, derive_seed(seed_, {hash_string(name)}),
                           TruncatedNormalDist{0.0, std::sqrt(2.0 / static_cast<double>(fan)), 2.0});
      break;
    }
  }
  t.set_requires_grad(trainable);
  items_.push_back(Parameter<T>{name, t, trainable});
  return t;
}

template <typename T>
const Parameter<T>* ParameterSet<T>::find(const std::string& name) const {
  for (const auto& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename T>
Index ParameterSet<T>::total_count() const {
  Index n = 0;
  for (const auto& p : items_) n += p.value.numel();
  return n;
}

template <typename T>
Index ParameterSet<T>::trainable_count() const {
  Index n = 0;
  for (const auto& p : items_)
    if (p.trainable) n += p.value.numel();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grads() {
  for (auto& p : items_) p.value.zero_grad();
}

template <typename T>
Linear<T> Linear<T>::make(ParameterSet<T>& ps, const std::string& name, Index in, Index out, bool with_bias) {
  Linear<T> l;
  l.weight = ps.add(name + ".weight", {in, out}, Init::trunc_normal);
  if (with_bias) l.bias = ps.add(name + ".bias", {out}, Init::zeros);
  return l;
}

template <typename T>
LayerNorm<T> LayerNorm<T>::make(ParameterSet<T>& ps, const std::string& name, Index dim) {
  LayerNorm<T> n;
  n.gamma = ps.add(name + ".gamma", {dim}, Init::ones);
  n.beta = ps.add(name + ".beta", {dim}, Init::zeros);
  return n;
}

template <typename T>
AttentionParams<T> AttentionParams<T>::make(ParameterSet<T>& ps, const std::string& name, Index dim, Index heads) {
  if (heads < 1 || dim % heads != 0) {
    throw InvalidArgument("attention: dim " + std::to_string(dim) + " not divisible by heads " +
                          std::to_string(heads));
  }
  AttentionParams<T> a;
  a.dim = dim;
  a.heads = heads;
  a.query = Linear<T>::make(ps, name + ".query", dim, dim);
  a.key = Linear<T>::make(ps, name + ".key", dim, dim);
  a.value = Linear<T>::make(ps, name + ".value", dim, dim);
  a.output = Linear<T>::make(ps, name + ".output", dim, dim);
  return a;
}

template <typename T>
ExternalMemory<T> ExternalMemory<T>::make(ParameterSet<T>& ps, const std::string& name, Index units, Index dim) {
  if (units < 1) throw InvalidArgument("external memory needs at least one unit");
  ExternalMemory<T> m;
  m.keys = ps.add(name + ".memory_keys", {units, dim}, Init::trunc_normal);
  m.values = ps.add(name + ".memory_values", {units, dim}, Init::trunc_normal);
  return m;
}

template <typename T>
Tensor<T> patch_embed(Graph<T>& g, const Tensor<T>& image, Index patch_size, const Linear<T>& projection) {
  if (image.rank() != 4) throw InvalidShape("patch_embed: expected [N,H,W,C], got " + shape_str(image.shape()));
  const Index n = image.dim(0), h = image.dim(1), w = image.dim(2), c = image.dim(3);
  if (patch_size < 1 || h % patch_size != 0 || w % patch_size != 0) {
    throw InvalidShape("patch_embed: " + std::to_string(h) + "x" + std::to_string(w) +
                       " is not divisible by patch size " + std::to_string(patch_size));
  }
  const Index gh = h / patch_size, gw = w / patch_size;
  auto x = reshape(g, image, {n, gh, patch_size, gw, patch_size, c});
  x = permute(g, x, {0, 1, 3, 2, 4, 5});
  x = reshape(g, x, {n, gh * gw, patch_size * patch_size * c});
  return projection(g, x);
}

template <typename T>
Tensor<T> add_positional_embedding(Graph<T>& g, const Tensor<T>& seq, const Tensor<T>& table,
                                   const Tensor<T>* class_token) {
  if (seq.rank() != 3) throw InvalidShape("positional embedding: expected [N,L,dim], got " + shape_str(seq.shape()));
  const Index n = seq.dim(0), l = seq.dim(1), d = seq.dim(2);
  Tensor<T> x = seq;
  Index length = l;
  if (class_token) {
    if (class_token->numel() != d) throw InvalidShape("class token width does not match sequence");
    std::vector<Index> rows(static_cast<std::size_t>(n), 0);
    Tensor<T> tok = gather_rows(g, *class_token, std::span<const Index>(rows), Shape{n, 1, d});
    x = concat(g, std::vector<Tensor<T>>{tok, seq}, 1);
    length = l + 1;
  }
  if (table.rank() != 2 || table.dim(0) != length || table.dim(1) != d) {
    throw InvalidShape("positional table " + shape_str(table.shape()) + " does not match sequence length " +
                       std::to_string(length) + " and width " + std::to_string(d));
  }
  return add_broadcast(g, x, table);
}

namespace {

// [N,L,D] -> [N*h, L, hd]
template <typename T>
Tensor<T> split_heads(Graph<T>& g, const Tensor<T>& x, Index heads) {
  const Index n = x.dim(0), l = x.dim(1), d = x.dim(2);
  auto y = reshape(g, x, {n, l, heads, d / heads});
  y = permute(g, y, {0, 2, 1, 3});
  return reshape(g, y, {n * heads, l, d / heads});
}

// [N*h, L, hd] -> [N,L,D]
template <typename T>
Tensor<T> merge_heads(Graph<T>& g, const Tensor<T>& x, Index n, Index heads) {
  const Index l = x.dim(1), hd = x.dim(2);
  auto y = reshape(g, x, {n, heads, l, hd});
  y = permute(g, y, {0, 2, 1, 3});
  return reshape(g, y, {n, l, heads * hd});
}

}  // namespace

template <typename T>
Tensor<T> multi_head_self_attention(Graph<T>& g, const Tensor<T>& seq, const AttentionParams<T>& params,
                                    const Tensor<T>* mask, const Tensor<T>* score_bias, Tensor<T>* attention_out) {
  if (seq.rank() != 3 || seq.dim(2) != params.dim) {
    throw InvalidShape("attention: sequence " + shape_str(seq.shape()) + " does not match dim " +
                       std::to_string(params.dim));
  }
  const Index n = seq.dim(0), l = seq.dim(1), h = params.heads;
  auto q = split_heads(g, params.query(g, seq), h);
  auto k = split_heads(g, params.key(g, seq), h);
  auto v = split_heads(g, params.value(g, seq), h);
  q = scale(g, q, static_cast<T>(1.0 / std::sqrt(static_cast<double>(params.head_dim()))));
  auto scores = batched_matmul(g, q, k, true);  // [N*h, L, L]
  scores = reshape(g, scores, {n, h, l, l});
  if (score_bias) {
    if (score_bias->shape() != Shape{h, l, l}) {
      throw InvalidShape("attention: score bias must be " + shape_str({h, l, l}) + ", got " +
                         shape_str(score_bias->shape()));
    }
    scores = add_broadcast(g, scores, *score_bias);
  }
  if (mask) {
    if (mask->rank() == 2) {
      if (mask->shape() != Shape{l, l}) {
        throw InvalidShape("attention: mask must be " + shape_str({l, l}) + ", got " + shape_str(mask->shape()));
      }
      scores = add_broadcast(g, scores, *mask);
    } else if (mask->rank() == 3 && mask->dim(1) == l && mask->dim(2) == l && n % mask->dim(0) == 0) {
      const Index groups = mask->dim(0);
      Tensor<T> expanded(Shape{groups, h, l, l});
      auto mv = mask->data();
      auto ev = expanded.data();
      for (Index w = 0; w < groups; ++w)
        for (Index hh = 0; hh < h; ++hh)
          std::copy_n(mv.begin() + w * l * l, l * l, ev.begin() + (w * h + hh) * l * l);
      scores = reshape(g, scores, {n / groups, groups, h, l, l});
      scores = add_broadcast(g, scores, expanded);
    } else {
      throw InvalidShape("attention: mask shape " + shape_str(mask->shape()) + " incompatible with " +
                         shape_str(seq.shape()));
    }
  }
  auto attn = softmax(g, scores, -1);
  if (attention_out) *attention_out = reshape(g, attn, {n, h, l, l});
  attn = reshape(g, attn, {n * h, l, l});
  auto ctx = batched_matmul(g, attn, v, false);
  return params.output(g, merge_heads(g, ctx, n, h));
}

template <typename T>
Tensor<T> external_attention(Graph<T>& g, const Tensor<T>& seq, const ExternalMemory<T>& memory,
                             Tensor<T>* attention_out) {
  if (seq.rank() != 3 || memory.keys.rank() != 2 || memory.keys.shape() != memory.values.shape() ||
      seq.dim(2) != memory.keys.dim(1)) {
    throw InvalidShape("external attention: sequence " + shape_str(seq.shape()) + " incompatible with memory " +
                       shape_str(memory.keys.shape()));
  }
  auto attn = linear(g, seq, transpose(g, memory.keys), static_cast<const Tensor<T>*>(nullptr));  // [N,L,S]
  attn = softmax(g, attn, 2);
  attn = l1_normalize(g, attn, 1);
  if (attention_out) *attention_out = attn;
  return linear(g, attn, memory.values, static_cast<const Tensor<T>*>(nullptr));
}

namespace {

void check_window_geometry(Index h, Index w, const WindowSpec& spec) {
  if (spec.window < 1 || h % spec.window != 0 || w % spec.window != 0) {
    throw InvalidShape("window " + std::to_string(spec.window) + " does not tile " + std::to_string(h) + "x" +
                       std::to_string(w));
  }
  if (spec.shift < 0 || spec.shift >= spec.window) throw InvalidArgument("window shift must lie in [0, window)");
}

}  // namespace

template <typename T>
Tensor<T> window_partition(Graph<T>& g, const Tensor<T>& feat, const WindowSpec& spec) {
  if (feat.rank() != 4) throw InvalidShape("window_partition: expected [N,H,W,C], got " + shape_str(feat.shape()));
  const Index n = feat.dim(0), h = feat.dim(1), w = feat.dim(2), c = feat.dim(3);
  check_window_geometry(h, w, spec);
  const Index ws = spec.window, nwx = w / ws, nw = (h / ws) * nwx, l = ws * ws;
  std::vector<Index> rows(static_cast<std::size_t>(n * nw * l));
  std::size_t r = 0;
  for (Index b = 0; b < n * nw; ++b) {
    const Index img = b / nw, win = b % nw;
    const Index wy = win / nwx, wx = win % nwx;
    for (Index t = 0; t < l; ++t) {
      const Index y = (wy * ws + t / ws + spec.shift) % h;
      const Index x = (wx * ws + t % ws + spec.shift) % w;
      rows[r++] = (img * h + y) * w + x;
    }
  }
  return gather_rows(g, feat, std::span<const Index>(rows), Shape{n * nw, l, c});
}

template <typename T>
Tensor<T> window_reverse(Graph<T>& g, const Tensor<T>& windows, const WindowSpec& spec, Index batch, Index height,
                         Index width) {
  check_window_geometry(height, width, spec);
  const Index ws = spec.window, nwx = width / ws, nw = (height / ws) * nwx, l = ws * ws;
  if (windows.rank() != 3 || windows.dim(0) != batch * nw || windows.dim(1) != l) {
    throw InvalidShape("window_reverse: windows " + shape_str(windows.shape()) + " do not match the feature map");
  }
  const Index c = windows.dim(2);
  std::vector<Index> rows(static_cast<std::size_t>(batch * height * width));
  std::size_t r = 0;
  for (Index img = 0; img < batch; ++img)
    for (Index y = 0; y < height; ++y)
      for (Index x = 0; x < width; ++x) {
        const Index sy = (y - spec.shift + height) % height;
        const Index sx = (x - spec.shift + width) % width;
        const Index b = img * nw + (sy / ws) * nwx + sx / ws;
        const Index t = (sy % ws) * ws + sx % ws;
        rows[r++] = b * l + t;
      }
  return gather_rows(g, windows, std::span<const Index>(rows), Shape{batch, height, width, c});
}

template <typename T>
Tensor<T> shifted_window_mask(Index height, Index width, const WindowSpec& spec) {
  check_window_geometry(height, width, spec);
  const Index ws = spec.window, s = spec.shift, nwx = width / ws, nw = (height / ws) * nwx, l = ws * ws;
  auto region = [&](Index v, Index extent) -> int {
    if (s == 0) return 0;
    if (v < extent - ws) return 0;
    if (v < extent - s) return 1;
    return 2;
  };
  Tensor<T> mask(Shape{nw, l, l});
  auto mv = mask.data();
  const T blocked = -std::numeric_limits<T>::infinity();
  for (Index win = 0; win < nw; ++win) {
    const Index wy = win / nwx, wx = win % nwx;
    std::vector<int> label(static_cast<std::size_t>(l));
    for (Index t = 0; t < l; ++t) {
      const Index y = wy * ws + t / ws, x = wx * ws + t % ws;
      label[static_cast<std::size_t>(t)] = region(y, height) * 3 + region(x, width);
    }
    for (Index i = 0; i < l; ++i)
      for (Index j = 0; j < l; ++j)
        mv[(win * l + i) * l + j] =
            label[static_cast<std::size_t>(i)] == label[static_cast<std::size_t>(j)] ? T{0} : blocked;
  }
  return mask;
}

std::vector<Index> relative_position_index(Index window) {
  const Index l = window * window, span = 2 * window - 1;
  std::vector<Index> idx(static_cast<std::size_t>(l * l));
  for (Index i = 0; i < l; ++i)
    for (Index j = 0; j < l; ++j) {
      const Index dy = i / window - j / window + window - 1;
      const Index dx = i % window - j % window + window - 1;
      idx[static_cast<std::size_t>(i * l + j)] = dy * span + dx;
    }
  return idx;
}

template <typename T>
Tensor<T> sequence_pool(Graph<T>& g, const Tensor<T>& seq, const Linear<T>& score, Tensor<T>* weights_out) {
  if (seq.rank() != 3) throw InvalidShape("sequence_pool: expected [N,L,dim], got " + shape_str(seq.shape()));
  if (score.weight.rank() != 2 || score.weight.dim(1) != 1) {
    throw InvalidShape("sequence_pool: score projection must map dim -> 1");
  }
  const Index n = seq.dim(0), l = seq.dim(1), d = seq.dim(2);
  auto s = score(g, seq);             // [N, L, 1]
  s = reshape(g, s, {n, 1, l});
  auto w = softmax(g, s, 2);
  if (weights_out) *weights_out = w;
  auto pooled = batched_matmul(g, w, seq, false);  // [N, 1, dim]
  return reshape(g, pooled, {n, d});
}

template <typename T>
Tensor<T> conv_tokenizer(Graph<T>& g, const Tensor<T>& image, const std::vector<ConvBlock<T>>& blocks) {
  if (image.rank() != 4) throw InvalidShape("conv_tokenizer: expected [N,H,W,C], got " + shape_str(image.shape()));
  if (blocks.empty()) throw InvalidArgument("conv_tokenizer: at least one block required");
  Tensor<T> x = image;
  for (const auto& b : blocks) {
    const Index k = b.kernel.dim(0);
    const Index oh = (x.dim(1) + 2 * b.padding - k) / b.stride + 1;
    if (x.dim(1) + 2 * b.padding < k || x.dim(2) + 2 * b.padding < k || oh < 1) {
      throw InvalidShape("conv_tokenizer: spatial size underflow at " + shape_str(x.shape()));
    }
    x = conv2d(g, x, b.kernel, b.stride, b.padding);
    x = relu(g, x);
    if (b.pool_kernel > 0) {
      if (x.dim(1) + 2 * b.pool_padding < b.pool_kernel || x.dim(2) + 2 * b.pool_padding < b.pool_kernel) {
        throw InvalidShape("conv_tokenizer: spatial size underflow before pooling at " + shape_str(x.shape()));
      }
      x = max_pool2d(g, x, b.pool_kernel, b.pool_stride, b.pool_padding);
    }
  }
  return reshape(g, x, {x.dim(0), x.dim(1) * x.dim(2), x.dim(3)});
}

template <typename T>
Tensor<T> mlp_block(ForwardContext<T>& ctx, const Tensor<T>& seq, const Linear<T>& fc1, const Linear<T>& fc2,
                    double dropout_rate) {
  auto& g = ctx.graph;
  auto x = gelu(g, fc1(g, seq));
  x = dropout(g, x, dropout_rate, ctx.training, ctx.next_seed());
  return fc2(g, x);
}

template <typename T>
Tensor<T> patch_merging(Graph<T>& g, const Tensor<T>& feat, const LayerNorm<T>& norm, const Linear<T>& reduction) {
  if (feat.rank() != 4 || feat.dim(1) % 2 != 0 || feat.dim(2) % 2 != 0) {
    throw InvalidShape("patch_merging: expected [N,H,W,C] with even H and W, got " + shape_str(feat.shape()));
  }
  const Index n = feat.dim(0), h = feat.dim(1), w = feat.dim(2), c = feat.dim(3);
  auto x = reshape(g, feat, {n, h / 2, 2, w / 2, 2, c});
  x = permute(g, x, {0, 1, 3, 4, 2, 5});
  x = reshape(g, x, {n, (h / 2) * (w / 2), 4 * c});
  return reduction(g, norm(g, x));
}

template <typename T>
TransformerBlock<T> TransformerBlock<T>::make(ParameterSet<T>& ps, const std::string& name, Index dim, Index heads,
                                              Index mlp_hidden) {
  TransformerBlock<T> b;
  b.norm1 = LayerNorm<T>::make(ps, name + ".norm1", dim);
  b.attention = AttentionParams<T>::make(ps, name + ".attn", dim, heads);
  b.norm2 = LayerNorm<T>::make(ps, name + ".norm2", dim);
  b.fc1 = Linear<T>::make(ps, name + ".mlp.fc1", dim, mlp_hidden);
  b.fc2 = Linear<T>::make(ps, name + ".mlp.fc2", mlp_hidden, dim);
  return b;
}

template <typename T>
Tensor<T> TransformerBlock<T>::operator()(ForwardContext<T>& ctx, const Tensor<T>& x) const {
  auto& g = ctx.graph;
  auto y = add(g, x, multi_head_self_attention(g, norm1(g, x), attention));
  return add(g, y, mlp_block(ctx, norm2(g, y), fc1, fc2, ctx.dropout_rate));
}

template <typename T>
SwinBlock<T> SwinBlock<T>::make(ParameterSet<T>& ps, const std::string& name, Index dim, Index heads,
                                Index mlp_hidden, WindowSpec spec, Index height, Index width) {
  check_window_geometry(height, width, spec);
  SwinBlock<T> b;
  b.norm1 = LayerNorm<T>::make(ps, name + ".norm1", dim);
  b.attention = AttentionParams<T>::make(ps, name + ".attn", dim, heads);
  const Index span = 2 * spec.window - 1;
  b.relative_bias = ps.add(name + ".attn.relative_bias", {span * span, heads}, Init::trunc_normal);
  b.norm2 = LayerNorm<T>::make(ps, name + ".norm2", dim);
  b.fc1 = Linear<T>::make(ps, name + ".mlp.fc1", dim, mlp_hidden);
  b.fc2 = Linear<T>::make(ps, name + ".mlp.fc2", mlp_hidden, dim);
  b.spec = spec;
  b.height = height;
  b.width = width;
  if (spec.shift > 0) b.mask = shifted_window_mask<T>(height, width, spec);
  b.relative_index = relative_position_index(spec.window);
  return b;
}

template <typename T>
Tensor<T> SwinBlock<T>::operator()(ForwardContext<T>& ctx, const Tensor<T>& x) const {
  auto& g = ctx.graph;
  const Index n = x.dim(0), c = x.dim(2), l = spec.window * spec.window, h = attention.heads;
  if (x.dim(1) != height * width) throw InvalidShape("swin block: token count does not match its grid");
  auto bias = gather_rows(g, relative_bias, std::span<const Index>(relative_index), Shape{l * l, h});
  bias = permute(g, bias, {1, 0});
  bias = reshape(g, bias, {h, l, l});
  auto y = reshape(g, norm1(g, x), {n, height, width, c});
  y = window_partition(g, y, spec);
  y = multi_head_self_attention(g, y, attention, mask.defined() ? &mask : nullptr, &bias);
  y = window_reverse(g, y, spec, n, height, width);
  y = reshape(g, y, {n, height * width, c});
  auto z = add(g, x, y);
  return add(g, z, mlp_block(ctx, norm2(g, z), fc1, fc2, ctx.dropout_rate));
}

template <typename T>
ExternalAttentionBlock<T> ExternalAttentionBlock<T>::make(ParameterSet<T>& ps, const std::string& name, Index dim,
                                                          Index units, Index mlp_hidden) {
  ExternalAttentionBlock<T> b;
  b.norm1 = LayerNorm<T>::make(ps, name + ".norm1", dim);
  b.memory = ExternalMemory<T>::make(ps, name + ".ea", units, dim);
  b.norm2 = LayerNorm<T>::make(ps, name + ".norm2", dim);
  b.fc1 = Linear<T>::make(ps, name + ".mlp.fc1", dim, mlp_hidden);
  b.fc2 = Linear<T>::make(ps, name + ".mlp.fc2", mlp_hidden, dim);
  return b;
}

template <typename T>
Tensor<T> ExternalAttentionBlock<T>::operator()(ForwardContext<T>& ctx, const Tensor<T>& x) const {
  auto& g = ctx.graph;
  auto y = add(g, x, external_attention(g, norm1(g, x), memory));
  return add(g, y, mlp_block(ctx, norm2(g, y), fc1, fc2, ctx.dropout_rate));
}

#define FLOOD_LAYERS_INSTANTIATE(T)                                                                                 \
  template class ParameterSet<T>;                                                                                  \
  template struct Linear<T>;                                                                                       \
  template struct LayerNorm<T>;                                                                                    \
  template struct AttentionParams<T>;                                                                              \
  template struct ExternalMemory<T>;                                                                               \
  template struct TransformerBlock<T>;                                                                             \
  template struct SwinBlock<T>;                                                                                    \
  template struct ExternalAttentionBlock<T>;                                                                       \
  template Tensor<T> patch_embed<T>(Graph<T>&, const Tensor<T>&, Index, const Linear<T>&);                         \
  template Tensor<T> add_positional_embedding<T>(Graph<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>*); \
  template Tensor<T> multi_head_self_attention<T>(Graph<T>&, const Tensor<T>&, const AttentionParams<T>&,          \
                                                  const Tensor<T>*, const Tensor<T>*, Tensor<T>*);                 \
  template Tensor<T> external_attention<T>(Graph<T>&, const Tensor<T>&, const ExternalMemory<T>&, Tensor<T>*);     \
  template Tensor<T> window_partition<T>(Graph<T>&, const Tensor<T>&, const WindowSpec&);                          \
  template Tensor<T> window_reverse<T>(Graph<T>&, const Tensor<T>&, const WindowSpec&, Index, Index, Index);       \
  template Tensor<T> shifted_window_mask<T>(Index, Index, const WindowSpec&);                                      \
  template Tensor<T> sequence_pool<T>(Graph<T>&, const Tensor<T>&, const Linear<T>&, Tensor<T>*);                  \
  template Tensor<T> conv_tokenizer<T>(Graph<T>&, const Tensor<T>&, const std::vector<ConvBlock<T>>&);             \
  template Tensor<T> mlp_block<T>(ForwardContext<T>&, const Tensor<T>&, const Linear<T>&, const Linear<T>&,        \
                                  double);                                                                         \
  template Tensor<T> patch_merging<T>(Graph<T>&, const Tensor<T>&, const LayerNorm<T>&, const Linear<T>&);

FLOOD_LAYERS_INSTANTIATE(float)
FLOOD_LAYERS_INSTANTIATE(double)

}  // namespace flood
