#include "flood/architectures.hpp"

#include <algorithm>

namespace flood {

namespace {

template <typename T>
Tensor<T> embed_dropout(ForwardContext<T>& ctx, const Tensor<T>& x) {
  return dropout(ctx.graph, x, ctx.dropout_rate, ctx.training, ctx.next_seed());
}

template <typename T>
class CctNet final : public Network<T> {
 public:
  CctNet(const ModelConfig& c, ParameterSet<T>& ps) {
    Index cin = c.channels;
    for (std::size_t i = 0; i < c.tokenizer.size(); ++i) {
      const auto& b = c.tokenizer[i];
      ConvBlock<T> blk;
      blk.kernel = ps.add("tokenizer.conv" + std::to_string(i) + ".kernel", {b.kernel, b.kernel, cin, b.out_channels},
                          Init::fan_in);
      blk.stride = b.stride;
      blk.padding = b.padding;
      blk.pool_kernel = b.pool_kernel;
      blk.pool_stride = b.pool_stride;
      blk.pool_padding = b.pool_padding;
      tokenizer_.push_back(blk);
      cin = b.out_channels;
    }
    const auto [gh, gw] = c.token_grid();
    if (c.positional_embedding) {
      pos_ = ps.add("pos_embedding", {gh * gw, c.dim}, Init::trunc_normal, !c.freeze_positional);
    }
    for (Index i = 0; i < c.depth; ++i) {
      blocks_.push_back(
          TransformerBlock<T>::make(ps, "blocks." + std::to_string(i), c.dim, c.heads, c.mlp_hidden(c.dim)));
    }
    norm_ = LayerNorm<T>::make(ps, "norm", c.dim);
    pool_ = Linear<T>::make(ps, "seq_pool", c.dim, 1);
    head_ = Linear<T>::make(ps, "head", c.dim, c.num_classes);
  }

  Tensor<T> forward(ForwardContext<T>& ctx, const Tensor<T>& images) const override {
    auto& g = ctx.graph;
    auto x = conv_tokenizer(g, images, tokenizer_);
    if (pos_.defined()) x = add_positional_embedding(g, x, pos_, static_cast<const Tensor<T>*>(nullptr));
    x = embed_dropout(ctx, x);
    for (const auto& b : blocks_) x = b(ctx, x);
    x = sequence_pool(g, norm_(g, x), pool_);
    return head_(g, x);
  }

 private:
  std::vector<ConvBlock<T>> tokenizer_;
  Tensor<T> pos_;
  std::vector<TransformerBlock<T>> blocks_;
  LayerNorm<T> norm_;
  Linear<T> pool_, head_;
};

template <typename T>
class VitNet final : public Network<T> {
 public:
  VitNet(const ModelConfig& c, ParameterSet<T>& ps) : patch_(c.patch_size) {
    const Index l = (c.height / c.patch_size) * (c.width / c.patch_size);
    embed_ = Linear<T>::make(ps, "patch_embed", c.patch_size * c.patch_size * c.channels, c.dim);
    class_token_ = ps.add("class_token", {c.dim}, Init::trunc_normal);
    if (c.positional_embedding) {
      pos_ = ps.add("pos_embedding", {l + 1, c.dim}, Init::trunc_normal, !c.freeze_positional);
    }
    for (Index i = 0; i < c.depth; ++i) {
      blocks_.push_back(
          TransformerBlock<T>::make(ps, "blocks." + std::to_string(i), c.dim, c.heads, c.mlp_hidden(c.dim)));
    }
    norm_ = LayerNorm<T>::make(ps, "norm", c.dim);
    head_ = Linear<T>::make(ps, "head", c.dim, c.num_classes);
  }

  Tensor<T> forward(ForwardContext<T>& ctx, const Tensor<T>& images) const override {
    auto& g = ctx.graph;
    auto x = patch_embed(g, images, patch_, embed_);
    const Index n = x.dim(0), l = x.dim(1) + 1, d = x.dim(2);
    if (pos_.defined()) {
      x = add_positional_embedding(g, x, pos_, &class_token_);
    } else {
      std::vector<Index> zeros(static_cast<std::size_t>(n), 0);
      auto tok = gather_rows(g, class_token_, std::span<const Index>(zeros), Shape{n, 1, d});
      x = concat(g, std::vector<Tensor<T>>{tok, x}, 1);
    }
    x = embed_dropout(ctx, x);
    for (const auto& b : blocks_) x = b(ctx, x);
    x = norm_(g, x);
    std::vector<Index> rows(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = i * l;
    x = gather_rows(g, x, std::span<const Index>(rows), Shape{n, d});
    return head_(g, x);
  }

 private:
  Index patch_;
  Linear<T> embed_;
  Tensor<T> class_token_, pos_;
  std::vector<TransformerBlock<T>> blocks_;
  LayerNorm<T> norm_;
  Linear<T> head_;
};

template <typename T>
class SwinNet final : public Network<T> {
 public:
  SwinNet(const ModelConfig& c, ParameterSet<T>& ps) : patch_(c.patch_size) {
    const Index d0 = c.stage_dims.front();
    embed_ = Linear<T>::make(ps, "patch_embed", c.patch_size * c.patch_size * c.channels, d0);
    embed_norm_ = LayerNorm<T>::make(ps, "patch_embed.norm", d0);
    Index gh = c.height / c.patch_size, gw = c.width / c.patch_size;
    if (c.positional_embedding) {
      pos_ = ps.add("pos_embedding", {gh * gw, d0}, Init::trunc_normal, !c.freeze_positional);
    }
    for (std::size_t s = 0; s < c.stage_dims.size(); ++s) {
      Stage st;
      const Index d = c.stage_dims[s];
      const std::string prefix = "stages." + std::to_string(s);
      if (s > 0) {
        const Index prev = c.stage_dims[s - 1];
        st.merge_norm = LayerNorm<T>::make(ps, prefix + ".merge.norm", 4 * prev);
        st.merge = Linear<T>::make(ps, prefix + ".merge.reduction", 4 * prev, d, false);
        gh /= 2;
        gw /= 2;
      }
      st.height = gh;
      st.width = gw;
      for (Index i = 0; i < c.stage_depths[s]; ++i) {
        WindowSpec spec{c.window_sizes[s], i % 2 == 1 ? c.shift_sizes[s] : 0};
        st.blocks.push_back(SwinBlock<T>::make(ps, prefix + ".blocks." + std::to_string(i), d, c.stage_heads[s],
                                               c.mlp_hidden(d), spec, gh, gw));
      }
      stages_.push_back(std::move(st));
    }
    norm_ = LayerNorm<T>::make(ps, "norm", c.stage_dims.back());
    head_ = Linear<T>::make(ps, "head", c.stage_dims.back(), c.num_classes);
  }

  Tensor<T> forward(ForwardContext<T>& ctx, const Tensor<T>& images) const override {
    auto& g = ctx.graph;
    auto x = embed_norm_(g, patch_embed(g, images, patch_, embed_));
    if (pos_.defined()) x = add_positional_embedding(g, x, pos_, static_cast<const Tensor<T>*>(nullptr));
    x = embed_dropout(ctx, x);
    const Index n = x.dim(0);
    Index gh = images.dim(1) / patch_, gw = images.dim(2) / patch_;
    for (const auto& st : stages_) {
      if (st.merge.weight.defined()) {
        x = reshape(g, x, {n, gh, gw, x.dim(2)});
        x = patch_merging(g, x, st.merge_norm, st.merge);
        gh /= 2;
        gw /= 2;
      }
      for (const auto& b : st.blocks) x = b(ctx, x);
    }
    x = mean_axis(g, norm_(g, x), 1);
    return head_(g, x);
  }

 private:
  struct Stage {
    LayerNorm<T> merge_norm;
    Linear<T> merge;
    Index height = 0, width = 0;
    std::vector<SwinBlock<T>> blocks;
  };
  Index patch_;
  Linear<T> embed_;
  LayerNorm<T> embed_norm_;
  Tensor<T> pos_;
  std::vector<Stage> stages_;
  LayerNorm<T> norm_;
  Linear<T> head_;
};

template <typename T>
class EaNet final : public Network<T> {
 public:
  EaNet(const ModelConfig& c, ParameterSet<T>& ps) : patch_(c.patch_size) {
    const Index l = (c.height / c.patch_size) * (c.width / c.patch_size);
    embed_ = Linear<T>::make(ps, "patch_embed", c.patch_size * c.patch_size * c.channels, c.dim);
    if (c.positional_embedding) {
      pos_ = ps.add("pos_embedding", {l, c.dim}, Init::trunc_normal, !c.freeze_positional);
    }
    for (Index i = 0; i < c.depth; ++i) {
      blocks_.push_back(ExternalAttentionBlock<T>::make(ps, "blocks." + std::to_string(i), c.dim, c.memory_units,
                                                        c.mlp_hidden(c.dim)));
    }
    norm_ = LayerNorm<T>::make(ps, "norm", c.dim);
    head_ = Linear<T>::make(ps, "head", c.dim, c.num_classes);
  }

  Tensor<T> forward(ForwardContext<T>& ctx, const Tensor<T>& images) const override {
    auto& g = ctx.graph;
    auto x = patch_embed(g, images, patch_, embed_);
    if (pos_.defined()) x = add_positional_embedding(g, x, pos_, static_cast<const Tensor<T>*>(nullptr));
    x = embed_dropout(ctx, x);
    for (const auto& b : blocks_) x = b(ctx, x);
    x = mean_axis(g, norm_(g, x), 1);
    return head_(g, x);
  }

 private:
  Index patch_;
  Linear<T> embed_;
  Tensor<T> pos_;
  std::vector<ExternalAttentionBlock<T>> blocks_;
  LayerNorm<T> norm_;
  Linear<T> head_;
};

}  // namespace

template <typename T>
Classifier<T>::Classifier(ModelConfig config) : config_(std::move(config)), params_(config_.seed) {
  config_.validate();
  switch (config_.kind) {
    case ModelKind::cct: net_ = std::make_unique<CctNet<T>>(config_, params_); break;
    case ModelKind::vit: net_ = std::make_unique<VitNet<T>>(config_, params_); break;
    case ModelKind::swin: net_ = std::make_unique<SwinNet<T>>(config_, params_); break;
    case ModelKind::eanet: net_ = std::make_unique<EaNet<T>>(config_, params_); break;
  }
}

template <typename T>
Tensor<T> Classifier<T>::logits(ForwardContext<T>& ctx, const Tensor<T>& images) const {
  if (images.rank() != 4 || images.dim(1) != config_.height || images.dim(2) != config_.width ||
      images.dim(3) != config_.channels) {
    throw InvalidShape("model expects [N," + std::to_string(config_.height) + "," + std::to_string(config_.width) +
                       "," + std::to_string(config_.channels) + "], got " + shape_str(images.shape()));
  }
  return net_->forward(ctx, images);
}

template <typename T>
std::vector<std::vector<T>> Classifier<T>::snapshot() const {
  std::vector<std::vector<T>> out;
  out.reserve(params_.size());
  for (const auto& p : params_.items()) {
    auto v = p.value.data();
    out.emplace_back(v.begin(), v.end());
  }
  return out;
}

template <typename T>
void Classifier<T>::restore(const std::vector<std::vector<T>>& values) {
  if (values.size() != params_.size()) throw InvalidArgument("restore: parameter count mismatch");
  auto& items = params_.items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto dst = items[i].value.data();
    if (values[i].size() != dst.size()) throw InvalidShape("restore: size mismatch for " + items[i].name);
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

template <typename T>
Tensor<T> forward_classify(const Classifier<T>& model, const Tensor<T>& batch) {
  Graph<T> g(false);
  ForwardContext<T> ctx{g};
  return softmax(g, model.logits(ctx, batch), 1);
}

template <typename T>
Tensor<T> classification_loss(ForwardContext<T>& ctx, const Classifier<T>& model, const Tensor<T>& batch,
                              std::span<const int> labels) {
  return cross_entropy_logits(ctx.graph, model.logits(ctx, batch), labels);
}

template class Classifier<float>;
template class Classifier<double>;
template Tensor<float> forward_classify<float>(const Classifier<float>&, const Tensor<float>&);
template Tensor<double> forward_classify<double>(const Classifier<double>&, const Tensor<double>&);
template Tensor<float> classification_loss<float>(ForwardContext<float>&, const Classifier<float>&,
                                                  const Tensor<float>&, std::span<const int>);
template Tensor<double> classification_loss<double>(ForwardContext<double>&, const Classifier<double>&,
                                                    const Tensor<double>&, std::span<const int>);

}  // namespace flood
