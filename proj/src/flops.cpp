#include "flood/flops.hpp"

namespace flood {

Index linear_flops(Index in, Index out, Index tokens, bool bias) {
  return tokens * (2 * in * out + (bias ? out : 0));
}

Index conv2d_flops(Index kernel_h, Index kernel_w, Index in_channels, Index out_channels, Index out_h, Index out_w,
                   bool bias) {
  const Index outputs = out_h * out_w * out_channels;
  return 2 * kernel_h * kernel_w * in_channels * outputs + (bias ? outputs : 0);
}

Index attention_product_flops(Index length, Index dim) { return 2 * (2 * length * length * dim); }

Index external_attention_flops(Index length, Index units, Index dim) { return 2 * (2 * length * units * dim); }

namespace {

struct Accumulator {
  FlopReport report;
  void add(std::string name, Index f) {
    report.total += f;
    report.layers.push_back({std::move(name), f});
  }
};

void transformer_block(Accumulator& acc, const std::string& name, Index l, Index d, Index hidden) {
  acc.add(name + ".attn.qkv", 3 * linear_flops(d, d, l));
  acc.add(name + ".attn.scores", attention_product_flops(l, d));
  acc.add(name + ".attn.output", linear_flops(d, d, l));
  acc.add(name + ".mlp", linear_flops(d, hidden, l) + linear_flops(hidden, d, l));
}

}  // namespace

FlopReport estimate_flops(const ModelConfig& c) {
  c.validate();
  Accumulator acc;
  switch (c.kind) {
    case ModelKind::cct: {
      Index h = c.height, w = c.width, cin = c.channels;
      for (std::size_t i = 0; i < c.tokenizer.size(); ++i) {
        const auto& b = c.tokenizer[i];
        h = (h + 2 * b.padding - b.kernel) / b.stride + 1;
        w = (w + 2 * b.padding - b.kernel) / b.stride + 1;
        acc.add("tokenizer.conv" + std::to_string(i), conv2d_flops(b.kernel, b.kernel, cin, b.out_channels, h, w, false));
        if (b.pool_kernel > 0) {
          h = (h + 2 * b.pool_padding - b.pool_kernel) / b.pool_stride + 1;
          w = (w + 2 * b.pool_padding - b.pool_kernel) / b.pool_stride + 1;
        }
        cin = b.out_channels;
      }
      const Index l = h * w;
      for (Index i = 0; i < c.depth; ++i)
        transformer_block(acc, "blocks." + std::to_string(i), l, c.dim, c.mlp_hidden(c.dim));
      acc.add("seq_pool", linear_flops(c.dim, 1, l) + 2 * l * c.dim);
      acc.add("head", linear_flops(c.dim, c.num_classes));
      break;
    }
    case ModelKind::vit: {
      const Index l = (c.height / c.patch_size) * (c.width / c.patch_size);
      acc.add("patch_embed", linear_flops(c.patch_size * c.patch_size * c.channels, c.dim, l));
      for (Index i = 0; i < c.depth; ++i)
        transformer_block(acc, "blocks." + std::to_string(i), l + 1, c.dim, c.mlp_hidden(c.dim));
      acc.add("head", linear_flops(c.dim, c.num_classes));
      break;
    }
    case ModelKind::swin: {
      Index gh = c.height / c.patch_size, gw = c.width / c.patch_size;
      acc.add("patch_embed", linear_flops(c.patch_size * c.patch_size * c.channels, c.stage_dims[0], gh * gw));
      for (std::size_t s = 0; s < c.stage_dims.size(); ++s) {
        const Index d = c.stage_dims[s];
        const std::string prefix = "stages." + std::to_string(s);
        if (s > 0) {
          gh /= 2;
          gw /= 2;
          acc.add(prefix + ".merge", linear_flops(4 * c.stage_dims[s - 1], d, gh * gw, false));
        }
        const Index ws = c.window_sizes[s];
        const Index windows = (gh / ws) * (gw / ws), l = gh * gw;
        for (Index i = 0; i < c.stage_depths[s]; ++i) {
          const std::string name = prefix + ".blocks." + std::to_string(i);
          acc.add(name + ".attn.qkv", 3 * linear_flops(d, d, l));
          acc.add(name + ".attn.scores", windows * attention_product_flops(ws * ws, d));
          acc.add(name + ".attn.output", linear_flops(d, d, l));
          acc.add(name + ".mlp", linear_flops(d, c.mlp_hidden(d), l) + linear_flops(c.mlp_hidden(d), d, l));
        }
      }
      acc.add("head", linear_flops(c.stage_dims.back(), c.num_classes));
      break;
    }
    case ModelKind::eanet: {
      const Index l = (c.height / c.patch_size) * (c.width / c.patch_size);
      acc.add("patch_embed", linear_flops(c.patch_size * c.patch_size * c.channels, c.dim, l));
      for (Index i = 0; i < c.depth; ++i) {
        const std::string name = "blocks." + std::to_string(i);
        acc.add(name + ".external_attn", external_attention_flops(l, c.memory_units, c.dim));
        acc.add(name + ".mlp", linear_flops(c.dim, c.mlp_hidden(c.dim), l) + linear_flops(c.mlp_hidden(c.dim), c.dim, l));
      }
      acc.add("head", linear_flops(c.dim, c.num_classes));
      break;
    }
  }
  return acc.report;
}

}  // namespace flood
