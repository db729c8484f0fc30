#pragma once

#include <string>
#include <vector>

#include "flood/model_config.hpp"

// Analytic forward-pass FLOP accounting. One multiply-accumulate counts as two
// FLOPs; bias additions count one FLOP per output element. Normalizations,
// activations, softmax and pooling are not counted.
namespace flood {

inline constexpr const char* kFlopConvention =
    "1 multiply-accumulate = 2 FLOPs; bias add = 1 FLOP; norms, activations, softmax and pooling excluded";

Index linear_flops(Index in, Index out, Index tokens = 1, bool bias = true);
Index conv2d_flops(Index kernel_h, Index kernel_w, Index in_channels, Index out_channels, Index out_h, Index out_w,
                   bool bias = true);
// Q K^T and A V for one sequence of length L and width dim.
Index attention_product_flops(Index length, Index dim);
// Both memory products of external attention.
Index external_attention_flops(Index length, Index units, Index dim);

struct FlopEntry {
  std::string layer;
  Index flops = 0;
};

struct FlopReport {
  Index total = 0;  // one image
  std::vector<FlopEntry> layers;
  std::string convention = kFlopConvention;
};

FlopReport estimate_flops(const ModelConfig& config);

}  // namespace flood
