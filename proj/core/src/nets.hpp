#pragma once

#include <algorithm>
#include <vector>

#include <torch/torch.h>

namespace replan::nets {

inline int ilog2(int v) {
  int n = 0;
  while ((1 << n) < v) ++n;
  return n;
}

// Stride-2 convolutions; each halves the spatial size.
inline torch::nn::Sequential conv_down(int in, const std::vector<int>& widths) {
  namespace nn = torch::nn;
  nn::Sequential seq;
  int c = in;
  for (int w : widths) {
    seq->push_back(nn::Conv2d(nn::Conv2dOptions(c, w, 4).stride(2).padding(1)));
    seq->push_back(nn::CELU());
    c = w;
  }
  return seq;
}

// Upsamples [N, in, s, s] by 2^len(widths); the last layer has no activation.
inline torch::nn::Sequential conv_up(int in, const std::vector<int>& widths, int out) {
  namespace nn = torch::nn;
  nn::Sequential seq;
  int c = in;
  for (int w : widths) {
    seq->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(c, w, 4).stride(2).padding(1)));
    seq->push_back(nn::GroupNorm(nn::GroupNormOptions(std::min(4, w), w)));
    seq->push_back(nn::CELU());
    c = w;
  }
  seq->push_back(nn::Conv2d(nn::Conv2dOptions(c, out, 3).padding(1)));
  return seq;
}

inline std::vector<int> widths_down(int depth, int base) {
  std::vector<int> w;
  for (int i = 0; i < depth; ++i) w.push_back(base * (1 << std::min(i, 2)));
  return w;
}

inline std::vector<int> widths_up(int depth, int base) {
  auto w = widths_down(depth, base);
  std::reverse(w.begin(), w.end());
  return w;
}

// Fully connected stack with ReLU between layers and none after the last.
inline torch::nn::Sequential mlp(const std::vector<int>& sizes) {
  namespace nn = torch::nn;
  nn::Sequential seq;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    seq->push_back(nn::Linear(sizes[i], sizes[i + 1]));
    if (i + 2 < sizes.size()) seq->push_back(nn::ReLU());
  }
  return seq;
}

}  // namespace replan::nets
