#pragma once

#include <string>
#include <utility>
#include <vector>

#include "kale/encoder.hpp"

namespace kale {

// Binary encoder checkpoint:
//   magic "KALEMDL1"
//   u32 LE  byte length of the UTF-8 config block (key=value lines)
//   config block
//   u32 LE  tensor count
//   per tensor: u16 LE name length, name, u8 rank, u32 LE dims, f32 LE data
struct Checkpoint {
  EncoderConfig config;
  // Config-block keys beyond the architecture fields (e.g. provenance).
  std::vector<std::pair<std::string, std::string>> extras;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  TransformerEncoder<float> build() const {
    return TransformerEncoder<float>::from_parameters(config, tensors);
  }
};

void save_checkpoint(const TransformerEncoder<float>& model, const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& extras = {});

Checkpoint load_checkpoint(const std::string& path);

}  // namespace kale
