#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "w2s/autodiff.hpp"
#include "w2s/model.hpp"
#include "w2s/rng.hpp"
#include "w2s/synthetic.hpp"

namespace w2s::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal(0.0, scale);
  return t;
}

inline ModelConfig tiny_config(std::uint64_t seed = 1, bool adapters = false) {
  ModelConfig c;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_seq_len = 16;
  c.seed = seed;
  c.adapter.enabled = adapters;
  c.adapter.rank = 2;
  c.adapter.alpha = 2.0;
  return c;
}

inline Sequence random_sequence(Rng& rng, std::size_t len, std::size_t prompt_len) {
  Sequence s;
  s.prompt_len = prompt_len;
  for (std::size_t i = 0; i < len; ++i) s.tokens.push_back(1 + static_cast<int>(rng.below(255)));
  return s;
}

// Two domains, small enough for end-to-end tests.
inline CategorySpec tiny_category(double rho = 0.9) {
  CategorySpec spec;
  spec.name = "tiny";
  spec.weights = {1.0, -0.8};
  spec.max_count = 2;
  spec.temperature = 0.5;
  spec.prompt_len = 3;
  spec.response_len = 6;
  spec.domains = {{"src", "mnop", "0123", "ab", rho, 0.0, 120, 20, 40},
                  {"tgt", "qrst", "!#$%", "ef", 0.0, 0.0, 40, 20, 40}};
  return spec;
}

// Fresh directory under the build tree, emptied on construction.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("w2s_unit_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace w2s::test
