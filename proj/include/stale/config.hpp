// Copyright 2026 The stale-lab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <string>

#include "stale/common.hpp"
#include "stale/tensor_io.hpp"

namespace stale {

// How class-name tokens become text embeddings.
enum class TextMode {
  kTransformer,  // learnable contexts + token through a small transformer
  kAdditive,     // precomputed table + mean prompt context added
};

// Hyperparameters of the detection model.
struct ModelConfig {
  Index input_dim = 32;  // 2d, set from the corpus feature matrix
  Index embed_dim = 64;  // C
  Index token_dim = 64;  // C'
  int heads = 4;
  int enc_layers = 2;
  int ffn_mult = 2;
  bool positional_encoding = false;  // off: permutation equivariance over time

  // text side
  Index n_ctx = 50;  // learnable prompt context length
  int text_layers = 2;
  int text_heads = 4;
  Index max_text_len = 77;
  TextMode text_mode = TextMode::kTransformer;

  // representation masking
  Index n_queries = 20;
  int dec_layers = 2;
  double theta_bin = 0.5;
  bool mask_gating = true;  // ablation: false feeds F_vis straight through

  // classifier
  double tau_init = 0.07;

  // consistency projections
  Index consistency_dim = 64;  // C_s
  Index top_k = 10;
  double theta_c = 0.5;
  double theta_m = 0.5;

  Index snippets = 100;  // T

  void validate() const {
    require(input_dim >= 1 && embed_dim >= 1 && token_dim >= 1,
            "model config: dims must be >= 1");
    require(embed_dim % heads == 0, "model config: heads must divide C");
    require(token_dim % text_heads == 0,
            "model config: text heads must divide C'");
    require(n_queries >= 1, "model config: need at least one mask query");
    require(0.0 < theta_bin && theta_bin < 1.0,
            "model config: theta_bin in (0,1)");
    require(0.0 < theta_c && theta_c < 1.0 && 0.0 < theta_m && theta_m < 1.0,
            "model config: thresholds in (0,1)");
    require(top_k >= 1, "model config: top_k >= 1");
    require(n_ctx >= 0, "model config: n_ctx >= 0");
    require(n_ctx + 1 <= max_text_len,
            "model config: context length exceeds text encoder maximum");
    require(snippets >= 1, "model config: snippets >= 1");
  }

  json to_json() const {
    return json{{"input_dim", input_dim},
                {"embed_dim", embed_dim},
                {"token_dim", token_dim},
                {"heads", heads},
                {"enc_layers", enc_layers},
                {"ffn_mult", ffn_mult},
                {"positional_encoding", positional_encoding},
                {"n_ctx", n_ctx},
                {"text_layers", text_layers},
                {"text_heads", text_heads},
                {"max_text_len", max_text_len},
                {"text_mode",
                 text_mode == TextMode::kTransformer ? "transformer"
                                                     : "additive"},
                {"n_queries", n_queries},
                {"dec_layers", dec_layers},
                {"theta_bin", theta_bin},
                {"mask_gating", mask_gating},
                {"tau_init", tau_init},
                {"consistency_dim", consistency_dim},
                {"top_k", top_k},
                {"theta_c", theta_c},
                {"theta_m", theta_m},
                {"snippets", snippets}};
  }

  static ModelConfig from_json(const json& j) {
    ModelConfig c;
    c.input_dim = j.value("input_dim", c.input_dim);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.token_dim = j.value("token_dim", c.token_dim);
    c.heads = j.value("heads", c.heads);
    c.enc_layers = j.value("enc_layers", c.enc_layers);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
    c.positional_encoding =
        j.value("positional_encoding", c.positional_encoding);
    c.n_ctx = j.value("n_ctx", c.n_ctx);
    c.text_layers = j.value("text_layers", c.text_layers);
    c.text_heads = j.value("text_heads", c.text_heads);
    c.max_text_len = j.value("max_text_len", c.max_text_len);
    if (j.value("text_mode", "transformer") == std::string("additive"))
      c.text_mode = TextMode::kAdditive;
    c.n_queries = j.value("n_queries", c.n_queries);
    c.dec_layers = j.value("dec_layers", c.dec_layers);
    c.theta_bin = j.value("theta_bin", c.theta_bin);
    c.mask_gating = j.value("mask_gating", c.mask_gating);
    c.tau_init = j.value("tau_init", c.tau_init);
    c.consistency_dim = j.value("consistency_dim", c.consistency_dim);
    c.top_k = j.value("top_k", c.top_k);
    c.theta_c = j.value("theta_c", c.theta_c);
    c.theta_m = j.value("theta_m", c.theta_m);
    c.snippets = j.value("snippets", c.snippets);
    c.validate();
    return c;
  }
};

}  // namespace stale
