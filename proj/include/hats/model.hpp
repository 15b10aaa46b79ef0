#pragma once

#include <string>
#include <vector>

#include "hats/image.hpp"
#include "hats/losses.hpp"
#include "hats/rng.hpp"
#include "hats/tensor.hpp"

namespace hats::model {

/// Magnification → scale-token row: {5×→0, 10×→1, 20×→2, 40×→3}.
int scale_token_index(int magnification);

struct ModelConfig {
  int n_classes = 0;
  int image_side = 64;
  int patch = 8;   // power of two; each halving is one decoder upsample stage
  int d = 64;
  int blocks = 4;
  int heads = 4;
  int dec_channels = 8;
  std::vector<int> head_channels{8, 8, 8, 2};  // 1×1 conv chain of the dynamic head

  void validate() const;
  int grid_side() const { return image_side / patch; }
  int n_patches() const { return grid_side() * grid_side(); }
  /// Total dynamic-head parameter count: Σ layers (in·out + out). 162 for
  /// the default 8→8→8→2 chain.
  int omega_len() const;
  /// Channel widths entering each decoder upsample stage, starting at d and
  /// halving (floor dec_channels); the final stage always emits dec_channels.
  std::vector<int> decoder_channels() const;

  bool operator==(const ModelConfig&) const = default;
};

struct SegOutput {
  ad::Tensor logits;  // (H·W)×2
  ad::Tensor prob;    // (H·W)×1, softmax channel 1
  int side = 0;
  losses::MaskTensor prob_mask() const;
};

/// Token-conditioned segmentation network: ViT-style encoder with per-block
/// prompt-token re-injection, cross-attention mask decoder over a learned
/// dense embedding, and a dynamically parameterized per-pixel head.
///
/// Forward passes build fresh autodiff graphs over the persistent parameter
/// leaves and are safe to run concurrently over frozen weights; backward
/// accumulates into shared leaf gradients and must be serialized.
class Network {
 public:
  Network(ModelConfig cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<std::pair<std::string, ad::Tensor>>& parameters() const { return params_; }
  ad::Tensor param(const std::string& name) const;
  std::size_t parameter_count() const;

  struct Encoded {
    ad::Tensor F;       // n_patches×d final patch tokens
    ad::Tensor tokens;  // 2×d final prompt-token states
  };

  /// Patch-embeds the image, prepends the class and scale tokens, and runs
  /// the transformer stack, overwriting the two prompt positions with the
  /// bank rows before every block.
  Encoded encode(const image::Image& img, int class_id, int magnification) const;

  /// One bidirectional cross-attention pass between the prompt set
  /// [GAP(F), T_c[i], T_s[m]] and F + dense embedding, then nearest-2× +
  /// 1×1 conv stages up to full resolution: returns (H·W)×dec_channels.
  ad::Tensor decode(const ad::Tensor& F, int class_id, int magnification) const;

  /// Affine controller from [GAP(F) ‖ T_c[i] ‖ T_s[m]] (1×3d) to 1×ω_len.
  ad::Tensor head_params(const ad::Tensor& F, int class_id, int magnification) const;

  /// Unpacks ω into the 1×1 conv chain (ReLU between layers, none after the
  /// last), applies it per pixel, softmax over the 2 output channels.
  SegOutput apply_dynamic_head(const ad::Tensor& e_upscale, const ad::Tensor& omega) const;

  SegOutput forward(const image::Image& img, int class_id, int magnification) const;

 private:
  ad::Tensor register_param(const std::string& name, int rows, int cols, double init_std, Rng& rng,
                            double fill = 0.0);
  ad::Tensor class_token(int class_id) const;
  ad::Tensor scale_token(int magnification) const;

  ModelConfig cfg_;
  std::vector<std::pair<std::string, ad::Tensor>> params_;
};

/// Image pixels as a constant n_patches×(3·patch²) tensor, values in [0,1].
ad::Tensor patchify(const image::Image& img, int patch);

}  // namespace hats::model
