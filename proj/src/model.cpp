#include "hats/model.hpp"

#include <cmath>

#include "hats/util.hpp"

namespace hats::model {

using ad::Tensor;

int scale_token_index(int magnification) {
  switch (magnification) {
    case 5: return 0;
    case 10: return 1;
    case 20: return 2;
    case 40: return 3;
  }
  throw Error("unknown magnification " + std::to_string(magnification) + " (expected 5|10|20|40)");
}

void ModelConfig::validate() const {
  if (n_classes <= 0) throw Error("model config: n_classes must be positive");
  if (image_side <= 0 || patch <= 0) throw Error("model config: sizes must be positive");
  if (image_side % patch != 0) throw Error("model config: image_side not divisible by patch");
  if ((patch & (patch - 1)) != 0)
    throw Error("model config: patch must be a power of two (one upsample stage per halving)");
  if (d <= 0 || heads <= 0 || d % heads != 0) throw Error("model config: d must be divisible by heads");
  if (blocks <= 0) throw Error("model config: blocks must be positive");
  if (head_channels.size() < 2 || head_channels.back() != 2)
    throw Error("model config: head chain must end in 2 channels");
  if (dec_channels != head_channels.front())
    throw Error("model config: dec_channels must match the head input width");
}

int ModelConfig::omega_len() const {
  int len = 0;
  for (std::size_t l = 0; l + 1 < head_channels.size(); ++l)
    len += head_channels[l] * head_channels[l + 1] + head_channels[l + 1];
  return len;
}

std::vector<int> ModelConfig::decoder_channels() const {
  std::vector<int> ch{d};
  int stages = 0;
  for (int p = patch; p > 1; p /= 2) ++stages;
  for (int s = 0; s < stages; ++s)
    ch.push_back(s + 1 == stages ? dec_channels : std::max(ch.back() / 2, dec_channels));
  return ch;
}

losses::MaskTensor SegOutput::prob_mask() const {
  losses::MaskTensor m;
  m.h = side;
  m.w = side;
  m.binary = false;
  m.v = prob->val;
  return m;
}

Tensor patchify(const image::Image& img, int patch) {
  if (img.c != 3) throw Error("patchify: expected a 3-channel image");
  if (img.w != img.h) throw Error("patchify: expected a square image");
  if (img.w % patch != 0) throw Error("patchify: image side not divisible by patch");
  const int grid = img.w / patch;
  Tensor t = ad::make_tensor(grid * grid, 3 * patch * patch);
  for (int gy = 0; gy < grid; ++gy)
    for (int gx = 0; gx < grid; ++gx) {
      double* row = &t->at(gy * grid + gx, 0);
      std::size_t k = 0;
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px)
          for (int ch = 0; ch < 3; ++ch)
            row[k++] = img.at(gx * patch + px, gy * patch + py, ch) / 255.0;
    }
  return t;
}

Network::Network(ModelConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int d = cfg_.d;
  const int hw = cfg_.n_patches();
  constexpr double std02 = 0.02;

  register_param("bank.class_tokens", cfg_.n_classes, d, std02, rng);
  register_param("bank.scale_tokens", 4, d, std02, rng);
  register_param("enc.patch_embed.w", 3 * cfg_.patch * cfg_.patch, d, std02, rng);
  register_param("enc.patch_embed.b", 1, d, 0, rng);
  register_param("enc.pos", hw, d, std02, rng);
  for (int b = 0; b < cfg_.blocks; ++b) {
    const std::string pre = "enc.block" + std::to_string(b) + ".";
    register_param(pre + "ln1.g", 1, d, 0, rng, 1.0);
    register_param(pre + "ln1.b", 1, d, 0, rng);
    for (const char* w : {"wq", "wk", "wv", "wo"}) register_param(pre + "attn." + w, d, d, std02, rng);
    for (const char* b2 : {"bq", "bk", "bv", "bo"}) register_param(pre + "attn." + b2, 1, d, 0, rng);
    register_param(pre + "ln2.g", 1, d, 0, rng, 1.0);
    register_param(pre + "ln2.b", 1, d, 0, rng);
    register_param(pre + "mlp.w1", d, 4 * d, std02, rng);
    register_param(pre + "mlp.b1", 1, 4 * d, 0, rng);
    register_param(pre + "mlp.w2", 4 * d, d, std02, rng);
    register_param(pre + "mlp.b2", 1, d, 0, rng);
  }
  register_param("dec.dense", hw, d, std02, rng);
  for (const char* dir : {"p2i", "i2p"}) {
    const std::string pre = std::string("dec.") + dir + ".";
    for (const char* w : {"wq", "wk", "wv", "wo"}) register_param(pre + w, d, d, std02, rng);
    for (const char* b : {"bq", "bk", "bv", "bo"}) register_param(pre + b, 1, d, 0, rng);
    register_param(pre + "ln.g", 1, d, 0, rng, 1.0);
    register_param(pre + "ln.b", 1, d, 0, rng);
  }
  const auto ch = cfg_.decoder_channels();
  for (std::size_t s = 0; s + 1 < ch.size(); ++s) {
    register_param("dec.up" + std::to_string(s) + ".w", ch[s], ch[s + 1], std02, rng);
    register_param("dec.up" + std::to_string(s) + ".b", 1, ch[s + 1], 0, rng);
  }
  register_param("head.w", 3 * d, cfg_.omega_len(), std02, rng);
  register_param("head.b", 1, cfg_.omega_len(), 0, rng);
}

Tensor Network::register_param(const std::string& name, int rows, int cols, double init_std, Rng& rng,
                               double fill) {
  Tensor t = ad::make_tensor(rows, cols, true);
  if (init_std > 0) {
    for (auto& v : t->val) v = rng.truncated_normal(init_std);
  } else if (fill != 0.0) {
    std::fill(t->val.begin(), t->val.end(), fill);
  }
  params_.emplace_back(name, t);
  return t;
}

Tensor Network::param(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return t;
  throw Error("unknown parameter '" + name + "'");
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t->size();
  return n;
}

Tensor Network::class_token(int class_id) const {
  if (class_id < 0 || class_id >= cfg_.n_classes)
    throw Error("class id " + std::to_string(class_id) + " out of range");
  return ad::slice_rows(param("bank.class_tokens"), class_id, class_id + 1);
}

Tensor Network::scale_token(int magnification) const {
  const int idx = scale_token_index(magnification);
  return ad::slice_rows(param("bank.scale_tokens"), idx, idx + 1);
}

namespace {

// Multi-head self/cross attention over explicit Q/K/V sources.
Tensor attention(const Tensor& q_src, const Tensor& kv_src, const Tensor& wq, const Tensor& bq,
                 const Tensor& wk, const Tensor& bk, const Tensor& wv, const Tensor& bv,
                 const Tensor& wo, const Tensor& bo, int heads) {
  const int d = wq->cols;
  const int dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor q = ad::add_bias(ad::matmul(q_src, wq), bq);
  Tensor k = ad::add_bias(ad::matmul(kv_src, wk), bk);
  Tensor v = ad::add_bias(ad::matmul(kv_src, wv), bv);
  std::vector<Tensor> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = ad::slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = ad::slice_cols(v, h * dh, (h + 1) * dh);
    Tensor att = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt));
    outs.push_back(ad::matmul(att, vh));
  }
  Tensor merged = heads == 1 ? outs[0] : ad::concat_cols(outs);
  return ad::add_bias(ad::matmul(merged, wo), bo);
}

}  // namespace

Network::Encoded Network::encode(const image::Image& img, int class_id, int magnification) const {
  if (img.w != cfg_.image_side || img.h != cfg_.image_side)
    throw Error("encode: image side " + std::to_string(img.w) + " does not match config " +
                std::to_string(cfg_.image_side));
  const int hw = cfg_.n_patches();
  Tensor x = ad::add(ad::add_bias(ad::matmul(patchify(img, cfg_.patch), param("enc.patch_embed.w")),
                                  param("enc.patch_embed.b")),
                     param("enc.pos"));
  const Tensor tc = class_token(class_id);
  const Tensor ts = scale_token(magnification);

  Tensor seq;
  for (int b = 0; b < cfg_.blocks; ++b) {
    const std::string pre = "enc.block" + std::to_string(b) + ".";
    // Fresh prompt injection: bank rows overwrite the prompt positions at
    // every block input, only patch tokens carry forward.
    seq = ad::concat_rows({tc, ts, x});
    Tensor normed = ad::layer_norm(seq, param(pre + "ln1.g"), param(pre + "ln1.b"));
    Tensor attn = attention(normed, normed, param(pre + "attn.wq"), param(pre + "attn.bq"),
                            param(pre + "attn.wk"), param(pre + "attn.bk"), param(pre + "attn.wv"),
                            param(pre + "attn.bv"), param(pre + "attn.wo"), param(pre + "attn.bo"),
                            cfg_.heads);
    Tensor h = ad::add(seq, attn);
    Tensor n2 = ad::layer_norm(h, param(pre + "ln2.g"), param(pre + "ln2.b"));
    Tensor mlp = ad::add_bias(
        ad::matmul(ad::gelu(ad::add_bias(ad::matmul(n2, param(pre + "mlp.w1")), param(pre + "mlp.b1"))),
                   param(pre + "mlp.w2")),
        param(pre + "mlp.b2"));
    seq = ad::add(h, mlp);
    x = ad::slice_rows(seq, 2, 2 + hw);
  }
  return {x, ad::slice_rows(seq, 0, 2)};
}

Tensor Network::decode(const Tensor& F, int class_id, int magnification) const {
  const int hw = cfg_.n_patches();
  if (F->rows != hw || F->cols != cfg_.d) throw Error("decode: feature map shape mismatch");
  Tensor img = ad::add(F, param("dec.dense"));
  Tensor prompts = ad::concat_rows({ad::mean_rows(F), class_token(class_id), scale_token(magnification)});

  Tensor p_att = attention(prompts, img, param("dec.p2i.wq"), param("dec.p2i.bq"), param("dec.p2i.wk"),
                           param("dec.p2i.bk"), param("dec.p2i.wv"), param("dec.p2i.bv"),
                           param("dec.p2i.wo"), param("dec.p2i.bo"), 1);
  prompts = ad::layer_norm(ad::add(prompts, p_att), param("dec.p2i.ln.g"), param("dec.p2i.ln.b"));

  Tensor i_att = attention(img, prompts, param("dec.i2p.wq"), param("dec.i2p.bq"), param("dec.i2p.wk"),
                           param("dec.i2p.bk"), param("dec.i2p.wv"), param("dec.i2p.bv"),
                           param("dec.i2p.wo"), param("dec.i2p.bo"), 1);
  Tensor x = ad::layer_norm(ad::add(img, i_att), param("dec.i2p.ln.g"), param("dec.i2p.ln.b"));

  const auto ch = cfg_.decoder_channels();
  int side = cfg_.grid_side();
  for (std::size_t s = 0; s + 1 < ch.size(); ++s) {
    x = ad::upsample2x_grid(x, side, side);
    side *= 2;
    x = ad::add_bias(ad::matmul(x, param("dec.up" + std::to_string(s) + ".w")),
                     param("dec.up" + std::to_string(s) + ".b"));
    if (s + 2 < ch.size()) x = ad::relu(x);
  }
  return x;
}

Tensor Network::head_params(const Tensor& F, int class_id, int magnification) const {
  if (F->rows != cfg_.n_patches() || F->cols != cfg_.d)
    throw Error("head_params: feature map shape mismatch");
  Tensor in = ad::concat_cols({ad::mean_rows(F), class_token(class_id), scale_token(magnification)});
  return ad::add_bias(ad::matmul(in, param("head.w")), param("head.b"));
}

SegOutput Network::apply_dynamic_head(const Tensor& e_upscale, const Tensor& omega) const {
  if (omega->rows != 1 || omega->cols != cfg_.omega_len())
    throw Error("apply_dynamic_head: omega length " + std::to_string(omega->cols) + " != " +
                std::to_string(cfg_.omega_len()));
  if (e_upscale->cols != cfg_.head_channels.front())
    throw Error("apply_dynamic_head: channel count mismatch");

  Tensor x = e_upscale;
  int off = 0;
  const auto& ch = cfg_.head_channels;
  for (std::size_t l = 0; l + 1 < ch.size(); ++l) {
    Tensor w = ad::reshape(ad::slice_cols(omega, off, off + ch[l] * ch[l + 1]), ch[l], ch[l + 1]);
    off += ch[l] * ch[l + 1];
    Tensor b = ad::slice_cols(omega, off, off + ch[l + 1]);
    off += ch[l + 1];
    x = ad::add_bias(ad::matmul(x, w), b);
    if (l + 2 < ch.size()) x = ad::relu(x);
  }
  SegOutput out;
  out.logits = x;
  out.prob = ad::slice_cols(ad::softmax_rows(x), 1, 2);
  out.side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(x->rows))));
  return out;
}

SegOutput Network::forward(const image::Image& img, int class_id, int magnification) const {
  Encoded enc = encode(img, class_id, magnification);
  Tensor up = decode(enc.F, class_id, magnification);
  Tensor omega = head_params(enc.F, class_id, magnification);
  return apply_dynamic_head(up, omega);
}

}  // namespace hats::model
