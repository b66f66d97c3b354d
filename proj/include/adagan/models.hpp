#pragma once

// Declarative model construction. The generator follows the six-layer
// resize-convolution layout (dense projection, three 2x upsampling conv
// layers, final conv + Tanh); AdaGAN variants replace the first n_ada
// convolutions, lowest resolution first, with AdaConvBlocks sharing one
// K_adaptive. The discriminator is the strided-conv ladder with spectral
// normalization on every weight.

#include <cctype>
#include <string>
#include <utility>
#include <vector>

#include "adagan/adaconv.hpp"
#include "adagan/spectral_norm.hpp"

namespace adagan {

struct Param {
  std::string name;
  Tensor value;
};

using Bindings = std::vector<std::pair<Param*, Var>>;

inline Var bind(Tape& tape, Param& p, Bindings* out) {
  Var v = tape.leaf(p.value);
  if (out) out->emplace_back(&p, v);
  return v;
}

enum class Profile { kPaper, kTiny };

inline const char* profile_name(Profile p) { return p == Profile::kPaper ? "paper" : "tiny"; }

inline Profile parse_profile(const std::string& s) {
  if (s == "paper") return Profile::kPaper;
  if (s == "tiny") return Profile::kTiny;
  throw ConfigError("unknown profile '" + s + "' (expected paper|tiny)");
}

// ---- generator -------------------------------------------------------------

struct GeneratorSpec {
  int m_g = 4;             // initial spatial side
  int base_channels = 128;  // width of the projected volume
  int latent_dim = 128;
  int n_upsample = 3;  // 2x resize steps; output side = m_g << n_upsample
  int n_ada = 0;       // convs replaced by AdaConvBlocks, third layer onward
  int k_adaptive = 3;  // shared by all AdaConvBlocks in the architecture
  AdaConvVariant variant = AdaConvVariant::kSeparable;
  int64_t byte_budget = int64_t{2} << 30;

  bool operator==(const GeneratorSpec&) const = default;

  int n_convs() const { return n_upsample + 1; }
  int output_side() const { return m_g << n_upsample; }
  int64_t conv_out_channels(int i) const { return i < n_upsample ? base_channels >> (i + 1) : 3; }
  int64_t conv_in_channels(int i) const {
    return i == 0 ? base_channels : conv_out_channels(i - 1);
  }

  void validate() const {
    if (m_g < 1 || base_channels < 8 || latent_dim < 1 || n_upsample < 1) {
      throw ConfigError("generator spec: bad dimensions");
    }
    if (n_ada < 0 || n_ada > n_convs()) {
      throw ConfigError("generator spec: n_ada must be in [0," + std::to_string(n_convs()) +
                        "], got " + std::to_string(n_ada));
    }
    if (n_ada > 0 && (k_adaptive < 1 || k_adaptive % 2 == 0)) {
      throw ConfigError("generator spec: K_adaptive must be odd and >= 1");
    }
  }

  AdaConvBlockSpec ada_spec(int conv_index) const {
    AdaConvBlockSpec s;
    s.k_filter = 3;
    s.k_adaptive = k_adaptive;
    s.c_in = conv_in_channels(conv_index);
    s.c_out = conv_out_channels(conv_index);
    s.variant = variant;
    s.byte_budget = byte_budget;
    return s;
  }
};

inline GeneratorSpec make_generator_spec(Profile profile, int n_ada, int k_adaptive, int m_g = 4) {
  GeneratorSpec s;
  s.m_g = m_g;
  if (profile == Profile::kTiny) {
    s.base_channels = 32;
    s.n_upsample = 2;  // one fewer upsample; 4 -> 16
  }
  s.n_ada = n_ada;
  s.k_adaptive = n_ada > 0 ? k_adaptive : 3;
  s.validate();
  return s;
}

class Generator {
 public:
  Generator(GeneratorSpec spec, Rng& rng) : spec_(std::move(spec)) {
    spec_.validate();
    const int64_t proj = int64_t{spec_.m_g} * spec_.m_g * spec_.base_channels;
    dense_w_ = {"gen.dense.w", init_truncated_normal(rng, {spec_.latent_dim, proj})};
    dense_b_ = {"gen.dense.b", Tensor::zeros({proj})};
    layers_.resize(static_cast<size_t>(spec_.n_convs()));
    for (int i = 0; i < spec_.n_convs(); ++i) {
      Layer& l = layers_[static_cast<size_t>(i)];
      l.upsample = i < spec_.n_upsample;
      l.has_bn = i < spec_.n_upsample;  // no batch norm after the final conv
      l.is_ada = i < spec_.n_ada;
      const std::string base = "gen.l" + std::to_string(i + 3) + ".";
      if (l.is_ada) {
        l.ada_spec = spec_.ada_spec(i);
        AdaConvBlockParams p = AdaConvBlockParams::init(l.ada_spec, rng);
        if (l.ada_spec.variant == AdaConvVariant::kNaive) {
          l.ada_w_ww = {base + "ada.w_ww", std::move(p.w_ww)};
        } else {
          l.ada_w_dw = {base + "ada.w_dw", std::move(p.w_dw)};
          l.ada_w_pw = {base + "ada.w_pw", std::move(p.w_pw)};
        }
        l.ada_b_wb = {base + "ada.b_wb", std::move(p.b_wb)};
        l.ada_w_bw = {base + "ada.w_bw", std::move(p.w_bw)};
        l.ada_b_bb = {base + "ada.b_bb", std::move(p.b_bb)};
      } else {
        l.conv_w = {base + "conv.w",
                    init_truncated_normal(
                        rng, {3, 3, spec_.conv_in_channels(i), spec_.conv_out_channels(i)})};
        l.conv_b = {base + "conv.b", Tensor::zeros({spec_.conv_out_channels(i)})};
      }
      if (l.has_bn) {
        l.bn = BatchNormParams::init(spec_.conv_out_channels(i));
        l.bn_gamma = {base + "bn.gamma", Tensor::ones({spec_.conv_out_channels(i)})};
        l.bn_beta = {base + "bn.beta", Tensor::zeros({spec_.conv_out_channels(i)})};
      }
    }
  }

  const GeneratorSpec& spec() const { return spec_; }

  // z: [N, latent_dim] -> images [N, side, side, 3] in [-1, 1].
  Var forward(Tape& tape, Var z, Mode mode, Bindings* bindings = nullptr) {
    const Tensor& zv = tape.value(z);
    if (zv.rank() != 2 || zv.extent(1) != spec_.latent_dim) {
      throw ShapeError("generator: latent must be [N," + std::to_string(spec_.latent_dim) +
                       "], got " + shape_str(zv.shape()));
    }
    const int64_t batch = zv.extent(0);
    Var x = ops::dense(tape, z, bind(tape, dense_w_, bindings), bind(tape, dense_b_, bindings));
    x = ops::reshape(tape, x, {batch, spec_.m_g, spec_.m_g, spec_.base_channels});
    for (size_t i = 0; i < layers_.size(); ++i) {
      Layer& l = layers_[i];
      if (l.upsample) x = ops::resize_nn_2x(tape, x);
      if (l.is_ada) {
        AdaConvBlockVars v;
        if (l.ada_spec.variant == AdaConvVariant::kNaive) {
          v.w_ww = bind(tape, l.ada_w_ww, bindings);
        } else {
          v.w_dw = bind(tape, l.ada_w_dw, bindings);
          v.w_pw = bind(tape, l.ada_w_pw, bindings);
        }
        v.b_wb = bind(tape, l.ada_b_wb, bindings);
        v.w_bw = bind(tape, l.ada_w_bw, bindings);
        v.b_bb = bind(tape, l.ada_b_bb, bindings);
        x = ops::adaconv_block(tape, x, v, l.ada_spec);
      } else {
        x = ops::conv2d(tape, x, bind(tape, l.conv_w, bindings), bind(tape, l.conv_b, bindings));
      }
      if (l.has_bn) {
        x = ops::batch_norm(tape, x, bind(tape, l.bn_gamma, bindings),
                            bind(tape, l.bn_beta, bindings), l.bn, mode);
        x = ops::relu(tape, x);
      } else {
        x = ops::tanh(tape, x);
      }
    }
    return x;
  }

  std::vector<Param*> params() {
    std::vector<Param*> out{&dense_w_, &dense_b_};
    for (Layer& l : layers_) {
      if (l.is_ada) {
        if (l.ada_spec.variant == AdaConvVariant::kNaive) {
          out.push_back(&l.ada_w_ww);
        } else {
          out.push_back(&l.ada_w_dw);
          out.push_back(&l.ada_w_pw);
        }
        out.push_back(&l.ada_b_wb);
        out.push_back(&l.ada_w_bw);
        out.push_back(&l.ada_b_bb);
      } else {
        out.push_back(&l.conv_w);
        out.push_back(&l.conv_b);
      }
      if (l.has_bn) {
        out.push_back(&l.bn_gamma);
        out.push_back(&l.bn_beta);
      }
    }
    return out;
  }

  std::vector<std::pair<std::string, Tensor*>> buffers() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (size_t i = 0; i < layers_.size(); ++i) {
      if (!layers_[i].has_bn) continue;
      const std::string base = "gen.l" + std::to_string(i + 3) + ".bn.";
      out.emplace_back(base + "running_mean", &layers_[i].bn.running_mean);
      out.emplace_back(base + "running_var", &layers_[i].bn.running_var);
    }
    return out;
  }

  int64_t param_count() {
    int64_t n = 0;
    for (Param* p : params()) n += p->value.size();
    return n;
  }

  int64_t dense_param_count() const { return dense_w_.value.size() + dense_b_.value.size(); }

 private:
  struct Layer {
    bool upsample = false;
    bool has_bn = false;
    bool is_ada = false;
    Param conv_w, conv_b;
    AdaConvBlockSpec ada_spec;
    Param ada_w_ww, ada_w_dw, ada_w_pw, ada_b_wb, ada_w_bw, ada_b_bb;
    BatchNormParams bn;
    Param bn_gamma, bn_beta;
  };

  GeneratorSpec spec_;
  Param dense_w_, dense_b_;
  std::vector<Layer> layers_;
};

// ---- discriminator ---------------------------------------------------------

struct DiscriminatorSpec {
  int input_side = 32;
  std::vector<int64_t> ladder = {64, 64, 128, 128, 256, 256, 512};
  float leaky_slope = 0.1f;
  int n_power_iterations = 1;

  bool operator==(const DiscriminatorSpec&) const = default;

  void validate() const {
    if (input_side % 8 != 0) {
      throw ConfigError("discriminator: input side must be divisible by 8, got " +
                        std::to_string(input_side));
    }
    if (ladder.size() != 7) throw ConfigError("discriminator: ladder must list 7 conv widths");
  }
};

inline DiscriminatorSpec make_discriminator_spec(Profile profile, int input_side) {
  DiscriminatorSpec s;
  s.input_side = input_side;
  if (profile == Profile::kTiny) s.ladder = {16, 16, 32, 32, 64, 64, 128};
  s.validate();
  return s;
}

class Discriminator {
 public:
  Discriminator(DiscriminatorSpec spec, Rng& rng) : spec_(std::move(spec)) {
    spec_.validate();
    int64_t c_in = 3;
    int side = spec_.input_side;
    for (size_t i = 0; i < spec_.ladder.size(); ++i) {
      ConvLayer l;
      l.kernel = i % 2 == 0 ? 3 : 4;
      l.stride = i % 2 == 0 ? 1 : 2;
      const int64_t c_out = spec_.ladder[i];
      const std::string base = "disc.conv" + std::to_string(i) + ".";
      l.w = {base + "w", init_truncated_normal(rng, {l.kernel, l.kernel, c_in, c_out})};
      l.b = {base + "b", Tensor::zeros({c_out})};
      l.sn = SpectralNormState::init(c_out, rng);
      l.sn.n_power_iterations = spec_.n_power_iterations;
      if (l.stride == 2) side /= 2;
      convs_.push_back(std::move(l));
      c_in = c_out;
    }
    const int64_t flat = int64_t{side} * side * c_in;
    dense_w_ = {"disc.dense.w", init_truncated_normal(rng, {flat, 1})};
    dense_b_ = {"disc.dense.b", Tensor::zeros({1})};
    dense_sn_ = SpectralNormState::init(1, rng);
    dense_sn_.n_power_iterations = spec_.n_power_iterations;
  }

  const DiscriminatorSpec& spec() const { return spec_; }

  // x: [N, M, M, 3] -> logits [N, 1]. update_u refreshes the power-iteration
  // state (training step); audits and eval pass false.
  Var forward(Tape& tape, Var x, bool update_u, Bindings* bindings = nullptr) {
    const Tensor& xv = tape.value(x);
    if (xv.rank() != 4 || xv.extent(1) != spec_.input_side || xv.extent(2) != spec_.input_side ||
        xv.extent(3) != 3) {
      throw ShapeError("discriminator: expected [N," + std::to_string(spec_.input_side) + "," +
                       std::to_string(spec_.input_side) + ",3], got " + shape_str(xv.shape()));
    }
    Var h = x;
    for (ConvLayer& l : convs_) {
      Var w = bind(tape, l.w, bindings);
      Var w_hat = ops::spectral_normalize(tape, w, l.sn, update_u);
      h = ops::conv2d(tape, h, w_hat, bind(tape, l.b, bindings), l.stride, 1);
      h = ops::leaky_relu(tape, h, spec_.leaky_slope);
    }
    Var w = bind(tape, dense_w_, bindings);
    Var w_hat = ops::spectral_normalize(tape, w, dense_sn_, update_u);
    return ops::dense(tape, h, w_hat, bind(tape, dense_b_, bindings));
  }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    for (ConvLayer& l : convs_) {
      out.push_back(&l.w);
      out.push_back(&l.b);
    }
    out.push_back(&dense_w_);
    out.push_back(&dense_b_);
    return out;
  }

  std::vector<std::pair<std::string, Tensor*>> buffers() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (size_t i = 0; i < convs_.size(); ++i) {
      out.emplace_back("disc.conv" + std::to_string(i) + ".sn.u", &convs_[i].sn.u);
    }
    out.emplace_back("disc.dense.sn.u", &dense_sn_.u);
    return out;
  }

  // Normalized weights and their power-iteration states, for audits.
  std::vector<std::pair<const Tensor*, SpectralNormState*>> spectral_weights() {
    std::vector<std::pair<const Tensor*, SpectralNormState*>> out;
    for (ConvLayer& l : convs_) out.emplace_back(&l.w.value, &l.sn);
    out.emplace_back(&dense_w_.value, &dense_sn_);
    return out;
  }

  bool any_degenerate_sigma() const {
    for (const ConvLayer& l : convs_) {
      if (l.sn.degenerate) return true;
    }
    return dense_sn_.degenerate;
  }

 private:
  struct ConvLayer {
    int kernel = 3;
    int stride = 1;
    Param w, b;
    SpectralNormState sn;
  };

  DiscriminatorSpec spec_;
  std::vector<ConvLayer> convs_;
  Param dense_w_, dense_b_;
  SpectralNormState dense_sn_;
};

// ---- architecture naming ---------------------------------------------------

// "Baseline", "AdaGAN-KxK" (all convs replaced), or "AdaGAN-n-KxK".
inline std::string name_architecture(const GeneratorSpec& spec) {
  if (spec.n_ada == 0) return "Baseline";
  const std::string k = std::to_string(spec.k_adaptive);
  const std::string suffix = k + "x" + k;
  if (spec.n_ada == spec.n_convs()) return "AdaGAN-" + suffix;
  return "AdaGAN-" + std::to_string(spec.n_ada) + "-" + suffix;
}

// Inverse of name_architecture for a given profile. A trailing -KxK may be
// omitted when k_adaptive_override > 0 (the --k-adaptive flag).
inline GeneratorSpec parse_architecture(const std::string& name, Profile profile, int m_g = 4,
                                        int k_adaptive_override = 0) {
  if (name == "Baseline") return make_generator_spec(profile, 0, 3, m_g);
  const std::string prefix = "AdaGAN";
  if (name.rfind(prefix, 0) != 0) {
    throw ConfigError("unknown architecture '" + name + "' (expected Baseline or AdaGAN[-n][-KxK])");
  }
  std::string rest = name.substr(prefix.size());
  auto fail = [&]() -> ConfigError {
    return ConfigError("cannot parse architecture '" + name + "'");
  };
  int n_ada = -1;  // -1: replace all
  int k = k_adaptive_override;
  std::vector<std::string> parts;
  while (!rest.empty()) {
    if (rest[0] != '-') throw fail();
    size_t next = rest.find('-', 1);
    parts.push_back(rest.substr(1, next == std::string::npos ? next : next - 1));
    rest = next == std::string::npos ? "" : rest.substr(next);
  }
  if (parts.size() > 2) throw fail();
  for (const std::string& part : parts) {
    if (part.empty()) throw fail();
    const size_t x = part.find('x');
    if (x != std::string::npos) {
      const std::string a = part.substr(0, x), b = part.substr(x + 1);
      if (a.empty() || a != b) throw fail();
      for (char ch : a) {
        if (!std::isdigit(static_cast<unsigned char>(ch))) throw fail();
      }
      k = std::stoi(a);
    } else {
      for (char ch : part) {
        if (!std::isdigit(static_cast<unsigned char>(ch))) throw fail();
      }
      if (n_ada != -1) throw fail();
      n_ada = std::stoi(part);
    }
  }
  if (k <= 0) {
    throw ConfigError("architecture '" + name + "' needs a -KxK suffix or --k-adaptive");
  }
  if (k % 2 == 0) throw ConfigError("K_adaptive must be odd, got " + std::to_string(k));
  GeneratorSpec probe = make_generator_spec(profile, 0, 3, m_g);
  const int n = n_ada == -1 ? probe.n_convs() : n_ada;
  if (n < 1 || n > probe.n_convs()) {
    throw ConfigError("architecture '" + name + "': n out of range [1," +
                      std::to_string(probe.n_convs()) + "]");
  }
  // Canonical names spell AdaGAN-n_convs as plain AdaGAN.
  if (n_ada != -1 && n_ada == probe.n_convs()) {
    throw ConfigError("architecture '" + name + "': full replacement is written AdaGAN-" +
                      std::to_string(k) + "x" + std::to_string(k));
  }
  return make_generator_spec(profile, n, k, m_g);
}

}  // namespace adagan
