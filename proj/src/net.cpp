#include "messfn/net.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "messfn/rng.h"

namespace messfn {

constexpr double kResidualInitGain = 0.1;

void MessfnConfig::validate() const {
  if (blocks < 1) throw std::invalid_argument("blocks must be at least 1, got 0");
  if (channels < 1) throw std::invalid_argument("channels must be at least 1");
  if (sa_kernel % 2 == 0) {
    throw std::invalid_argument("spectral attention kernel must be odd, got " +
                                std::to_string(sa_kernel));
  }
  if (isa_kernel % 2 == 0) {
    throw std::invalid_argument("spatial attention kernel must be odd, got " +
                                std::to_string(isa_kernel));
  }
  if (r < 1) throw std::invalid_argument("scale factor r must be positive");
  for (std::size_t level : disconnect) {
    if (level > blocks + 1) {
      throw std::invalid_argument("disconnect level " + std::to_string(level) +
                                  " outside 0.." + std::to_string(blocks + 1));
    }
  }
}

const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::none: return "none";
    case Ablation::no_rsab: return "no-rsab";
    case Ablation::no_rmsab: return "no-rmsab";
  }
  return "none";
}

std::string format_index_set(const std::set<std::size_t>& s) {
  if (s.empty()) return "none";
  std::string out;
  for (std::size_t v : s) {
    if (!out.empty()) out += ',';
    out += std::to_string(v);
  }
  return out;
}

std::set<std::size_t> parse_index_set(const std::string& text) {
  std::set<std::size_t> out;
  if (text == "none" || text.empty()) return out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw std::invalid_argument("invalid level index '" + item + "' in '" + text + "'");
    }
    out.insert(std::stoul(item));
  }
  return out;
}

void apply_ablation(const std::string& text, MessfnConfig& cfg) {
  std::string t = text;
  std::replace(t.begin(), t.end(), '_', '-');
  if (t == "none") {
    cfg.ablation = Ablation::none;
  } else if (t == "no-rsab") {
    cfg.ablation = Ablation::no_rsab;
  } else if (t == "no-rmsab") {
    cfg.ablation = Ablation::no_rmsab;
  } else if (t.rfind("disconnect=", 0) == 0) {
    const auto levels = parse_index_set(t.substr(11));
    if (levels.empty()) throw std::invalid_argument("disconnect needs at least one level");
    cfg.disconnect = levels;
  } else {
    throw std::invalid_argument("unknown ablation '" + text +
                                "' (expected none, no-rsab, no-rmsab or disconnect=i,j,...)");
  }
}

ConfigEntries config_entries(const MessfnConfig& cfg) {
  return {{"blocks", std::to_string(cfg.blocks)},
          {"channels", std::to_string(cfg.channels)},
          {"sa_kernel", std::to_string(cfg.sa_kernel)},
          {"isa_kernel", std::to_string(cfg.isa_kernel)},
          {"r", std::to_string(cfg.r)},
          {"ablation", ablation_name(cfg.ablation)},
          {"disconnect", format_index_set(cfg.disconnect)}};
}

MessfnConfig config_from_entries(const ConfigEntries& entries) {
  MessfnConfig cfg;
  for (const auto& [key, value] : entries) {
    if (key == "blocks") cfg.blocks = std::stoul(value);
    else if (key == "channels") cfg.channels = std::stoul(value);
    else if (key == "sa_kernel") cfg.sa_kernel = std::stoul(value);
    else if (key == "isa_kernel") cfg.isa_kernel = std::stoul(value);
    else if (key == "r") cfg.r = std::stoul(value);
    else if (key == "ablation") apply_ablation(value, cfg);
    else if (key == "disconnect") cfg.disconnect = parse_index_set(value);
  }
  return cfg;
}

namespace {

template <typename T>
class LayoutBuilder {
 public:
  explicit LayoutBuilder(MessfnWeights<T>& w) : w_(w) {}

  ConvLayer conv(const std::string& name, const ConvSpec& spec) {
    ConvLayer layer{spec, add(name + ".weight", spec.weight_shape()), kNoParam};
    if (spec.has_bias) layer.bias = add(name + ".bias", spec.bias_shape());
    return layer;
  }

  std::size_t add(const std::string& name, const Shape& shape) {
    w_.names.push_back(name);
    w_.params.emplace_back(shape);
    return w_.params.size() - 1;
  }

  ResidualLayers residual(const std::string& prefix, std::size_t c) {
    return {conv(prefix + ".conv1", ConvSpec::same(c, c, 3)),
            conv(prefix + ".conv2", ConvSpec::same(c, c, 3))};
  }

 private:
  MessfnWeights<T>& w_;
};

}  // namespace

template <typename T>
MessfnWeights<T>::MessfnWeights(const MessfnConfig& cfg) : config(cfg) {
  cfg.validate();
  const std::size_t c = cfg.channels, b = cfg.blocks;
  LayoutBuilder<T> lb(*this);
  brc = lb.conv("brc", ConvSpec::same(4, 4, 3));
  ms_general[0] = lb.conv("ms_general.0", ConvSpec::same(4, c, 3));
  ms_general[1] = lb.conv("ms_general.1", ConvSpec::same(c, c, 3));
  pan_general[0] = lb.conv("pan_general.0", ConvSpec::same(1, c, 3));
  pan_general[1] = lb.conv("pan_general.1", ConvSpec::same(c, c, 3));
  ss_general = lb.conv("ss_general", ConvSpec::same(c, c, 3));

  for (std::size_t k = 0; k < b; ++k) {
    const std::string p = "ms_block." + std::to_string(k);
    if (cfg.ablation == Ablation::no_rsab) {
      ms_plain.push_back(lb.residual(p, c));
    } else {
      RsabLayers l;
      l.body = lb.conv(p + ".body", ConvSpec::same(c, c, 3));
      l.attn = lb.add(p + ".attn.weight", {cfg.sa_kernel});
      rsab.push_back(l);
    }
  }
  for (std::size_t k = 0; k < b; ++k) {
    const std::string p = "pan_block." + std::to_string(k);
    if (cfg.ablation == Ablation::no_rmsab) {
      pan_plain.push_back(lb.residual(p, c));
    } else {
      RmsabLayers l;
      l.branch1 = lb.conv(p + ".branch1", ConvSpec::same(c, c, 1));
      l.branch3a = lb.conv(p + ".branch3a", ConvSpec::row(c, c, 3));
      l.branch3b = lb.conv(p + ".branch3b", ConvSpec::col(c, c, 3));
      l.branch5a = lb.conv(p + ".branch5a", ConvSpec::row(c, c, 5));
      l.branch5b = lb.conv(p + ".branch5b", ConvSpec::col(c, c, 5));
      l.merge = lb.conv(p + ".merge", ConvSpec::same(3 * c, c, 1));
      l.isa = lb.conv(p + ".isa", ConvSpec::same(2, 1, cfg.isa_kernel, false));
      rmsab.push_back(l);
    }
  }
  for (std::size_t k = 0; k < b; ++k) ss_rb.push_back(lb.residual("ss_block." + std::to_string(k), c));

  aggregate = lb.conv("aggregate", ConvSpec::same(cfg.levels() * c, c, 1));
  reconstruct = lb.conv("reconstruct", ConvSpec::same(c, 4, 3));
}

template <typename T>
MessfnWeights<T> MessfnWeights<T>::clone() const {
  MessfnWeights<T> out = *this;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& src = params[i];
    out.params[i] = Parameter<T>(src.shape(), {src.value.data().begin(), src.value.data().end()});
    out.params[i].adam_m = src.adam_m;
    out.params[i].adam_v = src.adam_v;
    out.params[i].step_count = src.step_count;
  }
  return out;
}

template <typename T>
std::size_t MessfnWeights<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.numel();
  return n;
}

template <typename T>
std::size_t MessfnWeights<T>::index_of(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

template <typename T>
std::vector<Parameter<T>*> MessfnWeights<T>::parameters() {
  std::vector<Parameter<T>*> out;
  out.reserve(params.size());
  for (auto& p : params) out.push_back(&p);
  return out;
}

namespace {

// Multiplier on the He standard deviation. Residual-branch outputs and the
// reconstruction layer start small so the additive fusion chain and the tanh
// stay out of saturation at depth; other unrectified layers use plain fan-in
// scaling.
double init_gain(const std::string& name) {
  if (name.ends_with(".conv2.weight") || name.ends_with(".merge.weight") ||
      name.ends_with(".body.weight") || name == "reconstruct.weight") {
    return kResidualInitGain;
  }
  if (name == "brc.weight" || name == "aggregate.weight") return std::sqrt(0.5);
  return 1.0;
}

}  // namespace

template <typename T>
MessfnWeights<T> init_weights(const MessfnConfig& cfg, std::uint64_t seed) {
  MessfnWeights<T> w(cfg);
  Rng rng(seed);
  for (std::size_t i = 0; i < w.params.size(); ++i) {
    const Shape& s = w.params[i].shape();
    if (w.names[i].ends_with(".bias")) continue;
    // Conv kernels are [out, in, kh, kw]; the 1-D attention kernel is [k].
    const std::size_t fan_in = s.size() == 1 ? s[0] : shape_numel(s) / s[0];
    const double stddev = init_gain(w.names[i]) * std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : w.params[i].value.mutable_data()) v = static_cast<T>(stddev * rng.normal());
  }
  return w;
}

template <typename T>
Tensor<T> apply_conv(const MessfnWeights<T>& w, const ConvLayer& layer, const Tensor<T>& x) {
  return conv2d(x, layer.spec, w.value(layer.weight),
                layer.bias == kNoParam ? Tensor<T>() : w.value(layer.bias));
}

template <typename T>
Tensor<T> brc_upsample(const Tensor<T>& ms, const MessfnWeights<T>& w) {
  const auto up = bicubic_resize(ms, Scale{w.config.r, 1});
  return apply_conv(w, w.brc, up);
}

template <typename T>
Tensor<T> rsab_forward(const Tensor<T>& f, const MessfnWeights<T>& w, const RsabLayers& layers,
                       Tensor<T>* mask_out) {
  const auto body = relu(apply_conv(w, layers.body, f));
  const auto pooled = global_avg_pool(body);
  const auto mask = sigmoid(conv1d(pooled, w.config.sa_kernel, w.value(layers.attn)));
  if (mask_out) *mask_out = mask;
  return add(broadcast_mul_channel(body, mask), f);
}

template <typename T>
Tensor<T> rmsab_forward(const Tensor<T>& f, const MessfnWeights<T>& w, const RmsabLayers& layers,
                        Tensor<T>* mask_out) {
  const auto b1 = relu(apply_conv(w, layers.branch1, f));
  const auto b3 = relu(apply_conv(w, layers.branch3b, apply_conv(w, layers.branch3a, f)));
  const auto b5 = relu(apply_conv(w, layers.branch5b, apply_conv(w, layers.branch5a, f)));
  const auto inception = apply_conv(w, layers.merge, concat_channels<T>({b1, b3, b5}));
  const auto stats = concat_channels<T>({global_var_pool(inception), channel_mean(inception)});
  const auto mask = sigmoid(apply_conv(w, layers.isa, stats));
  if (mask_out) *mask_out = mask;
  return add(broadcast_mul_spatial(inception, mask), f);
}

template <typename T>
Tensor<T> residual_forward(const Tensor<T>& f, const MessfnWeights<T>& w,
                           const ResidualLayers& layers) {
  const auto hidden = relu(apply_conv(w, layers.conv1, f));
  return add(apply_conv(w, layers.conv2, hidden), f);
}

template <typename T>
Tensor<T> fuse_level(const Tensor<T>& f_ms, const Tensor<T>& f_pan, const Tensor<T>& f_ss,
                     std::size_t level, const MessfnConfig& cfg) {
  if (f_ms.shape() != f_ss.shape() || f_pan.shape() != f_ss.shape()) {
    throw ShapeError("fuse_level: stream shapes " + shape_str(f_ms.shape()) + ", " +
                     shape_str(f_pan.shape()) + ", " + shape_str(f_ss.shape()) + " differ");
  }
  if (cfg.disconnect.count(level)) return f_ss;
  return add(add(f_ms, f_pan), f_ss);
}

template <typename T>
Tensor<T> forward(const Tensor<T>& ms, const Tensor<T>& pan, const MessfnWeights<T>& w) {
  const auto& cfg = w.config;
  if (ms.rank() != 4 || ms.dim(1) != 4) {
    throw ShapeError("forward: MS input must be [N,4,h,w], got " + shape_str(ms.shape()));
  }
  const Shape want_pan{ms.dim(0), 1, cfg.r * ms.dim(2), cfg.r * ms.dim(3)};
  if (pan.shape() != want_pan) {
    throw ShapeError("forward: PAN input " + shape_str(pan.shape()) + " does not match MS " +
                     shape_str(ms.shape()) + " at r=" + std::to_string(cfg.r) + " (expected " +
                     shape_str(want_pan) + ")");
  }

  const auto up = brc_upsample(ms, w);
  auto f_ms = relu(apply_conv(w, w.ms_general[0], up));
  auto f_pan = relu(apply_conv(w, w.pan_general[0], pan));
  auto f_ss = add(f_ms, f_pan);
  auto fused = fuse_level(f_ms, f_pan, f_ss, 0, cfg);
  std::vector<Tensor<T>> levels{fused};

  f_ms = relu(apply_conv(w, w.ms_general[1], f_ms));
  f_pan = relu(apply_conv(w, w.pan_general[1], f_pan));
  f_ss = relu(apply_conv(w, w.ss_general, fused));
  fused = fuse_level(f_ms, f_pan, f_ss, 1, cfg);
  levels.push_back(fused);

  for (std::size_t k = 0; k < cfg.blocks; ++k) {
    f_ms = cfg.ablation == Ablation::no_rsab ? residual_forward(f_ms, w, w.ms_plain[k])
                                             : rsab_forward(f_ms, w, w.rsab[k]);
    f_pan = cfg.ablation == Ablation::no_rmsab ? residual_forward(f_pan, w, w.pan_plain[k])
                                               : rmsab_forward(f_pan, w, w.rmsab[k]);
    f_ss = residual_forward(fused, w, w.ss_rb[k]);
    fused = fuse_level(f_ms, f_pan, f_ss, k + 2, cfg);
    levels.push_back(fused);
  }

  const auto merged = apply_conv(w, w.aggregate, concat_channels(levels));
  const auto logits = apply_conv(w, w.reconstruct, merged);
  for (T v : logits.data()) {
    if (!std::isfinite(v)) throw DivergenceError("forward produced non-finite activations");
  }
  return tanh(logits);
}

#define MESSFN_INSTANTIATE_NET(T)                                                              \
  template struct MessfnWeights<T>;                                                            \
  template MessfnWeights<T> init_weights<T>(const MessfnConfig&, std::uint64_t);               \
  template Tensor<T> apply_conv(const MessfnWeights<T>&, const ConvLayer&, const Tensor<T>&);  \
  template Tensor<T> brc_upsample(const Tensor<T>&, const MessfnWeights<T>&);                  \
  template Tensor<T> rsab_forward(const Tensor<T>&, const MessfnWeights<T>&,                   \
                                  const RsabLayers&, Tensor<T>*);                              \
  template Tensor<T> rmsab_forward(const Tensor<T>&, const MessfnWeights<T>&,                  \
                                   const RmsabLayers&, Tensor<T>*);                            \
  template Tensor<T> residual_forward(const Tensor<T>&, const MessfnWeights<T>&,               \
                                      const ResidualLayers&);                                  \
  template Tensor<T> fuse_level(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                std::size_t, const MessfnConfig&);                             \
  template Tensor<T> forward(const Tensor<T>&, const Tensor<T>&, const MessfnWeights<T>&);

MESSFN_INSTANTIATE_NET(float)
MESSFN_INSTANTIATE_NET(double)

}  // namespace messfn
