#include "ldct/models.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "ldct/tensor_io.hpp"

namespace ldct {

using nlohmann::json;

namespace {

constexpr int kCheckpointVersion = 1;

std::string two_digits(int i) {
  return (i < 10 ? "0" : "") + std::to_string(i);
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  check_same_shape(dst, src, "gradient accumulation");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

NetworkSpec dncnn_spec(int depth_modules, int in_channels, int feature_channels) {
  NetworkSpec s;
  s.kind = NetworkKind::dncnn;
  s.depth_modules = depth_modules;
  s.in_channels = in_channels;
  s.feature_channels = feature_channels;
  s.residual = true;
  validate_spec(s);
  return s;
}

NetworkSpec mlp_spec(int in_channels) {
  NetworkSpec s;
  s.kind = NetworkKind::mlp;
  s.in_channels = in_channels;
  s.residual = false;
  validate_spec(s);
  return s;
}

void validate_spec(const NetworkSpec& spec) {
  if (spec.depth_modules < 1) {
    throw ParameterError("depth_modules must be >= 1");
  }
  if (spec.in_channels < 1) {
    throw ParameterError("in_channels must be >= 1");
  }
  if (spec.kind == NetworkKind::mlp && spec.residual) {
    throw ParameterError("mlp networks cannot use residual prediction");
  }
  if (spec.kind == NetworkKind::dncnn) {
    if (spec.feature_channels < 1) {
      throw ParameterError("feature_channels must be >= 1");
    }
    if (spec.kernel < 1 || spec.kernel % 2 == 0) {
      throw ParameterError("kernel extent must be odd and positive");
    }
  } else {
    if (spec.mlp_patch < 1 || spec.mlp_hidden < 1) {
      throw ParameterError("mlp patch and hidden sizes must be positive");
    }
  }
}

const char* to_string(NetworkKind kind) {
  return kind == NetworkKind::dncnn ? "dncnn" : "mlp";
}

const char* to_string(MlpActivation act) {
  return act == MlpActivation::tanh ? "tanh" : "relu";
}

// ---------------------------------------------------------------------------
// Construction

template <typename T>
NetworkT<T> build_network(const NetworkSpec& spec, Rng& rng) {
  validate_spec(spec);
  NetworkT<T> net;
  net.spec = spec;

  auto conv = [&](const std::string& name, int out_ch, int in_ch, bool bias) {
    const std::size_t fan_in =
        static_cast<std::size_t>(in_ch) * spec.kernel * spec.kernel;
    ConvLayer<T> layer;
    layer.weight = Parameter<T>(
        xavier_init<T>({static_cast<std::size_t>(out_ch),
                        static_cast<std::size_t>(in_ch),
                        static_cast<std::size_t>(spec.kernel),
                        static_cast<std::size_t>(spec.kernel)},
                       fan_in, rng),
        name + ".weight", true);
    if (bias) {
      layer.bias = Parameter<T>(
          Tensor<T>(1, static_cast<std::size_t>(out_ch), 1, 1, T{0}),
          name + ".bias", false);
    }
    net.layers.push_back({name, std::move(layer)});
  };
  auto relu = [&](const std::string& name) {
    net.layers.push_back({name, ReluLayer<T>{}});
  };

  if (spec.kind == NetworkKind::dncnn) {
    conv("conv00", spec.feature_channels, spec.in_channels, /*bias=*/true);
    relu("relu00");
    for (int m = 1; m <= spec.depth_modules; ++m) {
      const std::string id = two_digits(m);
      conv("conv" + id, spec.feature_channels, spec.feature_channels,
           /*bias=*/false);
      BatchNormState<T> bn(static_cast<std::size_t>(spec.feature_channels));
      bn.gamma.name = "bn" + id + ".gamma";
      bn.beta.name = "bn" + id + ".beta";
      net.layers.push_back({"bn" + id, std::move(bn)});
      relu("relu" + id);
    }
    conv("conv" + two_digits(spec.depth_modules + 1), 1, spec.feature_channels,
         /*bias=*/true);
  } else {
    const int patch_f = spec.mlp_patch * spec.mlp_patch;
    const int widths[4] = {patch_f * spec.in_channels, spec.mlp_hidden,
                           spec.mlp_hidden, patch_f};
    for (int i = 0; i < 3; ++i) {
      const std::string name = "fc" + std::to_string(i);
      LinearLayer<T> layer;
      layer.weight = Parameter<T>(
          xavier_init<T>({static_cast<std::size_t>(widths[i + 1]),
                          static_cast<std::size_t>(widths[i]), 1, 1},
                         static_cast<std::size_t>(widths[i]), rng),
          name + ".weight", true);
      layer.bias = Parameter<T>(
          Tensor<T>(1, static_cast<std::size_t>(widths[i + 1]), 1, 1, T{0}),
          name + ".bias", false);
      net.layers.push_back({name, std::move(layer)});
      if (i < 2) {
        const std::string act = "act" + std::to_string(i);
        if (spec.mlp_activation == MlpActivation::tanh) {
          net.layers.push_back({act, TanhLayer<T>{}});
        } else {
          net.layers.push_back({act, ReluLayer<T>{}});
        }
      }
    }
  }
  return net;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
Tensor<T> NetworkT<T>::forward(const Tensor<T>& input) {
  const bool cache = (mode_ == Mode::training);
  Tensor<T> x = input;
  for (auto& named : layers) {
    x = std::visit(
        [&](auto& layer) -> Tensor<T> {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, ConvLayer<T>>) {
            if (cache) layer.cached_input = x;
            return conv2d_forward(x, layer.weight.value,
                                  layer.bias ? &layer.bias->value : nullptr);
          } else if constexpr (std::is_same_v<L, BatchNormState<T>>) {
            return batchnorm_forward(x, layer, mode_);
          } else if constexpr (std::is_same_v<L, ReluLayer<T>>) {
            if (cache) layer.cached_input = x;
            return relu_forward(x);
          } else if constexpr (std::is_same_v<L, TanhLayer<T>>) {
            Tensor<T> y(x.shape());
            for (std::size_t i = 0; i < x.size(); ++i) {
              y[i] = std::tanh(x[i]);
            }
            if (cache) layer.cached_output = y;
            return y;
          } else {
            if (cache) layer.cached_input = x;
            return linear_forward(x, layer.weight.value, &layer.bias.value);
          }
        },
        named.op);
  }
  return x;
}

template <typename T>
Tensor<T> NetworkT<T>::backward(const Tensor<T>& upstream_grad) {
  if (mode_ != Mode::training) {
    throw ContractError("backward requires a preceding training-mode forward");
  }
  Tensor<T> g = upstream_grad;
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    g = std::visit(
        [&](auto& layer) -> Tensor<T> {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, ConvLayer<T>>) {
            ConvGrads<T> cg = conv2d_backward(g, layer.cached_input,
                                              layer.weight.value,
                                              layer.bias.has_value());
            add_into(layer.weight.grad, cg.kernel_grad);
            if (layer.bias) add_into(layer.bias->grad, cg.bias_grad);
            return std::move(cg.input_grad);
          } else if constexpr (std::is_same_v<L, BatchNormState<T>>) {
            BnGrads<T> bg = batchnorm_backward(g, layer);
            add_into(layer.gamma.grad, bg.gamma_grad);
            add_into(layer.beta.grad, bg.beta_grad);
            return std::move(bg.input_grad);
          } else if constexpr (std::is_same_v<L, ReluLayer<T>>) {
            return relu_backward(g, layer.cached_input);
          } else if constexpr (std::is_same_v<L, TanhLayer<T>>) {
            check_same_shape(g, layer.cached_output, "tanh backward");
            Tensor<T> out(g.shape());
            for (std::size_t i = 0; i < g.size(); ++i) {
              const T y = layer.cached_output[i];
              out[i] = g[i] * (T{1} - y * y);
            }
            return out;
          } else {
            LinearGrads<T> lg = linear_backward(g, layer.cached_input,
                                                layer.weight.value, true);
            add_into(layer.weight.grad, lg.weight_grad);
            add_into(layer.bias.grad, lg.bias_grad);
            return std::move(lg.input_grad);
          }
        },
        it->op);
  }
  return g;
}

template <typename T>
std::vector<Parameter<T>*> NetworkT<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& named : layers) {
    std::visit(
        [&](auto& layer) {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, ConvLayer<T>>) {
            out.push_back(&layer.weight);
            if (layer.bias) out.push_back(&*layer.bias);
          } else if constexpr (std::is_same_v<L, BatchNormState<T>>) {
            out.push_back(&layer.gamma);
            out.push_back(&layer.beta);
          } else if constexpr (std::is_same_v<L, LinearLayer<T>>) {
            out.push_back(&layer.weight);
            out.push_back(&layer.bias);
          }
        },
        named.op);
  }
  return out;
}

template <typename T>
std::size_t NetworkT<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& named : layers) {
    std::visit(
        [&](const auto& layer) {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, ConvLayer<T>>) {
            n += layer.weight.value.size();
            if (layer.bias) n += layer.bias->value.size();
          } else if constexpr (std::is_same_v<L, BatchNormState<T>>) {
            n += layer.gamma.value.size() + layer.beta.value.size();
          } else if constexpr (std::is_same_v<L, LinearLayer<T>>) {
            n += layer.weight.value.size() + layer.bias.value.size();
          }
        },
        named.op);
  }
  return n;
}

template <typename T>
void NetworkT<T>::zero_grad() {
  for (Parameter<T>* p : parameters()) p->zero_grad();
}

template <typename T>
Tensor<T> forward(NetworkT<T>& network, const Tensor<T>& input, Mode mode) {
  network.set_mode(mode);
  return network.forward(input);
}

template <typename T>
Tensor<T> predict_denoised(NetworkT<T>& network,
                           const Tensor<T>& primary_input_slice,
                           const Tensor<T>& full_input) {
  if (!network.spec.residual) {
    throw ContractError(
        "predict_denoised requires a residual network; the MLP predicts "
        "images directly");
  }
  Tensor<T> residual = forward(network, full_input, Mode::inference);
  check_same_shape(primary_input_slice, residual, "predict_denoised");
  return subtract(primary_input_slice, residual);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json spec_to_json(const NetworkSpec& s) {
  return json{{"kind", to_string(s.kind)},
              {"depth_modules", s.depth_modules},
              {"in_channels", s.in_channels},
              {"feature_channels", s.feature_channels},
              {"kernel", s.kernel},
              {"residual", s.residual},
              {"mlp_patch", s.mlp_patch},
              {"mlp_hidden", s.mlp_hidden},
              {"mlp_activation", to_string(s.mlp_activation)}};
}

NetworkSpec spec_from_json(const json& j) {
  NetworkSpec s;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "dncnn") {
    s.kind = NetworkKind::dncnn;
  } else if (kind == "mlp") {
    s.kind = NetworkKind::mlp;
  } else {
    throw FormatError("unknown network kind: " + kind);
  }
  s.depth_modules = j.at("depth_modules").get<int>();
  s.in_channels = j.at("in_channels").get<int>();
  s.feature_channels = j.at("feature_channels").get<int>();
  s.kernel = j.at("kernel").get<int>();
  s.residual = j.at("residual").get<bool>();
  s.mlp_patch = j.at("mlp_patch").get<int>();
  s.mlp_hidden = j.at("mlp_hidden").get<int>();
  const std::string act = j.at("mlp_activation").get<std::string>();
  s.mlp_activation = act == "tanh" ? MlpActivation::tanh : MlpActivation::relu;
  return s;
}

std::vector<double> tensor_to_doubles(const TensorF& t) {
  std::vector<double> v(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) v[i] = static_cast<double>(t[i]);
  return v;
}

TensorF channel_tensor_from_json(const json& arr) {
  std::vector<float> v;
  v.reserve(arr.size());
  for (const auto& x : arr) v.push_back(static_cast<float>(x.get<double>()));
  const Shape4 shape{1, v.size(), 1, 1};
  return TensorF::from_external(shape, std::move(v));
}

}  // namespace

void save_network(const Network& network, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  json layers_json = json::array();
  for (const auto& named : network.layers) {
    std::visit(
        [&](const auto& layer) {
          using L = std::decay_t<decltype(layer)>;
          json entry{{"name", named.name}};
          if constexpr (std::is_same_v<L, ConvLayer<float>>) {
            entry["type"] = "conv";
            entry["out"] = layer.weight.value.batch();
            entry["in"] = layer.weight.value.channels();
            entry["kh"] = layer.weight.value.height();
            entry["kw"] = layer.weight.value.width();
            entry["bias"] = layer.bias.has_value();
            write_tensor(dir / (named.name + ".weight.ten"), layer.weight.value);
            if (layer.bias) {
              write_tensor(dir / (named.name + ".bias.ten"), layer.bias->value);
            }
          } else if constexpr (std::is_same_v<L, BatchNormState<float>>) {
            entry["type"] = "batchnorm";
            entry["channels"] = layer.channels();
            entry["momentum"] = static_cast<double>(layer.momentum);
            entry["epsilon"] = static_cast<double>(layer.epsilon);
            entry["stats_ready"] = layer.stats_ready;
            entry["running_mean"] = tensor_to_doubles(layer.running_mean);
            entry["running_var"] = tensor_to_doubles(layer.running_var);
            write_tensor(dir / (named.name + ".gamma.ten"), layer.gamma.value);
            write_tensor(dir / (named.name + ".beta.ten"), layer.beta.value);
          } else if constexpr (std::is_same_v<L, ReluLayer<float>>) {
            entry["type"] = "relu";
          } else if constexpr (std::is_same_v<L, TanhLayer<float>>) {
            entry["type"] = "tanh";
          } else {
            entry["type"] = "linear";
            entry["out"] = layer.weight.value.batch();
            entry["in"] = layer.weight.value.channels();
            write_tensor(dir / (named.name + ".weight.ten"), layer.weight.value);
            write_tensor(dir / (named.name + ".bias.ten"), layer.bias.value);
          }
          layers_json.push_back(std::move(entry));
        },
        named.op);
  }

  json manifest{{"format_version", kCheckpointVersion},
                {"spec", spec_to_json(network.spec)},
                {"creation_seed", network.creation_seed},
                {"layers", std::move(layers_json)}};

  std::ofstream f(dir / "manifest.json");
  if (!f) {
    throw FormatError("cannot write checkpoint manifest in " + dir.string());
  }
  f << manifest.dump(2) << "\n";
}

Network load_network(const std::filesystem::path& dir) {
  json manifest;
  {
    std::ifstream f(dir / "manifest.json");
    if (!f) {
      throw FormatError("missing checkpoint manifest: " +
                        (dir / "manifest.json").string());
    }
    try {
      f >> manifest;
    } catch (const json::exception& e) {
      throw FormatError("malformed checkpoint manifest: " + std::string(e.what()));
    }
  }

  try {
    if (manifest.at("format_version").get<int>() != kCheckpointVersion) {
      throw FormatError("unsupported checkpoint format version");
    }
    Network net;
    net.spec = spec_from_json(manifest.at("spec"));
    net.creation_seed = manifest.at("creation_seed").get<std::uint64_t>();

    auto load_param = [&](const std::string& layer, const std::string& param,
                          const Shape4& expect, bool penalized) {
      TensorF t = read_tensor(dir / (layer + "." + param + ".ten"));
      if (t.shape() != expect) {
        throw FormatError("checkpoint blob " + layer + "." + param +
                          " has shape " + shape_to_string(t.shape()) +
                          ", expected " + shape_to_string(expect));
      }
      return Parameter<float>(std::move(t), layer + "." + param, penalized);
    };

    for (const auto& entry : manifest.at("layers")) {
      const std::string name = entry.at("name").get<std::string>();
      const std::string type = entry.at("type").get<std::string>();
      if (type == "conv") {
        ConvLayer<float> layer;
        const Shape4 wshape{entry.at("out").get<std::size_t>(),
                            entry.at("in").get<std::size_t>(),
                            entry.at("kh").get<std::size_t>(),
                            entry.at("kw").get<std::size_t>()};
        layer.weight = load_param(name, "weight", wshape, true);
        if (entry.at("bias").get<bool>()) {
          layer.bias = load_param(name, "bias", {1, wshape[0], 1, 1}, false);
        }
        net.layers.push_back({name, std::move(layer)});
      } else if (type == "batchnorm") {
        const auto channels = entry.at("channels").get<std::size_t>();
        BatchNormState<float> bn(channels);
        bn.gamma = load_param(name, "gamma", {1, channels, 1, 1}, false);
        bn.beta = load_param(name, "beta", {1, channels, 1, 1}, false);
        bn.momentum = static_cast<float>(entry.at("momentum").get<double>());
        bn.epsilon = static_cast<float>(entry.at("epsilon").get<double>());
        bn.stats_ready = entry.at("stats_ready").get<bool>();
        bn.running_mean = channel_tensor_from_json(entry.at("running_mean"));
        bn.running_var = channel_tensor_from_json(entry.at("running_var"));
        if (bn.running_mean.channels() != channels ||
            bn.running_var.channels() != channels) {
          throw FormatError("batchnorm statistics length mismatch in " + name);
        }
        net.layers.push_back({name, std::move(bn)});
      } else if (type == "relu") {
        net.layers.push_back({name, ReluLayer<float>{}});
      } else if (type == "tanh") {
        net.layers.push_back({name, TanhLayer<float>{}});
      } else if (type == "linear") {
        LinearLayer<float> layer;
        const Shape4 wshape{entry.at("out").get<std::size_t>(),
                            entry.at("in").get<std::size_t>(), 1, 1};
        layer.weight = load_param(name, "weight", wshape, true);
        layer.bias = load_param(name, "bias", {1, wshape[0], 1, 1}, false);
        net.layers.push_back({name, std::move(layer)});
      } else {
        throw FormatError("unknown layer type in checkpoint: " + type);
      }
    }
    return net;
  } catch (const json::exception& e) {
    throw FormatError("malformed checkpoint manifest: " + std::string(e.what()));
  }
}

// ---------------------------------------------------------------------------

#define LDCT_INSTANTIATE_MODELS(T)                                       \
  template class NetworkT<T>;                                            \
  template NetworkT<T> build_network<T>(const NetworkSpec&, Rng&);       \
  template Tensor<T> forward<T>(NetworkT<T>&, const Tensor<T>&, Mode);   \
  template Tensor<T> predict_denoised<T>(NetworkT<T>&, const Tensor<T>&, \
                                         const Tensor<T>&);

LDCT_INSTANTIATE_MODELS(float)
LDCT_INSTANTIATE_MODELS(double)

#undef LDCT_INSTANTIATE_MODELS

}  // namespace ldct
