#pragma once
// The seven classifiers behind one Model type.
//
// Parameters are registered in a fixed order by each builder; that order is
// both the initialization draw order and the order forward() consumes them.
// Linear weights are stored [in x out] so a layer is x * W + b. Conv weights
// are [out x in x kernel].

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mnist1d/autograd.hpp"
#include "mnist1d/dataset.hpp"
#include "mnist1d/io.hpp"
#include "mnist1d/ops.hpp"
#include "mnist1d/prng.hpp"

namespace mnist1d {

enum class Arch { kLogreg, kMlp, kCnn, kGru, kResnet, kTcn, kDcnn };

inline constexpr std::array<Arch, 7> kAllArchs = {Arch::kLogreg, Arch::kMlp,    Arch::kCnn, Arch::kGru,
                                                  Arch::kResnet, Arch::kTcn, Arch::kDcnn};

inline std::string_view arch_name(Arch a) {
  switch (a) {
    case Arch::kLogreg: return "logreg";
    case Arch::kMlp: return "mlp";
    case Arch::kCnn: return "cnn";
    case Arch::kGru: return "gru";
    case Arch::kResnet: return "resnet";
    case Arch::kTcn: return "tcn";
    case Arch::kDcnn: return "dcnn";
  }
  return "?";
}

inline std::string valid_arch_list() {
  std::string s;
  for (auto a : kAllArchs) s += (s.empty() ? "" : ", ") + std::string(arch_name(a));
  return s;
}

inline Arch parse_arch(std::string_view name) {
  for (auto a : kAllArchs)
    if (arch_name(a) == name) return a;
  throw std::invalid_argument("unknown arch '" + std::string(name) + "' (valid: " + valid_arch_list() + ")");
}

enum class Activation { kRelu, kTanh, kElu, kSigmoid, kLearned };

NLOHMANN_JSON_SERIALIZE_ENUM(Activation, {{Activation::kRelu, "relu"},
                                          {Activation::kTanh, "tanh"},
                                          {Activation::kElu, "elu"},
                                          {Activation::kSigmoid, "sigmoid"},
                                          {Activation::kLearned, "learned"}})

/// Architecture hyperparameters. Each builder reads the fields it needs.
struct Hyper {
  std::vector<std::size_t> hidden{100, 100};        // mlp
  Activation activation = Activation::kRelu;        // mlp hidden layers
  std::size_t channels = 32;                        // cnn, resnet, dcnn
  std::size_t gru_hidden = 64;                      // gru
  std::vector<std::size_t> tcn_channels{32, 32, 32};
  double dropout = 0.1;                             // tcn
  bool tcn_dilated = false;                         // per-block dilation 1, 2, 4, ...
  bool resnet_identity_after_first = false;         // skip from first block layer instead of block input

  bool operator==(const Hyper&) const = default;
};

inline void to_json(nlohmann::json& j, const Hyper& h) {
  j = nlohmann::json{{"hidden", h.hidden},
                     {"activation", h.activation},
                     {"channels", h.channels},
                     {"gru_hidden", h.gru_hidden},
                     {"tcn_channels", h.tcn_channels},
                     {"dropout", h.dropout},
                     {"tcn_dilated", h.tcn_dilated},
                     {"resnet_identity_after_first", h.resnet_identity_after_first}};
}

inline void from_json(const nlohmann::json& j, Hyper& h) {
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("hidden", h.hidden);
  get("activation", h.activation);
  get("channels", h.channels);
  get("gru_hidden", h.gru_hidden);
  get("tcn_channels", h.tcn_channels);
  get("dropout", h.dropout);
  get("tcn_dilated", h.tcn_dilated);
  get("resnet_identity_after_first", h.resnet_identity_after_first);
}

// ---------------------------------------------------------------------------
// Learned activation: a(x) = elu(x) + f_theta(x), with f_theta a 1 -> W -> W -> 1
// tanh network applied elementwise. theta = {w1[1xW], b1[W], w2[WxW], b2[W], w3[Wx1], b3[1]}.

inline constexpr std::size_t kLearnedActivationWidth = 100;

inline Tensor apply_learned_activation(std::span<const Tensor> theta, const Tensor& x) {
  if (theta.size() != 6) throw std::invalid_argument("learned activation expects 6 parameter tensors");
  const Tensor flat = reshape(x, {x.numel(), 1});
  Tensor h = tanh(add_rowvec(matmul(flat, theta[0]), theta[1]));
  h = tanh(add_rowvec(matmul(h, theta[2]), theta[3]));
  const Tensor f = add_rowvec(matmul(h, theta[4]), theta[5]);
  return add(elu(x), reshape(f, x.shape()));
}

struct LearnedActivation {
  std::vector<Tensor> theta;

  /// Hidden layers drawn uniformly with bound 1/sqrt(fan_in), hidden biases
  /// zero, output layer zero so the activation starts as exact ELU.
  static LearnedActivation init(RngStream& rng, std::size_t width = kLearnedActivationWidth) {
    auto uniform = [&rng](Shape s, double bound) {
      Tensor t = Tensor::zeros(std::move(s));
      for (auto& v : t.mutable_data()) v = bound * (2.0 * rng.next_uniform() - 1.0);
      return t;
    };
    LearnedActivation a;
    a.theta = {uniform({1, width}, 1.0),
               Tensor::zeros({width}),
               uniform({width, width}, 1.0 / std::sqrt(static_cast<double>(width))),
               Tensor::zeros({width}),
               Tensor::zeros({width, 1}),
               Tensor::zeros({1})};
    return a;
  }

  Tensor operator()(const Tensor& x) const { return apply_learned_activation(theta, x); }
};

/// Samples a(x) on [lo, hi] with the given step; (hi - lo)/step + 1 points.
inline std::vector<std::pair<double, double>> sample_activation(const LearnedActivation& a, double lo = -4.0,
                                                               double hi = 4.0, double step = 0.01) {
  const auto n = static_cast<std::size_t>(std::llround((hi - lo) / step)) + 1;
  std::vector<double> xs(n);
  for (std::size_t i = 0; i < n; ++i) xs[i] = lo + step * static_cast<double>(i);
  NoGradGuard ng;
  const Tensor y = a(Tensor({n}, xs));
  std::vector<std::pair<double, double>> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = {xs[i], y.data()[i]};
  return out;
}

using ActivationFn = std::function<Tensor(const Tensor&)>;

inline ActivationFn standard_activation(Activation a) {
  switch (a) {
    case Activation::kRelu: return [](const Tensor& x) { return relu(x); };
    case Activation::kTanh: return [](const Tensor& x) { return tanh(x); };
    case Activation::kElu: return [](const Tensor& x) { return elu(x); };
    case Activation::kSigmoid: return [](const Tensor& x) { return sigmoid(x); };
    case Activation::kLearned: break;
  }
  throw std::invalid_argument("standard_activation: learned activation needs parameters");
}

/// MLP forward over an explicit parameter list {w0, b0, w1, b1, ..., w_out, b_out}.
inline Tensor mlp_forward(std::span<const Tensor> params, const Tensor& x, const ActivationFn& act) {
  if (params.size() % 2 != 0 || params.empty()) throw std::invalid_argument("mlp_forward: bad parameter list");
  Tensor h = x;
  for (std::size_t i = 0; i + 2 < params.size(); i += 2) h = act(add_rowvec(matmul(h, params[i]), params[i + 1]));
  return add_rowvec(matmul(h, params[params.size() - 2]), params.back());
}

// ---------------------------------------------------------------------------

class Model {
 public:
  Arch arch = Arch::kLogreg;
  Hyper hyper;
  std::vector<std::string> names;
  std::vector<Tensor> params;
  std::map<std::string, BatchNormState> bn;
  std::shared_ptr<const LearnedActivation> learned;  // for Activation::kLearned

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.numel();
    return n;
  }

  const Tensor& param(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return params[i];
    throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  }
  Tensor& param(std::string_view name) { return const_cast<Tensor&>(std::as_const(*this).param(name)); }

  /// Deep copy: parameter values and BN statistics are not shared.
  Model clone() const {
    Model m = *this;
    for (auto& p : m.params) p = p.detach().set_requires_grad(true);
    return m;
  }

  ActivationFn activation_fn() const {
    if (hyper.activation == Activation::kLearned) {
      if (!learned) throw std::logic_error("model uses a learned activation but none is attached");
      auto a = learned;
      return [a](const Tensor& x) { return (*a)(x); };
    }
    return standard_activation(hyper.activation);
  }

  /// logits [B x 10] for x [B x L]. Train mode uses batch statistics (and
  /// updates running ones) and draws dropout masks from `rng`.
  Tensor forward(const Tensor& x, Mode mode, RngStream& rng) {
    if (x.rank() != 2) throw std::invalid_argument("forward: expected [B x L] input, got " + shape_str(x.shape()));
    for (double v : x.data())
      if (!std::isfinite(v)) throw std::invalid_argument("forward: non-finite input");
    return forward_with(params, x, mode, rng);
  }

  Tensor forward_with(std::span<const Tensor> ps, const Tensor& x, Mode mode, RngStream& rng);

 private:
  struct Cursor {
    std::span<const Tensor> ps;
    std::size_t i = 0;
    const Tensor& next() { return ps[i++]; }
  };
};

namespace detail {

class ModelBuilder {
 public:
  ModelBuilder(Arch arch, Hyper hyper) {
    m_.arch = arch;
    m_.hyper = std::move(hyper);
  }

  /// Weight drawn U(-b, b), b = 1/sqrt(fan_in), at init time.
  void weight(std::string name, Shape shape, std::size_t fan_in) {
    specs_.push_back({std::move(name), std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)), 0.0});
  }
  void constant(std::string name, Shape shape, double value) {
    specs_.push_back({std::move(name), std::move(shape), 0.0, value});
  }
  void linear(const std::string& name, std::size_t in, std::size_t out) {
    weight(name + ".weight", {in, out}, in);
    constant(name + ".bias", {out}, 0.0);
  }
  void conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k) {
    weight(name + ".weight", {out, in, k}, in * k);
    constant(name + ".bias", {out}, 0.0);
  }
  void batchnorm(const std::string& name, std::size_t c) {
    constant(name + ".gamma", {c}, 1.0);
    constant(name + ".beta", {c}, 0.0);
    m_.bn.emplace(name, BatchNormState(c));
  }

  Model finish(RngStream& rng) {
    for (auto& s : specs_) {
      Tensor t = Tensor::full(s.shape, s.value);
      if (s.bound > 0.0)
        for (auto& v : t.mutable_data()) v = s.bound * (2.0 * rng.next_uniform() - 1.0);
      t.set_requires_grad(true);
      m_.names.push_back(std::move(s.name));
      m_.params.push_back(std::move(t));
    }
    return std::move(m_);
  }

 private:
  struct Spec {
    std::string name;
    Shape shape;
    double bound;
    double value;
  };
  Model m_;
  std::vector<Spec> specs_;
};

}  // namespace detail

inline constexpr std::size_t kInputLen = 40;

inline Model build_logreg(RngStream& rng, std::size_t in = kInputLen) {
  detail::ModelBuilder b(Arch::kLogreg, Hyper{});
  b.linear("fc", in, kNumClasses);
  return b.finish(rng);
}

/// Linear-activation stack then a 10-way head. An empty hidden list yields logistic regression.
inline Model build_mlp(RngStream& rng, std::vector<std::size_t> hidden = {100, 100},
                       Activation act = Activation::kRelu, std::size_t in = kInputLen) {
  Hyper h;
  h.hidden = hidden;
  h.activation = act;
  detail::ModelBuilder b(Arch::kMlp, h);
  std::size_t prev = in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    b.linear("fc" + std::to_string(i), prev, hidden[i]);
    prev = hidden[i];
  }
  b.linear("out", prev, kNumClasses);
  return b.finish(rng);
}

/// Three k3/s2/p1 convolutions (1 -> C -> C -> C) with ReLU, global average pool, linear C -> 10.
inline Model build_cnn(RngStream& rng, std::size_t channels = 32) {
  Hyper h;
  h.channels = channels;
  detail::ModelBuilder b(Arch::kCnn, h);
  b.conv("conv0", 1, channels, 3);
  b.conv("conv1", channels, channels, 3);
  b.conv("conv2", channels, channels, 3);
  b.linear("fc", channels, kNumClasses);
  return b.finish(rng);
}

/// Single-layer GRU over the 40 points as scalar time steps; last hidden state -> linear H -> 10.
/// Gate weights use bound 1/sqrt(H) for both input and recurrent matrices.
inline Model build_gru(RngStream& rng, std::size_t hidden = 64) {
  Hyper h;
  h.gru_hidden = hidden;
  detail::ModelBuilder b(Arch::kGru, h);
  for (const char* g : {"r", "z", "n"}) b.weight(std::string("w_i") + g, {1, hidden}, hidden);
  for (const char* g : {"r", "z", "n"}) b.weight(std::string("w_h") + g, {hidden, hidden}, hidden);
  for (const char* g : {"r", "z", "n"}) b.constant(std::string("b_i") + g, {hidden}, 0.0);
  for (const char* g : {"r", "z", "n"}) b.constant(std::string("b_h") + g, {hidden}, 0.0);
  b.linear("fc", hidden, kNumClasses);
  return b.finish(rng);
}

/// Stem conv(1 -> C, k7, s2, p3) + BN + ReLU, one residual block of two
/// k3/s1/p1 convs with BN, global average pool, linear C -> 10.
inline Model build_resnet(RngStream& rng, std::size_t channels = 32, bool identity_after_first = false) {
  Hyper h;
  h.channels = channels;
  h.resnet_identity_after_first = identity_after_first;
  detail::ModelBuilder b(Arch::kResnet, h);
  b.conv("stem", 1, channels, 7);
  b.batchnorm("stem_bn", channels);
  b.conv("block.conv1", channels, channels, 3);
  b.batchnorm("block.bn1", channels);
  b.conv("block.conv2", channels, channels, 3);
  b.batchnorm("block.bn2", channels);
  b.linear("fc", channels, kNumClasses);
  return b.finish(rng);
}

/// Stem conv(1 -> c0, k7, s2, p3) + BN + ReLU, then one residual block per
/// entry of `block_channels`: two k3 convs each followed by BN, ReLU and
/// dropout; the skip gets a 1x1 conv when channel counts differ; ReLU after
/// the addition. Global average pool, linear -> 10.
inline Model build_tcn(RngStream& rng, std::vector<std::size_t> block_channels = {32, 32, 32},
                       double dropout_rate = 0.1, bool dilated = false) {
  if (block_channels.empty()) throw std::invalid_argument("build_tcn: need at least one block");
  Hyper h;
  h.tcn_channels = block_channels;
  h.dropout = dropout_rate;
  h.tcn_dilated = dilated;
  detail::ModelBuilder b(Arch::kTcn, h);
  b.conv("stem", 1, block_channels[0], 7);
  b.batchnorm("stem_bn", block_channels[0]);
  std::size_t in = block_channels[0];
  for (std::size_t i = 0; i < block_channels.size(); ++i) {
    const std::string p = "block" + std::to_string(i);
    const std::size_t out = block_channels[i];
    b.conv(p + ".conv1", in, out, 3);
    b.batchnorm(p + ".bn1", out);
    b.conv(p + ".conv2", out, out, 3);
    b.batchnorm(p + ".bn2", out);
    if (in != out) b.conv(p + ".skip", in, out, 1);
    in = out;
  }
  b.linear("fc", in, kNumClasses);
  return b.finish(rng);
}

/// Three conv(k3, dilation 2, padding 2, stride 1) layers with ReLU, global average pool, linear C -> 10.
inline Model build_dcnn(RngStream& rng, std::size_t channels = 32) {
  Hyper h;
  h.channels = channels;
  detail::ModelBuilder b(Arch::kDcnn, h);
  b.conv("conv0", 1, channels, 3);
  b.conv("conv1", channels, channels, 3);
  b.conv("conv2", channels, channels, 3);
  b.linear("fc", channels, kNumClasses);
  return b.finish(rng);
}

/// Builds `arch` from `hyper`, drawing initial weights from `rng`.
inline Model build_model(Arch arch, const Hyper& hyper, RngStream& rng) {
  switch (arch) {
    case Arch::kLogreg: return build_logreg(rng);
    case Arch::kMlp: return build_mlp(rng, hyper.hidden, hyper.activation);
    case Arch::kCnn: return build_cnn(rng, hyper.channels);
    case Arch::kGru: return build_gru(rng, hyper.gru_hidden);
    case Arch::kResnet: return build_resnet(rng, hyper.channels, hyper.resnet_identity_after_first);
    case Arch::kTcn: return build_tcn(rng, hyper.tcn_channels, hyper.dropout, hyper.tcn_dilated);
    case Arch::kDcnn: return build_dcnn(rng, hyper.channels);
  }
  throw std::invalid_argument("build_model: unknown arch");
}

inline Tensor Model::forward_with(std::span<const Tensor> ps, const Tensor& x, Mode mode, RngStream& rng) {
  if (ps.size() != params.size()) throw std::invalid_argument("forward_with: parameter count mismatch");
  Cursor c{ps};
  const std::size_t B = x.dim(0), L = x.dim(1);
  auto linear = [&c](const Tensor& h) {
    const Tensor& w = c.next();
    const Tensor& b = c.next();
    return add_rowvec(matmul(h, w), b);
  };
  auto conv = [&c](const Tensor& h, std::size_t stride, std::size_t pad, std::size_t dil) {
    const Tensor& w = c.next();
    const Tensor& b = c.next();
    return conv1d(h, w, b, stride, pad, dil);
  };
  auto norm = [&c, this, mode](const Tensor& h, const std::string& name) {
    const Tensor& g = c.next();
    const Tensor& b = c.next();
    return batchnorm1d(h, g, b, bn.at(name), mode);
  };

  switch (arch) {
    case Arch::kLogreg:
      return linear(x);
    case Arch::kMlp:
      return mlp_forward(ps, x, activation_fn());
    case Arch::kCnn: {
      Tensor h = reshape(x, {B, 1, L});
      for (int i = 0; i < 3; ++i) h = relu(conv(h, 2, 1, 1));
      return linear(global_avg_pool(h));
    }
    case Arch::kDcnn: {
      Tensor h = reshape(x, {B, 1, L});
      for (int i = 0; i < 3; ++i) h = relu(conv(h, 1, 2, 2));
      return linear(global_avg_pool(h));
    }
    case Arch::kGru: {
      const Tensor h = gru_sequence(x, ps.subspan(0, 12));
      c.i = 12;
      return linear(h);
    }
    case Arch::kResnet: {
      Tensor h = relu(norm(conv(reshape(x, {B, 1, L}), 2, 3, 1), "stem_bn"));
      const Tensor a = relu(norm(conv(h, 1, 1, 1), "block.bn1"));
      const Tensor y = norm(conv(a, 1, 1, 1), "block.bn2");
      h = relu(y + (hyper.resnet_identity_after_first ? a : h));
      return linear(global_avg_pool(h));
    }
    case Arch::kTcn: {
      const auto& chans = hyper.tcn_channels;
      Tensor h = relu(norm(conv(reshape(x, {B, 1, L}), 2, 3, 1), "stem_bn"));
      std::size_t in = chans[0];
      for (std::size_t i = 0; i < chans.size(); ++i) {
        const std::string p = "block" + std::to_string(i);
        const std::size_t d = hyper.tcn_dilated ? (std::size_t{1} << i) : 1;
        Tensor a = dropout(relu(norm(conv(h, 1, d, d), p + ".bn1")), hyper.dropout, rng, mode);
        a = dropout(relu(norm(conv(a, 1, d, d), p + ".bn2")), hyper.dropout, rng, mode);
        const Tensor skip = in != chans[i] ? conv(h, 1, 0, 1) : h;
        h = relu(a + skip);
        in = chans[i];
      }
      return linear(global_avg_pool(h));
    }
  }
  throw std::logic_error("forward: unknown arch");
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   "MNIST1DM" | u32 version | payload | u32 CRC-32(payload)
//   payload: str header JSON {arch, hyper, generator, optional config}, u32 n_params,
//            per param: str name, u32 rank, u64 dims[rank], f64 values;
//            u32 n_bn, per state: str name, u32 C, f64 mean[C], f64 var[C],
//            f64 momentum, f64 epsilon;
//            u8 has_learned, then 6 tensors (u32 rank, u64 dims, f64 values).

inline constexpr std::string_view kCheckpointMagic = "MNIST1DM";
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

namespace detail {
inline void write_tensor(ByteWriter& w, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.u64(d);
  w.f64s(t.data());
}
inline Tensor read_tensor(ByteReader& r) {
  Shape s(r.u32());
  for (auto& d : s) d = r.u64();
  return Tensor(s, r.f64s(shape_numel(s)));
}
}  // namespace detail

/// `config` (optional) is stored in the header for provenance only.
inline std::vector<std::uint8_t> encode_checkpoint(const Model& m, const nlohmann::json& config = nullptr) {
  ByteWriter w;
  nlohmann::json header = {
      {"arch", std::string(arch_name(m.arch))}, {"hyper", m.hyper}, {"generator", std::string(kGeneratorVersion)}};
  if (!config.is_null()) header["config"] = config;
  w.str(header.dump());
  w.u32(static_cast<std::uint32_t>(m.params.size()));
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    w.str(m.names[i]);
    detail::write_tensor(w, m.params[i]);
  }
  w.u32(static_cast<std::uint32_t>(m.bn.size()));
  for (const auto& [name, st] : m.bn) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(st.running_mean.size()));
    w.f64s(st.running_mean);
    w.f64s(st.running_var);
    w.f64(st.momentum);
    w.f64(st.epsilon);
  }
  w.u8(m.learned ? 1 : 0);
  if (m.learned)
    for (const auto& t : m.learned->theta) detail::write_tensor(w, t);
  return frame(kCheckpointMagic, kCheckpointFormatVersion, w.bytes());
}

inline Model decode_checkpoint(std::span<const std::uint8_t> file) {
  const auto payload = unframe(file, kCheckpointMagic, kCheckpointFormatVersion);
  ByteReader r(payload);
  Model m;
  try {
    const auto header = nlohmann::json::parse(r.str());
    m.arch = parse_arch(header.at("arch").get<std::string>());
    m.hyper = header.at("hyper").get<Hyper>();
  } catch (const std::exception& e) {
    throw FormatError(FormatError::Kind::kMalformed, std::string("bad checkpoint header: ") + e.what());
  }
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    m.names.push_back(r.str());
    m.params.push_back(detail::read_tensor(r).set_requires_grad(true));
  }
  const auto nbn = r.u32();
  for (std::uint32_t i = 0; i < nbn; ++i) {
    auto name = r.str();
    BatchNormState st;
    const auto c = r.u32();
    st.running_mean = r.f64s(c);
    st.running_var = r.f64s(c);
    st.momentum = r.f64();
    st.epsilon = r.f64();
    m.bn.emplace(std::move(name), std::move(st));
  }
  if (r.u8()) {
    auto a = std::make_shared<LearnedActivation>();
    for (int i = 0; i < 6; ++i) a->theta.push_back(detail::read_tensor(r));
    m.learned = std::move(a);
  }
  if (r.remaining() != 0) throw FormatError(FormatError::Kind::kMalformed, "trailing bytes in checkpoint");
  return m;
}

inline void save_checkpoint(const Model& m, const std::filesystem::path& path,
                            const nlohmann::json& config = nullptr) {
  write_file_atomic(path, encode_checkpoint(m, config));
}

inline Model load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace mnist1d
