#include "cathseg/network.hpp"

#include <atomic>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "cathseg/rng.hpp"

namespace cathseg {

using nlohmann::json;
using nn::Tensor;

const char* to_string(Profile p) { return p == Profile::tiny ? "tiny" : "paper_faithful"; }

Profile profile_from_string(const std::string& s) {
  if (s == "tiny") return Profile::tiny;
  if (s == "paper_faithful" || s == "paper") return Profile::paper_faithful;
  throw std::invalid_argument("unknown profile '" + s + "' (expected tiny or paper_faithful)");
}

const char* to_string(Mode m) { return m == Mode::df ? "df" : "single_axis"; }

Mode mode_from_string(const std::string& s) {
  if (s == "df") return Mode::df;
  if (s == "single_axis" || s == "single-axis") return Mode::single_axis;
  throw std::invalid_argument("unknown mode '" + s + "' (expected df or single_axis)");
}

NetConfig NetConfig::tiny() {
  NetConfig c;
  c.profile = Profile::tiny;
  c.encoder_stages = {{8, 8}, {16, 16}};
  c.bottleneck_widths = {32, 32, 2};
  c.bottleneck_kernels = {3, 1, 1};
  c.deconv_kernels = {2, 2};
  c.deconv_strides = {2, 2};
  c.feature_channels = 16;
  c.p_drop = 0.15;
  return c;
}

NetConfig NetConfig::paper_faithful() {
  NetConfig c;
  c.profile = Profile::paper_faithful;
  c.encoder_stages = {{64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
  c.bottleneck_widths = {1024, 1024, 2};
  c.bottleneck_kernels = {3, 1, 1};
  c.deconv_kernels = {2, 2, 2, 4};
  c.deconv_strides = {2, 2, 2, 4};
  c.feature_channels = 64;
  c.p_drop = 0.85;
  return c;
}

std::size_t NetConfig::encoder_convs() const {
  std::size_t n = 0;
  for (const auto& s : encoder_stages) n += s.size();
  return n;
}

void NetConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("invalid network config: " + m); };
  if (encoder_stages.empty()) fail("no encoder stages");
  for (const auto& s : encoder_stages)
    if (s.empty()) fail("empty encoder stage");
  if (bottleneck_widths.size() != 3 || bottleneck_kernels.size() != 3) fail("bottleneck needs three convs");
  if (bottleneck_widths[2] != 2) fail("last bottleneck conv must produce 2 score channels");
  for (auto k : bottleneck_kernels)
    if (k % 2 == 0) fail("bottleneck kernels must be odd");
  if (deconv_kernels.empty() || deconv_kernels.size() != deconv_strides.size()) fail("deconv kernel/stride lists differ");
  std::size_t up = 1;
  for (std::size_t i = 0; i < deconv_strides.size(); ++i) {
    if (deconv_strides[i] < 1 || deconv_kernels[i] < deconv_strides[i]) fail("deconv kernel smaller than stride");
    up *= deconv_strides[i];
  }
  if (up != size_divisor()) fail("decoder upsampling does not undo the encoder pooling");
  if (feature_channels == 0) fail("feature channels must be positive");
  if (!(p_drop >= 0.0 && p_drop < 1.0)) fail("p_drop must lie in [0, 1)");
  if (gap_d > 5) fail("gap_d must lie in [0, 5]");
  if (fusion_kernel % 2 == 0) fail("fusion kernel must be odd");
}

json to_json(const NetConfig& c) {
  return json{{"profile", to_string(c.profile)},
              {"encoder_stages", c.encoder_stages},
              {"num_pools", c.num_pools()},
              {"bottleneck_widths", c.bottleneck_widths},
              {"bottleneck_kernels", c.bottleneck_kernels},
              {"deconv_kernels", c.deconv_kernels},
              {"deconv_strides", c.deconv_strides},
              {"feature_channels", c.feature_channels},
              {"p_drop", c.p_drop},
              {"gap_d", c.gap_d},
              {"fusion_kernel", c.fusion_kernel}};
}

NetConfig net_config_from_json(const json& j) {
  NetConfig c = profile_from_string(j.at("profile").get<std::string>()) == Profile::tiny ? NetConfig::tiny()
                                                                                       : NetConfig::paper_faithful();
  if (j.contains("encoder_stages")) c.encoder_stages = j["encoder_stages"].get<std::vector<std::vector<std::size_t>>>();
  if (j.contains("bottleneck_widths")) c.bottleneck_widths = j["bottleneck_widths"].get<std::vector<std::size_t>>();
  if (j.contains("bottleneck_kernels")) c.bottleneck_kernels = j["bottleneck_kernels"].get<std::vector<std::size_t>>();
  if (j.contains("deconv_kernels")) c.deconv_kernels = j["deconv_kernels"].get<std::vector<std::size_t>>();
  if (j.contains("deconv_strides")) c.deconv_strides = j["deconv_strides"].get<std::vector<std::size_t>>();
  if (j.contains("feature_channels")) c.feature_channels = j["feature_channels"].get<std::size_t>();
  if (j.contains("p_drop")) c.p_drop = j["p_drop"].get<double>();
  if (j.contains("gap_d")) c.gap_d = j["gap_d"].get<std::size_t>();
  if (j.contains("fusion_kernel")) c.fusion_kernel = j["fusion_kernel"].get<std::size_t>();
  c.validate();
  return c;
}

template <typename T>
void Network<T>::register_params() {
  params_.clear();
  for (std::size_t s = 0; s < encoder.size(); ++s)
    for (std::size_t j = 0; j < encoder[s].size(); ++j) {
      const std::string p = "enc" + std::to_string(s + 1) + ".conv" + std::to_string(j + 1);
      params_.push_back({p + ".weight", encoder[s][j].weight});
      params_.push_back({p + ".bias", encoder[s][j].bias});
    }
  for (std::size_t j = 0; j < bottleneck.size(); ++j) {
    const std::string p = "bottleneck.conv" + std::to_string(j + 1);
    params_.push_back({p + ".weight", bottleneck[j].weight});
    params_.push_back({p + ".bias", bottleneck[j].bias});
  }
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    const std::string p = "dec" + std::to_string(i + 1);
    params_.push_back({p + ".deconv.weight", decoder[i].deconv});
    if (decoder[i].has_projection) {
      params_.push_back({p + ".skip.weight", decoder[i].projection.weight});
      params_.push_back({p + ".skip.bias", decoder[i].projection.bias});
    }
    params_.push_back({p + ".conv.weight", decoder[i].conv.weight});
    params_.push_back({p + ".conv.bias", decoder[i].conv.bias});
  }
  params_.push_back({"head2d.weight", head2d.weight});
  params_.push_back({"head2d.bias", head2d.bias});
  params_.push_back({"fusion.weight", fusion.weight});
  params_.push_back({"fusion.bias", fusion.bias});
}

template <typename T>
std::vector<Tensor<T>> Network<T>::tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

template <typename T>
const Tensor<T>* Network<T>::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p.tensor;
  return nullptr;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
void Network<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
Network<T> Network<T>::clone() const {
  return convert_network<T, T>(*this);
}

template <typename T>
Network<T> build_network(const NetConfig& config, std::uint64_t seed) {
  config.validate();
  Network<T> net;
  net.config_ = config;
  std::uint64_t counter = 0;
  auto conv = [&](std::size_t cout, std::size_t cin, std::size_t k) {
    ConvLayer<T> layer{Tensor<T>({cout, cin, k, k}, true), Tensor<T>({cout}, true)};
    nn::init_glorot_uniform(layer.weight, cin * k * k, cout * k * k, derive_seed(seed, {counter++}));
    return layer;
  };

  std::size_t channels = 3;
  std::vector<std::size_t> stage_channels;
  for (const auto& stage : config.encoder_stages) {
    std::vector<ConvLayer<T>> layers;
    for (auto w : stage) {
      layers.push_back(conv(w, channels, 3));
      channels = w;
    }
    stage_channels.push_back(channels);
    net.encoder.push_back(std::move(layers));
  }
  for (std::size_t j = 0; j < 3; ++j) {
    net.bottleneck.push_back(conv(config.bottleneck_widths[j], channels, config.bottleneck_kernels[j]));
    channels = config.bottleneck_widths[j];
  }
  std::size_t down = config.size_divisor();
  for (std::size_t i = 0; i < config.deconv_strides.size(); ++i) {
    DecoderStage<T> st;
    st.stride = config.deconv_strides[i];
    down /= st.stride;
    for (std::size_t s = 0; s < stage_channels.size(); ++s)
      if ((std::size_t{1} << s) == down) st.skip_stage = static_cast<int>(s);
    const bool last = i + 1 == config.deconv_strides.size();
    std::size_t width = config.feature_channels;
    if (!last && st.skip_stage >= 0) width = stage_channels[static_cast<std::size_t>(st.skip_stage)];
    const std::size_t k = config.deconv_kernels[i];
    st.deconv = Tensor<T>({channels, width, k, k}, true);
    nn::init_glorot_uniform(st.deconv, channels * k * k, width * k * k, derive_seed(seed, {counter++}));
    if (st.skip_stage >= 0 && stage_channels[static_cast<std::size_t>(st.skip_stage)] != width) {
      st.has_projection = true;
      st.projection = conv(width, stage_channels[static_cast<std::size_t>(st.skip_stage)], 1);
    }
    st.conv = conv(width, width, 3);
    channels = width;
    net.decoder.push_back(std::move(st));
  }
  net.head2d = conv(2, config.feature_channels, 1);
  const std::size_t fk = config.fusion_kernel;
  net.fusion = ConvLayer<T>{Tensor<T>({2, config.feature_channels, fk, fk, fk}, true), Tensor<T>({2}, true)};
  nn::init_glorot_uniform(net.fusion.weight, config.feature_channels * fk * fk * fk, 2 * fk * fk * fk,
                          derive_seed(seed, {counter++}));
  net.register_params();
  return net;
}

template <typename T, typename U>
Network<T> convert_network(const Network<U>& src) {
  auto copy = [](const Tensor<U>& t) {
    std::vector<T> v(t.values().begin(), t.values().end());
    return Tensor<T>(t.shape(), std::move(v), true);
  };
  auto copy_conv = [&](const ConvLayer<U>& c) { return ConvLayer<T>{copy(c.weight), copy(c.bias)}; };
  Network<T> net;
  net.config_ = src.config();
  for (const auto& stage : src.encoder) {
    std::vector<ConvLayer<T>> layers;
    for (const auto& c : stage) layers.push_back(copy_conv(c));
    net.encoder.push_back(std::move(layers));
  }
  for (const auto& c : src.bottleneck) net.bottleneck.push_back(copy_conv(c));
  for (const auto& s : src.decoder) {
    DecoderStage<T> d;
    d.deconv = copy(s.deconv);
    d.stride = s.stride;
    d.skip_stage = s.skip_stage;
    d.has_projection = s.has_projection;
    if (s.has_projection) d.projection = copy_conv(s.projection);
    d.conv = copy_conv(s.conv);
    net.decoder.push_back(std::move(d));
  }
  net.head2d = copy_conv(src.head2d);
  net.fusion = copy_conv(src.fusion);
  net.register_params();
  return net;
}

template <typename T>
void import_encoder(Network<T>& net, const nn::WeightManifest& manifest) {
  for (const auto& p : net.params()) {
    if (p.name.rfind("enc", 0) != 0) continue;
    const auto* e = manifest.find(p.name);
    if (!e) throw nn::WeightError("encoder tensor missing from manifest: " + p.name);
    if (e->shape != p.tensor.shape())
      throw nn::WeightError("shape mismatch for " + p.name + ": manifest " + nn::to_string(e->shape) +
                            ", network " + nn::to_string(p.tensor.shape()));
  }
  for (const auto& p : net.params()) {
    if (p.name.rfind("enc", 0) != 0) continue;
    const auto* e = manifest.find(p.name);
    auto dst = Tensor<T>(p.tensor).values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(e->values[i]);
  }
}

template <typename T>
nn::WeightManifest to_manifest(const Network<T>& net) {
  nn::WeightManifest m;
  for (const auto& p : net.params()) {
    nn::WeightEntry e;
    e.name = p.name;
    e.shape = p.tensor.shape();
    e.values.assign(p.tensor.values().begin(), p.tensor.values().end());
    m.entries.push_back(std::move(e));
  }
  m.metadata["config"] = to_json(net.config());
  return m;
}

template <typename T>
Network<T> from_manifest(const nn::WeightManifest& manifest) {
  if (!manifest.metadata.contains("config")) throw nn::WeightError("weight manifest has no network config");
  Network<T> net = build_network<T>(net_config_from_json(manifest.metadata["config"]), 0);
  if (manifest.entries.size() != net.params().size())
    throw nn::WeightError("weight manifest has " + std::to_string(manifest.entries.size()) +
                          " tensors, network expects " + std::to_string(net.params().size()));
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    const auto& p = net.params()[i];
    if (e.name != p.name) throw nn::WeightError("unexpected tensor " + e.name + ", expected " + p.name);
    if (e.shape != p.tensor.shape()) throw nn::WeightError("shape mismatch for " + e.name);
    auto dst = Tensor<T>(p.tensor).values();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(e.values[j]);
  }
  return net;
}

void save_network(const Network<float>& net, const std::filesystem::path& stem) {
  nn::save_weights(to_manifest(net), stem);
}

Network<float> load_network(const std::filesystem::path& stem) {
  return from_manifest<float>(nn::load_weights(stem));
}

template <typename T>
Forward2d<T> forward_2d(const Network<T>& net, const Tensor<T>& image, bool training, std::uint64_t dropout_seed) {
  const auto& cfg = net.config();
  if (image.rank() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("forward_2d: expected a [3,H,W] image, got " + nn::to_string(image.shape()));
  const std::size_t div = cfg.size_divisor();
  if (image.dim(1) % div != 0 || image.dim(2) % div != 0)
    throw std::invalid_argument("forward_2d: image size " + nn::to_string(image.shape()) +
                                " is not divisible by " + std::to_string(div) + " (2^pools)");

  Tensor<T> x = image;
  std::vector<Tensor<T>> stage_out;
  for (const auto& stage : net.encoder) {
    for (const auto& c : stage) x = nn::relu(nn::conv2d(x, c.weight, c.bias));
    stage_out.push_back(x);
    x = nn::maxpool2d(x).output;
  }
  for (std::size_t j = 0; j < net.bottleneck.size(); ++j) {
    const auto& c = net.bottleneck[j];
    x = nn::conv2d(x, c.weight, c.bias);
    if (j < 2) {
      x = nn::relu(x);
      x = nn::dropout(x, cfg.p_drop, training, derive_seed(dropout_seed, {j}));
    }
  }
  for (const auto& st : net.decoder) {
    x = nn::deconv2d(x, st.deconv, st.stride);
    if (st.skip_stage >= 0) {
      Tensor<T> skip = stage_out[static_cast<std::size_t>(st.skip_stage)];
      if (st.has_projection) skip = nn::conv2d(skip, st.projection.weight, st.projection.bias);
      x = nn::add(x, skip);
    }
    x = nn::relu(nn::conv2d(x, st.conv.weight, st.conv.bias));
  }
  Forward2d<T> out;
  out.features = x;
  out.logits = nn::conv2d(x, net.head2d.weight, net.head2d.bias);
  out.probs = nn::softmax2(out.logits);
  return out;
}

namespace {

template <typename T>
Tensor<T> image_tensor(const std::vector<double>& img, std::size_t m) {
  return Tensor<T>({3, m, m}, std::vector<T>(img.begin(), img.end()), false);
}

template <typename T>
Tensor<T> axis_features(const Network<T>& net, const Volume3& patch, std::size_t d, Axis axis, bool training,
                        std::uint64_t seed) {
  const auto stack = slice_axis(patch, axis, d);
  std::vector<Tensor<T>> maps;
  maps.reserve(stack.size);
  for (std::size_t k = 0; k < stack.size; ++k)
    maps.push_back(forward_2d(net, image_tensor<T>(stack.images[k], stack.size), training,
                              derive_seed(seed, {static_cast<std::uint64_t>(axis), k}))
                       .features);
  return stack_features(maps, axis);
}

}  // namespace

template <typename T>
Tensor<T> df_fused_features(const Network<T>& net, const Volume3& patch, std::size_t d, bool training,
                            std::uint64_t dropout_seed) {
  const auto fx = axis_features(net, patch, d, Axis::X, training, dropout_seed);
  const auto fy = axis_features(net, patch, d, Axis::Y, training, dropout_seed);
  const auto fz = axis_features(net, patch, d, Axis::Z, training, dropout_seed);
  return fuse(fx, fy, fz);
}

template <typename T>
Tensor<T> df_logits(const Network<T>& net, const Volume3& patch, std::size_t d, bool training,
                    std::uint64_t dropout_seed) {
  const auto fused = df_fused_features(net, patch, d, training, dropout_seed);
  return nn::conv3d(fused, net.fusion.weight, net.fusion.bias, true);
}

template <typename T>
Tensor<T> single_axis_logits(const Network<T>& net, const Volume3& patch, std::size_t d, Axis axis, bool training,
                             std::uint64_t dropout_seed) {
  const auto stack = slice_axis(patch, axis, d);
  std::vector<Tensor<T>> maps;
  maps.reserve(stack.size);
  for (std::size_t k = 0; k < stack.size; ++k)
    maps.push_back(forward_2d(net, image_tensor<T>(stack.images[k], stack.size), training,
                              derive_seed(dropout_seed, {static_cast<std::uint64_t>(axis), k}))
                       .logits);
  return stack_features(maps, axis);
}

namespace {

template <typename T>
Volume3 catheter_probability(const Tensor<T>& logits, const Volume3& patch) {
  const auto probs = nn::softmax2(logits);
  const std::size_t n = patch.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(probs[n + i]);
  return Volume3(patch.dims(), patch.spacing(), std::move(out));
}

}  // namespace

template <typename T>
Volume3 forward_df(const Network<T>& net, const Volume3& patch, std::size_t d) {
  nn::NoGradGuard no_grad;
  return catheter_probability(df_logits(net, patch, d, false), patch);
}

template <typename T>
Volume3 forward_single_axis(const Network<T>& net, const Volume3& patch, std::size_t d, Axis axis) {
  nn::NoGradGuard no_grad;
  return catheter_probability(single_axis_logits(net, patch, d, axis, false), patch);
}

Axis random_axis(std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0xA715}));
  return static_cast<Axis>(rng.below(3));
}

template <typename T>
Volume3 predict_volume(const Network<T>& net, const Volume3& volume, const PredictOptions& opt) {
  const auto normalized = normalize(volume);
  const auto regions = tile(volume.dims(), opt.core, opt.outer);
  std::vector<std::pair<PatchRegion, Volume3>> predictions(regions.size());

  auto work = [&](std::size_t i) {
    const auto patch = extract_patch(normalized, regions[i]);
    predictions[i] = {regions[i], opt.mode == Mode::df ? forward_df(net, patch, opt.gap_d)
                                                       : forward_single_axis(net, patch, opt.gap_d, opt.axis)};
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(regions.size())));
  if (threads == 1) {
    for (std::size_t i = 0; i < regions.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < regions.size();) {
          try {
            work(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    pool.clear();
    if (error) std::rethrow_exception(error);
  }
  Volume3 out = stitch(predictions, volume.dims());
  return Volume3(out.dims(), volume.spacing(), std::vector<double>(out.data().begin(), out.data().end()));
}

#define CATHSEG_NET_INSTANTIATE(T)                                                                        \
  template class Network<T>;                                                                              \
  template Network<T> build_network<T>(const NetConfig&, std::uint64_t);                                  \
  template void import_encoder<T>(Network<T>&, const nn::WeightManifest&);                                \
  template nn::WeightManifest to_manifest<T>(const Network<T>&);                                          \
  template Network<T> from_manifest<T>(const nn::WeightManifest&);                                        \
  template Forward2d<T> forward_2d<T>(const Network<T>&, const Tensor<T>&, bool, std::uint64_t);          \
  template Tensor<T> df_fused_features<T>(const Network<T>&, const Volume3&, std::size_t, bool, std::uint64_t); \
  template Tensor<T> df_logits<T>(const Network<T>&, const Volume3&, std::size_t, bool, std::uint64_t);   \
  template Tensor<T> single_axis_logits<T>(const Network<T>&, const Volume3&, std::size_t, Axis, bool,    \
                                           std::uint64_t);                                                \
  template Volume3 forward_df<T>(const Network<T>&, const Volume3&, std::size_t);                         \
  template Volume3 forward_single_axis<T>(const Network<T>&, const Volume3&, std::size_t, Axis);          \
  template Volume3 predict_volume<T>(const Network<T>&, const Volume3&, const PredictOptions&);

CATHSEG_NET_INSTANTIATE(float)
CATHSEG_NET_INSTANTIATE(double)

template Network<float> convert_network<float, float>(const Network<float>&);
template Network<double> convert_network<double, double>(const Network<double>&);
template Network<float> convert_network<float, double>(const Network<double>&);
template Network<double> convert_network<double, float>(const Network<float>&);

#undef CATHSEG_NET_INSTANTIATE

}  // namespace cathseg
