#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cathseg/slicer.hpp"
#include "cathseg/tensor.hpp"
#include "cathseg/volume.hpp"
#include "cathseg/weights.hpp"

namespace cathseg {

enum class Profile { paper_faithful, tiny };

const char* to_string(Profile p);
Profile profile_from_string(const std::string& s);

// Encoder-decoder FCN layout. Each encoder stage is a run of 3x3 conv+ReLU
// layers followed by a 2x2 max-pool. The bottleneck is three convs, the last
// producing two score channels. Decoder stages upsample by transposed
// convolution, add the last encoder map of equal resolution (projected by a
// 1x1 conv when widths differ), then apply a 3x3 conv+ReLU. The final decoder
// activation is the F-channel feature layer used for direction fusion.
struct NetConfig {
  Profile profile = Profile::tiny;
  std::vector<std::vector<std::size_t>> encoder_stages;
  std::vector<std::size_t> bottleneck_widths;   // 3 entries, last is 2
  std::vector<std::size_t> bottleneck_kernels;  // 3 entries
  std::vector<std::size_t> deconv_kernels;
  std::vector<std::size_t> deconv_strides;
  std::size_t feature_channels = 16;
  // Drop rate of the dropout after the first two bottleneck convs.
  double p_drop = 0.15;
  std::size_t gap_d = 3;
  std::size_t fusion_kernel = 3;

  static NetConfig tiny();
  static NetConfig paper_faithful();

  std::size_t num_pools() const { return encoder_stages.size(); }
  std::size_t encoder_convs() const;
  std::size_t size_divisor() const { return std::size_t{1} << num_pools(); }
  void validate() const;
};

nlohmann::json to_json(const NetConfig& cfg);
NetConfig net_config_from_json(const nlohmann::json& j);

template <typename T>
struct NamedParam {
  std::string name;
  nn::Tensor<T> tensor;
};

template <typename T>
struct ConvLayer {
  nn::Tensor<T> weight;
  nn::Tensor<T> bias;
};

template <typename T>
struct DecoderStage {
  nn::Tensor<T> deconv;  // [Cin, Cout, k, k]
  std::size_t stride = 2;
  int skip_stage = -1;  // encoder stage whose output is added, or -1
  bool has_projection = false;
  ConvLayer<T> projection;
  ConvLayer<T> conv;
};

// Parameters are owned by the network; tensors handed out share storage.
template <typename T>
class Network {
 public:
  Network() = default;
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  Network clone() const;

  const NetConfig& config() const { return config_; }
  NetConfig& mutable_config() { return config_; }
  const std::vector<NamedParam<T>>& params() const { return params_; }
  std::vector<nn::Tensor<T>> tensors() const;
  const nn::Tensor<T>* find(const std::string& name) const;
  std::size_t parameter_count() const;
  void zero_grad();

  std::vector<std::vector<ConvLayer<T>>> encoder;
  std::vector<ConvLayer<T>> bottleneck;
  std::vector<DecoderStage<T>> decoder;
  ConvLayer<T> head2d;  // 1x1, F -> 2
  ConvLayer<T> fusion;  // k^3, F -> 2

 private:
  template <typename U>
  friend Network<U> build_network(const NetConfig&, std::uint64_t);
  template <typename U, typename V>
  friend Network<U> convert_network(const Network<V>&);

  void register_params();
  NetConfig config_;
  std::vector<NamedParam<T>> params_;
};

template <typename T>
Network<T> build_network(const NetConfig& config, std::uint64_t seed);

template <typename T, typename U>
Network<T> convert_network(const Network<U>& net);

// Replaces encoder ("enc*") parameters with entries of the manifest. Every
// encoder tensor must be present with a matching shape.
template <typename T>
void import_encoder(Network<T>& net, const nn::WeightManifest& manifest);

template <typename T>
nn::WeightManifest to_manifest(const Network<T>& net);
template <typename T>
Network<T> from_manifest(const nn::WeightManifest& manifest);

void save_network(const Network<float>& net, const std::filesystem::path& stem);
Network<float> load_network(const std::filesystem::path& stem);

template <typename T>
struct Forward2d {
  nn::Tensor<T> features;  // [F, H, W], final decoder ReLU
  nn::Tensor<T> logits;    // [2, H, W]
  nn::Tensor<T> probs;     // [2, H, W]
};

template <typename T>
Forward2d<T> forward_2d(const Network<T>& net, const nn::Tensor<T>& image, bool training,
                        std::uint64_t dropout_seed = 0);

// Direction-fused features of a normalised M^3 patch: shared 2D net over the
// plane images of all three axes, stacked per axis and summed. [F, M, M, M].
template <typename T>
nn::Tensor<T> df_fused_features(const Network<T>& net, const Volume3& patch, std::size_t d,
                                bool training, std::uint64_t dropout_seed = 0);

// Fusion head applied to fused features: [2, M, M, M] logits.
template <typename T>
nn::Tensor<T> df_logits(const Network<T>& net, const Volume3& patch, std::size_t d, bool training,
                        std::uint64_t dropout_seed = 0);

// Per-plane 2D logits along one axis stacked into [2, M, M, M].
template <typename T>
nn::Tensor<T> single_axis_logits(const Network<T>& net, const Volume3& patch, std::size_t d, Axis axis,
                                 bool training, std::uint64_t dropout_seed = 0);

// Inference: catheter probability per voxel.
template <typename T>
Volume3 forward_df(const Network<T>& net, const Volume3& patch, std::size_t d);
template <typename T>
Volume3 forward_single_axis(const Network<T>& net, const Volume3& patch, std::size_t d, Axis axis);

// Axis used by the single-axis baseline when none is given.
Axis random_axis(std::uint64_t seed);

enum class Mode { df, single_axis };
const char* to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct PredictOptions {
  Mode mode = Mode::df;
  std::size_t gap_d = 3;
  Axis axis = Axis::X;
  std::size_t core = 32;   // N
  std::size_t outer = 48;  // M
  unsigned threads = 1;
};

// Normalise, tile into enlarged patches, predict each, stitch core blocks.
template <typename T>
Volume3 predict_volume(const Network<T>& net, const Volume3& volume, const PredictOptions& options);

}  // namespace cathseg
