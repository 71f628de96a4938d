#include "iidm/networks/vgg.hpp"

namespace iidm {

VggConfig VggConfig::vgg(int variant, int in_channels) {
  // Blocks of (width, repeats); every block ends with a pool.
  std::vector<std::pair<int, int>> blocks;
  switch (variant) {
    case 11: blocks = {{64, 1}, {128, 1}, {256, 2}, {512, 2}, {512, 2}}; break;
    case 16: blocks = {{64, 2}, {128, 2}, {256, 3}, {512, 3}, {512, 3}}; break;
    case 19: blocks = {{64, 2}, {128, 2}, {256, 4}, {512, 4}, {512, 4}}; break;
    default: throw std::invalid_argument("VGG variant must be 11, 16 or 19, got " + std::to_string(variant));
  }
  VggConfig c;
  c.in_channels = in_channels;
  for (auto [width, repeats] : blocks) {
    for (int i = 0; i < repeats; ++i) {
      c.channels.push_back(width);
      c.pool_after.push_back(i == repeats - 1);
    }
  }
  return c;
}

VggConfig VggConfig::toy(int in_channels, int width, int depth) {
  VggConfig c;
  c.in_channels = in_channels;
  c.channels.assign(static_cast<std::size_t>(depth), width);
  c.pool_after.assign(static_cast<std::size_t>(depth), false);
  c.validate();
  return c;
}

void VggConfig::validate() const {
  if (in_channels <= 0) throw std::invalid_argument("VGG input channels must be positive");
  if (channels.empty()) throw std::invalid_argument("VGG config needs at least one layer");
  if (pool_after.size() != channels.size()) throw std::invalid_argument("VGG pool flags must match layer count");
  for (int c : channels)
    if (c <= 0) throw std::invalid_argument("VGG channel lengths must be positive");
}

std::size_t VggConfig::head_depth() const {
  for (std::size_t i = 0; i < pool_after.size(); ++i)
    if (pool_after[i]) return i + 1;
  return channels.size();
}

VggConfig VggConfig::distilled(const std::vector<int>& lengths) const {
  if (lengths.size() != channels.size()) {
    throw std::invalid_argument("distilled VGG needs " + std::to_string(channels.size()) + " channel lengths, got " +
                                std::to_string(lengths.size()));
  }
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] < 1 || lengths[i] > channels[i]) {
      throw std::invalid_argument("distilled length " + std::to_string(lengths[i]) + " at layer " +
                                  std::to_string(i + 1) + " outside [1, " + std::to_string(channels[i]) + "]");
    }
  }
  VggConfig c = *this;
  c.channels = lengths;
  return c;
}

VggConfig VggConfig::head() const {
  VggConfig c = *this;
  c.channels.resize(head_depth());
  c.pool_after.assign(c.channels.size(), false);
  return c;
}

std::size_t VggConfig::parameter_count() const {
  std::size_t n = 0;
  int cin = in_channels;
  for (int c : channels) {
    n += Conv2d<float>::parameter_count(cin, c, 3);
    cin = c;
  }
  return n;
}

template <typename Scalar>
VggFeatures<Scalar>::VggFeatures(VggConfig config, Rng& rng, const std::string& prefix)
    : VggFeatures(std::move(config), own_, rng, prefix) {}

template <typename Scalar>
VggFeatures<Scalar>::VggFeatures(VggConfig config, ParameterStore<Scalar>& store, Rng& rng, const std::string& prefix)
    : config_(std::move(config)), store_(&store) {
  config_.validate();
  int cin = config_.in_channels;
  for (std::size_t i = 0; i < config_.channels.size(); ++i) {
    convs_.push_back(Conv2d<Scalar>::create(*store_, prefix + ".conv" + std::to_string(i + 1), cin,
                                            config_.channels[i], 3, 1, 1, rng));
    cin = config_.channels[i];
  }
}

template <typename Scalar>
Var<Scalar> VggFeatures<Scalar>::layer(Tape<Scalar>& tape, std::size_t index, const Var<Scalar>& previous) const {
  Var<Scalar> x = previous;
  if (index > 0 && config_.pool_after.at(index - 1)) x = max_pool2(x);
  return relu(convs_.at(index)(tape, x));
}

template <typename Scalar>
std::vector<Var<Scalar>> VggFeatures<Scalar>::layer_outputs(Tape<Scalar>& tape, const Var<Scalar>& image,
                                                            std::size_t count) const {
  if (image.shape().size() != 3 || image.shape()[0] != config_.in_channels) {
    throw ShapeError("VGG expects " + std::to_string(config_.in_channels) + " input channels, got shape " +
                     shape_string(image.shape()));
  }
  if (count > convs_.size()) throw std::out_of_range("VGG has only " + std::to_string(convs_.size()) + " layers");
  std::vector<Var<Scalar>> outs;
  Var<Scalar> x = image;
  for (std::size_t i = 0; i < count; ++i) {
    x = layer(tape, i, x);
    outs.push_back(x);
  }
  return outs;
}

template <typename Scalar>
Var<Scalar> VggFeatures<Scalar>::forward(Tape<Scalar>& tape, const Var<Scalar>& image) const {
  return layer_outputs(tape, image, config_.head_depth()).back();
}

template class VggFeatures<float>;
template class VggFeatures<double>;

}  // namespace iidm
