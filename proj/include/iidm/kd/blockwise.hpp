#pragma once

#include "iidm/kd/eigenbasis.hpp"
#include "iidm/networks/vgg.hpp"

#include <memory>
#include <optional>

namespace iidm {

/// Teacher layer-`layer` features (1-based) for each image, as C x HW matrices.
template <typename Scalar>
BasicFeatureStack<Scalar> teacher_features(const VggFeatures<Scalar>& teacher,
                                           const std::vector<BasicTensor<Scalar>>& images, int layer);

/// Chain of encoder/decoder pairs mirroring a teacher's layers at reduced
/// widths. Pair N:
///
///   enc_N: [pool] -> conv3x3 -> relu -> conv1x1        F^e_{N-1} -> F^e_N
///   dec_N: conv3x3 -> relu -> conv1x1 -> [upsample]    F^e_N -> F^d_{N-1}
///
/// with F^e_0 the image. Each pair owns its own parameter stores so earlier
/// pairs can be frozen as a unit.
template <typename Scalar>
class DistilledStudent {
 public:
  DistilledStudent(const VggConfig& teacher, std::vector<int> lengths, Rng& rng);

  int pairs() const { return static_cast<int>(blocks_.size()); }
  const std::vector<int>& lengths() const { return lengths_; }
  /// Channels of F^e_N; pair 0 is the image.
  int width(int pair) const { return pair == 0 ? in_channels_ : lengths_.at(static_cast<std::size_t>(pair - 1)); }

  ParameterStore<Scalar>& encoder_parameters(int pair) { return block(pair).encoder; }
  ParameterStore<Scalar>& decoder_parameters(int pair) { return block(pair).decoder; }
  const ParameterStore<Scalar>& encoder_parameters(int pair) const { return block(pair).encoder; }
  const ParameterStore<Scalar>& decoder_parameters(int pair) const { return block(pair).decoder; }

  Var<Scalar> encode_step(Tape<Scalar>& tape, int pair, const Var<Scalar>& previous) const;
  Var<Scalar> decode_step(Tape<Scalar>& tape, int pair, const Var<Scalar>& encoded) const;

  /// F^e_upto from the image.
  Var<Scalar> encode(Tape<Scalar>& tape, const Var<Scalar>& image, int upto) const;
  /// Image reconstruction from F^e_from through dec_from, ..., dec_1.
  Var<Scalar> decode(Tape<Scalar>& tape, const Var<Scalar>& encoded, int from) const;

 private:
  struct Block {
    ParameterStore<Scalar> encoder, decoder;
    Conv2d<Scalar> enc_a, enc_b, dec_a, dec_b;
    bool pooled = false;
  };
  Block& block(int pair);
  const Block& block(int pair) const;

  int in_channels_;
  std::vector<int> lengths_;
  std::vector<std::unique_ptr<Block>> blocks_;
};

/// Decoder objective of pair N:
///
///   ||F^d_{N-1} - F^e_{N-1}||^2 + ||I_rec - I||^2 + ||F_{N,rec} - F_N||^2
///
/// where F_{N,rec} is the teacher's layer-N response to I_rec. At N = 1 the
/// first term is absent. The teacher's parameters are frozen on the tape.
template <typename Scalar>
struct DecoderLossInputs {
  int pair = 1;
  Var<Scalar> decoded;  // F^d_{N-1}; unused at N = 1
  Var<Scalar> encoded;  // F^e_{N-1}; unused at N = 1
  Var<Scalar> reconstruction;
  Var<Scalar> image;
};

template <typename Scalar>
struct DecoderLoss {
  Var<Scalar> total;
  std::vector<Var<Scalar>> terms;  // in the order above, first one dropped at N = 1
};

template <typename Scalar>
DecoderLoss<Scalar> decoder_loss(const DecoderLossInputs<Scalar>& in, const VggFeatures<Scalar>* teacher,
                                 Reduction reduction = Reduction::sum);

struct BlockwiseOptions {
  int epochs = 30;
  int batch_size = 8;
  double learning_rate = 3e-3;
  std::uint64_t seed = 0;
  double divergence = 1e6;
  /// Pairs first_pair..last_pair are trained (last_pair 0 means all); pairs
  /// below first_pair are taken as already trained and stay frozen.
  int first_pair = 1;
  int last_pair = 0;
};

struct PairReport {
  int pair = 1;
  double encoder_loss = 0;  // final-epoch means
  double decoder_loss = 0;
  std::vector<double> epoch_loss;
};

/// Trains pairs in ascending order with Adam, each on L_enc^N + L_dec^N with
/// per-term mean reduction; bases[N-1] supplies W for pair N. Throws
/// NumericError naming the pair when a batch loss exceeds `divergence` or is
/// non-finite.
template <typename Scalar>
std::vector<PairReport> train_blockwise(DistilledStudent<Scalar>& student, const VggFeatures<Scalar>& teacher,
                                        const std::vector<BasicEigenbasis<Scalar>>& bases,
                                        const std::vector<BasicTensor<Scalar>>& corpus,
                                        const BlockwiseOptions& options = {});

/// Mean squared per-element error of decode(encode(I, upto), upto) over images.
template <typename Scalar>
double round_trip_error(const DistilledStudent<Scalar>& student, const std::vector<BasicTensor<Scalar>>& images,
                        int upto);

}  // namespace iidm
