#include "iidm/kd/blockwise.hpp"

#include "iidm/numerics/optim.hpp"

#include <cmath>
#include <numeric>

namespace iidm {

template <typename Scalar>
BasicFeatureStack<Scalar> teacher_features(const VggFeatures<Scalar>& teacher,
                                           const std::vector<BasicTensor<Scalar>>& images, int layer) {
  if (layer < 1) throw std::invalid_argument("layers are numbered from 1");
  BasicFeatureStack<Scalar> out;
  out.layer = layer;
  for (const auto& image : images) {
    Tape<Scalar> tape;
    tape.freeze(teacher.parameters());
    const auto& f = teacher.layer_outputs(tape, tape.constant(image), static_cast<std::size_t>(layer)).back().value();
    const int c = f.dim(0), hw = f.dim(1) * f.dim(2);
    DenseMatrix<Scalar> m(c, hw);
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < hw; ++j) m(i, j) = f[static_cast<std::size_t>(i * hw + j)];
    out.maps.push_back(std::move(m));
  }
  out.validate();
  return out;
}

template <typename Scalar>
DistilledStudent<Scalar>::DistilledStudent(const VggConfig& teacher, std::vector<int> lengths, Rng& rng)
    : in_channels_(teacher.in_channels), lengths_(std::move(lengths)) {
  teacher.distilled(lengths_);  // validates the lengths
  for (std::size_t i = 0; i < lengths_.size(); ++i) {
    auto b = std::make_unique<Block>();
    const int prev = i == 0 ? in_channels_ : lengths_[i - 1];
    const int cur = lengths_[i];
    const std::string n = std::to_string(i + 1);
    b->pooled = i > 0 && teacher.pool_after[i - 1];
    b->enc_a = Conv2d<Scalar>::create(b->encoder, "enc" + n + ".a", prev, cur, 3, 1, 1, rng);
    b->enc_b = Conv2d<Scalar>::create(b->encoder, "enc" + n + ".b", cur, cur, 1, 1, 0, rng);
    b->dec_a = Conv2d<Scalar>::create(b->decoder, "dec" + n + ".a", cur, cur, 3, 1, 1, rng);
    b->dec_b = Conv2d<Scalar>::create(b->decoder, "dec" + n + ".b", cur, prev, 1, 1, 0, rng);
    blocks_.push_back(std::move(b));
  }
}

template <typename Scalar>
auto DistilledStudent<Scalar>::block(int pair) -> Block& {
  if (pair < 1 || pair > pairs()) throw std::out_of_range("student has no pair " + std::to_string(pair));
  return *blocks_[static_cast<std::size_t>(pair - 1)];
}

template <typename Scalar>
auto DistilledStudent<Scalar>::block(int pair) const -> const Block& {
  if (pair < 1 || pair > pairs()) throw std::out_of_range("student has no pair " + std::to_string(pair));
  return *blocks_[static_cast<std::size_t>(pair - 1)];
}

template <typename Scalar>
Var<Scalar> DistilledStudent<Scalar>::encode_step(Tape<Scalar>& tape, int pair, const Var<Scalar>& previous) const {
  const Block& b = block(pair);
  Var<Scalar> x = b.pooled ? max_pool2(previous) : previous;
  return b.enc_b(tape, relu(b.enc_a(tape, x)));
}

template <typename Scalar>
Var<Scalar> DistilledStudent<Scalar>::decode_step(Tape<Scalar>& tape, int pair, const Var<Scalar>& encoded) const {
  const Block& b = block(pair);
  auto y = b.dec_b(tape, relu(b.dec_a(tape, encoded)));
  return b.pooled ? upsample_nearest2(y) : y;
}

template <typename Scalar>
Var<Scalar> DistilledStudent<Scalar>::encode(Tape<Scalar>& tape, const Var<Scalar>& image, int upto) const {
  Var<Scalar> x = image;
  for (int n = 1; n <= upto; ++n) x = encode_step(tape, n, x);
  return x;
}

template <typename Scalar>
Var<Scalar> DistilledStudent<Scalar>::decode(Tape<Scalar>& tape, const Var<Scalar>& encoded, int from) const {
  Var<Scalar> x = encoded;
  for (int n = from; n >= 1; --n) x = decode_step(tape, n, x);
  return x;
}

template <typename Scalar>
DecoderLoss<Scalar> decoder_loss(const DecoderLossInputs<Scalar>& in, const VggFeatures<Scalar>* teacher,
                                 Reduction reduction) {
  if (teacher == nullptr) throw std::invalid_argument("decoder loss needs the teacher for its perceptual term");
  if (in.pair < 1 || static_cast<std::size_t>(in.pair) > teacher->config().depth()) {
    throw std::out_of_range("teacher has no layer " + std::to_string(in.pair));
  }
  Tape<Scalar>& tape = *in.reconstruction.tape();
  tape.freeze(teacher->parameters());
  DecoderLoss<Scalar> out;
  if (in.pair > 1) out.terms.push_back(squared_error(in.decoded, in.encoded, reduction));
  out.terms.push_back(squared_error(in.reconstruction, in.image, reduction));
  const auto depth = static_cast<std::size_t>(in.pair);
  auto rec = teacher->layer_outputs(tape, in.reconstruction, depth).back();
  auto ref = teacher->layer_outputs(tape, in.image, depth).back();
  out.terms.push_back(squared_error(rec, ref, reduction));
  out.total = out.terms.front();
  for (std::size_t i = 1; i < out.terms.size(); ++i) out.total = add(out.total, out.terms[i]);
  return out;
}

template <typename Scalar>
std::vector<PairReport> train_blockwise(DistilledStudent<Scalar>& student, const VggFeatures<Scalar>& teacher,
                                        const std::vector<BasicEigenbasis<Scalar>>& bases,
                                        const std::vector<BasicTensor<Scalar>>& corpus,
                                        const BlockwiseOptions& options) {
  const int last = options.last_pair == 0 ? student.pairs() : options.last_pair;
  if (options.first_pair < 1 || last > student.pairs() || options.first_pair > last) {
    throw std::invalid_argument("pair range [" + std::to_string(options.first_pair) + ", " + std::to_string(last) +
                                "] outside the student's 1.." + std::to_string(student.pairs()));
  }
  if (static_cast<int>(bases.size()) < last) throw std::invalid_argument("one eigenbasis per trained pair is required");
  if (static_cast<std::size_t>(student.pairs()) > teacher.config().depth()) {
    throw std::invalid_argument("student is deeper than its teacher");
  }
  if (corpus.empty()) throw std::invalid_argument("blockwise training needs a nonempty corpus");
  if (options.batch_size < 1 || options.epochs < 0) throw std::invalid_argument("batch size >= 1 and epochs >= 0");

  Rng rng(options.seed);
  std::vector<PairReport> reports;
  for (int pair = options.first_pair; pair <= last; ++pair) {
    const auto& basis = bases[static_cast<std::size_t>(pair - 1)];
    if (basis.reduced() != student.width(pair) ||
        basis.channels() != teacher.config().channels[static_cast<std::size_t>(pair - 1)]) {
      throw std::invalid_argument("eigenbasis for pair " + std::to_string(pair) + " is " +
                                  std::to_string(basis.reduced()) + "x" + std::to_string(basis.channels()) +
                                  ", student/teacher widths disagree");
    }
    auto params = student.encoder_parameters(pair).all();
    for (auto* p : student.decoder_parameters(pair).all()) params.push_back(p);
    Optimizer<Scalar> opt(OptimizerKind::adam, options.learning_rate);

    PairReport report;
    report.pair = pair;
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
      }
      double enc_sum = 0, dec_sum = 0;
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
        const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
        const Scalar weight = Scalar(1) / static_cast<Scalar>(stop - start);
        for (auto* p : params) p->zero_grad();
        double batch_loss = 0;
        for (std::size_t k = start; k < stop; ++k) {
          Tape<Scalar> tape;
          for (int earlier = 1; earlier < pair; ++earlier) {
            tape.freeze(student.encoder_parameters(earlier));
            tape.freeze(student.decoder_parameters(earlier));
          }
          tape.freeze(teacher.parameters());
          auto image = tape.constant(corpus[order[k]]);
          auto prev = student.encode(tape, image, pair - 1);
          auto fe = student.encode_step(tape, pair, prev);
          auto f = teacher.layer_outputs(tape, image, static_cast<std::size_t>(pair)).back();
          auto enc = encoder_distill_loss(fe, f, basis.w, Reduction::mean);

          DecoderLossInputs<Scalar> in;
          in.pair = pair;
          in.decoded = student.decode_step(tape, pair, fe);
          in.encoded = prev;
          in.reconstruction = student.decode(tape, in.decoded, pair - 1);
          in.image = image;
          auto dec = decoder_loss(in, &teacher, Reduction::mean);

          const double e = enc.value()[0], d = dec.total.value()[0];
          batch_loss += e + d;
          enc_sum += e;
          dec_sum += d;
          tape.backward(add(enc, dec.total), weight);
        }
        batch_loss /= static_cast<double>(stop - start);
        if (!std::isfinite(batch_loss) || batch_loss > options.divergence) {
          throw NumericError("blockwise distillation diverged at pair " + std::to_string(pair) + " (loss " +
                             std::to_string(batch_loss) + ")");
        }
        opt.step(params);
      }
      const double n = static_cast<double>(corpus.size());
      report.encoder_loss = enc_sum / n;
      report.decoder_loss = dec_sum / n;
      report.epoch_loss.push_back((enc_sum + dec_sum) / n);
    }
    reports.push_back(std::move(report));
  }
  return reports;
}

template <typename Scalar>
double round_trip_error(const DistilledStudent<Scalar>& student, const std::vector<BasicTensor<Scalar>>& images,
                        int upto) {
  if (images.empty()) throw std::invalid_argument("round trip over an empty corpus");
  double total = 0;
  for (const auto& image : images) {
    Tape<Scalar> tape;
    auto x = tape.constant(image);
    const auto& rec = student.decode(tape, student.encode(tape, x, upto), upto).value();
    double s = 0;
    for (std::size_t i = 0; i < rec.size(); ++i) {
      const double d = static_cast<double>(rec[i]) - static_cast<double>(image[i]);
      s += d * d;
    }
    total += s / static_cast<double>(rec.size());
  }
  return total / static_cast<double>(images.size());
}

#define IIDM_INSTANTIATE(S)                                                                                     \
  template BasicFeatureStack<S> teacher_features(const VggFeatures<S>&, const std::vector<BasicTensor<S>>&,     \
                                                 int);                                                          \
  template class DistilledStudent<S>;                                                                           \
  template DecoderLoss<S> decoder_loss(const DecoderLossInputs<S>&, const VggFeatures<S>*, Reduction);          \
  template std::vector<PairReport> train_blockwise(DistilledStudent<S>&, const VggFeatures<S>&,                 \
                                                   const std::vector<BasicEigenbasis<S>>&,                      \
                                                   const std::vector<BasicTensor<S>>&, const BlockwiseOptions&); \
  template double round_trip_error(const DistilledStudent<S>&, const std::vector<BasicTensor<S>>&, int);

IIDM_INSTANTIATE(float)
IIDM_INSTANTIATE(double)
#undef IIDM_INSTANTIATE

}  // namespace iidm
