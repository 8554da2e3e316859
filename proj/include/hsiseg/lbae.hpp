#pragma once

// Latent Bernoulli autoencoder over single pixels: a 1D convolutional
// encoder whose tanh output is binarized into the latent code, and a
// mirrored transposed-convolution decoder with a sigmoid output.
//
// Latent bits b are fed to the decoder as spins 2b - 1. During training the
// binarization gradient is the straight-through estimator: identity where
// the binarizer input u satisfies |u| <= 1, zero elsewhere.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hsiseg/core.hpp"
#include "hsiseg/hsi_data.hpp"
#include "hsiseg/metrics.hpp"

namespace hsiseg::lbae {

struct Conv1dSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;

  /// floor((L + 2p - d(k-1) - 1) / s) + 1
  std::size_t output_length(std::size_t in_length) const {
    const std::size_t span = dilation * (kernel - 1) + 1;
    if (in_length + 2 * padding < span) throw Error("Conv1dSpec: input shorter than kernel span");
    return (in_length + 2 * padding - span) / stride + 1;
  }

  /// (L - 1) s - 2p + d(k-1) + 1
  std::size_t transposed_output_length(std::size_t in_length) const {
    const std::size_t full = (in_length - 1) * stride + dilation * (kernel - 1) + 1;
    if (full <= 2 * padding) throw Error("Conv1dSpec: transposed output would be empty");
    return full - 2 * padding;
  }

  bool operator==(const Conv1dSpec&) const = default;
};

enum class Activation { none, tanh, sigmoid };

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::tanh: return std::tanh(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::none: break;
  }
  return x;
}

// Derivative expressed through the activation output y.
inline double activation_grad(Activation a, double y) {
  switch (a) {
    case Activation::tanh: return 1.0 - y * y;
    case Activation::sigmoid: return y * (1.0 - y);
    case Activation::none: break;
  }
  return 1.0;
}

/// One convolution (or transposed convolution) with its activation.
/// Weight layout: [out][in][k] for convolution, [in][out][k] when transposed.
struct ConvLayer {
  Conv1dSpec spec;
  bool transposed = false;
  Activation activation = Activation::tanh;
  std::vector<double> weights;
  std::vector<double> bias;

  std::size_t weight_count() const { return spec.in_channels * spec.out_channels * spec.kernel; }

  std::size_t output_length(std::size_t in_length) const {
    return transposed ? spec.transposed_output_length(in_length) : spec.output_length(in_length);
  }

  void init(Rng& rng) {
    weights.assign(weight_count(), 0.0);
    bias.assign(spec.out_channels, 0.0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec.in_channels * spec.kernel));
    for (auto& w : weights) w = rng.uniform(-bound, bound);
    for (auto& b : bias) b = rng.uniform(-bound, bound);
  }

  /// Pre-activation output into `out` (out_channels x out_length).
  void forward(std::span<const double> in, std::size_t in_len, std::span<double> out,
               std::size_t out_len) const {
    const auto& s = spec;
    for (std::size_t o = 0; o < s.out_channels; ++o)
      std::fill_n(out.begin() + o * out_len, out_len, bias[o]);
    if (!transposed) {
      for (std::size_t o = 0; o < s.out_channels; ++o) {
        double* y = out.data() + o * out_len;
        for (std::size_t i = 0; i < s.in_channels; ++i) {
          const double* x = in.data() + i * in_len;
          const double* w = weights.data() + (o * s.in_channels + i) * s.kernel;
          for (std::size_t t = 0; t < out_len; ++t) {
            const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t * s.stride) -
                                         static_cast<std::ptrdiff_t>(s.padding);
            double acc = 0.0;
            for (std::size_t k = 0; k < s.kernel; ++k) {
              const std::ptrdiff_t pos = start + static_cast<std::ptrdiff_t>(k * s.dilation);
              if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(in_len)) acc += w[k] * x[pos];
            }
            y[t] += acc;
          }
        }
      }
    } else {
      for (std::size_t i = 0; i < s.in_channels; ++i) {
        const double* x = in.data() + i * in_len;
        for (std::size_t o = 0; o < s.out_channels; ++o) {
          double* y = out.data() + o * out_len;
          const double* w = weights.data() + (i * s.out_channels + o) * s.kernel;
          for (std::size_t t = 0; t < in_len; ++t) {
            const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t * s.stride) -
                                         static_cast<std::ptrdiff_t>(s.padding);
            for (std::size_t k = 0; k < s.kernel; ++k) {
              const std::ptrdiff_t pos = start + static_cast<std::ptrdiff_t>(k * s.dilation);
              if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(out_len)) y[pos] += w[k] * x[t];
            }
          }
        }
      }
    }
  }

  /// Accumulates parameter gradients and writes the input gradient, given
  /// the gradient w.r.t. the pre-activation output.
  void backward(std::span<const double> in, std::size_t in_len, std::span<const double> grad_out,
                std::size_t out_len, std::span<double> grad_in, std::span<double> grad_w,
                std::span<double> grad_b) const {
    const auto& s = spec;
    std::fill(grad_in.begin(), grad_in.end(), 0.0);
    for (std::size_t o = 0; o < s.out_channels; ++o) {
      double acc = 0.0;
      for (std::size_t t = 0; t < out_len; ++t) acc += grad_out[o * out_len + t];
      grad_b[o] += acc;
    }
    if (!transposed) {
      for (std::size_t o = 0; o < s.out_channels; ++o) {
        const double* gy = grad_out.data() + o * out_len;
        for (std::size_t i = 0; i < s.in_channels; ++i) {
          const double* x = in.data() + i * in_len;
          double* gx = grad_in.data() + i * in_len;
          const std::size_t woff = (o * s.in_channels + i) * s.kernel;
          const double* w = weights.data() + woff;
          double* gw = grad_w.data() + woff;
          for (std::size_t t = 0; t < out_len; ++t) {
            const double g = gy[t];
            const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t * s.stride) -
                                         static_cast<std::ptrdiff_t>(s.padding);
            for (std::size_t k = 0; k < s.kernel; ++k) {
              const std::ptrdiff_t pos = start + static_cast<std::ptrdiff_t>(k * s.dilation);
              if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(in_len)) {
                gw[k] += g * x[pos];
                gx[pos] += g * w[k];
              }
            }
          }
        }
      }
    } else {
      for (std::size_t i = 0; i < s.in_channels; ++i) {
        const double* x = in.data() + i * in_len;
        double* gx = grad_in.data() + i * in_len;
        for (std::size_t o = 0; o < s.out_channels; ++o) {
          const double* gy = grad_out.data() + o * out_len;
          const std::size_t woff = (i * s.out_channels + o) * s.kernel;
          const double* w = weights.data() + woff;
          double* gw = grad_w.data() + woff;
          for (std::size_t t = 0; t < in_len; ++t) {
            const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t * s.stride) -
                                         static_cast<std::ptrdiff_t>(s.padding);
            double acc = 0.0;
            for (std::size_t k = 0; k < s.kernel; ++k) {
              const std::ptrdiff_t pos = start + static_cast<std::ptrdiff_t>(k * s.dilation);
              if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(out_len)) {
                gw[k] += gy[pos] * x[t];
                acc += gy[pos] * w[k];
              }
            }
            gx[t] += acc;
          }
        }
      }
    }
  }
};

/// Layer stack definition: encoder convolutions; the decoder mirrors them.
struct Architecture {
  std::size_t input_length = 112;
  std::vector<Conv1dSpec> encoder;

  /// Four 1D convolutions with kernels (3,4,4,3), strides (1,2,2,1),
  /// padding 1, dilation 1; channels 1->16->32->16->1. Input 112 gives a
  /// 28-element latent.
  static Architecture standard() {
    return {112,
            {{1, 16, 3, 1, 1, 1}, {16, 32, 4, 2, 1, 1}, {32, 16, 4, 2, 1, 1}, {16, 1, 3, 1, 1, 1}}};
  }

  std::vector<std::size_t> encoder_lengths() const {
    std::vector<std::size_t> lengths{input_length};
    for (const auto& s : encoder) lengths.push_back(s.output_length(lengths.back()));
    return lengths;
  }
};

enum class BinarizeMode {
  hard,       // spins +-1, straight-through gradient
  surrogate,  // identity in the forward pass too (finite-difference checks)
};

struct EncoderModel {
  std::vector<ConvLayer> layers;
  std::size_t input_length = 0;

  std::size_t latent_channels() const { return layers.back().spec.out_channels; }
  std::size_t latent_dim() const {
    std::size_t len = input_length;
    for (const auto& l : layers) len = l.output_length(len);
    return len * latent_channels();
  }
};

struct DecoderModel {
  std::vector<ConvLayer> layers;
  std::size_t latent_length = 0;  // per channel
  std::size_t output_length = 0;
};

/// Activations retained from a forward pass for backpropagation.
struct ForwardCache {
  std::vector<std::vector<double>> inputs;   // input to each layer (encoder then decoder)
  std::vector<std::vector<double>> outputs;  // post-activation output of each layer
  std::vector<std::size_t> lengths;          // per-channel input length of each layer
  std::vector<double> binarizer_input;
  std::vector<double> reconstruction;
};

struct Gradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> bias;
};

class Autoencoder {
 public:
  Autoencoder() = default;

  Autoencoder(const Architecture& arch, std::uint64_t seed) {
    Rng rng(seed);
    encoder_.input_length = arch.input_length;
    for (const auto& s : arch.encoder) {
      ConvLayer l{s, false, Activation::tanh, {}, {}};
      l.init(rng);
      encoder_.layers.push_back(std::move(l));
    }
    const auto lengths = arch.encoder_lengths();
    decoder_.latent_length = lengths.back();
    decoder_.output_length = arch.input_length;
    for (std::size_t i = arch.encoder.size(); i-- > 0;) {
      Conv1dSpec s = arch.encoder[i];
      std::swap(s.in_channels, s.out_channels);
      ConvLayer l{s, true, i == 0 ? Activation::sigmoid : Activation::tanh, {}, {}};
      l.init(rng);
      decoder_.layers.push_back(std::move(l));
    }
    std::size_t len = decoder_.latent_length;
    for (const auto& l : decoder_.layers) len = l.output_length(len);
    if (len != arch.input_length)
      throw Error("Autoencoder: decoder reconstructs length " + std::to_string(len) + ", expected " +
                  std::to_string(arch.input_length));
  }

  Autoencoder(EncoderModel enc, DecoderModel dec) : encoder_(std::move(enc)), decoder_(std::move(dec)) {}

  const EncoderModel& encoder() const { return encoder_; }
  const DecoderModel& decoder() const { return decoder_; }
  EncoderModel& encoder() { return encoder_; }
  DecoderModel& decoder() { return decoder_; }

  std::size_t input_length() const { return encoder_.input_length; }
  std::size_t latent_dim() const { return encoder_.latent_dim(); }

  std::vector<ConvLayer*> all_layers() {
    std::vector<ConvLayer*> out;
    for (auto& l : encoder_.layers) out.push_back(&l);
    for (auto& l : decoder_.layers) out.push_back(&l);
    return out;
  }

  /// Binarizer input u = tanh(last encoder pre-activation).
  template <typename T>
  std::vector<double> encode_continuous(std::span<const T> pixel) const {
    if (pixel.size() != encoder_.input_length)
      throw Error("encode: expected " + std::to_string(encoder_.input_length) + " values, got " +
                  std::to_string(pixel.size()));
    std::vector<double> x(pixel.begin(), pixel.end());
    std::size_t len = encoder_.input_length;
    std::vector<double> y;
    for (const auto& l : encoder_.layers) {
      const std::size_t out_len = l.output_length(len);
      y.assign(l.spec.out_channels * out_len, 0.0);
      l.forward(x, len, y, out_len);
      for (auto& v : y) v = activate(l.activation, v);
      x.swap(y);
      len = out_len;
    }
    return x;
  }

  /// Latent bits: 1 where the binarizer input is >= 0.
  template <typename T>
  Bits encode(std::span<const T> pixel) const {
    const auto u = encode_continuous(pixel);
    Bits bits(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) bits[i] = u[i] >= 0.0 ? 1 : 0;
    return bits;
  }
  template <typename T>
  Bits encode(const std::vector<T>& pixel) const {
    return encode(std::span<const T>(pixel));
  }

  std::vector<double> decode(std::span<const std::uint8_t> latent) const {
    if (latent.size() != decoder_input_size())
      throw Error("decode: expected latent of length " + std::to_string(decoder_input_size()) + ", got " +
                  std::to_string(latent.size()));
    require_binary(latent, "decode");
    std::vector<double> spins(latent.size());
    for (std::size_t i = 0; i < latent.size(); ++i) spins[i] = latent[i] ? 1.0 : -1.0;
    return decode_values(spins);
  }

  template <typename T>
  std::vector<double> reconstruct(std::span<const T> pixel) const {
    return decode(encode(pixel));
  }

  /// Full forward pass, retaining activations.
  template <typename T>
  ForwardCache forward(std::span<const T> pixel, BinarizeMode mode) const {
    if (pixel.size() != encoder_.input_length) throw Error("forward: wrong input length");
    ForwardCache cache;
    std::vector<double> x(pixel.begin(), pixel.end());
    std::size_t len = encoder_.input_length;
    auto run = [&](const ConvLayer& l) {
      const std::size_t out_len = l.output_length(len);
      std::vector<double> y(l.spec.out_channels * out_len, 0.0);
      l.forward(x, len, y, out_len);
      for (auto& v : y) v = activate(l.activation, v);
      cache.inputs.push_back(x);
      cache.lengths.push_back(len);
      cache.outputs.push_back(y);
      x = std::move(y);
      len = out_len;
    };
    for (const auto& l : encoder_.layers) run(l);
    cache.binarizer_input = x;
    if (mode == BinarizeMode::hard)
      for (auto& v : x) v = v >= 0.0 ? 1.0 : -1.0;
    for (const auto& l : decoder_.layers) run(l);
    cache.reconstruction = x;
    return cache;
  }

  Gradients zero_gradients() const {
    Gradients g;
    for (const auto* layers : {&encoder_.layers, &decoder_.layers})
      for (const auto& l : *layers) {
        g.weights.emplace_back(l.weights.size(), 0.0);
        g.bias.emplace_back(l.bias.size(), 0.0);
      }
    return g;
  }

  /// Backpropagates d(loss)/d(reconstruction) through the cached pass.
  void backward(const ForwardCache& cache, std::vector<double> grad, Gradients& g) const {
    const std::size_t n_enc = encoder_.layers.size();
    const std::size_t n_total = n_enc + decoder_.layers.size();
    for (std::size_t idx = n_total; idx-- > 0;) {
      const ConvLayer& l = idx < n_enc ? encoder_.layers[idx] : decoder_.layers[idx - n_enc];
      const auto& y = cache.outputs[idx];
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= activation_grad(l.activation, y[i]);
      const auto& in = cache.inputs[idx];
      std::vector<double> grad_in(in.size(), 0.0);
      l.backward(in, cache.lengths[idx], grad, y.size() / l.spec.out_channels, grad_in, g.weights[idx],
                 g.bias[idx]);
      grad = std::move(grad_in);
      if (idx == n_enc) {
        // Straight-through estimator across the binarizer.
        for (std::size_t i = 0; i < grad.size(); ++i)
          if (std::abs(cache.binarizer_input[i]) > 1.0) grad[i] = 0.0;
      }
    }
  }

  std::size_t decoder_input_size() const {
    return decoder_.latent_length * decoder_.layers.front().spec.in_channels;
  }

 private:
  std::vector<double> decode_values(std::vector<double> x) const {
    std::size_t len = decoder_.latent_length;
    std::vector<double> y;
    for (const auto& l : decoder_.layers) {
      const std::size_t out_len = l.output_length(len);
      y.assign(l.spec.out_channels * out_len, 0.0);
      l.forward(x, len, y, out_len);
      for (auto& v : y) v = activate(l.activation, v);
      x.swap(y);
      len = out_len;
    }
    return x;
  }

  EncoderModel encoder_;
  DecoderModel decoder_;
};

/// Mean over bands of the squared reconstruction error.
template <typename T>
double pixel_mse(std::span<const T> pixel, std::span<const double> recon) {
  double s = 0.0;
  for (std::size_t i = 0; i < pixel.size(); ++i) {
    const double d = recon[i] - static_cast<double>(pixel[i]);
    s += d * d;
  }
  return s / static_cast<double>(pixel.size());
}

/// Mean reconstruction MSE over a dataset (hard binarization).
inline double dataset_mse(const Autoencoder& ae, const data::PixelDataset& ds) {
  if (ds.size() == 0) throw Error("dataset_mse: empty dataset");
  double total = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto recon = ae.reconstruct(ds.pixels.row(i));
    total += pixel_mse(ds.pixels.row(i), std::span<const double>(recon));
  }
  return total / static_cast<double>(ds.size());
}

struct TrainConfig {
  std::size_t batch_size = 4;
  double learning_rate = 1e-3;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  Architecture architecture = Architecture::standard();
};

struct EpochLoss {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  Autoencoder model;
  std::vector<EpochLoss> history;
};

/// Adam moments for every weight and bias (beta1 0.9, beta2 0.999, eps 1e-8).
class AdamState {
 public:
  explicit AdamState(Autoencoder& ae) : m_(ae.zero_gradients()), v_(ae.zero_gradients()) {}

  void step(Autoencoder& ae, const Gradients& g, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    auto layers = ae.all_layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      update(layers[l]->weights, g.weights[l], m_.weights[l], v_.weights[l], lr, c1, c2);
      update(layers[l]->bias, g.bias[l], m_.bias[l], v_.bias[l], lr, c1, c2);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  static void update(std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                     std::vector<double>& v, double lr, double c1, double c2) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
    }
  }

  Gradients m_, v_;
  std::uint64_t t_ = 0;
};

/// Minibatch Adam on per-band MSE averaged over the batch.
inline TrainResult train_lbae(const data::SplitDataset& data, const TrainConfig& cfg) {
  if (data.train.size() == 0) throw Error("train_lbae: empty training set");
  if (cfg.batch_size == 0 || !(cfg.learning_rate > 0.0)) throw Error("train_lbae: invalid configuration");
  if (data.train.band_count() != cfg.architecture.input_length)
    throw Error("train_lbae: pixels have " + std::to_string(data.train.band_count()) +
                " bands, architecture expects " + std::to_string(cfg.architecture.input_length));
  TrainResult result{Autoencoder(cfg.architecture, cfg.seed), {}};
  Autoencoder& ae = result.model;
  AdamState adam(ae);
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const double bands = static_cast<double>(cfg.architecture.input_length);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double batch = static_cast<double>(end - start);
      Gradients g = ae.zero_gradients();
      for (std::size_t s = start; s < end; ++s) {
        const auto pixel = data.train.pixels.row(order[s]);
        const auto cache = ae.forward(pixel, BinarizeMode::hard);
        std::vector<double> grad(cache.reconstruction.size());
        for (std::size_t i = 0; i < grad.size(); ++i) {
          const double d = cache.reconstruction[i] - static_cast<double>(pixel[i]);
          epoch_loss += d * d / bands;
          grad[i] = 2.0 * d / (bands * batch);
        }
        ae.backward(cache, std::move(grad), g);
      }
      adam.step(ae, g, cfg.learning_rate);
    }
    EpochLoss el{epoch, epoch_loss / static_cast<double>(order.size()), 0.0};
    el.val_loss = data.validation.size() ? dataset_mse(ae, data.validation)
                                         : std::numeric_limits<double>::quiet_NaN();
    if (!std::isfinite(el.train_loss)) throw Error("train_lbae: loss diverged at epoch " + std::to_string(epoch));
    result.history.push_back(el);
  }
  return result;
}

struct ReconstructionMetrics {
  double euclidean = 0.0;
  double sad = 0.0;
  std::size_t sad_skipped = 0;  // pixels with an all-zero spectrum
};

/// Mean Euclidean distance and mean spectral angle between pixels and their
/// reconstructions. All-zero pixels have no angle and are left out of the
/// SAD mean.
inline ReconstructionMetrics reconstruction_metrics(const Autoencoder& ae, const data::PixelDataset& ds) {
  if (ds.size() == 0) throw Error("reconstruction_metrics: empty dataset");
  ReconstructionMetrics m;
  std::size_t sad_count = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto px = ds.pixels.row(i);
    const auto recon = ae.reconstruct(px);
    m.euclidean += metrics::euclidean(px, std::span<const double>(recon));
    if (std::all_of(px.begin(), px.end(), [](float v) { return v == 0.0f; })) {
      ++m.sad_skipped;
      continue;
    }
    m.sad += metrics::spectral_angle(px, std::span<const double>(recon));
    ++sad_count;
  }
  m.euclidean /= static_cast<double>(ds.size());
  m.sad = sad_count ? m.sad / static_cast<double>(sad_count) : 0.0;
  return m;
}

struct GridRow {
  std::size_t batch_size = 0;
  double learning_rate = 0.0;
  double euclidean = 0.0;
  double sad = 0.0;
};

/// Winner: the row minimizing both metrics if one exists; otherwise the
/// lowest SAD. Remaining ties go to the smaller batch, then the earlier row.
inline std::size_t select_grid_winner(std::span<const GridRow> rows) {
  if (rows.empty()) throw Error("select_grid_winner: no candidates");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    bool dominates = true;
    for (const auto& r : rows)
      if (r.euclidean < rows[i].euclidean || r.sad < rows[i].sad) dominates = false;
    if (dominates) {
      // Among equally dominating rows prefer the smaller batch.
      std::size_t best = i;
      for (std::size_t j = i + 1; j < rows.size(); ++j)
        if (rows[j].euclidean == rows[i].euclidean && rows[j].sad == rows[i].sad &&
            rows[j].batch_size < rows[best].batch_size)
          best = j;
      return best;
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& a = rows[i];
    const auto& b = rows[best];
    if (a.sad < b.sad || (a.sad == b.sad && a.batch_size < b.batch_size)) best = i;
  }
  return best;
}

struct GridResult {
  std::vector<GridRow> rows;
  std::vector<TrainResult> models;
  std::size_t best = 0;
};

inline GridResult grid_search_lbae(const data::SplitDataset& data, std::size_t epochs, std::uint64_t seed,
                                   const std::vector<std::size_t>& batch_sizes = {4, 8, 16},
                                   const std::vector<double>& learning_rates = {1e-2, 1e-3, 1e-4},
                                   const Architecture& arch = Architecture::standard()) {
  const data::PixelDataset& eval = data.test.size() ? data.test : data.validation;
  GridResult grid;
  for (auto b : batch_sizes) {
    for (auto lr : learning_rates) {
      TrainConfig cfg{b, lr, epochs, seed, arch};
      auto trained = train_lbae(data, cfg);
      const auto m = reconstruction_metrics(trained.model, eval);
      grid.rows.push_back({b, lr, m.euclidean, m.sad});
      grid.models.push_back(std::move(trained));
    }
  }
  grid.best = select_grid_winner(grid.rows);
  return grid;
}

/// Encodes every pixel of a dataset into a bit matrix (one row per pixel).
inline Matrix<std::uint8_t> encode_dataset(const Autoencoder& ae, const data::PixelDataset& ds) {
  Matrix<std::uint8_t> out(ds.size(), ae.latent_dim());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto bits = ae.encode(ds.pixels.row(i));
    std::copy(bits.begin(), bits.end(), out.row(i).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence (.lbae.json)

namespace detail {

inline nlohmann::json layer_to_json(const ConvLayer& l) {
  const auto& s = l.spec;
  nlohmann::json w = nlohmann::json::array();
  const std::size_t a = l.transposed ? s.in_channels : s.out_channels;
  const std::size_t b = l.transposed ? s.out_channels : s.in_channels;
  for (std::size_t i = 0; i < a; ++i) {
    nlohmann::json mid = nlohmann::json::array();
    for (std::size_t j = 0; j < b; ++j) {
      const auto first = l.weights.begin() + static_cast<std::ptrdiff_t>((i * b + j) * s.kernel);
      mid.push_back(std::vector<double>(first, first + static_cast<std::ptrdiff_t>(s.kernel)));
    }
    w.push_back(std::move(mid));
  }
  const char* act = l.activation == Activation::tanh ? "tanh" : l.activation == Activation::sigmoid ? "sigmoid" : "none";
  return {{"type", l.transposed ? "conv_transpose1d" : "conv1d"},
          {"in_channels", s.in_channels},
          {"out_channels", s.out_channels},
          {"kernel", s.kernel},
          {"stride", s.stride},
          {"padding", s.padding},
          {"dilation", s.dilation},
          {"activation", act},
          {"weights", std::move(w)},
          {"bias", l.bias}};
}

inline ConvLayer layer_from_json(const nlohmann::json& j) {
  ConvLayer l;
  const std::string type = j.at("type");
  if (type != "conv1d" && type != "conv_transpose1d") throw Error("lbae json: unknown layer type " + type);
  l.transposed = type == "conv_transpose1d";
  l.spec = {j.at("in_channels"), j.at("out_channels"), j.at("kernel"), j.at("stride"), j.at("padding"),
            j.at("dilation")};
  const std::string act = j.at("activation");
  l.activation = act == "tanh" ? Activation::tanh : act == "sigmoid" ? Activation::sigmoid : Activation::none;
  for (const auto& mid : j.at("weights"))
    for (const auto& taps : mid)
      for (double v : taps) l.weights.push_back(v);
  l.bias = j.at("bias").get<std::vector<double>>();
  if (l.weights.size() != l.weight_count() || l.bias.size() != l.spec.out_channels)
    throw Error("lbae json: weight tensor shape does not match layer spec");
  return l;
}

}  // namespace detail

inline nlohmann::json to_json(const Autoencoder& ae, const nlohmann::json& provenance = nlohmann::json::object()) {
  nlohmann::json enc = nlohmann::json::array();
  nlohmann::json dec = nlohmann::json::array();
  for (const auto& l : ae.encoder().layers) enc.push_back(detail::layer_to_json(l));
  for (const auto& l : ae.decoder().layers) dec.push_back(detail::layer_to_json(l));
  return {{"format", "lbae"},
          {"version", 1},
          {"input_length", ae.encoder().input_length},
          {"latent_dim", ae.latent_dim()},
          {"encoder", {{"layers", std::move(enc)}}},
          {"decoder", {{"latent_length", ae.decoder().latent_length}, {"layers", std::move(dec)}}},
          {"provenance", provenance}};
}

inline Autoencoder from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "lbae") throw Error("not an LBAE model document");
  if (j.value("version", 0) != 1) throw Error("unsupported LBAE model version");
  EncoderModel enc;
  enc.input_length = j.at("input_length");
  for (const auto& l : j.at("encoder").at("layers")) enc.layers.push_back(detail::layer_from_json(l));
  DecoderModel dec;
  dec.latent_length = j.at("decoder").at("latent_length");
  dec.output_length = enc.input_length;
  for (const auto& l : j.at("decoder").at("layers")) dec.layers.push_back(detail::layer_from_json(l));
  if (enc.layers.empty() || dec.layers.empty()) throw Error("LBAE model has no layers");
  return Autoencoder(std::move(enc), std::move(dec));
}

inline void save(const Autoencoder& ae, const std::filesystem::path& path,
                 const nlohmann::json& provenance = nlohmann::json::object()) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json(ae, provenance).dump(1) << "\n";
}

inline Autoencoder load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return from_json(nlohmann::json::parse(in));
}

inline std::string history_csv(const std::vector<EpochLoss>& history) {
  std::string out = "epoch,train_loss,val_loss\n";
  for (const auto& e : history)
    out += std::to_string(e.epoch) + "," + metrics::format_double(e.train_loss) + "," +
           metrics::format_double(e.val_loss) + "\n";
  return out;
}

}  // namespace hsiseg::lbae
