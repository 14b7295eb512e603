#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ranges>
#include <span>
#include <string>
#include <vector>

#include "cvfl/error.hpp"
#include "cvfl/parameter_vector.hpp"
#include "cvfl/rng.hpp"

namespace cvfl {

enum class ModelKind { softmax_linear, mlp_1hidden };

// Parameter layout (row-major):
//   softmax-linear: W[classes][input], b[classes]
//   mlp-1hidden:    W1[hidden][input], b1[hidden], W2[classes][hidden], b2[classes]
struct ModelSpec {
  ModelKind kind = ModelKind::softmax_linear;
  int input_dim = 0;
  int num_classes = 0;
  int hidden_dim = 0;

  std::size_t parameter_count() const {
    const auto in = static_cast<std::size_t>(input_dim);
    const auto c = static_cast<std::size_t>(num_classes);
    const auto h = static_cast<std::size_t>(hidden_dim);
    if (kind == ModelKind::softmax_linear) return in * c + c;
    return in * h + h + h * c + c;
  }

  void validate() const {
    if (input_dim < 1) throw InputError("model input_dim must be positive");
    if (num_classes < 2) throw InputError("model num_classes must be at least 2");
    if (kind == ModelKind::mlp_1hidden && hidden_dim < 1) {
      throw InputError("mlp hidden_dim must be positive");
    }
  }

  bool operator==(const ModelSpec&) const = default;
};

inline const char* to_string(ModelKind kind) {
  return kind == ModelKind::softmax_linear ? "softmax-linear" : "mlp-1hidden";
}

struct Sample {
  std::vector<double> features;
  int label = 0;

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  int num_classes = 0;
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }

  std::size_t input_dim() const noexcept {
    return samples.empty() ? 0 : samples.front().features.size();
  }

  std::vector<int> class_counts() const {
    std::vector<int> counts(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
    for (const auto& s : samples) ++counts[static_cast<std::size_t>(s.label)];
    return counts;
  }

  void validate() const {
    const std::size_t dim = input_dim();
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      if (s.label < 0 || s.label >= num_classes) {
        throw InputError("sample " + std::to_string(i) + " has label " + std::to_string(s.label) +
                         " outside [0, " + std::to_string(num_classes) + ")");
      }
      if (s.features.size() != dim) {
        throw InputError("sample " + std::to_string(i) + " has non-uniform feature dimension");
      }
    }
  }
};

struct TrainConfig {
  int iterations = 0;
  int batch_size = 1;
  double learning_rate = 0.1;
};

template <typename R>
concept SampleRange = std::ranges::input_range<R> &&
                      std::convertible_to<std::ranges::range_reference_t<R>, const Sample&>;

inline ParameterVector init_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(derive_seed(seed, "init"));
  std::uniform_real_distribution<double> dist(-0.05, 0.05);
  ParameterVector w(spec.parameter_count());
  for (double& v : w) v = dist(rng);
  return w;
}

namespace detail {

inline void check_params(const ModelSpec& spec, const ParameterVector& params) {
  if (params.dim() != spec.parameter_count()) {
    throw InputError("parameter vector has dim " + std::to_string(params.dim()) + ", model expects " +
                     std::to_string(spec.parameter_count()));
  }
}

inline void check_input(const ModelSpec& spec, std::span<const double> x) {
  if (x.size() != static_cast<std::size_t>(spec.input_dim)) {
    throw InputError("feature vector has " + std::to_string(x.size()) + " entries, model expects " +
                     std::to_string(spec.input_dim));
  }
}

// out[r] = b[r] + sum_c W[r][c] * x[c]
inline void affine(const double* W, const double* b, std::span<const double> x, std::span<double> out) {
  const std::size_t cols = x.size();
  for (std::size_t r = 0; r < out.size(); ++r) {
    const double* row = W + r * cols;
    double acc = b[r];
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    out[r] = acc;
  }
}

inline void softmax_inplace(std::span<double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

// Scratch space for one forward/backward pass.
struct Workspace {
  std::vector<double> hidden;
  std::vector<double> probs;
  std::vector<double> grad_hidden;

  explicit Workspace(const ModelSpec& spec)
      : hidden(static_cast<std::size_t>(spec.hidden_dim)),
        probs(static_cast<std::size_t>(spec.num_classes)),
        grad_hidden(static_cast<std::size_t>(spec.hidden_dim)) {}
};

// Fills ws.probs with the softmax output (and ws.hidden with post-ReLU
// activations for the MLP).
inline void forward_into(const ModelSpec& spec, const ParameterVector& params, std::span<const double> x,
                         Workspace& ws) {
  const double* p = params.view().data();
  const auto in = static_cast<std::size_t>(spec.input_dim);
  const auto nc = static_cast<std::size_t>(spec.num_classes);
  if (spec.kind == ModelKind::softmax_linear) {
    affine(p, p + in * nc, x, ws.probs);
  } else {
    const auto h = static_cast<std::size_t>(spec.hidden_dim);
    affine(p, p + in * h, x, ws.hidden);
    for (double& v : ws.hidden) v = std::max(v, 0.0);
    const double* w2 = p + in * h + h;
    affine(w2, w2 + h * nc, ws.hidden, ws.probs);
  }
  softmax_inplace(ws.probs);
}

// Accumulates scale * d(-log p_label)/d(params) into grad. Expects
// forward_into to have run for x.
inline void backward_accumulate(const ModelSpec& spec, const ParameterVector& params, std::span<const double> x,
                                int label, double scale, Workspace& ws, ParameterVector& grad) {
  const auto in = static_cast<std::size_t>(spec.input_dim);
  const auto nc = static_cast<std::size_t>(spec.num_classes);
  double* g = grad.view().data();
  const double* p = params.view().data();

  // dL/dz = probs - onehot(label)
  ws.probs[static_cast<std::size_t>(label)] -= 1.0;

  if (spec.kind == ModelKind::softmax_linear) {
    double* gb = g + in * nc;
    for (std::size_t r = 0; r < nc; ++r) {
      const double gz = scale * ws.probs[r];
      double* row = g + r * in;
      for (std::size_t c = 0; c < in; ++c) row[c] += gz * x[c];
      gb[r] += gz;
    }
    return;
  }

  const auto h = static_cast<std::size_t>(spec.hidden_dim);
  const double* w2 = p + in * h + h;
  double* gw1 = g;
  double* gb1 = g + in * h;
  double* gw2 = g + in * h + h;
  double* gb2 = gw2 + h * nc;

  std::fill(ws.grad_hidden.begin(), ws.grad_hidden.end(), 0.0);
  for (std::size_t r = 0; r < nc; ++r) {
    const double gz = scale * ws.probs[r];
    double* row = gw2 + r * h;
    const double* wrow = w2 + r * h;
    for (std::size_t j = 0; j < h; ++j) {
      row[j] += gz * ws.hidden[j];
      ws.grad_hidden[j] += gz * wrow[j];
    }
    gb2[r] += gz;
  }
  for (std::size_t j = 0; j < h; ++j) {
    if (ws.hidden[j] <= 0.0) continue;  // ReLU gate
    const double gh = ws.grad_hidden[j];
    double* row = gw1 + j * in;
    for (std::size_t c = 0; c < in; ++c) row[c] += gh * x[c];
    gb1[j] += gh;
  }
}

}  // namespace detail

// Softmax class probabilities for one input.
inline std::vector<double> forward(const ModelSpec& spec, const ParameterVector& params,
                                   std::span<const double> x) {
  detail::check_params(spec, params);
  detail::check_input(spec, x);
  detail::Workspace ws(spec);
  detail::forward_into(spec, params, x, ws);
  return ws.probs;
}

inline int predict(const ModelSpec& spec, const ParameterVector& params, std::span<const double> x) {
  const auto probs = forward(spec, params, x);
  return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

// Mean cross-entropy over the samples.
template <SampleRange R>
double loss(const ModelSpec& spec, const ParameterVector& params, R&& samples) {
  detail::check_params(spec, params);
  detail::Workspace ws(spec);
  double total = 0.0;
  std::size_t n = 0;
  for (const Sample& s : samples) {
    detail::check_input(spec, s.features);
    detail::forward_into(spec, params, s.features, ws);
    total -= std::log(std::max(ws.probs[static_cast<std::size_t>(s.label)], 1e-300));
    ++n;
  }
  if (n == 0) throw InputError("loss over an empty sample set");
  return total / static_cast<double>(n);
}

inline double loss(const ModelSpec& spec, const ParameterVector& params, const Dataset& data) {
  return loss(spec, params, data.samples);
}

// Gradient of the mean cross-entropy over the samples.
template <SampleRange R>
ParameterVector gradient(const ModelSpec& spec, const ParameterVector& params, R&& samples) {
  detail::check_params(spec, params);
  detail::Workspace ws(spec);
  ParameterVector grad(params.dim());
  std::size_t n = 0;
  for (const Sample& s : samples) {
    detail::check_input(spec, s.features);
    detail::forward_into(spec, params, s.features, ws);
    detail::backward_accumulate(spec, params, s.features, s.label, 1.0, ws, grad);
    ++n;
  }
  if (n == 0) throw InputError("gradient over an empty batch");
  grad *= 1.0 / static_cast<double>(n);
  return grad;
}

template <SampleRange R>
ParameterVector sgd_step(const ModelSpec& spec, ParameterVector params, R&& batch, double learning_rate) {
  const ParameterVector grad = gradient(spec, params, std::forward<R>(batch));
  params.axpy(-learning_rate, grad);
  return params;
}

// Mini-batches drawn without replacement from a shuffled index order; a new
// pass (reshuffle) starts whenever fewer than batch_size indices remain.
class BatchSampler {
 public:
  BatchSampler(std::size_t population, Rng rng) : order_(population), rng_(std::move(rng)) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = population;  // forces a shuffle on first draw
  }

  std::span<const std::size_t> next(std::size_t batch_size) {
    if (batch_size == 0 || batch_size > order_.size()) {
      throw InputError("batch size " + std::to_string(batch_size) + " exceeds dataset size " +
                       std::to_string(order_.size()));
    }
    if (pos_ + batch_size > order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    std::span<const std::size_t> out(order_.data() + pos_, batch_size);
    pos_ += batch_size;
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng rng_;
};

// Runs cfg.iterations SGD steps from w0 and returns w_I - w0.
inline ParameterVector local_train(const ModelSpec& spec, const ParameterVector& w0, const Dataset& data,
                                   const TrainConfig& cfg, BatchSampler& sampler) {
  if (data.empty()) throw InputError("local training on an empty dataset");
  if (cfg.iterations < 0) throw InputError("iterations must be nonnegative");
  if (cfg.batch_size < 1 || static_cast<std::size_t>(cfg.batch_size) > data.size()) {
    throw InputError("batch size " + std::to_string(cfg.batch_size) + " exceeds dataset size " +
                     std::to_string(data.size()));
  }
  ParameterVector w = w0;
  for (int it = 0; it < cfg.iterations; ++it) {
    const auto idx = sampler.next(static_cast<std::size_t>(cfg.batch_size));
    auto batch = idx | std::views::transform([&](std::size_t i) -> const Sample& { return data.samples[i]; });
    w = sgd_step(spec, std::move(w), batch, cfg.learning_rate);
  }
  return w - w0;
}

inline ParameterVector local_train(const ModelSpec& spec, const ParameterVector& w0, const Dataset& data,
                                   const TrainConfig& cfg, Rng& rng) {
  if (data.empty()) throw InputError("local training on an empty dataset");
  BatchSampler sampler(data.size(), Rng(rng()));
  return local_train(spec, w0, data, cfg, sampler);
}

struct ClassAccuracy {
  std::optional<double> accuracy;  // absent when the class has no samples
  int count = 0;
};

inline std::vector<ClassAccuracy> evaluate_per_class(const ModelSpec& spec, const ParameterVector& params,
                                                     const Dataset& data) {
  detail::check_params(spec, params);
  const auto nc = static_cast<std::size_t>(spec.num_classes);
  std::vector<int> correct(nc, 0), count(nc, 0);
  detail::Workspace ws(spec);
  for (const auto& s : data.samples) {
    detail::check_input(spec, s.features);
    detail::forward_into(spec, params, s.features, ws);
    const auto pred = static_cast<int>(std::max_element(ws.probs.begin(), ws.probs.end()) - ws.probs.begin());
    const auto c = static_cast<std::size_t>(s.label);
    ++count[c];
    if (pred == s.label) ++correct[c];
  }
  std::vector<ClassAccuracy> out(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    out[c].count = count[c];
    if (count[c] > 0) out[c].accuracy = static_cast<double>(correct[c]) / count[c];
  }
  return out;
}

inline double accuracy(const ModelSpec& spec, const ParameterVector& params, const Dataset& data) {
  if (data.empty()) throw InputError("accuracy over an empty dataset");
  detail::check_params(spec, params);
  detail::Workspace ws(spec);
  std::size_t correct = 0;
  for (const auto& s : data.samples) {
    detail::check_input(spec, s.features);
    detail::forward_into(spec, params, s.features, ws);
    const auto pred = std::max_element(ws.probs.begin(), ws.probs.end()) - ws.probs.begin();
    if (pred == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace cvfl
