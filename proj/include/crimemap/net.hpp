#pragma once

// Small from-scratch convolutional classifier: architecture description,
// forward/backward passes, seeded momentum-SGD training, head replacement
// for finetuning, and versioned weight serialization.
//
// The numeric engine is templated on the scalar type: float for training,
// double for finite-difference gradient checks.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "crimemap/common.hpp"
#include "crimemap/image.hpp"

namespace crimemap {

// ---------------------------------------------------------------------------
// Architecture

enum class LayerKind { Conv, ReLU, MaxPool, Flatten, Dense, SoftmaxOutput };

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  int filters = 0, kernel = 0, stride = 1, pad = 0;  // Conv
  int pool = 0, pool_stride = 0;                     // MaxPool
  int units = 0;                                     // Dense / SoftmaxOutput (classes)
};

struct Shape3 {
  int c = 0, h = 0, w = 0;
  int size() const { return c * h * w; }
  bool operator==(const Shape3&) const = default;
};

struct ArchSpec {
  int in_h = 64, in_w = 64, in_c = 3;
  std::vector<LayerSpec> layers;

  // Activation shape before each layer plus the output shape; throws
  // ShapeError if the chain is inconsistent.
  std::vector<Shape3> chain() const {
    if (layers.empty() || layers.back().kind != LayerKind::SoftmaxOutput)
      throw ShapeError("architecture must end in a softmax output layer");
    std::vector<Shape3> shapes;
    Shape3 s{in_c, in_h, in_w};
    shapes.push_back(s);
    for (size_t i = 0; i < layers.size(); ++i) {
      const LayerSpec& l = layers[i];
      switch (l.kind) {
        case LayerKind::Conv: {
          if (l.kernel <= 0 || l.filters <= 0 || l.stride <= 0 || l.pad < 0)
            throw ShapeError("conv layer " + std::to_string(i) + ": bad parameters");
          int oh = (s.h + 2 * l.pad - l.kernel) / l.stride + 1;
          int ow = (s.w + 2 * l.pad - l.kernel) / l.stride + 1;
          if (oh <= 0 || ow <= 0)
            throw ShapeError("conv layer " + std::to_string(i) + ": kernel larger than input");
          s = {l.filters, oh, ow};
          break;
        }
        case LayerKind::ReLU:
          break;
        case LayerKind::MaxPool: {
          if (l.pool <= 0 || l.pool_stride <= 0)
            throw ShapeError("maxpool layer " + std::to_string(i) + ": bad parameters");
          int oh = (s.h - l.pool) / l.pool_stride + 1;
          int ow = (s.w - l.pool) / l.pool_stride + 1;
          if (oh <= 0 || ow <= 0)
            throw ShapeError("maxpool layer " + std::to_string(i) + ": window larger than input");
          s = {s.c, oh, ow};
          break;
        }
        case LayerKind::Flatten:
          s = {s.size(), 1, 1};
          break;
        case LayerKind::Dense:
        case LayerKind::SoftmaxOutput:
          if (l.units <= 0) throw ShapeError("dense layer " + std::to_string(i) + ": bad units");
          s = {l.units, 1, 1};
          break;
      }
      shapes.push_back(s);
      if (l.kind == LayerKind::SoftmaxOutput && i + 1 != layers.size())
        throw ShapeError("softmax output must be the final layer");
    }
    return shapes;
  }

  int num_classes() const { return layers.back().units; }

  std::string serialize() const {
    std::ostringstream out;
    out << "input " << in_h << "x" << in_w << "x" << in_c;
    for (const auto& l : layers) {
      out << "; ";
      switch (l.kind) {
        case LayerKind::Conv:
          out << "conv " << l.filters << " " << l.kernel << "x" << l.kernel << " stride "
              << l.stride << " pad " << l.pad;
          break;
        case LayerKind::ReLU:
          out << "relu";
          break;
        case LayerKind::MaxPool:
          out << "maxpool " << l.pool << " " << l.pool_stride;
          break;
        case LayerKind::Flatten:
          out << "flatten";
          break;
        case LayerKind::Dense:
          out << "dense " << l.units;
          break;
        case LayerKind::SoftmaxOutput:
          out << "softmax " << l.units;
          break;
      }
    }
    return out.str();
  }

  static ArchSpec parse(const std::string& text) {
    ArchSpec arch;
    arch.layers.clear();
    std::stringstream ss(text);
    std::string part;
    bool have_input = false;
    while (std::getline(ss, part, ';')) {
      std::istringstream ps(trim(part));
      std::string word;
      ps >> word;
      if (word.empty()) continue;
      if (word == "input") {
        char x;
        if (!(ps >> arch.in_h >> x >> arch.in_w >> x >> arch.in_c))
          throw ConfigError("arch: bad input spec in '" + part + "'");
        have_input = true;
      } else if (word == "conv") {
        LayerSpec l;
        l.kind = LayerKind::Conv;
        char x;
        int k2;
        if (!(ps >> l.filters >> l.kernel >> x >> k2)) throw ConfigError("arch: bad conv '" + part + "'");
        if (k2 != l.kernel) throw ConfigError("arch: only square conv kernels supported");
        std::string kw;
        while (ps >> kw) {
          if (kw == "stride")
            ps >> l.stride;
          else if (kw == "pad")
            ps >> l.pad;
          else
            throw ConfigError("arch: unknown conv attribute '" + kw + "'");
        }
        arch.layers.push_back(l);
      } else if (word == "relu") {
        arch.layers.push_back({LayerKind::ReLU});
      } else if (word == "maxpool") {
        LayerSpec l;
        l.kind = LayerKind::MaxPool;
        if (!(ps >> l.pool)) throw ConfigError("arch: bad maxpool '" + part + "'");
        if (!(ps >> l.pool_stride)) l.pool_stride = l.pool;
        arch.layers.push_back(l);
      } else if (word == "flatten") {
        arch.layers.push_back({LayerKind::Flatten});
      } else if (word == "dense") {
        LayerSpec l;
        l.kind = LayerKind::Dense;
        if (!(ps >> l.units)) throw ConfigError("arch: bad dense '" + part + "'");
        arch.layers.push_back(l);
      } else if (word == "softmax") {
        LayerSpec l;
        l.kind = LayerKind::SoftmaxOutput;
        if (!(ps >> l.units)) throw ConfigError("arch: bad softmax '" + part + "'");
        arch.layers.push_back(l);
      } else {
        throw ConfigError("arch: unknown layer '" + word + "'");
      }
    }
    if (!have_input) throw ConfigError("arch: missing input spec");
    arch.chain();  // validate
    return arch;
  }

  // Desk-scale default: trains in minutes on CPU while exercising the same
  // layered conv-then-dense mechanism as the full-size reference nets.
  static ArchSpec desk_default(int classes = 3) {
    return parse("input 64x64x3; conv 8 5x5 stride 1 pad 2; relu; maxpool 2 2; "
                 "conv 16 3x3 stride 1 pad 1; relu; maxpool 2 2; flatten; dense 64; relu; "
                 "softmax " +
                 std::to_string(classes));
  }
};

inline bool arch_equal(const ArchSpec& a, const ArchSpec& b) {
  return a.serialize() == b.serialize();
}

// ---------------------------------------------------------------------------
// Parameters

struct LayerParams {
  std::vector<float> weights;  // conv: [out][in][ky][kx]; dense: [out][in]
  std::vector<float> biases;   // [out]
  bool pretrained = false;     // trains at the reduced finetune rate when set
};

struct ModelParams {
  ArchSpec arch;
  uint64_t seed = 0;
  std::vector<LayerParams> layers;  // aligned with arch.layers; empty for param-free layers
  uint64_t iterations_trained = 0;
};

namespace detail {

inline void he_init(std::vector<float>& w, size_t fan_in, Rng& rng) {
  double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : w) v = static_cast<float>(rand_normal(rng) * stddev);
}

inline void init_layer(const LayerSpec& l, const Shape3& in, LayerParams& p, Rng& rng) {
  switch (l.kind) {
    case LayerKind::Conv: {
      size_t fan_in = static_cast<size_t>(in.c) * l.kernel * l.kernel;
      p.weights.assign(static_cast<size_t>(l.filters) * fan_in, 0.f);
      p.biases.assign(l.filters, 0.f);
      he_init(p.weights, fan_in, rng);
      break;
    }
    case LayerKind::Dense:
    case LayerKind::SoftmaxOutput: {
      size_t fan_in = in.size();
      p.weights.assign(static_cast<size_t>(l.units) * fan_in, 0.f);
      p.biases.assign(l.units, 0.f);
      he_init(p.weights, fan_in, rng);
      break;
    }
    default:
      p.weights.clear();
      p.biases.clear();
  }
}

}  // namespace detail

// He-normal weights, zero biases, fully determined by the seed.
inline ModelParams init_params(const ArchSpec& arch, uint64_t seed) {
  auto shapes = arch.chain();
  ModelParams params;
  params.arch = arch;
  params.seed = seed;
  params.layers.resize(arch.layers.size());
  Rng rng = make_rng(seed, 0x1417ull);
  for (size_t i = 0; i < arch.layers.size(); ++i)
    detail::init_layer(arch.layers[i], shapes[i], params.layers[i], rng);
  return params;
}

// Replaces the final classification layer with a freshly He-initialized
// `classes`-way head; every other tensor is preserved bit-exactly and marked
// pretrained so training applies the reduced finetune learning rate.
inline ModelParams replace_head(const ModelParams& params, int classes, uint64_t seed) {
  ModelParams out = params;
  out.arch.layers.back().units = classes;
  auto shapes = out.arch.chain();
  size_t head = out.arch.layers.size() - 1;
  Rng rng = make_rng(seed, 0x4ea3ull);
  detail::init_layer(out.arch.layers[head], shapes[head], out.layers[head], rng);
  out.layers[head].pretrained = false;
  for (size_t i = 0; i < head; ++i)
    if (!out.layers[i].weights.empty()) out.layers[i].pretrained = true;
  out.iterations_trained = 0;
  return out;
}

// ---------------------------------------------------------------------------
// Numeric engine

template <typename T>
class Network {
 public:
  explicit Network(const ModelParams& p) : arch_(p.arch), shapes_(p.arch.chain()) {
    weights_.resize(p.layers.size());
    biases_.resize(p.layers.size());
    pretrained_.resize(p.layers.size(), false);
    for (size_t i = 0; i < p.layers.size(); ++i) {
      weights_[i].assign(p.layers[i].weights.begin(), p.layers[i].weights.end());
      biases_[i].assign(p.layers[i].biases.begin(), p.layers[i].biases.end());
      pretrained_[i] = p.layers[i].pretrained;
    }
  }

  const ArchSpec& arch() const { return arch_; }
  const std::vector<Shape3>& shapes() const { return shapes_; }
  size_t num_layers() const { return arch_.layers.size(); }
  std::vector<std::vector<T>>& weights() { return weights_; }
  std::vector<std::vector<T>>& biases() { return biases_; }
  bool pretrained(size_t i) const { return pretrained_[i]; }

  struct Workspace {
    std::vector<std::vector<T>> act;       // act[i] = output of layer i-1 (act[0] = input)
    std::vector<std::vector<int>> poolidx; // argmax indices per maxpool layer
    std::vector<std::vector<T>> grad;      // activation gradients, same shapes as act
  };

  Workspace make_workspace() const {
    Workspace ws;
    ws.act.resize(shapes_.size());
    ws.grad.resize(shapes_.size());
    for (size_t i = 0; i < shapes_.size(); ++i) {
      ws.act[i].resize(shapes_[i].size());
      ws.grad[i].resize(shapes_[i].size());
    }
    ws.poolidx.resize(arch_.layers.size());
    for (size_t i = 0; i < arch_.layers.size(); ++i)
      if (arch_.layers[i].kind == LayerKind::MaxPool) ws.poolidx[i].resize(shapes_[i + 1].size());
    return ws;
  }

  // Full forward pass; returns the class probabilities (softmax applied).
  std::span<const T> forward(std::span<const T> input, Workspace& ws) const {
    if (input.size() != static_cast<size_t>(shapes_[0].size()))
      throw ShapeError("forward: input size " + std::to_string(input.size()) + " != expected " +
                       std::to_string(shapes_[0].size()));
    std::copy(input.begin(), input.end(), ws.act[0].begin());
    for (size_t i = 0; i < arch_.layers.size(); ++i) forward_layer(i, ws);
    softmax_inplace(ws.act.back());
    for (T v : ws.act.back())
      if (!std::isfinite(static_cast<double>(v))) report_nonfinite(ws);
    return ws.act.back();
  }

  // Cross-entropy loss for one sample plus gradient accumulation. gw/gb must
  // be shaped like weights()/biases(); gradients are added into them.
  T loss_backward(std::span<const T> input, int label, Workspace& ws,
                  std::vector<std::vector<T>>& gw, std::vector<std::vector<T>>& gb) const {
    auto probs = forward(input, ws);
    int classes = shapes_.back().size();
    if (label < 0 || label >= classes) throw ShapeError("loss_backward: label out of range");
    T p = probs[label];
    T loss = -std::log(std::max(p, static_cast<T>(1e-12)));
    // Combined softmax + cross-entropy output gradient.
    auto& dout = ws.grad.back();
    for (int c = 0; c < classes; ++c) dout[c] = probs[c] - (c == label ? T(1) : T(0));
    for (size_t i = arch_.layers.size(); i-- > 0;) backward_layer(i, ws, gw[i], gb[i]);
    if (!std::isfinite(static_cast<double>(loss))) report_nonfinite(ws);
    return loss;
  }

  int predict(std::span<const T> input, Workspace& ws) const {
    auto probs = forward(input, ws);
    int best = 0;
    for (size_t c = 1; c < probs.size(); ++c)
      if (probs[c] > probs[best]) best = static_cast<int>(c);
    return best;
  }

  void write_back(ModelParams& p) const {
    if (!arch_equal(p.arch, arch_)) throw ShapeError("write_back: architecture mismatch");
    for (size_t i = 0; i < weights_.size(); ++i) {
      p.layers[i].weights.assign(weights_[i].begin(), weights_[i].end());
      p.layers[i].biases.assign(biases_[i].begin(), biases_[i].end());
      p.layers[i].pretrained = pretrained_[i];
    }
  }

 private:
  static void softmax_inplace(std::vector<T>& v) {
    T m = v[0];
    for (T x : v) m = std::max(m, x);
    T sum = 0;
    for (T& x : v) {
      x = std::exp(x - m);
      sum += x;
    }
    for (T& x : v) x /= sum;
  }

  [[noreturn]] void report_nonfinite(const Workspace& ws) const {
    for (size_t i = 0; i < ws.act.size(); ++i)
      for (T v : ws.act[i])
        if (!std::isfinite(static_cast<double>(v)))
          throw NumericError("non-finite activation at layer " + std::to_string(i));
    throw NumericError("non-finite loss");
  }

  void forward_layer(size_t i, Workspace& ws) const {
    const LayerSpec& l = arch_.layers[i];
    const Shape3& in = shapes_[i];
    const Shape3& out = shapes_[i + 1];
    const std::vector<T>& x = ws.act[i];
    std::vector<T>& y = ws.act[i + 1];
    switch (l.kind) {
      case LayerKind::Conv:
        conv_forward(l, in, out, x, weights_[i], biases_[i], y);
        break;
      case LayerKind::ReLU:
        for (size_t j = 0; j < x.size(); ++j) y[j] = x[j] > T(0) ? x[j] : T(0);
        break;
      case LayerKind::MaxPool:
        pool_forward(l, in, out, x, y, ws.poolidx[i]);
        break;
      case LayerKind::Flatten:
        std::copy(x.begin(), x.end(), y.begin());
        break;
      case LayerKind::Dense:
      case LayerKind::SoftmaxOutput:
        dense_forward(in.size(), out.size(), x, weights_[i], biases_[i], y);
        break;
    }
  }

  void backward_layer(size_t i, Workspace& ws, std::vector<T>& gw, std::vector<T>& gb) const {
    const LayerSpec& l = arch_.layers[i];
    const Shape3& in = shapes_[i];
    const Shape3& out = shapes_[i + 1];
    const std::vector<T>& x = ws.act[i];
    const std::vector<T>& dy = ws.grad[i + 1];
    std::vector<T>& dx = ws.grad[i];
    switch (l.kind) {
      case LayerKind::Conv:
        conv_backward(l, in, out, x, weights_[i], dy, dx, gw, gb);
        break;
      case LayerKind::ReLU:
        for (size_t j = 0; j < x.size(); ++j) dx[j] = x[j] > T(0) ? dy[j] : T(0);
        break;
      case LayerKind::MaxPool: {
        std::fill(dx.begin(), dx.end(), T(0));
        const auto& idx = ws.poolidx[i];
        for (size_t j = 0; j < dy.size(); ++j) dx[idx[j]] += dy[j];
        break;
      }
      case LayerKind::Flatten:
        std::copy(dy.begin(), dy.end(), dx.begin());
        break;
      case LayerKind::Dense:
      case LayerKind::SoftmaxOutput:
        dense_backward(in.size(), out.size(), x, weights_[i], dy, dx, gw, gb);
        break;
    }
  }

  // Conv kernels keep one weight in a register and sweep whole output rows,
  // so the inner loops vectorize. For stride 1 the valid ox range for a given
  // kx is contiguous: P - kx <= ox <= in.w - 1 + P - kx (clamped to the row).
  static void conv_forward(const LayerSpec& l, const Shape3& in, const Shape3& out,
                           const std::vector<T>& x, const std::vector<T>& w,
                           const std::vector<T>& b, std::vector<T>& y) {
    const int K = l.kernel, S = l.stride, P = l.pad;
    for (int co = 0; co < out.c; ++co) {
      T* yp = y.data() + static_cast<size_t>(co) * out.h * out.w;
      std::fill(yp, yp + static_cast<size_t>(out.h) * out.w, b[co]);
      const T* wf = w.data() + static_cast<size_t>(co) * in.c * K * K;
      for (int ci = 0; ci < in.c; ++ci) {
        const T* xp = x.data() + static_cast<size_t>(ci) * in.h * in.w;
        const T* wp = wf + static_cast<size_t>(ci) * K * K;
        for (int ky = 0; ky < K; ++ky)
          for (int kx = 0; kx < K; ++kx) {
            const T wv = wp[ky * K + kx];
            for (int oy = 0; oy < out.h; ++oy) {
              const int iy = oy * S - P + ky;
              if (iy < 0 || iy >= in.h) continue;
              const T* xrow = xp + static_cast<size_t>(iy) * in.w;
              T* yrow = yp + static_cast<size_t>(oy) * out.w;
              if (S == 1) {
                int ox_lo = std::max(0, P - kx);
                int ox_hi = std::min(out.w, in.w + P - kx);
                const T* xr = xrow + ox_lo - P + kx;
                for (int ox = ox_lo; ox < ox_hi; ++ox) yrow[ox] += wv * xr[ox - ox_lo];
              } else {
                for (int ox = 0; ox < out.w; ++ox) {
                  int ix = ox * S - P + kx;
                  if (ix >= 0 && ix < in.w) yrow[ox] += wv * xrow[ix];
                }
              }
            }
          }
      }
    }
  }

  static void conv_backward(const LayerSpec& l, const Shape3& in, const Shape3& out,
                            const std::vector<T>& x, const std::vector<T>& w,
                            const std::vector<T>& dy, std::vector<T>& dx, std::vector<T>& gw,
                            std::vector<T>& gb) {
    const int K = l.kernel, S = l.stride, P = l.pad;
    std::fill(dx.begin(), dx.end(), T(0));
    for (int co = 0; co < out.c; ++co) {
      const T* dyp = dy.data() + static_cast<size_t>(co) * out.h * out.w;
      T acc_b = 0;
      for (size_t j = 0; j < static_cast<size_t>(out.h) * out.w; ++j) acc_b += dyp[j];
      gb[co] += acc_b;
      const T* wf = w.data() + static_cast<size_t>(co) * in.c * K * K;
      T* gwf = gw.data() + static_cast<size_t>(co) * in.c * K * K;
      for (int ci = 0; ci < in.c; ++ci) {
        const T* xp = x.data() + static_cast<size_t>(ci) * in.h * in.w;
        T* dxp = dx.data() + static_cast<size_t>(ci) * in.h * in.w;
        const T* wp = wf + static_cast<size_t>(ci) * K * K;
        T* gwp = gwf + static_cast<size_t>(ci) * K * K;
        for (int ky = 0; ky < K; ++ky)
          for (int kx = 0; kx < K; ++kx) {
            const T wv = wp[ky * K + kx];
            T gw_acc = 0;
            for (int oy = 0; oy < out.h; ++oy) {
              const int iy = oy * S - P + ky;
              if (iy < 0 || iy >= in.h) continue;
              const T* xrow = xp + static_cast<size_t>(iy) * in.w;
              T* dxrow = dxp + static_cast<size_t>(iy) * in.w;
              const T* dyrow = dyp + static_cast<size_t>(oy) * out.w;
              if (S == 1) {
                int ox_lo = std::max(0, P - kx);
                int ox_hi = std::min(out.w, in.w + P - kx);
                const T* xr = xrow + ox_lo - P + kx;
                T* dxr = dxrow + ox_lo - P + kx;
                T sum = 0;
                for (int ox = ox_lo; ox < ox_hi; ++ox) {
                  const T g = dyrow[ox];
                  sum += g * xr[ox - ox_lo];
                  dxr[ox - ox_lo] += g * wv;
                }
                gw_acc += sum;
              } else {
                for (int ox = 0; ox < out.w; ++ox) {
                  int ix = ox * S - P + kx;
                  if (ix < 0 || ix >= in.w) continue;
                  const T g = dyrow[ox];
                  gw_acc += g * xrow[ix];
                  dxrow[ix] += g * wv;
                }
              }
            }
            gwp[ky * K + kx] += gw_acc;
          }
      }
    }
  }

  static void pool_forward(const LayerSpec& l, const Shape3& in, const Shape3& out,
                           const std::vector<T>& x, std::vector<T>& y, std::vector<int>& idx) {
    for (int c = 0; c < in.c; ++c)
      for (int oy = 0; oy < out.h; ++oy)
        for (int ox = 0; ox < out.w; ++ox) {
          int best = -1;
          T bv = -std::numeric_limits<T>::infinity();
          for (int py = 0; py < l.pool; ++py)
            for (int px = 0; px < l.pool; ++px) {
              int iy = oy * l.pool_stride + py;
              int ix = ox * l.pool_stride + px;
              if (iy >= in.h || ix >= in.w) continue;
              int j = (c * in.h + iy) * in.w + ix;
              if (x[j] > bv) {
                bv = x[j];
                best = j;
              }
            }
          size_t o = (static_cast<size_t>(c) * out.h + oy) * out.w + ox;
          y[o] = bv;
          idx[o] = best;
        }
  }

  static void dense_forward(int in_n, int out_n, const std::vector<T>& x, const std::vector<T>& w,
                            const std::vector<T>& b, std::vector<T>& y) {
    for (int u = 0; u < out_n; ++u) {
      const T* wr = w.data() + static_cast<size_t>(u) * in_n;
      T acc = b[u];
      for (int j = 0; j < in_n; ++j) acc += wr[j] * x[j];
      y[u] = acc;
    }
  }

  static void dense_backward(int in_n, int out_n, const std::vector<T>& x, const std::vector<T>& w,
                             const std::vector<T>& dy, std::vector<T>& dx, std::vector<T>& gw,
                             std::vector<T>& gb) {
    std::fill(dx.begin(), dx.end(), T(0));
    for (int u = 0; u < out_n; ++u) {
      const T g = dy[u];
      gb[u] += g;
      const T* wr = w.data() + static_cast<size_t>(u) * in_n;
      T* gwr = gw.data() + static_cast<size_t>(u) * in_n;
      for (int j = 0; j < in_n; ++j) {
        gwr[j] += g * x[j];
        dx[j] += g * wr[j];
      }
    }
  }

  ArchSpec arch_;
  std::vector<Shape3> shapes_;
  std::vector<std::vector<T>> weights_, biases_;
  std::vector<bool> pretrained_;
};

// ---------------------------------------------------------------------------
// Batch gradients

template <typename T>
struct GradientBuffers {
  std::vector<std::vector<T>> gw, gb;

  explicit GradientBuffers(const Network<T>& net) {
    gw.resize(net.num_layers());
    gb.resize(net.num_layers());
  }
  void match(Network<T>& net) {
    for (size_t i = 0; i < gw.size(); ++i) {
      gw[i].assign(net.weights()[i].size(), T(0));
      gb[i].assign(net.biases()[i].size(), T(0));
    }
  }
};

// Mean cross-entropy over the batch plus mean gradients. Samples may be
// processed in parallel; per-sample gradients are summed in sample order so
// the result is bit-deterministic for any worker count.
template <typename T>
T batch_loss_and_gradients(Network<T>& net, const std::vector<std::span<const T>>& inputs,
                           const std::vector<int>& labels, GradientBuffers<T>& grads,
                           int workers = 1) {
  if (inputs.empty() || inputs.size() != labels.size())
    throw ShapeError("batch_loss_and_gradients: empty or mismatched batch");
  const size_t n = inputs.size();
  std::vector<GradientBuffers<T>> per_sample(n, GradientBuffers<T>(net));
  std::vector<T> losses(n);
  std::exception_ptr error;

#pragma omp parallel num_threads(std::max(1, workers))
  {
    auto ws = net.make_workspace();
#pragma omp for schedule(static)
    for (long i = 0; i < static_cast<long>(n); ++i) {
      try {
        per_sample[i].match(net);
        losses[i] = net.loss_backward(inputs[i], labels[i], ws, per_sample[i].gw,
                                      per_sample[i].gb);
      } catch (...) {
#pragma omp critical
        if (!error) error = std::current_exception();
      }
    }
  }
  if (error) std::rethrow_exception(error);

  grads.match(net);
  T loss = 0;
  const T scale = T(1) / static_cast<T>(n);
  for (size_t s = 0; s < n; ++s) {
    loss += losses[s];
    for (size_t i = 0; i < grads.gw.size(); ++i) {
      for (size_t j = 0; j < grads.gw[i].size(); ++j) grads.gw[i][j] += per_sample[s].gw[i][j] * scale;
      for (size_t j = 0; j < grads.gb[i].size(); ++j) grads.gb[i][j] += per_sample[s].gb[i][j] * scale;
    }
  }
  return loss * scale;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 16;
  int iterations = 2000;
  uint64_t seed = 0;
  // Layers marked pretrained (after replace_head) train at this fraction of
  // the base rate; the fresh head always trains at the full rate.
  double pretrained_lr_multiplier = 0.1;
  int log_every = 50;
  int workers = 1;

  void validate() const {
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (iterations < 1) throw ConfigError("iterations must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (pretrained_lr_multiplier <= 0.0 || pretrained_lr_multiplier > 1.0)
      throw ConfigError("pretrained_lr_multiplier must be in (0, 1]");
  }
};

struct TrainLogEntry {
  int iteration = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
};

struct Dataset {
  Shape3 input_shape;
  std::vector<std::vector<float>> inputs;  // CHW, normalized to [0,1]
  std::vector<int> labels;

  size_t size() const { return inputs.size(); }
};

// PNG tile -> normalized CHW input at the architecture's resolution.
inline std::vector<float> preprocess_tile(const Image& tile, const Shape3& input_shape) {
  Image img = tile;
  if (img.channels != 3) throw ShapeError("preprocess_tile: tile must be RGB");
  if (img.width != input_shape.w || img.height != input_shape.h)
    img = resize_bilinear(img, input_shape.w, input_shape.h);
  std::vector<float> out(static_cast<size_t>(input_shape.size()));
  const size_t plane = static_cast<size_t>(input_shape.h) * input_shape.w;
  for (int y = 0; y < input_shape.h; ++y)
    for (int x = 0; x < input_shape.w; ++x) {
      const uint8_t* p = img.at(x, y);
      size_t o = static_cast<size_t>(y) * input_shape.w + x;
      for (int c = 0; c < 3; ++c) out[c * plane + o] = p[c] / 255.0f;
    }
  return out;
}

struct TrainResult {
  ModelParams params;
  std::vector<TrainLogEntry> log;
};

// Seeded momentum SGD. Shuffles the sample order each epoch; deterministic
// for fixed seed (any worker count, gradients are reduced in fixed order).
inline TrainResult train(const ModelParams& init, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw DegenerateInputError("train: empty dataset");
  if (!(data.input_shape == init.arch.chain().front()))
    throw ShapeError("train: dataset input shape does not match architecture");
  for (int l : data.labels)
    if (l < 0 || l >= init.arch.num_classes()) throw ShapeError("train: label out of range");

  Network<float> net(init);
  GradientBuffers<float> grads(net);
  std::vector<std::vector<float>> vw(net.num_layers()), vb(net.num_layers());
  for (size_t i = 0; i < net.num_layers(); ++i) {
    vw[i].assign(net.weights()[i].size(), 0.f);
    vb[i].assign(net.biases()[i].size(), 0.f);
  }

  Rng shuffle_rng = make_rng(cfg.seed, 0x5467ull);
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_inplace(order, shuffle_rng);
  size_t cursor = 0;

  TrainResult result;
  auto eval_ws = net.make_workspace();
  for (int iter = 1; iter <= cfg.iterations; ++iter) {
    std::vector<std::span<const float>> batch_in;
    std::vector<int> batch_lb;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        shuffle_inplace(order, shuffle_rng);
        cursor = 0;
      }
      size_t s = order[cursor++];
      batch_in.emplace_back(data.inputs[s]);
      batch_lb.push_back(data.labels[s]);
    }
    float loss = batch_loss_and_gradients(net, batch_in, batch_lb, grads, cfg.workers);

    for (size_t i = 0; i < net.num_layers(); ++i) {
      double lr = cfg.learning_rate * (net.pretrained(i) ? cfg.pretrained_lr_multiplier : 1.0);
      auto& w = net.weights()[i];
      auto& b = net.biases()[i];
      for (size_t j = 0; j < w.size(); ++j) {
        vw[i][j] = static_cast<float>(cfg.momentum * vw[i][j] - lr * grads.gw[i][j]);
        w[j] += vw[i][j];
      }
      for (size_t j = 0; j < b.size(); ++j) {
        vb[i][j] = static_cast<float>(cfg.momentum * vb[i][j] - lr * grads.gb[i][j]);
        b[j] += vb[i][j];
      }
    }

    if (iter % cfg.log_every == 0 || iter == cfg.iterations) {
      int correct = 0;
      for (size_t b = 0; b < batch_in.size(); ++b)
        if (net.predict(batch_in[b], eval_ws) == batch_lb[b]) ++correct;
      result.log.push_back(
          {iter, static_cast<double>(loss), static_cast<double>(correct) / batch_in.size()});
    }
  }

  result.params = init;
  net.write_back(result.params);
  result.params.iterations_trained = init.iterations_trained + cfg.iterations;
  return result;
}

// ---------------------------------------------------------------------------
// Serialization: magic, version, arch text, seed, tensors, FNV-64 checksum.

inline constexpr char kModelMagic[8] = {'C', 'R', 'M', 'M', 'D', 'L', '0', '\n'};
inline constexpr uint32_t kModelVersion = 1;

namespace detail {

template <typename V>
void put(std::string& out, const V& v) {
  const char* p = reinterpret_cast<const char*>(&v);
  out.append(p, sizeof(V));
}

template <typename V>
V take(const std::string& in, size_t& pos) {
  if (pos + sizeof(V) > in.size()) throw CorruptModelError("model file truncated");
  V v;
  std::memcpy(&v, in.data() + pos, sizeof(V));
  pos += sizeof(V);
  return v;
}

}  // namespace detail

inline void save_params(const ModelParams& params, const std::filesystem::path& path) {
  std::string payload;
  std::string arch = params.arch.serialize();
  detail::put(payload, static_cast<uint32_t>(arch.size()));
  payload += arch;
  detail::put(payload, params.seed);
  detail::put(payload, params.iterations_trained);
  detail::put(payload, static_cast<uint32_t>(params.layers.size()));
  for (const auto& l : params.layers) {
    detail::put(payload, static_cast<uint8_t>(l.pretrained));
    detail::put(payload, static_cast<uint64_t>(l.weights.size()));
    payload.append(reinterpret_cast<const char*>(l.weights.data()),
                   l.weights.size() * sizeof(float));
    detail::put(payload, static_cast<uint64_t>(l.biases.size()));
    payload.append(reinterpret_cast<const char*>(l.biases.data()),
                   l.biases.size() * sizeof(float));
  }

  std::string out;
  out.append(kModelMagic, sizeof(kModelMagic));
  detail::put(out, kModelVersion);
  detail::put(out, static_cast<uint64_t>(payload.size()));
  out += payload;
  detail::put(out, fnv1a64(payload));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

inline ModelParams load_params(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  size_t pos = 0;
  if (in.size() < sizeof(kModelMagic) || std::memcmp(in.data(), kModelMagic, sizeof(kModelMagic)))
    throw CorruptModelError("bad magic bytes: not a model file");
  pos = sizeof(kModelMagic);
  uint32_t version = detail::take<uint32_t>(in, pos);
  if (version != kModelVersion)
    throw CorruptModelError("unsupported model version " + std::to_string(version));
  uint64_t payload_size = detail::take<uint64_t>(in, pos);
  if (pos + payload_size + sizeof(uint64_t) > in.size())
    throw CorruptModelError("model file truncated");
  std::string_view payload(in.data() + pos, payload_size);
  size_t check_pos = pos + payload_size;
  uint64_t stored = detail::take<uint64_t>(in, check_pos);
  if (stored != fnv1a64(payload)) throw CorruptModelError("model checksum mismatch");

  ModelParams params;
  uint32_t arch_len = detail::take<uint32_t>(in, pos);
  if (pos + arch_len > in.size()) throw CorruptModelError("model file truncated");
  params.arch = ArchSpec::parse(in.substr(pos, arch_len));
  pos += arch_len;
  params.seed = detail::take<uint64_t>(in, pos);
  params.iterations_trained = detail::take<uint64_t>(in, pos);
  uint32_t n_layers = detail::take<uint32_t>(in, pos);
  if (n_layers != params.arch.layers.size())
    throw CorruptModelError("layer count does not match architecture");
  params.layers.resize(n_layers);
  auto shapes = params.arch.chain();
  for (uint32_t i = 0; i < n_layers; ++i) {
    params.layers[i].pretrained = detail::take<uint8_t>(in, pos) != 0;
    uint64_t wn = detail::take<uint64_t>(in, pos);
    if (pos + wn * sizeof(float) > in.size()) throw CorruptModelError("model file truncated");
    params.layers[i].weights.resize(wn);
    std::memcpy(params.layers[i].weights.data(), in.data() + pos, wn * sizeof(float));
    pos += wn * sizeof(float);
    uint64_t bn = detail::take<uint64_t>(in, pos);
    if (pos + bn * sizeof(float) > in.size()) throw CorruptModelError("model file truncated");
    params.layers[i].biases.resize(bn);
    std::memcpy(params.layers[i].biases.data(), in.data() + pos, bn * sizeof(float));
    pos += bn * sizeof(float);
    for (float v : params.layers[i].weights)
      if (!std::isfinite(v)) throw CorruptModelError("non-finite weight in model file");
  }
  // Cross-check tensor sizes against the architecture.
  ModelParams ref = init_params(params.arch, 0);
  for (uint32_t i = 0; i < n_layers; ++i)
    if (params.layers[i].weights.size() != ref.layers[i].weights.size() ||
        params.layers[i].biases.size() != ref.layers[i].biases.size())
      throw CorruptModelError("tensor shapes do not match architecture");
  return params;
}

}  // namespace crimemap
