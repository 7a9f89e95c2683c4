#include "ttcloc/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>

#include "ttcloc/errors.hpp"
#include "ttcloc/io.hpp"

namespace ttcloc {
namespace {

namespace kp = kernels::parallel;

constexpr char kCheckpointMagic[8] = {'T', 'T', 'C', 'L', 'O', 'C', 'N', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string where) : bytes_(bytes), where_(std::move(where)) {}
  std::uint64_t get(int width) {
    if (pos_ + static_cast<std::size_t>(width) > bytes_.size())
      throw ValidationError(where_ + ": truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string where_;
  std::size_t pos_ = 0;
};

void relu_inplace(Matrix& m) {
  for (double& v : m.values()) v = v > 0.0 ? v : 0.0;
}

void uniform_fill(Rng& rng, std::span<double> values, double limit) {
  for (double& v : values) v = rng.uniform(-limit, limit);
}

}  // namespace

std::string to_string(GatingKind kind) {
  switch (kind) {
    case GatingKind::sigmoid: return "sigmoid";
    case GatingKind::softsign: return "softsign";
    case GatingKind::binarize: return "binarize";
  }
  return "unknown";
}

GatingKind parse_gating_kind(const std::string& name) {
  if (name == "sigmoid") return GatingKind::sigmoid;
  if (name == "softsign") return GatingKind::softsign;
  if (name == "binarize") return GatingKind::binarize;
  throw ValidationError("unknown gating kind '" + name + "'");
}

NetworkParams NetworkParams::zeros(std::size_t input_dim, std::size_t hidden_dim,
                                   std::size_t num_classes) {
  NetworkParams p;
  p.w1 = Matrix(input_dim, hidden_dim);
  p.b1.assign(hidden_dim, 0.0);
  for (auto& tap : p.conv) tap = Matrix(hidden_dim, hidden_dim);
  p.conv_bias.assign(hidden_dim, 0.0);
  p.w2 = Matrix(hidden_dim, num_classes + 1);
  p.b2.assign(num_classes + 1, 0.0);
  return p;
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](std::span<const double> t) { n += t.size(); });
  return n;
}

void NetworkParams::check_shapes() const {
  const std::size_t D = w1.rows();
  const std::size_t H = w1.cols();
  bool ok = D >= 1 && H >= 1 && b1.size() == H && conv_bias.size() == H && w2.rows() == H &&
            w2.cols() >= 2 && b2.size() == w2.cols();
  for (const auto& tap : conv) ok = ok && tap.rows() == H && tap.cols() == H;
  if (!ok) throw std::invalid_argument("network parameters have inconsistent shapes");
}

void accumulate(GradientBundle& into, const GradientBundle& other, double scale) {
  std::vector<std::span<const double>> src;
  other.for_each_tensor([&](std::span<const double> t) { src.push_back(t); });
  std::size_t k = 0;
  into.for_each_tensor([&](std::span<double> t) {
    const auto& s = src[k++];
    if (s.size() != t.size()) throw std::invalid_argument("accumulate: shape mismatch");
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += scale * s[i];
  });
}

DropoutMask sample_dropout_mask(Rng& rng, std::size_t T, std::size_t hidden_dim, double drop_prob) {
  if (!(drop_prob >= 0.0 && drop_prob < 1.0))
    throw std::invalid_argument("dropout probability must be in [0, 1)");
  DropoutMask m{Matrix(T, hidden_dim), drop_prob};
  for (double& v : m.keep.values()) v = rng.bernoulli(drop_prob) ? 0.0 : 1.0;
  return m;
}

ScoreMap forward(const NetworkParams& params, const Matrix& features, const DropoutMask* mask,
                 ForwardCache* cache) {
  params.check_shapes();
  if (features.cols() != params.input_dim())
    throw std::invalid_argument("forward: feature dimension " + std::to_string(features.cols()) +
                                " does not match network input " +
                                std::to_string(params.input_dim()));
  if (features.rows() < 1) throw std::invalid_argument("forward: empty feature sequence");
  const std::size_t H = params.hidden_dim();
  if (mask && (mask->keep.rows() != features.rows() || mask->keep.cols() != H))
    throw std::invalid_argument("forward: dropout mask shape mismatch");

  Matrix h1 = kp::affine(features, params.w1, params.b1);
  relu_inplace(h1);
  Matrix h2 = kp::conv3(h1, params.conv, params.conv_bias);
  for (std::size_t i = 0; i < h2.size(); ++i) h2.data()[i] += h1.data()[i];
  relu_inplace(h2);

  Matrix h3 = h2;
  if (mask) {
    const double scale = 1.0 / (1.0 - mask->drop_prob);
    for (std::size_t i = 0; i < h3.size(); ++i) h3.data()[i] *= mask->keep.data()[i] * scale;
  }
  const Matrix out = kp::affine(h3, params.w2, params.b2);

  const std::size_t C = params.num_classes();
  ScoreMap sm{Matrix(features.rows(), C), Vector(features.rows())};
  for (std::size_t t = 0; t < features.rows(); ++t) {
    for (std::size_t c = 0; c < C; ++c) sm.s(t, c) = out(t, c);
    sm.b[t] = out(t, C);
  }
  if (cache) {
    cache->input = features;
    cache->h1 = std::move(h1);
    cache->h2 = std::move(h2);
    cache->h3 = std::move(h3);
    cache->mask = mask ? std::optional<DropoutMask>(*mask) : std::nullopt;
  }
  return sm;
}

GradientBundle backward(const NetworkParams& params, const ForwardCache& cache, const Matrix& d_s,
                        std::span<const double> d_b) {
  const std::size_t T = cache.input.rows();
  const std::size_t C = params.num_classes();
  if (d_s.rows() != T || d_s.cols() != C || d_b.size() != T || cache.h1.rows() != T)
    throw std::invalid_argument("backward: upstream gradient shape mismatch");

  Matrix d_out(T, C + 1);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < C; ++c) d_out(t, c) = d_s(t, c);
    d_out(t, C) = d_b[t];
  }

  GradientBundle g;
  g.w2 = kp::matmul_tn(cache.h3, d_out);
  g.b2 = kp::column_sums(d_out);
  Matrix d_h2 = kp::matmul_nt(d_out, params.w2);
  if (cache.mask) {
    const double scale = 1.0 / (1.0 - cache.mask->drop_prob);
    for (std::size_t i = 0; i < d_h2.size(); ++i) d_h2.data()[i] *= cache.mask->keep.data()[i] * scale;
  }
  for (std::size_t i = 0; i < d_h2.size(); ++i)
    if (!(cache.h2.data()[i] > 0.0)) d_h2.data()[i] = 0.0;

  kernels::ConvGrads cg = kp::conv3_backward(cache.h1, params.conv, d_h2);
  g.conv = std::move(cg.d_kernel);
  g.conv_bias = std::move(cg.d_bias);
  Matrix d_h1 = std::move(cg.d_input);
  for (std::size_t i = 0; i < d_h1.size(); ++i) {
    d_h1.data()[i] += d_h2.data()[i];  // residual path
    if (!(cache.h1.data()[i] > 0.0)) d_h1.data()[i] = 0.0;
  }
  g.w1 = kp::matmul_tn(cache.input, d_h1);
  g.b1 = kp::column_sums(d_h1);
  return g;
}

double gate_value(GatingKind kind, double x) {
  switch (kind) {
    case GatingKind::sigmoid:
      if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
      else {
        const double e = std::exp(x);
        return e / (1.0 + e);
      }
    case GatingKind::softsign: return (x / (1.0 + std::abs(x)) + 1.0) / 2.0;
    case GatingKind::binarize: return x > 0.0 ? 1.0 : 0.0;
  }
  return 0.0;
}

double gate_derivative(GatingKind kind, double x) {
  switch (kind) {
    case GatingKind::sigmoid: {
      const double g = gate_value(kind, x);
      return g * (1.0 - g);
    }
    case GatingKind::softsign: {
      const double d = 1.0 + std::abs(x);
      return 0.5 / (d * d);
    }
    case GatingKind::binarize: return 1.0;
  }
  return 0.0;
}

Gate apply_gate(const ScoreMap& scores, GatingKind kind) {
  Gate gate{Matrix(scores.num_snippets(), scores.num_classes()), kind};
  for (std::size_t t = 0; t < scores.num_snippets(); ++t)
    for (std::size_t c = 0; c < scores.num_classes(); ++c)
      gate.g(t, c) = gate_value(kind, scores.s(t, c) - scores.b[t]);
  return gate;
}

Vector manual_thresholds(const Matrix& s) {
  Vector thr(s.cols(), 0.0);
  for (std::size_t c = 0; c < s.cols(); ++c) {
    double lo = s(0, c);
    double hi = s(0, c);
    for (std::size_t t = 1; t < s.rows(); ++t) {
      lo = std::min(lo, s(t, c));
      hi = std::max(hi, s(t, c));
    }
    thr[c] = (hi + lo) / 2.0;
  }
  return thr;
}

Gate apply_class_threshold_gate(const Matrix& s, std::span<const double> thresholds,
                                GatingKind kind) {
  if (thresholds.size() != s.cols()) throw std::invalid_argument("threshold count mismatch");
  Gate gate{Matrix(s.rows(), s.cols()), kind};
  for (std::size_t t = 0; t < s.rows(); ++t)
    for (std::size_t c = 0; c < s.cols(); ++c) gate.g(t, c) = gate_value(kind, s(t, c) - thresholds[c]);
  return gate;
}

NetworkParams init_params(Rng& rng, std::size_t input_dim, std::size_t hidden_dim,
                          std::size_t num_classes) {
  if (input_dim < 1 || hidden_dim < 1 || num_classes < 1)
    throw std::invalid_argument("init_params: dimensions must be >= 1");
  auto limit = [](std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  };
  NetworkParams p = NetworkParams::zeros(input_dim, hidden_dim, num_classes);
  uniform_fill(rng, p.w1.values(), limit(input_dim, hidden_dim));
  for (auto& tap : p.conv) uniform_fill(rng, tap.values(), limit(3 * hidden_dim, 3 * hidden_dim));
  uniform_fill(rng, p.w2.values(), limit(hidden_dim, num_classes + 1));
  return p;
}

void save_checkpoint(const NetworkParams& params, const std::filesystem::path& path) {
  params.check_shapes();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, 0);
  put_u64(out, params.input_dim());
  put_u64(out, params.hidden_dim());
  put_u64(out, params.num_classes());
  params.for_each_tensor([&](std::span<const double> t) {
    for (double v : t) put_u64(out, std::bit_cast<std::uint64_t>(v));
  });
  io::write_file_atomic(path, out);
}

NetworkParams load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  const std::string where = path.string();
  if (bytes.size() < sizeof kCheckpointMagic ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw ValidationError(where + ": not a network checkpoint");
  Reader r(bytes, where);
  for (std::size_t i = 0; i < sizeof kCheckpointMagic; ++i) r.get(1);
  if (const auto version = r.get(4); version != kCheckpointVersion)
    throw ValidationError(where + ": unsupported checkpoint version " + std::to_string(version));
  r.get(4);
  const auto D = r.get(8);
  const auto H = r.get(8);
  const auto C = r.get(8);
  if (D == 0 || H == 0 || C == 0 || D > (1u << 24) || H > (1u << 24) || C > (1u << 24))
    throw ValidationError(where + ": implausible checkpoint dimensions");
  NetworkParams p = NetworkParams::zeros(D, H, C);
  p.for_each_tensor([&](std::span<double> t) {
    for (double& v : t) v = std::bit_cast<double>(r.get(8));
  });
  if (!r.at_end()) throw ValidationError(where + ": trailing bytes in checkpoint");
  return p;
}

}  // namespace ttcloc
