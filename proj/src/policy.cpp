#include "iterdpo/policy.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "iterdpo/errors.hpp"
#include "iterdpo/hash.hpp"
#include "iterdpo/rng.hpp"

namespace iterdpo {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr std::uint32_t kCheckpointMagic = 0x49445043;  // "IDPC"
constexpr std::uint32_t kCheckpointVersion = 1;

double logsumexp(const VectorXd& v) {
  double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

void check_tokens_in_vocab(const ArchConfig& arch, const TokenSeq& seq) {
  for (Token t : seq) {
    if (t < 0 || t >= arch.vocab_size) {
      throw ArgumentError("token id " + std::to_string(t) +
                          " outside vocabulary of size " +
                          std::to_string(arch.vocab_size));
    }
  }
}

struct LayerCache {
  MatrixXd x_in;      // d x L
  MatrixXd q, k, v;   // d x L
  MatrixXd attn;      // L x L row-softmax weights, zero above the diagonal
  MatrixXd attn_out;  // d x L
};

struct ForwardCache {
  MatrixXd x0;  // d x L embeddings
  std::vector<LayerCache> layers;
  MatrixXd x_final;  // d x L
};

// Full forward pass over `tokens`; fills the cache when given.
MatrixXd forward(const PolicyCheckpoint& model, const TokenSeq& tokens,
                 ForwardCache* cache) {
  const ArchConfig& arch = model.arch;
  const Index d = arch.embed_dim;
  const Index len = static_cast<Index>(tokens.size());
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  auto wte = param_segment(model, "wte");
  auto wpe = param_segment(model, "wpe");

  MatrixXd x(d, len);
  for (Index i = 0; i < len; ++i) {
    x.col(i) = wte.row(tokens[static_cast<std::size_t>(i)]).transpose() +
               wpe.row(i).transpose();
  }
  if (cache) {
    cache->x0 = x;
    cache->layers.resize(static_cast<std::size_t>(arch.n_layers));
  }

  for (int l = 0; l < arch.n_layers; ++l) {
    std::string base = "layer" + std::to_string(l) + ".";
    auto wq = param_segment(model, base + "wq");
    auto wk = param_segment(model, base + "wk");
    auto wv = param_segment(model, base + "wv");
    auto wo = param_segment(model, base + "wo");

    MatrixXd q = wq * x;
    MatrixXd k = wk * x;
    MatrixXd v = wv * x;

    MatrixXd scores = scale * (q.transpose() * k);  // scores(i, j) = q_i . k_j
    MatrixXd attn = MatrixXd::Zero(len, len);
    for (Index i = 0; i < len; ++i) {
      auto row = scores.row(i).head(i + 1);
      double m = row.maxCoeff();
      Eigen::RowVectorXd e = (row.array() - m).exp();
      attn.row(i).head(i + 1) = e / e.sum();
    }
    MatrixXd attn_out = v * attn.transpose();

    if (cache) {
      LayerCache& lc = cache->layers[static_cast<std::size_t>(l)];
      lc.x_in = x;
      lc.q = q;
      lc.k = k;
      lc.v = v;
      lc.attn = attn;
      lc.attn_out = attn_out;
    }
    x = x + wo * attn_out;
  }

  if (cache) cache->x_final = x;
  return x;
}

VectorXd logits_at(const PolicyCheckpoint& model, const MatrixXd& x_final,
                   Index pos) {
  auto wout = param_segment(model, "wout");
  return wout * x_final.col(pos);
}

void check_scoring_args(const PolicyCheckpoint& model, const TokenSeq& prefix,
                        const TokenSeq& continuation) {
  if (prefix.empty()) throw ArgumentError("prefix must be non-empty");
  if (continuation.empty()) throw ArgumentError("continuation must be non-empty");
  if (continuation.back() != tok::kEos) {
    throw ArgumentError("continuation must be EOS-terminated");
  }
  if (static_cast<int>(prefix.size() + continuation.size()) >
      model.arch.context_window) {
    throw CapacityError("prefix + continuation exceeds context window");
  }
  check_tokens_in_vocab(model.arch, prefix);
  check_tokens_in_vocab(model.arch, continuation);
}

}  // namespace

void ArchConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("arch.vocab_size must be >= 2");
  if (embed_dim < 4) throw ConfigError("arch.embed_dim must be >= 4");
  if (n_layers < 1) throw ConfigError("arch.n_layers must be >= 1");
  if (context_window < 2) throw ConfigError("arch.context_window must be >= 2");
}

std::vector<ParamSegment> param_layout(const ArchConfig& arch) {
  std::vector<ParamSegment> segs;
  Index off = 0;
  auto add = [&](std::string name, Index rows, Index cols) {
    segs.push_back(ParamSegment{std::move(name), rows, cols, off});
    off += rows * cols;
  };
  add("wte", arch.vocab_size, arch.embed_dim);
  add("wpe", arch.context_window, arch.embed_dim);
  for (int l = 0; l < arch.n_layers; ++l) {
    std::string base = "layer" + std::to_string(l) + ".";
    add(base + "wq", arch.embed_dim, arch.embed_dim);
    add(base + "wk", arch.embed_dim, arch.embed_dim);
    add(base + "wv", arch.embed_dim, arch.embed_dim);
    add(base + "wo", arch.embed_dim, arch.embed_dim);
  }
  add("wout", arch.vocab_size, arch.embed_dim);
  return segs;
}

Eigen::Index param_count(const ArchConfig& arch) {
  Index total = 0;
  for (const auto& s : param_layout(arch)) total += s.size();
  return total;
}

namespace {
ParamSegment find_segment(const ArchConfig& arch, std::string_view name) {
  for (const auto& s : param_layout(arch)) {
    if (s.name == name) return s;
  }
  throw ArgumentError("unknown parameter segment: " + std::string(name));
}
}  // namespace

Eigen::Map<Eigen::MatrixXd> param_segment(PolicyCheckpoint& ckpt,
                                          std::string_view name) {
  ParamSegment s = find_segment(ckpt.arch, name);
  return {ckpt.params.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<const Eigen::MatrixXd> param_segment(const PolicyCheckpoint& ckpt,
                                                std::string_view name) {
  ParamSegment s = find_segment(ckpt.arch, name);
  return {ckpt.params.data() + s.offset, s.rows, s.cols};
}

std::uint64_t PolicyCheckpoint::param_hash() const {
  Hasher64 h;
  for (Index i = 0; i < params.size(); ++i) h.update_f64(params[i]);
  return h.digest();
}

PolicyCheckpoint init_checkpoint(const ArchConfig& arch, std::uint64_t seed,
                                 double init_std) {
  arch.validate();
  PolicyCheckpoint ckpt;
  ckpt.arch = arch;
  ckpt.params.resize(param_count(arch));
  SplitMix64 rng(seed);
  for (Index i = 0; i < ckpt.params.size(); ++i) {
    ckpt.params[i] = init_std * rng.next_gaussian();
  }
  return ckpt;
}

double log_prob(const PolicyCheckpoint& model, const TokenSeq& prefix,
                const TokenSeq& continuation) {
  check_scoring_args(model, prefix, continuation);

  TokenSeq tokens = prefix;
  tokens.insert(tokens.end(), continuation.begin(), continuation.end());
  MatrixXd x_final = forward(model, tokens, nullptr);

  const Index p = static_cast<Index>(prefix.size());
  const Index len = static_cast<Index>(tokens.size());
  double lp = 0.0;
  for (Index t = p - 1; t < len - 1; ++t) {
    VectorXd logits = logits_at(model, x_final, t);
    lp += logits[tokens[static_cast<std::size_t>(t + 1)]] - logsumexp(logits);
  }
  return lp;
}

Eigen::VectorXd grad_log_prob(const PolicyCheckpoint& model,
                              const TokenSeq& prefix,
                              const TokenSeq& continuation) {
  check_scoring_args(model, prefix, continuation);

  const ArchConfig& arch = model.arch;
  const Index d = arch.embed_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  TokenSeq tokens = prefix;
  tokens.insert(tokens.end(), continuation.begin(), continuation.end());
  const Index p = static_cast<Index>(prefix.size());
  const Index len = static_cast<Index>(tokens.size());

  ForwardCache cache;
  forward(model, tokens, &cache);

  VectorXd grad = VectorXd::Zero(param_count(arch));
  auto grad_seg = [&](const std::string& name) {
    ParamSegment s = find_segment(arch, name);
    return Eigen::Map<MatrixXd>(grad.data() + s.offset, s.rows, s.cols);
  };

  // d(log p) / d(logits_t) = onehot(next token) - softmax(logits_t) on the
  // scored positions, zero elsewhere.
  MatrixXd dlogits = MatrixXd::Zero(arch.vocab_size, len);
  for (Index t = p - 1; t < len - 1; ++t) {
    VectorXd logits = logits_at(model, cache.x_final, t);
    VectorXd sm = (logits.array() - logsumexp(logits)).exp();
    dlogits.col(t) = -sm;
    dlogits(tokens[static_cast<std::size_t>(t + 1)], t) += 1.0;
  }

  auto wout = param_segment(model, "wout");
  grad_seg("wout") += dlogits * cache.x_final.transpose();
  MatrixXd dx = wout.transpose() * dlogits;  // d x L

  for (int l = arch.n_layers - 1; l >= 0; --l) {
    const LayerCache& lc = cache.layers[static_cast<std::size_t>(l)];
    std::string base = "layer" + std::to_string(l) + ".";
    auto wq = param_segment(model, base + "wq");
    auto wk = param_segment(model, base + "wk");
    auto wv = param_segment(model, base + "wv");
    auto wo = param_segment(model, base + "wo");

    // x_out = x_in + wo * attn_out
    MatrixXd dattn_out = wo.transpose() * dx;
    grad_seg(base + "wo") += dx * lc.attn_out.transpose();

    // attn_out = v * attn^T
    MatrixXd dv = dattn_out * lc.attn;
    MatrixXd dattn = dattn_out.transpose() * lc.v;

    // Row-softmax backward; rows are causal so entries above the diagonal
    // are zero in attn and stay zero in dscores.
    MatrixXd dscores(len, len);
    for (Index i = 0; i < len; ++i) {
      double dot = lc.attn.row(i).dot(dattn.row(i));
      dscores.row(i) =
          (lc.attn.row(i).array() * (dattn.row(i).array() - dot)).matrix();
    }

    // scores = scale * q^T k
    MatrixXd dq = scale * (lc.k * dscores.transpose());
    MatrixXd dk = scale * (lc.q * dscores);

    grad_seg(base + "wq") += dq * lc.x_in.transpose();
    grad_seg(base + "wk") += dk * lc.x_in.transpose();
    grad_seg(base + "wv") += dv * lc.x_in.transpose();

    dx += wq.transpose() * dq;
    dx += wk.transpose() * dk;
    dx += wv.transpose() * dv;
  }

  auto dwte = grad_seg("wte");
  auto dwpe = grad_seg("wpe");
  for (Index i = 0; i < len; ++i) {
    dwte.row(tokens[static_cast<std::size_t>(i)]) += dx.col(i).transpose();
    dwpe.row(i) += dx.col(i).transpose();
  }
  return grad;
}

Eigen::VectorXd next_token_distribution(const PolicyCheckpoint& model,
                                        const TokenSeq& prefix) {
  if (prefix.empty()) throw ArgumentError("prefix must be non-empty");
  if (static_cast<int>(prefix.size()) > model.arch.context_window) {
    throw CapacityError("prefix exceeds context window");
  }
  check_tokens_in_vocab(model.arch, prefix);
  MatrixXd x_final = forward(model, prefix, nullptr);
  VectorXd logits = logits_at(model, x_final, static_cast<Index>(prefix.size()) - 1);
  VectorXd sm = (logits.array() - logsumexp(logits)).exp();
  return sm / sm.sum();
}

namespace {

Token pick_argmax(const VectorXd& values) {
  Token best = 0;
  double best_v = values[0];
  for (Index i = 1; i < values.size(); ++i) {
    if (values[i] > best_v) {  // strict: ties keep the lowest id
      best_v = values[i];
      best = static_cast<Token>(i);
    }
  }
  return best;
}

SampleResult decode_loop(const PolicyCheckpoint& model, const TokenSeq& prefix,
                         double temperature, int max_len, SplitMix64* rng) {
  if (prefix.empty()) throw ArgumentError("prefix must be non-empty");
  if (max_len < 1) throw ArgumentError("max_len must be >= 1");
  if (temperature < 0.0) throw ArgumentError("temperature must be >= 0");
  check_tokens_in_vocab(model.arch, prefix);

  // One slot is reserved for the forced EOS, so truncated outputs still fit
  // the window and stay scoreable.
  int headroom = model.arch.context_window - static_cast<int>(prefix.size()) - 1;
  if (headroom < 1) throw CapacityError("prefix leaves no room to decode");
  int budget = std::min(max_len, headroom);

  TokenSeq tokens = prefix;
  SampleResult result;
  while (static_cast<int>(result.tokens.size()) < budget) {
    MatrixXd x_final = forward(model, tokens, nullptr);
    VectorXd logits =
        logits_at(model, x_final, static_cast<Index>(tokens.size()) - 1);

    Token next;
    if (rng == nullptr || temperature == 0.0) {
      next = pick_argmax(logits);
    } else {
      VectorXd scaled = logits / temperature;
      VectorXd probs = (scaled.array() - logsumexp(scaled)).exp();
      probs /= probs.sum();
      double u = rng->next_double();
      double cdf = 0.0;
      next = static_cast<Token>(probs.size() - 1);
      for (Index i = 0; i < probs.size(); ++i) {
        cdf += probs[i];
        if (u < cdf) {
          next = static_cast<Token>(i);
          break;
        }
      }
    }

    result.tokens.push_back(next);
    tokens.push_back(next);
    if (next == tok::kEos) return result;
  }
  result.tokens.push_back(tok::kEos);
  result.truncated = true;
  return result;
}

}  // namespace

SampleResult sample(const PolicyCheckpoint& model, const TokenSeq& prefix,
                    double temperature, int max_len, std::uint64_t seed) {
  SplitMix64 rng(seed);
  return decode_loop(model, prefix, temperature, max_len,
                     temperature == 0.0 ? nullptr : &rng);
}

SampleResult greedy_decode(const PolicyCheckpoint& model, const TokenSeq& prefix,
                           int max_len) {
  return decode_loop(model, prefix, 0.0, max_len, nullptr);
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

double get_f64(std::istream& in) {
  std::uint64_t bits = get_u64(in);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

}  // namespace

void save_checkpoint(const PolicyCheckpoint& ckpt,
                     const std::filesystem::path& path) {
  if (!path.parent_path().empty()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw NotFoundError("cannot open for writing: " + path.string());

  put_u32(out, kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.arch.vocab_size));
  put_u32(out, static_cast<std::uint32_t>(ckpt.arch.embed_dim));
  put_u32(out, static_cast<std::uint32_t>(ckpt.arch.n_layers));
  put_u32(out, static_cast<std::uint32_t>(ckpt.arch.context_window));
  put_u32(out, static_cast<std::uint32_t>(ckpt.iteration));
  put_u64(out, ckpt.lineage);
  put_u64(out, static_cast<std::uint64_t>(ckpt.params.size()));
  for (Eigen::Index i = 0; i < ckpt.params.size(); ++i) {
    put_f64(out, ckpt.params[i]);
  }
  put_u64(out, ckpt.param_hash());
  if (!out) throw IntegrityError("write failed: " + path.string());
}

PolicyCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("checkpoint not found: " + path.string());

  if (get_u32(in) != kCheckpointMagic) {
    throw IntegrityError("bad checkpoint magic: " + path.string());
  }
  if (get_u32(in) != kCheckpointVersion) {
    throw IntegrityError("unsupported checkpoint version: " + path.string());
  }
  PolicyCheckpoint ckpt;
  ckpt.arch.vocab_size = static_cast<int>(get_u32(in));
  ckpt.arch.embed_dim = static_cast<int>(get_u32(in));
  ckpt.arch.n_layers = static_cast<int>(get_u32(in));
  ckpt.arch.context_window = static_cast<int>(get_u32(in));
  ckpt.iteration = static_cast<int>(get_u32(in));
  ckpt.lineage = get_u64(in);
  std::uint64_t n = get_u64(in);
  if (!in || n != static_cast<std::uint64_t>(param_count(ckpt.arch))) {
    throw IntegrityError("checkpoint param count does not match layout: " +
                         path.string());
  }
  ckpt.params.resize(static_cast<Eigen::Index>(n));
  for (std::uint64_t i = 0; i < n; ++i) {
    ckpt.params[static_cast<Eigen::Index>(i)] = get_f64(in);
  }
  std::uint64_t stored = get_u64(in);
  if (!in) throw IntegrityError("truncated checkpoint: " + path.string());
  if (stored != ckpt.param_hash()) {
    throw IntegrityError("checkpoint hash mismatch: " + path.string());
  }
  return ckpt;
}

}  // namespace iterdpo
