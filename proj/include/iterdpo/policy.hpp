#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "iterdpo/tokens.hpp"

namespace iterdpo {

// Stack of single-head causal self-attention layers over learned token and
// position embeddings, residual connections, tied nothing. Parameters are
// 64-bit floats so finite-difference checks are clean.
struct ArchConfig {
  int vocab_size = 64;
  int embed_dim = 32;
  int n_layers = 2;
  int context_window = 256;

  void validate() const;
  bool operator==(const ArchConfig&) const = default;
};

// Named segment of the flat parameter vector. Matrices are stored
// column-major inside their segment; segment order defines the
// serialization order.
struct ParamSegment {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::Index offset = 0;

  Eigen::Index size() const { return rows * cols; }
};

// Layout: wte [vocab x d], wpe [window x d], per layer wq/wk/wv/wo [d x d],
// wout [vocab x d].
std::vector<ParamSegment> param_layout(const ArchConfig& arch);
Eigen::Index param_count(const ArchConfig& arch);

struct PolicyCheckpoint {
  ArchConfig arch;
  Eigen::VectorXd params;
  int iteration = 0;
  std::uint64_t lineage = 0;  // param_hash of the parent checkpoint, 0 for none

  std::uint64_t param_hash() const;
};

Eigen::Map<Eigen::MatrixXd> param_segment(PolicyCheckpoint& ckpt,
                                          std::string_view name);
Eigen::Map<const Eigen::MatrixXd> param_segment(const PolicyCheckpoint& ckpt,
                                                std::string_view name);

// Gaussian init, std init_std, drawn from a SplitMix64 stream.
PolicyCheckpoint init_checkpoint(const ArchConfig& arch, std::uint64_t seed,
                                 double init_std = 0.08);

// Sum over continuation positions of log p(token | everything before it).
// The prompt tokens are conditioning only and are never scored. The
// continuation must be non-empty and EOS-terminated; the prefix must be
// non-empty (there is no unconditional first-token distribution).
double log_prob(const PolicyCheckpoint& model, const TokenSeq& prefix,
                const TokenSeq& continuation);

// Exact analytic gradient of log_prob with respect to every parameter.
Eigen::VectorXd grad_log_prob(const PolicyCheckpoint& model,
                              const TokenSeq& prefix,
                              const TokenSeq& continuation);

// Softmax next-token distribution after the given prefix. Sums to one; the
// replay oracles in the tests walk its cumulative sums.
Eigen::VectorXd next_token_distribution(const PolicyCheckpoint& model,
                                        const TokenSeq& prefix);

struct SampleResult {
  TokenSeq tokens;  // EOS-terminated
  bool truncated = false;  // EOS was forced after the length budget ran out
};

// Autoregressive draw from softmax(logits / temperature) until EOS or the
// budget min(max_len, window headroom) runs out; a forced EOS is appended
// (and flagged) when the budget ends first. temperature == 0 is argmax.
// Each step consumes exactly one uniform draw from SplitMix64(seed).
SampleResult sample(const PolicyCheckpoint& model, const TokenSeq& prefix,
                    double temperature, int max_len, std::uint64_t seed);

// Argmax decode, ties broken toward the lowest token id.
SampleResult greedy_decode(const PolicyCheckpoint& model, const TokenSeq& prefix,
                           int max_len);

// Versioned binary round trip; load verifies the stored param hash.
void save_checkpoint(const PolicyCheckpoint& ckpt,
                     const std::filesystem::path& path);
PolicyCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace iterdpo
