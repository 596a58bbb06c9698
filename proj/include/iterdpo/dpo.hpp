#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "iterdpo/policy.hpp"
#include "iterdpo/tokens.hpp"

namespace iterdpo {

struct DpoConfig {
  double beta = 0.1;
  double learning_rate = 0.05;
  int epochs = 1;
  int batch_size = 16;
  std::uint64_t shuffle_seed = 0;
  std::optional<double> grad_clip;  // global L2 norm cap on the batch gradient

  void validate() const;
};

struct DpoBatchItem {
  TokenSeq prompt;    // conditioning only, never scored
  TokenSeq chosen;    // EOS-terminated
  TokenSeq rejected;  // EOS-terminated, != chosen
};

// -log sigmoid(beta * margin), computed as softplus(-beta * margin) so large
// margins of either sign stay finite.
double dpo_loss_from_ratios(double chosen_ratio, double rejected_ratio,
                            double beta);

// Margin = (log pi(y_w) - log ref(y_w)) - (log pi(y_l) - log ref(y_l)),
// prompt-conditioned, response tokens only.
double dpo_loss(const PolicyCheckpoint& policy, const PolicyCheckpoint& reference,
                const DpoBatchItem& item, double beta);

// Exact gradient with respect to the policy parameters; the reference is
// frozen and contributes only through the margin value:
//   -beta * sigmoid(-beta * margin) * (grad log pi(y_w) - grad log pi(y_l))
Eigen::VectorXd dpo_grad(const PolicyCheckpoint& policy,
                         const PolicyCheckpoint& reference,
                         const DpoBatchItem& item, double beta);

struct TrainStepLog {
  int iteration = 0;
  int epoch = 0;
  int step = 0;
  double mean_loss = 0.0;
  double grad_norm = 0.0;
};

// Plain SGD over shuffled mini-batches. Per-batch gradients are averaged in
// batch-index order so runs are bit-reproducible. Returns a new checkpoint
// with iteration = init.iteration + 1 and lineage = init.param_hash().
PolicyCheckpoint train_iteration(const PolicyCheckpoint& init,
                                 const PolicyCheckpoint& reference,
                                 const std::vector<DpoBatchItem>& dataset,
                                 const DpoConfig& config,
                                 std::vector<TrainStepLog>* log = nullptr);

}  // namespace iterdpo
