#include "iterdpo/dpo.hpp"

#include <cmath>
#include <numeric>

#include "iterdpo/errors.hpp"
#include "iterdpo/hash.hpp"
#include "iterdpo/rng.hpp"

namespace iterdpo {

namespace {

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// sigmoid(-x), stable on both tails.
double sigmoid_neg(double x) {
  if (x > 0.0) {
    double e = std::exp(-x);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(x));
}

void check_compatible(const PolicyCheckpoint& policy,
                      const PolicyCheckpoint& reference) {
  if (!(policy.arch == reference.arch)) {
    throw CompatibilityError("policy and reference architectures differ");
  }
}

double margin_of(const PolicyCheckpoint& policy,
                 const PolicyCheckpoint& reference, const DpoBatchItem& item) {
  double chosen_ratio = log_prob(policy, item.prompt, item.chosen) -
                        log_prob(reference, item.prompt, item.chosen);
  double rejected_ratio = log_prob(policy, item.prompt, item.rejected) -
                          log_prob(reference, item.prompt, item.rejected);
  return chosen_ratio - rejected_ratio;
}

}  // namespace

void DpoConfig::validate() const {
  if (!(beta > 0.0)) throw ConfigError("dpo.beta must be > 0");
  if (!(learning_rate >= 0.0)) throw ConfigError("dpo.learning_rate must be >= 0");
  if (epochs < 1) throw ConfigError("dpo.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("dpo.batch_size must be >= 1");
  if (grad_clip && !(*grad_clip > 0.0)) {
    throw ConfigError("dpo.grad_clip must be > 0 when set");
  }
}

double dpo_loss_from_ratios(double chosen_ratio, double rejected_ratio,
                            double beta) {
  return softplus(-beta * (chosen_ratio - rejected_ratio));
}

double dpo_loss(const PolicyCheckpoint& policy, const PolicyCheckpoint& reference,
                const DpoBatchItem& item, double beta) {
  check_compatible(policy, reference);
  return softplus(-beta * margin_of(policy, reference, item));
}

Eigen::VectorXd dpo_grad(const PolicyCheckpoint& policy,
                         const PolicyCheckpoint& reference,
                         const DpoBatchItem& item, double beta) {
  check_compatible(policy, reference);
  double margin = margin_of(policy, reference, item);
  double coeff = -beta * sigmoid_neg(beta * margin);
  Eigen::VectorXd g = grad_log_prob(policy, item.prompt, item.chosen);
  g -= grad_log_prob(policy, item.prompt, item.rejected);
  return coeff * g;
}

PolicyCheckpoint train_iteration(const PolicyCheckpoint& init,
                                 const PolicyCheckpoint& reference,
                                 const std::vector<DpoBatchItem>& dataset,
                                 const DpoConfig& config,
                                 std::vector<TrainStepLog>* log) {
  config.validate();
  check_compatible(init, reference);
  if (dataset.empty()) throw ArgumentError("preference dataset is empty");
  if (init.iteration != reference.iteration) {
    throw ArgumentError("init and reference must be from the same iteration");
  }

  PolicyCheckpoint policy = init;
  const int n = static_cast<int>(dataset.size());
  const int next_iteration = init.iteration + 1;

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    SplitMix64 rng(derive_seed(config.shuffle_seed, "epoch",
                               static_cast<std::uint64_t>(epoch)));
    shuffle(order, rng);

    int step = 0;
    for (int start = 0; start < n; start += config.batch_size, ++step) {
      int end = std::min(n, start + config.batch_size);
      Eigen::VectorXd batch_grad = Eigen::VectorXd::Zero(policy.params.size());
      double batch_loss = 0.0;
      for (int i = start; i < end; ++i) {
        const DpoBatchItem& item =
            dataset[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        batch_loss += dpo_loss(policy, reference, item, config.beta);
        batch_grad += dpo_grad(policy, reference, item, config.beta);
      }
      double inv = 1.0 / static_cast<double>(end - start);
      batch_loss *= inv;
      batch_grad *= inv;

      double norm = batch_grad.norm();
      if (config.grad_clip && norm > *config.grad_clip) {
        batch_grad *= *config.grad_clip / norm;
      }
      policy.params -= config.learning_rate * batch_grad;

      if (log) {
        log->push_back(TrainStepLog{next_iteration, epoch, step, batch_loss, norm});
      }
    }
  }

  policy.iteration = next_iteration;
  policy.lineage = init.param_hash();
  return policy;
}

}  // namespace iterdpo
