// Simulate a censored dataset, fit the sampler, and score test predictions
// against the complete-data and limit-imputation baselines.

#include "censreg/datagen.hpp"
#include "censreg/evaluate.hpp"
#include "censreg/gibbs.hpp"
#include "censreg/predict.hpp"

#include <cstdio>

using namespace censreg;

int main() {
  GenSpec spec;
  spec.n = 300;
  spec.n_test = 200;
  spec.p = 6;
  spec.block_sizes = {3, 3};
  spec.block_rhos = {0.8, 0.8};
  spec.sigma2 = 1.0;
  spec.target_censor_rate = 0.4;
  spec.seed = 7;
  const GeneratedData data = generate(spec);
  std::printf("censored fraction %.3f, R^2 %.3f\n", data.train_censor_rate, data.r_squared);

  RunConfig cfg;
  cfg.n_iter = 3000;
  cfg.burn_in = 500;
  cfg.seed = 11;

  for (auto method : {MethodLabel::complete, MethodLabel::bayesian, MethodLabel::naive}) {
    const CensoredDataset train =
        method == MethodLabel::complete ? data.complete_train() : prepare_for_method(data.train, method);
    const CensoredDataset test =
        method == MethodLabel::complete ? data.complete_test() : prepare_for_method(data.test, method);
    const DrawStore store = run_chain(train, PriorHyper::defaults(*train.y, train.p()), cfg);
    const auto preds = predict_batch(store, test, cfg.seed);
    const auto score = log_predictive_score(preds, *test.y, method);
    std::printf("%-10s total log predictive score %.2f\n", to_string(method), score.total);
  }
  return 0;
}
