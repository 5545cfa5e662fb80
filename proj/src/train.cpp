#include "semifreddo/train.hpp"

#include <numeric>

namespace semifreddo {

namespace {

int argmax_class(const Tensor& logits, int n) {
  int best = 0;
  for (int k = 1; k < logits.c; ++k)
    if (logits.at(n, k, 0, 0) > logits.at(n, best, 0, 0)) best = k;
  return best;
}

}  // namespace

EpochMetrics train_epoch(const Program& prog, ModelState& state,
                         const FreezePlan& plan, const Dataset& data,
                         const OptimizerConfig& cfg,
                         const RejuvenationPolicy& policy, MomentumBuffers& mom,
                         uint32_t epoch_seed) {
  require(data.count() > 0, "empty dataset");
  bool frozen_bn_eval = plan.scheme.kind == SchemeKind::CorePartition;

  std::vector<int> order(data.count());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(epoch_seed);
  shuffle_rng.shuffle(order.begin(), order.end());

  EpochMetrics m;
  long long correct = 0;
  double loss_sum = 0.0;
  for (int start = 0; start < data.count(); start += cfg.batch_size) {
    int bs = std::min(cfg.batch_size, data.count() - start);
    std::vector<int> idx(order.begin() + start, order.begin() + start + bs);
    Dataset batch = data.slice(idx);

    ForwardResult fwd = forward_pass(prog, state, batch.images, Mode::Train,
                                     {}, frozen_bn_eval);
    const Tensor& logits = fwd.head();
    Tensor dlogits;
    float loss = nn::softmax_cross_entropy(logits, batch.labels, dlogits);
    loss_sum += (double)loss * bs;
    for (int n = 0; n < bs; ++n)
      correct += argmax_class(logits, n) == batch.labels[n] ? 1 : 0;

    GradientSet grads = backward_pass(prog, state, fwd, dlogits);
    mask_gradients(grads, plan);
    sgd_step_masked(prog, state, grads, plan.masks, cfg, mom);
  }
  m.loss = loss_sum / data.count();
  m.accuracy = (double)correct / data.count();

  Rng rej_rng(epoch_seed ^ 0x9e3779b9u);
  m.rejuvenation = rejuvenate(prog, state, plan, policy, rej_rng, &mom);
  return m;
}

double evaluate(const Program& prog, ModelState& state, const Dataset& data,
                int batch_size) {
  require(data.count() > 0, "empty dataset");
  long long correct = 0;
  std::vector<int> idx;
  for (int start = 0; start < data.count(); start += batch_size) {
    int bs = std::min(batch_size, data.count() - start);
    idx.resize(bs);
    std::iota(idx.begin(), idx.end(), start);
    Dataset batch = data.slice(idx);
    ForwardResult fwd = forward_pass(prog, state, batch.images, Mode::Eval);
    const Tensor& logits = fwd.head();
    for (int n = 0; n < bs; ++n)
      correct += argmax_class(logits, n) == batch.labels[n] ? 1 : 0;
  }
  return (double)correct / data.count();
}

}  // namespace semifreddo
