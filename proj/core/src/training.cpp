#include "pflow/training.hpp"

#include <cstdio>

#include "pflow/parallel.hpp"
#include "pflow/rng.hpp"

namespace pflow {
namespace {

TrainSampleT<float> make_sample(const FrameSequence& seq, std::size_t t) {
    TrainSampleT<float> s;
    s.x0 = seq.frames[t].pos;
    s.v0 = seq.frames[t].vel;
    s.x1_gt = seq.frames[t + 1].pos;
    s.x2_gt = seq.frames[t + 2].pos;
    s.solid_pos = seq.solid_pos;
    s.solid_normal = seq.solid_normal;
    return s;
}

}  // namespace

TrainResult train(const std::vector<FrameSequence>& dataset, const SimConfig& sim,
                  const ModelConfig& model_cfg, const TrainConfig& cfg) {
    PFLOW_CHECK(!dataset.empty(), "train: dataset is empty");
    // Flatten the (scene, t) triple space.
    std::vector<std::pair<std::uint32_t, std::uint32_t>> triples;
    for (std::uint32_t s = 0; s < dataset.size(); ++s) {
        PFLOW_CHECK(dataset[s].frame_count() >= 3,
                    "train: every sequence needs at least 3 frames");
        for (std::uint32_t t = 0; t + 2 < dataset[s].frame_count(); ++t)
            triples.emplace_back(s, t);
    }

    Rng rng(cfg.seed);
    TrainResult res;
    res.params = ModelParams::init(model_cfg, rng);
    res.opt = AdamState::zeros(model_cfg);

    const StepPhysicsT<float> phys = step_physics<float>(sim);
    LossConfigT<float> lc;
    lc.gamma = static_cast<float>(cfg.gamma);
    lc.neighbor_c = static_cast<float>(cfg.neighbor_c);
    lc.epsilon = static_cast<float>(cfg.loss_epsilon);

    const int b = cfg.batch_size;
    std::vector<TwoStepResultT<float>> batch(b);

    for (long iter = 0; iter < cfg.total_iters; ++iter) {
        // Draw the batch up front so the sample sequence is independent of
        // evaluation order.
        std::vector<std::size_t> picks(b);
        for (int k = 0; k < b; ++k) picks[k] = rng.uniform_index(triples.size());

        parallel_for(static_cast<std::size_t>(b), [&](std::size_t k) {
            const auto [si, ti] = triples[picks[k]];
            const auto sample = make_sample(dataset[si], ti);
            batch[k] = two_step_loss(res.params, phys, sample, lc, /*want_grads=*/true);
        });

        // Mean over the batch, reduced in index order.
        double loss = 0;
        ModelParamsT<float> grads = std::move(batch[0].grads);
        loss += batch[0].loss;
        std::vector<std::span<float>> dst;
        visit_tensors(grads, [&](TensorRef<float> t) { dst.push_back(t.data); });
        for (int k = 1; k < b; ++k) {
            loss += batch[k].loss;
            std::size_t ti = 0;
            visit_tensors(batch[k].grads, [&](TensorRef<float> t) {
                for (std::size_t i = 0; i < t.data.size(); ++i) dst[ti][i] += t.data[i];
                ++ti;
            });
        }
        const float inv_b = 1.f / static_cast<float>(b);
        for (auto& span : dst)
            for (auto& g : span) g *= inv_b;
        loss /= b;

        const double lr = lr_at(cfg, iter);
        if (iter % cfg.log_every == 0) res.curve.push_back({iter, loss, lr});
        adam_step(res.params, grads, res.opt, static_cast<float>(lr));
    }
    return res;
}

std::string loss_curve_csv(const std::vector<LossRow>& rows) {
    std::string out = "iter,loss,lr\n";
    char buf[96];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%ld,%.9g,%.9g\n", r.iter, r.loss, r.lr);
        out += buf;
    }
    return out;
}

}  // namespace pflow
