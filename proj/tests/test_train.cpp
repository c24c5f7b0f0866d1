#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "residual_lab/train.hpp"

using namespace rlab;

namespace {

CopyTaskConfig small_task() {
    CopyTaskConfig c;
    c.vocab = 5;
    c.seq_len = 4;
    c.batch = 3;
    c.width = 8;
    c.depth = 3;
    c.train_steps = 5;
    c.seed = 11;
    return c;
}

} // namespace

TEST_SUITE("train") {

TEST_CASE("copy batches") {
    CopyTaskConfig c;
    c.vocab = 2;
    c.seq_len = 2;
    c.batch = 1;
    Rng rng(1);
    const CopyBatch b = make_copy_batch(c, rng);
    CHECK(b.tokens == b.targets);
    CHECK(b.tokens[0].size() == 2);

    Rng r1(2), r2(2);
    CopyTaskConfig d;
    CHECK(make_copy_batch(d, r1).tokens == make_copy_batch(d, r2).tokens);

    CopyTaskConfig bad;
    bad.vocab = 1;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("symbol frequencies are uniform") {
    CopyTaskConfig c;
    c.vocab = 16;
    c.seq_len = 10;
    c.batch = 1000; // 10^4 draws per batch
    Rng rng(3);
    std::vector<double> counts(16, 0.0);
    for (int rep = 0; rep < 10; ++rep) {
        for (const auto& seq : make_copy_batch(c, rng).tokens)
            for (auto t : seq) counts[t] += 1.0;
    }
    for (double n : counts) {
        CHECK(n / 1e5 > (1.0 / 16) * 0.9);
        CHECK(n / 1e5 < (1.0 / 16) * 1.1);
    }
}

TEST_CASE("initial loss is close to log V") {
    CopyTaskConfig c;
    c.train_steps = 1;
    for (Variant v : {Variant::PostLn, Variant::PreLn, Variant::ResiDual}) {
        CopyModel m = CopyModel::create(c, v);
        Rng rng(4);
        const double loss = m.loss(make_copy_batch(c, rng));
        CHECK(std::abs(loss / std::log(16.0) - 1.0) < 0.05);
    }
}

TEST_CASE("a step at zero learning rate changes nothing") {
    const CopyTaskConfig c = small_task();
    CopyModel m = CopyModel::create(c, Variant::ResiDual);
    auto states = make_optimizer(m, c);
    std::vector<Tensor> before;
    for (auto* p : m.parameters()) before.push_back(*p);
    Rng rng(5);
    train_step(m, states, make_copy_batch(c, rng), 0.0);
    const auto after = m.parameters();
    for (std::size_t i = 0; i < before.size(); ++i) {
        auto a = before[i].data();
        auto b = after[i]->data();
        CHECK(std::equal(a.begin(), a.end(), b.begin()));
    }
}

TEST_CASE("model gradients pass a finite-difference spot check") {
    const CopyTaskConfig c = small_task();
    for (Variant v : {Variant::PostLn, Variant::PreLn, Variant::ResiDual}) {
        CopyModel m = CopyModel::create(c, v);
        auto states = make_optimizer(m, c);
        Rng rng(6);
        // Move away from initialization first.
        for (int s = 0; s < 3; ++s) train_step(m, states, make_copy_batch(c, rng), 1e-2);
        const CopyBatch batch = make_copy_batch(c, rng);
        m.zero_grad();
        m.loss_and_grad(batch);

        auto params = m.parameters();
        auto grads = m.gradients();
        Rng pick(7);
        for (int i = 0; i < 10; ++i) {
            const std::size_t t = pick.uniform_index(params.size());
            const std::size_t j = pick.uniform_index(params[t]->size());
            double& w = (*params[t])[j];
            const double saved = w, h = 1e-5;
            w = saved + h;
            const double up = m.loss(batch);
            w = saved - h;
            const double down = m.loss(batch);
            w = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = (*grads[t])[j];
            CAPTURE(to_string(v));
            CAPTURE(t);
            CHECK(std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-6) < 1e-4);
        }
    }
}

TEST_CASE("training is deterministic and records every step") {
    const CopyTaskConfig c = small_task();
    const auto a = train(c, Variant::PreLn, Schedule::InvSqrtWarmup);
    const auto b = train(c, Variant::PreLn, Schedule::InvSqrtWarmup);
    REQUIRE(a.size() == 5);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].step == static_cast<long>(i));
        CHECK(a[i].loss == b[i].loss);
        CHECK(a[i].grad_norm == b[i].grad_norm);
    }
    CHECK(a[0].lr == doctest::Approx(c.base_lr / 200.0));
}

TEST_CASE("divergence flag is sticky") {
    CopyTaskConfig c = small_task();
    c.base_lr = 1e6;
    c.train_steps = 150;
    const auto recs = train(c, Variant::PostLn, Schedule::InvSqrtNoWarmup);
    bool seen = false;
    for (const auto& r : recs) {
        if (seen) CHECK(r.diverged);
        seen = seen || r.diverged;
    }
}

TEST_CASE("final loss window") {
    std::vector<TrainRecord> recs;
    for (long i = 0; i < 100; ++i) recs.push_back({i, static_cast<double>(i), 0.0, 0.0, false});
    CHECK(final_loss(recs) == doctest::Approx(74.5));
    CHECK(final_loss(recs, 10) == doctest::Approx(94.5));
    CHECK(std::isnan(final_loss({})));
}

}
