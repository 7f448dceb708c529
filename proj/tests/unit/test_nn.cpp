#include "icumort/errors.hpp"
#include "icumort/metrics.hpp"
#include "icumort/nn.hpp"

#include <doctest.h>

#include <cmath>

using namespace icumort;
using namespace icumort::nn;

namespace {

NetConfig tiny_net_config(std::size_t in_a = 6, std::size_t in_b = 5, bool with_bn = true,
                          double dropout = 0.0) {
    NetConfig cfg;
    EncoderSpec a;
    a.name = "a";
    a.input_width = in_a;
    a.layers.push_back({in_a, 4, Activation::Relu, with_bn, dropout});
    a.layers.push_back({4, 3, Activation::Sigmoid, with_bn, dropout});
    EncoderSpec b;
    b.name = "b";
    b.input_width = in_b;
    b.layers.push_back({in_b, 3, Activation::Sigmoid, with_bn, dropout});
    cfg.blocks = {a, b};
    cfg.head_widths = {5, 3};
    cfg.dropout = dropout;
    return cfg;
}

Batch random_batch(const NetConfig& cfg, std::size_t n, Rng& rng, bool labels = true) {
    Batch batch;
    for (const auto& spec : cfg.blocks) {
        Matrix m(n, spec.input_width);
        for (double& v : m.a) v = rng.gauss();
        batch.block_inputs.push_back(std::move(m));
    }
    if (labels) {
        for (std::size_t i = 0; i < n; ++i) batch.labels.push_back(i % 2 ? 1.0 : 0.0);
    }
    return batch;
}

// central finite differences of the full regularized loss
double fd_check_max_rel_err(FusedNet& net, const Batch& batch, const ClassWeights& weights,
                            double wd, Mode mode) {
    Gradients grads;
    loss_and_grad(net, batch, weights, wd, mode, nullptr, grads);
    std::vector<double> theta = flatten_params(net);
    const double h = 1e-6;
    double max_rel = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        std::vector<double> t = theta;
        t[i] = theta[i] + h;
        load_params(net, t);
        Gradients dummy;
        const double up = loss_and_grad(net, batch, weights, wd, mode, nullptr, dummy);
        t[i] = theta[i] - h;
        load_params(net, t);
        const double down = loss_and_grad(net, batch, weights, wd, mode, nullptr, dummy);
        const double fd = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(fd), std::abs(grads.flat[i]), 1e-4});
        max_rel = std::max(max_rel, std::abs(fd - grads.flat[i]) / denom);
    }
    load_params(net, theta);
    return max_rel;
}

} // namespace

TEST_CASE("xavier initialization") {
    SUBCASE("fans 4 and 2 bound entries by 1") {
        const Matrix w = xavier_init(4, 2, 9);
        for (double v : w.a) CHECK(std::abs(v) < 1.0);
    }
    SUBCASE("same seed gives an identical matrix") {
        const Matrix a = xavier_init(10, 7, 123);
        const Matrix b = xavier_init(10, 7, 123);
        CHECK(a.a == b.a);
    }
    SUBCASE("sample variance over a million draws is within 2% of L^2/3") {
        const std::size_t fan_in = 1000, fan_out = 1000;
        const Matrix w = xavier_init(fan_in, fan_out, 5);
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        double sumsq = 0.0;
        for (double v : w.a) sumsq += v * v;
        const double var = sumsq / static_cast<double>(w.a.size());
        CHECK(std::abs(var - limit * limit / 3.0) < 0.02 * limit * limit / 3.0);
    }
    SUBCASE("zero fans are rejected") {
        CHECK_THROWS_AS(xavier_init(0, 3, 1), usage_error);
    }
}

TEST_CASE("forward pass") {
    const NetConfig cfg = tiny_net_config();
    SUBCASE("all-zero parameters give probability one half") {
        FusedNet net = build_net(cfg, 3);
        std::vector<double> zeros(flatten_params(net).size(), 0.0);
        load_params(net, zeros);
        Rng rng(1);
        Batch batch = random_batch(cfg, 4, rng);
        for (double p : predict(net, batch)) CHECK(p == doctest::Approx(0.5));
    }
    SUBCASE("eval mode is deterministic") {
        FusedNet net = build_net(tiny_net_config(6, 5, true, 0.4), 3);
        Rng rng(1);
        Batch batch = random_batch(cfg, 8, rng);
        CHECK(predict(net, batch) == predict(net, batch));
    }
    SUBCASE("scores are probabilities and order-preserving") {
        FusedNet net = build_net(cfg, 3);
        Rng rng(2);
        Batch batch = random_batch(cfg, 10, rng);
        const auto p = predict(net, batch);
        for (double v : p) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
        // permuting rows permutes outputs identically
        Batch reversed;
        for (const auto& m : batch.block_inputs) {
            Matrix r(m.rows, m.cols);
            for (std::size_t i = 0; i < m.rows; ++i) {
                std::copy(m.row(m.rows - 1 - i), m.row(m.rows - 1 - i) + m.cols, r.row(i));
            }
            reversed.block_inputs.push_back(std::move(r));
        }
        const auto q = predict(net, reversed);
        for (std::size_t i = 0; i < p.size(); ++i) {
            CHECK(q[i] == doctest::Approx(p[p.size() - 1 - i]));
        }
    }
    SUBCASE("width mismatches name the offending block") {
        FusedNet net = build_net(cfg, 3);
        Rng rng(4);
        Batch batch = random_batch(cfg, 2, rng);
        batch.block_inputs[1] = Matrix(2, 99);
        try {
            predict(net, batch);
            FAIL("expected data_error");
        } catch (const data_error& e) {
            CHECK(std::string(e.what()).find("'b'") != std::string::npos);
        }
    }
    SUBCASE("element-wise addition pooling rejects unequal block widths") {
        NetConfig bad = tiny_net_config();
        bad.pooling = Pooling::Add;
        bad.blocks[0].layers.back().out = 3;
        bad.blocks[1].layers.back().out = 4; // mismatch
        CHECK_THROWS_AS(build_net(bad, 1), data_error);
    }
}

TEST_CASE("loss and gradients") {
    SUBCASE("confident correct predictions drive the data term to zero") {
        // single linear block, no bn: craft weights for near-perfect output
        NetConfig cfg;
        EncoderSpec a;
        a.name = "a";
        a.input_width = 1;
        a.layers.push_back({1, 1, Activation::Identity, false, 0.0});
        cfg.blocks = {a};
        cfg.head_widths = {};
        FusedNet net = build_net(cfg, 1);
        std::vector<double> params = flatten_params(net);
        // block: w=30, b=0; out: w=1, b=0 -> logit = 30 x
        params.assign(params.size(), 0.0);
        params[0] = 30.0;
        params[2] = 1.0;
        load_params(net, params);

        Batch batch;
        Matrix m(2, 1);
        m.at(0, 0) = 1.0;
        m.at(1, 0) = -1.0;
        batch.block_inputs.push_back(m);
        batch.labels = {1.0, 0.0};
        Gradients g;
        const double loss =
            loss_and_grad(net, batch, ClassWeights{1.0, 1.0}, 0.0, Mode::Eval, nullptr, g);
        CHECK(loss < 1e-10);
    }
    SUBCASE("balanced class weights follow inverse frequency") {
        std::vector<double> labels(100, 0.0);
        for (int i = 0; i < 10; ++i) labels[i] = 1.0;
        const auto w = ClassWeights::balanced(labels);
        CHECK(w.w_pos / w.w_neg == doctest::Approx(9.0));
    }
    SUBCASE("analytic gradients match central differences (bn, mixed activations)") {
        Rng rng(21);
        for (int trial = 0; trial < 6; ++trial) {
            NetConfig cfg = tiny_net_config(5, 4, trial % 2 == 0, 0.0);
            if (trial == 3) cfg.pooling = Pooling::Add;
            if (cfg.pooling == Pooling::Add) {
                cfg.blocks[0].layers.back().out = 3;
                cfg.blocks[1].layers.back().out = 3;
            }
            FusedNet net = build_net(cfg, 100 + trial);
            Batch batch = random_batch(cfg, 6, rng);
            const Mode mode = trial % 2 ? Mode::Eval : Mode::Train;
            const double err =
                fd_check_max_rel_err(net, batch, ClassWeights{0.7, 2.1}, 0.01, mode);
            CHECK(err <= 1e-4);
        }
    }
}

TEST_CASE("weighted random sampler") {
    SUBCASE("rare class gets proportionally larger weight") {
        std::vector<double> labels(100, 0.0);
        for (int i = 0; i < 10; ++i) labels[i] = 1.0;
        const auto w = make_sampler(labels);
        CHECK(w[0] / w[99] == doctest::Approx(9.0));
    }
    SUBCASE("balanced data gets uniform weights") {
        std::vector<double> labels = {0, 1, 0, 1};
        const auto w = make_sampler(labels);
        CHECK(w[0] == w[1]);
    }
    SUBCASE("a single-class set is an error") {
        CHECK_THROWS_AS(make_sampler(std::vector<double>(5, 1.0)), data_error);
    }
    SUBCASE("empirical positive fraction over 1e5 draws is one half") {
        std::vector<double> labels(1000, 0.0);
        for (int i = 0; i < 100; ++i) labels[i] = 1.0;
        const auto w = make_sampler(labels);
        std::vector<double> cumulative(w.size());
        double acc = 0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            acc += w[i];
            cumulative[i] = acc;
        }
        Rng rng(8);
        std::size_t pos = 0;
        const int draws = 100000;
        for (int k = 0; k < draws; ++k) {
            const double u = rng.uniform() * acc;
            const std::size_t idx = static_cast<std::size_t>(
                std::lower_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
            if (labels[std::min(idx, labels.size() - 1)] > 0.5) ++pos;
        }
        CHECK(std::abs(static_cast<double>(pos) / draws - 0.5) < 0.01);
    }
}

TEST_CASE("training recipe") {
    // linearly separable toy set
    NetConfig cfg;
    EncoderSpec a;
    a.name = "a";
    a.input_width = 2;
    a.layers.push_back({2, 4, Activation::Relu, false, 0.0});
    cfg.blocks = {a};
    cfg.head_widths = {4};
    cfg.dropout = 0.0;

    auto separable = [&](std::size_t n, std::uint64_t seed) {
        Rng rng(seed);
        Batch b;
        Matrix m(n, 2);
        for (std::size_t i = 0; i < n; ++i) {
            const bool pos = i % 2 == 0;
            m.at(i, 0) = (pos ? 2.0 : -2.0) + 0.3 * rng.gauss();
            m.at(i, 1) = rng.gauss();
            b.labels.push_back(pos ? 1.0 : 0.0);
        }
        b.block_inputs.push_back(std::move(m));
        return b;
    };

    TrainConfig tc;
    tc.max_epochs = 8;
    tc.patience = 20;
    tc.seed = 99;
    tc.dropout = 0.0;

    SUBCASE("loss decreases and the separable set is learned perfectly") {
        const Batch train = separable(120, 1);
        const Batch val = separable(40, 2);
        const TrainResult r = train(cfg, tc, train, val);
        for (std::size_t e = 1; e < 5 && e < r.log.size(); ++e) {
            CHECK(r.log[e].train_loss < r.log[e - 1].train_loss);
        }
        const auto scores = predict(r.best_net, train);
        std::vector<int> labels(train.labels.begin(), train.labels.end());
        CHECK(metrics::auroc(scores, labels).value() == doctest::Approx(1.0));
    }
    SUBCASE("the step schedule divides the rate by ten every ten epochs") {
        TrainConfig c;
        CHECK(lr_at_epoch(c, 0) == doctest::Approx(5e-4));
        CHECK(lr_at_epoch(c, 9) == doctest::Approx(5e-4));
        CHECK(lr_at_epoch(c, 10) == doctest::Approx(5e-5));
        CHECK(lr_at_epoch(c, 20) == doctest::Approx(5e-6));
    }
    SUBCASE("same seed twice gives byte-identical checkpoints") {
        const Batch train = separable(60, 1);
        const Batch val = separable(20, 2);
        const TrainResult r1 = train(cfg, tc, train, val);
        const TrainResult r2 = train(cfg, tc, train, val);
        CHECK(r1.best_net.to_json().dump() == r2.best_net.to_json().dump());
    }
    SUBCASE("weight decay shrinks parameters multiplicatively on the first step") {
        // identical seed and data: the Adam step from the data gradient is the
        // same with and without decay, so the difference after one step is
        // exactly lr * wd * theta0
        TrainConfig one = tc;
        one.max_epochs = 1;
        one.batch_size = 60;
        one.weight_decay = 0.0;
        const Batch train_set = separable(60, 1);
        const Batch val = separable(20, 2);
        const FusedNet init = build_net(cfg, one.seed);
        const std::vector<double> theta0 = flatten_params(init);

        const TrainResult no_decay = train(cfg, one, train_set, val, {}, &init);
        one.weight_decay = 0.01;
        const TrainResult with_decay = train(cfg, one, train_set, val, {}, &init);

        // compare the final nets (1 epoch = 1 step at batch 60)
        FusedNet a = no_decay.best_net;
        FusedNet b = with_decay.best_net;
        const auto ta = flatten_params(a);
        const auto tb = flatten_params(b);
        const double lr = lr_at_epoch(one, 0);
        for (std::size_t i = 0; i < ta.size(); ++i) {
            CHECK(ta[i] - tb[i] == doctest::Approx(lr * 0.01 * theta0[i]).epsilon(1e-9));
        }
    }
    SUBCASE("frozen blocks stay bit-identical; the head still learns") {
        const Batch train_set = separable(80, 3);
        const Batch val = separable(20, 4);
        const FusedNet init = build_net(cfg, 55);
        std::vector<double> frozen_before;
        for (const auto& l : init.blocks[0].layers) {
            frozen_before.insert(frozen_before.end(), l.w.a.begin(), l.w.a.end());
            frozen_before.insert(frozen_before.end(), l.b.begin(), l.b.end());
        }
        TrainConfig c = tc;
        c.max_epochs = 3;
        const TrainResult r = train(cfg, c, train_set, val, {"a"}, &init);
        std::vector<double> frozen_after;
        for (const auto& l : r.best_net.blocks[0].layers) {
            frozen_after.insert(frozen_after.end(), l.w.a.begin(), l.w.a.end());
            frozen_after.insert(frozen_after.end(), l.b.begin(), l.b.end());
        }
        CHECK(frozen_before == frozen_after);
        CHECK(r.log.back().train_loss < r.log.front().train_loss + 1e-9);
    }
    SUBCASE("freezing everything with no head layers is a configuration error") {
        NetConfig headless = cfg;
        headless.head_widths = {};
        const FusedNet init = build_net(headless, 5);
        const Batch train_set = separable(40, 1);
        const Batch val = separable(20, 2);
        CHECK_THROWS_AS(train(headless, tc, train_set, val, {"a"}, &init), config_error);
    }
}

TEST_CASE("batch normalization and dropout in eval mode") {
    NetConfig cfg = tiny_net_config(6, 5, true, 0.5);
    const Batch train_batch = [] {
        Rng rng(10);
        Batch b;
        Matrix m1(16, 6), m2(16, 5);
        for (double& v : m1.a) v = rng.gauss();
        for (double& v : m2.a) v = rng.gauss();
        b.block_inputs = {m1, m2};
        for (int i = 0; i < 16; ++i) b.labels.push_back(i % 2);
        return b;
    }();

    FusedNet net = build_net(cfg, 77);
    // one training pass to move the running statistics
    Gradients g;
    Rng drop(3);
    loss_and_grad(net, train_batch, ClassWeights{1, 1}, 0.0, Mode::Train, &drop, g);

    // two eval passes are identical: dropout is the identity and
    // normalization uses the running statistics
    const auto p1 = predict(net, train_batch);
    const auto p2 = predict(net, train_batch);
    CHECK(p1 == p2);
}

TEST_CASE("integrated gradients") {
    SUBCASE("a linear model attributes w_i * x_i exactly") {
        NetConfig cfg;
        EncoderSpec a;
        a.name = "a";
        a.input_width = 3;
        a.layers.push_back({3, 3, Activation::Identity, false, 0.0});
        cfg.blocks = {a};
        cfg.head_widths = {};
        FusedNet net = build_net(cfg, 2);
        // block = identity, out layer = w
        std::vector<double> params(flatten_params(net).size(), 0.0);
        // block weight 3x3 identity
        params[0] = 1.0;
        params[4] = 1.0;
        params[8] = 1.0;
        // out weights at offset 9 (w) + 3 (b): w = (0.5, -2, 3), b = 0
        params[12] = 0.5;
        params[13] = -2.0;
        params[14] = 3.0;
        load_params(net, params);

        Batch x;
        Matrix m(1, 3);
        m.at(0, 0) = 1.0;
        m.at(0, 1) = 2.0;
        m.at(0, 2) = -1.5;
        x.block_inputs.push_back(m);
        x.labels = {0.0};
        Batch baseline;
        baseline.block_inputs.emplace_back(1, 3);
        baseline.labels = {0.0};

        const auto attr = integrated_gradients(net, x, baseline, 2, AttributionOutput::Logit);
        CHECK(attr[0] == doctest::Approx(0.5 * 1.0).epsilon(1e-12));
        CHECK(attr[1] == doctest::Approx(-2.0 * 2.0).epsilon(1e-12));
        CHECK(attr[2] == doctest::Approx(3.0 * -1.5).epsilon(1e-12));
    }
    SUBCASE("x equal to the baseline gives all-zero attributions") {
        NetConfig cfg = tiny_net_config();
        FusedNet net = build_net(cfg, 9);
        Batch x;
        x.labels = {0.0};
        for (const auto& spec : cfg.blocks) x.block_inputs.emplace_back(1, spec.input_width);
        const auto attr = integrated_gradients(net, x, x, 16);
        for (double v : attr) CHECK(v == 0.0);
    }
    SUBCASE("completeness error shrinks as steps grow") {
        Rng rng(33);
        NetConfig cfg = tiny_net_config(7, 6, true, 0.0);
        FusedNet net = build_net(cfg, 4);
        Batch x = random_batch(cfg, 1, rng);
        Batch baseline;
        baseline.labels = {0.0};
        for (const auto& m : x.block_inputs) baseline.block_inputs.emplace_back(1, m.cols);

        const double fx = predict(net, x)[0];
        const double fb = predict(net, baseline)[0];
        double prev_err = 1e9;
        for (int steps : {32, 128, 512}) {
            const auto attr = integrated_gradients(net, x, baseline, steps);
            double sum = 0;
            for (double v : attr) sum += v;
            const double err = std::abs(sum - (fx - fb));
            CHECK(err <= prev_err + 1e-12);
            prev_err = err;
        }
        CHECK(prev_err <= 1e-3);
    }
}
