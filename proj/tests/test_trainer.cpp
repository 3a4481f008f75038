#include <doctest.h>

#include "fairstg/checkpoint.hpp"
#include "fairstg/errors.hpp"
#include "fairstg/trainer.hpp"
#include "support/grad_check.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

using namespace fairstg;

namespace {

std::string temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "fairstg_trainer_tests";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

RawDataset toy_dataset(int n, int t_steps, unsigned seed) {
    RawDataset ds;
    ds.values.resize(n, t_steps);
    std::mt19937 rng(seed);
    for (int i = 0; i < n; ++i) {
        for (int t = 0; t < t_steps; ++t) {
            double noise = (static_cast<double>(rng() % 1000) / 1000.0 - 0.5);
            ds.values(i, t) = 40.0 + 5.0 * i +
                              8.0 * std::sin(2.0 * 3.14159265358979 * t / 24.0) + noise;
        }
    }
    for (int t = 0; t < t_steps; ++t) ds.timestamps.push_back(1704067200 + 300LL * t);
    for (int i = 0; i < n; ++i) ds.node_ids.push_back("n" + std::to_string(i));
    ds.interval_seconds = 300;
    return ds;
}

ModelConfig small_config(int n) {
    ModelConfig cfg;
    cfg.w = 4;
    cfg.h = 3;
    cfg.num_nodes = n;
    cfg.d = 8;
    cfg.channels = 4;
    cfg.d_emb = 3;
    cfg.d_k = 4;
    cfg.gate_hidden = 4;
    cfg.ext_embed = 2;
    cfg.rec_h1 = 8;
    cfg.rec_h2 = 6;
    cfg.seed = 11;
    return cfg;
}

HyperParams small_hp() {
    HyperParams hp;
    hp.k_c = 2;
    return hp;
}

struct Fixture {
    RawDataset ds;
    SplitStarts splits;
    NormalizationState norm;
    ModelConfig cfg;

    explicit Fixture(int n = 3, int t_steps = 80, unsigned seed = 5)
        : ds(toy_dataset(n, t_steps, seed)), cfg(small_config(n)) {
        auto starts = window_starts(ds, cfg.w, cfg.h);
        splits = split_starts(starts, 0.7, 0.2, 0.1);
        norm = fit_normalization(ds, splits.train, cfg.w);
    }

    SampleBatch batch(const std::vector<int>& starts) const {
        return make_batch(ds, norm, starts, cfg.w, cfg.h);
    }
};

} // namespace

TEST_CASE("gradient clipping") {
    SUBCASE("within budget stays untouched") {
        std::vector<ad::Matrix> grads = {Matrix::Constant(1, 1, 3.0),
                                         Matrix::Constant(1, 1, 4.0)};
        CHECK(clip_global_norm(grads, 5.0) == doctest::Approx(5.0).epsilon(1e-12));
        CHECK(grads[0](0, 0) == 3.0);
        CHECK(grads[1](0, 0) == 4.0);
    }
    SUBCASE("oversized gradients rescale to the budget") {
        std::vector<ad::Matrix> grads = {Matrix::Constant(1, 1, 6.0),
                                         Matrix::Constant(1, 1, 8.0)};
        double pre = clip_global_norm(grads, 5.0);
        CHECK(pre == doctest::Approx(10.0).epsilon(1e-12));
        double post = std::sqrt(grads[0].squaredNorm() + grads[1].squaredNorm());
        CHECK(post == doctest::Approx(5.0).epsilon(1e-9));
        CHECK(post <= 5.0 + 1e-6);
    }
    SUBCASE("zero gradients are safe") {
        std::vector<ad::Matrix> grads = {Matrix::Zero(2, 2)};
        CHECK(clip_global_norm(grads, 5.0) == 0.0);
        CHECK(grads[0].allFinite());
    }
}

TEST_CASE("adam optimizer") {
    SUBCASE("first step moves by about the learning rate") {
        ParamStore store;
        int id = store.add("p", Matrix::Constant(1, 1, 1.0));
        Adam adam(store, 0.1);
        adam.step({id}, {Matrix::Constant(1, 1, 2.5)});
        // bias-corrected m/v make the first update lr * g / (|g| + eps')
        CHECK(store.value(id)(0, 0) == doctest::Approx(1.0 - 0.1).epsilon(1e-6));
    }
    SUBCASE("late-joining parameters get fresh bias correction") {
        ParamStore s1;
        int a1 = s1.add("a", Matrix::Constant(1, 1, 1.0));
        int b1 = s1.add("b", Matrix::Constant(1, 1, 1.0));
        Adam adam1(s1, 0.05);
        adam1.step({a1}, {Matrix::Constant(1, 1, 1.0)});
        adam1.step({a1}, {Matrix::Constant(1, 1, 1.0)});
        adam1.step({a1, b1}, {Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 0.7)});

        ParamStore s2;
        int b2 = s2.add("b", Matrix::Constant(1, 1, 1.0));
        Adam adam2(s2, 0.05);
        adam2.step({b2}, {Matrix::Constant(1, 1, 0.7)});

        CHECK(s1.value(b1)(0, 0) == doctest::Approx(s2.value(b2)(0, 0)).epsilon(1e-15));
    }
    SUBCASE("id/grad length mismatch rejected") {
        ParamStore store;
        int id = store.add("p", Matrix::Zero(1, 1));
        Adam adam(store, 0.1);
        CHECK_THROWS_AS(adam.step({id}, {}), TrainError);
    }
}

TEST_CASE("group batching") {
    std::mt19937 rng(9);
    SUBCASE("whole window-start groups, every start exactly once") {
        auto batches = make_group_batches({0, 1, 2, 3, 4}, 3, 6, rng);
        // 6 / 3 nodes = 2 starts per batch
        REQUIRE(batches.size() == 3);
        CHECK(batches[0].size() == 2);
        CHECK(batches[1].size() == 2);
        CHECK(batches[2].size() == 1);
        std::vector<int> seen;
        for (const auto& b : batches) seen.insert(seen.end(), b.begin(), b.end());
        std::sort(seen.begin(), seen.end());
        CHECK(seen == std::vector<int>{0, 1, 2, 3, 4});
    }
    SUBCASE("small budgets still carry one full group") {
        auto batches = make_group_batches({0, 1, 2}, 5, 1, rng);
        REQUIRE(batches.size() == 3);
        for (const auto& b : batches) CHECK(b.size() == 1);
    }
    SUBCASE("same seed reproduces the shuffle") {
        std::mt19937 r1(21), r2(21);
        auto a = make_group_batches({0, 1, 2, 3, 4, 5, 6, 7}, 2, 4, r1);
        auto b = make_group_batches({0, 1, 2, 3, 4, 5, 6, 7}, 2, 4, r2);
        CHECK(a == b);
    }
}

TEST_CASE("forward stage semantics") {
    Fixture fx;
    Model model(fx.cfg, fx.norm);
    SampleBatch batch = fx.batch({0, 1, 2, 3});

    SUBCASE("warm-up loss is the plain entrywise MAE") {
        ad::Tape t;
        ForwardOptions opt;
        opt.stage = Stage::warmup;
        opt.hp = small_hp();
        ForwardResult res = model.forward(t, batch, opt);
        Matrix plain = t.value(res.plain_predictions);
        double expect = (plain - batch.targets).cwiseAbs().mean();
        CHECK(t.value(res.loss)(0, 0) == doctest::Approx(expect).epsilon(1e-12));
        CHECK(res.breakdown.total == doctest::Approx(expect).epsilon(1e-12));
        CHECK(res.breakdown.l_f == 0.0);
        CHECK(res.breakdown.l_s == 0.0);
        CHECK((t.value(res.predictions) - plain).cwiseAbs().maxCoeff() == 0.0);
        CHECK_FALSE(res.z_hat.valid());
    }
    SUBCASE("fairness stage composes the three losses") {
        ad::Tape t;
        ForwardOptions opt;
        opt.stage = Stage::fairness;
        opt.hp = small_hp();
        ForwardResult res = model.forward(t, batch, opt);

        Vector e_pre = per_sample_mae(t.value(res.plain_predictions), batch.targets);
        CHECK(res.plan.z == partition_easy_challenging(e_pre, opt.hp.k_easy));

        Vector errors = per_sample_mae(t.value(res.predictions), batch.targets);
        Vector lambda = cost_sensitive_weights(errors);
        CHECK((res.plan.lambda - lambda).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(res.breakdown.l_r == doctest::Approx(reweighted_loss(errors, lambda)).epsilon(1e-9));
        CHECK(res.breakdown.l_f == doctest::Approx(fairness_loss(errors)).epsilon(1e-9));
        REQUIRE(res.z_hat.valid());
        Vector z_hat = t.value(res.z_hat).col(0);
        CHECK(res.breakdown.l_s ==
              doctest::Approx(weighted_bce(z_hat, res.plan.z, opt.hp.omega)).epsilon(1e-9));
        double total = 1.0 * res.breakdown.l_r + 0.5 * res.breakdown.l_f +
                       0.1 * res.breakdown.l_s;
        CHECK(res.breakdown.total == doctest::Approx(total).epsilon(1e-9));
        CHECK(t.value(res.loss)(0, 0) == doctest::Approx(total).epsilon(1e-9));

        // enhanced rows are exactly the challenging ones with neighbors
        for (int i = 0; i < batch.size(); ++i) {
            if (res.plan.z[static_cast<std::size_t>(i)]) {
                CHECK(res.alpha(i) == 0.0);
            } else if (res.plan.comp.mask(i) == 1.0) {
                CHECK(res.alpha(i) > 0.0);
                CHECK(res.alpha(i) < 0.5);
            }
        }
    }
    SUBCASE("no_fe disables recognizer and enhancement but keeps the variance term") {
        ad::Tape t;
        ForwardOptions opt;
        opt.stage = Stage::fairness;
        opt.ablation = Ablation::no_fe;
        opt.hp = small_hp();
        ForwardResult res = model.forward(t, batch, opt);
        CHECK_FALSE(res.z_hat.valid());
        CHECK((t.value(res.predictions) - t.value(res.plain_predictions))
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
        CHECK(res.breakdown.l_s == 0.0);
        CHECK(res.breakdown.weights.mu_s == 0.0);
        CHECK(res.breakdown.l_f > 0.0);
        CHECK(res.breakdown.total ==
              doctest::Approx(res.breakdown.l_r + 0.5 * res.breakdown.l_f).epsilon(1e-9));
    }
    SUBCASE("no_fo drops reweighting and the variance term but keeps enhancement") {
        ad::Tape t;
        ForwardOptions opt;
        opt.stage = Stage::fairness;
        opt.ablation = Ablation::no_fo;
        opt.hp = small_hp();
        ForwardResult res = model.forward(t, batch, opt);
        CHECK(res.plan.lambda.size() == 0);
        Vector errors = per_sample_mae(t.value(res.predictions), batch.targets);
        CHECK(res.breakdown.l_r == doctest::Approx(errors.mean()).epsilon(1e-9));
        CHECK(res.breakdown.weights.mu_f == 0.0);
        CHECK(res.breakdown.l_f == 0.0);
        CHECK(res.z_hat.valid());
        CHECK(res.breakdown.total ==
              doctest::Approx(res.breakdown.l_r + 0.1 * res.breakdown.l_s).epsilon(1e-9));
    }
    SUBCASE("frozen plans replay to the identical loss") {
        ForwardOptions opt;
        opt.stage = Stage::fairness;
        opt.hp = small_hp();
        ForwardPlan plan;
        double first;
        {
            ad::Tape t;
            ForwardResult res = model.forward(t, batch, opt);
            plan = res.plan;
            first = t.value(res.loss)(0, 0);
        }
        ad::Tape t2;
        ForwardOptions replay = opt;
        replay.frozen = &plan;
        ForwardResult res2 = model.forward(t2, batch, replay);
        CHECK(t2.value(res2.loss)(0, 0) == first);
    }
}

TEST_CASE("split evaluation with a constant predictor") {
    Fixture fx;
    Model model(fx.cfg, fx.norm);
    for (int i = 0; i < model.params().size(); ++i) model.params().value(i).setZero();

    SampleBatch batch = fx.batch(fx.splits.val);
    Vector sample_mae(batch.size());
    for (int i = 0; i < batch.size(); ++i) {
        sample_mae(i) =
            (batch.targets.row(i).array() - fx.norm.mean).abs().mean();
    }
    double expect_mae = (batch.targets.array() - fx.norm.mean).abs().mean();

    EvalSummary warm = evaluate_split(model, fx.ds, fx.splits.val, Stage::warmup,
                                      Ablation::full, small_hp());
    CHECK(warm.mae == doctest::Approx(expect_mae).epsilon(1e-9));
    CHECK(warm.mae_var == doctest::Approx(fairness_loss(sample_mae)).epsilon(1e-9));

    // zeroed recognizer scores 0.5 -> everything classified easy -> no
    // enhancement, so the fairness stage matches the plain pass
    EvalSummary fair = evaluate_split(model, fx.ds, fx.splits.val, Stage::fairness,
                                      Ablation::full, small_hp());
    CHECK(fair.mae == doctest::Approx(warm.mae).epsilon(1e-12));
    CHECK(fair.mae_var == doctest::Approx(warm.mae_var).epsilon(1e-12));

    CHECK_THROWS_AS(
        evaluate_split(model, fx.ds, {}, Stage::warmup, Ablation::full, small_hp()),
        DataError);
}

TEST_CASE("training runs") {
    Fixture fx;

    TrainConfig base;
    base.lr = 0.01;
    base.batch_size = 6;
    base.warmup_epochs = 1;
    base.total_epochs = 3;
    base.seed = 7;
    base.hp = small_hp();
    base.patience = 5;
    base.verbose = false;

    SUBCASE("stages transition exactly once and get logged") {
        TrainConfig cfg = base;
        cfg.log_path = temp_path("log.csv");
        Model model(fx.cfg, fx.norm);
        TrainResult result = run_training(model, fx.ds, fx.splits, cfg);
        REQUIRE(result.history.size() == 3);
        CHECK(result.history[0].stage == Stage::warmup);
        CHECK(result.history[1].stage == Stage::fairness);
        CHECK(result.history[2].stage == Stage::fairness);
        CHECK(result.transition_epoch == 2);
        CHECK(result.best_epoch >= 1);
        CHECK(result.best_val_mae > 0.0);
        for (const auto& e : result.history) {
            CHECK(std::isfinite(e.loss.total));
            CHECK(std::isfinite(e.val_mae));
        }
        std::ifstream log(cfg.log_path);
        std::string line;
        std::getline(log, line);
        CHECK(line == "epoch,stage,l_r,l_f,l_s,total");
        int rows = 0;
        while (std::getline(log, line)) {
            if (!line.empty()) ++rows;
        }
        CHECK(rows == 3);
    }
    SUBCASE("identical configurations reproduce bitwise") {
        Model m1(fx.cfg, fx.norm);
        Model m2(fx.cfg, fx.norm);
        TrainResult r1 = run_training(m1, fx.ds, fx.splits, base);
        TrainResult r2 = run_training(m2, fx.ds, fx.splits, base);
        REQUIRE(r1.history.size() == r2.history.size());
        for (std::size_t i = 0; i < r1.history.size(); ++i) {
            CHECK(r1.history[i].val_mae == r2.history[i].val_mae);
            CHECK(r1.history[i].train_mae == r2.history[i].train_mae);
            CHECK(r1.history[i].loss.total == r2.history[i].loss.total);
        }
        for (int i = 0; i < m1.params().size(); ++i) {
            CHECK((m1.params().value(i) - m2.params().value(i)).cwiseAbs().maxCoeff() == 0.0);
        }
    }
    SUBCASE("warm-up forever never transitions and saves a plain checkpoint") {
        TrainConfig cfg = base;
        cfg.warmup_epochs = 3;
        cfg.total_epochs = 2;
        cfg.checkpoint_path = temp_path("plain.bin");
        Model model(fx.cfg, fx.norm);
        TrainResult result = run_training(model, fx.ds, fx.splits, cfg);
        CHECK(result.transition_epoch == -1);
        CHECK(result.mode == "plain");
        for (const auto& e : result.history) CHECK(e.stage == Stage::warmup);
        LoadedCheckpoint ck = load_checkpoint(cfg.checkpoint_path);
        CHECK(ck.mode == "plain");
    }
    SUBCASE("one fairness epoch flips the saved mode") {
        TrainConfig cfg = base;
        cfg.warmup_epochs = 1;
        cfg.total_epochs = 2;
        cfg.checkpoint_path = temp_path("fair.bin");
        Model model(fx.cfg, fx.norm);
        TrainResult result = run_training(model, fx.ds, fx.splits, cfg);
        CHECK(result.transition_epoch == 2);
        CHECK(result.mode == "fairstg");
        LoadedCheckpoint ck = load_checkpoint(cfg.checkpoint_path);
        CHECK(ck.mode == "fairstg");
        CHECK(ck.ablation == "full");
    }
    SUBCASE("no_fe checkpoints never claim enhancement") {
        TrainConfig cfg = base;
        cfg.total_epochs = 2;
        cfg.ablation = Ablation::no_fe;
        cfg.checkpoint_path = temp_path("no_fe.bin");
        Model model(fx.cfg, fx.norm);
        TrainResult result = run_training(model, fx.ds, fx.splits, cfg);
        CHECK(result.mode == "plain");
        LoadedCheckpoint ck = load_checkpoint(cfg.checkpoint_path);
        CHECK(ck.mode == "plain");
        CHECK(ck.ablation == "no_fe");
    }
    SUBCASE("checkpoints round-trip through save and load") {
        TrainConfig cfg = base;
        cfg.checkpoint_path = temp_path("round.bin");
        Model model(fx.cfg, fx.norm);
        run_training(model, fx.ds, fx.splits, cfg);

        LoadedCheckpoint first = load_checkpoint(cfg.checkpoint_path);
        std::string second_path = temp_path("round2.bin");
        save_checkpoint(second_path, *first.model, first.mode, first.ablation);
        LoadedCheckpoint second = load_checkpoint(second_path);

        SampleBatch batch = fx.batch(fx.splits.test);
        ad::Tape t1, t2;
        ForwardOptions opt;
        opt.stage = Stage::fairness;
        opt.training = false;
        opt.compute_loss = false;
        opt.hp = small_hp();
        Matrix p1 = t1.value(first.model->forward(t1, batch, opt).predictions);
        Matrix p2 = t2.value(second.model->forward(t2, batch, opt).predictions);
        CHECK((p1 - p2).cwiseAbs().maxCoeff() == 0.0);
        CHECK(first.model->config().num_nodes == fx.cfg.num_nodes);
        CHECK(first.model->norm().mean == doctest::Approx(fx.norm.mean).epsilon(1e-6));
    }
    SUBCASE("stalled validation stops early") {
        TrainConfig cfg = base;
        cfg.lr = 1e-300; // updates vanish below double precision
        cfg.warmup_epochs = 1;
        cfg.total_epochs = 40;
        cfg.patience = 2;
        Model model(fx.cfg, fx.norm);
        TrainResult result = run_training(model, fx.ds, fx.splits, cfg);
        CHECK(result.stopped_early);
        // warm-up, first fairness epoch (tracking resets), then two stalls
        CHECK(result.history.size() == 4);
    }
    SUBCASE("non-finite data aborts with a training error") {
        Fixture broken;
        broken.ds.values(0, 10) = std::numeric_limits<double>::quiet_NaN();
        Model model(broken.cfg, broken.norm);
        CHECK_THROWS_AS(run_training(model, broken.ds, broken.splits, base), TrainError);
    }
    SUBCASE("invalid configurations are rejected") {
        Model model(fx.cfg, fx.norm);
        TrainConfig bad = base;
        bad.lr = 0.0;
        CHECK_THROWS_AS(run_training(model, fx.ds, fx.splits, bad), ConfigError);
        bad = base;
        bad.patience = 0;
        CHECK_THROWS_AS(run_training(model, fx.ds, fx.splits, bad), ConfigError);
        bad = base;
        bad.total_epochs = 0;
        CHECK_THROWS_AS(run_training(model, fx.ds, fx.splits, bad), ConfigError);
    }
}
