#include "fairstg/model.hpp"

#include "fairstg/errors.hpp"

#include <cmath>

namespace fairstg {

std::string ablation_name(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::no_fe: return "no_fe";
        case Ablation::no_fo: return "no_fo";
    }
    throw ConfigError("unknown ablation");
}

Ablation ablation_from_name(const std::string& s) {
    if (s == "full") return Ablation::full;
    if (s == "no_fe") return Ablation::no_fe;
    if (s == "no_fo") return Ablation::no_fo;
    throw ConfigError("unknown ablation '" + s + "' (expected full, no_fe, or no_fo)");
}

ExternalEncoder::ExternalEncoder(ParamStore& store, int num_nodes, int embed_dim,
                                 std::mt19937& rng, const std::string& prefix)
    : num_nodes_(num_nodes), embed_dim_(embed_dim) {
    if (num_nodes < 1 || embed_dim < 1) throw ConfigError("external encoder dims must be >= 1");
    // one extra row per table holds the reserved unknown category
    dow_table_ = store.add(prefix + "dow", uniform_matrix(8, embed_dim, -0.5, 0.5, rng));
    node_table_ =
        store.add(prefix + "node", uniform_matrix(num_nodes + 1, embed_dim, -0.5, 0.5, rng));
}

ad::Var ExternalEncoder::forward(ad::Tape& t, const std::vector<ad::Var>& bound,
                                 const SampleBatch& batch) const {
    const int m = batch.size();
    Matrix tod(m, 1);
    std::vector<int> dows(static_cast<std::size_t>(m));
    std::vector<int> nodes(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        tod(i, 0) = batch.time_of_day(i);
        int d = batch.day_of_week[static_cast<std::size_t>(i)];
        dows[static_cast<std::size_t>(i)] = (d >= 0 && d < 7) ? d : 7;
        int n = batch.node_index[static_cast<std::size_t>(i)];
        nodes[static_cast<std::size_t>(i)] = (n >= 0 && n < num_nodes_) ? n : num_nodes_;
    }
    ad::Var dow_emb = t.rows(bound[static_cast<std::size_t>(dow_table_)], dows);
    ad::Var node_emb = t.rows(bound[static_cast<std::size_t>(node_table_)], nodes);
    return t.concat_cols({t.constant(std::move(tod)), dow_emb, node_emb});
}

Model::Model(const ModelConfig& cfg, const NormalizationState& norm) : cfg_(cfg), norm_(norm) {
    std::mt19937 rng(cfg_.seed);
    ExtractorConfig ec;
    ec.w = cfg_.w;
    ec.num_nodes = cfg_.num_nodes;
    ec.channels = cfg_.channels;
    ec.d = cfg_.d;
    ec.d_emb = cfg_.d_emb;
    ec.adjacency = cfg_.adjacency;
    ec.fixed_adjacency = cfg_.fixed_adjacency;
    extractor_ = std::make_unique<ReferenceExtractor>(store_, ec, rng);

    HeadConfig hc;
    hc.d = cfg_.d;
    hc.hidden = cfg_.d;
    hc.horizon = cfg_.h;
    head_ = std::make_unique<OutputHead>(store_, hc, rng);

    ext_ = std::make_unique<ExternalEncoder>(store_, cfg_.num_nodes, cfg_.ext_embed, rng);

    RecognizerConfig rc;
    rc.d_in = cfg_.d + ext_->dim() + 2;
    rc.num_nodes = cfg_.num_nodes;
    rc.arch = cfg_.rec_arch;
    rc.d_emb = cfg_.d_emb;
    rc.h1 = cfg_.rec_h1;
    rc.h2 = cfg_.rec_h2;
    recognizer_ = std::make_unique<Recognizer>(store_, rc, rng);

    gate_ = std::make_unique<MixupGate>(store_, cfg_.d, cfg_.d_k, cfg_.gate_hidden, rng);
}

int Model::recognizer_input_dim() const { return cfg_.d + ext_->dim() + 2; }

std::vector<int> Model::trainable_ids(Stage stage) const {
    std::vector<int> ids;
    for (int i = 0; i < store_.size(); ++i) {
        if (stage == Stage::warmup) {
            const std::string& n = store_.name(i);
            if (n.rfind("backbone.", 0) != 0 && n.rfind("head.", 0) != 0) continue;
        }
        ids.push_back(i);
    }
    return ids;
}

ForwardResult Model::forward(ad::Tape& t, const SampleBatch& batch,
                             const ForwardOptions& opt) const {
    if (batch.size() < 1) throw DataError("empty batch");
    auto bound = store_.bind(t);

    ForwardResult res;
    res.x_st = extractor_->forward(t, bound, batch);
    res.plain_predictions = head_->forward(t, bound, res.x_st, norm_);
    res.predictions = res.plain_predictions;
    res.alpha = Vector::Zero(batch.size());

    const bool warm = opt.stage == Stage::warmup;
    const bool use_enhancement = !warm && opt.ablation != Ablation::no_fe;

    ForwardPlan plan;
    if (opt.frozen) {
        plan = *opt.frozen;
    } else if (!warm) {
        if (opt.training) {
            // label difficulty from the un-enhanced forward so the recognizer
            // learns intrinsic difficulty
            Vector e_pre = per_sample_mae(t.value(res.plain_predictions), batch.targets);
            plan.z = partition_easy_challenging(e_pre, opt.hp.k_easy);
            plan.has_z = true;
            plan.easy = plan.z;
        }
    }

    if (use_enhancement) {
        const GroupOrder order = group_order(batch);
        Matrix stats(batch.size(), 2);
        for (int i = 0; i < batch.size(); ++i) {
            // standardized by the training stats so magnitudes stay tame
            stats(i, 0) = (batch.stats_mean(i) - norm_.mean) / norm_.std;
            stats(i, 1) = batch.stats_var(i) / (norm_.std * norm_.std);
        }
        ad::Var e_ext = ext_->forward(t, bound, batch);
        ad::Var c = t.concat_cols({res.x_st, e_ext, t.constant(std::move(stats))});
        res.z_hat = recognizer_->forward(t, bound, c, order);

        if (!opt.frozen && !opt.training) {
            plan.easy = classify(Vector(t.value(res.z_hat).col(0)));
        }
        if (!opt.frozen) {
            plan.comp = build_compensatory_plan(t.value(res.x_st), plan.easy, opt.hp.k_c);
        }
        if (plan.comp.active) {
            ad::Var u = t.matmul(t.constant(plan.comp.gather), res.x_st);
            ad::Var a = gate_->alpha(t, bound, res.x_st, u);
            ad::Var a_eff = t.cmul(a, t.constant(Matrix(plan.comp.mask)));
            ad::Var x_com = mix_representations(t, res.x_st, u, a_eff);
            res.predictions = head_->forward(t, bound, x_com, norm_);
            res.alpha = t.value(a_eff).col(0);
        }
    }

    if (opt.compute_loss) {
        if (warm) {
            res.loss = t.mean_all(t.abs_(t.sub(res.plain_predictions, t.constant(batch.targets))));
            res.breakdown = combine(t.value(res.loss)(0, 0), 0.0, 0.0, LossWeights{1.0, 0.0, 0.0});
        } else {
            if (!plan.has_z) throw TrainError("fairness-stage loss needs difficulty labels");
            ad::Var errors = per_sample_mae_t(t, res.predictions, batch.targets);

            ad::Var l_r;
            if (opt.ablation == Ablation::no_fo) {
                plan.lambda = Vector();
                l_r = t.mean_all(errors);
            } else {
                if (!opt.frozen) {
                    plan.lambda = cost_sensitive_weights(Vector(t.value(errors).col(0)));
                }
                Vector lambda = plan.lambda.size() ? plan.lambda
                                                   : Vector(Vector::Ones(batch.size()));
                l_r = reweighted_loss_t(t, errors, lambda);
            }
            ad::Var total = t.scale(l_r, opt.hp.mu.mu_r);

            double l_f_value = 0.0;
            if (opt.ablation != Ablation::no_fo) {
                ad::Var l_f = fairness_loss_t(t, errors);
                total = t.add(total, t.scale(l_f, opt.hp.mu.mu_f));
                l_f_value = t.value(l_f)(0, 0);
            }
            double l_s_value = 0.0;
            if (opt.ablation != Ablation::no_fe) {
                if (!res.z_hat.valid()) throw TrainError("recognizer output missing for BCE");
                ad::Var l_s = weighted_bce_t(t, res.z_hat, plan.z, opt.hp.omega);
                total = t.add(total, t.scale(l_s, opt.hp.mu.mu_s));
                l_s_value = t.value(l_s)(0, 0);
            }
            res.loss = total;
            LossWeights w = opt.hp.mu;
            if (opt.ablation == Ablation::no_fo) w.mu_f = 0.0;
            if (opt.ablation == Ablation::no_fe) w.mu_s = 0.0;
            res.breakdown = combine(t.value(l_r)(0, 0), l_f_value, l_s_value, w);
        }
    }
    res.plan = std::move(plan);
    res.bound = std::move(bound);
    return res;
}

} // namespace fairstg
