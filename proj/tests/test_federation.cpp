#include "mhd/checkpoint.hpp"
#include "mhd/error.hpp"
#include "mhd/federation.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace mhd;
using namespace mhd::fed;
using Kind = TopologySpec::Kind;

namespace {

RunConfig tiny_config() {
    RunConfig c;
    c.dataset = {6, 40, 4, 3.0, 1.0, 0};
    c.partition.num_clients = 3;
    c.partition.primary_labels_per_client = 2;
    c.model.hidden = {8};
    c.model.embedding_dim = 4;
    c.model.num_aux_heads = 2;
    c.optimizer.batch_size = 8;
    c.optimizer.public_batch_size = 8;
    c.total_steps = 60;
    c.eval_interval = 30;
    c.pool_interval = 10;
    c.fedavg_interval = 10;
    c.seed = 7;
    return c;
}

std::vector<std::shared_ptr<const std::vector<std::uint8_t>>> snapshots(std::size_t k, std::size_t tag) {
    std::vector<std::shared_ptr<const std::vector<std::uint8_t>>> out;
    for (std::size_t i = 0; i < k; ++i) {
        Rng rng(tag * 100 + i);
        const auto m = nn::make_model({2, {3}, 2, 2, 0}, static_cast<int>(i), rng);
        out.push_back(std::make_shared<const std::vector<std::uint8_t>>(checkpoint::serialize(m)));
    }
    return out;
}

Topology topology(Kind kind, std::size_t k) {
    TopologySpec s;
    s.kind = kind;
    s.num_clients = k;
    return Topology(s);
}

std::vector<std::string> jsonl(const RunResult& r) {
    std::vector<std::string> out;
    for (const auto& rec : r.records) out.push_back(metrics::to_jsonl(rec));
    return out;
}

}  // namespace

TEST_CASE("pool with capacity 1 holds the latest neighbor snapshot") {
    CheckpointPool pool{0, 1, 10, {}};
    const auto t = topology(Kind::cycle, 3);
    Rng rng(1);
    for (std::size_t step = 10; step <= 50; step += 10) {
        const auto snaps = snapshots(3, step);
        pool_update(pool, t, snaps, step, rng);
        REQUIRE(pool.entries.size() == 1);
        CHECK(pool.entries[0].source == 1);
        CHECK(pool.entries[0].step == step);
        CHECK(pool.entries[0].bytes == *snaps[1]);
        CHECK(*pool.entries[0].model == checkpoint::deserialize(*snaps[1]));
    }
}

TEST_CASE("complete graph pools never contain the owner; islands only the partner") {
    const auto complete = topology(Kind::complete, 8);
    Rng rng(2);
    for (int owner = 0; owner < 8; ++owner) {
        CheckpointPool pool{owner, 8, 1, {}};
        for (std::size_t step = 1; step <= 40; ++step) {
            pool_update(pool, complete, snapshots(8, 0), step, rng);
            CHECK(pool.entries.size() <= 8);
        }
        CHECK(pool.entries.size() == 8);
        for (const auto& e : pool.entries) CHECK(e.source != owner);
    }
    TopologySpec s;
    s.kind = Kind::islands;
    s.num_clients = 4;
    const Topology islands(s);
    CheckpointPool pool{2, 4, 1, {}};
    for (std::size_t step = 1; step <= 20; ++step) pool_update(pool, islands, snapshots(4, 0), step, rng);
    for (const auto& e : pool.entries) CHECK(e.source == 3);
}

TEST_CASE("a client without out-neighbors keeps an empty pool") {
    const auto chain = topology(Kind::chain, 3);
    CheckpointPool pool{2, 3, 1, {}};
    Rng rng(3);
    pool_update(pool, chain, snapshots(3, 0), 1, rng);
    CHECK(pool.entries.empty());
    CHECK(sample_teachers(pool, 2, rng).empty());
}

TEST_CASE("teacher sampling") {
    CheckpointPool pool{0, 5, 1, {}};
    for (int i = 0; i < 5; ++i) pool.entries.push_back(PoolEntry{i + 1, 0, {}, nullptr});
    Rng rng(4);
    const auto all = sample_teachers(pool, 5, rng);
    std::set<const PoolEntry*> distinct(all.begin(), all.end());
    CHECK(distinct.size() == 5);
    CHECK(sample_teachers(pool, 9, rng).size() == 5);

    // Δ = 1: uniform over the pool (χ² with 4 degrees of freedom, 99.9% quantile 18.47).
    std::vector<double> hits(5, 0.0);
    const int draws = 20000;
    for (int i = 0; i < draws; ++i) hits[static_cast<std::size_t>(sample_teachers(pool, 1, rng)[0]->source - 1)] += 1;
    double chi2 = 0.0;
    for (double h : hits) chi2 += (h - draws / 5.0) * (h - draws / 5.0) / (draws / 5.0);
    CHECK(chi2 < 18.47);

    CHECK(sample_teachers(CheckpointPool{}, 1, rng).empty());
    CHECK_THROWS_AS(sample_teachers(pool, 0, rng), ConfigError);
}

TEST_CASE("communication accounting") {
    const CommAccounting acc;
    // 8-byte id + 2 heads * 3 * (4 + 4) + 16 * 4 embedding bytes, per sample.
    CHECK(mhd_exchange_bytes(64, 16, 2, true, 20, acc) == 64u * (8 + 48 + 64));
    CHECK(mhd_exchange_bytes(10, 16, 1, false, 2, acc) == 10u * (8 + 2 * 8));
    CHECK(fedavg_exchange_bytes(1000, acc) == 8000u);
    const auto report = communication_report(tiny_config());
    Rng rng(0);
    const auto model = nn::make_model(client_arch(resolve(tiny_config()), 0), 0, rng);
    CHECK(report.parameter_count == nn::parameter_count(model));
    CHECK(report.ratio == doctest::Approx(static_cast<double>(report.fedavg_bytes_per_exchange) /
                                          static_cast<double>(report.mhd_bytes_per_exchange)));
}

TEST_CASE("train step without teachers is a cross-entropy step") {
    Rng rng(5);
    auto m = nn::make_model({4, {6}, 3, 3, 1}, 0, rng);
    auto reference = m;
    data::LabeledTable batch{test::random_matrix(5, 4, rng), {0, 1, 2, 1, 0}, 3};
    auto opt = nn::make_opt_state(m, 0.1, 0.9, 10);
    auto ref_opt = opt;
    Rng sel(1);
    const auto losses = train_step(m, opt, batch, Matrix(0, 4), {}, distill::DistillConfig{}, sel);
    nn::ForwardCache cache;
    const auto out = nn::forward(reference, batch.features, cache);
    const auto ce = nn::cross_entropy_grad(out.logits[0], batch.labels);
    const std::vector<Matrix> ups{ce.grad, Matrix{}};
    nn::sgd_step(reference, nn::backward(reference, cache, ups), ref_opt);
    CHECK(m == reference);
    CHECK(losses.ce == ce.loss);
    CHECK(losses.emb == 0.0);
    CHECK(losses.aux == 0.0);
}

namespace {

double max_param_diff(const nn::ClientModel& a, const nn::ClientModel& b) {
    const auto ta = nn::tensors(a);
    const auto tb = nn::tensors(b);
    double worst = 0.0;
    for (std::size_t t = 0; t < ta.size(); ++t)
        for (std::size_t i = 0; i < ta[t].values.size(); ++i)
            worst = std::max(worst, std::abs(ta[t].values[i] - tb[t].values[i]));
    return worst;
}

nn::ClientModel add(const nn::ClientModel& a, const nn::ClientModel& b) {
    auto out = a;
    auto to = nn::tensors(out);
    const auto tb = nn::tensors(b);
    for (std::size_t t = 0; t < to.size(); ++t)
        for (std::size_t i = 0; i < to[t].values.size(); ++i) to[t].values[i] += tb[t].values[i];
    return out;
}

}  // namespace

TEST_CASE("a frozen copy of the student with a duplicated head adds no gradient") {
    Rng rng(6);
    auto m = nn::make_model({4, {6}, 3, 3, 1}, 0, rng);
    m.aux_heads[0] = m.main_head;
    const auto teacher = m;
    auto ce_only = m;
    data::LabeledTable batch{test::random_matrix(5, 4, rng), {0, 1, 2, 1, 0}, 3};
    const Matrix pub = test::random_matrix(4, 4, rng);
    auto opt = nn::make_opt_state(m, 0.1, 0.9, 10);
    auto ce_opt = opt;
    distill::DistillConfig cfg;
    const nn::ClientModel* teachers[] = {&teacher};
    Rng sel(2);
    const auto losses = train_step(m, opt, batch, pub, teachers, cfg, sel);
    Rng sel2(2);
    train_step(ce_only, ce_opt, batch, Matrix(0, 4), {}, cfg, sel2);
    CHECK(std::abs(losses.emb) < 1e-12);
    CHECK(max_param_diff(m, ce_only) < 1e-12);
}

TEST_CASE("train step matches separate private and public passes") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(100 + seed);
        auto m = nn::make_model({5, {7}, 4, 4, 2}, 0, rng);
        const auto t1 = nn::make_model({5, {6}, 4, 4, 2}, 1, rng);
        const auto t2 = nn::make_model({5, {9, 5}, 4, 4, 3}, 2, rng);
        data::LabeledTable batch{test::random_matrix(6, 5, rng), {0, 1, 2, 3, 1, 0}, 4};
        const Matrix pub = test::random_matrix(5, 5, rng);
        distill::DistillConfig cfg;
        cfg.num_aux_heads = 2;
        cfg.delta = 2;
        cfg.nu_emb = 0.7;
        cfg.nu_aux = 2.0;
        cfg.include_same_level = seed % 2 == 0;
        auto opt = nn::make_opt_state(m, 0.05, 0.9, 100);
        opt.momentum = nn::zeros_like(m);
        auto ref = m;
        auto ref_opt = opt;

        const nn::ClientModel* teachers[] = {&t1, &t2};
        Rng sel(seed);
        train_step(m, opt, batch, pub, teachers, cfg, sel);

        const std::vector<distill::TeacherOutputs> outs{distill::make_teacher_outputs(t1, pub),
                                                       distill::make_teacher_outputs(t2, pub)};
        nn::ForwardCache pc;
        const auto pf = nn::forward(ref, batch.features, pc);
        std::vector<Matrix> pg(ref.num_heads());
        pg[0] = nn::cross_entropy_grad(pf.logits[0], batch.labels).grad;
        const auto g_private = nn::backward(ref, pc, pg);

        nn::ForwardCache qc;
        const auto qf = nn::forward(ref, pub, qc);
        Rng sel_ref(seed);
        const auto plan = distill::plan_distillation(qf.logits, outs, cfg, sel_ref);
        const std::vector<Matrix> temb{outs[0].embeddings, outs[1].embeddings};
        const auto emb = distill::embedding_loss(qf.embeddings, temb, cfg.nu_emb);
        std::vector<Matrix> qg(ref.num_heads());
        for (std::size_t k = 1; k <= 2; ++k)
            qg[k] = distill::aux_prediction_loss(qf.logits[k], plan.targets[k - 1], plan.masks[k - 1], cfg.nu_aux).grad;
        const auto g_public = nn::backward(ref, qc, qg, &emb.grad);

        nn::sgd_step(ref, add(g_private, g_public), ref_opt);
        CHECK(max_param_diff(m, ref) < 1e-12);
    }
}

TEST_CASE("fedavg round averages parameters") {
    Rng rng(8);
    const nn::ModelArch arch{3, {4}, 2, 3, 1};
    std::vector<nn::ClientModel> clients;
    for (int i = 0; i < 4; ++i) clients.push_back(nn::make_model(arch, i, rng));
    const auto before = clients;
    fedavg_round(clients);
    const auto t0 = nn::tensors(before[0]);
    for (std::size_t t = 0; t < t0.size(); ++t) {
        for (std::size_t i = 0; i < t0[t].values.size(); ++i) {
            double mean = 0.0;
            for (const auto& c : before) mean += nn::tensors(c)[t].values[i];
            mean /= 4.0;
            for (const auto& c : clients) CHECK(nn::tensors(c)[t].values[i] == doctest::Approx(mean).epsilon(1e-14));
        }
    }
    for (const auto& c : clients) CHECK(max_param_diff(c, clients[0]) == 0.0);
    const auto once = clients;
    fedavg_round(clients);
    CHECK(max_param_diff(once[0], clients[0]) < 1e-15);

    clients.push_back(nn::make_model({3, {5}, 2, 3, 1}, 9, rng));
    CHECK_THROWS_AS(fedavg_round(clients), ConfigError);
}

TEST_CASE("mhd with zero distillation weights reproduces separate training") {
    auto c = tiny_config();
    c.distill.nu_emb = 0.0;
    c.distill.nu_aux = 0.0;
    c.mode = BaselineMode::mhd;
    const auto a = run_experiment(c);
    c.mode = BaselineMode::separate;
    const auto b = run_experiment(c);
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].beta_sh == b.records[i].beta_sh);
        CHECK(a.records[i].beta_priv == b.records[i].beta_priv);
        CHECK(a.records[i].loss_ce == b.records[i].loss_ce);
    }
    for (std::size_t i = 0; i < a.models.size(); ++i) CHECK(a.models[i].main_head == b.models[i].main_head);
}

TEST_CASE("runs are reproducible and independent of threading") {
    auto c = tiny_config();
    const auto a = run_experiment(c);
    const auto b = run_experiment(c);
    CHECK(jsonl(a) == jsonl(b));
    c.deterministic = false;
    const auto p = run_experiment(c);
    CHECK(jsonl(a) == jsonl(p));
    c.seed = 8;
    c.deterministic = true;
    CHECK(jsonl(run_experiment(c)) != jsonl(a));
}

TEST_CASE("records cover every eval step, client and head") {
    auto c = tiny_config();
    std::size_t streamed = 0;
    const auto r = run_experiment(c, [&](const metrics::MetricsRecord&) { ++streamed; });
    // steps 30 and 60, 3 clients, 3 heads
    CHECK(r.records.size() == 2 * 3 * 3);
    CHECK(streamed == r.records.size());
    CHECK(final_records(r.records).size() == 9);
    for (const auto& rec : r.records) {
        CHECK(rec.beta_sh >= 0.0);
        CHECK(rec.beta_sh <= 1.0);
        CHECK(rec.beta_priv >= 0.0);
        CHECK(rec.beta_priv <= 1.0);
    }
    CHECK(r.cross_client.clients == 3);
    CHECK(!r.hops.empty());
    CHECK(r.records.back().bytes_communicated > 0);
}

TEST_CASE("heterogeneous backbones distill but cannot be averaged") {
    auto c = tiny_config();
    c.hidden_overrides[1] = {12, 6};
    c.mode = BaselineMode::mhd;
    const auto r = run_experiment(c);
    CHECK(r.models[1].backbone.layers.size() == 3);
    CHECK(r.models[0].backbone.layers.size() == 2);
    c.mode = BaselineMode::fedavg;
    CHECK_THROWS_AS(run_experiment(c), ConfigError);
}

TEST_CASE("fedavg and pooled baselines share one model") {
    auto c = tiny_config();
    c.mode = BaselineMode::fedavg;
    c.fedavg_interval = 1;
    const auto f = run_experiment(c);
    for (const auto& m : f.models) CHECK(max_param_diff(m, f.models[0]) == 0.0);
    c.mode = BaselineMode::pooled_supervised;
    const auto p = run_experiment(c);
    for (const auto& m : p.models) CHECK(max_param_diff(m, p.models[0]) == 0.0);
    CHECK(p.records.back().bytes_communicated == 0);
}

TEST_CASE("a diverging run reports the client and step") {
    auto c = tiny_config();
    c.optimizer.lr = 1e6;
    c.dataset.cluster_separation = 50.0;
    CHECK_THROWS_AS(run_experiment(c), DivergenceError);
}

TEST_CASE("invalid run configurations are rejected") {
    auto c = tiny_config();
    c.pool_interval = 0;
    CHECK_THROWS_AS(run_experiment(c), ConfigError);
    c = tiny_config();
    c.eval_interval = 0;
    CHECK_THROWS_AS(run_experiment(c), ConfigError);
    c = tiny_config();
    c.distill.delta = 0;
    CHECK_THROWS_AS(run_experiment(c), ConfigError);
}
