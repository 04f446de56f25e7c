#include "mhd/federation.hpp"

#include "mhd/checkpoint.hpp"
#include "mhd/error.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <sstream>

namespace mhd::fed {
namespace {

Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t count) {
    Matrix out(count, m.cols);
    std::copy(m.data.begin() + static_cast<std::ptrdiff_t>(begin * m.cols),
              m.data.begin() + static_cast<std::ptrdiff_t>((begin + count) * m.cols), out.data.begin());
    return out;
}

// Embeds `rows` at row offset `begin` of a zero matrix with `total` rows.
Matrix pad_rows(const Matrix& rows, std::size_t begin, std::size_t total, std::size_t cols) {
    Matrix out(total, cols);
    if (rows.empty()) return out;
    std::copy(rows.data.begin(), rows.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(begin * cols));
    return out;
}

void check_finite(const StepLosses& l) {
    if (!std::isfinite(l.total)) throw DivergenceError("non-finite training loss");
}

StepLosses to_step_losses(const distill::DistillLoss& l) {
    return StepLosses{l.total, l.ce, l.emb, l.aux, l.aux_per_head};
}

StepLosses ce_only_step(nn::ClientModel& model, nn::OptState& opt, const data::LabeledTable& batch) {
    nn::ForwardCache cache;
    const auto fwd = nn::forward(model, batch.features, cache);
    auto ce = nn::cross_entropy_grad(fwd.logits[0], batch.labels);
    StepLosses losses{ce.loss, ce.loss, 0.0, 0.0, std::vector<double>(model.num_aux_heads(), 0.0)};
    check_finite(losses);
    std::vector<Matrix> grads(model.num_heads());
    grads[0] = std::move(ce.grad);
    sgd_step(model, nn::backward(model, cache, grads), opt);
    return losses;
}

// Sum of CE on the private rows and distillation on the public rows, as one
// forward/backward over the stacked batch.
StepLosses combined_step(nn::ClientModel& model, nn::OptState& opt, const data::LabeledTable& private_batch,
                         const Matrix& public_batch, std::span<const distill::TeacherOutputs> teachers,
                         const distill::DistillConfig& config, Rng& selection_rng) {
    const std::size_t bp = private_batch.size();
    const std::size_t bq = public_batch.rows;
    const std::size_t total = bp + bq;
    const std::size_t d = model.num_classes();

    nn::ForwardCache cache;
    const auto fwd = nn::forward(model, vstack(private_batch.features, public_batch), cache);
    const Matrix private_main = slice_rows(fwd.logits[0], 0, bp);
    std::vector<Matrix> public_logits;
    for (const auto& l : fwd.logits) public_logits.push_back(slice_rows(l, bp, bq));
    const Matrix public_emb = slice_rows(fwd.embeddings, bp, bq);

    distill::StudentBatchOutputs student;
    student.private_main_logits = &private_main;
    student.private_labels = private_batch.labels;
    student.public_embeddings = &public_emb;
    student.public_logits = public_logits;
    const auto loss = distill::total_distill_loss(student, teachers, config, selection_rng);
    StepLosses out = to_step_losses(loss);
    check_finite(out);

    std::vector<Matrix> grads(model.num_heads());
    grads[0] = pad_rows(loss.grad_private_main, 0, total, d);
    for (std::size_t r = 1; r < model.num_heads(); ++r)
        if (!loss.grad_public_logits[r].empty()) grads[r] = pad_rows(loss.grad_public_logits[r], bp, total, d);
    Matrix emb_grad;
    const Matrix* emb_grad_ptr = nullptr;
    if (!loss.grad_public_embedding.empty()) {
        emb_grad = pad_rows(loss.grad_public_embedding, bp, total, model.embedding_dim());
        emb_grad_ptr = &emb_grad;
    }
    sgd_step(model, nn::backward(model, cache, grads, emb_grad_ptr), opt);
    return out;
}

void add_losses(StepLosses& into, const StepLosses& l) {
    into.total += l.total;
    into.ce += l.ce;
    into.emb += l.emb;
    into.aux += l.aux;
    into.aux_per_head.resize(std::max(into.aux_per_head.size(), l.aux_per_head.size()), 0.0);
    for (std::size_t i = 0; i < l.aux_per_head.size(); ++i) into.aux_per_head[i] += l.aux_per_head[i];
}

std::vector<std::size_t> sample_with_replacement(std::size_t population, std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = uniform_index(rng, population);
    return idx;
}

}  // namespace

void pool_update(CheckpointPool& pool, const Topology& topology,
                 std::span<const std::shared_ptr<const std::vector<std::uint8_t>>> snapshots, std::size_t step, Rng& rng) {
    const auto neighbors = topology.out_neighbors(pool.owner, step);
    if (neighbors.empty() || pool.capacity == 0) return;
    const int source = neighbors[uniform_index(rng, neighbors.size())];
    const auto& bytes = snapshots[static_cast<std::size_t>(source)];
    if (!bytes) throw ConfigError("pool_update: missing snapshot for client " + std::to_string(source));

    PoolEntry entry;
    entry.source = source;
    entry.step = step;
    entry.bytes = *bytes;
    entry.model = std::make_shared<const nn::ClientModel>(checkpoint::deserialize(entry.bytes));
    if (pool.entries.size() < pool.capacity)
        pool.entries.push_back(std::move(entry));
    else
        pool.entries[uniform_index(rng, pool.entries.size())] = std::move(entry);
}

std::vector<const PoolEntry*> sample_teachers(const CheckpointPool& pool, std::size_t delta, Rng& rng) {
    if (delta < 1) throw ConfigError("sample_teachers: delta must be at least 1");
    std::vector<std::size_t> idx(pool.entries.size());
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t n = std::min(delta, idx.size());
    for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
    std::vector<const PoolEntry*> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(&pool.entries[idx[i]]);
    return out;
}

std::uint64_t mhd_exchange_bytes(std::size_t batch, std::size_t embedding_dim, std::size_t heads_shared,
                                 bool send_embeddings, std::size_t num_classes, const CommAccounting& acc) {
    const std::size_t k = std::min(acc.top_k, num_classes);
    std::uint64_t per_sample = acc.sample_id_bytes + heads_shared * k * (acc.index_bytes + acc.value_bytes);
    if (send_embeddings) per_sample += embedding_dim * acc.value_bytes;
    return per_sample * batch;
}

std::uint64_t fedavg_exchange_bytes(std::size_t parameter_count, const CommAccounting& acc) {
    return 2ULL * parameter_count * acc.value_bytes;
}

nn::ModelArch client_arch(const RunConfig& config, int client) {
    nn::ModelArch arch = config.model;
    if (auto it = config.hidden_overrides.find(client); it != config.hidden_overrides.end()) arch.hidden = it->second;
    return arch;
}

RunConfig resolve(RunConfig config) {
    config.dataset.seed = derive_seed(config.seed, {stream::dataset});
    config.partition.seed = derive_seed(config.seed, {stream::partition});
    config.topology.seed = derive_seed(config.seed, {stream::topology});
    config.topology.num_clients = config.partition.num_clients;
    config.model.num_classes = config.dataset.num_classes;
    config.model.input_dim = config.dataset.input_dim;
    config.distill.num_aux_heads = config.model.num_aux_heads;
    if (config.pool_size == 0) config.pool_size = config.partition.num_clients;
    validate(config);
    return config;
}

void validate(const RunConfig& c) {
    data::validate(c.dataset);
    data::validate(c.partition, c.dataset.num_classes);
    distill::validate(c.distill);
    if (c.total_steps == 0) throw ConfigError("run.total_steps must be positive");
    if (c.eval_interval == 0) throw ConfigError("run.eval_interval must be positive");
    if (c.pool_interval == 0) throw ConfigError("pool.interval must be positive");
    if (c.optimizer.batch_size == 0 || c.optimizer.public_batch_size == 0)
        throw ConfigError("optimizer batch sizes must be positive");
    if (!(c.optimizer.lr > 0.0)) throw ConfigError("optimizer.lr must be positive");
    if (!(c.optimizer.momentum >= 0.0 && c.optimizer.momentum < 1.0)) throw ConfigError("optimizer.momentum must be in [0,1)");
    if (c.mode == BaselineMode::fedavg && c.fedavg_interval < 1) throw ConfigError("baseline.fedavg_interval must be at least 1");
    if (c.mode == BaselineMode::fedavg && !c.hidden_overrides.empty())
        throw ConfigError("fedavg requires identical client architectures (model.hidden_overrides is set)");
    for (const auto& [client, widths] : c.hidden_overrides)
        if (client < 0 || static_cast<std::size_t>(client) >= c.partition.num_clients)
            throw ConfigError("model.hidden_overrides references unknown client " + std::to_string(client));
    if (c.model.num_aux_heads < 1 && c.mode == BaselineMode::mhd && c.distill.nu_aux > 0.0)
        throw ConfigError("model.num_aux_heads must be at least 1 when distill.nu_aux > 0");
    Topology check(c.topology);
    (void)check;
}

StepLosses train_step(nn::ClientModel& model, nn::OptState& opt, const data::LabeledTable& private_batch,
                      const Matrix& public_batch, std::span<const nn::ClientModel* const> teachers,
                      const distill::DistillConfig& config, Rng& selection_rng, bool interleave) {
    const bool distilling = !teachers.empty() && (config.nu_emb > 0.0 || config.nu_aux > 0.0);
    if (!distilling) return ce_only_step(model, opt, private_batch);

    std::vector<distill::TeacherOutputs> outputs;
    outputs.reserve(teachers.size());
    for (const auto* t : teachers) {
        if (t->embedding_dim() != model.embedding_dim())
            throw ConfigError("train_step: teacher embedding size differs from the student's");
        outputs.push_back(distill::make_teacher_outputs(*t, public_batch, config.temperature));
    }
    if (!interleave) return combined_step(model, opt, private_batch, public_batch, outputs, config, selection_rng);

    StepLosses out = ce_only_step(model, opt, private_batch);
    const data::LabeledTable none{Matrix(0, private_batch.features.cols), {}, private_batch.num_classes};
    add_losses(out, combined_step(model, opt, none, public_batch, outputs, config, selection_rng));
    return out;
}

void fedavg_round(std::span<nn::ClientModel> clients) {
    if (clients.empty()) return;
    for (const auto& c : clients)
        if (!nn::same_architecture(c, clients[0]))
            throw ConfigError("fedavg_round: client " + std::to_string(c.client_id) + " has a different architecture");
    const double inv = 1.0 / static_cast<double>(clients.size());
    std::vector<std::vector<nn::NamedTensor>> ts;
    for (auto& c : clients) ts.push_back(nn::tensors(c));
    for (std::size_t t = 0; t < ts[0].size(); ++t) {
        for (std::size_t i = 0; i < ts[0][t].values.size(); ++i) {
            double sum = 0.0;
            for (const auto& client : ts) sum += client[t].values[i];
            const double mean = sum * inv;
            for (auto& client : ts) client[t].values[i] = mean;
        }
    }
}

std::string CommReport::to_text() const {
    std::ostringstream os;
    os << "parameters_per_model " << parameter_count << '\n'
       << "mhd_bytes_per_exchange " << mhd_bytes_per_exchange << '\n'
       << "fedavg_bytes_per_exchange " << fedavg_bytes_per_exchange << '\n'
       << "fedavg_to_mhd_ratio " << ratio << '\n';
    return os.str();
}

CommReport communication_report(const RunConfig& raw) {
    const RunConfig config = resolve(raw);
    Rng rng(0);
    const auto model = nn::make_model(client_arch(config, 0), 0, rng);
    CommReport r;
    r.parameter_count = nn::parameter_count(model);
    const std::size_t heads = std::min(model.num_heads(), model.num_aux_heads() + (config.distill.include_same_level ? 1 : 0));
    r.mhd_bytes_per_exchange =
        mhd_exchange_bytes(config.optimizer.public_batch_size, model.embedding_dim(), config.distill.nu_aux > 0 ? heads : 0,
                           config.distill.nu_emb > 0, model.num_classes(), config.comm);
    r.fedavg_bytes_per_exchange = fedavg_exchange_bytes(r.parameter_count, config.comm);
    r.ratio = r.mhd_bytes_per_exchange > 0
                  ? static_cast<double>(r.fedavg_bytes_per_exchange) / static_cast<double>(r.mhd_bytes_per_exchange)
                  : 0.0;
    return r;
}

namespace {

struct ClientState {
    nn::ClientModel model;
    nn::OptState opt;
    CheckpointPool pool;
    data::LabeledTable shard;
    Rng private_rng, public_rng, teacher_rng, selection_rng, pool_rng;
    std::uint64_t bytes = 0;
    StepLosses loss_sum;
    std::size_t loss_steps = 0;
};

}  // namespace

RunResult run_experiment(const RunConfig& raw, const MetricsSink& sink) {
    const RunConfig cfg = resolve(raw);
    const std::size_t num_clients = cfg.partition.num_clients;
    const bool pooled = cfg.mode == BaselineMode::pooled_supervised;

    auto table = std::make_shared<const data::LabeledTable>(data::generate_dataset(cfg.dataset));
    auto dataset = std::make_shared<const data::PartitionedDataset>(data::partition(table, cfg.partition));
    const data::LabeledTable test = dataset->shared_test();
    const Matrix public_features = dataset->public_features();
    if (cfg.mode == BaselineMode::mhd && public_features.rows == 0) throw ConfigError("public split is empty");
    std::vector<std::vector<double>> marginals;
    for (std::size_t i = 0; i < num_clients; ++i) marginals.push_back(dataset->client_label_marginal(i));
    std::vector<double> test_marginal(test.num_classes, 0.0);
    for (int y : test.labels) test_marginal[static_cast<std::size_t>(y)] += 1.0 / static_cast<double>(test.size());

    const Topology topology(cfg.topology);

    // The pooled baseline trains one model on the union of the shards with a
    // single client's batch size.
    const std::size_t num_models = pooled ? 1 : num_clients;
    std::vector<ClientState> clients(num_models);
    for (std::size_t i = 0; i < num_models; ++i) {
        auto& c = clients[i];
        const auto id = static_cast<std::uint64_t>(i);
        Rng init(derive_seed(cfg.seed, {stream::init, id}));
        c.model = nn::make_model(client_arch(cfg, static_cast<int>(i)), static_cast<int>(i), init);
        c.opt = nn::make_opt_state(c.model, cfg.optimizer.lr, cfg.optimizer.momentum, cfg.total_steps);
        c.pool = CheckpointPool{static_cast<int>(i), cfg.pool_size, cfg.pool_interval, {}};
        if (pooled) {
            std::vector<std::size_t> all;
            for (const auto& idx : dataset->client_indices) all.insert(all.end(), idx.begin(), idx.end());
            std::sort(all.begin(), all.end());
            c.shard = data::subset(*table, all);
        } else {
            c.shard = dataset->client_shard(i);
        }
        if (c.shard.size() == 0) throw ConfigError("client " + std::to_string(i) + " received no private samples");
        c.private_rng.seed(derive_seed(cfg.seed, {stream::private_batch, id}));
        c.public_rng.seed(derive_seed(cfg.seed, {stream::public_batch, id}));
        c.teacher_rng.seed(derive_seed(cfg.seed, {stream::teachers, id}));
        c.selection_rng.seed(derive_seed(cfg.seed, {stream::selection, id}));
        c.pool_rng.seed(derive_seed(cfg.seed, {stream::pool, id}));
        c.loss_sum.aux_per_head.assign(c.model.num_aux_heads(), 0.0);
    }
    const std::size_t private_batch_size = cfg.optimizer.batch_size;

    RunResult result;
    result.dataset = dataset;
    auto emit = [&](std::size_t step) {
        for (std::size_t i = 0; i < num_clients; ++i) {
            auto& c = clients[pooled ? 0 : i];
            const auto pc = metrics::per_class_accuracy(c.model, test);
            const double n = c.loss_steps > 0 ? static_cast<double>(c.loss_steps) : 1.0;
            for (std::size_t r = 0; r < c.model.num_heads(); ++r) {
                metrics::MetricsRecord rec;
                rec.step = step;
                rec.client = static_cast<int>(i);
                rec.head = r;
                rec.beta_priv = metrics::reweighted_accuracy(pc[r], marginals[i]);
                rec.beta_sh = metrics::reweighted_accuracy(pc[r], test_marginal);
                rec.loss_ce = c.loss_sum.ce / n;
                rec.loss_emb = c.loss_sum.emb / n;
                rec.loss_aux = r == 0 ? c.loss_sum.aux / n : c.loss_sum.aux_per_head[r - 1] / n;
                rec.bytes_communicated = c.bytes;
                result.records.push_back(rec);
                if (sink) sink(rec);
            }
        }
        for (auto& c : clients) {
            c.loss_sum = StepLosses{};
            c.loss_sum.aux_per_head.assign(c.model.num_aux_heads(), 0.0);
            c.loss_steps = 0;
        }
    };

    const std::uint64_t fedavg_bytes = fedavg_exchange_bytes(nn::parameter_count(clients[0].model), cfg.comm);
    const std::size_t same_level = cfg.distill.include_same_level ? 1 : 0;

    for (std::size_t step = 0; step < cfg.total_steps; ++step) {
        std::vector<std::exception_ptr> errors(num_models);
        const auto n_models = static_cast<std::ptrdiff_t>(num_models);
#pragma omp parallel for schedule(static) if (!cfg.deterministic)
        for (std::ptrdiff_t ii = 0; ii < n_models; ++ii) {
            const auto i = static_cast<std::size_t>(ii);
            auto& c = clients[i];
            try {
                const auto rows = sample_with_replacement(c.shard.size(), private_batch_size, c.private_rng);
                const data::LabeledTable batch = data::subset(c.shard, rows);
                std::vector<const nn::ClientModel*> teachers;
                Matrix public_batch;
                if (cfg.mode == BaselineMode::mhd) {
                    for (const auto* e : sample_teachers(c.pool, cfg.distill.delta, c.teacher_rng))
                        teachers.push_back(e->model.get());
                    if (!teachers.empty()) {
                        const auto prow = sample_with_replacement(public_features.rows, cfg.optimizer.public_batch_size,
                                                                  c.public_rng);
                        public_batch = gather_rows(public_features, prow);
                        for (const auto* t : teachers) {
                            const std::size_t heads = std::min(t->num_heads(), c.model.num_aux_heads() + same_level);
                            c.bytes += mhd_exchange_bytes(public_batch.rows, t->embedding_dim(),
                                                          cfg.distill.nu_aux > 0 ? heads : 0, cfg.distill.nu_emb > 0,
                                                          t->num_classes(), cfg.comm);
                        }
                    }
                }
                const auto losses = train_step(c.model, c.opt, batch, public_batch, teachers, cfg.distill,
                                               c.selection_rng, cfg.interleave);
                add_losses(c.loss_sum, losses);
                ++c.loss_steps;
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
        for (std::size_t i = 0; i < num_models; ++i) {
            if (!errors[i]) continue;
            try {
                std::rethrow_exception(errors[i]);
            } catch (const DivergenceError& e) {
                throw DivergenceError("client " + std::to_string(i) + " at step " + std::to_string(step) + ": " + e.what());
            }
        }

        const std::size_t done = step + 1;
        if (cfg.mode == BaselineMode::mhd && done % cfg.pool_interval == 0) {
            std::vector<std::shared_ptr<const std::vector<std::uint8_t>>> snapshots;
            for (const auto& c : clients)
                snapshots.push_back(std::make_shared<const std::vector<std::uint8_t>>(checkpoint::serialize(c.model)));
            for (auto& c : clients) pool_update(c.pool, topology, snapshots, done, c.pool_rng);
        }
        if (cfg.mode == BaselineMode::fedavg && done % cfg.fedavg_interval == 0) {
            std::vector<nn::ClientModel> models;
            for (auto& c : clients) models.push_back(std::move(c.model));
            fedavg_round(models);
            for (std::size_t i = 0; i < num_models; ++i) {
                clients[i].model = std::move(models[i]);
                clients[i].opt.momentum = nn::zeros_like(clients[i].model);
                clients[i].bytes += fedavg_bytes;
            }
        }
        if (done % cfg.eval_interval == 0 || done == cfg.total_steps) emit(done);
    }

    for (std::size_t i = 0; i < num_clients; ++i) result.models.push_back(clients[pooled ? 0 : i].model);
    result.cross_client = metrics::cross_client_matrix(result.models, test, marginals);
    if (topology.is_static()) result.hops = metrics::hop_distance_report(result.cross_client, topology);
    result.comm = communication_report(raw);
    return result;
}

std::vector<metrics::MetricsRecord> final_records(const std::vector<metrics::MetricsRecord>& records) {
    std::size_t last = 0;
    for (const auto& r : records) last = std::max(last, r.step);
    std::vector<metrics::MetricsRecord> out;
    for (const auto& r : records)
        if (r.step == last) out.push_back(r);
    return out;
}

double mean_final(const std::vector<metrics::MetricsRecord>& records, std::size_t head, bool shared) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : final_records(records)) {
        if (r.head != head) continue;
        sum += shared ? r.beta_sh : r.beta_priv;
        ++n;
    }
    if (n == 0) throw InputError("mean_final: no records for head " + std::to_string(head));
    return sum / static_cast<double>(n);
}

double client_std_final(const std::vector<metrics::MetricsRecord>& records, std::size_t head, bool shared) {
    const double mean = mean_final(records, head, shared);
    double ss = 0.0;
    std::size_t n = 0;
    for (const auto& r : final_records(records)) {
        if (r.head != head) continue;
        const double v = (shared ? r.beta_sh : r.beta_priv) - mean;
        ss += v * v;
        ++n;
    }
    return std::sqrt(ss / static_cast<double>(n));
}

}  // namespace mhd::fed
