#include "mhd/distill.hpp"

#include "mhd/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mhd::distill {
namespace {

constexpr double kNormGuard = 1e-12;
constexpr double kProbTolerance = 1e-9;

double row_norm(std::span<const double> r) {
    double s = 0.0;
    for (double v : r) s += v * v;
    return std::sqrt(s);
}

double log_sum_exp(std::span<const double> z) {
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    return mx + std::log(s);
}

}  // namespace

void validate(const DistillConfig& config) {
    if (!(config.nu_emb >= 0.0)) throw ConfigError("distill.nu_emb must be non-negative");
    if (!(config.nu_aux >= 0.0)) throw ConfigError("distill.nu_aux must be non-negative");
    if (config.delta < 1) throw ConfigError("distill.delta must be at least 1");
    if (!(config.temperature > 0.0)) throw ConfigError("distill.temperature must be positive");
}

TeacherOutputs make_teacher_outputs(const nn::ClientModel& teacher, const Matrix& public_batch, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("teacher temperature must be positive");
    auto fwd = nn::forward(teacher, public_batch);
    TeacherOutputs out;
    out.teacher_id = teacher.client_id;
    out.embeddings = std::move(fwd.embeddings);
    for (auto& logits : fwd.logits) {
        if (temperature != 1.0)
            for (double& v : logits.data) v /= temperature;
        out.probs.push_back(nn::softmax_rows(logits));
    }
    return out;
}

LossGrad embedding_loss(const Matrix& student_emb, std::span<const Matrix> teacher_embs, double nu_emb) {
    LossGrad out{0.0, Matrix(student_emb.rows, student_emb.cols)};
    const std::size_t batch = student_emb.rows;
    const std::size_t e = student_emb.cols;
    if (batch == 0 || teacher_embs.empty()) return out;
    for (const auto& t : teacher_embs)
        if (t.rows != batch || t.cols != e) throw ConfigError("embedding_loss: teacher embedding shape mismatch");

    const double inv_b = 1.0 / static_cast<double>(batch);
    std::vector<double> psi(e), g(e);
    for (std::size_t b = 0; b < batch; ++b) {
        auto x = student_emb.row(b);
        const double n = std::max(row_norm(x), kNormGuard);
        for (std::size_t i = 0; i < e; ++i) psi[i] = x[i] / n;
        std::fill(g.begin(), g.end(), 0.0);
        for (const auto& t : teacher_embs) {
            auto y = t.row(b);
            const double m = std::max(row_norm(y), kNormGuard);
            for (std::size_t i = 0; i < e; ++i) {
                const double diff = psi[i] - y[i] / m;
                out.loss += nu_emb * inv_b * diff * diff;
                g[i] += 2.0 * nu_emb * inv_b * diff;
            }
        }
        // Chain rule through ψ = x/‖x‖: dψ/dx = (I − ψψᵀ)/‖x‖.
        const bool guarded = row_norm(x) < kNormGuard;
        double psi_dot_g = 0.0;
        for (std::size_t i = 0; i < e; ++i) psi_dot_g += psi[i] * g[i];
        auto dx = out.grad.row(b);
        for (std::size_t i = 0; i < e; ++i) dx[i] = guarded ? g[i] / n : (g[i] - psi[i] * psi_dot_g) / n;
    }
    return out;
}

double confidence(std::span<const double> probs) {
    if (probs.empty()) throw InputError("confidence: empty probability vector");
    return *std::max_element(probs.begin(), probs.end());
}

std::size_t select_teacher(std::span<const std::span<const double>> candidates, ConfidenceMode mode, Rng& rng) {
    if (candidates.empty()) throw InputError("select_teacher: no candidates");
    if (mode == ConfidenceMode::random) return uniform_index(rng, candidates.size());
    std::size_t best = 0;
    double best_conf = confidence(candidates[0]);
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        const double c = confidence(candidates[i]);
        if (c > best_conf) {
            best_conf = c;
            best = i;
        }
    }
    return best;
}

LossGrad aux_prediction_loss(const Matrix& student_logits, const Matrix& teacher_probs,
                             std::span<const std::uint8_t> mask, double nu_aux) {
    if (teacher_probs.rows != student_logits.rows || teacher_probs.cols != student_logits.cols)
        throw ConfigError("aux_prediction_loss: teacher/student shape mismatch");
    if (mask.size() != student_logits.rows) throw ConfigError("aux_prediction_loss: mask length mismatch");
    LossGrad out{0.0, Matrix(student_logits.rows, student_logits.cols)};

    std::size_t active = 0;
    for (std::size_t b = 0; b < teacher_probs.rows; ++b) {
        double sum = 0.0;
        for (double v : teacher_probs.row(b)) {
            if (!(v >= -kProbTolerance)) throw InputError("aux_prediction_loss: negative teacher probability");
            sum += v;
        }
        if (std::abs(sum - 1.0) > kProbTolerance)
            throw InputError("aux_prediction_loss: teacher row " + std::to_string(b) + " sums to " + std::to_string(sum));
        active += mask[b] != 0;
    }
    if (active == 0) return out;

    const double scale = nu_aux / static_cast<double>(active);
    for (std::size_t b = 0; b < student_logits.rows; ++b) {
        if (!mask[b]) continue;
        auto z = student_logits.row(b);
        auto t = teacher_probs.row(b);
        auto g = out.grad.row(b);
        const double lse = log_sum_exp(z);
        for (std::size_t k = 0; k < z.size(); ++k) {
            const double logp = z[k] - lse;
            out.loss -= scale * t[k] * logp;
            g[k] = scale * (std::exp(logp) - t[k]);
        }
    }
    return out;
}

std::vector<Candidate> chain_targets(std::size_t k, std::span<const TeacherOutputs> teachers, const DistillConfig& config) {
    if (k < 1) throw ConfigError("chain_targets: head rank must be at least 1");
    std::vector<Candidate> out;
    for (std::size_t t = 0; t < teachers.size(); ++t) {
        if (teachers[t].probs.size() < k)
            throw ConfigError("chain_targets: teacher " + std::to_string(teachers[t].teacher_id) + " has no head of rank " +
                              std::to_string(k - 1));
        out.push_back({Candidate::Source::teacher, t, k - 1});
    }
    if (config.include_same_level)
        for (std::size_t t = 0; t < teachers.size(); ++t)
            if (teachers[t].probs.size() > k) out.push_back({Candidate::Source::teacher, t, k});
    if (config.include_own_previous) out.push_back({Candidate::Source::self, 0, k - 1});
    if (config.include_self) out.push_back({Candidate::Source::self, 0, k});
    return out;
}

std::vector<std::uint8_t> skip_mask(const Matrix& student_probs, const Matrix& selected_probs) {
    if (student_probs.rows != selected_probs.rows) throw ConfigError("skip_mask: row count mismatch");
    std::vector<std::uint8_t> mask(student_probs.rows);
    for (std::size_t b = 0; b < mask.size(); ++b)
        mask[b] = confidence(student_probs.row(b)) > confidence(selected_probs.row(b)) ? 0 : 1;
    return mask;
}

DistillPlan plan_distillation(std::span<const Matrix> student_public_logits, std::span<const TeacherOutputs> teachers,
                              const DistillConfig& config, Rng& rng) {
    DistillPlan plan;
    if (student_public_logits.empty()) throw ConfigError("plan_distillation: student has no heads");
    const std::size_t m = student_public_logits.size() - 1;
    const std::size_t batch = student_public_logits[0].rows;
    const std::size_t d = student_public_logits[0].cols;

    std::vector<Matrix> student_probs;
    for (const auto& z : student_public_logits) student_probs.push_back(nn::softmax_rows(z));
    for (const auto& t : teachers)
        for (const auto& p : t.probs)
            if (p.rows != batch || p.cols != d) throw ConfigError("plan_distillation: teacher output shape mismatch");

    std::vector<std::span<const double>> rows;
    for (std::size_t k = 1; k <= m; ++k) {
        const auto cands = chain_targets(k, teachers, config);
        Matrix target(batch, d);
        std::vector<std::uint8_t> mask(batch, 1);
        std::size_t self_hits = 0;
        if (cands.empty()) mask.assign(batch, 0);
        for (std::size_t b = 0; b < batch && !cands.empty(); ++b) {
            rows.clear();
            for (const auto& c : cands)
                rows.push_back(c.source == Candidate::Source::teacher ? teachers[c.teacher].probs[c.rank].row(b)
                                                                      : student_probs[c.rank].row(b));
            const std::size_t pick = select_teacher(rows, config.confidence_mode, rng);
            std::copy(rows[pick].begin(), rows[pick].end(), target.row(b).begin());
            const Candidate& c = cands[pick];
            if (c.source == Candidate::Source::self && c.rank == k) {
                // Distilling a head into itself: no-op for this sample.
                mask[b] = 0;
                ++self_hits;
            }
            if (config.skip_if_student_more_confident &&
                confidence(student_probs[k].row(b)) > confidence(rows[pick]))
                mask[b] = 0;
        }
        plan.targets.push_back(std::move(target));
        plan.masks.push_back(std::move(mask));
        plan.self_selections.push_back(self_hits);
    }
    return plan;
}

DistillLoss total_distill_loss(const StudentBatchOutputs& student, std::span<const TeacherOutputs> teachers,
                               const DistillPlan& plan, const DistillConfig& config) {
    if (student.private_main_logits == nullptr) throw ConfigError("total_distill_loss: missing private logits");
    DistillLoss out;
    auto ce = nn::cross_entropy_grad(*student.private_main_logits, student.private_labels);
    out.ce = ce.loss;
    out.grad_private_main = std::move(ce.grad);
    out.grad_public_logits.resize(std::max<std::size_t>(student.public_logits.size(), 1));
    out.aux_per_head.assign(out.grad_public_logits.size() - 1, 0.0);

    if (!teachers.empty()) {
        if (config.nu_emb > 0.0) {
            if (student.public_embeddings == nullptr) throw ConfigError("total_distill_loss: missing public embeddings");
            std::vector<Matrix> embs;
            for (const auto& t : teachers) embs.push_back(t.embeddings);
            auto emb = embedding_loss(*student.public_embeddings, embs, config.nu_emb);
            out.emb = emb.loss;
            out.grad_public_embedding = std::move(emb.grad);
        }
        if (config.nu_aux > 0.0) {
            const std::size_t m = student.public_logits.size() - 1;
            if (plan.targets.size() != m) throw ConfigError("total_distill_loss: plan does not match head count");
            for (std::size_t k = 1; k <= m; ++k) {
                auto aux = aux_prediction_loss(student.public_logits[k], plan.targets[k - 1], plan.masks[k - 1], config.nu_aux);
                out.aux_per_head[k - 1] = aux.loss;
                out.aux += aux.loss;
                out.grad_public_logits[k] = std::move(aux.grad);
            }
        }
    }
    out.total = out.ce + out.emb + out.aux;
    return out;
}

DistillLoss total_distill_loss(const StudentBatchOutputs& student, std::span<const TeacherOutputs> teachers,
                               const DistillConfig& config, Rng& rng) {
    DistillPlan plan;
    if (!teachers.empty() && config.nu_aux > 0.0)
        plan = plan_distillation(student.public_logits, teachers, config, rng);
    return total_distill_loss(student, teachers, plan, config);
}

}  // namespace mhd::distill
