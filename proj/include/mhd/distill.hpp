#pragma once

#include "mhd/nn.hpp"
#include "mhd/rng.hpp"
#include "mhd/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

// Distillation losses and target selection.
//
// A client's loss is private cross-entropy on its main head, plus a
// normalized embedding-matching term and a chain of auxiliary-head
// prediction terms on public samples. Auxiliary head k learns from rank k−1
// heads of its teachers; for every public sample the single most confident
// candidate is used as the soft target.
namespace mhd::distill {

enum class ConfidenceMode { max_softmax, random };

struct DistillConfig {
    double nu_emb = 1.0;
    double nu_aux = 3.0;
    std::size_t num_aux_heads = 1;
    std::size_t delta = 1;  // teachers drawn per step
    ConfidenceMode confidence_mode = ConfidenceMode::max_softmax;
    bool include_self = false;          // student's own rank-k head as candidate
    bool include_same_level = false;    // teachers' rank-k heads as candidates
    bool include_own_previous = false;  // student's own rank-(k−1) head as candidate
    bool skip_if_student_more_confident = false;
    double temperature = 1.0;
};

void validate(const DistillConfig& config);

// What a teacher shares for one public batch.
struct TeacherOutputs {
    int teacher_id = 0;
    Matrix embeddings;          // [B × e]
    std::vector<Matrix> probs;  // per head rank, [B × d], rows sum to 1
};

// Runs a teacher on the public batch; probabilities use `temperature`.
TeacherOutputs make_teacher_outputs(const nn::ClientModel& teacher, const Matrix& public_batch, double temperature = 1.0);

struct LossGrad {
    double loss = 0.0;
    Matrix grad;
};

// ν_emb · Σ_j mean_b ‖ψ_b − φ_jb‖², with ψ, φ the L2-normalized student and
// teacher embeddings. Gradient is with respect to the raw student embedding.
LossGrad embedding_loss(const Matrix& student_emb, std::span<const Matrix> teacher_embs, double nu_emb);

// Largest softmax component.
double confidence(std::span<const double> probs);

// Index of the most confident candidate (lowest index on ties), or a uniform
// pick in random mode. Throws InputError on an empty list.
std::size_t select_teacher(std::span<const std::span<const double>> candidates, ConfidenceMode mode, Rng& rng);

// ν_aux · mean over unmasked rows of −Σ_k t_k log softmax(z)_k.
LossGrad aux_prediction_loss(const Matrix& student_logits, const Matrix& teacher_probs,
                             std::span<const std::uint8_t> mask, double nu_aux);

struct Candidate {
    enum class Source { teacher, self };
    Source source = Source::teacher;
    std::size_t teacher = 0;  // index into the teacher list when source == teacher
    std::size_t rank = 0;
    friend bool operator==(const Candidate&, const Candidate&) = default;
};

// Candidate heads for student head k (1 ≤ k ≤ m): teachers' rank k−1 heads,
// then optional same-level, own-previous and self entries.
std::vector<Candidate> chain_targets(std::size_t k, std::span<const TeacherOutputs> teachers, const DistillConfig& config);

// mask[b] = 0 iff the student is strictly more confident than the target.
std::vector<std::uint8_t> skip_mask(const Matrix& student_probs, const Matrix& selected_probs);

// The non-differentiable half of the objective: which soft target each
// auxiliary head sees on each public sample, and which samples are skipped.
struct DistillPlan {
    std::vector<Matrix> targets;                    // per aux head k = 1..m, [B × d]
    std::vector<std::vector<std::uint8_t>> masks;   // per aux head
    std::vector<std::size_t> self_selections;       // per aux head, samples where "self" won
};

// `student_public_logits` are the student's per-head logits on the public
// batch. Student-derived targets are constants (no gradient flows to them).
DistillPlan plan_distillation(std::span<const Matrix> student_public_logits, std::span<const TeacherOutputs> teachers,
                              const DistillConfig& config, Rng& rng);

struct StudentBatchOutputs {
    const Matrix* private_main_logits = nullptr;  // [Bp × d]
    std::span<const int> private_labels;
    const Matrix* public_embeddings = nullptr;          // [Bq × e], may be null without teachers
    std::span<const Matrix> public_logits;              // per head, [Bq × d]
};

struct DistillLoss {
    double total = 0.0;
    double ce = 0.0;
    double emb = 0.0;
    double aux = 0.0;
    std::vector<double> aux_per_head;
    Matrix grad_private_main;             // [Bp × d]
    Matrix grad_public_embedding;         // [Bq × e], empty when the term is off
    std::vector<Matrix> grad_public_logits;  // per head; rank 0 always empty
};

// CE + embedding term + Σ_k aux term for head k, with a fixed plan.
DistillLoss total_distill_loss(const StudentBatchOutputs& student, std::span<const TeacherOutputs> teachers,
                               const DistillPlan& plan, const DistillConfig& config);

// Convenience: plans, then evaluates.
DistillLoss total_distill_loss(const StudentBatchOutputs& student, std::span<const TeacherOutputs> teachers,
                               const DistillConfig& config, Rng& rng);

}  // namespace mhd::distill
