#include "mhd/verify.hpp"

#include "mhd/analysis.hpp"
#include "mhd/distill.hpp"
#include "mhd/nn.hpp"
#include "mhd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

namespace mhd::verify {
namespace {

constexpr double kGradTol = 1e-5;
constexpr double kGradEps = 1e-4;
constexpr double kInputScale = 1.0;

enum class Term { ce, embedding, aux, combined };

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double sigma = 1.0) {
    std::normal_distribution<double> n(0.0, sigma);
    Matrix m(r, c);
    for (double& v : m.data) v = n(rng);
    return m;
}

std::vector<double> random_vector(std::size_t n, double sigma, Rng& rng) {
    std::normal_distribution<double> dist(0.0, sigma);
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

// A small student, two teachers with deeper head stacks, and a frozen plan.
struct GradProblem {
    nn::ClientModel student;
    Matrix private_x;
    std::vector<int> private_y;
    Matrix public_x;
    std::vector<distill::TeacherOutputs> teachers;
    distill::DistillPlan plan;
    distill::DistillConfig config;
};

GradProblem make_problem(std::uint64_t seed) {
    Rng rng(seed);
    const nn::ModelArch arch{6, {8}, 8, 5, 2};
    GradProblem p;
    p.student = nn::make_model(arch, 0, rng);
    // Non-zero biases so every parameter is exercised away from symmetric points.
    for (auto& t : nn::tensors(p.student))
        for (double& v : t.values) v += 0.1 * std::normal_distribution<double>(0.0, 1.0)(rng);
    // Inputs at the scale of the synthetic clusters (centers at distance 3).
    p.private_x = random_matrix(5, arch.input_dim, rng, kInputScale);
    for (std::size_t i = 0; i < 5; ++i) p.private_y.push_back(static_cast<int>(uniform_index(rng, arch.num_classes)));
    p.public_x = random_matrix(4, arch.input_dim, rng, kInputScale);
    nn::ModelArch teacher_arch = arch;
    teacher_arch.num_aux_heads = 3;
    for (int t = 1; t <= 2; ++t) {
        const auto teacher = nn::make_model(teacher_arch, t, rng);
        p.teachers.push_back(distill::make_teacher_outputs(teacher, p.public_x));
    }
    p.config.nu_emb = 1.0 + uniform01(rng);
    p.config.nu_aux = 1.0 + 2.0 * uniform01(rng);
    p.config.num_aux_heads = arch.num_aux_heads;
    p.config.include_same_level = seed % 2 == 0;
    p.config.skip_if_student_more_confident = seed % 3 == 0;
    const auto fwd = nn::forward(p.student, p.public_x);
    Rng sel(derive_seed(seed, {stream::selection}));
    p.plan = distill::plan_distillation(fwd.logits, p.teachers, p.config, sel);
    return p;
}

nn::LossAndGrad evaluate(const GradProblem& p, const nn::ClientModel& model, Term term) {
    const std::size_t bp = p.private_x.rows;
    const std::size_t bq = p.public_x.rows;
    const std::size_t d = model.num_classes();
    nn::ForwardCache cache;
    const auto fwd = nn::forward(model, vstack(p.private_x, p.public_x), cache);

    auto rows = [](const Matrix& m, std::size_t begin, std::size_t n) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = begin + i;
        return gather_rows(m, idx);
    };
    auto place = [&](const Matrix& g, std::size_t begin, std::size_t cols) {
        Matrix out(bp + bq, cols);
        for (std::size_t r = 0; r < g.rows; ++r)
            std::copy(g.row(r).begin(), g.row(r).end(), out.row(begin + r).begin());
        return out;
    };

    const Matrix private_main = rows(fwd.logits[0], 0, bp);
    const Matrix public_emb = rows(fwd.embeddings, bp, bq);
    std::vector<Matrix> public_logits;
    for (const auto& l : fwd.logits) public_logits.push_back(rows(l, bp, bq));

    std::vector<Matrix> logit_grads(model.num_heads());
    Matrix emb_grad;
    double loss = 0.0;
    switch (term) {
        case Term::ce: {
            auto ce = nn::cross_entropy_grad(private_main, p.private_y);
            loss = ce.loss;
            logit_grads[0] = place(ce.grad, 0, d);
            break;
        }
        case Term::embedding: {
            std::vector<Matrix> embs;
            for (const auto& t : p.teachers) embs.push_back(t.embeddings);
            auto e = distill::embedding_loss(public_emb, embs, p.config.nu_emb);
            loss = e.loss;
            emb_grad = place(e.grad, bp, model.embedding_dim());
            break;
        }
        case Term::aux: {
            for (std::size_t k = 1; k < model.num_heads(); ++k) {
                auto a = distill::aux_prediction_loss(public_logits[k], p.plan.targets[k - 1], p.plan.masks[k - 1],
                                                      p.config.nu_aux);
                loss += a.loss;
                logit_grads[k] = place(a.grad, bp, d);
            }
            break;
        }
        case Term::combined: {
            distill::StudentBatchOutputs s;
            s.private_main_logits = &private_main;
            s.private_labels = p.private_y;
            s.public_embeddings = &public_emb;
            s.public_logits = public_logits;
            auto l = distill::total_distill_loss(s, p.teachers, p.plan, p.config);
            loss = l.total;
            logit_grads[0] = place(l.grad_private_main, 0, d);
            for (std::size_t k = 1; k < model.num_heads(); ++k)
                if (!l.grad_public_logits[k].empty()) logit_grads[k] = place(l.grad_public_logits[k], bp, d);
            if (!l.grad_public_embedding.empty()) emb_grad = place(l.grad_public_embedding, bp, model.embedding_dim());
            break;
        }
    }
    return {loss, nn::backward(model, cache, logit_grads, emb_grad.empty() ? nullptr : &emb_grad)};
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << std::scientific << v;
    return os.str();
}

}  // namespace

std::vector<CheckResult> gradient_suite(const VerifyOptions& options) {
    const std::pair<Term, const char*> terms[] = {{Term::ce, "gradient.ce"},
                                                  {Term::embedding, "gradient.embedding"},
                                                  {Term::aux, "gradient.aux"},
                                                  {Term::combined, "gradient.combined"}};
    std::vector<CheckResult> out;
    for (const auto& [term, name] : terms) {
        CheckResult r{name, true, 0.0, ""};
        std::string worst;
        std::uint64_t worst_seed = 0;
        std::size_t kinks = 0, checked = 0;
        for (std::size_t s = 0; s < options.seeds; ++s) {
            const std::uint64_t seed = derive_seed(options.base_seed, {s});
            const GradProblem problem = make_problem(seed);
            const bool fault = options.inject_fault && term == Term::combined;
            nn::LossClosure closure = [&problem, term, fault](const nn::ClientModel& m) {
                auto lg = evaluate(problem, m, term);
                if (fault)
                    for (double& g : lg.grads.main_head.weight.data) g *= 1.01;
                return lg;
            };
            nn::GradCheckOptions gc;
            gc.eps = kGradEps;
            gc.tol = kGradTol;
            gc.seed = seed;
            const Matrix all_inputs = vstack(problem.private_x, problem.public_x);
            gc.activation_pattern = [&all_inputs](const nn::ClientModel& m) { return nn::relu_pattern(m, all_inputs); };
            const auto rep = nn::grad_check(problem.student, closure, gc);
            kinks += rep.skipped_kinks;
            checked += rep.checked;
            if (rep.max_rel_error >= r.measured) {
                r.measured = rep.max_rel_error;
                worst = rep.worst_parameter;
                worst_seed = s;
            }
        }
        r.passed = r.measured < kGradTol;
        r.detail = "max_rel_err over " + std::to_string(options.seeds) + " seeds (tol " + fmt(kGradTol) + "), worst " +
                   worst + " seed#" + std::to_string(worst_seed) + ", " + std::to_string(checked) + " entries, " +
                   std::to_string(kinks) + " skipped at ReLU kinks";
        out.push_back(r);
    }
    return out;
}

std::vector<CheckResult> analysis_checks(const VerifyOptions& options) {
    std::vector<CheckResult> out;
    Rng rng(derive_seed(options.base_seed, {0xa11a}));

    // Softmax perturbation: the linear term sums to zero and the remainder is
    // second order in ε, so halving ε divides it by about 4.
    {
        analysis::PerturbationCase c;
        c.logits = random_vector(5, 1.0, rng);
        c.perturbation = random_vector(5, 1.0, rng);
        for (double eps = 0.1; c.scales.size() < 6; eps /= 2.0) c.scales.push_back(eps);
        const auto res = analysis::softmax_perturbation_residual(c);
        out.push_back({"softmax.linear_term_sum", std::abs(res.linear_term_sum) <= 1e-15, std::abs(res.linear_term_sum),
                       "|Σ δ_m|, tol 1e-15"});
        const auto ratios = analysis::successive_ratios(res.residuals);
        double lo = ratios.front(), hi = ratios.front();
        std::string list;
        for (double r : ratios) {
            lo = std::min(lo, r);
            hi = std::max(hi, r);
            list += (list.empty() ? "" : ",") + fmt(r);
        }
        out.push_back({"softmax.halving_ratio", lo >= 3.5 && hi <= 4.5, lo,
                       "ratios [" + list + "] must lie in [3.5, 4.5]"});
    }

    // Stationary residual: zero for identical models, linear in ν.
    {
        const std::size_t n = 4, samples = 16, d = 5;
        Matrix nu(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) {
                    nu(i, j) = uniform01(rng);
                    s += nu(i, j);
                }
            nu(i, i) = -s;
        }
        const Matrix shared = nn::softmax_rows(random_matrix(samples, d, rng));
        const std::vector<Matrix> same(n, shared);
        const auto r0 = analysis::stationary_residual(same, nu);
        double m0 = 0.0;
        for (double v : r0) m0 = std::max(m0, std::abs(v));
        out.push_back({"stationary.identical_models", m0 <= 1e-12, m0, "max |residual|, tol 1e-12"});

        std::vector<Matrix> distinct;
        for (std::size_t i = 0; i < n; ++i) distinct.push_back(nn::softmax_rows(random_matrix(samples, d, rng)));
        Matrix nu2 = nu;
        for (double& v : nu2.data) v *= 2.0;
        const auto r1 = analysis::stationary_residual(distinct, nu);
        const auto r2 = analysis::stationary_residual(distinct, nu2);
        double lin = 0.0;
        for (std::size_t k = 0; k < d; ++k) lin = std::max(lin, std::abs(r2[k] - 2.0 * r1[k]));
        out.push_back({"stationary.linear_in_nu", lin <= 1e-12, lin, "max |r(2ν) − 2r(ν)|, tol 1e-12"});
    }

    // Confidence update: first-order prediction error is O(λ²).
    {
        const std::size_t e = 6, d = 5;
        Rng init(derive_seed(options.base_seed, {0xc0f}));
        nn::HeadParams head{random_matrix(d, e, init), random_vector(d, 0.3, init)};
        const auto xi = random_vector(e, 1.0, init);
        const auto xi2 = random_vector(e, 1.0, init);
        const int y = 2;
        std::vector<double> errors;
        for (double lr : {1e-2, 1e-3, 1e-4}) {
            const auto upd = analysis::confidence_update_check(head, xi, xi2, y, lr);
            errors.push_back(analysis::max_abs_diff(upd.predicted, upd.actual));
        }
        bool ok = true;
        double worst_order = 10.0;
        std::string list;
        for (std::size_t i = 0; i + 1 < errors.size(); ++i) {
            const double order = std::log10(errors[i] / errors[i + 1]);
            worst_order = std::min(worst_order, order);
            ok = ok && order >= 1.8 && order <= 2.2;
            list += (list.empty() ? "" : ",") + fmt(order);
        }
        out.push_back({"confidence_update.quadratic", ok, worst_order,
                       "convergence order per decade of λ [" + list + "] must lie in [1.8, 2.2]"});
    }
    return out;
}

std::vector<CheckResult> run_all(const VerifyOptions& options) {
    auto out = gradient_suite(options);
    auto more = analysis_checks(options);
    out.insert(out.end(), more.begin(), more.end());
    return out;
}

std::string format_report(const std::vector<CheckResult>& results) {
    std::ostringstream os;
    for (const auto& r : results)
        os << (r.passed ? "PASS " : "FAIL ") << r.name << " measured=" << fmt(r.measured) << "  " << r.detail << '\n';
    return os.str();
}

bool all_passed(const std::vector<CheckResult>& results) {
    return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

}  // namespace mhd::verify
