#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gritvq/codebook.hpp"
#include "gritvq/radius.hpp"

namespace gritvq {

// UnitDirection: z_q = z + r·sg[s], the form all the closed-form analysis
// targets. RatioForm: z_q = z + r·sg[(ẑ−z)/r], whose forward value is ẑ
// exactly and whose backward scales the correction by gap/r.
enum class SurrogateForm { UnitDirection, RatioForm };

const char* form_name(SurrogateForm f);
SurrogateForm form_from_name(const std::string& name);

struct SurrogateContext {
    Assignment assignment;
    RadiusEval radius;
    SurrogateForm form = SurrogateForm::UnitDirection;
    std::vector<double> z;
    std::vector<double> z_q;
    bool degenerate = false;  // exact codeword hit: gap = 0
    double scale = 0.0;       // multiplier on the radius gradients in backward
};

SurrogateContext surrogate_forward(std::span<const double> z, const Assignment& assignment,
                                   const RadiusSpec& spec,
                                   SurrogateForm form = SurrogateForm::UnitDirection);

struct SurrogateGrad {
    std::vector<double> grad_z;
    std::vector<double> code_signal;  // gradient routed to the selected transformed codeword
    double a = 0.0;                   // alignment <upstream, s>
};

SurrogateGrad surrogate_backward(const SurrogateContext& ctx, std::span<const double> upstream);

// Materialized d x d surrogate Jacobian dz_q/dz, for tests.
Mat jacobian_dense(const SurrogateContext& ctx);

// Scatter-add of per-sample code signals into a K x d matrix; row i collects
// the samples assigned to code i. Serial so the reduction order is fixed.
Mat accumulate_code_signals(const std::vector<SurrogateContext>& ctxs, const Mat& upstream,
                            long K);

// Gradients of sum_i <G_i, E'_i> with respect to the transform parameters and
// the raw codebook. Fields not used by spec.kind stay empty (0 x 0).
struct TransformGrads {
    Mat grad_W;
    Mat grad_A, grad_B;
    Mat grad_U1, grad_V1;
    Mat grad_E;
};

// `work` must come from an apply_transform call on the same (spec, E) so that
// the saved intermediates (and the attention neighbor set) line up.
TransformGrads transform_backward(const Mat& G, const Mat& E, const TransformSpec& spec,
                                  const TransformWork& work);

// Classic straight-through baseline: forward ẑ, backward identity.
std::pair<std::vector<double>, std::vector<double>> ste_forward_backward(
    std::span<const double> z, const Assignment& assignment, std::span<const double> upstream);

// EMA blend of selected rows toward the mean of their assigned latents;
// unselected rows are untouched.
Mat ema_codebook_update(const Mat& Etilde, const std::vector<Assignment>& assignments,
                        const Mat& latents, double momentum);

}  // namespace gritvq
