#pragma once
// Class-balanced multi-level cross-entropy. Crack pixels are weighted by
// alpha_crack = (p+q)/(2p) and non-crack pixels by alpha_noncrack = (p+q)/(2q),
// where p and q are the crack / non-crack pixel counts of the training split.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>

#include "crackseg/cracknet.hpp"
#include "crackseg/image.hpp"

namespace crackseg {

inline constexpr double kProbClamp = 1e-7;

struct ClassWeights {
    double alpha_crack = 1.0;
    double alpha_noncrack = 1.0;
    std::uint64_t p = 0;  // crack pixels
    std::uint64_t q = 0;  // non-crack pixels

    /// Median-frequency weights for the given counts. Throws if either is zero.
    static ClassWeights from_counts(std::uint64_t crack, std::uint64_t noncrack);
    /// Arbitrary weights, for experiments that bypass the count formula.
    static ClassWeights explicit_weights(double alpha_crack, double alpha_noncrack);
};

struct LambdaWeights {
    std::array<double, kNumSides> lambdas{0.5, 1.0, 0.8, 0.5, 0.3};

    static LambdaWeights from(std::span<const double> values);
};

/// How pixel sums are reduced within one image. Batches are always averaged.
enum class Reduction { sum, mean };

ClassWeights compute_class_weights(std::span<const MaskPlane> train_masks);

/// -alpha_noncrack * sum_{gt=0} log(1-P) - alpha_crack * sum_{gt=1} log(P),
/// with P clamped to [1e-7, 1-1e-7].
double side_loss(const ProbabilityPlane& prob, const MaskPlane& gt, const ClassWeights& w);
/// Same formula, applied to the fused plane.
double fused_loss(const ProbabilityPlane& prob_fused, const MaskPlane& gt, const ClassWeights& w);
/// sum_h lambda_h * side_loss_h + fused_loss.
double total_loss(const BundleProbabilities& probs, const MaskPlane& gt, const ClassWeights& w,
                  const LambdaWeights& lam);
double total_loss(const BundleProbabilities& probs, const MaskPlane& gt, const ClassWeights& w,
                  std::span<const double> lam);

/// The seven published lambda settings; case 7 is the best-performing one.
LambdaWeights lambda_case(int id);

struct LossAndGrad {
    double loss = 0.0;
    SideOutputs grad;  // d(loss)/d(logit) per plane
};

/// Batched total loss on logits (mean over the batch of the per-image total)
/// together with its gradient with respect to every logit.
LossAndGrad total_loss_with_grad(const SideOutputs& logits, std::span<const MaskPlane> gts, const ClassWeights& w,
                                 const LambdaWeights& lam, Reduction reduction = Reduction::sum);

void save_class_weights(const std::filesystem::path& path, const ClassWeights& w);
ClassWeights load_class_weights(const std::filesystem::path& path);

}  // namespace crackseg
