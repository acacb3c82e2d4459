#include "crackseg/balancedloss.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "crackseg/errors.hpp"

namespace crackseg {
namespace {

void require_same_shape(const ProbabilityPlane& prob, const MaskPlane& gt) {
    if (!prob.same_shape(gt))
        throw std::invalid_argument("loss: probability plane " + std::to_string(prob.height) + "x" +
                                    std::to_string(prob.width) + " does not match mask " +
                                    std::to_string(gt.height) + "x" + std::to_string(gt.width));
}

double clamp_prob(double p) {
    return std::clamp(p, kProbClamp, 1.0 - kProbClamp);
}

// Loss of one pixel and its derivative with respect to the logit.
struct PixelTerm {
    double loss;
    double dlogit;
};

PixelTerm pixel_term(double logit, bool crack, const ClassWeights& w) {
    const double p = nn::sigmoid(logit);
    const double pc = clamp_prob(p);
    const bool clamped = pc != p;
    if (crack) return {-w.alpha_crack * std::log(pc), clamped ? 0.0 : w.alpha_crack * (p - 1.0)};
    return {-w.alpha_noncrack * std::log(1.0 - pc), clamped ? 0.0 : w.alpha_noncrack * p};
}

}  // namespace

ClassWeights ClassWeights::from_counts(std::uint64_t crack, std::uint64_t noncrack) {
    if (crack == 0 || noncrack == 0)
        throw std::invalid_argument("degenerate class balance: p=" + std::to_string(crack) +
                                    ", q=" + std::to_string(noncrack));
    const double total = static_cast<double>(crack) + static_cast<double>(noncrack);
    ClassWeights w;
    w.p = crack;
    w.q = noncrack;
    w.alpha_crack = total / (2.0 * static_cast<double>(crack));
    w.alpha_noncrack = total / (2.0 * static_cast<double>(noncrack));
    return w;
}

ClassWeights ClassWeights::explicit_weights(double alpha_crack, double alpha_noncrack) {
    if (!(alpha_crack >= 0.0) || !(alpha_noncrack >= 0.0))
        throw std::invalid_argument("class weights must be nonnegative");
    ClassWeights w;
    w.alpha_crack = alpha_crack;
    w.alpha_noncrack = alpha_noncrack;
    return w;
}

LambdaWeights LambdaWeights::from(std::span<const double> values) {
    if (values.size() != kNumSides)
        throw std::invalid_argument("expected " + std::to_string(kNumSides) + " lambda weights, got " +
                                    std::to_string(values.size()));
    LambdaWeights lw;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!(values[i] >= 0.0)) throw std::invalid_argument("lambda weights must be nonnegative");
        lw.lambdas[i] = values[i];
    }
    return lw;
}

ClassWeights compute_class_weights(std::span<const MaskPlane> train_masks) {
    if (train_masks.empty()) throw std::invalid_argument("compute_class_weights: no training masks");
    std::uint64_t p = 0, total = 0;
    for (const MaskPlane& m : train_masks) {
        for (std::uint8_t v : m.values) p += v != 0;
        total += m.size();
    }
    return ClassWeights::from_counts(p, total - p);
}

double side_loss(const ProbabilityPlane& prob, const MaskPlane& gt, const ClassWeights& w) {
    require_same_shape(prob, gt);
    double crack = 0.0, noncrack = 0.0;
    for (std::size_t i = 0; i < prob.size(); ++i) {
        const double p = clamp_prob(prob.values[i]);
        if (gt.values[i]) {
            crack += std::log(p);
        } else {
            noncrack += std::log(1.0 - p);
        }
    }
    return -w.alpha_noncrack * noncrack - w.alpha_crack * crack;
}

double fused_loss(const ProbabilityPlane& prob_fused, const MaskPlane& gt, const ClassWeights& w) {
    return side_loss(prob_fused, gt, w);
}

double total_loss(const BundleProbabilities& probs, const MaskPlane& gt, const ClassWeights& w,
                  std::span<const double> lam) {
    if (lam.size() != kNumSides)
        throw std::invalid_argument("total_loss: expected 5 lambda weights, got " + std::to_string(lam.size()));
    double total = 0.0;
    for (int h = 0; h < kNumSides; ++h) total += lam[h] * side_loss(probs.side[h], gt, w);
    return total + fused_loss(probs.fused, gt, w);
}

double total_loss(const BundleProbabilities& probs, const MaskPlane& gt, const ClassWeights& w,
                  const LambdaWeights& lam) {
    return total_loss(probs, gt, w, std::span<const double>(lam.lambdas));
}

LambdaWeights lambda_case(int id) {
    static const std::array<std::array<double, kNumSides>, 7> cases{{
        {4.0, 2.0, 1.0, 0.5, 0.25},
        {9.0, 3.0, 1.0, 1.0 / 3.0, 1.0 / 9.0},
        {0.25, 0.5, 1.0, 2.0, 4.0},
        {1.0 / 9.0, 1.0 / 3.0, 1.0, 3.0, 9.0},
        {1.0, 1.0, 1.0, 1.0, 1.0},
        {0.3, 0.7, 1.0, 0.7, 0.3},
        {0.5, 1.0, 0.8, 0.5, 0.3},
    }};
    if (id < 1 || id > 7) throw std::out_of_range("lambda case must be in 1..7, got " + std::to_string(id));
    return LambdaWeights{cases[id - 1]};
}

LossAndGrad total_loss_with_grad(const SideOutputs& logits, std::span<const MaskPlane> gts, const ClassWeights& w,
                                 const LambdaWeights& lam, Reduction reduction) {
    const Tensor& fused = logits.fused;
    const int batch = fused.n();
    if (static_cast<int>(gts.size()) != batch)
        throw std::invalid_argument("total_loss_with_grad: " + std::to_string(gts.size()) + " masks for batch of " +
                                    std::to_string(batch));
    const std::size_t plane = fused.plane_size();
    const double pixel_scale = reduction == Reduction::mean ? 1.0 / static_cast<double>(plane) : 1.0;
    const double scale = pixel_scale / batch;

    LossAndGrad out;
    auto accumulate = [&](const Tensor& z, double weight, Tensor& g) {
        g = Tensor(z.n(), z.c(), z.h(), z.w());
        double sum = 0.0;
        for (int n = 0; n < batch; ++n) {
            const MaskPlane& gt = gts[n];
            if (gt.height != z.h() || gt.width != z.w())
                throw std::invalid_argument("total_loss_with_grad: mask/logit shape mismatch");
            const double* zp = z.plane(n, 0);
            double* gp = g.plane(n, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                const PixelTerm t = pixel_term(zp[i], gt.values[i] != 0, w);
                sum += t.loss;
                gp[i] = weight * scale * t.dlogit;
            }
        }
        return weight * sum * scale;
    };

    for (int h = 0; h < kNumSides; ++h) out.loss += accumulate(logits.side[h], lam.lambdas[h], out.grad.side[h]);
    out.loss += accumulate(fused, 1.0, out.grad.fused);
    return out;
}

void save_class_weights(const std::filesystem::path& path, const ClassWeights& w) {
    nlohmann::ordered_json j;
    j["p"] = w.p;
    j["q"] = w.q;
    j["alpha_crack"] = w.alpha_crack;
    j["alpha_noncrack"] = w.alpha_noncrack;
    std::ofstream out(path);
    if (!out) throw InputError("cannot write class weights: " + path.string());
    out << j.dump(2) << '\n';
}

ClassWeights load_class_weights(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read class weights: " + path.string());
    try {
        const auto j = nlohmann::json::parse(in);
        const auto p = j.at("p").get<std::uint64_t>();
        const auto q = j.at("q").get<std::uint64_t>();
        if (p > 0 && q > 0) return ClassWeights::from_counts(p, q);
        return ClassWeights::explicit_weights(j.at("alpha_crack").get<double>(), j.at("alpha_noncrack").get<double>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed class weight file " + path.string() + ": " + e.what());
    }
}

}  // namespace crackseg
