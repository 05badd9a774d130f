#pragma once
// Distribution distances between feature sets, the feature extractors that
// produce them, and manifest-level evaluation.
//
// Feature sets are [n, d] tensors, one row per image.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "handrawer/core/tensor.hpp"
#include "handrawer/data/sample.hpp"

namespace handrawer::eval {

inline constexpr double kFidEps = 1e-6;

// ||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^(1/2)) with eps*I added to
// both covariances. The root trace is taken from the eigenvalues of the
// symmetric S_r^(1/2) S_g S_r^(1/2), negatives clamped to 0.
double fid(const Tensor& real, const Tensor& gen, double eps = kFidEps);

double poly_kernel(const double* x, const double* y, int d);

// Unbiased MMD^2 between two whole sets under poly_kernel.
double mmd2_unbiased(const Tensor& x, const Tensor& y);

struct KidResult {
    double mean = 0.0;
    double std = 0.0;  // population std over subsets
};
// Subsets are drawn with replacement.
struct KidOptions {
    int subset_size = 100;  // clipped to the smaller set
    int n_subsets = 100;
    std::uint64_t seed = 0;
};
KidResult kid(const Tensor& real, const Tensor& gen, const KidOptions& options = {});

class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string name() const = 0;
    virtual int dim() const = 0;
    // RGB [3,H,W] in [0,1] -> d features.
    virtual std::vector<double> features(const Tensor& rgb) const = 0;
};

// Frozen, seed-fixed random convolutional features: three 3x3 stride-2
// convolutions (3->16->32->64) with ReLU, then global average pooling.
// Inputs are resized to 299 x 299 first. A desk-scale stand-in whose
// absolute values are not comparable to Inception-based scores.
class SurrogateExtractor : public FeatureExtractor {
public:
    explicit SurrogateExtractor(std::uint64_t seed = 0x5e47);
    std::string name() const override { return "surrogate"; }
    int dim() const override { return 64; }
    std::vector<double> features(const Tensor& rgb) const override;

private:
    std::array<Tensor, 3> weights_;
    std::array<Tensor, 3> biases_;
};

// "surrogate" (optionally "surrogate:<seed>"). "inception" is reserved for a
// user-supplied adapter and is rejected here.
std::unique_ptr<FeatureExtractor> make_extractor(const std::string& name);

// 299 x 299 window centred on the bbox centre and clamped to the image;
// images smaller than 299 are reflect-padded (symmetrically) first.
Tensor crop_hand_299(const Tensor& image, const mesh::NormalizedBBox& bbox);

Tensor stack_features(const std::vector<std::vector<double>>& rows);

struct GestureMetrics {
    std::size_t n_real = 0, n_gen = 0;
    std::optional<double> fid;  // absent when either side has < 2 images
    std::optional<KidResult> kid;
};

struct MetricReport {
    std::string extractor;
    std::size_t n_real = 0, n_gen = 0;
    double fid = 0, kid_mean = 0, kid_std = 0;
    double fid_hand = 0, kid_hand_mean = 0, kid_hand_std = 0;
    std::map<std::string, GestureMetrics> per_gesture;  // all 18 labels

    nlohmann::ordered_json to_json() const;
};

struct EvalOptions {
    KidOptions kid;
};

// Whole-image FID/KID, hand-crop FID-Hand/KID-Hand and per-gesture FID/KID
// (whole images). Images are read relative to each manifest's root.
MetricReport evaluate(const std::vector<data::ManifestRecord>& gen, const std::filesystem::path& gen_root,
                      const std::vector<data::ManifestRecord>& ref, const std::filesystem::path& ref_root,
                      const FeatureExtractor& extractor, const EvalOptions& options = {});

// Features for a list of images and their hand crops.
struct FeatureSet {
    Tensor whole, hand;
    std::vector<std::string> labels;
};
FeatureSet extract(const std::vector<data::ManifestRecord>& rows, const std::filesystem::path& root,
                   const FeatureExtractor& extractor);
MetricReport compare(const FeatureSet& real, const FeatureSet& gen, const std::string& extractor_name,
                     const EvalOptions& options = {});

// Fixed-width text table, one row per named report, columns FID, KID,
// FID-Hand, KID-Hand.
std::string comparison_table(const std::vector<std::pair<std::string, MetricReport>>& rows);

}  // namespace handrawer::eval
