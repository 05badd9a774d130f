#include "handrawer/eval/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>

#include "handrawer/core/autograd.hpp"
#include "handrawer/core/errors.hpp"
#include "handrawer/core/rng.hpp"
#include "handrawer/data/gestures.hpp"
#include "handrawer/data/image_io.hpp"
#include "handrawer/data/raster.hpp"

namespace handrawer::eval {

namespace fs = std::filesystem;

namespace {

Eigen::MatrixXd as_matrix(const Tensor& t) {
    Eigen::MatrixXd m(t.dim(0), t.dim(1));
    for (int i = 0; i < t.dim(0); ++i)
        for (int j = 0; j < t.dim(1); ++j) m(i, j) = t.at(i, j);
    return m;
}

void check_features(const Tensor& a, const Tensor& b, const char* what) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
        throw ValidationError(std::string(what) + " needs two [n, d] feature sets of equal d, got " + a.shape_str() +
                              " and " + b.shape_str());
    }
    if (a.dim(0) < 2 || b.dim(0) < 2) throw ValidationError(std::string(what) + " needs at least 2 samples per set");
}

Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& m, double* min_eig = nullptr) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    Eigen::VectorXd ev = es.eigenvalues();
    if (min_eig) *min_eig = ev.minCoeff();
    for (int i = 0; i < ev.size(); ++i) ev(i) = std::sqrt(std::max(ev(i), 0.0));
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double fid(const Tensor& real, const Tensor& gen, double eps) {
    check_features(real, gen, "FID");
    const Eigen::MatrixXd R = as_matrix(real), G = as_matrix(gen);
    const Eigen::VectorXd mr = R.colwise().mean(), mg = G.colwise().mean();
    const Eigen::MatrixXd Rc = R.rowwise() - mr.transpose(), Gc = G.rowwise() - mg.transpose();
    const Eigen::Index d = R.cols();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
    const Eigen::MatrixXd Sr = Rc.transpose() * Rc / static_cast<double>(R.rows() - 1) + eps * I;
    const Eigen::MatrixXd Sg = Gc.transpose() * Gc / static_cast<double>(G.rows() - 1) + eps * I;
    double min_r = 0, min_m = 0;
    const Eigen::MatrixXd A = sym_sqrt(Sr, &min_r);
    const Eigen::MatrixXd root = sym_sqrt(A * Sg * A, &min_m);
    const double value = (mr - mg).squaredNorm() + Sr.trace() + Sg.trace() - 2.0 * root.trace();
    if (!std::isfinite(value)) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "FID is not finite (min eigenvalue of S_r %.3g, of the root product %.3g)",
                      min_r, min_m);
        throw Error(buf);
    }
    return value;
}

double poly_kernel(const double* x, const double* y, int d) {
    double dot = 0.0;
    for (int i = 0; i < d; ++i) dot += x[i] * y[i];
    const double b = dot / d + 1.0;
    return b * b * b;
}

double mmd2_unbiased(const Tensor& x, const Tensor& y) {
    check_features(x, y, "KID");
    const Eigen::MatrixXd X = as_matrix(x), Y = as_matrix(y);
    const int d = x.dim(1);
    const double m = X.rows(), n = Y.rows();
    auto cube = [d](const Eigen::MatrixXd& k) -> Eigen::MatrixXd {
        return k.unaryExpr([d](double v) {
            const double b = v / d + 1.0;
            return b * b * b;
        });
    };
    const Eigen::MatrixXd Kxx = cube(X * X.transpose()), Kyy = cube(Y * Y.transpose()), Kxy = cube(X * Y.transpose());
    const double sxx = Kxx.sum() - Kxx.trace(), syy = Kyy.sum() - Kyy.trace();
    return sxx / (m * (m - 1)) + syy / (n * (n - 1)) - 2.0 * Kxy.sum() / (m * n);
}

namespace {

Tensor take_rows(const Tensor& t, const std::vector<std::size_t>& idx) {
    Tensor out({static_cast<int>(idx.size()), t.dim(1)});
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (int c = 0; c < t.dim(1); ++c) out.at(static_cast<int>(r), c) = t.at(static_cast<int>(idx[r]), c);
    return out;
}

// Draws with replacement, so real and generated subsets are i.i.d. samples
// of their empirical distributions even when k equals the set size.
std::vector<std::size_t> draw_subset(std::size_t n, std::size_t k, CounterRng& rng) {
    std::vector<std::size_t> idx(k);
    for (auto& i : idx) i = rng.below(n);
    return idx;
}

}  // namespace

KidResult kid(const Tensor& real, const Tensor& gen, const KidOptions& o) {
    check_features(real, gen, "KID");
    if (o.n_subsets < 1 || o.subset_size < 2) throw ValidationError("KID needs n_subsets >= 1 and subset_size >= 2");
    const std::size_t nr = static_cast<std::size_t>(real.dim(0)), ng = static_cast<std::size_t>(gen.dim(0));
    const std::size_t k = std::min({static_cast<std::size_t>(o.subset_size), nr, ng});
    std::vector<double> vals;
    for (int s = 0; s < o.n_subsets; ++s) {
        CounterRng rng(o.seed, {0x41d, static_cast<std::uint64_t>(s)});
        const Tensor a = take_rows(real, draw_subset(nr, k, rng));
        const Tensor b = take_rows(gen, draw_subset(ng, k, rng));
        vals.push_back(mmd2_unbiased(a, b));
    }
    KidResult r;
    for (double v : vals) r.mean += v;
    r.mean /= static_cast<double>(vals.size());
    for (double v : vals) r.std += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(r.std / static_cast<double>(vals.size()));
    return r;
}

SurrogateExtractor::SurrogateExtractor(std::uint64_t seed) {
    const int ch[4] = {3, 16, 32, 64};
    for (int s = 0; s < 3; ++s) {
        const int fan_in = ch[s] * 9;
        Tensor w({ch[s + 1], fan_in});
        CounterRng(seed, {0xc0, static_cast<std::uint64_t>(s)}).fill_normal(w.storage(), std::sqrt(2.0 / fan_in));
        Tensor b({ch[s + 1]});
        CounterRng(seed, {0xb1, static_cast<std::uint64_t>(s)}).fill_normal(b.storage(), 0.05);
        weights_[static_cast<std::size_t>(s)] = std::move(w);
        biases_[static_cast<std::size_t>(s)] = std::move(b);
    }
}

std::vector<double> SurrogateExtractor::features(const Tensor& rgb) const {
    if (rgb.rank() != 3 || rgb.dim(0) != 3) throw ValidationError("extractor expects 3 x H x W RGB, got " + rgb.shape_str());
    ag::NoGradGuard no_grad;
    Tensor x = (rgb.dim(1) == data::kEvalCrop && rgb.dim(2) == data::kEvalCrop)
                   ? rgb
                   : data::resize_area(rgb, data::kEvalCrop, data::kEvalCrop);
    for (double& v : x.storage()) v = 2.0 * v - 1.0;
    ag::Var h = ag::constant(std::move(x));
    for (std::size_t s = 0; s < 3; ++s) {
        h = ag::relu(ag::conv2d(h, ag::constant(weights_[s]), ag::constant(biases_[s]), 3, 2, 1));
    }
    const Tensor& v = h.value();
    const int C = v.dim(0), HW = v.dim(1) * v.dim(2);
    std::vector<double> f(static_cast<std::size_t>(C), 0.0);
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int i = 0; i < HW; ++i) acc += v[static_cast<std::size_t>(c) * HW + i];
        f[static_cast<std::size_t>(c)] = acc / HW;
    }
    return f;
}

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& name) {
    if (name == "surrogate") return std::make_unique<SurrogateExtractor>();
    if (name.rfind("surrogate:", 0) == 0) {
        try {
            return std::make_unique<SurrogateExtractor>(std::stoull(name.substr(10)));
        } catch (const std::logic_error&) {
            throw ValidationError("bad extractor seed in '" + name + "'");
        }
    }
    if (name == "inception") {
        throw ValidationError("the inception extractor needs user-supplied weights, which this build does not bundle");
    }
    throw ValidationError("unknown extractor '" + name + "' (expected surrogate or surrogate:<seed>)");
}

Tensor crop_hand_299(const Tensor& image, const mesh::NormalizedBBox& bbox) {
    bbox.validate();
    const int H = image.dim(1), W = image.dim(2);
    int px = 0, py = 0;
    const Tensor padded = data::reflect_pad(image, data::kEvalCrop, &px, &py);
    return data::crop_centered(padded, bbox.cx() * W + px, bbox.cy() * H + py, data::kEvalCrop);
}

Tensor stack_features(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw ValidationError("no features to stack");
    Tensor t({static_cast<int>(rows.size()), static_cast<int>(rows[0].size())});
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) t.at(static_cast<int>(r), static_cast<int>(c)) = rows[r][c];
    return t;
}

FeatureSet extract(const std::vector<data::ManifestRecord>& rows, const fs::path& root,
                   const FeatureExtractor& extractor) {
    if (rows.size() < 2) throw ValidationError("evaluation needs at least 2 images per set");
    std::vector<const data::ManifestRecord*> sorted;
    for (const auto& r : rows) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->sample_id < b->sample_id; });
    std::vector<std::vector<double>> whole, hand;
    FeatureSet fs;
    for (const auto* r : sorted) {
        const Tensor image = data::read_png(root / r->image);
        if (image.dim(0) != 3) throw ValidationError("image for '" + r->sample_id + "' is not RGB");
        whole.push_back(extractor.features(image));
        hand.push_back(extractor.features(crop_hand_299(image, r->bbox)));
        fs.labels.push_back(data::canonical_gesture(r->gesture_label));
    }
    fs.whole = stack_features(whole);
    fs.hand = stack_features(hand);
    return fs;
}

namespace {

Tensor rows_with_label(const FeatureSet& s, const std::string& label) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
        if (s.labels[i] == label) idx.push_back(i);
    }
    return idx.empty() ? Tensor() : take_rows(s.whole, idx);
}

}  // namespace

MetricReport compare(const FeatureSet& real, const FeatureSet& gen, const std::string& extractor_name,
                     const EvalOptions& options) {
    MetricReport r;
    r.extractor = extractor_name;
    r.n_real = real.labels.size();
    r.n_gen = gen.labels.size();
    r.fid = fid(real.whole, gen.whole);
    const KidResult k = kid(real.whole, gen.whole, options.kid);
    r.kid_mean = k.mean;
    r.kid_std = k.std;
    r.fid_hand = fid(real.hand, gen.hand);
    const KidResult kh = kid(real.hand, gen.hand, options.kid);
    r.kid_hand_mean = kh.mean;
    r.kid_hand_std = kh.std;
    for (auto name : data::kGestureNames) {
        const std::string label(name);
        const Tensor a = rows_with_label(real, label), b = rows_with_label(gen, label);
        GestureMetrics g;
        g.n_real = a.empty() ? 0 : static_cast<std::size_t>(a.dim(0));
        g.n_gen = b.empty() ? 0 : static_cast<std::size_t>(b.dim(0));
        if (g.n_real >= 2 && g.n_gen >= 2) {
            g.fid = fid(a, b);
            g.kid = kid(a, b, options.kid);
        }
        r.per_gesture[label] = g;
    }
    return r;
}

MetricReport evaluate(const std::vector<data::ManifestRecord>& gen, const fs::path& gen_root,
                      const std::vector<data::ManifestRecord>& ref, const fs::path& ref_root,
                      const FeatureExtractor& extractor, const EvalOptions& options) {
    const FeatureSet g = extract(gen, gen_root, extractor);
    const FeatureSet r = extract(ref, ref_root, extractor);
    return compare(r, g, extractor.name(), options);
}

nlohmann::ordered_json MetricReport::to_json() const {
    nlohmann::ordered_json j;
    j["extractor"] = extractor;
    j["n_real"] = n_real;
    j["n_gen"] = n_gen;
    j["fid"] = fid;
    j["kid_mean"] = kid_mean;
    j["kid_std"] = kid_std;
    j["fid_hand"] = fid_hand;
    j["kid_hand_mean"] = kid_hand_mean;
    j["kid_hand_std"] = kid_hand_std;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (auto name : data::kGestureNames) {
        const GestureMetrics& g = per_gesture.at(std::string(name));
        nlohmann::ordered_json row;
        row["gesture"] = std::string(name);
        row["n_real"] = g.n_real;
        row["n_gen"] = g.n_gen;
        row["fid"] = g.fid ? nlohmann::ordered_json(*g.fid) : nlohmann::ordered_json(nullptr);
        row["kid_mean"] = g.kid ? nlohmann::ordered_json(g.kid->mean) : nlohmann::ordered_json(nullptr);
        row["kid_std"] = g.kid ? nlohmann::ordered_json(g.kid->std) : nlohmann::ordered_json(nullptr);
        rows.push_back(row);
    }
    j["per_gesture"] = rows;
    return j;
}

std::string comparison_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-16s %12s %22s %12s %22s\n", "config", "FID", "KID", "FID-Hand", "KID-Hand");
    out += buf;
    for (const auto& [name, r] : rows) {
        std::snprintf(buf, sizeof buf, "%-16s %12.4f %10.4f +- %8.4f %12.4f %10.4f +- %8.4f\n", name.c_str(), r.fid,
                      r.kid_mean, r.kid_std, r.fid_hand, r.kid_hand_mean, r.kid_hand_std);
        out += buf;
    }
    return out;
}

}  // namespace handrawer::eval
