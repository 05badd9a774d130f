#include "handrawer/sampler/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "handrawer/core/errors.hpp"
#include "handrawer/core/rng.hpp"
#include "handrawer/data/image_io.hpp"
#include "handrawer/data/raster.hpp"

namespace handrawer::sampler {

namespace fs = std::filesystem;

std::vector<int> sampling_timesteps(int T, int steps) {
    if (steps < 1 || steps > T) {
        throw ValidationError("reverse steps must lie in [1, " + std::to_string(T) + "], got " + std::to_string(steps));
    }
    std::vector<int> out;
    for (int k = steps - 1; k >= 0; --k) {
        out.push_back(steps == 1 ? T - 1
                                 : static_cast<int>(std::llround(static_cast<double>(k) * (T - 1) / (steps - 1))));
    }
    return out;
}

Tensor sample_latent(const train::HandDiffusionModel& model, const train::Conditioning& cond,
                     const SampleOptions& options) {
    ag::NoGradGuard no_grad;
    const auto& sched = model.schedule();
    const std::vector<int> taus = sampling_timesteps(sched.T, options.steps);
    const int L = model.config().model.latent_size();

    std::optional<model::HanDrawerOutput> hand;
    if (model.config().fusion) hand = model.hand_features(cond);

    Tensor z({model.codec().channels(), L, L});
    CounterRng(options.seed, {0x1417}).fill_normal(z.storage());
    for (std::size_t k = 0; k < taus.size(); ++k) {
        const int t = taus[k];
        const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
        const double ab_prev = k + 1 < taus.size() ? sched.alpha_bar[static_cast<std::size_t>(taus[k + 1])] : 1.0;
        const Tensor eps = model.predict_noise(ag::constant(z), t, cond, hand ? &hand->fusion : nullptr).value();
        Tensor x0(z.shape());
        for (std::size_t i = 0; i < z.size(); ++i) {
            x0[i] = std::clamp((z[i] - std::sqrt(1.0 - ab) * eps[i]) / std::sqrt(ab), -1.0, 1.0);
        }
        if (k + 1 == taus.size()) {
            z = std::move(x0);
            break;
        }
        const double beta = 1.0 - ab / ab_prev;
        const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
        const double ct = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
        const double sigma = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
        CounterRng rng(options.seed, {0x5a4d, static_cast<std::uint64_t>(t)});
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = c0 * x0[i] + ct * z[i] + sigma * rng.normal();
    }
    return z;
}

Tensor sample_image(const train::HandDiffusionModel& model, const train::Conditioning& cond,
                    const SampleOptions& options) {
    return model.codec().decode_image(sample_latent(model, cond, options));
}

Tensor montage(const std::vector<Tensor>& images, int columns, int cell) {
    if (images.empty()) throw ValidationError("montage needs at least one image");
    const int n = static_cast<int>(images.size());
    const int cols = std::min(columns, n), rows = (n + cols - 1) / cols;
    Tensor out({3, rows * cell, cols * cell});
    for (int i = 0; i < n; ++i) {
        const Tensor small = data::resize_area(images[static_cast<std::size_t>(i)], cell, cell);
        const int oy = (i / cols) * cell, ox = (i % cols) * cell;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < cell; ++y)
                for (int x = 0; x < cell; ++x) out.at(c, oy + y, ox + x) = small.at(c, y, x);
    }
    return out;
}

void require_writable_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw ValidationError("output directory " + dir.string() + " cannot be created");
    const fs::path probe = dir / ".write_probe";
    {
        std::ofstream f(probe);
        if (!f || !(f << "ok") || !f.flush()) {
            throw ValidationError("output directory " + dir.string() + " is not writable");
        }
    }
    fs::remove(probe, ec);
}

GridResult sample_grid(const train::HandDiffusionModel& model, const std::vector<data::ManifestRecord>& rows,
                       const fs::path& root, const fs::path& out_dir, const SampleOptions& options,
                       const std::string& tag) {
    require_writable_dir(out_dir);
    GridResult result;
    if (rows.empty()) return result;
    std::vector<Tensor> images;
    std::vector<data::ManifestRecord> generated;
    for (const auto& row : rows) {
        const data::MultimodalSample s = data::load_sample(row, root);
        const Tensor image = data::quantize(sample_image(model, model.condition(s), options), 8);
        const std::string name = row.sample_id + "__" + tag + ".png";
        data::write_png_rgb8(out_dir / name, image);
        result.entries.push_back({row.sample_id, out_dir / name});
        data::ManifestRecord g;
        g.sample_id = row.sample_id;
        g.split = row.split;
        g.gesture_label = row.gesture_label;
        g.caption = row.caption;
        g.bbox = row.bbox;
        g.image = name;
        generated.push_back(std::move(g));
        images.push_back(image);
    }
    const fs::path mpath = out_dir / ("montage__" + tag + ".png");
    data::write_png_rgb8(mpath, data::quantize(montage(images, 8, 128), 8));
    result.montage = mpath;
    const fs::path manifest = out_dir / ("manifest__" + tag + ".jsonl");
    data::write_manifest(manifest, std::move(generated));
    result.manifest = manifest;
    return result;
}

}  // namespace handrawer::sampler
