#include "fw/semisup.hpp"

#include <algorithm>
#include <cmath>

namespace fw {

namespace {

constexpr std::uint64_t kFlipStream = 0xf11b;
constexpr std::uint64_t kWeakNoiseStream = 0x3ea6;
constexpr std::uint64_t kJitterStream = 0x1177;
constexpr std::uint64_t kCutoutStream = 0xc007;
constexpr std::uint64_t kStrongNoiseStream = 0x57a0;

Tensor hflip(const Tensor& image) {
    const std::int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    std::vector<double> out(static_cast<std::size_t>(image.numel()));
    const double* p = image.data();
    for (std::int64_t ic = 0; ic < c; ++ic)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x)
                out[(ic * h + y) * w + x] = p[(ic * h + y) * w + (w - 1 - x)];
    return Tensor(image.shape(), std::move(out));
}

void add_noise(Tensor& image, double sigma, SplitMix64& rng) {
    if (sigma <= 0.0) return;
    double* d = image.data();
    for (std::int64_t i = 0; i < image.numel(); ++i) d[i] += sigma * rng.normal();
}

}  // namespace

TeacherStudentState make_teacher_student(const ModelParams& student, double alpha,
                                         double lambda) {
    if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("alpha must be in [0,1)");
    if (lambda < 0.0) throw ConfigError("lambda must be nonnegative");
    TeacherStudentState s;
    s.student = student;
    s.teacher = student.clone(false);  // same name set, no gradients ever
    s.alpha = alpha;
    s.lambda = lambda;
    s.step = 0;
    return s;
}

void ema_update(TeacherStudentState& state) {
    if (state.student.buffers.size() != state.teacher.buffers.size())
        throw StateError("ema_update: teacher/student buffer count mismatch");
    auto ti = state.teacher.buffers.begin();
    for (auto si = state.student.buffers.begin(); si != state.student.buffers.end();
         ++si, ++ti) {
        if (si->first != ti->first)
            throw StateError("ema_update: buffer name mismatch at " + si->first);
        Tensor& teacher = ti->second;
        const Tensor& student = si->second;
        if (teacher.shape() != student.shape())
            throw StateError("ema_update: shape mismatch at " + si->first);
        double* t = teacher.data();
        const double* s = student.data();
        const double a = state.alpha;
        for (std::int64_t i = 0; i < teacher.numel(); ++i) t[i] = a * t[i] + (1.0 - a) * s[i];
    }
}

Tensor softmax_channels(const Tensor& logits) {
    if (logits.rank() != 4) throw ShapeError("softmax_channels: input must be [B,Cls,H,W]");
    const std::int64_t b = logits.dim(0), cls = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
    std::vector<double> out(static_cast<std::size_t>(logits.numel()));
    const double* p = logits.data();
    for (std::int64_t ib = 0; ib < b; ++ib) {
        const double* base = p + ib * cls * plane;
        double* obase = out.data() + ib * cls * plane;
        for (std::int64_t j = 0; j < plane; ++j) {
            double mx = base[j];
            for (std::int64_t c = 1; c < cls; ++c) mx = std::max(mx, base[c * plane + j]);
            double se = 0.0;
            for (std::int64_t c = 0; c < cls; ++c) {
                obase[c * plane + j] = std::exp(base[c * plane + j] - mx);
                se += obase[c * plane + j];
            }
            const double inv = 1.0 / se;
            for (std::int64_t c = 0; c < cls; ++c) obase[c * plane + j] *= inv;
        }
    }
    return Tensor(logits.shape(), std::move(out));
}

Tensor entropy_weights(const Tensor& probabilities) {
    if (probabilities.rank() != 4) throw ShapeError("entropy_weights: input must be [B,Cls,H,W]");
    const std::int64_t b = probabilities.dim(0), cls = probabilities.dim(1),
                       plane = probabilities.dim(2) * probabilities.dim(3);
    const double log_c = std::log(static_cast<double>(cls));
    std::vector<double> out(static_cast<std::size_t>(b * plane));
    const double* p = probabilities.data();
    for (std::int64_t ib = 0; ib < b; ++ib) {
        const double* base = p + ib * cls * plane;
        for (std::int64_t j = 0; j < plane; ++j) {
            double s = 0.0, ent = 0.0;
            for (std::int64_t c = 0; c < cls; ++c) {
                const double v = base[c * plane + j];
                if (v < 0.0) throw DataError("entropy_weights: negative probability");
                s += v;
                if (v > 0.0) ent -= v * std::log(v);  // 0 log 0 := 0
            }
            if (std::abs(s - 1.0) > 1e-4)
                throw DataError("entropy_weights: probabilities do not sum to 1");
            const double w = cls == 1 ? 1.0 : 1.0 - ent / log_c;
            out[ib * plane + j] = std::min(1.0, std::max(0.0, w));
        }
    }
    return Tensor({b, probabilities.dim(2), probabilities.dim(3)}, std::move(out));
}

PseudoLabelBatch make_pseudo_labels(const Tensor& teacher_logits) {
    PseudoLabelBatch out;
    out.probabilities = softmax_channels(teacher_logits);
    out.labels = argmax_channels(out.probabilities);
    out.weights = entropy_weights(out.probabilities);
    return out;
}

bool augment_flips(std::uint64_t seed) {
    SplitMix64 coin(mix_seed(seed, kFlipStream));
    return coin.uniform() < 0.5;
}

Tensor weak_augment(const Tensor& image, std::uint64_t seed, const AugmentConfig& cfg) {
    if (image.rank() != 3) throw ShapeError("augment: image must be [C,H,W]");
    Tensor out = augment_flips(seed) ? hflip(image) : image.clone();
    SplitMix64 noise(mix_seed(seed, kWeakNoiseStream));
    add_noise(out, cfg.weak_noise, noise);
    return out;
}

Tensor strong_augment(const Tensor& image, std::uint64_t seed, const AugmentConfig& cfg) {
    if (image.rank() != 3) throw ShapeError("augment: image must be [C,H,W]");
    const std::int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out = augment_flips(seed) ? hflip(image) : image.clone();

    if (cfg.jitter) {
        SplitMix64 jit(mix_seed(seed, kJitterStream));
        for (std::int64_t ic = 0; ic < c; ++ic) {
            const double sc = jit.uniform(0.8, 1.2);
            const double sh = jit.uniform(-0.1, 0.1);
            double* d = out.data() + ic * h * w;
            for (std::int64_t i = 0; i < h * w; ++i) d[i] = d[i] * sc + sh;
        }
    }
    if (cfg.cutout) {
        SplitMix64 cut(mix_seed(seed, kCutoutStream));
        const std::int64_t ch = 1 + static_cast<std::int64_t>(cut.below(
                                        static_cast<std::uint64_t>(std::max<std::int64_t>(1, h / 2))));
        const std::int64_t cw = 1 + static_cast<std::int64_t>(cut.below(
                                        static_cast<std::uint64_t>(std::max<std::int64_t>(1, w / 2))));
        const std::int64_t y0 = static_cast<std::int64_t>(cut.below(
            static_cast<std::uint64_t>(h - ch + 1)));
        const std::int64_t x0 = static_cast<std::int64_t>(cut.below(
            static_cast<std::uint64_t>(w - cw + 1)));
        for (std::int64_t ic = 0; ic < c; ++ic)
            for (std::int64_t y = y0; y < y0 + ch; ++y)
                for (std::int64_t x = x0; x < x0 + cw; ++x)
                    out.data()[(ic * h + y) * w + x] = 0.0;
    }
    SplitMix64 noise(mix_seed(seed, kStrongNoiseStream));
    add_noise(out, cfg.strong_noise, noise);
    return out;
}

TrainStepStats train_step(TeacherStudentState& state, const BackboneConfig& config,
                          const std::vector<const Sample*>& labeled,
                          const std::vector<const Sample*>& unlabeled, Adam& opt,
                          std::uint64_t step_seed, const AugmentConfig& aug) {
    if (labeled.empty()) throw TrainingError("train_step: a labeled batch is required");

    opt.zero_grad(state.student.buffers);

    Tensor images = stack_images(labeled);
    ClassMap targets = stack_labels(labeled);
    Tensor l_sup = cross_entropy(backbone_forward(images, state.student, config), targets);

    TrainStepStats stats;
    stats.l_sup = l_sup.item();

    Tensor l_total = l_sup;
    if (state.lambda > 0.0 && !unlabeled.empty()) {
        // teacher on weak views (no gradient: teacher buffers never require it)
        std::vector<Tensor> weak_views, strong_views;
        weak_views.reserve(unlabeled.size());
        strong_views.reserve(unlabeled.size());
        for (std::size_t i = 0; i < unlabeled.size(); ++i) {
            const std::uint64_t view_seed = mix_seed(step_seed, 0xa06u, i);
            weak_views.push_back(weak_augment(unlabeled[i]->image, view_seed, aug));
            strong_views.push_back(strong_augment(unlabeled[i]->image, view_seed, aug));
        }
        auto as_batch = [](const std::vector<Tensor>& views) {
            std::vector<double> data;
            const Tensor& f = views.front();
            data.reserve(views.size() * static_cast<std::size_t>(f.numel()));
            for (const Tensor& v : views)
                data.insert(data.end(), v.data(), v.data() + v.numel());
            return Tensor({static_cast<std::int64_t>(views.size()), f.dim(0), f.dim(1), f.dim(2)},
                          std::move(data));
        };
        Tensor teacher_logits =
            backbone_forward(as_batch(weak_views), state.teacher, config);
        PseudoLabelBatch pseudo = make_pseudo_labels(teacher_logits);

        Tensor student_logits =
            backbone_forward(as_batch(strong_views), state.student, config);
        Tensor l_cons = cross_entropy(student_logits, pseudo.labels, pseudo.weights);
        stats.l_cons = l_cons.item();

        double wsum = 0.0;
        for (std::int64_t i = 0; i < pseudo.weights.numel(); ++i)
            wsum += pseudo.weights.data()[i];
        stats.mean_weight = wsum / static_cast<double>(pseudo.weights.numel());

        l_total = add(l_sup, scale(l_cons, state.lambda));
    }

    stats.l_total = l_total.item();
    if (!std::isfinite(stats.l_total)) throw NumericError("train_step: non-finite loss");
    l_total.backward();
    opt.step(state.student.buffers);
    ema_update(state);
    ++state.step;
    return stats;
}

}  // namespace fw
