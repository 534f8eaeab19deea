#include "bitkit/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "bitkit/wire.hpp"

namespace bitkit {

void Dataset::validate() const {
    if (!images.defined() || images.rank() != 4 || size() < 1)
        throw ValidationError("dataset: images must be a non-empty NCHW tensor");
    if (static_cast<int64_t>(labels.size()) != size())
        throw ValidationError("dataset: label count does not match image count");
    if (num_classes < 2) throw ValidationError("dataset: need at least 2 classes");
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] >= num_classes)
            throw ValidationError("dataset: label " + std::to_string(labels[i]) + " at index " +
                                  std::to_string(i) + " out of range");
}

Dataset Dataset::subset(const std::vector<int64_t>& indices) const {
    const int64_t C = channels(), H = height(), W = width();
    const int64_t plane = C * H * W;
    Dataset out;
    out.images = Tensor<float>::zeros({static_cast<int64_t>(indices.size()), C, H, W});
    out.labels.reserve(indices.size());
    out.num_classes = num_classes;
    out.name = name;
    for (size_t i = 0; i < indices.size(); ++i) {
        const int64_t src = indices[i];
        if (src < 0 || src >= size()) throw UsageError("subset index out of range");
        std::memcpy(out.images.ptr() + static_cast<int64_t>(i) * plane, images.ptr() + src * plane,
                    sizeof(float) * static_cast<size_t>(plane));
        out.labels.push_back(labels[static_cast<size_t>(src)]);
    }
    return out;
}

Tensor<float> Dataset::image(int64_t i) const {
    const int64_t C = channels(), H = height(), W = width();
    Tensor<float> out = Tensor<float>::zeros({C, H, W});
    std::memcpy(out.ptr(), images.ptr() + i * C * H * W,
                sizeof(float) * static_cast<size_t>(C * H * W));
    return out;
}

AugPolicy AugPolicy::from_plan(const HyperRulePlan& plan, bool allow_flip, bool allow_crop) {
    AugPolicy p;
    p.resize_to = plan.resize_to;
    p.crop_to = plan.crop_to;
    p.random_flip = allow_flip;
    p.random_crop = allow_crop;
    p.eval_resize_to = plan.crop_to;
    return p;
}

Tensor<float> bilinear_resize(const Tensor<float>& chw, int64_t out_h, int64_t out_w) {
    if (chw.rank() != 3) throw DimensionError("bilinear_resize: expected CxHxW");
    const int64_t C = chw.shape[0], H = chw.shape[1], W = chw.shape[2];
    if (out_h < 1 || out_w < 1) throw DimensionError("bilinear_resize: bad output size");
    if (H == out_h && W == out_w) return chw.clone();
    Tensor<float> out = Tensor<float>::zeros({C, out_h, out_w});
    const double sy = static_cast<double>(H) / static_cast<double>(out_h);
    const double sx = static_cast<double>(W) / static_cast<double>(out_w);
    for (int64_t c = 0; c < C; ++c) {
        const float* src = chw.ptr() + c * H * W;
        float* dst = out.ptr() + c * out_h * out_w;
        for (int64_t y = 0; y < out_h; ++y) {
            double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
            fy = std::clamp(fy, 0.0, static_cast<double>(H - 1));
            const int64_t y0 = static_cast<int64_t>(fy);
            const int64_t y1 = std::min<int64_t>(y0 + 1, H - 1);
            const double wy = fy - static_cast<double>(y0);
            for (int64_t x = 0; x < out_w; ++x) {
                double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
                fx = std::clamp(fx, 0.0, static_cast<double>(W - 1));
                const int64_t x0 = static_cast<int64_t>(fx);
                const int64_t x1 = std::min<int64_t>(x0 + 1, W - 1);
                const double wx = fx - static_cast<double>(x0);
                const double top = src[y0 * W + x0] * (1.0 - wx) + src[y0 * W + x1] * wx;
                const double bot = src[y1 * W + x0] * (1.0 - wx) + src[y1 * W + x1] * wx;
                dst[y * out_w + x] = static_cast<float>(top * (1.0 - wy) + bot * wy);
            }
        }
    }
    return out;
}

namespace {

Tensor<float> crop(const Tensor<float>& chw, int64_t oy, int64_t ox, int64_t side) {
    const int64_t C = chw.shape[0], H = chw.shape[1], W = chw.shape[2];
    if (oy < 0 || ox < 0 || oy + side > H || ox + side > W)
        throw DimensionError("crop window out of bounds");
    Tensor<float> out = Tensor<float>::zeros({C, side, side});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < side; ++y)
            std::memcpy(out.ptr() + (c * side + y) * side,
                        chw.ptr() + (c * H + oy + y) * W + ox,
                        sizeof(float) * static_cast<size_t>(side));
    return out;
}

Tensor<float> hflip(const Tensor<float>& chw) {
    const int64_t C = chw.shape[0], H = chw.shape[1], W = chw.shape[2];
    Tensor<float> out = Tensor<float>::zeros(chw.shape);
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                out[(c * H + y) * W + x] = chw[(c * H + y) * W + (W - 1 - x)];
    return out;
}

}  // namespace

Tensor<float> preprocess_train(const Tensor<float>& chw, const AugPolicy& policy, Rng& rng) {
    if (policy.crop_to > policy.resize_to)
        throw ValidationError("preprocess: crop_to must not exceed resize_to");
    Tensor<float> img = bilinear_resize(chw, policy.resize_to, policy.resize_to);
    const int64_t slack = policy.resize_to - policy.crop_to;
    if (slack > 0 || policy.random_crop) {
        int64_t oy, ox;
        if (policy.random_crop) {
            oy = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(slack + 1)));
            ox = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(slack + 1)));
        } else {
            oy = slack / 2;
            ox = slack / 2;
        }
        img = crop(img, oy, ox, policy.crop_to);
    }
    if (policy.random_flip && rng.bernoulli(0.5)) img = hflip(img);
    return img;
}

Tensor<float> preprocess_eval(const Tensor<float>& chw, const AugPolicy& policy) {
    return bilinear_resize(chw, policy.eval_resize_to, policy.eval_resize_to);
}

std::vector<float> one_hot_row(uint16_t label, int64_t num_classes) {
    std::vector<float> row(static_cast<size_t>(num_classes), 0.0f);
    row[label] = 1.0f;
    return row;
}

Tensor<float> one_hot(const std::vector<uint16_t>& labels, int64_t num_classes) {
    Tensor<float> out = Tensor<float>::zeros({static_cast<int64_t>(labels.size()), num_classes});
    for (size_t i = 0; i < labels.size(); ++i)
        out[static_cast<int64_t>(i) * num_classes + labels[i]] = 1.0f;
    return out;
}

std::pair<Tensor<float>, Tensor<float>> mixup_apply(const Tensor<float>& images,
                                                    const Tensor<float>& onehot_labels,
                                                    double lambda,
                                                    const std::vector<int64_t>& perm) {
    const int64_t N = images.shape[0];
    if (onehot_labels.shape[0] != N || static_cast<int64_t>(perm.size()) != N)
        throw DimensionError("mixup: batch size mismatch");
    const float lam = static_cast<float>(lambda);
    const int64_t plane = images.numel() / N;
    const int64_t C = onehot_labels.shape[1];
    Tensor<float> mi = Tensor<float>::zeros(images.shape);
    Tensor<float> ml = Tensor<float>::zeros(onehot_labels.shape);
    for (int64_t i = 0; i < N; ++i) {
        const int64_t j = perm[static_cast<size_t>(i)];
        const float* a = images.ptr() + i * plane;
        const float* b = images.ptr() + j * plane;
        float* dst = mi.ptr() + i * plane;
        for (int64_t k = 0; k < plane; ++k) dst[k] = lam * a[k] + (1.0f - lam) * b[k];
        const float* la = onehot_labels.ptr() + i * C;
        const float* lb = onehot_labels.ptr() + j * C;
        float* ldst = ml.ptr() + i * C;
        for (int64_t k = 0; k < C; ++k) ldst[k] = lam * la[k] + (1.0f - lam) * lb[k];
    }
    return {std::move(mi), std::move(ml)};
}

std::pair<Tensor<float>, Tensor<float>> mixup_batch(const Tensor<float>& images,
                                                    const Tensor<float>& onehot_labels,
                                                    double alpha, Rng& rng) {
    if (alpha <= 0.0) throw ValidationError("mixup: alpha must be positive");
    if (images.rank() != 4 || images.shape[0] < 2)
        throw ValidationError("mixup: need a batch of at least 2");
    const double lambda = rng.beta(alpha, alpha);
    std::vector<int64_t> perm(static_cast<size_t>(images.shape[0]));
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int64_t>(i);
    rng.shuffle(perm);
    return mixup_apply(images, onehot_labels, lambda, perm);
}

Dataset fewshot_subsample(const Dataset& dataset, int64_t n_per_class, uint64_t seed) {
    dataset.validate();
    if (n_per_class < 1) throw ValidationError("fewshot: n_per_class must be positive");
    std::vector<std::vector<int64_t>> per_class(static_cast<size_t>(dataset.num_classes));
    for (int64_t i = 0; i < dataset.size(); ++i)
        per_class[dataset.labels[static_cast<size_t>(i)]].push_back(i);

    std::vector<int64_t> chosen;
    for (int64_t c = 0; c < dataset.num_classes; ++c) {
        auto& pool = per_class[static_cast<size_t>(c)];
        if (static_cast<int64_t>(pool.size()) < n_per_class)
            throw SamplingError("fewshot: class " + std::to_string(c) + " has only " +
                                std::to_string(pool.size()) + " examples, need " +
                                std::to_string(n_per_class));
        Rng rng = Rng::substream(seed, static_cast<uint64_t>(c));
        rng.shuffle(pool);
        chosen.insert(chosen.end(), pool.begin(), pool.begin() + n_per_class);
    }
    std::sort(chosen.begin(), chosen.end());
    Dataset out = dataset.subset(chosen);
    out.name = dataset.name + "/shots" + std::to_string(n_per_class);
    return out;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
    dataset.validate();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open dataset for writing: " + path);
    os.write("BITD", 4);
    wire::put_u32(os, 1);
    wire::put_u32(os, static_cast<uint32_t>(dataset.size()));
    wire::put_u32(os, static_cast<uint32_t>(dataset.channels()));
    wire::put_u32(os, static_cast<uint32_t>(dataset.height()));
    wire::put_u32(os, static_cast<uint32_t>(dataset.width()));
    wire::put_u32(os, static_cast<uint32_t>(dataset.num_classes));
    wire::put_f32_array(os, dataset.images.ptr(), static_cast<size_t>(dataset.images.numel()));
    for (uint16_t l : dataset.labels) wire::put_u16(os, l);
    if (!os) throw Error("write failure on dataset: " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open dataset: " + path);
    wire::Reader r(is, "dataset " + path);
    char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::string(magic, 4) != "BITD") r.fail("bad magic, expected BITD");
    const uint32_t version = r.u32("version");
    if (version != 1) r.fail("unsupported version " + std::to_string(version));
    const uint32_t N = r.u32("N"), C = r.u32("C"), H = r.u32("H"), W = r.u32("W");
    const uint32_t num_classes = r.u32("num_classes");
    if (N == 0 || C == 0 || H == 0 || W == 0) r.fail("degenerate dimensions");
    Dataset d;
    d.images = Tensor<float>::zeros({N, C, H, W});
    r.f32_array(d.images.ptr(), static_cast<size_t>(d.images.numel()), "pixels");
    d.labels.resize(N);
    for (uint32_t i = 0; i < N; ++i) {
        d.labels[i] = r.u16("labels");
        if (d.labels[i] >= num_classes)
            r.fail("label " + std::to_string(d.labels[i]) + " out of range at example " +
                   std::to_string(i));
    }
    d.num_classes = static_cast<int64_t>(num_classes);
    d.name = path;
    return d;
}

std::pair<std::vector<int64_t>, std::vector<int64_t>> hash_split(int64_t n, uint64_t fold) {
    std::vector<int64_t> train, held;
    for (int64_t i = 0; i < n; ++i) {
        if (splitmix64(static_cast<uint64_t>(i)) % fold == 0)
            held.push_back(i);
        else
            train.push_back(i);
    }
    return {std::move(train), std::move(held)};
}

// ---------------------------------------------------------------------------
// Synthetic colored-shape classes.
// ---------------------------------------------------------------------------

namespace {

constexpr int kNumShapes = 6;
constexpr int kNumColors = 6;

const float kPalette[kNumColors][3] = {
    {0.95f, 0.15f, 0.15f},  // red
    {0.15f, 0.85f, 0.20f},  // green
    {0.20f, 0.35f, 0.95f},  // blue
    {0.95f, 0.85f, 0.10f},  // yellow
    {0.90f, 0.20f, 0.90f},  // magenta
    {0.10f, 0.85f, 0.90f},  // cyan
};

bool shape_mask(int shape, double dx, double dy, double r) {
    const double ax = std::abs(dx), ay = std::abs(dy);
    switch (shape) {
        case 0: return dx * dx + dy * dy < r * r;                          // disc
        case 1: {                                                          // ring
            const double d2 = dx * dx + dy * dy;
            return d2 < r * r && d2 > 0.45 * r * r;
        }
        case 2: return ax < r * 0.85 && ay < r * 0.85;                       // square
        case 3: return (ax < r * 0.35 && ay < r) || (ay < r * 0.35 && ax < r);  // cross
        case 4: return ay < r * 0.8 && ax < (r * 0.8 - dy) * 0.6;            // triangle
        case 5: return ax + ay < r * 1.1;                                    // diamond
    }
    return false;
}

}  // namespace

Dataset make_synthetic_dataset(const SynthSpec& spec) {
    if (spec.class_ids.empty()) throw ValidationError("synthetic dataset: no classes");
    for (int64_t id : spec.class_ids)
        if (id < 0 || id >= kNumShapes * kNumColors)
            throw ValidationError("synthetic dataset: class id out of range");
    const int64_t S = spec.size;
    if (S < 8) throw ValidationError("synthetic dataset: size too small");
    const int64_t num_classes = static_cast<int64_t>(spec.class_ids.size());
    const int64_t N = num_classes * spec.n_per_class;

    Dataset d;
    d.images = Tensor<float>::zeros({N, 3, S, S});
    d.labels.resize(static_cast<size_t>(N));
    d.num_classes = num_classes;
    d.name = spec.name;

    int64_t idx = 0;
    for (int64_t cls = 0; cls < num_classes; ++cls) {
        const int64_t combo = spec.class_ids[static_cast<size_t>(cls)];
        const int shape = static_cast<int>(combo % kNumShapes);
        const int color = static_cast<int>((combo / kNumShapes) % kNumColors);
        for (int64_t k = 0; k < spec.n_per_class; ++k, ++idx) {
            Rng ex = Rng::substream(spec.seed, static_cast<uint64_t>(combo * 1000003 + k));
            const double base = ex.uniform(0.08, 0.35);
            const double grad_y = ex.uniform(-0.12, 0.12);
            const double grad_x = ex.uniform(-0.12, 0.12);
            const double cx = S / 2.0 + ex.uniform(-0.18, 0.18) * S;
            const double cy = S / 2.0 + ex.uniform(-0.18, 0.18) * S;
            const double r = ex.uniform(0.22, 0.38) * S;
            const double bright = ex.uniform(0.65, 1.0);
            float* img = d.images.ptr() + idx * 3 * S * S;
            for (int64_t y = 0; y < S; ++y)
                for (int64_t x = 0; x < S; ++x) {
                    const double bg = base + grad_y * (static_cast<double>(y) / S) +
                                      grad_x * (static_cast<double>(x) / S) +
                                      ex.uniform(-spec.noise, spec.noise);
                    const bool hit = shape_mask(shape, x - cx, y - cy, r);
                    for (int64_t c = 0; c < 3; ++c) {
                        double v = hit ? kPalette[color][c] * bright : bg;
                        v += ex.uniform(-spec.noise / 2, spec.noise / 2);
                        img[(c * S + y) * S + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
                    }
                }
            d.labels[static_cast<size_t>(idx)] = static_cast<uint16_t>(cls);
        }
    }
    return d;
}

Tensor<float> make_train_batch(const Dataset& ds, const std::vector<int64_t>& indices,
                               const AugPolicy& policy, Rng& rng) {
    const int64_t B = static_cast<int64_t>(indices.size());
    Tensor<float> out = Tensor<float>::zeros({B, ds.channels(), policy.crop_to, policy.crop_to});
    const int64_t plane = ds.channels() * policy.crop_to * policy.crop_to;
    for (int64_t i = 0; i < B; ++i) {
        Tensor<float> img = preprocess_train(ds.image(indices[static_cast<size_t>(i)]), policy, rng);
        std::memcpy(out.ptr() + i * plane, img.ptr(), sizeof(float) * static_cast<size_t>(plane));
    }
    return out;
}

Tensor<float> make_eval_batch(const Dataset& ds, const std::vector<int64_t>& indices,
                              const AugPolicy& policy) {
    const int64_t B = static_cast<int64_t>(indices.size());
    Tensor<float> out =
        Tensor<float>::zeros({B, ds.channels(), policy.eval_resize_to, policy.eval_resize_to});
    const int64_t plane = ds.channels() * policy.eval_resize_to * policy.eval_resize_to;
    for (int64_t i = 0; i < B; ++i) {
        Tensor<float> img = preprocess_eval(ds.image(indices[static_cast<size_t>(i)]), policy);
        std::memcpy(out.ptr() + i * plane, img.ptr(), sizeof(float) * static_cast<size_t>(plane));
    }
    return out;
}

}  // namespace bitkit
