#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pflow/contconv.hpp"
#include "pflow/feature_matrix.hpp"
#include "pflow/rng.hpp"

namespace pflow {

/// Per-particle dense layer y = x W + b, W stored [in x out].
template <class Real>
struct DenseT {
    MatT<Real> w;
    std::vector<Real> b;

    DenseT() = default;
    DenseT(int in, int out) : w(in, out), b(out, Real(0)) {}
};

/// Particle Selector: two stacked convolutions on the input features,
/// followed by a per-particle scalar projection and a logistic squash.
/// The dense part is zero-initialized so every selector starts neutral
/// (weight 0.5 everywhere).
template <class Real>
struct SelectorParamsT {
    KernelTensorT<Real> conv1, conv2;
    std::vector<Real> dense_w;   // [cs]
    std::vector<Real> dense_b;   // [1]

    SelectorParamsT() = default;
    SelectorParamsT(KernelDims res, int in, int cs)
        : conv1(res, in, cs), conv2(res, cs, cs), dense_w(cs, Real(0)), dense_b(1, Real(0)) {}
};

/// Type-aware input stage of one pathway: per-type lift convolutions to the
/// hidden width (plain kernels on the main path, antisymmetric kernels on
/// the constraint path) and two stacked selectors that blend the lifted
/// fluid and solid fields.
template <class Real>
struct TaimParamsT {
    bool antisymmetric = false;
    KernelTensorT<Real> lift_fluid_c, lift_solid_c;      // main path
    AsccHalfKernelT<Real> lift_fluid_a, lift_solid_a;    // constraint path
    SelectorParamsT<Real> sel1, sel2;

    TaimParamsT() = default;
    TaimParamsT(KernelDims res, int feat_width, int channels, bool anti) : antisymmetric(anti) {
        if (anti) {
            lift_fluid_a = AsccHalfKernelT<Real>(res, feat_width, channels);
            lift_solid_a = AsccHalfKernelT<Real>(res, feat_width, channels);
        } else {
            lift_fluid_c = KernelTensorT<Real>(res, feat_width, channels);
            lift_solid_c = KernelTensorT<Real>(res, feat_width, channels);
        }
        sel1 = SelectorParamsT<Real>(res, 2 * channels, channels);
        sel2 = SelectorParamsT<Real>(res, channels, channels);
    }
};

template <class Real>
struct ConvLayerT {
    KernelTensorT<Real> kernel;
    std::vector<Real> bias;
};

template <class Real>
struct AsccLayerT {
    AsccHalfKernelT<Real> kernel;
    std::vector<Real> bias;
};

struct ModelConfig {
    int channels = 32;
    int feature_width = 4;
    KernelDims kernel_resolution;
    float support_radius = 4.5f * 0.025f;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Full dual-pipeline parameter set. The trunk is five convolution layers
/// per pathway with a feature fusion module after each one, plus one fusion
/// of the two pathway inputs, so six selector-based fusion modules total.
template <class Real>
struct ModelParamsT {
    ModelConfig config;
    TaimParamsT<Real> taim_main, taim_cons;
    DenseT<Real> fc_in_main, fc_in_cons;
    std::array<ConvLayerT<Real>, 5> main_conv;
    std::array<AsccLayerT<Real>, 5> cons_conv;
    SelectorParamsT<Real> fusion_in;
    std::array<SelectorParamsT<Real>, 5> fusion;
    DenseT<Real> head;

    /// All tensors allocated at their configured shapes, zero filled.
    static ModelParamsT zeros(const ModelConfig& cfg) {
        ModelParamsT p;
        p.config = cfg;
        const KernelDims res = cfg.kernel_resolution;
        const int c = cfg.channels, f = cfg.feature_width;
        p.taim_main = TaimParamsT<Real>(res, f, c, false);
        p.taim_cons = TaimParamsT<Real>(res, f, c, true);
        p.fc_in_main = DenseT<Real>(f, c);
        p.fc_in_cons = DenseT<Real>(f, c);
        for (auto& l : p.main_conv) {
            l.kernel = KernelTensorT<Real>(res, c, c);
            l.bias.assign(c, Real(0));
        }
        for (auto& l : p.cons_conv) {
            l.kernel = AsccHalfKernelT<Real>(res, c, c);
            l.bias.assign(c, Real(0));
        }
        p.fusion_in = SelectorParamsT<Real>(res, 2 * c, c);
        for (auto& s : p.fusion) s = SelectorParamsT<Real>(res, 2 * c, c);
        p.head = DenseT<Real>(c, 3);
        return p;
    }

    /// Training initialization: Glorot-uniform kernels and input dense
    /// layers; selector dense projections and the output head start at
    /// zero, so fusion weights begin at 0.5 and the initial model predicts
    /// zero displacement (pure ballistic motion).
    static ModelParamsT init(const ModelConfig& cfg, Rng& rng);
};

// ---------------------------------------------------------------------------
// Named-tensor addressing
// ---------------------------------------------------------------------------

template <class Real>
struct TensorRef {
    std::string name;
    std::vector<int> shape;
    std::span<Real> data;
};

namespace params_detail {

template <class Real, class Fn>
void visit_kernel(const std::string& name, KernelTensorT<Real>& k, Fn& fn) {
    fn(TensorRef<Real>{name, {k.res.nx, k.res.ny, k.res.nz, k.cin, k.cout}, k.w});
}

template <class Real, class Fn>
void visit_half(const std::string& name, AsccHalfKernelT<Real>& k, Fn& fn) {
    fn(TensorRef<Real>{name, {k.res.nx / 2, k.res.ny, k.res.nz, k.cin, k.cout}, k.h});
}

template <class Real, class Fn>
void visit_dense(const std::string& name, DenseT<Real>& d, Fn& fn) {
    fn(TensorRef<Real>{name + ".weight", {static_cast<int>(d.w.rows), d.w.cols}, d.w.v});
    fn(TensorRef<Real>{name + ".bias", {static_cast<int>(d.b.size())}, d.b});
}

template <class Real, class Fn>
void visit_selector(const std::string& name, SelectorParamsT<Real>& s, Fn& fn) {
    visit_kernel(name + ".conv1", s.conv1, fn);
    visit_kernel(name + ".conv2", s.conv2, fn);
    fn(TensorRef<Real>{name + ".dense_w", {static_cast<int>(s.dense_w.size())}, s.dense_w});
    fn(TensorRef<Real>{name + ".dense_b", {1}, s.dense_b});
}

template <class Real, class Fn>
void visit_taim(const std::string& name, TaimParamsT<Real>& t, Fn& fn) {
    if (t.antisymmetric) {
        visit_half(name + ".lift_fluid", t.lift_fluid_a, fn);
        visit_half(name + ".lift_solid", t.lift_solid_a, fn);
    } else {
        visit_kernel(name + ".lift_fluid", t.lift_fluid_c, fn);
        visit_kernel(name + ".lift_solid", t.lift_solid_c, fn);
    }
    visit_selector(name + ".sel1", t.sel1, fn);
    visit_selector(name + ".sel2", t.sel2, fn);
}

}  // namespace params_detail

/// Enumerates every named tensor exactly once, in a fixed order shared by
/// initialization, the optimizer, checkpoints, and the gradient checker.
template <class Real, class Fn>
void visit_tensors(ModelParamsT<Real>& p, Fn fn) {
    using namespace params_detail;
    visit_taim("taim_main", p.taim_main, fn);
    visit_taim("taim_cons", p.taim_cons, fn);
    visit_dense("fc_in_main", p.fc_in_main, fn);
    visit_dense("fc_in_cons", p.fc_in_cons, fn);
    for (int l = 0; l < 5; ++l) {
        const std::string ln = "main.conv" + std::to_string(l);
        visit_kernel(ln + ".kernel", p.main_conv[l].kernel, fn);
        fn(TensorRef<Real>{ln + ".bias", {static_cast<int>(p.main_conv[l].bias.size())},
                           p.main_conv[l].bias});
    }
    for (int l = 0; l < 5; ++l) {
        const std::string ln = "cons.conv" + std::to_string(l);
        visit_half(ln + ".half_kernel", p.cons_conv[l].kernel, fn);
        fn(TensorRef<Real>{ln + ".bias", {static_cast<int>(p.cons_conv[l].bias.size())},
                           p.cons_conv[l].bias});
    }
    visit_selector("fusion_in.sel", p.fusion_in, fn);
    for (int l = 0; l < 5; ++l)
        visit_selector("fusion" + std::to_string(l) + ".sel", p.fusion[l], fn);
    visit_dense("head", p.head, fn);
}

template <class Real, class Fn>
void visit_tensors(const ModelParamsT<Real>& p, Fn fn) {
    visit_tensors(const_cast<ModelParamsT<Real>&>(p), [&](TensorRef<Real> ref) {
        fn(ref);  // callers receive a mutable span but promise not to write
    });
}

template <class Real>
void init_dense_glorot(DenseT<Real>& d, Rng& rng) {
    const double bound = std::sqrt(6.0 / (d.w.rows + d.w.cols));
    for (auto& w : d.w.v) w = static_cast<Real>(rng.uniform(-bound, bound));
    std::fill(d.b.begin(), d.b.end(), Real(0));
}

template <class Real>
ModelParamsT<Real> ModelParamsT<Real>::init(const ModelConfig& cfg, Rng& rng) {
    ModelParamsT p = zeros(cfg);
    auto init_selector = [&](SelectorParamsT<Real>& s) {
        init_glorot(s.conv1, rng);
        init_glorot(s.conv2, rng);
        // dense_w / dense_b stay zero: neutral selector.
    };
    auto init_taim = [&](TaimParamsT<Real>& t) {
        if (t.antisymmetric) {
            init_glorot(t.lift_fluid_a, rng);
            init_glorot(t.lift_solid_a, rng);
        } else {
            init_glorot(t.lift_fluid_c, rng);
            init_glorot(t.lift_solid_c, rng);
        }
        init_selector(t.sel1);
        init_selector(t.sel2);
    };
    init_taim(p.taim_main);
    init_taim(p.taim_cons);
    init_dense_glorot(p.fc_in_main, rng);
    init_dense_glorot(p.fc_in_cons, rng);
    for (auto& l : p.main_conv) init_glorot(l.kernel, rng);
    for (auto& l : p.cons_conv) init_glorot(l.kernel, rng);
    init_selector(p.fusion_in);
    for (auto& s : p.fusion) init_selector(s);
    // head stays zero: dx == 0 at initialization.
    return p;
}

/// Count of scalar parameters across all tensors.
template <class Real>
std::size_t parameter_count(const ModelParamsT<Real>& p) {
    std::size_t n = 0;
    visit_tensors(p, [&](TensorRef<Real> t) { n += t.data.size(); });
    return n;
}

using ModelParams = ModelParamsT<float>;

/// Converts parameter precision (used by the float<->double checkpoints
/// and the 64-bit gradient-check path).
template <class To, class From>
ModelParamsT<To> convert_params(const ModelParamsT<From>& src) {
    ModelParamsT<To> dst = ModelParamsT<To>::zeros(src.config);
    std::vector<std::pair<std::string, std::span<const From>>> tensors;
    visit_tensors(src, [&](TensorRef<From> t) {
        tensors.emplace_back(t.name, std::span<const From>(t.data.data(), t.data.size()));
    });
    std::size_t idx = 0;
    visit_tensors(dst, [&](TensorRef<To> t) {
        PFLOW_CHECK(idx < tensors.size() && tensors[idx].first == t.name &&
                        tensors[idx].second.size() == t.data.size(),
                    "convert_params: tensor inventory mismatch");
        for (std::size_t i = 0; i < t.data.size(); ++i)
            t.data[i] = static_cast<To>(tensors[idx].second[i]);
        ++idx;
    });
    return dst;
}

}  // namespace pflow
