#include "deepnoc/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace deepnoc {

namespace {

struct LayerDef {
    const char* name;
    int in;
    int out;
    Activation act;
};

std::vector<LayerDef> layer_defs(bool secondary) {
    const int peak_merge_in = secondary ? 128 + 1 + kPeakCountClasses : 128;
    const int locus_merge_in = secondary ? 128 + kMaxNoc + kLocusCountClasses : 128;
    return {
        {"peak_encoder.0", kNumPeakFeatures, 128, Activation::Relu},
        {"peak_encoder.1", 128, 128, Activation::Relu},
        {"peak_encoder.2", 128, 128, Activation::Relu},
        {"peak_head_prop", 128, 1, Activation::Sigmoid},
        {"peak_head_count", 128, kPeakCountClasses, Activation::Softmax},
        {"peak_merge", peak_merge_in, 128, Activation::Relu},
        {"locus_encoder.0", 256, 256, Activation::Relu},
        {"locus_encoder.1", 256, 256, Activation::Relu},
        {"locus_encoder.2", 256, 128, Activation::Relu},
        {"locus_head_mix", 128, kMaxNoc, Activation::Softmax},
        {"locus_head_count", 128, kLocusCountClasses, Activation::Softmax},
        {"locus_merge", locus_merge_in, 128, Activation::Relu},
        {"trunk.0", 256, 256, Activation::Relu},
        {"trunk.1", 256, 256, Activation::Relu},
        {"trunk.2", 256, 128, Activation::Relu},
        {"trunk.3", 128, 64, Activation::Relu},
        {"trunk.4", 64, 32, Activation::Relu},
        {"profile_head_mix", 32, kMaxNoc, Activation::Softmax},
        {"noc_head", 32, kMaxNoc, Activation::Softmax},
    };
}

} // namespace

template <class T>
DeepNoCModel<T> DeepNoCModel<T>::build(std::uint64_t seed, bool with_secondary) {
    DeepNoCModel<T> model;
    model.secondary = with_secondary;
    model.init_seed = seed;
    const auto defs = layer_defs(with_secondary);
    std::size_t total = 0;
    for (const LayerDef& d : defs) {
        total += static_cast<std::size_t>(d.in) * d.out + static_cast<std::size_t>(d.out);
    }
    model.params.assign(total, T(0));
    model.layers.resize(defs.size());
    Rng rng(seed);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < defs.size(); ++i) {
        const LayerDef& d = defs[i];
        LayerSpec<T>& spec = model.layers[i];
        spec.layer = DenseLayer<T>(d.name, d.in, d.out, d.act);
        spec.layer.init(rng);
        spec.w_offset = offset;
        offset += static_cast<std::size_t>(d.in) * d.out;
        spec.b_offset = offset;
        offset += static_cast<std::size_t>(d.out);
        std::copy(spec.layer.weights.data.begin(), spec.layer.weights.data.end(),
                  model.params.begin() + static_cast<std::ptrdiff_t>(spec.w_offset));
        std::copy(spec.layer.bias.data.begin(), spec.layer.bias.data.end(),
                  model.params.begin() + static_cast<std::ptrdiff_t>(spec.b_offset));
    }
    return model;
}

template <class T>
void DeepNoCModel<T>::sync_layers() {
    for (LayerSpec<T>& spec : layers) {
        std::copy(params.begin() + static_cast<std::ptrdiff_t>(spec.w_offset),
                  params.begin() + static_cast<std::ptrdiff_t>(spec.w_offset) +
                      static_cast<std::ptrdiff_t>(spec.layer.weights.size()),
                  spec.layer.weights.data.begin());
        std::copy(params.begin() + static_cast<std::ptrdiff_t>(spec.b_offset),
                  params.begin() + static_cast<std::ptrdiff_t>(spec.b_offset) +
                      static_cast<std::ptrdiff_t>(spec.layer.bias.size()),
                  spec.layer.bias.data.begin());
    }
}

template <class T>
std::vector<ParamBlock> DeepNoCModel<T>::parameter_blocks() const {
    std::vector<ParamBlock> blocks;
    blocks.reserve(layers.size());
    for (const LayerSpec<T>& spec : layers) {
        blocks.push_back({spec.layer.name, spec.w_offset,
                          spec.layer.weights.size() + spec.layer.bias.size()});
    }
    return blocks;
}

template <class T>
template <class U>
DeepNoCModel<U> DeepNoCModel<T>::cast() const {
    DeepNoCModel<U> out = DeepNoCModel<U>::build(init_seed, secondary);
    for (std::size_t i = 0; i < params.size(); ++i) out.params[i] = static_cast<U>(params[i]);
    out.sync_layers();
    return out;
}

namespace {

template <class T>
void resize_zero(std::vector<T>& v, std::size_t n) {
    v.assign(n, T(0));
}

} // namespace

template <class T>
void DeepNoCModel<T>::run_forward(const float* rows, const std::int16_t* row_locus, int n,
                                  Workspace& ws) const {
    // Group consecutive rows by locus; compact rows are locus-grouped in kit order.
    ws.locus_ids.clear();
    ws.locus_begin.clear();
    for (int i = 0; i < n; ++i) {
        if (i == 0 || row_locus[i] != row_locus[i - 1]) {
            ws.locus_ids.push_back(row_locus[i]);
            ws.locus_begin.push_back(i);
        }
    }
    ws.locus_begin.push_back(n);
    const int nl = static_cast<int>(ws.locus_ids.size());

    const auto& L = layers;
    const std::size_t un = static_cast<std::size_t>(n);

    resize_zero(ws.x, un * kNumPeakFeatures);
    for (std::size_t i = 0; i < un * kNumPeakFeatures; ++i) ws.x[i] = static_cast<T>(rows[i]);

    resize_zero(ws.a1, un * 128);
    resize_zero(ws.a2, un * 128);
    resize_zero(ws.a3, un * 128);
    const int merge_in = L[kPeakMerge].layer.in;
    resize_zero(ws.m, un * static_cast<std::size_t>(merge_in));
    resize_zero(ws.a4, un * 128);
    if (secondary) {
        resize_zero(ws.p1, un * 1);
        resize_zero(ws.p2, un * kPeakCountClasses);
    }

    if (n > 0) {
        dense_forward(L[kPeakEnc0].layer, ws.x.data(), n, ws.a1.data());
        dense_forward(L[kPeakEnc1].layer, ws.a1.data(), n, ws.a2.data());
        dense_forward(L[kPeakEnc2].layer, ws.a2.data(), n, ws.a3.data());
        if (secondary) {
            dense_forward(L[kPeakHeadProp].layer, ws.a3.data(), n, ws.p1.data());
            dense_forward(L[kPeakHeadCount].layer, ws.a3.data(), n, ws.p2.data());
            for (int i = 0; i < n; ++i) {
                T* dst = ws.m.data() + static_cast<std::size_t>(i) * merge_in;
                std::memcpy(dst, ws.a3.data() + static_cast<std::size_t>(i) * 128,
                            sizeof(T) * 128);
                dst[128] = ws.p1[static_cast<std::size_t>(i)];
                std::memcpy(dst + 129, ws.p2.data() + static_cast<std::size_t>(i) * kPeakCountClasses,
                            sizeof(T) * kPeakCountClasses);
            }
        } else {
            std::memcpy(ws.m.data(), ws.a3.data(), sizeof(T) * un * 128);
        }
        dense_forward(L[kPeakMerge].layer, ws.m.data(), n, ws.a4.data());
    }

    // Peak pooling per locus: [mean || max] of the merge outputs.
    const std::size_t unl = static_cast<std::size_t>(nl);
    resize_zero(ws.pool1, unl * 256);
    ws.pool1_argmax.assign(unl * 128, -1);
    ws.mask.assign(static_cast<std::size_t>(std::max(n, 1)), 1);
    for (int l = 0; l < nl; ++l) {
        const int b = ws.locus_begin[static_cast<std::size_t>(l)];
        const int e = ws.locus_begin[static_cast<std::size_t>(l) + 1];
        masked_pool_forward(ws.a4.data() + static_cast<std::size_t>(b) * 128, ws.mask.data(),
                            e - b, 128, ws.pool1.data() + static_cast<std::size_t>(l) * 256,
                            ws.pool1_argmax.data() + static_cast<std::size_t>(l) * 128);
    }

    resize_zero(ws.b1, unl * 256);
    resize_zero(ws.b2, unl * 256);
    resize_zero(ws.b3, unl * 128);
    const int lmerge_in = L[kLocusMerge].layer.in;
    resize_zero(ws.nmerge, unl * static_cast<std::size_t>(lmerge_in));
    resize_zero(ws.b4, unl * 128);
    if (secondary) {
        resize_zero(ws.q3, unl * kMaxNoc);
        resize_zero(ws.q4, unl * kLocusCountClasses);
    }

    if (nl > 0) {
        dense_forward(L[kLocusEnc0].layer, ws.pool1.data(), nl, ws.b1.data());
        dense_forward(L[kLocusEnc1].layer, ws.b1.data(), nl, ws.b2.data());
        dense_forward(L[kLocusEnc2].layer, ws.b2.data(), nl, ws.b3.data());
        if (secondary) {
            dense_forward(L[kLocusHeadMix].layer, ws.b3.data(), nl, ws.q3.data());
            dense_forward(L[kLocusHeadCount].layer, ws.b3.data(), nl, ws.q4.data());
            for (int l = 0; l < nl; ++l) {
                T* dst = ws.nmerge.data() + static_cast<std::size_t>(l) * lmerge_in;
                std::memcpy(dst, ws.b3.data() + static_cast<std::size_t>(l) * 128,
                            sizeof(T) * 128);
                std::memcpy(dst + 128, ws.q3.data() + static_cast<std::size_t>(l) * kMaxNoc,
                            sizeof(T) * kMaxNoc);
                std::memcpy(dst + 128 + kMaxNoc,
                            ws.q4.data() + static_cast<std::size_t>(l) * kLocusCountClasses,
                            sizeof(T) * kLocusCountClasses);
            }
        } else {
            std::memcpy(ws.nmerge.data(), ws.b3.data(), sizeof(T) * unl * 128);
        }
        dense_forward(L[kLocusMerge].layer, ws.nmerge.data(), nl, ws.b4.data());
    }

    // Profile pooling over active loci.
    resize_zero(ws.pool2, 256);
    ws.pool2_argmax.assign(128, -1);
    ws.mask.assign(static_cast<std::size_t>(std::max(nl, 1)), 1);
    masked_pool_forward(ws.b4.data(), ws.mask.data(), nl, 128, ws.pool2.data(),
                        ws.pool2_argmax.data());

    resize_zero(ws.c1, 256);
    resize_zero(ws.c2, 256);
    resize_zero(ws.c3, 128);
    resize_zero(ws.c4, 64);
    resize_zero(ws.c5, 32);
    resize_zero(ws.o6, kMaxNoc);
    dense_forward(L[kTrunk0].layer, ws.pool2.data(), 1, ws.c1.data());
    dense_forward(L[kTrunk1].layer, ws.c1.data(), 1, ws.c2.data());
    dense_forward(L[kTrunk2].layer, ws.c2.data(), 1, ws.c3.data());
    dense_forward(L[kTrunk3].layer, ws.c3.data(), 1, ws.c4.data());
    dense_forward(L[kTrunk4].layer, ws.c4.data(), 1, ws.c5.data());
    if (secondary) {
        resize_zero(ws.o5, kMaxNoc);
        dense_forward(L[kProfileHeadMix].layer, ws.c5.data(), 1, ws.o5.data());
    }
    dense_forward(L[kNocHead].layer, ws.c5.data(), 1, ws.o6.data());
}

template <class T>
ModelOutputs<T> DeepNoCModel<T>::forward(const EncodedProfile& enc, Workspace& ws) const {
    run_forward(enc.rows.data(), enc.row_locus.data(), enc.active_rows(), ws);
    ModelOutputs<T> out;
    const int n = enc.active_rows();
    const int nl = static_cast<int>(ws.locus_ids.size());
    if (secondary) {
        out.peak_prop.assign(ws.p1.begin(), ws.p1.begin() + n);
        out.peak_count.assign(ws.p2.begin(),
                              ws.p2.begin() + static_cast<std::ptrdiff_t>(n) * kPeakCountClasses);
        out.locus_mixture.assign(ws.q3.begin(),
                                 ws.q3.begin() + static_cast<std::ptrdiff_t>(nl) * kMaxNoc);
        out.locus_count.assign(
            ws.q4.begin(), ws.q4.begin() + static_cast<std::ptrdiff_t>(nl) * kLocusCountClasses);
        for (int i = 0; i < kMaxNoc; ++i) out.profile_mixture[static_cast<std::size_t>(i)] = ws.o5[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < kMaxNoc; ++i) out.noc[static_cast<std::size_t>(i)] = ws.o6[static_cast<std::size_t>(i)];
    out.locus_ids.assign(ws.locus_ids.begin(), ws.locus_ids.end());
    return out;
}

template <class T>
ModelOutputs<T> DeepNoCModel<T>::forward(const ProfileTensor& tensor, Workspace& ws) const {
    std::vector<float> rows;
    std::vector<std::int16_t> row_locus;
    for (int locus = 0; locus < kNumLoci; ++locus) {
        for (int slot = 0; slot < kMaxPeaksPerLocus; ++slot) {
            bool active = false;
            for (int f = 0; f < kNumPeakFeatures; ++f) {
                if (tensor.at(locus, slot, f) != 0.0f) {
                    active = true;
                    break;
                }
            }
            if (!active) continue;
            const std::size_t base = rows.size();
            rows.resize(base + kNumPeakFeatures);
            std::memcpy(rows.data() + base, &tensor.at(locus, slot, 0),
                        sizeof(float) * kNumPeakFeatures);
            row_locus.push_back(static_cast<std::int16_t>(locus));
        }
    }
    EncodedProfile enc;
    enc.rows = std::move(rows);
    enc.row_locus = std::move(row_locus);
    enc.noc = 1; // unused by forward
    return forward(enc, ws);
}

template <class T>
T DeepNoCModel<T>::loss_only(const EncodedProfile& enc, const LossWeights& weights,
                             Workspace& ws) const {
    run_forward(enc.rows.data(), enc.row_locus.data(), enc.active_rows(), ws);
    const int n = enc.active_rows();
    const int nl = static_cast<int>(ws.locus_ids.size());
    T loss = T(0);
    if (secondary && n > 0) {
        T l1 = T(0), l2 = T(0);
        for (int i = 0; i < n; ++i) {
            const T d = ws.p1[static_cast<std::size_t>(i)] -
                        static_cast<T>(enc.prop_allelic[static_cast<std::size_t>(i)]);
            l1 += d * d;
            const int c = enc.peak_count_class[static_cast<std::size_t>(i)];
            l2 -= std::log(std::max(
                ws.p2[static_cast<std::size_t>(i) * kPeakCountClasses + static_cast<std::size_t>(c)],
                T(1e-12)));
        }
        loss += static_cast<T>(weights.w[0]) * l1 / static_cast<T>(n);
        loss += static_cast<T>(weights.w[1]) * l2 / static_cast<T>(n);
    }
    if (secondary && nl > 0) {
        T l3 = T(0), l4 = T(0);
        for (int l = 0; l < nl; ++l) {
            const int locus = ws.locus_ids[static_cast<std::size_t>(l)];
            for (int j = 0; j < kMaxNoc; ++j) {
                const T d = ws.q3[static_cast<std::size_t>(l) * kMaxNoc + static_cast<std::size_t>(j)] -
                            static_cast<T>(
                                enc.locus_mixture[static_cast<std::size_t>(locus * kMaxNoc + j)]);
                l3 += d * d;
            }
            const int c = enc.locus_count_class[static_cast<std::size_t>(locus)];
            l4 -= std::log(std::max(ws.q4[static_cast<std::size_t>(l) * kLocusCountClasses +
                                          static_cast<std::size_t>(c)],
                                    T(1e-12)));
        }
        loss += static_cast<T>(weights.w[2]) * l3 / static_cast<T>(nl * kMaxNoc);
        loss += static_cast<T>(weights.w[3]) * l4 / static_cast<T>(nl);
    }
    if (secondary) {
        T l5 = T(0);
        for (int j = 0; j < kMaxNoc; ++j) {
            const T d = ws.o5[static_cast<std::size_t>(j)] -
                        static_cast<T>(enc.profile_mixture[static_cast<std::size_t>(j)]);
            l5 += d * d;
        }
        loss += static_cast<T>(weights.w[4]) * l5 / static_cast<T>(kMaxNoc);
    }
    loss += static_cast<T>(weights.w[5]) *
            -std::log(std::max(ws.o6[static_cast<std::size_t>(enc.noc - 1)], T(1e-12)));
    return loss;
}

template <class T>
T DeepNoCModel<T>::loss_and_grad(const EncodedProfile& enc, const LossWeights& weights,
                                 Workspace& ws, std::vector<T>& grad,
                                 std::array<T, 6>* terms_out) const {
    run_forward(enc.rows.data(), enc.row_locus.data(), enc.active_rows(), ws);
    const int n = enc.active_rows();
    const int nl = static_cast<int>(ws.locus_ids.size());
    const auto& L = layers;
    if (grad.size() != params.size()) grad.assign(params.size(), T(0));

    std::array<T, 6> terms{};

    auto dw = [&](LayerId id) { return grad.data() + L[id].w_offset; };
    auto db = [&](LayerId id) { return grad.data() + L[id].b_offset; };

    // ---- profile level --------------------------------------------------
    std::vector<T> dc5(32, T(0));
    {
        // NoC head: cross-entropy, gradient written directly in logit space.
        std::vector<T> dz(kMaxNoc);
        const T w6 = static_cast<T>(weights.w[5]);
        for (int j = 0; j < kMaxNoc; ++j) {
            const T y = (j == enc.noc - 1) ? T(1) : T(0);
            dz[static_cast<std::size_t>(j)] = w6 * (ws.o6[static_cast<std::size_t>(j)] - y);
        }
        terms[5] = w6 * -std::log(std::max(ws.o6[static_cast<std::size_t>(enc.noc - 1)], T(1e-12)));
        kernels::accum_grad(ws.c5.data(), dz.data(), 1, 32, kMaxNoc, dw(kNocHead), db(kNocHead));
        kernels::matmul_nt(dz.data(), 1, kMaxNoc, L[kNocHead].layer.weights.data.data(),
                           dc5.data(), 32);
    }
    if (secondary) {
        // Profile mixture head: MSE on the softmax outputs.
        std::vector<T> dval(kMaxNoc), dz(kMaxNoc);
        const T w5 = static_cast<T>(weights.w[4]);
        T l5 = T(0);
        for (int j = 0; j < kMaxNoc; ++j) {
            const T d = ws.o5[static_cast<std::size_t>(j)] -
                        static_cast<T>(enc.profile_mixture[static_cast<std::size_t>(j)]);
            l5 += d * d;
            dval[static_cast<std::size_t>(j)] = w5 * T(2) * d / T(kMaxNoc);
        }
        terms[4] = w5 * l5 / T(kMaxNoc);
        activation_backward_row(ws.o5.data(), dval.data(), dz.data(), kMaxNoc,
                                Activation::Softmax);
        kernels::accum_grad(ws.c5.data(), dz.data(), 1, 32, kMaxNoc, dw(kProfileHeadMix),
                            db(kProfileHeadMix));
        kernels::matmul_nt(dz.data(), 1, kMaxNoc, L[kProfileHeadMix].layer.weights.data.data(),
                           dc5.data(), 32);
    }

    // Trunk backward.
    std::vector<T> dc4(64, T(0)), dc3(128, T(0)), dc2(256, T(0)), dc1(256, T(0)),
        dpool2(256, T(0));
    std::vector<T> dz_buf;
    dense_backward(L[kTrunk4].layer, ws.c4.data(), ws.c5.data(), dc5.data(), 1, dc4.data(),
                   dw(kTrunk4), db(kTrunk4), dz_buf);
    dense_backward(L[kTrunk3].layer, ws.c3.data(), ws.c4.data(), dc4.data(), 1, dc3.data(),
                   dw(kTrunk3), db(kTrunk3), dz_buf);
    dense_backward(L[kTrunk2].layer, ws.c2.data(), ws.c3.data(), dc3.data(), 1, dc2.data(),
                   dw(kTrunk2), db(kTrunk2), dz_buf);
    dense_backward(L[kTrunk1].layer, ws.c1.data(), ws.c2.data(), dc2.data(), 1, dc1.data(),
                   dw(kTrunk1), db(kTrunk1), dz_buf);
    dense_backward(L[kTrunk0].layer, ws.pool2.data(), ws.c1.data(), dc1.data(), 1, dpool2.data(),
                   dw(kTrunk0), db(kTrunk0), dz_buf);

    // ---- locus level ------------------------------------------------------
    const std::size_t unl = static_cast<std::size_t>(nl);
    if (nl > 0) {
        std::vector<T> db4(unl * 128, T(0));
        ws.mask.assign(unl, 1);
        masked_pool_backward(ws.mask.data(), nl, 128, ws.pool2_argmax.data(), dpool2.data(),
                             db4.data());

        const int lmerge_in = L[kLocusMerge].layer.in;
        std::vector<T> dnmerge(unl * static_cast<std::size_t>(lmerge_in), T(0));
        dense_backward(L[kLocusMerge].layer, ws.nmerge.data(), ws.b4.data(), db4.data(), nl,
                       dnmerge.data(), dw(kLocusMerge), db(kLocusMerge), dz_buf);

        std::vector<T> db3(unl * 128, T(0));
        for (int l = 0; l < nl; ++l) {
            std::memcpy(db3.data() + static_cast<std::size_t>(l) * 128,
                        dnmerge.data() + static_cast<std::size_t>(l) * lmerge_in, sizeof(T) * 128);
        }

        if (secondary) {
            // Locus mixture head: downstream gradient + MSE, through the
            // softmax Jacobian.
            std::vector<T> dq3(unl * kMaxNoc);
            const T w3 = static_cast<T>(weights.w[2]);
            T l3 = T(0);
            for (int l = 0; l < nl; ++l) {
                const int locus = ws.locus_ids[static_cast<std::size_t>(l)];
                for (int j = 0; j < kMaxNoc; ++j) {
                    const std::size_t idx = static_cast<std::size_t>(l) * kMaxNoc +
                                            static_cast<std::size_t>(j);
                    const T d = ws.q3[idx] - static_cast<T>(enc.locus_mixture[static_cast<std::size_t>(
                                                locus * kMaxNoc + j)]);
                    l3 += d * d;
                    dq3[idx] = dnmerge[static_cast<std::size_t>(l) * lmerge_in + 128 +
                                       static_cast<std::size_t>(j)] +
                               w3 * T(2) * d / T(nl * kMaxNoc);
                }
            }
            terms[2] = w3 * l3 / T(nl * kMaxNoc);
            dense_backward(L[kLocusHeadMix].layer, ws.b3.data(), ws.q3.data(), dq3.data(), nl,
                           db3.data(), dw(kLocusHeadMix), db(kLocusHeadMix), dz_buf);

            // Locus count head: downstream gradient through the Jacobian plus
            // the cross-entropy shortcut in logit space.
            std::vector<T> dq4(unl * kLocusCountClasses);
            std::vector<T> dz4(unl * kLocusCountClasses);
            const T w4 = static_cast<T>(weights.w[3]);
            T l4 = T(0);
            for (int l = 0; l < nl; ++l) {
                const int locus = ws.locus_ids[static_cast<std::size_t>(l)];
                const int c = enc.locus_count_class[static_cast<std::size_t>(locus)];
                l4 -= std::log(std::max(ws.q4[static_cast<std::size_t>(l) * kLocusCountClasses +
                                              static_cast<std::size_t>(c)],
                                        T(1e-12)));
                for (int j = 0; j < kLocusCountClasses; ++j) {
                    const std::size_t idx = static_cast<std::size_t>(l) * kLocusCountClasses +
                                            static_cast<std::size_t>(j);
                    dq4[idx] = dnmerge[static_cast<std::size_t>(l) * lmerge_in + 128 + kMaxNoc +
                                       static_cast<std::size_t>(j)];
                    const T y = (j == c) ? T(1) : T(0);
                    dz4[idx] = w4 * (ws.q4[idx] - y) / T(nl);
                }
            }
            terms[3] = w4 * l4 / T(nl);
            dense_backward(L[kLocusHeadCount].layer, ws.b3.data(), ws.q4.data(), dq4.data(), nl,
                           db3.data(), dw(kLocusHeadCount), db(kLocusHeadCount), dz_buf,
                           dz4.data());
        }

        std::vector<T> db2(unl * 256, T(0)), db1(unl * 256, T(0)), dpool1(unl * 256, T(0));
        dense_backward(L[kLocusEnc2].layer, ws.b2.data(), ws.b3.data(), db3.data(), nl, db2.data(),
                       dw(kLocusEnc2), db(kLocusEnc2), dz_buf);
        dense_backward(L[kLocusEnc1].layer, ws.b1.data(), ws.b2.data(), db2.data(), nl, db1.data(),
                       dw(kLocusEnc1), db(kLocusEnc1), dz_buf);
        dense_backward(L[kLocusEnc0].layer, ws.pool1.data(), ws.b1.data(), db1.data(), nl,
                       dpool1.data(), dw(kLocusEnc0), db(kLocusEnc0), dz_buf);

        // ---- peak level ----------------------------------------------------
        const std::size_t un = static_cast<std::size_t>(n);
        std::vector<T> da4(un * 128, T(0));
        for (int l = 0; l < nl; ++l) {
            const int b = ws.locus_begin[static_cast<std::size_t>(l)];
            const int e = ws.locus_begin[static_cast<std::size_t>(l) + 1];
            ws.mask.assign(static_cast<std::size_t>(e - b), 1);
            masked_pool_backward(ws.mask.data(), e - b, 128,
                                 ws.pool1_argmax.data() + static_cast<std::size_t>(l) * 128,
                                 dpool1.data() + static_cast<std::size_t>(l) * 256,
                                 da4.data() + static_cast<std::size_t>(b) * 128);
        }

        const int merge_in = L[kPeakMerge].layer.in;
        std::vector<T> dm(un * static_cast<std::size_t>(merge_in), T(0));
        dense_backward(L[kPeakMerge].layer, ws.m.data(), ws.a4.data(), da4.data(), n, dm.data(),
                       dw(kPeakMerge), db(kPeakMerge), dz_buf);

        std::vector<T> da3(un * 128, T(0));
        for (int i = 0; i < n; ++i) {
            std::memcpy(da3.data() + static_cast<std::size_t>(i) * 128,
                        dm.data() + static_cast<std::size_t>(i) * merge_in, sizeof(T) * 128);
        }

        if (secondary) {
            // Peak proportion head: sigmoid + MSE.
            std::vector<T> dp1(un);
            const T w1 = static_cast<T>(weights.w[0]);
            T l1 = T(0);
            for (int i = 0; i < n; ++i) {
                const T d = ws.p1[static_cast<std::size_t>(i)] -
                            static_cast<T>(enc.prop_allelic[static_cast<std::size_t>(i)]);
                l1 += d * d;
                dp1[static_cast<std::size_t>(i)] =
                    dm[static_cast<std::size_t>(i) * merge_in + 128] + w1 * T(2) * d / T(n);
            }
            terms[0] = w1 * l1 / T(n);
            dense_backward(L[kPeakHeadProp].layer, ws.a3.data(), ws.p1.data(), dp1.data(), n,
                           da3.data(), dw(kPeakHeadProp), db(kPeakHeadProp), dz_buf);

            // Peak count head: softmax + cross-entropy.
            std::vector<T> dp2(un * kPeakCountClasses);
            std::vector<T> dz2(un * kPeakCountClasses);
            const T w2 = static_cast<T>(weights.w[1]);
            T l2 = T(0);
            for (int i = 0; i < n; ++i) {
                const int c = enc.peak_count_class[static_cast<std::size_t>(i)];
                l2 -= std::log(std::max(ws.p2[static_cast<std::size_t>(i) * kPeakCountClasses +
                                              static_cast<std::size_t>(c)],
                                        T(1e-12)));
                for (int j = 0; j < kPeakCountClasses; ++j) {
                    const std::size_t idx = static_cast<std::size_t>(i) * kPeakCountClasses +
                                            static_cast<std::size_t>(j);
                    dp2[idx] = dm[static_cast<std::size_t>(i) * merge_in + 129 +
                                  static_cast<std::size_t>(j)];
                    const T y = (j == c) ? T(1) : T(0);
                    dz2[idx] = w2 * (ws.p2[idx] - y) / T(n);
                }
            }
            terms[1] = w2 * l2 / T(n);
            dense_backward(L[kPeakHeadCount].layer, ws.a3.data(), ws.p2.data(), dp2.data(), n,
                           da3.data(), dw(kPeakHeadCount), db(kPeakHeadCount), dz_buf,
                           dz2.data());
        }

        std::vector<T> da2(un * 128, T(0)), da1(un * 128, T(0));
        dense_backward(L[kPeakEnc2].layer, ws.a2.data(), ws.a3.data(), da3.data(), n, da2.data(),
                       dw(kPeakEnc2), db(kPeakEnc2), dz_buf);
        dense_backward(L[kPeakEnc1].layer, ws.a1.data(), ws.a2.data(), da2.data(), n, da1.data(),
                       dw(kPeakEnc1), db(kPeakEnc1), dz_buf);
        dense_backward(L[kPeakEnc0].layer, ws.x.data(), ws.a1.data(), da1.data(), n,
                       static_cast<T*>(nullptr), dw(kPeakEnc0), db(kPeakEnc0), dz_buf);
    }

    T total = T(0);
    for (const T t : terms) total += t;
    if (terms_out) *terms_out = terms;
    return total;
}

template <class T>
TotalLoss<T> total_loss(const ModelOutputs<T>& outputs, const EncodedProfile& labels,
                        const LossWeights& weights) {
    weights.validate();
    TotalLoss<T> result;
    result.value_grads.locus_ids = outputs.locus_ids;
    const int n = static_cast<int>(outputs.peak_prop.size());
    const int nl = static_cast<int>(outputs.locus_ids.size());

    if (n > 0 && !outputs.peak_prop.empty()) {
        result.value_grads.peak_prop.assign(static_cast<std::size_t>(n), T(0));
        result.value_grads.peak_count.assign(static_cast<std::size_t>(n) * kPeakCountClasses, T(0));
        T l1 = T(0), l2 = T(0);
        for (int i = 0; i < n; ++i) {
            const T d = outputs.peak_prop[static_cast<std::size_t>(i)] -
                        static_cast<T>(labels.prop_allelic[static_cast<std::size_t>(i)]);
            l1 += d * d;
            result.value_grads.peak_prop[static_cast<std::size_t>(i)] =
                static_cast<T>(weights.w[0]) * T(2) * d / T(n);
            const int c = labels.peak_count_class[static_cast<std::size_t>(i)];
            const std::size_t idx = static_cast<std::size_t>(i) * kPeakCountClasses +
                                    static_cast<std::size_t>(c);
            const T p = std::max(outputs.peak_count[idx], T(1e-12));
            l2 -= std::log(p);
            result.value_grads.peak_count[idx] = static_cast<T>(weights.w[1]) * (-T(1) / p) / T(n);
        }
        result.terms[0] = static_cast<T>(weights.w[0]) * l1 / T(n);
        result.terms[1] = static_cast<T>(weights.w[1]) * l2 / T(n);
    }
    if (nl > 0 && !outputs.locus_mixture.empty()) {
        result.value_grads.locus_mixture.assign(static_cast<std::size_t>(nl) * kMaxNoc, T(0));
        result.value_grads.locus_count.assign(static_cast<std::size_t>(nl) * kLocusCountClasses,
                                              T(0));
        T l3 = T(0), l4 = T(0);
        for (int l = 0; l < nl; ++l) {
            const int locus = outputs.locus_ids[static_cast<std::size_t>(l)];
            for (int j = 0; j < kMaxNoc; ++j) {
                const std::size_t idx = static_cast<std::size_t>(l) * kMaxNoc +
                                        static_cast<std::size_t>(j);
                const T d = outputs.locus_mixture[idx] -
                            static_cast<T>(labels.locus_mixture[static_cast<std::size_t>(
                                locus * kMaxNoc + j)]);
                l3 += d * d;
                result.value_grads.locus_mixture[idx] =
                    static_cast<T>(weights.w[2]) * T(2) * d / T(nl * kMaxNoc);
            }
            const int c = labels.locus_count_class[static_cast<std::size_t>(locus)];
            const std::size_t idx = static_cast<std::size_t>(l) * kLocusCountClasses +
                                    static_cast<std::size_t>(c);
            const T p = std::max(outputs.locus_count[idx], T(1e-12));
            l4 -= std::log(p);
            result.value_grads.locus_count[idx] =
                static_cast<T>(weights.w[3]) * (-T(1) / p) / T(nl);
        }
        result.terms[2] = static_cast<T>(weights.w[2]) * l3 / T(nl * kMaxNoc);
        result.terms[3] = static_cast<T>(weights.w[3]) * l4 / T(nl);
    }
    {
        T l5 = T(0);
        for (int j = 0; j < kMaxNoc; ++j) {
            const T d = outputs.profile_mixture[static_cast<std::size_t>(j)] -
                        static_cast<T>(labels.profile_mixture[static_cast<std::size_t>(j)]);
            l5 += d * d;
            result.value_grads.profile_mixture[static_cast<std::size_t>(j)] =
                static_cast<T>(weights.w[4]) * T(2) * d / T(kMaxNoc);
        }
        result.terms[4] = static_cast<T>(weights.w[4]) * l5 / T(kMaxNoc);
        const T p = std::max(outputs.noc[static_cast<std::size_t>(labels.noc - 1)], T(1e-12));
        result.terms[5] = static_cast<T>(weights.w[5]) * -std::log(p);
        result.value_grads.noc[static_cast<std::size_t>(labels.noc - 1)] =
            static_cast<T>(weights.w[5]) * (-T(1) / p);
    }
    for (const T t : result.terms) result.total += t;
    return result;
}

template <class T>
DenseOutputs expand_outputs(const ModelOutputs<T>& outputs, const EncodedProfile& enc) {
    DenseOutputs dense;
    std::array<int, kNumLoci> used{};
    const int n = enc.active_rows();
    for (int i = 0; i < n; ++i) {
        const int locus = enc.row_locus[static_cast<std::size_t>(i)];
        const int slot = used[static_cast<std::size_t>(locus)]++;
        const std::size_t cell = static_cast<std::size_t>(locus) * kMaxPeaksPerLocus +
                                 static_cast<std::size_t>(slot);
        if (!outputs.peak_prop.empty())
            dense.peak_prop[cell] = static_cast<float>(outputs.peak_prop[static_cast<std::size_t>(i)]);
        if (!outputs.peak_count.empty()) {
            for (int j = 0; j < kPeakCountClasses; ++j) {
                dense.peak_count[cell * kPeakCountClasses + static_cast<std::size_t>(j)] =
                    static_cast<float>(outputs.peak_count[static_cast<std::size_t>(i) *
                                                              kPeakCountClasses +
                                                          static_cast<std::size_t>(j)]);
            }
        }
    }
    for (std::size_t l = 0; l < outputs.locus_ids.size(); ++l) {
        const int locus = outputs.locus_ids[l];
        if (!outputs.locus_mixture.empty()) {
            for (int j = 0; j < kMaxNoc; ++j) {
                dense.locus_mixture[static_cast<std::size_t>(locus * kMaxNoc + j)] =
                    static_cast<float>(outputs.locus_mixture[l * kMaxNoc + static_cast<std::size_t>(j)]);
            }
        }
        if (!outputs.locus_count.empty()) {
            for (int j = 0; j < kLocusCountClasses; ++j) {
                dense.locus_count[static_cast<std::size_t>(locus) * kLocusCountClasses +
                                  static_cast<std::size_t>(j)] =
                    static_cast<float>(
                        outputs.locus_count[l * kLocusCountClasses + static_cast<std::size_t>(j)]);
            }
        }
    }
    for (int j = 0; j < kMaxNoc; ++j) {
        dense.profile_mixture[static_cast<std::size_t>(j)] =
            static_cast<float>(outputs.profile_mixture[static_cast<std::size_t>(j)]);
        dense.noc[static_cast<std::size_t>(j)] = static_cast<float>(outputs.noc[static_cast<std::size_t>(j)]);
    }
    return dense;
}

// ---- weight files ------------------------------------------------------------

namespace {

constexpr char kWeightMagic[6] = {'D', 'N', 'O', 'C', 'W', '1'};
constexpr std::uint32_t kWeightVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char buf[4] = {static_cast<unsigned char>(v & 0xff),
                            static_cast<unsigned char>((v >> 8) & 0xff),
                            static_cast<unsigned char>((v >> 16) & 0xff),
                            static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(buf), 4);
}

void write_u64(std::ofstream& out, std::uint64_t v) {
    write_u32(out, static_cast<std::uint32_t>(v & 0xffffffffULL));
    write_u32(out, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
    unsigned char buf[4];
    if (!in.read(reinterpret_cast<char*>(buf), 4))
        throw DataError("truncated weight file: " + path);
    return static_cast<std::uint32_t>(buf[0]) | (static_cast<std::uint32_t>(buf[1]) << 8) |
           (static_cast<std::uint32_t>(buf[2]) << 16) | (static_cast<std::uint32_t>(buf[3]) << 24);
}

std::uint64_t read_u64(std::ifstream& in, const std::string& path) {
    const std::uint64_t lo = read_u32(in, path);
    const std::uint64_t hi = read_u32(in, path);
    return lo | (hi << 32);
}

} // namespace

template <class T>
void DeepNoCModel<T>::save_weights(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open weight file for writing: " + path);
    out.write(kWeightMagic, 6);
    write_u32(out, kWeightVersion);
    write_u32(out, secondary ? 1u : 0u);
    write_u64(out, init_seed);
    write_u32(out, static_cast<std::uint32_t>(layers.size()));
    std::vector<float> buffer;
    for (const LayerSpec<T>& spec : layers) {
        write_u32(out, static_cast<std::uint32_t>(spec.layer.in));
        write_u32(out, static_cast<std::uint32_t>(spec.layer.out));
        write_u32(out, static_cast<std::uint32_t>(spec.layer.act));
        buffer.resize(spec.layer.weights.size() + spec.layer.bias.size());
        std::size_t k = 0;
        for (const T v : spec.layer.weights.data) buffer[k++] = static_cast<float>(v);
        for (const T v : spec.layer.bias.data) buffer[k++] = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(buffer.data()),
                  static_cast<std::streamsize>(buffer.size() * sizeof(float)));
    }
    if (!out) throw DataError("I/O failure writing weight file: " + path);
}

template <class T>
DeepNoCModel<T> DeepNoCModel<T>::load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open weight file: " + path);
    char magic[6];
    if (!in.read(magic, 6) || std::memcmp(magic, kWeightMagic, 6) != 0)
        throw DataError("bad weight file magic: " + path);
    const std::uint32_t version = read_u32(in, path);
    if (version != kWeightVersion)
        throw DataError("unsupported weight file version " + std::to_string(version) + ": " + path);
    const std::uint32_t flags = read_u32(in, path);
    const std::uint64_t seed = read_u64(in, path);
    const std::uint32_t count = read_u32(in, path);

    DeepNoCModel<T> model = DeepNoCModel<T>::build(seed, (flags & 1u) != 0);
    if (count != model.layers.size())
        throw DataError("weight file layer count mismatch vs current architecture: " + path);
    std::vector<float> buffer;
    for (LayerSpec<T>& spec : model.layers) {
        const std::uint32_t in_dim = read_u32(in, path);
        const std::uint32_t out_dim = read_u32(in, path);
        const std::uint32_t act = read_u32(in, path);
        if (in_dim != static_cast<std::uint32_t>(spec.layer.in) ||
            out_dim != static_cast<std::uint32_t>(spec.layer.out) ||
            act != static_cast<std::uint32_t>(spec.layer.act))
            throw DataError("weight file dimension mismatch vs current architecture at layer '" +
                            spec.layer.name + "': " + path);
        buffer.resize(spec.layer.weights.size() + spec.layer.bias.size());
        if (!in.read(reinterpret_cast<char*>(buffer.data()),
                     static_cast<std::streamsize>(buffer.size() * sizeof(float))))
            throw DataError("truncated weight file: " + path);
        std::size_t k = 0;
        for (std::size_t i = 0; i < spec.layer.weights.size(); ++i)
            model.params[spec.w_offset + i] = static_cast<T>(buffer[k++]);
        for (std::size_t i = 0; i < spec.layer.bias.size(); ++i)
            model.params[spec.b_offset + i] = static_cast<T>(buffer[k++]);
    }
    model.sync_layers();
    return model;
}

template <class T>
std::string DeepNoCModel<T>::model_card_json(const std::string& extra) const {
    std::ostringstream out;
    out << "{\n  \"seed\": " << init_seed << ",\n  \"secondary_heads\": "
        << (secondary ? "true" : "false") << ",\n  \"parameter_count\": " << parameter_count()
        << ",\n  \"main_branch_layers\": " << kMainBranchLayers << ",\n  \"layers\": [\n";
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const DenseLayer<T>& l = layers[i].layer;
        static const char* kActNames[] = {"identity", "relu", "sigmoid", "softmax"};
        out << "    {\"name\": \"" << l.name << "\", \"in\": " << l.in << ", \"out\": " << l.out
            << ", \"activation\": \"" << kActNames[static_cast<int>(l.act)] << "\"}"
            << (i + 1 < layers.size() ? "," : "") << "\n";
    }
    out << "  ]";
    if (!extra.empty()) out << ",\n  \"training\": " << extra;
    out << "\n}\n";
    return out.str();
}

double gradient_check(DeepNoCModel<double>& model, const std::vector<EncodedProfile>& batch,
                      const LossWeights& weights, double eps, int min_coords, std::uint64_t seed) {
    if (batch.empty()) throw DataError("gradient_check requires a nonempty batch");
    typename DeepNoCModel<double>::Workspace ws;
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    std::vector<double> analytic(model.params.size(), 0.0);
    for (const EncodedProfile& enc : batch) {
        model.loss_and_grad(enc, weights, ws, analytic);
    }
    for (double& g : analytic) g *= inv_b;

    auto batch_loss = [&]() {
        double loss = 0.0;
        for (const EncodedProfile& enc : batch) loss += model.loss_only(enc, weights, ws);
        return loss * inv_b;
    };

    auto patch = [&](std::size_t index, double value) {
        model.params[index] = value;
        for (LayerSpec<double>& spec : model.layers) {
            if (index >= spec.w_offset && index < spec.w_offset + spec.layer.weights.size()) {
                spec.layer.weights.data[index - spec.w_offset] = value;
                return;
            }
            if (index >= spec.b_offset && index < spec.b_offset + spec.layer.bias.size()) {
                spec.layer.bias.data[index - spec.b_offset] = value;
                return;
            }
        }
    };

    Rng rng(seed);
    double max_rel = 0.0;
    std::vector<std::size_t> coords;
    coords.reserve(static_cast<std::size_t>(min_coords));
    while (coords.size() < static_cast<std::size_t>(min_coords)) {
        const std::size_t c = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(model.params.size()) - 1));
        if (std::find(coords.begin(), coords.end(), c) == coords.end()) coords.push_back(c);
    }
    for (const std::size_t c : coords) {
        const double old = model.params[c];
        patch(c, old + eps);
        const double up = batch_loss();
        patch(c, old - eps);
        const double down = batch_loss();
        patch(c, old);
        const double fd = (up - down) / (2.0 * eps);
        const double a = analytic[c];
        const double rel = std::abs(a - fd) / std::max(std::abs(a) + std::abs(fd), 1e-3);
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

// Explicit instantiations.
template class DeepNoCModel<float>;
template class DeepNoCModel<double>;
template DeepNoCModel<float> DeepNoCModel<double>::cast<float>() const;
template DeepNoCModel<double> DeepNoCModel<float>::cast<double>() const;
template DeepNoCModel<float> DeepNoCModel<float>::cast<float>() const;
template DeepNoCModel<double> DeepNoCModel<double>::cast<double>() const;
template struct TotalLoss<float>;
template struct TotalLoss<double>;
template TotalLoss<float> total_loss<float>(const ModelOutputs<float>&, const EncodedProfile&,
                                            const LossWeights&);
template TotalLoss<double> total_loss<double>(const ModelOutputs<double>&, const EncodedProfile&,
                                              const LossWeights&);
template DenseOutputs expand_outputs<float>(const ModelOutputs<float>&, const EncodedProfile&);
template DenseOutputs expand_outputs<double>(const ModelOutputs<double>&, const EncodedProfile&);

} // namespace deepnoc
