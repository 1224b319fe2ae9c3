#include <gtest/gtest.h>

#include <algorithm>

#include "grad_check.hpp"
#include "svdamage/fusion/model.hpp"

using namespace svdamage;
using namespace svdamage::testing;

namespace {

ModelSpec small_spec(const ModelKind& k, bool shared = false, std::size_t classes = 3) {
    ModelSpec s;
    s.strategy = k.strategy;
    s.backbone = BackboneConfig::make(k.family, BackboneVariant::mini,
                                      k.strategy == FusionStrategy::s1_channel_concat ? 6 : 3);
    s.backbone.stage_depths = {1, 1, 1, 1};
    s.backbone.stage_dims = {4, 8, 8, 8};
    s.num_classes = classes;
    s.shared_encoder = shared;
    return s;
}

// softmax(Q K^T / sqrt(d)) V, written out with loops.
Tensor<double> attention_oracle(const Tensor<double>& q, const Tensor<double>& k, const Tensor<double>& v) {
    const std::size_t N = q.dim(0), M = k.dim(0), d = q.dim(1);
    Tensor<double> out({N, v.dim(1)});
    for (std::size_t i = 0; i < N; ++i) {
        std::vector<double> s(M);
        for (std::size_t j = 0; j < M; ++j) {
            for (std::size_t c = 0; c < d; ++c) s[j] += q.at(i, c) * k.at(j, c);
            s[j] /= std::sqrt(static_cast<double>(d));
        }
        const double mx = *std::max_element(s.begin(), s.end());
        double z = 0;
        for (auto& e : s) z += (e = std::exp(e - mx));
        for (std::size_t j = 0; j < M; ++j)
            for (std::size_t c = 0; c < v.dim(1); ++c) out.at(i, c) += s[j] / z * v.at(j, c);
    }
    return out;
}

} // namespace

TEST(Fusion, ChannelConcatLayout) {
    std::mt19937_64 rng(1);
    auto a = random_tensor({2, 3, 4, 3}, rng), b = random_tensor({2, 3, 4, 3}, rng);
    auto c = fuse_channel_concat(a, b);
    EXPECT_EQ(c.shape(), (Shape{2, 3, 4, 6}));
    for (std::size_t p = 0; p < 24; ++p)
        for (std::size_t ch = 0; ch < 3; ++ch) {
            EXPECT_EQ(c[p * 6 + ch], a[p * 3 + ch]);
            EXPECT_EQ(c[p * 6 + 3 + ch], b[p * 3 + ch]);
        }
    EXPECT_THROW(fuse_channel_concat(a, random_tensor({2, 3, 5, 3}, rng)), ValidationError);
}

TEST(Fusion, WeightedSumAlgebra) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 100; ++t) {
        auto a = random_tensor({1, 2, 2, 3}, rng), b = random_tensor({1, 2, 2, 3}, rng);
        const double alpha = std::uniform_real_distribution<double>(0, 1)(rng);
        auto f = feature_fusion(a, b, alpha);
        EXPECT_EQ(feature_fusion(a, b, 1.0).storage(), a.storage());
        EXPECT_EQ(feature_fusion(a, b, 0.0).storage(), b.storage());
        auto g = feature_fusion(b, a, 1.0 - alpha);
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_NEAR(f[i], g[i], 1e-12);
            EXPECT_LE(f[i], std::max(a[i], b[i]) + 1e-12);
            EXPECT_GE(f[i], std::min(a[i], b[i]) - 1e-12);
        }
    }
    AlphaFusion<double> af;
    EXPECT_EQ(af.alpha(), 0.5);
    af.theta().value[0] = 800;
    EXPECT_EQ(af.alpha(), 1.0);
    af.theta().value[0] = -800;
    EXPECT_EQ(af.alpha(), 0.0);
}

TEST(Fusion, SiameseDifferenceProperties) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 100; ++t) {
        auto a = random_tensor({1, 2, 2, 3}, rng), b = random_tensor({1, 2, 2, 3}, rng);
        auto d = siamese_diff(a, b), e = siamese_diff(b, a);
        EXPECT_EQ(d.storage(), e.storage());
        for (std::size_t i = 0; i < d.size(); ++i) EXPECT_GE(d[i], 0.0);
        for (double v : siamese_diff(a, a).values()) EXPECT_EQ(v, 0.0);
    }
}

TEST(CrossAttention, MatchesClosedForm) {
    std::mt19937_64 rng(4);
    for (std::size_t heads : {1, 2}) {
        CrossAttention<double> xa(4, heads, false);
        xa.init(rng);
        auto pre = random_tensor({2, 5, 4}, rng), post = random_tensor({2, 3, 4}, rng);
        auto out = xa.forward(pre, post);
        ASSERT_EQ(out.shape(), (Shape{2, 5, 4}));
        nn::ParamList<double> ps;
        xa.collect(ps);
        auto project = [&](const Tensor<double>& x, std::size_t b, std::size_t n, const Tensor<double>& w) {
            Tensor<double> y({n, 4});
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t o = 0; o < 4; ++o)
                    for (std::size_t c = 0; c < 4; ++c) y.at(i, o) += w.at(o, c) * x[(b * n + i) * 4 + c];
            return y;
        };
        const std::size_t dh = 4 / heads;
        for (std::size_t b = 0; b < 2; ++b) {
            auto Q = project(pre, b, 5, ps[0]->value), K = project(post, b, 3, ps[1]->value),
                 V = project(post, b, 3, ps[2]->value);
            for (std::size_t h = 0; h < heads; ++h) {
                auto cols = [&](const Tensor<double>& m) {
                    Tensor<double> s({m.dim(0), dh});
                    for (std::size_t i = 0; i < m.dim(0); ++i)
                        for (std::size_t c = 0; c < dh; ++c) s.at(i, c) = m.at(i, h * dh + c);
                    return s;
                };
                auto ref = attention_oracle(cols(Q), cols(K), cols(V));
                for (std::size_t i = 0; i < 5; ++i)
                    for (std::size_t c = 0; c < dh; ++c)
                        EXPECT_NEAR(out[(b * 5 + i) * 4 + h * dh + c], ref.at(i, c), 1e-12);
            }
        }
        const auto& P = xa.attention();
        for (std::size_t r = 0; r < P.size() / 3; ++r) {
            double s = 0;
            for (std::size_t j = 0; j < 3; ++j) s += P[r * 3 + j];
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(CrossAttention, PermutationAndConstantValueProperties) {
    std::mt19937_64 rng(5);
    CrossAttention<double> xa(4, 2, false);
    xa.init(rng);
    auto pre = random_tensor({1, 4, 4}, rng), post = random_tensor({1, 6, 4}, rng);
    auto base = xa.forward(pre, post);
    std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    Tensor<double> post_p(post.shape()), pre_p(pre.shape());
    for (std::size_t j = 0; j < 6; ++j) std::copy_n(post.data() + perm[j] * 4, 4, post_p.data() + j * 4);
    auto same = xa.forward(pre, post_p);
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(same[i], base[i], 1e-12);
    std::vector<std::size_t> qperm{2, 0, 3, 1};
    for (std::size_t j = 0; j < 4; ++j) std::copy_n(pre.data() + qperm[j] * 4, 4, pre_p.data() + j * 4);
    auto moved = xa.forward(pre_p, post);
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(moved[j * 4 + c], base[qperm[j] * 4 + c], 1e-12);
    // Identical keys/values: every query returns that value.
    xa.set_identity();
    Tensor<double> flat({1, 6, 4});
    for (std::size_t j = 0; j < 6; ++j)
        for (std::size_t c = 0; c < 4; ++c) flat[j * 4 + c] = 0.1 * static_cast<double>(c + 1);
    auto o = xa.forward(pre, flat);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(o[i * 4 + c], 0.1 * static_cast<double>(c + 1), 1e-12);
    CrossAttention<double> res(4, 2, true);
    res.set_identity();
    auto r = res.forward(pre, flat);
    for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(r[i], pre[i] + 0.1 * static_cast<double>(i % 4 + 1), 1e-12);
    EXPECT_THROW(CrossAttention<double>(6, 4, false), ValidationError);
}

TEST(Head, PredictionProbabilities) {
    std::mt19937_64 rng(6);
    auto logits = random_tensor({5, 4}, rng, 10.0);
    auto p = logits_to_prediction(logits);
    for (std::size_t b = 0; b < 5; ++b) {
        double s = 0;
        std::size_t arg = 0;
        for (std::size_t k = 0; k < 4; ++k) {
            s += p.probabilities.at(b, k);
            if (logits.at(b, k) > logits.at(b, arg)) arg = k;
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
        EXPECT_EQ(p.labels[b], static_cast<int>(arg));
    }
}

TEST(Model, EncoderSharingAndParameterNames) {
    auto names = [](DamageModel<float>& m) {
        std::vector<std::string> v;
        for (auto& [n, p] : m.named_parameters()) v.push_back(n);
        return v;
    };
    auto has_prefix = [](const std::vector<std::string>& v, const std::string& pre) {
        return std::any_of(v.begin(), v.end(), [&](const std::string& s) { return s.rfind(pre, 0) == 0; });
    };
    DamageModel<float> s3(small_spec(parse_model_kind("s3_fusion_convnext")));
    EXPECT_NE(s3.pre_encoder(), nullptr);
    auto n3 = names(s3);
    EXPECT_TRUE(has_prefix(n3, "backbone_pre.") && has_prefix(n3, "backbone_post."));
    EXPECT_TRUE(std::count(n3.begin(), n3.end(), "fusion.theta"));
    DamageModel<float> s3s(small_spec(parse_model_kind("s3_fusion_convnext"), true));
    EXPECT_EQ(s3s.pre_encoder(), nullptr);
    EXPECT_TRUE(has_prefix(names(s3s), "backbone."));
    DamageModel<float> s4(small_spec(parse_model_kind("s4_siamese_convnext")));
    EXPECT_EQ(s4.pre_encoder(), nullptr);
    DamageModel<float> s5(small_spec(parse_model_kind("s5_dual_swin")));
    auto n5 = names(s5);
    EXPECT_TRUE(std::count(n5.begin(), n5.end(), "fusion.w_q.weight"));
    EXPECT_THROW(parse_model_kind("s9"), ValidationError);
    auto bad = small_spec(parse_model_kind("s3_fusion_convnext"));
    bad.backbone.family = BackboneFamily::swin;
    EXPECT_THROW(DamageModel<float>{bad}, ValidationError);
}

TEST(Model, SharedSiameseIsExactDifferenceOfOneEncoder) {
    DamageModel<double> m(small_spec(parse_model_kind("s4_siamese_convnext")));
    m.init(3);
    std::mt19937_64 rng(7);
    auto a = random_tensor({2, 32, 32, 3}, rng), b = random_tensor({2, 32, 32, 3}, rng);
    m.forward(&a, b);
    auto fused = m.fused_features();
    auto fa = m.post_encoder().forward(a).values, fb = m.post_encoder().forward(b).values;
    for (std::size_t i = 0; i < fused.size(); ++i) EXPECT_NEAR(fused[i], std::abs(fa[i] - fb[i]), 1e-12);
    // Identical images: zero features, so logits equal the head applied to zeros.
    auto l = m.forward(&a, a);
    auto z = m.head().forward(Tensor<double>(m.fused_features().shape()));
    for (std::size_t i = 0; i < l.size(); ++i) EXPECT_NEAR(l[i], z[i], 1e-12);
}

TEST(Model, SingleBranchRejectsMissingPre) {
    DamageModel<float> m(small_spec(parse_model_kind("s2_xattn_convnext")));
    m.init(1);
    EXPECT_THROW(m.forward(nullptr, Tensor<float>({1, 32, 32, 3})), ValidationError);
}

class ModelGradient : public ::testing::TestWithParam<std::string> {};

TEST_P(ModelGradient, EndToEndMatchesFiniteDifferences) {
    const auto kind = parse_model_kind(GetParam());
    DamageModel<double> m(small_spec(kind, false, 4));
    m.init(21);
    std::mt19937_64 rng(22);
    for (auto* p : m.parameters())
        if (p->path.find("bias") != std::string::npos || p->path.find("theta") != std::string::npos)
            for (auto& v : p->value.values()) v += 0.3 * std::normal_distribution<double>(0, 1)(rng);
    auto pre = random_tensor({2, 32, 32, 3}, rng), post = random_tensor({2, 32, 32, 3}, rng);
    auto w = random_tensor({2, 4}, rng);
    auto loss = [&] { return dot(m.forward(&pre, post), w); };
    loss();
    for (auto* p : m.parameters()) p->zero_grad();
    m.backward(w, true);

    // Parameter gradients: fusion and head exhaustively, encoders sampled.
    for (auto& [name, p] : m.named_parameters()) {
        const bool small = name.rfind("fusion", 0) == 0 || name.rfind("head", 0) == 0;
        std::uniform_int_distribution<std::size_t> pick(0, p->value.size() - 1);
        const std::size_t n = small ? std::min<std::size_t>(p->value.size(), 6) : 1;
        for (std::size_t t = 0; t < n; ++t) {
            const std::size_t i = small ? t : pick(rng);
            const double num = numeric_grad(loss, p->value[i]);
            EXPECT_PRED2([](double a, double b) { return close(a, b); }, p->grad[i], num) << name << "[" << i << "]";
        }
    }
    // Gradients at the fusion inputs.
    for (auto branch : {CamBranch::pre, CamBranch::post}) {
        if (kind.strategy == FusionStrategy::s1_channel_concat && branch == CamBranch::pre) continue;
        const auto grad = m.gradients(branch);
        ASSERT_FALSE(grad.empty());
        EXPECT_EQ(grad.shape(), m.activations(branch).shape());
    }
}

INSTANTIATE_TEST_SUITE_P(Roster, ModelGradient,
                         ::testing::Values("s1_concat", "baseline_concat_swin", "s2_xattn_convnext", "s2_xattn_swin",
                                           "s3_fusion_convnext", "s4_siamese_convnext", "s5_dual_swin"));

TEST(Model, FeatureForwardMatchesImageForward) {
    for (const auto& k : dual_channel_roster()) {
        DamageModel<double> m(small_spec(k));
        m.init(5);
        std::mt19937_64 rng(6);
        auto pre = random_tensor({3, 32, 32, 3}, rng), post = random_tensor({3, 32, 32, 3}, rng);
        auto direct = m.forward(&pre, post);
        auto [fp, fq] = m.encode(&pre, post);
        auto via = fp.values.empty() ? m.forward_from_features(fq) : m.forward_from_features(fp, fq);
        for (std::size_t i = 0; i < direct.size(); ++i) EXPECT_EQ(direct[i], via[i]) << k.name;
    }
}
