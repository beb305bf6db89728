#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "cfp/prompt.hpp"
#include "cfp/rng.hpp"
#include "cfp/scm.hpp"
#include "cfp/tensor.hpp"

using namespace cfp;

namespace {

// Identity prototypes + zeroed context + the zero-initialized meta output
// pin every class embedding to its coordinate axis: g_c = e_c exactly. That
// turns the contrastive losses into hand-computable scalars.
PromptState axis_state(int num_classes, int embed_dim, int prompt_length, double tau) {
    Tensor protos = Tensor::zeros({num_classes, embed_dim});
    for (int c = 0; c < num_classes; ++c) protos(c, c) = 1.0;
    PromptState st = make_prompt_state(num_classes, embed_dim, prompt_length, tau, 2024, &protos);
    st.learnable.set("ctx", Tensor::zeros({prompt_length, embed_dim}));
    return st;
}

Tensor unit_rows(int n, int d, Rng& rng) {
    Tensor t = Tensor::zeros({n, d});
    for (int i = 0; i < n; ++i) {
        double norm = 0.0;
        for (int j = 0; j < d; ++j) {
            t(i, j) = rng.gaussian();
            norm += t(i, j) * t(i, j);
        }
        norm = std::sqrt(norm);
        for (int j = 0; j < d; ++j) t(i, j) /= norm;
    }
    return t;
}

Tensor row_from(const Tensor& m, int row) {
    Tensor out = Tensor::zeros({1, m.cols()});
    for (int j = 0; j < m.cols(); ++j) out(0, j) = m(row, j);
    return out;
}

// Cluster world for end-to-end prompt training: samples scatter around their
// class prototype, counterfactuals around a neighboring class's prototype.
struct ClusterWorld {
    Tensor protos;
    PromptTrainData train;
    PromptEvalData seen_eval;
    PromptEvalData unseen_eval;
};

ClusterWorld make_cluster_world(int K, int d, Rng& rng) {
    ClusterWorld w;
    w.protos = unit_rows(K, d, rng);
    const std::vector<int> seen = {0, 1, 2};
    const std::vector<int> unseen = {3, 4};
    auto draw = [&](int cls) {
        Tensor v = Tensor::zeros({1, d});
        double norm = 0.0;
        for (int j = 0; j < d; ++j) {
            v(0, j) = w.protos(cls, j) + 0.25 * rng.gaussian();
            norm += v(0, j) * v(0, j);
        }
        norm = std::sqrt(norm);
        for (int j = 0; j < d; ++j) v(0, j) /= norm;
        return v;
    };
    const int n_train = 36, n_eval = 30;
    w.train.v = Tensor::zeros({n_train, d});
    w.train.v_cf = Tensor::zeros({n_train, d});
    for (int i = 0; i < n_train; ++i) {
        const int c = seen[static_cast<std::size_t>(i % 3)];
        const int c_cf = seen[static_cast<std::size_t>((i + 1) % 3)];
        Tensor v = draw(c), vcf = draw(c_cf);
        for (int j = 0; j < d; ++j) {
            w.train.v(i, j) = v(0, j);
            w.train.v_cf(i, j) = vcf(0, j);
        }
        w.train.labels.push_back(c);
    }
    w.train.class_set = seen;
    w.seen_eval.class_set = seen;
    w.seen_eval.v = Tensor::zeros({n_eval, d});
    for (int i = 0; i < n_eval; ++i) {
        const int c = seen[static_cast<std::size_t>(i % 3)];
        Tensor v = draw(c);
        for (int j = 0; j < d; ++j) w.seen_eval.v(i, j) = v(0, j);
        w.seen_eval.labels.push_back(c);
    }
    w.unseen_eval.class_set = unseen;
    w.unseen_eval.v = Tensor::zeros({n_eval, d});
    for (int i = 0; i < n_eval; ++i) {
        const int c = unseen[static_cast<std::size_t>(i % 2)];
        Tensor v = draw(c);
        for (int j = 0; j < d; ++j) w.unseen_eval.v(i, j) = v(0, j);
        w.unseen_eval.labels.push_back(c);
    }
    return w;
}

}  // namespace

TEST_CASE("axis-rigged state pins every class embedding to its coordinate") {
    PromptState st = axis_state(4, 8, 3, 1.0);
    Tensor v = Tensor::zeros({1, 8});
    v(0, 6) = 0.8;  // arbitrary probe; embeddings must not depend on it at init
    for (int c = 0; c < 4; ++c) {
        Tensor g = prompt_embed(st, v, c);
        for (int j = 0; j < 8; ++j) CHECK(g(0, j) == doctest::Approx(j == c ? 1.0 : 0.0).epsilon(1e-9));
    }
}

TEST_CASE("repulsion loss at (tau=1, v.g=2, v_cf.g=0) equals log(1+exp(-2))") {
    PromptState st = axis_state(4, 8, 3, 1.0);
    Tensor v = Tensor::zeros({1, 8});
    v(0, 0) = 2.0;  // v . g_0 = 2
    Tensor v_cf = Tensor::zeros({1, 8});  // v_cf . g_0 = 0
    const double loss = loss_cf(st, v, v_cf, {0});
    CHECK(std::abs(loss - std::log(1.0 + std::exp(-2.0))) < 1e-6);
}

TEST_CASE("identical factual and counterfactual embeddings cost log 2") {
    Rng rng(3);
    PromptState st = make_prompt_state(5, 10, 4, 0.07, 99);
    Tensor v = unit_rows(6, 10, rng);
    std::vector<int> labels = {0, 1, 2, 3, 4, 0};
    const double loss = loss_cf(st, v, v, labels);
    CHECK(std::abs(loss - std::log(2.0)) < 1e-12);
}

TEST_CASE("a strongly repelled counterfactual costs nothing") {
    PromptState st = axis_state(4, 8, 3, 1.0);
    Tensor v = Tensor::zeros({1, 8});
    v(0, 0) = 2.0;
    Tensor v_cf = Tensor::zeros({1, 8});
    v_cf(0, 0) = -40.0;
    CHECK(loss_cf(st, v, v_cf, {0}) < 1e-12);
}

TEST_CASE("equidistant prompts give the maximum-entropy basic loss ln |C|") {
    PromptState st = axis_state(4, 8, 3, 0.07);
    Tensor v = Tensor::zeros({1, 8});
    v(0, 7) = 1.0;  // orthogonal to every class axis: all dot products equal 0
    CHECK(std::abs(loss_basic(st, v, {0}, {0, 1, 2}) - std::log(3.0)) < 1e-9);
    CHECK(std::abs(loss_basic(st, v, {2}, {0, 1, 2, 3}) - std::log(4.0)) < 1e-9);
}

TEST_CASE("a single-class set has zero basic loss") {
    Rng rng(4);
    PromptState st = make_prompt_state(4, 8, 3, 0.07, 7);
    Tensor v = unit_rows(3, 8, rng);
    CHECK(loss_basic(st, v, {1, 1, 1}, {1}) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("total loss is exactly basic plus lambda times repulsion") {
    Rng rng(5);
    PromptState st = make_prompt_state(5, 10, 4, 0.07, 11);
    Tensor v = unit_rows(8, 10, rng);
    Tensor v_cf = unit_rows(8, 10, rng);
    std::vector<int> labels = {0, 1, 2, 0, 1, 2, 0, 1};
    const std::vector<int> class_set = {0, 1, 2};
    const double basic = loss_basic(st, v, labels, class_set);
    const double cf = loss_cf(st, v, v_cf, labels);
    for (double lambda : {0.0, 1.0, 2.5}) {
        CHECK(std::abs(total_loss(st, v, v_cf, labels, class_set, lambda) - (basic + lambda * cf)) < 1e-12);
    }
    CHECK_THROWS_AS(total_loss(st, v, v_cf, labels, class_set, -0.5), std::invalid_argument);
}

TEST_CASE("total-loss gradients decompose linearly") {
    Rng rng(6);
    PromptState st = make_prompt_state(4, 8, 3, 0.07, 13);
    Tensor v = unit_rows(5, 8, rng);
    Tensor v_cf = unit_rows(5, 8, rng);
    std::vector<int> labels = {0, 1, 2, 0, 1};
    const std::vector<int> class_set = {0, 1, 2};
    const double lambda = 1.75;
    GradResult total = forward_and_grad(st.learnable, [&](const VarMap& vars) {
        return total_loss_graph(vars, st, v, v_cf, labels, class_set, lambda);
    });
    GradResult basic = forward_and_grad(st.learnable, [&](const VarMap& vars) {
        return loss_basic_graph(vars, st, v, labels, class_set);
    });
    GradResult cf = forward_and_grad(st.learnable, [&](const VarMap& vars) {
        return loss_cf_graph(vars, st, v, v_cf, labels);
    });
    for (const auto& [name, g] : total.grads) {
        const Tensor& gb = basic.grads.at(name);
        const Tensor& gc = cf.grads.at(name);
        for (int i = 0; i < g.numel(); ++i) CHECK(std::abs(g[i] - (gb[i] + lambda * gc[i])) < 1e-10);
    }
}

TEST_CASE("prompt embeddings are unit rows, class-distinct, and instance-blind at init") {
    Rng rng(7);
    PromptState st = make_prompt_state(5, 12, 4, 0.07, 15);
    Tensor v1 = unit_rows(3, 12, rng);
    Tensor v2 = unit_rows(3, 12, rng);
    Tensor ga = prompt_embed(st, v1, 2);
    for (int i = 0; i < ga.rows(); ++i) {
        double norm = 0.0;
        for (int j = 0; j < ga.cols(); ++j) norm += ga(i, j) * ga(i, j);
        CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));
    }
    // Meta output is zero-initialized: embeddings ignore v until training.
    Tensor gb = prompt_embed(st, v2, 2);
    for (int i = 0; i < ga.numel(); ++i) CHECK(ga[i] == gb[i]);
    // Distinct classes map the same v to distinct prompts.
    Tensor gc = prompt_embed(st, v1, 3);
    CHECK(l2_distance(ga, gc) > 1e-3);
    CHECK_THROWS_AS(prompt_embed(st, v1, 5), std::invalid_argument);
    CHECK_THROWS_AS(prompt_embed(st, Tensor::zeros({3, 11}), 2), std::invalid_argument);
}

TEST_CASE("loss contracts validate shapes, labels, and class sets") {
    Rng rng(8);
    PromptState st = make_prompt_state(4, 8, 3, 0.07, 17);
    Tensor v = unit_rows(4, 8, rng);
    CHECK_THROWS_AS(loss_basic(st, v, {0, 1, 2, 0}, {}), std::invalid_argument);
    CHECK_THROWS_AS(loss_basic(st, v, {0, 1, 2, 0}, {0, 0, 1}), std::invalid_argument);
    CHECK_THROWS_AS(loss_basic(st, v, {0, 1}, {0, 1, 2}), std::invalid_argument);
    CHECK_THROWS_AS(loss_basic(st, v, {0, 1, 3, 0}, {0, 1, 2}), std::invalid_argument);
    CHECK_THROWS_AS(loss_cf(st, v, Tensor::zeros({3, 8}), {0, 1, 2, 0}), std::invalid_argument);
    CHECK_THROWS_AS(loss_cf(st, v, v, {0, 1, 2}), std::invalid_argument);
    CHECK_THROWS_AS(loss_cf(st, v, v, {0, 1, 2, 4}), std::invalid_argument);
}

TEST_CASE("prompt training preserves frozen tensors and improves seen accuracy") {
    Rng rng(9);
    ClusterWorld w = make_cluster_world(5, 8, rng);
    PromptState st = make_prompt_state(5, 8, 4, 0.07, 19, &w.protos);
    const std::uint64_t frozen = st.frozen_checksum;
    const double acc_before = accuracy_from_embeddings(st, w.seen_eval.v, w.seen_eval.labels, w.seen_eval.class_set);

    AdamConfig adam;
    adam.lr = 0.003;
    auto rows = train_prompts(st, w.train, 1.0, 150, adam, &w.seen_eval, &w.unseen_eval);
    REQUIRE(rows.size() == 150);
    CHECK(prompt_frozen_checksum(st) == frozen);
    CHECK(rows.back().seen_acc >= acc_before);
    CHECK(rows.back().seen_acc >= 0.9);

    int non_increasing = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].total <= rows[i - 1].total + 1e-9) ++non_increasing;
    }
    CHECK(non_increasing >= static_cast<int>(0.8 * (rows.size() - 1)));
}

TEST_CASE("the repulsion term widens the factual/counterfactual margin") {
    Rng rng(10);
    ClusterWorld w = make_cluster_world(5, 8, rng);
    PromptState init = make_prompt_state(5, 8, 4, 0.07, 21, &w.protos);
    AdamConfig adam;
    adam.lr = 0.003;

    PromptState with_cf = init;
    train_prompts(with_cf, w.train, 1.0, 150, adam, nullptr, nullptr);
    PromptState without_cf = init;
    train_prompts(without_cf, w.train, 0.0, 150, adam, nullptr, nullptr);

    CHECK(repulsion_margin(with_cf, w.train) > repulsion_margin(without_cf, w.train));
}

TEST_CASE("training rejects malformed data and epoch counts") {
    Rng rng(11);
    ClusterWorld w = make_cluster_world(5, 8, rng);
    PromptState st = make_prompt_state(5, 8, 4, 0.07, 23, &w.protos);
    AdamConfig adam;
    CHECK_THROWS_AS(train_prompts(st, w.train, 1.0, 0, adam, nullptr, nullptr), std::invalid_argument);
    PromptTrainData bad = w.train;
    bad.v_cf = Tensor::zeros({bad.v.rows() - 1, bad.v.cols()});
    CHECK_THROWS_AS(train_prompts(st, bad, 1.0, 5, adam, nullptr, nullptr), std::invalid_argument);
    PromptTrainData foreign = w.train;
    foreign.labels[0] = 4;  // not in the seen class set
    CHECK_THROWS_AS(train_prompts(st, foreign, 1.0, 5, adam, nullptr, nullptr), std::invalid_argument);
}

TEST_CASE("classification handles singletons, temperature changes, and unseen tokens") {
    Rng rng(12);
    ClusterWorld w = make_cluster_world(5, 8, rng);
    PromptState st = make_prompt_state(5, 8, 4, 0.07, 25, &w.protos);

    const Tensor probe_row = row_from(w.seen_eval.v, 0);
    Classification single = classify(st, probe_row.data, {2});
    CHECK(single.cls == 2);
    CHECK(single.probs == std::vector<double>{1.0});

    Classification cold = classify(st, probe_row.data, {0, 1, 2});
    PromptState warm = st;
    warm.tau = st.tau * 3.0;  // monotone rescaling of every logit
    CHECK(classify(warm, probe_row.data, {0, 1, 2}).cls == cold.cls);

    // Unseen class tokens work without any training-time dependence on them.
    const Tensor unseen_probe = row_from(w.unseen_eval.v, 0);
    Classification u = classify(st, unseen_probe.data, w.unseen_eval.class_set);
    CHECK((u.cls == 3 || u.cls == 4));
    const double acc = accuracy_from_embeddings(st, w.unseen_eval.v, w.unseen_eval.labels, w.unseen_eval.class_set);
    CHECK(acc >= 0.9);  // prototype-calibrated anchors are informative untrained
}

TEST_CASE("prompt state survives a pack/unpack round trip") {
    Rng rng(13);
    ClusterWorld w = make_cluster_world(5, 8, rng);
    PromptState st = make_prompt_state(5, 8, 4, 0.07, 27, &w.protos);
    AdamConfig adam;
    adam.lr = 0.003;
    train_prompts(st, w.train, 1.0, 20, adam, nullptr, nullptr);

    PromptState back = unpack_prompt_state(pack_prompt_state(st));
    CHECK(back.num_classes == st.num_classes);
    CHECK(back.embed_dim == st.embed_dim);
    CHECK(back.prompt_length == st.prompt_length);
    CHECK(back.tau == st.tau);
    CHECK(back.frozen_checksum == st.frozen_checksum);
    CHECK(param_checksum(back.learnable) == param_checksum(st.learnable));
    const Tensor probe_row = row_from(w.seen_eval.v, 1);
    Classification a = classify(st, probe_row.data, {0, 1, 2});
    Classification b = classify(back, probe_row.data, {0, 1, 2});
    CHECK(a.cls == b.cls);
    REQUIRE(a.probs.size() == b.probs.size());
    for (std::size_t i = 0; i < a.probs.size(); ++i) CHECK(a.probs[i] == b.probs[i]);
}

TEST_CASE("frozen encoder embeds deterministically with unit norm and separates classes") {
    ScmSpec spec;
    spec.num_classes = 4;
    const int m = spec.image_dim();
    Rng world(31);
    const int per = 24;
    Tensor images = Tensor::zeros({per * 4, m});
    std::vector<int> labels;
    for (int c = 0; c < 4; ++c) {
        for (int i = 0; i < per; ++i) {
            Tensor img = render_image(spec, c, style_from_exogenous(world.uniform_vector(3)),
                                      world.uniform_vector(static_cast<std::size_t>(m)));
            for (int j = 0; j < m; ++j) images(c * per + i, j) = img[j];
            labels.push_back(c);
        }
    }
    // Hold out the last 4 images of each class from pretraining.
    Tensor train_imgs = Tensor::zeros({4 * (per - 4), m});
    std::vector<int> train_labels;
    Tensor held = Tensor::zeros({16, m});
    std::vector<int> held_labels;
    int tr = 0, ho = 0;
    for (int c = 0; c < 4; ++c) {
        for (int i = 0; i < per; ++i) {
            const int row = c * per + i;
            if (i < per - 4) {
                for (int j = 0; j < m; ++j) train_imgs(tr, j) = images(row, j);
                train_labels.push_back(c);
                ++tr;
            } else {
                for (int j = 0; j < m; ++j) held(ho, j) = images(row, j);
                held_labels.push_back(c);
                ++ho;
            }
        }
    }
    Rng enc_rng(33);
    EncoderState enc = pretrain_image_encoder(train_imgs, train_labels, 4, {64}, 16, 300, 32, enc_rng, AdamConfig{});

    Tensor e1 = encode(enc, held);
    Tensor e2 = encode(enc, held);
    for (int i = 0; i < e1.numel(); ++i) CHECK(e1[i] == e2[i]);
    for (int i = 0; i < e1.rows(); ++i) {
        double norm = 0.0;
        for (int j = 0; j < e1.cols(); ++j) norm += e1(i, j) * e1(i, j);
        CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));
    }

    // Nearest mean-embedding centroid on held-out images: the linear-probe floor.
    Tensor train_emb = encode(enc, train_imgs);
    Tensor centroids = Tensor::zeros({4, enc.embed_dim});
    std::vector<int> counts(4, 0);
    for (int i = 0; i < train_emb.rows(); ++i) {
        const int c = train_labels[static_cast<std::size_t>(i)];
        for (int j = 0; j < enc.embed_dim; ++j) centroids(c, j) += train_emb(i, j);
        ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < 4; ++c)
        for (int j = 0; j < enc.embed_dim; ++j) centroids(c, j) /= counts[static_cast<std::size_t>(c)];
    int hits = 0;
    for (int i = 0; i < e1.rows(); ++i) {
        int best = 0;
        double best_dot = -2.0;
        for (int c = 0; c < 4; ++c) {
            double d = 0.0;
            for (int j = 0; j < enc.embed_dim; ++j) d += e1(i, j) * centroids(c, j);
            if (d > best_dot) {
                best_dot = d;
                best = c;
            }
        }
        hits += best == held_labels[static_cast<std::size_t>(i)];
    }
    CHECK(hits >= 15);  // >= 0.9 on 16 held-out images

    CHECK_THROWS_AS(encode(enc, Tensor::zeros({2, m - 1})), std::invalid_argument);
    Rng bad(1);
    CHECK_THROWS_AS(pretrain_image_encoder(train_imgs, {0, 1}, 4, {16}, 8, 10, 8, bad, AdamConfig{}),
                    std::invalid_argument);
    CHECK_THROWS_AS(pretrain_image_encoder(train_imgs, train_labels, 1, {16}, 8, 10, 8, bad, AdamConfig{}),
                    std::invalid_argument);
}
