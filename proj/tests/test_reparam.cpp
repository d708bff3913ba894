// Structural re-parameterization: identity compactors must leave the model
// unchanged, the penalty gradient must match its definition, and fusion must
// splice the two gradient streams exactly.
#include <cmath>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "wid/alignment.hpp"
#include "wid/ops.hpp"
#include "wid/reparam.hpp"

using namespace wid;
using widtest::bit_equal;
using widtest::max_abs_diff;
using widtest::random_batch;
using widtest::random_tensor;
using widtest::tiny_config;

TEST_SUITE("reparam") {

TEST_CASE("wrapping with identity compactors reproduces the teacher exactly") {
    for (int variant = 0; variant < 3; ++variant) {
        ModelConfig cfg = tiny_config();
        if (variant == 1) cfg.mode = ModelMode::DecoderCausal;
        if (variant == 2) {
            cfg.attn_inner = 8;
            cfg.n_heads = 2;
        }
        ModelWeights teacher = ModelWeights::init(cfg, 50 + variant);
        Activations tacts;
        Batch batch = random_batch(cfg, 2, 6, 60 + variant);
        forward(teacher, batch, tacts);

        ReparamModel m = ReparamModel::wrap(std::move(teacher));
        RpActivations racts;
        rp_forward(m, batch, racts);
        CHECK(max_abs_diff(tacts.logits, racts.logits) <= 1e-5);
    }
}

TEST_CASE("slot layout: two compactors per wrapped weight plus head and embedding") {
    ModelConfig cfg = tiny_config();
    ReparamModel m = ReparamModel::wrap(ModelWeights::init(cfg, 1));
    CHECK(m.slots.size() == static_cast<size_t>(12 * cfg.n_layers + 2));
    CHECK(m.slot("emb.cc").kind == SlotKind::Column);
    CHECK(m.slot("out.rc").kind == SlotKind::Row);
    CHECK(m.slot("layer0.q_w.rc").kind == SlotKind::Row);
    CHECK(m.slot("layer1.d_w.cc").kind == SlotKind::Column);
    CHECK_THROWS_AS(m.slot("layer0.q_w.zz"), IndexError);
    for (const Slot& s : m.slots) {
        CHECK(s.comp.value.rows() == s.comp.value.cols());
        CHECK(s.group >= 0);
    }
    // base weights moved in untouched
    ModelWeights again = ModelWeights::init(cfg, 1);
    for (const auto& p : again.params) CHECK(bit_equal(p.value, m.base.p(p.name).value));
}

TEST_CASE("task loss equals the plain model loss at identity") {
    ModelConfig cfg = tiny_config();
    ModelWeights teacher = ModelWeights::init(cfg, 70);
    Batch batch = random_batch(cfg, 2, 5, 71);
    for (auto& t : batch.targets) t %= cfg.vocab;

    Activations acts;
    Tensor dl1;
    double want = model_loss(teacher, batch, acts, dl1);

    ReparamModel m = ReparamModel::wrap(std::move(teacher));
    RpActivations racts;
    Tensor dl2;
    double got = rp_loss(m, batch, racts, dl2);
    CHECK(got == doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("leader compactor task gradients pass finite differences") {
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ff = 12;
    cfg.vocab = 20;
    cfg.max_seq = 6;
    ReparamModel m = ReparamModel::wrap(ModelWeights::init(cfg, 80));
    Batch batch = random_batch(cfg, 2, 4, 81);
    for (auto& t : batch.targets) t %= cfg.vocab;

    // perturb leaders away from identity so gradients are generic
    for (AlignmentGroup& g : m.groups) {
        Slot& leader = m.slots[static_cast<size_t>(g.leader)];
        Tensor noise = random_tensor(leader.comp.value.shape, 90 + g.leader, 0.05f);
        for (size_t i = 0; i < noise.data.size(); ++i) leader.comp.value.data[i] += noise.data[i];
    }
    broadcast_leaders(m);

    m.zero_grads();
    RpActivations racts;
    Tensor dlogits;
    rp_loss(m, batch, racts, dlogits);
    rp_backward(m, batch, racts, dlogits);
    fold_member_grads(m, GradientPolicy::LeaderOnly);

    for (const AlignmentGroup& g : m.groups) {
        Slot& leader = m.slots[static_cast<size_t>(g.leader)];
        auto f = [&](const Tensor& v) {
            Tensor saved = leader.comp.value;
            leader.comp.value = v;
            broadcast_leaders(m);
            RpActivations a;
            Tensor d;
            double loss = rp_loss(m, batch, a, d);
            leader.comp.value = saved;
            broadcast_leaders(m);
            return loss;
        };
        // the loss sees the leader through every member, so differentiate the
        // tied-sum gradient: leader grad + transposed/duplicated member grads
        Tensor tied = leader.comp.grad;
        for (int si : g.members) {
            if (si == g.leader) continue;
            const Slot& s = m.slots[static_cast<size_t>(si)];
            if (s.tie == TieMode::Flip) {
                for (int i = 0; i < tied.rows(); ++i)
                    for (int j = 0; j < tied.cols(); ++j)
                        tied.at(i, j) += s.comp.grad.at(j, i);
            } else {
                for (size_t i = 0; i < tied.data.size(); ++i) tied.data[i] += s.comp.grad.data[i];
            }
        }
        auto r = ops::finite_difference_check(f, leader.comp.value, tied, 1e-3, 30);
        INFO(g.name);
        CHECK(r.max_rel_err < 2e-3);
    }
}

TEST_CASE("penalty gradient: unit columns where masked, zero guard, zero elsewhere") {
    Tensor comp = random_tensor({6, 6}, 100);
    for (int i = 0; i < 6; ++i) comp.at(i, 3) = 0.0f;  // dead column hits the guard
    std::vector<uint8_t> mask = {1, 0, 1, 1, 0, 0};
    Tensor g = penalty_gradient(comp, mask);
    REQUIRE(g.same_shape(comp));
    for (int j = 0; j < 6; ++j) {
        double norm2 = 0.0;
        for (int i = 0; i < 6; ++i) norm2 += static_cast<double>(g.at(i, j)) * g.at(i, j);
        if (!mask[static_cast<size_t>(j)] || j == 3) {
            CHECK(norm2 == 0.0);
        } else {
            CHECK(std::sqrt(norm2) == doctest::Approx(1.0).epsilon(1e-5));
            // direction matches the column itself
            double colnorm = 0.0;
            for (int i = 0; i < 6; ++i)
                colnorm += static_cast<double>(comp.at(i, j)) * comp.at(i, j);
            colnorm = std::sqrt(colnorm);
            for (int i = 0; i < 6; ++i)
                CHECK(g.at(i, j) == doctest::Approx(comp.at(i, j) / colnorm).epsilon(1e-5));
        }
    }
}

TEST_CASE("penalty gradient differentiates the sum of masked column norms") {
    Tensor comp = random_tensor({7, 7}, 101);
    std::vector<uint8_t> mask = {0, 1, 1, 0, 1, 0, 1};
    Tensor g = penalty_gradient(comp, mask);
    auto f = [&](const Tensor& v) {
        double s = 0.0;
        for (int j = 0; j < 7; ++j) {
            if (!mask[static_cast<size_t>(j)]) continue;
            double n2 = 0.0;
            for (int i = 0; i < 7; ++i) n2 += static_cast<double>(v.at(i, j)) * v.at(i, j);
            s += std::sqrt(n2);
        }
        return s;
    };
    auto r = ops::finite_difference_check(f, comp, g);
    CHECK(r.max_rel_err < 1e-3);
}

TEST_CASE("fusion splices penalty and task columns bit for bit") {
    auto rng = widtest::test_rng(200);
    for (int trial = 0; trial < 25; ++trial) {
        int n = 3 + trial % 9;
        Tensor comp = random_tensor({n, n}, 300 + trial);
        Tensor task = random_tensor({n, n}, 400 + trial);
        std::vector<uint8_t> mask(static_cast<size_t>(n));
        for (auto& b : mask) b = (rng() >> 13) & 1;
        float scale = trial % 3 == 0 ? 0.5f : 1.0f;

        Tensor pen = penalty_gradient(comp, mask);
        Tensor fused = task;
        fuse_gradients(fused, comp, mask, scale);
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) {
                float want = mask[static_cast<size_t>(j)] ? scale * pen.at(i, j) : task.at(i, j);
                CHECK(fused.at(i, j) == want);  // exact, no tolerance
            }
    }
}

TEST_CASE("gradients reach the compactors and the base weights") {
    ModelConfig cfg = tiny_config();
    ReparamModel m = ReparamModel::wrap(ModelWeights::init(cfg, 110));
    Batch batch = random_batch(cfg, 2, 5, 111);
    for (auto& t : batch.targets) t %= cfg.vocab;
    m.zero_grads();
    RpActivations acts;
    Tensor dlogits;
    rp_loss(m, batch, acts, dlogits);
    rp_backward(m, batch, acts, dlogits);

    auto grad_mass = [](const Tensor& t) {
        double s = 0.0;
        for (float x : t.data) s += std::abs(static_cast<double>(x));
        return s;
    };
    CHECK(grad_mass(m.slot("emb.cc").comp.grad) > 0.0);
    CHECK(grad_mass(m.slot("layer0.q_w.rc").comp.grad) > 0.0);
    CHECK(grad_mass(m.slot("out.rc").comp.grad) > 0.0);
    CHECK(grad_mass(m.base.p("layer0.u_w").grad) > 0.0);
    CHECK(grad_mass(m.base.p("tok_emb").grad) > 0.0);
}

}  // TEST_SUITE
