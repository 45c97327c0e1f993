#include <doctest.h>

#include <filesystem>

#include "tleap/net.hpp"
#include "tleap/rng.hpp"

using namespace tleap;
using nn::Depth;
using nn::LayerGraph;
using nn::LayerSpec;
using nn::Mode;
using nn::ModelConfig;
using nn::OpKind;

namespace {

ModelConfig small_config(Mode mode, Depth depth, int t, int size, int base) {
    ModelConfig c;
    c.mode = mode;
    c.depth = depth;
    c.seq_len = t;
    c.input_height = size;
    c.input_width = size;
    c.base_channels = base;
    return c;
}

int count_convs(const LayerGraph& g) {
    int n = 0;
    for (const LayerSpec& s : g) n += s.op == OpKind::Conv ? 1 : 0;
    return n;
}

int count_pools(const LayerGraph& g) {
    int n = 0;
    for (const LayerSpec& s : g) n += s.op == OpKind::MaxPool ? 1 : 0;
    return n;
}

int count_tconvs(const LayerGraph& g) {
    int n = 0;
    for (const LayerSpec& s : g) n += s.op == OpKind::ConvTranspose ? 1 : 0;
    return n;
}

}  // namespace

TEST_CASE("deeper static encoder: 12 convs in 4 groups, 3 pools between them") {
    const LayerGraph g = nn::build(small_config(Mode::Static, Depth::Deeper, 1, 200, 64));
    CHECK(count_convs(g) == 12 + 4);  // encoder 12 + decoder 2x2
    CHECK(count_pools(g) == 3);
    CHECK(count_tconvs(g) == 3);  // 2 decoder ups + final head
    // the final layer is a transposed conv with linear activation + softmax
    CHECK(g.back().op == OpKind::ConvTranspose);
    CHECK(g.back().activation == nn::Activation::Linear);
    CHECK(g.back().softmax);
    CHECK(g.back().out_channels == 17);
}

TEST_CASE("original static encoder: 9 convs in 3 groups") {
    const LayerGraph g =
        nn::build(small_config(Mode::Static, Depth::Original, 1, 200, 64));
    CHECK(count_convs(g) == 9 + 2);  // encoder 9 + decoder 1x2
    CHECK(count_pools(g) == 2);
    CHECK(count_tconvs(g) == 2);
}

TEST_CASE("temporal extents: T=4 reduces to 2 after pool1 and 1 after pool2") {
    const LayerGraph g =
        nn::build(small_config(Mode::Temporal, Depth::Deeper, 4, 200, 64));
    std::vector<const LayerSpec*> pools;
    for (const LayerSpec& s : g)
        if (s.op == OpKind::MaxPool) pools.push_back(&s);
    REQUIRE(pools.size() == 3);
    CHECK(pools[0]->in_extent == 4);
    CHECK(pools[0]->out_extent == 2);
    CHECK(pools[1]->in_extent == 2);
    CHECK(pools[1]->out_extent == 1);
    CHECK(pools[2]->out_extent == 1);
}

TEST_CASE("config validation") {
    CHECK_THROWS(nn::build(small_config(Mode::Static, Depth::Deeper, 2, 200, 64)));
    CHECK_THROWS(nn::build(small_config(Mode::Temporal, Depth::Deeper, 3, 200, 64)));
    CHECK_THROWS(nn::build(small_config(Mode::Temporal, Depth::Deeper, 1, 200, 64)));
    // deeper has 3 pooling halvings: size must divide by 8
    CHECK_THROWS(nn::build(small_config(Mode::Static, Depth::Deeper, 1, 100, 64)));
    CHECK_NOTHROW(nn::build(small_config(Mode::Static, Depth::Original, 1, 100, 64)));
}

TEST_CASE("parameter_count: deeper > original, determinism, temporal factor 3") {
    const auto deeper = nn::build(small_config(Mode::Static, Depth::Deeper, 1, 200, 64));
    const auto original =
        nn::build(small_config(Mode::Static, Depth::Original, 1, 200, 64));
    CHECK(nn::parameter_count(deeper) > nn::parameter_count(original));
    CHECK(nn::parameter_count(deeper) ==
          nn::parameter_count(nn::build(small_config(Mode::Static, Depth::Deeper, 1, 200, 64))));

    // closed-form: temporal kernels triple every conv/tconv weight count,
    // biases and batch-norm params unchanged
    const auto temporal =
        nn::build(small_config(Mode::Temporal, Depth::Deeper, 2, 200, 64));
    int64_t static_weights = 0;
    for (const LayerSpec& s : deeper)
        if (s.op != OpKind::MaxPool)
            static_weights += int64_t(s.in_channels) * s.out_channels * 9;
    CHECK(nn::parameter_count(temporal) ==
          nn::parameter_count(deeper) + 2 * static_weights);

    // count matches the materialized network's trainable scalars
    nn::Network<float> net(small_config(Mode::Temporal, Depth::Deeper, 2, 16, 4),
                           nn::build(small_config(Mode::Temporal, Depth::Deeper, 2, 16, 4)));
    int64_t actual = 0;
    for (auto* p : net.trainable_params()) actual += p->value.numel();
    CHECK(actual ==
          nn::parameter_count(nn::build(small_config(Mode::Temporal, Depth::Deeper, 2, 16, 4))));
}

TEST_CASE("forward shape contract and temporal collapse on small inputs") {
    for (Depth depth : {Depth::Original, Depth::Deeper}) {
        for (int t : {1, 2, 4}) {
            const Mode mode = t == 1 ? Mode::Static : Mode::Temporal;
            ModelConfig cfg = small_config(mode, depth, t, 24, 4);
            nn::Network<float> net(cfg, nn::build(cfg));
            net.init_weights(5);
            nn::Tensor<float> x({2, 3, t, 24, 24});
            Rng rng(9);
            for (int64_t i = 0; i < x.numel(); ++i)
                x[size_t(i)] = float(rng.uniform());
            nn::Tensor<float> y = net.forward(x, false);
            CHECK(y.shape() == std::vector<int64_t>({2, 17, 1, 24, 24}));

            // instrumented pass: temporal extent after the second pool is 1
            const auto pools = net.pool_layer_indices();
            const auto& shapes = net.last_output_shapes();
            if (t > 1) {
                REQUIRE(pools.size() >= 2);
                CHECK(shapes[pools[1]][2] == 1);
            }
            // every softmax map sums to 1
            const int64_t plane = 24 * 24;
            for (int64_t m = 0; m < 2 * 17; ++m) {
                double sum = 0;
                for (int64_t i = 0; i < plane; ++i)
                    sum += double(y[size_t(m * plane + i)]);
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("all-zero final layer weights give uniform softmax maps") {
    ModelConfig cfg = small_config(Mode::Static, Depth::Original, 1, 20, 4);
    nn::Network<float> net(cfg, nn::build(cfg));
    net.init_weights(3);
    // zero the head transposed conv (its tensors are named head.up.*)
    for (auto* p : net.params())
        if (p->name.rfind("head.up", 0) == 0) p->value.zero();
    nn::Tensor<float> x({1, 3, 1, 20, 20});
    Rng rng(4);
    for (int64_t i = 0; i < x.numel(); ++i) x[size_t(i)] = float(rng.uniform());
    nn::Tensor<float> y = net.forward(x, false);
    for (int64_t i = 0; i < y.numel(); ++i)
        CHECK(y[size_t(i)] == doctest::Approx(1.0 / 400.0).epsilon(1e-6));
}

TEST_CASE("evaluation-mode forward is bitwise deterministic") {
    ModelConfig cfg = small_config(Mode::Temporal, Depth::Original, 2, 24, 4);
    nn::Network<float> net(cfg, nn::build(cfg));
    net.init_weights(7);
    nn::Tensor<float> x({1, 3, 2, 24, 24});
    Rng rng(8);
    for (int64_t i = 0; i < x.numel(); ++i) x[size_t(i)] = float(rng.uniform());
    nn::Tensor<float> a = net.forward(x, false);
    nn::Tensor<float> b = net.forward(x, false);
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[size_t(i)] == b[size_t(i)]);
}

TEST_CASE("weight init is seed-deterministic and seed-sensitive") {
    ModelConfig cfg = small_config(Mode::Static, Depth::Original, 1, 16, 4);
    nn::Network<float> a(cfg, nn::build(cfg)), b(cfg, nn::build(cfg)),
        c(cfg, nn::build(cfg));
    a.init_weights(1);
    b.init_weights(1);
    c.init_weights(2);
    auto pa = a.params(), pb = b.params(), pc = c.params();
    bool any_diff = false;
    for (size_t i = 0; i < pa.size(); ++i)
        for (int64_t e = 0; e < pa[i]->value.numel(); ++e) {
            CHECK(pa[i]->value[size_t(e)] == pb[i]->value[size_t(e)]);
            any_diff |= pa[i]->value[size_t(e)] != pc[i]->value[size_t(e)];
        }
    CHECK(any_diff);
}

TEST_CASE("checkpoint roundtrip and config-hash refusal") {
    namespace fs = std::filesystem;
    const std::string path =
        (fs::temp_directory_path() / "tleap_ckpt_test.ckpt").string();

    ModelConfig cfg = small_config(Mode::Temporal, Depth::Deeper, 2, 16, 4);
    nn::Network<float> net(cfg, nn::build(cfg));
    net.init_weights(21);
    nn::save_checkpoint(path, net);

    nn::Network<float> loaded = nn::load_checkpoint(path, cfg);
    auto pa = net.params(), pb = loaded.params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i]->name == pb[i]->name);
        for (int64_t e = 0; e < pa[i]->value.numel(); ++e)
            CHECK(pa[i]->value[size_t(e)] == pb[i]->value[size_t(e)]);
    }

    ModelConfig other = cfg;
    other.base_channels = 8;
    CHECK_THROWS_WITH_AS(nn::load_checkpoint(path, other),
                         doctest::Contains("config hash mismatch"),
                         std::runtime_error);
    CHECK(nn::peek_checkpoint_config(path).hash() == cfg.hash());
    fs::remove(path);
}
