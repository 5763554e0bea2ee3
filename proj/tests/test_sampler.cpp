#include <catch2/catch_amalgamated.hpp>

#include "diffseg/dataset.hpp"
#include "diffseg/denoiser.hpp"
#include "diffseg/sampler.hpp"
#include "diffseg/trainer.hpp"

using namespace diffseg;

namespace {

/// Perfect-knowledge test double: returns exactly the noise between the
/// input and the stored ground truth (resized to the input's scale).
struct OracleDenoiser {
    Tensor<float> truth;  // one-hot, full resolution
    int num_classes() const { return truth.channels; }
    Tensor<float> forward(const Tensor<float>& noisy, const Tensor<float>&, int) {
        Tensor<float> gt = truth;
        if (noisy.width != truth.width || noisy.height != truth.height) {
            gt = detail::resize_onehot_nearest(truth, noisy.width, noisy.height);
        }
        return total_noise(noisy, gt);
    }
};

/// Counts forward passes around any denoiser.
template <typename Net>
struct CountingDenoiser {
    Net* inner;
    int calls = 0;
    int num_classes() const { return inner->num_classes(); }
    Tensor<float> forward(const Tensor<float>& s, const Tensor<float>& img, int t) {
        ++calls;
        return inner->forward(s, img, t);
    }
};

Tensor<float> one_hot_fixture(int classes, int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    IndexMap m(h, w);
    for (auto& v : m.data) v = rng.uniform_int(0, classes - 1);
    return one_hot_encode<float>(m, classes);
}

}  // namespace

TEST_CASE("argmax_decode") {
    SECTION("one-hot input recovers the encoded class") {
        Tensor<float> t = one_hot_fixture(4, 5, 5, 100);
        IndexMap m = argmax_decode(t);
        REQUIRE(one_hot_encode<float>(m, 4).data == t.data);
    }
    SECTION("ties break toward the lowest class") {
        Tensor<float> t(2, 1, 1);
        t.at(0, 0, 0) = 0.2f;
        t.at(1, 0, 0) = 0.2f;
        REQUIRE(argmax_decode(t).at(0, 0) == 0);
    }
    SECTION("max selection") {
        Tensor<float> t(3, 1, 1);
        t.at(0, 0, 0) = 0.1f;
        t.at(1, 0, 0) = 0.7f;
        t.at(2, 0, 0) = 0.3f;
        REQUIRE(argmax_decode(t).at(0, 0) == 1);
    }
    SECTION("adding a constant to every channel changes nothing") {
        Rng rng(101);
        Tensor<float> t = normal_like<float>(3, 6, 6, rng);
        IndexMap before = argmax_decode(t);
        Tensor<float> shifted = t;
        for (auto& v : shifted.data) v += 17.25f;
        REQUIRE(argmax_decode(shifted) == before);
    }
}

TEST_CASE("step lists") {
    SECTION("stride 1 walks T..1") {
        REQUIRE(make_step_list(5, 1) == std::vector<int>{5, 4, 3, 2, 1});
    }
    SECTION("stride 2 from 25 gives 13 steps ending at 1") {
        const auto steps = make_step_list(25, 2);
        REQUIRE(steps.size() == 13);
        REQUIRE(steps.front() == 25);
        REQUIRE(steps.back() == 1);
    }
    SECTION("validation rejects bad lists") {
        REQUIRE_THROWS_AS(validate_step_list({}, 5), InvalidParameterError);
        REQUIRE_THROWS_AS(validate_step_list({6, 3}, 5), InvalidParameterError);
        REQUIRE_THROWS_AS(validate_step_list({3, 3}, 5), InvalidParameterError);
        REQUIRE_THROWS_AS(validate_step_list({2, 4}, 5), InvalidParameterError);
        REQUIRE_THROWS_AS(validate_step_list({1, 0}, 5), InvalidParameterError);
        REQUIRE_NOTHROW(validate_step_list({5, 3, 1}, 5));
    }
}

namespace {

/// The decoded map must equal the truth exactly; the continuous map may
/// carry one ulp of float rounding around 1.0 because the first denoise
/// subtracts noise measured against an arbitrary starting estimate.
void require_truth(const SampleResult<float>& r, const Tensor<float>& truth) {
    REQUIRE(one_hot_encode<float>(r.labels, truth.channels).data == truth.data);
    for (std::size_t i = 0; i < truth.data.size(); ++i) {
        REQUIRE(r.soft.data[i] == Catch::Approx(truth.data[i]).margin(1e-6));
    }
}

}  // namespace

TEST_CASE("sample with a perfect denoiser recovers the ground truth") {
    const NoiseSchedule sched = make_schedule(8);
    OracleDenoiser oracle{one_hot_fixture(3, 8, 8, 102)};
    Rng rng(103);
    Tensor<float> img = normal_like<float>(3, 8, 8, rng);

    SECTION("full step list") {
        SampleConfig cfg;
        cfg.seed = 1;
        require_truth(sample(oracle, img, sched, cfg), oracle.truth);
    }
    SECTION("any skipping list, including a single step") {
        for (const auto& steps : std::vector<std::vector<int>>{{8, 6, 4, 2}, {8}, {1}, {5, 1}}) {
            SampleConfig cfg;
            cfg.steps = steps;
            cfg.seed = 2;
            require_truth(sample(oracle, img, sched, cfg), oracle.truth);
        }
    }
    SECTION("multi-scale loop still lands exactly on the truth") {
        SampleConfig cfg;
        cfg.scales = 2;
        cfg.seed = 3;
        require_truth(sample(oracle, img, sched, cfg), oracle.truth);
    }
}

TEST_CASE("sample determinism and counting") {
    const NoiseSchedule sched = make_schedule(4);
    DenoiserConfig dcfg;
    dcfg.base_channels = 4;
    dcfg.depth = 1;
    dcfg.embed_dim = 4;
    dcfg.num_classes = 2;
    DenoiserNetwork<float> net(dcfg);
    net.init(13);
    Rng rng(104);
    Tensor<float> img = normal_like<float>(3, 8, 8, rng);

    SECTION("same seed, same output") {
        SampleConfig cfg;
        cfg.seed = 42;
        auto a = sample(net, img, sched, cfg);
        auto b = sample(net, img, sched, cfg);
        REQUIRE(a.soft.data == b.soft.data);
        REQUIRE(a.labels == b.labels);
    }
    SECTION("executes exactly |steps| * M forward passes") {
        CountingDenoiser<DenoiserNetwork<float>> counter{&net};
        SampleConfig cfg;
        cfg.steps = {4, 2, 1};
        cfg.scales = 2;
        sample(counter, img, sched, cfg);
        REQUIRE(counter.calls == 6);
        counter.calls = 0;
        cfg.steps.clear();
        cfg.stride = 1;
        cfg.scales = 1;
        sample(counter, img, sched, cfg);
        REQUIRE(counter.calls == 4);
    }
    SECTION("empty explicit step list is rejected via validation") {
        SampleConfig cfg;
        cfg.stride = 0;
        REQUIRE_THROWS_AS(sample(net, img, sched, cfg), InvalidParameterError);
    }
}

TEST_CASE("ensemble") {
    const NoiseSchedule sched = make_schedule(4);
    OracleDenoiser oracle{one_hot_fixture(2, 8, 8, 105)};
    DenoiserConfig dcfg;
    dcfg.base_channels = 4;
    dcfg.depth = 1;
    dcfg.embed_dim = 4;
    dcfg.num_classes = 2;
    DenoiserNetwork<float> net(dcfg);
    net.init(14);
    Rng rng(106);
    Tensor<float> img = normal_like<float>(3, 8, 8, rng);

    SECTION("ensemble of one is exactly a single run") {
        SampleConfig cfg;
        cfg.seed = 7;
        cfg.ensemble = 1;
        auto single = sample(net, img, sched, cfg);
        auto ens = sample_ensemble(net, img, sched, cfg);
        REQUIRE(single.soft.data == ens.soft.data);
        REQUIRE(single.labels == ens.labels);
    }
    SECTION("averaging identical members reproduces the single run's labels") {
        SampleConfig cfg;
        cfg.seed = 8;
        auto single = sample(net, img, sched, cfg);
        std::vector<Tensor<float>> members(5, single.soft);
        Tensor<float> avg = average_soft(members);
        REQUIRE(argmax_decode(avg) == single.labels);
    }
    SECTION("fixed seed set gives a fixed ensemble output") {
        SampleConfig cfg;
        cfg.seed = 9;
        cfg.ensemble = 3;
        auto a = sample_ensemble(net, img, sched, cfg);
        auto b = sample_ensemble(net, img, sched, cfg);
        REQUIRE(a.soft.data == b.soft.data);
    }
    SECTION("ensemble members with distinct noise still agree with a perfect denoiser") {
        SampleConfig cfg;
        cfg.seed = 10;
        cfg.ensemble = 4;
        auto r = sample_ensemble(oracle, img, sched, cfg);
        REQUIRE(one_hot_encode<float>(r.labels, 2).data == oracle.truth.data);
    }
}
