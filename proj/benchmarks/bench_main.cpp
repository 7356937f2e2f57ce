#include <benchmark/benchmark.h>

#include "vmt/backbone.hpp"
#include "vmt/data.hpp"
#include "vmt/lora.hpp"
#include "vmt/rng.hpp"
#include "vmt/sampling.hpp"
#include "vmt/training.hpp"

namespace {

using namespace vmt;

const Backbone& model() {
    static Backbone m = Backbone::seeded(17);
    return m;
}

void BM_UnetForward(benchmark::State& state) {
    const auto f = state.range(0);
    Rng rng(1);
    Tensor z = rng.normal_tensor({1, f, 8, 8, 4});
    ConditionEmbedding cond =
        model().text_encoder().encode("a red square is circling on a white background");
    for (auto _ : state) {
        benchmark::DoNotOptimize(model().predict_noise(z, 500, cond));
    }
}
BENCHMARK(BM_UnetForward)->Arg(1)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_UnetForwardBackward(benchmark::State& state) {
    Rng rng(2);
    Tensor z = rng.normal_tensor({1, 8, 8, 8, 4});
    Tensor eps = rng.normal_tensor({1, 8, 8, 8, 4});
    ConditionEmbedding cond = model().text_encoder().encode("a blue disk is lifting");
    AdapterSet temporal = AdapterSet::attach(model(), AdapterKind::temporal, 32, 3);
    for (auto _ : state) {
        Graph g;
        ParamBinder binder(g, model().params());
        LoraVarMap lv = temporal.bind(g);
        Var pred = g.mse(g.constant(eps),
                         model().forward(g, binder, g.constant(z), 400,
                                         g.constant(cond.token_embeddings), {&lv}));
        g.backward(pred);
        benchmark::DoNotOptimize(pred.value().item());
    }
}
BENCHMARK(BM_UnetForwardBackward)->Unit(benchmark::kMillisecond);

void BM_AutoencoderEncode(benchmark::State& state) {
    SynthSpec spec;
    VideoClip clip = synth_motion_video(spec, 8, 32, 32);
    for (auto _ : state) {
        benchmark::DoNotOptimize(model().encode_frames(clip));
    }
}
BENCHMARK(BM_AutoencoderEncode)->Unit(benchmark::kMicrosecond);

void BM_SynthMotionVideo(benchmark::State& state) {
    SynthSpec spec;
    std::uint64_t seed = 0;
    for (auto _ : state) {
        spec.jitter_seed = seed++;
        benchmark::DoNotOptimize(synth_motion_video(spec, 8, 32, 32));
    }
}
BENCHMARK(BM_SynthMotionVideo)->Unit(benchmark::kMicrosecond);

void BM_DdimStep(benchmark::State& state) {
    Rng rng(4);
    Tensor z = rng.normal_tensor({1, 8, 8, 8, 4});
    Tensor eps = rng.normal_tensor({1, 8, 8, 8, 4});
    for (auto _ : state) {
        benchmark::DoNotOptimize(ddim_step(z, eps, 700, 400, 0.0, model().schedule()));
    }
}
BENCHMARK(BM_DdimStep)->Unit(benchmark::kMicrosecond);

void BM_TextEncode(benchmark::State& state) {
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            model().text_encoder().encode("a panda is skateboarding in the park"));
    }
}
BENCHMARK(BM_TextEncode)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
