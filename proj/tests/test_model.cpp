#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "capstraffic/checkpoint.hpp"
#include "capstraffic/error.hpp"
#include "capstraffic/gradcheck.hpp"
#include "capstraffic/metrics.hpp"
#include "capstraffic/model.hpp"
#include "capstraffic/train.hpp"
#include "oracles.hpp"

using namespace capstraffic;
namespace fs = std::filesystem;

namespace {

ModelSpec narrow_cnn(std::uint64_t seed = 0) {
  ModelSpec s = ModelSpec::cnn(seed);
  s.conv_channels = {6, 5, 4};
  return s;
}

ModelSpec tiny_capsnet(std::uint64_t seed = 0) {
  ModelSpec s = ModelSpec::capsnet(seed);
  s.conv_channels = {4};
  s.primary_channels = 8;
  s.primary_dim = 4;
  s.traffic_dim = 6;
  return s;
}

WindowedDataset noise_dataset(std::size_t samples, TaskSpec task, std::uint64_t seed,
                              double label = -1.0) {
  Rng rng(seed);
  WindowedDataset d;
  d.task = task;
  d.stats = {0.0, 100.0};
  d.inputs = oracle::random_tensor({samples, task.history, task.segments}, rng, 0, 1);
  d.labels = label < 0 ? oracle::random_tensor({samples, task.label_size()}, rng, 0, 1)
                       : Tensor({samples, task.label_size()}, label);
  d.label_times.assign(samples, 0);
  return d;
}

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "capstraffic_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("named tasks") {
  CHECK(TaskSpec::named("task1") == TaskSpec{"task1", 1, 10, 20});
  CHECK(TaskSpec::named("task2") == TaskSpec{"task2", 2, 10, 20});
  CHECK(TaskSpec::named("task3") == TaskSpec{"task3", 1, 14, 50});
  CHECK(TaskSpec::named("task4") == TaskSpec{"task4", 2, 14, 50});
  CHECK(TaskSpec::named("task2").label_size() == 40);
  CHECK_THROWS_AS(TaskSpec::named("task5"), GeometryError);
  CHECK_THROWS_AS((TaskSpec{"x", 0, 10, 20}.validate()), GeometryError);
  CHECK(parse_model_kind("capsnet") == ModelKind::capsnet);
  CHECK_THROWS_AS(parse_model_kind("rnn"), Error);
}

TEST_CASE("parameter counts match the closed forms") {
  const TaskSpec t1 = TaskSpec::named("task1"), t4 = TaskSpec::named("task4");
  CHECK(count_parameters(ModelSpec::cnn(), t1) == 2560 + 295040 + 73792 + 2580);
  CHECK(count_parameters(ModelSpec::cnn(), t4) == 2560 + 295040 + 73792 + 384 * 100 + 100);
  const std::size_t convs = 320 + 9248 + 36992;
  CHECK(convs == 46'560);
  CHECK(count_parameters(ModelSpec::capsnet(), t1) == 3200 * 20 * 128 + convs);
  CHECK(count_parameters(ModelSpec::capsnet(), t4) == 11200ull * 100 * 128 + convs);
  CHECK(count_parameters(ModelSpec::capsnet(), t1) == 8'238'560);
  CHECK(count_parameters(ModelSpec::capsnet(), t4) == 143'406'560);
  CHECK(count_parameters(ModelSpec::cnn(), TaskSpec::named("task2")) == 371392 + 128 * 40 + 40);
  CHECK(count_parameters(ModelSpec::cnn(), TaskSpec::named("task3")) == 371392 + 384 * 50 + 50);
  CHECK(Model::build(ModelSpec::cnn(), t1).parameter_count() == 373'972);
}

TEST_CASE("CNN shape chain on task 1") {
  const Model m = Model::build(ModelSpec::cnn(1), TaskSpec::named("task1"));
  std::vector<Shape> trace;
  const Tensor out = m.forward(Tensor({2, 10, 20}, 0.5), &trace);
  CHECK(out.shape() == Shape{2, 20});
  const std::vector<Shape> want = {{10, 20, 1}, {10, 20, 256}, {5, 10, 256}, {5, 10, 128},
                                   {2, 5, 128}, {2, 5, 64},    {1, 2, 64},   {128},
                                   {20}};
  CHECK(trace == want);
}

TEST_CASE("CapsNet shape chain on task 1") {
  const Model m = Model::build(ModelSpec::capsnet(1), TaskSpec::named("task1"));
  std::vector<Shape> trace;
  const Tensor out = m.forward(Tensor({1, 10, 20}, 0.5), &trace);
  const std::vector<Shape> want = {{10, 20, 1},     {10, 20, 32}, {10, 20, 32}, {3200, 8},
                                   {3200, 20, 16}, {20, 16},     {20}};
  CHECK(trace == want);
  for (double v : out.data()) {
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("CNN rejects tasks too small for three pools") {
  try {
    (void)count_parameters(ModelSpec::cnn(), TaskSpec{"small", 1, 4, 20});
    FAIL("expected GeometryError");
  } catch (const GeometryError& e) {
    CHECK(std::string(e.what()).find("M >= 8") != std::string::npos);
  }
  CHECK_THROWS_AS(Model::build(ModelSpec::cnn(), TaskSpec{"s", 1, 10, 7}), GeometryError);
  // the CapsNet has no pooling
  CHECK(count_parameters(ModelSpec::capsnet(), TaskSpec{"s", 1, 4, 4}) > 0);
}

TEST_CASE("CapsNet raw predictions stay in [0, 1)") {
  Rng rng(2);
  const TaskSpec task{"t", 2, 6, 5};
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Model m = Model::build(tiny_capsnet(seed), task);
    const Tensor x = oracle::random_tensor({3, 6, 5}, rng, -4, 4);
    const Tensor out = m.forward(x);
    for (double v : out.data()) {
      CHECK(v >= 0.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("model gradients match finite differences") {
  const TaskSpec task{"t", 1, 8, 8};
  Rng rng(3);
  const Tensor x = oracle::random_tensor({2, 8, 8}, rng, 0, 1);
  const Tensor y = oracle::random_tensor({2, 8}, rng, 0, 1);
  for (const ModelSpec& spec : {narrow_cnn(1), tiny_capsnet(1)}) {
    const Model m = Model::build(spec, task);
    std::vector<Tensor> params;
    for (const auto& p : m.parameters()) params.push_back(p.value);
    const LossBuilder loss = [&](Tape& t, std::span<const Var> in) {
      return mse_loss(m.forward(in, t.constant(x)), t.constant(y));
    };
    CHECK(finite_difference_check(loss, params) < 1e-4);
  }
}

TEST_CASE("training on an unpredictable constant target learns the mean") {
  const TaskSpec task{"t", 1, 8, 8};
  const WindowedDataset train_set = noise_dataset(1024, task, 1, 0.5);
  const WindowedDataset held_out = noise_dataset(64, task, 2, 0.5);
  TrainConfig cfg;
  cfg.epochs = 80;
  cfg.adam.lr0 = 0.003;
  const TrainResult r = train(Model::build(narrow_cnn(4), task), train_set, cfg);
  CHECK(r.epoch_losses.size() == 80);
  const Tensor pred = predict_raw(model_from(r.checkpoint), held_out.inputs);
  double worst = 0.0;
  for (double v : pred.data()) worst = std::max(worst, std::abs(v - 0.5));
  CHECK(worst <= 0.02);
}

TEST_CASE("zero epochs returns the initialisation") {
  const TaskSpec task{"t", 1, 8, 8};
  const Model m = Model::build(narrow_cnn(9), task);
  TrainConfig cfg;
  cfg.epochs = 0;
  const TrainResult r = train(m, noise_dataset(10, task, 1), cfg);
  REQUIRE(r.checkpoint.parameters.size() == m.parameters().size());
  for (std::size_t k = 0; k < m.parameters().size(); ++k)
    CHECK(r.checkpoint.parameters[k].value == m.parameters()[k].value);
  CHECK(r.checkpoint.step == 0);
}

TEST_CASE("a small Adam step lowers a single sample's loss") {
  const TaskSpec task{"t", 1, 8, 8};
  for (const ModelSpec& spec : {narrow_cnn(2), tiny_capsnet(2)}) {
    const WindowedDataset one = noise_dataset(1, task, 7);
    const Model m = Model::build(spec, task);
    auto loss_of = [&](const Model& model) {
      const Tensor p = model.forward(one.inputs);
      double s = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - one.labels[i]) * (p[i] - one.labels[i]);
      return s / double(p.size());
    };
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 1;
    cfg.adam.lr0 = 1e-6;
    const TrainResult r = train(m, one, cfg);
    CHECK(loss_of(model_from(r.checkpoint)) < loss_of(m));
  }
}

TEST_CASE("training is bit-reproducible and the seed matters") {
  const TaskSpec task{"t", 1, 8, 8};
  const WindowedDataset d = noise_dataset(40, task, 3);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 5;
  const TrainResult a = train(Model::build(narrow_cnn(1), task), d, cfg);
  const TrainResult b = train(Model::build(narrow_cnn(1), task), d, cfg);
  CHECK(a.epoch_losses == b.epoch_losses);
  for (std::size_t k = 0; k < a.checkpoint.parameters.size(); ++k)
    CHECK(a.checkpoint.parameters[k].value == b.checkpoint.parameters[k].value);
  cfg.seed = 6;
  const TrainResult c = train(Model::build(narrow_cnn(1), task), d, cfg);
  CHECK(c.epoch_losses != a.epoch_losses);
}

TEST_CASE("non-finite loss aborts with the step number") {
  const TaskSpec task{"t", 1, 8, 8};
  WindowedDataset d = noise_dataset(16, task, 3);
  d.labels[5] = std::nan("");
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  try {
    (void)train(Model::build(narrow_cnn(), task), d, cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
  }
}

TEST_CASE("prediction is independent of the batch partition") {
  const TaskSpec task{"t", 1, 8, 8};
  const Model m = Model::build(narrow_cnn(3), task);
  const WindowedDataset d = noise_dataset(37, task, 4);
  const Tensor a = predict_raw(m, d.inputs, 64);
  const Tensor b = predict_raw(m, d.inputs, 64);
  CHECK(a == b);
  const Tensor c = predict_raw(m, d.inputs, 5);
  CHECK(max_abs_diff(a, c) < 1e-12);
}

TEST_CASE("predict clamps, unscales and validates the window") {
  const TaskSpec task{"t", 1, 8, 8};
  Checkpoint ck;
  ck.model = narrow_cnn(1);
  ck.task = task;
  ck.parameters = Model::build(ck.model, task).parameters();
  ck.stats = {20.0, 100.0};
  Rng rng(5);
  const Tensor window = oracle::random_tensor({8, 8}, rng, 20, 100);
  const Tensor a = predict(ck, window);
  CHECK(a == predict(ck, window));
  CHECK(a.size() == 8);
  for (double v : a.data()) {
    CHECK(v >= 20.0);
    CHECK(v <= 100.0);
  }
  CHECK_THROWS_AS(predict(ck, Tensor({7, 8})), GeometryError);
  const ScalingStats s{0.0, 100.0};
  CHECK(to_speeds(Tensor::vector({1.3, -0.2, 0.25}), s) == Tensor::vector({100.0, 0.0, 25.0}));
  CHECK(s.unscale(s.scale(63.7)) == doctest::Approx(63.7).epsilon(1e-15));
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const TaskSpec task{"t", 2, 8, 8};
  const WindowedDataset d = noise_dataset(20, task, 8);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 7;
  cfg.seed = 3;
  for (const ModelSpec& spec : {narrow_cnn(5), tiny_capsnet(5)}) {
    TrainResult r = train(Model::build(spec, task), d, cfg);
    r.checkpoint.stats = {12.5, 97.25};
    const fs::path path = temp_path("roundtrip.bin");
    save_checkpoint(r.checkpoint, path);
    const Checkpoint back = load_checkpoint(path);
    CHECK(back.model == r.checkpoint.model);
    CHECK(back.task == r.checkpoint.task);
    CHECK(back.stats == r.checkpoint.stats);
    CHECK(back.step == r.checkpoint.step);
    CHECK(back.seed == r.checkpoint.seed);
    CHECK(back.adam_first == r.checkpoint.adam_first);
    CHECK(back.adam_second == r.checkpoint.adam_second);
    CHECK(predict_raw(model_from(back), d.inputs) == predict_raw(model_from(r.checkpoint), d.inputs));
    // saving the loaded checkpoint reproduces the file byte for byte
    const fs::path again = temp_path("roundtrip2.bin");
    save_checkpoint(back, again);
    CHECK(slurp(path) == slurp(again));
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  const TaskSpec task{"t", 1, 8, 8};
  Checkpoint ck;
  ck.model = narrow_cnn(1);
  ck.task = task;
  ck.parameters = Model::build(ck.model, task).parameters();
  const fs::path path = temp_path("good.bin");
  save_checkpoint(ck, path);
  const std::string bytes = slurp(path);
  auto write = [](const fs::path& p, const std::string& s) {
    std::ofstream(p, std::ios::binary) << s;
  };
  const fs::path bad = temp_path("bad.bin");

  write(bad, bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
  write(bad, bytes.substr(0, 10));
  CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
  std::string flipped = bytes;
  flipped[flipped.size() - 100] ^= 0x01;
  write(bad, flipped);
  CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
  std::string magic = bytes;
  magic[0] = 'X';
  write(bad, magic);
  CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
  std::string version = bytes;
  version[8] = 2;
  write(bad, version);
  try {
    (void)load_checkpoint(bad);
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
  write(bad, bytes + "x");
  CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(temp_path("does_not_exist.bin")), CheckpointError);
}

TEST_CASE("a task 1 checkpoint does not fit task 3 data") {
  Checkpoint ck;
  ck.model = ModelSpec::cnn();
  ck.task = TaskSpec::named("task1");
  CHECK_NOTHROW(require_task(ck, TaskSpec::named("task1")));
  CHECK_THROWS_AS(require_task(ck, TaskSpec::named("task3")), GeometryError);
}
