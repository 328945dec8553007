#include "capstraffic/model.hpp"

#include <array>
#include <string>

#include "capstraffic/capsules.hpp"
#include "capstraffic/error.hpp"
#include "capstraffic/random.hpp"

namespace capstraffic {

TaskSpec TaskSpec::named(std::string_view name) {
  if (name == "task1") return {"task1", 1, 10, 20};
  if (name == "task2") return {"task2", 2, 10, 20};
  if (name == "task3") return {"task3", 1, 14, 50};
  if (name == "task4") return {"task4", 2, 14, 50};
  throw GeometryError("unknown task '" + std::string(name) + "' (expected task1..task4)");
}

void TaskSpec::validate() const {
  if (horizon == 0 || history == 0 || segments == 0) {
    throw GeometryError("task " + describe(*this) + ": L, M and N must all be >= 1");
  }
}

std::string describe(const TaskSpec& task) {
  return (task.name.empty() ? std::string("custom") : task.name) + " (L=" +
         std::to_string(task.horizon) + ", M=" + std::to_string(task.history) +
         ", N=" + std::to_string(task.segments) + ")";
}

std::string to_string(ModelKind kind) { return kind == ModelKind::cnn ? "cnn" : "capsnet"; }

ModelKind parse_model_kind(std::string_view text) {
  if (text == "cnn") return ModelKind::cnn;
  if (text == "capsnet") return ModelKind::capsnet;
  throw Error("unknown model kind '" + std::string(text) + "' (expected cnn or capsnet)");
}

ModelSpec ModelSpec::cnn(std::uint64_t seed) {
  ModelSpec spec;
  spec.kind = ModelKind::cnn;
  spec.conv_channels = {256, 128, 64};
  spec.seed = seed;
  return spec;
}

ModelSpec ModelSpec::capsnet(std::uint64_t seed) {
  ModelSpec spec;
  spec.kind = ModelKind::capsnet;
  spec.conv_channels = {32, 32};
  spec.primary_channels = 128;
  spec.seed = seed;
  return spec;
}

ModelSpec ModelSpec::capsnet_reduced(std::uint64_t seed) {
  ModelSpec spec = capsnet(seed);
  spec.conv_channels = {16, 16};
  spec.primary_channels = 32;
  return spec;
}

namespace {

constexpr std::size_t kPools = 3;

void add_conv(std::vector<ParameterShape>& out, const std::string& name, std::size_t in,
              std::size_t channels, std::size_t kernel) {
  out.push_back({name + ".kernels", {channels, kernel, kernel, in}, kernel * kernel * in});
  out.push_back({name + ".bias", {channels}, 0});
}

}  // namespace

std::vector<ParameterShape> parameter_layout(const ModelSpec& model, const TaskSpec& task) {
  task.validate();
  if (model.kernel == 0) throw GeometryError("kernel size must be >= 1");
  for (auto c : model.conv_channels) {
    if (c == 0) throw GeometryError("convolution channels must be >= 1");
  }
  std::vector<ParameterShape> out;
  std::size_t channels = 1;
  if (model.kind == ModelKind::cnn) {
    if (model.conv_channels.size() != kPools) {
      throw GeometryError("the CNN needs exactly three conv+pool stages, got " +
                          std::to_string(model.conv_channels.size()));
    }
    constexpr std::size_t min_side = std::size_t{1} << kPools;
    if (task.history < min_side || task.segments < min_side) {
      throw GeometryError("CNN needs M >= " + std::to_string(min_side) + " and N >= " +
                          std::to_string(min_side) + " for three 2x2 pools; task is " +
                          describe(task));
    }
    std::size_t h = task.history, w = task.segments;
    for (std::size_t k = 0; k < kPools; ++k) {
      add_conv(out, "conv" + std::to_string(k + 1), channels, model.conv_channels[k],
               model.kernel);
      channels = model.conv_channels[k];
      h /= 2;
      w /= 2;
    }
    const std::size_t flat = h * w * channels;
    out.push_back({"dense.weights", {flat, task.label_size()}, flat});
    out.push_back({"dense.bias", {task.label_size()}, 0});
    return out;
  }

  if (model.primary_dim == 0 || model.traffic_dim == 0 || model.primary_channels == 0 ||
      model.primary_channels % model.primary_dim != 0) {
    throw GeometryError("PrimaryCaps channels (" + std::to_string(model.primary_channels) +
                        ") must be a positive multiple of the capsule size (" +
                        std::to_string(model.primary_dim) + ")");
  }
  if (model.routing_iterations == 0) throw GeometryError("routing iterations must be >= 1");
  for (std::size_t k = 0; k < model.conv_channels.size(); ++k) {
    add_conv(out, "conv" + std::to_string(k + 1), channels, model.conv_channels[k], model.kernel);
    channels = model.conv_channels[k];
  }
  add_conv(out, "primary", channels, model.primary_channels, model.kernel);
  const std::size_t num_in =
      task.history * task.segments * (model.primary_channels / model.primary_dim);
  out.push_back({"traffic.transforms",
                 {num_in, task.label_size(), model.primary_dim, model.traffic_dim},
                 model.primary_dim});
  return out;
}

std::size_t count_parameters(const ModelSpec& model, const TaskSpec& task) {
  std::size_t total = 0;
  for (const auto& p : parameter_layout(model, task)) total += shape_size(p.shape);
  return total;
}

Model Model::build(ModelSpec spec, TaskSpec task) {
  Model model;
  Rng rng(spec.seed);
  for (auto& p : parameter_layout(spec, task)) {
    Tensor value = p.fan_in ? init_uniform(p.shape, p.fan_in, rng) : Tensor(p.shape, 0.0);
    model.params_.push_back({std::move(p.name), std::move(value)});
  }
  model.spec_ = std::move(spec);
  model.task_ = std::move(task);
  return model;
}

Model::Model(ModelSpec spec, TaskSpec task, std::vector<Parameter> parameters)
    : spec_(std::move(spec)), task_(std::move(task)), params_(std::move(parameters)) {
  const auto layout = parameter_layout(spec_, task_);
  if (layout.size() != params_.size()) {
    throw GeometryError("expected " + std::to_string(layout.size()) + " parameter tensors, got " +
                        std::to_string(params_.size()));
  }
  for (std::size_t k = 0; k < layout.size(); ++k) {
    if (layout[k].name != params_[k].name || layout[k].shape != params_[k].value.shape()) {
      throw GeometryError("parameter " + std::to_string(k) + " is '" + params_[k].name + "' " +
                          shape_str(params_[k].value.shape()) + ", expected '" +
                          layout[k].name + "' " + shape_str(layout[k].shape));
    }
  }
}

std::size_t Model::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.size();
  return total;
}

Var Model::forward(std::span<const Var> params, Var inputs,
                   std::vector<Shape>* trace) const {
  if (params.size() != params_.size()) {
    throw Error("forward: expected " + std::to_string(params_.size()) + " parameters, got " +
                std::to_string(params.size()));
  }
  const Shape& in = inputs.shape();
  if (in.size() != 3 || in[1] != task_.history || in[2] != task_.segments) {
    throw GeometryError("model expects inputs (B, " + std::to_string(task_.history) + ", " +
                        std::to_string(task_.segments) + "), got " + shape_str(in));
  }
  const std::size_t batch = in[0];
  auto record = [trace](Var v) {
    if (trace) trace->emplace_back(v.shape().begin() + 1, v.shape().end());
    return v;
  };

  Var x = record(reshape(inputs, {batch, task_.history, task_.segments, 1}));
  std::size_t p = 0;
  if (spec_.kind == ModelKind::cnn) {
    for (std::size_t k = 0; k < kPools; ++k) {
      x = record(relu(conv2d(x, params[p], params[p + 1])));
      x = record(maxpool2x2(x));
      p += 2;
    }
    x = record(flatten(x));
    return record(dense(x, params[p], params[p + 1]));
  }

  for (std::size_t k = 0; k < spec_.conv_channels.size(); ++k) {
    x = record(relu(conv2d(x, params[p], params[p + 1])));
    p += 2;
  }
  x = record(primary_capsules(x, params[p], params[p + 1], spec_.primary_dim));
  p += 2;
  x = record(predict_transforms(x, params[p]));
  x = record(dynamic_routing(x, spec_.routing_iterations));
  return record(capsule_lengths(x));
}

Tensor Model::forward(const Tensor& inputs, std::vector<Shape>* trace) const {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(tape.constant(p.value));
  return forward(vars, tape.constant(inputs), trace).value();
}

}  // namespace capstraffic
