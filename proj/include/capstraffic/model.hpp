#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "capstraffic/autograd.hpp"
#include "capstraffic/layers.hpp"
#include "capstraffic/task.hpp"

namespace capstraffic {

enum class ModelKind { cnn, capsnet };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view text);

// Architecture hyperparameters. For the CNN, `conv_channels` are the three
// conv+pool stages; for the CapsNet they are the plain conv layers in front
// of PrimaryCaps.
struct ModelSpec {
  ModelKind kind = ModelKind::cnn;
  std::vector<std::size_t> conv_channels{256, 128, 64};
  std::size_t kernel = 3;
  std::size_t primary_channels = 128;
  std::size_t primary_dim = 8;
  std::size_t traffic_dim = 16;
  std::size_t routing_iterations = 3;
  std::uint64_t seed = 0;

  // Full-size architectures.
  static ModelSpec cnn(std::uint64_t seed = 0);
  static ModelSpec capsnet(std::uint64_t seed = 0);
  // Narrow CapsNet for desk-scale runs: convs 16, 16; PrimaryCaps 32 channels.
  static ModelSpec capsnet_reduced(std::uint64_t seed = 0);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct ParameterShape {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0;  // 0 for biases (initialised to zero)
};

// Parameter inventory of the architecture on the task, without allocating.
// Throws GeometryError when the task is too small for the model.
std::vector<ParameterShape> parameter_layout(const ModelSpec& model, const TaskSpec& task);
std::size_t count_parameters(const ModelSpec& model, const TaskSpec& task);

class Model {
 public:
  // Fresh model with seeded initialisation.
  static Model build(ModelSpec spec, TaskSpec task);
  // Model around existing parameters; shapes must match the layout.
  Model(ModelSpec spec, TaskSpec task, std::vector<Parameter> parameters);

  const ModelSpec& spec() const { return spec_; }
  const TaskSpec& task() const { return task_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  // inputs: (B, M, N) scaled images. Returns (B, L*N) raw predictions.
  // `params` are the parameters as recorded on the inputs' tape, in layout order.
  // When `trace` is given, the shape after every stage is appended to it.
  Var forward(std::span<const Var> params, Var inputs,
              std::vector<Shape>* trace = nullptr) const;

  // Gradient-free forward pass.
  Tensor forward(const Tensor& inputs, std::vector<Shape>* trace = nullptr) const;

 private:
  Model() = default;

  ModelSpec spec_;
  TaskSpec task_;
  std::vector<Parameter> params_;
};

}  // namespace capstraffic
