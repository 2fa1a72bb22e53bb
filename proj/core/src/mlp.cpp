#include "advsep/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "binary_io.hpp"

namespace advsep {

namespace {

constexpr char kModelMagic[] = "ADVSEPM1";
constexpr std::uint32_t kModelVersion = 1;

// Forward trace kept for the backward pass.
struct Trace {
  std::vector<std::vector<double>> acts;  // acts[0] = x, acts[l+1] = output of layer l
  std::vector<std::vector<double>> pre;   // pre-activations per layer
  std::vector<double> logits;
};

void check_input(const MlpModel& model, const Array& x) {
  if (model.layers.empty()) throw ShapeError("model has no layers");
  if (x.size() != model.input_dim()) {
    throw ShapeError("input dim " + std::to_string(x.size()) + " does not match model input dim " +
                     std::to_string(model.input_dim()));
  }
}

Trace run_forward(const MlpModel& model, const Array& x, bool want_logits) {
  check_input(model, x);
  Trace t;
  t.acts.reserve(model.layers.size() + 1);
  t.pre.reserve(model.layers.size());
  t.acts.emplace_back(x.storage());
  for (const DenseLayer& layer : model.layers) {
    const std::vector<double>& in = t.acts.back();
    const std::size_t out = layer.out_dim();
    std::vector<double> pre(out);
    for (std::size_t o = 0; o < out; ++o) pre[o] = dot(layer.weight.row(o), in) + layer.bias[o];
    std::vector<double> act = pre;
    if (layer.activation == Activation::relu) {
      for (double& v : act) v = v > 0.0 ? v : 0.0;
    }
    t.pre.push_back(std::move(pre));
    t.acts.push_back(std::move(act));
  }
  if (want_logits && model.head) {
    const Array& w = *model.head;
    t.logits.resize(w.rows());
    for (std::size_t c = 0; c < w.rows(); ++c) t.logits[c] = dot(w.row(c), t.acts.back());
  }
  return t;
}

// Backpropagates dL/dz (and dL/dg) through the trace. Parameter gradients are
// accumulated into `acc` scaled by `scale` when `acc` is non-null; the input
// gradient is returned.
std::vector<double> run_backward(const MlpModel& model, const Trace& t, const HeadLoss& head,
                                 GradPair* acc, double scale, bool want_input) {
  std::vector<double> delta = head.dz;
  const std::vector<double>& z = t.acts.back();
  if (!head.dg.empty()) {
    if (!model.head) throw std::invalid_argument("loss uses logits but model has no head");
    const Array& w = *model.head;
    for (std::size_t c = 0; c < w.rows(); ++c) {
      if (head.dg[c] == 0.0) continue;
      axpy(head.dg[c], w.row(c), delta);
      if (acc) axpy(scale * head.dg[c], z, acc->head_grad->row(c));
    }
  }
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const DenseLayer& layer = model.layers[li];
    if (layer.activation == Activation::relu) {
      const std::vector<double>& pre = t.pre[li];
      for (std::size_t o = 0; o < delta.size(); ++o) {
        if (!(pre[o] > 0.0)) delta[o] = 0.0;
      }
    }
    const std::vector<double>& in = t.acts[li];
    if (acc) {
      LayerGrad& g = acc->param_grads[li];
      for (std::size_t o = 0; o < delta.size(); ++o) {
        if (delta[o] == 0.0) continue;
        axpy(scale * delta[o], in, g.weight.row(o));
        g.bias[o] += scale * delta[o];
      }
    }
    if (li == 0 && !want_input) break;
    std::vector<double> next(layer.in_dim(), 0.0);
    for (std::size_t o = 0; o < delta.size(); ++o) {
      if (delta[o] == 0.0) continue;
      axpy(delta[o], layer.weight.row(o), next);
    }
    delta = std::move(next);
  }
  return delta;
}

HeadLoss head_loss(const MlpModel& model, const Trace& t, const LossSpec& loss) {
  if (loss.needs_logits() && !model.head) {
    throw std::invalid_argument("loss requires a classifier head but the model has none");
  }
  HeadLoss h = evaluate_loss(loss, t.acts.back(), t.logits);
  if (!std::isfinite(h.value)) throw std::domain_error("loss evaluated to a non-finite value");
  return h;
}

double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), kFiniteDiffFloor});
}

}  // namespace

void MlpModel::validate() const {
  if (layers.empty()) throw ShapeError("model has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const DenseLayer& l = layers[i];
    if (l.weight.ndim() != 2) throw ShapeError("layer weight must be 2-d");
    if (l.bias.ndim() != 1 || l.bias.size() != l.out_dim()) {
      throw ShapeError("layer " + std::to_string(i) + " bias does not match its output dim");
    }
    if (i > 0 && layers[i - 1].out_dim() != l.in_dim()) {
      throw ShapeError("layer " + std::to_string(i) + " input dim " + std::to_string(l.in_dim()) +
                       " does not chain with previous output " +
                       std::to_string(layers[i - 1].out_dim()));
    }
  }
  if (head && (head->ndim() != 2 || head->cols() != output_dim())) {
    throw ShapeError("classifier head columns must equal representation dim " +
                     std::to_string(output_dim()));
  }
}

std::size_t MlpModel::input_dim() const { return layers.front().in_dim(); }
std::size_t MlpModel::output_dim() const { return layers.back().out_dim(); }
std::size_t MlpModel::num_classes() const { return head ? head->rows() : 0; }

std::size_t MlpModel::parameter_count() const {
  std::size_t n = head ? head->size() : 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

MlpModel MlpModel::random(const std::vector<std::size_t>& widths, std::uint64_t seed,
                          std::optional<std::size_t> head_classes, Activation hidden,
                          Activation last) {
  if (widths.size() < 2) throw ShapeError("need at least input and output widths");
  std::mt19937_64 rng(seed);
  auto fill = [&](Array& a, std::size_t fan_in, std::size_t fan_out) {
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-s, s);
    for (double& v : a.storage()) v = u(rng);
  };
  MlpModel m;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    DenseLayer l;
    l.weight = Array({widths[i + 1], widths[i]});
    fill(l.weight, widths[i], widths[i + 1]);
    l.bias = Array({widths[i + 1]});
    l.activation = (i + 2 == widths.size()) ? last : hidden;
    m.layers.push_back(std::move(l));
  }
  if (head_classes) {
    m.head = Array({*head_classes, widths.back()});
    fill(*m.head, widths.back(), *head_classes);
  }
  m.validate();
  return m;
}

GradPair GradPair::zeros_like(const MlpModel& model) {
  GradPair g;
  g.param_grads.reserve(model.layers.size());
  for (const auto& l : model.layers) {
    g.param_grads.push_back({Array(l.weight.shape()), Array(l.bias.shape())});
  }
  if (model.head) g.head_grad = Array(model.head->shape());
  g.input_grad = Array({model.input_dim()});
  return g;
}

void GradPair::scale(double s) {
  for (auto& l : param_grads) {
    for (double& v : l.weight.storage()) v *= s;
    for (double& v : l.bias.storage()) v *= s;
  }
  if (head_grad) {
    for (double& v : head_grad->storage()) v *= s;
  }
  for (double& v : input_grad.storage()) v *= s;
}

Array forward(const MlpModel& model, const Array& x) {
  Trace t = run_forward(model, x, false);
  return Array::vector(std::move(t.acts.back()));
}

Array logits(const MlpModel& model, const Array& x) {
  if (!model.head) throw std::invalid_argument("logits requested from a model without classifier head");
  Trace t = run_forward(model, x, true);
  return Array::vector(std::move(t.logits));
}

LossAndGrad grad(const MlpModel& model, const Array& x, const LossSpec& loss) {
  const Trace t = run_forward(model, x, loss.needs_logits());
  const HeadLoss h = head_loss(model, t, loss);
  LossAndGrad out;
  out.loss = h.value;
  out.grads = GradPair::zeros_like(model);
  std::vector<double> gx = run_backward(model, t, h, &out.grads, 1.0, true);
  out.grads.input_grad = Array(x.shape(), std::move(gx));
  return out;
}

LossAndInputGrad input_grad(const MlpModel& model, const Array& x, const LossSpec& loss) {
  const Trace t = run_forward(model, x, loss.needs_logits());
  const HeadLoss h = head_loss(model, t, loss);
  std::vector<double> gx = run_backward(model, t, h, nullptr, 1.0, true);
  return {h.value, Array(x.shape(), std::move(gx))};
}

double accumulate_grad(const MlpModel& model, const Array& x, const LossSpec& loss, double scale,
                       GradPair& acc) {
  const Trace t = run_forward(model, x, loss.needs_logits());
  const HeadLoss h = head_loss(model, t, loss);
  run_backward(model, t, h, &acc, scale, false);
  return h.value;
}

double loss_value(const MlpModel& model, const Array& x, const LossSpec& loss) {
  const Trace t = run_forward(model, x, loss.needs_logits());
  return head_loss(model, t, loss).value;
}

MlpModel sgd_step(const MlpModel& model, const GradPair& grads, double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  MlpModel next = model;
  for (std::size_t i = 0; i < next.layers.size(); ++i) {
    axpy(-lr, grads.param_grads[i].weight.flat(), next.layers[i].weight.flat());
    axpy(-lr, grads.param_grads[i].bias.flat(), next.layers[i].bias.flat());
  }
  if (next.head && grads.head_grad) axpy(-lr, grads.head_grad->flat(), next.head->flat());
  return next;
}

SgdOptimizer::SgdOptimizer(double lr, double momentum) : lr_(lr), momentum_(momentum) {
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must be in [0,1)");
}

void SgdOptimizer::step(MlpModel& model, const GradPair& grads) {
  const GradPair* g = &grads;
  if (momentum_ > 0.0) {
    if (!velocity_) {
      velocity_ = grads;
    } else {
      velocity_->scale(momentum_);
      for (std::size_t i = 0; i < grads.param_grads.size(); ++i) {
        axpy(1.0, grads.param_grads[i].weight.flat(), velocity_->param_grads[i].weight.flat());
        axpy(1.0, grads.param_grads[i].bias.flat(), velocity_->param_grads[i].bias.flat());
      }
      if (grads.head_grad) axpy(1.0, grads.head_grad->flat(), velocity_->head_grad->flat());
    }
    g = &*velocity_;
  }
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    axpy(-lr_, g->param_grads[i].weight.flat(), model.layers[i].weight.flat());
    axpy(-lr_, g->param_grads[i].bias.flat(), model.layers[i].bias.flat());
  }
  if (model.head && g->head_grad) axpy(-lr_, g->head_grad->flat(), model.head->flat());
}

double finite_diff_check(const MlpModel& model, const Array& x, const LossSpec& loss, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
  const LossAndGrad analytic = grad(model, x, loss);
  double worst = 0.0;
  auto central = [&](double& slot, auto&& eval) {
    const double saved = slot;
    slot = saved + h;
    const double up = eval();
    slot = saved - h;
    const double down = eval();
    slot = saved;
    return (up - down) / (2.0 * h);
  };

  MlpModel probe = model;
  auto eval_model = [&] { return loss_value(probe, x, loss); };
  for (std::size_t li = 0; li < probe.layers.size(); ++li) {
    auto& w = probe.layers[li].weight.storage();
    for (std::size_t i = 0; i < w.size(); ++i) {
      worst = std::max(worst, rel_error(analytic.grads.param_grads[li].weight[i],
                                        central(w[i], eval_model)));
    }
    auto& b = probe.layers[li].bias.storage();
    for (std::size_t i = 0; i < b.size(); ++i) {
      worst = std::max(worst, rel_error(analytic.grads.param_grads[li].bias[i],
                                        central(b[i], eval_model)));
    }
  }
  if (probe.head) {
    auto& w = probe.head->storage();
    for (std::size_t i = 0; i < w.size(); ++i) {
      worst = std::max(worst, rel_error((*analytic.grads.head_grad)[i], central(w[i], eval_model)));
    }
  }
  Array xp = x;
  auto eval_input = [&] { return loss_value(model, xp, loss); };
  for (std::size_t i = 0; i < xp.size(); ++i) {
    worst = std::max(worst, rel_error(analytic.grads.input_grad[i], central(xp.storage()[i], eval_input)));
  }
  return worst;
}

void save_model(std::ostream& os, const MlpModel& model) {
  model.validate();
  os.write(kModelMagic, 8);
  detail::write_pod<std::uint32_t>(os, kModelVersion);
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& l : model.layers) {
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(l.activation));
    detail::write_array(os, l.weight);
    detail::write_array(os, l.bias);
  }
  detail::write_pod<std::uint8_t>(os, model.head ? 1 : 0);
  if (model.head) detail::write_array(os, *model.head);
  if (!os) throw std::runtime_error("failed writing model checkpoint");
}

MlpModel load_model(std::istream& is) {
  detail::expect_magic(is, std::string(kModelMagic, 8));
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != kModelVersion) {
    throw detail::FormatError("unsupported model checkpoint version " + std::to_string(version));
  }
  const auto n = detail::read_pod<std::uint32_t>(is);
  MlpModel m;
  for (std::uint32_t i = 0; i < n; ++i) {
    DenseLayer l;
    const auto act = detail::read_pod<std::uint32_t>(is);
    if (act > 1) throw detail::FormatError("unknown activation tag " + std::to_string(act));
    l.activation = static_cast<Activation>(act);
    l.weight = detail::read_array(is);
    l.bias = detail::read_array(is);
    m.layers.push_back(std::move(l));
  }
  if (detail::read_pod<std::uint8_t>(is)) m.head = detail::read_array(is);
  m.validate();
  return m;
}

void save_model(const std::string& path, const MlpModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  save_model(os, model);
}

MlpModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return load_model(is);
}

}  // namespace advsep
