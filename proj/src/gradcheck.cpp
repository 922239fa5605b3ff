#include "fedsim/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "fedsim/error.hpp"
#include "fedsim/models.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

GradCheckResult check_gradients(std::string name, ParamVector& params, const LossBuilder& loss,
                                const GradCheckOptions& opts) {
  GradCheckResult r;
  r.name = std::move(name);
  params.set_requires_grad(true);
  params.zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape, params));
  }
  auto eval = [&] {
    Tape tape;
    return tape.scalar(loss(tape, params));
  };
  for (std::size_t e = 0; e < params.size(); ++e) {
    Tensor& t = params.at(e);
    for (std::size_t k = 0; k < t.numel(); ++k) {
      const double saved = t.data[k];
      t.data[k] = saved + opts.step;
      const double up = eval();
      t.data[k] = saved - opts.step;
      const double down = eval();
      t.data[k] = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double analytic = (*t.grad)[k];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), opts.floor});
      r.max_rel_error = std::max(r.max_rel_error, std::abs(numeric - analytic) / denom);
      ++r.checked;
    }
  }
  r.passed = r.max_rel_error <= opts.tolerance;
  return r;
}

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = scale * rng.uniform(-1.0, 1.0);
  t.requires_grad = true;
  return t;
}

// Contracts an arbitrary tensor to a scalar with fixed random weights so
// every output element gets a distinct upstream gradient.
Var project(Tape& tape, Var v, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor& val = tape.value(v);
  Tensor w(val.shape);
  for (auto& x : w.data) x = rng.uniform(-1.0, 1.0);
  return tape.sum(tape.mul(v, tape.constant(std::move(w))));
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed, const GradCheckOptions& opts) {
  std::vector<GradCheckResult> out;
  Rng rng(seed);
  const std::uint64_t proj_seed = derive_seed(seed, 0x9e0);

  auto run = [&](std::string name, ParamVector p, const LossBuilder& f) {
    if (p.numel() > 200) throw ContractError("gradient suite: instance '" + name + "' exceeds 200 parameters");
    out.push_back(check_gradients(std::move(name), p, f, opts));
  };

  {
    ParamVector p;
    p.add("x", random_tensor({3, 4}, rng));
    p.add("w", random_tensor({4, 5}, rng));
    p.add("b", random_tensor({5}, rng));
    run("linear", std::move(p), [&](Tape& t, ParamVector& q) {
      return project(t, t.linear(t.param(q.at(0)), t.param(q.at(1)), t.param(q.at(2))), proj_seed);
    });
  }
  for (const Conv2dSpec spec : {Conv2dSpec{1, 1}, Conv2dSpec{2, 1}, Conv2dSpec{1, 0}}) {
    ParamVector p;
    p.add("x", random_tensor({2, 2, 5, 5}, rng));
    p.add("w", random_tensor({3, 2, 3, 3}, rng));
    p.add("b", random_tensor({3}, rng));
    run("conv2d stride " + std::to_string(spec.stride) + " pad " + std::to_string(spec.padding), std::move(p),
        [&, spec](Tape& t, ParamVector& q) {
          return project(t, t.conv2d(t.param(q.at(0)), t.param(q.at(1)), t.param(q.at(2)), spec), proj_seed);
        });
  }
  {
    // Inputs kept away from the kink so the finite difference is valid.
    Tensor x = random_tensor({4, 6}, rng);
    for (auto& v : x.data) v = v < 0 ? v - 0.1 : v + 0.1;
    ParamVector p;
    p.add("x", std::move(x));
    run("relu", std::move(p), [&](Tape& t, ParamVector& q) { return project(t, t.relu(t.param(q.at(0))), proj_seed); });
  }
  auto unary = [&](std::string name, auto op) {
    ParamVector p;
    p.add("x", random_tensor({4, 6}, rng, 2.0));
    run(std::move(name), std::move(p), [&, op](Tape& t, ParamVector& q) { return project(t, op(t, t.param(q.at(0))), proj_seed); });
  };
  unary("sigmoid", [](Tape& t, Var v) { return t.sigmoid(v); });
  unary("tanh", [](Tape& t, Var v) { return t.tanh(v); });
  unary("reshape", [](Tape& t, Var v) { return t.reshape(v, {2, 12}); });
  unary("scale", [](Tape& t, Var v) { return t.scale(v, -1.7); });
  unary("sum", [](Tape& t, Var v) { return t.scale(t.sum(v), 0.5); });
  unary("mean", [](Tape& t, Var v) { return t.mean(v); });
  unary("mean_per_sample", [](Tape& t, Var v) { return t.mean_per_sample(v); });
  {
    ParamVector p;
    p.add("a", random_tensor({3, 4}, rng));
    p.add("b", random_tensor({3, 4}, rng));
    run("add", p, [&](Tape& t, ParamVector& q) { return project(t, t.add(t.param(q.at(0)), t.param(q.at(1))), proj_seed); });
    run("mul", std::move(p),
        [&](Tape& t, ParamVector& q) { return project(t, t.mul(t.param(q.at(0)), t.param(q.at(1))), proj_seed); });
  }
  {
    ParamVector p;
    p.add("logits", random_tensor({5, 4}, rng, 2.0));
    const std::vector<int> labels{0, 3, 1, 2, 3};
    run("cross_entropy", std::move(p),
        [labels](Tape& t, ParamVector& q) { return t.cross_entropy(t.param(q.at(0)), labels); });
  }
  for (const double target : {0.0, 1.0}) {
    Tensor probs({6});
    for (auto& v : probs.data) v = rng.uniform(0.1, 0.9);
    probs.requires_grad = true;
    ParamVector p;
    p.add("probs", std::move(probs));
    run("binary_cross_entropy target " + std::to_string(static_cast<int>(target)), std::move(p),
        [target](Tape& t, ParamVector& q) { return t.binary_cross_entropy(t.param(q.at(0)), target); });
  }

  // Model roles.
  const ImageShape shape{1, 4};
  auto images = [&](std::size_t n) {
    Tensor x({n, 1, 4, 4});
    for (auto& v : x.data) v = rng.uniform(-1.0, 1.0);
    return x;
  };
  auto run_model = [&](std::string name, ParamVector& p, const LossBuilder& f) {
    if (p.numel() > 200) throw ContractError("gradient suite: instance '" + name + "' exceeds 200 parameters");
    out.push_back(check_gradients(std::move(name), p, f, opts));
  };
  {
    Classifier cls(shape, 3, derive_seed(seed, 1), ClassifierWidths{2, 2});
    const Tensor x = images(4);
    const std::vector<int> y{0, 1, 2, 1};
    run_model("classifier", cls.params(),
              [&](Tape& t, ParamVector&) { return t.cross_entropy(cls.forward(t, t.constant(x)), y); });
  }
  {
    Discriminator disc(shape, derive_seed(seed, 2), 2);
    const Tensor real = images(3);
    const Tensor fake = images(3);
    run_model("discriminator", disc.params(), [&](Tape& t, ParamVector&) {
      return t.add(t.binary_cross_entropy(disc.forward(t, t.constant(real)), 1.0),
                   t.binary_cross_entropy(disc.forward(t, t.constant(fake)), 0.0));
    });
  }
  {
    CondGenerator gen(shape, 2, derive_seed(seed, 3), 3, 6);
    Discriminator disc(shape, derive_seed(seed, 4), 2);
    Classifier cls(shape, 2, derive_seed(seed, 5), ClassifierWidths{2, 2});
    const std::vector<int> y{0, 1, 1};
    const Tensor z = gen.make_input(y, derive_seed(seed, 6));
    // Generator objective as trained: adversarial term plus label agreement,
    // with the critics frozen.
    run_model("generator", gen.params(), [&](Tape& t, ParamVector&) {
      Var x = gen.forward(t, t.constant(z));
      return t.add(t.binary_cross_entropy(disc.forward(t, x, false), 1.0), t.cross_entropy(cls.forward(t, x, false), y));
    });
  }
  return out;
}

}  // namespace fedsim
