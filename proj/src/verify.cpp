#include "attentron/verify.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include "attentron/encoders.hpp"
#include "attentron/gradcheck.hpp"
#include "attentron/metrics.hpp"
#include "attentron/random.hpp"
#include "attentron/synthesizer.hpp"

namespace attentron::verify {

namespace {

using MatD = Mat<double>;
using Inputs = std::vector<MatD>;
using Builder = std::function<Var(Tape<double>&, std::span<const Var>)>;

constexpr double kGradTolerance = 1e-4;

MatD randn(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  MatD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

// Entries bounded away from zero, so relu kinks stay outside +-eps.
MatD rand_away_from_zero(Rng& rng, Eigen::Index r, Eigen::Index c) {
  MatD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double mag = rng.uniform(0.1, 1.5);
    m.data()[i] = rng.uniform() < 0.5 ? -mag : mag;
  }
  return m;
}

Eigen::Index dim(Rng& rng, int lo, int hi) {
  return lo + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

// sum(f(inputs) .* R) for a fixed random R, with the analytic gradient from
// the tape.
LossFunction weighted_sum(Builder f, std::uint64_t weight_seed) {
  return [f = std::move(f), weight_seed](std::span<const MatD> inputs,
                                         std::vector<MatD>* grads) {
    Tape<double> t;
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(t.variable(x));
    const Var y = f(t, vars);
    const MatD& v = t.value(y);
    Rng rng(weight_seed);
    const MatD r = randn(rng, v.rows(), v.cols());
    MatD total(1, 1);
    total(0, 0) = (v.array() * r.array()).sum();
    const Var out = t.push(total, {y}, [y, r](Tape<double>& tp, const MatD& g) {
      tp.grad_acc(y) += g(0, 0) * r;
    });
    if (grads) {
      t.backward(out);
      grads->clear();
      for (std::size_t i = 0; i < vars.size(); ++i) {
        const MatD& g = t.grad(vars[i]);
        grads->push_back(g.size() ? g : MatD::Zero(inputs[i].rows(), inputs[i].cols()));
      }
    }
    return total(0, 0);
  };
}

// Loss over every model parameter; inputs are the parameter values.
LossFunction model_loss(Model<double> base,
                        std::function<Var(Tape<double>&, const Model<double>&)> f) {
  return [base = std::move(base), f = std::move(f)](std::span<const MatD> inputs,
                                                    std::vector<MatD>* grads) {
    Model<double> m = base;
    for (std::size_t i = 0; i < inputs.size(); ++i) m.params[i].value = inputs[i];
    Tape<double> t(&m.params, grads != nullptr);
    const Var out = f(t, m);
    if (grads) {
      t.backward(out);
      Gradients<double> g = m.params.zero_gradients();
      t.accumulate_param_grads(g);
      *grads = std::move(g);
    }
    return t.value(out)(0, 0);
  };
}

Inputs param_values(const Model<double>& m) {
  Inputs out;
  for (const auto& p : m.params) out.push_back(p.value);
  return out;
}

LstmWeights lstm_from(std::span<const Var> v, std::size_t first) {
  return {v[first], v[first + 1], v[first + 2]};
}

Inputs lstm_inputs(Rng& rng, Eigen::Index d_in, Eigen::Index h) {
  return {randn(rng, d_in, 4 * h, 0.5), randn(rng, h, 4 * h, 0.5), randn(rng, 1, 4 * h, 0.5)};
}

// Tiny model for end-to-end checks: every width, mel bins included, is 4.
ModelConfig tiny_config(FineMode mode, ValuePath path) {
  ModelConfig c = ModelConfig::uniform(4);
  c.n_mels = 4;
  c.fine_mode = mode;
  c.value_path = path;
  return c;
}

// Initialised weights plus small noise. Zero biases would put the prenet
// relu exactly on its kink for the all-zero first decoder input.
Model<double> tiny_model(Rng& rng, const ModelConfig& c) {
  Model<double> m = Model<double>::create(c, rng.next());
  for (auto& p : m.params) p.value += randn(rng, p.value.rows(), p.value.cols(), 0.1);
  return m;
}

std::vector<MatD> random_refs(Rng& rng, int n, int frames, int n_mels) {
  std::vector<MatD> refs;
  for (int i = 0; i < n; ++i) refs.push_back(randn(rng, frames, n_mels));
  return refs;
}

std::vector<int> random_ids(Rng& rng, std::size_t length) {
  std::vector<int> ids(length);
  for (int& id : ids) id = static_cast<int>(rng.below(static_cast<std::uint64_t>(alphabet_size())));
  return ids;
}

struct GradCase {
  LossFunction loss;
  Inputs inputs;
};

using CaseFactory = std::function<GradCase(Rng&)>;

std::vector<std::pair<std::string, CaseFactory>> gradient_cases() {
  std::vector<std::pair<std::string, CaseFactory>> cases;
  auto add = [&](std::string name, CaseFactory f) { cases.emplace_back(std::move(name), std::move(f)); };

  add("linear", [](Rng& rng) {
    const auto r = dim(rng, 1, 4), in = dim(rng, 1, 5), out = dim(rng, 1, 5);
    return GradCase{weighted_sum([](auto& t, auto v) { return nn::linear(t, v[0], v[1], v[2]); },
                                 rng.next()),
                    {randn(rng, r, in), randn(rng, in, out), randn(rng, 1, out)}};
  });
  add("matmul", [](Rng& rng) {
    const auto a = dim(rng, 1, 4), b = dim(rng, 1, 4), c = dim(rng, 1, 4);
    return GradCase{weighted_sum([](auto& t, auto v) { return nn::matmul(t, v[0], v[1]); }, rng.next()),
                    {randn(rng, a, b), randn(rng, b, c)}};
  });
  add("matmul_nt", [](Rng& rng) {
    const auto a = dim(rng, 1, 4), b = dim(rng, 1, 4), c = dim(rng, 1, 4);
    return GradCase{weighted_sum([](auto& t, auto v) { return nn::matmul_nt(t, v[0], v[1]); }, rng.next()),
                    {randn(rng, a, b), randn(rng, c, b)}};
  });
  add("add", [](Rng& rng) {
    const auto r = dim(rng, 1, 4), c = dim(rng, 1, 4);
    return GradCase{weighted_sum([](auto& t, auto v) { return nn::add(t, v[0], v[1]); }, rng.next()),
                    {randn(rng, r, c), randn(rng, r, c)}};
  });
  add("scale", [](Rng& rng) {
    const double s = rng.uniform(-2.0, 2.0);
    return GradCase{weighted_sum([s](auto& t, auto v) { return nn::scale(t, v[0], s); }, rng.next()),
                    {randn(rng, dim(rng, 1, 4), dim(rng, 1, 4))}};
  });
  add("relu", [](Rng& rng) {
    return GradCase{weighted_sum([](auto& t, auto v) { return nn::relu(t, v[0]); }, rng.next()),
                    {rand_away_from_zero(rng, dim(rng, 1, 4), dim(rng, 1, 4))}};
  });
  add("tanh", [](Rng& rng) {
    return GradCase{weighted_sum([](auto& t, auto v) { return nn::tanh(t, v[0]); }, rng.next()),
                    {randn(rng, dim(rng, 1, 4), dim(rng, 1, 4))}};
  });
  add("sigmoid", [](Rng& rng) {
    return GradCase{weighted_sum([](auto& t, auto v) { return nn::sigmoid(t, v[0]); }, rng.next()),
                    {randn(rng, dim(rng, 1, 4), dim(rng, 1, 4))}};
  });
  add("mul_const", [](Rng& rng) {
    const auto r = dim(rng, 1, 4), c = dim(rng, 1, 4);
    const MatD k = randn(rng, r, c);
    return GradCase{weighted_sum([k](auto& t, auto v) { return nn::mul_const(t, v[0], k); }, rng.next()),
                    {randn(rng, r, c)}};
  });
  add("concat_cols", [](Rng& rng) {
    const auto r = dim(rng, 1, 4);
    return GradCase{weighted_sum([](auto& t, auto v) { return nn::concat_cols<double>(t, v); }, rng.next()),
                    {randn(rng, r, dim(rng, 1, 3)), randn(rng, r, dim(rng, 1, 3)),
                     randn(rng, r, dim(rng, 1, 3))}};
  });
  add("vstack", [](Rng& rng) {
    const auto c = dim(rng, 1, 4);
    return GradCase{weighted_sum([](auto& t, auto v) { return nn::vstack<double>(t, v); }, rng.next()),
                    {randn(rng, dim(rng, 1, 3), c), randn(rng, dim(rng, 1, 3), c)}};
  });
  add("slice_cols", [](Rng& rng) {
    const auto c = dim(rng, 2, 6);
    const auto start = dim(rng, 0, static_cast<int>(c) - 1);
    const auto count = dim(rng, 1, static_cast<int>(c - start));
    return GradCase{weighted_sum([=](auto& t, auto v) { return nn::slice_cols(t, v[0], start, count); },
                                 rng.next()),
                    {randn(rng, dim(rng, 1, 4), c)}};
  });
  add("slice_rows", [](Rng& rng) {
    const auto r = dim(rng, 2, 6);
    const auto start = dim(rng, 0, static_cast<int>(r) - 1);
    const auto count = dim(rng, 1, static_cast<int>(r - start));
    return GradCase{weighted_sum([=](auto& t, auto v) { return nn::slice_rows(t, v[0], start, count); },
                                 rng.next()),
                    {randn(rng, r, dim(rng, 1, 4))}};
  });
  add("pad_rows", [](Rng& rng) {
    const auto r = dim(rng, 1, 4);
    const auto to = r + dim(rng, 0, 3);
    return GradCase{weighted_sum([=](auto& t, auto v) { return nn::pad_rows(t, v[0], to); }, rng.next()),
                    {randn(rng, r, dim(rng, 1, 4))}};
  });
  add("broadcast_rows", [](Rng& rng) {
    const auto rows = dim(rng, 1, 5);
    return GradCase{weighted_sum([=](auto& t, auto v) { return nn::broadcast_rows(t, v[0], rows); },
                                 rng.next()),
                    {randn(rng, 1, dim(rng, 1, 4))}};
  });
  add("mean_rows", [](Rng& rng) {
    return GradCase{weighted_sum([](auto& t, auto v) { return nn::mean_rows(t, v[0]); }, rng.next()),
                    {randn(rng, dim(rng, 1, 5), dim(rng, 1, 4))}};
  });
  add("embedding", [](Rng& rng) {
    const auto vocab = dim(rng, 2, 6);
    std::vector<int> ids(static_cast<std::size_t>(dim(rng, 1, 6)));
    for (int& id : ids) id = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab)));
    return GradCase{weighted_sum([ids](auto& t, auto v) { return nn::embedding(t, v[0], ids); }, rng.next()),
                    {randn(rng, vocab, dim(rng, 1, 4))}};
  });
  add("conv1d", [](Rng& rng) {
    const int k = static_cast<int>(2 * dim(rng, 0, 2) + 1);
    const auto cin = dim(rng, 1, 3), cout = dim(rng, 1, 3), time = dim(rng, 1, 6);
    return GradCase{weighted_sum([k](auto& t, auto v) { return nn::conv1d(t, v[0], v[1], v[2], k); },
                                 rng.next()),
                    {randn(rng, time, cin), randn(rng, k * cin, cout), randn(rng, 1, cout)}};
  });
  for (bool reverse : {false, true}) {
    add(reverse ? "lstm_reverse" : "lstm", [reverse](Rng& rng) {
      const auto d = dim(rng, 1, 3), h = dim(rng, 1, 3), time = dim(rng, 1, 5);
      Inputs in{randn(rng, time, d)};
      for (auto& w : lstm_inputs(rng, d, h)) in.push_back(std::move(w));
      return GradCase{weighted_sum([reverse](auto& t, auto v) {
                        return nn::lstm(t, v[0], lstm_from(v, 1), reverse);
                      }, rng.next()),
                      std::move(in)};
    });
  }
  add("bilstm", [](Rng& rng) {
    const auto d = dim(rng, 1, 3), h = dim(rng, 1, 3), time = dim(rng, 1, 5);
    Inputs in{randn(rng, time, d)};
    for (int dir = 0; dir < 2; ++dir) {
      for (auto& w : lstm_inputs(rng, d, h)) in.push_back(std::move(w));
    }
    return GradCase{weighted_sum([](auto& t, auto v) {
                      return nn::bilstm(t, v[0], lstm_from(v, 1), lstm_from(v, 4));
                    }, rng.next()),
                    std::move(in)};
  });
  add("lstm_cell", [](Rng& rng) {
    const auto d = dim(rng, 1, 4), h = dim(rng, 1, 4);
    Inputs in{randn(rng, 1, d), randn(rng, 1, h), randn(rng, 1, h)};
    for (auto& w : lstm_inputs(rng, d, h)) in.push_back(std::move(w));
    return GradCase{weighted_sum([](auto& t, auto v) {
                      return nn::lstm_cell(t, v[0], v[1], v[2], lstm_from(v, 3));
                    }, rng.next()),
                    std::move(in)};
  });
  add("masked_softmax", [](Rng& rng) {
    const auto cols = dim(rng, 1, 6);
    Mask mask(static_cast<std::size_t>(cols));
    for (auto& b : mask) b = rng.uniform() < 0.7;
    mask[rng.below(mask.size())] = 1;
    return GradCase{weighted_sum([mask](auto& t, auto v) { return nn::masked_softmax(t, v[0], mask); },
                                 rng.next()),
                    {randn(rng, dim(rng, 1, 3), cols, 2.0)}};
  });
  add("mse", [](Rng& rng) {
    const auto r = dim(rng, 1, 4), c = dim(rng, 1, 4);
    const MatD target = randn(rng, r, c);
    return GradCase{weighted_sum([target](auto& t, auto v) { return nn::mse(t, v[0], target); }, rng.next()),
                    {randn(rng, r, c)}};
  });
  add("bce_with_logits", [](Rng& rng) {
    const auto r = dim(rng, 1, 4), c = dim(rng, 1, 3);
    MatD target(r, c);
    for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
    return GradCase{weighted_sum([target](auto& t, auto v) { return nn::bce_with_logits(t, v[0], target); },
                                 rng.next()),
                    {randn(rng, r, c, 2.0)}};
  });

  // Model-level checks over every parameter of a tiny model.
  struct FineVariant {
    const char* name;
    FineMode mode;
    ValuePath path;
  };
  for (const FineVariant& fv : {FineVariant{"fine_encoder", FineMode::attention, ValuePath::raw_fc},
                                FineVariant{"fine_encoder_encoded_values", FineMode::attention,
                                            ValuePath::encoded},
                                FineVariant{"fine_encoder_self_attention", FineMode::self_attention,
                                            ValuePath::raw_fc}}) {
    add(fv.name, [fv](Rng& rng) {
      const ModelConfig c = tiny_config(fv.mode, fv.path);
      Model<double> m = tiny_model(rng, c);
      const auto refs = random_refs(rng, 2, 3, c.n_mels);
      const MatD queries = randn(rng, dim(rng, 1, 3), c.d_dec);
      const std::uint64_t ws = rng.next();
      Inputs in = param_values(m);
      return GradCase{model_loss(std::move(m), [refs, queries, ws](Tape<double>& t, const Model<double>& mm) {
                        const auto batch = make_reference_batch<double>(std::span<const MatD>(refs));
                        const ReferenceEncodingVars enc = encode_references(t, mm, batch);
                        const ContextVars ctx = fine_context(t, mm, t.constant(queries), enc);
                        Rng wr(ws);
                        const MatD r = randn(wr, t.value(ctx.context).rows(), t.value(ctx.context).cols());
                        const Var y = ctx.context;
                        MatD total(1, 1);
                        total(0, 0) = (t.value(y).array() * r.array()).sum();
                        return t.push(total, {y}, [y, r](Tape<double>& tp, const MatD& g) {
                          tp.grad_acc(y) += g(0, 0) * r;
                        });
                      }),
                      std::move(in)};
    });
  }
  add("coarse_encoder", [](Rng& rng) {
    const ModelConfig c = tiny_config(FineMode::attention, ValuePath::raw_fc);
    Model<double> m = tiny_model(rng, c);
    const auto refs = random_refs(rng, static_cast<int>(dim(rng, 1, 3)), 3, c.n_mels);
    const std::uint64_t ws = rng.next();
    Inputs in = param_values(m);
    return GradCase{model_loss(std::move(m), [refs, ws](Tape<double>& t, const Model<double>& mm) {
                      std::vector<Var> mels;
                      for (const auto& r : refs) mels.push_back(t.constant(r));
                      const Var y = coarse_embed_multi<double>(t, mm, mels);
                      Rng wr(ws);
                      const MatD r = randn(wr, 1, t.value(y).cols());
                      MatD total(1, 1);
                      total(0, 0) = (t.value(y).array() * r.array()).sum();
                      return t.push(total, {y}, [y, r](Tape<double>& tp, const MatD& g) {
                        tp.grad_acc(y) += g(0, 0) * r;
                      });
                    }),
                    std::move(in)};
  });
  add("teacher_forced_loss", [](Rng& rng) {
    // L_t = 3, L = 4, N = 1, L_r = 3.
    const ModelConfig c = tiny_config(FineMode::attention, ValuePath::raw_fc);
    Model<double> m = tiny_model(rng, c);
    Example<double> ex;
    ex.text_ids = random_ids(rng, 3);
    ex.target = randn(rng, 4, c.n_mels);
    ex.references = random_refs(rng, 1, 3, c.n_mels);
    const ForwardOptions fo{};
    Inputs in = param_values(m);
    return GradCase{model_loss(std::move(m), [ex, fo](Tape<double>& t, const Model<double>& mm) {
                      const auto batch = make_reference_batch<double>(std::span<const MatD>(ex.references));
                      const Var eg = coarse_embed(t, mm, t.constant(ex.target));
                      const auto out = forward_teacher_forced(t, mm, ex.text_ids, ex.target, batch, eg, fo);
                      return reconstruction_loss(t, out.mel, out.stop_logits, ex.target);
                    }),
                    std::move(in)};
  });
  return cases;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

}  // namespace

std::vector<std::string> gradient_check_names() {
  std::vector<std::string> out;
  for (const auto& [name, f] : gradient_cases()) out.push_back(name);
  return out;
}

std::vector<CheckOutcome> gradient_suite(const VerifyOptions& opts) {
  std::vector<CheckOutcome> out;
  for (auto& [name, factory] : gradient_cases()) {
    CheckOutcome o{"grads", name, static_cast<std::size_t>(opts.instances), 0.0, kGradTolerance, true, ""};
    Rng rng(derive_seed({opts.seed, std::hash<std::string>{}(name)}));
    for (int k = 0; k < opts.instances; ++k) {
      GradCase gc = factory(rng);
      LossFunction loss = gc.loss;
      if (name == opts.inject_fault) {
        // Corrupt one analytic coordinate, as a wrong backward rule would.
        loss = [inner = gc.loss](std::span<const MatD> in, std::vector<MatD>* g) {
          const double v = inner(in, g);
          if (g && !g->empty() && (*g)[0].size()) (*g)[0].data()[0] += 1e-2 * (1.0 + std::abs((*g)[0].data()[0]));
          return v;
        };
      }
      const GradCheckResult r = grad_check(loss, std::move(gc.inputs));
      if (r.max_relative_error > o.max_error) {
        o.max_error = r.max_relative_error;
        o.detail = "instance " + std::to_string(k) + ", input " + std::to_string(r.worst_input) +
                   "[" + std::to_string(r.worst_index) + "]: analytic " + fmt(r.analytic) +
                   " vs numeric " + fmt(r.numeric);
      }
    }
    o.passed = o.max_error < kGradTolerance;
    out.push_back(std::move(o));
  }
  return out;
}

namespace {

// Minimum total local cost over every monotone path, by exhaustive search.
double brute_force_dtw(const MatD& a, const MatD& b, Eigen::Index i, Eigen::Index j) {
  const double here = (a.row(i) - b.row(j)).norm();
  if (i == a.rows() - 1 && j == b.rows() - 1) return here;
  double best = std::numeric_limits<double>::infinity();
  if (i + 1 < a.rows()) best = std::min(best, brute_force_dtw(a, b, i + 1, j));
  if (j + 1 < b.rows()) best = std::min(best, brute_force_dtw(a, b, i, j + 1));
  if (i + 1 < a.rows() && j + 1 < b.rows()) best = std::min(best, brute_force_dtw(a, b, i + 1, j + 1));
  return here + best;
}

}  // namespace

std::vector<CheckOutcome> dtw_suite(const VerifyOptions& opts) {
  constexpr int kPairs = 200;
  CheckOutcome brute{"dtw", "dtw_vs_brute_force", kPairs, 0.0, 1e-9, true, ""};
  CheckOutcome path{"dtw", "dtw_path_cost", kPairs, 0.0, 1e-9, true, ""};
  CheckOutcome sym{"dtw", "dtw_symmetry", kPairs, 0.0, 1e-9, true, ""};
  Rng rng(derive_seed({opts.seed, 0x647477ULL}));
  for (int k = 0; k < kPairs; ++k) {
    const Eigen::Index d = dim(rng, 1, 3);
    const MatD a = randn(rng, dim(rng, 1, 6), d);
    const MatD b = randn(rng, dim(rng, 1, 6), d);
    const auto r = metrics::dtw_align(a, b);
    const double err = std::abs(r.cost - brute_force_dtw(a, b, 0, 0));
    if (err > brute.max_error) {
      brute.max_error = err;
      brute.detail = "pair " + std::to_string(k);
    }
    double along = 0.0;
    bool valid = r.path.front() == std::pair<std::size_t, std::size_t>{0, 0} &&
                 r.path.back() == std::pair<std::size_t, std::size_t>(a.rows() - 1, b.rows() - 1);
    for (std::size_t s = 0; s < r.path.size(); ++s) {
      const auto [i, j] = r.path[s];
      along += (a.row(static_cast<Eigen::Index>(i)) - b.row(static_cast<Eigen::Index>(j))).norm();
      if (s > 0) {
        const auto di = i - r.path[s - 1].first, dj = j - r.path[s - 1].second;
        valid = valid && di <= 1 && dj <= 1 && di + dj >= 1;
      }
    }
    const double perr = valid ? std::abs(along - r.cost) : std::numeric_limits<double>::infinity();
    if (perr > path.max_error) {
      path.max_error = perr;
      path.detail = valid ? "pair " + std::to_string(k) : "invalid path at pair " + std::to_string(k);
    }
    sym.max_error = std::max(sym.max_error, std::abs(r.cost - metrics::dtw_align(b, a).cost));
  }
  std::vector<CheckOutcome> out{brute, path, sym};
  for (auto& o : out) o.passed = o.max_error <= o.tolerance;
  return out;
}

std::vector<CheckOutcome> invariant_suite(const VerifyOptions& opts) {
  CheckOutcome perm{"invariants", "reference_permutation", 0, 0.0, 1e-6, true, ""};
  CheckOutcome padded{"invariants", "padded_frames_zero_weight", 0, 0.0, 0.0, true, ""};
  CheckOutcome hull{"invariants", "context_in_convex_hull", 0, 0.0, 0.0, true, ""};
  CheckOutcome rowsum{"invariants", "attention_row_sum", 0, 0.0, 1e-6, true, ""};
  CheckOutcome copies{"invariants", "coarse_multi_of_copies", 0, 0.0, 1e-7, true, ""};

  Rng rng(derive_seed({opts.seed, 0x696e76ULL}));
  const FineMode modes[] = {FineMode::attention, FineMode::average_pool, FineMode::self_attention};
  for (int k = 0; k < opts.instances; ++k) {
    for (FineMode mode : modes) {
      for (ValuePath vp : {ValuePath::raw_fc, ValuePath::encoded}) {
        ModelConfig c = ModelConfig::uniform(8);
        c.n_mels = 10;
        c.fine_mode = mode;
        c.value_path = vp;
        const Model<double> m = tiny_model(rng, c);
        std::vector<MatD> refs;
        const Eigen::Index n = dim(rng, 2, 4);
        for (Eigen::Index i = 0; i < n; ++i) refs.push_back(randn(rng, dim(rng, 2, 7), c.n_mels));
        const MatD query = randn(rng, 1, c.d_dec);

        const auto batch = make_reference_batch<double>(std::span<const MatD>(refs));
        const AttendResult<double> base = attend(m, query, batch);

        std::vector<std::size_t> order(refs.size());
        std::iota(order.begin(), order.end(), 0);
        std::reverse(order.begin(), order.end());
        std::swap(order[0], order[order.size() / 2]);
        std::vector<MatD> shuffled;
        for (std::size_t i : order) shuffled.push_back(refs[i]);
        const auto batch2 = make_reference_batch<double>(std::span<const MatD>(shuffled));
        const AttendResult<double> permuted = attend(m, query, batch2);
        perm.max_error = std::max(perm.max_error, (base.context - permuted.context).cwiseAbs().maxCoeff());
        ++perm.instances;

        const ReferenceEncoding<double> enc = encode_references(m, batch);
        const Mask mask = batch.mask();
        const Eigen::Index d_v = c.d_v;
        for (Eigen::Index col = 0; col < d_v; ++col) {
          double lo = std::numeric_limits<double>::infinity();
          double hi = -lo;
          for (std::size_t p = 0; p < mask.size(); ++p) {
            if (!mask[p]) continue;
            const double v = enc.values.data()[p * static_cast<std::size_t>(d_v) + static_cast<std::size_t>(col)];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
          const double cv = base.context(0, col);
          hull.max_error = std::max({hull.max_error, lo - cv, cv - hi});
        }
        ++hull.instances;

        if (base.weights.size()) {
          double sum = 0.0;
          for (std::size_t p = 0; p < mask.size(); ++p) {
            sum += base.weights(0, static_cast<Eigen::Index>(p));
            if (!mask[p]) padded.max_error = std::max(padded.max_error, std::abs(base.weights(0, static_cast<Eigen::Index>(p))));
          }
          rowsum.max_error = std::max(rowsum.max_error, std::abs(sum - 1.0));
          ++padded.instances;
          ++rowsum.instances;
        }

        if (mode == FineMode::attention && vp == ValuePath::raw_fc) {
          const std::vector<MatD> same(static_cast<std::size_t>(n), refs[0]);
          const MatD multi = coarse_embed_multi<double>(m, same);
          const MatD single = coarse_embed(m, refs[0]);
          copies.max_error = std::max(copies.max_error, (multi - single).cwiseAbs().maxCoeff());
          ++copies.instances;
        }
      }
    }
  }
  std::vector<CheckOutcome> out{perm, padded, hull, rowsum, copies};
  for (auto& o : out) o.passed = o.max_error <= o.tolerance;
  return out;
}

bool all_passed(const std::vector<CheckOutcome>& outcomes) {
  for (const auto& o : outcomes) {
    if (!o.passed) return false;
  }
  return true;
}

}  // namespace attentron::verify
