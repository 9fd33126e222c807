#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "qreform/beam.hpp"
#include "qreform/decoder.hpp"
#include "qreform/encoder.hpp"
#include "qreform/error.hpp"
#include "qreform/optim.hpp"
#include "qreform/ranker.hpp"
#include "qreform/rng.hpp"

using namespace qreform;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

Parameter random_param(const std::string& name, Shape shape, Rng& rng, double scale = 1.0) {
  return Parameter(name, random_tensor(std::move(shape), rng, scale));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---- plain-double reference model pieces -------------------------------------

using Vec = std::vector<double>;

Vec matvec(const Tensor& W, const Vec& x) {
  Vec out(W.rows(), 0.0);
  for (std::size_t r = 0; r < W.rows(); ++r) {
    for (std::size_t c = 0; c < W.cols(); ++c) out[r] += W.at(r, c) * x[c];
  }
  return out;
}

struct PlainLstm {
  Vec h, c;
};

PlainLstm lstm_step(const LstmCell& cell, const Vec& x, const PlainLstm& prev) {
  const std::size_t H = cell.hidden_size;
  const Vec wx = matvec(cell.W.value, x), uh = matvec(cell.U.value, prev.h);
  PlainLstm out{Vec(H), Vec(H)};
  for (std::size_t j = 0; j < H; ++j) {
    const double i = sigmoid(wx[j] + uh[j] + cell.b.value[j]);
    const double f = sigmoid(wx[H + j] + uh[H + j] + cell.b.value[H + j]);
    const double g = std::tanh(wx[2 * H + j] + uh[2 * H + j] + cell.b.value[2 * H + j]);
    const double o = sigmoid(wx[3 * H + j] + uh[3 * H + j] + cell.b.value[3 * H + j]);
    out.c[j] = f * prev.c[j] + i * g;
    out.h[j] = o * std::tanh(out.c[j]);
  }
  return out;
}

Vec row_of(const Parameter& p, std::size_t r) {
  const auto s = p.value.row(r);
  return Vec(s.begin(), s.end());
}

double loss_dot(const Tensor& t, const Vec& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * r[i];
  return s;
}

}  // namespace

// ---- tensor ops --------------------------------------------------------------

TEST(Affine, ZeroInputGivesBias) {
  Graph g;
  Rng rng(1);
  Var W = g.constant(random_tensor({3, 2}, rng));
  Var b = g.constant(Tensor::vector({1.0, -2.0, 0.5}));
  Var y = ad::affine(g.constant(Tensor::vector({0.0, 0.0})), W, b);
  EXPECT_EQ(y.value().values(), (Vec{1.0, -2.0, 0.5}));
}

TEST(Affine, IdentityIsNoOp) {
  Graph g;
  Var y = ad::affine(g.constant(Tensor::vector({1.0, 2.0})), g.constant(Tensor::matrix(2, 2, {1, 0, 0, 1})),
                     g.constant(Tensor::vector({0.0, 0.0})));
  EXPECT_EQ(y.value().values(), (Vec{1.0, 2.0}));
}

TEST(Affine, MatchesLoopMultiply) {
  Rng rng(2);
  Graph g;
  const Tensor W = random_tensor({3, 2}, rng), x = random_tensor({2}, rng), b = random_tensor({3}, rng);
  const Tensor& y = ad::affine(g.constant(x), g.constant(W), g.constant(b)).value();
  for (std::size_t r = 0; r < 3; ++r) {
    double expect = b[r];
    for (std::size_t c = 0; c < 2; ++c) expect += W.at(r, c) * x[c];
    EXPECT_NEAR(y[r], expect, 1e-15);
  }
}

TEST(Elementwise, FixedPoints) {
  Graph g;
  EXPECT_EQ(ad::sigmoid(g.constant(Tensor::vector({0.0}))).value()[0], 0.5);
  EXPECT_EQ(ad::tanh(g.constant(Tensor::vector({0.0}))).value()[0], 0.0);
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const double x = 5.0 * rng.normal();
    const double s = ad::sigmoid(g.constant(Tensor::vector({x}))).value()[0] +
                     ad::sigmoid(g.constant(Tensor::vector({-x}))).value()[0];
    EXPECT_NEAR(s, 1.0, 1e-15);
  }
}

TEST(Elementwise, LogRejectsNonPositive) {
  Graph g;
  EXPECT_THROW(ad::log(g.constant(Tensor::vector({1.0, 0.0}))), UsageError);
}

TEST(Softmax, Examples) {
  Graph g;
  for (double p : ad::softmax(g.constant(Tensor::vector({2, 2, 2, 2}))).value().values()) EXPECT_DOUBLE_EQ(p, 0.25);
  const Tensor& two = ad::softmax(g.constant(Tensor::vector({0.0, std::log(3.0)}))).value();
  EXPECT_NEAR(two[0], 0.25, 1e-15);
  EXPECT_NEAR(two[1], 0.75, 1e-15);
}

TEST(Softmax, MatchesExtendedPrecisionOracle) {
  Rng rng(4);
  Graph g;
  const Tensor logits = random_tensor({7}, rng, 3.0);
  const Tensor& p = ad::softmax(g.constant(logits)).value();
  long double z = 0.0L;
  for (double v : logits.values()) z += std::exp(static_cast<long double>(v));
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_NEAR(p[i], static_cast<double>(std::exp(static_cast<long double>(logits[i])) / z), 1e-15);
  }
}

TEST(Concat, JoinsAndRejectsEmpty) {
  Graph g;
  EXPECT_EQ(ad::concat(g.constant(Tensor::vector({1.0})), g.constant(Tensor::vector({2.0}))).value().values(),
            (Vec{1.0, 2.0}));
  EXPECT_THROW(ad::concat(g.constant(Tensor::vector({})), g.constant(Tensor::vector({2.0}))), UsageError);
}

TEST(Concat, SumGradientIsOnes) {
  Parameter a("a", Tensor::vector({0.3, -1.0, 2.0}));
  Graph g;
  Var loss = ad::sum(ad::concat(g.param(a), g.constant(Tensor::vector({5.0, 6.0}))));
  g.backward(loss);
  EXPECT_EQ(a.grad.values(), (Vec{1.0, 1.0, 1.0}));
}

TEST(Maxpool, Examples) {
  Graph g;
  EXPECT_EQ(ad::maxpool_over_steps(g.constant(Tensor::matrix(1, 2, {4, -1}))).value().values(), (Vec{4, -1}));
  EXPECT_EQ(ad::maxpool_over_steps(g.constant(Tensor::matrix(2, 2, {1, 5, 3, 2}))).value().values(), (Vec{3, 5}));
  Rng rng(5);
  const Tensor H = random_tensor({4, 3}, rng);
  const Tensor& m = ad::maxpool_over_steps(g.constant(H)).value();
  for (std::size_t c = 0; c < 3; ++c) {
    double best = H.at(0, c);
    for (std::size_t r = 1; r < 4; ++r) best = std::max(best, H.at(r, c));
    EXPECT_EQ(m[c], best);
  }
}

TEST(Cosine, Examples) {
  Graph g;
  auto cos = [&](Vec a, Vec b) {
    return ad::cosine(g.constant(Tensor::vector(std::move(a))), g.constant(Tensor::vector(std::move(b)))).scalar();
  };
  EXPECT_NEAR(cos({0.3, -2.0, 1.5}, {0.3, -2.0, 1.5}), 1.0, 1e-15);
  EXPECT_EQ(cos({1, 0}, {0, 1}), 0.0);
  EXPECT_NEAR(cos({1, 0}, {1, 1}), 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(Cosine, ZeroNormIsZeroWithZeroGradient) {
  Parameter u("u", Tensor::vector({0.0, 0.0}));
  Parameter v("v", Tensor::vector({1.0, 2.0}));
  Graph g;
  Var c = ad::cosine(g.param(u), g.param(v));
  EXPECT_EQ(c.scalar(), 0.0);
  g.backward(c);
  EXPECT_EQ(u.grad.values(), (Vec{0.0, 0.0}));
  EXPECT_EQ(v.grad.values(), (Vec{0.0, 0.0}));
}

TEST(EmbeddingLookup, RowsAndGradients) {
  Rng rng(6);
  Parameter E = random_param("E", {5, 3}, rng);
  E.value.row(0)[0] = 0.0;
  Graph g;
  EXPECT_EQ(ad::embedding_lookup(g, E, 0).value().values(), row_of(E, 0));
  EXPECT_EQ(ad::embedding_lookup(g, E, 3).value().values(), row_of(E, 3));
  Var loss = ad::add(ad::sum(ad::embedding_lookup(g, E, 2)), ad::sum(ad::embedding_lookup(g, E, 2)));
  g.backward(loss);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(E.grad.at(r, c), r == 2 ? 2.0 : 0.0);
  }
  EXPECT_THROW(ad::embedding_lookup(g, E, 5), UsageError);
}

TEST(Backward, LinearAndSigmoid) {
  Parameter W("W", Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Graph g;
  const Vec x{0.5, -1.0, 2.0};
  g.backward(ad::sum(ad::matvec(g.param(W), g.constant(Tensor::vector(x)))));
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(W.grad.at(r, c), x[c]);
  }
  Parameter w("w", Tensor::vector({0.0}));
  Graph h;
  h.backward(ad::sum(ad::sigmoid(h.param(w))));
  EXPECT_EQ(w.grad[0], 0.25);
}

// ---- gradient checking ---------------------------------------------------------

TEST(GradCheck, QuadraticIsNearlyExact) {
  Rng rng(7);
  Parameter theta = random_param("theta", {6}, rng);
  std::vector<Parameter*> params{&theta};
  auto loss = [&](bool backward) {
    Graph g(backward);
    Var t = g.param(theta);
    Var l = ad::scale(ad::dot(t, t), 0.5);
    if (backward) g.backward(l);
    return l.scalar();
  };
  const GradCheckResult r = grad_check(loss, params, GradCheckOptions{1e-5, 200, 1});
  EXPECT_LT(r.max_rel_error, 1e-9);
  EXPECT_EQ(theta.grad.values(), theta.value.values());
}

TEST(GradCheck, DetectsCorruptedGradient) {
  Parameter theta("theta", Tensor::vector({1.0, 2.0}));
  std::vector<Parameter*> params{&theta};
  auto loss = [&](bool backward) {
    Graph g(backward);
    Var l = ad::sum(ad::mul(g.param(theta), g.param(theta)));
    if (backward) g.backward(l);
    return l.scalar();
  };
  GradCheckOptions o;
  o.corrupt_analytic = 1.0;
  EXPECT_GT(grad_check(loss, params, o).max_rel_error, 0.1);
}

// Every primitive, composed with a fixed random projection to a scalar.
TEST(GradCheck, EveryPrimitive) {
  Rng rng(8);
  Parameter A = random_param("A", {3, 4}, rng, 0.5);
  Parameter x = random_param("x", {4}, rng);
  Parameter y = random_param("y", {4}, rng);
  Parameter b = random_param("b", {3}, rng);
  Parameter E = random_param("E", {5, 4}, rng);
  Parameter pos("pos", Tensor::vector({0.7, 1.3, 2.1, 0.4}));
  std::vector<Parameter*> params{&A, &x, &y, &b, &E, &pos};

  using Builder = std::function<Var(Graph&)>;
  const std::vector<std::pair<std::string, Builder>> ops = {
      {"affine", [&](Graph& g) { return ad::affine(g.param(x), g.param(A), g.param(b)); }},
      {"matvec_t", [&](Graph& g) { return ad::matvec_t(g.param(A), g.param(b)); }},
      {"sigmoid", [&](Graph& g) { return ad::sigmoid(g.param(x)); }},
      {"tanh", [&](Graph& g) { return ad::tanh(g.param(x)); }},
      {"log", [&](Graph& g) { return ad::log(g.param(pos)); }},
      {"log_sigmoid", [&](Graph& g) { return ad::log_sigmoid(ad::scale(g.param(x), 10.0)); }},
      {"mul", [&](Graph& g) { return ad::mul(g.param(x), g.param(y)); }},
      {"sub", [&](Graph& g) { return ad::sub(g.param(x), g.param(y)); }},
      {"softmax", [&](Graph& g) { return ad::softmax(g.param(x)); }},
      {"log_softmax", [&](Graph& g) { return ad::log_softmax(g.param(x)); }},
      {"concat", [&](Graph& g) { return ad::slice(ad::concat(g.param(x), g.param(b)), 2, 4); }},
      {"stack_maxpool",
       [&](Graph& g) {
         std::vector<Var> rows{g.param(x), g.param(y), ad::tanh(g.param(pos))};
         return ad::maxpool_over_steps(ad::stack(rows));
       }},
      {"cosine", [&](Graph& g) { return ad::concat(ad::cosine(g.param(x), g.param(y)), ad::dot(g.param(x), g.param(y))); }},
      {"pick", [&](Graph& g) { return ad::pick(g.param(x), 2); }},
      {"embedding", [&](Graph& g) { return ad::mul(ad::embedding_lookup(g, E, 3), ad::embedding_lookup(g, E, 1)); }},
  };
  for (const auto& [name, build] : ops) {
    Vec r;
    {
      Graph probe(false);
      const std::size_t n = build(probe).size();
      for (std::size_t i = 0; i < n; ++i) r.push_back(rng.normal());
    }
    auto loss = [&](bool backward) {
      Graph g(backward);
      Var out = build(g);
      Var l = ad::dot(out, g.constant(Tensor::vector(r)));
      if (backward) g.backward(l);
      return l.scalar();
    };
    EXPECT_LT(grad_check(loss, params).max_rel_error, 1e-4) << name;
  }
}

// ---- Adam ----------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParameters) {
  Parameter p("p", Tensor::vector({1.0, -2.0}));
  std::vector<Parameter*> params{&p};
  AdamState s(AdamOptions{}, params);
  for (int i = 0; i < 5; ++i) adam_step(params, s);
  EXPECT_EQ(p.value.values(), (Vec{1.0, -2.0}));
}

TEST(Adam, ConstantGradientMovesByLearningRate) {
  Parameter p("p", Tensor::vector({0.0, 0.0}));
  std::vector<Parameter*> params{&p};
  AdamState s(AdamOptions{0.01}, params);
  double prev0 = 0.0;
  for (int i = 0; i < 100; ++i) {
    p.grad = Tensor::vector({3.0, -0.5});
    adam_step(params, s);
    EXPECT_NEAR(p.value[0] - prev0, -0.01, 1e-8);
    prev0 = p.value[0];
  }
  EXPECT_NEAR(p.value[1], 1.0, 1e-6);
}

TEST(Adam, MatchesScalarSimulationOnQuadratic) {
  Parameter p("p", Tensor::vector({2.0}));
  std::vector<Parameter*> params{&p};
  const AdamOptions o{0.1, 0.9, 0.999, 1e-8};
  AdamState s(o, params);
  double theta = 2.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 10; ++t) {
    p.grad = Tensor::vector({p.value[0]});  // d/dθ of θ²/2
    adam_step(params, s);
    const double grad = theta;
    m = o.beta1 * m + (1 - o.beta1) * grad;
    v = o.beta2 * v + (1 - o.beta2) * grad * grad;
    const double mh = m / (1 - std::pow(o.beta1, t)), vh = v / (1 - std::pow(o.beta2, t));
    theta -= o.lr * mh / (std::sqrt(vh) + o.eps);
    EXPECT_NEAR(p.value[0], theta, 1e-14) << "step " << t;
  }
}

TEST(Adam, PinnedRowsStayFixed) {
  Parameter E("E", Tensor::matrix(2, 2, {0, 0, 1, 1}));
  E.pinned_rows = {0};
  std::vector<Parameter*> params{&E};
  AdamState s(AdamOptions{}, params);
  E.grad = Tensor::matrix(2, 2, {1, 1, 1, 1});
  adam_step(params, s);
  EXPECT_EQ(E.value.at(0, 0), 0.0);
  EXPECT_LT(E.value.at(1, 0), 1.0);
}

TEST(Adam, RejectsMismatchedState) {
  Parameter a("a", Tensor::vector({1.0}));
  Parameter b("b", Tensor::vector({1.0, 2.0}));
  std::vector<Parameter*> pa{&a}, pb{&b};
  AdamState s(AdamOptions{}, pa);
  EXPECT_THROW(adam_step(pb, s), UsageError);
}

// ---- LSTM and encoders ---------------------------------------------------------

TEST(Lstm, ZeroWeightsGiveZeroState) {
  Rng rng(9);
  LstmCell cell = LstmCell::create("c", 3, 2, rng);
  cell.W.value.fill(0.0);
  cell.U.value.fill(0.0);
  cell.b.value.fill(0.0);
  Graph g;
  LstmVars v = bind(g, cell);
  LstmState s = lstm_cell_step(v, g.constant(Tensor::vector({1, 2, 3})), zero_state(g, 2));
  EXPECT_EQ(s.h.value().values(), (Vec{0.0, 0.0}));
}

TEST(Lstm, ZeroInputFromZeroStateStaysZero) {
  Rng rng(10);
  LstmCell cell = LstmCell::create("c", 3, 2, rng);
  Graph g;
  LstmVars v = bind(g, cell);
  LstmState s = zero_state(g, 2);
  for (int i = 0; i < 4; ++i) s = lstm_cell_step(v, g.constant(Tensor::vector({0, 0, 0})), s);
  EXPECT_EQ(s.h.value().values(), (Vec{0.0, 0.0}));
}

TEST(Lstm, GradientCheckTinyCell) {
  Rng rng(11);
  LstmCell cell = LstmCell::create("c", 3, 2, rng);
  Parameter x = random_param("x", {3}, rng);
  std::vector<Parameter*> params{&cell.W, &cell.U, &cell.b, &x};
  const Vec r{0.7, -1.1};
  auto loss = [&](bool backward) {
    Graph g(backward);
    LstmVars v = bind(g, cell);
    LstmState s = lstm_cell_step(v, g.param(x), zero_state(g, 2));
    s = lstm_cell_step(v, g.param(x), s);
    Var l = ad::add(ad::dot(s.h, g.constant(Tensor::vector(r))), ad::sum(s.c));
    if (backward) g.backward(l);
    return l.scalar();
  };
  EXPECT_LT(grad_check(loss, params).max_rel_error, 1e-4);
}

class EncoderTest : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(12);
    embeddings = random_param("E", {8, 3}, rng);
    embeddings.value.row(kPad)[0] = embeddings.value.row(kPad)[1] = embeddings.value.row(kPad)[2] = 0.0;
    query = QueryEncoder::create(3, 2, 2, rng);
    session = SessionEncoder::create(4, 3, rng);
  }
  Parameter embeddings;
  QueryEncoder query;
  SessionEncoder session;
};

TEST_F(EncoderTest, AllPadQueryEncodesToZero) {
  Graph g;
  QueryEncoderVars v = bind(g, query);
  const std::vector<TokenId> tokens(kQueryLen, kPad);
  EXPECT_EQ(encode_query(g, v, embeddings, tokens).vector.value().values(), Vec(4, 0.0));
}

TEST_F(EncoderTest, SingleTokenTakesAllAttention) {
  Graph g;
  QueryEncoderVars v = bind(g, query);
  const std::vector<TokenId> tokens{5, kPad, kPad, kPad, kPad};
  const QueryEncoding e = encode_query(g, v, embeddings, tokens);
  EXPECT_EQ(e.attention[0], 1.0);
  for (std::size_t t = 1; t < kQueryLen; ++t) EXPECT_EQ(e.attention[t], 0.0);
  EXPECT_EQ(e.vector.value().values(), e.states[0].value().values());
}

TEST_F(EncoderTest, MatchesStraightLineRecomputation) {
  const std::vector<TokenId> tokens{6, 4, kPad, kPad, kPad};
  Graph g;
  QueryEncoderVars v = bind(g, query);
  const Tensor& got = encode_query(g, v, embeddings, tokens).vector.value();

  std::vector<PlainLstm> fwd(kQueryLen), bwd(kQueryLen);
  PlainLstm s{Vec(2, 0.0), Vec(2, 0.0)};
  for (std::size_t t = 0; t < kQueryLen; ++t) fwd[t] = s = lstm_step(query.forward, row_of(embeddings, tokens[t]), s);
  s = PlainLstm{Vec(2, 0.0), Vec(2, 0.0)};
  for (std::size_t t = kQueryLen; t-- > 0;) bwd[t] = s = lstm_step(query.backward, row_of(embeddings, tokens[t]), s);
  Vec scores, weights;
  std::vector<Vec> H;
  for (std::size_t t = 0; t < 2; ++t) {
    Vec h = fwd[t].h;
    h.insert(h.end(), bwd[t].h.begin(), bwd[t].h.end());
    Vec z = matvec(query.attn_proj.value, h);
    double e = 0.0;
    for (std::size_t a = 0; a < z.size(); ++a) e += query.attn_context.value[a] * std::tanh(z[a] + query.attn_bias.value[a]);
    scores.push_back(e);
    H.push_back(h);
  }
  const double mx = std::max(scores[0], scores[1]);
  const double z = std::exp(scores[0] - mx) + std::exp(scores[1] - mx);
  for (std::size_t d = 0; d < 4; ++d) {
    const double expect = std::exp(scores[0] - mx) / z * H[0][d] + std::exp(scores[1] - mx) / z * H[1][d];
    EXPECT_NEAR(got[d], expect, 1e-10);
  }
}

TEST_F(EncoderTest, SessionVectorIsRunningMax) {
  Graph g;
  SessionEncoderVars v = bind(g, session);
  SessionState state = start_session(g, v, "s");
  Rng rng(13);
  std::vector<Vec> hidden;
  PlainLstm plain{Vec(3, 0.0), Vec(3, 0.0)};
  for (int step = 0; step < 3; ++step) {
    const Tensor q = random_tensor({4}, rng);
    const Tensor& vs = encode_session_step(v, state, g.constant(q), "s").value();
    plain = lstm_step(session.cell, q.values(), plain);
    hidden.push_back(plain.h);
    for (std::size_t d = 0; d < 3; ++d) {
      double best = hidden[0][d];
      for (const Vec& h : hidden) best = std::max(best, h[d]);
      EXPECT_NEAR(vs[d], best, 1e-14);
    }
    if (step == 0) EXPECT_EQ(vs.values(), state.hidden[0].value().values());
  }
  EXPECT_THROW(encode_session_step(v, state, g.constant(random_tensor({4}, rng)), "other"), UsageError);
}

// ---- decoder -------------------------------------------------------------------

class DecoderTest : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(14);
    embeddings = random_param("E", {kVocab, 3}, rng);
    decoder = Decoder::create(3, 4, 5, kVocab, rng);
  }
  static constexpr std::size_t kVocab = 6;
  Parameter embeddings;
  Decoder decoder;
};

TEST_F(DecoderTest, ZeroInitGivesZeroState) {
  decoder.init_W.value.fill(0.0);
  decoder.init_b.value.fill(0.0);
  Graph g;
  DecoderVars v = bind(g, decoder);
  EXPECT_EQ(init_state(v, g.constant(Tensor(Shape{4}))).h.value().values(), Vec(5, 0.0));
}

TEST_F(DecoderTest, ZeroHeadIsUniform) {
  decoder.out_W.value.fill(0.0);
  decoder.out_b.value.fill(0.0);
  Graph g;
  DecoderVars v = bind(g, decoder);
  const DecodeStep step = decode_step(v, embeddings, kBos, init_state(v, g.constant(Tensor::vector({1, 2, 3, 4}))));
  for (double p : ad::softmax(step.logits).value().values()) EXPECT_DOUBLE_EQ(p, 1.0 / kVocab);
}

TEST_F(DecoderTest, ThreeStepsMatchStraightLineRecomputation) {
  const Vec vs{0.5, -0.2, 1.0, 0.3};
  Graph g;
  DecoderVars v = bind(g, decoder);
  LstmState state = init_state(v, g.constant(Tensor::vector(vs)));
  Vec h0 = matvec(decoder.init_W.value, vs);
  for (std::size_t i = 0; i < h0.size(); ++i) h0[i] = std::tanh(h0[i] + decoder.init_b.value[i]);
  PlainLstm plain{h0, Vec(5, 0.0)};
  const std::vector<TokenId> inputs{kBos, 4, 5};
  for (TokenId prev : inputs) {
    const DecodeStep step = decode_step(v, embeddings, prev, state);
    state = step.state;
    plain = lstm_step(decoder.cell, row_of(embeddings, prev), plain);
    Vec phi = matvec(decoder.phi_W.value, plain.h);
    for (std::size_t i = 0; i < phi.size(); ++i) phi[i] = std::tanh(phi[i] + decoder.phi_b.value[i]);
    Vec logits = matvec(decoder.out_W.value, phi);
    double z = 0.0;
    for (std::size_t i = 0; i < kVocab; ++i) z += std::exp(logits[i] += decoder.out_b.value[i]);
    const Tensor& p = ad::softmax(step.logits).value();
    for (std::size_t i = 0; i < kVocab; ++i) EXPECT_NEAR(p[i], std::exp(logits[i]) / z, 1e-10);
  }
}

TEST_F(DecoderTest, UniformModelLoss) {
  decoder.out_W.value.fill(0.0);
  decoder.out_b.value.fill(0.0);
  const std::vector<TokenId> target{4, 5, 4, kPad, kPad, kPad, kPad, kPad, kPad, kPad};
  const double logv = std::log(static_cast<double>(kVocab));
  Graph g;
  DecoderVars v = bind(g, decoder);
  Var vs = g.constant(Tensor::vector({0.1, 0.2, 0.3, 0.4}));
  // Three words plus the terminating PAD are predicted.
  EXPECT_NEAR(reform_loss(v, embeddings, vs, target, {0.0, EntropyMode::Reward}).scalar(), 4 * logv, 1e-12);
  EXPECT_NEAR(reform_loss(v, embeddings, vs, target, {0.1, EntropyMode::Reward}).scalar(), 4 * logv * 0.9, 1e-12);
  EXPECT_NEAR(reform_loss(v, embeddings, vs, target, {0.1, EntropyMode::Literal}).scalar(), 4 * logv * 1.1, 1e-12);
  EXPECT_THROW(reform_loss(v, embeddings, vs, std::vector<TokenId>{4, 5}, {}), UsageError);
}

TEST_F(DecoderTest, ReformLossGradientCheck) {
  Parameter vs("vs", Tensor::vector({0.1, -0.4, 0.3, 0.2}));
  std::vector<Parameter*> params = decoder.params();
  params.push_back(&vs);
  params.push_back(&embeddings);
  const std::vector<TokenId> target{4, 5, kPad, kPad, kPad, kPad, kPad, kPad, kPad, kPad};
  for (EntropyMode mode : {EntropyMode::Reward, EntropyMode::Literal}) {
    auto loss = [&](bool backward) {
      Graph g(backward);
      DecoderVars v = bind(g, decoder);
      Var l = reform_loss(v, embeddings, g.param(vs), target, {0.1, mode});
      if (backward) g.backward(l);
      return l.scalar();
    };
    EXPECT_LT(grad_check(loss, params).max_rel_error, 1e-4);
  }
}

TEST_F(DecoderTest, SequenceLogprobNormalization) {
  Graph g;
  DecoderVars v = bind(g, decoder);
  Var vs = g.constant(Tensor::vector({0.3, 0.1, -0.2, 0.5}));
  double one = 0.0, two = 0.0;
  for (TokenId a = 0; a < kVocab; ++a) {
    one += std::exp(sequence_logprob(v, embeddings, vs, std::vector<TokenId>{a}).scalar());
    for (TokenId b = 0; b < kVocab; ++b) {
      two += std::exp(sequence_logprob(v, embeddings, vs, std::vector<TokenId>{a, b}).scalar());
    }
  }
  EXPECT_NEAR(one, 1.0, 1e-12);
  EXPECT_NEAR(two, 1.0, 1e-10);

  const std::vector<TokenId> seq{4, 2, 5};
  double manual = 0.0;
  LstmState state = init_state(v, vs);
  TokenId prev = kBos;
  for (TokenId w : seq) {
    const DecodeStep step = decode_step(v, embeddings, prev, state);
    manual += ad::log_softmax(step.logits).value()[w];
    state = step.state;
    prev = w;
  }
  EXPECT_NEAR(sequence_logprob(v, embeddings, vs, seq).scalar(), manual, 1e-12);
}

// ---- ranker --------------------------------------------------------------------

TEST(Ranker, ImageRepresentation) {
  Rng rng(15);
  Parameter E = random_param("E", {6, 3}, rng);
  Graph g;
  const std::vector<TokenId> one{4, kPad, kPad};
  EXPECT_EQ(image_repr(g, E, one).value().values(), row_of(E, 4));
  EXPECT_EQ(image_repr(g, E, std::vector<TokenId>(kCaptionLen, kPad)).value().values(), Vec(3, 0.0));
  const std::vector<TokenId> three{3, 5, 4, kPad};
  const Tensor& m = image_repr(g, E, three).value();
  for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(m[d], (E.value.at(3, d) + E.value.at(5, d) + E.value.at(4, d)) / 3.0);
}

TEST(Ranker, ScoresAreCosines) {
  Rng rng(16);
  Ranker ranker = Ranker::create(5, 3, rng);
  Graph g;
  RankerVars v = bind(g, ranker);
  Var q = g.constant(random_tensor({2}, rng)), s = g.constant(random_tensor({3}, rng));
  Var projected = ad::affine(ad::concat(q, s), v.proj_W, v.proj_b);
  const Tensor other = random_tensor({3}, rng);
  std::vector<Var> captions{projected, g.constant(Tensor(Shape{3})), g.constant(other)};
  const Tensor& S = score_impressions(v, q, s, captions).value();
  EXPECT_NEAR(S[0], 1.0, 1e-12);
  EXPECT_EQ(S[1], 0.0);
  const Vec p = projected.value().values();
  const double dot = loss_dot(other, p);
  EXPECT_NEAR(S[2], dot / std::sqrt(loss_dot(other, other.values()) * std::inner_product(p.begin(), p.end(), p.begin(), 0.0)),
              1e-12);
}

TEST(Ranker, CrossEntropyLoss) {
  Graph g;
  const std::vector<bool> clicks{true, false, false, true};
  EXPECT_NEAR(ce_rank_loss(g.constant(Tensor(Shape{4})), clicks).scalar(), std::log(2.0), 1e-15);
  EXPECT_LT(ce_rank_loss(g.constant(Tensor::vector({40, -40, -40, 40})), clicks).scalar(), 1e-15);
  Rng rng(17);
  const Tensor S = random_tensor({4}, rng);
  double expect = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    const double s = sigmoid(S[j]);
    expect -= clicks[j] ? std::log(s) : std::log(1.0 - s);
  }
  EXPECT_NEAR(ce_rank_loss(g.constant(S), clicks).scalar(), expect / 4.0, 1e-14);
}

TEST(Ranker, PairwiseLoss) {
  Graph g;
  std::vector<bool> one_click(10, false);
  one_click[3] = true;
  EXPECT_NEAR(pairwise_rank_loss(g.constant(Tensor(Shape{10})), one_click).scalar(), 18.0 * std::log(2.0) / 100.0,
              1e-15);
  Tensor apart(Shape{10}, -50.0);
  apart[3] = 50.0;
  EXPECT_LT(pairwise_rank_loss(g.constant(apart), one_click).scalar(), 1e-15);
  EXPECT_EQ(pairwise_rank_loss(g.constant(apart), std::vector<bool>(10, true)).scalar(), 0.0);

  Rng rng(18);
  const Tensor S = random_tensor({6}, rng);
  const std::vector<bool> clicks{false, true, false, true, false, false};
  double expect = 0.0;
  for (std::size_t j = 0; j < 6; ++j) {
    for (std::size_t k = 0; k < 6; ++k) {
      if (clicks[j] == clicks[k]) continue;
      const double p = sigmoid(S[j] - S[k]);
      expect -= clicks[j] ? std::log(p) : std::log(1.0 - p);
    }
  }
  EXPECT_NEAR(pairwise_rank_loss(g.constant(S), clicks).scalar(), expect / 36.0, 1e-14);
}

TEST(Ranker, MultitaskMix) {
  Graph g;
  Var r = g.constant(Tensor::vector({2.0})), k = g.constant(Tensor::vector({1.0}));
  EXPECT_EQ(multitask_loss(r, k, 1.0).scalar(), 2.0);
  EXPECT_EQ(multitask_loss(r, k, 0.0).scalar(), 1.0);
  EXPECT_NEAR(multitask_loss(r, k, 0.45).scalar(), 1.45, 1e-15);
  EXPECT_THROW(multitask_loss(r, k, 1.5), UsageError);
}

TEST(Ranker, LossGradientChecks) {
  Rng rng(19);
  Parameter S = random_param("S", {6}, rng);
  std::vector<Parameter*> params{&S};
  const std::vector<bool> clicks{false, true, false, true, false, false};
  for (int kind = 0; kind < 2; ++kind) {
    auto loss = [&](bool backward) {
      Graph g(backward);
      Var l = kind == 0 ? ce_rank_loss(g.param(S), clicks) : pairwise_rank_loss(g.param(S), clicks);
      if (backward) g.backward(l);
      return l.scalar();
    };
    EXPECT_LT(grad_check(loss, params).max_rel_error, 1e-4);
  }
}

// ---- beam search ---------------------------------------------------------------

class BeamTest : public DecoderTest {};

TEST_F(BeamTest, WidthOneIsGreedy) {
  Rng rng(20);
  for (int trial = 0; trial < 20; ++trial) {
    Graph g(false);
    DecoderVars v = bind(g, decoder);
    Var vs = g.constant(random_tensor({4}, rng, 2.0));
    const std::vector<Hypothesis> beam = beam_search(v, embeddings, vs, BeamConfig{1});
    ASSERT_EQ(beam.size(), 1u);
    EXPECT_EQ(beam[0].tokens, greedy_decode(v, embeddings, vs, kTargetLen).tokens);
  }
}

TEST_F(BeamTest, SortedAndDeterministic) {
  Graph g(false);
  DecoderVars v = bind(g, decoder);
  Var vs = g.constant(Tensor::vector({0.3, -1.0, 0.8, 0.1}));
  const std::vector<Hypothesis> a = beam_search(v, embeddings, vs, BeamConfig{4});
  const std::vector<Hypothesis> b = beam_search(v, embeddings, vs, BeamConfig{4});
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 1; i < a.size(); ++i) EXPECT_GE(a[i - 1].logprob, a[i].logprob);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].tokens, b[i].tokens);
    EXPECT_EQ(a[i].logprob, b[i].logprob);
  }
  EXPECT_GE(a[0].logprob, greedy_decode(v, embeddings, vs, kTargetLen).logprob);
  EXPECT_THROW(beam_search(v, embeddings, vs, BeamConfig{0}), UsageError);
}

TEST(Beam, ExhaustiveTopOneOnTinyVocabulary) {
  Rng rng(21);
  Parameter E = random_param("E", {5, 3}, rng);
  Decoder dec = Decoder::create(3, 2, 4, 5, rng);
  for (int trial = 0; trial < 10; ++trial) {
    Graph g(false);
    DecoderVars v = bind(g, dec);
    Var vs = g.constant(random_tensor({2}, rng, 3.0));
    // Sequences end at PAD or after two tokens.
    std::vector<TokenId> best{kPad};
    double best_lp = sequence_logprob(v, E, vs, best).scalar();
    for (TokenId a = 1; a < 5; ++a) {
      for (TokenId b = 0; b < 5; ++b) {
        const std::vector<TokenId> seq{a, b};
        const double lp = sequence_logprob(v, E, vs, seq).scalar();
        if (lp > best_lp) best_lp = lp, best = seq;
      }
    }
    const std::vector<Hypothesis> beam = beam_search(v, E, vs, BeamConfig{25, 2, false});
    EXPECT_EQ(beam.size(), 21u);
    EXPECT_EQ(beam[0].tokens, best);
    EXPECT_NEAR(beam[0].logprob, best_lp, 1e-12);
  }
}

TEST(Beam, StrippedTextStopsAtPad) {
  const Vocabulary vocab = Vocabulary::from_words({"w1", "w2"});
  const std::vector<TokenId> tokens{vocab.id("w1"), vocab.id("w2"), kPad, kPad};
  EXPECT_EQ(detokenize(strip_padding(tokens), vocab), "w1 w2");
}
