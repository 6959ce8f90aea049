#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "regnn/autodiff.hpp"
#include "regnn/regnn.hpp"
#include "support.hpp"

using namespace regnn;
using regnn::testing::edges_of;
using regnn::testing::random_graph;
using regnn::testing::random_layer;
using regnn::testing::random_matrix;

namespace {

// ---- independent transcriptions -------------------------------------------

long double sig(long double x) { return 1.0L / (1.0L + std::exp(-x)); }

std::vector<std::vector<long double>> preprocessed(const Matrix<double>& x, const Normalization& n) {
    std::vector<std::vector<long double>> u(x.rows(), std::vector<long double>(x.cols()));
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t d = 0; d < x.cols(); ++d)
            u[i][d] = sig((static_cast<long double>(x(i, d)) - n.shift[d]) / n.scale[d]);
    return u;
}

/// a_{j,i} for every stored edge, straight from the softmax formula.
std::vector<long double> coefficient_oracle(const Matrix<double>& x, const EdgeSet<double>& e,
                                            const LayerWeights<double>& w, const Normalization& n) {
    const auto u = preprocessed(x, n);
    auto score = [&](std::size_t i, std::size_t j) {
        long double s = 0.0L;
        for (std::size_t r = 0; r < w.relation_dim(); ++r) {
            long double qi = 0.0L, mj = 0.0L;
            for (std::size_t c = 0; c < w.dims(); ++c) {
                qi += u[i][c] * w.query(c, r);
                mj += u[j][c] * w.message(c, r);
            }
            s += qi * mj;
        }
        return s;
    };
    std::vector<long double> a(e.size());
    for (std::size_t idx = 0; idx < e.size(); ++idx) {
        const std::size_t j = e.edges()[idx].source, i = e.edges()[idx].target;
        long double total = 0.0L;
        for (const auto& other : e.edges())
            if (other.target == i) total += std::exp(score(i, other.source));
        a[idx] = std::exp(score(i, j)) / total;
    }
    return a;
}

std::vector<std::vector<long double>> edge_oracle(const Matrix<double>& x, const EdgeSet<double>& e,
                                                  const LayerWeights<double>& w, const Normalization& n) {
    const auto a = coefficient_oracle(x, e, w, n);
    std::vector<std::vector<long double>> out(e.size(), std::vector<long double>(e.dims()));
    for (std::size_t idx = 0; idx < e.size(); ++idx)
        for (std::size_t d = 0; d < e.dims(); ++d) {
            long double den = 0.0L;
            for (std::size_t k = 0; k < e.size(); ++k)
                if (e.edges()[k].target == e.edges()[idx].target) den += a[k] * e.edges()[k].feature[d];
            out[idx][d] = a[idx] * e.edges()[idx].feature[d] / den;
        }
    return out;
}

long double spectral_oracle(const LayerWeights<double>& w) {
    const std::size_t d = w.dims();
    Eigen::MatrixXd a(d, d);
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c) {
            double s = 0.0;
            for (std::size_t k = 0; k < w.relation_dim(); ++k) s += w.query(r, k) * w.message(c, k);
            a(r, c) = s;
        }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.transpose() * a);
    return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

Matrix<double> forward_oracle(const Matrix<double>& x, const EdgeSet<double>& e, const RegnnLayer& l) {
    const auto u = preprocessed(x, l.normalization());
    const auto en = edge_oracle(x, e, l.weights(), l.normalization());
    const long double den = 1.0L + 2.0L * spectral_oracle(l.weights());
    Matrix<double> out = x;
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t d = 0; d < x.cols(); ++d) {
            long double acc = 0.0L;
            for (std::size_t idx = 0; idx < e.size(); ++idx)
                if (e.edges()[idx].target == i) acc += en[idx][d] * u[e.edges()[idx].source][d];
            out(i, d) = static_cast<double>(x(i, d) + l.weights().combine[d] / den * acc);
        }
    return out;
}

MeflBlock<double> block(std::size_t dims, Rng& rng) { return MeflBlock<double>::random(dims, dims, 3, rng); }

RegnnLayer layer_with(LayerWeights<double> w, std::size_t k, Normalization n = {}) {
    if (n.shift.empty()) n = Normalization::identity(w.dims());
    return enforce_lipschitz(RegnnLayer(std::move(w), std::move(n), k));
}

Normalization random_norm(std::size_t dims, Rng& rng) {
    Normalization n = Normalization::identity(dims);
    for (std::size_t d = 0; d < dims; ++d) {
        n.shift[d] = rng.normal();
        n.scale[d] = rng.uniform(0.25, 2.0);
    }
    return n;
}

}  // namespace

// ---- coefficients (relation softmax) ---------------------------------------

TEST(Coefficients, IdenticalNodesAreUniform) {
    Rng rng(1);
    const RegnnLayer l = random_layer(3, 3, rng);
    Matrix<double> x(4, 3);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t d = 0; d < 3; ++d) x(i, d) = 0.1 * static_cast<double>(d);
    const EdgeSet<double> e = build_edges(x, block(3, rng), 3);
    const auto a = coefficients(x, e, l);
    for (double v : a) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Coefficients, ZeroQueryIsUniform) {
    Rng rng(2);
    LayerWeights<double> w = LayerWeights<double>::random(3, 2, rng);
    for (double& v : w.query.values()) v = 0.0;
    const RegnnLayer l = layer_with(w, 2);
    const auto g = random_graph(5, 3, 2, rng, block(3, rng));
    const auto a = coefficients(g.nodes, g.edges, l);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t idx : g.edges.incoming(i))
            EXPECT_NEAR(a[idx], 1.0 / static_cast<double>(g.edges.incoming(i).size()), 1e-15);
}

TEST(Coefficients, MatchesSoftmaxOfHandAssembledScores) {
    Rng rng(3);
    const LayerWeights<double> w = LayerWeights<double>::random(3, 2, rng, 2.0);
    const Normalization n = random_norm(3, rng);
    const RegnnLayer l = layer_with(w, 2, n);
    const auto g = random_graph(3, 3, 2, rng, block(3, rng));
    const auto a = coefficients(g.nodes, g.edges, l);
    const auto ref = coefficient_oracle(g.nodes, g.edges, l.weights(), n);
    for (std::size_t idx = 0; idx < a.size(); ++idx) EXPECT_NEAR(a[idx], static_cast<double>(ref[idx]), 1e-14);
}

// ---- edge update ----------------------------------------------------------

TEST(EdgeUpdate, SingleNeighbourNormalizesToOnes) {
    Rng rng(4);
    const RegnnLayer l = random_layer(2, 1, rng);
    const EdgeSet<double> e = edges_of(3, 2, {{0, 1, {0.3, 0.7}}, {1, 2, {0.2, 0.1}}, {2, 0, {0.9, 0.4}}});
    const EdgeSet<double> en = edge_update(random_matrix(3, 2, rng), e, l);
    for (const auto& ed : en.edges())
        for (double v : ed.feature) EXPECT_EQ(v, 1.0);
}

TEST(EdgeUpdate, SymmetricNeighboursSplitEvenly) {
    Rng rng(5);
    const RegnnLayer l = random_layer(2, 1, rng);
    Matrix<double> x(3, 2, 0.4);
    const EdgeSet<double> e = edges_of(3, 2, {{0, 2, {0.3, 0.6}}, {1, 2, {0.3, 0.6}}});
    const EdgeSet<double> en = edge_update(x, e, l);
    for (const auto& ed : en.edges())
        for (double v : ed.feature) EXPECT_NEAR(v, 0.5, 1e-15);
}

TEST(EdgeUpdate, MatchesFormulaTranscription) {
    Rng rng(5);
    const LayerWeights<double> w = LayerWeights<double>::random(4, 3, rng, 1.5);
    const Normalization n = random_norm(4, rng);
    const RegnnLayer l = layer_with(w, 2, n);
    const auto g = random_graph(4, 4, 2, rng, block(4, rng));
    const EdgeSet<double> en = edge_update(g.nodes, g.edges, l);
    const auto ref = edge_oracle(g.nodes, g.edges, l.weights(), n);
    for (std::size_t idx = 0; idx < en.size(); ++idx)
        for (std::size_t d = 0; d < 4; ++d) EXPECT_NEAR(en.edges()[idx].feature[d], static_cast<double>(ref[idx][d]), 1e-14);
}

TEST(EdgeUpdate, UnderflowIsNumericError) {
    Rng rng(6);
    const RegnnLayer l = random_layer(1, 1, rng);
    const EdgeSet<double> e = edges_of(2, 1, {{0, 1, {1e-310}}, {1, 0, {0.5}}});
    EXPECT_THROW(edge_update(random_matrix(2, 1, rng), e, l), NumericError);
}

// ---- forward layer --------------------------------------------------------

TEST(ForwardLayer, ZeroCombineIsPureResidual) {
    Rng rng(7);
    LayerWeights<double> w = LayerWeights<double>::random(3, 3, rng);
    for (double& v : w.combine) v = 0.0;
    const RegnnLayer l = layer_with(w, 2);
    const auto g = random_graph(5, 3, 2, rng, block(3, rng));
    EXPECT_EQ(forward_layer(g.nodes, g.edges, l), g.nodes);
}

TEST(ForwardLayer, IsolatedNodeUnchanged) {
    Rng rng(8);
    const RegnnLayer l = random_layer(2, 1, rng);
    const Matrix<double> x = random_matrix(3, 2, rng);
    const EdgeSet<double> e = edges_of(3, 2, {{0, 1, {0.5, 0.5}}, {1, 0, {0.5, 0.5}}});
    const Matrix<double> y = forward_layer(x, e, l);
    EXPECT_EQ(y(2, 0), x(2, 0));
    EXPECT_EQ(y(2, 1), x(2, 1));
    EXPECT_NE(y(0, 0), x(0, 0));
}

TEST(ForwardLayer, ChainMatchesDirectTranscription) {
    Rng rng(9);
    const LayerWeights<double> w = LayerWeights<double>::random(3, 2, rng, 1.0, 1.0);
    const Normalization n = random_norm(3, rng);
    const RegnnLayer l = layer_with(w, 1, n);
    const Matrix<double> x = random_matrix(3, 3, rng);
    const EdgeSet<double> e = edges_of(3, 3, {{0, 1, {0.2, 0.3, 0.5}}, {1, 2, {0.6, 0.1, 0.3}}});
    EXPECT_LT(max_abs_diff(forward_layer(x, e, l), forward_oracle(x, e, l)), 1e-14);
}

TEST(ForwardLayer, RandomGraphsMatchTranscription) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const std::size_t n = 3 + rng.index(6), dims = 1 + rng.index(5), k = 1 + rng.index(std::min<std::size_t>(3, n - 1));
        const RegnnLayer l = layer_with(LayerWeights<double>::random(dims, 1 + rng.index(4), rng, 1.5), k,
                                        random_norm(dims, rng));
        const auto g = random_graph(n, dims, k, rng, block(dims, rng));
        EXPECT_LT(max_abs_diff(forward_layer(g.nodes, g.edges, l), forward_oracle(g.nodes, g.edges, l)), 1e-13);
    }
}

TEST(ForwardLayer, RequiresEnforcement) {
    Rng rng(10);
    RegnnLayer l = random_layer(2, 1, rng);
    l.mutable_weights();
    const auto g = random_graph(3, 2, 1, rng, block(2, rng));
    EXPECT_FALSE(l.enforced());
    EXPECT_THROW(forward_layer(g.nodes, g.edges, l), ContractViolation);
    EXPECT_THROW(reverse_layer(g.nodes, g.edges, l), ContractViolation);
}

TEST(ForwardLayer, RejectsOutDegreeAboveBudget) {
    Rng rng(11);
    const RegnnLayer l = random_layer(2, 1, rng);
    const auto g = random_graph(4, 2, 2, rng, block(2, rng));
    EXPECT_THROW(forward_layer(g.nodes, g.edges, l), ContractViolation);
}

// ---- reverse layer --------------------------------------------------------

TEST(ReverseLayer, ZeroCombineReturnsInputAfterFirstUpdate) {
    Rng rng(12);
    LayerWeights<double> w = LayerWeights<double>::random(3, 3, rng);
    for (double& v : w.combine) v = 0.0;
    const RegnnLayer l = layer_with(w, 2);
    const auto g = random_graph(4, 3, 2, rng, block(3, rng));
    const ReverseResult r = reverse_layer(g.nodes, g.edges, l);
    EXPECT_EQ(r.nodes, g.nodes);
    // The first update already lands on the fixed point; the second confirms it.
    EXPECT_LE(r.iterations, 2u);
    EXPECT_EQ(r.residual, 0.0);
}

TEST(ReverseLayer, RecoversInput) {
    Rng rng(13);
    const RegnnLayer l = random_layer(4, 2, rng, 1.0, 1.0);
    const auto g = random_graph(5, 4, 2, rng, block(4, rng));
    const Matrix<double> y = forward_layer(g.nodes, g.edges, l);
    const ReverseResult r = reverse_layer(y, g.edges, l, {1e-8, 500, 77});
    EXPECT_LT(max_abs_diff(r.nodes, g.nodes), 1e-6);
    EXPECT_LT(max_abs_diff(forward_layer(r.nodes, g.edges, l), y), 10 * 1e-8);
}

TEST(ReverseLayer, DistinctStartsAgree) {
    Rng rng(14);
    const RegnnLayer l = random_layer(3, 2, rng);
    const auto g = random_graph(6, 3, 2, rng, block(3, rng));
    const double tol = 1e-8;
    const ReverseResult a = reverse_layer(g.nodes, g.edges, l, {tol, 500, 1});
    const ReverseResult b = reverse_layer(g.nodes, g.edges, l, {tol, 500, 2});
    EXPECT_LE(max_abs_diff(a.nodes, b.nodes), 2 * tol);
}

TEST(ReverseLayer, IterationCapRaisesConvergenceError) {
    Rng rng(15);
    const RegnnLayer l = random_layer(3, 2, rng);
    const auto g = random_graph(5, 3, 2, rng, block(3, rng));
    try {
        (void)reverse_layer(g.nodes, g.edges, l, {1e-12, 1, 3});
        FAIL() << "expected ConvergenceError";
    } catch (const ConvergenceError& e) {
        EXPECT_EQ(e.iterations(), 1u);
        EXPECT_GT(e.last_value(), 0.0);
    }
    EXPECT_THROW(reverse_layer(g.nodes, g.edges, l, {0.0, 10, 3}), DomainError);
}

// ---- enforcement ----------------------------------------------------------

TEST(Enforce, ZeroQueryHasUnitDenominatorAndKeepsSmallWeights) {
    Rng rng(16);
    LayerWeights<double> w = LayerWeights<double>::random(3, 2, rng);
    for (double& v : w.query.values()) v = 0.0;
    w.combine = {0.3, -0.2, 0.1};
    const RegnnLayer l = enforce_lipschitz(RegnnLayer(w, Normalization::identity(3), 2));
    ASSERT_TRUE(l.enforced());
    EXPECT_EQ(l.record()->denominator, 1.0);
    EXPECT_EQ(l.weights().combine, w.combine);
    EXPECT_LT(l.record()->bound, 0.5);
}

TEST(Enforce, DenominatorAbsorbsQueryScale) {
    // With one incoming edge per node the coefficients cancel, so scaling
    // W_q only changes phi through the recomputed denominator.
    Rng rng(17);
    LayerWeights<double> w = LayerWeights<double>::random(3, 3, rng);
    w.combine = {0.01, -0.02, 0.015};
    LayerWeights<double> w2 = w;
    for (double& v : w2.query.values()) v *= 2.0;
    const RegnnLayer a = enforce_lipschitz(RegnnLayer(w, Normalization::identity(3), 1));
    const RegnnLayer b = enforce_lipschitz(RegnnLayer(w2, Normalization::identity(3), 1));
    EXPECT_NEAR(b.record()->denominator - 1.0, 2.0 * (a.record()->denominator - 1.0), 1e-12);
    const Matrix<double> x = random_matrix(3, 3, rng);
    const EdgeSet<double> e = edges_of(3, 3, {{0, 1, {0.2, 0.3, 0.5}}, {1, 2, {0.6, 0.1, 0.3}}, {2, 0, {1, 1, 1}}});
    const Matrix<double> da = phi(x, e, a.weights(), a.normalization());
    const Matrix<double> db = phi(x, e, b.weights(), b.normalization());
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < da.size(); ++k) {
        dot += da.values()[k] * db.values()[k];
        na += da.values()[k] * da.values()[k];
        nb += db.values()[k] * db.values()[k];
    }
    EXPECT_NEAR(dot / std::sqrt(na * nb), 1.0, 1e-12);
    EXPECT_LT(nb, na);
}

TEST(Enforce, Idempotent) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const RegnnLayer once = random_layer(1 + rng.index(8), 1 + rng.index(3), rng, rng.uniform(0.1, 3.0),
                                             rng.uniform(0.1, 5.0));
        const RegnnLayer twice = enforce_lipschitz(once);
        for (std::size_t d = 0; d < once.dims(); ++d)
            EXPECT_NEAR(twice.weights().combine[d], once.weights().combine[d], 1e-12);
        EXPECT_EQ(*twice.record(), *once.record());
    }
}

TEST(Enforce, EmpiricalLipschitzBelowOne) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const std::size_t dims = 1 + rng.index(8), k = 1 + rng.index(3), n = k + 1 + rng.index(6);
        RegnnLayer l = RegnnLayer(LayerWeights<double>::random(dims, dims, rng, rng.uniform(0.1, 3.0), 5.0),
                                  random_norm(dims, rng), k);
        l = enforce_lipschitz(l);
        const auto g = random_graph(n, dims, k, rng, block(dims, rng));
        EXPECT_LT(empirical_lipschitz(l, g.edges, rng, 1000), 1.0) << "seed " << seed;
        EXPECT_LT(contraction_bound(l.weights(), l.normalization(), k).lipschitz, 1.0);
    }
}

TEST(Enforce, NonFiniteNormIsNumericError) {
    Rng rng(18);
    LayerWeights<double> w = LayerWeights<double>::random(2, 2, rng);
    for (double& v : w.query.values()) v = 1e200;
    for (double& v : w.message.values()) v = 1e200;
    EXPECT_THROW(enforce_lipschitz(RegnnLayer(w, Normalization::identity(2), 1)), NumericError);
    w.query(0, 0) = NAN;
    EXPECT_THROW(RegnnLayer(w, Normalization::identity(2), 1), NumericError);
}

TEST(Enforce, WeightWritesDropTheRecord) {
    Rng rng(19);
    RegnnLayer l = random_layer(3, 2, rng);
    const ContractionRecord rec = *l.record();
    l.mutable_weights().combine[0] *= 100.0;
    EXPECT_FALSE(l.enforced());
    EXPECT_FALSE(l.restore_record(rec));
    l.mutable_weights().combine[0] /= 100.0;
    RegnnLayer fresh = random_layer(3, 2, rng);
    const ContractionRecord fresh_rec = *fresh.record();
    fresh.set_normalization(fresh.normalization());
    EXPECT_FALSE(fresh.enforced());
    EXPECT_TRUE(fresh.restore_record(fresh_rec));
}

// ---- model ----------------------------------------------------------------

TEST(Model, RejectsZeroLayers) {
    Rng rng(20);
    EXPECT_THROW(RegnnModel(std::vector<RegnnLayer>{}), DomainError);
    EXPECT_THROW(RegnnModel::random(0, 3, 3, 2, rng), DomainError);
}

TEST(Model, SingleLayerEqualsLayerOps) {
    Rng rng(21);
    const RegnnModel m = RegnnModel::random(1, 3, 3, 2, rng);
    const auto g = random_graph(5, 3, 2, rng, block(3, rng));
    const auto z = forward(m, g);
    EXPECT_EQ(z.nodes, forward_layer(g.nodes, g.edges, m.layer(0)));
    const ReverseOptions opt{1e-8, 500, 5};
    EXPECT_EQ(reverse(m, z, opt).nodes,
              reverse_layer(z.nodes, g.edges, m.layer(0), {1e-8, 500, Rng::mix(opt.seed + 0)}).nodes);
}

TEST(Model, EveryLayerReadsInitialEdges) {
    Rng rng(22);
    const RegnnModel m = RegnnModel::random(3, 4, 4, 2, rng);
    const auto g = random_graph(6, 4, 2, rng, block(4, rng));
    Matrix<double> x = g.nodes;
    for (const RegnnLayer& l : m.layers()) x = forward_layer(x, g.edges, l);
    const auto z = forward(m, g);
    EXPECT_EQ(z.nodes, x);
    ASSERT_EQ(z.edges.size(), g.edges.size());
    for (std::size_t e = 0; e < g.edges.size(); ++e) EXPECT_EQ(z.edges.edges()[e].feature, g.edges.edges()[e].feature);
}

TEST(Model, RoundTripFourLayers) {
    Rng rng(23);
    const RegnnModel m = RegnnModel::random(4, 8, 4, 3, rng, 0.5, 1.0);
    for (int rep = 0; rep < 5; ++rep) {
        const auto g = random_graph(8, 8, 3, rng, block(8, rng));
        const auto back = reverse(m, forward(m, g), {1e-8, 500, rng.next_u64()});
        EXPECT_LT(max_abs_diff(back.nodes, g.nodes), 1e-5);
    }
}

TEST(Model, ZeroMessageModelIsIdentity) {
    Rng rng(24);
    std::vector<RegnnLayer> ls;
    for (int n = 0; n < 3; ++n) {
        LayerWeights<double> w = LayerWeights<double>::random(3, 3, rng);
        for (double& v : w.combine) v = 0.0;
        ls.push_back(layer_with(w, 2));
    }
    const RegnnModel m(ls);
    const auto g = random_graph(4, 3, 2, rng, block(3, rng));
    EXPECT_EQ(forward(m, g).nodes, g.nodes);
    EXPECT_EQ(reverse(m, g).nodes, g.nodes);
}

TEST(Model, RoundTripPropertySweep) {
    for (std::uint64_t seed = 100; seed < 130; ++seed) {
        Rng rng(seed);
        const std::size_t n = 2 + rng.index(15), dims = 1 + rng.index(8), layers = 1 + rng.index(6);
        const std::size_t k = 1 + rng.index(std::min<std::size_t>(3, n - 1));
        RegnnModel m = RegnnModel::random(layers, dims, 1 + rng.index(dims), k, rng, rng.uniform(0.2, 2.0), 1.0);
        const MeflBlock<double> mb = block(dims, rng);
        std::vector<AttributeGraph<double>> cal;
        for (int c = 0; c < 4; ++c) cal.push_back(random_graph(n, dims, k, rng, mb));
        calibrate_normalization(m, cal);
        EXPECT_FALSE(m.enforced());
        m.enforce();
        const auto g = random_graph(n, dims, k, rng, mb);
        std::vector<std::size_t> iters;
        const auto back = reverse(m, forward(m, g), {1e-8, 500, seed}, &iters);
        EXPECT_LT(max_abs_diff(back.nodes, g.nodes), 1e-5) << "seed " << seed;
        const auto z = forward(m, g);
        Matrix<double> x = g.nodes;
        for (const RegnnLayer& l : m.layers()) {
            const Matrix<double> y = forward_layer(x, g.edges, l);
            EXPECT_LE(reverse_layer(y, g.edges, l, {1e-6, 500, seed}).iterations, 100u);
            const auto a = coefficients(x, g.edges, l);
            const auto en = edge_update(x, g.edges, l);
            for (std::size_t i = 0; i < n; ++i) {
                if (g.edges.incoming(i).empty()) continue;
                double cs = 0.0;
                std::vector<double> es(dims, 0.0);
                for (std::size_t idx : g.edges.incoming(i)) {
                    cs += a[idx];
                    for (std::size_t d = 0; d < dims; ++d) es[d] += en.edges()[idx].feature[d];
                }
                EXPECT_NEAR(cs, 1.0, 1e-12);
                for (double s : es) EXPECT_NEAR(s, 1.0, 1e-10);
            }
            x = y;
        }
    }
}

TEST(Model, CalibrationFloorsScale) {
    Rng rng(25);
    RegnnModel m = RegnnModel::random(2, 3, 3, 1, rng);
    const MeflBlock<double> mb = block(3, rng);
    std::vector<AttributeGraph<double>> cal;
    for (int c = 0; c < 3; ++c) {
        Matrix<double> x(3, 3, 0.7);
        cal.push_back({x, build_edges(x, mb, 1)});
    }
    calibrate_normalization(m, cal);
    for (const Normalization& n : m.normalizations())
        for (double s : n.scale) EXPECT_GE(s, 0.25);
}

// ---- gradient of a forward loss --------------------------------------------

TEST(Gradient, ForwardL2LossMatchesFiniteDifferences) {
    Rng rng(26);
    const std::size_t dims = 3;
    const RegnnLayer l = layer_with(LayerWeights<double>::random(dims, 2, rng, 1.5, 1.0), 2, random_norm(dims, rng));
    const auto g = random_graph(3, dims, 2, rng, block(dims, rng));
    const std::vector<Normalization> norms{l.normalization()};

    std::vector<double> theta;
    for (double v : l.weights().query.values()) theta.push_back(v);
    for (double v : l.weights().message.values()) theta.push_back(v);
    for (double v : l.weights().combine) theta.push_back(v);

    auto unpack = [&](auto make) {
        using T = decltype(make(0.0));
        LayerWeights<T> w{l.weights().query.map([](double v) { return T(v); }),
                          l.weights().message.map([](double v) { return T(v); }), {}};
        std::size_t k = 0;
        for (auto& v : w.query.values()) v = make(theta[k++]);
        for (auto& v : w.message.values()) v = make(theta[k++]);
        for (std::size_t d = 0; d < dims; ++d) w.combine.push_back(make(theta[k++]));
        return w;
    };
    auto loss = [&](const auto& w) {
        using T = std::decay_t<decltype(w.combine.front())>;
        const std::vector<LayerWeights<T>> ws{w};
        const Matrix<T> y = forward_nodes(std::span<const LayerWeights<T>>(ws), std::span<const Normalization>(norms),
                                          g.nodes.map([](double v) { return T(v); }),
                                          g.edges.map([](double v) { return T(v); }));
        T s(0.0);
        for (const T& v : y.values()) s += v * v;
        return s;
    };

    ad::Tape tape;
    const auto wv = unpack([&](double v) { return tape.variable(v); });
    const auto adj = tape.adjoints(loss(wv));
    const auto fd = finite_diff_grad(
        [&](std::span<const double> p) {
            const std::vector<double> saved = theta;
            theta.assign(p.begin(), p.end());
            const double v = loss(unpack([](double x) { return x; }));
            theta = saved;
            return v;
        },
        std::span<const double>(theta), 1e-6);
    double diff = 0.0, norm = 0.0;
    for (std::size_t k = 0; k < theta.size(); ++k) {
        diff += (adj[k] - fd[k]) * (adj[k] - fd[k]);
        norm += fd[k] * fd[k];
    }
    EXPECT_GT(norm, 0.0);
    EXPECT_LT(std::sqrt(diff / norm), 1e-4);
}
