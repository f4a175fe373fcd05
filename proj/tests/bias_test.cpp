#include "bootvit/bias.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "bootvit/ops_nn.hpp"
#include "bootvit/rng.hpp"

using namespace bootvit;

namespace {

std::vector<double> randv(std::size_t n, RngStream& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

// Per-offset weight slices from a [kh,kw,Cin,Cout] kernel; slice (ky,kx) is
// contiguous, which is exactly why the kernel uses that layout.
std::vector<Tensor<double>> kernel_slices(const Tensor<double>& w) {
    const std::size_t kh = w.dim(0), kw = w.dim(1), ci = w.dim(2), co = w.dim(3);
    std::vector<Tensor<double>> out;
    for (std::size_t i = 0; i < kh * kw; ++i) {
        std::vector<double> slice(w.data().begin() + i * ci * co, w.data().begin() + (i + 1) * ci * co);
        out.push_back(Tensor<double>::from_data({ci, co}, std::move(slice)));
    }
    return out;
}

}  // namespace

TEST(SelectionMatrices, OneByOneKernelIsIdentity) {
    BiasSet set = build_selection_matrices(3, 4, 1, 1);
    ASSERT_EQ(set.size(), 1u);
    const SelectionMatrix& m = set.matrices[0];
    EXPECT_EQ(m.nnz(), 12u);
    for (std::size_t r = 0; r < 12; ++r) EXPECT_EQ(m.src[r], static_cast<std::ptrdiff_t>(r));
}

TEST(SelectionMatrices, CornerOffsetOnTwoByTwo) {
    BiasSet set = build_selection_matrices(2, 2, 3, 3);
    ASSERT_EQ(set.size(), 9u);
    // First matrix in row-major kernel order carries offset (-1,-1).
    const SelectionMatrix& m = set.matrices[0];
    EXPECT_EQ(m.di, -1);
    EXPECT_EQ(m.dj, -1);
    ASSERT_EQ(m.nnz(), 1u);
    EXPECT_EQ(m.entries[0].first, 3u);   // position (1,1)
    EXPECT_EQ(m.entries[0].second, 0u);  // reads (0,0)
    // Center matrix is the identity.
    const SelectionMatrix& c = set.matrices[4];
    EXPECT_EQ(c.di, 0);
    EXPECT_EQ(c.dj, 0);
    EXPECT_EQ(c.nnz(), 4u);
}

TEST(SelectionMatrices, RowSumsAndInteriorCoverage) {
    BiasSet set = build_selection_matrices(3, 3, 3, 3);
    for (const auto& m : set.matrices) {
        std::vector<int> row_sum(m.n, 0);
        for (const auto& [r, c] : m.entries) {
            ASSERT_LT(c, m.n);
            row_sum[r]++;
        }
        for (int s : row_sum) EXPECT_LE(s, 1);
        if (m.di == 0 && m.dj == 0) {
            for (int s : row_sum) EXPECT_EQ(s, 1);
        }
    }
    // The interior position (1,1) of the 3x3 map has every neighbor in
    // bounds, so each of the nine matrices covers its row.
    const std::size_t interior = 1 * 3 + 1;
    for (const auto& m : set.matrices) EXPECT_GE(m.src[interior], 0);
}

TEST(SelectionMatrices, EvenKernelRejected) {
    EXPECT_THROW(build_selection_matrices(3, 3, 2, 2), ConfigError);
    EXPECT_THROW(build_selection_matrices(3, 3, 3, 4), ConfigError);
}

TEST(ConvMatrixForm, MatchesDirectConvolution) {
    RngStream rng(42);
    for (std::size_t k : {std::size_t(1), std::size_t(3), std::size_t(5)}) {
        const std::size_t h = 5, w = 4, ci = 3, co = 2;
        auto x = Tensor<double>::from_data({1, ci, h, w}, randv(ci * h * w, rng));
        auto ker = Tensor<double>::from_data({k, k, ci, co}, randv(k * k * ci * co, rng));
        auto direct = chw_to_tokens(conv2d_direct(x, ker, 1, k / 2));
        BiasSet set = build_selection_matrices(h, w, k, k);
        auto tokens = chw_to_tokens(x);
        auto viamat = conv_matrix_form(tokens, set, kernel_slices(ker));
        ASSERT_EQ(direct.shape(), viamat.shape());
        for (std::size_t i = 0; i < direct.numel(); ++i)
            EXPECT_NEAR(direct.data()[i], viamat.data()[i], 1e-10);
    }
}

TEST(ConvMatrixForm, IdentityKernelAndZeroInput) {
    RngStream rng(7);
    BiasSet set = build_selection_matrices(2, 3, 1, 1);
    auto x = Tensor<double>::from_data({6, 2}, randv(12, rng));
    auto w = Tensor<double>::from_data({2, 2}, randv(4, rng));
    auto y = conv_matrix_form(x, set, {w});
    auto direct = matmul(x, w);
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], direct.data()[i]);

    auto zero = Tensor<double>::zeros({6, 2});
    auto yz = conv_matrix_form(zero, set, {w});
    for (double v : yz.data()) EXPECT_EQ(v, 0.0);
}

TEST(ConvMatrixForm, WeightCountMismatch) {
    BiasSet set = build_selection_matrices(2, 2, 3, 3);
    auto x = Tensor<double>::zeros({4, 2});
    auto w = Tensor<double>::zeros({2, 2});
    EXPECT_THROW(conv_matrix_form(x, set, {w}), ConfigError);
}

TEST(GeneralizedBiases, SubsetOrdering) {
    BiasSet full = build_selection_matrices(4, 4, 3, 3);
    BiasSet one = select_generalized_biases(1, full);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one.matrices[0].di, 0);
    EXPECT_EQ(one.matrices[0].dj, 0);

    BiasSet six = select_generalized_biases(6, full);
    const std::vector<std::pair<int, int>> want = {{0, 0}, {0, -1}, {0, 1}, {-1, 0}, {1, 0}, {-1, -1}};
    ASSERT_EQ(six.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
        EXPECT_EQ(six.matrices[i].di, want[i].first) << i;
        EXPECT_EQ(six.matrices[i].dj, want[i].second) << i;
    }

    BiasSet nine = select_generalized_biases(9, full);
    EXPECT_EQ(nine.size(), 9u);

    EXPECT_THROW(select_generalized_biases(10, full), ConfigError);
}

TEST(GeneralizedBiases, FourHeadsUseTheEvenWindow) {
    BiasSet four = generalized_bias_set(3, 3, 4);
    const std::vector<std::pair<int, int>> want = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    ASSERT_EQ(four.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
        EXPECT_EQ(four.matrices[i].di, want[i].first) << i;
        EXPECT_EQ(four.matrices[i].dj, want[i].second) << i;
    }
}

TEST(ConvGeneralized, CenterOnlyAndLinearity) {
    RngStream rng(12);
    BiasSet one = generalized_bias_set(3, 3, 1);
    auto x = Tensor<double>::from_data({9, 4}, randv(36, rng));
    auto w = Tensor<double>::from_data({4, 4}, randv(16, rng));
    auto y = conv_generalized(x, one, {w});
    auto direct = matmul(x, w);
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.data()[i], direct.data()[i], 1e-12);

    BiasSet six = generalized_bias_set(3, 3, 6);
    std::vector<Tensor<double>> ws;
    for (int i = 0; i < 6; ++i) ws.push_back(Tensor<double>::from_data({4, 4}, randv(16, rng)));
    auto x1 = Tensor<double>::from_data({9, 4}, randv(36, rng));
    auto x2 = Tensor<double>::from_data({9, 4}, randv(36, rng));
    const double a = 0.3, b = -1.7;
    auto mix = add(scale(x1, a), scale(x2, b));
    auto lhs = conv_generalized(mix, six, ws);
    auto rhs = add(scale(conv_generalized(x1, six, ws), a), scale(conv_generalized(x2, six, ws), b));
    for (std::size_t i = 0; i < lhs.numel(); ++i) EXPECT_NEAR(lhs.data()[i], rhs.data()[i], 1e-10);
}

TEST(ConvGeneralized, HotTokenPropagatesAlongOffsets) {
    BiasSet six = generalized_bias_set(3, 3, 6);
    // One hot token at position (1,1) = flat 4, all weights identity.
    std::vector<double> xv(9, 0.0);
    const std::size_t hot = 4;
    xv[hot] = 1.0;
    auto x = Tensor<double>::from_data({9, 1}, std::move(xv));
    auto eye = Tensor<double>::from_data({1, 1}, {1.0});
    std::vector<Tensor<double>> ws(6, eye);
    auto y = conv_generalized(x, six, ws);
    for (std::size_t r = 0; r < 9; ++r) {
        double want = 0;
        for (const auto& m : six.matrices)
            if (m.src[r] == static_cast<std::ptrdiff_t>(hot)) want += 1.0;
        EXPECT_DOUBLE_EQ(y.data()[r], want) << "row " << r;
    }
}

TEST(ConvGeneralized, FullHeadCountMatchesMatrixForm) {
    RngStream rng(9);
    BiasSet full = build_selection_matrices(3, 3, 3, 3);
    BiasSet nine = select_generalized_biases(9, full);
    std::vector<Tensor<double>> ws;
    for (int i = 0; i < 9; ++i) ws.push_back(Tensor<double>::from_data({2, 2}, randv(4, rng)));
    auto x = Tensor<double>::from_data({9, 2}, randv(18, rng));
    // Permute the weights back into kernel order for the matrix form.
    std::vector<Tensor<double>> perm(9);
    for (std::size_t i = 0; i < 9; ++i) {
        const auto& m = nine.matrices[i];
        const std::size_t kidx = static_cast<std::size_t>(m.di + 1) * 3 + static_cast<std::size_t>(m.dj + 1);
        perm[kidx] = ws[i];
    }
    auto a = conv_generalized(x, nine, ws);
    auto b = conv_matrix_form(x, full, perm);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

TEST(SparseSelect, BatchedBlocksActIndependently) {
    RngStream rng(20);
    BiasSet set = build_selection_matrices(2, 2, 3, 3);
    std::vector<double> block = randv(8, rng);
    std::vector<double> two = block;
    two.insert(two.end(), block.begin(), block.end());
    auto x = Tensor<double>::from_data({8, 2}, std::move(two));
    auto y = sparse_select(set.matrices[0], x, 4);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(y.data()[i], y.data()[8 + i]);
}

TEST(Mhsa, SingleTokenAttentionIsOne) {
    RngStream rng(31);
    const std::size_t d = 4, dk = 2;
    auto x = Tensor<double>::from_data({1, d}, randv(d, rng));
    std::vector<Tensor<double>> wq, wk, wv, wo;
    for (int h = 0; h < 2; ++h) {
        wq.push_back(Tensor<double>::from_data({d, dk}, randv(d * dk, rng)));
        wk.push_back(Tensor<double>::from_data({d, dk}, randv(d * dk, rng)));
        wv.push_back(Tensor<double>::from_data({d, dk}, randv(d * dk, rng)));
        wo.push_back(Tensor<double>::from_data({dk, d}, randv(dk * d, rng)));
    }
    auto res = mhsa_forward(x, wq, wk, wv, wo, 1);
    for (const auto& p : res.attention) EXPECT_DOUBLE_EQ((*p)[0], 1.0);
    auto want = add(matmul(matmul(x, wv[0]), wo[0]), matmul(matmul(x, wv[1]), wo[1]));
    for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(res.y.data()[i], want.data()[i], 1e-12);
}

TEST(Mhsa, ZeroQueryKeyGivesUniformRows) {
    RngStream rng(32);
    const std::size_t n = 5, d = 4, dk = 2;
    auto x = Tensor<double>::from_data({n, d}, randv(n * d, rng));
    std::vector<Tensor<double>> wq{Tensor<double>::zeros({d, dk})}, wk{Tensor<double>::zeros({d, dk})},
        wv{Tensor<double>::from_data({d, dk}, randv(d * dk, rng))},
        wo{Tensor<double>::from_data({dk, d}, randv(dk * d, rng))};
    auto res = mhsa_forward(x, wq, wk, wv, wo, n);
    for (double p : *res.attention[0]) EXPECT_NEAR(p, 1.0 / n, 1e-12);
}

TEST(Mhsa, MatchesExplicitLoopOracle) {
    RngStream rng(33);
    const std::size_t n = 4, d = 8, heads = 2, dk = d / heads;
    std::vector<double> xv = randv(n * d, rng);
    auto x = Tensor<double>::from_data({n, d}, std::vector<double>(xv));
    std::vector<Tensor<double>> wq, wk, wv, wo;
    for (std::size_t h = 0; h < heads; ++h) {
        wq.push_back(Tensor<double>::from_data({d, dk}, randv(d * dk, rng)));
        wk.push_back(Tensor<double>::from_data({d, dk}, randv(d * dk, rng)));
        wv.push_back(Tensor<double>::from_data({d, dk}, randv(d * dk, rng)));
        wo.push_back(Tensor<double>::from_data({dk, d}, randv(dk * d, rng)));
    }
    auto res = mhsa_forward(x, wq, wk, wv, wo, n);

    // Oracle: element loops straight off the definition.
    std::vector<double> y(n * d, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
        std::vector<double> q(n * dk, 0), k(n * dk, 0), v(n * dk, 0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < dk; ++j)
                for (std::size_t c = 0; c < d; ++c) {
                    q[i * dk + j] += xv[i * d + c] * wq[h].data()[c * dk + j];
                    k[i * dk + j] += xv[i * d + c] * wk[h].data()[c * dk + j];
                    v[i * dk + j] += xv[i * d + c] * wv[h].data()[c * dk + j];
                }
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> logits(n, 0);
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t c = 0; c < dk; ++c)
                    logits[j] += q[i * dk + c] * k[j * dk + c] / std::sqrt(double(dk));
            double m = *std::max_element(logits.begin(), logits.end()), z = 0;
            for (double& l : logits) {
                l = std::exp(l - m);
                z += l;
            }
            for (std::size_t j = 0; j < n; ++j) {
                const double p = logits[j] / z;
                EXPECT_NEAR((*res.attention[h])[i * n + j], p, 1e-10);
                for (std::size_t c = 0; c < dk; ++c)
                    for (std::size_t o = 0; o < d; ++o)
                        y[i * d + o] += p * v[j * dk + c] * wo[h].data()[c * d + o];
            }
        }
    }
    for (std::size_t i = 0; i < n * d; ++i) EXPECT_NEAR(res.y.data()[i], y[i], 1e-10);
}

TEST(Discrepancy, VanishesWhenAttentionMatchesBiases) {
    RngStream rng(41);
    const std::size_t d = 3;
    BiasSet six = generalized_bias_set(3, 3, 6);
    const std::size_t n = six.n();
    auto x = Tensor<double>::from_data({n, d}, randv(n * d, rng));
    std::vector<Tensor<double>> ws;
    std::vector<std::shared_ptr<std::vector<double>>> attn;
    for (const auto& m : six.matrices) {
        ws.push_back(Tensor<double>::from_data({d, d}, randv(d * d, rng)));
        auto dense = std::make_shared<std::vector<double>>(n * n, 0.0);
        for (const auto& [r, c] : m.entries) (*dense)[r * n + c] = 1.0;
        attn.push_back(dense);
    }
    for (std::size_t c = 0; c < n; ++c) {
        auto err = attention_discrepancy(x, attn, six, ws, c);
        for (double v : err) EXPECT_NEAR(v, 0.0, 1e-12);
    }
    EXPECT_NEAR(attention_discrepancy_norm(x, attn, six, ws), 0.0, 1e-12);
}

TEST(Discrepancy, HandOracleTwoTokens) {
    // n=2, d=1, W=1, identity bias, uniform attention: row 0 error is
    // (1-1/2)x0 + (0-1/2)x1 = (x0-x1)/2.
    BiasSet set = build_selection_matrices(1, 2, 1, 1);
    ASSERT_EQ(set.n(), 2u);
    auto x = Tensor<double>::from_data({2, 1}, {0.8, -0.4});
    auto w = Tensor<double>::from_data({1, 1}, {1.0});
    auto uniform = std::make_shared<std::vector<double>>(std::vector<double>{0.5, 0.5, 0.5, 0.5});
    std::vector<std::shared_ptr<std::vector<double>>> attn{uniform};
    auto e0 = attention_discrepancy(x, attn, set, {w}, 0);
    auto e1 = attention_discrepancy(x, attn, set, {w}, 1);
    EXPECT_NEAR(e0[0], (0.8 - (-0.4)) / 2.0, 1e-12);
    EXPECT_NEAR(e1[0], ((-0.4) - 0.8) / 2.0, 1e-12);
    EXPECT_THROW(attention_discrepancy(x, attn, set, {w}, 2), ShapeError);

    auto zero = Tensor<double>::zeros({2, 1});
    auto ez = attention_discrepancy(zero, attn, set, {w}, 0);
    EXPECT_EQ(ez[0], 0.0);
}

TEST(Discrepancy, NormDecreasesAlongInterpolationTowardBiases) {
    RngStream rng(47);
    const std::size_t d = 2;
    BiasSet six = generalized_bias_set(3, 3, 6);
    const std::size_t n = six.n();
    auto x = Tensor<double>::from_data({n, d}, randv(n * d, rng));
    std::vector<Tensor<double>> ws;
    std::vector<std::vector<double>> psi0;
    for (std::size_t h = 0; h < six.size(); ++h) {
        ws.push_back(Tensor<double>::from_data({d, d}, randv(d * d, rng)));
        // A random row-stochastic attention.
        std::vector<double> p(n * n);
        for (std::size_t r = 0; r < n; ++r) {
            double z = 0;
            for (std::size_t c = 0; c < n; ++c) {
                p[r * n + c] = std::exp(rng.normal());
                z += p[r * n + c];
            }
            for (std::size_t c = 0; c < n; ++c) p[r * n + c] /= z;
        }
        psi0.push_back(std::move(p));
    }
    double prev = -1;
    for (int step = 0; step <= 4; ++step) {
        const double t = step / 4.0;
        std::vector<std::shared_ptr<std::vector<double>>> attn;
        for (std::size_t h = 0; h < six.size(); ++h) {
            auto mixed = std::make_shared<std::vector<double>>(n * n, 0.0);
            for (std::size_t i = 0; i < n * n; ++i) (*mixed)[i] = (1.0 - t) * psi0[h][i];
            for (const auto& [r, c] : six.matrices[h].entries) (*mixed)[r * n + c] += t;
            attn.push_back(mixed);
        }
        const double norm = attention_discrepancy_norm(x, attn, six, ws);
        if (prev >= 0) {
            EXPECT_LT(norm, prev);
        }
        prev = norm;
    }
    EXPECT_NEAR(prev, 0.0, 1e-10);
}

TEST(Triplets, SelectionAndDenseExport) {
    BiasSet set = build_selection_matrices(1, 2, 1, 1);
    std::ostringstream os;
    write_triplets(os, set.matrices[0]);
    EXPECT_EQ(os.str(), "0 0 1\n1 1 1\n");

    std::ostringstream od;
    std::vector<double> dense{0.25, 0.0, 0.0, 1.0};
    write_triplets(od, dense, 2, 2);
    EXPECT_EQ(od.str(), "0 0 0.25\n1 1 1\n");
}
