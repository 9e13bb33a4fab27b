#include <doctest.h>

#include <cmath>

#include "vorvq/losses.hpp"
#include "vorvq/rng.hpp"

using namespace vorvq;

namespace {

// independent InfoNCE oracle: plain double-loop softmax, no log-sum-exp
double infonce_oracle(const Mat& fake, const Mat& real, double tau) {
    double loss = 0.0;
    for (int i = 0; i < fake.rows; ++i) {
        double denom = 0.0;
        for (int j = 0; j < real.rows; ++j) {
            double dot = 0.0;
            for (int c = 0; c < fake.cols; ++c) dot += fake(i, c) * real(j, c);
            denom += std::exp(dot / tau);
        }
        double self_dot = 0.0;
        for (int c = 0; c < fake.cols; ++c) self_dot += fake(i, c) * real(i, c);
        loss += -std::log(std::exp(self_dot / tau) / denom);
    }
    return loss / fake.rows;
}

int make_stage(grad::Tape& t, const Mat& zc, const Mat& zq, losses::StageNodes& out) {
    out.zc_hat = t.leaf(zc);
    // a one-row "codebook" gathered per frame stands in for the embed node
    Mat table = zq;
    std::vector<int> rows(zq.rows);
    for (int i = 0; i < zq.rows; ++i) rows[i] = i;
    out.zq_embed = t.gather_rows(t.leaf(table), rows);
    return out.zq_embed;
}

}  // namespace

TEST_CASE("ordered objective vanishes at a perfect reconstruction") {
    grad::Tape t;
    Rng rng(2);
    const Mat target = randn(rng, 4, 3);
    const int decoded = t.constant(target);
    const int target_node = t.constant(target);
    losses::StageNodes stage;
    const Mat zc = randn(rng, 4, 2);
    make_stage(t, zc, zc, stage);
    const int loss =
        losses::ordered_objective_latent(t, decoded, target_node, {stage}, 0.25);
    CHECK(t.value(loss)(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("ordered objective evaluates the one-stage hand example") {
    // zc = [1], zq = [0], beta = 0.25, reconstruction zero:
    // ||sg[1]-0||^2 + 0.25*||1-sg[0]||^2 = 1.25
    grad::Tape t;
    const Mat same(1, 2, 0.0);
    const int decoded = t.constant(same);
    const int target = t.constant(same);
    losses::StageNodes stage;
    make_stage(t, Mat(1, 1, 1.0), Mat(1, 1, 0.0), stage);
    const int loss = losses::ordered_objective_latent(t, decoded, target, {stage}, 0.25);
    CHECK(t.value(loss)(0, 0) == doctest::Approx(1.25));
}

TEST_CASE("doubling beta doubles only the commitment term") {
    Rng rng(4);
    const Mat zc = randn(rng, 3, 2);
    const Mat zq = randn(rng, 3, 2);
    auto eval = [&](double beta) {
        grad::Tape t;
        const Mat zeros(3, 2);
        losses::StageNodes stage;
        make_stage(t, zc, zq, stage);
        return t.value(
            losses::ordered_objective_latent(t, t.constant(zeros), t.constant(zeros), {stage},
                                             beta))(0, 0);
    };
    double frob = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 2; ++c) {
            const double d = zc(i, c) - zq(i, c);
            frob += d * d;
        }
    frob /= 3.0;  // averaged over frames
    const double at1 = eval(1.0);
    const double at2 = eval(2.0);
    CHECK(at2 - at1 == doctest::Approx(frob));
    CHECK(at1 == doctest::Approx(2.0 * frob));
}

TEST_CASE("semantic_l2 matches the frame-averaged convention") {
    Rng rng(6);
    const Mat projected = randn(rng, 4, 5);
    CHECK(losses::semantic_l2_value(projected, projected) == 0.0);

    // unit-vector offset on one frame of four: 1/4
    Mat teacher = projected;
    teacher(2, 1) += 1.0;
    CHECK(losses::semantic_l2_value(projected, teacher) == doctest::Approx(0.25));

    // quadratic in the residual scale
    Mat far = projected;
    for (size_t i = 0; i < far.data.size(); ++i) far.data[i] += 0.3;
    Mat farther = projected;
    for (size_t i = 0; i < farther.data.size(); ++i) farther.data[i] += 0.6;
    CHECK(losses::semantic_l2_value(projected, farther) ==
          doctest::Approx(4.0 * losses::semantic_l2_value(projected, far)));

    CHECK_THROWS(losses::semantic_l2_value(projected, randn(rng, 3, 5)));
}

TEST_CASE("teacher embeddings are the frozen affine image of clean frames") {
    Rng rng(9);
    const Mat clean = randn(rng, 5, 3);
    const Mat w = randn(rng, 3, 7);
    Mat b(1, 7);
    for (int c = 0; c < 7; ++c) b(0, c) = 0.1 * c;
    const losses::TeacherEmbedding emb = losses::teacher_embed(clean, w, b);
    CHECK(emb.features.rows == 5);
    CHECK(emb.features.cols == 7);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 7; ++c) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) acc += clean(r, k) * w(k, c);
            CHECK(emb.features(r, c) == doctest::Approx(acc + b(0, c)).epsilon(1e-14));
        }
    CHECK_THROWS(losses::teacher_embed(randn(rng, 5, 4), w, b));
}

TEST_CASE("l2_normalize maps rows onto the unit sphere") {
    Mat m(1, 2);
    m(0, 0) = 3.0;
    m(0, 1) = 4.0;
    const Mat n = losses::l2_normalize(m);
    CHECK(n(0, 0) == doctest::Approx(0.6));
    CHECK(n(0, 1) == doctest::Approx(0.8));

    // unit rows are fixed points, and the map is idempotent
    const Mat nn = losses::l2_normalize(n);
    for (size_t i = 0; i < n.data.size(); ++i)
        CHECK(nn.data[i] == doctest::Approx(n.data[i]).epsilon(1e-15));

    Mat zero_row(2, 2);
    zero_row(0, 0) = 1.0;
    CHECK_THROWS(losses::l2_normalize(zero_row));
}

TEST_CASE("infonce with a single pair is exactly zero") {
    Mat f(1, 3);
    f(0, 0) = 1.0;
    CHECK(losses::infonce_value(f, f, 0.07) == 0.0);
}

TEST_CASE("infonce on an orthonormal pair hits log(1 + 1/e)") {
    Mat e(2, 2);
    e(0, 0) = 1.0;
    e(1, 1) = 1.0;
    const double loss = losses::infonce_value(e, e, 1.0);
    CHECK(std::fabs(loss - std::log(1.0 + std::exp(-1.0))) < 1e-12);
    CHECK(loss == doctest::Approx(0.31326168751822286).epsilon(1e-12));

    // shuffling the pairing strictly increases the loss
    Mat swapped(2, 2);
    swapped(0, 1) = 1.0;
    swapped(1, 0) = 1.0;
    CHECK(losses::infonce_value(e, swapped, 1.0) > loss);
}

TEST_CASE("infonce rejects unnormalized rows") {
    Mat bad(2, 2);
    bad(0, 0) = 2.0;
    bad(1, 1) = 1.0;
    CHECK_THROWS(losses::infonce_value(bad, bad, 1.0));
}

TEST_CASE("infonce matches the brute-force softmax oracle to 1e-12") {
    Rng rng(15);
    for (int k = 1; k <= 16; ++k) {
        const Mat fake = losses::l2_normalize(randn(rng, k, 6));
        const Mat real = losses::l2_normalize(randn(rng, k, 6));
        const double lib = losses::infonce_value(fake, real, 0.25);
        const double oracle = infonce_oracle(fake, real, 0.25);
        CHECK(std::fabs(lib - oracle) < 1e-12);
        CHECK(lib >= 0.0);
        if (k >= 2) CHECK(lib > 0.0);
    }
}

TEST_CASE("total_loss combines components with the documented weights") {
    losses::LossWeights w;
    losses::LossComponents c;
    CHECK(losses::total_loss(c, w) == 0.0);

    w = losses::LossWeights{};
    w.lambda_ord = 0.0;
    w.lambda_stft = 0.0;
    w.lambda_align = 1.0;
    w.alpha = 2.0;
    c.l_nce = 0.5;
    c.l_sem = 0.25;
    CHECK(losses::total_loss(c, w) == doctest::Approx(1.0));

    // out-of-scope adversarial weight without a component
    losses::LossWeights bad = losses::LossWeights{};
    bad.lambda_adv = 1.0;
    CHECK_THROWS(losses::total_loss(c, bad));

    losses::LossWeights negative = losses::LossWeights{};
    negative.lambda_ord = -0.5;
    CHECK_THROWS(losses::total_loss(c, negative));
}

TEST_CASE("total_loss is linear in each weight") {
    Rng rng(44);
    losses::LossComponents c;
    c.l_ord = 0.7;
    c.l_stft = 0.2;
    c.l_nce = 0.4;
    c.l_sem = 0.1;
    losses::LossWeights w;
    w.lambda_ord = 0.5;
    const double base = losses::total_loss(c, w);
    losses::LossWeights w2 = w;
    w2.lambda_ord = 1.5;
    const double shifted = losses::total_loss(c, w2);
    CHECK(shifted - base == doctest::Approx(1.0 * c.l_ord));
}

TEST_CASE("multi-resolution stft loss conventions") {
    Rng rng(5);
    std::vector<double> a(256), zero(256, 0.0);
    for (double& v : a) v = rng.normal();

    CHECK(losses::multires_stft_loss(a, a, {{64, 16}, {128, 32}}) == 0.0);

    // single resolution against silence: mean magnitude of a
    const Mat mag = dsp::stft_magnitude(a, 64, 16);
    double mean_mag = 0.0;
    for (double v : mag.data) mean_mag += v;
    mean_mag /= static_cast<double>(mag.numel());
    CHECK(losses::multires_stft_loss(a, zero, {{64, 16}}) == doctest::Approx(mean_mag));

    // adding a resolution averages rather than sums
    std::vector<double> b(256);
    for (double& v : b) v = rng.normal();
    const double r1 = losses::multires_stft_loss(a, b, {{64, 16}});
    const double r2 = losses::multires_stft_loss(a, b, {{128, 32}});
    const double both = losses::multires_stft_loss(a, b, {{64, 16}, {128, 32}});
    CHECK(both == doctest::Approx(0.5 * (r1 + r2)));

    CHECK_THROWS(losses::multires_stft_loss(a, b, {}));
}

TEST_CASE("stage-term gradients match the hand-derived factors") {
    // the codebook term routes -2(zc - e)/T into the gathered codebook rows,
    // the commitment term routes 2*beta*(zc - e)/T into the encoder side
    Rng rng(71);
    const int frames = 5, dim = 3;
    const double beta = 0.4;
    const Mat zc_val = randn(rng, frames, dim);
    const Mat cb_val = randn(rng, 4, dim);
    const std::vector<int> rows = {1, 3, 1, 0, 2};

    grad::Tape t;
    const int zc = t.leaf(zc_val);
    const int cb = t.leaf(cb_val);
    losses::StageNodes stage;
    stage.zc_hat = zc;
    stage.zq_embed = t.gather_rows(cb, rows);
    const int loss = losses::stage_terms_node(t, {stage}, beta);
    t.backward(loss);

    Mat expect_zc(frames, dim);
    Mat expect_cb(4, dim);
    for (int i = 0; i < frames; ++i)
        for (int c = 0; c < dim; ++c) {
            const double diff = zc_val(i, c) - cb_val(rows[i], c);
            expect_zc(i, c) = 2.0 * beta * diff / frames;
            expect_cb(rows[i], c) += -2.0 * diff / frames;
        }
    for (size_t i = 0; i < expect_zc.data.size(); ++i)
        CHECK(t.gradient(zc).data[i] == doctest::Approx(expect_zc.data[i]).epsilon(1e-12));
    for (size_t i = 0; i < expect_cb.data.size(); ++i)
        CHECK(t.gradient(cb).data[i] == doctest::Approx(expect_cb.data[i]).epsilon(1e-12));
}

TEST_CASE("weights validation") {
    losses::LossWeights w;
    CHECK_NOTHROW(w.validate());
    w.tau = 0.0;
    CHECK_THROWS(w.validate());
    w = losses::LossWeights{};
    w.beta = -1.0;
    CHECK_THROWS(w.validate());
}
