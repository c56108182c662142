#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include "asap/losses.hpp"
#include "asap/rng.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace asap;
using asap::testing::max_grad_err;

namespace {

Mat<double> random_mat(Rng& rng, int r, int c) {
  Mat<double> m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

TEST_CASE("info_nce hand fixtures") {
  Tape<double> t;
  auto tau = param<double>(Mat<double>::Constant(1, 1, 1.0));

  // Singleton batch: numerator equals denominator.
  {
    Mat<double> a(1, 2);
    a << 1.0, 0.0;
    auto loss = info_nce(t, constant<double>(a), constant<double>(a), tau,
                         {true});
    CHECK(scalar_value(loss) == doctest::Approx(0.0));
  }
  // Orthonormal pairs: cosine matrix [[1,0],[0,1]], tau = 1.
  {
    Mat<double> a(2, 2);
    a << 1.0, 0.0, 0.0, 1.0;
    auto loss = info_nce(t, constant<double>(a), constant<double>(a), tau,
                         {true, true});
    CHECK(scalar_value(loss) ==
          doctest::Approx(0.3132616875182228).epsilon(1e-9));
  }
  // Gate all false: every term is zeroed.
  {
    Mat<double> a(2, 2);
    a << 1.0, 0.0, 0.0, 1.0;
    auto loss = info_nce(t, constant<double>(a), constant<double>(a), tau,
                         {false, false});
    CHECK(scalar_value(loss) == 0.0);
  }
  // Zero feature row is rejected.
  {
    Mat<double> a(2, 2);
    a << 1.0, 0.0, 0.0, 0.0;
    CHECK_THROWS_AS(
        info_nce(t, constant<double>(a), constant<double>(a), tau,
                 {true, true}),
        InputError);
  }
}

TEST_CASE("vlc fixtures and reference equivalence") {
  Tape<double> t;
  Rng rng(101);
  auto tau = param<double>(Mat<double>::Constant(1, 1, 0.5));

  // Any B = 1 batch collapses every contrastive term to zero.
  for (bool pristine : {true, false}) {
    auto f = [&] { return constant<double>(random_mat(rng, 1, 4)); };
    auto loss = vlc_loss(t, f(), f(), f(), f(), {pristine}, tau);
    CHECK(scalar_value(loss) == doctest::Approx(0.0));
  }

  // Random B = 4 batch against the term-by-term reference.
  Mat<double> img = random_mat(rng, 4, 8), txt = random_mat(rng, 4, 8);
  Mat<double> cap = random_mat(rng, 4, 8), expl = random_mat(rng, 4, 8);
  std::vector<bool> pristine = {true, false, true, false};
  auto loss =
      vlc_loss(t, constant<double>(img), constant<double>(txt),
               constant<double>(cap), constant<double>(expl), pristine, tau);
  const double expect = oracle::vlc_ref(img, txt, cap, expl, pristine, 0.5);
  CHECK(scalar_value(loss) == doctest::Approx(expect).epsilon(1e-9));

  Mat<double> short_batch = random_mat(rng, 3, 8);
  CHECK_THROWS_AS(vlc_loss(t, constant<double>(img), constant<double>(txt),
                           constant<double>(short_batch),
                           constant<double>(expl), pristine, tau),
                  InputError);
}

TEST_CASE("explanation gating masks manipulated samples exactly") {
  Tape<double> t;
  Rng rng(303);
  auto tau = param<double>(Mat<double>::Constant(1, 1, 0.3));
  Mat<double> img = random_mat(rng, 4, 6), txt = random_mat(rng, 4, 6);
  Mat<double> cap = random_mat(rng, 4, 6), expl = random_mat(rng, 4, 6);
  std::vector<bool> pristine = {true, false, true, false};

  auto before =
      vlc_loss(t, constant<double>(img), constant<double>(txt),
               constant<double>(cap), constant<double>(expl), pristine, tau);
  Mat<double> expl2 = expl;
  expl2.row(1).setConstant(7.5);
  expl2.row(3).setConstant(-2.25);
  auto after =
      vlc_loss(t, constant<double>(img), constant<double>(txt),
               constant<double>(cap), constant<double>(expl2), pristine, tau);
  CHECK(scalar_value(before) == scalar_value(after));
}

TEST_CASE("ied hand fixtures") {
  Tape<double> t;
  auto p = [&](double v) {
    return constant<double>(Mat<double>::Constant(1, 1, v));
  };
  CHECK(scalar_value(ied_loss(t, p(1.0 - 1e-7), {true})) ==
        doctest::Approx(0.0).epsilon(1e-6));
  CHECK(scalar_value(ied_loss(t, p(1e-7), {false})) ==
        doctest::Approx(0.0).epsilon(1e-6));
  CHECK(scalar_value(ied_loss(t, p(0.5), {true})) ==
        doctest::Approx(0.6931471805599453).epsilon(1e-9));
  CHECK(scalar_value(ied_loss(t, p(0.5), {false})) ==
        doctest::Approx(0.6931471805599453).epsilon(1e-9));
}

TEST_CASE("mgca hand fixtures and directionality") {
  Tape<double> t;

  // All-zero guidance contributes nothing.
  {
    Mat<double> a = Mat<double>::Constant(2, 2, 0.5);
    GuidanceMask g;
    g.g = Eigen::MatrixXi::Zero(2, 2);
    CHECK(scalar_value(mgca_loss(t, constant<double>(a), g)) == 0.0);
  }
  // Uniform 2x2 attention with one guided cell: (1/4) ln 2.
  {
    Mat<double> a = Mat<double>::Constant(2, 2, 0.5);
    GuidanceMask g;
    g.g = Eigen::MatrixXi::Zero(2, 2);
    g.g(0, 0) = 1;
    g.active = true;
    CHECK(scalar_value(mgca_loss(t, constant<double>(a), g)) ==
          doctest::Approx(0.17328679513998632).epsilon(1e-9));
  }
  // A guided cell approaching weight 1 contributes vanishing loss.
  {
    Mat<double> a(1, 2);
    a << 1.0 - 1e-9, 1e-9;
    GuidanceMask g;
    g.g = Eigen::MatrixXi::Zero(1, 2);
    g.g(0, 0) = 1;
    g.active = true;
    CHECK(scalar_value(mgca_loss(t, constant<double>(a), g)) ==
          doctest::Approx(0.0).epsilon(1e-8));
  }
  // Raising attention at the guided cell (row renormalized) strictly
  // lowers the loss.
  {
    GuidanceMask g;
    g.g = Eigen::MatrixXi::Zero(1, 3);
    g.g(0, 0) = 1;
    g.active = true;
    double prev = 1e18;
    for (double w : {0.2, 0.4, 0.6, 0.8, 0.95}) {
      Mat<double> a(1, 3);
      a << w, (1 - w) / 2, (1 - w) / 2;
      const double cur = scalar_value(mgca_loss(t, constant<double>(a), g));
      CHECK(cur < prev);
      prev = cur;
    }
  }
}

TEST_CASE("pmm hand fixtures") {
  Tape<double> t;

  // Pristine guard: every entry ignored.
  {
    PatchIndicator ind;
    ind.p = Eigen::VectorXi::Constant(4, -1);
    ind.n_effective = 0;
    auto logits = constant<double>(Mat<double>::Zero(4, 1));
    CHECK(scalar_value(pmm_loss(t, logits, {ind})) == 0.0);
  }
  // P = [1, 0] with predicted probabilities [0.9, 0.2].
  {
    PatchIndicator ind;
    ind.p = Eigen::VectorXi(2);
    ind.p << 1, 0;
    ind.n_effective = 2;
    Mat<double> lg(2, 1);
    lg << logit(0.9), logit(0.2);
    CHECK(scalar_value(pmm_loss(t, constant<double>(lg), {ind})) ==
          doctest::Approx(0.16425203348601802).epsilon(1e-9));
  }
  // Near-perfect predictions drive the loss to zero.
  {
    PatchIndicator ind;
    ind.p = Eigen::VectorXi(3);
    ind.p << 1, 0, -1;
    ind.n_effective = 2;
    Mat<double> lg(3, 1);
    lg << 30.0, -30.0, 0.0;
    CHECK(scalar_value(pmm_loss(t, constant<double>(lg), {ind})) ==
          doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("img_loss fixtures against rectangle oracle") {
  Tape<double> t;

  // Exact prediction: both the L1 and the IoU penalty vanish.
  {
    Box b{0.4, 0.6, 0.2, 0.3};
    Mat<double> pred(1, 4);
    pred << b[0], b[1], b[2], b[3];
    CHECK(scalar_value(img_loss(t, constant<double>(pred), {b}, {true})) ==
          doctest::Approx(0.0).epsilon(1e-4));
  }
  // Disjoint symmetric boxes: L1 = 1.0, penalty = 1 - GIoU from the
  // independent rectangle oracle.
  {
    Box gt{0.75, 0.75, 0.5, 0.5};
    Mat<double> pred(1, 4);
    pred << 0.25, 0.25, 0.5, 0.5;
    const double expect =
        1.0 + (1.0 - oracle::giou_ref({0.25, 0.25, 0.5, 0.5}, gt));
    CHECK(scalar_value(img_loss(t, constant<double>(pred), {gt}, {true})) ==
          doctest::Approx(expect).epsilon(1e-4));
    CHECK(expect == doctest::Approx(2.5).epsilon(1e-9));
  }
  // Pristine sample: zero target, zero prediction, zero loss.
  {
    Box gt{0, 0, 0, 0};
    Mat<double> pred = Mat<double>::Zero(1, 4);
    CHECK(scalar_value(img_loss(t, constant<double>(pred), {gt}, {true})) ==
          doctest::Approx(0.0));
  }
  // Non-contributing samples are excluded from the average.
  {
    Box gt{0.5, 0.5, 0.2, 0.2};
    Mat<double> pred(2, 4);
    pred << 0.5, 0.5, 0.2, 0.2, 0.9, 0.9, 0.8, 0.8;
    auto loss = img_loss(t, constant<double>(pred), {gt, {0, 0, 0, 0}},
                         {true, false});
    CHECK(scalar_value(loss) == doctest::Approx(0.0).epsilon(1e-4));
  }
}

TEST_CASE("bic and mlc fixtures and reference equivalence") {
  Tape<double> t;
  Rng rng(77);

  // Zero logit costs ln 2 per label.
  {
    auto lg = constant<double>(Mat<double>::Zero(1, 1));
    CHECK(scalar_value(bic_loss(t, lg, {1})) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-9));
    auto ml = constant<double>(Mat<double>::Zero(1, 4));
    CHECK(scalar_value(mlc_loss(t, ml, {{{1, 0, 1, 0}}})) ==
          doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-9));
  }
  // Strong correct logits cost nearly nothing.
  {
    Mat<double> lg(2, 1);
    lg << 30.0, -30.0;
    CHECK(scalar_value(bic_loss(t, constant<double>(lg), {1, 0})) ==
          doctest::Approx(0.0).epsilon(1e-9));
  }
  // Random batch against independent recomputation.
  {
    const int B = 8;
    Mat<double> lg = random_mat(rng, B, 4);
    std::vector<std::array<int, 4>> y(B);
    std::vector<int> ybin(B);
    for (int i = 0; i < B; ++i) {
      ybin[static_cast<size_t>(i)] = rng.below(2) ? 1 : 0;
      for (auto& v : y[static_cast<size_t>(i)])
        v = rng.below(2) ? 1 : 0;
    }
    double expect_mlc = 0.0;
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < 4; ++j) {
        const double p = 1.0 / (1.0 + std::exp(-lg(i, j)));
        expect_mlc += y[static_cast<size_t>(i)][static_cast<size_t>(j)]
                          ? -std::log(p)
                          : -std::log(1 - p);
      }
    expect_mlc /= B;
    CHECK(scalar_value(mlc_loss(t, constant<double>(lg), y)) ==
          doctest::Approx(expect_mlc).epsilon(1e-9));

    Mat<double> bl = random_mat(rng, B, 1);
    double expect_bic = 0.0;
    for (int i = 0; i < B; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-bl(i, 0)));
      expect_bic += ybin[static_cast<size_t>(i)] ? -std::log(p)
                                                 : -std::log(1 - p);
    }
    expect_bic /= B;
    CHECK(scalar_value(bic_loss(t, constant<double>(bl), ybin)) ==
          doctest::Approx(expect_bic).epsilon(1e-9));
  }
}

TEST_CASE("tmg fixtures: mixing identity, teacher match, hand case") {
  Tape<double> t;
  Mat<double> logits(2, 2);
  logits << 0.2, 0.7, -0.1, 0.4;
  std::vector<std::vector<int>> y_tok = {{1, 0}};
  std::vector<std::vector<bool>> real = {{true, true}};

  auto softmax2 = [](double a, double b) {
    const double m = std::max(a, b);
    const double ea = std::exp(a - m), eb = std::exp(b - m);
    return std::array<double, 2>{ea / (ea + eb), eb / (ea + eb)};
  };

  // Hard cross-entropy reference.
  const auto p0 = softmax2(logits(0, 0), logits(0, 1));
  const auto p1 = softmax2(logits(1, 0), logits(1, 1));
  const double ce = (-std::log(p0[1]) - std::log(p1[0])) / 2.0;

  // alpha = 0: pure token cross-entropy.
  {
    Mat<double> teacher = Mat<double>::Constant(2, 2, 0.5);
    auto loss = tmg_loss(t, constant<double>(logits), y_tok, real,
                         {teacher}, 0.0);
    CHECK(scalar_value(loss) == doctest::Approx(ce).epsilon(1e-9));
  }
  // Teacher equal to the student: the KL term vanishes.
  {
    Mat<double> teacher(2, 2);
    teacher << p0[0], p0[1], p1[0], p1[1];
    auto loss = tmg_loss(t, constant<double>(logits), y_tok, real,
                         {teacher}, 0.4);
    CHECK(scalar_value(loss) == doctest::Approx(0.6 * ce).epsilon(1e-9));
  }
  // Hand-computed CE + KL blend.
  {
    Mat<double> teacher(2, 2);
    teacher << 0.3, 0.7, 0.8, 0.2;
    double kl = 0.0;
    kl += p0[0] * std::log(p0[0] / 0.3) + p0[1] * std::log(p0[1] / 0.7);
    kl += p1[0] * std::log(p1[0] / 0.8) + p1[1] * std::log(p1[1] / 0.2);
    kl /= 2.0;
    auto loss = tmg_loss(t, constant<double>(logits), y_tok, real,
                         {teacher}, 0.4);
    CHECK(scalar_value(loss) ==
          doctest::Approx(0.6 * ce + 0.4 * kl).epsilon(1e-9));
  }
  // Padded positions are excluded.
  {
    Mat<double> teacher = Mat<double>::Constant(2, 2, 0.5);
    std::vector<std::vector<bool>> pad_second = {{true, false}};
    auto loss = tmg_loss(t, constant<double>(logits), y_tok, pad_second,
                         {teacher}, 0.0);
    CHECK(scalar_value(loss) == doctest::Approx(-std::log(p0[1])).epsilon(1e-9));
  }
}

TEST_CASE("total loss composition and ablation zeroing") {
  Tape<double> t;
  auto c = [&](double v) {
    return constant<double>(Mat<double>::Constant(1, 1, v));
  };

  // l_dgm = 1 (via img), l_lma = 1 (via vlc), l_mgca = l_pmm = 1.
  {
    LossTerms<double> terms;
    terms.img = c(1.0);
    terms.vlc = c(1.0);
    terms.mgca = c(1.0);
    terms.pmm = c(1.0);
    auto [node, bundle] = total_loss(t, terms, 0.1, 0.01);
    CHECK(bundle.total == doctest::Approx(2.11).epsilon(1e-9));
    CHECK(bundle.l_dgm == doctest::Approx(1.0));
    CHECK(bundle.l_lma == doctest::Approx(1.0));
    CHECK(scalar_value(node) == doctest::Approx(2.11).epsilon(1e-9));
  }
  // All components zero.
  {
    LossTerms<double> terms;
    auto [node, bundle] = total_loss(t, terms, 0.1, 0.01);
    CHECK(bundle.total == 0.0);
  }
  // Ablating the extras leaves exactly the task loss.
  {
    LossTerms<double> terms;
    terms.img = c(0.3);
    terms.bic = c(0.2);
    terms.mlc = c(0.1);
    terms.tmg = c(0.4);
    auto [node, bundle] = total_loss(t, terms, 0.1, 0.01);
    CHECK(bundle.l_lma == 0.0);
    CHECK(bundle.l_mgca == 0.0);
    CHECK(bundle.l_pmm == 0.0);
    CHECK(bundle.total == doctest::Approx(bundle.l_dgm).epsilon(1e-12));
    CHECK(bundle.total == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("losses are non-negative on random inputs") {
  Rng rng(909);
  Tape<double> t;
  auto tau = param<double>(Mat<double>::Constant(1, 1, 0.4));
  for (int it = 0; it < 40; ++it) {
    const int B = 2 + static_cast<int>(rng.below(5));
    std::vector<bool> pristine(static_cast<size_t>(B));
    for (auto&& g : pristine) g = rng.uniform() < 0.5;

    CHECK(scalar_value(vlc_loss(t, constant<double>(random_mat(rng, B, 6)),
                                constant<double>(random_mat(rng, B, 6)),
                                constant<double>(random_mat(rng, B, 6)),
                                constant<double>(random_mat(rng, B, 6)),
                                pristine, tau)) >= 0.0);

    Mat<double> probs(B, 1);
    for (int i = 0; i < B; ++i) probs(i, 0) = rng.uniform(0.01, 0.99);
    CHECK(scalar_value(ied_loss(t, constant<double>(probs), pristine)) >= 0.0);

    Mat<double> attn(3, 4);
    for (int i = 0; i < 3; ++i) {
      double s = 0;
      for (int j = 0; j < 4; ++j) {
        attn(i, j) = rng.uniform(0.05, 1.0);
        s += attn(i, j);
      }
      attn.row(i) /= s;
    }
    GuidanceMask g;
    g.g = Eigen::MatrixXi::Zero(3, 4);
    g.g(static_cast<Eigen::Index>(rng.below(3)),
        static_cast<Eigen::Index>(rng.below(4))) = 1;
    g.active = true;
    CHECK(scalar_value(mgca_loss(t, constant<double>(attn), g)) >= 0.0);

    Mat<double> pred(B, 4);
    std::vector<Box> boxes(static_cast<size_t>(B));
    std::vector<bool> contrib(static_cast<size_t>(B));
    for (int i = 0; i < B; ++i) {
      pred(i, 0) = rng.uniform(0.2, 0.8);
      pred(i, 1) = rng.uniform(0.2, 0.8);
      pred(i, 2) = rng.uniform(0.05, 0.4);
      pred(i, 3) = rng.uniform(0.05, 0.4);
      boxes[static_cast<size_t>(i)] = {rng.uniform(0.2, 0.8),
                                       rng.uniform(0.2, 0.8),
                                       rng.uniform(0.05, 0.4),
                                       rng.uniform(0.05, 0.4)};
      contrib[static_cast<size_t>(i)] = rng.uniform() < 0.7;
    }
    CHECK(scalar_value(img_loss(t, constant<double>(pred), boxes, contrib)) >=
          0.0);
  }
}

TEST_CASE("batch-mean losses are permutation invariant") {
  Rng rng(1717);
  Tape<double> t;
  auto tau = param<double>(Mat<double>::Constant(1, 1, 0.7));
  const int B = 6;
  Mat<double> img = random_mat(rng, B, 5), txt = random_mat(rng, B, 5);
  Mat<double> cap = random_mat(rng, B, 5), expl = random_mat(rng, B, 5);
  std::vector<bool> pristine = {true, false, false, true, true, false};
  std::vector<int> ybin = {0, 1, 1, 0, 0, 1};

  std::vector<int> perm = {4, 2, 0, 5, 1, 3};
  auto permute_rows = [&](const Mat<double>& m) {
    Mat<double> o(m.rows(), m.cols());
    for (int i = 0; i < B; ++i)
      o.row(i) = m.row(perm[static_cast<size_t>(i)]);
    return o;
  };
  std::vector<bool> pristine_p(B);
  std::vector<int> ybin_p(B);
  for (int i = 0; i < B; ++i) {
    pristine_p[static_cast<size_t>(i)] =
        pristine[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    ybin_p[static_cast<size_t>(i)] =
        ybin[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  }

  const double a = scalar_value(
      vlc_loss(t, constant<double>(img), constant<double>(txt),
               constant<double>(cap), constant<double>(expl), pristine, tau));
  const double b = scalar_value(vlc_loss(
      t, constant<double>(permute_rows(img)), constant<double>(permute_rows(txt)),
      constant<double>(permute_rows(cap)), constant<double>(permute_rows(expl)),
      pristine_p, tau));
  CHECK(a == doctest::Approx(b).epsilon(1e-9));

  Mat<double> bl = random_mat(rng, B, 1);
  CHECK(scalar_value(bic_loss(t, constant<double>(bl), ybin)) ==
        doctest::Approx(scalar_value(
            bic_loss(t, constant<double>(permute_rows(bl)), ybin_p)))
            .epsilon(1e-9));
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(2025);
  Tape<double> t;

  // info_nce wrt both feature matrices and tau.
  {
    auto a = param<double>(random_mat(rng, 3, 4));
    auto p = param<double>(random_mat(rng, 3, 4));
    auto tau = param<double>(Mat<double>::Constant(1, 1, 0.6));
    std::vector<bool> gate = {true, false, true};
    CHECK(max_grad_err([&] { return info_nce(t, a, p, tau, gate); },
                       {a, p, tau}) < 1e-4);
  }
  // ied wrt probabilities.
  {
    Mat<double> pm(3, 1);
    pm << 0.3, 0.6, 0.85;
    auto p = param<double>(pm);
    CHECK(max_grad_err(
              [&] { return ied_loss(t, p, {true, false, true}); }, {p}) <
          1e-4);
  }
  // mgca wrt attention entries.
  {
    Mat<double> am(2, 3);
    am << 0.2, 0.5, 0.3, 0.6, 0.15, 0.25;
    auto a = param<double>(am);
    GuidanceMask g;
    g.g = Eigen::MatrixXi::Zero(2, 3);
    g.g(0, 1) = g.g(1, 0) = 1;
    g.active = true;
    CHECK(max_grad_err([&] { return mgca_loss(t, a, g); }, {a}) < 1e-4);
  }
  // pmm wrt logits.
  {
    auto lg = param<double>(random_mat(rng, 5, 1));
    PatchIndicator ind;
    ind.p = Eigen::VectorXi(5);
    ind.p << 1, 0, -1, 0, 1;
    ind.n_effective = 4;
    CHECK(max_grad_err([&] { return pmm_loss(t, lg, {ind}); }, {lg}) < 1e-4);
  }
  // img wrt predicted boxes (both penalty flavors).
  {
    Mat<double> pm(2, 4);
    pm << 0.3, 0.4, 0.25, 0.3, 0.7, 0.6, 0.2, 0.25;
    auto pred = param<double>(pm);
    std::vector<Box> boxes = {{0.45, 0.5, 0.3, 0.3}, {0.2, 0.25, 0.3, 0.2}};
    CHECK(max_grad_err(
              [&] {
                return img_loss(t, pred, boxes, {true, true},
                                IouPenalty::giou);
              },
              {pred}) < 1e-4);
    CHECK(max_grad_err(
              [&] {
                return img_loss(t, pred, boxes, {true, true}, IouPenalty::iou);
              },
              {pred}) < 1e-4);
  }
  // bic / mlc wrt logits.
  {
    auto bl = param<double>(random_mat(rng, 4, 1));
    CHECK(max_grad_err([&] { return bic_loss(t, bl, {1, 0, 0, 1}); }, {bl}) <
          1e-4);
    auto ml = param<double>(random_mat(rng, 3, 4));
    std::vector<std::array<int, 4>> y = {
        {{1, 0, 0, 1}}, {{0, 0, 0, 0}}, {{1, 1, 0, 0}}};
    CHECK(max_grad_err([&] { return mlc_loss(t, ml, y); }, {ml}) < 1e-4);
  }
  // tmg wrt token logits.
  {
    auto lg = param<double>(random_mat(rng, 4, 2));
    std::vector<std::vector<int>> y = {{1, 0, 0, 1}};
    std::vector<std::vector<bool>> real = {{true, true, true, false}};
    Mat<double> teacher(4, 2);
    teacher << 0.3, 0.7, 0.8, 0.2, 0.5, 0.5, 0.9, 0.1;
    CHECK(max_grad_err(
              [&] { return tmg_loss(t, lg, y, real, {teacher}, 0.4); },
              {lg}) < 1e-4);
  }
  // vlc end to end wrt every feature matrix.
  {
    auto fi = param<double>(random_mat(rng, 3, 4));
    auto ft = param<double>(random_mat(rng, 3, 4));
    auto fc = param<double>(random_mat(rng, 3, 4));
    auto fe = param<double>(random_mat(rng, 3, 4));
    auto tau = param<double>(Mat<double>::Constant(1, 1, 0.5));
    std::vector<bool> pristine = {true, false, true};
    CHECK(max_grad_err(
              [&] { return vlc_loss(t, fi, ft, fc, fe, pristine, tau); },
              {fi, ft, fc, fe, tau}) < 1e-4);
  }
}
