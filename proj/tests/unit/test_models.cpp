#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "helpers.hpp"
#include "wildtta/models.hpp"
#include "wildtta/shiftgen.hpp"

using namespace wildtta;
using testing::random_tensor;

namespace {

NormLayer make_norm(NormKind kind, std::size_t width) {
    NormLayer layer;
    layer.kind = kind;
    layer.affine = AffineParams::identity(width);
    return layer;
}

Tensor run_norm(const Tensor& x, NormKind kind, NormMode mode = NormMode::TestBatch) {
    Tape tape;
    return norm_forward(tape, x, make_norm(kind, x.cols()), mode);
}

ModelConfig small_config(NormKind norm) {
    ModelConfig c;
    c.input_dim = 6;
    c.classes = 4;
    c.hidden = {8, 8, 8};
    c.norm = norm;
    return c;
}

}  // namespace

TEST_CASE("norm kind names and parsing") {
    CHECK(NormKind::parse("bn") == NormKind::batch_test());
    CHECK(NormKind::parse("ln") == NormKind::layer());
    CHECK(NormKind::parse("gn") == NormKind::group(8));
    CHECK(NormKind::parse("gn", 4) == NormKind::group(4));
    CHECK(NormKind::parse("gn:2") == NormKind::group(2));
    CHECK(NormKind::group(4).name() == "gn");
    CHECK_THROWS_AS(NormKind::parse("in"), std::invalid_argument);
    CHECK_THROWS_AS(NormKind::parse("gn:0"), std::invalid_argument);
    CHECK_THROWS_AS(NormKind::parse("gn:x"), std::invalid_argument);
}

TEST_CASE("norm_forward examples") {
    SUBCASE("two-point batch standardization") {
        Tensor y = run_norm(Tensor::from({2, 1}, {1.0, 3.0}), NormKind::batch_test());
        CHECK(std::abs(y.data()[0] + 1.0) < 1e-2);
        CHECK(std::abs(y.data()[1] - 1.0) < 1e-2);
        CHECK(y.data()[0] > -1.0);
    }
    SUBCASE("constant sample under layer norm maps to zero") {
        Tensor y = run_norm(Tensor::from({1, 4}, {1.0, 1.0, 1.0, 1.0}), NormKind::layer());
        for (double v : y.data()) CHECK(v == 0.0);
    }
    SUBCASE("group(2) equals layer norm on each half") {
        Tensor x = random_tensor({3, 4}, 7, false, 2.0);
        Tensor g = run_norm(x, NormKind::group(2));
        for (std::size_t half = 0; half < 2; ++half) {
            std::vector<double> part;
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 2; ++j) part.push_back(x.data()[i * 4 + half * 2 + j]);
            Tensor l = run_norm(Tensor::from({3, 2}, part), NormKind::layer());
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 2; ++j)
                    CHECK(std::abs(l.data()[i * 2 + j] - g.data()[i * 4 + half * 2 + j]) < 1e-12);
        }
    }
}

TEST_CASE("norm_forward errors") {
    Tensor x = random_tensor({4, 6}, 1);
    CHECK_THROWS_AS(run_norm(x, NormKind::group(4)), std::invalid_argument);
    CHECK_THROWS_AS(run_norm(x, NormKind::group(2), NormMode::Running), std::invalid_argument);
    CHECK_THROWS_AS(run_norm(x, NormKind::layer(), NormMode::Running), std::invalid_argument);
}

TEST_CASE("pre-affine statistics per normalization unit") {
    Tensor x = random_tensor({32, 16}, 3, false, 5.0);
    SUBCASE("layer and group: per sample, per group") {
        for (std::size_t g : {1, 4}) {
            Tensor y = run_norm(x, NormKind::group(g));
            const std::size_t w = 16 / g;
            for (std::size_t i = 0; i < 32; ++i)
                for (std::size_t u = 0; u < g; ++u) {
                    double m = 0.0, v = 0.0;
                    for (std::size_t j = 0; j < w; ++j) m += y.data()[i * 16 + u * w + j];
                    m /= static_cast<double>(w);
                    for (std::size_t j = 0; j < w; ++j) v += std::pow(y.data()[i * 16 + u * w + j] - m, 2);
                    v /= static_cast<double>(w);
                    CHECK(std::abs(m) < 1e-6);
                    CHECK(std::abs(v - 1.0) < 1e-3);
                }
        }
    }
    SUBCASE("batch: per feature") {
        Tensor y = run_norm(x, NormKind::batch_test());
        for (std::size_t j = 0; j < 16; ++j) {
            double m = 0.0, v = 0.0;
            for (std::size_t i = 0; i < 32; ++i) m += y.data()[i * 16 + j];
            m /= 32.0;
            for (std::size_t i = 0; i < 32; ++i) v += std::pow(y.data()[i * 16 + j] - m, 2);
            v /= 32.0;
            CHECK(std::abs(m) < 1e-6);
            CHECK(std::abs(v - 1.0) < 1e-3);
        }
    }
}

TEST_CASE("group(1) is layer norm and GN/LN are batch-agnostic") {
    Tensor x = random_tensor({8, 16}, 11, false, 3.0);
    Tensor g1 = run_norm(x, NormKind::group(1));
    Tensor ln = run_norm(x, NormKind::layer());
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::abs(g1.data()[i] - ln.data()[i]) < 1e-12);

    // Row 0 alone, and row 0 inside a batch with other companions.
    Tensor other = random_tensor({8, 16}, 12, false, 7.0);
    std::vector<double> mixed(other.data().begin(), other.data().end());
    std::copy_n(x.data().begin(), 16, mixed.begin() + 5 * 16);
    Tensor companions = Tensor::from({8, 16}, mixed);
    for (NormKind kind : {NormKind::group(4), NormKind::layer()}) {
        Tensor a = run_norm(x, kind);
        Tensor b = run_norm(companions, kind);
        Tensor solo = run_norm(Tensor::from({1, 16}, {x.data().begin(), x.data().begin() + 16}), kind);
        for (std::size_t j = 0; j < 16; ++j) {
            CHECK(std::abs(a.data()[j] - b.data()[5 * 16 + j]) < 1e-12);
            CHECK(std::abs(a.data()[j] - solo.data()[j]) < 1e-12);
        }
    }
    // Batch statistics must make the same row depend on its companions.
    Tensor a = run_norm(x, NormKind::batch_test());
    Tensor b = run_norm(companions, NormKind::batch_test());
    double diff = 0.0;
    for (std::size_t j = 0; j < 16; ++j) diff = std::max(diff, std::abs(a.data()[j] - b.data()[5 * 16 + j]));
    CHECK(diff > 1e-6);
}

TEST_CASE("identity affine leaves normalized values alone") {
    Tensor x = random_tensor({4, 8}, 2);
    Tape tape;
    Tensor xhat = ops::standardize(tape, x, false, 2, kNormEpsilon);
    Tensor y = run_norm(x, NormKind::group(2));
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == xhat.data()[i]);
}

TEST_CASE("trainable parameter selection") {
    Model m = Model::create(small_config(NormKind::group(2)), 0);
    CHECK(m.trainable_params().size() == 4);
    m.set_frozen({false, false, false});
    CHECK(m.trainable_params().size() == 6);
    m.set_frozen({true, true, true});
    CHECK(m.trainable_params().empty());
    CHECK_THROWS_AS(m.set_frozen({true}), std::invalid_argument);

    m.set_frozen({false, true, false});
    const auto params = m.trainable_params();
    REQUIRE(params.size() == 4);
    CHECK(same_tensor(params[0], m.norms()[0].affine.gamma));
    CHECK(same_tensor(params[1], m.norms()[0].affine.beta));
    CHECK(same_tensor(params[2], m.norms()[2].affine.gamma));
    CHECK(same_tensor(params[3], m.norms()[2].affine.beta));
}

TEST_CASE("grad modes") {
    Model m = Model::create(small_config(NormKind::layer()), 1);
    m.set_grad_mode(GradMode::Adapt);
    for (const Tensor& p : m.trainable_params()) CHECK(p.requires_grad());
    for (const LinearLayer& l : m.linears()) {
        CHECK_FALSE(l.weight.requires_grad());
        CHECK_FALSE(l.bias.requires_grad());
    }
    CHECK_FALSE(m.norms().back().affine.gamma.requires_grad());
    m.set_grad_mode(GradMode::Train);
    for (const Tensor& p : m.all_params()) CHECK(p.requires_grad());
    m.set_grad_mode(GradMode::None);
    for (const Tensor& p : m.all_params()) CHECK_FALSE(p.requires_grad());
}

TEST_CASE("zero-depth model is an affine map") {
    ModelConfig c;
    c.input_dim = 3;
    c.classes = 2;
    c.hidden = {};
    c.freeze_top = 0;
    Model m = Model::create(c, 5);
    Tensor x = random_tensor({4, 3}, 6);
    Tape tape;
    Tensor y = m.forward(tape, x, NormMode::TestBatch);
    const auto w = m.linears()[0].weight.data();
    const auto b = m.linears()[0].bias.data();
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            double acc = b[j];
            for (std::size_t k = 0; k < 3; ++k) acc += x.data()[i * 3 + k] * w[k * 2 + j];
            CHECK(y.data()[i * 2 + j] == doctest::Approx(acc).epsilon(1e-14));
        }
}

TEST_CASE("untrained model gives finite logits and nonzero affine gradients") {
    for (NormKind kind : {NormKind::batch_test(), NormKind::group(2), NormKind::layer()}) {
        Model m = Model::create(small_config(kind), 3);
        m.set_frozen({false, false, false});
        m.set_grad_mode(GradMode::Adapt);
        Tape tape;
        Tensor logits = m.forward(tape, random_tensor({5, 6}, 4), NormMode::TestBatch);
        for (double v : logits.data()) CHECK(std::isfinite(v));
        tape.backward(ops::mean(tape, ops::entropy_rows(tape, logits)));
        for (const Tensor& p : m.trainable_params()) {
            double s = 0.0;
            for (double g : p.grad()) s += g * g;
            CHECK(s > 0.0);
        }
    }
}

TEST_CASE("forward checks input width") {
    Model m = Model::create(small_config(NormKind::layer()), 0);
    Tape tape;
    CHECK_THROWS_AS(m.forward(tape, Tensor::zeros({2, 5}), NormMode::TestBatch), std::invalid_argument);
    CHECK_THROWS_AS(Model::create(small_config(NormKind::group(3)), 0), std::invalid_argument);
}

TEST_CASE("pretraining reaches 0.95 for every norm kind and is deterministic") {
    SourceSpec spec;
    const SourceData data = gen_source(spec);
    for (NormKind kind : {NormKind::batch_test(), NormKind::group(8), NormKind::layer()}) {
        CAPTURE(kind.name());
        ModelConfig c;
        c.norm = kind;
        Model a = Model::create(c, 0);
        Model b = Model::create(c, 0);
        PretrainConfig pc;
        const PretrainResult ra = pretrain(a, data.train, pc);
        const PretrainResult rb = pretrain(b, data.train, pc);
        CHECK(ra.train_accuracy >= 0.95);
        CHECK(ra.train_accuracy == rb.train_accuracy);
        const auto pa = a.all_params(), pb = b.all_params();
        REQUIRE(pa.size() == pb.size());
        for (std::size_t i = 0; i < pa.size(); ++i) {
            REQUIRE(std::equal(pa[i].data().begin(), pa[i].data().end(), pb[i].data().begin()));
        }
        CHECK(a.has_running_stats() == (kind.type == NormKind::Type::BatchTest));
        for (const NormLayer& n : a.norms())
            for (double v : n.running_var) CHECK(v >= 0.0);
    }
}

TEST_CASE("pretraining below the accuracy bar is reported") {
    SourceSpec spec;
    spec.separation = 0.0;
    spec.n_per_class = 50;
    const SourceData data = gen_source(spec);
    ModelConfig c;
    Model m = Model::create(c, 0);
    PretrainConfig pc;
    pc.epochs = 1;
    CHECK_THROWS_AS(pretrain(m, data.train, pc), PretrainError);
}

TEST_CASE("running mode is batch-size invariant") {
    SourceSpec spec;
    spec.n_per_class = 60;
    const SourceData data = gen_source(spec);
    ModelConfig c;
    c.norm = NormKind::batch_test();
    Model m = Model::create(c, 2);
    PretrainConfig pc;
    pc.min_accuracy = 0.0;
    pc.epochs = 2;
    pretrain(m, data.train, pc);
    std::vector<std::size_t> idx{0, 7, 19, 33, 41};
    Tape tape;
    Tensor all = m.forward(tape, data.test.rows(idx), NormMode::Running);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::vector<std::size_t> one{idx[r]};
        Tensor solo = m.forward(tape, data.test.rows(one), NormMode::Running);
        for (std::size_t j = 0; j < c.classes; ++j)
            CHECK(std::abs(solo.data()[j] - all.data()[r * c.classes + j]) < 1e-12);
    }
}

TEST_CASE("checkpoint round trip is bit-exact") {
    const auto dir = testing::scratch_dir("ckpt");
    for (NormKind kind : {NormKind::batch_test(), NormKind::group(4), NormKind::layer()}) {
        ModelConfig c;
        c.norm = kind;
        c.freeze_top = 2;
        Model m = Model::create(c, 9);
        // Non-trivial affine and running statistics with awkward values.
        for (NormLayer& n : m.norms()) {
            n.affine.gamma.data()[0] = 0.1;
            n.affine.beta.data()[1] = -1.0 / 3.0;
            n.running_mean.assign(n.width(), std::nextafter(1.0, 2.0));
            n.running_var.assign(n.width(), 1e-300);
        }
        const auto path = dir / (kind.name() + ".ckpt");
        save_checkpoint(m, path);
        Model r = load_checkpoint(path);
        CHECK(r.config().norm == kind);
        CHECK(r.config().hidden == c.hidden);
        const auto pa = m.all_params(), pb = r.all_params();
        REQUIRE(pa.size() == pb.size());
        for (std::size_t i = 0; i < pa.size(); ++i) {
            REQUIRE(pa[i].shape() == pb[i].shape());
            REQUIRE(std::equal(pa[i].data().begin(), pa[i].data().end(), pb[i].data().begin()));
        }
        for (std::size_t l = 0; l < m.norms().size(); ++l) {
            CHECK(m.norms()[l].frozen == r.norms()[l].frozen);
            CHECK(m.norms()[l].running_mean == r.norms()[l].running_mean);
            CHECK(m.norms()[l].running_var == r.norms()[l].running_var);
        }
    }
    CHECK_THROWS(load_checkpoint(dir / "missing.ckpt"));
    {
        std::ofstream os(dir / "bad.ckpt");
        os << "not a checkpoint\n";
    }
    CHECK_THROWS(load_checkpoint(dir / "bad.ckpt"));
}

TEST_CASE("clone shares no storage") {
    Model m = Model::create(small_config(NormKind::layer()), 0);
    Model c = m.clone();
    c.norms()[0].affine.gamma.data()[0] = 42.0;
    c.linears()[0].weight.data()[0] = 42.0;
    CHECK(m.norms()[0].affine.gamma.data()[0] == 1.0);
    CHECK(m.linears()[0].weight.data()[0] != 42.0);
}
