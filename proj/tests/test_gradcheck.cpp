#include <doctest.h>

#include "dti/gradcheck.hpp"
#include "dti/ops.hpp"
#include "dti/rng.hpp"

using namespace dti;

TEST_CASE("grad_check on a linear op reports error near machine epsilon") {
    Rng rng(41);
    TensorD in({1, 1, 4, 4});
    for (auto& v : in.data) v = rng.uniform(-1, 1);
    TensorD coef({1, 1, 2, 2});
    for (auto& v : coef.data) v = rng.uniform(-1, 1);
    TensorD analytic = ops::avgpool2d_backward(in.shape, coef);
    auto eval = [&] {
        TensorD out = ops::avgpool2d(in);
        double s = 0;
        for (std::size_t i = 0; i < out.numel(); ++i) s += out.data[i] * coef.data[i];
        return s;
    };
    const auto rep = grad_check(eval, {{"input", &in, &analytic}});
    CHECK(rep.pass);
    CHECK(rep.max_rel_error < 1e-8);
}

TEST_CASE("relu check passes once the kink at zero is excluded") {
    Rng rng(43);
    TensorD in({1, 16});
    for (auto& v : in.data) {
        do {
            v = rng.uniform(-1, 1);
        } while (std::abs(v) < 0.05);
    }
    TensorD coef({1, 16});
    for (auto& v : coef.data) v = rng.uniform(-1, 1);
    TensorD analytic = ops::relu_backward(in, coef);
    auto eval = [&] {
        TensorD out = ops::relu(in);
        double s = 0;
        for (std::size_t i = 0; i < out.numel(); ++i) s += out.data[i] * coef.data[i];
        return s;
    };
    CHECK(grad_check(eval, {{"input", &in, &analytic}}).pass);
}

TEST_CASE("full operator gradient suite at 1e-6") {
    // the acceptance run uses 10 instances; 3 keeps the unit suite quick
    const auto reports = gradient_suite(3, 1e-6, 1234);
    REQUIRE(reports.size() == 9);
    for (const auto& r : reports) {
        INFO(r.op, " max rel error ", r.max_rel_error);
        CHECK(r.pass);
    }
}
