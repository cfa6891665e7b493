#include <doctest.h>

#include <filesystem>
#include <set>

#include "dti/dataset.hpp"
#include "dti/train.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace dti;

namespace {

// tiny two-family corpus that a small net separates in a handful of epochs
LabeledDataset tiny_corpus(std::uint64_t seed, int classes = 2, int frames = 30) {
    const std::string dir = testutil::temp_dir("traincorpus" + std::to_string(seed));
    SynthConfig c = SynthConfig::default_corpus(seed);
    c.classes.resize(classes);
    c.frames_per_class = frames;
    generate_synthetic(c, dir);
    LabeledDataset ds = load_corpus(dir, 75, QuantizationRange{});
    std::filesystem::remove_all(dir);
    return ds;
}

} // namespace

TEST_CASE("make_folds: stratification and the 80/20, 90/10 splits") {
    // 100 samples, 10 classes x 10, k=10: exactly one per class per fold
    std::vector<int> labels;
    for (int i = 0; i < 100; ++i) labels.push_back(i % 10);
    const FoldPlan plan10 = make_folds(labels, 10, 3);
    for (int f = 0; f < 10; ++f) {
        std::vector<int> class_count(10, 0);
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (plan10.assignments[i] == f) ++class_count[labels[i]];
        for (int c : class_count) CHECK(c == 1);
    }

    // k=5 on 100 samples: every test fold holds exactly 20 (the 80%-20% split)
    const FoldPlan plan5 = make_folds(labels, 5, 3);
    for (int f = 0; f < 5; ++f)
        CHECK(std::count(plan5.assignments.begin(), plan5.assignments.end(), f) == 20);

    // partition: assignments are a function of the index set, all in range
    for (int a : plan5.assignments) {
        CHECK(a >= 0);
        CHECK(a < 5);
    }

    // stratification within 1 on a non-divisible corpus
    std::vector<int> ragged;
    for (int i = 0; i < 23; ++i) ragged.push_back(0);
    for (int i = 0; i < 31; ++i) ragged.push_back(1);
    const FoldPlan rp = make_folds(ragged, 5, 9);
    for (int c = 0; c < 2; ++c) {
        std::vector<int> per_fold(5, 0);
        for (std::size_t i = 0; i < ragged.size(); ++i)
            if (ragged[i] == c) ++per_fold[rp.assignments[i]];
        const auto [lo, hi] = std::minmax_element(per_fold.begin(), per_fold.end());
        CHECK(*hi - *lo <= 1);
    }

    CHECK_THROWS_AS(make_folds({0, 0, 0, 1}, 3, 1), StratificationImpossible);
    CHECK_THROWS_AS(make_folds(labels, 1, 1), InvalidConfig);

    // determinism
    const FoldPlan again = make_folds(labels, 5, 3);
    CHECK(again.assignments == plan5.assignments);
    CHECK(make_folds(labels, 5, 4).assignments != plan5.assignments);
}

TEST_CASE("tally_predictions matches hand arithmetic and the recount oracle") {
    // confusion [[8,2],[4,6]] built from raw pairs
    std::vector<int> truths, preds;
    for (int i = 0; i < 8; ++i) { truths.push_back(0); preds.push_back(0); }
    for (int i = 0; i < 2; ++i) { truths.push_back(0); preds.push_back(1); }
    for (int i = 0; i < 4; ++i) { truths.push_back(1); preds.push_back(0); }
    for (int i = 0; i < 6; ++i) { truths.push_back(1); preds.push_back(1); }
    const EvalReport rep = tally_predictions(truths, preds, {"x", "y"});
    CHECK(rep.confusion[0] == std::vector<std::int64_t>{8, 2});
    CHECK(rep.confusion[1] == std::vector<std::int64_t>{4, 6});
    CHECK(rep.per_class_accuracy[0] == doctest::Approx(0.8));
    CHECK(rep.per_class_accuracy[1] == doctest::Approx(0.6));
    CHECK(rep.mean_class_accuracy == doctest::Approx(0.7));
    CHECK(rep.overall_accuracy == doctest::Approx(0.7));

    // perfect predictions: diagonal confusion, accuracy 1
    const EvalReport perfect = tally_predictions({0, 1, 2, 1}, {0, 1, 2, 1}, {"a", "b", "c"});
    CHECK(perfect.overall_accuracy == 1.0);
    CHECK(perfect.mean_class_accuracy == 1.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(perfect.confusion[i][j] == (i == j ? perfect.support[i] : 0));

    // random pairs against the brute-force recount
    Rng rng(55);
    std::vector<int> t2, p2;
    for (int i = 0; i < 10000; ++i) {
        t2.push_back(static_cast<int>(rng.below(7)));
        p2.push_back(static_cast<int>(rng.below(7)));
    }
    const EvalReport got = tally_predictions(t2, p2, {"0", "1", "2", "3", "4", "5", "6"});
    const auto want = oracle::recount_pairs(t2, p2, 7);
    CHECK(got.confusion == want.confusion);
    CHECK(got.mean_class_accuracy == doctest::Approx(want.mean_class).epsilon(1e-12));
    CHECK(got.overall_accuracy == doctest::Approx(want.overall).epsilon(1e-12));

    // confusion-matrix conservation
    std::int64_t total = 0;
    for (const auto& row : got.confusion)
        for (auto v : row) total += v;
    CHECK(total == 10000);

    // a uniform-random predictor sits at chance within 3 sigma
    const double p0 = 1.0 / 7;
    const double sigma = std::sqrt(p0 * (1 - p0) / 10000);
    CHECK(std::abs(got.overall_accuracy - p0) < 3 * sigma);
}

TEST_CASE("train: zero learning rate is a no-op; seeds give bit-identical runs") {
    const LabeledDataset ds = tiny_corpus(71, 2, 10);
    const NetworkSpec spec = build_study2_spec(2);

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.learning_rate = 0.0;
    cfg.seed = 5;
    const Model m0 = init_parameters(spec, 100);
    const TrainResult r0 = train(m0, ds, cfg);
    for (std::size_t i = 0; i < m0.params.size(); ++i)
        CHECK(r0.model.params[i].data == m0.params[i].data);

    cfg.learning_rate = 0.01;
    const TrainResult r1 = train(m0, ds, cfg);
    const TrainResult r2 = train(m0, ds, cfg);
    CHECK(r1.loss_curve == r2.loss_curve);
    for (std::size_t i = 0; i < r1.model.params.size(); ++i)
        CHECK(r1.model.params[i].data == r2.model.params[i].data);

    TrainConfig other = cfg;
    other.seed = 6;
    const TrainResult r3 = train(m0, ds, other);
    CHECK(r3.model.params[0].data != r1.model.params[0].data);
}

TEST_CASE("train separates two synthetic texture families") {
    const LabeledDataset ds = tiny_corpus(72, 2, 40);
    const NetworkSpec spec = build_study2_spec(2);
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 32;
    cfg.learning_rate = 0.01;
    cfg.seed = 3;

    const TrainResult r = train(init_parameters(spec, 1), ds, cfg);
    CHECK(r.loss_curve.size() == 20);
    CHECK(r.loss_curve.back() < std::log(2.0));        // below the initial uniform loss
    CHECK(r.loss_curve.back() < r.loss_curve.front()); // net final-vs-first improvement

    const EvalReport rep = evaluate(r.model, ds);
    CHECK(rep.overall_accuracy >= 0.99);
    CHECK(r.model.class_labels == ds.vocabulary);
    CHECK(r.model.meta.conditions == std::vector<std::string>{"base"});
}

TEST_CASE("cross_validate pools folds and is order-independent") {
    const LabeledDataset ds = tiny_corpus(73, 2, 20);
    const NetworkSpec spec = build_study2_spec(2);
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 16;
    cfg.learning_rate = 0.01;
    cfg.seed = 11;

    const EvalReport a = cross_validate(spec, ds, 4, cfg, 1);
    CHECK(a.fold_accuracies.size() == 4);
    std::int64_t total = 0;
    for (const auto& row : a.confusion)
        for (auto v : row) total += v;
    CHECK(total == static_cast<std::int64_t>(ds.size())); // every sample tested once

    const EvalReport b = cross_validate(spec, ds, 4, cfg, 3); // threaded run, same result
    CHECK(b.confusion == a.confusion);
    CHECK(b.fold_accuracies == a.fold_accuracies);
    CHECK(b.fold_mean == a.fold_mean);
    CHECK(b.fold_sd == a.fold_sd);
}

TEST_CASE("predict_gated thresholds and abstention monotonicity") {
    // hand-built saturated model: flatten -> dense with huge bias on class 1
    NetworkSpec spec;
    spec.input_side = 4;
    spec.input_channels = 1;
    spec.classes = 3;
    spec.layers = {LayerSpec::input(4, 1), LayerSpec::flatten(), LayerSpec::dense(3),
                   LayerSpec::softmax()};
    Model m = init_parameters(spec, 1);
    std::fill(m.params[0].data.begin(), m.params[0].data.end(), 0.0f);
    m.params[1].data = {0.0f, 50.0f, 0.0f};
    m.class_labels = {"a", "b", "c"};

    QuantizedImage img;
    img.n = 4;
    img.range = {0, 255};
    img.pixels.assign(16, 128);
    img.dynamics = 1.0;

    const GatedPrediction sat = predict_gated(m, img, 0.5f);
    CHECK(sat.has_class);
    CHECK(sat.class_index == 1);
    CHECK(sat.score > 0.99f);

    const GatedPrediction always = predict_gated(m, img, 0.0f);
    CHECK(always.has_class); // probs > 0
    const GatedPrediction never = predict_gated(m, img, 1.0f);
    CHECK_FALSE(never.has_class); // probs <= 1

    // raising the threshold never converts an abstention into a prediction
    bool was_abstained = false;
    for (float t = 0.0f; t <= 1.0f; t += 0.05f) {
        const GatedPrediction p = predict_gated(m, img, t);
        if (was_abstained) CHECK_FALSE(p.has_class);
        was_abstained = was_abstained || !p.has_class;
    }
}

TEST_CASE("cross_condition_eval flags unseen conditions") {
    LabeledDataset ds = tiny_corpus(74, 2, 12);
    const NetworkSpec spec = build_study2_spec(2);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 12;
    cfg.learning_rate = 0.01;
    const TrainResult r = train(init_parameters(spec, 2), ds, cfg);

    LabeledDataset held = ds;
    for (auto& t : held.condition_tags) t = "augmented";
    const EvalReport rep = cross_condition_eval(r.model, held);
    CHECK(rep.unseen_conditions == std::vector<std::string>{"augmented"});

    const EvalReport rep2 = cross_condition_eval(r.model, ds);
    CHECK(rep2.unseen_conditions.empty());

    LabeledDataset empty;
    empty.vocabulary = ds.vocabulary;
    CHECK_THROWS_AS(cross_condition_eval(r.model, empty), EmptyInput);
}

TEST_CASE("report serialization has the documented shape") {
    const EvalReport rep = tally_predictions({0, 1, 1}, {0, 1, 0}, {"left", "right"});
    const std::string json = report_to_json(rep);
    CHECK(json.find("\"mean_class_accuracy\"") != std::string::npos);
    CHECK(json.find("\"confusion\"") != std::string::npos);
    const std::string csv = confusion_to_csv(rep);
    CHECK(csv.find("true\\pred,left,right\n") == 0);
    CHECK(csv.find("left,1,0\n") != std::string::npos);
    CHECK(csv.find("right,1,1\n") != std::string::npos);
}
