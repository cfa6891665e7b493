#include "dti/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <set>
#include <thread>

#include <json.hpp>

#include "dti/rng.hpp"

namespace dti {

void TrainConfig::validate() const {
    if (learning_rate < 0) throw InvalidConfig("learning_rate must be >= 0");
    if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
    if (epochs < 1) throw InvalidConfig("epochs must be >= 1");
    if (momentum < 0 || momentum >= 1) throw InvalidConfig("momentum must be in [0,1)");
}

FoldPlan make_folds(const std::vector<int>& labels, int k, std::uint64_t seed) {
    if (k < 2) throw InvalidConfig("k must be >= 2");
    if (labels.empty()) throw EmptyInput("no samples to fold");

    std::map<int, std::vector<int>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int>(i));
    for (const auto& [cls, idx] : by_class) {
        if (static_cast<int>(idx.size()) < k)
            throw StratificationImpossible("class " + std::to_string(cls) + " has " +
                                           std::to_string(idx.size()) + " samples for k=" +
                                           std::to_string(k));
    }

    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    plan.assignments.assign(labels.size(), 0);
    int class_pos = 0;
    for (auto& [cls, idx] : by_class) {
        Rng rng(derive_seed(seed, 0x10000 + static_cast<std::uint64_t>(cls)));
        rng.shuffle(idx);
        // deal round-robin; the per-class starting fold rotates so remainder
        // samples spread across folds
        for (std::size_t t = 0; t < idx.size(); ++t)
            plan.assignments[idx[t]] = static_cast<int>((t + class_pos) % k);
        ++class_pos;
    }
    return plan;
}

std::vector<float> to_network_input(const QuantizedImage& image, int side) {
    QuantizedImage resized;
    const QuantizedImage* img = &image;
    if (image.n != side) {
        resized = resize_bilinear(image, side);
        img = &resized;
    }
    std::vector<float> row(img->pixels.size());
    const float scale = 1.0f / static_cast<float>(img->range.hi);
    for (std::size_t i = 0; i < row.size(); ++i)
        row[i] = static_cast<float>(img->pixels[i]) * scale;
    return row;
}

namespace {

// Pre-resized, normalized sample rows: built once, batched many times.
std::vector<std::vector<float>> prepare_inputs(const LabeledDataset& data, int side) {
    std::vector<std::vector<float>> rows;
    rows.reserve(data.size());
    for (const auto& img : data.samples) rows.push_back(to_network_input(img, side));
    return rows;
}

Tensor gather_batch(const std::vector<std::vector<float>>& rows, const std::vector<int>& order,
                    std::size_t begin, std::size_t end, int side) {
    const int b = static_cast<int>(end - begin);
    Tensor batch({b, 1, side, side});
    for (int i = 0; i < b; ++i) {
        const auto& row = rows[order[begin + i]];
        std::copy(row.begin(), row.end(), batch.ptr() + static_cast<std::size_t>(i) * row.size());
    }
    return batch;
}

// Maps dataset class ids to model class ids by label name. Identity when the
// model has no labels yet (ad-hoc models); throws if a name is missing.
std::vector<int> vocab_mapping(const Model& model, const LabeledDataset& data) {
    std::vector<int> map(data.vocabulary.size());
    if (model.class_labels.empty()) {
        if (static_cast<int>(data.vocabulary.size()) > model.spec.classes)
            throw LabelOutOfRange("dataset has more classes than the model");
        for (std::size_t i = 0; i < map.size(); ++i) map[i] = static_cast<int>(i);
        return map;
    }
    for (std::size_t i = 0; i < data.vocabulary.size(); ++i) {
        const auto it = std::find(model.class_labels.begin(), model.class_labels.end(),
                                  data.vocabulary[i]);
        if (it == model.class_labels.end())
            throw LabelOutOfRange("class '" + data.vocabulary[i] + "' unknown to the model");
        map[i] = static_cast<int>(it - model.class_labels.begin());
    }
    return map;
}

void finalize_metrics(EvalReport& rep) {
    const std::size_t c = rep.confusion.size();
    rep.support.assign(c, 0);
    rep.per_class_accuracy.assign(c, 0.0);
    std::int64_t total = 0, correct = 0;
    double acc_sum = 0.0;
    int supported = 0;
    for (std::size_t i = 0; i < c; ++i) {
        std::int64_t row = 0;
        for (std::size_t j = 0; j < c; ++j) row += rep.confusion[i][j];
        rep.support[i] = row;
        total += row;
        correct += rep.confusion[i][i];
        if (row > 0) {
            rep.per_class_accuracy[i] = static_cast<double>(rep.confusion[i][i]) / row;
            acc_sum += rep.per_class_accuracy[i];
            ++supported;
        }
    }
    rep.mean_class_accuracy = supported ? acc_sum / supported : 0.0;
    rep.overall_accuracy = total ? static_cast<double>(correct) / total : 0.0;
}

void fold_stats(EvalReport& rep) {
    if (rep.fold_accuracies.empty()) return;
    double sum = 0.0;
    for (double a : rep.fold_accuracies) sum += a;
    rep.fold_mean = sum / rep.fold_accuracies.size();
    double acc = 0.0;
    for (double a : rep.fold_accuracies) acc += (a - rep.fold_mean) * (a - rep.fold_mean);
    rep.fold_sd = std::sqrt(acc / rep.fold_accuracies.size());
}

constexpr int kEvalChunk = 256;

} // namespace

TrainResult train(Model model, const LabeledDataset& data, const TrainConfig& config) {
    config.validate();
    data.validate();
    if (data.size() == 0) throw EmptyInput("empty training set");
    if (model.class_labels.empty()) {
        if (static_cast<int>(data.vocabulary.size()) != model.spec.classes)
            throw LabelOutOfRange("vocabulary size does not match the class count");
        model.class_labels = data.vocabulary;
    }
    const std::vector<int> label_map = vocab_mapping(model, data);

    model.meta.epochs = config.epochs;
    model.meta.learning_rate = config.learning_rate;
    model.meta.batch_size = config.batch_size;
    model.meta.momentum = config.momentum;
    model.meta.seed = config.seed;
    {
        std::set<std::string> conds(data.condition_tags.begin(), data.condition_tags.end());
        conds.erase("");
        model.meta.conditions.assign(conds.begin(), conds.end());
    }

    const int side = model.spec.input_side;
    const auto rows = prepare_inputs(data, side);

    NetExec<float> exec(model.spec);
    std::vector<Tensor> velocity;
    std::vector<Tensor> grads;
    for (const auto& p : model.params) {
        velocity.emplace_back(p.shape);
        grads.emplace_back(p.shape);
    }

    Rng dropout_rng(derive_seed(config.seed, 0xD0));
    std::vector<int> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    TrainResult result;
    const float lr = static_cast<float>(config.learning_rate);
    const float mu = static_cast<float>(config.momentum);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        if (config.shuffle_each_epoch) {
            Rng shuffle_rng(derive_seed(config.seed, 0x5000 + static_cast<std::uint64_t>(epoch)));
            shuffle_rng.shuffle(order);
        }
        double epoch_loss = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            Tensor batch = gather_batch(rows, order, begin, end, side);
            std::vector<int> labels(end - begin);
            for (std::size_t i = 0; i < labels.size(); ++i)
                labels[i] = label_map[data.labels[order[begin + i]]];

            for (auto& g : grads) std::fill(g.data.begin(), g.data.end(), 0.0f);
            const float loss = exec.forward_backward(batch, labels, model.params, grads,
                                                     Mode::train, &dropout_rng);
            epoch_loss += static_cast<double>(loss) * static_cast<double>(labels.size());

            for (std::size_t p = 0; p < model.params.size(); ++p) {
                float* w = model.params[p].ptr();
                float* v = velocity[p].ptr();
                const float* g = grads[p].ptr();
                const std::size_t n = model.params[p].numel();
                for (std::size_t i = 0; i < n; ++i) {
                    v[i] = mu * v[i] - lr * g[i];
                    w[i] += v[i];
                }
            }
        }
        result.loss_curve.push_back(epoch_loss / static_cast<double>(data.size()));
    }
    result.model = std::move(model);
    return result;
}

EvalReport tally_predictions(const std::vector<int>& truths, const std::vector<int>& predictions,
                             const std::vector<std::string>& labels) {
    if (truths.size() != predictions.size())
        throw ShapeMismatch("truth/prediction count mismatch");
    const int classes = static_cast<int>(labels.size());
    EvalReport rep;
    rep.labels = labels;
    rep.confusion.assign(classes, std::vector<std::int64_t>(classes, 0));
    for (std::size_t i = 0; i < truths.size(); ++i) {
        if (truths[i] < 0 || truths[i] >= classes || predictions[i] < 0 ||
            predictions[i] >= classes)
            throw LabelOutOfRange("class id outside the vocabulary");
        ++rep.confusion[truths[i]][predictions[i]];
    }
    finalize_metrics(rep);
    return rep;
}

EvalReport evaluate(const Model& model, const LabeledDataset& data) {
    data.validate();
    if (data.size() == 0) throw EmptyInput("empty evaluation set");
    const std::vector<int> label_map = vocab_mapping(model, data);
    const int side = model.spec.input_side;
    const int classes = model.spec.classes;
    const auto rows = prepare_inputs(data, side);

    NetExec<float> exec(model.spec);
    std::vector<int> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::vector<int> truths, preds;
    truths.reserve(data.size());
    preds.reserve(data.size());
    for (std::size_t begin = 0; begin < data.size(); begin += kEvalChunk) {
        const std::size_t end = std::min(data.size(), begin + static_cast<std::size_t>(kEvalChunk));
        Tensor batch = gather_batch(rows, order, begin, end, side);
        Tensor probs = exec.probs(batch, model.params, Mode::eval);
        for (std::size_t i = 0; i < end - begin; ++i) {
            const float* row = probs.ptr() + i * classes;
            int best = 0;
            for (int c = 1; c < classes; ++c)
                if (row[c] > row[best]) best = c; // strict '>' keeps the lowest index on ties
            truths.push_back(label_map[data.labels[begin + i]]);
            preds.push_back(best);
        }
    }
    EvalReport rep = tally_predictions(
        truths, preds, model.class_labels.empty() ? data.vocabulary : model.class_labels);
    rep.fold_accuracies = {rep.overall_accuracy};
    fold_stats(rep);
    return rep;
}

EvalReport cross_validate(const NetworkSpec& spec, const LabeledDataset& data, int k,
                          const TrainConfig& config, int jobs) {
    data.validate();
    const FoldPlan plan = make_folds(data.labels, k, config.seed);

    std::vector<EvalReport> fold_reports(k);
    std::vector<std::exception_ptr> errors(k);

    auto run_fold = [&](int fold) {
        try {
            LabeledDataset train_ds, test_ds;
            train_ds.vocabulary = test_ds.vocabulary = data.vocabulary;
            for (std::size_t i = 0; i < data.size(); ++i) {
                LabeledDataset& dst = plan.assignments[i] == fold ? test_ds : train_ds;
                dst.samples.push_back(data.samples[i]);
                dst.labels.push_back(data.labels[i]);
                dst.condition_tags.push_back(data.condition_tags[i]);
            }
            Model model = init_parameters(spec, derive_seed(config.seed, 0xF01D + fold));
            TrainConfig fold_cfg = config;
            fold_cfg.seed = derive_seed(config.seed, 0x7EA1 + fold);
            TrainResult tr = train(std::move(model), train_ds, fold_cfg);
            fold_reports[fold] = evaluate(tr.model, test_ds);
        } catch (...) {
            errors[fold] = std::current_exception();
        }
    };

    if (jobs <= 1) {
        for (int f = 0; f < k; ++f) run_fold(f);
    } else {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        const int workers = std::min(jobs, k);
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (int f = next.fetch_add(1); f < k; f = next.fetch_add(1)) run_fold(f);
            });
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    EvalReport rep;
    rep.labels = fold_reports.front().labels;
    const int classes = static_cast<int>(rep.labels.size());
    rep.confusion.assign(classes, std::vector<std::int64_t>(classes, 0));
    for (const auto& fr : fold_reports) {
        for (int i = 0; i < classes; ++i)
            for (int j = 0; j < classes; ++j) rep.confusion[i][j] += fr.confusion[i][j];
        rep.fold_accuracies.push_back(fr.overall_accuracy);
    }
    finalize_metrics(rep);
    fold_stats(rep);
    return rep;
}

GatedPrediction predict_gated(const Model& model, const QuantizedImage& image, float threshold) {
    const int side = model.spec.input_side;
    const std::vector<float> row = to_network_input(image, side);
    Tensor batch({1, 1, side, side});
    std::copy(row.begin(), row.end(), batch.ptr());
    NetExec<float> exec(model.spec);
    Tensor probs = exec.probs(batch, model.params, Mode::eval);
    int best = 0;
    for (int c = 1; c < model.spec.classes; ++c)
        if (probs.data[c] > probs.data[best]) best = c;
    GatedPrediction p;
    p.score = probs.data[best];
    p.threshold = threshold;
    p.has_class = p.score > threshold;
    p.class_index = p.has_class ? best : -1;
    return p;
}

EvalReport cross_condition_eval(const Model& model, const LabeledDataset& held_out) {
    if (held_out.size() == 0) throw EmptyInput("held-out condition set is empty");
    EvalReport rep = evaluate(model, held_out);
    const std::set<std::string> trained(model.meta.conditions.begin(),
                                        model.meta.conditions.end());
    std::set<std::string> unseen;
    for (const auto& tag : held_out.condition_tags)
        if (!tag.empty() && !trained.count(tag)) unseen.insert(tag);
    rep.unseen_conditions.assign(unseen.begin(), unseen.end());
    return rep;
}

std::string report_to_json(const EvalReport& rep) {
    nlohmann::json j;
    j["labels"] = rep.labels;
    j["confusion"] = rep.confusion;
    j["support"] = rep.support;
    j["per_class_accuracy"] = rep.per_class_accuracy;
    j["mean_class_accuracy"] = rep.mean_class_accuracy;
    j["overall_accuracy"] = rep.overall_accuracy;
    j["fold_accuracies"] = rep.fold_accuracies;
    j["fold_mean"] = rep.fold_mean;
    j["fold_sd"] = rep.fold_sd;
    j["unseen_conditions"] = rep.unseen_conditions;
    return j.dump(2) + "\n";
}

std::string confusion_to_csv(const EvalReport& rep) {
    std::string out = "true\\pred";
    for (const auto& l : rep.labels) out += "," + l;
    out += "\n";
    for (std::size_t i = 0; i < rep.confusion.size(); ++i) {
        out += rep.labels[i];
        for (std::size_t jcol = 0; jcol < rep.confusion[i].size(); ++jcol)
            out += "," + std::to_string(rep.confusion[i][jcol]);
        out += "\n";
    }
    return out;
}

} // namespace dti
