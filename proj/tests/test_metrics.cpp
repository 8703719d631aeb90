#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "cxr/metrics.hpp"

using namespace cxr;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;

namespace {

// The published-scale worked example used throughout: row = truth, column =
// prediction, classes in order healthy, non-covid pneumonia, covid pneumonia.
confusion_matrix3 reference_matrix() {
    confusion_matrix3 cm;
    cm.counts = {{{43, 7, 0}, {9, 41, 3}, {2, 0, 20}}};
    return cm;
}

}  // namespace

TEST_CASE("the worked-example matrix yields its published scores", "[metrics]") {
    const auto cm = reference_matrix();
    REQUIRE(cm.total() == 125u);
    REQUIRE(cm.trace() == 104u);
    REQUIRE(accuracy(cm) == 0.832);
    REQUIRE(std::abs(sensitivity(cm, 0) - 0.86) < 1e-12);
    REQUIRE(std::abs(sensitivity(cm, 1) - 0.7735849056603774) < 1e-12);
    REQUIRE(std::abs(sensitivity(cm, 2) - 0.9090909090909091) < 1e-12);
}

TEST_CASE("confusion matrices tally truth rows against prediction columns", "[metrics]") {
    const std::vector<int> truth = {0, 0, 1, 2, 1, 2, 0};
    const std::vector<int> pred = {0, 1, 1, 2, 0, 2, 0};
    const auto cm = confusion_matrix(truth, pred);
    REQUIRE(cm.counts[0][0] == 2u);
    REQUIRE(cm.counts[0][1] == 1u);
    REQUIRE(cm.counts[1][0] == 1u);
    REQUIRE(cm.counts[1][1] == 1u);
    REQUIRE(cm.counts[2][2] == 2u);
    REQUIRE(cm.total() == 7u);

    REQUIRE_THROWS_AS(confusion_matrix({0, 1}, {0}), metrics_error);
    REQUIRE_THROWS_AS(confusion_matrix({0, 3}, {0, 0}), metrics_error);
    REQUIRE_THROWS_AS(confusion_matrix({0, 0}, {0, -1}), metrics_error);
}

TEST_CASE("degenerate metric inputs are rejected", "[metrics]") {
    confusion_matrix3 empty;
    REQUIRE_THROWS_AS(accuracy(empty), metrics_error);
    auto cm = reference_matrix();
    cm.counts[2] = {0, 0, 0};
    REQUIRE_THROWS_MATCHES(sensitivity(cm, 2), metrics_error, MessageMatches(ContainsSubstring("absent")));
    REQUIRE_THROWS_AS(sensitivity(cm, 3), metrics_error);
    REQUIRE_THROWS_AS(mean_sd({}), metrics_error);
}

TEST_CASE("mean and sample sd match the hand oracle", "[metrics]") {
    const auto [mean, sd] = mean_sd({0.83, 0.85, 0.81, 0.86, 0.83});
    REQUIRE(std::abs(mean - 0.836) < 1e-12);
    REQUIRE(std::abs(sd - 0.019493588689617907) < 1e-12);

    const auto [m1, s1] = mean_sd({2.5});
    REQUIRE(m1 == 2.5);
    REQUIRE(s1 == 0.0);
}

TEST_CASE("matrix accumulation is elementwise", "[metrics]") {
    auto a = reference_matrix();
    const auto b = reference_matrix();
    a += b;
    REQUIRE(a.counts[0][0] == 86u);
    REQUIRE(a.total() == 250u);
    REQUIRE(accuracy(a) == 0.832);
}

TEST_CASE("a zero-weight model predicts class 0 with uniform confidence", "[metrics]") {
    hyper_params hp;
    hp.fc_units = 8;
    auto m = build_model<float>(hp, architecture{1, {{4, 1}}}, 1);
    for (auto& p : m.params)
        for (auto& v : p.data) v = 0.0f;

    example_set<float> test;
    for (int c = 0; c < 3; ++c) {
        test.images.emplace_back(1, 6, 6, 0.5f);
        test.labels.push_back(soft_label::one_hot(c));
        test.classes.push_back(c);
    }
    const auto [loss, cm] = evaluate_model(m, test, 0);
    // uniform softmax: loss ln 3, every argmax ties to class 0
    REQUIRE(std::abs(loss - 1.0986122886681098) < 1e-6);
    REQUIRE(cm.counts[0][0] == 1u);
    REQUIRE(cm.counts[1][0] == 1u);
    REQUIRE(cm.counts[2][0] == 1u);
    REQUIRE(cm.trace() == 1u);
}

TEST_CASE("evaluation leaves the model parameters untouched", "[metrics]") {
    hyper_params hp;
    hp.fc_units = 8;
    auto m = build_model<float>(hp, architecture{1, {{4, 1}}}, 5);
    const auto before = m.params;
    example_set<float> test;
    rng_stream r(3);
    for (int i = 0; i < 5; ++i) {
        image<float> img(1, 6, 6);
        for (auto& v : img.data) v = static_cast<float>(r.next_unit());
        test.images.push_back(std::move(img));
        test.labels.push_back(soft_label::one_hot(i % 3));
        test.classes.push_back(i % 3);
    }
    evaluate_model(m, test, 2);
    for (std::size_t t = 0; t < before.size(); ++t)
        REQUIRE(m.params[t].data == before[t].data);
}

TEST_CASE("aggregation reproduces recomputed statistics", "[metrics]") {
    std::vector<seed_outcome> outcomes;
    rng_stream r(9);
    for (int i = 0; i < 5; ++i) {
        seed_outcome o;
        o.seed = static_cast<std::uint64_t>(100 + i);
        o.test_loss = r.uniform(0.2, 1.5);
        o.test_accuracy = r.uniform(0.5, 1.0);
        o.confusion = reference_matrix();
        outcomes.push_back(o);
    }
    const auto agg = aggregate(outcomes);
    std::vector<double> losses, accs;
    for (const auto& o : outcomes) {
        losses.push_back(o.test_loss);
        accs.push_back(o.test_accuracy);
    }
    const auto [ml, sl] = mean_sd(losses);
    const auto [ma, sa] = mean_sd(accs);
    REQUIRE(std::abs(agg.mean_loss - ml) < 1e-12);
    REQUIRE(std::abs(agg.sd_loss - sl) < 1e-12);
    REQUIRE(std::abs(agg.mean_accuracy - ma) < 1e-12);
    REQUIRE(std::abs(agg.sd_accuracy - sa) < 1e-12);
    REQUIRE(agg.per_seed.size() == 5u);
    REQUIRE_THROWS_AS(aggregate({}), metrics_error);
}

TEST_CASE("repeated trials demand at least two seeds", "[metrics]") {
    example_set<float> dummy;
    hyper_params hp;
    REQUIRE_THROWS_AS(repeated_trials<float>(dummy, dummy, dummy, hp, architecture::desk(), {1}),
                      metrics_error);
}

TEST_CASE("the text report carries counts, accuracy, and sensitivities", "[metrics]") {
    const auto text = render_confusion_text(reference_matrix());
    REQUIRE_THAT(text, ContainsSubstring("43"));
    REQUIRE_THAT(text, ContainsSubstring("41"));
    REQUIRE_THAT(text, ContainsSubstring("accuracy: 83.20% (104/125)"));
    REQUIRE_THAT(text, ContainsSubstring("sensitivity healthy: 86.00% (43/50)"));
    REQUIRE_THAT(text, ContainsSubstring("sensitivity non_covid_pneumonia: 77.36% (41/53)"));
    REQUIRE_THAT(text, ContainsSubstring("sensitivity covid_pneumonia: 90.91% (20/22)"));

    confusion_matrix3 missing;
    missing.counts = {{{5, 0, 0}, {0, 4, 0}, {0, 0, 0}}};
    REQUIRE_THAT(render_confusion_text(missing),
                 ContainsSubstring("sensitivity covid_pneumonia: n/a (class absent)"));
}

TEST_CASE("report json carries the full metric set", "[metrics]") {
    const auto j = eval_report_json(0.42, reference_matrix());
    REQUIRE(j["test_loss"] == 0.42);
    REQUIRE(j["test_accuracy"] == 0.832);
    REQUIRE(j["confusion_matrix"][0][0] == 43);
    REQUIRE(j["confusion_matrix"][2][2] == 20);
    REQUIRE(std::abs(j["sensitivity"]["covid_pneumonia"].get<double>() - 0.9090909090909091) <
            1e-12);
    REQUIRE(j.contains("confusion_text"));

    aggregate_result agg;
    for (int i = 0; i < 2; ++i) {
        seed_outcome o;
        o.seed = static_cast<std::uint64_t>(i + 1);
        o.test_loss = 0.5 + 0.1 * i;
        o.test_accuracy = 0.8 + 0.02 * i;
        o.confusion = reference_matrix();
        agg.per_seed.push_back(o);
    }
    std::tie(agg.mean_loss, agg.sd_loss) = mean_sd({0.5, 0.6});
    std::tie(agg.mean_accuracy, agg.sd_accuracy) = mean_sd({0.8, 0.82});
    const auto tj = trials_report_json(nlohmann::ordered_json{{"arch", "desk"}}, agg);
    REQUIRE(tj["seeds"].size() == 2u);
    REQUIRE(tj["per_seed"][1]["seed"] == 2);
    REQUIRE(tj["pooled_confusion_matrix"][0][0] == 86);
    // both sensitivity aggregations are reported
    REQUIRE(std::abs(tj["mean_sensitivity"]["healthy"].get<double>() - 0.86) < 1e-12);
    REQUIRE(std::abs(tj["pooled_sensitivity"]["healthy"].get<double>() - 0.86) < 1e-12);
    REQUIRE(tj["config"]["arch"] == "desk");
}
