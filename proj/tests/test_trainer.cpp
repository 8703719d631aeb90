#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "cxr/image_io.hpp"
#include "cxr/trainer.hpp"

using namespace cxr;
namespace fs = std::filesystem;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;

namespace {

// Three well-separated constant-intensity classes; any working optimizer
// drives this to full accuracy within a few epochs.
example_set<float> constant_class_set(std::size_t per_class, std::size_t size,
                                      std::uint64_t seed) {
    example_set<float> set;
    rng_stream noise(seed);
    const float base[3] = {0.15f, 0.5f, 0.85f};
    for (std::size_t i = 0; i < per_class; ++i) {
        for (int c = 0; c < 3; ++c) {
            image<float> img(1, size, size, base[c]);
            for (auto& v : img.data)
                v += static_cast<float>(noise.uniform(-0.05, 0.05));
            set.images.push_back(std::move(img));
            set.labels.push_back(soft_label::one_hot(c));
            set.classes.push_back(c);
        }
    }
    return set;
}

hyper_params quick_hp() {
    hyper_params hp;
    hp.input_size = 8;
    hp.fc_units = 16;
    hp.dropout_p = 0.0;
    hp.learning_rate = 5e-3;
    hp.batch_size = 6;
    hp.max_epochs = 20;
    hp.patience = 5;
    hp.policy = preset_policy(augmentation_preset::none);
    return hp;
}

architecture tiny_arch() { return {1, {{4, 1}, {8, 1}}}; }

// Stop epoch computed from scratch: epoch j improves iff its loss is strictly
// below everything before it; training stops at the first epoch whose trailing
// patience+1 epochs contain no improvement.
struct reference_outcome {
    int stop_epoch = 0;  // 0: ran to the end
    int best_epoch = 0;
    double best_loss = std::numeric_limits<double>::infinity();
};

reference_outcome reference_early_stop(const std::vector<double>& losses, int patience) {
    const int n = static_cast<int>(losses.size());
    std::vector<bool> improves(n + 1, false);
    for (int j = 1; j <= n; ++j) {
        double prior = std::numeric_limits<double>::infinity();
        for (int k = 1; k < j; ++k) prior = std::min(prior, losses[k - 1]);
        improves[j] = losses[j - 1] < prior;
    }
    reference_outcome out;
    for (int j = 1; j <= n; ++j) {
        if (improves[j] && losses[j - 1] < out.best_loss) {
            out.best_loss = losses[j - 1];
            out.best_epoch = j;
        }
        int last_improve = 0;
        for (int k = 1; k <= j; ++k)
            if (improves[k]) last_improve = k;
        if (j - last_improve > patience) {
            out.stop_epoch = j;
            break;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("early stopping follows the documented worked examples", "[trainer]") {
    // best at epoch 1, eight flat epochs after it: patience 7 stops at epoch 9
    early_stop_state s;
    int stop_at = 0;
    for (int e = 1; e <= 20 && stop_at == 0; ++e) {
        const double loss = e == 1 ? 1.0 : 2.0;
        if (early_stop_update(s, e, loss, 7)) stop_at = e;
    }
    REQUIRE(stop_at == 9);
    REQUIRE(s.best_epoch == 1);

    // patience 0 stops at the first non-improving epoch
    early_stop_state s0;
    REQUIRE_FALSE(early_stop_update(s0, 1, 1.0, 0));
    REQUIRE(early_stop_update(s0, 2, 1.1, 0));

    // an equal loss is not an improvement
    early_stop_state se;
    REQUIRE_FALSE(early_stop_update(se, 1, 0.7, 1));
    REQUIRE_FALSE(early_stop_update(se, 2, 0.7, 1));
    REQUIRE(early_stop_update(se, 3, 0.7, 1));
    REQUIRE(se.best_epoch == 1);
}

TEST_CASE("early stopping agrees with brute force on every short sequence", "[trainer]") {
    const std::array<double, 3> alphabet = {0.5, 1.0, 1.5};
    for (int n = 1; n <= 9; ++n) {
        std::vector<int> digits(n, 0);
        while (true) {
            std::vector<double> losses(n);
            for (int i = 0; i < n; ++i) losses[i] = alphabet[digits[i]];
            for (int patience : {0, 1, 2, 3, 7}) {
                const auto want = reference_early_stop(losses, patience);
                early_stop_state s;
                int stop_epoch = 0;
                for (int e = 1; e <= n; ++e)
                    if (early_stop_update(s, e, losses[e - 1], patience)) {
                        stop_epoch = e;
                        break;
                    }
                REQUIRE(stop_epoch == want.stop_epoch);
                REQUIRE(s.best_epoch == want.best_epoch);
                if (want.best_epoch != 0) REQUIRE(s.best_loss == want.best_loss);
            }
            int pos = n - 1;
            while (pos >= 0 && digits[pos] == 2) digits[pos--] = 0;
            if (pos < 0) break;
            ++digits[pos];
        }
    }
}

TEST_CASE("the fit loop learns a separable toy problem", "[trainer]") {
    const auto train = constant_class_set(10, 8, 1);
    const auto val = constant_class_set(3, 8, 2);
    const auto hp = quick_hp();
    auto [m, result] = train_model<float>(train, val, hp, tiny_arch(), 42);

    REQUIRE_FALSE(result.history.empty());
    REQUIRE(result.best_epoch >= 1);
    double min_val = std::numeric_limits<double>::infinity();
    int min_epoch = 0;
    for (const auto& r : result.history)
        if (r.val_loss < min_val) {
            min_val = r.val_loss;
            min_epoch = r.epoch;
        }
    REQUIRE(result.best_epoch == min_epoch);
    REQUIRE(result.best_val_loss == min_val);

    const auto [loss, acc] = evaluate_set(m, val, hp.batch_size);
    REQUIRE(acc == 1.0);
    // the returned weights are the best-epoch snapshot, so re-evaluating
    // reproduces the recorded best loss exactly
    REQUIRE(loss == result.best_val_loss);
}

TEST_CASE("a zero learning rate leaves the weights untouched", "[trainer]") {
    const auto train = constant_class_set(4, 8, 3);
    const auto val = constant_class_set(2, 8, 4);
    auto hp = quick_hp();
    hp.learning_rate = 0.0;
    hp.patience = 2;
    hp.max_epochs = 30;

    const auto init = build_model<float>(hp, tiny_arch(), rng_stream(7).substream(0).seed());
    auto [m, result] = train_model<float>(train, val, hp, tiny_arch(), 7);
    for (std::size_t t = 0; t < m.params.size(); ++t)
        REQUIRE(m.params[t].data == init.params[t].data);
    // constant validation loss: only epoch 1 improves, streak exceeds
    // patience 2 at epoch 4
    REQUIRE(result.stopped_early);
    REQUIRE(result.stopped_epoch() == 4);
    REQUIRE(result.best_epoch == 1);
}

TEST_CASE("training runs are seed-deterministic and worker-independent", "[trainer]") {
    const auto train = constant_class_set(6, 8, 5);
    const auto val = constant_class_set(2, 8, 6);
    auto hp = quick_hp();
    hp.dropout_p = 0.2;
    hp.max_epochs = 4;
    hp.policy = preset_policy(augmentation_preset::conv_mixup);

    auto run = [&](std::uint64_t seed, int workers) {
        return train_model<float>(train, val, hp, tiny_arch(), seed, workers);
    };
    const auto [m1, r1] = run(11, 1);
    const auto [m2, r2] = run(11, 1);
    const auto [m4, r4] = run(11, 4);
    const auto [mx, rx] = run(12, 1);

    for (std::size_t t = 0; t < m1.params.size(); ++t) {
        REQUIRE(m1.params[t].data == m2.params[t].data);
        REQUIRE(m1.params[t].data == m4.params[t].data);
    }
    REQUIRE(r1.history.size() == r4.history.size());
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
        REQUIRE(r1.history[i].train_loss == r4.history[i].train_loss);
        REQUIRE(r1.history[i].val_loss == r4.history[i].val_loss);
    }
    REQUIRE(m1.params[0].data != mx.params[0].data);
}

TEST_CASE("frozen conv layers never move during training", "[trainer]") {
    const auto train = constant_class_set(6, 8, 8);
    const auto val = constant_class_set(2, 8, 9);
    auto hp = quick_hp();
    hp.freeze_depth = 1;
    hp.max_epochs = 5;

    const auto init = build_model<float>(hp, tiny_arch(), rng_stream(13).substream(0).seed());
    auto [m, result] = train_model<float>(train, val, hp, tiny_arch(), 13);
    REQUIRE(m.params[0].data == init.params[0].data);  // conv0.weight
    REQUIRE(m.params[1].data == init.params[1].data);  // conv0.bias
    REQUIRE(m.params[2].data != init.params[2].data);  // conv1.weight moved
}

TEST_CASE("non-finite losses abort training", "[trainer]") {
    auto train = constant_class_set(4, 8, 10);
    train.images[0].data[5] = std::numeric_limits<float>::infinity();
    const auto val = constant_class_set(2, 8, 11);
    auto hp = quick_hp();
    hp.max_epochs = 3;
    REQUIRE_THROWS_MATCHES(train_model<float>(train, val, hp, tiny_arch(), 15), training_error,
                           MessageMatches(ContainsSubstring("not finite")));
}

TEST_CASE("fit validates its control settings", "[trainer]") {
    const auto train = constant_class_set(2, 8, 12);
    const auto val = constant_class_set(1, 8, 13);
    auto hp = quick_hp();
    auto m = build_model<float>(hp, tiny_arch(), 1);
    hp.max_epochs = 0;
    REQUIRE_THROWS_AS(fit(m, train, val, hp, 1), training_error);
    hp.max_epochs = 1;
    hp.patience = -1;
    REQUIRE_THROWS_AS(fit(m, train, val, hp, 1), training_error);
    hp.patience = 1;
    hp.batch_size = 0;
    REQUIRE_THROWS_AS(fit(m, train, val, hp, 1), training_error);
    example_set<float> empty;
    hp.batch_size = 4;
    REQUIRE_THROWS_AS(fit(m, empty, val, hp, 1), training_error);
}

TEST_CASE("evaluation is independent of the batch partition", "[trainer]") {
    const auto val = constant_class_set(5, 8, 14);
    const auto hp = quick_hp();
    const auto m = build_model<float>(hp, tiny_arch(), 21);
    const auto [la, aa] = evaluate_set(m, val, 4);
    const auto [lb, ab] = evaluate_set(m, val, 0);  // one batch for the whole set
    REQUIRE(aa == ab);
    REQUIRE(std::abs(la - lb) < 1e-12);
}

TEST_CASE("the training log uses the fixed column format", "[trainer]") {
    const auto dir = fs::temp_directory_path() / "cxr_trainer_test";
    fs::create_directories(dir);
    const auto path = dir / "log.csv";
    const std::vector<epoch_record> history = {{1, 0.5, 0.25, 0.75, 0.0},
                                               {2, 1.0 / 3.0, 0.2, 5.0 / 6.0, 1.5}};
    write_training_log(path, history);
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    REQUIRE(text ==
            "epoch,train_loss,val_loss,val_accuracy,wall_time_s\n"
            "1,0.500000,0.250000,0.750000,0.000\n"
            "2,0.333333,0.200000,0.833333,1.500\n");
}

TEST_CASE("example sets load manifest records at the requested size", "[trainer]") {
    const auto dir = fs::temp_directory_path() / "cxr_trainer_imgs";
    fs::create_directories(dir / "images");
    std::vector<std::uint8_t> a(16 * 16, 40), b(12 * 10, 200);
    write_png_gray(dir / "images" / "a.png", a.data(), 16, 16);
    write_png_gray(dir / "images" / "b.png", b.data(), 12, 10);

    std::vector<manifest_record> records(2);
    records[0].id = "a";
    records[0].filepath = "images/a.png";
    records[0].label = diagnosis::healthy;
    records[1].id = "b";
    records[1].filepath = "images/b.png";
    records[1].label = diagnosis::covid_pneumonia;

    const auto set = make_example_set<float>(records, dir, 8);
    REQUIRE(set.size() == 2u);
    REQUIRE(set.images[0].height == 8u);
    REQUIRE(set.images[0].width == 8u);
    REQUIRE(set.images[0].channels == 1u);
    for (float v : set.images[0].data) REQUIRE(std::abs(v - 40.0f / 255.0f) < 1e-6);
    for (float v : set.images[1].data) REQUIRE(std::abs(v - 200.0f / 255.0f) < 1e-6);
    REQUIRE(set.classes == std::vector<int>{0, 2});
    REQUIRE(set.labels[1].w[2] == 1.0);
}

TEST_CASE("the dropout stream offset is a fixed document constant", "[trainer]") {
    REQUIRE(dropout_substream == (std::uint64_t(1) << 32));
}
