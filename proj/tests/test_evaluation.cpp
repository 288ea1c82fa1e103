#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include "opera/data.hpp"
#include "opera/evaluation.hpp"

using namespace opera;

namespace {

Dataset separable_blobs(std::size_t classes, std::size_t per_class, std::size_t dim,
                        std::uint64_t seed = 11) {
    Rng rng(seed);
    return make_blobs(classes, per_class, dim, 0.05, rng);
}

Dataset permuted_labels(Dataset data, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& label : data.labels) label.class_id = rng.below(data.num_classes);
    return data;
}

Encoder zero_encoder() {
    return [](const Matrix& x) { return Matrix(x.rows(), x.cols()); };
}

}  // namespace

TEST_CASE("probe separates separable blobs through the identity encoder", "[evaluation]") {
    const Dataset train = separable_blobs(2, 100, 8, 1);
    const Dataset test = separable_blobs(2, 40, 8, 1);  // same centers: same seed
    const auto result = linear_probe(identity_encoder(), train, test);
    REQUIRE(result.accuracy >= 0.99);
    REQUIRE(result.epochs_used == 100);
    REQUIRE(result.per_class_accuracy.size() == 2);

    // accuracy is the class-count weighted mean of per-class accuracies
    double weighted = 0.0;
    std::vector<std::size_t> counts(2, 0);
    for (const auto& l : test.labels) counts[l.class_id]++;
    for (std::size_t c = 0; c < 2; ++c)
        weighted += result.per_class_accuracy[c] * static_cast<double>(counts[c]);
    weighted /= static_cast<double>(test.size());
    REQUIRE_THAT(result.accuracy, Catch::Matchers::WithinAbs(weighted, 1e-12));
}

TEST_CASE("probe on permuted labels sits at chance", "[evaluation]") {
    Rng rng(2);
    const Dataset base = make_blobs(8, 100, 16, 0.1, rng);
    const Dataset train = permuted_labels(base, 3);
    const Dataset test = permuted_labels(base, 4);
    const auto result = linear_probe(identity_encoder(), train, test);
    REQUIRE(result.accuracy > 0.125 - 0.1);
    REQUIRE(result.accuracy < 0.125 + 0.1);
}

TEST_CASE("probe on constant features learns the majority prior", "[evaluation]") {
    Rng rng(5);
    Dataset data = make_blobs(2, 50, 4, 0.1, rng);
    // skew the priors: relabel the last 20 of class 1 as class 0
    for (std::size_t i = 80; i < 100; ++i) data.labels[i].class_id = 0;
    const auto result = linear_probe(zero_encoder(), data, data);
    REQUIRE_THAT(result.accuracy, Catch::Matchers::WithinAbs(0.7, 1e-12));
}

TEST_CASE("probe rejects mismatched class counts", "[evaluation]") {
    const Dataset a = separable_blobs(2, 10, 4);
    const Dataset b = separable_blobs(3, 10, 4);
    REQUIRE_THROWS_AS(linear_probe(identity_encoder(), a, b), ConfigError);
}

TEST_CASE("probe accuracy is invariant under feature permutation", "[evaluation][property]") {
    const Dataset train = separable_blobs(3, 60, 6, 7);
    const Dataset test = separable_blobs(3, 30, 6, 7);
    const auto base = linear_probe(identity_encoder(), train, test);

    const std::vector<std::size_t> perm{4, 2, 0, 5, 1, 3};
    const Encoder permuting = [&perm](const Matrix& x) {
        Matrix out(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, perm[j]);
        return out;
    };
    const auto permuted = linear_probe(permuting, train, test);
    REQUIRE(base.accuracy == permuted.accuracy);
}

TEST_CASE("knn self-match and separability", "[evaluation]") {
    const Dataset data = separable_blobs(4, 25, 8, 9);
    REQUIRE(knn_eval(identity_encoder(), data, data, 1) == 1.0);
    REQUIRE(knn_eval(identity_encoder(), data, data, 5) >= 0.99);
}

TEST_CASE("knn on permuted labels sits at chance", "[evaluation]") {
    Rng rng(13);
    const Dataset base = make_blobs(8, 100, 16, 0.1, rng);
    const Dataset train = permuted_labels(base, 5);
    const Dataset test = permuted_labels(base, 6);
    const double acc = knn_eval(identity_encoder(), train, test, 5);
    REQUIRE(acc > 0.125 - 0.1);
    REQUIRE(acc < 0.125 + 0.1);
}

TEST_CASE("knn validates its inputs", "[evaluation]") {
    const Dataset data = separable_blobs(2, 10, 4);
    REQUIRE_THROWS_AS(knn_eval(identity_encoder(), data, data, 0), ConfigError);
    REQUIRE_THROWS_AS(knn_eval(identity_encoder(), data, data, 21), ConfigError);
    Dataset empty;
    empty.num_classes = 2;
    REQUIRE_THROWS_AS(knn_eval(identity_encoder(), empty, data, 1), ConfigError);
}

TEST_CASE("ordering: identical views give exactly unit similarity", "[evaluation]") {
    const Dataset data = separable_blobs(3, 10, 6);
    AugmentConfig aug;
    aug.noise_sigma = 0.0;
    aug.scale_lo = aug.scale_hi = 1.0;
    aug.mask_prob = 0.0;
    Rng rng(17);
    const auto diag = similarity_ordering(identity_encoder(), data, aug, rng, 50);
    REQUIRE(diag.mean_same_instance == 1.0);
    REQUIRE(diag.mean_same_class >= -1.0);
    REQUIRE(diag.mean_same_class <= 1.0);
}

TEST_CASE("ordering: blob geometry separates class means", "[evaluation]") {
    const Dataset data = separable_blobs(4, 30, 16, 21);
    AugmentConfig aug;
    Rng rng(23);
    const auto diag = similarity_ordering(identity_encoder(), data, aug, rng, 200);
    REQUIRE(diag.mean_same_class > diag.mean_cross_class);
}

TEST_CASE("ordering is invariant under per-vector positive rescaling", "[evaluation][property]") {
    const Dataset data = separable_blobs(3, 20, 8, 29);
    AugmentConfig aug;
    const Encoder rescaled = [](const Matrix& x) {
        Matrix out = x;
        for (std::size_t i = 0; i < out.rows(); ++i) {
            const double factor = 1.0 + static_cast<double>(i % 3);
            for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= factor;
        }
        return out;
    };
    Rng rng1(31), rng2(31);
    const auto base = similarity_ordering(identity_encoder(), data, aug, rng1, 100);
    const auto scaled = similarity_ordering(rescaled, data, aug, rng2, 100);
    REQUIRE_THAT(scaled.mean_same_instance,
                 Catch::Matchers::WithinAbs(base.mean_same_instance, 1e-12));
    REQUIRE_THAT(scaled.mean_same_class, Catch::Matchers::WithinAbs(base.mean_same_class, 1e-12));
    REQUIRE_THAT(scaled.mean_cross_class, Catch::Matchers::WithinAbs(base.mean_cross_class, 1e-12));
}

TEST_CASE("ordering rejects starved classes", "[evaluation]") {
    Dataset data = separable_blobs(2, 5, 4);
    // strip class 1 down to a single sample
    Dataset starved;
    starved.num_classes = 2;
    starved.features = Matrix(6, 4);
    for (std::size_t i = 0; i < 5; ++i) {
        starved.features.set_row(i, data.features.row(i));
        starved.labels.push_back(data.labels[i]);
    }
    starved.features.set_row(5, data.features.row(5));
    starved.labels.push_back(data.labels[5]);
    AugmentConfig aug;
    Rng rng(37);
    REQUIRE_THROWS_AS(similarity_ordering(identity_encoder(), starved, aug, rng, 10),
                      SamplingError);
}
