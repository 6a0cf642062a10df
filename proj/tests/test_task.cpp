#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "actsteer/loss.hpp"
#include "actsteer/task.hpp"

using namespace actsteer;

namespace {

namespace fs = std::filesystem;

TaskSpec small_spec() {
    TaskSpec spec;
    spec.model.seed = 3;
    spec.model.depth = 3;
    spec.model.widths = {5, 5, 5};
    spec.data_seed = 4;
    spec.n_train = 12;
    spec.n_heldout = 6;
    return spec;
}

std::string fresh_dir(const std::string& name) {
    std::string dir = std::string("/tmp/actsteer_task_test_") + name;
    fs::remove_all(dir);
    return dir;
}

std::string file_bytes(const std::string& dir, const std::string& name) {
    return read_file(dir + "/" + name);
}

}  // namespace

TEST_CASE("generated task directories are reproducible byte for byte") {
    TaskSpec spec = small_spec();
    PlantedSpec plant;
    plant.hook_index = 1;
    plant.support_size = 2;
    plant.plant_seed = 5;
    spec.planted = plant;

    std::string a = fresh_dir("repro_a");
    std::string b = fresh_dir("repro_b");
    gen_task(spec, a);
    gen_task(spec, b);
    for (const char* f : {"model.json", "data.json", "ground_truth.json", "task.json"}) {
        CHECK(file_bytes(a, f) == file_bytes(b, f));
    }
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("loading a task reconstructs shapes and verifies the model hash") {
    TaskSpec spec = small_spec();
    std::string dir = fresh_dir("load");
    gen_task(spec, dir);

    TaskBundle bundle = load_task(dir);
    CHECK(bundle.train_source.rows == 12);
    CHECK(bundle.heldout_source.rows == 6);
    CHECK(bundle.train_source.cols == 5);
    CHECK(bundle.train_target.per_hook.size() == bundle.model.hooks.size());
    CHECK(bundle.train_target.rows() == 12);
    CHECK(bundle.heldout_target.rows() == 6);
    CHECK(bundle.model_hash == fnv1a64(read_file(bundle.model_path)));
    fs::remove_all(dir);
}

TEST_CASE("tampering with the model file breaks the recorded hash") {
    TaskSpec spec = small_spec();
    std::string dir = fresh_dir("tamper");
    gen_task(spec, dir);
    write_file(dir + "/model.json", file_bytes(dir, "model.json") + " ");
    CHECK_THROWS_AS(load_task(dir), io_error);
    fs::remove_all(dir);
}

TEST_CASE("without a plant the paired targets equal the clean source activations") {
    TaskSpec spec = small_spec();
    std::string dir = fresh_dir("noplant");
    gen_task(spec, dir);
    TaskBundle bundle = load_task(dir);

    ActivationTrace clean = precompute_targets(bundle.model, bundle.train_source);
    LossBreakdown bd = global_cost(clean, bundle.train_target);
    CHECK(bd.total_cost == 0.0);
    CHECK(support(load_ground_truth(dir)).count == 0);
    fs::remove_all(dir);
}

TEST_CASE("a plant with empty support generates the same data as no plant") {
    TaskSpec bare = small_spec();
    TaskSpec with_empty = small_spec();
    PlantedSpec plant;
    plant.support_size = 0;
    plant.plant_seed = 9;
    with_empty.planted = plant;

    std::string a = fresh_dir("bare");
    std::string b = fresh_dir("empty_plant");
    gen_task(bare, a);
    gen_task(with_empty, b);
    CHECK(file_bytes(a, "data.json") == file_bytes(b, "data.json"));
    CHECK(file_bytes(a, "model.json") == file_bytes(b, "model.json"));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("the planted map lands on the requested hook with the requested size") {
    TaskSpec spec = small_spec();
    PlantedSpec plant;
    plant.hook_index = 1;
    plant.support_size = 3;
    plant.plant_seed = 11;
    spec.planted = plant;

    std::string dir = fresh_dir("plantinfo");
    gen_task(spec, dir);
    TransportStack truth = load_ground_truth(dir);
    SupportReport rep = support(truth);
    CHECK(rep.count == 3);
    CHECK(rep.per_hook == (std::vector<std::size_t>{0, 3}));

    // The planted map is what produced the paired targets.
    TaskBundle bundle = load_task(dir);
    ActivationTrace replanted =
        forward_with_stack(bundle.model, truth, bundle.train_source).trace;
    CHECK(global_cost(replanted, bundle.train_target).total_cost == 0.0);
    fs::remove_all(dir);
}

TEST_CASE("unpaired targets come from fresh input draws") {
    TaskSpec spec = small_spec();
    spec.paired_targets = false;
    std::string dir = fresh_dir("unpaired");
    gen_task(spec, dir);
    TaskBundle bundle = load_task(dir);

    ActivationTrace clean = precompute_targets(bundle.model, bundle.train_source);
    CHECK(global_cost(clean, bundle.train_target).total_cost > 0.0);
    fs::remove_all(dir);
}

TEST_CASE("magnitude spreading damps the planted offsets coordinate by coordinate") {
    TaskSpec flat = small_spec();
    PlantedSpec plant;
    plant.hook_index = 0;
    plant.support_size = 4;
    plant.scale_lo = 0.5;
    plant.scale_hi = 1.0;
    plant.shift_lo = 0.5;
    plant.shift_hi = 1.0;
    plant.plant_seed = 13;
    flat.planted = plant;

    TaskSpec graded = flat;
    graded.planted->magnitude_decades = 3.0;

    std::string a = fresh_dir("flat_plant");
    std::string b = fresh_dir("graded_plant");
    gen_task(flat, a);
    gen_task(graded, b);
    TransportStack sf = load_ground_truth(a);
    TransportStack sg = load_ground_truth(b);

    CHECK(support(sf).count == 4);
    CHECK(support(sg).count == 4);
    bool strictly_smaller_somewhere = false;
    for (std::size_t j = 0; j < sf.maps[0].dim(); ++j) {
        double off_f = std::abs(sf.maps[0].omega[j] - 1.0);
        double off_g = std::abs(sg.maps[0].omega[j] - 1.0);
        CHECK(off_g <= off_f + 1e-15);
        CHECK(std::abs(sg.maps[0].bias[j]) <= std::abs(sf.maps[0].bias[j]) + 1e-15);
        if (off_f > 0.0) {
            // Shared damping factor per coordinate: omega and bias shrink alike.
            double ratio_omega = off_g / off_f;
            double ratio_bias = std::abs(sg.maps[0].bias[j]) / std::abs(sf.maps[0].bias[j]);
            CHECK(ratio_omega == doctest::Approx(ratio_bias).epsilon(1e-9));
            CHECK(ratio_omega <= 1.0);
            CHECK(ratio_omega >= 1e-3 - 1e-12);
            if (ratio_omega < 0.999) strictly_smaller_somewhere = true;
        }
    }
    CHECK(strictly_smaller_somewhere);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("invalid plant settings are rejected") {
    std::string dir = fresh_dir("badplant");
    TaskSpec spec = small_spec();
    PlantedSpec plant;
    plant.hook_index = 9;  // model has 2 hooks
    plant.support_size = 1;
    spec.planted = plant;
    CHECK_THROWS_AS(gen_task(spec, dir), config_error);

    spec = small_spec();
    plant = PlantedSpec{};
    plant.support_size = 50;  // wider than the hook
    spec.planted = plant;
    CHECK_THROWS_AS(gen_task(spec, dir), config_error);

    spec = small_spec();
    plant = PlantedSpec{};
    plant.support_size = 1;
    plant.magnitude_decades = -1.0;
    spec.planted = plant;
    CHECK_THROWS_AS(gen_task(spec, dir), config_error);

    spec = small_spec();
    spec.input_dist = "cauchy";
    CHECK_THROWS_AS(gen_task(spec, dir), config_error);

    spec = small_spec();
    spec.n_train = 0;
    CHECK_THROWS_AS(gen_task(spec, dir), config_error);
    fs::remove_all(dir);
}

TEST_CASE("task specs survive a json round trip") {
    TaskSpec spec = small_spec();
    spec.paired_targets = false;
    PlantedSpec plant;
    plant.hook_index = 1;
    plant.support_size = 2;
    plant.scale_lo = -0.25;
    plant.scale_hi = 0.75;
    plant.shift_lo = -1.5;
    plant.shift_hi = 0.5;
    plant.magnitude_decades = 2.0;
    plant.plant_seed = 17;
    spec.planted = plant;

    TaskSpec back = task_spec_from_json(task_spec_to_json(spec), "test");
    CHECK(json_bytes(task_spec_to_json(back)) == json_bytes(task_spec_to_json(spec)));
    REQUIRE(back.planted.has_value());
    CHECK(back.planted->magnitude_decades == 2.0);
    CHECK(back.paired_targets == false);
}

TEST_CASE("tensors survive a json round trip bitwise") {
    Tensor t = Tensor::from_data(2, 3, {0.1, -2.5e-17, 3e300, 1.0 / 3.0, -0.0, 42});
    Tensor back = tensor_from_json(tensor_to_json(t), "test");
    REQUIRE(back.rows == t.rows);
    REQUIRE(back.cols == t.cols);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(back.data[i] == t.data[i]);

    json bad = tensor_to_json(t);
    bad["rows"] = 5;
    CHECK_THROWS_AS(tensor_from_json(bad, "test"), io_error);
}
