// Drives the installed CLI binary end to end via std::system. The binary
// path and the repository data directory come in as compile definitions.

#include <catch2/catch_amalgamated.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace {

const std::string kCli = DCCNN_CLI_PATH;
const std::string kDataDir = DCCNN_DATA_DIR;

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    const auto stamp =
        std::chrono::steady_clock::now().time_since_epoch().count();
    path = std::filesystem::temp_directory_path() /
           ("dccnn_cli_" + std::to_string(stamp) + "_" +
            std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
  static inline int counter = 0;
};

struct RunResult {
  int exit_code;
  std::string output;  // stdout + stderr
};

RunResult run(const std::string& args) {
  TempDir dir;
  const std::string log = dir.file("out.log");
  const std::string cmd = kCli + " " + args + " >" + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::string output((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
  int code = -1;
  if (WIFEXITED(status)) code = WEXITSTATUS(status);
  return {code, output};
}

std::string mnist_images() { return kDataDir + "/mnist01-images-idx3-ubyte"; }
std::string mnist_labels() { return kDataDir + "/mnist01-labels-idx1-ubyte"; }

}  // namespace

TEST_CASE("training smoke run on a small image subset", "[cli]") {
  TempDir dir;
  const std::string model = dir.file("model.dcnn");
  const std::string report = dir.file("report.json");
  const RunResult r = run(
      "train --data " + mnist_images() + " --labels " + mnist_labels() +
      " --classes 0 1 --n-train 50 --n-test 0 --downsample 1 --seed 7"
      " --kernel gaussian --loss hinge --c 1 --layers-spec 5,1,2"
      " --threshold 0.9 --out " + model + " --report " + report);
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  REQUIRE(std::filesystem::exists(model));
  std::ifstream in(report);
  REQUIRE(in.good());
  const nlohmann::json j = nlohmann::json::parse(in);
  CHECK(j["layers"][0]["rank"].get<int>() >= 1);
  CHECK(j["layers"][0]["final_lambda_max"].get<double>() <= 1.0 + 1e-8);
}

TEST_CASE("missing data path names the flag", "[cli]") {
  const RunResult r = run("train --data /nonexistent/images --labels " +
                          mnist_labels() + " --classes 0 1 --n-train 4"
                          " --out /tmp/should_not_exist.dcnn");
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("--data") != std::string::npos);
}

TEST_CASE("threshold outside (0,1] is a usage error", "[cli]") {
  const RunResult r = run(
      "train --data " + mnist_images() + " --labels " + mnist_labels() +
      " --classes 0 1 --n-train 8 --threshold 1.5 --out /tmp/nope.dcnn");
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("--threshold") != std::string::npos);
}

TEST_CASE("eval writes the documented csv header and row", "[cli]") {
  TempDir dir;
  const std::string model = dir.file("model.dcnn");
  const std::string csv = dir.file("results.csv");
  RunResult r = run(
      "train --data " + mnist_images() + " --labels " + mnist_labels() +
      " --classes 0 1 --n-train 40 --n-test 20 --downsample 1 --seed 3"
      " --layers-spec 5,1,2 --out " + model);
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  r = run("eval --model " + model + " --data " + mnist_images() +
          " --labels " + mnist_labels() +
          " --classes 0 1 --n-train 40 --n-test 20 --downsample 1 --seed 3"
          " --c 1 --dataset-name mnist01 --report " + csv);
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("accuracy:") != std::string::npos);
  std::ifstream in(csv);
  std::string header, row;
  REQUIRE(std::getline(in, header));
  REQUIRE(std::getline(in, row));
  CHECK(header ==
        "dataset,layers,kernel,gamma,c,threshold,rank,accuracy,wall_ms");
  CHECK(row.rfind("mnist01,1,gaussian,", 0) == 0);
}

TEST_CASE("evaluating an empty test selection fails cleanly", "[cli]") {
  TempDir dir;
  const std::string model = dir.file("model.dcnn");
  RunResult r = run(
      "train --data " + mnist_images() + " --labels " + mnist_labels() +
      " --classes 0 1 --n-train 16 --downsample 1 --layers-spec 5,1,2"
      " --out " + model);
  REQUIRE(r.exit_code == 0);
  r = run("eval --model " + model + " --data " + mnist_images() +
          " --labels " + mnist_labels() +
          " --classes 0 1 --n-train 0 --n-test 0 --downsample 1");
  CHECK(r.exit_code == 1);
}

TEST_CASE("predict prints a label for a text input vector", "[cli]") {
  TempDir dir;
  const std::string model = dir.file("model.dcnn");
  RunResult r = run(
      "train --data " + mnist_images() + " --labels " + mnist_labels() +
      " --classes 0 1 --n-train 30 --downsample 2 --layers-spec 3,1,1"
      " --out " + model);
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  const std::string input = dir.file("input.txt");
  {
    std::ofstream out(input);
    for (int i = 0; i < 49; ++i) out << (i % 5) * 0.2 << "\n";
  }
  r = run("predict --model " + model + " --input " + input);
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  const int label = std::stoi(r.output);
  CHECK((label == 1 || label == -1));
}

TEST_CASE("eval reaches full accuracy on its separable training csv",
          "[cli]") {
  TempDir dir;
  const std::string csv = dir.file("sep.csv");
  {
    // +1 rows concentrate mass on the left half, -1 rows on the right
    std::ofstream out(csv);
    for (int i = 0; i < 16; ++i) {
      const int y = i % 2 == 0 ? 1 : -1;
      out << y;
      for (int j = 0; j < 8; ++j) {
        const bool hot = (y == 1) == (j < 4);
        out << "," << (hot ? 0.8 + 0.02 * (i % 4) : 0.05 + 0.01 * (j % 3));
      }
      out << "\n";
    }
  }
  const std::string model = dir.file("sep.dcnn");
  RunResult r = run("train --data " + csv +
                    " --csv --layers-spec 3,1,1 --kernel gaussian --gamma 2"
                    " --c 5 --sweeps 4 --polish 2000 --out " + model);
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  r = run("eval --model " + model + " --data " + csv + " --csv");
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("accuracy: 1 (16/16)") != std::string::npos);
}

TEST_CASE("multiclass training and evaluation over csv data", "[cli]") {
  TempDir dir;
  const std::string csv = dir.file("tri.csv");
  {
    // 3 classes on a 1 x 8 strip; class k concentrates mass in band k
    std::ofstream out(csv);
    for (int i = 0; i < 18; ++i) {
      const int k = i % 3;
      out << k;
      for (int j = 0; j < 8; ++j) {
        const double base = (j / 3 == k) ? 0.9 : 0.1;
        out << "," << base + 0.01 * ((i * 7 + j) % 5);
      }
      out << "\n";
    }
  }
  const std::string model = dir.file("tri.dcnn");
  RunResult r = run("train --data " + csv +
                    " --csv --task-classes 3 --layers-spec 3,1,1"
                    " --kernel gaussian --gamma 2 --sweeps 2 --out " + model);
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  r = run("eval --model " + model + " --data " + csv + " --csv");
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("accuracy:") != std::string::npos);
}

TEST_CASE("verification subcommand passes and its negative control fails",
          "[cli]") {
  RunResult r = run("verify --seeds 3 --max-n 5");
  INFO(r.output);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("[pass]") != std::string::npos);

  r = run("verify --seed 2 --inject-corrupt-alpha");
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("failing seed 2") != std::string::npos);
}

TEST_CASE("single-seed verification is reproducible across invocations",
          "[cli]") {
  const RunResult a = run("verify --seed 4");
  const RunResult b = run("verify --seed 4");
  REQUIRE(a.exit_code == 0);
  CHECK(a.output == b.output);
}
