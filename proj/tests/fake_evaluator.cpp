// Stand-in child for the external evaluator protocol.
//   fake_evaluator ok <value> | garbage | sleep <seconds> | exit <code>
//                  | failed | echo | synthetic <name> | flaky <state file>
#include <chrono>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "autotune/evaluator.hpp"
#include "autotune/space_io.hpp"

namespace {

void respond(double value, const nlohmann::json& meta = nlohmann::json::object()) {
  std::cout << nlohmann::json{{"value", value}, {"status", "ok"}, {"meta", meta}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) return 64;
  const std::string mode = argv[1];
  std::string line;
  std::getline(std::cin, line);

  if (mode == "ok") {
    respond(argc > 2 ? std::stod(argv[2]) : 0.5);
  } else if (mode == "garbage") {
    std::cout << "this is not json\n";
  } else if (mode == "sleep") {
    std::this_thread::sleep_for(std::chrono::duration<double>(argc > 2 ? std::stod(argv[2]) : 10.0));
    respond(1.0);
  } else if (mode == "exit") {
    std::cerr << "boom\n";
    return argc > 2 ? std::stoi(argv[2]) : 1;
  } else if (mode == "failed") {
    std::cout << R"({"value": 0, "status": "failed", "meta": {"error": "oom"}})" << "\n";
  } else if (mode == "echo") {
    const auto req = nlohmann::json::parse(line);
    respond(req.at("index").get<double>(), {{"request", req}});
  } else if (mode == "synthetic") {
    const auto req = nlohmann::json::parse(line);
    const auto r = autotune::eval_synthetic(argv[2], autotune::config_from_json(req.at("config")));
    if (!r.ok()) return 3;
    respond(r.value);
  } else if (mode == "flaky") {
    int calls = 0;
    {
      std::ifstream in(argv[2]);
      in >> calls;
    }
    std::ofstream(argv[2]) << calls + 1;
    if (calls % 2 == 0) return 1;
    const auto req = nlohmann::json::parse(line);
    respond(autotune::eval_synthetic(argv[3], autotune::config_from_json(req.at("config"))).value);
  } else {
    return 64;
  }
  return 0;
}
