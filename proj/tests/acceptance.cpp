// Acceptance run: one line per criterion. Usage: acceptance [path-to-procrisk-cli] [seed]
#include "procrisk/acceptance.hpp"
#include "procrisk/commands.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

using namespace procrisk;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void print(const CriterionResult& r) {
  std::printf("[%s] %2d %-36s %s (%.2f s)\n", r.passed ? "PASS" : "FAIL", r.id, r.title.c_str(), r.detail.c_str(), r.seconds);
  std::fflush(stdout);
}

CriterionResult determinism(const char* cli, std::uint64_t seed) {
  CriterionResult r{12, "Determinism"};
  namespace fs = std::filesystem;
  if (cli == nullptr) {
    r.passed = run_suite(seed, 1).render(Format::report) == run_suite(seed, 1).render(Format::report);
    r.detail = "in-process renders only (no CLI path given)";
    return r;
  }
  const fs::path dir = fs::temp_directory_path();
  const std::string tag = std::to_string(seed);
  const fs::path a = dir / ("procrisk-suite-a-" + tag + ".json"), b = dir / ("procrisk-suite-b-" + tag + ".json");
  const std::string base = std::string("\"") + cli + "\" suite --seed " + std::to_string(seed) + " > ";
  const int ca = std::system((base + "\"" + a.string() + "\"").c_str());
  const int cb = std::system((base + "\"" + b.string() + "\"").c_str());
  const std::string ra = slurp(a), rb = slurp(b);
  r.passed = !ra.empty() && ra == rb;
  r.detail = "two CLI suite runs: " + std::to_string(ra.size()) + " and " + std::to_string(rb.size()) + " bytes, " +
             (ra == rb ? "identical" : "different") + ", exit codes " + std::to_string(ca) + "/" + std::to_string(cb);
  fs::remove(a);
  fs::remove(b);
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  const char* cli = argc > 1 ? argv[1] : nullptr;
  const std::uint64_t seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 20240601;
  int failed = 0;
  for (int id = 1; id < kCriterionCount; ++id) {
    auto r = run_criterion(id, seed);
    print(r);
    failed += !r.passed;
  }
  const auto start = std::chrono::steady_clock::now();
  auto r = determinism(cli, seed);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  print(r);
  failed += !r.passed;
  std::printf("%d/%d criteria passed\n", kCriterionCount - failed, kCriterionCount);
  return failed == 0 ? 0 : 1;
}
