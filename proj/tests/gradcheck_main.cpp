#include <cstdio>
#include <cstdlib>

#include "gradcheck.hpp"

// Standalone oracle run; the acceptance suite launches the 64-bit build.
int main(int argc, char** argv) {
  const std::size_t cases = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 20;
  const auto results = gradcheck::run_suite(cases, 0x6a11);
  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.max_rel_err < gradcheck::tolerance();
    ok = ok && pass;
    std::printf("%-22s cases=%zu max_rel_err=%.3e %s\n", r.op.c_str(), r.cases, r.max_rel_err, pass ? "ok" : "FAIL");
  }
  std::printf("precision=%zu-bit tolerance=%.0e %s\n", sizeof(tesu::Real) * 8, gradcheck::tolerance(),
              ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}
