#include <cstdio>
#include <cstdlib>
#include <exception>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "commands.hpp"

int main(int argc, char** argv) {
#ifdef _OPENMP
  if (const char* env = std::getenv("M6_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
#endif

  CLI::App app{"m6 — multimodal Chinese pretraining toolkit"};
  app.require_subcommand(1);
  m6::cli::register_data(app);
  m6::cli::register_train(app);
  m6::cli::register_generate(app);
  m6::cli::register_eval(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
