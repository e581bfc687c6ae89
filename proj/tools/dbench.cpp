#include <csignal>

#include "dbench/cli/app.hpp"
#ifdef DBENCH_HAVE_OPENCV
#include "dbench/datahub/image_folder.hpp"
#endif

namespace {
void on_sigint(int) { dbench::cli::interrupted().store(true); }
}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_sigint);
  return dbench::cli::run_command(argc, argv);
}
