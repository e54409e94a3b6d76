#pragma once

#include <stdexcept>
#include <string>

#include "ticlab/network.hpp"

namespace ticlab {

// Command failure carrying the process exit status. The binary maps every
// outcome to: 0 success, 2 config error, 3 divergence, 4 dimension
// mismatch, 5 resource cap.
struct CliError : std::runtime_error {
  int exit_code;
  CliError(int code, const std::string& what)
      : std::runtime_error(what), exit_code(code) {}
};

// Little-endian parameter snapshot: "TICP", u32 dimension, then the values
// as f64. The loader returns whatever dimension the file holds; callers
// check it against their network.
void save_params_file(const std::string& path, const Vector& values);
Vector load_params_file(const std::string& path);

// Entry point behind main(). Dispatches
//   ticlab <train|tic|correlate|hpo|ntk-drift> --config <json> --out <dir>
// writing the fully resolved config echo plus the command's outputs into
// the (previously empty) output directory.
int cli_main(int argc, char** argv);

}  // namespace ticlab
