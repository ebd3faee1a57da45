// The sofpidr command set:
//   gen-data  build_dataset into <out>/data
//   train     stage-wise then joint training into <out>/checkpoint
//   infer     both inference modes for every test sample into <out>/infer
//   baseline  TV reconstruction followed by LDDMM registration into <out>/baseline
//   eval      metrics.csv plus recon_/err_ PNGs in <out>
//   check     the self-test battery

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace sofpi {

/// args excludes the program name. Returns the process exit code; messages go
/// to out and errors to err.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sofpi
