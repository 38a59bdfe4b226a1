#pragma once

#include <iosfwd>

#include "bd3mg/blur.hpp"
#include "bd3mg/config.hpp"
#include "bd3mg/objective.hpp"
#include "bd3mg/runtime.hpp"

namespace bd3mg {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitRuntime = 2 };

RegParams reg_params_from(const Config& cfg);
RunConfig run_config_from(const Config& cfg);
PsfRanges psf_ranges_from(const Config& cfg);

void cmd_phantom(const Config& cfg, std::ostream& out);
void cmd_degrade(const Config& cfg, std::ostream& out);
void cmd_restore(const Config& cfg, std::ostream& out);
void cmd_ablate(const Config& cfg, std::ostream& out);
void cmd_speedup(const Config& cfg, std::ostream& out, std::ostream& err);

/// Entry point shared by the binary and the tests.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bd3mg
