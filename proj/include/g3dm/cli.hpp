#pragma once

#include <string>
#include <vector>

namespace g3dm::cli {

int run(std::vector<std::string> args);
int run(int argc, char** argv);

}  // namespace g3dm::cli

#include "g3dm/cli_impl.hpp"
