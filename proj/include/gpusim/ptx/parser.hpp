#pragma once

#include <string>
#include <string_view>

#include "gpusim/ptx/module.hpp"

namespace gpusim {

// Parses PTX-subset text into a module whose kernels are ready to run
// (labels resolved, CFG and reconvergence points computed). The module id
// is the source name; callers that load the same text twice pick distinct
// source names. Throws ParseError, UnsupportedOpcodeError,
// BraceInitializerError or StructuralError.
PtxModule parse_module(std::string_view source, std::string source_name);

// Canonical text form; parse_module(print_module(m), m.source_name) == m.
std::string print_module(const PtxModule& module);
std::string print_instruction(const KernelObject& kernel, const Instruction& in);

}  // namespace gpusim
