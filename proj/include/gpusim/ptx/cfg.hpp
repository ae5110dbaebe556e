#pragma once

#include "gpusim/ptx/module.hpp"

namespace gpusim {

// Splits the instruction list into basic blocks and fills kernel.blocks and
// kernel.block_of. Branch targets must already be resolved.
void build_cfg(KernelObject& kernel);

// Fills kernel.ipdom for every block with two or more successors and
// kernel.reconv_pc for every branch. Straight-line kernels get an empty map.
// Throws StructuralError for exitless or irreducible control flow.
void compute_ipdom(KernelObject& kernel);

// Value-returning form.
KernelObject with_ipdom(KernelObject kernel);

}  // namespace gpusim
