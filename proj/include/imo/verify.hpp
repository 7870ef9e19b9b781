#pragma once

#include <string>
#include <vector>

namespace imo {

struct BlockResult {
    std::string name;
    double max_rel_err;
};

// 64-bit central finite-difference checks over every differentiable
// primitive and block (fusion, noise net, grading head, full joint loss),
// `seeds` random draws each. Worst relative error per block.
std::vector<BlockResult> run_gradient_suite(int seeds = 20);

}  // namespace imo
