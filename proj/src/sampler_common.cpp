#include "piadm/sampler_common.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace piadm {

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
#ifdef _OPENMP
    if (!omp_in_parallel()) {
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
#endif
    for (std::int64_t i = 0; i < n; ++i) fn(i);
}

}  // namespace piadm
