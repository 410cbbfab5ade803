#include "psep/kernels.hpp"

#include <cstdlib>

namespace psep::kernels {

#ifdef PSEP_HAVE_AVX2_BUILD
const Backend& avx2_backend_impl();
#endif

bool avx2_available() {
#ifdef PSEP_HAVE_AVX2_BUILD
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const Backend& active() {
    static const Backend* chosen = [] {
        if (std::getenv("PSEP_FORCE_SCALAR") != nullptr) return &scalar_backend();
#ifdef PSEP_HAVE_AVX2_BUILD
        if (avx2_available()) return &avx2_backend_impl();
#endif
        return &scalar_backend();
    }();
    return *chosen;
}

}  // namespace psep::kernels
