#include "hrg/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace hrg::kern {
namespace {

const Kernels* select() {
    const char* pref = std::getenv("HRG_KERNELS");
    if (pref != nullptr) {
        if (std::strcmp(pref, "scalar") == 0) return &scalar_kernels();
        if (std::strcmp(pref, "avx2") == 0 && avx2_kernels() != nullptr) {
            return avx2_kernels();
        }
        if (std::strcmp(pref, "neon") == 0 && neon_kernels() != nullptr) {
            return neon_kernels();
        }
        // Unknown or unavailable preference falls through to auto.
    }
    if (const Kernels* k = avx2_kernels()) return k;
    if (const Kernels* k = neon_kernels()) return k;
    return &scalar_kernels();
}

}  // namespace

const Kernels& active() {
    static const Kernels* chosen = select();
    return *chosen;
}

}  // namespace hrg::kern
