#pragma once

// OpenBLAS picks its kernel when the library loads, by CPU model. On
// virtualized CPUs with a generic model string it falls back to a baseline
// SSE3 kernel several times slower than what the ISA supports. Choosing the
// kernel from ISA flags has to happen before the library loads, so the
// process re-executes itself once with OPENBLAS_CORETYPE set. A single BLAS
// thread keeps reductions in a fixed order.

#include <cstdlib>
#include <string>

#include <unistd.h>

namespace mutelab {

inline const char* preferred_blas_core() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    if (__builtin_cpu_supports("avx512f")) return "SkylakeX";
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return "Haswell";
#endif
    return nullptr;
}

// Call first thing in main(). Returns normally when no re-exec is needed or
// when it fails (the process then just runs on the default kernel).
inline void ensure_blas_runtime(char** argv) {
    if (std::getenv("MUTELAB_BLAS_READY")) return;
    ::setenv("MUTELAB_BLAS_READY", "1", 1);
    bool changed = false;
    if (!std::getenv("OPENBLAS_NUM_THREADS")) {
        ::setenv("OPENBLAS_NUM_THREADS", "1", 1);
        changed = true;
    }
    const char* core = preferred_blas_core();
    if (core && !std::getenv("OPENBLAS_CORETYPE")) {
        ::setenv("OPENBLAS_CORETYPE", core, 1);
        changed = true;
    }
    if (changed) ::execv("/proc/self/exe", argv);
}

}  // namespace mutelab
