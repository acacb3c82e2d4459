#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "crackseg/kernels.hpp"

namespace crackseg::kernels {

const KernelTable* avx2_kernels_unchecked();

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

std::atomic<const KernelTable*>& slot() {
    static std::atomic<const KernelTable*> table{nullptr};
    return table;
}

const KernelTable& table_for(Isa isa) {
    if (isa == Isa::avx2) {
        if (const KernelTable* t = avx2_kernels()) return *t;
        throw std::runtime_error("AVX2 kernels are not available on this CPU/build");
    }
    return scalar_kernels();
}

}  // namespace

std::string_view isa_name(Isa isa) {
    return isa == Isa::avx2 ? "avx2" : "scalar";
}

const KernelTable* avx2_kernels() {
    static const KernelTable* table = cpu_has_avx2() ? avx2_kernels_unchecked() : nullptr;
    return table;
}

Isa detect_isa() {
    if (const char* env = std::getenv("CRACKSEG_ISA")) {
        const std::string want(env);
        if (want == "scalar") return Isa::scalar;
        if (want == "avx2" && avx2_kernels() != nullptr) return Isa::avx2;
    }
    return avx2_kernels() != nullptr ? Isa::avx2 : Isa::scalar;
}

const KernelTable& active() {
    const KernelTable* t = slot().load(std::memory_order_acquire);
    if (t == nullptr) {
        t = &table_for(detect_isa());
        slot().store(t, std::memory_order_release);
    }
    return *t;
}

void set_active(Isa isa) {
    slot().store(&table_for(isa), std::memory_order_release);
}

}  // namespace crackseg::kernels
