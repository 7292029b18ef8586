/*
 * tiny_vm: the host-side runtime API that emitted C calls directly.
 *
 * A generated `<module>_run(ctx)` is a straight sequence of the eight calls
 * below, one per host op. Registers are small integers: scalar registers
 * hold int64 values, buffer registers hold tensors. On entry, buffer
 * registers 0..N-1 hold the N entry arguments.
 *
 * Every call returns 0 on success or a nonzero tiny_vm_status.
 * TINY_VM_CHECK propagates the first failure out of the run function.
 *
 * This header declares the interface only. The in-process runtime in this
 * repository implements the same calls (see `HostMode::Direct`).
 */
#ifndef TINY_VM_H
#define TINY_VM_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct tiny_vm_ctx tiny_vm_ctx;

typedef enum tiny_vm_status {
  TINY_VM_OK = 0,
  TINY_VM_OUT_OF_MEMORY = 1,
  TINY_VM_PERMISSION_DENIED = 2,
  TINY_VM_KERNEL_TRAP = 3,
  TINY_VM_MISSING_KERNEL = 4,
  TINY_VM_HOST_FAULT = 5
} tiny_vm_status;

/* Element type codes, matching the module format. */
typedef enum tiny_vm_elem {
  TINY_VM_F32 = 0,
  TINY_VM_I32 = 1,
  TINY_VM_I8 = 2
} tiny_vm_elem;

#define TINY_VM_CHECK(expr)         \
  do {                              \
    int tiny_vm_status_ = (expr);   \
    if (tiny_vm_status_ != 0) {     \
      return tiny_vm_status_;       \
    }                               \
  } while (0)

/* s[dst] = value */
int tiny_vm_const_i64(tiny_vm_ctx* ctx, uint32_t dst, int64_t value);

/* s[dst] = extent of `axis` of the tensor in b[buf] */
int tiny_vm_dim(tiny_vm_ctx* ctx, uint32_t dst, uint32_t buf, uint32_t axis);

/* s[dst] = s[a] * s[b]; fails on overflow */
int tiny_vm_mul(tiny_vm_ctx* ctx, uint32_t dst, uint32_t a, uint32_t b);

/* s[dst] = ceil(s[a] / s[b]); requires s[a] >= 0 and s[b] > 0 */
int tiny_vm_ceildiv(tiny_vm_ctx* ctx, uint32_t dst, uint32_t a, uint32_t b);

/* b[dst] = new device tensor of `elem` with extents s[dims[0..rank]] */
int tiny_vm_alloc_transient(tiny_vm_ctx* ctx, uint32_t dst, tiny_vm_elem elem,
                            uint32_t rank, const uint32_t* dims);

/* b[dst] = constant pool entry `ordinal` (read-only) */
int tiny_vm_bind_const(tiny_vm_ctx* ctx, uint32_t dst, uint32_t ordinal);

/* Runs kernel `region` over a grid of s[gx] x s[gy] x s[gz] work items with
 * b[bindings[0..count]] bound in order. */
int tiny_vm_dispatch(tiny_vm_ctx* ctx, uint32_t region, uint32_t gx,
                     uint32_t gy, uint32_t gz, uint32_t count,
                     const uint32_t* bindings);

/* Hands b[results[0..count]] back to the caller and ends the run. */
int tiny_vm_return(tiny_vm_ctx* ctx, uint32_t count, const uint32_t* results);

#ifdef __cplusplus
}
#endif

#endif /* TINY_VM_H */
