#include <stdint.h>
#include <stddef.h>
#include "tiny_vm.h"

/* entry argument count: 3 (buffer registers from 0) */
int dynamic_matmul_run(tiny_vm_ctx* ctx) {
  TINY_VM_CHECK(tiny_vm_dim(ctx, 0, 0, 0));
  TINY_VM_CHECK(tiny_vm_dim(ctx, 1, 1, 1));
  TINY_VM_CHECK(tiny_vm_alloc_transient(ctx, 3, TINY_VM_F32, 2, (const uint32_t[]){0, 1}));
  TINY_VM_CHECK(tiny_vm_const_i64(ctx, 2, INT64_C(32)));
  TINY_VM_CHECK(tiny_vm_ceildiv(ctx, 3, 1, 2));
  TINY_VM_CHECK(tiny_vm_ceildiv(ctx, 4, 0, 2));
  TINY_VM_CHECK(tiny_vm_const_i64(ctx, 5, INT64_C(1)));
  TINY_VM_CHECK(tiny_vm_dispatch(ctx, 0, 3, 4, 5, 4, (const uint32_t[]){0, 1, 2, 3}));
  return tiny_vm_return(ctx, 1, (const uint32_t[]){3});
}
