"""Lock-free primitives for numba kernels.

The kernels in this package run with the GIL released and are driven by
ordinary Python threads, so shared counters need real hardware atomics.
"""

from numba.core import cgutils
from numba.extending import intrinsic


def _element_pointer(context, builder, aryty, ary, idx):
    ary = context.make_array(aryty)(context, builder, ary)
    return cgutils.get_item_pointer(context, builder, aryty, ary, [idx])


@intrinsic
def atomic_add(typingctx, arr, idx, val):
    """``arr[idx] += val``; returns the value held *before* the addition."""

    def codegen(context, builder, sig, args):
        ary, index, value = args
        ptr = _element_pointer(context, builder, sig.args[0], ary, index)
        value = context.cast(builder, value, sig.args[2], sig.args[0].dtype)
        return builder.atomic_rmw("add", ptr, value, "seq_cst")

    return arr.dtype(arr, idx, val), codegen


@intrinsic
def atomic_cas(typingctx, arr, idx, expected, desired):
    """Compare-and-swap; returns the previous value (success iff == expected)."""

    def codegen(context, builder, sig, args):
        ary, index, exp, des = args
        ptr = _element_pointer(context, builder, sig.args[0], ary, index)
        exp = context.cast(builder, exp, sig.args[2], sig.args[0].dtype)
        des = context.cast(builder, des, sig.args[3], sig.args[0].dtype)
        pair = builder.cmpxchg(ptr, exp, des, "seq_cst", "seq_cst")
        return builder.extract_value(pair, 0)

    return arr.dtype(arr, idx, expected, desired), codegen


@intrinsic
def atomic_load(typingctx, arr, idx):
    def codegen(context, builder, sig, args):
        ary, index = args
        ptr = _element_pointer(context, builder, sig.args[0], ary, index)
        width = context.get_abi_sizeof(context.get_value_type(sig.args[0].dtype))
        return builder.load_atomic(ptr, "seq_cst", width)

    return arr.dtype(arr, idx), codegen


@intrinsic
def atomic_store(typingctx, arr, idx, val):
    def codegen(context, builder, sig, args):
        ary, index, value = args
        ptr = _element_pointer(context, builder, sig.args[0], ary, index)
        value = context.cast(builder, value, sig.args[2], sig.args[0].dtype)
        width = context.get_abi_sizeof(context.get_value_type(sig.args[0].dtype))
        builder.store_atomic(value, ptr, "seq_cst", width)
        return context.get_dummy_value()

    from numba.core import types

    return types.none(arr, idx, val), codegen
