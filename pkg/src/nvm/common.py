"""Shared primitives: VM identifiers, hashing helpers, fixed-width integers, errors."""

from __future__ import annotations

import hashlib
from enum import Enum

U64_MAX = (1 << 64) - 1


class VmId(str, Enum):
    NATIVE = "native"
    EVM = "evm"
    SVM = "svm"
    BVM = "bvm"
    TVM = "tvm"

    def __str__(self) -> str:
        return self.value


# one-byte VM selector used inside cross-VM request envelopes
VM_CODES: dict[int, VmId] = {
    0x00: VmId.NATIVE,
    0x01: VmId.EVM,
    0x02: VmId.SVM,
    0x03: VmId.BVM,
    0x04: VmId.TVM,
}
VM_CODE_OF = {vm: code for code, vm in VM_CODES.items()}


def sha256(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return h.digest()


def u64(value: int) -> bytes:
    return value.to_bytes(8, "big")


def read_u64(raw: bytes | None) -> int:
    """Decode an 8-byte big-endian amount; an absent slot reads as 0."""
    if raw is None:
        return 0
    if len(raw) != 8:
        raise ValueError(f"amount slot holds {len(raw)} bytes, expected 8")
    return int.from_bytes(raw, "big")


def check_len(name: str, value: bytes, *lengths: int) -> bytes:
    if len(value) not in lengths:
        want = " or ".join(str(n) for n in lengths)
        raise BadLength(f"{name}: expected {want} bytes, got {len(value)}")
    return value


class NvmError(Exception):
    """Base for every error raised by this package."""

    @property
    def code(self) -> str:
        return type(self).__name__


class ExecutionError(NvmError):
    """A transaction-level failure. Engines turn these into failed receipts."""


class BadLength(NvmError, ValueError):
    pass


class UnknownVm(NvmError, KeyError):
    pass


class MalformedPayload(ExecutionError):
    pass


class InsufficientBalance(ExecutionError):
    pass
