"""Account records and per-namespace native balances kept in the state tree.

The EVM/Tron reverse index lives here too: creating an account records
address -> id_com for both 20-byte namespaces, so later lookups are part of
state and roll back with it.
"""

from __future__ import annotations

from typing import Optional

from .common import (
    U64_MAX,
    ExecutionError,
    InsufficientBalance,
    VmId,
    check_len,
    read_u64,
    sha256,
    u64,
)
from .identity import address_for
from .state import StateTree

ACCOUNT_MARK = b"\x01"


class AccountExists(ExecutionError):
    pass


class BalanceOverflow(ExecutionError):
    pass


def account_key(id_com: bytes) -> bytes:
    return sha256(b"account:", id_com)


def auth_key_slot(id_com: bytes) -> bytes:
    return sha256(b"auth-key:", id_com)


def rev_evm_key(addr: bytes) -> bytes:
    return sha256(b"rev-evm:", addr)


def rev_tron_key(addr: bytes) -> bytes:
    return sha256(b"rev-tron:", addr)


def native_balance_key(id_com: bytes) -> bytes:
    return sha256(b"native-bal:", id_com)


def evm_balance_key(addr20: bytes) -> bytes:
    return sha256(b"evm-bal:", addr20)


def svm_balance_key(addr32: bytes) -> bytes:
    return sha256(b"svm-bal:", addr32)


def account_exists(state: StateTree, id_com: bytes) -> bool:
    return state.get(account_key(id_com)) is not None


def creation_keys(id_com: bytes) -> list[bytes]:
    """Every key create_account may write."""
    return [
        account_key(id_com),
        rev_evm_key(address_for(VmId.EVM, id_com)),
        rev_tron_key(address_for(VmId.TVM, id_com)),
        auth_key_slot(id_com),
    ]


def create_account(state: StateTree, id_com: bytes, auth_key: Optional[bytes] = None) -> None:
    check_len("id_com", id_com, 32)
    if account_exists(state, id_com):
        raise AccountExists(id_com.hex())
    state.put(account_key(id_com), ACCOUNT_MARK)
    state.put(rev_evm_key(address_for(VmId.EVM, id_com)), id_com)
    state.put(rev_tron_key(address_for(VmId.TVM, id_com)), id_com)
    if auth_key is not None:
        set_auth_key(state, id_com, auth_key)


def ensure_account(state: StateTree, id_com: bytes) -> bool:
    """Create the account if missing; returns True when one was created."""
    if account_exists(state, id_com):
        return False
    create_account(state, id_com)
    return True


def set_auth_key(state: StateTree, id_com: bytes, key: bytes) -> None:
    check_len("attestation key", key, 32)
    state.put(auth_key_slot(id_com), key)


def get_auth_key(state: StateTree, id_com: bytes) -> Optional[bytes]:
    return state.get(auth_key_slot(id_com))


def resolve_evm(state: StateTree, addr20: bytes) -> Optional[bytes]:
    return state.get(rev_evm_key(addr20))


def resolve_tron(state: StateTree, addr20: bytes) -> Optional[bytes]:
    return state.get(rev_tron_key(addr20))


def get_amount(state: StateTree, key: bytes) -> int:
    return read_u64(state.get(key))


def set_amount(state: StateTree, key: bytes, amount: int) -> None:
    state.put(key, u64(amount))


def move_amount(state: StateTree, src: bytes, dst: bytes, amount: int) -> None:
    """Debit ``src`` and credit ``dst``; equal keys are a no-op."""
    have = get_amount(state, src)
    if have < amount:
        raise InsufficientBalance(f"balance {have} < {amount}")
    if src == dst or amount == 0:
        return
    credited = get_amount(state, dst) + amount
    if credited > U64_MAX:
        raise BalanceOverflow(f"credit would exceed {U64_MAX}")
    set_amount(state, src, have - amount)
    set_amount(state, dst, credited)
