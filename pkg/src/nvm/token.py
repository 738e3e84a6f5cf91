"""Unified token ledger.

One balance/allowance store per mint, kept in the shared state tree. The
ERC-20 and SPL views below are read paths over the same slots, so a transfer
made through either interface touches exactly the same two balance keys.

Every mutating operation checks all of its preconditions before the first
write; a raised error therefore never leaves a partial update behind.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional

from .accounts import resolve_evm
from .common import U64_MAX, ExecutionError, InsufficientBalance, check_len, read_u64, sha256, u64
from .state import StateTree

SPL_PROGRAM_ID = bytes.fromhex("06ddf6e1d765a193d9cbe146ceeb79ac1cb485ed5f5b37913a8cf5857eff00a9")


class TokenError(ExecutionError):
    pass


class MintExists(TokenError):
    pass


class UnknownMint(TokenError):
    pass


class NotAuthority(TokenError):
    pass


class SupplyOverflow(TokenError):
    pass


class AllowanceExceeded(TokenError):
    pass


@dataclass(frozen=True)
class MintMeta:
    supply: int
    decimals: int
    authority: bytes

    def encode(self) -> bytes:
        return u64(self.supply) + bytes([self.decimals]) + self.authority

    @classmethod
    def decode(cls, raw: bytes) -> "MintMeta":
        return cls(int.from_bytes(raw[:8], "big"), raw[8], raw[9:41])


def balance_slot(mint: bytes, id_com: bytes) -> bytes:
    return sha256(b"balance:", mint, id_com)


def allowance_slot(mint: bytes, owner: bytes, spender: bytes) -> bytes:
    return sha256(b"allowance:", mint, owner, spender)


def meta_slot(mint: bytes) -> bytes:
    return sha256(b"mint-meta:", mint)


def erc20_index_slot(addr20: bytes) -> bytes:
    return sha256(b"erc20-index:", addr20)


def mint_id(authority: bytes, mint_seed: bytes) -> bytes:
    return sha256(b"mint:", authority, mint_seed)


def erc20_address(mint: bytes) -> bytes:
    check_len("mint", mint, 32)
    return sha256(b"erc20-addr:", mint)[12:]


# -- reads -------------------------------------------------------------------


def mint_meta(state: StateTree, mint: bytes) -> Optional[MintMeta]:
    raw = state.get(meta_slot(mint))
    return MintMeta.decode(raw) if raw is not None else None


def balance(state: StateTree, mint: bytes, id_com: bytes) -> int:
    return read_u64(state.get(balance_slot(mint, id_com)))


def allowance(state: StateTree, mint: bytes, owner: bytes, spender: bytes) -> int:
    return read_u64(state.get(allowance_slot(mint, owner, spender)))


def mint_for_erc20(state: StateTree, addr20: bytes) -> Optional[bytes]:
    return state.get(erc20_index_slot(addr20))


# -- writes ------------------------------------------------------------------


def create_mint(state: StateTree, authority: bytes, decimals: int, mint_seed: bytes) -> bytes:
    check_len("authority", authority, 32)
    if not 0 <= decimals <= 255:
        raise TokenError(f"decimals {decimals} out of uint8 range")
    mint = mint_id(authority, mint_seed)
    if state.get(meta_slot(mint)) is not None:
        raise MintExists(mint.hex())
    state.put(meta_slot(mint), MintMeta(0, decimals, authority).encode())
    state.put(erc20_index_slot(erc20_address(mint)), mint)
    return mint


def mint_to(state: StateTree, mint: bytes, caller: bytes, dest: bytes, amount: int) -> None:
    meta = mint_meta(state, mint)
    if meta is None:
        raise UnknownMint(mint.hex())
    if caller != meta.authority:
        raise NotAuthority("caller is not the mint authority")
    if meta.supply + amount > U64_MAX:
        raise SupplyOverflow(f"supply {meta.supply} + {amount} exceeds uint64")
    slot = balance_slot(mint, dest)
    state.put(meta_slot(mint), MintMeta(meta.supply + amount, meta.decimals, meta.authority).encode())
    state.put(slot, u64(read_u64(state.get(slot)) + amount))


def transfer(state: StateTree, mint: bytes, frm: bytes, to: bytes, amount: int) -> None:
    src = balance_slot(mint, frm)
    have = read_u64(state.get(src))
    if have < amount:
        raise InsufficientBalance(f"balance {have} < {amount}")
    if frm == to or amount == 0:
        return
    dst = balance_slot(mint, to)
    # balances are bounded by supply, which is itself a uint64
    state.put(src, u64(have - amount))
    state.put(dst, u64(read_u64(state.get(dst)) + amount))


def approve(state: StateTree, mint: bytes, owner: bytes, spender: bytes, amount: int) -> None:
    if not 0 <= amount <= U64_MAX:
        raise TokenError("allowance out of uint64 range")
    state.put(allowance_slot(mint, owner, spender), u64(amount))


def transfer_from(
    state: StateTree, mint: bytes, spender: bytes, owner: bytes, to: bytes, amount: int
) -> None:
    slot = allowance_slot(mint, owner, spender)
    allowed = read_u64(state.get(slot))
    if allowed < amount:
        raise AllowanceExceeded(f"allowance {allowed} < {amount}")
    have = balance(state, mint, owner)
    if have < amount:
        raise InsufficientBalance(f"balance {have} < {amount}")
    if amount:
        state.put(slot, u64(allowed - amount))
    transfer(state, mint, owner, to, amount)


# -- views -------------------------------------------------------------------


def erc20_balance_of(state: StateTree, mint: bytes, evm_addr: bytes) -> int:
    """balanceOf through the EVM reverse index; unknown addresses read as 0."""
    check_len("evm address", evm_addr, 20)
    id_com = resolve_evm(state, evm_addr)
    if id_com is None:
        return 0
    return balance(state, mint, id_com)


def abi_word(amount: int) -> bytes:
    return amount.to_bytes(32, "big")


# ATA -> (owner, mint). A cache of preimages: every entry is a pure function of
# its key, so sharing it between threads or runs cannot change any result.
_ata_aliases: dict[bytes, tuple[bytes, bytes]] = {}
_ata_lock = threading.Lock()


def spl_ata(owner: bytes, mint: bytes) -> bytes:
    check_len("owner", owner, 32)
    check_len("mint", mint, 32)
    ata = sha256(b"ata:", owner, SPL_PROGRAM_ID, mint)
    if ata not in _ata_aliases:
        with _ata_lock:
            _ata_aliases[ata] = (owner, mint)
    return ata


def resolve_ata(ata: bytes) -> Optional[tuple[bytes, bytes]]:
    return _ata_aliases.get(ata)


def spl_balance(state: StateTree, ata: bytes) -> int:
    alias = _ata_aliases.get(ata)
    if alias is None:
        return 0
    owner, mint = alias
    return balance(state, mint, owner)

