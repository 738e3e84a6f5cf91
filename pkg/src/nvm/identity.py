"""Per-VM address derivation from one 32-byte identity commitment.

Also: legacy raw-chain identity mapping, HKDF key streams and HMAC attestations.
Every function here is pure.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .common import BadLength, UnknownVm, VmId, check_len, sha256

ID_LEN = 32

# (tag, address length); native has no tag because its address is id_com itself
ADDRESS_TAGS: dict[VmId, tuple[bytes, int]] = {
    VmId.EVM: (b"evm:", 20),
    VmId.SVM: (b"svm:", 32),
    VmId.BVM: (b"bvm:", 32),
    VmId.TVM: (b"tron:", 20),
}
ADDRESS_LENGTHS = {VmId.NATIVE: 32, **{vm: n for vm, (_, n) in ADDRESS_TAGS.items()}}

LEGACY_PREFIXES: dict[str, bytes] = {
    "evm": b"legacy_evm:",
    "sol": b"legacy_sol:",
    "btc": b"legacy_btc:",
    "tron": b"legacy_tron:",
}
# accepted raw-address lengths per chain; btc takes a key hash or a compressed/x-only key
LEGACY_LENGTHS: dict[str, tuple[int, ...]] = {
    "evm": (20,),
    "tron": (20,),
    "sol": (32,),
    "btc": tuple(range(20, 34)),
}


def derive_vm_address(tag: bytes, id_com: bytes, out_len: int) -> bytes:
    """Last ``out_len`` bytes of SHA-256(tag || id_com)."""
    if not tag:
        raise ValueError("address tag must be non-empty")
    if out_len not in (20, 32):
        raise BadLength(f"unsupported address length {out_len}")
    check_len("id_com", id_com, ID_LEN)
    return sha256(tag, id_com)[32 - out_len:]


def address_for(vm: VmId | str, id_com: bytes) -> bytes:
    try:
        vm = VmId(vm)
    except ValueError:
        raise UnknownVm(f"no address scheme for VM {vm!r}") from None
    if vm is VmId.NATIVE:
        return check_len("id_com", id_com, ID_LEN)
    tag, n = ADDRESS_TAGS[vm]
    return derive_vm_address(tag, id_com, n)


def all_addresses(id_com: bytes) -> dict[VmId, bytes]:
    return {vm: address_for(vm, id_com) for vm in VmId}


def ace_id_from_evm(addr: bytes) -> bytes:
    """One-way identity for an EVM address; does not reveal the original id_com."""
    check_len("evm address", addr, 20)
    return sha256(b"ace_from_evm:", addr)


def legacy_id_com(chain: str, addr_or_pubkey: bytes) -> bytes:
    try:
        prefix = LEGACY_PREFIXES[chain]
    except KeyError:
        raise UnknownVm(f"unknown legacy chain {chain!r}") from None
    check_len(f"{chain} address", addr_or_pubkey, *LEGACY_LENGTHS[chain])
    return sha256(prefix, addr_or_pubkey)


@dataclass(frozen=True)
class KeyStream:
    index: int
    key_material: bytes


def derive_key_stream(rev: bytes, info: bytes, salt: bytes, index: int = 0) -> KeyStream:
    """32 bytes of HKDF-SHA256 output; an empty salt means the all-zero default salt.

    REV is nominally 32 bytes but any input keying material is accepted.
    """
    okm = HKDF(algorithm=hashes.SHA256(), length=32, salt=salt or None, info=info).derive(rev)
    return KeyStream(index, okm)


def attestation_digest(payload: bytes) -> bytes:
    return sha256(payload)


def make_attestation(key: bytes, tx_digest: bytes) -> bytes:
    return hmac.new(key, tx_digest, hashlib.sha256).digest()


def verify_attestation(key: bytes, tx_digest: bytes, att: bytes) -> bool:
    return hmac.compare_digest(make_attestation(key, tx_digest), att)
