"""Raw-chain ingress: transactions signed by legacy wallets.

An envelope carries a structured body instead of RLP/protobuf/PSBT wire data.
The signed message is ``canonical_bytes(envelope)``: one chain tag byte, then
every field of that chain's fixed field list as ``u32 length || bytes``
(integers are 8-byte big-endian). Signatures are over SHA-256 of that message.

Identity is ``legacy_id_com(chain, address-or-pubkey)``. The transaction the
envelope stands for is synthesized from its fields, so the signature covers
exactly what executes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any, Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from ecdsa import SECP256k1, BadSignatureError, SigningKey, VerifyingKey
from ecdsa.ellipticcurve import INFINITY, PointJacobi
from ecdsa.errors import MalformedPointError
from ecdsa.util import sigdecode_string, sigencode_strings_canonize

from .common import ExecutionError, sha256, u64
from .engines import payloads as P
from .identity import legacy_id_com
from .tx import FormatError, RawAuth, Transaction

CHAINS = ("evm", "sol", "btc", "tron")
CHAIN_TAGS = {"evm": 1, "sol": 2, "btc": 3, "tron": 4}
CHAIN_OF_TAG = {v: k for k, v in CHAIN_TAGS.items()}

# "nVM" as a big-endian integer; configurable per dispatcher
DEFAULT_CHAIN_DOMAIN = 0x6E564D

SOL_SLOT_WINDOW = 150

# (name, kind, length); kind "int" fields are u64
_ADDR20 = ("recipient", "bytes", 20)
_ADDR32 = ("recipient", "bytes", 32)
_AMOUNT = ("amount", "int", 8)
_NONCE = ("nonce", "int", 8)
_DOMAIN = ("chain_domain", "int", 8)
FIELD_LAYOUT: dict[str, tuple[tuple[str, str, int], ...]] = {
    "evm": (_ADDR20, _AMOUNT, _NONCE, _DOMAIN),
    "tron": (_ADDR20, _AMOUNT, _NONCE, _DOMAIN),
    # for sol, "nonce" is the slot the envelope was built against
    "sol": (_ADDR32, _AMOUNT, _NONCE, _DOMAIN),
    # btc spends one outpoint (txid || vout4) and may return change to the signer
    "btc": (_ADDR32, _AMOUNT, ("change", "int", 8), ("outpoint", "bytes", 36), _DOMAIN),
}

_N = SECP256k1.order
_P = SECP256k1.curve.p()
_G = SECP256k1.generator


class IngressError(ExecutionError):
    pass


class BadSignature(IngressError):
    pass


class ReplayDetected(IngressError):
    pass


class MalformedEnvelope(IngressError):
    pass


class Unsupported(IngressError):
    pass


@dataclass(frozen=True)
class RawTxEnvelope:
    chain: str
    fields: dict[str, Any] = field(hash=False)
    signer_material: bytes = b""
    signature: bytes = b""
    scheme: str = "ecdsa"

    def value(self, name: str) -> Any:
        try:
            return self.fields[name]
        except KeyError:
            raise MalformedEnvelope(f"{self.chain} envelope is missing field {name!r}") from None

    def to_json(self) -> dict[str, Any]:
        return {
            "chain": self.chain,
            "fields": {k: (v.hex() if isinstance(v, bytes) else v) for k, v in self.fields.items()},
            "signer_material": self.signer_material.hex(),
            "signature": self.signature.hex(),
            "scheme": self.scheme,
        }

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "RawTxEnvelope":
        try:
            chain = doc["chain"]
            if chain not in FIELD_LAYOUT:
                raise FormatError(f"unknown chain {chain!r}")
            raw_fields = doc["fields"]
            fields: dict[str, Any] = {}
            for name, kind, _n in FIELD_LAYOUT[chain]:
                if name not in raw_fields:
                    continue
                v = raw_fields[name]
                if kind == "int":
                    if not isinstance(v, int) or isinstance(v, bool):
                        raise FormatError(f"field {name!r} must be an integer")
                    fields[name] = v
                else:
                    fields[name] = bytes.fromhex(v)
            extra = set(raw_fields) - set(fields)
            if extra:
                raise FormatError(f"unexpected field(s) {sorted(extra)}")
            return cls(
                chain,
                fields,
                bytes.fromhex(doc.get("signer_material", "")),
                bytes.fromhex(doc.get("signature", "")),
                doc.get("scheme", "ecdsa"),
            )
        except FormatError:
            raise
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise FormatError(f"bad envelope: {exc!r}") from None


# -- canonical encoding ------------------------------------------------------


def canonical_bytes(env: RawTxEnvelope) -> bytes:
    layout = FIELD_LAYOUT.get(env.chain)
    if layout is None:
        raise MalformedEnvelope(f"unknown chain {env.chain!r}")
    out = bytearray([CHAIN_TAGS[env.chain]])
    for name, kind, n in layout:
        v = env.value(name)
        if kind == "int":
            if not isinstance(v, int) or not 0 <= v < 1 << 64:
                raise MalformedEnvelope(f"field {name!r} must be a u64")
            raw = u64(v)
        else:
            if not isinstance(v, bytes) or len(v) != n:
                raise MalformedEnvelope(f"field {name!r} must be {n} bytes")
            raw = v
        out += len(raw).to_bytes(4, "big") + raw
    return bytes(out)


def decode_canonical(data: bytes) -> tuple[str, dict[str, Any]]:
    """Inverse of canonical_bytes (signature parts excluded)."""
    if not data or data[0] not in CHAIN_OF_TAG:
        raise MalformedEnvelope("unknown chain tag")
    chain = CHAIN_OF_TAG[data[0]]
    r = P.Reader(data, 1)
    fields: dict[str, Any] = {}
    try:
        for name, kind, n in FIELD_LAYOUT[chain]:
            raw = r.blob()
            if len(raw) != n:
                raise MalformedEnvelope(f"field {name!r} has {len(raw)} bytes, expected {n}")
            fields[name] = int.from_bytes(raw, "big") if kind == "int" else raw
        r.done()
    except P.MalformedPayload as exc:
        raise MalformedEnvelope(str(exc)) from None
    return chain, fields


def signing_digest(env: RawTxEnvelope) -> bytes:
    return sha256(canonical_bytes(env))


# -- secp256k1 helpers -------------------------------------------------------


def evm_style_address(pub64: bytes) -> bytes:
    """Last 20 bytes of SHA-256 over the 64-byte uncompressed key (SHA-256 stands in for Keccak)."""
    return sha256(pub64)[12:]


# pure in its arguments; the cache spares re-verifying the same envelope per mode
@lru_cache(maxsize=4096)
def recover_pubkey(digest: bytes, r: int, s: int, recid: int) -> Optional[bytes]:
    """Uncompressed (x || y) public key for a recoverable signature, or None.

    Q = r^-1 (s*R - e*G) where R is the curve point with x = r and y parity = recid.
    """
    if not (1 <= r < _N and 1 <= s < _N) or recid not in (0, 1):
        return None
    alpha = (pow(r, 3, _P) + 7) % _P
    beta = pow(alpha, (_P + 1) // 4, _P)
    if beta * beta % _P != alpha:
        return None
    y = beta if beta % 2 == recid else _P - beta
    R = PointJacobi(SECP256k1.curve, r, y, 1, _N)
    e = int.from_bytes(digest, "big") % _N
    r_inv = pow(r, -1, _N)
    Q = R.mul_add(s * r_inv % _N, _G, (-e * r_inv) % _N)
    if Q == INFINITY:
        return None
    return Q.x().to_bytes(32, "big") + Q.y().to_bytes(32, "big")


def _split_recoverable(sig: bytes) -> tuple[int, int, int]:
    if len(sig) != 65:
        raise BadSignature("recoverable signature must be 65 bytes (r || s || v)")
    r = int.from_bytes(sig[:32], "big")
    s = int.from_bytes(sig[32:64], "big")
    v = sig[64]
    if v >= 27:
        v -= 27
    if s > _N // 2:
        raise BadSignature("high-s signature")
    return r, s, v


def _verify_evm_style(env: RawTxEnvelope, digest: bytes) -> bytes:
    if len(env.signer_material) != 20:
        raise MalformedEnvelope("signer_material must be the 20-byte sender address")
    r, s, v = _split_recoverable(env.signature)
    pub = recover_pubkey(digest, r, s, v)
    if pub is None or evm_style_address(pub) != env.signer_material:
        raise BadSignature("recovered key does not match the sender address")
    return env.signer_material


def _verify_sol(env: RawTxEnvelope, digest: bytes) -> bytes:
    if len(env.signer_material) != 32 or len(env.signature) != 64:
        raise BadSignature("Ed25519 needs a 32-byte key and a 64-byte signature")
    try:
        Ed25519PublicKey.from_public_bytes(env.signer_material).verify(env.signature, digest)
    except (InvalidSignature, ValueError):
        raise BadSignature("Ed25519 verification failed") from None
    return env.signer_material


def _verify_btc(env: RawTxEnvelope, digest: bytes) -> bytes:
    if env.scheme == "schnorr":
        raise Unsupported("Schnorr/Taproot spends are not implemented")
    if env.scheme != "ecdsa":
        raise MalformedEnvelope(f"unknown btc scheme {env.scheme!r}")
    if len(env.signer_material) != 33 or len(env.signature) != 64:
        raise BadSignature("btc needs a 33-byte compressed key and a 64-byte r || s signature")
    if int.from_bytes(env.signature[32:], "big") > _N // 2:
        raise BadSignature("high-s signature")
    try:
        vk = VerifyingKey.from_string(env.signer_material, curve=SECP256k1)
        vk.verify_digest(env.signature, digest, sigdecode=sigdecode_string)
    except (BadSignatureError, MalformedPointError, AssertionError, ValueError):
        raise BadSignature("ECDSA verification failed") from None
    return env.signer_material


_VERIFIERS = {"evm": _verify_evm_style, "tron": _verify_evm_style, "sol": _verify_sol, "btc": _verify_btc}


# -- replay protection -------------------------------------------------------


class ReplayGuard:
    """Per-chain replay state, with an undo log so a failed transaction leaves no trace.

    evm/tron: the envelope nonce must equal the identity's expected nonce.
    sol: the envelope slot must lie within SOL_SLOT_WINDOW of the current slot,
    and a signature is accepted once per envelope slot.
    btc: an outpoint is accepted once.
    """

    def __init__(self) -> None:
        self.slot = 0
        self._nonces: dict[bytes, int] = {}
        self._sol: dict[int, set[bytes]] = {}
        self._spent: set[bytes] = set()
        self._undo: list[tuple] = []

    def begin_slot(self, slot: int) -> None:
        if slot == self.slot:
            return
        self.slot = slot
        for old in [s for s in self._sol if s < slot - SOL_SLOT_WINDOW]:
            del self._sol[old]
        self._undo.clear()

    def expected_nonce(self, id_com: bytes) -> int:
        return self._nonces.get(id_com, 0)

    def check(self, env: RawTxEnvelope, id_com: bytes) -> None:
        if env.chain in ("evm", "tron"):
            want = self.expected_nonce(id_com)
            if env.value("nonce") != want:
                raise ReplayDetected(f"nonce {env.value('nonce')} != expected {want}")
        elif env.chain == "sol":
            slot = env.value("nonce")
            if not self.slot - SOL_SLOT_WINDOW <= slot <= self.slot:
                raise ReplayDetected(f"slot {slot} outside the window ending at {self.slot}")
            if env.signature in self._sol.get(slot, ()):
                raise ReplayDetected("signature already seen in this slot")
        elif env.chain == "btc":
            if env.value("outpoint") in self._spent:
                raise ReplayDetected("outpoint already spent")

    def record(self, env: RawTxEnvelope, id_com: bytes) -> None:
        if env.chain in ("evm", "tron"):
            self._undo.append(("nonce", id_com, self._nonces.get(id_com)))
            self._nonces[id_com] = self.expected_nonce(id_com) + 1
        elif env.chain == "sol":
            slot = env.value("nonce")
            self._sol.setdefault(slot, set()).add(env.signature)
            self._undo.append(("sol", slot, env.signature))
        elif env.chain == "btc":
            self._spent.add(env.value("outpoint"))
            self._undo.append(("btc", env.value("outpoint")))

    def mark(self) -> int:
        return len(self._undo)

    def restore(self, mark: int) -> None:
        while len(self._undo) > mark:
            entry = self._undo.pop()
            if entry[0] == "nonce":
                _, id_com, prev = entry
                if prev is None:
                    self._nonces.pop(id_com, None)
                else:
                    self._nonces[id_com] = prev
            elif entry[0] == "sol":
                seen = self._sol[entry[1]]
                seen.discard(entry[2])
                if not seen:
                    del self._sol[entry[1]]
            else:
                self._spent.discard(entry[1])

    def snapshot_state(self) -> tuple:
        """Comparable view of the guard contents (for tests and diagnostics)."""
        return (
            self.slot,
            tuple(sorted(self._nonces.items())),
            tuple(sorted((s, tuple(sorted(sigs))) for s, sigs in self._sol.items())),
            tuple(sorted(self._spent)),
        )


# -- verification ------------------------------------------------------------


def synthesize_payload(env: RawTxEnvelope, id_com: bytes) -> bytes:
    if env.chain == "evm":
        return P.evm_transfer(env.value("recipient"), env.value("amount"))
    if env.chain == "tron":
        return P.evm_transfer(env.value("recipient"), env.value("amount"), opcode=P.TVM_TRANSFER)
    if env.chain == "sol":
        return P.svm_transfer(env.value("recipient"), env.value("amount"))
    outpoint = env.value("outpoint")
    outputs = [(env.value("recipient"), env.value("amount"))]
    if env.value("change"):
        outputs.append((id_com, env.value("change")))
    return P.utxo_transfer([(outpoint[:32], int.from_bytes(outpoint[32:], "big"))], outputs)


def verify_raw(
    env: RawTxEnvelope,
    guard: ReplayGuard,
    chain_domain: int = DEFAULT_CHAIN_DOMAIN,
    payload: bytes = b"",
    record: bool = True,
) -> tuple[bytes, Transaction]:
    """Verify an envelope and return (sender IdCom, routed transaction).

    Every check runs before the guard is touched. With ``record=False`` the
    guard is only consulted; the dispatcher records after the transaction
    commits so that a failed execution does not consume the nonce/signature.
    """
    if env.chain not in FIELD_LAYOUT:
        raise MalformedEnvelope(f"unknown chain {env.chain!r}")
    digest = signing_digest(env)
    if env.value("chain_domain") != chain_domain:
        raise MalformedEnvelope(f"chain domain {env.value('chain_domain')} != {chain_domain}")
    signer = _VERIFIERS[env.chain](env, digest)
    id_com = legacy_id_com(env.chain, signer)
    synthesized = synthesize_payload(env, id_com)
    if payload and payload != synthesized:
        raise MalformedEnvelope("payload does not match the signed envelope")
    guard.check(env, id_com)
    if record:
        guard.record(env, id_com)
    return id_com, Transaction(synthesized, RawAuth(env))


# -- signing (wallet side; used by tests, the workload generator and the CLI) --


def _secp_key(secret: bytes) -> SigningKey:
    return SigningKey.from_string(secret, curve=SECP256k1)


def secp_address(secret: bytes) -> bytes:
    return evm_style_address(_secp_key(secret).get_verifying_key().to_string())


def btc_pubkey(secret: bytes) -> bytes:
    return _secp_key(secret).get_verifying_key().to_string("compressed")


def sol_pubkey(secret: bytes) -> bytes:
    from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

    return Ed25519PrivateKey.from_private_bytes(secret).public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


def sign_evm(secret: bytes, fields: dict[str, Any], chain: str = "evm") -> RawTxEnvelope:
    sk = _secp_key(secret)
    pub = sk.get_verifying_key().to_string()
    env = RawTxEnvelope(chain, dict(fields), evm_style_address(pub))
    digest = signing_digest(env)
    r_b, s_b = sk.sign_digest_deterministic(digest, sigencode=sigencode_strings_canonize)
    r, s = int.from_bytes(r_b, "big"), int.from_bytes(s_b, "big")
    for recid in (0, 1):
        if recover_pubkey(digest, r, s, recid) == pub:
            return replace(env, signature=r_b + s_b + bytes([recid]))
    raise RuntimeError("no recovery id reproduces the signing key")


def sign_tron(secret: bytes, fields: dict[str, Any]) -> RawTxEnvelope:
    return sign_evm(secret, fields, chain="tron")


def sign_sol(secret: bytes, fields: dict[str, Any]) -> RawTxEnvelope:
    env = RawTxEnvelope("sol", dict(fields), sol_pubkey(secret))
    sig = Ed25519PrivateKey.from_private_bytes(secret).sign(signing_digest(env))
    return replace(env, signature=sig)


def sign_btc(secret: bytes, fields: dict[str, Any]) -> RawTxEnvelope:
    sk = _secp_key(secret)
    env = RawTxEnvelope("btc", dict(fields), btc_pubkey(secret))
    r_b, s_b = sk.sign_digest_deterministic(signing_digest(env), sigencode=sigencode_strings_canonize)
    return replace(env, signature=r_b + s_b)
