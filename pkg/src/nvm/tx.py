"""Transactions, receipts, blocks and their JSON forms."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Optional, Union

from .common import NvmError
from .state import Delta

if TYPE_CHECKING:
    from .ingress import RawTxEnvelope

CONTEXT_TAG_LEN = 16


class FormatError(NvmError, ValueError):
    """A block, transaction or envelope document could not be parsed."""


@dataclass(frozen=True)
class Attested:
    id_com: bytes
    attestation: bytes


@dataclass(frozen=True)
class RawAuth:
    envelope: "RawTxEnvelope"


Auth = Union[Attested, RawAuth]


@dataclass(frozen=True)
class Transaction:
    """``payload[0]`` is the routing opcode.

    Raw-ingress transactions may leave ``payload`` empty; the dispatcher then
    synthesizes it from the signed envelope. ``auth=None`` marks a transaction
    the dispatcher built itself (cross-VM sub-calls) and is never accepted
    from outside.
    """

    payload: bytes
    auth: Optional[Auth] = None
    context_tag: Optional[bytes] = None

    def __post_init__(self) -> None:
        if not self.payload and not isinstance(self.auth, RawAuth):
            raise FormatError("transaction payload must be non-empty")
        if self.context_tag is not None and len(self.context_tag) != CONTEXT_TAG_LEN:
            raise FormatError(f"context tag must be {CONTEXT_TAG_LEN} bytes")

    @property
    def opcode(self) -> Optional[int]:
        return self.payload[0] if self.payload else None

    @property
    def claimed_sender(self) -> Optional[bytes]:
        return self.auth.id_com if isinstance(self.auth, Attested) else None

    def to_json(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"payload": self.payload.hex()}
        if isinstance(self.auth, Attested):
            doc["auth"] = {
                "type": "attested",
                "id_com": self.auth.id_com.hex(),
                "attestation": self.auth.attestation.hex(),
            }
        elif isinstance(self.auth, RawAuth):
            doc["auth"] = {"type": "raw", "envelope": self.auth.envelope.to_json()}
        if self.context_tag is not None:
            doc["context_tag"] = self.context_tag.hex()
        return doc

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "Transaction":
        from .ingress import RawTxEnvelope

        try:
            payload = bytes.fromhex(doc.get("payload", ""))
            auth_doc = doc.get("auth")
            auth: Optional[Auth] = None
            if auth_doc is not None:
                kind = auth_doc["type"]
                if kind == "attested":
                    auth = Attested(
                        bytes.fromhex(auth_doc["id_com"]), bytes.fromhex(auth_doc["attestation"])
                    )
                elif kind == "raw":
                    auth = RawAuth(RawTxEnvelope.from_json(auth_doc["envelope"]))
                else:
                    raise FormatError(f"unknown auth type {kind!r}")
            tag = doc.get("context_tag")
            return cls(payload, auth, bytes.fromhex(tag) if tag else None)
        except FormatError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad transaction: {exc!r}") from None


@dataclass(frozen=True)
class CrossVmRequest:
    target_vm: str
    program: bytes
    data: bytes
    origin: bytes

    def to_json(self) -> dict[str, Any]:
        return {
            "target_vm": str(self.target_vm),
            "program": self.program.hex(),
            "data": self.data.hex(),
            "origin": self.origin.hex(),
        }


@dataclass(frozen=True)
class ErrorInfo:
    code: str
    message: str = ""


@dataclass
class Receipt:
    success: bool
    vm: Optional[str]
    error: Optional[ErrorInfo] = None
    logs: list[bytes] = field(default_factory=list)
    cross_vm_requests: list[CrossVmRequest] = field(default_factory=list)
    # net state writes of the whole transaction; not part of the serialized form
    delta: Delta = field(default_factory=Delta, compare=False, repr=False)

    @classmethod
    def failure(cls, vm: Optional[str], exc: BaseException | str, message: str = "") -> "Receipt":
        if isinstance(exc, NvmError):
            info = ErrorInfo(exc.code, str(exc))
        elif isinstance(exc, BaseException):
            info = ErrorInfo(type(exc).__name__, str(exc))
        else:
            info = ErrorInfo(exc, message)
        return cls(success=False, vm=None if vm is None else str(vm), error=info)

    def to_json(self) -> dict[str, Any]:
        return {
            "success": self.success,
            "vm": self.vm,
            "error": None if self.error is None else {"code": self.error.code, "message": self.error.message},
            "logs": [log.hex() for log in self.logs],
            "cross_vm_requests": [r.to_json() for r in self.cross_vm_requests],
            "gas_used": 0,
        }

    def canonical(self) -> bytes:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")).encode()


def receipts_digest(receipts: list[Receipt]) -> bytes:
    h = hashlib.sha256()
    for r in receipts:
        h.update(r.canonical())
        h.update(b"\n")
    return h.digest()


@dataclass
class Block:
    transactions: list[Transaction]
    slot: int = 0

    def __len__(self) -> int:
        return len(self.transactions)

    def __iter__(self):
        return iter(self.transactions)

    def to_json(self) -> dict[str, Any]:
        return {"slot": self.slot, "transactions": [tx.to_json() for tx in self.transactions]}

    @classmethod
    def from_json(cls, doc: Any) -> "Block":
        if isinstance(doc, list):
            doc = {"transactions": doc}
        if not isinstance(doc, dict) or not isinstance(doc.get("transactions"), list):
            raise FormatError("block must be a list of transactions or {'transactions': [...]}")
        txs = []
        for i, item in enumerate(doc["transactions"]):
            try:
                txs.append(Transaction.from_json(item))
            except FormatError as exc:
                raise FormatError(f"transactions[{i}]: {exc}") from None
        slot = doc.get("slot", 0)
        if not isinstance(slot, int) or slot < 0:
            raise FormatError("slot must be a non-negative integer")
        return cls(txs, slot)
