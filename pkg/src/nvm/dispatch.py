"""Opcode routing, the engine registry and per-transaction dispatch.

Each transaction runs inside one snapshot scope. Cross-VM requests emitted by
the engine are executed eagerly, in order, inside that same scope, so the
originating transaction and everything it triggered commit or roll back
together. Return values do not flow back to the caller.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Optional

from . import accounts
from .common import ExecutionError, NvmError, VmId
from .engines import BvmEngine, Engine, EvmEngine, NativeEngine, SvmEngine, TvmEngine
from .engines import payloads as P
from .identity import attestation_digest, verify_attestation
from .ingress import DEFAULT_CHAIN_DOMAIN, ReplayGuard, verify_raw
from .state import StateTree
from .tx import Attested, Block, CrossVmRequest, RawAuth, Receipt, Transaction, receipts_digest

DEFAULT_RANGES: dict[VmId, tuple[int, int]] = {
    VmId.NATIVE: (0x01, 0x0F),
    VmId.EVM: (0x10, 0x1F),
    VmId.SVM: (0x20, 0x2F),
    VmId.BVM: (0x30, 0x3F),
    VmId.TVM: (0x40, 0x4F),
}

# opcode used when the dispatcher synthesizes a call into a target VM
CALL_OPCODES = {VmId.EVM: P.EVM_CALL, VmId.SVM: P.SVM_INVOKE}

MAX_CROSS_VM_DEPTH = 4


class RangeConflict(NvmError, ValueError):
    pass


class BadConfig(NvmError, ValueError):
    pass


class UnknownOpcode(ExecutionError):
    pass


class AuthFailed(ExecutionError):
    pass


class InvalidTarget(ExecutionError):
    pass


class CrossVmFailed(ExecutionError):
    pass


@dataclass(frozen=True)
class OpcodeRange:
    lo: int
    hi: int

    def __post_init__(self) -> None:
        if not (0 <= self.lo <= 0xFF and 0 <= self.hi <= 0xFF):
            raise RangeConflict(f"range bounds must be bytes: {self.lo:#x}..{self.hi:#x}")
        if self.lo > self.hi:
            raise RangeConflict(f"malformed range {self.lo:#04x} > {self.hi:#04x}")
        if self.lo == 0:
            raise RangeConflict("opcode 0x00 is reserved")

    def __contains__(self, opcode: int) -> bool:
        return self.lo <= opcode <= self.hi

    def overlaps(self, other: "OpcodeRange") -> bool:
        return self.lo <= other.hi and other.lo <= self.hi

    def __str__(self) -> str:
        return f"{self.lo:#04x}-{self.hi:#04x}"


@dataclass
class BlockResult:
    receipts: list[Receipt]
    state_root: bytes
    batches: int = 0
    shared_count: int = 0
    fallback: bool = False

    @property
    def receipts_digest(self) -> bytes:
        return receipts_digest(self.receipts)


@dataclass
class _Authorized:
    sender: bytes
    tx: Transaction
    raw: Optional[RawAuth] = None


class Dispatcher:
    def __init__(self, chain_domain: int = DEFAULT_CHAIN_DOMAIN):
        self.chain_domain = chain_domain
        self.guard = ReplayGuard()
        self._table: list[Optional[str]] = [None] * 256
        self._ranges: dict[str, OpcodeRange] = {}
        self._engines: dict[str, Engine] = {}

    # -- registry ------------------------------------------------------------

    def register_engine(self, rng: OpcodeRange, engine: Engine) -> None:
        vm = str(engine.vm_id)
        if vm in self._engines:
            raise RangeConflict(f"{vm} already owns {self._ranges[vm]}")
        for other_vm, other in self._ranges.items():
            if rng.overlaps(other):
                raise RangeConflict(f"{rng} overlaps {other_vm} {other}")
        self._ranges[vm] = rng
        self._engines[vm] = engine
        for op in range(rng.lo, rng.hi + 1):
            self._table[op] = vm

    def route(self, opcode: int) -> Optional[str]:
        """Engine name owning ``opcode``, or None for the reject marker."""
        return self._table[opcode]

    def engine_for(self, vm: str) -> Engine:
        try:
            return self._engines[str(vm)]
        except KeyError:
            raise InvalidTarget(f"no engine registered for {vm}") from None

    @property
    def ranges(self) -> dict[str, OpcodeRange]:
        return dict(self._ranges)

    @classmethod
    def default(
        cls,
        chain_domain: int = DEFAULT_CHAIN_DOMAIN,
        ranges: Optional[dict[str, tuple[int, int]]] = None,
    ) -> "Dispatcher":
        """The five built-in engines on their canonical (or configured) ranges."""
        d = cls(chain_domain)
        evm = EvmEngine()
        engines = [NativeEngine(), evm, SvmEngine(), BvmEngine(), TvmEngine(evm)]
        overrides = {str(k): v for k, v in (ranges or {}).items()}
        unknown = set(overrides) - {str(vm) for vm in VmId}
        if unknown:
            raise BadConfig(f"opcode_ranges names unknown engines {sorted(unknown)}")
        for engine in engines:
            lo, hi = overrides.get(str(engine.vm_id), DEFAULT_RANGES[engine.vm_id])
            rng = OpcodeRange(lo, hi)
            lo0, _ = DEFAULT_RANGES[engine.vm_id]
            # payload decoders are fixed, so a moved range must still cover the engine's opcodes
            if lo0 not in rng:
                raise BadConfig(f"{engine.vm_id} range {rng} must include {lo0:#04x}")
            d.register_engine(rng, engine)
        return d

    @classmethod
    def from_config(cls, config: dict[str, Any]) -> "Dispatcher":
        ranges = {}
        for vm, bounds in config.get("opcode_ranges", {}).items():
            try:
                lo, hi = (int(b, 0) if isinstance(b, str) else int(b) for b in bounds)
            except (TypeError, ValueError):
                raise BadConfig(f"opcode_ranges.{vm} must be [lo, hi]") from None
            ranges[vm] = (lo, hi)
        return cls.default(int(config.get("chain_domain", DEFAULT_CHAIN_DOMAIN)), ranges)

    # -- authorization -------------------------------------------------------

    def authorize(self, state: StateTree, tx: Transaction) -> _Authorized:
        """Check the authorization envelope without writing state."""
        auth = tx.auth
        if isinstance(auth, Attested):
            key = accounts.get_auth_key(state, auth.id_com) if len(auth.id_com) == 32 else None
            if key is None:
                raise AuthFailed("no attestation key registered for sender")
            if not verify_attestation(key, attestation_digest(tx.payload), auth.attestation):
                raise AuthFailed("attestation does not match the payload")
            return _Authorized(auth.id_com, tx)
        if isinstance(auth, RawAuth):
            id_com, synthesized = verify_raw(
                auth.envelope, self.guard, self.chain_domain, tx.payload, record=False
            )
            return _Authorized(id_com, Transaction(synthesized.payload, auth, tx.context_tag), auth)
        raise AuthFailed("transaction carries no authorization")

    # -- execution -----------------------------------------------------------

    def dispatch_tx(self, state: StateTree, tx: Transaction) -> Receipt:
        if tx.payload and self.route(tx.opcode) is None:
            return Receipt.failure(None, UnknownOpcode(f"{tx.opcode:#04x}"))
        try:
            authed = self.authorize(state, tx)
        except ExecutionError as exc:
            return Receipt.failure(self.route(tx.opcode) if tx.payload else None, exc)
        tx = authed.tx
        vm = self.route(tx.opcode)
        if vm is None:
            return Receipt.failure(None, UnknownOpcode(f"{tx.opcode:#04x}"))
        engine = self._engines[vm]

        h = state.snapshot()
        mark = self.guard.mark()
        try:
            if authed.raw is not None:
                accounts.ensure_account(state, authed.sender)
            receipt, _ = engine.execute(state, tx, authed.sender)
            if receipt.success:
                self._drain(state, receipt, vm, 0)
                if authed.raw is not None:
                    self.guard.record(authed.raw.envelope, authed.sender)
        except ExecutionError as exc:
            receipt = Receipt.failure(vm, exc)
        if not receipt.success:
            state.rollback(h)
            self.guard.restore(mark)
            return receipt
        receipt.delta = state.take_delta(h)
        return receipt

    def _drain(self, state: StateTree, receipt: Receipt, origin_vm: str, depth: int) -> None:
        for req in receipt.cross_vm_requests:
            sub = self.execute_cross_vm(state, req, origin_vm, depth + 1)
            receipt.logs.append(b"xvm:" + sub.canonical())
            if not sub.success:
                err = sub.error
                raise CrossVmFailed(f"{req.target_vm} request failed: {err.code}: {err.message}")

    def execute_cross_vm(
        self, state: StateTree, req: CrossVmRequest, origin_vm: Optional[str] = None, depth: int = 1
    ) -> Receipt:
        """Run one request as a synthesized call in the target VM; returns its sub-receipt."""
        if state.live_snapshots == 0:
            raise NvmError("cross-VM requests run only inside an originating snapshot scope")
        if depth > MAX_CROSS_VM_DEPTH:
            raise CrossVmFailed(f"cross-VM nesting deeper than {MAX_CROSS_VM_DEPTH}")
        target = str(req.target_vm)
        if origin_vm is not None and target == str(origin_vm):
            raise InvalidTarget(f"request targets its own VM {target}")
        if target not in {str(vm) for vm in CALL_OPCODES}:
            raise InvalidTarget(f"{target} has no call entry point")
        engine = self.engine_for(target)
        if len(req.program) != 32:
            raise InvalidTarget("program id must be 32 bytes")
        if target == VmId.EVM:
            payload = P.evm_call(req.program[12:], req.data)
        else:
            payload = P.svm_invoke(req.program, req.data)
        h = state.snapshot()
        sub, _ = engine.execute(state, Transaction(payload), req.origin)
        try:
            if sub.success:
                self._drain(state, sub, target, depth)
        except ExecutionError as exc:
            sub = Receipt.failure(target, exc)
        if sub.success:
            state.discard(h)
        else:
            state.rollback(h)
        return sub

    def execute_block(self, state: StateTree, block: Block) -> BlockResult:
        self.guard.begin_slot(block.slot)
        receipts = [self.dispatch_tx(state, tx) for tx in block]
        return BlockResult(receipts, state.state_root(), batches=len(receipts), shared_count=0)


def config_from_file(path: str) -> dict[str, Any]:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise BadConfig(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise BadConfig(f"{path}: config must be a JSON object")
    return doc

