from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from ..common import ExecutionError, MalformedPayload
from ..state import Delta, StateTree
from ..tx import Receipt, Transaction
from . import payloads as P


class UnknownContract(ExecutionError):
    pass


class UnresolvableAddress(ExecutionError):
    pass


class ProgramFailed(ExecutionError):
    pass


@dataclass(frozen=True)
class WriteSet:
    """Keys a transaction may touch, or ``keys=None`` for the global marker."""

    keys: Optional[frozenset[bytes]]

    @property
    def is_global(self) -> bool:
        return self.keys is None

    @classmethod
    def of(cls, *keys: bytes) -> "WriteSet":
        return cls(frozenset(keys))

    def __repr__(self) -> str:
        if self.keys is None:
            return "WriteSet(GLOBAL)"
        return f"WriteSet({len(self.keys)} keys)"


GLOBAL = WriteSet(None)


class Engine:
    """A pluggable VM.

    ``execute`` runs one transaction for an already-authenticated ``sender``
    inside its own snapshot scope and returns the receipt plus net writes.
    Subclasses implement ``run`` and raise ExecutionError on failure.
    """

    vm_id: str = ""

    def execute(self, state: StateTree, tx: Transaction, sender: bytes) -> tuple[Receipt, Delta]:
        h = state.snapshot()
        receipt = Receipt(success=True, vm=str(self.vm_id))
        try:
            self.run(state, tx, sender, receipt)
        except ExecutionError as exc:
            state.rollback(h)
            return Receipt.failure(self.vm_id, exc), Delta()
        return receipt, state.take_delta(h)

    def run(self, state: StateTree, tx: Transaction, sender: bytes, receipt: Receipt) -> None:
        raise NotImplementedError

    def write_set(self, tx: Transaction, sender: bytes, view: StateTree) -> WriteSet:
        return GLOBAL

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.vm_id}>"


class ProgramHost:
    """Interpreter for stored mini-programs; engines override the hooks they support."""

    def run_program(
        self, state: StateTree, code: bytes, storage_ns: bytes, sender: bytes, receipt: Receipt
    ) -> None:
        for ins in P.decode_program(code):
            if isinstance(ins, P.WriteOp):
                state.put(self.storage_key(storage_ns, ins.key), ins.value)
            elif isinstance(ins, P.EmitLogOp):
                receipt.logs.append(ins.data)
            elif isinstance(ins, P.FailOp):
                raise ProgramFailed("program executed FAIL")
            elif isinstance(ins, P.TransferOp):
                self.op_transfer(state, sender, ins.to, ins.amount)
            elif isinstance(ins, P.CallPreOp):
                self.op_callpre(state, sender, ins.address, ins.data, receipt)
            elif isinstance(ins, P.SyscallOp):
                self.op_syscall(state, sender, ins.name, ins.data, receipt)

    def storage_key(self, storage_ns: bytes, slot: bytes) -> bytes:
        raise NotImplementedError

    def op_transfer(self, state, sender, to, amount) -> None:
        raise MalformedPayload("TRANSFER is not available on this VM")

    def op_callpre(self, state, sender, address, data, receipt) -> None:
        raise MalformedPayload("CALLPRE is not available on this VM")

    def op_syscall(self, state, sender, name, data, receipt) -> None:
        raise MalformedPayload("SYSCALL is not available on this VM")
