from __future__ import annotations

from .. import accounts, token
from ..common import ExecutionError, MalformedPayload, VmId, sha256, u64
from ..identity import address_for, verify_attestation
from ..state import StateTree
from ..tx import CrossVmRequest, Receipt, Transaction
from . import payloads as P
from .base import GLOBAL, Engine, ProgramHost, UnknownContract, WriteSet

SYSTEM_PROGRAM_ID = bytes(32)
SPL_PROGRAM_ID = token.SPL_PROGRAM_ID

SYSCALLS = ("ace_id_com", "ace_attest", "ace_cross_vm_call")

_SPL_OPS = (P.SplTransfer, P.CreateMint, P.MintTo, P.Approve, P.TransferFrom)


class AttestFailed(ExecutionError):
    pass


def program_id_for(deployer: bytes, nonce: int) -> bytes:
    return sha256(b"svm-code:", deployer, u64(nonce))


def program_code_key(program_id: bytes) -> bytes:
    return sha256(b"svm-program:", program_id)


def deploy_nonce_key(deployer: bytes) -> bytes:
    return sha256(b"svm-nonce:", deployer)


def storage_key(program_id: bytes, slot: bytes) -> bytes:
    return sha256(b"svm-storage:", program_id, slot)


class SvmEngine(Engine, ProgramHost):
    """SystemProgram transfers, the SPL view of the unified ledger, and stored programs.

    Invoke on SYSTEM_PROGRAM_ID or SPL_PROGRAM_ID treats the instruction data
    as the corresponding top-level payload, so built-in programs are reachable
    both directly and through cross-VM requests.
    """

    vm_id = VmId.SVM

    def run(self, state: StateTree, tx: Transaction, sender: bytes, receipt: Receipt) -> None:
        self.apply(state, P.decode_svm(tx.payload), sender, receipt)

    def apply(self, state: StateTree, op, sender: bytes, receipt: Receipt) -> None:
        if isinstance(op, P.SvmTransfer):
            self.op_transfer(state, sender, op.to, op.amount)
        elif isinstance(op, P.SplTransfer):
            token.transfer(state, op.mint, sender, op.to_owner, op.amount)
        elif isinstance(op, P.CreateMint):
            receipt.logs.append(token.create_mint(state, sender, op.decimals, op.seed))
        elif isinstance(op, P.MintTo):
            token.mint_to(state, op.mint, sender, op.dest, op.amount)
        elif isinstance(op, P.Approve):
            token.approve(state, op.mint, sender, op.spender, op.amount)
        elif isinstance(op, P.TransferFrom):
            token.transfer_from(state, op.mint, sender, op.owner, op.to, op.amount)
        elif isinstance(op, P.SvmDeploy):
            nonce = accounts.get_amount(state, deploy_nonce_key(sender))
            pid = program_id_for(sender, nonce)
            state.put(program_code_key(pid), op.code)
            accounts.set_amount(state, deploy_nonce_key(sender), nonce + 1)
            receipt.logs.append(pid)
        else:
            self.invoke(state, sender, op.program_id, op.data, receipt)

    def invoke(self, state: StateTree, sender: bytes, program_id: bytes, data: bytes, receipt: Receipt) -> None:
        if program_id in (SYSTEM_PROGRAM_ID, SPL_PROGRAM_ID):
            if not data:
                raise MalformedPayload("empty instruction data")
            inner = P.decode_svm(data)
            allowed = (P.SvmTransfer,) if program_id == SYSTEM_PROGRAM_ID else _SPL_OPS
            if not isinstance(inner, allowed):
                raise MalformedPayload(f"instruction {data[0]:#04x} not handled by this program")
            self.apply(state, inner, sender, receipt)
            return
        code = state.get(program_code_key(program_id))
        if code is None:
            raise UnknownContract(f"no program {program_id.hex()}")
        self.run_program(state, code, program_id, sender, receipt)

    # -- program hooks -------------------------------------------------------

    def storage_key(self, storage_ns: bytes, slot: bytes) -> bytes:
        return storage_key(storage_ns, slot)

    def op_transfer(self, state, sender, to, amount) -> None:
        if len(to) != 32:
            raise MalformedPayload("SVM transfer target must be 32 bytes")
        accounts.move_amount(
            state,
            accounts.svm_balance_key(address_for(VmId.SVM, sender)),
            accounts.svm_balance_key(to),
            amount,
        )

    def op_syscall(self, state, sender, name, data, receipt) -> None:
        if name == "ace_id_com":
            receipt.logs.append(sender)
        elif name == "ace_attest":
            if len(data) != 64:
                raise MalformedPayload("ace_attest expects digest(32) || mac(32)")
            key = accounts.get_auth_key(state, sender)
            if key is None or not verify_attestation(key, data[:32], data[32:]):
                raise AttestFailed("attestation credential rejected")
        elif name == "ace_cross_vm_call":
            if len(data) < 32:
                raise MalformedPayload("ace_cross_vm_call expects a 32-byte contract id")
            receipt.cross_vm_requests.append(CrossVmRequest(str(VmId.EVM), data[:32], data[32:], sender))
        else:
            raise MalformedPayload(f"unknown syscall {name!r}")

    def write_set(self, tx: Transaction, sender: bytes, view: StateTree) -> WriteSet:
        op = P.decode_svm(tx.payload)
        if isinstance(op, P.SvmTransfer):
            return WriteSet.of(
                accounts.svm_balance_key(address_for(VmId.SVM, sender)),
                accounts.svm_balance_key(op.to),
            )
        if isinstance(op, P.SplTransfer):
            return WriteSet.of(
                token.balance_slot(op.mint, sender), token.balance_slot(op.mint, op.to_owner)
            )
        if isinstance(op, P.MintTo):
            return WriteSet.of(token.meta_slot(op.mint), token.balance_slot(op.mint, op.dest))
        if isinstance(op, P.Approve):
            return WriteSet.of(token.allowance_slot(op.mint, sender, op.spender))
        if isinstance(op, P.TransferFrom):
            return WriteSet.of(
                token.allowance_slot(op.mint, op.owner, sender),
                token.balance_slot(op.mint, op.owner),
                token.balance_slot(op.mint, op.to),
            )
        return GLOBAL
