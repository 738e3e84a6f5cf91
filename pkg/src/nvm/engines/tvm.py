"""TVM as a thin front for the EVM engine.

A TVM transaction is rewritten (opcode 0x40..0x42 -> 0x10..0x12, Tron-namespace
addresses -> EVM-namespace addresses of the same identity) and handed to the
EVM engine unchanged. Address translation goes through the reverse index and
fails closed: an address with no recorded identity is an error.
"""

from __future__ import annotations

from .. import accounts
from ..common import ExecutionError, VmId
from ..identity import address_for
from ..state import Delta, StateTree
from ..tx import Receipt, Transaction
from . import payloads as P
from .base import Engine, UnresolvableAddress, WriteSet, GLOBAL
from .evm import ERC20_BALANCE_OF, EvmEngine, decode_erc20_calldata, erc20_calldata, is_contract_like
from .. import token

REMAP = {0x40: 0x10, 0x41: 0x11, 0x42: 0x12}


class UnmappedOpcode(ExecutionError):
    pass


def translate_address(view: StateTree, tron_addr: bytes) -> bytes:
    id_com = accounts.resolve_tron(view, tron_addr)
    if id_com is None:
        raise UnresolvableAddress(f"no identity for Tron address {tron_addr.hex()}")
    return address_for(VmId.EVM, id_com)


def _translate_program(view: StateTree, code: bytes) -> bytes:
    program = P.decode_program(code)
    out = []
    for ins in program:
        if isinstance(ins, P.TransferOp) and len(ins.to) == 20:
            ins = P.TransferOp(translate_address(view, ins.to), ins.amount)
        out.append(ins)
    return P.encode_program(out)


def remap(view: StateTree, tx: Transaction) -> Transaction:
    """The EVM transaction a TVM transaction stands for."""
    opcode = tx.payload[0]
    if opcode not in REMAP:
        raise UnmappedOpcode(f"{opcode:#04x} has no EVM counterpart")
    op = P.decode_evm(tx.payload, base=P.TVM_TRANSFER)
    if isinstance(op, P.EvmTransfer):
        payload = P.evm_transfer(translate_address(view, op.to), op.amount)
    elif isinstance(op, P.EvmDeploy):
        payload = P.evm_deploy(_translate_program(view, op.code))
    else:
        target, calldata = op.target, op.calldata
        if not is_contract_like(view, target):
            target = translate_address(view, target)
        elif token.mint_for_erc20(view, target) is not None:
            sel, addrs, amount = decode_erc20_calldata(calldata)
            addrs = [translate_address(view, a) for a in addrs]
            calldata = erc20_calldata(sel, *addrs) if sel == ERC20_BALANCE_OF else erc20_calldata(sel, *addrs, amount)
        payload = P.evm_call(target, calldata)
    return Transaction(payload, tx.auth, tx.context_tag)


class TvmEngine(Engine):
    vm_id = VmId.TVM

    def __init__(self, evm: EvmEngine):
        self.evm = evm

    def execute(self, state: StateTree, tx: Transaction, sender: bytes) -> tuple[Receipt, Delta]:
        try:
            evm_tx = remap(state, tx)
        except ExecutionError as exc:
            return Receipt.failure(self.vm_id, exc), Delta()
        receipt, delta = self.evm.execute(state, evm_tx, sender)
        receipt.vm = str(self.vm_id)
        return receipt, delta

    def write_set(self, tx: Transaction, sender: bytes, view: StateTree) -> WriteSet:
        if tx.payload[0] != P.TVM_TRANSFER:
            return GLOBAL
        op = P.decode_evm(tx.payload, base=P.TVM_TRANSFER)
        # the reverse-index entry is read during translation, so it is declared too
        return WriteSet(
            self.evm.write_set(remap(view, tx), sender, view).keys
            | {accounts.rev_tron_key(op.to)}
        )
