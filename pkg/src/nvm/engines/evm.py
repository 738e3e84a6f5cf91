"""Mini EVM: namespaced value transfers, stored mini-programs, precompiles, ERC-20 views.

Contract calls resolve in this order: precompile address, ERC-20 address of a
known mint, deployed contract. Anything else is UnknownContract.
"""

from __future__ import annotations

from typing import Optional

from .. import accounts, token
from ..common import VM_CODES, ExecutionError, MalformedPayload, VmId, sha256, u64
from ..identity import address_for
from ..state import StateTree
from ..tx import CrossVmRequest, Receipt, Transaction
from . import payloads as P
from .base import GLOBAL, Engine, ProgramHost, UnknownContract, UnresolvableAddress, WriteSet

PRECOMPILE_FIRST = 0x0100
PRECOMPILE_LAST = 0x0107
CROSS_VM_CALL = 0x0106
RESOLVE_SVM_ADDR = 0x0107

PRECOMPILE_NAMES = {
    0x0100: "id_com_verify",
    0x0101: "context_derive",
    0x0102: "admin_factor_check",
    0x0103: "zkace_batch_verify",
    0x0104: "multisig_derive",
    0x0105: "multisig_verify",
    0x0106: "cross_vm_call",
    0x0107: "resolve_svm_addr",
}

# ERC-20 calldata selectors (one byte, followed by fixed-width operands)
ERC20_TRANSFER = 0x01
ERC20_APPROVE = 0x02
ERC20_TRANSFER_FROM = 0x03
ERC20_BALANCE_OF = 0x04


class PrecompileUnimplemented(ExecutionError):
    pass


def precompile_address(number: int) -> bytes:
    return number.to_bytes(20, "big")


def precompile_number(addr: bytes) -> Optional[int]:
    n = int.from_bytes(addr, "big")
    return n if PRECOMPILE_FIRST <= n <= PRECOMPILE_LAST else None


def code_key(deployer: bytes, nonce: int) -> bytes:
    return sha256(b"evm-code:", deployer, u64(nonce))


def contract_index_key(addr20: bytes) -> bytes:
    return sha256(b"evm-contract:", addr20)


def nonce_key(addr20: bytes) -> bytes:
    return sha256(b"evm-nonce:", addr20)


def storage_key(contract: bytes, slot: bytes) -> bytes:
    return sha256(b"evm-storage:", contract, slot)


def is_contract_like(view: StateTree, addr20: bytes) -> bool:
    """True for addresses that name code rather than an identity."""
    return (
        precompile_number(addr20) is not None
        or token.mint_for_erc20(view, addr20) is not None
        or view.get(contract_index_key(addr20)) is not None
    )


def erc20_calldata(selector: int, *operands) -> bytes:
    out = bytearray([selector])
    for op in operands:
        out += op if isinstance(op, bytes) else u64(op)
    return bytes(out)


def decode_erc20_calldata(data: bytes) -> tuple[int, list[bytes], Optional[int]]:
    """(selector, address operands, amount or None)."""
    if not data:
        raise MalformedPayload("empty ERC-20 calldata")
    r = P.Reader(data, 1)
    sel = data[0]
    if sel in (ERC20_TRANSFER, ERC20_APPROVE):
        addrs, amount = [r.take(20)], r.u64()
    elif sel == ERC20_TRANSFER_FROM:
        addrs = [r.take(20), r.take(20)]
        amount = r.u64()
    elif sel == ERC20_BALANCE_OF:
        addrs, amount = [r.take(20)], None
    else:
        raise MalformedPayload(f"unknown ERC-20 selector {sel:#04x}")
    r.done()
    return sel, addrs, amount


class EvmEngine(Engine, ProgramHost):
    vm_id = VmId.EVM

    def run(self, state: StateTree, tx: Transaction, sender: bytes, receipt: Receipt) -> None:
        op = P.decode_evm(tx.payload)
        me = address_for(VmId.EVM, sender)
        if isinstance(op, P.EvmTransfer):
            self.op_transfer(state, sender, op.to, op.amount)
        elif isinstance(op, P.EvmDeploy):
            nonce = accounts.get_amount(state, nonce_key(me))
            key = code_key(me, nonce)
            addr = key[12:]
            if state.get(contract_index_key(addr)) is not None:
                raise ExecutionError("contract address already occupied")
            state.put(key, op.code)
            state.put(contract_index_key(addr), key)
            accounts.set_amount(state, nonce_key(me), nonce + 1)
            receipt.logs.append(addr)
        else:
            self.call(state, sender, op.target, op.calldata, receipt)

    def call(self, state: StateTree, sender: bytes, target: bytes, calldata: bytes, receipt: Receipt) -> None:
        if precompile_number(target) is not None:
            self.op_callpre(state, sender, target, calldata, receipt)
            return
        mint = token.mint_for_erc20(state, target)
        if mint is not None:
            self.erc20_call(state, sender, mint, calldata, receipt)
            return
        key = state.get(contract_index_key(target))
        if key is None:
            raise UnknownContract(target.hex())
        code = state.get(key)
        if code is None:
            raise UnknownContract(target.hex())
        self.run_program(state, code, target, sender, receipt)

    def erc20_call(self, state: StateTree, sender: bytes, mint: bytes, calldata: bytes, receipt: Receipt) -> None:
        sel, addrs, amount = decode_erc20_calldata(calldata)
        if sel == ERC20_BALANCE_OF:
            receipt.logs.append(token.abi_word(token.erc20_balance_of(state, mint, addrs[0])))
            return
        ids = []
        for a in addrs:
            id_com = accounts.resolve_evm(state, a)
            if id_com is None:
                raise UnresolvableAddress(f"no identity for EVM address {a.hex()}")
            ids.append(id_com)
        if sel == ERC20_TRANSFER:
            token.transfer(state, mint, sender, ids[0], amount)
        elif sel == ERC20_APPROVE:
            token.approve(state, mint, sender, ids[0], amount)
        else:
            token.transfer_from(state, mint, sender, ids[0], ids[1], amount)
        receipt.logs.append(token.abi_word(1))

    # -- program hooks -------------------------------------------------------

    def storage_key(self, storage_ns: bytes, slot: bytes) -> bytes:
        return storage_key(storage_ns, slot)

    def op_transfer(self, state, sender, to, amount) -> None:
        if len(to) != 20:
            raise MalformedPayload("EVM transfer target must be 20 bytes")
        accounts.move_amount(
            state,
            accounts.evm_balance_key(address_for(VmId.EVM, sender)),
            accounts.evm_balance_key(to),
            amount,
        )

    def op_callpre(self, state, sender, address, data, receipt) -> None:
        number = precompile_number(address)
        if number is None:
            raise UnknownContract(f"{address.hex()} is not a precompile")
        if number == CROSS_VM_CALL:
            if len(data) < 33:
                raise MalformedPayload("cross_vm_call data: vm byte + 32-byte program id required")
            target = VM_CODES.get(data[0])
            if target is None:
                raise MalformedPayload(f"unknown target VM code {data[0]:#04x}")
            receipt.cross_vm_requests.append(CrossVmRequest(str(target), data[1:33], data[33:], sender))
        elif number == RESOLVE_SVM_ADDR:
            receipt.logs.append(address_for(VmId.SVM, sender))
        else:
            raise PrecompileUnimplemented(f"{PRECOMPILE_NAMES[number]} ({number:#06x})")

    def write_set(self, tx: Transaction, sender: bytes, view: StateTree) -> WriteSet:
        op = P.decode_evm(tx.payload)
        if isinstance(op, P.EvmTransfer):
            return WriteSet.of(
                accounts.evm_balance_key(address_for(VmId.EVM, sender)),
                accounts.evm_balance_key(op.to),
            )
        return GLOBAL
