"""Binary payload layouts for the built-in engines.

All integers are fixed-width big-endian. Decoders are strict: short input and
trailing bytes both raise MalformedPayload. docs/FORMATS.md has the byte maps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from ..common import MalformedPayload, u64
from ..state import MAX_VALUE_LEN

# opcodes
NATIVE_TRANSFER = 0x01
NATIVE_CREATE_ACCOUNT = 0x02
NATIVE_SET_AUTH_KEY = 0x03

EVM_TRANSFER = 0x10
EVM_DEPLOY = 0x11
EVM_CALL = 0x12

SVM_TRANSFER = 0x20
SVM_SPL_TRANSFER = 0x21
SVM_INVOKE = 0x22
SVM_CREATE_MINT = 0x23
SVM_MINT_TO = 0x24
SVM_APPROVE = 0x25
SVM_TRANSFER_FROM = 0x26
SVM_DEPLOY = 0x27

BVM_UTXO_TRANSFER = 0x30

TVM_TRANSFER = 0x40
TVM_DEPLOY = 0x41
TVM_CALL = 0x42

MAX_PROGRAM_LEN = 256
MAX_UTXO_IO = 255


class Reader:
    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.pos = offset

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise MalformedPayload(f"truncated payload: need {n} bytes at offset {self.pos}")
        out = self.data[self.pos:end]
        self.pos = end
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return int.from_bytes(self.take(2), "big")

    def u32(self) -> int:
        return int.from_bytes(self.take(4), "big")

    def u64(self) -> int:
        return int.from_bytes(self.take(8), "big")

    def blob(self) -> bytes:
        return self.take(self.u32())

    def rest(self) -> bytes:
        out = self.data[self.pos:]
        self.pos = len(self.data)
        return out

    def done(self) -> None:
        if self.pos != len(self.data):
            raise MalformedPayload(f"{len(self.data) - self.pos} trailing byte(s)")


def _blob(data: bytes) -> bytes:
    return len(data).to_bytes(4, "big") + data


# -- native ------------------------------------------------------------------


@dataclass(frozen=True)
class NativeTransfer:
    to: bytes
    amount: int


@dataclass(frozen=True)
class CreateAccount:
    id_com: bytes
    key_hash: Optional[bytes] = None


@dataclass(frozen=True)
class SetAuthKey:
    key_hash: bytes


def native_transfer(to: bytes, amount: int) -> bytes:
    return bytes([NATIVE_TRANSFER]) + to + u64(amount)


def create_account(id_com: bytes, key_hash: Optional[bytes] = None) -> bytes:
    return bytes([NATIVE_CREATE_ACCOUNT]) + id_com + (key_hash or b"")


def set_auth_key(key_hash: bytes) -> bytes:
    return bytes([NATIVE_SET_AUTH_KEY]) + key_hash


def decode_native(payload: bytes):
    r = Reader(payload, 1)
    op = payload[0]
    if op == NATIVE_TRANSFER:
        out = NativeTransfer(r.take(32), r.u64())
    elif op == NATIVE_CREATE_ACCOUNT:
        # optional trailing initial attestation key
        out = CreateAccount(r.take(32), r.take(32) if len(payload) > 33 else None)
    elif op == NATIVE_SET_AUTH_KEY:
        out = SetAuthKey(r.take(32))
    else:
        raise MalformedPayload(f"unassigned native opcode {op:#04x}")
    r.done()
    return out


# -- evm ---------------------------------------------------------------------


@dataclass(frozen=True)
class EvmTransfer:
    to: bytes
    amount: int


@dataclass(frozen=True)
class EvmDeploy:
    code: bytes


@dataclass(frozen=True)
class EvmCall:
    target: bytes
    calldata: bytes


def evm_transfer(to: bytes, amount: int, opcode: int = EVM_TRANSFER) -> bytes:
    return bytes([opcode]) + to + u64(amount)


def evm_deploy(code: bytes, opcode: int = EVM_DEPLOY) -> bytes:
    return bytes([opcode]) + code


def evm_call(target: bytes, calldata: bytes = b"", opcode: int = EVM_CALL) -> bytes:
    return bytes([opcode]) + target + calldata


def decode_evm(payload: bytes, base: int = EVM_TRANSFER):
    """Decode an EVM-layout payload; ``base`` lets TVM share the layout."""
    r = Reader(payload, 1)
    op = payload[0] - base
    if op == 0:
        out = EvmTransfer(r.take(20), r.u64())
    elif op == 1:
        code = r.rest()
        decode_program(code)
        out = EvmDeploy(code)
    elif op == 2:
        out = EvmCall(r.take(20), r.rest())
    else:
        raise MalformedPayload(f"unassigned opcode {payload[0]:#04x}")
    r.done()
    return out


# -- svm ---------------------------------------------------------------------


@dataclass(frozen=True)
class SvmTransfer:
    to: bytes
    amount: int


@dataclass(frozen=True)
class SplTransfer:
    mint: bytes
    to_owner: bytes
    amount: int


@dataclass(frozen=True)
class Invoke:
    program_id: bytes
    data: bytes


@dataclass(frozen=True)
class CreateMint:
    decimals: int
    seed: bytes


@dataclass(frozen=True)
class MintTo:
    mint: bytes
    dest: bytes
    amount: int


@dataclass(frozen=True)
class Approve:
    mint: bytes
    spender: bytes
    amount: int


@dataclass(frozen=True)
class TransferFrom:
    mint: bytes
    owner: bytes
    to: bytes
    amount: int


@dataclass(frozen=True)
class SvmDeploy:
    code: bytes


def svm_transfer(to: bytes, amount: int) -> bytes:
    return bytes([SVM_TRANSFER]) + to + u64(amount)


def spl_transfer(mint: bytes, to_owner: bytes, amount: int) -> bytes:
    return bytes([SVM_SPL_TRANSFER]) + mint + to_owner + u64(amount)


def svm_invoke(program_id: bytes, data: bytes = b"") -> bytes:
    return bytes([SVM_INVOKE]) + program_id + data


def svm_create_mint(decimals: int, seed: bytes) -> bytes:
    return bytes([SVM_CREATE_MINT, decimals]) + seed


def svm_mint_to(mint: bytes, dest: bytes, amount: int) -> bytes:
    return bytes([SVM_MINT_TO]) + mint + dest + u64(amount)


def svm_approve(mint: bytes, spender: bytes, amount: int) -> bytes:
    return bytes([SVM_APPROVE]) + mint + spender + u64(amount)


def svm_transfer_from(mint: bytes, owner: bytes, to: bytes, amount: int) -> bytes:
    return bytes([SVM_TRANSFER_FROM]) + mint + owner + to + u64(amount)


def svm_deploy(code: bytes) -> bytes:
    return bytes([SVM_DEPLOY]) + code


def decode_svm(payload: bytes):
    r = Reader(payload, 1)
    op = payload[0]
    if op == SVM_TRANSFER:
        out = SvmTransfer(r.take(32), r.u64())
    elif op == SVM_SPL_TRANSFER:
        out = SplTransfer(r.take(32), r.take(32), r.u64())
    elif op == SVM_INVOKE:
        out = Invoke(r.take(32), r.rest())
    elif op == SVM_CREATE_MINT:
        out = CreateMint(r.u8(), r.rest())
    elif op == SVM_MINT_TO:
        out = MintTo(r.take(32), r.take(32), r.u64())
    elif op == SVM_APPROVE:
        out = Approve(r.take(32), r.take(32), r.u64())
    elif op == SVM_TRANSFER_FROM:
        out = TransferFrom(r.take(32), r.take(32), r.take(32), r.u64())
    elif op == SVM_DEPLOY:
        code = r.rest()
        decode_program(code)
        out = SvmDeploy(code)
    else:
        raise MalformedPayload(f"unassigned svm opcode {op:#04x}")
    r.done()
    return out


# -- bvm ---------------------------------------------------------------------


@dataclass(frozen=True)
class UtxoTransfer:
    inputs: tuple[tuple[bytes, int], ...]
    outputs: tuple[tuple[bytes, int], ...]


def utxo_transfer(inputs, outputs) -> bytes:
    if len(inputs) > MAX_UTXO_IO or len(outputs) > MAX_UTXO_IO:
        raise ValueError("too many inputs or outputs")
    out = bytearray([BVM_UTXO_TRANSFER, len(inputs)])
    for txid, vout in inputs:
        out += txid + vout.to_bytes(4, "big")
    out.append(len(outputs))
    for owner, amount in outputs:
        out += owner + u64(amount)
    return bytes(out)


def decode_bvm(payload: bytes) -> UtxoTransfer:
    if payload[0] != BVM_UTXO_TRANSFER:
        raise MalformedPayload(f"unassigned bvm opcode {payload[0]:#04x}")
    r = Reader(payload, 1)
    inputs = tuple((r.take(32), r.u32()) for _ in range(r.u8()))
    outputs = tuple((r.take(32), r.u64()) for _ in range(r.u8()))
    r.done()
    if not inputs:
        raise MalformedPayload("a UTXO transfer needs at least one input")
    if len(set(inputs)) != len(inputs):
        raise MalformedPayload("duplicate input")
    return UtxoTransfer(inputs, outputs)


# -- mini programs -----------------------------------------------------------

OP_WRITE = 0x01
OP_TRANSFER = 0x02
OP_CALLPRE = 0x03
OP_EMITLOG = 0x04
OP_FAIL = 0x05
OP_SYSCALL = 0x06


@dataclass(frozen=True)
class WriteOp:
    key: bytes
    value: bytes


@dataclass(frozen=True)
class TransferOp:
    to: bytes
    amount: int


@dataclass(frozen=True)
class CallPreOp:
    address: bytes
    data: bytes


@dataclass(frozen=True)
class EmitLogOp:
    data: bytes


@dataclass(frozen=True)
class FailOp:
    pass


@dataclass(frozen=True)
class SyscallOp:
    name: str
    data: bytes


Instruction = Union[WriteOp, TransferOp, CallPreOp, EmitLogOp, FailOp, SyscallOp]


def encode_program(program: list[Instruction]) -> bytes:
    if len(program) > MAX_PROGRAM_LEN:
        raise ValueError(f"program longer than {MAX_PROGRAM_LEN} instructions")
    out = bytearray(len(program).to_bytes(2, "big"))
    for ins in program:
        if isinstance(ins, WriteOp):
            out += bytes([OP_WRITE]) + ins.key + _blob(ins.value)
        elif isinstance(ins, TransferOp):
            out += bytes([OP_TRANSFER, len(ins.to)]) + ins.to + u64(ins.amount)
        elif isinstance(ins, CallPreOp):
            out += bytes([OP_CALLPRE]) + ins.address + _blob(ins.data)
        elif isinstance(ins, EmitLogOp):
            out += bytes([OP_EMITLOG]) + _blob(ins.data)
        elif isinstance(ins, FailOp):
            out.append(OP_FAIL)
        elif isinstance(ins, SyscallOp):
            name = ins.name.encode()
            out += bytes([OP_SYSCALL, len(name)]) + name + _blob(ins.data)
        else:
            raise TypeError(f"not an instruction: {ins!r}")
    return bytes(out)


def decode_program(code: bytes) -> list[Instruction]:
    r = Reader(code)
    count = r.u16()
    if count > MAX_PROGRAM_LEN:
        raise MalformedPayload(f"program has {count} instructions (max {MAX_PROGRAM_LEN})")
    program: list[Instruction] = []
    for _ in range(count):
        op = r.u8()
        if op == OP_WRITE:
            key = r.take(32)
            value = r.blob()
            if len(value) > MAX_VALUE_LEN:
                raise MalformedPayload("WRITE value exceeds 64 KiB")
            program.append(WriteOp(key, value))
        elif op == OP_TRANSFER:
            to = r.take(r.u8())
            program.append(TransferOp(to, r.u64()))
        elif op == OP_CALLPRE:
            program.append(CallPreOp(r.take(20), r.blob()))
        elif op == OP_EMITLOG:
            program.append(EmitLogOp(r.blob()))
        elif op == OP_FAIL:
            program.append(FailOp())
        elif op == OP_SYSCALL:
            try:
                name = r.take(r.u8()).decode("ascii")
            except UnicodeDecodeError:
                raise MalformedPayload("syscall name is not ASCII") from None
            program.append(SyscallOp(name, r.blob()))
        else:
            raise MalformedPayload(f"unknown instruction {op:#04x}")
    r.done()
    return program
