from __future__ import annotations

from ..common import ExecutionError, VmId, sha256, u64
from ..state import StateTree
from ..tx import Receipt, Transaction
from . import payloads as P
from .base import Engine, WriteSet


class MissingUtxo(ExecutionError):
    pass


class NotOwner(ExecutionError):
    pass


class OutputsExceedInputs(ExecutionError):
    pass


def utxo_key(txid: bytes, vout: int) -> bytes:
    return sha256(b"utxo:", txid, vout.to_bytes(4, "big"))


def encode_utxo(owner: bytes, amount: int) -> bytes:
    return owner + u64(amount)


def decode_utxo(raw: bytes) -> tuple[bytes, int]:
    return raw[:32], int.from_bytes(raw[32:40], "big")


def txid_of(payload: bytes) -> bytes:
    return sha256(payload)


def fee_log(fee: int) -> bytes:
    return b"fee:" + u64(fee)


class BvmEngine(Engine):
    """UTXO transfers authorized by identity ownership (no Script evaluation).

    New outputs are keyed by (SHA-256(payload), index). The gap between input
    and output value is burned and logged as ``fee:`` || amount.
    """

    vm_id = VmId.BVM

    def run(self, state: StateTree, tx: Transaction, sender: bytes, receipt: Receipt) -> None:
        op = P.decode_bvm(tx.payload)
        total_in = 0
        for txid, vout in op.inputs:
            raw = state.get(utxo_key(txid, vout))
            if raw is None:
                raise MissingUtxo(f"{txid.hex()}:{vout}")
            owner, amount = decode_utxo(raw)
            if owner != sender:
                raise NotOwner(f"{txid.hex()}:{vout}")
            total_in += amount
        total_out = sum(amount for _, amount in op.outputs)
        if total_out > total_in:
            raise OutputsExceedInputs(f"outputs {total_out} > inputs {total_in}")
        for txid, vout in op.inputs:
            state.put(utxo_key(txid, vout), None)
        new_txid = txid_of(tx.payload)
        for i, (owner, amount) in enumerate(op.outputs):
            state.put(utxo_key(new_txid, i), encode_utxo(owner, amount))
        receipt.logs.append(fee_log(total_in - total_out))

    def write_set(self, tx: Transaction, sender: bytes, view: StateTree) -> WriteSet:
        op = P.decode_bvm(tx.payload)
        new_txid = txid_of(tx.payload)
        keys = [utxo_key(t, v) for t, v in op.inputs]
        keys += [utxo_key(new_txid, i) for i in range(len(op.outputs))]
        return WriteSet.of(*keys)
