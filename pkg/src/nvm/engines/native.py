from __future__ import annotations

from .. import accounts
from ..common import VmId
from ..state import StateTree
from ..tx import Receipt, Transaction
from . import payloads as P
from .base import GLOBAL, Engine, WriteSet


class NativeEngine(Engine):
    """Transfers, account creation and attestation-key rotation over 32-byte ids."""

    vm_id = VmId.NATIVE

    def run(self, state: StateTree, tx: Transaction, sender: bytes, receipt: Receipt) -> None:
        op = P.decode_native(tx.payload)
        if isinstance(op, P.NativeTransfer):
            accounts.move_amount(
                state,
                accounts.native_balance_key(sender),
                accounts.native_balance_key(op.to),
                op.amount,
            )
        elif isinstance(op, P.CreateAccount):
            accounts.create_account(state, op.id_com, op.key_hash)
            receipt.logs.append(op.id_com)
        else:
            accounts.set_auth_key(state, sender, op.key_hash)

    def write_set(self, tx: Transaction, sender: bytes, view: StateTree) -> WriteSet:
        op = P.decode_native(tx.payload)
        if isinstance(op, P.NativeTransfer):
            return WriteSet.of(accounts.native_balance_key(sender), accounts.native_balance_key(op.to))
        # account creation and key rotation change what authorization reads
        return GLOBAL
