"""Shared fixtures-in-code for the test suite."""

from __future__ import annotations

import hashlib
import hmac

from nvm import accounts, token
from nvm.common import VmId
from nvm.dispatch import Dispatcher
from nvm.identity import address_for, attestation_digest, make_attestation
from nvm.state import StateTree
from nvm.tx import Attested, Block, Receipt, Transaction

FUNDS = 1_000_000


def oracle_sha256(*parts: bytes) -> bytes:
    return hashlib.sha256(b"".join(parts)).digest()


def make_id(n: int) -> bytes:
    return oracle_sha256(b"test-id:", n.to_bytes(4, "big"))


def make_key(n: int) -> bytes:
    return oracle_sha256(b"test-key:", n.to_bytes(4, "big"))


class Chain:
    """A state tree with a handful of funded, keyed accounts and a dispatcher."""

    def __init__(self, n_accounts: int = 4, funds: int = FUNDS):
        self.state = StateTree()
        self.dispatcher = Dispatcher.default()
        self.ids = [make_id(i) for i in range(n_accounts)]
        self.keys = {}
        for i, id_com in enumerate(self.ids):
            self.keys[id_com] = make_key(i)
            accounts.create_account(self.state, id_com, self.keys[id_com])
            accounts.set_amount(self.state, accounts.native_balance_key(id_com), funds)
            accounts.set_amount(self.state, accounts.evm_balance_key(address_for(VmId.EVM, id_com)), funds)
            accounts.set_amount(self.state, accounts.svm_balance_key(address_for(VmId.SVM, id_com)), funds)

    def tx(self, sender: bytes, payload: bytes, tag: bytes | None = None) -> Transaction:
        att = make_attestation(self.keys[sender], attestation_digest(payload))
        return Transaction(payload, Attested(sender, att), tag)

    def run(self, sender: bytes, payload: bytes) -> Receipt:
        return self.dispatcher.dispatch_tx(self.state, self.tx(sender, payload))

    def block(self, items, slot: int = 0) -> Block:
        return Block([self.tx(s, p) for s, p in items], slot)

    def new_mint(self, authority_index: int = 0, amount: int = 1000) -> bytes:
        authority = self.ids[authority_index]
        mint = token.create_mint(self.state, authority, 6, b"seed")
        for id_com in self.ids:
            token.mint_to(self.state, mint, authority, id_com, amount)
        return mint

    def native(self, i: int) -> int:
        return accounts.get_amount(self.state, accounts.native_balance_key(self.ids[i]))

    def evm(self, i: int) -> int:
        return accounts.get_amount(self.state, accounts.evm_balance_key(address_for(VmId.EVM, self.ids[i])))


def hkdf_oracle(ikm: bytes, salt: bytes, info: bytes, length: int) -> bytes:
    """HKDF written out from its definition with stdlib HMAC."""
    prk = hmac.new(salt or bytes(32), ikm, hashlib.sha256).digest()
    out, t, i = b"", b"", 1
    while len(out) < length:
        t = hmac.new(prk, t + info + bytes([i]), hashlib.sha256).digest()
        out += t
        i += 1
    return out[:length]


# published HKDF-SHA256 vectors: (IKM, salt, info, OKM)
RFC5869 = [
    (
        b"\x0b" * 22,
        bytes(range(0x00, 0x0D)),
        bytes(range(0xF0, 0xFA)),
        "3cb25f25faacd57a90434f64d0362f2a2d2d0a90cf1a5a4c5db02d56ecc4c5bf34007208d5b887185865",
    ),
    (
        bytes(range(0x00, 0x50)),
        bytes(range(0x60, 0xB0)),
        bytes(range(0xB0, 0x100)),
        "b11e398dc80327a1c8e7f78c596a49344f012eda2d4efad8a050cc4c19afa97c"
        "59045a99cac7827271cb41c65e590e09da3275600c2f09b8367793a9aca3db71"
        "cc30c58179ec3e87c14c01d5c1f3434f1d87",
    ),
    (
        b"\x0b" * 22,
        b"",
        b"",
        "8da4e775a563c18f715f802a063c5a31b8a11f5c5ee1879ec3454e5f3c738d2d9d201395faa4b61a96c8",
    ),
]

# published HMAC-SHA256 vectors: (key, data, MAC); case 5 is truncated to 128 bits
RFC4231 = [
    (b"\x0b" * 20, b"Hi There", "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7"),
    (b"Jefe", b"what do ya want for nothing?", "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"),
    (b"\xaa" * 20, b"\xdd" * 50, "773ea91e36800e46854db8ebd09181a72959098b3ef8c122d9635514ced565fe"),
    (bytes(range(1, 26)), b"\xcd" * 50, "82558a389a443c0ea4cc819899f2083a85f0faa3e578f8077a2e3ff46729665b"),
    (b"\x0c" * 20, b"Test With Truncation", "a3b6167473100ee06e0c796c2955552b"),
    (
        b"\xaa" * 131,
        b"Test Using Larger Than Block-Size Key - Hash Key First",
        "60e431591ee0b67f0d8a26aacbf5b77f8e0bc6213728c5140546040f0ee37f54",
    ),
    (
        b"\xaa" * 131,
        b"This is a test using a larger than block-size key and a larger than block-size data."
        b" The key needs to be hashed before being used by the HMAC algorithm.",
        "9b09ffa71b942fcb27635fbcd5b0e944bfdc63644f0713938a7f51535c3a35e2",
    ),
]
