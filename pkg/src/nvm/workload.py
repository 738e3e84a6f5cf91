"""Seeded synthetic workloads: a pre-funded genesis state plus one block.

All randomness comes from SplitMix64 seeded with ``WorkloadSpec.seed``, so a
spec yields byte-identical genesis and block documents on any platform.

Layout of a generated world:
  * account 0 is the hot account that conflicting transfers pay into;
  * the remaining accounts are split into contiguous groups, and a tagged
    transaction stays inside one group with that group's context tag;
  * only kinds whose keys live in a namespace of their own are ever tagged
    (native, evm, svm, spl, bvm transfers), so two shards never share a key;
  * every account is funded in the native, EVM and SVM namespaces, holds a
    balance of one shared mint, and owns one genesis UTXO.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import accounts, token
from .common import VM_CODE_OF, NvmError, VmId, sha256, u64
from .engines import payloads as P
from .engines.bvm import encode_utxo, txid_of, utxo_key
from .engines.evm import CROSS_VM_CALL, EvmEngine, precompile_address
from .engines.svm import SvmEngine
from .identity import address_for, attestation_digest, derive_key_stream, legacy_id_com, make_attestation
from .ingress import DEFAULT_CHAIN_DOMAIN, secp_address, sign_evm, sign_sol, sol_pubkey
from .state import StateTree
from .tx import Attested, Block, RawAuth, Transaction

MASK64 = (1 << 64) - 1

KINDS = (
    "native_transfer",
    "evm_transfer",
    "evm_call",
    "svm_transfer",
    "spl_transfer",
    "svm_invoke",
    "bvm",
    "tvm",
    "xvm",
    "raw_sol",
    "raw_evm",
)
TAGGABLE = frozenset({"native_transfer", "evm_transfer", "svm_transfer", "spl_transfer", "bvm"})

DEFAULT_MIX = {
    "native_transfer": 0.30,
    "evm_transfer": 0.15,
    "evm_call": 0.05,
    "svm_transfer": 0.10,
    "spl_transfer": 0.10,
    "svm_invoke": 0.05,
    "bvm": 0.08,
    "tvm": 0.07,
    "xvm": 0.04,
    "raw_sol": 0.04,
    "raw_evm": 0.02,
}

GENESIS_FUNDS = 10**12
GENESIS_TOKENS = 10**9
GENESIS_UTXO = 10**9
OVERDRAFT = 1 << 63
RAW_WALLETS = 4


class SplitMix64:
    """Steele/Lea/Flood SplitMix64: golden-gamma increment, then a 64-bit finalizer."""

    GAMMA = 0x9E3779B97F4A7C15

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + self.GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) / float(1 << 53)

    def below(self, n: int) -> int:
        return self.next_u64() % n

    def choice(self, seq):
        return seq[self.below(len(seq))]


class BadSpec(NvmError, ValueError):
    pass


@dataclass(frozen=True)
class WorkloadSpec:
    tx_count: int = 1000
    mix: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_MIX), hash=False)
    conflict: float = 0.0
    tagged: float = 0.0
    seed: int = 0
    accounts: int = 64
    groups: int = 16
    fail_rate: float = 0.0
    slot: int = 1
    chain_domain: int = DEFAULT_CHAIN_DOMAIN

    def validate(self) -> None:
        if self.tx_count < 0:
            raise BadSpec("tx_count must be >= 0")
        for name in ("conflict", "tagged", "fail_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise BadSpec(f"{name} must lie in [0, 1], got {v}")
        unknown = set(self.mix) - set(KINDS)
        if unknown:
            raise BadSpec(f"unknown transaction kind(s) {sorted(unknown)}")
        if any(v < 0 for v in self.mix.values()):
            raise BadSpec("mix fractions must be non-negative")
        if sum(self.mix.values()) > 1.0 + 1e-9:
            raise BadSpec(f"mix fractions sum to {sum(self.mix.values()):.6f} > 1")
        if self.accounts < 3:
            raise BadSpec("need at least 3 accounts")
        if not 1 <= self.groups <= (self.accounts - 1) // 2:
            raise BadSpec("groups must leave at least two accounts per group")
        if not 0 <= self.seed <= MASK64:
            raise BadSpec("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, doc: dict) -> "WorkloadSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise BadSpec(f"unknown spec field(s) {sorted(extra)}")
        spec = cls(**doc)
        spec.validate()
        return spec


@dataclass
class World:
    """Everything the generator knows about the genesis it built."""

    ids: list[bytes]
    auth_keys: dict[bytes, bytes]
    groups: list[list[bytes]]
    mint: bytes
    contract: bytes
    xvm_contract: bytes
    program_id: bytes
    utxos: dict[bytes, list[tuple[bytes, int, int]]]
    sol_wallets: list[bytes]
    evm_wallets: list[bytes]
    evm_nonces: dict[bytes, int]

    @property
    def hot(self) -> bytes:
        return self.ids[0]


def _account_id(seed: int, i: int) -> bytes:
    return sha256(b"workload-id:", u64(seed), i.to_bytes(4, "big"))


def auth_key_for(seed: int, i: int) -> bytes:
    """Attestation key of account ``i``: an HKDF stream from a per-account root secret."""
    rev = sha256(b"workload-rev:", u64(seed), i.to_bytes(4, "big"))
    return derive_key_stream(rev, b"nvm-attestation", b"workload").key_material


def build_genesis(spec: WorkloadSpec) -> tuple[StateTree, World]:
    state = StateTree()
    ids = [_account_id(spec.seed, i) for i in range(spec.accounts)]
    keys = {}
    for i, id_com in enumerate(ids):
        keys[id_com] = auth_key_for(spec.seed, i)
        accounts.create_account(state, id_com, keys[id_com])
        accounts.set_amount(state, accounts.native_balance_key(id_com), GENESIS_FUNDS)
        accounts.set_amount(state, accounts.evm_balance_key(address_for(VmId.EVM, id_com)), GENESIS_FUNDS)
        accounts.set_amount(state, accounts.svm_balance_key(address_for(VmId.SVM, id_com)), GENESIS_FUNDS)

    authority = ids[0]
    mint = token.create_mint(state, authority, 6, b"workload-mint")
    for id_com in ids:
        token.mint_to(state, mint, authority, id_com, GENESIS_TOKENS)

    utxos: dict[bytes, list[tuple[bytes, int, int]]] = {}
    for id_com in ids:
        txid = sha256(b"genesis-utxo:", id_com)
        state.put(utxo_key(txid, 0), encode_utxo(id_com, GENESIS_UTXO))
        utxos[id_com] = [(txid, 0, GENESIS_UTXO)]

    # contracts are deployed through the engines so their records match runtime deploys
    evm, svm = EvmEngine(), SvmEngine()
    plain = P.encode_program([P.WriteOp(bytes(32), b"\x01"), P.EmitLogOp(b"called")])
    receipt, _ = evm.execute(state, Transaction(P.evm_deploy(plain)), authority)
    contract = receipt.logs[0]
    xvm_code = P.encode_program([
        P.CallPreOp(
            precompile_address(CROSS_VM_CALL),
            bytes([VM_CODE_OF[VmId.SVM]]) + token.SPL_PROGRAM_ID + P.spl_transfer(mint, authority, 1),
        )
    ])
    receipt, _ = evm.execute(state, Transaction(P.evm_deploy(xvm_code)), authority)
    xvm_contract = receipt.logs[0]
    prog = P.encode_program([P.SyscallOp("ace_id_com", b""), P.WriteOp(bytes(32), b"\x02")])
    receipt, _ = svm.execute(state, Transaction(P.svm_deploy(prog)), authority)
    program_id = receipt.logs[0]

    sol_wallets = [sha256(b"workload-sol:", u64(spec.seed), bytes([i])) for i in range(RAW_WALLETS)]
    for secret in sol_wallets:
        legacy = legacy_id_com("sol", sol_pubkey(secret))
        accounts.set_amount(state, accounts.svm_balance_key(address_for(VmId.SVM, legacy)), GENESIS_FUNDS)
    evm_wallets = [sha256(b"workload-evm:", u64(spec.seed), bytes([i])) for i in range(RAW_WALLETS)]
    for secret in evm_wallets:
        legacy = legacy_id_com("evm", secp_address(secret))
        accounts.set_amount(state, accounts.evm_balance_key(address_for(VmId.EVM, legacy)), GENESIS_FUNDS)

    members = ids[1:]
    size = len(members) // spec.groups
    groups = [members[g * size:(g + 1) * size] for g in range(spec.groups)]
    world = World(
        ids, keys, groups, mint, contract, xvm_contract, program_id, utxos,
        sol_wallets, evm_wallets, {s: 0 for s in evm_wallets},
    )
    return state, world


def context_tag(group: int) -> bytes:
    return sha256(b"ctx:", group.to_bytes(4, "big"))[:16]


def attested(world: World, sender: bytes, payload: bytes, tag: Optional[bytes] = None) -> Transaction:
    att = make_attestation(world.auth_keys[sender], attestation_digest(payload))
    return Transaction(payload, Attested(sender, att), tag)


class _Generator:
    def __init__(self, spec: WorkloadSpec, world: World):
        self.spec = spec
        self.world = world
        self.rng = SplitMix64(spec.seed)
        kinds = [k for k in KINDS if spec.mix.get(k, 0) > 0]
        acc, self.cdf = 0.0, []
        for k in kinds:
            acc += spec.mix[k]
            self.cdf.append((acc, k))

    def kind(self) -> str:
        x = self.rng.random()
        for bound, k in self.cdf:
            if x < bound:
                return k
        return "native_transfer"

    def amount(self, fail: bool) -> int:
        return OVERDRAFT if fail else 1 + self.rng.below(1000)

    def tx(self) -> Transaction:
        rng, w, spec = self.rng, self.world, self.spec
        kind = self.kind()
        fail = rng.random() < spec.fail_rate
        hot = rng.random() < spec.conflict
        tagged = rng.random() < spec.tagged and kind in TAGGABLE and not hot
        tag = None
        if tagged:
            g = rng.below(len(w.groups))
            sender, recipient = self._pair(w.groups[g])
            tag = context_tag(g)
        else:
            sender, recipient = self._pair(w.ids[1:])
        if hot:
            recipient = w.hot

        if kind == "native_transfer":
            payload = P.native_transfer(recipient, self.amount(fail))
        elif kind == "evm_transfer":
            payload = P.evm_transfer(address_for(VmId.EVM, recipient), self.amount(fail))
        elif kind == "tvm":
            payload = P.evm_transfer(address_for(VmId.TVM, recipient), self.amount(fail), opcode=P.TVM_TRANSFER)
        elif kind == "svm_transfer":
            payload = P.svm_transfer(address_for(VmId.SVM, recipient), self.amount(fail))
        elif kind == "spl_transfer":
            payload = P.spl_transfer(w.mint, recipient, self.amount(fail))
        elif kind == "evm_call":
            payload = P.evm_call(w.contract, b"")
        elif kind == "svm_invoke":
            payload = P.svm_invoke(w.program_id)
        elif kind == "xvm":
            payload = P.evm_call(w.xvm_contract, b"")
        elif kind == "bvm":
            payload = self._bvm(sender, recipient, fail)
            if payload is None:
                payload = P.native_transfer(recipient, self.amount(fail))
        elif kind == "raw_sol":
            secret = rng.choice(w.sol_wallets)
            env = sign_sol(secret, {
                "recipient": address_for(VmId.SVM, recipient),
                "amount": self.amount(fail),
                "nonce": spec.slot,
                "chain_domain": spec.chain_domain,
            })
            return Transaction(b"", RawAuth(env))
        else:
            secret = rng.choice(w.evm_wallets)
            env = sign_evm(secret, {
                "recipient": address_for(VmId.EVM, recipient),
                "amount": self.amount(fail),
                "nonce": w.evm_nonces[secret],
                "chain_domain": spec.chain_domain,
            })
            if not fail:
                w.evm_nonces[secret] += 1
            return Transaction(b"", RawAuth(env))
        return attested(w, sender, payload, tag)

    def _pair(self, pool: list[bytes]) -> tuple[bytes, bytes]:
        a = self.rng.below(len(pool))
        b = (a + 1 + self.rng.below(len(pool) - 1)) % len(pool)
        return pool[a], pool[b]

    def _bvm(self, sender: bytes, recipient: bytes, fail: bool) -> Optional[bytes]:
        owned = self.world.utxos.get(sender)
        if not owned:
            return None
        if fail:
            # spends an outpoint that never existed
            return P.utxo_transfer([(sha256(b"missing", sender), 0)], [(recipient, 1)])
        txid, vout, value = owned.pop(0)
        amt = min(value, 1 + self.rng.below(1000))
        outputs = [(recipient, amt)]
        if value - amt:
            outputs.append((sender, value - amt))
        payload = P.utxo_transfer([(txid, vout)], outputs)
        new_txid = txid_of(payload)
        for i, (owner, v) in enumerate(outputs):
            self.world.utxos.setdefault(owner, []).append((new_txid, i, v))
        return payload


def gen_workload(spec: WorkloadSpec) -> tuple[StateTree, Block, World]:
    spec.validate()
    state, world = build_genesis(spec)
    gen = _Generator(spec, world)
    txs = [gen.tx() for _ in range(spec.tx_count)]
    return state, Block(txs, spec.slot), world
