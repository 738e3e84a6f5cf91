import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvm import accounts
from nvm.common import VmId
from nvm.dispatch import Dispatcher, OpcodeRange
from nvm.engines import GLOBAL, NativeEngine, WriteSet
from nvm.engines import payloads as P
from nvm.identity import address_for
from nvm.scheduler import (
    BadPrefix,
    build_batches,
    conflicts,
    execute_block_parallel,
    plan_shards,
    shard_of,
    write_set,
)
from nvm.tx import Block
from nvm.workload import WorkloadSpec, context_tag, gen_workload

from support import FUNDS, Chain, oracle_sha256


def ws(*names):
    return WriteSet(frozenset(n.encode() for n in names))


# -- batch construction ------------------------------------------------------


@pytest.mark.parametrize(
    "sets, expected",
    [
        ([], []),
        ([ws("a", "b"), ws("c", "d"), ws("e", "f")], [[0, 1, 2]]),
        ([ws("a", "b"), ws("b", "c"), ws("d", "e")], [[0], [1], [2]]),
        ([GLOBAL], [[0]]),
        ([ws("a"), ws("b"), ws("c")], [[0, 1, 2]]),
        ([ws("a"), ws("a"), ws("a")], [[0], [1], [2]]),
        ([ws("a"), ws("b"), ws("a"), GLOBAL, ws("d")], [[0, 1], [2], [3], [4]]),
        ([GLOBAL, GLOBAL], [[0], [1]]),
        ([ws("a"), ws("b"), ws("b", "c"), ws("c"), ws("e")], [[0, 1], [2], [3, 4]]),
        ([ws("a", "b"), ws("c"), GLOBAL, ws("a"), ws("b")], [[0, 1], [2], [3, 4]]),
    ],
)
def test_batch_traces(sets, expected):
    assert build_batches(sets) == expected


def test_batch_extremes():
    disjoint = [ws(str(i)) for i in range(100)]
    assert build_batches(disjoint) == [list(range(100))]
    same = [ws("hot")] * 100
    assert build_batches(same) == [[i] for i in range(100)]


key_sets = st.lists(
    st.one_of(st.just(None), st.frozensets(st.sampled_from("abcdefgh"), max_size=3)),
    max_size=30,
)


@given(key_sets)
def test_batches_are_sound_partitions(raw):
    sets = [GLOBAL if s is None else WriteSet(frozenset(k.encode() for k in s)) for s in raw]
    batches = build_batches(sets)
    assert [i for b in batches for i in b] == list(range(len(sets)))
    for batch in batches:
        for x in batch:
            for y in batch:
                if x < y:
                    assert not conflicts(sets[x], sets[y])
        if any(sets[i].is_global for i in batch):
            assert len(batch) == 1


def test_conflicts_relation():
    assert conflicts(GLOBAL, ws())
    assert conflicts(ws("a"), ws("a", "b"))
    assert not conflicts(ws("a"), ws("b"))


# -- shard routing -----------------------------------------------------------


@given(st.binary(max_size=40), st.binary(min_size=16, max_size=16), st.integers(1, 512))
def test_shard_of_oracle(vm, ctx, k):
    digest = oracle_sha256(bytes([len(vm)]), vm, ctx)
    assert shard_of(vm, ctx, k) == int.from_bytes(digest, "big") % k


def test_shard_of_prefix_too_long():
    with pytest.raises(BadPrefix):
        shard_of(b"x" * 256, bytes(16))


def test_shard_of_basics():
    ctx = b"foo:bar".ljust(16, b"\x00")
    assert shard_of(b"evm", ctx, 64) == shard_of(b"evm", ctx, 64)
    assert shard_of(b"evm", ctx, 1) == 0
    a = oracle_sha256(b"\x03evm", ctx)
    b = oracle_sha256(b"\x07evm:foo", b"bar".ljust(16, b"\x00"))
    assert a != b


def test_shard_of_length_prefix_separates():
    # without the length byte these two inputs would hash the same bytes
    assert oracle_sha256(b"\x03evm", b"x" * 16) != oracle_sha256(b"\x04evmx", b"x" * 15)
    assert shard_of(b"evm", b"x" * 16, 2**64) != shard_of(b"evmx", b"x" * 15, 2**64)


def test_plan_shards_routes_tagged_exclusive_txs():
    chain = Chain(4)
    a, b, c, d = chain.ids
    tag = context_tag(1)
    txs = [
        chain.tx(a, P.native_transfer(b, 1), tag),
        chain.tx(c, P.native_transfer(d, 1)),
        chain.tx(a, P.evm_call(bytes(20)), tag),
    ]
    sets = [write_set(chain.dispatcher, chain.state, tx) for tx in txs]
    plan = plan_shards(chain.dispatcher, txs, sets, 64)
    assert plan.shared == [1, 2]
    assert plan.assignment()[0] == shard_of(b"native", tag, 64)


# -- write sets --------------------------------------------------------------


def test_write_sets_of_simple_kinds():
    chain = Chain(2)
    a, b = chain.ids
    mint = chain.new_mint()
    d = chain.dispatcher
    got = write_set(d, chain.state, chain.tx(a, P.native_transfer(b, 1)))
    assert got.keys == {accounts.native_balance_key(a), accounts.native_balance_key(b)}
    got = write_set(d, chain.state, chain.tx(a, P.evm_transfer(address_for(VmId.EVM, b), 1)))
    assert got.keys == {
        accounts.evm_balance_key(address_for(VmId.EVM, a)),
        accounts.evm_balance_key(address_for(VmId.EVM, b)),
    }
    assert write_set(d, chain.state, chain.tx(a, P.spl_transfer(mint, b, 1))).keys is not None
    assert write_set(d, chain.state, chain.tx(a, P.create_account(bytes(32)))).is_global
    assert write_set(d, chain.state, chain.tx(a, bytes([0x77, 1]))).is_global
    assert write_set(d, chain.state, chain.tx(a, bytes([0x01]))).is_global


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 60))
def test_deltas_stay_inside_declared_sets(seed, n):
    spec = WorkloadSpec(tx_count=n, seed=seed, fail_rate=0.2, tagged=0.5)
    state, block, _ = gen_workload(spec)
    d = Dispatcher.default(spec.chain_domain)
    d.guard.begin_slot(block.slot)
    for tx in block:
        declared = write_set(d, state, tx)
        r = d.dispatch_tx(state, tx)
        if not declared.is_global:
            assert set(r.delta.keys()) <= declared.keys


# -- equivalence -------------------------------------------------------------


CONFIGS = [("batched", 1, 64), ("batched", 4, 64), ("batched", 8, 64), ("sharded", 1, 64), ("sharded", 4, 16)]


def run_mode(spec, mode, workers=1, shards=64):
    state, block, _ = gen_workload(spec)
    d = Dispatcher.default(spec.chain_domain)
    res = execute_block_parallel(d, state, block, mode, workers, shards)
    assert res.state_root == state.state_root()
    return res


@settings(max_examples=15, deadline=None)
@given(
    st.integers(0, 2**32),
    st.floats(0, 1),
    st.floats(0, 1),
    st.floats(0, 0.3),
)
def test_modes_agree_with_sequential(seed, conflict, tagged, fail):
    spec = WorkloadSpec(tx_count=120, seed=seed, conflict=conflict, tagged=tagged, fail_rate=fail)
    ref = run_mode(spec, "seq")
    for mode, workers, shards in CONFIGS:
        res = run_mode(spec, mode, workers, shards)
        assert res.state_root == ref.state_root, (mode, workers, shards)
        assert res.receipts_digest == ref.receipts_digest, (mode, workers, shards)
        assert not res.fallback


def test_batched_counts_batches():
    chain = Chain(8)
    ids = chain.ids
    block = chain.block([(ids[2 * i], P.native_transfer(ids[2 * i + 1], 1)) for i in range(4)])
    res = execute_block_parallel(chain.dispatcher, chain.state, block, "batched", workers=4)
    assert res.batches == 1 and not res.fallback


def test_sharded_reports_shared_count():
    chain = Chain(6)
    a, b, c, d, e, f = chain.ids
    block = Block([
        chain.tx(a, P.native_transfer(b, 1), context_tag(0)),
        chain.tx(c, P.native_transfer(d, 1)),
        chain.tx(e, P.native_transfer(f, 1), context_tag(1)),
    ], 0)
    res = execute_block_parallel(chain.dispatcher, chain.state, block, "sharded", workers=2)
    assert res.shared_count == 1 and not res.fallback
    assert all(r.success for r in res.receipts)


def test_unknown_mode():
    chain = Chain(2)
    with pytest.raises(ValueError):
        execute_block_parallel(chain.dispatcher, chain.state, Block([], 0), "warp")


# -- fallback ----------------------------------------------------------------


class StrayNative(NativeEngine):
    """Declares the native write set but also bumps a counter it never declares."""

    def run(self, state, tx, sender, receipt):
        super().run(state, tx, sender, receipt)
        key = oracle_sha256(b"stray-counter")
        count = int.from_bytes(state.get(key) or bytes(8), "big")
        state.put(key, (count + 1).to_bytes(8, "big"))


def stray_chain():
    chain = Chain(6)
    d = Dispatcher()
    d.register_engine(OpcodeRange(0x01, 0x0F), StrayNative())
    chain.dispatcher = d
    return chain


def twin_results(build, mode, workers=2):
    c1, c2 = build(), build()
    block1 = c1.block([(c1.ids[2 * i], P.native_transfer(c1.ids[2 * i + 1], 5)) for i in range(3)])
    block2 = c2.block([(c2.ids[2 * i], P.native_transfer(c2.ids[2 * i + 1], 5)) for i in range(3)])
    seq = c1.dispatcher.execute_block(c1.state, block1)
    par = execute_block_parallel(c2.dispatcher, c2.state, block2, mode, workers)
    return seq, par


def test_undeclared_write_triggers_sequential_fallback_batched():
    seq, par = twin_results(stray_chain, "batched")
    assert par.fallback
    assert par.state_root == seq.state_root
    assert par.receipts_digest == seq.receipts_digest


def test_undeclared_write_triggers_sequential_fallback_sharded():
    c1, c2 = stray_chain(), stray_chain()
    txs1 = [c1.tx(c1.ids[2 * i], P.native_transfer(c1.ids[2 * i + 1], 5), context_tag(i)) for i in range(3)]
    txs2 = [c2.tx(c2.ids[2 * i], P.native_transfer(c2.ids[2 * i + 1], 5), context_tag(i)) for i in range(3)]
    seq = c1.dispatcher.execute_block(c1.state, Block(txs1, 0))
    par = execute_block_parallel(c2.dispatcher, c2.state, Block(txs2, 0), "sharded", workers=2)
    assert par.fallback
    assert par.state_root == seq.state_root


def distinct_shard_tags(k=64):
    first = context_tag(0)
    s0 = shard_of(b"native", first, k)
    for g in range(1, 1000):
        if shard_of(b"native", context_tag(g), k) != s0:
            return first, context_tag(g)
    raise AssertionError("no second shard found")


def test_cross_shard_overlap_falls_back():
    chain, twin = Chain(3), Chain(3)
    t0, t1 = distinct_shard_tags()
    a, b, c = chain.ids

    def block(ch):
        return Block([
            ch.tx(a, P.native_transfer(c, 5), t0),
            ch.tx(b, P.native_transfer(c, 7), t1),
        ], 0)

    seq = twin.dispatcher.execute_block(twin.state, block(twin))
    par = execute_block_parallel(chain.dispatcher, chain.state, block(chain), "sharded", workers=2)
    assert par.fallback
    assert par.state_root == seq.state_root
    assert chain.native(2) == FUNDS + 12


def test_same_shard_queue_runs_in_order():
    chain, twin = Chain(3), Chain(3)
    a, b, c = chain.ids
    tag = context_tag(3)

    def block(ch):
        return Block([
            ch.tx(a, P.native_transfer(b, FUNDS), tag),
            ch.tx(b, P.native_transfer(c, FUNDS * 2), tag),
        ], 0)

    seq = twin.dispatcher.execute_block(twin.state, block(twin))
    par = execute_block_parallel(chain.dispatcher, chain.state, block(chain), "sharded", workers=2)
    assert not par.fallback
    assert [r.success for r in par.receipts] == [True, True]
    assert par.state_root == seq.state_root
