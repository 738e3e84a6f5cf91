import pytest
from hypothesis import given
from hypothesis import strategies as st

from nvm.dispatch import Dispatcher
from nvm.engines import payloads as P
from nvm.tx import RawAuth
from nvm.workload import (
    DEFAULT_MIX,
    KINDS,
    TAGGABLE,
    BadSpec,
    SplitMix64,
    WorkloadSpec,
    gen_workload,
)

M = (1 << 64) - 1


def splitmix_oracle(seed, n):
    # straight transcription of the published reference generator
    out, x = [], seed
    for _ in range(n):
        x = (x + 0x9E3779B97F4A7C15) & M
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M
        out.append(z ^ (z >> 31))
    return out


def test_splitmix_reference_values():
    rng = SplitMix64(0)
    assert [rng.next_u64() for _ in range(3)] == [
        0xE220A8397B1DCDAF,
        0x6E789E6AA1B965F4,
        0x06C45D188009454F,
    ]


@given(st.integers(0, M))
def test_splitmix_matches_oracle(seed):
    rng = SplitMix64(seed)
    assert [rng.next_u64() for _ in range(5)] == splitmix_oracle(seed, 5)


@given(st.integers(0, M))
def test_splitmix_random_range(seed):
    rng = SplitMix64(seed)
    for _ in range(20):
        x = rng.random()
        assert 0.0 <= x < 1.0
        assert 0 <= rng.below(7) < 7


def test_default_mix():
    assert set(DEFAULT_MIX) <= set(KINDS)
    assert abs(sum(DEFAULT_MIX.values()) - 1.0) < 1e-9
    assert set(TAGGABLE) <= set(KINDS)


def canonical(block):
    return [tx.to_json() for tx in block]


def test_generation_is_deterministic():
    spec = WorkloadSpec(tx_count=200, seed=42, conflict=0.2, tagged=0.3, fail_rate=0.1)
    s1, b1, _ = gen_workload(spec)
    s2, b2, _ = gen_workload(spec)
    assert s1.state_root() == s2.state_root()
    assert canonical(b1) == canonical(b2)
    _, b3, _ = gen_workload(WorkloadSpec(tx_count=200, seed=43, conflict=0.2, tagged=0.3, fail_rate=0.1))
    assert canonical(b1) != canonical(b3)


def test_full_conflict_targets_hot_account():
    spec = WorkloadSpec(tx_count=100, seed=1, conflict=1.0, mix={"native_transfer": 1.0})
    _, block, world = gen_workload(spec)
    for tx in block:
        assert P.decode_native(tx.payload).to == world.hot


def test_tagging_respects_kinds_and_groups():
    spec = WorkloadSpec(tx_count=400, seed=5, tagged=1.0)
    _, block, world = gen_workload(spec)
    tagged = [tx for tx in block if tx.context_tag is not None]
    assert tagged
    for tx in block:
        if isinstance(tx.auth, RawAuth):
            assert tx.context_tag is None
    members = {tx.auth.id_com for tx in tagged}
    group_of = {m: g for g, ids in enumerate(world.groups) for m in ids}
    assert members <= set(group_of)


def test_native_only_mix():
    spec = WorkloadSpec(tx_count=100, seed=3, mix={"native_transfer": 1.0})
    _, block, _ = gen_workload(spec)
    assert all(tx.payload[0] == 0x01 for tx in block)


def test_fail_rate_produces_failures():
    spec = WorkloadSpec(tx_count=300, seed=9, fail_rate=0.5)
    state, block, _ = gen_workload(spec)
    res = Dispatcher.default(spec.chain_domain).execute_block(state, block)
    failed = sum(not r.success for r in res.receipts)
    assert 90 < failed < 210


def test_clean_workload_mostly_succeeds():
    spec = WorkloadSpec(tx_count=300, seed=11)
    state, block, _ = gen_workload(spec)
    res = Dispatcher.default(spec.chain_domain).execute_block(state, block)
    failed = [r.error.code for r in res.receipts if not r.success]
    assert failed == []


@pytest.mark.parametrize(
    "kwargs",
    [
        {"tx_count": -1},
        {"conflict": 1.5},
        {"tagged": -0.1},
        {"mix": {"warp_drive": 1.0}},
        {"mix": {"native_transfer": 0.8, "evm_transfer": 0.8}},
        {"accounts": 2},
        {"groups": 0},
        {"groups": 40},
        {"seed": -1},
    ],
)
def test_bad_specs(kwargs):
    with pytest.raises(BadSpec):
        gen_workload(WorkloadSpec(**kwargs))


def test_spec_from_dict():
    spec = WorkloadSpec.from_dict({"tx_count": 10, "seed": 4, "mix": {"native_transfer": 1.0}})
    assert spec.tx_count == 10 and spec.seed == 4
    with pytest.raises(BadSpec):
        WorkloadSpec.from_dict({"tx_count": 10, "bogus": 1})
