"""Write-set scheduling: conflict-free batches, context shards, parallel execution.

Whatever the mode, the result (receipts and state root) equals sequential
execution of the block. Workers execute against an overlay on the unchanged
pre-batch tree and return deltas; only the scheduler thread writes to the
shared tree. A delta that strays outside its declared write set, or shards
whose declared sets overlap, abort the parallel attempt and the whole block
is re-run sequentially.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

from .common import NvmError, sha256
from .dispatch import BlockResult, Dispatcher
from .engines.base import GLOBAL, WriteSet
from .state import StateTree
from .tx import Attested, Block, Receipt, Transaction

log = logging.getLogger(__name__)

DEFAULT_SHARDS = 64
MODES = ("seq", "batched", "sharded")


class BadPrefix(NvmError, ValueError):
    pass


class _ContractViolation(Exception):
    """Internal: parallel execution must be abandoned for this block."""


def write_set(dispatcher: Dispatcher, view: StateTree, tx: Transaction) -> WriteSet:
    """Declared write set of ``tx`` against ``view``; anything undecidable is Global."""
    if not isinstance(tx.auth, Attested) or not tx.payload:
        # raw ingress may create accounts and touches the replay guard
        return GLOBAL
    vm = dispatcher.route(tx.opcode)
    if vm is None:
        return GLOBAL
    try:
        return dispatcher.engine_for(vm).write_set(tx, tx.auth.id_com, view)
    except (NvmError, IndexError, ValueError):
        return GLOBAL


def conflicts(a: WriteSet, b: WriteSet) -> bool:
    if a.is_global or b.is_global:
        return True
    return not a.keys.isdisjoint(b.keys)


def build_batches(sets: Sequence[WriteSet]) -> list[list[int]]:
    """Greedy in-order batch construction.

    A Global or conflicting transaction flushes the open batch and then runs
    as a singleton; it does not seed the next batch.
    """
    batches: list[list[int]] = []
    current: list[int] = []
    used: set[bytes] = set()
    for i, ws in enumerate(sets):
        if ws.is_global or not used.isdisjoint(ws.keys):
            if current:
                batches.append(current)
            batches.append([i])
            current, used = [], set()
        else:
            current.append(i)
            used |= ws.keys
    if current:
        batches.append(current)
    return batches


def shard_of(vm_prefix: bytes, ctx: bytes, k: int = DEFAULT_SHARDS) -> int:
    """SHA-256(len(vm) || vm || ctx) as a big-endian integer, mod k."""
    if len(vm_prefix) > 255:
        raise BadPrefix(f"vm prefix of {len(vm_prefix)} bytes does not fit a length byte")
    if k < 1:
        raise ValueError("shard count must be >= 1")
    digest = sha256(bytes([len(vm_prefix)]), vm_prefix, ctx)
    return int.from_bytes(digest, "big") % k


@dataclass
class ShardPlan:
    k: int
    shards: list[list[int]]
    shared: list[int]

    def assignment(self) -> dict[int, Optional[int]]:
        """tx index -> shard index, or None for the shared queue."""
        out: dict[int, Optional[int]] = {i: None for i in self.shared}
        for s, queue in enumerate(self.shards):
            for i in queue:
                out[i] = s
        return out


def plan_shards(
    dispatcher: Dispatcher, txs: Sequence[Transaction], sets: Sequence[WriteSet], k: int = DEFAULT_SHARDS
) -> ShardPlan:
    shards: list[list[int]] = [[] for _ in range(k)]
    shared: list[int] = []
    for i, (tx, ws) in enumerate(zip(txs, sets)):
        vm = dispatcher.route(tx.opcode) if tx.payload else None
        if tx.context_tag is None or ws.is_global or vm is None:
            shared.append(i)
        else:
            shards[shard_of(vm.encode(), tx.context_tag, k)].append(i)
    return ShardPlan(k, shards, shared)


# -- execution ---------------------------------------------------------------


def _run_queue(dispatcher: Dispatcher, base: StateTree, txs: list[Transaction]) -> list[Receipt]:
    """Run ``txs`` in order on one private overlay over ``base``."""
    overlay = StateTree(base=base)
    return [dispatcher.dispatch_tx(overlay, tx) for tx in txs]


def _run_isolated(dispatcher: Dispatcher, base: StateTree, txs: list[Transaction]) -> list[Receipt]:
    """Run each of ``txs`` on its own overlay over ``base``."""
    return [dispatcher.dispatch_tx(StateTree(base=base), tx) for tx in txs]


def _chunks(items: list, n: int) -> list[list]:
    n = max(1, min(n, len(items)))
    size, extra = divmod(len(items), n)
    out, pos = [], 0
    for i in range(n):
        step = size + (1 if i < extra else 0)
        out.append(items[pos:pos + step])
        pos += step
    return out


def _check_declared(receipt: Receipt, ws: WriteSet) -> None:
    if ws.is_global:
        return
    stray = set(receipt.delta.keys()) - ws.keys
    if stray:
        raise _ContractViolation(f"{len(stray)} write(s) outside the declared set")


class _Runner:
    def __init__(self, dispatcher: Dispatcher, workers: int):
        self.dispatcher = dispatcher
        self.workers = max(1, workers)
        self.pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def close(self) -> None:
        if self.pool is not None:
            self.pool.shutdown()

    def map(self, fn, base: StateTree, groups: list[list[Transaction]]) -> list[list[Receipt]]:
        if self.pool is None or len(groups) == 1:
            return [fn(self.dispatcher, base, g) for g in groups]
        futures = [self.pool.submit(fn, self.dispatcher, base, g) for g in groups]
        return [f.result() for f in futures]

    def batched(self, state: StateTree, txs: list[Transaction], sets: list[WriteSet]):
        plan = build_batches(sets)
        receipts: list[Optional[Receipt]] = [None] * len(txs)
        for batch in plan:
            if len(batch) == 1:
                i = batch[0]
                receipts[i] = self.dispatcher.dispatch_tx(state, txs[i])
                continue
            groups = _chunks(batch, self.workers)
            results = self.map(_run_isolated, state, [[txs[i] for i in g] for g in groups])
            ordered = [(i, r) for g, rs in zip(groups, results) for i, r in zip(g, rs)]
            for i, r in ordered:
                _check_declared(r, sets[i])
            for i, r in ordered:
                r.delta.apply(state)
                receipts[i] = r
        return receipts, len(plan), 0

    def sharded(self, state: StateTree, txs: list[Transaction], sets: list[WriteSet], k: int):
        plan = plan_shards(self.dispatcher, txs, sets, k)
        where = plan.assignment()
        receipts: list[Optional[Receipt]] = [None] * len(txs)
        steps = 0
        i = 0
        while i < len(txs):
            if where[i] is None:
                receipts[i] = self.dispatcher.dispatch_tx(state, txs[i])
                steps += 1
                i += 1
                continue
            # maximal run of shard-routed transactions between shared ones
            j = i
            queues: dict[int, list[int]] = {}
            while j < len(txs) and where[j] is not None:
                queues.setdefault(where[j], []).append(j)
                j += 1
            owner: dict[bytes, int] = {}
            for s, members in queues.items():
                for m in members:
                    for key in sets[m].keys:
                        if owner.setdefault(key, s) != s:
                            raise _ContractViolation("declared sets of two shards overlap")
            shard_ids = sorted(queues)
            # one group per shard; a worker runs whole shards, each on its own overlay
            results = self.map(_run_queue, state, [[txs[m] for m in queues[s]] for s in shard_ids])
            produced = {m: r for s, rs in zip(shard_ids, results) for m, r in zip(queues[s], rs)}
            for m in range(i, j):
                _check_declared(produced[m], sets[m])
            for m in range(i, j):
                produced[m].delta.apply(state)
                receipts[m] = produced[m]
            steps += 1
            i = j
        return receipts, steps, len(plan.shared)


def execute_block_parallel(
    dispatcher: Dispatcher,
    state: StateTree,
    block: Block,
    mode: str = "batched",
    workers: int = 1,
    shards: int = DEFAULT_SHARDS,
) -> BlockResult:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "seq":
        return dispatcher.execute_block(state, block)
    dispatcher.guard.begin_slot(block.slot)
    txs = list(block.transactions)
    sets = [write_set(dispatcher, state, tx) for tx in txs]
    outer = state.snapshot()
    mark = dispatcher.guard.mark()
    runner = _Runner(dispatcher, workers)
    try:
        if mode == "batched":
            receipts, batches, shared = runner.batched(state, txs, sets)
        else:
            receipts, batches, shared = runner.sharded(state, txs, sets, shards)
    except _ContractViolation as exc:
        log.info("parallel execution abandoned (%s); re-running block sequentially", exc)
        state.rollback(outer)
        dispatcher.guard.restore(mark)
        result = dispatcher.execute_block(state, block)
        result.fallback = True
        return result
    finally:
        runner.close()
    state.discard(outer)
    return BlockResult(receipts, state.state_root(), batches=batches, shared_count=shared)
