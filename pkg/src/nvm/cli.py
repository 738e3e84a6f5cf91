"""Command-line harness.

Exit codes: 0 success, 2 validation failure (bad input, rejected operation),
3 execution contract violation (parallel result differs from sequential).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Optional

from . import token
from .accounts import resolve_evm
from .common import NvmError, VmId
from .dispatch import Dispatcher, config_from_file
from .identity import address_for, all_addresses, legacy_id_com
from .ingress import DEFAULT_CHAIN_DOMAIN, RawTxEnvelope, ReplayGuard, verify_raw
from .scheduler import DEFAULT_SHARDS, MODES, execute_block_parallel
from .state import StateTree
from .tx import Block
from .workload import WorkloadSpec, gen_workload

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_CONTRACT = 3

log = logging.getLogger("nvm")


class UsageError(NvmError):
    pass


def _read_json(path: str) -> Any:
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None


def _write_json(path: str, doc: Any) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _emit(doc: Any) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def _hex(value: str, name: str, length: Optional[int] = None) -> bytes:
    try:
        raw = bytes.fromhex(value.removeprefix("0x"))
    except ValueError:
        raise UsageError(f"{name}: not a hex string") from None
    if length is not None and len(raw) != length:
        raise UsageError(f"{name}: expected {length} bytes, got {len(raw)}")
    return raw


def _amount(value: str) -> int:
    try:
        n = int(value, 10)
    except ValueError:
        raise UsageError(f"amount {value!r} is not a decimal integer") from None
    if not 0 <= n < 1 << 64:
        raise UsageError(f"amount {n} outside uint64")
    return n


def _load_state(path: str) -> StateTree:
    doc = _read_json(path)
    try:
        return StateTree.load(doc)
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{path}: not a state dump ({exc!r})") from None


def _load_config(args) -> dict[str, Any]:
    return config_from_file(args.config) if getattr(args, "config", None) else {}


def _settings(args, config: dict[str, Any]) -> tuple[int, int]:
    workers = args.workers if args.workers is not None else int(config.get("workers", 1))
    shards = args.shards if args.shards is not None else int(config.get("shards", DEFAULT_SHARDS))
    if workers < 1 or shards < 1:
        raise UsageError("workers and shards must be >= 1")
    return workers, shards


# -- subcommands -------------------------------------------------------------


def cmd_gen_workload(args) -> int:
    doc = _read_json(args.spec) if args.spec else {}
    for name in ("tx_count", "seed", "conflict", "tagged", "fail_rate", "accounts", "groups"):
        value = getattr(args, name)
        if value is not None:
            doc[name] = value
    if args.mix:
        try:
            doc["mix"] = json.loads(args.mix)
        except json.JSONDecodeError as exc:
            raise UsageError(f"--mix: {exc.msg}") from None
    spec = WorkloadSpec.from_dict(doc)
    genesis, block, _ = gen_workload(spec)
    _write_json(args.genesis, genesis.dump())
    _write_json(args.block, block.to_json())
    _emit({"genesis": args.genesis, "block": args.block, "txs": len(block), "genesis_root": genesis.state_root().hex()})
    return EXIT_OK


def _run(dispatcher: Dispatcher, state: StateTree, block: Block, mode: str, workers: int, shards: int):
    t0 = time.perf_counter()
    result = execute_block_parallel(dispatcher, state, block, mode, workers, shards)
    wall = time.perf_counter() - t0
    return result, wall


def cmd_run_block(args) -> int:
    config = _load_config(args)
    workers, shards = _settings(args, config)
    genesis = _load_state(args.genesis)
    block = Block.from_json(_read_json(args.block))
    state = genesis.copy()
    result, wall = _run(Dispatcher.from_config(config), state, block, args.mode, workers, shards)
    report = {
        "receipts_digest": result.receipts_digest.hex(),
        "state_root": result.state_root.hex(),
        "wall_ms": round(wall * 1000, 3),
        "tps": round(len(block) / wall, 1) if wall > 0 else None,
        "batches": result.batches,
    }
    if args.receipts:
        _write_json(args.receipts, [r.to_json() for r in result.receipts])
    if args.out_state:
        _write_json(args.out_state, state.dump())
    if args.verify and args.mode != "seq":
        ref = Dispatcher.from_config(config).execute_block(genesis.copy(), block)
        if (ref.state_root, ref.receipts_digest) != (result.state_root, result.receipts_digest):
            log.error("parallel result differs from sequential execution")
            _emit(report)
            return EXIT_CONTRACT
    _emit(report)
    return EXIT_OK


def cmd_derive(args) -> int:
    id_com = _hex(args.id_com, "id_com", 32)
    _emit({str(vm): addr.hex() for vm, addr in all_addresses(id_com).items()})
    return EXIT_OK


def cmd_legacy_id(args) -> int:
    raw = _hex(args.bytes, "address")
    _emit({"chain": args.chain, "id_com": legacy_id_com(args.chain, raw).hex()})
    return EXIT_OK


def cmd_verify_raw(args) -> int:
    config = _load_config(args)
    env = RawTxEnvelope.from_json(_read_json(args.file))
    guard = ReplayGuard()
    guard.begin_slot(args.slot)
    domain = int(config.get("chain_domain", DEFAULT_CHAIN_DOMAIN))
    try:
        id_com, tx = verify_raw(env, guard, domain)
    except NvmError as exc:
        _emit({"accepted": False, "error": {"code": exc.code, "message": str(exc)}})
        return EXIT_INVALID
    _emit({"accepted": True, "id_com": id_com.hex(), "transaction": tx.to_json()})
    return EXIT_OK


def cmd_token(args) -> int:
    path = args.state
    state = _load_state(path) if Path(path).exists() else StateTree()
    out: dict[str, Any]
    if args.token_cmd == "create-mint":
        mint = token.create_mint(state, _hex(args.authority, "authority", 32), args.decimals, _hex(args.seed, "seed"))
        out = {"mint": mint.hex(), "erc20_address": token.erc20_address(mint).hex()}
    elif args.token_cmd == "mint":
        mint = _hex(args.mint, "mint", 32)
        token.mint_to(state, mint, _hex(args.caller, "caller", 32), _hex(args.dest, "dest", 32), _amount(args.amount))
        out = {"mint": mint.hex(), "supply": token.mint_meta(state, mint).supply}
    elif args.token_cmd == "transfer":
        mint = _hex(args.mint, "mint", 32)
        token.transfer(state, mint, _hex(args.frm, "from", 32), _hex(args.to, "to", 32), _amount(args.amount))
        out = {"mint": mint.hex(), "ok": True}
    else:
        mint = _hex(args.mint, "mint", 32)
        id_com = _hex(args.id, "id", 32)
        if args.view == "ledger":
            out = {"balance": token.balance(state, mint, id_com)}
        elif args.view == "erc20":
            addr = address_for(VmId.EVM, id_com)
            out = {
                "address": addr.hex(),
                "balance": token.erc20_balance_of(state, mint, addr),
                # balanceOf resolves through the reverse index; unregistered holders read 0
                "registered": resolve_evm(state, addr) is not None,
            }
        else:
            ata = token.spl_ata(id_com, mint)
            out = {"ata": ata.hex(), "balance": token.spl_balance(state, ata)}
        out["view"] = args.view
        _emit(out)
        return EXIT_OK
    _write_json(path, state.dump())
    out["state_root"] = state.state_root().hex()
    _emit(out)
    return EXIT_OK


def cmd_state_root(args) -> int:
    print(_load_state(args.file).state_root().hex())
    return EXIT_OK


def cmd_bench(args) -> int:
    config = _load_config(args)
    workers, shards = _settings(args, config)
    spec = WorkloadSpec(
        tx_count=args.txs, conflict=args.conflict, tagged=args.tagged, seed=args.seed,
        mix={"native_transfer": 1.0} if args.native_only else WorkloadSpec().mix,
    )
    genesis, block, _ = gen_workload(spec)
    result, wall = _run(Dispatcher.from_config(config), genesis, block, args.mode, workers, shards)
    _emit({
        "mode": args.mode,
        "txs": len(block),
        "wall_ms": round(wall * 1000, 3),
        "tps": round(len(block) / wall, 1) if wall > 0 else None,
        "batches": result.batches,
        "shared_count": result.shared_count,
        "root": result.state_root.hex(),
    })
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def _fraction(value: str) -> float:
    x = float(value)
    if not 0.0 <= x <= 1.0:
        raise argparse.ArgumentTypeError(f"{value} is not in [0, 1]")
    return x


def _exec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=MODES, default="seq")
    p.add_argument("--workers", type=int, default=None, help="worker threads (config: workers, default 1)")
    p.add_argument("--shards", type=int, default=None, help="shard count K (config: shards, default 64)")
    p.add_argument("--config", help="JSON config: opcode_ranges, shards, workers, chain_domain")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvm", description="Multi-VM execution engine harness")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-workload", help="generate a genesis state and a block")
    p.add_argument("--spec", help="JSON WorkloadSpec; flags below override its fields")
    p.add_argument("--txs", dest="tx_count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--conflict", type=_fraction)
    p.add_argument("--tagged", type=_fraction)
    p.add_argument("--fail-rate", dest="fail_rate", type=_fraction)
    p.add_argument("--accounts", type=int)
    p.add_argument("--groups", type=int)
    p.add_argument("--mix", help='JSON object of kind fractions, e.g. \'{"native_transfer": 1.0}\'')
    p.add_argument("--genesis", required=True, help="output path for the genesis state")
    p.add_argument("--block", required=True, help="output path for the block")
    p.set_defaults(func=cmd_gen_workload)

    p = sub.add_parser("run-block", help="execute a block against a genesis state")
    p.add_argument("--genesis", required=True)
    p.add_argument("--block", required=True)
    _exec_flags(p)
    p.add_argument("--receipts", help="write receipts JSON here")
    p.add_argument("--out-state", help="write the post-state dump here")
    p.add_argument("--verify", action="store_true", help="also run sequentially and compare (exit 3 on mismatch)")
    p.set_defaults(func=cmd_run_block)

    p = sub.add_parser("derive", help="all per-VM addresses of an id_com")
    p.add_argument("id_com", help="32-byte hex")
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("legacy-id", help="legacy identity for a raw chain address or key")
    p.add_argument("chain", choices=["evm", "sol", "btc", "tron"])
    p.add_argument("bytes", help="address or public key, hex")
    p.set_defaults(func=cmd_legacy_id)

    p = sub.add_parser("verify-raw", help="verify a raw-chain envelope JSON file")
    p.add_argument("file")
    p.add_argument("--slot", type=int, default=0, help="current slot for Solana window checks")
    p.add_argument("--config")
    p.set_defaults(func=cmd_verify_raw)

    p = sub.add_parser("token", help="unified token ledger operations on a state file")
    tsub = p.add_subparsers(dest="token_cmd", required=True)
    t = tsub.add_parser("create-mint")
    t.add_argument("--state", required=True)
    t.add_argument("--authority", required=True)
    t.add_argument("--decimals", type=int, default=0)
    t.add_argument("--seed", required=True, help="mint seed, hex")
    t = tsub.add_parser("mint")
    t.add_argument("--state", required=True)
    t.add_argument("--mint", required=True)
    t.add_argument("--caller", required=True)
    t.add_argument("--dest", required=True)
    t.add_argument("--amount", required=True)
    t = tsub.add_parser("transfer")
    t.add_argument("--state", required=True)
    t.add_argument("--mint", required=True)
    t.add_argument("--from", dest="frm", required=True)
    t.add_argument("--to", required=True)
    t.add_argument("--amount", required=True)
    t = tsub.add_parser("balance")
    t.add_argument("--state", required=True)
    t.add_argument("--mint", required=True)
    t.add_argument("--id", required=True, help="owner id_com, hex")
    t.add_argument("--view", choices=["ledger", "erc20", "spl"], default="ledger")
    p.set_defaults(func=cmd_token)

    p = sub.add_parser("state-root", help="state root of a state dump")
    p.add_argument("file")
    p.set_defaults(func=cmd_state_root)

    p = sub.add_parser("bench", help="generate a workload and time one execution mode")
    _exec_flags(p)
    p.add_argument("--txs", type=int, default=10_000)
    p.add_argument("--conflict", type=_fraction, default=0.0)
    p.add_argument("--tagged", type=_fraction, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--native-only", action="store_true", help="only native transfers")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NvmError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
