import hashlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvm import accounts, token
from nvm.common import VmId
from nvm.engines import payloads as P
from nvm.engines.bvm import encode_utxo, txid_of, utxo_key
from nvm.engines.evm import (
    ERC20_BALANCE_OF,
    ERC20_TRANSFER,
    RESOLVE_SVM_ADDR,
    erc20_calldata,
    precompile_address,
    storage_key,
)
from nvm.engines.tvm import REMAP, remap
from nvm.identity import address_for, make_attestation

from support import FUNDS, Chain


def sha(*parts):
    return hashlib.sha256(b"".join(parts)).digest()


@pytest.fixture
def chain():
    return Chain(4)


def deploy_evm(chain, sender, program):
    r = chain.run(sender, P.evm_deploy(P.encode_program(program)))
    assert r.success, r.error
    return r.logs[0]


def deploy_svm(chain, sender, program):
    r = chain.run(sender, P.svm_deploy(P.encode_program(program)))
    assert r.success, r.error
    return r.logs[0]


# -- native ------------------------------------------------------------------


def test_native_transfer_full_balance(chain):
    a, b = chain.ids[:2]
    r = chain.run(a, P.native_transfer(b, FUNDS))
    assert r.success
    assert chain.native(0) == 0 and chain.native(1) == 2 * FUNDS
    assert set(r.delta.keys()) == {accounts.native_balance_key(a), accounts.native_balance_key(b)}


def test_native_self_transfer_noop(chain):
    a = chain.ids[0]
    root = chain.state.state_root()
    assert chain.run(a, P.native_transfer(a, 10)).success
    assert chain.state.state_root() == root


def test_native_trailing_garbage(chain):
    a, b = chain.ids[:2]
    root = chain.state.state_root()
    r = chain.run(a, P.native_transfer(b, 1) + b"\x00")
    assert not r.success and r.error.code == "MalformedPayload"
    assert chain.state.state_root() == root


def test_native_overdraft(chain):
    a, b = chain.ids[:2]
    r = chain.run(a, P.native_transfer(b, FUNDS + 1))
    assert r.error.code == "InsufficientBalance"


def test_create_account_and_rotate_key(chain):
    a = chain.ids[0]
    new = sha(b"new account")
    r = chain.run(a, P.create_account(new))
    assert r.success and r.logs == [new]
    assert accounts.resolve_evm(chain.state, address_for(VmId.EVM, new)) == new
    assert accounts.resolve_tron(chain.state, address_for(VmId.TVM, new)) == new
    assert chain.run(a, P.create_account(new)).error.code == "AccountExists"
    fresh = sha(b"rotated")
    assert chain.run(a, P.set_auth_key(fresh)).success
    assert accounts.get_auth_key(chain.state, a) == fresh


# -- evm ---------------------------------------------------------------------


def test_resolve_svm_addr_precompile(chain):
    a = chain.ids[0]
    r = chain.run(a, P.evm_call(precompile_address(RESOLVE_SVM_ADDR)))
    assert r.success and r.logs == [sha(b"svm:", a)]


def test_stubbed_precompiles(chain):
    for n in range(0x0100, 0x0106):
        r = chain.run(chain.ids[0], P.evm_call(precompile_address(n)))
        assert r.error.code == "PrecompileUnimplemented"


def test_deploy_then_call_writes_storage(chain):
    a = chain.ids[0]
    slot = b"\x07" * 32
    contract = deploy_evm(chain, a, [P.WriteOp(slot, b"value"), P.EmitLogOp(b"done")])
    assert len(contract) == 20
    r = chain.run(a, P.evm_call(contract))
    assert r.success and r.logs == [b"done"]
    assert chain.state.get(storage_key(contract, slot)) == b"value"


def test_deploy_address_follows_nonce(chain):
    a = chain.ids[0]
    me = address_for(VmId.EVM, a)
    first = deploy_evm(chain, a, [P.FailOp()])
    second = deploy_evm(chain, a, [P.FailOp()])
    assert first == sha(b"evm-code:", me, (0).to_bytes(8, "big"))[12:]
    assert second == sha(b"evm-code:", me, (1).to_bytes(8, "big"))[12:]


def test_program_fail_rolls_back(chain):
    a, b = chain.ids[:2]
    contract = deploy_evm(chain, a, [
        P.WriteOp(b"\x01" * 32, b"x"),
        P.TransferOp(address_for(VmId.EVM, b), 5),
        P.FailOp(),
    ])
    root = chain.state.state_root()
    r = chain.run(a, P.evm_call(contract))
    assert not r.success and r.error.code == "ProgramFailed"
    assert chain.state.state_root() == root


def test_unknown_contract(chain):
    r = chain.run(chain.ids[0], P.evm_call(b"\x42" * 20))
    assert r.error.code == "UnknownContract"


def test_erc20_and_spl_paths_hit_the_same_slots(chain):
    a, b = chain.ids[:2]
    mint = chain.new_mint()
    twin = Chain(4)
    twin_mint = twin.new_mint()
    assert twin_mint == mint
    r1 = chain.run(a, P.evm_call(token.erc20_address(mint), erc20_calldata(ERC20_TRANSFER, address_for(VmId.EVM, b), 25)))
    r2 = twin.run(a, P.spl_transfer(mint, b, 25))
    assert r1.success and r2.success
    assert r1.delta == r2.delta
    assert chain.state.state_root() == twin.state.state_root()
    r = chain.run(a, P.evm_call(token.erc20_address(mint), erc20_calldata(ERC20_BALANCE_OF, address_for(VmId.EVM, b))))
    assert r.logs == [(1025).to_bytes(32, "big")]


def test_erc20_transfer_to_unknown_address_fails(chain):
    mint = chain.new_mint()
    r = chain.run(chain.ids[0], P.evm_call(token.erc20_address(mint), erc20_calldata(ERC20_TRANSFER, b"\x09" * 20, 1)))
    assert r.error.code == "UnresolvableAddress"


# -- svm ---------------------------------------------------------------------


def test_svm_system_transfer(chain):
    a, b = chain.ids[:2]
    r = chain.run(a, P.svm_transfer(address_for(VmId.SVM, b), 9))
    assert r.success
    assert set(r.delta.keys()) == {
        accounts.svm_balance_key(address_for(VmId.SVM, a)),
        accounts.svm_balance_key(address_for(VmId.SVM, b)),
    }


def test_ace_id_com_syscall(chain):
    a = chain.ids[0]
    pid = deploy_svm(chain, a, [P.SyscallOp("ace_id_com", b"")])
    caller = chain.ids[2]
    r = chain.run(caller, P.svm_invoke(pid))
    assert r.success and r.logs == [caller]


def test_ace_attest_syscall(chain):
    a = chain.ids[0]
    digest = sha(b"something")
    good = make_attestation(chain.keys[a], digest)
    pid_ok = deploy_svm(chain, a, [P.SyscallOp("ace_attest", digest + good), P.WriteOp(bytes(32), b"1")])
    pid_bad = deploy_svm(chain, a, [P.WriteOp(bytes(32), b"1"), P.SyscallOp("ace_attest", digest + bytes(32))])
    assert chain.run(a, P.svm_invoke(pid_ok)).success
    root = chain.state.state_root()
    r = chain.run(a, P.svm_invoke(pid_bad))
    assert r.error.code == "AttestFailed"
    assert chain.state.state_root() == root


def test_builtin_programs_via_invoke(chain):
    a, b = chain.ids[:2]
    mint = chain.new_mint()
    r = chain.run(a, P.svm_invoke(token.SPL_PROGRAM_ID, P.spl_transfer(mint, b, 3)))
    assert r.success and token.balance(chain.state, mint, b) == 1003
    r = chain.run(a, P.svm_invoke(bytes(32), P.svm_transfer(address_for(VmId.SVM, b), 3)))
    assert r.success
    r = chain.run(a, P.svm_invoke(bytes(32), P.spl_transfer(mint, b, 3)))
    assert r.error.code == "MalformedPayload"


def test_spl_admin_ops(chain):
    a, b, c = chain.ids[:3]
    r = chain.run(a, P.svm_create_mint(2, b"svm-mint"))
    assert r.success
    mint = r.logs[0]
    assert chain.run(a, P.svm_mint_to(mint, b, 50)).success
    assert chain.run(b, P.svm_mint_to(mint, b, 50)).error.code == "NotAuthority"
    assert chain.run(b, P.svm_approve(mint, c, 20)).success
    assert chain.run(c, P.svm_transfer_from(mint, b, a, 20)).success
    assert token.balance(chain.state, mint, a) == 20
    assert chain.run(c, P.svm_transfer_from(mint, b, a, 1)).error.code == "AllowanceExceeded"


# -- bvm ---------------------------------------------------------------------


def seed_utxo(chain, owner, amount, tag=b"u"):
    txid = sha(b"seed", tag)
    chain.state.put(utxo_key(txid, 0), encode_utxo(owner, amount))
    return txid


def utxo_total(state):
    return sum(
        int.from_bytes(v[32:40], "big")
        for k, v in state.items()
        if len(v) == 40
    )


def test_bvm_split_conserves(chain):
    a, b = chain.ids[:2]
    txid = seed_utxo(chain, a, 100)
    payload = P.utxo_transfer([(txid, 0)], [(b, 60), (a, 40)])
    r = chain.run(a, payload)
    assert r.success and r.logs == [b"fee:" + bytes(8)]
    new = txid_of(payload)
    assert chain.state.get(utxo_key(txid, 0)) is None
    assert chain.state.get(utxo_key(new, 0)) == encode_utxo(b, 60)
    assert chain.state.get(utxo_key(new, 1)) == encode_utxo(a, 40)


def test_bvm_guards(chain):
    a, b = chain.ids[:2]
    txid = seed_utxo(chain, a, 100)
    assert chain.run(a, P.utxo_transfer([(txid, 0)], [(b, 101)])).error.code == "OutputsExceedInputs"
    assert chain.run(b, P.utxo_transfer([(txid, 0)], [(b, 1)])).error.code == "NotOwner"
    assert chain.run(a, P.utxo_transfer([(txid, 1)], [(b, 1)])).error.code == "MissingUtxo"


def test_bvm_double_spend_in_block(chain):
    a, b, c = chain.ids[:3]
    txid = seed_utxo(chain, a, 100)
    block = chain.block([
        (a, P.utxo_transfer([(txid, 0)], [(b, 100)])),
        (a, P.utxo_transfer([(txid, 0)], [(c, 100)])),
    ])
    res = chain.dispatcher.execute_block(chain.state, block)
    assert [r.success for r in res.receipts] == [True, False]
    assert res.receipts[1].error.code == "MissingUtxo"


def test_bvm_fee_is_logged_and_burned(chain):
    a, b = chain.ids[:2]
    txid = seed_utxo(chain, a, 100)
    before = utxo_total(chain.state)
    r = chain.run(a, P.utxo_transfer([(txid, 0)], [(b, 70)]))
    assert r.logs == [b"fee:" + (30).to_bytes(8, "big")]
    assert utxo_total(chain.state) == before - 30


# -- tvm ---------------------------------------------------------------------


def test_remap_table_is_injective():
    assert sorted(REMAP.values()) == [0x10, 0x11, 0x12]
    assert len(set(REMAP.values())) == len(REMAP)


def test_tvm_transfer_equals_evm_transfer(chain):
    a, b = chain.ids[:2]
    twin = Chain(4)
    r_tvm = chain.run(a, P.evm_transfer(address_for(VmId.TVM, b), 11, opcode=P.TVM_TRANSFER))
    r_evm = twin.run(a, P.evm_transfer(address_for(VmId.EVM, b), 11))
    assert r_tvm.success and r_tvm.vm == "tvm" and r_evm.vm == "evm"
    assert r_tvm.delta == r_evm.delta


def test_tvm_unmapped_and_unresolvable(chain):
    a = chain.ids[0]
    r = chain.run(a, bytes([0x4A]) + bytes(28))
    assert r.error.code == "UnmappedOpcode"
    r = chain.run(a, P.evm_transfer(b"\x05" * 20, 1, opcode=P.TVM_TRANSFER))
    assert r.error.code == "UnresolvableAddress"


def test_tvm_call_to_precompile_and_erc20(chain):
    a, b = chain.ids[:2]
    r = chain.run(a, P.evm_call(precompile_address(RESOLVE_SVM_ADDR), opcode=P.TVM_CALL))
    assert r.success and r.logs == [address_for(VmId.SVM, a)]
    mint = chain.new_mint()
    data = erc20_calldata(ERC20_TRANSFER, address_for(VmId.TVM, b), 5)
    r = chain.run(a, P.evm_call(token.erc20_address(mint), data, opcode=P.TVM_CALL))
    assert r.success and token.balance(chain.state, mint, b) == 1005


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 3), st.integers(0, 3), st.integers(0, FUNDS * 2))
def test_tvm_is_remapped_evm(i, j, amount):
    c1, c2 = Chain(4), Chain(4)
    sender, to = c1.ids[i], c1.ids[j]
    tx = c1.tx(sender, P.evm_transfer(address_for(VmId.TVM, to), amount, opcode=P.TVM_TRANSFER))
    evm_tx = remap(c2.state, tx)
    tvm_receipt, tvm_delta = c1.dispatcher.engine_for("tvm").execute(c1.state, tx, sender)
    evm_receipt, evm_delta = c2.dispatcher.engine_for("evm").execute(c2.state, evm_tx, sender)
    assert tvm_delta == evm_delta
    assert tvm_receipt.success == evm_receipt.success


# -- namespaces --------------------------------------------------------------


def test_balance_namespaces_disjoint():
    ids = [sha(b"ns", i.to_bytes(4, "big")) for i in range(2000)]
    native = {accounts.native_balance_key(i) for i in ids}
    evm = {accounts.evm_balance_key(address_for(VmId.EVM, i)) for i in ids}
    svm = {accounts.svm_balance_key(address_for(VmId.SVM, i)) for i in ids}
    assert len(native) == len(evm) == len(svm) == len(ids)
    assert not (native & evm) and not (native & svm) and not (evm & svm)


def test_engine_determinism(chain):
    a, b = chain.ids[:2]
    mint = chain.new_mint()
    payloads = [
        P.native_transfer(b, 5),
        P.evm_transfer(address_for(VmId.EVM, b), 5),
        P.svm_transfer(address_for(VmId.SVM, b), 5),
        P.spl_transfer(mint, b, 5),
        P.evm_call(precompile_address(RESOLVE_SVM_ADDR)),
    ]
    for payload in payloads:
        twin = chain.state.copy()
        r1 = chain.dispatcher.dispatch_tx(chain.state.copy(), chain.tx(a, payload))
        r2 = chain.dispatcher.dispatch_tx(twin, chain.tx(a, payload))
        assert r1 == r2 and r1.delta == r2.delta


def test_payload_decoders_reject_truncation():
    mint = bytes(32)
    for payload in (P.native_transfer(bytes(32), 1), P.spl_transfer(mint, bytes(32), 1), P.svm_transfer(bytes(32), 1)):
        with pytest.raises(P.MalformedPayload):
            (P.decode_native if payload[0] < 0x10 else P.decode_svm)(payload[:-1])


@given(st.lists(st.sampled_from([
    P.WriteOp(b"\x01" * 32, b"v"),
    P.TransferOp(b"\x02" * 20, 7),
    P.CallPreOp(b"\x03" * 20, b"data"),
    P.EmitLogOp(b"log"),
    P.FailOp(),
    P.SyscallOp("ace_id_com", b""),
]), max_size=20))
def test_program_round_trip(program):
    assert P.decode_program(P.encode_program(program)) == program


def test_program_length_limit():
    with pytest.raises(ValueError):
        P.encode_program([P.FailOp()] * (P.MAX_PROGRAM_LEN + 1))
    raw = (P.MAX_PROGRAM_LEN + 1).to_bytes(2, "big") + bytes([P.OP_FAIL]) * (P.MAX_PROGRAM_LEN + 1)
    with pytest.raises(P.MalformedPayload):
        P.decode_program(raw)
