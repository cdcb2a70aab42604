from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from qotmpc.oprf import (
    IdealOt,
    OprfAbort,
    OprfReceiverOutput,
    OprfSenderKey,
    PrcSpec,
    QotOt,
    crh,
    oprf_receiver,
    oprf_sender,
    output_bits,
    prc_encode,
    prc_encode_packed,
    receiver_matrices,
    receiver_output_eval,
    run_base_ots,
    run_oprf,
    sender_eval,
    sender_eval_many,
)
from qotmpc.testutils import clean_optics, small_params
from qotmpc.transport import LocalChannel
from qotmpc.utils import random_bits
from qotmpc.wire import Tag, WireMessage

INPUTS = [b"apple", b"banana", b"cherry", b"", None, b"elderberry"]


def _build_key(inputs, s, rng, k_width=256):
    spec = PrcSpec.random(rng, k_width)
    matrices = receiver_matrices(spec, inputs, rng)
    columns = run_base_ots(k_width, len(inputs), s, matrices.column_pairs(), IdealOt(), rng)
    key = OprfSenderKey(spec, np.asarray(s, dtype=np.uint8), np.stack(columns, axis=1))
    outputs = [OprfReceiverOutput(spec, j, matrices.t0[j]) for j in range(len(inputs))]
    return key, outputs, matrices


def test_output_bits():
    assert output_bits(1) == 66
    assert output_bits(1000) == 84
    assert output_bits(1024) == 84


def test_prc_spec_validation():
    with pytest.raises(ValueError):
        PrcSpec(bytes(16), k_width=128)
    with pytest.raises(ValueError):
        PrcSpec(bytes(16), k_width=260)


def test_prc_is_deterministic_per_seed():
    spec = PrcSpec(bytes(16), 512)
    other = PrcSpec(bytes([1]) * 16, 512)
    word = prc_encode(spec, b"apple")
    assert word.shape == (512,)
    np.testing.assert_array_equal(word, prc_encode(spec, b"apple"))
    assert not np.array_equal(word, prc_encode(other, b"apple"))
    assert not np.array_equal(word, prc_encode(spec, b"apples"))
    packed = prc_encode_packed(spec, [b"apple", None])
    np.testing.assert_array_equal(np.unpackbits(packed[0]), word)


def test_dummy_input_is_not_the_empty_string():
    spec = PrcSpec(bytes(16), 256)
    assert not np.array_equal(prc_encode(spec, None), prc_encode(spec, b""))


def test_crh_truncation():
    row = bytes(32)
    for v in (1, 7, 66, 256):
        assert 0 <= crh(3, row, v) < 2**v
    assert crh(3, row, 256) >> (256 - 66) == crh(3, row, 66)
    assert crh(3, row, 66) != crh(4, row, 66)
    with pytest.raises(ValueError):
        crh(0, row, 0)


def test_sender_rows_are_correlated():
    rng = np.random.default_rng(0)
    s = random_bits(rng, 256)
    key, _, matrices = _build_key(INPUTS, s, rng)
    codes = np.unpackbits(prc_encode_packed(key.code, INPUTS), axis=1)
    np.testing.assert_array_equal(key.q, matrices.t0 ^ (codes & s))


def test_outputs_agree_on_the_receiver_inputs():
    run = run_oprf(INPUTS, IdealOt(), np.random.default_rng(1), k_width=256)
    assert run.v == output_bits(len(INPUTS))
    mine = [receiver_output_eval(out, run.v) for out in run.outputs]
    for j, r in enumerate(INPUTS):
        assert sender_eval(run.key, j, r, run.v) == mine[j]
        assert sender_eval(run.key, j, b"durian", run.v) != mine[j]
    # Row j answers only for r_j, never for another row's input.
    assert sender_eval(run.key, 0, INPUTS[1], run.v) != mine[0]
    assert sender_eval(run.key, 4, b"", run.v) != mine[4]
    assert sender_eval(run.key, 3, None, run.v) != mine[3]
    rows = [0, 1, 2, 5, 0]
    candidates = [b"apple", b"x", b"cherry", b"elderberry", None]
    assert sender_eval_many(run.key, rows, candidates, run.v) == [
        sender_eval(run.key, j, c, run.v) for j, c in zip(rows, candidates)
    ]
    with pytest.raises(ValueError):
        sender_eval(run.key, len(INPUTS), b"apple", run.v)


def test_all_zero_secret_makes_every_candidate_match():
    rng = np.random.default_rng(2)
    key, outputs, matrices = _build_key(INPUTS, np.zeros(256, dtype=np.uint8), rng)
    np.testing.assert_array_equal(key.q, matrices.t0)
    v = output_bits(len(INPUTS))
    for j in range(len(INPUTS)):
        assert sender_eval(key, j, b"anything", v) == receiver_output_eval(outputs[j], v)


def test_all_one_secret_holds_t1():
    rng = np.random.default_rng(3)
    key, outputs, matrices = _build_key(INPUTS, np.ones(256, dtype=np.uint8), rng)
    np.testing.assert_array_equal(key.q, matrices.t1)
    v = output_bits(len(INPUTS))
    for j, r in enumerate(INPUTS):
        assert sender_eval(key, j, r, v) == receiver_output_eval(outputs[j], v)


def test_base_ot_input_checks():
    rng = np.random.default_rng(4)
    pairs = [(np.zeros(4, dtype=np.uint8), np.ones(4, dtype=np.uint8))] * 3
    with pytest.raises(ValueError):
        run_base_ots(3, 4, [0, 1], pairs, IdealOt(), rng)
    with pytest.raises(ValueError):
        run_base_ots(2, 4, [0, 1], pairs, IdealOt(), rng)
    with pytest.raises(ValueError):
        run_base_ots(3, 5, [0, 1, 1], pairs, IdealOt(), rng)
    got = run_base_ots(3, 4, [0, 1, 1], pairs, IdealOt(), rng)
    assert [int(col[0]) for col in got] == [0, 1, 1]


def _over_channel(inputs, backend, seed, k_width=256):
    r_ch, s_ch = LocalChannel.pair("receiver", "sender")
    with ThreadPoolExecutor(max_workers=2) as pool:
        receiving = pool.submit(oprf_receiver, r_ch, inputs, backend, np.random.default_rng(seed), k_width)
        sending = pool.submit(oprf_sender, s_ch, backend, np.random.default_rng(seed + 1))
        return receiving.result(timeout=120), sending.result(timeout=120), r_ch.transcript


def test_oprf_over_a_channel():
    inputs = [b"secret-item-alpha", b"secret-item-beta", None]
    (outputs, _, v), (key, sender_v), transcript = _over_channel(inputs, IdealOt(), 5)
    assert v == sender_v == output_bits(3)
    for j, r in enumerate(inputs):
        assert sender_eval(key, j, r, v) == receiver_output_eval(outputs[j], v)
    assert [e.tag for e in transcript] == [Tag.OPRF_HEADER, Tag.OT_COLUMNS]
    for entry in transcript:
        assert b"secret-item" not in entry.payload


def test_oprf_sender_rejects_a_bad_header():
    r_ch, s_ch = LocalChannel.pair("receiver", "sender")
    r_ch.send(WireMessage(Tag.OPRF_HEADER, b"short"))
    with pytest.raises(OprfAbort):
        oprf_sender(s_ch, IdealOt(), np.random.default_rng(0))


def test_quantum_base_ots_move_strings_in_chunks():
    params = small_params()
    backend = QotOt(params, clean_optics(), seed=7)
    rng = np.random.default_rng(8)
    # 40 bits need two λ = 32 sessions per column.
    pairs = [(random_bits(rng, 40), random_bits(rng, 40)) for _ in range(3)]
    choices = [1, 0, 1]
    got = run_base_ots(3, 40, choices, pairs, backend, rng)
    for col, pair, c in zip(got, pairs, choices):
        np.testing.assert_array_equal(col, pair[c])
    assert backend.sessions == 6


def test_quantum_base_ots_over_a_channel():
    params = small_params()
    rng = np.random.default_rng(9)
    pairs = [(random_bits(rng, 20), random_bits(rng, 20)) for _ in range(2)]
    choices = [0, 1]
    a_ch, b_ch = LocalChannel.pair("alice", "bob")
    with ThreadPoolExecutor(max_workers=2) as pool:
        sending = pool.submit(QotOt(params, clean_optics(), seed=3).send_over, a_ch, pairs, rng)
        receiving = pool.submit(
            QotOt(params, clean_optics(), seed=3).receive_over, b_ch, choices, 20, np.random.default_rng(10)
        )
        got = receiving.result(timeout=120)
        sending.result(timeout=120)
    for col, pair, c in zip(got, pairs, choices):
        np.testing.assert_array_equal(col, pair[c])


def test_quantum_base_ot_failure_aborts():
    backend = QotOt(small_params(), clean_optics(p_e=0.3), seed=1)
    pairs = [(np.zeros(8, dtype=np.uint8), np.ones(8, dtype=np.uint8))]
    with pytest.raises(OprfAbort):
        run_base_ots(1, 8, [1], pairs, backend, np.random.default_rng(0))
