import logging

import numpy as np
import pytest

from qotmpc.oprf import output_bits
from qotmpc.psi import (
    CuckooBuildError,
    CuckooHashes,
    CuckooTable,
    PsiConfig,
    QuerySets,
    cuckoo_build,
    cuckoo_build_retrying,
    read_items,
    receiver_oprf_inputs,
    run_psi,
    write_items,
)
from qotmpc.testutils import random_item_sets
from qotmpc.wire import Tag


def _items(count, prefix=b"item-"):
    return [prefix + str(k).encode() for k in range(count)]


def test_config_defaults():
    config = PsiConfig(100)
    assert config.n_bins == 120
    assert config.oprf_rows == 126
    assert config.v == output_bits(126)
    assert config.min_v == 54
    assert PsiConfig(1).n_bins == 2
    with pytest.raises(ValueError):
        PsiConfig(100, v=40)
    with pytest.raises(ValueError):
        PsiConfig(0)


def test_hashes_depend_on_the_seed():
    a = CuckooHashes(bytes(16), 1000)
    b = CuckooHashes(bytes([1]) * 16, 1000)
    ys = _items(50)
    assert [a.candidates(y) for y in ys] == [a.candidates(y) for y in ys]
    assert [a.candidates(y) for y in ys] != [b.candidates(y) for y in ys]
    assert all(0 <= h < 1000 for y in ys for h in a.candidates(y))


def test_single_item():
    config = PsiConfig(1)
    table = cuckoo_build([b"only"], config, np.random.default_rng(0))
    table.check()
    assert len(table) == 1
    i = table.placement(b"only")
    assert table.bins[table.hashes.bin(i, b"only")] == b"only"
    with pytest.raises(KeyError):
        table.placement(b"missing")


@pytest.mark.parametrize("n", [10, 100, 1000])
def test_every_item_is_placed_once(n):
    config = PsiConfig(n)
    items = _items(n)
    table = cuckoo_build_retrying(items, config, np.random.default_rng(n))
    table.check()
    assert len(table) == n
    placed = [y for y in table.bins if y is not None] + table.stash
    assert sorted(placed) == sorted(items)
    for y in items:
        i = table.placement(y)
        assert i is None or table.hashes.bin(i, y) in table.hashes.candidates(y)


def test_build_rejects_bad_input():
    config = PsiConfig(3)
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        cuckoo_build([b"a", b"b", b"a"], config, rng)
    with pytest.raises(ValueError):
        cuckoo_build(_items(4), config, rng)


def test_tiny_table_overflows_into_a_stash_then_fails():
    # Three items whose hashes all land in bins 0 and 1 cannot fit without a stash.
    config = PsiConfig(3, s=0, eviction_limit=5)
    hashes = CuckooHashes(bytes(16), config.n_bins)
    crowded = [y for y in _items(400) if set(hashes.candidates(y)) <= {0, 1}][:3]
    assert len(crowded) == 3
    with pytest.raises(CuckooBuildError):
        cuckoo_build(crowded, config, np.random.default_rng(0), hash_seed=bytes(16))
    stashed = cuckoo_build(crowded, PsiConfig(3, s=2, eviction_limit=5), np.random.default_rng(0),
                           hash_seed=bytes(16))
    stashed.check()
    assert len(stashed.stash) == 1
    assert stashed.placement(stashed.stash[0]) is None


def test_check_catches_a_misplaced_item():
    config = PsiConfig(10)
    table = cuckoo_build(_items(10), config, np.random.default_rng(1))
    b, y = next(
        (b, y) for b, y in enumerate(table.bins) if y is not None and len(set(table.hashes.candidates(y))) > 1
    )
    wrong = next(i for i in (1, 2, 3) if table.hashes.bin(i, y) != b)
    bad = CuckooTable(config, table.hashes, list(table.bins), list(table.hash_choice), table.stash)
    bad.hash_choice[b] = wrong
    with pytest.raises(ValueError, match="maps it to"):
        bad.check()
    empty = table.bins.index(None)
    bad = CuckooTable(config, table.hashes, list(table.bins), list(table.hash_choice), table.stash)
    bad.hash_choice[empty] = 1
    with pytest.raises(ValueError, match="hash choice"):
        bad.check()


def test_oprf_inputs_cover_bins_and_stash():
    config = PsiConfig(20, s=4)
    table = cuckoo_build(_items(20), config, np.random.default_rng(2))
    inputs = receiver_oprf_inputs(table)
    assert len(inputs) == config.oprf_rows
    assert sum(x is None for x in inputs[: config.n_bins]) == config.n_bins - (20 - len(table.stash))
    for y, i, x in zip(table.bins, table.hash_choice, inputs):
        assert x == (None if y is None else y + bytes([i]))
    assert inputs[config.n_bins :][: len(table.stash)] == table.stash


def test_query_set_codec():
    sets = QuerySets([[1, 2], [], [2**66 - 1]], [[5], [6, 7]])
    back = QuerySets.decode(sets.encode(66), 66, 2)
    assert back.h == sets.h and back.stash == sets.stash


@pytest.mark.parametrize(
    "n_x, n_y, overlap",
    [(50, 50, 0), (50, 50, 50), (80, 40, 17), (10, 120, 10), (1, 1, 1), (0, 5, 0)],
)
def test_intersection_matches_plain_sets(n_x, n_y, overlap):
    rng = np.random.default_rng(n_x * 1000 + n_y + overlap)
    X, Y, shared = random_item_sets(rng, n_x, n_y, overlap)
    result = run_psi(X, Y, seed=overlap)
    assert set(result.intersection) == shared == set(X) & set(Y)
    assert result.intersection == sorted(result.intersection)


def test_identical_and_disjoint_sets():
    items = _items(64)
    assert run_psi(items, items, seed=1).intersection == sorted(items)
    assert run_psi(_items(64, b"x-"), items, seed=2).intersection == []


def test_metrics_and_transcript():
    rng = np.random.default_rng(3)
    X, Y, shared = random_item_sets(rng, 30, 20, 5)
    config = PsiConfig(20, s=3)
    result = run_psi(X, Y, config=config, seed=4)
    m = result.metrics
    assert (m.n, m.m, m.s, m.v) == (20, 30, 3, config.v)
    assert m.bytes_sent_receiver > 0 and m.bytes_sent_sender > 0
    assert m.wall_ms >= 0
    assert set(m.as_dict()) == {"bytes_sent_receiver", "bytes_sent_sender", "wall_ms", "n", "m", "s", "v"}
    tags = [e.tag for e in result.transcript]
    assert tags == [Tag.PSI_SETUP, Tag.OPRF_HEADER, Tag.OT_COLUMNS, Tag.PSI_QUERY_SETS, Tag.PSI_RESULT]
    # Only the final result may carry items in the clear.
    for entry in result.transcript[:-1]:
        for y in X + Y:
            assert y not in entry.payload
    leaked = [y for y in X + Y if y in result.transcript[-1].payload]
    assert set(leaked) == shared


def test_runs_are_reproducible():
    X, Y, _ = random_item_sets(np.random.default_rng(5), 20, 20, 7)
    a = run_psi(X, Y, seed=9)
    b = run_psi(X, Y, seed=9)
    assert a.transcript == b.transcript


def test_receiver_set_larger_than_the_bound():
    with pytest.raises(ValueError):
        run_psi(_items(3), _items(5), config=PsiConfig(4))


def test_item_files(tmp_path):
    path = tmp_path / "items.txt"
    path.write_text("  alice \n\nbob\nalice\ncarol\n", encoding="utf-8")
    assert read_items(path) == [b"alice", b"bob", b"carol"]
    out = tmp_path / "out.txt"
    write_items(out, [b"x", b"y"])
    assert out.read_text(encoding="utf-8") == "x\ny\n"
    assert read_items(tmp_path / "out.txt") == [b"x", b"y"]


def test_ideal_backend_warns_that_it_reveals_the_receiver(caplog):
    with caplog.at_level(logging.WARNING, logger="qotmpc.oprf"):
        run_psi(_items(5), _items(3), seed=1)
    assert any("both strings" in r.getMessage() for r in caplog.records)
