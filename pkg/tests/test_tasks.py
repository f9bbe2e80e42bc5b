import json

import numpy as np
import pytest

from datlab import tasks
from datlab.rng import Rng
from datlab.tasks import (
    TaskParseError, VOCAB, generate, make_batch, oracle_label,
    sample_from_json, sample_to_json, sequence_length, validate_corpus,
    write_corpus,
)


def test_vocab_layout():
    assert VOCAB.size == 141
    assert VOCAB.num_keys == 128
    assert VOCAB.bos == 138 and VOCAB.modulo == 139 and VOCAB.recall == 140
    # disjoint id ranges
    assert VOCAB.is_value(9) and not VOCAB.is_value(10)
    assert VOCAB.is_key(10) and VOCAB.is_key(137) and not VOCAB.is_key(138)
    assert VOCAB.num_keys >= 100  # key pool covers the longest eval length


def test_single_pair_forces_both_answers():
    rng = Rng(0)
    s = generate("combined", 1, rng)
    assert s.modulo_answer == s.recall_answer
    assert s.recall_key_index == 1


def test_modulo_wraps():
    # values [1,2,3,4] -> m = 0; build tokens by hand and ask the oracle
    toks = [VOCAB.bos]
    for k, v in zip([20, 21, 22, 23], [1, 2, 3, 4]):
        toks += [k, v]
    toks += [VOCAB.modulo, 0]
    m, rec = oracle_label(toks)
    assert m == 0 and rec is None


def test_sequence_lengths_all_variants():
    rng = Rng(1)
    for n in (1, 3, 10, 25):
        for variant in tasks.VARIANTS:
            s = generate(variant, n, rng)
            assert len(s.tokens) == sequence_length(variant, n)
    assert sequence_length("combined", 5) == 15
    assert sequence_length("modulo_only", 5) == 13
    assert sequence_length("recall_only", 5) == 13


def test_answer_positions_point_at_markers():
    rng = Rng(2)
    s = generate("combined", 4, rng)
    mod_pos, rec_pos = s.answer_positions
    assert s.tokens[mod_pos] == VOCAB.modulo
    assert s.tokens[mod_pos + 1] == s.modulo_answer  # teacher-forced digit
    assert VOCAB.is_key(s.tokens[rec_pos])           # the queried key
    assert s.targets == [s.modulo_answer, s.recall_answer]

    s = generate("modulo_only", 4, rng)
    assert s.tokens[s.answer_positions[0]] == VOCAB.modulo
    s = generate("recall_only", 4, rng)
    assert VOCAB.is_key(s.tokens[s.answer_positions[0]])


def test_oracle_simple_case():
    # <bos> k1 3 k2 4 <modulo> ? <recall> k2  ->  (7, 4); the digit slot
    # content is deliberately wrong to prove the oracle recomputes it
    toks = [VOCAB.bos, 50, 3, 51, 4, VOCAB.modulo, 9, VOCAB.recall, 51]
    assert oracle_label(toks) == (7, 4)


def test_oracle_all_zero_values():
    rng = Rng(3)
    for n in (1, 5, 12):
        toks = [VOCAB.bos]
        keys = rng.sample_distinct(128, n)
        for k in keys:
            toks += [VOCAB.key_token(k), 0]
        toks += [VOCAB.modulo, 0]
        assert oracle_label(toks)[0] == 0


@pytest.mark.parametrize("variant", tasks.VARIANTS)
def test_generate_oracle_agreement_10k(variant):
    rng = Rng(1234)
    for _ in range(10_000):
        n = 1 + rng.randint(20)
        s = generate(variant, n, rng)
        assert oracle_label(s.tokens) == (s.modulo_answer, s.recall_answer)


def test_generate_keys_distinct_values_in_range():
    rng = Rng(5)
    for _ in range(500):
        s = generate("combined", 16, rng)
        keys = s.tokens[1:33:2]
        values = s.tokens[2:33:2]
        assert len(set(keys)) == 16
        assert all(VOCAB.is_key(k) for k in keys)
        assert all(VOCAB.is_value(v) for v in values)


def test_generate_rejects_bad_n():
    with pytest.raises(ValueError):
        generate("combined", 0, Rng(0))
    with pytest.raises(ValueError):
        generate("combined", 129, Rng(0))
    with pytest.raises(ValueError):
        generate("nope", 3, Rng(0))


def test_generate_deterministic():
    a = generate("combined", 7, Rng(42))
    b = generate("combined", 7, Rng(42))
    assert a == b


def test_oracle_malformed_sequences_name_positions():
    cases = [
        ([], 0),
        ([VOCAB.modulo], 0),                       # missing bos
        ([VOCAB.bos, VOCAB.modulo, 3], 1),         # no pairs
        ([VOCAB.bos, 50, 50], 2),                  # key followed by key
        ([VOCAB.bos, 50, 3, 50, 4, VOCAB.modulo, 1], None),  # duplicate key
        ([VOCAB.bos, 50, 3, VOCAB.modulo], 4),     # missing digit slot
        ([VOCAB.bos, 50, 3, VOCAB.recall, 3], 4),  # recall followed by non-key
        ([VOCAB.bos, 50, 3, VOCAB.recall, 51], 4), # unknown queried key
        ([VOCAB.bos, 50, 3], 3),                   # no query at all
        ([VOCAB.bos, 50, 3, VOCAB.modulo, 1, 7], 5),  # trailing junk
    ]
    for toks, pos in cases:
        with pytest.raises(TaskParseError) as exc:
            oracle_label(toks)
        if pos is not None:
            assert exc.value.position == pos


def test_modulo_answer_distribution_uniform():
    # sums of uniform digits are uniform mod 10
    rng = Rng(777)
    counts = [0] * 10
    for _ in range(100_000):
        counts[generate("modulo_only", 10, rng).modulo_answer] += 1
    for c in counts:
        assert abs(c / 100_000 - 0.1) <= 0.01


def test_make_batch_unit_and_shapes():
    b1 = make_batch("combined", 5, 1, Rng(9))
    s1 = generate("combined", 5, Rng(9))
    assert b1.tokens.shape == (1, 15)
    assert list(b1.tokens[0]) == s1.tokens

    b64 = make_batch("combined", 5, 64, Rng(10))
    assert b64.tokens.shape == (64, 15)
    assert b64.targets.shape == (64, 2)
    assert b64.answer_positions == [11, 14]
    for row in range(64):
        m, rec = oracle_label(list(b64.tokens[row]))
        assert (m, rec) == (b64.targets[row, 0], b64.targets[row, 1])


def test_make_batch_rejects_bad_size():
    with pytest.raises(ValueError):
        make_batch("combined", 3, 0, Rng(0))


def test_corpus_roundtrip_and_validation(tmp_path):
    path = tmp_path / "corpus.jsonl"
    write_corpus(path, "combined", 6, 50, Rng(31))
    assert validate_corpus(path) == 50
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 50
    rec = json.loads(lines[0])
    assert set(rec) >= {"tokens", "n", "m", "j", "recall_answer", "variant"}
    s = sample_from_json(lines[0])
    assert sample_to_json(s) == lines[0]


def test_validate_corpus_rejects_tampering(tmp_path):
    path = tmp_path / "bad.jsonl"
    s = generate("combined", 4, Rng(8))
    s.modulo_answer = (s.modulo_answer + 1) % 10
    path.write_text(sample_to_json(s) + "\n")
    with pytest.raises(ValueError):
        validate_corpus(path)
