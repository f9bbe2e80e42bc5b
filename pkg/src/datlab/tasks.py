"""Key-value sequence tasks: running-sum state tracking plus selective recall.

A sample is a token sequence

    <bos> k1 v1 k2 v2 ... kn vn <modulo> m <recall> kj

where keys are distinct, values are digits, ``m`` is the sum of all
values mod 10, and ``kj`` is one of the keys.  Two next-token positions
are scored: the ``<modulo>`` position (which must predict m) and the
trailing ``kj`` position (which must predict the value vj paired with
kj).  The value vj itself is never part of the stored sequence; it is
kept as the sample's recall target.

Single-task variants drop the other query segment entirely:
``modulo_only`` ends with ``<modulo> m``, ``recall_only`` ends with
``<recall> kj``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .rng import Rng

VARIANTS = ("combined", "modulo_only", "recall_only")


@dataclass(frozen=True)
class Vocab:
    """Token-id layout. Values double as the digits they denote."""

    num_values: int = 10
    num_keys: int = 128

    @property
    def key_base(self) -> int:
        return self.num_values

    @property
    def bos(self) -> int:
        return self.num_values + self.num_keys

    @property
    def modulo(self) -> int:
        return self.bos + 1

    @property
    def recall(self) -> int:
        return self.bos + 2

    @property
    def size(self) -> int:
        return self.num_values + self.num_keys + 3

    def key_token(self, key_index: int) -> int:
        return self.key_base + key_index

    def is_value(self, tok: int) -> bool:
        return 0 <= tok < self.num_values

    def is_key(self, tok: int) -> bool:
        return self.key_base <= tok < self.key_base + self.num_keys


VOCAB = Vocab()


@dataclass
class TaskSample:
    tokens: list[int]
    n: int
    variant: str
    modulo_answer: int | None
    recall_key_index: int | None  # 1-based position j of the queried pair
    recall_answer: int | None
    answer_positions: list[int]
    targets: list[int]


class TaskParseError(ValueError):
    """A token sequence does not follow the task grammar."""

    def __init__(self, position: int, message: str):
        self.position = position
        super().__init__(f"position {position}: {message}")


def sequence_length(variant: str, n: int) -> int:
    if variant == "combined":
        return 2 * n + 5
    return 2 * n + 3


def generate(variant: str, n: int, rng: Rng, vocab: Vocab = VOCAB) -> TaskSample:
    """Draw one sample: distinct keys, i.i.d. digit values, uniform query key."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if not 1 <= n <= vocab.num_keys:
        raise ValueError(f"pair count n={n} outside 1..{vocab.num_keys}")
    keys = rng.sample_distinct(vocab.num_keys, n)
    values = [rng.randint(vocab.num_values) for _ in range(n)]
    j = rng.randint(n)  # 0-based index of the queried pair

    tokens = [vocab.bos]
    for k, v in zip(keys, values):
        tokens.append(vocab.key_token(k))
        tokens.append(v)

    m = sum(values) % vocab.num_values
    modulo_answer = m if variant != "recall_only" else None
    recall_answer = values[j] if variant != "modulo_only" else None
    answer_positions: list[int] = []
    targets: list[int] = []

    if variant != "recall_only":
        answer_positions.append(len(tokens))  # the <modulo> token position
        targets.append(m)
        tokens.append(vocab.modulo)
        tokens.append(m)
    if variant != "modulo_only":
        tokens.append(vocab.recall)
        answer_positions.append(len(tokens))  # the queried-key position
        targets.append(values[j])
        tokens.append(vocab.key_token(keys[j]))

    recall_key_index = j + 1 if variant != "modulo_only" else None
    return TaskSample(tokens=tokens, n=n, variant=variant,
                      modulo_answer=modulo_answer,
                      recall_key_index=recall_key_index,
                      recall_answer=recall_answer,
                      answer_positions=answer_positions, targets=targets)


def oracle_label(tokens, vocab: Vocab = VOCAB) -> tuple[int | None, int | None]:
    """Re-derive (modulo answer, recall answer) by parsing raw tokens.

    This is a deliberately independent code path from :func:`generate`:
    it walks the sequence, sums the value tokens mod 10, and scans the
    pairs for the queried key.  Raises :class:`TaskParseError` on any
    grammar violation, naming the offending position.
    """
    tokens = list(int(t) for t in tokens)
    if not tokens:
        raise TaskParseError(0, "empty sequence")
    if tokens[0] != vocab.bos:
        raise TaskParseError(0, f"expected <bos> ({vocab.bos}), got {tokens[0]}")

    pairs: list[tuple[int, int]] = []
    pos = 1
    while pos < len(tokens) and vocab.is_key(tokens[pos]):
        if pos + 1 >= len(tokens) or not vocab.is_value(tokens[pos + 1]):
            raise TaskParseError(pos + 1, "key token not followed by a value token")
        pairs.append((tokens[pos], tokens[pos + 1]))
        pos += 2
    if not pairs:
        raise TaskParseError(pos, "no key-value pairs found")
    keys = [k for k, _ in pairs]
    if len(set(keys)) != len(keys):
        raise TaskParseError(pos, "duplicate key in pair segment")

    value_sum = sum(v for _, v in pairs) % vocab.num_values

    modulo_answer: int | None = None
    recall_answer: int | None = None
    saw_modulo = False
    saw_recall = False

    if pos < len(tokens) and tokens[pos] == vocab.modulo:
        saw_modulo = True
        pos += 1
        if pos >= len(tokens) or not vocab.is_value(tokens[pos]):
            raise TaskParseError(pos, "missing digit slot after <modulo>")
        pos += 1  # the slot's content is not trusted; the answer is recomputed
        modulo_answer = value_sum

    if pos < len(tokens) and tokens[pos] == vocab.recall:
        saw_recall = True
        pos += 1
        if pos >= len(tokens) or not vocab.is_key(tokens[pos]):
            raise TaskParseError(pos, "missing key token after <recall>")
        query = tokens[pos]
        matches = [v for k, v in pairs if k == query]
        if not matches:
            raise TaskParseError(pos, f"queried key {query} never appears in the pair segment")
        recall_answer = matches[0]
        pos += 1

    if pos != len(tokens):
        raise TaskParseError(pos, f"unexpected trailing token {tokens[pos]}")
    if not saw_modulo and not saw_recall:
        raise TaskParseError(pos, "sequence has neither <modulo> nor <recall> query")
    return modulo_answer, recall_answer


@dataclass
class Batch:
    """Homogeneous-length batch: one n for every row, no padding."""

    tokens: np.ndarray        # [B, L] int64 model input
    answer_positions: list[int]
    targets: np.ndarray       # [B, A] int64, aligned with answer_positions
    samples: list[TaskSample]
    variant: str
    n: int


def make_batch(variant: str, n: int, batch_size: int, rng: Rng,
               vocab: Vocab = VOCAB) -> Batch:
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    samples = [generate(variant, n, rng, vocab) for _ in range(batch_size)]
    tokens = np.asarray([s.tokens for s in samples], dtype=np.int64)
    targets = np.asarray([s.targets for s in samples], dtype=np.int64)
    return Batch(tokens=tokens, answer_positions=list(samples[0].answer_positions),
                 targets=targets, samples=samples, variant=variant, n=n)


# -- corpus files (one JSON object per line) --------------------------------

def sample_to_json(sample: TaskSample) -> str:
    rec = asdict(sample)
    rec["m"] = rec.pop("modulo_answer")
    rec["j"] = rec.pop("recall_key_index")
    return json.dumps(rec, sort_keys=True)


def sample_from_json(line: str) -> TaskSample:
    rec = json.loads(line)
    return TaskSample(tokens=rec["tokens"], n=rec["n"], variant=rec["variant"],
                      modulo_answer=rec["m"], recall_key_index=rec["j"],
                      recall_answer=rec["recall_answer"],
                      answer_positions=rec["answer_positions"], targets=rec["targets"])


def write_corpus(path, variant: str, n: int, count: int, rng: Rng,
                 vocab: Vocab = VOCAB) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for _ in range(count):
            fh.write(sample_to_json(generate(variant, n, rng, vocab)) + "\n")


def validate_corpus(path, vocab: Vocab = VOCAB) -> int:
    """Oracle-check every line of a corpus file; returns the line count."""
    count = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            sample = sample_from_json(line)
            m, recall = oracle_label(sample.tokens, vocab)
            if (m, recall) != (sample.modulo_answer, sample.recall_answer):
                raise ValueError(
                    f"line {lineno}: oracle disagrees: got ({m}, {recall}), "
                    f"stored ({sample.modulo_answer}, {sample.recall_answer})"
                )
            count += 1
    return count
