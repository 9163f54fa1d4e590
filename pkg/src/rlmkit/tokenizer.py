"""Merge-based subword vocabulary over raw bytes.

Training greedily merges the highest-frequency adjacent piece pair until
the target size is reached; every single byte stays in the vocabulary so
any input is encodable without unknowns.  Encoding applies the learned
merges in rank order, which keeps encoded lengths non-increasing as the
vocabulary grows.
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field
from pathlib import Path

from rlmkit.numeric import NumericFormat

PAD_ID = 0
EOS_ID = 1
UNK_ID = 2
NUM_SPECIALS = 3
_SPECIAL_PIECES = (b"<pad>", b"<eos>", b"<unk>")

VOCAB_FILE_MAGIC = "rlmkit-vocab v1"


@dataclass
class Vocabulary:
    """Ordered pieces, merge rules, and reserved special tokens."""

    pieces: list[bytes]
    merges: list[tuple[bytes, bytes]]
    numeric_format: NumericFormat | None = None
    piece_to_id: dict[bytes, int] = field(init=False, repr=False)
    merge_ranks: dict[tuple[bytes, bytes], int] = field(init=False, repr=False)

    pad_id = PAD_ID
    eos_id = EOS_ID
    unk_id = UNK_ID

    def __post_init__(self):
        if self.pieces[:NUM_SPECIALS] != list(_SPECIAL_PIECES):
            raise ValueError("vocabulary must start with the special pieces")
        self.piece_to_id = {p: i for i, p in enumerate(self.pieces)}
        if len(self.piece_to_id) != len(self.pieces):
            raise ValueError("duplicate pieces in vocabulary")
        self.merge_ranks = {pair: r for r, pair in enumerate(self.merges)}

    @property
    def size(self) -> int:
        return len(self.pieces)

    def content_hash(self) -> str:
        """Stable digest of the serialized vocabulary."""
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    def dumps(self) -> str:
        lines = [VOCAB_FILE_MAGIC]
        lines.append(f"specials pad={PAD_ID} eos={EOS_ID} unk={UNK_ID}")
        if self.numeric_format is not None:
            nf = self.numeric_format
            lines.append(
                "numeric "
                f"mantissa_digits={nf.mantissa_digits} "
                f"exponent_digits={nf.exponent_digits} "
                f"base_id={nf.base_id}"
            )
        lines.append(f"pieces {len(self.pieces)}")
        lines.extend(f"p {_escape(p)}" for p in self.pieces)
        lines.append(f"merges {len(self.merges)}")
        lines.extend(f"m {_escape(a)} {_escape(b)}" for a, b in self.merges)
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        lines = text.splitlines()
        if not lines or lines[0] != VOCAB_FILE_MAGIC:
            raise ValueError("not a vocabulary file (bad or missing header)")
        idx = 1
        numeric_format = None
        if lines[idx].startswith("specials "):
            idx += 1
        if idx < len(lines) and lines[idx].startswith("numeric "):
            kv = dict(part.split("=") for part in lines[idx].split()[1:])
            numeric_format = NumericFormat.from_dict(kv)
            idx += 1
        if not lines[idx].startswith("pieces "):
            raise ValueError(f"line {idx + 1}: expected piece count")
        n_pieces = int(lines[idx].split()[1])
        idx += 1
        pieces = []
        for i in range(n_pieces):
            tag, payload = lines[idx + i].split(" ", 1)
            if tag != "p":
                raise ValueError(f"line {idx + i + 1}: expected a piece line")
            pieces.append(_unescape(payload))
        idx += n_pieces
        n_merges = int(lines[idx].split()[1])
        idx += 1
        merges = []
        for i in range(n_merges):
            tag, a, b = lines[idx + i].split(" ")
            if tag != "m":
                raise ValueError(f"line {idx + i + 1}: expected a merge line")
            merges.append((_unescape(a), _unescape(b)))
        return cls(pieces=pieces, merges=merges, numeric_format=numeric_format)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _escape(piece: bytes) -> str:
    out = []
    for b in piece:
        if 0x21 <= b <= 0x7E and b != 0x5C:  # printable, not backslash
            out.append(chr(b))
        else:
            out.append(f"\\x{b:02x}")
    return "".join(out)


def _unescape(text: str) -> bytes:
    out = bytearray()
    i = 0
    while i < len(text):
        if text[i] == "\\":
            if i + 4 > len(text) or text[i + 1] != "x":
                raise ValueError(f"bad escape at column {i} in piece {text!r}")
            out.append(int(text[i + 2 : i + 4], 16))
            i += 4
        else:
            out.append(ord(text[i]))
            i += 1
    return bytes(out)


def _base_pieces() -> list[bytes]:
    return list(_SPECIAL_PIECES) + [bytes([b]) for b in range(256)]


def train_vocab(
    corpus,
    target_size: int,
    numeric_format: NumericFormat | None = None,
) -> Vocabulary:
    """Learn a merge vocabulary from text (or bytes) documents.

    Merges the most frequent adjacent pair, breaking ties by the
    lexicographically smaller pair, until ``target_size`` pieces exist or
    no pair occurs at least twice.  Deterministic for a fixed corpus.
    """
    docs = [d.encode("utf-8") if isinstance(d, str) else bytes(d) for d in corpus]
    if not docs:
        raise ValueError("corpus must be nonempty")
    min_size = 256 + NUM_SPECIALS
    if target_size <= min_size:
        raise ValueError(f"target_size must exceed {min_size}, got {target_size}")

    # Per-document token arrays with linked-list structure so merges are O(1).
    tokens: list[list[bytes]] = [[bytes([b]) for b in doc] for doc in docs]
    nxt: list[list[int]] = [list(range(1, len(t) + 1)) for t in tokens]
    prv: list[list[int]] = [list(range(-1, len(t) - 1)) for t in tokens]
    alive: list[list[bool]] = [[True] * len(t) for t in tokens]

    pair_counts: dict[tuple[bytes, bytes], int] = {}
    pair_sites: dict[tuple[bytes, bytes], list[tuple[int, int]]] = {}

    def add_pair(d, i, j):
        pair = (tokens[d][i], tokens[d][j])
        pair_counts[pair] = pair_counts.get(pair, 0) + 1
        pair_sites.setdefault(pair, []).append((d, i))

    def drop_pair(d, i, j):
        pair = (tokens[d][i], tokens[d][j])
        pair_counts[pair] -= 1

    for d, t in enumerate(tokens):
        for i in range(len(t) - 1):
            add_pair(d, i, i + 1)

    pieces = _base_pieces()
    known = set(pieces)
    merges: list[tuple[bytes, bytes]] = []
    merged_pairs: set[tuple[bytes, bytes]] = set()

    while len(pieces) < target_size:
        best_pair = None
        best_key = None
        for pair, count in pair_counts.items():
            if count < 2 or pair in merged_pairs:
                continue
            key = (-count, pair)
            if best_key is None or key < best_key:
                best_key, best_pair = key, pair
        if best_pair is None:
            break
        merged = best_pair[0] + best_pair[1]
        merges.append(best_pair)
        merged_pairs.add(best_pair)
        if merged not in known:
            pieces.append(merged)
            known.add(merged)

        # Splice every live occurrence, updating neighbor pair counts.
        sites = pair_sites.pop(best_pair, [])
        for d, i in sites:
            if not alive[d][i]:
                continue
            j = nxt[d][i]
            if j >= len(tokens[d]) or not alive[d][j]:
                continue
            if (tokens[d][i], tokens[d][j]) != best_pair:
                continue
            p = prv[d][i]
            k = nxt[d][j]
            if p >= 0:
                drop_pair(d, p, i)
            if k < len(tokens[d]):
                drop_pair(d, j, k)
            drop_pair(d, i, j)
            tokens[d][i] = merged
            alive[d][j] = False
            nxt[d][i] = k
            if k < len(tokens[d]):
                prv[d][k] = i
            if p >= 0:
                add_pair(d, p, i)
            if k < len(tokens[d]):
                add_pair(d, i, k)
        pair_counts.pop(best_pair, None)

    return Vocabulary(pieces=pieces, merges=merges, numeric_format=numeric_format)


def encode_bytes(data: bytes, vocab: Vocabulary) -> list[int]:
    """Encode raw bytes by applying merges in learned rank order."""
    n = len(data)
    if n == 0:
        return []
    toks = [bytes([b]) for b in data]
    if not vocab.merge_ranks:
        return [vocab.piece_to_id[t] for t in toks]
    nxt = list(range(1, n + 1))
    prv = list(range(-1, n - 1))
    alive = [True] * n
    ranks = vocab.merge_ranks

    heap = []
    for i in range(n - 1):
        r = ranks.get((toks[i], toks[i + 1]))
        if r is not None:
            heap.append((r, i))
    heapq.heapify(heap)

    while heap:
        r, i = heapq.heappop(heap)
        if not alive[i]:
            continue
        j = nxt[i]
        if j >= n or not alive[j]:
            continue
        pair = (toks[i], toks[j])
        if ranks.get(pair) != r:
            continue  # stale entry
        toks[i] = pair[0] + pair[1]
        alive[j] = False
        k = nxt[j]
        nxt[i] = k
        if k < n:
            prv[k] = i
        p = prv[i]
        if p >= 0:
            nr = ranks.get((toks[p], toks[i]))
            if nr is not None:
                heapq.heappush(heap, (nr, p))
        if k < n:
            nr = ranks.get((toks[i], toks[k]))
            if nr is not None:
                heapq.heappush(heap, (nr, i))

    return [vocab.piece_to_id[toks[i]] for i in range(n) if alive[i]]


def decode_bytes(ids, vocab: Vocabulary) -> bytes:
    """Concatenate the pieces for ``ids``; specials contribute nothing."""
    out = bytearray()
    for i in ids:
        if not 0 <= i < vocab.size:
            raise ValueError(f"unknown token id {i}")
        if i >= NUM_SPECIALS:
            out.extend(vocab.pieces[i])
    return bytes(out)


def encode_text(text: str, vocab: Vocabulary, max_len: int) -> list[int]:
    """Encode text, keeping the head when the result exceeds ``max_len``."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    return encode_bytes(text.encode("utf-8"), vocab)[:max_len]


def decode_text(ids, vocab: Vocabulary) -> str:
    return decode_bytes(ids, vocab).decode("utf-8", errors="replace")
