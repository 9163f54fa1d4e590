"""Fixed-length decimal token codec for metric values.

A real value is emitted as ``2 + E + M`` tokens: mantissa sign, exponent
sign, E exponent digits, M mantissa digits.  ``[+, -, 1, 7, 2, 5]`` with
M=3, E=1 means ``+ 10^-1 * 725 = 72.5``.  The codec is normalization-free:
no data-derived bounds are needed, and every grammar-valid sequence decodes
to a finite value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal, ROUND_HALF_UP

# Decoder-side token space: PAD doubles as the decoder start token, EOS
# terminates the metric tuple, numeric tokens follow at base_id.
PAD_ID = 0
EOS_ID = 1
NUMERIC_BASE_ID = 2


class TokenSequenceError(ValueError):
    """A token sequence violates the numeric grammar.

    ``position`` is the first offending index (or the sequence length for
    a length mismatch).
    """

    def __init__(self, message: str, position: int):
        super().__init__(message)
        self.position = position


@dataclass(frozen=True)
class NumericFormat:
    """Shape of the digit-token representation of one number.

    ``base_id`` is the id of the first numeric token; the twelve ids
    ``base_id .. base_id+11`` are plus, minus, and digits 0-9.  They must
    not collide with any other vocabulary block in the same id space.
    """

    mantissa_digits: int = 3
    exponent_digits: int = 1
    base_id: int = NUMERIC_BASE_ID

    def __post_init__(self):
        if self.mantissa_digits < 1:
            raise ValueError("mantissa_digits must be >= 1")
        if self.exponent_digits < 1:
            raise ValueError("exponent_digits must be >= 1")
        if self.base_id < 0:
            raise ValueError("base_id must be >= 0")

    @property
    def seq_len(self) -> int:
        """Tokens per encoded number: two signs + exponent + mantissa."""
        return 2 + self.exponent_digits + self.mantissa_digits

    @property
    def plus_id(self) -> int:
        return self.base_id

    @property
    def minus_id(self) -> int:
        return self.base_id + 1

    def digit_id(self, digit: int) -> int:
        return self.base_id + 2 + digit

    @property
    def sign_ids(self) -> frozenset[int]:
        return frozenset((self.plus_id, self.minus_id))

    @property
    def digit_ids(self) -> frozenset[int]:
        return frozenset(self.base_id + 2 + d for d in range(10))

    @property
    def token_ids(self) -> frozenset[int]:
        return self.sign_ids | self.digit_ids

    @property
    def max_exponent(self) -> int:
        return 10**self.exponent_digits - 1

    @property
    def max_mantissa(self) -> int:
        return 10**self.mantissa_digits - 1

    @property
    def max_value(self) -> float:
        """Largest representable magnitude."""
        return float(self.max_mantissa * 10**self.max_exponent)

    @property
    def min_positive(self) -> float:
        """Smallest representable nonzero magnitude."""
        return 1 / 10**self.max_exponent

    def to_dict(self) -> dict:
        return {
            "mantissa_digits": self.mantissa_digits,
            "exponent_digits": self.exponent_digits,
            "base_id": self.base_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NumericFormat":
        return cls(
            mantissa_digits=int(d["mantissa_digits"]),
            exponent_digits=int(d["exponent_digits"]),
            base_id=int(d["base_id"]),
        )


# A concrete token sequence for one number: ids of length fmt.seq_len.
NumericTokenSeq = tuple[int, ...]


def _assemble(fmt: NumericFormat, negative: bool, exponent: int, mantissa: int) -> NumericTokenSeq:
    tokens = [
        fmt.minus_id if negative else fmt.plus_id,
        fmt.minus_id if exponent < 0 else fmt.plus_id,
    ]
    exp_str = str(abs(exponent)).zfill(fmt.exponent_digits)
    man_str = str(mantissa).zfill(fmt.mantissa_digits)
    tokens.extend(fmt.digit_id(int(c)) for c in exp_str)
    tokens.extend(fmt.digit_id(int(c)) for c in man_str)
    return tuple(tokens)


def encode(y: float, fmt: NumericFormat = NumericFormat()) -> NumericTokenSeq:
    """Encode a finite real as a fixed-length token sequence.

    Nearest rounding with ties away from zero; mantissa normalized to a
    nonzero leading digit except for zero and values whose exponent is
    already pinned at the minimum.  Out-of-range magnitudes clamp to the
    nearest representable extreme (underflow clamps to zero).
    """
    if not math.isfinite(y):
        raise ValueError(f"cannot encode non-finite value {y!r}")
    if y == 0.0:
        return _assemble(fmt, negative=False, exponent=0, mantissa=0)

    negative = y < 0
    d = Decimal(abs(y))  # exact binary-to-decimal conversion
    exponent = d.adjusted() - (fmt.mantissa_digits - 1)
    exponent = max(exponent, -fmt.max_exponent)
    mantissa = int(d.scaleb(-exponent).to_integral_value(rounding=ROUND_HALF_UP))
    if mantissa > fmt.max_mantissa:
        # Rounding carried into an extra digit (e.g. 999.5 -> 1000).
        exponent += 1
        mantissa = int(d.scaleb(-exponent).to_integral_value(rounding=ROUND_HALF_UP))
    if mantissa == 0:
        return _assemble(fmt, negative=False, exponent=0, mantissa=0)
    if exponent > fmt.max_exponent:
        return _assemble(fmt, negative, fmt.max_exponent, fmt.max_mantissa)
    return _assemble(fmt, negative, exponent, mantissa)


def decode(seq: NumericTokenSeq, fmt: NumericFormat = NumericFormat()) -> float:
    """Decode a token sequence to ``sign * mantissa * 10^(signed exponent)``.

    Any all-zero mantissa decodes to 0.0 regardless of sign tokens.
    Raises :class:`TokenSequenceError` naming the first invalid position.
    """
    seq = tuple(seq)
    if len(seq) != fmt.seq_len:
        raise TokenSequenceError(
            f"expected {fmt.seq_len} tokens, got {len(seq)}", position=len(seq)
        )
    for pos in (0, 1):
        if seq[pos] not in fmt.sign_ids:
            raise TokenSequenceError(
                f"position {pos}: expected a sign token, got id {seq[pos]}", position=pos
            )
    for pos in range(2, fmt.seq_len):
        if seq[pos] not in fmt.digit_ids:
            raise TokenSequenceError(
                f"position {pos}: expected a digit token, got id {seq[pos]}", position=pos
            )

    digits = [tok - fmt.base_id - 2 for tok in seq[2:]]
    exp_digits = digits[: fmt.exponent_digits]
    man_digits = digits[fmt.exponent_digits :]
    exponent = int("".join(map(str, exp_digits)))
    mantissa = int("".join(map(str, man_digits)))
    if mantissa == 0:
        return 0.0
    if seq[1] == fmt.minus_id:
        exponent = -exponent
    # Integer arithmetic keeps equal rationals bit-identical as floats.
    if exponent >= 0:
        magnitude = float(mantissa * 10**exponent)
    else:
        magnitude = mantissa / 10**-exponent
    return -magnitude if seq[0] == fmt.minus_id else magnitude


def allowed_tokens(
    position: int,
    fmt: NumericFormat = NumericFormat(),
    metrics_decoded: int = 0,
    total_metrics: int = 1,
    eos_id: int = EOS_ID,
) -> frozenset[int]:
    """Token ids legal at a decoder position.

    ``position`` counts from the start of the whole metric tuple;
    ``metrics_decoded`` is how many numbers are already complete.  After
    the last metric only end-of-sequence is allowed.
    """
    if position < 0:
        raise ValueError("position must be >= 0")
    if not 0 <= metrics_decoded <= total_metrics:
        raise ValueError("metrics_decoded must be in [0, total_metrics]")
    if metrics_decoded == total_metrics:
        return frozenset((eos_id,))
    offset = position - metrics_decoded * fmt.seq_len
    if not 0 <= offset < fmt.seq_len:
        raise ValueError(
            f"position {position} inconsistent with {metrics_decoded} decoded metrics"
        )
    if offset < 2:
        return fmt.sign_ids
    return fmt.digit_ids


def encode_metrics(values, fmt: NumericFormat = NumericFormat()) -> list[int]:
    """Concatenate the encodings of several metric values."""
    out: list[int] = []
    for v in values:
        out.extend(encode(v, fmt))
    return out


def decode_metrics(ids, num_metrics: int, fmt: NumericFormat = NumericFormat()) -> tuple[float, ...]:
    """Split a flat id sequence into ``num_metrics`` numbers and decode each."""
    ids = list(ids)
    want = num_metrics * fmt.seq_len
    if len(ids) != want:
        raise TokenSequenceError(
            f"expected {want} tokens for {num_metrics} metrics, got {len(ids)}",
            position=len(ids),
        )
    step = fmt.seq_len
    return tuple(decode(tuple(ids[i * step : (i + 1) * step]), fmt) for i in range(num_metrics))
