"""Walsh-Hadamard codebook with polarity-inverted entries.

Eight high-transition rows of the 16x16 Sylvester matrix plus their
negations give 16 codewords of 16 chips, i.e. one 4-bit symbol per
codeword (rate 1/4). Decoding works in the event domain: the camera sees
chip *transitions*, so observations are matched against first-difference
templates of the codewords.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidArgument

CODE_LEN = 16
BITS_PER_SYMBOL = 4


def build_hadamard(order: int) -> np.ndarray:
    """Sylvester Hadamard matrix of size ``order`` (a power of two, 2..32)."""
    if order not in (2, 4, 8, 16, 32):
        raise InvalidArgument(f"Hadamard order must be a power of two in [2, 32], got {order!r}")
    h = np.array([[1]], dtype=np.int8)
    while h.shape[0] < order:
        h = np.block([[h, h], [h, -h]])
    return h


def count_transitions(chips) -> int:
    chips = np.asarray(chips)
    return int(np.count_nonzero(chips[1:] != chips[:-1]))


def transition_template(chips, prev_chip: int | None = None) -> np.ndarray:
    """Sign of the first difference of ``chips``.

    Element 0 is the transition from ``prev_chip`` (last chip of the preceding
    codeword); without context it is 0.
    """
    chips = np.asarray(chips, dtype=np.int8)
    out = np.zeros(chips.shape[-1], dtype=np.int8)
    out[1:] = np.sign(chips[1:] - chips[:-1])
    if prev_chip is not None:
        out[0] = np.sign(int(chips[0]) - int(prev_chip))
    return out


@dataclass(frozen=True)
class Codeword:
    index: int
    chips: np.ndarray
    transitions: int

    def __post_init__(self):
        if self.chips.shape != (CODE_LEN,):
            raise InvalidArgument("codeword must have 16 chips")
        if count_transitions(self.chips) != self.transitions:
            raise InvalidArgument("transition count does not match chips")

    def __eq__(self, other):
        if not isinstance(other, Codeword):
            return NotImplemented
        return (self.index, self.transitions) == (other.index, other.transitions) and \
            np.array_equal(self.chips, other.chips)

    def __hash__(self):
        return hash((self.index, self.transitions, self.chips.tobytes()))

    @property
    def template(self) -> np.ndarray:
        return transition_template(self.chips)


@dataclass(frozen=True)
class Codebook:
    entries: tuple[Codeword, ...]
    source: str = "sylvester-16"
    # (16, 16) chip matrix, row i = entries[i].chips
    chips: np.ndarray = field(init=False, repr=False, compare=False)
    _templates: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.entries) != 16:
            raise InvalidArgument("codebook needs exactly 16 entries")
        mat = np.stack([e.chips for e in self.entries])
        mat.setflags(write=False)
        object.__setattr__(self, "chips", mat)
        tmpl = {}
        for prev in (None, -1, 1):
            t = np.stack([transition_template(c, prev) for c in mat]).astype(np.int64)
            t.setflags(write=False)
            tmpl[prev] = t
        object.__setattr__(self, "_templates", tmpl)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i) -> Codeword:
        return self.entries[i]

    def templates(self, prev_chip: int | None = None) -> np.ndarray:
        """(16, 16) transition templates, row i for symbol i."""
        return self._templates[None if prev_chip is None else int(np.sign(prev_chip))]


@lru_cache(maxsize=1)
def build_codebook() -> Codebook:
    h = build_hadamard(CODE_LEN)
    counts = [count_transitions(row) for row in h]
    # descending transition count, ties by row index
    rows = sorted(range(CODE_LEN), key=lambda r: (-counts[r], r))[: CODE_LEN // 2]
    chips = [h[r] for r in rows] + [-h[r] for r in rows]
    entries = []
    for i, c in enumerate(chips):
        c = np.array(c, dtype=np.int8)
        c.setflags(write=False)
        entries.append(Codeword(index=i, chips=c, transitions=count_transitions(c)))
    return Codebook(entries=tuple(entries))


def encode_symbol(sym: int, book: Codebook | None = None) -> Codeword:
    book = book or build_codebook()
    if not 0 <= int(sym) < 16:
        raise InvalidArgument(f"symbol out of range 0..15: {sym!r}")
    return book.entries[int(sym)]


def bits_to_symbols(bits) -> np.ndarray:
    """MSB-first nibbles; a trailing partial nibble is zero padded."""
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.size and bits.max() > 1:
        raise InvalidArgument("bits must be 0/1")
    pad = (-bits.size) % BITS_PER_SYMBOL
    if pad:
        bits = np.concatenate([bits, np.zeros(pad, dtype=np.uint8)])
    nib = bits.reshape(-1, BITS_PER_SYMBOL)
    return (nib @ np.array([8, 4, 2, 1])).astype(np.int64)


def symbols_to_bits(symbols) -> np.ndarray:
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    shifts = np.array([3, 2, 1, 0])
    return ((symbols[:, None] >> shifts) & 1).astype(np.uint8).ravel()


def encode_bits(bits, book: Codebook | None = None) -> np.ndarray:
    """Map bits to a +-1 chip sequence, 16 chips per 4 bits."""
    book = book or build_codebook()
    syms = bits_to_symbols(bits)
    if syms.size == 0:
        return np.zeros(0, dtype=np.int8)
    return book.chips[syms].ravel().copy()


def decode_codeword(observed, book: Codebook | None = None, prev_chip: int | None = None,
                    soft: bool = False) -> tuple[int, float]:
    """Maximum inner product decode of one 16-slot transition observation.

    ``observed`` holds the polarity seen at each chip boundary (-1, 0, +1).
    With ``soft=True`` it is used as-is (real-valued edge strengths) instead
    of being reduced to its sign. Returns ``(symbol, score)``; ties go to the
    lowest symbol index.
    """
    book = book or build_codebook()
    obs = np.asarray(observed)
    if obs.shape != (CODE_LEN,):
        raise InvalidArgument(f"observation must have length 16, got {obs.shape}")
    if soft:
        scores = book.templates(prev_chip) @ obs.astype(np.float64)
        sym = int(np.argmax(scores))
        return sym, float(scores[sym])
    scores = book.templates(prev_chip) @ np.sign(obs).astype(np.int64)
    sym = int(np.argmax(scores))
    return sym, int(scores[sym])


def decode_stream(observed, book: Codebook | None = None, prev_chip: int | None = None,
                  soft: bool = False) -> np.ndarray:
    """Decode consecutive codewords, feeding each decision's last chip forward as context."""
    book = book or build_codebook()
    obs = np.asarray(observed)
    if obs.size % CODE_LEN:
        raise InvalidArgument("observation length must be a multiple of 16")
    syms = []
    for seg in obs.reshape(-1, CODE_LEN):
        s, _ = decode_codeword(seg, book, prev_chip, soft)
        syms.append(s)
        prev_chip = int(book.chips[s, -1])
    return np.array(syms, dtype=np.int64)


def codebook_rows(book: Codebook | None = None) -> list[tuple[int, list[int], int]]:
    book = book or build_codebook()
    return [(e.index, [int(c) for c in e.chips], e.transitions) for e in book.entries]
