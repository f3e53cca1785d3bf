"""Text <-> class-label codec.

A :class:`CodeDictionary` maps 4-digit codes to text tokens. Text is cut into
tokens by forward maximum matching, grouped into fragments of at most 15
tokens, and each fragment becomes 64 labels: a 4-digit sequence-number
marker followed by fifteen 4-digit payload groups.

Short fragments are filled with the reserved code ``9999``. With ECC on,
the last payload group carries column parity digits
``p[j] = sum(group[j] for the 14 data groups) mod 10`` and a fragment holds
at most 14 tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np

GROUP = 4
SEQUENCE_LENGTH = 64
GROUPS = SEQUENCE_LENGTH // GROUP          # 16, the first one is the marker
PAYLOAD_GROUPS = GROUPS - 1                # 15
MAX_CODES = 10 ** GROUP                    # 10000
MAX_FRAGMENTS = MAX_CODES
PAD_CODE = "9999"


class CodecError(ValueError):
    pass


class DictionaryError(CodecError):
    pass


class SegmentationError(CodecError):
    def __init__(self, position: int, char: str):
        super().__init__(f"character {char!r} at position {position} is not in the dictionary")
        self.position = position
        self.char = char


class DecodeError(CodecError):
    def __init__(self, message: str, group: int = -1):
        super().__init__(message)
        self.group = group


class ParityError(CodecError):
    """Parity digits disagree with the payload."""

    def __init__(self, columns: Sequence[int], suspect_groups: Sequence[int]):
        cols = list(columns)
        super().__init__(f"parity mismatch in column(s) {cols}")
        self.columns = cols
        self.suspect_groups = list(suspect_groups)

    @property
    def suspect_tiles(self) -> list:
        return sorted(GROUP * g + c for g in self.suspect_groups for c in self.columns)


def _is_code(code: str) -> bool:
    return len(code) == GROUP and code.isascii() and code.isdigit()


class CodeDictionary:
    """Immutable bijection between 4-digit codes and tokens."""

    def __init__(self, entries: Iterable[tuple]):
        by_code: Dict[str, str] = {}
        by_token: Dict[str, str] = {}
        for code, token in entries:
            if not _is_code(code):
                raise DictionaryError(f"code {code!r} is not four decimal digits")
            if not token:
                raise DictionaryError(f"empty token for code {code}")
            if "\t" in token or "\n" in token or "\r" in token:
                raise DictionaryError(f"token for code {code} contains a tab or line break")
            if code in by_code:
                raise DictionaryError(f"duplicate code {code}")
            if token in by_token:
                raise DictionaryError(f"duplicate token {token!r}")
            by_code[code] = token
            by_token[token] = code
        self._by_code = dict(sorted(by_code.items()))
        self._by_token = by_token
        self.max_token_length = max((len(t) for t in by_token), default=0)

    def __len__(self) -> int:
        return len(self._by_code)

    def __contains__(self, token) -> bool:
        return token in self._by_token

    def __eq__(self, other) -> bool:
        return isinstance(other, CodeDictionary) and self._by_code == other._by_code

    def __repr__(self) -> str:
        return f"CodeDictionary({len(self)} entries, max token length {self.max_token_length})"

    @property
    def has_padding(self) -> bool:
        return PAD_CODE not in self._by_code

    def entries(self) -> list:
        return list(self._by_code.items())

    def tokens(self) -> list:
        return list(self._by_code.values())

    def code_of(self, token: str) -> str:
        try:
            return self._by_token[token]
        except KeyError:
            raise DictionaryError(f"token {token!r} is not in the dictionary") from None

    def token_of(self, code: str) -> str:
        try:
            return self._by_code[code]
        except KeyError:
            raise DictionaryError(f"code {code!r} is not in the dictionary") from None

    def lookup(self, code: str):
        return self._by_code.get(code)

    def save(self, path) -> None:
        text = "".join(f"{c}\t{t}\n" for c, t in self._by_code.items())
        Path(path).write_bytes(text.encode("utf-8"))

    @classmethod
    def load(cls, path) -> "CodeDictionary":
        entries = []
        for lineno, line in enumerate(Path(path).read_bytes().decode("utf-8").split("\n"), 1):
            if not line:
                continue
            code, sep, token = line.partition("\t")
            if not sep:
                raise DictionaryError(f"{path}:{lineno}: expected 'code<TAB>token'")
            entries.append((code, token))
        return cls(entries)


def build_dictionary(tokens: Sequence[str], reserve_padding: bool = True) -> CodeDictionary:
    """Assign token ``i`` the code ``f"{i:04d}"``.

    With ``reserve_padding`` the code 9999 stays free for filling short
    fragments, capping the dictionary at 9,999 tokens.
    """
    limit = MAX_CODES - 1 if reserve_padding else MAX_CODES
    tokens = list(tokens)
    if not tokens:
        raise DictionaryError("a dictionary needs at least one token")
    if len(tokens) > limit:
        raise DictionaryError(f"{len(tokens)} tokens exceed the limit of {limit}")
    return CodeDictionary((f"{i:0{GROUP}d}", t) for i, t in enumerate(tokens))


def segment_text(text: str, dictionary: CodeDictionary) -> List[str]:
    """Forward maximum matching: take the longest dictionary token at each position."""
    out = []
    i, n = 0, len(text)
    longest = dictionary.max_token_length
    while i < n:
        for length in range(min(longest, n - i), 0, -1):
            piece = text[i:i + length]
            if piece in dictionary:
                out.append(piece)
                i += length
                break
        else:
            raise SegmentationError(i, text[i])
    return out


@dataclass
class Fragment:
    seq_no: int
    tokens: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not 0 <= self.seq_no < MAX_FRAGMENTS:
            raise CodecError(f"sequence number {self.seq_no} outside 0..{MAX_FRAGMENTS - 1}")
        if len(self.tokens) > PAYLOAD_GROUPS:
            raise CodecError(f"fragment holds {len(self.tokens)} tokens, at most {PAYLOAD_GROUPS} fit")

    @property
    def text(self) -> str:
        return "".join(self.tokens)


@dataclass
class LabelSequence:
    labels: np.ndarray
    padding: int = 0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.labels.shape != (SEQUENCE_LENGTH,):
            raise CodecError(f"a label sequence has {SEQUENCE_LENGTH} labels, got {self.labels.size}")
        if self.labels.min() < 0 or self.labels.max() > 9:
            raise CodecError("labels must be digits 0..9")

    @property
    def marker(self) -> int:
        return int("".join(map(str, self.labels[:GROUP])))

    def groups(self) -> list:
        return ["".join(map(str, self.labels[i:i + GROUP])) for i in range(0, SEQUENCE_LENGTH, GROUP)]


@dataclass
class SecretMessage:
    text: str
    fragments: List[Fragment]

    @property
    def tokens(self) -> list:
        return [t for f in self.fragments for t in f.tokens]


def tokens_per_fragment(ecc: bool = False) -> int:
    return PAYLOAD_GROUPS - 1 if ecc else PAYLOAD_GROUPS


def fragment(tokens: Sequence[str], ecc: bool = False) -> List[Fragment]:
    """Consecutive chunks of 15 tokens (14 with ECC), numbered 0, 1, 2, ..."""
    size = tokens_per_fragment(ecc)
    tokens = list(tokens)
    count = -(-len(tokens) // size)
    if count > MAX_FRAGMENTS:
        raise CodecError(f"{count} fragments exceed the {MAX_FRAGMENTS} available sequence numbers")
    return [Fragment(k, tokens[k * size:(k + 1) * size]) for k in range(count)]


def split_message(text: str, dictionary: CodeDictionary, ecc: bool = False) -> SecretMessage:
    return SecretMessage(text, fragment(segment_text(text, dictionary), ecc=ecc))


def _digits(code: str) -> list:
    return [int(ch) for ch in code]


def parity_group(groups: Sequence[str]) -> str:
    sums = [0] * GROUP
    for g in groups:
        for j, d in enumerate(_digits(g)):
            sums[j] += d
    return "".join(str(s % 10) for s in sums)


def encode_fragment(frag: Fragment, dictionary: CodeDictionary, ecc: bool = False) -> LabelSequence:
    capacity = tokens_per_fragment(ecc)
    if len(frag.tokens) > capacity:
        raise CodecError(f"fragment {frag.seq_no} has {len(frag.tokens)} tokens; "
                         f"{capacity} fit with ecc={'on' if ecc else 'off'}")
    data = [dictionary.code_of(t) for t in frag.tokens]
    pad = capacity - len(data)
    if pad and not dictionary.has_padding:
        raise CodecError("short fragment but the dictionary assigns the padding code 9999")
    data += [PAD_CODE] * pad
    if ecc:
        data.append(parity_group(data))
    groups = [f"{frag.seq_no:0{GROUP}d}"] + data
    return LabelSequence(np.array([d for g in groups for d in _digits(g)]), padding=pad)


def decode_sequence(labels, dictionary: CodeDictionary, ecc: bool = False) -> Fragment:
    seq = labels if isinstance(labels, LabelSequence) else LabelSequence(labels)
    groups = seq.groups()
    payload = groups[1:]
    if ecc:
        data, check = payload[:-1], payload[-1]
        expected = parity_group(data)
        bad = [j for j in range(GROUP) if expected[j] != check[j]]
        if bad:
            raise ParityError(bad, range(1, GROUPS))
    else:
        data = payload
    tokens = []
    padding = False
    for k, code in enumerate(data, start=1):
        if code == PAD_CODE and dictionary.has_padding:
            padding = True
            continue
        if padding:
            raise DecodeError(f"code {code} in group {k} follows padding", group=k)
        token = dictionary.lookup(code)
        if token is None:
            raise DecodeError(f"unknown code {code} in group {k}", group=k)
        tokens.append(token)
    return Fragment(seq.marker, tokens)


@dataclass
class CapacityReport:
    fragments: int
    chars_per_image: float
    tokens_per_image: float


def capacity(fragments: Sequence[Fragment]) -> CapacityReport:
    """Average characters (and tokens) carried per stego image."""
    n = len(fragments)
    if n == 0:
        raise CodecError("capacity needs at least one fragment")
    chars = sum(len(f.text) for f in fragments)
    toks = sum(len(f.tokens) for f in fragments)
    return CapacityReport(n, chars / n, toks / n)


def measure_capacity(text: str, dictionary: CodeDictionary, ecc: bool = False) -> CapacityReport:
    """Characters per image for ``text``, averaged over full fragments.

    The final, usually short, fragment would understate what one image can
    carry, so it only counts when no fragment is full.
    """
    frags = split_message(text, dictionary, ecc=ecc).fragments
    full = [f for f in frags if len(f.tokens) == tokens_per_fragment(ecc)]
    return capacity(full or frags)
