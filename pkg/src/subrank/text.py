"""Title tokenization, stopword removal, and token-id encoding.

Tokenization is script-driven, not language-driven: lowercase, split on
non-alphanumeric runs, and emit each CJK ideograph or kana as its own
token (titles are short enough that character units suffice; no segmenter
dependency). Stopword lists are small shipped files per language; scoring
paths that want raw tokens simply skip removal.
"""

from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

# Reserved token ids, fixed by contract.
PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<unk>", "<cls>", "<sep>")

STOPWORD_LANGUAGES = ("en", "de", "fr", "ja", "it", "es")

# Languages seen by remove_stopwords without a shipped list; removal becomes
# a no-op but the event is counted so pipelines can surface it.
unsupported_language_counter: Counter = Counter()

_CJK_RANGES = (
    (0x3040, 0x309F),   # hiragana
    (0x30A0, 0x30FF),   # katakana
    (0x3400, 0x4DBF),   # CJK extension A
    (0x4E00, 0x9FFF),   # CJK unified ideographs
    (0xF900, 0xFAFF),   # CJK compatibility ideographs
)


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def tokenize(title: str, language: str | None = None) -> list[str]:
    """Split a title into lowercase tokens.

    ``language`` is accepted for interface symmetry with remove_stopwords
    but ignored: the CJK rule keys on code points, not the language tag.
    """
    tokens: list[str] = []
    current: list[str] = []
    for ch in title.lower():
        if _is_cjk(ch):
            if current:
                tokens.append("".join(current))
                current = []
            tokens.append(ch)
        elif ch.isalnum():
            current.append(ch)
        else:
            if current:
                tokens.append("".join(current))
                current = []
    if current:
        tokens.append("".join(current))
    return tokens


@lru_cache(maxsize=None)
def stopwords_for(language: str) -> frozenset[str] | None:
    """Shipped stopword set for ``language``, or None when unsupported."""
    if language not in STOPWORD_LANGUAGES:
        return None
    text = resources.files("subrank.stopwords").joinpath(f"{language}.txt").read_text("utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


def remove_stopwords(tokens: list[str], language: str) -> list[str]:
    """Drop stopwords, preserving order. Unsupported language: no-op, counted."""
    words = stopwords_for(language)
    if words is None:
        unsupported_language_counter[language] += 1
        return list(tokens)
    return [t for t in tokens if t not in words]


@dataclass
class Vocabulary:
    """Token table with reserved ids 0..3 for PAD, UNK, CLS, SEP."""

    tokens: list[str]
    token_to_id: dict[str, int] = field(init=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != RESERVED_TOKENS:
            raise ValueError(f"vocabulary must start with reserved tokens {RESERVED_TOKENS}")
        self.token_to_id = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)


def build_vocab(corpus: list[list[str]], min_freq: int = 1, max_size: int = 20000) -> Vocabulary:
    """Frequency vocabulary: most frequent first, ties lexicographic.

    ``max_size`` bounds the total size including the 4 reserved ids, so the
    corpus contributes at most ``max_size - 4`` tokens.
    """
    if max_size < 4:
        raise ValueError(f"max_size must be >= 4, got {max_size}")
    counts: Counter = Counter()
    for tokens in corpus:
        counts.update(tokens)
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_freq),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocabulary(list(RESERVED_TOKENS) + kept[: max_size - 4])


def encode_pair(
    u_tokens: list[str], v_tokens: list[str], vocab: Vocabulary, max_len: int
) -> list[int]:
    """Encode a title pair as one joint sequence: [CLS] u [SEP] v [SEP] + padding.

    When the pair does not fit, the longer side loses tokens from its end
    first (ties trim the candidate side), so both titles keep their heads.
    Output length is always exactly ``max_len``.
    """
    if max_len < 5:
        raise ValueError(f"max_len must be >= 5, got {max_len}")
    u = list(u_tokens)
    v = list(v_tokens)
    budget = max_len - 3
    while len(u) + len(v) > budget:
        if len(u) > len(v):
            u.pop()
        else:
            v.pop()
    ids = [CLS_ID] + [vocab.id_of(t) for t in u] + [SEP_ID] + [vocab.id_of(t) for t in v] + [SEP_ID]
    ids.extend([PAD_ID] * (max_len - len(ids)))
    return ids
