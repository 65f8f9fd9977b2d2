"""MOSS-style code similarity built on token k-grams and robust winnowing.

Pipeline: ``normalize`` (tokenize, strip comments, canonicalize
identifiers) -> ``kgram_hashes`` (rolling polynomial hash over token
windows) -> ``winnow`` (minimum hash per window, rightmost on ties) ->
``similarity`` (set overlap of the selected hashes).

Hashing constants are fixed so fingerprints are bit-exact everywhere:
token values are the first 8 bytes of BLAKE2b(token text) reduced mod
``HASH_MODULUS`` and k-grams hash as sum(v_i * HASH_BASE**(k-1-i)) mod
``HASH_MODULUS``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import re
import warnings
from collections import Counter, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime
from functools import lru_cache
from typing import Mapping, Sequence

HASH_MODULUS = (1 << 61) - 1  # Mersenne prime 2**61 - 1
HASH_BASE = 1099511628211  # 64-bit FNV prime
DEFAULT_K = 5
DEFAULT_W = 4
DEFAULT_BOILERPLATE_FRACTION = 0.5
SATURATION_LEVEL = 0.8

ID, NUM, STR, CHR, NL = "ID", "NUM", "STR", "CHR", "NL"

JAVA_KEYWORDS = frozenset("""
abstract assert boolean break byte case catch char class const continue default do double
else enum extends final finally float for goto if implements import instanceof int interface
long native new package private protected public return short static strictfp super switch
synchronized this throw throws transient try void volatile while var record yield
true false null
""".split())

# longest first so the alternation prefers multi-character operators
_OPERATORS = sorted(
    """>>>= <<= >>= >>> ... -> :: ++ -- && || == != <= >= += -= *= /= %= &= |= ^= << >>
    + - * / % = < > ! ~ ? : ; , . ( ) [ ] { } & | ^ @""".split(),
    key=len,
    reverse=True,
)


class UnterminatedCommentWarning(UserWarning):
    pass


class ParameterMismatch(ValueError):
    """Fingerprints made with different (k, w) or normalization cannot be compared."""


@dataclass(frozen=True)
class NormalizationConfig:
    strip_comments: bool = True
    collapse_whitespace: bool = True
    identifier_canonicalization: str = "single_placeholder"  # or "keep"
    case_fold: bool = True
    # (line prefix, block open, block close); any element may be None
    comment_syntaxes: tuple[tuple[str | None, str | None, str | None], ...] = (("//", "/*", "*/"),)
    keywords: frozenset[str] = JAVA_KEYWORDS

    def __post_init__(self):
        if self.identifier_canonicalization not in ("keep", "single_placeholder"):
            raise ValueError("identifier_canonicalization must be 'keep' or 'single_placeholder'")
        if self.identifier_canonicalization == "single_placeholder" and not (
            self.strip_comments or self.collapse_whitespace or self.case_fold
        ):
            raise ValueError("placeholder canonicalization needs at least one other normalization step")
        syntaxes = tuple(tuple(s) for s in self.comment_syntaxes)
        for s in syntaxes:
            if len(s) != 3 or (s[1] is None) != (s[2] is None):
                raise ValueError(f"bad comment syntax {s!r}: need (line, open, close)")
        object.__setattr__(self, "comment_syntaxes", syntaxes)
        object.__setattr__(self, "keywords", frozenset(self.keywords))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["comment_syntaxes"] = [list(s) for s in self.comment_syntaxes]
        d["keywords"] = sorted(self.keywords)
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "NormalizationConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown normalization keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "comment_syntaxes" in kwargs:
            kwargs["comment_syntaxes"] = tuple(tuple(s) for s in kwargs["comment_syntaxes"])
        if "keywords" in kwargs:
            kwargs["keywords"] = frozenset(kwargs["keywords"])
        return cls(**kwargs)

    @property
    def key(self) -> str:
        """Short digest identifying this configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Token:
    text: str
    start: int  # byte offsets into the UTF-8 source
    end: int


@dataclass(frozen=True)
class TokenStream:
    tokens: tuple[Token, ...]
    source_bytes: int = 0

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    @property
    def texts(self) -> list[str]:
        return [t.text for t in self.tokens]


@lru_cache(maxsize=32)
def _scanner(syntaxes: tuple) -> re.Pattern:
    parts = []
    for i, (line, open_, close) in enumerate(syntaxes):
        if open_ is not None:
            o, c = re.escape(open_), re.escape(close)
            parts.append(f"(?P<block{i}>{o}(?s:.*?){c})")
            parts.append(f"(?P<open{i}>{o}(?s:.*)\\Z)")
        if line is not None:
            parts.append(f"(?P<line{i}>{re.escape(line)}[^\\n]*)")
    parts += [
        r'(?P<str>"(?:[^"\\\n]|\\.)*"?)',
        r"(?P<chr>'(?:[^'\\\n]|\\.)*'?)",
        r"(?P<num>0[xX][0-9a-fA-F_]+[lL]?|0[bB][01_]+[lL]?"
        r"|(?:\d[\d_]*(?:\.[\d_]*)?|\.\d[\d_]*)(?:[eE][+-]?\d+)?[fFdDlL]?)",
        r"(?P<ident>(?:[^\W\d]|\$)(?:\w|\$)*)",
        "(?P<op>" + "|".join(re.escape(op) for op in _OPERATORS) + ")",
        r"(?P<nl>\n)",
        r"(?P<ws>[^\S\n]+)",
        r"(?P<other>.)",
    ]
    return re.compile("|".join(parts))


def _byte_offsets(source: str):
    if source.isascii():
        return lambda i: i
    table = [0]
    for ch in source:
        table.append(table[-1] + len(ch.encode("utf-8")))
    return table.__getitem__


def _as_text(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        try:
            source = bytes(source).decode("utf-8")
        except UnicodeDecodeError:
            raise ValueError("source is not UTF-8 text") from None
    if not isinstance(source, str):
        raise TypeError(f"source must be text, got {type(source).__name__}")
    if "\x00" in source:
        raise ValueError("source contains NUL bytes; not text")
    return source


def normalize(source: str | bytes, cfg: NormalizationConfig | None = None) -> TokenStream:
    """Tokenize and canonicalize source text.

    >>> [t.text for t in normalize("int x = 1; // hi")]
    ['int', 'ID', '=', 'NUM', ';']
    """
    cfg = cfg or NormalizationConfig()
    source = _as_text(source)
    to_bytes = _byte_offsets(source)
    placeholder = cfg.identifier_canonicalization == "single_placeholder"
    keywords = {k.lower() for k in cfg.keywords} if cfg.case_fold else cfg.keywords
    tokens: list[Token] = []

    for m in _scanner(cfg.comment_syntaxes).finditer(source):
        kind = m.lastgroup
        text = m.group()
        if kind.startswith(("block", "line", "open")):
            if kind.startswith("open"):
                warnings.warn(
                    "unterminated block comment; rest of file treated as comment",
                    UnterminatedCommentWarning,
                    stacklevel=2,
                )
            if cfg.strip_comments:
                continue
            canon = " ".join(text.split())
            canon = canon.lower() if cfg.case_fold else canon
        elif kind == "ws":
            continue
        elif kind == "nl":
            if cfg.collapse_whitespace:
                continue
            if tokens and tokens[-1].text == NL:
                continue
            canon = NL
        elif kind == "ident":
            folded = text.lower() if cfg.case_fold else text
            if folded in keywords:
                canon = folded
            else:
                canon = ID if placeholder else folded
        elif kind == "num":
            canon = NUM
        elif kind == "str":
            canon = STR
        elif kind == "chr":
            canon = CHR
        else:
            canon = text
        tokens.append(Token(canon, to_bytes(m.start()), to_bytes(m.end())))

    return TokenStream(tuple(tokens), to_bytes(len(source)))


@lru_cache(maxsize=65536)
def token_value(text: str) -> int:
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % HASH_MODULUS


def _token_values(tokens) -> list[int]:
    if isinstance(tokens, TokenStream):
        tokens = tokens.texts
    return [token_value(t) for t in tokens]


def kgram_hashes(tokens: TokenStream | Sequence[str], k: int = DEFAULT_K) -> list[int]:
    """Rolling hash of every contiguous k-token window."""
    if k < 1:
        raise ValueError("k must be >= 1")
    values = _token_values(tokens)
    n = len(values)
    if n < k:
        return []
    top = pow(HASH_BASE, k - 1, HASH_MODULUS)
    h = 0
    for v in values[:k]:
        h = (h * HASH_BASE + v) % HASH_MODULUS
    out = [h]
    for i in range(k, n):
        h = ((h - values[i - k] * top) * HASH_BASE + values[i]) % HASH_MODULUS
        out.append(h)
    return out


@dataclass(frozen=True)
class FingerprintSet:
    doc_id: str
    fingerprints: frozenset[tuple[int, int]]  # (hash, k-gram start token index)
    k: int
    w: int
    config_key: str = ""
    n_tokens: int | None = None
    token_spans: tuple[tuple[int, int], ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if self.n_tokens is not None:
            limit = self.n_tokens - self.k
            for _, pos in self.fingerprints:
                if not 0 <= pos <= limit:
                    raise ValueError(f"fingerprint position {pos} outside 0..{limit}")

    def __len__(self) -> int:
        return len(self.fingerprints)

    @property
    def hashes(self) -> frozenset[int]:
        return frozenset(h for h, _ in self.fingerprints)

    @property
    def params(self) -> tuple[int, int, str]:
        return (self.k, self.w, self.config_key)

    def positions(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for h, pos in sorted(self.fingerprints, key=lambda f: f[1]):
            out.setdefault(h, []).append(pos)
        return out


def winnow_positions(hashes: Sequence[int], w: int) -> list[int]:
    """Selected k-gram indices: per window the minimum, rightmost on ties."""
    if w < 1:
        raise ValueError("w must be >= 1")
    n = len(hashes)
    if n == 0:
        return []
    if n < w:
        best = min(hashes)
        return [max(i for i, h in enumerate(hashes) if h == best)]
    window: deque[int] = deque()
    picked = []
    for i, h in enumerate(hashes):
        while window and hashes[window[-1]] >= h:
            window.pop()
        window.append(i)
        if window[0] <= i - w:
            window.popleft()
        if i >= w - 1 and (not picked or picked[-1] != window[0]):
            picked.append(window[0])
    return picked


def winnow(
    hashes: Sequence[int],
    w: int = DEFAULT_W,
    *,
    k: int = DEFAULT_K,
    doc_id: str = "",
    config_key: str = "",
    n_tokens: int | None = None,
    token_spans: tuple[tuple[int, int], ...] = (),
) -> FingerprintSet:
    picked = winnow_positions(hashes, w)
    return FingerprintSet(
        doc_id=doc_id,
        fingerprints=frozenset((hashes[p], p) for p in picked),
        k=k,
        w=w,
        config_key=config_key,
        n_tokens=n_tokens,
        token_spans=token_spans,
    )


def fingerprint(
    source: str,
    doc_id: str = "",
    cfg: NormalizationConfig | None = None,
    k: int = DEFAULT_K,
    w: int = DEFAULT_W,
) -> FingerprintSet:
    cfg = cfg or NormalizationConfig()
    tokens = normalize(source, cfg)
    return winnow(
        kgram_hashes(tokens, k),
        w,
        k=k,
        doc_id=doc_id,
        config_key=cfg.key,
        n_tokens=len(tokens),
        token_spans=tuple((t.start, t.end) for t in tokens),
    )


@dataclass(frozen=True)
class SimilarityScore:
    containment_a: float
    containment_b: float
    jaccard: float
    matched_fingerprints: int

    @property
    def percent(self) -> float:
        """MOSS-style percent matched: the larger containment."""
        return max(self.containment_a, self.containment_b)


def _check_params(a: FingerprintSet, b: FingerprintSet) -> None:
    if a.params != b.params:
        raise ParameterMismatch(
            f"cannot compare {a.doc_id!r} (k={a.k}, w={a.w}, cfg={a.config_key}) "
            f"with {b.doc_id!r} (k={b.k}, w={b.w}, cfg={b.config_key})"
        )


def _score_sets(ha: frozenset[int], hb: frozenset[int]) -> SimilarityScore:
    shared = len(ha & hb)
    union = len(ha) + len(hb) - shared
    return SimilarityScore(
        containment_a=shared / len(ha) if ha else 0.0,
        containment_b=shared / len(hb) if hb else 0.0,
        jaccard=shared / union if union else 0.0,
        matched_fingerprints=shared,
    )


def similarity(a: FingerprintSet, b: FingerprintSet, exclude: frozenset[int] = frozenset()) -> SimilarityScore:
    _check_params(a, b)
    return _score_sets(a.hashes - exclude, b.hashes - exclude)


@dataclass(frozen=True)
class MatchedRegion:
    a_start: int
    a_end: int
    b_start: int
    b_end: int


def matched_regions(a: FingerprintSet, b: FingerprintSet, exclude: frozenset[int] = frozenset()) -> tuple[MatchedRegion, ...]:
    """Aligned byte spans covered by shared fingerprints, merged along diagonals."""
    _check_params(a, b)
    if not a.token_spans or not b.token_spans:
        return ()
    pos_a, pos_b = a.positions(), b.positions()
    pairs = sorted(
        (pa, pb)
        for h in (set(pos_a) & set(pos_b)) - exclude
        for pa in pos_a[h]
        for pb in pos_b[h]
    )
    k = a.k
    runs: list[list[int]] = []  # [a_first, a_last_token, b_first, b_last_token]
    for pa, pb in pairs:
        for run in runs:
            if pa - pb == run[0] - run[2] and pa <= run[1] + 1:
                run[1] = max(run[1], pa + k - 1)
                run[3] = max(run[3], pb + k - 1)
                break
        else:
            runs.append([pa, pa + k - 1, pb, pb + k - 1])
    return tuple(
        MatchedRegion(a.token_spans[r[0]][0], a.token_spans[r[1]][1], b.token_spans[r[2]][0], b.token_spans[r[3]][1])
        for r in runs
    )


@dataclass(frozen=True)
class PairReport:
    doc_a: str
    doc_b: str
    score: SimilarityScore
    # None when regions were not computed for this pair (outside the top-N)
    regions: tuple[MatchedRegion, ...] | None = None

    @property
    def percent(self) -> float:
        return self.score.percent


@dataclass(frozen=True)
class PairwiseResult:
    pairs: tuple[PairReport, ...]
    saturation: float
    n_documents: int
    excluded_hashes: frozenset[int]
    boilerplate_fraction: float
    k: int
    w: int
    diagnostics: tuple[str, ...] = ()
    fingerprints: Mapping[str, FingerprintSet] = field(default_factory=dict, compare=False, repr=False)

    @property
    def fully_saturated(self) -> bool:
        return "fully saturated corpus" in self.diagnostics


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def pairwise(
    submissions: Mapping[str, str],
    cfg: NormalizationConfig | None = None,
    k: int = DEFAULT_K,
    w: int = DEFAULT_W,
    boilerplate_fraction: float = DEFAULT_BOILERPLATE_FRACTION,
    *,
    threads: int = 1,
    regions_for_top: int | None = 100,
) -> PairwiseResult:
    """Score every pair of documents in a corpus.

    Hashes found in more than ``boilerplate_fraction`` of the documents are
    dropped before scoring (1.0 disables the filter). Pairs are ranked by
    percent matched, ties broken by document ids. Matched regions are only
    computed for the first ``regions_for_top`` pairs (None: all).
    """
    if len(submissions) < 2:
        raise ValueError("pairwise comparison needs at least 2 documents")
    if not 0.0 < boilerplate_fraction <= 1.0:
        raise ValueError("boilerplate_fraction must be in (0, 1]")
    cfg = cfg or NormalizationConfig()
    ids = sorted(submissions)
    fps = dict(zip(ids, _map(lambda d: fingerprint(submissions[d], d, cfg, k, w), ids, threads)))

    df = Counter(h for d in ids for h in fps[d].hashes)
    limit = boilerplate_fraction * len(ids)
    excluded = frozenset(h for h, n in df.items() if n > limit)
    effective = {d: fps[d].hashes - excluded for d in ids}

    pair_ids = list(itertools.combinations(ids, 2))
    chunk = max(1, len(pair_ids) // max(1, threads * 4))
    chunks = [pair_ids[i:i + chunk] for i in range(0, len(pair_ids), chunk)]

    def score_chunk(block):
        return [(a, b, _score_sets(effective[a], effective[b])) for a, b in block]

    scored = [x for block in _map(score_chunk, chunks, threads) for x in block]
    scored.sort(key=lambda t: (-t[2].percent, t[0], t[1]))

    pairs = []
    for rank, (a, b, s) in enumerate(scored):
        regions = None
        if regions_for_top is None or rank < regions_for_top:
            regions = matched_regions(fps[a], fps[b], excluded) if s.matched_fingerprints else ()
        pairs.append(PairReport(a, b, s, regions))

    high = sum(1 for p in pairs if p.percent > SATURATION_LEVEL)
    saturation = high / len(pairs)
    diagnostics = []
    if excluded and df and not any(effective.values()):
        diagnostics.append("fully saturated corpus")
    elif saturation >= 0.5:
        diagnostics.append(f"high saturation: {high}/{len(pairs)} pairs above {SATURATION_LEVEL:.0%} matched")
    empty = [d for d in ids if not fps[d].hashes]
    if empty:
        diagnostics.append(f"{len(empty)} documents too short to fingerprint (k={k})")

    return PairwiseResult(
        pairs=tuple(pairs),
        saturation=saturation,
        n_documents=len(ids),
        excluded_hashes=excluded,
        boilerplate_fraction=boilerplate_fraction,
        k=k,
        w=w,
        diagnostics=tuple(diagnostics),
        fingerprints=fps,
    )


class SimilarityEngine:
    """Fingerprints sources with one fixed configuration and caches them by text."""

    def __init__(self, cfg: NormalizationConfig | None = None, k: int = DEFAULT_K, w: int = DEFAULT_W):
        self.cfg = cfg or NormalizationConfig()
        self.k = k
        self.w = w
        self._cache: dict[str, FingerprintSet] = {}

    def fingerprint(self, source: str) -> FingerprintSet:
        fp = self._cache.get(source)
        if fp is None:
            fp = fingerprint(source, "", self.cfg, self.k, self.w)
            self._cache[source] = fp
        return fp

    def score(self, a: str, b: str) -> SimilarityScore:
        return similarity(self.fingerprint(a), self.fingerprint(b))

    def percent(self, a: str, b: str) -> float:
        if a == b:
            return 1.0
        return self.score(a, b).percent


@dataclass(frozen=True)
class CellHit:
    attempt_a: int  # 1-based attempt numbers
    attempt_b: int
    score: SimilarityScore
    timestamp_b: datetime


@dataclass(frozen=True)
class CrossAttemptResult:
    subject_a: str
    subject_b: str
    matrix: tuple[tuple[SimilarityScore | None, ...], ...]
    best: CellHit | None
    earliest_above: CellHit | None
    threshold: float


def cross_attempt_matrix(
    series_a,
    series_b,
    cfg: NormalizationConfig | None = None,
    k: int = DEFAULT_K,
    w: int = DEFAULT_W,
    threshold: float = SATURATION_LEVEL,
) -> CrossAttemptResult:
    """Compare every attempt of one student with every attempt of another.

    Cells are None where either attempt has no source. ``best`` is the
    highest-percent cell; ``earliest_above`` the first cell, by the second
    student's submission time, whose percent reaches ``threshold``.
    """
    if series_a.subject_id == series_b.subject_id:
        raise ValueError("cross-attempt comparison needs two different subjects")
    for s in (series_a, series_b):
        if not any(a.source is not None for a in s.attempts):
            raise ValueError(f"no attempt of {s.subject_id}/{s.problem_id} has resolved source")
    engine = SimilarityEngine(cfg, k, w)
    rows = []
    best = earliest = None
    for i, att_a in enumerate(series_a.attempts):
        row = []
        for j, att_b in enumerate(series_b.attempts):
            if att_a.source is None or att_b.source is None:
                row.append(None)
                continue
            s = engine.score(att_a.source, att_b.source)
            row.append(s)
            hit = CellHit(i + 1, j + 1, s, att_b.timestamp)
            if best is None or s.percent > best.score.percent:
                best = hit
            if s.percent >= threshold and (
                earliest is None or (att_b.timestamp, j, i) < (earliest.timestamp_b, earliest.attempt_b - 1, earliest.attempt_a - 1)
            ):
                earliest = hit
        rows.append(tuple(row))
    return CrossAttemptResult(series_a.subject_id, series_b.subject_id, tuple(rows), best, earliest, threshold)


def group_final_sources(series_map, problem_id: str | None = None) -> dict[str, dict[str, str]]:
    """Last attempt with source per student, grouped by problem: {problem: {subject: source}}."""
    out: dict[str, dict[str, str]] = {}
    for (sid, pid), series in sorted(series_map.items()):
        if problem_id is not None and pid != problem_id:
            continue
        for att in reversed(series.attempts):
            if att.source is not None:
                out.setdefault(pid, {})[sid] = att.source
                break
    return out
