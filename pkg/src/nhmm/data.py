"""Corpus handling: vocabularies, MELBIN feature files, manifests,
normalization and a synthetic toy corpus with known alignments."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError, InputError

MELBIN_MAGIC = b"NHM1"
MELBIN_VERSION = 1
_MELBIN_HEADER = struct.Struct("<4sIII")


# vocabulary -----------------------------------------------------------------

class Vocabulary:
    """Bijective symbol <-> id map with dense ids from 0."""

    def __init__(self, symbols):
        self.symbols = list(symbols)
        self.index = {s: i for i, s in enumerate(self.symbols)}
        if len(self.index) != len(self.symbols):
            raise InputError("duplicate symbol in vocabulary")
        if any(not s or s != s.strip() or " " in s for s in self.symbols):
            raise InputError("vocabulary symbols must be non-empty and contain no whitespace")

    def __len__(self):
        return len(self.symbols)

    @property
    def size(self):
        return len(self.symbols)

    def encode(self, text):
        """Whitespace-separated symbol string (or token list) -> id array."""
        tokens = text.split() if isinstance(text, str) else list(text)
        ids = []
        for pos, tok in enumerate(tokens):
            if tok not in self.index:
                raise InputError(f"unknown symbol {tok!r} at position {pos}")
            ids.append(self.index[tok])
        return np.array(ids, dtype=np.int64)

    def decode(self, ids):
        return " ".join(self.symbols[int(i)] for i in ids)

    def save(self, path):
        Path(path).write_text("".join(s + "\n" for s in self.symbols), encoding="utf-8")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln])


# MELBIN ---------------------------------------------------------------------

def save_melbin(matrix, path):
    """Write a T x D matrix as little-endian float32 with a 16-byte header."""
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise ContractError(f"MELBIN holds 2-D matrices, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ContractError(f"MELBIN matrix must have T >= 1 and D >= 1, got {m.shape}")
    payload = np.ascontiguousarray(m, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(_MELBIN_HEADER.pack(MELBIN_MAGIC, MELBIN_VERSION, m.shape[0], m.shape[1]))
        f.write(payload)


def load_melbin(path) -> np.ndarray:
    """Read a MELBIN file into a float32 (T, D) array; header checked before payload."""
    with open(path, "rb") as f:
        header = f.read(_MELBIN_HEADER.size)
        if len(header) < _MELBIN_HEADER.size:
            raise FormatError(f"{path}: truncated header", offset=len(header))
        magic, version, n_rows, n_cols = _MELBIN_HEADER.unpack(header)
        if magic != MELBIN_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}", offset=0)
        if version != MELBIN_VERSION:
            raise FormatError(f"{path}: unsupported version {version}", offset=4)
        if n_rows < 1:
            raise FormatError(f"{path}: frame count must be >= 1", offset=8)
        if n_cols < 1:
            raise FormatError(f"{path}: dimension must be >= 1", offset=12)
        expected = n_rows * n_cols * 4
        payload = f.read(expected)
        if len(payload) < expected:
            raise FormatError(
                f"{path}: truncated payload, expected {expected} bytes, got {len(payload)}",
                offset=_MELBIN_HEADER.size + len(payload),
            )
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after payload", offset=_MELBIN_HEADER.size + expected)
    return np.frombuffer(payload, dtype="<f4").reshape(n_rows, n_cols).astype(np.float32)


# utterances and normalization ---------------------------------------------------

@dataclass
class Utterance:
    id: str
    symbols: np.ndarray
    frames: np.ndarray
    gold: np.ndarray | None = None  # symbol position per frame (toy data)

    @property
    def n_frames(self):
        return self.frames.shape[0]


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    n_frames: int = 0
    n_symbols: int = 0

    def apply(self, frames):
        return (np.asarray(frames, dtype=np.float64) - self.mean) / self.std

    def invert(self, frames):
        return np.asarray(frames, dtype=np.float64) * self.std + self.mean

    def normalize(self, utterances):
        return [
            Utterance(u.id, u.symbols, self.apply(u.frames), u.gold) for u in utterances
        ]


def compute_norm_stats(utterances) -> NormStats:
    """Per-dimension mean and (population) std over all training frames."""
    frames = np.concatenate([np.asarray(u.frames, dtype=np.float64) for u in utterances])
    if frames.shape[0] < 2:
        raise InputError("need at least 2 frames to compute normalization statistics")
    mean = frames.mean(axis=0)
    std = frames.std(axis=0)
    flat = np.flatnonzero(std <= 1e-12 * np.maximum(1.0, np.abs(mean)))
    if flat.size:
        raise InputError(f"dimension {int(flat[0])} has zero variance")
    n_symbols = sum(len(u.symbols) for u in utterances)
    return NormStats(mean, std, int(frames.shape[0]), int(n_symbols))


def check_feasibility(utterances, states_per_symbol):
    """Split into (feasible, rejected ids) by the T >= K * symbols rule."""
    ok, rejected = [], []
    for u in utterances:
        if u.n_frames >= states_per_symbol * len(u.symbols) and len(u.symbols) > 0:
            ok.append(u)
        else:
            rejected.append(u.id)
    return ok, rejected


# manifests ------------------------------------------------------------------

def read_manifest(path):
    """Parse "id TAB symbols TAB feature-path" lines; paths resolve against the manifest dir."""
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise InputError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}")
        utt_id, symbols, feat = fields
        entries.append((utt_id, symbols, path.parent / feat))
    return entries


def write_manifest(path, entries):
    path = Path(path)
    lines = []
    for utt_id, symbols, feat in entries:
        feat = Path(feat)
        try:
            feat = feat.relative_to(path.parent)
        except ValueError:
            pass
        lines.append(f"{utt_id}\t{symbols}\t{feat.as_posix()}\n")
    path.write_text("".join(lines), encoding="utf-8")


def gold_path(feature_path):
    return Path(str(feature_path) + ".gold")


def save_gold(path, gold):
    Path(path).write_text("".join(f"{int(g)}\n" for g in gold), encoding="utf-8")


def load_gold(path):
    return np.array([int(x) for x in Path(path).read_text(encoding="utf-8").split()], dtype=np.int64)


def load_corpus(manifest, vocab: Vocabulary):
    """Load every manifest entry with raw (unnormalized) frames and any gold sidecar."""
    utts = []
    for utt_id, text, feat in read_manifest(manifest):
        try:
            symbols = vocab.encode(text)
        except InputError as e:
            raise InputError(f"utterance {utt_id!r}: {e}") from None
        frames = load_melbin(feat).astype(np.float64)
        if not np.all(np.isfinite(frames)):
            raise InputError(f"utterance {utt_id!r}: non-finite frames")
        gp = gold_path(feat)
        gold = load_gold(gp) if gp.exists() else None
        utts.append(Utterance(utt_id, symbols, frames, gold))
    return utts


# toy corpus -------------------------------------------------------------------

@dataclass
class ToySpec:
    """Synthetic corpus description.

    ``means`` has shape (V, P, D): each symbol emits P consecutive segments
    (P = 2 gives the bimodal per-symbol patterns). Symbol durations are
    uniform integers in ``[duration_min[v], duration_max[v]]``. The minimum
    must cover ``states_per_symbol`` so every utterance is alignable.
    """

    means: np.ndarray
    duration_min: np.ndarray
    duration_max: np.ndarray
    noise_scale: float = 0.1
    seed: int = 0
    length_range: tuple = (3, 8)
    states_per_symbol: int = 2

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        if self.means.ndim == 2:
            self.means = self.means[:, None, :]
        V = self.means.shape[0]
        self.duration_min = np.broadcast_to(np.asarray(self.duration_min, dtype=np.int64), (V,)).copy()
        self.duration_max = np.broadcast_to(np.asarray(self.duration_max, dtype=np.int64), (V,)).copy()
        if np.any(self.duration_min > self.duration_max):
            raise ContractError("duration_min exceeds duration_max")
        if np.any(self.duration_min < self.means.shape[1]):
            raise ContractError("every segment needs at least one frame")
        if np.any(self.duration_min < self.states_per_symbol):
            raise ContractError(f"duration_min must be >= states_per_symbol ({self.states_per_symbol})")

    @property
    def vocab_size(self):
        return self.means.shape[0]

    @property
    def acoustic_dim(self):
        return self.means.shape[2]

    @property
    def segments(self):
        return self.means.shape[1]

    @classmethod
    def random(cls, vocab_size=8, acoustic_dim=4, segments=1, duration=(3, 8),
               noise_scale=0.1, seed=0, length_range=(3, 8), spread=2.0, states_per_symbol=2):
        rng = np.random.default_rng(seed)
        means = rng.uniform(-spread, spread, size=(vocab_size, segments, acoustic_dim))
        return cls(means, duration[0], duration[1], noise_scale, seed, length_range, states_per_symbol)


def generate_toy_corpus(spec: ToySpec, count, seed=None, prefix="toy"):
    """Reproducible utterances with gold symbol positions per frame."""
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    lo, hi = spec.length_range
    utts = []
    for k in range(count):
        n_sym = int(rng.integers(lo, hi + 1))
        symbols = rng.integers(0, spec.vocab_size, size=n_sym)
        frames, gold = [], []
        for pos, v in enumerate(symbols):
            d = int(rng.integers(spec.duration_min[v], spec.duration_max[v] + 1))
            # split d frames into P near-equal consecutive segments
            cuts = np.linspace(0, d, spec.segments + 1).round().astype(int)
            for seg in range(spec.segments):
                n = cuts[seg + 1] - cuts[seg]
                frames.append(np.repeat(spec.means[v, seg][None, :], n, axis=0))
            gold.extend([pos] * d)
        frames = np.concatenate(frames)
        frames = frames + spec.noise_scale * rng.standard_normal(frames.shape)
        utts.append(Utterance(f"{prefix}{k:04d}", symbols.astype(np.int64), frames, np.array(gold, dtype=np.int64)))
    return utts


def toy_vocabulary(size):
    return Vocabulary([f"s{i}" for i in range(size)])


def write_toy_corpus(utterances, out_dir, vocab: Vocabulary, manifest_name="manifest.tsv"):
    """Write MELBIN features, gold sidecars and a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    feat_dir = out_dir / "feats"
    feat_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for u in utterances:
        feat = feat_dir / f"{u.id}.melbin"
        save_melbin(u.frames, feat)
        if u.gold is not None:
            save_gold(gold_path(feat), u.gold)
        entries.append((u.id, vocab.decode(u.symbols), feat))
    manifest = out_dir / manifest_name
    write_manifest(manifest, entries)
    return manifest


# evaluation -------------------------------------------------------------------

def _boundaries(positions):
    positions = np.asarray(positions)
    return np.flatnonzero(np.diff(positions) != 0) + 1


def alignment_accuracy(predicted, gold, states_per_symbol=1, tolerance=1):
    """Frame accuracy and boundary F1 of a predicted state alignment.

    ``predicted`` holds per-frame state indices (or an Alignment); they are
    collapsed to symbol positions with ``// states_per_symbol`` before being
    compared to ``gold`` symbol positions. A predicted boundary is a hit if
    an unmatched gold boundary lies within ``tolerance`` frames.
    """
    states = np.asarray(getattr(predicted, "states", predicted))
    gold = np.asarray(gold)
    if states.shape != gold.shape:
        raise ContractError(f"length mismatch: predicted {states.shape[0]} frames, gold {gold.shape[0]}")
    pred_sym = states // states_per_symbol
    accuracy = float(np.mean(pred_sym == gold))
    pb, gb = _boundaries(pred_sym), _boundaries(gold)
    if pb.size == 0 and gb.size == 0:
        return accuracy, 1.0
    used = np.zeros(gb.size, dtype=bool)
    hits = 0
    for b in pb:
        near = np.flatnonzero(~used & (np.abs(gb - b) <= tolerance))
        if near.size:
            used[near[np.argmin(np.abs(gb[near] - b))]] = True
            hits += 1
    precision = hits / pb.size if pb.size else 0.0
    recall = hits / gb.size if gb.size else 0.0
    f1 = 0.0 if hits == 0 else 2 * precision * recall / (precision + recall)
    return accuracy, float(f1)
