"""Rectified few-shot protocol: fixed test split, per-run train/validation
splits, Cartesian pairing with a same:different ratio filter, and manifests.

All sampling goes through :class:`Rng` (SplitMix64 + Fisher-Yates) so that
manifests are bit-identical on every platform.
"""
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ClassTooSmall, InsufficientPool, InsufficientSource, NoSameClassPairs, ProtocolError

MASK64 = (1 << 64) - 1


class Rng:
    """SplitMix64 generator with rejection-sampled ranges."""

    def __init__(self, seed):
        self.state = int(seed) & MASK64

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n):
        """Uniform integer in ``[0, n)``."""
        if n <= 0:
            raise ValueError(f"range must be positive, got {n}")
        limit = ((1 << 64) // n) * n
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def uniform(self):
        """Uniform float in ``[0, 1)`` with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def normal(self):
        """Standard normal draw (Box-Muller, cosine branch)."""
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normals(self, shape):
        size = int(np.prod(shape))
        return np.array([self.normal() for _ in range(size)], dtype=np.float64).reshape(shape)

    def uniforms(self, shape, low=0.0, high=1.0):
        size = int(np.prod(shape))
        u = np.array([self.uniform() for _ in range(size)], dtype=np.float64).reshape(shape)
        return low + (high - low) * u

    def shuffle(self, items):
        """In-place Fisher-Yates shuffle of a list."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def sample(self, items, k):
        """``k`` items without replacement, in draw order (partial Fisher-Yates)."""
        pool = list(items)
        if not 0 <= k <= len(pool):
            raise ValueError(f"cannot sample {k} of {len(pool)} items")
        for i in range(k):
            j = i + self.below(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]


def derive_seed(seed, purpose):
    """Independent 64-bit stream seed for ``(seed, purpose)``."""
    digest = hashlib.sha256(f"{int(seed)}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _class_groups(labels, indices):
    groups = {}
    for i in indices:
        groups.setdefault(int(labels[i]), []).append(int(i))
    return {c: groups[c] for c in sorted(groups)}


def n_test_for_class(n_class, fraction):
    return max(1, int(math.floor(fraction * n_class + 0.5)))


def fixed_test_split(target, fraction, test_seed):
    """Stratified test split of the target domain; returns sorted (test, pool) indices."""
    if not 0 < fraction < 1:
        raise ProtocolError(f"test fraction must be in (0, 1), got {fraction}")
    rng = Rng(derive_seed(test_seed, "test"))
    test, pool = [], []
    for c, idx in _class_groups(target.labels, range(target.n)).items():
        n_test = n_test_for_class(len(idx), fraction)
        if len(idx) < 2 or n_test >= len(idx):
            raise ClassTooSmall(f"class {c} has {len(idx)} target samples; cannot split off {n_test} for test")
        chosen = set(rng.sample(idx, n_test))
        test.extend(i for i in idx if i in chosen)
        pool.extend(i for i in idx if i not in chosen)
    return sorted(test), sorted(pool)


def run_split(target, pool, n_target_per_class, run_seed):
    """Per-run split of the pool into sorted (train_target, validation) indices."""
    rng = Rng(derive_seed(run_seed, "target"))
    train, val = [], []
    for c, idx in _class_groups(target.labels, pool).items():
        if len(idx) <= n_target_per_class:
            raise InsufficientPool(
                f"class {c} has {len(idx)} pool samples; need more than {n_target_per_class}"
            )
        chosen = set(rng.sample(idx, n_target_per_class))
        train.extend(i for i in idx if i in chosen)
        val.extend(i for i in idx if i not in chosen)
    return sorted(train), sorted(val)


def sample_source(source, n_source_per_class, run_seed):
    """Seeded stratified sample of source indices (sorted)."""
    rng = Rng(derive_seed(run_seed, "source"))
    out = []
    for c, idx in _class_groups(source.labels, range(source.n)).items():
        if len(idx) < n_source_per_class:
            raise InsufficientSource(f"class {c} has {len(idx)} source samples; need {n_source_per_class}")
        out.extend(rng.sample(idx, n_source_per_class))
    return sorted(out)


@dataclass(frozen=True)
class PairSet:
    """Source x target training pairs ``(source_index, target_index, same_class)``."""

    pairs: tuple
    ratio_requested: tuple
    n_same: int
    n_diff: int
    available_diff: int
    requested_diff: int

    @property
    def shortfall(self):
        return self.requested_diff - self.n_diff

    def __len__(self):
        return len(self.pairs)

    def to_dict(self):
        return {
            "pairs": [[s, t, int(same)] for s, t, same in self.pairs],
            "ratio": list(self.ratio_requested),
            "n_same": self.n_same,
            "n_diff": self.n_diff,
            "available_diff": self.available_diff,
            "requested_diff": self.requested_diff,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple((int(s), int(t), bool(same)) for s, t, same in d["pairs"]),
            tuple(d["ratio"]),
            d["n_same"],
            d["n_diff"],
            d["available_diff"],
            d["requested_diff"],
        )


def cartesian_pairs(source_labels, train_source, target_labels, train_target, ratio, pair_seed):
    """All same-class source x target pairs plus a seeded subsample of
    different-class pairs capped at ``floor(n_same * b / a)``."""
    a, b = (int(r) for r in ratio)
    if a < 1 or b < 1:
        raise ProtocolError(f"ratio terms must be positive integers, got {ratio}")
    if not train_source or not train_target:
        raise NoSameClassPairs("both training sets must be non-empty")
    same, diff = [], []
    for s in sorted(train_source):
        for t in sorted(train_target):
            (same if source_labels[s] == target_labels[t] else diff).append((int(s), int(t)))
    if not same:
        raise NoSameClassPairs("no source/target pair shares a class")
    requested = (len(same) * b) // a
    n_diff = min(requested, len(diff))
    rng = Rng(derive_seed(pair_seed, "pairs"))
    chosen = rng.sample(diff, n_diff)
    pairs = tuple((s, t, True) for s, t in same) + tuple((s, t, False) for s, t in chosen)
    return PairSet(pairs, (a, b), len(same), n_diff, len(diff), requested)


# -- manifests -------------------------------------------------------------

def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True) + "\n"


def sha256_hex(data):
    if isinstance(data, str):
        data = data.encode()
    return hashlib.sha256(data).hexdigest()


def fingerprint_files(paths):
    h = hashlib.sha256()
    for p in paths:
        with open(p, "rb") as fh:
            h.update(hashlib.sha256(fh.read()).digest())
    return h.hexdigest()


def fingerprint_dataset(ds):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ds.features, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(ds.labels, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(ds.domains, dtype="<i1").tobytes())
    h.update(str(ds.class_count).encode())
    return h.hexdigest()


@dataclass(frozen=True)
class RunRecord:
    seed: int
    train_target: tuple
    validation: tuple
    train_source: tuple
    pairs: PairSet
    test: tuple = None  # per-run test set; traditional protocol only

    def to_dict(self):
        out = {
            "seed": self.seed,
            "train_target": sorted(self.train_target),
            "validation": sorted(self.validation),
            "train_source": sorted(self.train_source),
            "pairs": self.pairs.to_dict(),
        }
        if self.test is not None:
            out["test"] = sorted(self.test)
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["seed"],
            tuple(d["train_target"]),
            tuple(d["validation"]),
            tuple(d["train_source"]),
            PairSet.from_dict(d["pairs"]),
            tuple(d["test"]) if "test" in d else None,
        )


@dataclass(frozen=True)
class SplitManifest:
    fingerprint: str
    test: tuple
    runs: tuple
    params: dict = field(default_factory=dict)
    protocol: str = "rectified"

    def body(self):
        return {
            "fingerprint": self.fingerprint,
            "protocol": self.protocol,
            "params": self.params,
            "test": sorted(self.test),
            "runs": [r.to_dict() for r in self.runs],
        }

    @property
    def manifest_hash(self):
        return manifest_hash(self)

    def to_json(self):
        body = self.body()
        body["manifest_hash"] = self.manifest_hash
        if self.protocol == "traditional":
            body["deprecated"] = "traditional protocol: test data doubles as validation data (leaky)"
        return canonical_json(body)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        m = cls(d["fingerprint"], tuple(d["test"]), tuple(RunRecord.from_dict(r) for r in d["runs"]),
                d["params"], d.get("protocol", "rectified"))
        if "manifest_hash" in d and d["manifest_hash"] != m.manifest_hash:
            raise ProtocolError("manifest hash does not match its contents")
        return m

    def run(self, seed):
        for r in self.runs:
            if r.seed == seed:
                return r
        raise KeyError(seed)

    def disjoint(self):
        """True when no run's train/validation touches the test set or each other."""
        for r in self.runs:
            test = set(r.test if r.test is not None else self.test)
            train, val = set(r.train_target), set(r.validation)
            if test & (train | val) or train & val:
                return False
        return True


def manifest_hash(m):
    """SHA-256 (lowercase hex) of the canonical manifest serialization."""
    return sha256_hex(canonical_json(m.body()))


@dataclass(frozen=True)
class ProtocolParams:
    test_fraction: float = 0.3
    n_source_per_class: int = 20
    n_target_per_class: int = 3
    ratio: tuple = (1, 3)
    test_seed: int = 0

    def to_dict(self):
        return {
            "test_fraction": self.test_fraction,
            "n_source_per_class": self.n_source_per_class,
            "n_target_per_class": self.n_target_per_class,
            "ratio": list(self.ratio),
            "test_seed": self.test_seed,
        }


#: source/target counts from the Office31 and MNIST->USPS experiments
PRESETS = {
    "office31-amazon": ProtocolParams(0.3, 20, 3, (1, 3)),
    "office31-dslr": ProtocolParams(0.3, 8, 3, (1, 3)),
    "office31-webcam": ProtocolParams(0.3, 8, 3, (1, 3)),
    # the MNIST->USPS source count is reported as both 200 and 2000 per class
    "mnist-usps-200": ProtocolParams(0.3, 200, 3, (1, 3)),
    "mnist-usps-2000": ProtocolParams(0.3, 2000, 3, (1, 3)),
}


def build_manifest(source, target, params, run_seeds, fingerprint=None):
    """Rectified protocol: one fixed test split, one train/val/pair record per seed."""
    fp = fingerprint or sha256_hex(fingerprint_dataset(source) + fingerprint_dataset(target))
    test, pool = fixed_test_split(target, params.test_fraction, params.test_seed)
    runs = []
    for seed in run_seeds:
        train_t, val = run_split(target, pool, params.n_target_per_class, seed)
        train_s = sample_source(source, params.n_source_per_class, seed)
        pairs = cartesian_pairs(source.labels, train_s, target.labels, train_t, params.ratio, seed)
        runs.append(RunRecord(int(seed), tuple(train_t), tuple(val), tuple(train_s), pairs))
    return SplitManifest(fp, tuple(test), tuple(runs), params.to_dict(), "rectified")


def build_traditional_manifest(source, target, params, run_seeds, fingerprint=None):
    """Deprecated protocol: per-seed train draw from all target data, the rest
    is test, and the test data is reused for model selection."""
    fp = fingerprint or sha256_hex(fingerprint_dataset(source) + fingerprint_dataset(target))
    everything = list(range(target.n))
    runs = []
    for seed in run_seeds:
        train_t, rest = run_split(target, everything, params.n_target_per_class, seed)
        train_s = sample_source(source, params.n_source_per_class, seed)
        pairs = cartesian_pairs(source.labels, train_s, target.labels, train_t, params.ratio, seed)
        runs.append(RunRecord(int(seed), tuple(train_t), tuple(rest), tuple(train_s), pairs, tuple(rest)))
    return SplitManifest(fp, (), tuple(runs), params.to_dict(), "traditional")
