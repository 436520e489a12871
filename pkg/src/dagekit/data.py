"""Labeled two-domain datasets, CSV ingestion and validation.

Samples are stored as columns: ``features`` has shape ``(D, N)``.
"""
import csv
import enum
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidLabel, MalformedHeader, MissingFile, NonFiniteValue, RaggedRow, UnknownDomainTag


class DomainTag(enum.IntEnum):
    SOURCE = 0
    TARGET = 1

    @classmethod
    def parse(cls, text):
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise UnknownDomainTag(f"unknown domain tag {text!r}") from None

    def __str__(self):
        return self.name.lower()


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature matrix (D x N) with a class label and domain tag per column."""

    features: np.ndarray
    labels: np.ndarray
    domains: np.ndarray
    class_count: int

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise ValueError(f"features must be a (D, N) matrix, got shape {feats.shape}")
        object.__setattr__(self, "features", _frozen(feats, np.float64))
        object.__setattr__(self, "labels", _frozen(np.asarray(self.labels).reshape(-1), np.int64))
        object.__setattr__(self, "domains", _frozen(np.asarray(self.domains).reshape(-1), np.int8))
        object.__setattr__(self, "class_count", int(self.class_count))

    @property
    def dim(self):
        return self.features.shape[0]

    @property
    def n(self):
        return self.features.shape[1]

    def __len__(self):
        return self.n

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[:, idx], self.labels[idx], self.domains[idx], self.class_count)

    def domain(self, tag):
        return self.subset(np.flatnonzero(self.domains == int(tag)))

    @classmethod
    def concat(cls, *parts):
        if not parts:
            raise ValueError("need at least one dataset")
        return cls(
            np.concatenate([p.features for p in parts], axis=1),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.domains for p in parts]),
            max(p.class_count for p in parts),
        )

    def equals(self, other):
        """Bit-level equality of all fields."""
        return (
            self.class_count == other.class_count
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.domains, other.domains)
        )


@dataclass(frozen=True)
class ClassIndex:
    """Column indices grouped by (domain, class label)."""

    source: dict = field(default_factory=dict)
    target: dict = field(default_factory=dict)

    def by_domain(self, tag):
        return self.source if DomainTag(tag) is DomainTag.SOURCE else self.target

    def all_indices(self):
        out = []
        for groups in (self.source, self.target):
            for idx in groups.values():
                out.extend(idx)
        return out


def build_class_index(ds):
    source, target = {}, {}
    for col, (label, dom) in enumerate(zip(ds.labels.tolist(), ds.domains.tolist())):
        groups = source if dom == DomainTag.SOURCE else target
        groups.setdefault(label, []).append(col)
    return ClassIndex(
        {k: source[k] for k in sorted(source)},
        {k: target[k] for k in sorted(target)},
    )


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self):
        return f"{self.code}: {self.message}"


def validate(ds):
    """Return the first violated dataset invariant, or ``None`` if consistent."""
    feats = np.asarray(ds.features)
    if feats.ndim != 2 or feats.shape[0] < 1:
        return Violation("dimension", "feature dimension must be at least 1")
    n = feats.shape[1]
    if ds.labels.shape[0] != n or ds.domains.shape[0] != n:
        return Violation(
            "length mismatch",
            f"{n} columns but {ds.labels.shape[0]} labels and {ds.domains.shape[0]} domain tags",
        )
    if n and (ds.labels.min() < 0 or ds.labels.max() >= ds.class_count):
        bad = int(np.flatnonzero((ds.labels < 0) | (ds.labels >= ds.class_count))[0])
        return Violation(
            "label out of range",
            f"column {bad} has label {int(ds.labels[bad])} with class_count {ds.class_count}",
        )
    if n and not np.isin(ds.domains, [DomainTag.SOURCE, DomainTag.TARGET]).all():
        return Violation("unknown domain", "domain tags must be source or target")
    if not np.isfinite(feats).all():
        row, col = np.argwhere(~np.isfinite(feats))[0]
        return Violation("non-finite", f"feature {row} of column {col} is {feats[row, col]}")
    return None


def _parse_float(text, line):
    try:
        value = float(text)
    except ValueError:
        raise NonFiniteValue(f"line {line}: cannot parse {text!r} as a number") from None
    if not math.isfinite(value):
        raise NonFiniteValue(f"line {line}: non-finite value {text!r}")
    return value


def load_feature_csv(path):
    """Read a ``domain,label,f0,...`` CSV into a :class:`LabeledDataset`."""
    if not os.path.isfile(path):
        raise MissingFile(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedHeader(f"{path}: empty file") from None
        dim = len(header) - 2
        expected = ["domain", "label"] + [f"f{i}" for i in range(dim)]
        if dim < 1 or [h.strip() for h in header] != expected:
            raise MalformedHeader(f"{path}: header must be domain,label,f0,...,f{{D-1}}; got {','.join(header)}")
        cols, labels, domains = [], [], []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != dim + 2:
                raise RaggedRow(line, dim + 2, len(row))
            domains.append(DomainTag.parse(row[0]))
            try:
                label = int(row[1])
            except ValueError:
                raise InvalidLabel(f"line {line}: label {row[1]!r} is not an integer") from None
            if label < 0:
                raise InvalidLabel(f"line {line}: negative label {label}")
            labels.append(label)
            cols.append([_parse_float(v, line) for v in row[2:]])
    features = np.array(cols, dtype=np.float64).T if cols else np.zeros((dim, 0))
    class_count = max(labels) + 1 if labels else 0
    return LabeledDataset(features, labels, domains, class_count)


def write_feature_csv(ds, path):
    """Write ``ds`` in the CSV format read by :func:`load_feature_csv`."""
    header = ["domain", "label"] + [f"f{i}" for i in range(ds.dim)]
    lines = [",".join(header)]
    for col in range(ds.n):
        vals = [repr(float(v)) for v in ds.features[:, col]]
        lines.append(",".join([str(DomainTag(int(ds.domains[col]))), str(int(ds.labels[col]))] + vals))
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)
