"""Binary classification datasets in LIBSVM/SVMlight text format.

Each line reads ``<label> <index>:<value> ...`` with 1-based, strictly
increasing feature indices. Files ending in ``.gz`` are decompressed
transparently.
"""

from __future__ import annotations

import gzip
import hashlib
import os
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .exceptions import LibsvmParseError, UnsupportedLabelError

# raw label -> {-1, +1}
BINARY_LABELS = {-1.0: -1.0, 0.0: -1.0, 1.0: 1.0, 2.0: 1.0}
# files whose two classes are written 1 and 2 (e.g. mushrooms)
ONE_TWO_LABELS = {1.0: -1.0, 2.0: 1.0}
# digits 0-4 vs 5-9
MNIST_LABELS = {float(d): (-1.0 if d <= 4 else 1.0) for d in range(10)}

LABEL_MAPS = {"binary": BINARY_LABELS, "one-two": ONE_TWO_LABELS, "mnist": MNIST_LABELS}


def _resolve_auto(raw_labels) -> str:
    """``"one-two"`` when the file's label set is exactly {1, 2}, else ``"binary"``."""
    return "one-two" if set(raw_labels) == {1.0, 2.0} else "binary"


@dataclass(frozen=True, eq=False)
class Dataset:
    features: sp.csr_matrix
    labels: np.ndarray
    name: str
    source_checksum: str
    provenance: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def _open(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_libsvm(path, expected_dim: int | None = None, label_map: dict | str = "auto",
                name: str | None = None) -> Dataset:
    """Parse a LIBSVM file into a :class:`Dataset`.

    Parameters
    ----------
    path : str or path-like
    expected_dim : int, optional
        Number of columns; defaults to the largest index seen.
    label_map : {"auto", "binary", "one-two", "mnist"} or dict
        Raw label to +1/-1. ``"auto"`` uses ``"one-two"`` when the labels are
        exactly {1, 2} and ``"binary"`` otherwise.
    name : str, optional

    Raises
    ------
    LibsvmParseError
        Malformed input, with the 1-based line number.
    UnsupportedLabelError
        A label has no entry in the mapping.
    """
    if isinstance(label_map, str) and label_map not in LABEL_MAPS and label_map != "auto":
        raise ValueError(f"unknown label map {label_map!r}")
    sha = hashlib.sha256()
    raw_labels, indptr, indices, values = [], [0], [], []
    max_idx = 0
    with _open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            sha.update(raw)
            line = raw.split(b"#", 1)[0].decode().strip()
            if not line:
                continue
            parts = line.split()
            try:
                lab = float(parts[0])
            except ValueError:
                raise LibsvmParseError(f"bad label {parts[0]!r}", lineno) from None
            raw_labels.append(lab)
            prev = 0
            for tok in parts[1:]:
                idx_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise LibsvmParseError(f"expected index:value, got {tok!r}", lineno)
                try:
                    idx, val = int(idx_s), float(val_s)
                except ValueError:
                    raise LibsvmParseError(f"bad feature {tok!r}", lineno) from None
                if idx <= prev:
                    raise LibsvmParseError(
                        f"feature indices must be positive and strictly increasing ({idx} after {prev})",
                        lineno)
                prev = idx
                indices.append(idx - 1)
                values.append(val)
            max_idx = max(max_idx, prev)
            indptr.append(len(indices))
    if not raw_labels:
        raise LibsvmParseError("no data lines", 0)
    map_name = _resolve_auto(raw_labels) if label_map == "auto" else label_map
    mapping = LABEL_MAPS[map_name] if isinstance(map_name, str) else map_name
    bad = set(raw_labels) - set(mapping)
    if bad:
        raise UnsupportedLabelError(bad)
    labels = [mapping[v] for v in raw_labels]
    d = max_idx if expected_dim is None else int(expected_dim)
    if d < max_idx:
        raise LibsvmParseError(f"feature index {max_idx} exceeds expected_dim {d}", 0)
    X = sp.csr_matrix((np.array(values), np.array(indices, dtype=np.int64), np.array(indptr)),
                      shape=(len(labels), max(d, 1)))
    return Dataset(
        features=X,
        labels=np.array(labels),
        name=name or os.path.basename(str(path)).split(".")[0],
        source_checksum=sha.hexdigest(),
        provenance={"path": str(path), "label_map": map_name if isinstance(map_name, str) else "custom"},
    )


def write_libsvm(ds: Dataset, path) -> None:
    """Write ``ds`` with labels as ``+1``/``-1`` and values in shortest round-trip form."""
    X = ds.features.tocsr()
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wt") as fh:
        for i in range(X.shape[0]):
            lo, hi = X.indptr[i], X.indptr[i + 1]
            cols = X.indices[lo:hi]
            order = np.argsort(cols)
            feats = " ".join(f"{c + 1}:{repr(float(v))}" for c, v in zip(cols[order], X.data[lo:hi][order]))
            lab = "+1" if ds.labels[i] > 0 else "-1"
            fh.write(f"{lab} {feats}\n" if feats else f"{lab}\n")


def subsample(ds: Dataset, n: int, seed: int) -> Dataset:
    """Seeded uniform subset of ``n`` rows, drawn without replacement."""
    N = ds.n_samples
    if not 1 <= n <= N:
        raise ValueError(f"subsample size must be in [1, {N}], got {n}")
    if n == N:
        rows = np.arange(N)
    else:
        rows = np.sort(np.random.default_rng(seed).choice(N, size=n, replace=False))
    prov = dict(ds.provenance, parent=ds.name, subsample_seed=seed, subsample_n=n)
    return replace(ds, features=ds.features[rows], labels=ds.labels[rows], provenance=prov)


def scale_features(ds: Dataset, mode: str = "none") -> Dataset:
    """``"max-abs"`` divides each column by its largest magnitude; ``"none"`` is a no-op."""
    if mode == "none":
        return ds
    if mode not in ("max-abs", "max-abs-per-column"):
        raise ValueError(f"unknown scaling mode {mode!r}")
    X = ds.features.tocsc(copy=True)
    scale = np.asarray(abs(X).max(axis=0).todense()).ravel()
    scale[scale == 0.0] = 1.0
    X = (X @ sp.diags(1.0 / scale)).tocsr()
    return replace(ds, features=X, provenance=dict(ds.provenance, scaling="max-abs"))
