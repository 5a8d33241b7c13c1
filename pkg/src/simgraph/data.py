"""Vector datasets: fvecs/ivecs files, splits, ground truth, synthetic clusters.

File formats follow the texmex benchmark convention: every record is a 4-byte
little-endian integer giving the vector dimension, followed by that many
4-byte little-endian payload values (float32 for .fvecs, int32 for .ivecs).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dist import squared_distances
from .errors import DataFormatError

SPLITS = ("train", "val", "test")


@dataclass
class Dataset:
    """Base vectors plus query splits and (optionally) exact ground truth.

    ``gt[split][i]`` is the id of the base row nearest to query ``i`` of that
    split under squared Euclidean distance, ties broken by lowest index.
    """

    dim: int
    base: np.ndarray
    train_q: np.ndarray
    val_q: np.ndarray
    test_q: np.ndarray
    gt: dict[str, np.ndarray] = field(default_factory=dict)
    seed: int | None = None

    def queries(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise KeyError(f"unknown split {split!r}, expected one of {SPLITS}")
        return {"train": self.train_q, "val": self.val_q, "test": self.test_q}[split]

    def check(self) -> None:
        """Raise if matrices disagree on dim or ground truth ids are out of range."""
        n = len(self.base)
        if n < 1:
            raise ValueError("dataset must contain at least one base vector")
        for name, mat in (
            ("base", self.base),
            ("train_q", self.train_q),
            ("val_q", self.val_q),
            ("test_q", self.test_q),
        ):
            if mat.ndim != 2 or mat.shape[1] != self.dim:
                raise ValueError(f"{name} has shape {mat.shape}, expected (*, {self.dim})")
        for split, ids in self.gt.items():
            if len(ids) != len(self.queries(split)):
                raise ValueError(f"gt[{split}] length {len(ids)} != query count")
            if len(ids) and (ids.min() < 0 or ids.max() >= n):
                raise ValueError(f"gt[{split}] contains ids outside [0, {n})")


def _load_vecs(path: str | Path, payload_dtype: str) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) == 0:
        return np.zeros((0, 0), dtype=payload_dtype)
    if len(raw) < 4:
        raise DataFormatError(f"{path}: truncated header at byte offset 0")
    dim = int(np.frombuffer(raw, dtype="<i4", count=1)[0])
    if dim <= 0:
        raise DataFormatError(f"{path}: non-positive dimension {dim} at byte offset 0")
    record = 4 * (dim + 1)
    if len(raw) % record == 0:
        table = np.frombuffer(raw, dtype="<i4").reshape(-1, dim + 1)
        dims = table[:, 0]
        if bool(np.all(dims == dim)):
            payload = np.frombuffer(raw, dtype=payload_dtype).reshape(-1, dim + 1)
            return payload[:, 1:].copy()
        bad = int(np.argmax(dims != dim))
        raise DataFormatError(
            f"{path}: record {bad} at byte offset {bad * record} has dim "
            f"{int(dims[bad])}, expected {dim}"
        )
    # Record sizes do not tile the file: walk records for a precise error.
    offset = 0
    index = 0
    while offset < len(raw):
        if len(raw) - offset < 4:
            raise DataFormatError(f"{path}: truncated header at byte offset {offset}")
        d = int(np.frombuffer(raw, dtype="<i4", count=1, offset=offset)[0])
        if d != dim:
            raise DataFormatError(
                f"{path}: record {index} at byte offset {offset} has dim {d}, expected {dim}"
            )
        if len(raw) - offset - 4 < 4 * d:
            raise DataFormatError(
                f"{path}: truncated record {index} at byte offset {offset} "
                f"({len(raw) - offset - 4} payload bytes, need {4 * d})"
            )
        offset += record
        index += 1
    raise DataFormatError(f"{path}: malformed trailing bytes")  # pragma: no cover


def load_fvecs(path: str | Path) -> np.ndarray:
    """Read an .fvecs file into an (n, dim) float32 matrix, row order preserved."""
    return _load_vecs(path, "<f4")


def load_ivecs(path: str | Path) -> np.ndarray:
    """Read an .ivecs file into an (n, dim) int32 matrix."""
    return _load_vecs(path, "<i4")


def _write_vecs(path: str | Path, matrix: np.ndarray, payload_dtype: str) -> None:
    mat = np.ascontiguousarray(matrix, dtype=payload_dtype)
    if mat.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {mat.shape}")
    n, dim = mat.shape
    out = np.empty((n, dim + 1), dtype="<i4")
    out[:, 0] = dim
    out[:, 1:] = mat.view("<i4")
    Path(path).write_bytes(out.tobytes())


def write_fvecs(path: str | Path, matrix: np.ndarray) -> None:
    """Write a float32 matrix as .fvecs; round-trips through load_fvecs bit-exactly."""
    _write_vecs(path, matrix, "<f4")


def write_ivecs(path: str | Path, matrix: np.ndarray) -> None:
    _write_vecs(path, matrix, "<i4")


def brute_force_gt(base: np.ndarray, queries: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Exact nearest base row per query by exhaustive squared-distance scan.

    Computed in float64; ties resolve to the lowest base index. This defines
    what "found the actual nearest neighbor" means everywhere else.
    """
    base = np.asarray(base)
    queries = np.asarray(queries)
    if base.ndim != 2 or queries.ndim != 2 or base.shape[1] != queries.shape[1]:
        raise ValueError(
            f"dim mismatch: base {base.shape} vs queries {queries.shape}"
        )
    if len(base) == 0:
        raise ValueError("base must be non-empty")
    b = base.astype(np.float64, copy=False)
    ids = np.empty(len(queries), dtype=np.int64)
    for s in range(0, len(queries), chunk):
        q = queries[s : s + chunk].astype(np.float64, copy=False)
        diff = q[:, None, :] - b[None, :, :]
        d2 = np.einsum("qnd,qnd->qn", diff, diff)
        ids[s : s + len(q)] = d2.argmin(axis=1)
    return ids


def medoid(base: np.ndarray) -> int:
    """Index of the base row minimizing the sum of Euclidean distances to all rows.

    Ties break to the lowest index.
    """
    base = np.asarray(base)
    if base.ndim != 2 or len(base) == 0:
        raise ValueError("base must be a non-empty 2-D matrix")
    b = base.astype(np.float64, copy=False)
    n, dim = b.shape
    totals = np.empty(n, dtype=np.float64)
    chunk = max(1, (1 << 22) // max(1, n * dim))
    for s in range(0, n, chunk):
        diff = b[s : s + chunk, None, :] - b[None, :, :]
        totals[s : s + diff.shape[0]] = np.sqrt(
            np.einsum("qnd,qnd->qn", diff, diff)
        ).sum(axis=1)
    return int(np.argmin(totals))


def synth_clusters(
    n_clusters: int,
    per_cluster: int,
    dim: int,
    spread: float,
    seed: int,
    n_train: int = 1000,
    n_val: int = 200,
    n_test: int = 200,
    compute_gt: bool = True,
) -> Dataset:
    """Gaussian blobs around random unit-normal centers, with query splits.

    Base points and queries are drawn from the same mixture. Deterministic
    under ``seed`` (single generator, fixed draw order).
    """
    for name, v in (
        ("n_clusters", n_clusters),
        ("per_cluster", per_cluster),
        ("dim", dim),
        ("n_train", n_train),
        ("n_val", n_val),
        ("n_test", n_test),
    ):
        if v <= 0:
            raise ValueError(f"{name} must be positive, got {v}")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 1.0, size=(n_clusters, dim))
    base = (
        np.repeat(centers, per_cluster, axis=0)
        + spread * rng.normal(0.0, 1.0, size=(n_clusters * per_cluster, dim))
    ).astype(np.float32)

    def draw_queries(count: int) -> np.ndarray:
        which = rng.integers(0, n_clusters, size=count)
        pts = centers[which] + spread * rng.normal(0.0, 1.0, size=(count, dim))
        return pts.astype(np.float32)

    train_q = draw_queries(n_train)
    val_q = draw_queries(n_val)
    test_q = draw_queries(n_test)
    gt: dict[str, np.ndarray] = {}
    if compute_gt:
        gt = {
            "train": brute_force_gt(base, train_q),
            "val": brute_force_gt(base, val_q),
            "test": brute_force_gt(base, test_q),
        }
    return Dataset(
        dim=dim, base=base, train_q=train_q, val_q=val_q, test_q=test_q, gt=gt, seed=seed
    )


def drop_base_duplicates(base: np.ndarray, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Remove query rows that are byte-for-byte equal to some base row.

    Returns (kept queries, bool mask of kept rows). The benchmark learn sets
    can leak test vectors; this is the exact-duplicate flavor of that cleanup.
    """
    seen = {row.tobytes() for row in np.ascontiguousarray(base)}
    mask = np.array(
        [row.tobytes() not in seen for row in np.ascontiguousarray(queries)], dtype=bool
    )
    return queries[mask], mask


MANIFEST_VERSION = 1


def save_dataset(dataset: Dataset, out_dir: str | Path) -> Path:
    """Write fvecs/ivecs files plus a JSON manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_fvecs(out / "base.fvecs", dataset.base)
    paths: dict[str, dict[str, str | int]] = {}
    for split in SPLITS:
        q = dataset.queries(split)
        qname = f"{split}_queries.fvecs"
        write_fvecs(out / qname, q)
        entry: dict[str, str | int] = {"queries": qname, "count": int(len(q))}
        if split in dataset.gt:
            gname = f"{split}_gt.ivecs"
            write_ivecs(out / gname, dataset.gt[split].reshape(-1, 1).astype("<i4"))
            entry["gt"] = gname
        paths[split] = entry
    manifest = {
        "format_version": MANIFEST_VERSION,
        "dim": int(dataset.dim),
        "seed": dataset.seed,
        "base": {"path": "base.fvecs", "count": int(len(dataset.base))},
        "splits": paths,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def load_dataset(manifest_path: str | Path) -> Dataset:
    """Load a dataset previously written by save_dataset."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{manifest_path}: not a valid manifest: {exc}") from exc
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise DataFormatError(
            f"{manifest_path}: unsupported manifest version {manifest.get('format_version')}"
        )
    root = manifest_path.parent
    base = load_fvecs(root / manifest["base"]["path"])
    queries = {}
    gt = {}
    for split in SPLITS:
        entry = manifest["splits"][split]
        queries[split] = load_fvecs(root / entry["queries"])
        if "gt" in entry:
            gt[split] = load_ivecs(root / entry["gt"]).reshape(-1).astype(np.int64)
    ds = Dataset(
        dim=int(manifest["dim"]),
        base=base,
        train_q=queries["train"],
        val_q=queries["val"],
        test_q=queries["test"],
        gt=gt,
        seed=manifest.get("seed"),
    )
    ds.check()
    return ds
