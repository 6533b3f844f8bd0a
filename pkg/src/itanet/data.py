"""Feature files, dataset manifests and the synthetic twin-class generator.

FVF1 layout (little-endian)::

    offset  size  field
    0       4     magic b"FVF1"
    4       2     u16 format version (1)
    6       1     u8 scalar width in bytes (4 = float32, 8 = float64)
    7       1     u8 reserved (0)
    8       16    u32 n_t, H_f, W_f, n_c
    24      ...   payload, row-major (t, h, w, c)

The manifest is JSON; see README for the schema.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"FVF1"
VERSION = 1
_HEADER = struct.Struct("<4sHBB4I")
MAX_PAYLOAD_BYTES = 1 << 36
MANIFEST_FORMAT = "itanet-manifest"
MANIFEST_VERSION = 1


class FeatureFileError(ValueError):
    """Malformed feature file. ``code`` names the failure kind."""

    def __init__(self, code: str, message: str, offset: int | None = None):
        super().__init__(message)
        self.code = code
        self.offset = offset


class ManifestError(ValueError):
    pass


_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def encode_features(F: np.ndarray) -> bytes:
    F = np.asarray(F)
    if F.ndim != 4 or min(F.shape) < 1:
        raise FeatureFileError("bad_dimension", f"feature map must be (n_t, H_f, W_f, n_c), got {F.shape}")
    width = F.dtype.itemsize if F.dtype.kind == "f" else 0
    if width not in _DTYPES:
        raise FeatureFileError("bad_precision", f"unsupported dtype {F.dtype}")
    header = _HEADER.pack(MAGIC, VERSION, width, 0, *F.shape)
    return header + np.ascontiguousarray(F, dtype=_DTYPES[width]).tobytes()


def decode_features(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FeatureFileError("truncated", f"header needs {_HEADER.size} bytes, file ends at byte {len(buf)}", len(buf))
    magic, version, width, _, n_t, h, w, c = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FeatureFileError("bad_magic", f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FeatureFileError("bad_version", f"unsupported version {version}", 4)
    if width not in _DTYPES:
        raise FeatureFileError("bad_precision", f"unsupported scalar width {width}", 6)
    if min(n_t, h, w, c) < 1:
        raise FeatureFileError("bad_dimension", f"non-positive dimension in {(n_t, h, w, c)}", 8)
    nbytes = n_t * h * w * c * width
    if nbytes > MAX_PAYLOAD_BYTES:
        raise FeatureFileError("dimension_overflow", f"declared payload of {nbytes} bytes exceeds limit", 8)
    end = _HEADER.size + nbytes
    if len(buf) < end:
        raise FeatureFileError(
            "truncated", f"payload needs {nbytes} bytes, data ends at byte offset {len(buf)} of {end}", len(buf)
        )
    if len(buf) > end:
        raise FeatureFileError("trailing_bytes", f"{len(buf) - end} unexpected bytes after payload", end)
    arr = np.frombuffer(buf, dtype=_DTYPES[width], count=n_t * h * w * c, offset=_HEADER.size)
    return arr.reshape(n_t, h, w, c).astype(_DTYPES[width].newbyteorder("="))


def write_feature_file(path, F: np.ndarray) -> None:
    Path(path).write_bytes(encode_features(F))


def read_feature_file(path) -> np.ndarray:
    return decode_features(Path(path).read_bytes())


def read_feature_header(path) -> tuple[int, tuple[int, int, int, int]]:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise FeatureFileError("truncated", f"{path}: header ends at byte {len(head)}", len(head))
    magic, version, width, _, *dims = _HEADER.unpack(head)
    if magic != MAGIC:
        raise FeatureFileError("bad_magic", f"{path}: bad magic {magic!r}", 0)
    if version != VERSION:
        raise FeatureFileError("bad_version", f"{path}: unsupported version {version}", 4)
    return width, tuple(dims)


# ------------------------------------------------------------------ manifest

@dataclass
class ClassInfo:
    id: int
    name: str
    twin: int | None = None


@dataclass
class VideoInfo:
    id: int
    cls: int
    path: str | None = None
    seed: int | None = None


@dataclass
class DatasetManifest:
    dims: tuple[int, int, int, int]
    classes: list[ClassInfo]
    videos: list[VideoInfo]
    precision: str = "f32"
    synthetic: dict | None = None
    root: Path | None = field(default=None, compare=False)

    def videos_by_class(self, video_ids=None) -> dict[int, list[int]]:
        allowed = None if video_ids is None else set(video_ids)
        out: dict[int, list[int]] = {c.id: [] for c in self.classes}
        for v in self.videos:
            if allowed is None or v.id in allowed:
                out[v.cls].append(v.id)
        return {c: sorted(ids) for c, ids in out.items()}

    def class_ids(self) -> list[int]:
        return sorted(c.id for c in self.classes)

    def label_of(self) -> dict[int, int]:
        return {v.id: v.cls for v in self.videos}

    def validate(self) -> None:
        class_ids = [c.id for c in self.classes]
        if len(set(class_ids)) != len(class_ids):
            raise ManifestError("duplicate class id")
        video_ids = [v.id for v in self.videos]
        if len(set(video_ids)) != len(video_ids):
            dup = next(i for i in video_ids if video_ids.count(i) > 1)
            raise ManifestError(f"duplicate video id {dup}")
        known = set(class_ids)
        by_id = {c.id: c for c in self.classes}
        for c in self.classes:
            if c.twin is not None:
                if c.twin not in known:
                    raise ManifestError(f"class {c.id} names missing twin {c.twin}")
                if by_id[c.twin].twin != c.id:
                    raise ManifestError(f"twin reference {c.id} -> {c.twin} is not symmetric")
        for v in self.videos:
            if v.cls not in known:
                raise ManifestError(f"video {v.id} references unknown class {v.cls}")
            if (v.path is None) == (v.seed is None):
                raise ManifestError(f"video {v.id} needs exactly one of path or seed")

    def to_json(self) -> dict:
        n_t, h, w, c = self.dims
        out = {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "dims": {"n_t": n_t, "H_f": h, "W_f": w, "n_c": c},
            "precision": self.precision,
            "classes": [{"id": k.id, "name": k.name, "twin": k.twin} for k in self.classes],
            "videos": [
                {"id": v.id, "class": v.cls, **({"path": v.path} if v.path is not None else {"seed": v.seed})}
                for v in self.videos
            ],
        }
        if self.synthetic is not None:
            out["synthetic"] = self.synthetic
        return out

    @classmethod
    def from_json(cls, obj: dict, root=None) -> "DatasetManifest":
        if obj.get("format") != MANIFEST_FORMAT or obj.get("version") != MANIFEST_VERSION:
            raise ManifestError("not an itanet manifest (format/version mismatch)")
        try:
            d = obj["dims"]
            dims = (int(d["n_t"]), int(d["H_f"]), int(d["W_f"]), int(d["n_c"]))
            classes = [ClassInfo(int(c["id"]), str(c["name"]), c.get("twin")) for c in obj["classes"]]
            videos = [VideoInfo(int(v["id"]), int(v["class"]), v.get("path"), v.get("seed")) for v in obj["videos"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"malformed manifest: {exc}") from exc
        m = cls(dims, classes, videos, obj.get("precision", "f32"), obj.get("synthetic"),
                Path(root) if root is not None else None)
        m.validate()
        return m


def save_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(json.dumps(manifest.to_json(), indent=1, sort_keys=True) + "\n")


def load_manifest(path) -> DatasetManifest:
    """Parse and validate a manifest, checking every referenced feature file."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest {path} does not exist")
    manifest = DatasetManifest.from_json(json.loads(path.read_text()), root=path.parent)
    width_expected = {"f32": 4, "f64": 8}[manifest.precision]
    for v in manifest.videos:
        if v.path is None:
            if manifest.synthetic is None:
                raise ManifestError(f"video {v.id} has a seed but the manifest has no synthetic spec")
            continue
        fpath = manifest.root / v.path
        if not fpath.is_file():
            raise ManifestError(f"feature file {fpath} for video {v.id} is missing")
        width, dims = read_feature_header(fpath)
        if dims != manifest.dims or width != width_expected:
            raise ManifestError(f"{fpath}: header dims {dims} do not match manifest {manifest.dims}")
    return manifest


# ------------------------------------------------------------------ synthetic

@dataclass
class SyntheticSpec:
    """Twin-class data: each class pair shares motifs in opposite temporal order."""

    num_class_pairs: int = 4
    motifs_per_class: int = 4
    n_t: int = 8
    H_f: int = 3
    W_f: int = 3
    n_c: int = 64
    noise: float = 0.05
    temporal_jitter: bool = True
    spatial_jitter: bool = True
    samples_per_class: int = 40
    seed: int = 0

    def validate(self) -> None:
        if self.num_class_pairs < 1 or self.samples_per_class < 1:
            raise ValueError("need at least one class pair and one sample per class")
        if self.motifs_per_class > self.n_t:
            raise ValueError(f"L={self.motifs_per_class} motifs do not fit into n_t={self.n_t} frames")
        if self.motifs_per_class > self.n_c:
            raise ValueError("motifs must be mutually orthogonal, so L <= n_c")
        if min(self.n_t, self.H_f, self.W_f, self.n_c) < 1 or self.noise < 0:
            raise ValueError("dimensions must be positive and noise non-negative")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (self.n_t, self.H_f, self.W_f, self.n_c)


def pair_motifs(spec: SyntheticSpec, pair: int) -> np.ndarray:
    """Orthonormal motif vectors for one class pair, shape ``(L, n_c)``."""
    rng = np.random.default_rng([spec.seed, 0x6D6F74, pair])
    q, r = np.linalg.qr(rng.standard_normal((spec.n_c, spec.motifs_per_class)))
    q = q * np.sign(np.diag(r))
    return q.T.copy()


def _frame_motifs(spec: SyntheticSpec, rng: np.random.Generator) -> list[int | None]:
    """Motif index carried by each frame (None = background only)."""
    n_t, L = spec.n_t, spec.motifs_per_class
    if not spec.temporal_jitter:
        slots: list[int | None] = [None] * n_t
        for k in range(1, L + 1):
            slots[math.ceil(k * n_t / L) - 1] = k - 1
        return slots
    cuts = np.sort(rng.choice(np.arange(1, n_t), size=L - 1, replace=False)) if L > 1 else np.array([], int)
    bounds = [0, *cuts.tolist(), n_t]
    out: list[int | None] = []
    for k in range(L):
        out.extend([k] * (bounds[k + 1] - bounds[k]))
    return out


def synthesize_video(spec: SyntheticSpec, cls: int, video_seed: int, dtype=np.float32) -> np.ndarray:
    pair, reverse = divmod(cls, 2)
    motifs = pair_motifs(spec, pair)
    if reverse:
        motifs = motifs[::-1]
    rng = np.random.default_rng([spec.seed, video_seed])
    n_t, h, w, c = spec.dims
    F = np.zeros(spec.dims)
    if spec.noise > 0:
        F += spec.noise * rng.standard_normal(spec.dims)
    for t, k in enumerate(_frame_motifs(spec, rng)):
        if k is None:
            continue
        if spec.spatial_jitter:
            i, j = int(rng.integers(h)), int(rng.integers(w))
        else:
            i, j = 0, 0
        F[t, i, j] += motifs[k]
    return F.astype(dtype)


def generate_synthetic(spec: SyntheticSpec, out_dir=None, precision: str = "f32"):
    """Build the manifest, and when ``out_dir`` is given write FVF1 files too.

    Returns ``(manifest, features)`` where ``features`` maps video id to array.
    """
    spec.validate()
    dtype = np.float32 if precision == "f32" else np.float64
    classes = []
    for p in range(spec.num_class_pairs):
        classes.append(ClassInfo(2 * p, f"pair{p}-forward", 2 * p + 1))
        classes.append(ClassInfo(2 * p + 1, f"pair{p}-reversed", 2 * p))
    videos, features = [], {}
    root = Path(out_dir) if out_dir is not None else None
    if root is not None:
        (root / "features").mkdir(parents=True, exist_ok=True)
    for cls in range(2 * spec.num_class_pairs):
        for i in range(spec.samples_per_class):
            vid = cls * spec.samples_per_class + i
            F = synthesize_video(spec, cls, vid, dtype)
            features[vid] = F
            if root is not None:
                rel = f"features/{vid:06d}.fvf"
                write_feature_file(root / rel, F)
                videos.append(VideoInfo(vid, cls, path=rel))
            else:
                videos.append(VideoInfo(vid, cls, seed=vid))
    manifest = DatasetManifest(spec.dims, classes, videos, precision, asdict(spec), root)
    if root is not None:
        save_manifest(manifest, root / "manifest.json")
    return manifest, features


class FeatureStore:
    """Video id -> feature map, backed by files or regenerated synthetic data."""

    def __init__(self, manifest: DatasetManifest, features: dict | None = None, dtype=np.float32):
        self.manifest = manifest
        self.dtype = dtype
        self._cache: dict[int, np.ndarray] = dict(features or {})
        self._videos = {v.id: v for v in manifest.videos}
        self._spec = SyntheticSpec(**manifest.synthetic) if manifest.synthetic else None

    def get(self, video_id: int) -> np.ndarray:
        F = self._cache.get(video_id)
        if F is None:
            v = self._videos[video_id]
            if v.path is not None:
                F = read_feature_file(self.manifest.root / v.path)
            else:
                F = synthesize_video(self._spec, v.cls, v.seed)
            self._cache[video_id] = F
        return F.astype(self.dtype, copy=False)

    def batch(self, video_ids) -> np.ndarray:
        return np.stack([self.get(v) for v in video_ids])
