"""Dataset plumbing: manifests, image files, resizing, folds, synthetic data.

Images are linear raw-RGB thumbnails stored either as 16-bit PNG or as a
small headered float32 container (see read_rawf). A manifest CSV names the
images, their camera, the ground-truth illuminant, and an optional mask.
"""

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .exceptions import ImageFormatError, InvalidArgumentError, ManifestError

MANIFEST_COLUMNS = ("image_path", "camera_id", "gt_r", "gt_g", "gt_b", "mask_path")
THUMBNAIL_SIZE = 150
SATURATION_LEVEL = 0.98   # any channel at/above this is treated as clipped
RAWF_MAGIC = b"RAWF"


@dataclass
class RawImage:
    """A linear raw-RGB image flattened to a 3xn pixel matrix.

    mask, when present, is a length-n boolean vector aligned with the pixel
    columns; True marks pixels excluded from all statistics (calibration
    charts, clipped highlights).
    """

    pixels: np.ndarray
    width: int
    height: int
    camera_id: str
    gt_illuminant: np.ndarray | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or self.pixels.shape[0] != 3:
            raise InvalidArgumentError(
                f"pixels must be (3, n), got {self.pixels.shape}"
            )
        if self.pixels.shape[1] != self.width * self.height:
            raise InvalidArgumentError(
                f"pixel count {self.pixels.shape[1]} != {self.width}x{self.height}"
            )
        if self.gt_illuminant is not None:
            gt = np.asarray(self.gt_illuminant, dtype=np.float64)
            if gt.shape != (3,) or not np.all(np.isfinite(gt)) or np.any(gt <= 0):
                raise InvalidArgumentError(
                    f"ground-truth illuminant must be 3 positive finite values, got {gt}"
                )
            self.gt_illuminant = gt / np.linalg.norm(gt)
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=bool).reshape(-1)
            if m.shape[0] != self.pixels.shape[1]:
                raise InvalidArgumentError(
                    f"mask length {m.shape[0]} != pixel count {self.pixels.shape[1]}"
                )
            self.mask = m

    def unmasked_pixels(self) -> np.ndarray:
        if self.mask is None:
            return self.pixels
        return self.pixels[:, ~self.mask]

    def plane(self, channel: int) -> np.ndarray:
        """One channel as a (height, width) array."""
        return self.pixels[channel].reshape(self.height, self.width)


@dataclass
class ManifestEntry:
    image_path: str
    camera_id: str
    gt_illuminant: np.ndarray
    mask_path: str | None = None


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    root: Path = Path(".")

    def camera_ids(self) -> list:
        return sorted({e.camera_id for e in self.entries})

    def __len__(self):
        return len(self.entries)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    root = path.parent
    entries = []
    seen = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty file, expected header "
                                f"{','.join(MANIFEST_COLUMNS)}") from None
        if tuple(h.strip() for h in header) != MANIFEST_COLUMNS:
            raise ManifestError(
                f"{path}: bad header {header!r}, expected {','.join(MANIFEST_COLUMNS)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise ManifestError(
                    f"{path}:{lineno}: expected {len(MANIFEST_COLUMNS)} fields, got {len(row)}"
                )
            image_path, camera_id, *gt_fields, mask_path = (v.strip() for v in row)
            if not camera_id:
                raise ManifestError(f"{path}:{lineno}: empty camera_id")
            if image_path in seen:
                raise ManifestError(
                    f"{path}:{lineno}: duplicate image_path {image_path!r} "
                    f"(first seen on line {seen[image_path]})"
                )
            seen[image_path] = lineno
            try:
                gt = np.array([float(v) for v in gt_fields])
            except ValueError:
                raise ManifestError(
                    f"{path}:{lineno}: non-numeric ground truth {gt_fields!r}"
                ) from None
            if not np.all(np.isfinite(gt)) or np.any(gt <= 0):
                raise ManifestError(
                    f"{path}:{lineno}: ground truth must be positive and finite, got {gt}"
                )
            gt /= np.linalg.norm(gt)
            if not (root / image_path).is_file():
                raise ManifestError(f"{path}:{lineno}: image not found: {root / image_path}")
            if mask_path and not (root / mask_path).is_file():
                raise ManifestError(f"{path}:{lineno}: mask not found: {root / mask_path}")
            entries.append(ManifestEntry(image_path, camera_id, gt, mask_path or None))
    return DatasetManifest(entries, root)


def save_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_COLUMNS)
        for e in manifest.entries:
            gt = e.gt_illuminant
            writer.writerow([e.image_path, e.camera_id,
                             repr(float(gt[0])), repr(float(gt[1])), repr(float(gt[2])),
                             e.mask_path or ""])


# ---------------------------------------------------------------- image files

def write_rawf(path, image: np.ndarray) -> None:
    """Write an (h, w, 3) float array as a RAWF file (float32, little-endian)."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidArgumentError(f"expected (h, w, 3) image, got {image.shape}")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(RAWF_MAGIC)
        f.write(struct.pack("<II", w, h))
        f.write(image.astype("<f4").tobytes(order="C"))


def read_rawf(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(12)
        if len(head) < 12 or head[:4] != RAWF_MAGIC:
            raise ImageFormatError(f"{path}: not a RAWF file")
        w, h = struct.unpack("<II", head[4:12])
        payload = f.read()
    expected = w * h * 3 * 4
    if len(payload) != expected:
        raise ImageFormatError(
            f"{path}: truncated payload ({len(payload)} bytes, expected {expected})"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, 3)
    return data.astype(np.float64)


def read_png16(path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageFormatError(f"{path}: unreadable image file")
    if raw.dtype != np.uint16:
        raise ImageFormatError(f"{path}: expected 16-bit PNG, got dtype {raw.dtype}")
    if raw.ndim != 3 or raw.shape[2] != 3:
        raise ImageFormatError(f"{path}: expected 3 channels, got shape {raw.shape}")
    rgb = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    return rgb.astype(np.float64) / 65535.0


def write_png16(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.float64)
    codes = np.clip(np.rint(image * 65535.0), 0, 65535).astype(np.uint16)
    if not cv2.imwrite(str(path), cv2.cvtColor(codes, cv2.COLOR_RGB2BGR)):
        raise ImageFormatError(f"{path}: PNG write failed")


def read_mask_png(path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if raw is None:
        raise ImageFormatError(f"{path}: unreadable mask file")
    return raw != 0


def _box_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) row-stochastic matrix for exact area-average resampling.

    Output cell j covers the input interval [j*r, (j+1)*r), r = n_in/n_out;
    each input cell contributes its overlap fraction.
    """
    r = n_in / n_out
    w = np.zeros((n_out, n_in))
    for j in range(n_out):
        lo, hi = j * r, (j + 1) * r
        i0, i1 = int(np.floor(lo)), int(np.ceil(hi))
        for i in range(i0, min(i1, n_in)):
            w[j, i] = min(hi, i + 1) - max(lo, i)
    return w / r


def area_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Box-filter resample of an (h, w) or (h, w, c) array on linear values."""
    if out_h < 1 or out_w < 1:
        raise InvalidArgumentError(f"bad output size {out_h}x{out_w}")
    wr = _box_weights(image.shape[0], out_h)
    wc = _box_weights(image.shape[1], out_w)
    if image.ndim == 2:
        return wr @ image @ wc.T
    return np.einsum("oi,iwc,pw->opc", wr, image, wc, optimize=True)


def resize_mask(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """OR-pooling: an output cell is masked if any covered input cell is."""
    coverage = area_resize(mask.astype(np.float64), out_h, out_w)
    return coverage > 1e-12


def load_image_file(image_path, mask_path=None, target_size: int = THUMBNAIL_SIZE,
                    camera_id: str = "unknown", gt_illuminant=None) -> RawImage:
    """Load, validate, saturation-mask, and (if larger) box-resize one file."""
    path = Path(image_path)
    if path.suffix.lower() == ".rawf":
        image = read_rawf(path)
    else:
        image = read_png16(path)
    if not np.all(np.isfinite(image)):
        raise ImageFormatError(f"{path}: non-finite pixel values")
    if image.min() < -1e-6 or image.max() > 1.0 + 1e-6:
        raise ImageFormatError(
            f"{path}: values outside [0,1] (min {image.min()}, max {image.max()})"
        )
    image = np.clip(image, 0.0, 1.0)

    mask = np.any(image >= SATURATION_LEVEL, axis=2)
    if mask_path is not None:
        file_mask = read_mask_png(mask_path)
        if file_mask.shape != image.shape[:2]:
            raise ImageFormatError(
                f"{mask_path}: mask shape {file_mask.shape} != image {image.shape[:2]}"
            )
        mask |= file_mask

    h, w = image.shape[:2]
    if h > target_size or w > target_size:
        image = area_resize(image, target_size, target_size)
        mask = resize_mask(mask, target_size, target_size)
        h = w = target_size

    return RawImage(
        pixels=image.reshape(h * w, 3).T,
        width=w,
        height=h,
        camera_id=camera_id,
        gt_illuminant=gt_illuminant,
        mask=mask.reshape(-1) if mask.any() else None,
    )


def load_image(entry: ManifestEntry, root, target_size: int = THUMBNAIL_SIZE) -> RawImage:
    """load_image_file for a manifest entry, paths resolved against root."""
    return load_image_file(
        Path(root) / entry.image_path,
        None if entry.mask_path is None else Path(root) / entry.mask_path,
        target_size=target_size,
        camera_id=entry.camera_id,
        gt_illuminant=entry.gt_illuminant.copy(),
    )


# --------------------------------------------------------------------- folds

@dataclass
class FoldPlan:
    test_camera: str
    train_ids: list
    test_ids: list


def make_folds(manifest: DatasetManifest) -> list:
    """One leave-one-camera-out fold per distinct camera, sorted by camera."""
    cameras = manifest.camera_ids()
    if len(cameras) < 2:
        raise InvalidArgumentError(
            f"leave-one-camera-out needs >=2 cameras, manifest has {cameras}"
        )
    folds = []
    for cam in cameras:
        test = [i for i, e in enumerate(manifest.entries) if e.camera_id == cam]
        train = [i for i, e in enumerate(manifest.entries) if e.camera_id != cam]
        folds.append(FoldPlan(cam, train, test))
    return folds


def split_by_cameras(manifest: DatasetManifest, test_cameras) -> FoldPlan:
    """Explicit split: listed cameras are the test side, the rest train."""
    test_set = set(test_cameras)
    known = set(manifest.camera_ids())
    unknown = sorted(test_set - known)
    if unknown:
        raise InvalidArgumentError(f"unknown cameras {unknown}; manifest has {sorted(known)}")
    if not test_set or test_set == known:
        raise InvalidArgumentError("camera split must leave both sides non-empty")
    test = [i for i, e in enumerate(manifest.entries) if e.camera_id in test_set]
    train = [i for i, e in enumerate(manifest.entries) if e.camera_id not in test_set]
    return FoldPlan(",".join(sorted(test_set)), train, test)


def scene_key(image_path: str) -> str:
    """Grouping key so shots of one scene never straddle a train/val split.

    The first '_'-separated token of the file stem; multi-camera sets that
    share scenes name files '<scene>_<camera>.<ext>'.
    """
    return Path(image_path).stem.split("_")[0]


# ------------------------------------------------------------ synthetic data

def _sample_illuminant(rng) -> np.ndarray:
    # chromaticity (r, b) box with g as the remainder; reject dim channels
    while True:
        r, b = rng.uniform(0.2, 0.45, size=2)
        g = 1.0 - r - b
        if min(r, g, b) >= 0.15:
            return np.array([r, g, b])


def _sample_sensor(rng, max_cond: float = 5.0) -> np.ndarray:
    # row-stochastic positive matrix: output channels are convex combinations
    # of input channels, so transformed images stay inside [0, 1]
    while True:
        a = 0.55 * np.eye(3) + 0.45 * rng.uniform(0.0, 1.0, size=(3, 3))
        a /= a.sum(axis=1, keepdims=True)
        if np.linalg.cond(a) <= max_cond and np.all(a > 0):
            return a


def _paint_scene(rng, size: int) -> np.ndarray:
    """Piecewise-constant reflectance: a base color plus random rectangles."""
    scene = np.empty((size, size, 3))
    scene[:] = rng.uniform(0.05, 0.95, size=3)
    n_patches = int(rng.integers(8, 65))
    for _ in range(n_patches - 1):
        ph = int(rng.integers(1, max(2, size // 2)))
        pw = int(rng.integers(1, max(2, size // 2)))
        y = int(rng.integers(0, size - ph + 1))
        x = int(rng.integers(0, size - pw + 1))
        scene[y:y + ph, x:x + pw] = rng.uniform(0.05, 0.95, size=3)
    return scene


def synth_generate(out_dir, n_scenes: int, n_sensors: int, seed: int,
                   size: int = 64, first_sensor_identity: bool = False) -> DatasetManifest:
    """Generate a multi-sensor dataset: shared scenes, one linear 3x3 sensor
    transform per camera applied to both image and illuminant.

    Writes RAWF images, manifest.csv, and sensors.json (the transforms plus
    the canonical per-scene illuminants, for self-consistency checks).
    """
    if n_scenes < 1 or n_sensors < 1:
        raise InvalidArgumentError(
            f"need n_scenes >= 1 and n_sensors >= 1, got {n_scenes}, {n_sensors}"
        )
    if size < 2:
        raise InvalidArgumentError(f"image size must be >= 2, got {size}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    ss = np.random.SeedSequence(seed)
    scene_rng, sensor_rng = (np.random.default_rng(s) for s in ss.spawn(2))

    sensors = [_sample_sensor(sensor_rng) for _ in range(n_sensors)]
    if first_sensor_identity:
        sensors[0] = np.eye(3)

    entries = []
    illuminants = []
    for s in range(n_scenes):
        reflectance = _paint_scene(scene_rng, size)
        ell = _sample_illuminant(scene_rng)
        illuminants.append(ell)
        canonical = reflectance * ell          # diagonal illuminant model
        flat = canonical.reshape(-1, 3)
        for k, a in enumerate(sensors):
            name = f"s{s:05d}_synth_{k}.rawf"
            write_rawf(out_dir / name, (flat @ a.T).reshape(size, size, 3))
            gt = a @ ell
            entries.append(ManifestEntry(name, f"synth_{k}", gt / np.linalg.norm(gt)))

    manifest = DatasetManifest(entries, out_dir)
    save_manifest(manifest, out_dir / "manifest.csv")
    with open(out_dir / "sensors.json", "w", encoding="utf-8") as f:
        json.dump({
            "seed": seed,
            "size": size,
            "sensors": [a.tolist() for a in sensors],
            "canonical_illuminants": [l.tolist() for l in illuminants],
        }, f, indent=1)
    return manifest
