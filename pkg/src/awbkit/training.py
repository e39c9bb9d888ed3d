"""End-to-end training of the mapping and estimation networks.

The loop is deliberately plain: per-epoch reshuffle, mini-batch joint
forward/backward, Adam, a step-decay learning-rate schedule, and a
best-on-validation parameter snapshot. All randomness (validation split,
shuffling) comes from streams spawned off one seed, so a run is a pure
function of (seed, config, data).
"""

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .dataio import scene_key
from .exceptions import (
    CheckpointCorruptError,
    CheckpointFormatError,
    CheckpointVersionError,
    InvalidArgumentError,
    NumericDomainError,
    SingularMatrixError,
    TrainingAbort,
)
from .histogram import HistogramConfig
from .metrics import angular_loss, recovery_angular_error
from .networks import IlluminantEstimator, ModelConfig, forward
from .optim import adam_step

CHECKPOINT_MAGIC = b"SIIE"
CHECKPOINT_VERSION = 1

TRAIN_LOG_COLUMNS = ("epoch", "step", "lr", "train_loss_deg", "val_mean_deg",
                     "singular_events")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-5
    beta1: float = 0.85
    beta2: float = 0.99
    batch_size: int = 8
    lr_decay_every_epochs: int = 5
    lr_decay_factor: float = 0.5
    max_epochs: int = 60
    seed: int = 0
    validation_fraction: float = 0.1

    def __post_init__(self):
        if not (self.lr >= 0 and math.isfinite(self.lr)):
            raise InvalidArgumentError(f"lr must be finite and >= 0, got {self.lr}")
        if not (0 < self.lr_decay_factor <= 1):
            raise InvalidArgumentError(
                f"lr_decay_factor must be in (0, 1], got {self.lr_decay_factor}"
            )
        if self.batch_size < 1 or self.max_epochs < 1 or self.lr_decay_every_epochs < 1:
            raise InvalidArgumentError("batch_size, max_epochs, decay cadence must be >= 1")
        if not (0 <= self.validation_fraction < 1):
            raise InvalidArgumentError(
                f"validation_fraction must be in [0, 1), got {self.validation_fraction}"
            )
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidArgumentError("betas must lie in [0, 1)")

    def lr_at_epoch(self, epoch: int) -> float:
        return self.lr * self.lr_decay_factor ** (epoch // self.lr_decay_every_epochs)


def split_validation(keys_and_cameras, fraction: float, rng) -> tuple:
    """Split indices into (train, val) by scene group, stratified by camera.

    keys_and_cameras: list of (scene_key, camera_id). A whole scene group
    moves to validation only while every camera it touches is still short
    of its per-camera quota, so shots of one scene never straddle the split.
    """
    n = len(keys_and_cameras)
    if fraction == 0 or n < 2:
        return list(range(n)), []
    groups = {}
    for i, (key, _) in enumerate(keys_and_cameras):
        groups.setdefault(key, []).append(i)
    camera_counts = {}
    for _, cam in keys_and_cameras:
        camera_counts[cam] = camera_counts.get(cam, 0) + 1
    quota = {cam: int(round(fraction * c)) for cam, c in camera_counts.items()}
    taken = {cam: 0 for cam in camera_counts}

    order = sorted(groups)
    rng.shuffle(order)
    val = []
    for key in order:
        members = groups[key]
        cams = [keys_and_cameras[i][1] for i in members]
        if all(taken[c] < quota[c] for c in cams):
            val.extend(members)
            for c in cams:
                taken[c] += 1
    val_set = set(val)
    train = [i for i in range(n) if i not in val_set]
    if not train:  # degenerate quota; keep everything trainable
        return list(range(n)), []
    return train, sorted(val_set)


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    lr: float = 0.0
    best_val: float | None = None
    singular_events_total: int = 0


@dataclass
class LogRow:
    epoch: int
    step: int
    lr: float
    train_loss_deg: float
    val_mean_deg: float
    singular_events: int


class Trainer:
    """Drives training of one IlluminantEstimator over in-memory images.

    images: list of RawImage with ground truth. scene_keys (parallel list,
    e.g. derived from file names) group shots of one scene so the validation
    split never separates them; omitted, every image is its own group. The
    split is carved out before the first epoch, stratified per camera.
    run(epochs=k) advances k epochs and may be called repeatedly; finish()
    installs the best-validation snapshot into the model.
    """

    def __init__(self, images, cfg: TrainConfig, model: IlluminantEstimator,
                 scene_keys=None, train_ids=None, val_ids=None):
        if not images:
            raise InvalidArgumentError("empty training set")
        for im in images:
            if im.gt_illuminant is None:
                raise InvalidArgumentError("training images need ground truth")
        self.images = list(images)
        self.cfg = cfg
        self.model = model
        self.params = model.parameters()
        self.state = TrainState(lr=cfg.lr)
        self.log: list = []

        ss = np.random.SeedSequence(cfg.seed)
        split_seq, shuffle_seq = ss.spawn(2)
        if train_ids is None:
            if scene_keys is None:
                scene_keys = [str(i) for i in range(len(self.images))]
            if len(scene_keys) != len(self.images):
                raise InvalidArgumentError("scene_keys length != image count")
            keys = [(k, im.camera_id) for k, im in zip(scene_keys, self.images)]
            train_ids, val_ids = split_validation(
                keys, cfg.validation_fraction, np.random.default_rng(split_seq)
            )
        self.train_ids = list(train_ids)
        self.val_ids = list(val_ids or [])
        if not self.train_ids:
            raise InvalidArgumentError("validation split left no training images")
        self.shuffle_rng = np.random.default_rng(shuffle_seq)
        self._pixels = {}
        self._best_params = None

    def _pixel_matrix(self, i: int):
        if i not in self._pixels:
            im = self.images[i]
            px = im.unmasked_pixels() if im.mask is not None else im.pixels
            if px.shape[1] == 0:
                raise InvalidArgumentError(f"training image {i} is fully masked")
            self._pixels[i] = px.astype(self.model.dtype)
        return self._pixels[i]

    def _param_norm(self) -> float:
        return math.sqrt(sum(float((p.tensor.data.astype(np.float64) ** 2).sum())
                             for p in self.params))

    def _epoch(self) -> LogRow:
        cfg, st = self.cfg, self.state
        st.lr = cfg.lr_at_epoch(st.epoch)
        order = np.array(self.train_ids)
        self.shuffle_rng.shuffle(order)

        loss_sum, n_seen, singular = 0.0, 0, 0
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            try:
                results = self.model.forward_batch(
                    [self._pixel_matrix(i) for i in batch])
                losses = [angular_loss(self.images[i].gt_illuminant, r.raw)
                          for i, r in zip(batch, results)]
                loss = ad.tmean(ad.stack(losses))
            except SingularMatrixError:
                # a mapping stayed singular through every jitter retry; skip
                # the batch rather than kill the run, and log the event
                singular += 1
                continue
            except NumericDomainError as exc:
                raise TrainingAbort(
                    f"non-finite forward pass at epoch {st.epoch} step {st.step} "
                    f"(batch ids {batch.tolist()}, parameter norm "
                    f"{self._param_norm():.6g}): {exc}"
                ) from None
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingAbort(
                    f"non-finite loss {value} at epoch {st.epoch} step {st.step} "
                    f"(batch ids {batch.tolist()}, parameter norm "
                    f"{self._param_norm():.6g})"
                )
            loss.backward()
            adam_step(self.params, st.lr, cfg.beta1, cfg.beta2)
            singular += sum(r.jittered for r in results)
            loss_sum += value * len(batch)
            n_seen += len(batch)
            st.step += 1

        st.singular_events_total += singular
        if n_seen == 0:
            raise TrainingAbort(
                f"epoch {st.epoch}: every batch skipped as singular; "
                f"the mapping network has collapsed"
            )
        train_deg = math.degrees(loss_sum / n_seen)
        val_deg = self._validate()
        if self.val_ids and (st.best_val is None or val_deg < st.best_val):
            st.best_val = val_deg
            self._best_params = [p.tensor.data.copy() for p in self.params]
        row = LogRow(st.epoch, st.step, st.lr, train_deg, val_deg, singular)
        self.log.append(row)
        st.epoch += 1
        return row

    def _validate(self) -> float:
        if not self.val_ids:
            return float("nan")
        errors = []
        with ad.no_grad():
            for i in self.val_ids:
                res = forward(self.images[i], self.model)
                errors.append(recovery_angular_error(
                    self.images[i].gt_illuminant, res.illuminant))
        return float(np.mean(errors))

    def run(self, epochs: int = None) -> TrainState:
        target = self.cfg.max_epochs if epochs is None else self.state.epoch + epochs
        while self.state.epoch < target:
            self._epoch()
        return self.state

    def finish(self) -> IlluminantEstimator:
        """Install the best-validation parameters (if any) and return the model."""
        if self._best_params is not None:
            for p, best in zip(self.params, self._best_params):
                p.tensor.data[...] = best
        return self.model

    def train_mean_error_deg(self) -> float:
        """Current mean recovery error over the training subset, in degrees."""
        errors = []
        with ad.no_grad():
            for i in self.train_ids:
                res = forward(self.images[i], self.model)
                errors.append(recovery_angular_error(
                    self.images[i].gt_illuminant, res.illuminant))
        return float(np.mean(errors))


def write_train_log(log, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(TRAIN_LOG_COLUMNS) + "\n")
        for r in log:
            f.write(f"{r.epoch},{r.step},{r.lr!r},{r.train_loss_deg!r},"
                    f"{r.val_mean_deg!r},{r.singular_events}\n")


# --------------------------------------------------------------- checkpoints

def _config_to_json(model: IlluminantEstimator) -> dict:
    cfg = asdict(model.config)
    return cfg


def _config_from_json(d: dict) -> ModelConfig:
    d = dict(d)
    hist = HistogramConfig(**d.pop("hist"))
    for k in ("channels", "kernels", "strides", "pads"):
        d[k] = tuple(d[k])
    return ModelConfig(hist=hist, **d)


def save_checkpoint(model: IlluminantEstimator, path, train_config: TrainConfig = None,
                    trainer: Trainer = None) -> None:
    """Binary model snapshot: magic, u16 version, u32 header length, JSON
    header, then little-endian float32 parameter and Adam moment buffers.

    With a trainer attached the header also carries the loop state (epoch,
    step, shuffle RNG, best snapshot) needed to resume mid-run.
    """
    params = model.parameters()
    header = {
        "model": {
            "seed": model.seed,
            "dtype": np.dtype(model.dtype).name,
            "config": _config_to_json(model),
        },
        "params": [{"name": p.name, "shape": list(p.tensor.shape)} for p in params],
        "optimizer": {"steps": {p.name: p.step for p in params}},
        "train": None,
    }
    if train_config is not None or trainer is not None:
        cfg = train_config or (trainer.cfg if trainer else None)
        header["train"] = {
            "config": asdict(cfg) if cfg else None,
        }
        if trainer is not None:
            st = trainer.state
            header["train"].update({
                "epoch": st.epoch,
                "step": st.step,
                "best_val": st.best_val,
                "singular_events_total": st.singular_events_total,
                "shuffle_state": trainer.shuffle_rng.bit_generator.state,
                "train_ids": trainer.train_ids,
                "val_ids": trainer.val_ids,
                "has_best_params": trainer._best_params is not None,
            })

    blobs = [p.tensor.data.astype("<f4").tobytes(order="C") for p in params]
    for p in params:
        blobs.append(np.zeros(p.tensor.shape, "<f4").tobytes() if p.m is None
                     else p.m.astype("<f4").tobytes(order="C"))
    for p in params:
        blobs.append(np.zeros(p.tensor.shape, "<f4").tobytes() if p.v is None
                     else p.v.astype("<f4").tobytes(order="C"))
    if trainer is not None and trainer._best_params is not None:
        for b in trainer._best_params:
            blobs.append(b.astype("<f4").tobytes(order="C"))

    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<HI", CHECKPOINT_VERSION, len(head)))
        f.write(head)
        for b in blobs:
            f.write(b)


def load_checkpoint(path):
    """Rebuild the model (and any stored training state) from a checkpoint.

    Returns (model, header_dict, best_params_or_None). Parameters and Adam
    moments round-trip bit-exactly for float32 models.
    """
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise CheckpointFormatError(f"{path}: {exc}") from None
    if len(payload) < 10 or payload[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: not a model checkpoint")
    version, head_len = struct.unpack("<HI", payload[4:10])
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: version {version}, this build reads {CHECKPOINT_VERSION}"
        )
    if len(payload) < 10 + head_len:
        raise CheckpointCorruptError(f"{path}: truncated header")
    try:
        header = json.loads(payload[10:10 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"{path}: bad header ({exc})") from None

    model = IlluminantEstimator(
        _config_from_json(header["model"]["config"]),
        seed=header["model"]["seed"],
        dtype=np.dtype(header["model"]["dtype"]),
    )
    params = model.parameters()
    names = [p["name"] for p in header["params"]]
    if names != [p.name for p in params]:
        raise CheckpointCorruptError(f"{path}: parameter table mismatch")

    sizes = [int(np.prod(p.tensor.shape)) for p in params]
    train = header.get("train") or {}
    n_sections = 3 + (1 if train.get("has_best_params") else 0)
    expected = 10 + head_len + n_sections * sum(sizes) * 4
    if len(payload) != expected:
        raise CheckpointCorruptError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )

    off = 10 + head_len
    def take(shape):
        nonlocal off
        n = int(np.prod(shape)) * 4
        arr = np.frombuffer(payload[off:off + n], dtype="<f4").reshape(shape)
        off += n
        return arr

    for p in params:
        p.tensor.data = take(p.tensor.shape).astype(model.dtype)
        if p.tensor.grad is not None:
            p.tensor.grad = np.zeros_like(p.tensor.data)
    steps = header["optimizer"]["steps"]
    for p in params:
        p.m = take(p.tensor.shape).astype(np.float64)
        p.step = int(steps[p.name])
    for p in params:
        p.v = take(p.tensor.shape).astype(np.float64)
    if all(p.step == 0 for p in params):
        for p in params:  # pristine model: keep lazy Adam buffers
            p.m = p.v = None
    best = None
    if train.get("has_best_params"):
        best = [take(p.tensor.shape).astype(model.dtype) for p in params]
    return model, header, best


def trainer_from_manifest(manifest, cfg: TrainConfig, model: IlluminantEstimator,
                          entry_ids=None) -> Trainer:
    """Load a manifest subset at the model's thumbnail size and build a
    Trainer whose validation split groups images by scene key."""
    from .dataio import load_image

    ids = list(range(len(manifest.entries))) if entry_ids is None else list(entry_ids)
    if not ids:
        raise InvalidArgumentError("empty training selection")
    size = model.config.image_size
    images = [load_image(manifest.entries[i], manifest.root, target_size=size)
              for i in ids]
    keys = [scene_key(manifest.entries[i].image_path) for i in ids]
    return Trainer(images, cfg, model, scene_keys=keys)


def resume_trainer(path, images) -> Trainer:
    """Rebuild a Trainer mid-run from a checkpoint saved with one attached."""
    model, header, best = load_checkpoint(path)
    train = header.get("train") or {}
    if "epoch" not in train:
        raise CheckpointFormatError(f"{path}: checkpoint has no training state")
    cfg = TrainConfig(**train["config"])
    trainer = Trainer(images, cfg, model,
                      train_ids=train["train_ids"], val_ids=train["val_ids"])
    trainer.state = TrainState(
        epoch=train["epoch"], step=train["step"],
        lr=cfg.lr_at_epoch(max(train["epoch"] - 1, 0)),
        best_val=train["best_val"],
        singular_events_total=train["singular_events_total"],
    )
    trainer.shuffle_rng.bit_generator.state = train["shuffle_state"]
    if best is not None:
        trainer._best_params = best
    return trainer
