"""CSI preprocessing, supervised dataset assembly, and the dataset file format.

A training sample pairs T slots of preprocessed source-BS features with the
K following optimal beam indices at the target RSU, collected along a vehicle
trajectory that is snapped to the channel grid slot by slot.

Dataset file layout (magic ``BMSQ``, little-endian):

    magic | version u32 | X u32 | F u32 | T u32 | K u32 | count u32
    feature mean f64*F | feature std f64*F
    metadata length u32 | metadata UTF-8 JSON
    per record: features f32 (T*F row-major) | labels u16*K | traj id u32 | start slot u32
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mobility import sample_trajectory
from .phy import ChannelSnapshot, Codebook
from .scene import ChannelGrid, Scene, snap_positions

__all__ = [
    "LOG_EPSILON",
    "preprocess_csi",
    "grid_features",
    "grid_beam_labels",
    "TrainingSample",
    "Dataset",
    "split_of_trajectory",
    "make_dataset",
    "save_dataset",
    "load_dataset",
    "DatasetFormatError",
]

LOG_EPSILON = 1e-9

MAGIC = b"BMSQ"
FORMAT_VERSION = 1

# sub-stream tags for seed derivation
_TAG_TRAJECTORY = 2
_TAG_SPLIT = 3

SPLIT_NAMES = ("train", "val", "test")


class DatasetFormatError(RuntimeError):
    """Malformed or truncated dataset file."""


def preprocess_csi(h) -> np.ndarray:
    """Angular-domain log-amplitude features: ln(|DFT_N(h)| + eps)."""
    coeffs = h.coefficients if isinstance(h, ChannelSnapshot) else np.asarray(h)
    if not np.all(np.isfinite(coeffs.view(np.float64) if coeffs.dtype.kind == "c" else coeffs)):
        raise ValueError("channel coefficients must be finite")
    return np.log(np.abs(np.fft.fft(coeffs)) + LOG_EPSILON)


def grid_features(grid: ChannelGrid, bs_id: str) -> np.ndarray:
    """Raw (unstandardized) features for every grid point, shape (M, N_bs)."""
    return np.log(np.abs(np.fft.fft(grid.snapshots[bs_id], axis=1)) + LOG_EPSILON)


def grid_beam_labels(grid: ChannelGrid, bs_id: str, codebook: Codebook):
    """Exhaustive-search beam label and its RSS for every grid point.

    Returns (labels (M,) uint16, rss_opt (M,) float64). Outage points get
    label 0 / rss 0 and must be filtered via ``grid.outage``.
    """
    snaps = grid.snapshots[bs_id]
    m = snaps.shape[0]
    labels = np.empty(m, dtype=np.uint16)
    rss_opt = np.empty(m)
    chunk = 16384
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        scores = np.abs(snaps[lo:hi].conj() @ codebook.matrix) ** 2
        labels[lo:hi] = np.argmax(scores, axis=1).astype(np.uint16)
        rss_opt[lo:hi] = scores[np.arange(hi - lo), labels[lo:hi]]
    return labels, rss_opt


@dataclass
class TrainingSample:
    """One supervised window along a trajectory.

    ``start_slot`` is the first feature slot; the anchor (last observed) slot
    is ``start_slot + T - 1``; labels cover the K slots after the anchor.
    ``anchor_label`` and ``positions`` (T+K slots of ground truth) are present
    only on freshly generated datasets, not on file loads.
    """

    features: np.ndarray  # (T, F) float64, standardized (f32 on disk)
    labels: np.ndarray  # (K,) uint16
    trajectory_id: int
    start_slot: int
    anchor_label: int | None = None
    positions: np.ndarray | None = None  # (T+K, 2) float64


@dataclass
class Dataset:
    samples: list[TrainingSample]
    feature_mean: np.ndarray  # (F,)
    feature_std: np.ndarray  # (F,)
    num_beams: int
    history: int  # T
    horizon: int  # K
    source_bs: str
    target_rsu: str
    seed: int
    scene_digest: str
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    dropped_trajectories: int = 0
    extra_metadata: dict = field(default_factory=dict)

    @property
    def feature_dim(self) -> int:
        return int(self.feature_mean.shape[0])

    def split_of(self, trajectory_id: int) -> str:
        return split_of_trajectory(self.seed, trajectory_id, self.split_ratios)

    def indices(self, split: str) -> list[int]:
        if split not in SPLIT_NAMES:
            raise ValueError(f"unknown split {split!r}")
        return [
            i for i, s in enumerate(self.samples) if self.split_of(s.trajectory_id) == split
        ]

    def split_samples(self, split: str) -> list[TrainingSample]:
        return [self.samples[i] for i in self.indices(split)]

    def arrays(self, split: str):
        """Stacked (features (n, T, F) float64, labels (n, K) int64) for a split."""
        chosen = self.split_samples(split)
        if not chosen:
            return (
                np.empty((0, self.history, self.feature_dim)),
                np.empty((0, self.horizon), dtype=np.int64),
            )
        feats = np.stack([s.features for s in chosen]).astype(np.float64)
        labels = np.stack([s.labels for s in chosen]).astype(np.int64)
        return feats, labels

    def label_histogram(self) -> np.ndarray:
        counts = np.zeros(self.num_beams, dtype=np.int64)
        for s in self.samples:
            counts += np.bincount(s.labels, minlength=self.num_beams)
        return counts


def split_of_trajectory(
    seed: int, trajectory_id: int, ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
) -> str:
    """Deterministic per-trajectory split assignment via a seeded hash draw."""
    u = np.random.default_rng(
        np.random.SeedSequence([int(seed), _TAG_SPLIT, int(trajectory_id)])
    ).random()
    if u < ratios[0]:
        return "train"
    if u < ratios[0] + ratios[1]:
        return "val"
    return "test"


def make_dataset(
    scene: Scene,
    grid: ChannelGrid,
    source_bs: str,
    target_rsu: str,
    num_trajectories: int,
    codebook: Codebook,
    seed: int,
    history: int = 50,
    horizon: int = 50,
    stride: int | None = None,
    slots_per_trajectory: int | None = None,
    speed_range: tuple[float, float] = (10.0, 15.0),
    accel_range: tuple[float, float] = (-3.0, 3.0),
    slot_seconds: float = 1e-3,
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> Dataset:
    """Slide supervised windows along seeded trajectories.

    Window anchored at slot t: features from slots [t-T+1, t] of the source
    BS, labels from slots [t+1, t+K] of the target RSU, both read at the
    nearest grid point. Trajectories touching an outage point are dropped and
    counted. Feature standardization uses train-split statistics only.
    """
    if stride is None:
        stride = horizon
    if slots_per_trajectory is None:
        slots_per_trajectory = history + horizon
    if slots_per_trajectory < history + horizon:
        raise ValueError(
            f"trajectories need at least T+K={history + horizon} slots, "
            f"got {slots_per_trajectory}"
        )
    if target_rsu not in ("rsu0", "rsu1"):
        raise ValueError(f"target must be an RSU, got {target_rsu!r}")
    for bs_id in (source_bs, target_rsu):
        if bs_id not in grid.bs_ids:
            raise ValueError(f"{bs_id!r} not present in the channel grid {grid.bs_ids}")

    src_feats = grid_features(grid, source_bs)
    tgt_labels, _ = grid_beam_labels(grid, target_rsu, codebook)
    src_outage = grid.outage(source_bs)
    tgt_outage = grid.outage(target_rsu)

    raw_samples = []  # (traj_id, start_slot, raw feats f64, labels, anchor_label, positions)
    dropped = 0
    for traj_id in range(num_trajectories):
        rng = np.random.default_rng(
            np.random.SeedSequence([int(seed), _TAG_TRAJECTORY, traj_id])
        )
        traj = sample_trajectory(
            scene,
            rng,
            num_slots=slots_per_trajectory,
            speed_range=speed_range,
            accel_range=accel_range,
            dt=slot_seconds,
        )
        positions = traj.positions()
        flat = snap_positions(positions, scene.grid)
        if np.any(src_outage[flat]) or np.any(tgt_outage[flat]):
            dropped += 1
            continue
        for anchor in range(history - 1, slots_per_trajectory - horizon, stride):
            lo = anchor - history + 1
            raw_samples.append(
                (
                    traj_id,
                    lo,
                    src_feats[flat[lo : anchor + 1]],
                    tgt_labels[flat[anchor + 1 : anchor + horizon + 1]].copy(),
                    int(tgt_labels[flat[anchor]]),
                    positions[lo : anchor + horizon + 1].copy(),
                )
            )

    train_rows = [
        r[2]
        for r in raw_samples
        if split_of_trajectory(seed, r[0], split_ratios) == "train"
    ]
    if not train_rows:
        raise ValueError("no train-split samples; increase num_trajectories")
    stacked = np.concatenate(train_rows, axis=0)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), 1e-12)

    samples = [
        TrainingSample(
            features=(feats - mean) / std,
            labels=labels,
            trajectory_id=traj_id,
            start_slot=start,
            anchor_label=anchor_label,
            positions=positions,
        )
        for traj_id, start, feats, labels, anchor_label, positions in raw_samples
    ]
    return Dataset(
        samples=samples,
        feature_mean=mean,
        feature_std=std,
        num_beams=codebook.num_beams,
        history=history,
        horizon=horizon,
        source_bs=source_bs,
        target_rsu=target_rsu,
        seed=int(seed),
        scene_digest=scene.digest(),
        split_ratios=split_ratios,
        dropped_trajectories=dropped,
        extra_metadata={
            "slots_per_trajectory": slots_per_trajectory,
            "stride": stride,
            "num_trajectories": num_trajectories,
        },
    )


# ---------------------------------------------------------------------------
# file format


def save_dataset(dataset: Dataset, path, config_hash: str = "") -> None:
    t, k = dataset.history, dataset.horizon
    f = dataset.feature_dim
    meta = {
        "scene_digest": dataset.scene_digest,
        "seed": dataset.seed,
        "source_bs": dataset.source_bs,
        "target_rsu": dataset.target_rsu,
        "split_ratios": list(dataset.split_ratios),
        "dropped_trajectories": dataset.dropped_trajectories,
        "config_hash": config_hash,
        **dataset.extra_metadata,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack(
        "<IIIIII", FORMAT_VERSION, dataset.num_beams, f, t, k, len(dataset.samples)
    )
    blob += dataset.feature_mean.astype("<f8").tobytes()
    blob += dataset.feature_std.astype("<f8").tobytes()
    blob += struct.pack("<I", len(meta_bytes))
    blob += meta_bytes
    for s in dataset.samples:
        if s.features.shape != (t, f) or s.labels.shape != (k,):
            raise ValueError("sample shape does not match dataset header")
        blob += s.features.astype("<f4").tobytes()
        blob += s.labels.astype("<u2").tobytes()
        blob += struct.pack("<II", s.trajectory_id, s.start_slot)
    Path(path).write_bytes(bytes(blob))


def load_dataset(path) -> Dataset:
    buf = Path(path).read_bytes()

    def take(off, n):
        if off + n > len(buf):
            raise DatasetFormatError("truncated dataset file")
        return buf[off : off + n], off + n

    chunk, off = take(0, 4)
    if chunk != MAGIC:
        raise DatasetFormatError(f"bad magic {chunk!r}")
    chunk, off = take(off, 24)
    version, x, f, t, k, count = struct.unpack("<IIIIII", chunk)
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    chunk, off = take(off, 8 * f)
    mean = np.frombuffer(chunk, dtype="<f8").copy()
    chunk, off = take(off, 8 * f)
    std = np.frombuffer(chunk, dtype="<f8").copy()
    chunk, off = take(off, 4)
    (meta_len,) = struct.unpack("<I", chunk)
    chunk, off = take(off, meta_len)
    meta = json.loads(chunk.decode())
    samples = []
    feat_bytes = 4 * t * f
    label_bytes = 2 * k
    for _ in range(count):
        chunk, off = take(off, feat_bytes)
        feats = np.frombuffer(chunk, dtype="<f4").reshape(t, f).astype(np.float64)
        chunk, off = take(off, label_bytes)
        labels = np.frombuffer(chunk, dtype="<u2").copy()
        chunk, off = take(off, 8)
        traj_id, start = struct.unpack("<II", chunk)
        samples.append(
            TrainingSample(
                features=feats, labels=labels, trajectory_id=traj_id, start_slot=start
            )
        )
    if off != len(buf):
        raise DatasetFormatError(f"{len(buf) - off} trailing bytes")
    known = {
        "scene_digest",
        "seed",
        "source_bs",
        "target_rsu",
        "split_ratios",
        "dropped_trajectories",
    }
    return Dataset(
        samples=samples,
        feature_mean=mean,
        feature_std=std,
        num_beams=x,
        history=t,
        horizon=k,
        source_bs=meta["source_bs"],
        target_rsu=meta["target_rsu"],
        seed=meta["seed"],
        scene_digest=meta["scene_digest"],
        split_ratios=tuple(meta["split_ratios"]),
        dropped_trajectories=meta["dropped_trajectories"],
        extra_metadata={k_: v for k_, v in meta.items() if k_ not in known},
    )
