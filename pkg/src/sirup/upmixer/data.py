"""Conversion between complex steering vectors and real network tensors."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..estimation import ConditioningTensor, make_condition
from ..geometry import AmbisonicSpec, SteeringVectorSet, canonicalize, order_from_channels
from ..tensorfile import read_tensor


def to_svtensor(vectors: np.ndarray) -> np.ndarray:
    """``(F, M)`` complex -> ``(2, F - 1, M)`` float32, dropping the DC bin."""
    v = np.asarray(vectors)[1:]
    return np.stack([v.real, v.imag]).astype(np.float32)


def from_svtensor(x: np.ndarray, dc_row: np.ndarray | None = None) -> np.ndarray:
    """Inverse of :func:`to_svtensor`; ``dc_row`` (zeros by default) is re-inserted at bin 0."""
    x = np.asarray(x, dtype=np.float64)
    body = x[0] + 1j * x[1]
    dc = np.zeros((1, body.shape[1]), dtype=complex)
    if dc_row is not None:
        dc[0, :len(dc_row)] = dc_row
    return np.concatenate([dc, body], axis=0)


def reassemble(x: np.ndarray, condition: ConditioningTensor, sample_rate: int = 16000,
               frame_size: int = 512) -> SteeringVectorSet:
    """Network output -> canonical unit-norm upmixed SVs with the condition's DC row."""
    m = condition.valid_channels
    v = from_svtensor(x, condition.data[0, :m])
    v = canonicalize(v)
    spec = AmbisonicSpec(order_from_channels(v.shape[1]))
    return SteeringVectorSet(v, "ambisonic", spec, "upmixed", sample_rate, frame_size)


def load_pairs(dataset_dir, target: str = "hoa", num_channels: int | None = None):
    """Load (condition, target) SvTensor arrays listed in ``manifest.jsonl``.

    Returns
    -------
    cond : ndarray (N, 2, F - 1, M')
        Zero-padded FOA conditions.
    tgt : ndarray (N, 2, F - 1, M')
    records : list of dict
    """
    root = Path(dataset_dir)
    manifest = root / "manifest.jsonl"
    if not manifest.exists():
        raise FileNotFoundError(f"dataset manifest not found: {manifest}")
    conds, tgts, recs = [], [], []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        rec = json.loads(line)
        for pair in rec["pairs"]:
            foa = SteeringVectorSet.from_tensorfile(read_tensor(root / pair["foa"]))
            hoa = SteeringVectorSet.from_tensorfile(read_tensor(root / pair[target]))
            m_out = num_channels or hoa.num_channels
            conds.append(to_svtensor(make_condition(foa, m_out).data))
            tgts.append(to_svtensor(hoa.vectors))
            recs.append({**rec, "pair": pair})
    if not conds:
        raise ValueError(f"dataset {root} is empty")
    return np.stack(conds), np.stack(tgts), recs


def dataset_hash(cond: np.ndarray, tgt: np.ndarray) -> str:
    import hashlib

    h = hashlib.sha256()
    h.update(np.ascontiguousarray(cond).tobytes())
    h.update(np.ascontiguousarray(tgt).tobytes())
    return h.hexdigest()
