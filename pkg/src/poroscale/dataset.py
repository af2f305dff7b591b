"""Patch-to-tensor learning datasets: construction, scaling, splitting, files.

A sample pairs one coarse cell's property patch (permeability values for
the permeability target, Young's modulus values for the elasticity target)
with the upper triangle of that cell's effective tensor. Patches drop the
duplicated far-edge node slice, so inputs are N_l^d arrays where N_l is
the fine-per-coarse cell ratio.

Inputs are min-max scaled with one global (dataset-wide) range; each output
component is min-max scaled separately. Scaling happens before splitting.

File format "NHDS" (little-endian): magic, u32 version, u64 counts
(L, N_l, d, N_out), scaler block (input min/max, per-component output
min/max), then per sample u64 realization id, u64 cell id, the X payload
and the Y payload as float64.
"""

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .elasticity import n_strain_components, upper_triangle
from .errors import FormatError, ParameterError
from .homogenize import extract_patches, patch_ratio

logger = logging.getLogger(__name__)

MAGIC = b"NHDS"
VERSION = 1

TARGET_PERMEABILITY = "permeability"
TARGET_ELASTICITY = "elasticity"


def target_components(target, d):
    """Flattened output length N_out for a prediction target."""
    if target == TARGET_PERMEABILITY:
        return d * (d + 1) // 2
    if target == TARGET_ELASTICITY:
        m = n_strain_components(d)
        return m * (m + 1) // 2
    raise ParameterError(f"unknown target {target!r}")


def target_from_components(n_out, d):
    for target in (TARGET_PERMEABILITY, TARGET_ELASTICITY):
        if target_components(target, d) == n_out:
            return target
    raise ParameterError(f"no target has {n_out} components in {d}D")


@dataclass
class Scaler:
    """Min-max ranges of the raw dataset; inverse recovers raw values.

    Degenerate (zero-range) components scale to 0 and un-scale to their
    constant value.
    """

    input_min: float
    input_max: float
    output_min: np.ndarray
    output_max: np.ndarray

    @property
    def input_degenerate(self):
        return self.input_max <= self.input_min

    @property
    def output_degenerate(self):
        return self.output_max <= self.output_min

    def scale_input(self, values):
        values = np.asarray(values, dtype=float)
        if self.input_degenerate:
            return np.zeros_like(values)
        return (values - self.input_min) / (self.input_max - self.input_min)

    def scale_output(self, values):
        values = np.asarray(values, dtype=float)
        span = np.where(
            self.output_degenerate, 1.0, self.output_max - self.output_min
        )
        scaled = (values - self.output_min) / span
        return np.where(self.output_degenerate, 0.0, scaled)

    def unscale_output(self, values):
        values = np.asarray(values, dtype=float)
        span = self.output_max - self.output_min
        return np.where(
            self.output_degenerate, self.output_min, self.output_min + values * span
        )


@dataclass(frozen=True)
class SplitSpec:
    """Holdout split: test fraction first, then train:val on the remainder."""

    test_fraction: float = 0.6
    train_ratio: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ParameterError("test fraction must lie in (0, 1)")
        if not 0.0 < self.train_ratio < 1.0:
            raise ParameterError("train ratio must lie in (0, 1)")

    def sizes(self, total):
        """(n_train, n_val, n_test): floors, remainder goes to validation."""
        n_test = int(np.floor(self.test_fraction * total))
        held_in = total - n_test
        n_train = int(np.floor(self.train_ratio * held_in))
        return n_train, held_in - n_train, n_test


@dataclass
class Dataset:
    """Scaled samples plus ids and the scaler that produced them.

    ``X`` is (L, N_l, ...) with d spatial axes; ``Y`` is (L, N_out).
    """

    dimension: int
    patch_size: int
    target: str
    X: np.ndarray
    Y: np.ndarray
    realization: np.ndarray
    cell: np.ndarray
    scaler: Scaler

    def __len__(self):
        return self.X.shape[0]

    @property
    def n_out(self):
        return self.Y.shape[1]

    def subset(self, indices):
        return Dataset(
            dimension=self.dimension,
            patch_size=self.patch_size,
            target=self.target,
            X=self.X[indices],
            Y=self.Y[indices],
            realization=self.realization[indices],
            cell=self.cell[indices],
            scaler=self.scaler,
        )


def patch_input_array(patch_values, d, n_l):
    """Drop the duplicated far-edge node slice: (N_l+1)^d -> N_l^d."""
    shaped = np.asarray(patch_values, dtype=float).reshape((n_l + 1,) * d)
    return shaped[(slice(0, n_l),) * d].copy()


def build_dataset(fine_grid, coarse_cells, realizations, tensors, target):
    """Assemble and scale the full dataset.

    ``realizations`` is a sequence of property fields and ``tensors`` the
    matching per-realization effective tensors (same order). Sample order
    is realization-major, cells row-major within each realization, so the
    flat index is l * N_c + i.
    """
    if len(realizations) < 1:
        raise ParameterError("at least one realization is required")
    if len(realizations) != len(tensors):
        raise ParameterError("realization and tensor counts differ")
    d = fine_grid.dimension
    n_l = patch_ratio(fine_grid, coarse_cells)
    n_out = target_components(target, d)

    xs, ys, rid, cid = [], [], [], []
    for l, (fields, eff) in enumerate(zip(realizations, tensors)):
        _, patches = extract_patches(fine_grid, coarse_cells, fields)
        if eff.perm.shape[0] != len(patches):
            raise ParameterError(f"tensor count mismatch in realization {l}")
        per_cell = eff.perm if target == TARGET_PERMEABILITY else eff.stiffness
        for i, patch in enumerate(patches):
            values = (
                patch.perm if target == TARGET_PERMEABILITY else patch.young
            )
            xs.append(patch_input_array(values, d, n_l))
            ys.append(upper_triangle(per_cell[i]))
            rid.append(l)
            cid.append(i)

    X = np.stack(xs)
    Y = np.stack(ys)
    scaler = Scaler(
        input_min=float(X.min()),
        input_max=float(X.max()),
        output_min=Y.min(axis=0),
        output_max=Y.max(axis=0),
    )
    if scaler.input_degenerate:
        logger.warning("input range is degenerate; inputs scaled to 0")
    if np.any(scaler.output_degenerate):
        logger.warning(
            "%d output components are degenerate and scale to 0",
            int(np.count_nonzero(scaler.output_degenerate)),
        )
    return Dataset(
        dimension=d,
        patch_size=n_l,
        target=target,
        X=scaler.scale_input(X),
        Y=scaler.scale_output(Y),
        realization=np.asarray(rid, dtype=np.int64),
        cell=np.asarray(cid, dtype=np.int64),
        scaler=scaler,
    )


def split(dataset, spec=SplitSpec()):
    """Seeded shuffle, then partition into train/val/test subsets."""
    total = len(dataset)
    if total == 0:
        raise ParameterError("cannot split an empty dataset")
    n_train, n_val, _ = spec.sizes(total)
    order = np.random.default_rng(spec.seed).permutation(total)
    return {
        "train": dataset.subset(order[:n_train]),
        "val": dataset.subset(order[n_train : n_train + n_val]),
        "test": dataset.subset(order[n_train + n_val :]),
    }


def save_dataset(dataset, path):
    d = dataset.dimension
    n_l = dataset.patch_size
    n_out = dataset.n_out
    total = len(dataset)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<4Q", total, n_l, d, n_out))
        fh.write(struct.pack("<2d", dataset.scaler.input_min, dataset.scaler.input_max))
        fh.write(np.ascontiguousarray(dataset.scaler.output_min, "<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.scaler.output_max, "<f8").tobytes())
        for j in range(total):
            fh.write(
                struct.pack(
                    "<2Q", int(dataset.realization[j]), int(dataset.cell[j])
                )
            )
            fh.write(np.ascontiguousarray(dataset.X[j], "<f8").tobytes())
            fh.write(np.ascontiguousarray(dataset.Y[j], "<f8").tobytes())


def _read_exact(fh, n, path):
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"{path}: truncated dataset file")
    return data


def load_dataset(path):
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, path) != MAGIC:
            raise FormatError(f"{path}: bad magic, not a dataset file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, path))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        total, n_l, d, n_out = struct.unpack("<4Q", _read_exact(fh, 32, path))
        if d not in (2, 3):
            raise FormatError(f"{path}: invalid dimension {d}")
        in_min, in_max = struct.unpack("<2d", _read_exact(fh, 16, path))
        out_min = np.frombuffer(_read_exact(fh, 8 * n_out, path), "<f8").copy()
        out_max = np.frombuffer(_read_exact(fh, 8 * n_out, path), "<f8").copy()

        patch = n_l**d
        X = np.empty((total,) + (n_l,) * d)
        Y = np.empty((total, n_out))
        rid = np.empty(total, dtype=np.int64)
        cid = np.empty(total, dtype=np.int64)
        for j in range(total):
            rid[j], cid[j] = struct.unpack("<2Q", _read_exact(fh, 16, path))
            X[j] = np.frombuffer(_read_exact(fh, 8 * patch, path), "<f8").reshape(
                (n_l,) * d
            )
            Y[j] = np.frombuffer(_read_exact(fh, 8 * n_out, path), "<f8")
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after last sample")

    return Dataset(
        dimension=int(d),
        patch_size=int(n_l),
        target=target_from_components(int(n_out), int(d)),
        X=X,
        Y=Y,
        realization=rid,
        cell=cid,
        scaler=Scaler(
            input_min=in_min,
            input_max=in_max,
            output_min=out_min,
            output_max=out_max,
        ),
    )
