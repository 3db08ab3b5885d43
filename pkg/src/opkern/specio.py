"""JSON and CSV wire formats.

Kernel spec JSON (field names are fixed):

    {"labels": [...], "dim_h": d, "kind": "explicit",
     "blocks": <n x n x d x d nested lists of [re, im]>}
    {"labels": [...], "dim_h": d, "kind": "builder",
     "builder": {"name": ..., "params": {...}}}

Complex numbers are always two-element ``[re, im]`` arrays.  Builder names:
``identity``, ``constant`` (params: block), ``cp_contraction`` (params: h,
points), ``neumann_series`` (params: h, points, optional tol), ``random_pd``
(params: seed, optional rank).

System spec JSON: {"k1": <kernel spec>, "k2": ..., "l1": ..., "l2": ...,
"t": <d x d matrix>}.  Pair spec: {"l": ..., "k": ...}.  Joint spec:
{"k": ..., "l": ..., "t_coupling": <n x n x d x d blocks>, optionally
"observed_l": <n x d matrix>}.

Training CSV columns: label, a_0_re, a_0_im, ..., a_{d-1}_re, a_{d-1}_im,
y_re, y_im.  Path CSV columns: sample, label, coordinate, re, im.
"""

from __future__ import annotations

import csv
import io
import json

import numpy as np

from .errors import OpKernError
from .gaussian import PathBatch
from .kernels import (
    LabelSet,
    OperatorKernelTable,
    constant_kernel,
    cp_contraction_kernel,
    identity_kernel,
    neumann_series_kernel,
    random_pd_kernel,
)
from .regression import TrainingSet


class SpecError(OpKernError):
    """Malformed spec file or wire payload."""


def complex_to_pair(z: complex) -> list[float]:
    return [float(np.real(z)), float(np.imag(z))]


def _pair_to_complex(pair) -> complex:
    if not isinstance(pair, (list, tuple)) or len(pair) != 2:
        raise SpecError(f"complex entries must be [re, im] pairs, got {pair!r}")
    return complex(float(pair[0]), float(pair[1]))


def array_to_json(arr: np.ndarray):
    """Nested lists with [re, im] leaves, preserving the array shape."""
    arr = np.asarray(arr)
    if arr.ndim == 0:
        return complex_to_pair(complex(arr))
    return [array_to_json(sub) for sub in arr]


def json_to_array(data, shape: tuple[int, ...]) -> np.ndarray:
    try:
        leaves = np.asarray(data, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SpecError(f"not a numeric nested array: {exc}") from None
    if leaves.shape != shape + (2,):
        raise SpecError(f"expected array of shape {shape}, got {leaves.shape[:-1]}")
    return leaves[..., 0] + 1j * leaves[..., 1]


def _field(data: dict, name: str):
    if name not in data:
        raise SpecError(f"missing field {name!r}")
    return data[name]


def _points_from_params(params: dict, labels: LabelSet, d: int) -> dict[str, np.ndarray]:
    raw = _field(params, "points")
    if not isinstance(raw, dict):
        raise SpecError("'points' must map labels to matrices")
    return {s: json_to_array(mat, (d, d)) for s, mat in raw.items()}


def kernel_from_spec(data: dict) -> OperatorKernelTable:
    if not isinstance(data, dict):
        raise SpecError("kernel spec must be a JSON object")
    labels = LabelSet.of(_field(data, "labels"))
    dim_h = int(_field(data, "dim_h"))
    if dim_h < 1:
        raise SpecError("dim_h must be >= 1")
    kind = _field(data, "kind")
    n = labels.n

    if kind == "explicit":
        blocks = json_to_array(_field(data, "blocks"), (n, n, dim_h, dim_h))
        return OperatorKernelTable(labels, blocks)
    if kind == "builder":
        builder = _field(data, "builder")
        name = _field(builder, "name")
        params = builder.get("params", {})
        if name == "identity":
            return identity_kernel(labels, dim_h)
        if name == "constant":
            return constant_kernel(labels, json_to_array(_field(params, "block"), (dim_h, dim_h)))
        if name == "cp_contraction":
            h = json_to_array(_field(params, "h"), (dim_h, dim_h))
            return cp_contraction_kernel(h, labels, _points_from_params(params, labels, dim_h))
        if name == "neumann_series":
            h = json_to_array(_field(params, "h"), (dim_h, dim_h))
            tol = float(params.get("tol", 1e-12))
            return neumann_series_kernel(h, labels, _points_from_params(params, labels, dim_h), tol)
        if name == "random_pd":
            seed = int(_field(params, "seed"))
            rank = params.get("rank")
            table = random_pd_kernel(seed, n, dim_h, None if rank is None else int(rank))
            if table.label_set != labels:
                table = OperatorKernelTable(labels, table.blocks)
            return table
        raise SpecError(f"unknown builder {name!r}")
    raise SpecError(f"unknown kind {kind!r}")


def kernel_to_spec(table: OperatorKernelTable) -> dict:
    return {
        "labels": list(table.labels),
        "dim_h": table.dim_h,
        "kind": "explicit",
        "blocks": array_to_json(table.blocks),
    }


def system_from_spec(data: dict):
    """Return the five raw components (k1, k2, l1, l2, t) of a system spec."""
    if not isinstance(data, dict):
        raise SpecError("system spec must be a JSON object")
    tables = {name: kernel_from_spec(_field(data, name)) for name in ("k1", "k2", "l1", "l2")}
    d = tables["k1"].dim_h
    t_op = json_to_array(_field(data, "t"), (d, d))
    return tables["k1"], tables["k2"], tables["l1"], tables["l2"], t_op


def pair_from_spec(data: dict):
    """Return (lo, hi) from a pair spec {"l": ..., "k": ...}."""
    if not isinstance(data, dict):
        raise SpecError("pair spec must be a JSON object")
    return kernel_from_spec(_field(data, "l")), kernel_from_spec(_field(data, "k"))


def joint_from_spec(data: dict):
    """Return (k, l, coupling, observed_or_None) from a joint spec."""
    if not isinstance(data, dict):
        raise SpecError("joint spec must be a JSON object")
    k = kernel_from_spec(_field(data, "k"))
    l = kernel_from_spec(_field(data, "l"))
    n, d = k.n, k.dim_h
    coupling = json_to_array(_field(data, "t_coupling"), (n, n, d, d))
    observed = None
    if data.get("observed_l") is not None:
        observed = json_to_array(data["observed_l"], (n, d))
    return k, l, coupling, observed


def feature_system_to_json(fs) -> dict:
    """Export a factorization; consumers must compare via Gram products,
    because the eigenbasis is only fixed up to solver sign conventions."""
    d = fs.dim_h
    return {
        "labels": list(fs.label_set.labels),
        "dim_h": d,
        "dilation_dim": fs.dilation_dim,
        "basis_eigs": [float(v) for v in fs.basis_eigs],
        "features": {
            s: array_to_json(fs.operator(s)) for s in fs.label_set.labels
        },
    }


def path_batch_to_csv(batch: PathBatch) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["sample", "label", "coordinate", "re", "im"])
    for k in range(batch.count):
        for i, s in enumerate(batch.label_set.labels):
            for p in range(batch.dim_h):
                z = batch.paths[k, i, p]
                writer.writerow([k, s, p, repr(float(z.real)), repr(float(z.imag))])
    return out.getvalue()


def training_set_to_csv(train: TrainingSet) -> str:
    d = train.vectors.shape[1]
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    header = ["label"]
    for p in range(d):
        header += [f"a_{p}_re", f"a_{p}_im"]
    header += ["y_re", "y_im"]
    writer.writerow(header)
    for i in range(train.size):
        row = [train.labels[i]]
        for p in range(d):
            row += [repr(float(train.vectors[i, p].real)), repr(float(train.vectors[i, p].imag))]
        row += [repr(float(train.targets[i].real)), repr(float(train.targets[i].imag))]
        writer.writerow(row)
    return out.getvalue()


def training_set_from_csv(text: str) -> TrainingSet:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SpecError("training CSV is empty") from None
    if not header or header[0] != "label" or header[-2:] != ["y_re", "y_im"]:
        raise SpecError("training CSV must have columns label, a_*_re/im, y_re, y_im")
    d, expected = 0, 1
    while expected < len(header) - 2:
        if header[expected : expected + 2] != [f"a_{d}_re", f"a_{d}_im"]:
            raise SpecError(f"unexpected training CSV column {header[expected]!r}")
        d += 1
        expected += 2
    triples = []
    for row in reader:
        if not row:
            continue
        if len(row) != len(header):
            raise SpecError(f"training CSV row has {len(row)} fields, expected {len(header)}")
        try:
            vec = [complex(float(row[1 + 2 * p]), float(row[2 + 2 * p])) for p in range(d)]
            y = complex(float(row[-2]), float(row[-1]))
        except ValueError as exc:
            raise SpecError(f"bad numeric field in training CSV: {exc}") from None
        triples.append((row[0], vec, y))
    if not triples:
        raise SpecError("training CSV has no data rows")
    return TrainingSet.from_triples(triples)


def load_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SpecError(f"cannot read JSON from {path}: {exc}") from None
