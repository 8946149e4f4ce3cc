"""On-disk formats: model JSON, comparison datasets, run manifests."""

import io
import json
import struct

import numpy as np

from .exceptions import ValidationError
from .model import (
    PAIR_CONVENTION,
    ComparisonDataset,
    DirichletPrior,
    DiscretePrior,
    GroundTruthModel,
    PairDistribution,
    RankingMatrix,
)

MODEL_FORMAT = "latentrank-model-v1"
DATASET_MAGIC = "latentrank-dataset"
_BIN_MAGIC = b"RMXD"
_BIN_HEADER = struct.Struct("<4sIQQQ")  # magic, version, M, Q, number of triplets


def dump_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------- model


def model_to_dict(model):
    doc = {
        "format": MODEL_FORMAT,
        "convention": PAIR_CONVENTION,
        "Q": model.Q,
        "K": model.K,
        "sigma": model.sigma.sigma.astype(int).tolist(),
        "mu": [float(x) for x in model.mu.mu],
    }
    if isinstance(model.prior, DirichletPrior):
        doc["alpha"] = [float(x) for x in model.prior.alpha]
    else:
        doc["alpha"] = None
        doc["prior_points"] = model.prior.points.tolist()
        doc["prior_weights"] = [float(x) for x in model.prior.weights]
    return doc


def model_from_dict(doc):
    if doc.get("convention", PAIR_CONVENTION) != PAIR_CONVENTION:
        raise ValidationError(f"unsupported pair convention {doc.get('convention')!r}")
    Q, K = int(doc["Q"]), int(doc["K"])
    sigma = RankingMatrix(np.asarray(doc["sigma"], dtype=np.int8).reshape(Q * (Q - 1), K), Q)
    mu = PairDistribution(np.asarray(doc["mu"], dtype=float), Q)
    if doc.get("alpha") is not None:
        prior = DirichletPrior(doc["alpha"])
    else:
        prior = DiscretePrior(doc["prior_points"], doc["prior_weights"])
    return GroundTruthModel(sigma, mu, prior)


def write_model(path, model):
    dump_json(path, model_to_dict(model))


def read_model(path):
    return model_from_dict(load_json(path))


# ---------------------------------------------------------------- datasets


def dataset_triplets(data):
    """(user, w, count) rows: arrival order, consecutive repeats run-length coded."""
    u, w = data.user_index, data.pairs
    if not len(w):
        return np.zeros((0, 3), dtype=np.int64)
    start = np.ones(len(w), dtype=bool)
    start[1:] = (u[1:] != u[:-1]) | (w[1:] != w[:-1])
    heads = np.flatnonzero(start)
    counts = np.diff(np.append(heads, len(w)))
    return np.column_stack([u[heads], w[heads], counts]).astype(np.int64)


def dataset_from_triplets(M, Q, rows):
    rows = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
    if len(rows) and (rows[:, 0].min() < 0 or rows[:, 0].max() >= M):
        raise ValidationError("user index outside [0, M)")
    if np.any(rows[:, 2] < 1):
        raise ValidationError("triplet counts must be positive")
    if np.any(np.diff(rows[:, 0]) < 0):
        raise ValidationError("triplets must be grouped by user in ascending order")
    pairs = np.repeat(rows[:, 1], rows[:, 2])
    per_user = np.bincount(rows[:, 0], weights=rows[:, 2], minlength=M).astype(np.int64)
    offsets = np.concatenate([[0], np.cumsum(per_user)])
    return ComparisonDataset(Q, pairs, offsets)


def write_dataset(path, data, binary=None):
    """Text triplets by default; binary when ``binary`` or the path ends in .bin."""
    binary = str(path).endswith(".bin") if binary is None else binary
    rows = dataset_triplets(data)
    if binary:
        conv = PAIR_CONVENTION.encode()
        with open(path, "wb") as fh:
            fh.write(_BIN_HEADER.pack(_BIN_MAGIC, 1, data.M, data.Q, len(rows)))
            fh.write(struct.pack("<H", len(conv)) + conv)
            fh.write(rows.astype("<i8").tobytes())
        return
    with open(path, "w") as fh:
        fh.write(f"{DATASET_MAGIC} {data.M} {data.Q} {PAIR_CONVENTION}\n")
        for r in rows:
            fh.write(f"{r[0]} {r[1]} {r[2]}\n")


def read_dataset(path):
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == _BIN_MAGIC:
        with open(path, "rb") as fh:
            _, version, M, Q, n = _BIN_HEADER.unpack(fh.read(_BIN_HEADER.size))
            (clen,) = struct.unpack("<H", fh.read(2))
            conv = fh.read(clen).decode()
            rows = np.frombuffer(fh.read(24 * n), dtype="<i8")
        if version != 1:
            raise ValidationError(f"unsupported dataset version {version}")
    else:
        with open(path) as fh:
            header = fh.readline().split()
            if len(header) != 4 or header[0] != DATASET_MAGIC:
                raise ValidationError(f"{path}: not a dataset file")
            M, Q, conv = int(header[1]), int(header[2]), header[3]
            body = fh.read()
            rows = np.loadtxt(io.StringIO(body), dtype=np.int64, ndmin=2) if body.strip() else np.zeros((0, 3), np.int64)
    if conv != PAIR_CONVENTION:
        raise ValidationError(f"unsupported pair convention {conv!r}")
    return dataset_from_triplets(int(M), int(Q), rows)


# ---------------------------------------------------------------- manifests


def manifest_path(out):
    return f"{out}.manifest.json"


def write_manifest(out, command, config, outputs, extra=None):
    doc = {"command": command, "config": config, "outputs": sorted(map(str, outputs))}
    if extra:
        doc.update(extra)
    dump_json(manifest_path(out), doc)
