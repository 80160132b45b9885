"""Dataset containers, file formats, the synthetic generator, and splits.

File formats
------------
features / privileged features
    dense CSV, no header, one row per sample, float cells.
labels
    one label per line, ``-1``, ``+1``, or ``1``.
domains
    one tag per line, ``source`` or ``target``.
ids
    optional, one identifier per line (used as category tags by the
    one-vs-rest protocol).
model
    text file whose first line is ``lupi-margin-model v1`` followed by a JSON
    payload.  Floats are serialized with full round-trip precision, so a
    loaded model reproduces the decision values of the saved one bitwise.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (BadLabel, ParseError, RowCountMismatch, TooFewSamples,
                     VersionMismatch)
from .kernels import KernelSpec
from .models import CorrectingRecord, TrainedModel

MODEL_FORMAT_TAG = "lupi-margin-model"
MODEL_FORMAT_VERSION = "v1"
DOMAIN_TAGS = ("source", "target")


@dataclass(frozen=True)
class TripletDataset:
    """Samples with optional privileged features, domain tags, and identifiers."""

    X: np.ndarray
    Xstar: np.ndarray | None
    y: np.ndarray
    domain_tag: np.ndarray | None = None
    ids: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.asarray(self.y).ravel().astype(int)
        if y.shape[0] != X.shape[0]:
            raise RowCountMismatch(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if y.size and not np.all(np.isin(y, (-1, 1))):
            bad = y[~np.isin(y, (-1, 1))][0]
            raise BadLabel(f"label {bad} is not -1 or +1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.Xstar is not None:
            Xstar = np.asarray(self.Xstar, dtype=float)
            if Xstar.ndim == 1:
                Xstar = Xstar.reshape(-1, 1)
            if Xstar.shape[0] != X.shape[0]:
                raise RowCountMismatch(
                    f"{X.shape[0]} feature rows but {Xstar.shape[0]} privileged rows"
                )
            object.__setattr__(self, "Xstar", Xstar)
        if self.domain_tag is not None:
            tags = np.asarray(self.domain_tag).ravel()
            if tags.shape[0] != X.shape[0]:
                raise RowCountMismatch(
                    f"{X.shape[0]} feature rows but {tags.shape[0]} domain tags"
                )
            if tags.size and not np.all(np.isin(tags, DOMAIN_TAGS)):
                bad = tags[~np.isin(tags, DOMAIN_TAGS)][0]
                raise ValueError(f"domain tag {bad!r} is not 'source' or 'target'")
            object.__setattr__(self, "domain_tag", tags.astype("U6"))
        if self.ids is not None:
            ids = np.asarray(self.ids).ravel()
            if ids.shape[0] != X.shape[0]:
                raise RowCountMismatch(
                    f"{X.shape[0]} feature rows but {ids.shape[0]} ids"
                )
            object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def has_privileged(self) -> bool:
        return self.Xstar is not None

    @property
    def has_domains(self) -> bool:
        return self.domain_tag is not None

    def subset(self, indices) -> "TripletDataset":
        idx = np.asarray(indices)
        return TripletDataset(
            X=self.X[idx],
            Xstar=self.Xstar[idx] if self.Xstar is not None else None,
            y=self.y[idx],
            domain_tag=self.domain_tag[idx] if self.domain_tag is not None else None,
            ids=self.ids[idx] if self.ids is not None else None,
        )

    def domain_mask(self, tag: str) -> np.ndarray:
        if self.domain_tag is None:
            # untagged data counts as target-domain
            full = tag == "target"
            return np.full(self.n, full, dtype=bool)
        return self.domain_tag == tag

    def source_rows(self) -> "TripletDataset":
        return self.subset(np.flatnonzero(self.domain_mask("source")))

    def target_rows(self) -> "TripletDataset":
        return self.subset(np.flatnonzero(self.domain_mask("target")))


def _read_matrix(path) -> np.ndarray:
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            text = line.strip()
            if not text:
                raise ParseError("blank line in matrix file", line=lineno)
            cells = text.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise ParseError(
                    f"row has {len(cells)} columns, expected {width}", line=lineno
                )
            try:
                rows.append([float(cell) for cell in cells])
            except ValueError:
                raise ParseError(f"non-numeric cell in {text!r}", line=lineno) from None
    if not rows:
        raise ParseError("matrix file is empty", line=1)
    return np.array(rows, dtype=float)


def _read_labels(path) -> np.ndarray:
    values = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            text = line.strip()
            if not text:
                raise ParseError("blank label line", line=lineno)
            if text in ("-1",):
                values.append(-1)
            elif text in ("+1", "1"):
                values.append(1)
            else:
                raise BadLabel(f"line {lineno}: label {text!r} is not -1 or +1")
    if not values:
        raise ParseError("label file is empty", line=1)
    return np.array(values, dtype=int)


def _read_tokens(path, allowed, what) -> np.ndarray:
    values = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            text = line.strip()
            if allowed is not None and text not in allowed:
                raise ParseError(f"{what} {text!r} is invalid", line=lineno)
            values.append(text)
    if not values:
        raise ParseError(f"{what} file is empty", line=1)
    return np.array(values)


def load_dataset(primary_path, labels_path, privileged_path=None,
                 domain_path=None, ids_path=None) -> TripletDataset:
    """Load a dataset from the CSV/line formats described in the module docstring."""
    X = _read_matrix(primary_path)
    y = _read_labels(labels_path)
    if y.shape[0] != X.shape[0]:
        raise RowCountMismatch(
            f"{Path(primary_path).name} has {X.shape[0]} rows but "
            f"{Path(labels_path).name} has {y.shape[0]}"
        )
    Xstar = None
    if privileged_path is not None:
        Xstar = _read_matrix(privileged_path)
        if Xstar.shape[0] != X.shape[0]:
            raise RowCountMismatch(
                f"{Path(primary_path).name} has {X.shape[0]} rows but "
                f"{Path(privileged_path).name} has {Xstar.shape[0]}"
            )
    tags = None
    if domain_path is not None:
        tags = _read_tokens(domain_path, DOMAIN_TAGS, "domain tag")
        if tags.shape[0] != X.shape[0]:
            raise RowCountMismatch(
                f"{Path(primary_path).name} has {X.shape[0]} rows but "
                f"{Path(domain_path).name} has {tags.shape[0]}"
            )
    ids = None
    if ids_path is not None:
        ids = _read_tokens(ids_path, None, "id")
        if ids.shape[0] != X.shape[0]:
            raise RowCountMismatch(
                f"{Path(primary_path).name} has {X.shape[0]} rows but "
                f"{Path(ids_path).name} has {ids.shape[0]}"
            )
    return TripletDataset(X=X, Xstar=Xstar, y=y, domain_tag=tags, ids=ids)


def save_dataset(data: TripletDataset, out_dir) -> dict:
    """Write a dataset as features.csv / labels.txt [/ privileged.csv / domains.txt / ids.txt]."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    def write_matrix(name, M):
        path = out / name
        with open(path, "w", encoding="utf-8") as handle:
            for row in M:
                handle.write(",".join(repr(float(v)) for v in row) + "\n")
        return path

    paths["features"] = write_matrix("features.csv", data.X)
    with open(out / "labels.txt", "w", encoding="utf-8") as handle:
        for label in data.y:
            handle.write(("+1" if label > 0 else "-1") + "\n")
    paths["labels"] = out / "labels.txt"
    if data.Xstar is not None:
        paths["privileged"] = write_matrix("privileged.csv", data.Xstar)
    if data.domain_tag is not None:
        with open(out / "domains.txt", "w", encoding="utf-8") as handle:
            handle.writelines(tag + "\n" for tag in data.domain_tag)
        paths["domains"] = out / "domains.txt"
    if data.ids is not None:
        with open(out / "ids.txt", "w", encoding="utf-8") as handle:
            handle.writelines(str(i) + "\n" for i in data.ids)
        paths["ids"] = out / "ids.txt"
    return paths


def _kernel_to_dict(spec: KernelSpec) -> dict:
    return {"kind": spec.kind, "rbf_gamma": spec.rbf_gamma}


def _kernel_from_dict(payload) -> KernelSpec:
    try:
        return KernelSpec(payload["kind"], payload.get("rbf_gamma"))
    except (TypeError, KeyError, ValueError) as exc:
        raise ParseError(f"bad kernel record: {exc}") from None


def _model_to_dict(model: TrainedModel) -> dict:
    payload = {
        "kind": model.kind,
        "sv_X": model.sv_X.tolist(),
        "sv_dim": int(model.sv_X.shape[1]),
        "sv_coeff": model.sv_coeff.tolist(),
        "bias": model.bias,
        "kernel": _kernel_to_dict(model.kernel),
        "C": model.C,
        "gamma_priv": model.gamma_priv,
        "correcting": None,
        "source": None,
    }
    if model.correcting is not None:
        rec = model.correcting
        payload["correcting"] = {
            "sv_Xstar": rec.sv_Xstar.tolist(),
            "sv_dim": int(rec.sv_Xstar.shape[1]),
            "corr_coeff": rec.corr_coeff.tolist(),
            "bias_star": rec.bias_star,
            "kernel_star": _kernel_to_dict(rec.kernel_star),
        }
    if model.source is not None:
        payload["source"] = _model_to_dict(model.source)
    return payload


def _model_from_dict(payload) -> TrainedModel:
    try:
        correcting = None
        if payload["correcting"] is not None:
            rec = payload["correcting"]
            correcting = CorrectingRecord(
                sv_Xstar=np.array(rec["sv_Xstar"], dtype=float).reshape(-1, rec["sv_dim"]),
                corr_coeff=np.array(rec["corr_coeff"], dtype=float),
                bias_star=float(rec["bias_star"]),
                kernel_star=_kernel_from_dict(rec["kernel_star"]),
            )
        source = None
        if payload["source"] is not None:
            source = _model_from_dict(payload["source"])
        return TrainedModel(
            kind=payload["kind"],
            sv_X=np.array(payload["sv_X"], dtype=float).reshape(-1, payload["sv_dim"]),
            sv_coeff=np.array(payload["sv_coeff"], dtype=float),
            bias=float(payload["bias"]),
            kernel=_kernel_from_dict(payload["kernel"]),
            C=float(payload["C"]),
            gamma_priv=None if payload["gamma_priv"] is None else float(payload["gamma_priv"]),
            source=source,
            correcting=correcting,
        )
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad model record: {exc}") from None


def save_model(model: TrainedModel, path) -> None:
    text = json.dumps(_model_to_dict(model), indent=1, sort_keys=True)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"{MODEL_FORMAT_TAG} {MODEL_FORMAT_VERSION}\n")
        handle.write(text + "\n")


def load_model(path) -> TrainedModel:
    with open(path, "r", encoding="utf-8") as handle:
        header = handle.readline().strip()
        body = handle.read()
    parts = header.split()
    if len(parts) != 2 or parts[0] != MODEL_FORMAT_TAG:
        raise ParseError(f"not a {MODEL_FORMAT_TAG} file (header {header!r})", line=1)
    if parts[1] != MODEL_FORMAT_VERSION:
        raise VersionMismatch(
            f"unsupported model version {parts[1]!r}; this build reads {MODEL_FORMAT_VERSION}"
        )
    try:
        payload = json.loads(body)
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad JSON payload: {exc.msg}", line=exc.lineno + 1) from None
    return _model_from_dict(payload)


@dataclass(frozen=True)
class SynthConfig:
    """Two-Gaussian generator with a privileged hardness channel and a shifted domain.

    Class means sit at +-separation along a seeded unit direction; target-domain
    means are pulled toward the boundary by ``target_shift``.  The privileged
    feature is the sample's distance to the optimal boundary, signed by its
    label, plus ``priv_noise`` Gaussian noise.
    """

    n_per_class: int = 50
    dim: int = 6
    separation: float = 1.2
    priv_noise: float = 0.3
    target_shift: float = 0.8
    target_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be at least 1")
        if self.dim < 1:
            raise ValueError("dim must be at least 1")
        if not self.separation > 0:
            raise ValueError("separation must be positive")
        if self.priv_noise < 0:
            raise ValueError("priv_noise must be nonnegative")
        if self.target_shift < 0:
            raise ValueError("target_shift must be nonnegative")
        if not 0.0 < self.target_fraction < 1.0:
            raise ValueError("target_fraction must be strictly between 0 and 1")


def make_synthetic(config: SynthConfig) -> TripletDataset:
    """Deterministic draw from the generator described on ``SynthConfig``."""
    rng = np.random.default_rng(config.seed)
    u = rng.standard_normal(config.dim)
    u = u / np.linalg.norm(u)
    n_target = int(round(config.target_fraction * config.n_per_class))
    n_source = config.n_per_class - n_target

    blocks_X, blocks_y, blocks_tag = [], [], []
    for label in (1, -1):
        for tag, count in (("source", n_source), ("target", n_target)):
            sep = config.separation - (config.target_shift if tag == "target" else 0.0)
            mean = label * sep * u
            blocks_X.append(mean + rng.standard_normal((count, config.dim)))
            blocks_y.append(np.full(count, label, dtype=int))
            blocks_tag.append(np.full(count, tag))
    X = np.vstack(blocks_X)
    y = np.concatenate(blocks_y)
    tags = np.concatenate(blocks_tag)
    margins = X @ u
    noise = rng.standard_normal(X.shape[0]) * config.priv_noise
    xstar = (y * np.abs(margins) + noise).reshape(-1, 1)
    # category ids, so the pairwise protocol can group rows into classes
    ids = np.where(y > 0, "pos", "neg")
    return TripletDataset(X=X, Xstar=xstar, y=y, domain_tag=tags, ids=ids)


def _largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    """Integer quotas summing to ``total`` proportional to ``weights``."""
    weights = np.asarray(weights, dtype=float)
    if weights.sum() <= 0:
        out = np.zeros(weights.shape[0], dtype=int)
        out[: total] = 1
        return out
    exact = total * weights / weights.sum()
    quotas = np.floor(exact).astype(int)
    short = total - int(quotas.sum())
    if short > 0:
        order = np.argsort(-(exact - quotas), kind="stable")
        quotas[order[:short]] += 1
    return quotas


def _rng_from(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def split_train_test(data: TripletDataset, n_train_per_class: int, seed,
                     n_test_per_class: int | None = None):
    """Per-class sampling without replacement into a train/test pair.

    When domain tags are present the per-class draw is split across domains
    proportionally to their share of that class (largest-remainder rounding),
    for both the train count and the optional test cap.
    """
    rng = _rng_from(seed)
    if n_train_per_class < 1:
        raise ValueError("n_train_per_class must be at least 1")
    train_idx, test_idx = [], []
    for label in np.unique(data.y):
        cls = np.flatnonzero(data.y == label)
        if cls.size < n_train_per_class + 1:
            raise TooFewSamples(
                f"class {label:+d} has {cls.size} rows; "
                f"need more than {n_train_per_class}"
            )
        if data.has_domains:
            groups = [cls[data.domain_tag[cls] == tag] for tag in DOMAIN_TAGS]
            groups = [g for g in groups if g.size]
        else:
            groups = [cls]
        counts = _largest_remainder(n_train_per_class, np.array([g.size for g in groups]))
        rest_groups = []
        for group, take in zip(groups, counts):
            if take > group.size:
                raise TooFewSamples(
                    f"class {label:+d} cannot supply {take} training rows from one domain"
                )
            picked = rng.choice(group, size=take, replace=False)
            train_idx.append(picked)
            rest_groups.append(np.setdiff1d(group, picked))
        rest_sizes = np.array([g.size for g in rest_groups])
        if n_test_per_class is not None and rest_sizes.sum() > n_test_per_class:
            cap = _largest_remainder(n_test_per_class, rest_sizes)
            for group, take in zip(rest_groups, cap):
                take = min(take, group.size)
                picked = rng.choice(group, size=take, replace=False)
                test_idx.append(picked)
        else:
            test_idx.extend(rest_groups)
    train = np.sort(np.concatenate(train_idx))
    test = np.sort(np.concatenate(test_idx))
    return data.subset(train), data.subset(test)
