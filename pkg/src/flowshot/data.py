"""NetFlow-style dataset ingestion, normalization, splitting, and synthesis.

Flows live in comma-separated files with a header row. The canonical layout
follows the NetFlow v2 datasets: an ``IPV4_SRC_ADDR`` / ``IPV4_DST_ADDR``
pair of endpoint columns, numeric feature columns, a binary ``Label`` and an
``Attack`` family column. Feature columns default to "every column that is
not an endpoint/label/family column", in file order, so real exports load
without listing all 43 names.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DimensionError, ParseError, SchemaError

BENIGN = 0
ATTACK = 1

# Family cell written for benign rows, matching the public NF-v2 exports.
_BENIGN_FAMILY_CELL = "Benign"


@dataclass
class FlowRecord:
    """One flow: endpoints, raw features, label, optional attack family."""

    src_addr: str
    dst_addr: str
    features: np.ndarray
    label: int
    family: str | None


@dataclass
class ColumnMapping:
    """Names the roles of the columns in a delimited flow file.

    ``features=None`` selects every remaining column in file order.
    """

    src: str = "IPV4_SRC_ADDR"
    dst: str = "IPV4_DST_ADDR"
    label: str = "Label"
    family: str = "Attack"
    features: list[str] | None = None


class FlowDataset:
    """Columnar store of flow records sharing one feature schema."""

    def __init__(
        self,
        schema: list[str],
        src: np.ndarray,
        dst: np.ndarray,
        features: np.ndarray,
        labels: np.ndarray,
        families: np.ndarray,
        provenance: str = "",
    ) -> None:
        n = len(src)
        if not (len(dst) == features.shape[0] == len(labels) == len(families) == n):
            raise DataError("column arrays disagree on record count")
        if features.shape[1] != len(schema):
            raise DataError(
                f"feature matrix has {features.shape[1]} columns, schema names {len(schema)}"
            )
        self.schema = list(schema)
        self.src = np.asarray(src, dtype=object)
        self.dst = np.asarray(dst, dtype=object)
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int8)
        self.families = np.asarray(families, dtype=object)
        self.provenance = provenance

    def __len__(self) -> int:
        return len(self.src)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def record(self, i: int) -> FlowRecord:
        return FlowRecord(
            src_addr=self.src[i],
            dst_addr=self.dst[i],
            features=self.features[i].copy(),
            label=int(self.labels[i]),
            family=self.families[i],
        )

    def subset(self, idx: np.ndarray, provenance: str | None = None) -> "FlowDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return FlowDataset(
            schema=self.schema,
            src=self.src[idx],
            dst=self.dst[idx],
            features=self.features[idx],
            labels=self.labels[idx],
            families=self.families[idx],
            provenance=self.provenance if provenance is None else provenance,
        )

    def attack_families(self) -> list[str]:
        """Distinct family names among attack records, sorted."""
        return sorted({f for f in self.families if f is not None})


def load_flows(path, mapping: ColumnMapping | None = None) -> FlowDataset:
    """Read a delimited flow file into a FlowDataset.

    Non-numeric feature cells and malformed labels are hard errors naming
    the offending row; silent row-skipping would corrupt graph topology.
    """
    mapping = mapping or ColumnMapping()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        col_of = {name: i for i, name in enumerate(header)}
        for role, name in (
            ("source address", mapping.src),
            ("destination address", mapping.dst),
            ("label", mapping.label),
            ("family", mapping.family),
        ):
            if name not in col_of:
                raise SchemaError(f"{path}: missing {role} column '{name}'")
        if mapping.features is None:
            reserved = {mapping.src, mapping.dst, mapping.label, mapping.family}
            feature_names = [h for h in header if h not in reserved]
        else:
            feature_names = list(mapping.features)
            for name in feature_names:
                if name not in col_of:
                    raise SchemaError(f"{path}: missing feature column '{name}'")
        feat_idx = [col_of[name] for name in feature_names]
        src_i, dst_i = col_of[mapping.src], col_of[mapping.dst]
        label_i, family_i = col_of[mapping.label], col_of[mapping.family]

        src, dst, rows, labels, families = [], [], [], [], []
        for r, cells in enumerate(reader):
            if len(cells) != len(header):
                raise ParseError(f"{path}: row {r}: expected {len(header)} cells, got {len(cells)}")
            try:
                feats = [float(cells[i]) for i in feat_idx]
            except ValueError as exc:
                raise ParseError(f"{path}: row {r}: non-numeric feature cell ({exc})") from None
            try:
                label = float(cells[label_i])
            except ValueError:
                raise ParseError(f"{path}: row {r}: non-numeric label '{cells[label_i]}'") from None
            if label not in (0.0, 1.0):
                raise ParseError(f"{path}: row {r}: label must be 0 or 1, got {cells[label_i]}")
            label = int(label)
            fam_cell = cells[family_i].strip()
            if label == ATTACK:
                if not fam_cell or fam_cell == _BENIGN_FAMILY_CELL:
                    raise ParseError(f"{path}: row {r}: attack row without a family name")
                family = fam_cell
            else:
                family = None
            src.append(cells[src_i])
            dst.append(cells[dst_i])
            rows.append(feats)
            labels.append(label)
            families.append(family)

    features = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(feature_names))
    return FlowDataset(
        schema=feature_names,
        src=np.asarray(src, dtype=object),
        dst=np.asarray(dst, dtype=object),
        features=features,
        labels=np.asarray(labels, dtype=np.int8),
        families=np.asarray(families, dtype=object),
        provenance=str(path),
    )


def save_flows(ds: FlowDataset, path, mapping: ColumnMapping | None = None) -> None:
    """Write a dataset back out in the same delimited format load_flows reads."""
    mapping = mapping or ColumnMapping()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([mapping.src, mapping.dst, *ds.schema, mapping.label, mapping.family])
        for i in range(len(ds)):
            fam = ds.families[i] if ds.families[i] is not None else _BENIGN_FAMILY_CELL
            writer.writerow(
                [ds.src[i], ds.dst[i]]
                + [repr(float(v)) for v in ds.features[i]]
                + [int(ds.labels[i]), fam]
            )


# ---------------------------------------------------------------------------
# normalization


@dataclass
class Scaler:
    """Per-feature quantile clip followed by an affine map into [0, 1].

    Constant features map to 0. Fitted on the training split only.
    """

    clip_lo: np.ndarray
    clip_hi: np.ndarray

    def transform(self, features: np.ndarray) -> np.ndarray:
        if features.shape[1] != self.clip_lo.shape[0]:
            raise DimensionError(
                f"scaler fitted for {self.clip_lo.shape[0]} features, "
                f"dataset has {features.shape[1]}"
            )
        span = self.clip_hi - self.clip_lo
        scale = np.where(span > 0, 1.0 / np.where(span > 0, span, 1.0), 0.0)
        clipped = np.clip(features, self.clip_lo, self.clip_hi)
        return (clipped - self.clip_lo) * scale


def fit_scaler(train: FlowDataset, q_low: float = 0.01, q_high: float = 0.99) -> Scaler:
    if len(train) == 0:
        raise DataError("fit_scaler: empty training dataset")
    if not (0.0 <= q_low < q_high <= 1.0):
        raise ConfigError(f"fit_scaler: bad quantiles ({q_low}, {q_high})")
    lo = np.quantile(train.features, q_low, axis=0)
    hi = np.quantile(train.features, q_high, axis=0)
    return Scaler(clip_lo=lo, clip_hi=hi)


def apply_scaler(ds: FlowDataset, scaler: Scaler) -> FlowDataset:
    """Normalized copy of the dataset; labels pass through untouched."""
    scaled = scaler.transform(ds.features)
    return FlowDataset(
        schema=ds.schema,
        src=ds.src,
        dst=ds.dst,
        features=scaled,
        labels=ds.labels,
        families=ds.families,
        provenance=ds.provenance,
    )


# ---------------------------------------------------------------------------
# sampling / splitting


def sample_fraction(ds: FlowDataset, frac: float, rng: np.random.Generator) -> FlowDataset:
    """Uniform subset without replacement of size round(frac * n), file order kept."""
    if not (0.0 < frac <= 1.0):
        raise ConfigError(f"sample_fraction: frac must be in (0, 1], got {frac}")
    n = len(ds)
    size = int(round(frac * n))
    if size >= n:
        return ds.subset(np.arange(n))
    idx = rng.choice(n, size=size, replace=False)
    return ds.subset(np.sort(idx))


def train_test_split(
    ds: FlowDataset, train_frac: float = 0.7, rng: np.random.Generator | None = None
) -> tuple[FlowDataset, FlowDataset]:
    """Disjoint, exhaustive random split; label-agnostic (no stratification)."""
    if not (0.0 < train_frac < 1.0):
        raise ConfigError(f"train_test_split: train_frac must be in (0, 1), got {train_frac}")
    if rng is None:
        rng = np.random.default_rng()
    n = len(ds)
    perm = rng.permutation(n)
    n_train = int(round(train_frac * n))
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return ds.subset(train_idx), ds.subset(test_idx)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class FamilySpec:
    """One attack family: mixture weight plus a feature Gaussian."""

    name: str
    weight: float
    mean: np.ndarray
    std: np.ndarray


@dataclass
class SyntheticConfig:
    """Generator settings for a desk-scale imbalanced flow dataset.

    Endpoints are drawn from ``n_hosts`` addresses with a small heavy-talker
    subset so degrees are skewed. Each family's flows originate from a few
    dedicated attacker hosts, which keeps attacks detectable from a one-hop
    neighborhood; victims come from the general population.
    """

    n_flows: int
    n_hosts: int
    attack_fraction: float
    families: list[FamilySpec]
    benign_mean: np.ndarray
    benign_std: np.ndarray
    seed: int
    heavy_talker_frac: float = 0.05
    heavy_talker_boost: float = 20.0
    attackers_per_family: int = 2

    def validate(self) -> None:
        if self.n_flows < 1 or self.n_hosts < 2:
            raise ConfigError("synthetic: need n_flows >= 1 and n_hosts >= 2")
        if not (0.0 < self.attack_fraction < 0.5):
            raise ConfigError(
                f"synthetic: attack_fraction must be in (0, 0.5), got {self.attack_fraction}"
            )
        if not self.families:
            raise ConfigError("synthetic: at least one attack family is required")
        total = sum(f.weight for f in self.families)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"synthetic: family weights sum to {total}, expected 1")
        d = len(self.benign_mean)
        if len(self.benign_std) != d:
            raise ConfigError("synthetic: benign mean/std lengths differ")
        for f in self.families:
            if len(f.mean) != d or len(f.std) != d:
                raise ConfigError(f"synthetic: family '{f.name}' mean/std length != {d}")
        reserved = self.attackers_per_family * len(self.families)
        if reserved + 2 > self.n_hosts:
            raise ConfigError("synthetic: too few hosts for the attacker assignment")


def _apportion(total: int, weights: list[float]) -> list[int]:
    """Largest-remainder division of ``total`` by ``weights`` (exact sum)."""
    raw = [total * w for w in weights]
    counts = [math.floor(x) for x in raw]
    remainders = sorted(range(len(raw)), key=lambda i: (raw[i] - counts[i], -i), reverse=True)
    for i in remainders[: total - sum(counts)]:
        counts[i] += 1
    return counts


def generate_synthetic(cfg: SyntheticConfig) -> FlowDataset:
    """Deterministic imbalanced flow dataset; features clipped to [0, 1]."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    d = len(cfg.benign_mean)
    hosts = np.array([f"10.{i // 65536}.{(i // 256) % 256}.{i % 256}" for i in range(cfg.n_hosts)])

    n_attack = int(round(cfg.attack_fraction * cfg.n_flows))
    n_benign = cfg.n_flows - n_attack
    fam_counts = _apportion(n_attack, [f.weight for f in cfg.families])

    attacker_pool = rng.choice(
        cfg.n_hosts, size=cfg.attackers_per_family * len(cfg.families), replace=False
    )
    fam_attackers = {
        f.name: attacker_pool[i * cfg.attackers_per_family : (i + 1) * cfg.attackers_per_family]
        for i, f in enumerate(cfg.families)
    }
    benign_pool = np.setdiff1d(np.arange(cfg.n_hosts), attacker_pool)

    # skewed degrees: a few hosts talk an order of magnitude more than the rest
    n_heavy = max(1, int(round(cfg.heavy_talker_frac * len(benign_pool))))
    heavy = rng.choice(len(benign_pool), size=n_heavy, replace=False)
    weights = np.ones(len(benign_pool))
    weights[heavy] = cfg.heavy_talker_boost
    weights /= weights.sum()

    def draw_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
        s = rng.choice(benign_pool, size=n, p=weights)
        t = rng.choice(benign_pool, size=n, p=weights)
        for _ in range(8):  # repair self-pairs; a residual self-loop is tolerated
            clash = s == t
            if not clash.any():
                break
            t[clash] = rng.choice(benign_pool, size=int(clash.sum()), p=weights)
        return s, t

    src_b, dst_b = draw_pairs(n_benign)
    feat_b = np.clip(rng.normal(cfg.benign_mean, cfg.benign_std, size=(n_benign, d)), 0.0, 1.0)

    src_parts, dst_parts, feat_parts, fam_parts = [src_b], [dst_b], [feat_b], [
        np.full(n_benign, None, dtype=object)
    ]
    for f, count in zip(cfg.families, fam_counts):
        src_parts.append(rng.choice(fam_attackers[f.name], size=count))
        dst_parts.append(rng.choice(benign_pool, size=count, p=weights))
        feat_parts.append(np.clip(rng.normal(f.mean, f.std, size=(count, d)), 0.0, 1.0))
        fam_parts.append(np.full(count, f.name, dtype=object))

    src_idx = np.concatenate(src_parts)
    dst_idx = np.concatenate(dst_parts)
    features = np.vstack(feat_parts)
    families = np.concatenate(fam_parts)
    labels = np.concatenate([np.zeros(n_benign, dtype=np.int8), np.ones(n_attack, dtype=np.int8)])

    perm = rng.permutation(cfg.n_flows)
    schema = [f"f{i:02d}" for i in range(d)]
    return FlowDataset(
        schema=schema,
        src=hosts[src_idx[perm]].astype(object),
        dst=hosts[dst_idx[perm]].astype(object),
        features=features[perm],
        labels=labels[perm],
        families=families[perm],
        provenance=f"synthetic(n={cfg.n_flows}, seed={cfg.seed})",
    )


def _blocked_family_means(
    n_families: int, d: int, base: float, shift: float
) -> list[np.ndarray]:
    """Family means that raise one disjoint block of features per family."""
    means = []
    block = d // n_families
    for j in range(n_families):
        m = np.full(d, base)
        hi = d if j == n_families - 1 else (j + 1) * block
        m[j * block : hi] = base + shift
        means.append(m)
    return means


def synthetic_preset(name: str, seed: int = 0, n_flows: int | None = None) -> SyntheticConfig:
    """Named generator presets.

    ``blobs3``: 10k flows, 2% attacks in 3 well-separated families (the
    desk-scale verification substrate). ``cse_like`` / ``unsw_like`` mirror
    the 12% / 6-family and 4% / 9-family imbalance regimes of the public
    NF-v2 datasets at a reduced flow count.
    """
    d = 43
    base, sigma = 0.40, 0.05
    benign_mean = np.full(d, base)
    benign_std = np.full(d, sigma)
    if name == "blobs3":
        n = n_flows if n_flows is not None else 10_000
        fams = [
            FamilySpec(nm, 1.0 / 3.0, mean, np.full(d, sigma))
            for nm, mean in zip(
                ("ddos", "bruteforce", "botnet"),
                _blocked_family_means(3, d, base, shift=0.30),
            )
        ]
        return SyntheticConfig(
            n_flows=n, n_hosts=120, attack_fraction=0.02, families=fams,
            benign_mean=benign_mean, benign_std=benign_std, seed=seed,
        )
    if name == "cse_like":
        n = n_flows if n_flows is not None else 20_000
        names = ("bruteforce", "bot", "dos", "ddos", "infiltration", "web")
        fams = [
            FamilySpec(nm, 1.0 / 6.0, mean, np.full(d, sigma))
            for nm, mean in zip(names, _blocked_family_means(6, d, base, shift=0.25))
        ]
        return SyntheticConfig(
            n_flows=n, n_hosts=200, attack_fraction=0.12, families=fams,
            benign_mean=benign_mean, benign_std=benign_std, seed=seed,
            attackers_per_family=3,
        )
    if name == "unsw_like":
        n = n_flows if n_flows is not None else 20_000
        names = (
            "fuzzers", "analysis", "backdoor", "dos", "exploits",
            "generic", "reconnaissance", "shellcode", "worms",
        )
        fams = [
            FamilySpec(nm, 1.0 / 9.0, mean, np.full(d, sigma))
            for nm, mean in zip(names, _blocked_family_means(9, d, base, shift=0.25))
        ]
        return SyntheticConfig(
            n_flows=n, n_hosts=200, attack_fraction=0.04, families=fams,
            benign_mean=benign_mean, benign_std=benign_std, seed=seed,
        )
    raise ConfigError(f"unknown synthetic preset '{name}'")
