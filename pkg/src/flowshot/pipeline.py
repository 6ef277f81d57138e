"""End-to-end orchestration: joint encoder+SSL training, decoder training,
evaluation, k-sweeps, and model persistence.

Everything is full-graph (no minibatching) and deterministic: all
randomness flows from ``TrainConfig.seed`` through fixed named substreams,
so a (config, seed, input) triple fully determines every output byte
except wall-clock timings.
"""

from __future__ import annotations

import base64
import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .data import (
    FlowDataset,
    Scaler,
    SyntheticConfig,
    apply_scaler,
    fit_scaler,
    generate_synthetic,
    load_flows,
    sample_fraction,
    train_test_split,
)
from .encoder import EncoderParams, encode, encode_graph, init_encoder_params
from .errors import ConfigError, DataError, ModelFormatError, NumericError
from .fewshot import (
    DecoderParams,
    FewShotSelection,
    bce_mean,
    classify,
    decode,
    init_decoder_params,
    select_few_shot,
)
from .graph import NEIGHBORHOOD_MODES, FlowGraph, build_graph
from .metrics import MetricsReport, embedding_separation, evaluate
from .objectives import (
    AUGMENTATION_PRESETS,
    LossBreakdown,
    SslParams,
    combine_loss_terms,
    contrastive_loss,
    corrupt,
    discriminate,
    init_ssl_params,
    readout,
    recon_losses,
    reconstruct,
)

IMPROVEMENT_EPS = 1e-5
MLP_HIDDEN = 128

# named substreams hanging off the master seed
_STREAM_SAMPLE = 0
_STREAM_SPLIT = 1
_STREAM_SELECT = 2
_STREAM_ENC_INIT = 3
_STREAM_AUG = 4
_STREAM_DEC_INIT = 5


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(stream,)))


@dataclass
class TrainConfig:
    """Hyperparameters for one pipeline run; defaults follow the reference
    training recipe (128-wide single encoder layer, Adam with decoupled
    weight decay, alpha/beta trade-off of 0.2/0.8, 5% assumed-benign
    supplement, 10% data sample, 70/30 split)."""

    hidden: int = 128
    encoder_epochs_max: int = 600
    encoder_patience: int = 150
    decoder_epochs_max: int = 4000
    decoder_patience: int = 1500
    lr_encoder: float = 1e-3
    wd_encoder: float = 1e-2
    lr_decoder: float = 1e-3
    wd_decoder: float = 1e-5
    alpha: float = 0.2
    beta: float = 0.8
    k: int = 1
    benign_frac: float = 0.05
    augmentation: str = "dgi_default"
    ssl_mode: str = "hybrid"
    decoder_mode: str = "few_shot"
    recon_reduction: str = "mean"
    sample_frac: float = 0.1
    train_frac: float = 0.7
    neighborhood: str = "both"
    seed: int = 0

    def validate(self) -> None:
        if self.hidden < 1:
            raise ConfigError(f"hidden must be >= 1, got {self.hidden}")
        for name in ("lr_encoder", "lr_decoder"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("wd_encoder", "wd_decoder", "alpha", "beta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not (0 <= self.encoder_patience <= self.encoder_epochs_max):
            raise ConfigError("encoder_patience must lie in [0, encoder_epochs_max]")
        if not (0 <= self.decoder_patience <= self.decoder_epochs_max):
            raise ConfigError("decoder_patience must lie in [0, decoder_epochs_max]")
        if self.k < 0:
            raise ConfigError(f"k must be >= 0, got {self.k}")
        if not (0.0 <= self.benign_frac <= 1.0):
            raise ConfigError(f"benign_frac must be in [0, 1], got {self.benign_frac}")
        if self.augmentation not in AUGMENTATION_PRESETS:
            raise ConfigError(
                f"unknown augmentation preset '{self.augmentation}', "
                f"choose from {sorted(AUGMENTATION_PRESETS)}"
            )
        if self.ssl_mode not in ("hybrid", "dgi_only"):
            raise ConfigError(f"ssl_mode must be 'hybrid' or 'dgi_only', got '{self.ssl_mode}'")
        if self.decoder_mode not in ("few_shot", "supervised"):
            raise ConfigError(
                f"decoder_mode must be 'few_shot' or 'supervised', got '{self.decoder_mode}'"
            )
        if self.recon_reduction not in ("mean", "sum"):
            raise ConfigError(
                f"recon_reduction must be 'mean' or 'sum', got '{self.recon_reduction}'"
            )
        if not (0.0 < self.sample_frac <= 1.0):
            raise ConfigError(f"sample_frac must be in (0, 1], got {self.sample_frac}")
        if not (0.0 < self.train_frac < 1.0):
            raise ConfigError(f"train_frac must be in (0, 1), got {self.train_frac}")
        if self.neighborhood not in NEIGHBORHOOD_MODES:
            raise ConfigError(f"neighborhood must be one of {NEIGHBORHOOD_MODES}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclass
class TrainHistory:
    encoder: list[LossBreakdown] = field(default_factory=list)
    decoder: list[float] = field(default_factory=list)
    best_encoder_epoch: int = -1
    best_decoder_epoch: int = -1


@dataclass
class ModelParams:
    """Everything needed to score new flows: weights, scaler, config."""

    encoder: EncoderParams
    ssl: SslParams
    decoder: DecoderParams
    scaler: Scaler
    config: TrainConfig


def _snapshot(params: list[ag.Param]) -> list[np.ndarray]:
    return [p.value.copy() for p in params]


def _restore(params: list[ag.Param], values: list[np.ndarray]) -> None:
    for p, v in zip(params, values):
        p.value[:] = v


def train_encoder(
    g_train: FlowGraph, selection: FewShotSelection, cfg: TrainConfig
) -> tuple[EncoderParams, SslParams, TrainHistory]:
    """Jointly train the encoder and SSL weights on the training graph.

    Each epoch re-corrupts the graph, scores positive vs negative edges
    against the positive summary, reconstructs the positive view's
    surviving original edges, and takes one Adam step on the combined
    objective. ``ssl_mode='dgi_only'`` runs the identical op sequence with
    the reconstruction coefficients forced to zero, so the two modes stay
    bit-comparable. Early stopping restores the best-loss epoch's weights.
    """
    cfg.validate()
    init_rng = _rng(cfg.seed, _STREAM_ENC_INIT)
    aug_rng = _rng(cfg.seed, _STREAM_AUG)
    enc = init_encoder_params(g_train.feature_dim, cfg.hidden, init_rng)
    ssl = init_ssl_params(cfg.hidden, g_train.feature_dim, init_rng)
    params = enc.all() + ssl.all()

    hybrid = cfg.ssl_mode == "hybrid"
    alpha = cfg.alpha if hybrid else 0.0
    beta = cfg.beta if hybrid else 0.0
    aug_pos, aug_neg = AUGMENTATION_PRESETS[cfg.augmentation]
    mal_mask_base = selection.mal_mask(g_train.num_edges)

    history = TrainHistory()
    best_total = np.inf
    best_values: list[np.ndarray] | None = None
    bad_epochs = 0

    for epoch in range(cfg.encoder_epochs_max):
        g_pos = corrupt(g_train, aug_pos, aug_rng)
        g_neg = corrupt(g_train, aug_neg, aug_rng)
        with ag.Tape() as tape:
            h_pos = encode(g_pos, ag.Tensor(g_pos.X), enc, cfg.neighborhood)
            h_neg = encode(g_neg, ag.Tensor(g_neg.X), enc, cfg.neighborhood)
            summary = readout(h_pos)
            p_pos = discriminate(h_pos, summary, ssl.w_disc)
            p_neg = discriminate(h_neg, summary, ssl.w_disc)
            l_con = contrastive_loss(p_pos, p_neg)

            x_hat = reconstruct(h_pos, ssl.w_rec)
            origin = g_pos.edge_origin
            original_rows = np.flatnonzero(origin >= 0)
            if original_rows.size == g_pos.num_edges:
                x_hat_orig, x_target = x_hat, g_pos.X
                mask = mal_mask_base[origin]
            else:
                # synthetic edges added by the augmentation are excluded
                # from both reconstruction terms
                x_hat_orig = ag.gather_rows(x_hat, original_rows)
                x_target = g_pos.X[original_rows]
                mask = mal_mask_base[origin[original_rows]]
            l_few, l_rest = recon_losses(x_target, x_hat_orig, mask, cfg.recon_reduction)
            total_t, breakdown = combine_loss_terms(l_con, l_few, l_rest, alpha, beta)
        if not np.isfinite(breakdown.total):
            raise NumericError(f"non-finite encoder loss at epoch {epoch}: {breakdown}")
        tape.backward(total_t)
        ag.adam_step(params, lr=cfg.lr_encoder, weight_decay=cfg.wd_encoder)
        history.encoder.append(breakdown)

        if best_total - breakdown.total >= IMPROVEMENT_EPS:
            best_total = breakdown.total
            best_values = _snapshot(params)
            history.best_encoder_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.encoder_patience:
                break

    if best_values is not None:
        _restore(params, best_values)
    return enc, ssl, history


def train_decoder(
    h_train: np.ndarray,
    selection: FewShotSelection,
    cfg: TrainConfig,
    all_labels: np.ndarray | None = None,
    history: TrainHistory | None = None,
) -> tuple[DecoderParams, TrainHistory]:
    """Fit the MLP head on frozen embeddings.

    ``few_shot`` mode trains on the selected edges with their assumed
    labels; ``supervised`` mode trains on every training edge with its true
    label (requires ``all_labels``). Encoder weights are never touched.
    """
    cfg.validate()
    if cfg.decoder_mode == "supervised":
        if all_labels is None:
            raise DataError("supervised decoder_mode needs the full label vector")
        idx = np.arange(h_train.shape[0])
        targets = np.asarray(all_labels, dtype=np.int8)
    else:
        idx = selection.edges
        targets = selection.labels
    if idx.size == 0:
        raise DataError("train_decoder: empty selection")

    rng = _rng(cfg.seed, _STREAM_DEC_INIT)
    dec = init_decoder_params(h_train.shape[1], rng, mlp_hidden=MLP_HIDDEN)
    params = dec.all()
    h_sel = np.ascontiguousarray(h_train[idx])

    history = history if history is not None else TrainHistory()
    best_loss = np.inf
    best_values: list[np.ndarray] | None = None
    bad_epochs = 0

    for epoch in range(cfg.decoder_epochs_max):
        with ag.Tape() as tape:
            probs = decode(ag.Tensor(h_sel), dec)
            loss_t = bce_mean(probs, targets)
        loss = loss_t.item()
        if not np.isfinite(loss):
            raise NumericError(f"non-finite decoder loss at epoch {epoch}")
        tape.backward(loss_t)
        ag.adam_step(params, lr=cfg.lr_decoder, weight_decay=cfg.wd_decoder)
        history.decoder.append(loss)

        if best_loss - loss >= IMPROVEMENT_EPS:
            best_loss = loss
            best_values = _snapshot(params)
            history.best_decoder_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.decoder_patience:
                break

    if best_values is not None:
        _restore(params, best_values)
    return dec, history


@dataclass
class PipelineResult:
    metrics: MetricsReport
    model: ModelParams
    history: TrainHistory
    selection: FewShotSelection
    g_train: FlowGraph
    g_test: FlowGraph
    h_train: np.ndarray
    h_test: np.ndarray
    test_probs: np.ndarray
    predictions: np.ndarray
    separation: float | None


def run_pipeline(cfg: TrainConfig, source) -> PipelineResult:
    """Load/generate -> sample -> split -> scale -> graphs -> train -> score.

    ``source`` is a flow-file path or a SyntheticConfig. The scaler is
    fitted on the train split only, the few-shot selection is drawn from the
    train graph only, and test labels are consulted only by the final
    evaluation. Test edges are embedded by running the frozen encoder on a
    graph built from test flows alone.
    """
    cfg.validate()
    started = time.perf_counter()
    if isinstance(source, SyntheticConfig):
        ds = generate_synthetic(source)
    else:
        ds = load_flows(source)

    ds = sample_fraction(ds, cfg.sample_frac, _rng(cfg.seed, _STREAM_SAMPLE))
    train_ds, test_ds = train_test_split(ds, cfg.train_frac, _rng(cfg.seed, _STREAM_SPLIT))
    scaler = fit_scaler(train_ds)
    g_train = build_graph(apply_scaler(train_ds, scaler))
    g_test = build_graph(apply_scaler(test_ds, scaler))

    selection = select_few_shot(g_train, cfg.k, cfg.benign_frac, _rng(cfg.seed, _STREAM_SELECT))
    enc, ssl, history = train_encoder(g_train, selection, cfg)
    h_train = encode_graph(g_train, enc, cfg.neighborhood)
    h_test = encode_graph(g_test, enc, cfg.neighborhood)
    dec, history = train_decoder(
        h_train, selection, cfg, all_labels=g_train.labels, history=history
    )

    test_probs = decode(ag.Tensor(h_test), dec).value.reshape(-1)
    predictions = classify(test_probs)
    metrics = evaluate(predictions, g_test.labels)
    metrics.runtime_seconds = time.perf_counter() - started
    try:
        separation = embedding_separation(h_test, g_test.labels)
    except DataError:
        separation = None

    model = ModelParams(encoder=enc, ssl=ssl, decoder=dec, scaler=scaler, config=cfg)
    return PipelineResult(
        metrics=metrics,
        model=model,
        history=history,
        selection=selection,
        g_train=g_train,
        g_test=g_test,
        h_train=h_train,
        h_test=h_test,
        test_probs=test_probs,
        predictions=predictions,
        separation=separation,
    )


def predict(model: ModelParams, ds: FlowDataset, threshold: float = 0.5):
    """Score a raw dataset with a trained model.

    Returns (graph, embeddings, probabilities, predictions); the dataset is
    normalized with the model's own scaler.
    """
    g = build_graph(apply_scaler(ds, model.scaler))
    h = encode_graph(g, model.encoder, model.config.neighborhood)
    probs = decode(ag.Tensor(h), model.decoder).value.reshape(-1)
    return g, h, probs, classify(probs, threshold)


def k_sweep(cfg: TrainConfig, k_values, source) -> list[dict]:
    """Run the pipeline once per k with a derived seed; returns table rows."""
    rows = []
    for k in k_values:
        if k < 0:
            raise ConfigError(f"k values must be >= 0, got {k}")
        derived = int(
            np.random.SeedSequence(entropy=(cfg.seed, 7919 + k)).generate_state(1)[0]
        )
        cfg_k = dataclasses.replace(cfg, k=k, seed=derived)
        result = run_pipeline(cfg_k, source)
        rows.append(
            {
                "k": int(k),
                "macro_f1": result.metrics.macro_f1,
                "attack_precision": result.metrics.attack_precision,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# persistence


MODEL_FORMAT = "flowshot-model"
MODEL_VERSION = 1

_WEIGHT_ORDER = ("w_agg", "w_edge", "w_disc", "w_rec", "dec_w1", "dec_b1", "dec_w2", "dec_b2")


def _encode_array(a: np.ndarray) -> dict:
    return {
        "shape": list(a.shape),
        "dtype": str(a.dtype),
        "data": base64.b64encode(np.ascontiguousarray(a).tobytes()).decode("ascii"),
    }


def _decode_array(d: dict) -> np.ndarray:
    try:
        raw = base64.b64decode(d["data"])
        arr = np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ModelFormatError(f"bad array record in model file: {exc}") from None
    return arr.copy()


def save_model(model: ModelParams, path) -> None:
    """Versioned JSON container; identical models serialize byte-identically."""
    weights = {
        "w_agg": model.encoder.w_agg.value,
        "w_edge": model.encoder.w_edge.value,
        "w_disc": model.ssl.w_disc.value,
        "w_rec": model.ssl.w_rec.value,
        "dec_w1": model.decoder.w1.value,
        "dec_b1": model.decoder.b1.value,
        "dec_w2": model.decoder.w2.value,
        "dec_b2": model.decoder.b2.value,
    }
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config": model.config.to_dict(),
        "scaler": {
            "clip_lo": _encode_array(model.scaler.clip_lo),
            "clip_hi": _encode_array(model.scaler.clip_hi),
        },
        "weights": {name: _encode_array(weights[name]) for name in _WEIGHT_ORDER},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(path) -> ModelParams:
    """Parse and validate a model file; any inconsistency aborts the load."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"{path}: not a valid model file ({exc})") from None
    if doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path}: unrecognized format tag {doc.get('format')!r}")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(
            f"{path}: unsupported version {doc.get('version')!r}, expected {MODEL_VERSION}"
        )
    try:
        cfg = TrainConfig.from_dict(doc["config"])
        arrays = {name: _decode_array(doc["weights"][name]) for name in _WEIGHT_ORDER}
        scaler = Scaler(
            clip_lo=_decode_array(doc["scaler"]["clip_lo"]),
            clip_hi=_decode_array(doc["scaler"]["clip_hi"]),
        )
    except KeyError as exc:
        raise ModelFormatError(f"{path}: missing entry {exc}") from None

    hidden = arrays["w_agg"].shape[1]
    feat = arrays["w_agg"].shape[0]
    checks = {
        "w_edge": (2 * hidden, hidden),
        "w_disc": (hidden, hidden),
        "w_rec": (hidden, feat),
        "dec_b1": (1, arrays["dec_w1"].shape[1]),
        "dec_w2": (arrays["dec_w1"].shape[1], 1),
        "dec_b2": (1, 1),
    }
    if arrays["dec_w1"].shape[0] != hidden:
        raise ModelFormatError(f"{path}: decoder input dim {arrays['dec_w1'].shape[0]} != {hidden}")
    for name, shape in checks.items():
        if tuple(arrays[name].shape) != shape:
            raise ModelFormatError(
                f"{path}: weight '{name}' has shape {arrays[name].shape}, expected {shape}"
            )
    if scaler.clip_lo.shape != (feat,) or scaler.clip_hi.shape != (feat,):
        raise ModelFormatError(f"{path}: scaler length disagrees with feature dim {feat}")

    encoder = EncoderParams(
        w_agg=ag.Param(arrays["w_agg"], "w_agg"), w_edge=ag.Param(arrays["w_edge"], "w_edge")
    )
    ssl = SslParams(
        w_disc=ag.Param(arrays["w_disc"], "w_disc"), w_rec=ag.Param(arrays["w_rec"], "w_rec")
    )
    decoder = DecoderParams(
        w1=ag.Param(arrays["dec_w1"], "dec_w1"),
        b1=ag.Param(arrays["dec_b1"], "dec_b1"),
        w2=ag.Param(arrays["dec_w2"], "dec_w2"),
        b2=ag.Param(arrays["dec_b2"], "dec_b2"),
    )
    return ModelParams(encoder=encoder, ssl=ssl, decoder=decoder, scaler=scaler, config=cfg)


def export_embeddings(h: np.ndarray, labels: np.ndarray, path, fewshot_mask=None) -> None:
    """Delimited text: one row per edge with the embedding, its label, and a
    flag marking labeled few-shot edges."""
    labels = np.asarray(labels).reshape(-1)
    if h.shape[0] != labels.shape[0]:
        raise DataError(f"export: {h.shape[0]} embeddings vs {labels.shape[0]} labels")
    if fewshot_mask is None:
        fewshot_mask = np.zeros(h.shape[0], dtype=bool)
    fewshot_mask = np.asarray(fewshot_mask, dtype=bool).reshape(-1)
    if fewshot_mask.shape[0] != h.shape[0]:
        raise DataError("export: few-shot flag length disagrees with embedding count")
    with open(path, "w") as fh:
        cols = [f"emb_{j}" for j in range(h.shape[1])] + ["label", "few_shot"]
        fh.write(",".join(cols) + "\n")
        for i in range(h.shape[0]):
            vals = [repr(float(v)) for v in h[i]]
            fh.write(",".join(vals + [str(int(labels[i])), str(int(fewshot_mask[i]))]) + "\n")


def write_sweep_table(rows: list[dict], path) -> None:
    with open(path, "w") as fh:
        fh.write("k,macro_f1,attack_precision\n")
        for row in rows:
            fh.write(f"{row['k']},{row['macro_f1']!r},{row['attack_precision']!r}\n")
