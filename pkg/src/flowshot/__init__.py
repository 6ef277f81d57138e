"""Few-shot self-supervised GNN detection of malicious NetFlow edges.

A host graph is built from flow records (hosts as nodes, flows as feature-
carrying edges), a one-layer GNN encoder is trained with a hybrid
contrastive + few-shot-aware reconstruction objective, and a small MLP head
classifies edge embeddings using as little as one labeled malicious edge
per attack family.
"""

from .autograd import Param, Tape, Tensor, adam_step, grad_check, xavier_init
from .data import (
    ColumnMapping,
    FamilySpec,
    FlowDataset,
    FlowRecord,
    Scaler,
    SyntheticConfig,
    apply_scaler,
    fit_scaler,
    generate_synthetic,
    load_flows,
    sample_fraction,
    save_flows,
    synthetic_preset,
    train_test_split,
)
from .encoder import EncoderParams, encode, encode_graph, encode_pair, init_encoder_params
from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    FlowshotError,
    ModelFormatError,
    NumericError,
    ParseError,
    SchemaError,
)
from .fewshot import (
    DecoderParams,
    FewShotSelection,
    classify,
    decode,
    decoder_loss,
    init_decoder_params,
    select_few_shot,
)
from .graph import FlowGraph, aggregate_neighbor_edges, build_graph, endpoint_concat
from .metrics import MetricsReport, embedding_separation, evaluate
from .objectives import (
    AUGMENTATION_PRESETS,
    AugmentationSpec,
    LossBreakdown,
    SslParams,
    contrastive_loss,
    corrupt,
    discriminate,
    hybrid_loss,
    init_ssl_params,
    readout,
    recon_losses,
    reconstruct,
)
from .pipeline import (
    ModelParams,
    PipelineResult,
    TrainConfig,
    TrainHistory,
    export_embeddings,
    k_sweep,
    load_model,
    predict,
    run_pipeline,
    save_model,
    train_decoder,
    train_encoder,
    write_sweep_table,
)

__version__ = "0.1.0"
