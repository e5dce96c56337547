"""Masked-transformer synthesizer for heterogeneous tabular data."""

from .codec import (
    CategoricalCodec,
    ContinuousCodec,
    decode_table,
    encode_table,
    fit_categorical,
    fit_codecs,
    fit_continuous,
)
from .generation import GenerationSpec, generate, impute
from .model import ModelConfig, TabMTModel
from .schema import (
    MISSING,
    FieldSchema,
    RawTable,
    TableSchema,
    TokenTable,
    drop_values,
    infer_schema,
    load_csv,
    load_schema,
    save_schema,
    split,
    write_csv,
)
from .training import TrainConfig, sample_mask, train, training_step

__all__ = [
    "CategoricalCodec",
    "ContinuousCodec",
    "FieldSchema",
    "GenerationSpec",
    "MISSING",
    "ModelConfig",
    "RawTable",
    "TabMTModel",
    "TableSchema",
    "TokenTable",
    "TrainConfig",
    "decode_table",
    "drop_values",
    "encode_table",
    "fit_categorical",
    "fit_codecs",
    "fit_continuous",
    "generate",
    "impute",
    "infer_schema",
    "load_csv",
    "load_schema",
    "sample_mask",
    "save_schema",
    "split",
    "train",
    "training_step",
    "write_csv",
]

__version__ = "0.1.0"
