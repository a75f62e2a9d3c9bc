"""Python bindings for the tesu library and command-line pipeline."""

from ._tesu import (
    REPETITION_PROMPT,
    Stack,
    TesuError,
    Vocab,
    build_vocab,
    config_hash,
    decode,
    dump_config,
    edit_distance,
    encode,
    load_checkpoint,
    normalize_text,
    render,
    run_cli,
    wer,
)

__all__ = [
    "REPETITION_PROMPT",
    "Stack",
    "TesuError",
    "Vocab",
    "build_vocab",
    "config_hash",
    "decode",
    "dump_config",
    "edit_distance",
    "encode",
    "load_checkpoint",
    "normalize_text",
    "render",
    "run_cli",
    "wer",
]
