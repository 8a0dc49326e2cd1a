"""Model persistence: versioned binary containers and a CSV debug format.

A dictionary file is a fixed header (magic, version, M, K, atom source)
followed by the atoms as column-major little-endian float64, then the
optional per-atom source indices. Model files wrap a JSON metadata block
(weights, penalties, operator descriptor — all round-trip exact for float64)
plus the constituent dictionary/matrix blocks. Every writer is a pure
function of the model, so identical models produce byte-identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .ensemble import EnsembleModel, ExMLDModel, WeightVector
from .errors import ContractViolation, DataError
from .sisr import PairedDictionary, PairedEnsemble
from .sparse_coding import ATOM_SOURCES, Dictionary

DICT_MAGIC = b"ENSPDICT"
MODEL_MAGIC = b"ENSPMODL"
MATRIX_MAGIC = b"ENSPMATX"
FORMAT_VERSION = 1

_DICT_HEADER = struct.Struct("<8sIQQBB")
_MODEL_HEADER = struct.Struct("<8sIBQ")
_MATRIX_HEADER = struct.Struct("<8sIQQ")

_MODEL_KINDS = ("dictionary", "ensemble", "exmld", "paired_ensemble")


def _matrix_bytes(matrix: np.ndarray) -> bytes:
    matrix = np.asarray(matrix, dtype="<f8")
    header = _MATRIX_HEADER.pack(MATRIX_MAGIC, FORMAT_VERSION,
                                 matrix.shape[0], matrix.shape[1])
    return header + matrix.tobytes(order="F")


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise DataError(f"truncated file while reading {what}")
    return data


def _read_matrix(fh) -> np.ndarray:
    magic, version, rows, cols = _MATRIX_HEADER.unpack(
        _read_exact(fh, _MATRIX_HEADER.size, "matrix header"))
    if magic != MATRIX_MAGIC:
        raise DataError(f"bad matrix block magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported matrix block version {version}")
    raw = _read_exact(fh, 8 * rows * cols, "matrix data")
    return np.frombuffer(raw, dtype="<f8").reshape((rows, cols), order="F").copy()


def dictionary_bytes(dictionary: Dictionary) -> bytes:
    """Serialized form of one dictionary (header + atoms + source indices)."""
    atoms = np.asarray(dictionary.atoms, dtype="<f8")
    m, k = atoms.shape
    has_sources = dictionary.source_indices is not None
    header = _DICT_HEADER.pack(
        DICT_MAGIC, FORMAT_VERSION, m, k,
        ATOM_SOURCES.index(dictionary.atom_source), int(has_sources),
    )
    payload = header + atoms.tobytes(order="F")
    if has_sources:
        payload += dictionary.source_indices.astype("<i8").tobytes()
    return payload


def _read_dictionary(fh) -> Dictionary:
    magic, version, m, k, source_idx, has_sources = _DICT_HEADER.unpack(
        _read_exact(fh, _DICT_HEADER.size, "dictionary header"))
    if magic != DICT_MAGIC:
        raise DataError(f"bad dictionary magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported dictionary version {version}")
    if source_idx >= len(ATOM_SOURCES):
        raise DataError(f"unknown atom source code {source_idx}")
    raw = _read_exact(fh, 8 * m * k, "dictionary atoms")
    atoms = np.frombuffer(raw, dtype="<f8").reshape((m, k), order="F").copy()
    sources = None
    if has_sources:
        raw = _read_exact(fh, 8 * k, "source indices")
        sources = np.frombuffer(raw, dtype="<i8").copy()
    try:
        return Dictionary(atoms, ATOM_SOURCES[source_idx], sources)
    except ContractViolation as err:
        raise DataError(f"stored dictionary violates invariants: {err}") from err


def save_dictionary(path, dictionary: Dictionary) -> None:
    with open(path, "wb") as fh:
        fh.write(dictionary_bytes(dictionary))


def load_dictionary(path) -> Dictionary:
    try:
        with open(path, "rb") as fh:
            return _read_dictionary(fh)
    except OSError as err:
        raise DataError(f"cannot read {path}: {err}") from err


def dictionary_to_csv(path, dictionary: Dictionary) -> None:
    """Debug CSV: one header row, then the atom matrix row by row."""
    lines = [f"atom_source,{dictionary.atom_source},"
             f"M,{dictionary.dim},K,{dictionary.n_atoms}"]
    for row in dictionary.atoms:
        lines.append(",".join(repr(float(v)) for v in row))
    if dictionary.source_indices is not None:
        lines.append("source_indices," +
                      ",".join(str(int(i)) for i in dictionary.source_indices))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def dictionary_from_csv(path) -> Dictionary:
    try:
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as err:
        raise DataError(f"cannot read {path}: {err}") from err
    if not lines:
        raise DataError(f"{path}: empty dictionary CSV")
    head = lines[0].split(",")
    if len(head) != 6 or head[0] != "atom_source" or head[2] != "M" or head[4] != "K":
        raise DataError(f"{path}: malformed dictionary CSV header")
    source, m, k = head[1], int(head[3]), int(head[5])
    sources = None
    data_lines = lines[1:]
    if data_lines and data_lines[-1].startswith("source_indices,"):
        sources = np.asarray(
            [int(v) for v in data_lines[-1].split(",")[1:]], dtype=np.int64)
        data_lines = data_lines[:-1]
    if len(data_lines) != m:
        raise DataError(f"{path}: expected {m} matrix rows, found {len(data_lines)}")
    try:
        atoms = np.asarray([[float(v) for v in ln.split(",")] for ln in data_lines])
    except ValueError as err:
        raise DataError(f"{path}: non-numeric matrix cell ({err})") from err
    if atoms.shape != (m, k):
        raise DataError(f"{path}: matrix shape {atoms.shape} != header ({m}, {k})")
    try:
        return Dictionary(atoms, source, sources)
    except ContractViolation as err:
        raise DataError(f"{path}: stored dictionary violates invariants: {err}") from err


def _meta_block(meta: dict) -> bytes:
    encoded = json.dumps(meta, sort_keys=True).encode("utf-8")
    return struct.pack("<Q", len(encoded)) + encoded


def _read_meta(fh) -> dict:
    (length,) = struct.unpack("<Q", _read_exact(fh, 8, "metadata length"))
    return json.loads(_read_exact(fh, length, "metadata").decode("utf-8"))


def _float_list(values) -> list | None:
    return None if values is None else [float(v) for v in values]


def save_model(path, model) -> None:
    """Persist any trained model; the container records which kind it holds."""
    if isinstance(model, Dictionary):
        kind, meta, blocks = "dictionary", {}, [dictionary_bytes(model)]
    elif isinstance(model, EnsembleModel):
        kind = "ensemble"
        meta = {
            "method": model.method,
            "lambda_train": model.lambda_train,
            "constraint_case": model.betas.constraint_case,
            "betas": _float_list(model.betas.betas),
            "alphas": _float_list(model.alphas),
            "trained_operator": model.trained_operator,
            "n_dictionaries": model.n_models,
        }
        blocks = [dictionary_bytes(d) for d in model.dictionaries]
    elif isinstance(model, ExMLDModel):
        kind = "exmld"
        meta = {
            "atoms_per_level": model.atoms_per_level,
            "n_models": model.n_models,
            "level_sizes": [len(bank) for bank in model.level_dictionaries],
            "level_energies": _float_list(model.level_energies),
        }
        blocks = [dictionary_bytes(d)
                  for bank in model.level_dictionaries for d in bank]
    elif isinstance(model, PairedEnsemble):
        kind = "paired_ensemble"
        meta = {
            "method": model.method,
            "scale": model.scale,
            "patch_size": model.patch_size,
            "lambda_train": model.lambda_train,
            "constraint_case": model.betas.constraint_case,
            "betas": _float_list(model.betas.betas),
            "alphas": _float_list(model.alphas),
            "n_pairs": model.n_models,
        }
        blocks = []
        for pair in model.pairs:
            blocks.append(dictionary_bytes(pair.lo))
            blocks.append(_matrix_bytes(pair.hi_atoms))
    else:
        raise ContractViolation(f"cannot serialize model type {type(model).__name__}")
    header = _MODEL_HEADER.pack(MODEL_MAGIC, FORMAT_VERSION,
                                _MODEL_KINDS.index(kind), len(blocks))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(_meta_block(meta))
        for block in blocks:
            fh.write(block)


def load_model(path):
    """Load a model saved by :func:`save_model`; the stored kind is restored."""
    try:
        with open(path, "rb") as fh:
            magic, version, kind_idx, n_blocks = _MODEL_HEADER.unpack(
                _read_exact(fh, _MODEL_HEADER.size, "model header"))
            if magic != MODEL_MAGIC:
                raise DataError(f"{path}: not an ensparse model file")
            if version != FORMAT_VERSION:
                raise DataError(f"{path}: unsupported model version {version}")
            if kind_idx >= len(_MODEL_KINDS):
                raise DataError(f"{path}: unknown model kind code {kind_idx}")
            kind = _MODEL_KINDS[kind_idx]
            meta = _read_meta(fh)
            if kind == "dictionary":
                return _read_dictionary(fh)
            if kind == "ensemble":
                dicts = [_read_dictionary(fh) for _ in range(n_blocks)]
                betas = WeightVector(np.asarray(meta["betas"]),
                                     meta["constraint_case"])
                alphas = meta["alphas"]
                return EnsembleModel(
                    dicts, betas,
                    None if alphas is None else np.asarray(alphas),
                    meta["lambda_train"], meta["trained_operator"],
                    meta["method"],
                )
            if kind == "exmld":
                banks = []
                for size in meta["level_sizes"]:
                    banks.append([_read_dictionary(fh) for _ in range(size)])
                return ExMLDModel(banks, meta["atoms_per_level"],
                                  meta["n_models"],
                                  np.asarray(meta["level_energies"]))
            pairs = []
            for _ in range(meta["n_pairs"]):
                lo = _read_dictionary(fh)
                hi = _read_matrix(fh)
                pairs.append(PairedDictionary(lo, hi))
            betas = WeightVector(np.asarray(meta["betas"]),
                                 meta["constraint_case"])
            alphas = meta["alphas"]
            return PairedEnsemble(
                pairs, betas, None if alphas is None else np.asarray(alphas),
                meta["method"], meta["scale"], meta["patch_size"],
                meta["lambda_train"],
            )
    except OSError as err:
        raise DataError(f"cannot read {path}: {err}") from err
    except (KeyError, ValueError, struct.error) as err:
        raise DataError(f"{path}: corrupt model file ({err})") from err
