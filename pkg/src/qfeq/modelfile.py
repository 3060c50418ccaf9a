"""Self-describing text serialization of equalizer models.

Format (one logical item per line)::

    qfeq-model v1
    config_hash: <hex>
    window_len: 81
    share_filters: false
    repr: quantized
    scheme: PTQ-8 uniform ptq b1=6 b2=8 act=8 b0=2 qbias=true
    actbook input uniform b=8 a=<float> c=<float>
    ...
    layer conv_x 2x41 q6
    book uniform b=6 a=<float> c=<float>
    payload <hex>
    layer dense_b 100 fp32
    payload <hex>

Full-precision payloads are little-endian float32 (8 hex chars per value —
the 32-bit storage baseline the size accounting assumes); quantized
payloads are little-endian uint16 codebook indices (4 hex chars per value).
Codebooks are stored by their generating parameters and rebuilt exactly on
load, so reloaded weights are bitwise codebook members.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .framefile import _atomic_write
from .model import ModelParams
from .quantize import (
    Codebook,
    ModelQuantization,
    QuantScheme,
    RangeMode,
    build_apot_codebook,
    build_pot_codebook,
    build_uniform_codebook,
)

_MAGIC = "qfeq-model v1"


def _hex_f32(arr: np.ndarray) -> str:
    return arr.astype("<f4").tobytes().hex()

def _unhex_f32(s: str, shape) -> np.ndarray:
    return np.frombuffer(bytes.fromhex(s), dtype="<f4").astype(np.float64).reshape(shape)


def _hex_u16(arr: np.ndarray) -> str:
    return arr.astype("<u2").tobytes().hex()


def _unhex_u16(s: str, shape) -> np.ndarray:
    return np.frombuffer(bytes.fromhex(s), dtype="<u2").astype(np.int64).reshape(shape)


def _book_line(book: Codebook) -> str:
    if book.scheme == "uniform":
        return f"book uniform b={book.b} a={book.a!r} c={book.c!r}"
    if book.scheme == "pot":
        return f"book pot b={book.b} alpha={book.alpha!r}"
    return (
        f"book apot b={book.b} b0={book.b0} gamma={book.gamma!r} beta={book.beta!r}"
    )


def _parse_kv(parts: list[str]) -> dict[str, str]:
    return dict(p.split("=", 1) for p in parts)


def _book_from_line(line: str) -> Codebook:
    parts = line.split()
    kind = parts[1]
    kv = _parse_kv(parts[2:])
    if kind == "uniform":
        return build_uniform_codebook(float(kv["a"]), float(kv["c"]), int(kv["b"]))
    if kind == "pot":
        return build_pot_codebook(float(kv["alpha"]), int(kv["b"]))
    if kind == "apot":
        return build_apot_codebook(
            float(kv["gamma"]), float(kv["beta"]), int(kv["b"]), int(kv["b0"])
        )
    raise DataFormatError(f"unknown codebook kind {kind!r}")


def _scheme_line(s: QuantScheme) -> str:
    act = "none" if s.activation_bits is None else str(s.activation_bits)
    return (
        f"scheme: {s.label} {s.scheme} {s.mode} b1={s.b1} b2={s.b2} act={act}"
        f" b0={s.b0} qbias={str(s.quantize_biases).lower()}"
    )


def _scheme_from_line(line: str) -> QuantScheme:
    parts = line.split()
    label, family, mode = parts[1], parts[2], parts[3]
    kv = _parse_kv(parts[4:])
    act = None if kv["act"] == "none" else int(kv["act"])
    return QuantScheme(
        label,
        family,
        mode,
        b1=int(kv["b1"]),
        b2=int(kv["b2"]),
        range_mode=RangeMode(),
        activation_bits=act,
        b0=int(kv["b0"]),
        quantize_biases=kv["qbias"] == "true",
    )


def save_model(path, params: ModelParams, config_hash: str = "") -> None:
    lines = [
        _MAGIC,
        f"config_hash: {config_hash}",
        f"window_len: {params.window_len}",
        f"share_filters: {str(params.share_filters).lower()}",
        f"dense_neurons: {params.dense_w.shape[0]}",
        f"repr: {params.repr_tag}",
    ]
    quant: ModelQuantization | None = params.quant
    if quant is not None:
        lines.append(_scheme_line(quant.scheme))
        for point, book in quant.act_books.items():
            if book is None:
                lines.append(f"actbook {point} none")
            else:
                lines.append(
                    f"actbook {point} uniform b={book.b} a={book.a!r} c={book.c!r}"
                )
    for name, arr in params.layer_arrays().items():
        shape = "x".join(str(d) for d in arr.shape)
        book = quant.weight_books.get(name) if quant else None
        if book is None:
            lines.append(f"layer {name} {shape} fp32")
            lines.append(f"payload {_hex_f32(arr)}")
        else:
            lines.append(f"layer {name} {shape} q{book.b}")
            lines.append(_book_line(book))
            _, idx = book.quantize_indices(arr.ravel())
            lines.append(f"payload {_hex_u16(idx)}")
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode())


def load_model(path) -> tuple[ModelParams, str]:
    text = Path(path).read_text()
    lines = [ln.rstrip("\n") for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != _MAGIC:
        raise DataFormatError(f"{path}: not a qfeq model file")
    header: dict[str, str] = {}
    i = 1
    while i < len(lines) and ":" in lines[i] and not lines[i].startswith(("layer", "actbook")):
        k, v = lines[i].split(":", 1)
        header[k.strip()] = v.strip()
        i += 1

    scheme = None
    if "scheme" in header:
        scheme = _scheme_from_line("scheme: " + header["scheme"])

    act_books: dict[str, Codebook | None] = {}
    while i < len(lines) and lines[i].startswith("actbook"):
        parts = lines[i].split()
        if parts[2] == "none":
            act_books[parts[1]] = None
        else:
            kv = _parse_kv(parts[3:])
            act_books[parts[1]] = build_uniform_codebook(
                float(kv["a"]), float(kv["c"]), int(kv["b"])
            )
        i += 1

    tensors: dict[str, np.ndarray] = {}
    weight_books: dict[str, Codebook] = {}
    while i < len(lines):
        if not lines[i].startswith("layer "):
            raise DataFormatError(f"{path}: expected layer line, got {lines[i]!r}")
        _, name, shape_s, tag = lines[i].split()
        shape = tuple(int(d) for d in shape_s.split("x"))
        i += 1
        book = None
        if tag != "fp32":
            book = _book_from_line(lines[i])
            i += 1
        if not lines[i].startswith("payload "):
            raise DataFormatError(f"{path}: expected payload for layer {name}")
        payload = lines[i].split(" ", 1)[1]
        i += 1
        if book is None:
            tensors[name] = _unhex_f32(payload, shape)
        else:
            idx = _unhex_u16(payload, shape)
            if idx.max(initial=0) >= book.n_symbols:
                raise DataFormatError(f"{path}: layer {name} index out of range")
            tensors[name] = book.symbols[idx]
            weight_books[name] = book

    share = header.get("share_filters", "false") == "true"
    if share and "conv_y" not in tensors:
        tensors["conv_y"] = tensors["conv_x"]
    try:
        params = ModelParams(
            conv_x=tensors["conv_x"],
            conv_y=tensors["conv_y"],
            dense_w=tensors["dense_w"],
            dense_b=tensors["dense_b"],
            head_w=tensors["head_w"],
            head_b=tensors["head_b"],
            window_len=int(header["window_len"]),
            share_filters=share,
        )
    except KeyError as e:
        raise DataFormatError(f"{path}: missing tensor {e}") from e
    if scheme is not None:
        params.quant = ModelQuantization(scheme, weight_books, act_books)
    return params, header.get("config_hash", "")
