"""Bi-GRU-LSTM-CNN multi-label classifier: parameters, forward pass, training, checkpoints.

Parameter layout (per direction ``d`` in ``fwd``/``bwd``):

- ``gru_d_W`` [in, 3U], ``gru_d_U`` [U, 3U], ``gru_d_b`` [3U]; gate blocks ordered z, r, candidate
- ``lstm_d_W`` [2U_gru, 4U], ``lstm_d_U`` [U, 4U], ``lstm_d_b`` [4U]; blocks ordered i, f, o, candidate
- ``conv{k}_W`` [k, 2U_lstm, F], ``conv{k}_b`` [F] for each kernel width k
- ``out_W`` [F * n_widths, labels], ``out_b`` [labels]
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .corpus import CorpusSplit, JobRecord, LabelCatalog
from .embed import EmbeddingTable
from .errors import CheckpointError, DimensionError, TrainingError, ValidationError
from .metrics import mean_f1
from .textpipe import PAD, Vocabulary, encode, preprocess

log = logging.getLogger(__name__)

DIRECTIONS = ("fwd", "bwd")


@dataclass(frozen=True)
class ModelConfig:
    max_len: int = 200
    embedding_dim: int = 100
    gru_units: int = 100
    lstm_units: int = 100
    conv_filters: int = 50
    conv_kernel_widths: tuple[int, ...] = (3, 5)
    num_labels: int = 68
    threshold: float = 0.5
    batch_size: int = 256
    epochs: int = 10
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    freeze_embeddings: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "conv_kernel_widths", tuple(int(k) for k in self.conv_kernel_widths))
        self.validate()

    def validate(self) -> None:
        positive = ("max_len", "embedding_dim", "gru_units", "lstm_units", "conv_filters", "num_labels", "batch_size")
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 < self.threshold < 1.0:
            raise ValidationError(f"threshold must lie in (0, 1), got {self.threshold}")
        if not self.conv_kernel_widths or min(self.conv_kernel_widths) < 1:
            raise ValidationError(f"bad conv_kernel_widths {self.conv_kernel_widths}")
        if len(set(self.conv_kernel_widths)) != len(self.conv_kernel_widths):
            raise ValidationError("conv_kernel_widths must be distinct")
        if max(self.conv_kernel_widths) > self.max_len:
            raise ValidationError("max_len is shorter than the widest convolution kernel")
        if self.lr < 0:
            raise ValidationError(f"lr must be >= 0, got {self.lr}")
        if self.dtype not in ("float32", "float64"):
            raise ValidationError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["conv_kernel_widths"] = list(self.conv_kernel_widths)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def param_shapes(config: ModelConfig, vocab_size: int) -> dict[str, tuple[int, ...]]:
    """Every trainable tensor's shape, in canonical order."""
    g, l = config.gru_units, config.lstm_units
    shapes: dict[str, tuple[int, ...]] = {"embedding": (vocab_size, config.embedding_dim)}
    for d in DIRECTIONS:
        shapes[f"gru_{d}_W"] = (config.embedding_dim, 3 * g)
        shapes[f"gru_{d}_U"] = (g, 3 * g)
        shapes[f"gru_{d}_b"] = (3 * g,)
    for d in DIRECTIONS:
        shapes[f"lstm_{d}_W"] = (2 * g, 4 * l)
        shapes[f"lstm_{d}_U"] = (l, 4 * l)
        shapes[f"lstm_{d}_b"] = (4 * l,)
    for k in config.conv_kernel_widths:
        shapes[f"conv{k}_W"] = (k, 2 * l, config.conv_filters)
        shapes[f"conv{k}_b"] = (config.conv_filters,)
    shapes["out_W"] = (config.conv_filters * len(config.conv_kernel_widths), config.num_labels)
    shapes["out_b"] = (config.num_labels,)
    return shapes


@dataclass
class ModelParams:
    arrays: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()})

    @property
    def vocab_size(self) -> int:
        return self.arrays["embedding"].shape[0]

    def tensors(self, trainable: bool = False, freeze_embeddings: bool = False) -> dict[str, Tensor]:
        """Tensor views sharing memory with ``arrays`` (in-place updates are visible)."""
        return {
            k: Tensor(v, requires_grad=trainable and not (freeze_embeddings and k == "embedding"), name=k)
            for k, v in self.arrays.items()
        }


def audit_shapes(params: ModelParams, config: ModelConfig) -> None:
    expected = param_shapes(config, params.vocab_size)
    if list(expected) != list(params.arrays):
        raise DimensionError("parameter names", tuple(expected), tuple(params.arrays))
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise DimensionError(f"parameter {name}", shape, params[name].shape)


def _glorot(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: ModelConfig, embeddings: EmbeddingTable | np.ndarray, seed: int | None = None) -> ModelParams:
    """Glorot-uniform input, conv and dense kernels; U(+-1/sqrt(units)) recurrent kernels.

    Biases start at zero except the LSTM forget gate, which starts at one.
    """
    matrix = embeddings.matrix if isinstance(embeddings, EmbeddingTable) else np.asarray(embeddings)
    if matrix.shape[1] != config.embedding_dim:
        raise DimensionError("embedding matrix vs config.embedding_dim", matrix.shape, (config.embedding_dim,))
    rng = np.random.default_rng(config.seed if seed is None else seed)
    shapes = param_shapes(config, matrix.shape[0])
    arrays: dict[str, np.ndarray] = {}
    for name, shape in shapes.items():
        if name == "embedding":
            arr = matrix.copy()
        elif name.endswith("_b"):
            arr = np.zeros(shape)
            if name.startswith("lstm_"):
                u = config.lstm_units
                arr[u : 2 * u] = 1.0
        elif name.endswith("_U"):
            units = shape[0]
            arr = rng.uniform(-1.0 / math.sqrt(units), 1.0 / math.sqrt(units), size=shape)
        elif name.startswith("conv"):
            k, c, f = shape
            arr = _glorot(rng, shape, k * c, k * f)
        else:
            arr = _glorot(rng, shape, shape[0], shape[1])
        arrays[name] = arr.astype(config.dtype)
    return ModelParams(arrays)


# cells ------------------------------------------------------------------------


@dataclass
class CellWeights:
    W: Tensor  # input kernel, gate blocks side by side
    U: Tensor  # recurrent kernel
    b: Tensor

    @classmethod
    def of(cls, params: dict[str, Tensor], prefix: str) -> "CellWeights":
        return cls(params[f"{prefix}_W"], params[f"{prefix}_U"], params[f"{prefix}_b"])


def _check_cell(op: str, x: Tensor, h: Tensor, w: CellWeights, gates: int):
    units = w.U.shape[0]
    if w.U.shape != (units, gates * units) or w.W.shape != (x.shape[-1], gates * units) or h.shape[-1] != units:
        raise DimensionError(op, x.shape, h.shape, w.W.shape, w.U.shape)


def _gru_from_projection(xp: Tensor, h: Tensor, u_zr: Tensor, u_h: Tensor) -> Tensor:
    units = u_h.shape[0]
    zr = ad.sigmoid(xp[..., : 2 * units] + h @ u_zr)
    z = zr[..., :units]
    r = zr[..., units:]
    cand = ad.tanh(xp[..., 2 * units :] + (r * h) @ u_h)
    return h + z * (cand - h)


def gru_cell(x_t: Tensor, h_prev: Tensor, w: CellWeights) -> Tensor:
    """z = s(Wz x + Uz h + bz), r = s(Wr x + Ur h + br),
    h~ = tanh(Wh x + Uh (r*h) + bh), h_t = (1 - z) h + z h~."""
    _check_cell("gru_cell", x_t, h_prev, w, 3)
    units = w.U.shape[0]
    return _gru_from_projection(ad.dense(x_t, w.W, w.b), h_prev, w.U[:, : 2 * units], w.U[:, 2 * units :])


def _lstm_from_projection(xp: Tensor, h: Tensor, c: Tensor, u: Tensor) -> tuple[Tensor, Tensor]:
    units = u.shape[0]
    pre = xp + h @ u
    gates = ad.sigmoid(pre[..., : 3 * units])
    i, f, o = gates[..., :units], gates[..., units : 2 * units], gates[..., 2 * units :]
    cand = ad.tanh(pre[..., 3 * units :])
    c_t = f * c + i * cand
    return o * ad.tanh(c_t), c_t


def lstm_cell(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, w: CellWeights) -> tuple[Tensor, Tensor]:
    """Gates i, f, o = s(.), candidate = tanh(.); c_t = f c + i cand, h_t = o tanh(c_t)."""
    _check_cell("lstm_cell", x_t, h_prev, w, 4)
    if c_prev.shape != h_prev.shape:
        raise DimensionError("lstm_cell", h_prev.shape, c_prev.shape)
    return _lstm_from_projection(ad.dense(x_t, w.W, w.b), h_prev, c_prev, w.U)


def _run_direction(seq: Tensor, mask: np.ndarray, kind: str, w: CellWeights, reverse: bool) -> list[Tensor]:
    """One direction over [B, T, in]. Past a row's true length the state is carried unchanged."""
    batch, steps = seq.shape[0], seq.shape[1]
    units = w.U.shape[0]
    zeros = Tensor(np.zeros((batch, units), dtype=seq.dtype))
    proj = ad.dense(seq, w.W, w.b)
    if kind == "gru":
        u_zr, u_h = w.U[:, : 2 * units], w.U[:, 2 * units :]
    h, c = zeros, zeros
    out: list[Tensor] = [None] * steps  # type: ignore[list-item]
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        xp = proj[:, t, :]
        m = mask[:, t : t + 1]
        if kind == "gru":
            h = ad.where(m, _gru_from_projection(xp, h, u_zr, u_h), h)
        else:
            h_new, c_new = _lstm_from_projection(xp, h, c, w.U)
            h, c = ad.where(m, h_new, h), ad.where(m, c_new, c)
        out[t] = h
    return out


def bidirectional(seq: Tensor, mask: np.ndarray, kind: str, w_fwd: CellWeights, w_bwd: CellWeights) -> Tensor:
    """[B, T, in] -> [B, T, 2U]; position t is concat(forward h_t, backward h_t)."""
    if seq.data.ndim != 3 or mask.shape != seq.shape[:2]:
        raise DimensionError("bidirectional", seq.shape, mask.shape)
    fwd = _run_direction(seq, mask, kind, w_fwd, reverse=False)
    bwd = _run_direction(seq, mask, kind, w_bwd, reverse=True)
    return ad.concat([ad.stack(fwd, axis=1), ad.stack(bwd, axis=1)], axis=-1)


def length_mask(lengths: np.ndarray, steps: int) -> np.ndarray:
    return np.arange(steps)[None, :] < np.asarray(lengths)[:, None]


def forward_batch(params: dict[str, Tensor], indices: np.ndarray, lengths: np.ndarray, config: ModelConfig) -> Tensor:
    """Probabilities [B, labels] for encoded rows ``indices`` [B, max_len]."""
    indices = np.asarray(indices)
    if indices.ndim != 2 or indices.shape[1] != config.max_len:
        raise DimensionError("forward input", indices.shape, (None, config.max_len))
    mask = length_mask(lengths, indices.shape[1])
    x = ad.embedding(params["embedding"], indices, padding_idx=PAD)
    h = bidirectional(x, mask, "gru", CellWeights.of(params, "gru_fwd"), CellWeights.of(params, "gru_bwd"))
    h = bidirectional(h, mask, "lstm", CellWeights.of(params, "lstm_fwd"), CellWeights.of(params, "lstm_bwd"))
    pooled = [
        ad.max_pool_over_time(ad.relu(ad.conv1d(h, params[f"conv{k}_W"], params[f"conv{k}_b"])))
        for k in config.conv_kernel_widths
    ]
    logits = ad.dense(ad.concat(pooled, axis=-1), params["out_W"], params["out_b"])
    return ad.sigmoid(logits)


def forward(encoded, params: ModelParams, config: ModelConfig) -> np.ndarray:
    """Label probabilities for one :class:`EncodedSequence`."""
    if len(encoded.indices) != config.max_len:
        raise DimensionError("forward input", (len(encoded.indices),), (config.max_len,))
    probs = forward_batch(params.tensors(), encoded.indices[None, :], np.array([encoded.true_length]), config)
    return probs.data[0]


def predict_proba(
    params: ModelParams, config: ModelConfig, indices: np.ndarray, lengths: np.ndarray, batch_size: int | None = None
) -> np.ndarray:
    tensors = params.tensors()
    bs = batch_size or config.batch_size
    chunks = [
        forward_batch(tensors, indices[i : i + bs], lengths[i : i + bs], config).data
        for i in range(0, len(indices), bs)
    ]
    if not chunks:
        return np.zeros((0, config.num_labels), dtype=config.dtype)
    return np.concatenate(chunks)


def predict_labels(probs, threshold: float = 0.5) -> set[int]:
    """Indices whose probability is strictly above ``threshold``."""
    return {int(i) for i in np.flatnonzero(np.asarray(probs) > threshold)}


# data -------------------------------------------------------------------------


@dataclass
class EncodedDataset:
    ids: list[str]
    indices: np.ndarray  # [N, max_len]
    lengths: np.ndarray  # [N]
    targets: np.ndarray  # [N, labels], 0/1
    labels: list[frozenset[int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)


def multi_hot(label_sets: Sequence[Sequence[int]], num_labels: int) -> np.ndarray:
    out = np.zeros((len(label_sets), num_labels))
    for row, labels in enumerate(label_sets):
        for i in labels:
            if not 0 <= i < num_labels:
                raise ValidationError(f"label index {i} outside [0, {num_labels})")
            out[row, i] = 1.0
    return out


def encode_records(records: Sequence[JobRecord], vocab: Vocabulary, config: ModelConfig) -> EncodedDataset:
    enc = [encode(preprocess(r.description), vocab, config.max_len) for r in records]
    indices = np.stack([e.indices for e in enc]) if enc else np.zeros((0, config.max_len), dtype=np.int64)
    lengths = np.array([e.true_length for e in enc], dtype=np.int64)
    labels = [r.labels for r in records]
    return EncodedDataset(
        [r.id for r in records], indices, lengths, multi_hot(labels, config.num_labels).astype(config.dtype), labels
    )


def evaluate_f1(params: ModelParams, config: ModelConfig, data: EncodedDataset) -> float:
    probs = predict_proba(params, config, data.indices, data.lengths)
    pairs = [(truth, predict_labels(p, config.threshold)) for truth, p in zip(data.labels, probs)]
    return mean_f1(pairs)


# training ---------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_f1: float | None

    def to_json(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss, "dev_f1": self.dev_f1}


def fit(
    train_set: EncodedDataset,
    dev_set: EncodedDataset | None,
    params: ModelParams,
    config: ModelConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[ModelParams, list[EpochRecord]]:
    """Adam on mean BCE over shuffled mini-batches.

    Returns the parameters of the epoch with the best dev F1 (earliest on
    ties), or of the last epoch when there is no dev set.
    """
    if len(train_set) == 0:
        raise ValidationError("training set is empty")
    audit_shapes(params, config)
    params = params.copy()
    tensors = params.tensors(trainable=True, freeze_embeddings=config.freeze_embeddings)
    names = list(tensors)
    state = ad.AdamState.for_params(
        [params[n] for n in names], lr=config.lr, beta1=config.beta1, beta2=config.beta2, epsilon=config.adam_eps
    )
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])
    history: list[EpochRecord] = []
    best, best_f1 = None, -1.0
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train_set))
        losses = []
        for batch_no, start in enumerate(range(0, len(order), config.batch_size)):
            rows = order[start : start + config.batch_size]
            with Tape() as tape:
                probs = forward_batch(tensors, train_set.indices[rows], train_set.lengths[rows], config)
                loss = ad.bce_loss(probs, train_set.targets[rows])
            value = float(loss.data)
            step += 1
            if not math.isfinite(value):
                raise TrainingError(step, batch_no, value)
            grads = ad.backward(tape, loss, [tensors[n] for n in names])
            grads = [g if tensors[n].requires_grad else None for n, g in zip(names, grads)]
            ad.adam_step([params[n] for n in names], grads, state)
            losses.append(value)
        dev_f1 = evaluate_f1(params, config, dev_set) if dev_set is not None and len(dev_set) else None
        record = EpochRecord(epoch, float(np.mean(losses)), dev_f1)
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if dev_f1 is not None and dev_f1 > best_f1:
            best, best_f1 = params.copy(), dev_f1
    return (best if best is not None else params), history


def train(
    split: CorpusSplit,
    embeddings: EmbeddingTable,
    config: ModelConfig,
    vocab: Vocabulary,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[ModelParams, list[EpochRecord]]:
    if embeddings.matrix.shape[0] != len(vocab):
        raise DimensionError("embedding rows vs vocabulary", embeddings.matrix.shape, (len(vocab),))
    if not embeddings.trainable and not config.freeze_embeddings:
        config = replace(config, freeze_embeddings=True)
    params = init_params(config, embeddings)
    train_set = encode_records(split.train, vocab, config)
    dev_set = encode_records(split.dev, vocab, config)
    return fit(train_set, dev_set, params, config, on_epoch)


# checkpoints ------------------------------------------------------------------

MAGIC = b"JOBTITLE"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")  # magic, format version, header length
_DIGEST = 32


@dataclass
class Checkpoint:
    params: ModelParams
    config: ModelConfig
    vocab: Vocabulary
    catalog: LabelCatalog


def save_checkpoint(params: ModelParams, config: ModelConfig, vocab: Vocabulary, catalog: LabelCatalog, path) -> None:
    """Write ``magic | version | header length | JSON header | raw tensors | sha256``.

    The file is written to a sibling temp file and renamed into place.
    """
    audit_shapes(params, config)
    if len(catalog) != config.num_labels:
        raise ValidationError(f"catalog has {len(catalog)} titles, config expects {config.num_labels}")
    if len(vocab) != params.vocab_size:
        raise ValidationError(f"vocabulary has {len(vocab)} entries, embedding has {params.vocab_size} rows")
    entries, blobs, offset = [], [], 0
    for name, arr in params.arrays.items():
        raw = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "config": config.to_json(),
        "vocab": {"min_freq": vocab.min_freq, "tokens": list(vocab.index_to_token)},
        "catalog": {"titles": list(catalog.titles), "lines": catalog.to_lines()},
        "tensors": entries,
        "payload_bytes": offset,
    }
    head = json.dumps(header, ensure_ascii=False).encode("utf-8")
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(head)) + head + b"".join(blobs)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(body)
        fh.write(hashlib.sha256(body).digest())
    os.replace(tmp, path)


def load_checkpoint(path, catalog: LabelCatalog | None = None) -> Checkpoint:
    """Read a checkpoint; with ``catalog`` given, its title order must match exactly."""
    from .corpus import parse_catalog

    blob = Path(path).read_bytes()
    if len(blob) < _PREFIX.size + _DIGEST:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    magic, version, head_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version} is incompatible (expected {FORMAT_VERSION})")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupt)")
    try:
        header = json.loads(body[_PREFIX.size : _PREFIX.size + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from None
    payload = memoryview(body)[_PREFIX.size + head_len :]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(f"{path}: payload size mismatch")
    arrays = {}
    for e in header["tensors"]:
        dtype = np.dtype(e["dtype"])
        n = int(np.prod(e["shape"], dtype=np.int64)) * dtype.itemsize
        raw = payload[e["offset"] : e["offset"] + n]
        arrays[e["name"]] = np.frombuffer(raw, dtype=dtype).reshape(e["shape"]).astype(dtype.newbyteorder("="))
    config = ModelConfig.from_json(header["config"])
    vocab = Vocabulary(tuple(header["vocab"]["tokens"]), header["vocab"]["min_freq"])
    stored = parse_catalog(header["catalog"]["lines"], f"{path}:catalog")
    if catalog is not None and tuple(catalog.titles) != stored.titles:
        raise CheckpointError(f"{path}: checkpoint label catalog differs from the runtime catalog")
    params = ModelParams(arrays)
    try:
        audit_shapes(params, config)
    except DimensionError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    return Checkpoint(params, config, vocab, stored)
