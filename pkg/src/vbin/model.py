"""The interaction network, its maneuver-only baseline, and checkpoints.

Architecture, with every width pinned at construction time:

* encoder: GRU over the 20x6 observation window (hidden size 128 by
  default, configurable for cheap gradient checks) followed by a linear
  projection to the 48-wide maneuver encoding; one shared weight set for
  all vehicles.
* pairwise unit (piu): concat(target encoding, neighbor encoding,
  connection feature) -> 102 -> fc0 -> ReLU -> 64.
* neighborhood unit (niu): the 8 slot embeddings concatenated -> 512 ->
  fc1 -> ReLU -> fc2 -> ReLU -> fc3 -> ReLU -> 48.
* decoder: concat(social effect, own encoding) -> 96 -> fc4 -> ReLU ->
  fc5 -> 3 class logits -> softmax.

The baseline (``vlstm``) keeps the encoder and decodes from the maneuver
encoding alone (48 -> 48 -> ReLU -> 3), so it is blind to neighbors by
construction.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .datamodel import (CONNECTION_DIM, FEATURE_DIM, IntegrityError,
                        FormatError, LabeledSample, NUM_NEIGHBOR_SLOTS,
                        OBS_WINDOW, ValidationError)

ENCODING_SIZE = 48          # maneuver encoding width
PAIR_EMBED_DIM = 64         # pairwise-unit output width
SOCIAL_DIM = 48             # neighborhood-unit output width
NUM_CLASSES = 3
DEFAULT_HIDDEN = 128
PIU_INPUT = 2 * ENCODING_SIZE + CONNECTION_DIM          # 102
NIU_INPUT = NUM_NEIGHBOR_SLOTS * PAIR_EMBED_DIM         # 512
NIU_HIDDEN = 400
DECODER_INPUT = SOCIAL_DIM + ENCODING_SIZE              # 96
DECODER_HIDDEN = 48


class CheckpointError(ValueError):
    """Checkpoint contents do not match the requested model."""


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _expect(tensor: nm.Tensor, shape: tuple[int, ...]) -> nm.Tensor:
    if tensor.values.shape != shape:
        raise CheckpointError(f"tensor {tensor.name!r}: expected shape "
                              f"{shape}, found {tensor.values.shape}")
    return tensor


class EncoderParams:
    """Shared GRU weights plus the projection to the maneuver encoding."""

    GATES = ("z", "r", "h")

    def __init__(self, tensors: dict[str, nm.Tensor], hidden_size: int):
        self.hidden_size = hidden_size
        for g in self.GATES:
            setattr(self, f"w_{g}", _expect(tensors[f"enc.w_{g}"],
                                            (FEATURE_DIM, hidden_size)))
            setattr(self, f"u_{g}", _expect(tensors[f"enc.u_{g}"],
                                            (hidden_size, hidden_size)))
            setattr(self, f"b_{g}", _expect(tensors[f"enc.b_{g}"],
                                            (hidden_size,)))
        self.proj_w = _expect(tensors["enc.proj_w"], (hidden_size, ENCODING_SIZE))
        self.proj_b = _expect(tensors["enc.proj_b"], (ENCODING_SIZE,))

    @classmethod
    def init(cls, rng: np.random.Generator, hidden_size: int) -> "EncoderParams":
        t = {}
        for g in cls.GATES:
            t[f"enc.w_{g}"] = nm.parameter(
                _uniform(rng, (FEATURE_DIM, hidden_size), FEATURE_DIM),
                f"enc.w_{g}")
            t[f"enc.u_{g}"] = nm.parameter(
                _uniform(rng, (hidden_size, hidden_size), hidden_size),
                f"enc.u_{g}")
            t[f"enc.b_{g}"] = nm.parameter(
                _uniform(rng, (hidden_size,), hidden_size), f"enc.b_{g}")
        t["enc.proj_w"] = nm.parameter(
            _uniform(rng, (hidden_size, ENCODING_SIZE), hidden_size),
            "enc.proj_w")
        t["enc.proj_b"] = nm.parameter(
            _uniform(rng, (ENCODING_SIZE,), hidden_size), "enc.proj_b")
        return cls(t, hidden_size)

    def tensors(self) -> dict[str, nm.Tensor]:
        out = {}
        for g in self.GATES:
            out[f"enc.w_{g}"] = getattr(self, f"w_{g}")
            out[f"enc.u_{g}"] = getattr(self, f"u_{g}")
            out[f"enc.b_{g}"] = getattr(self, f"b_{g}")
        out["enc.proj_w"] = self.proj_w
        out["enc.proj_b"] = self.proj_b
        return out


def _fc(tensors: dict[str, nm.Tensor], name: str,
        shape: tuple[int, int]) -> tuple[nm.Tensor, nm.Tensor]:
    return (_expect(tensors[f"{name}_w"], shape),
            _expect(tensors[f"{name}_b"], (shape[1],)))


def _fc_init(rng: np.random.Generator, t: dict, name: str,
             shape: tuple[int, int]) -> None:
    t[f"{name}_w"] = nm.parameter(_uniform(rng, shape, shape[0]), f"{name}_w")
    t[f"{name}_b"] = nm.parameter(_uniform(rng, (shape[1],), shape[0]),
                                  f"{name}_b")


class VbinParameters:
    """All weights of the interaction network; validates every width."""

    kind = "vbin"

    def __init__(self, tensors: dict[str, nm.Tensor],
                 hidden_size: int = DEFAULT_HIDDEN):
        self.encoder = EncoderParams(tensors, hidden_size)
        self.fc0_w, self.fc0_b = _fc(tensors, "piu.fc0", (PIU_INPUT, PAIR_EMBED_DIM))
        self.fc1_w, self.fc1_b = _fc(tensors, "niu.fc1", (NIU_INPUT, NIU_HIDDEN))
        self.fc2_w, self.fc2_b = _fc(tensors, "niu.fc2", (NIU_HIDDEN, NIU_HIDDEN))
        self.fc3_w, self.fc3_b = _fc(tensors, "niu.fc3", (NIU_HIDDEN, SOCIAL_DIM))
        self.fc4_w, self.fc4_b = _fc(tensors, "dec.fc4", (DECODER_INPUT, DECODER_HIDDEN))
        self.fc5_w, self.fc5_b = _fc(tensors, "dec.fc5", (DECODER_HIDDEN, NUM_CLASSES))

    @property
    def hidden_size(self) -> int:
        return self.encoder.hidden_size

    @classmethod
    def init(cls, seed: int, hidden_size: int = DEFAULT_HIDDEN) -> "VbinParameters":
        rng = np.random.default_rng(seed)
        t = EncoderParams.init(rng, hidden_size).tensors()
        _fc_init(rng, t, "piu.fc0", (PIU_INPUT, PAIR_EMBED_DIM))
        _fc_init(rng, t, "niu.fc1", (NIU_INPUT, NIU_HIDDEN))
        _fc_init(rng, t, "niu.fc2", (NIU_HIDDEN, NIU_HIDDEN))
        _fc_init(rng, t, "niu.fc3", (NIU_HIDDEN, SOCIAL_DIM))
        _fc_init(rng, t, "dec.fc4", (DECODER_INPUT, DECODER_HIDDEN))
        _fc_init(rng, t, "dec.fc5", (DECODER_HIDDEN, NUM_CLASSES))
        return cls(t, hidden_size)

    def tensors(self) -> dict[str, nm.Tensor]:
        out = self.encoder.tensors()
        for name in ("piu.fc0", "niu.fc1", "niu.fc2", "niu.fc3", "dec.fc4",
                     "dec.fc5"):
            attr = name.split(".")[1]
            out[f"{name}_w"] = getattr(self, f"{attr}_w")
            out[f"{name}_b"] = getattr(self, f"{attr}_b")
        return out

    def parameters(self) -> list[nm.Tensor]:
        return list(self.tensors().values())


class VlstmParameters:
    """Baseline weights: the shared encoder plus a neighbor-blind decoder."""

    kind = "vlstm"

    def __init__(self, tensors: dict[str, nm.Tensor],
                 hidden_size: int = DEFAULT_HIDDEN):
        self.encoder = EncoderParams(tensors, hidden_size)
        self.dec1_w, self.dec1_b = _fc(tensors, "dec.d1",
                                       (ENCODING_SIZE, DECODER_HIDDEN))
        self.dec2_w, self.dec2_b = _fc(tensors, "dec.d2",
                                       (DECODER_HIDDEN, NUM_CLASSES))

    @property
    def hidden_size(self) -> int:
        return self.encoder.hidden_size

    @classmethod
    def init(cls, seed: int, hidden_size: int = DEFAULT_HIDDEN) -> "VlstmParameters":
        rng = np.random.default_rng(seed)
        t = EncoderParams.init(rng, hidden_size).tensors()
        _fc_init(rng, t, "dec.d1", (ENCODING_SIZE, DECODER_HIDDEN))
        _fc_init(rng, t, "dec.d2", (DECODER_HIDDEN, NUM_CLASSES))
        return cls(t, hidden_size)

    def tensors(self) -> dict[str, nm.Tensor]:
        out = self.encoder.tensors()
        out["dec.d1_w"], out["dec.d1_b"] = self.dec1_w, self.dec1_b
        out["dec.d2_w"], out["dec.d2_b"] = self.dec2_w, self.dec2_b
        return out

    def parameters(self) -> list[nm.Tensor]:
        return list(self.tensors().values())


# ---------------------------------------------------------------------------
# forward passes

def _check_sequences(seqs: np.ndarray) -> np.ndarray:
    seqs = np.asarray(seqs, dtype=np.float64)
    if seqs.shape[-2:] != (OBS_WINDOW, FEATURE_DIM):
        raise ValidationError(f"sequence block has shape {seqs.shape}, "
                              f"expected (..., {OBS_WINDOW}, {FEATURE_DIM})")
    if not np.all(np.isfinite(seqs)):
        raise ValidationError("non-finite value in feature sequence")
    return seqs


def encode_batch(seqs: np.ndarray, enc: EncoderParams) -> nm.Tensor:
    """GRU-encode S sequences at once; returns the (S, 48) encoding node.

    Gate convention follows the original gated recurrent unit: update gate
    z, reset gate r, candidate tanh(x W_h + (r*h) U_h + b_h), next state
    (1-z)*h + z*candidate, zero initial state, final state projected.
    The input projections of all 20 steps go through one fused matmul and
    the z/r gate weights are column-concatenated, which keeps the step loop
    at two matrix products.
    """
    seqs = _check_sequences(seqs)
    if seqs.ndim != 3:
        raise ValidationError("encode_batch expects (S, 20, 6)")
    n = seqs.shape[0]
    hidden = enc.hidden_size
    w_cat = nm.concat([enc.w_z, enc.w_r, enc.w_h], axis=1)     # (6, 3H)
    b_cat = nm.concat([enc.b_z, enc.b_r, enc.b_h])
    u_zr = nm.concat([enc.u_z, enc.u_r], axis=1)               # (H, 2H)
    flat = np.ascontiguousarray(seqs.transpose(1, 0, 2)).reshape(
        OBS_WINDOW * n, FEATURE_DIM)                           # step-major
    xw = nm.add_bias(nm.matmul(nm.constant(flat), w_cat), b_cat)
    h = nm.constant(np.zeros((n, hidden)))
    ones = nm.constant(np.ones((n, hidden)))
    for step in range(OBS_WINDOW):
        xw_t = nm.slice_rows(xw, step * n, (step + 1) * n)
        gates = nm.sigmoid(nm.add(nm.slice_cols(xw_t, 0, 2 * hidden),
                                  nm.matmul(h, u_zr)))
        z = nm.slice_cols(gates, 0, hidden)
        r = nm.slice_cols(gates, hidden, 2 * hidden)
        cand = nm.tanh(nm.add(nm.slice_cols(xw_t, 2 * hidden, 3 * hidden),
                              nm.matmul(nm.mul(r, h), enc.u_h)))
        h = nm.add(nm.mul(nm.sub(ones, z), h), nm.mul(z, cand))
    return nm.add_bias(nm.matmul(h, enc.proj_w), enc.proj_b)


def encode(seq: np.ndarray, enc: EncoderParams) -> nm.Tensor:
    """Encode one 20x6 sequence into the 48-wide maneuver vector."""
    seq = _check_sequences(seq)
    if seq.ndim != 2:
        raise ValidationError("encode expects a single (20, 6) sequence")
    h = nm.constant(np.zeros(enc.hidden_size))
    ones = nm.constant(np.ones(enc.hidden_size))
    for step in range(OBS_WINDOW):
        x = nm.constant(seq[step])
        z = nm.sigmoid(nm.add(nm.add(nm.matmul(x, enc.w_z),
                                     nm.matmul(h, enc.u_z)), enc.b_z))
        r = nm.sigmoid(nm.add(nm.add(nm.matmul(x, enc.w_r),
                                     nm.matmul(h, enc.u_r)), enc.b_r))
        cand = nm.tanh(nm.add(nm.add(nm.matmul(x, enc.w_h),
                                     nm.matmul(nm.mul(r, h), enc.u_h)),
                              enc.b_h))
        h = nm.add(nm.mul(nm.sub(ones, z), h), nm.mul(z, cand))
    return nm.add(nm.matmul(h, enc.proj_w), enc.proj_b)


def piu(h_target: nm.Tensor, h_neighbor: nm.Tensor, connection: nm.Tensor,
        params: VbinParameters) -> nm.Tensor:
    """Pairwise interaction embedding for one (target, neighbor) pair."""
    joined = nm.concat([h_target, h_neighbor, connection])
    return nm.relu(nm.add(nm.matmul(joined, params.fc0_w), params.fc0_b))


def niu(pair_embeddings: list[nm.Tensor], params: VbinParameters) -> nm.Tensor:
    """Total social effect from the 8 slot-ordered pair embeddings."""
    if len(pair_embeddings) != NUM_NEIGHBOR_SLOTS:
        raise nm.ShapeError(f"niu: expected {NUM_NEIGHBOR_SLOTS} pair "
                            f"embeddings, got {len(pair_embeddings)}")
    x = nm.concat(pair_embeddings)
    x = nm.relu(nm.add(nm.matmul(x, params.fc1_w), params.fc1_b))
    x = nm.relu(nm.add(nm.matmul(x, params.fc2_w), params.fc2_b))
    return nm.relu(nm.add(nm.matmul(x, params.fc3_w), params.fc3_b))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def decode(social: nm.Tensor, h_target: nm.Tensor,
           params: VbinParameters) -> np.ndarray:
    """Class probabilities from the social effect and the own encoding."""
    return _softmax(decode_logits(social, h_target, params).values)


def decode_logits(social: nm.Tensor, h_target: nm.Tensor,
                  params: VbinParameters) -> nm.Tensor:
    joined = nm.concat([social, h_target])
    hidden = nm.relu(nm.add(nm.matmul(joined, params.fc4_w), params.fc4_b))
    return nm.add(nm.matmul(hidden, params.fc5_w), params.fc5_b)


def sample_logits(sample: LabeledSample, params: VbinParameters) -> nm.Tensor:
    """Sequential single-sample path: 9 encoder runs, 8 pair units, decode."""
    h_target = encode(sample.target_seq, params.encoder)
    pairs = []
    for j in range(NUM_NEIGHBOR_SLOTS):
        h_nbr = encode(sample.neighbor_seqs[j], params.encoder)
        conn = nm.constant(sample.connections[j])
        pairs.append(piu(h_target, h_nbr, conn, params))
    return decode_logits(niu(pairs, params), h_target, params)


def sample_forward(sample: LabeledSample, params: VbinParameters) -> np.ndarray:
    return _softmax(sample_logits(sample, params).values)


@dataclass
class SocialBatch:
    """Deduplicated encoder inputs plus the index structure joining them.

    ``sequences`` holds each distinct feature sequence once; targets and
    neighbor slots reference rows by index, so the encoder runs once per
    distinct vehicle in the batch.
    """

    sequences: np.ndarray       # (U, 20, 6)
    target_index: np.ndarray    # (B,)
    neighbor_index: np.ndarray  # (B, 8)
    connections: np.ndarray     # (B, 8, 6)

    def __len__(self) -> int:
        return len(self.target_index)


def assemble_batch(samples: list[LabeledSample]) -> SocialBatch:
    """Build the index structure, merging identical sequences by content."""
    seq_rows: list[np.ndarray] = []
    index: dict[bytes, int] = {}

    def row_of(seq: np.ndarray) -> int:
        key = seq.tobytes()
        at = index.get(key)
        if at is None:
            at = len(seq_rows)
            index[key] = at
            seq_rows.append(seq)
        return at

    n = len(samples)
    target_index = np.empty(n, dtype=np.intp)
    neighbor_index = np.empty((n, NUM_NEIGHBOR_SLOTS), dtype=np.intp)
    connections = np.empty((n, NUM_NEIGHBOR_SLOTS, CONNECTION_DIM))
    for i, s in enumerate(samples):
        target_index[i] = row_of(np.ascontiguousarray(s.target_seq))
        for j in range(NUM_NEIGHBOR_SLOTS):
            neighbor_index[i, j] = row_of(np.ascontiguousarray(s.neighbor_seqs[j]))
        connections[i] = s.connections
    return SocialBatch(np.stack(seq_rows), target_index, neighbor_index,
                       connections)


def forward_batch(batch: SocialBatch, params: VbinParameters,
                  encodings: nm.Tensor | None = None) -> nm.Tensor:
    """Class logits for a whole social batch, (B, 3).

    Equals the per-sample sequential path within 1e-9; the encoder output
    can be passed in when already computed.
    """
    n_rows = batch.sequences.shape[0]
    for name, idx in (("target", batch.target_index),
                      ("neighbor", batch.neighbor_index)):
        if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
            raise ValidationError(f"dangling {name} index into {n_rows} "
                                  "encoder rows")
    if encodings is None:
        encodings = encode_batch(batch.sequences, params.encoder)
    n = len(batch)
    h_target = nm.gather_rows(encodings, batch.target_index)
    h_rep = nm.gather_rows(encodings,
                           np.repeat(batch.target_index, NUM_NEIGHBOR_SLOTS))
    h_nbr = nm.gather_rows(encodings, batch.neighbor_index.reshape(-1))
    conn = nm.constant(batch.connections.reshape(-1, CONNECTION_DIM))
    pair_in = nm.concat([h_rep, h_nbr, conn], axis=1)
    pair = nm.relu(nm.add_bias(nm.matmul(pair_in, params.fc0_w), params.fc0_b))
    social_in = nm.reshape(pair, (n, NIU_INPUT))
    x = nm.relu(nm.add_bias(nm.matmul(social_in, params.fc1_w), params.fc1_b))
    x = nm.relu(nm.add_bias(nm.matmul(x, params.fc2_w), params.fc2_b))
    social = nm.relu(nm.add_bias(nm.matmul(x, params.fc3_w), params.fc3_b))
    dec_in = nm.concat([social, h_target], axis=1)
    hidden = nm.relu(nm.add_bias(nm.matmul(dec_in, params.fc4_w), params.fc4_b))
    return nm.add_bias(nm.matmul(hidden, params.fc5_w), params.fc5_b)


def predict_probs(samples: list[LabeledSample], params,
                  batch_size: int = 256) -> np.ndarray:
    """(N, 3) class probabilities for either model kind."""
    out = np.empty((len(samples), NUM_CLASSES))
    for lo in range(0, len(samples), batch_size):
        chunk = samples[lo:lo + batch_size]
        logits = logits_for(chunk, params)
        out[lo:lo + len(chunk)] = _softmax(logits.values)
    return out


def logits_for(samples: list[LabeledSample], params) -> nm.Tensor:
    """Batched class logits for either model kind."""
    if isinstance(params, VbinParameters):
        return forward_batch(assemble_batch(samples), params)
    if isinstance(params, VlstmParameters):
        seqs = np.stack([s.target_seq for s in samples])
        return vlstm_logits_batch(seqs, params)
    raise TypeError(f"unsupported parameter object {type(params)!r}")


def vlstm_logits_batch(seqs: np.ndarray, params: VlstmParameters) -> nm.Tensor:
    h = encode_batch(seqs, params.encoder)
    hidden = nm.relu(nm.add_bias(nm.matmul(h, params.dec1_w), params.dec1_b))
    return nm.add_bias(nm.matmul(hidden, params.dec2_w), params.dec2_b)


def vlstm_forward(seq: np.ndarray, params: VlstmParameters) -> np.ndarray:
    """Baseline probabilities for one sequence; neighbors never enter."""
    h = encode(seq, params.encoder)
    hidden = nm.relu(nm.add(nm.matmul(h, params.dec1_w), params.dec1_b))
    logits = nm.add(nm.matmul(hidden, params.dec2_w), params.dec2_b)
    return _softmax(logits.values)


# ---------------------------------------------------------------------------
# checkpoint format: magic "VBCK", named f64 tensors, crc32 integrity

_CKPT_MAGIC = b"VBCK"
_CKPT_VERSION = 1

PARAMETER_CLASSES = {"vbin": VbinParameters, "vlstm": VlstmParameters}


def save_checkpoint(params, path, train_config: dict | None = None,
                    seed_record: int | None = None) -> None:
    meta = json.dumps({"train_config": train_config, "seed": seed_record},
                      sort_keys=True).encode()
    body = bytearray()
    kind = params.kind.encode()
    body += struct.pack("<B", len(kind)) + kind
    body += struct.pack("<I", params.hidden_size)
    body += struct.pack("<I", len(meta)) + meta
    tensors = params.tensors()
    body += struct.pack("<H", len(tensors))
    for name, tensor in tensors.items():
        raw_name = name.encode()
        body += struct.pack("<H", len(raw_name)) + raw_name
        body += struct.pack("<B", tensor.values.ndim)
        for d in tensor.values.shape:
            body += struct.pack("<I", d)
        body += np.ascontiguousarray(tensor.values, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sH", _CKPT_MAGIC, _CKPT_VERSION))
        fh.write(struct.pack("<I", zlib.crc32(bytes(body))))
        fh.write(body)


def load_checkpoint(path, expected_kind: str | None = None):
    """Load parameters plus metadata; returns (params, meta dict)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 10:
        raise IntegrityError(f"{path}: truncated checkpoint")
    magic, version = struct.unpack_from("<4sH", blob)
    if magic != _CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (bad magic)")
    if version != _CKPT_VERSION:
        raise FormatError(f"{path}: checkpoint version {version}, "
                          f"expected {_CKPT_VERSION}")
    (crc,) = struct.unpack_from("<I", blob, 6)
    body = blob[10:]
    if zlib.crc32(body) != crc:
        raise IntegrityError(f"{path}: checkpoint payload corrupted")

    pos = 0
    (kind_len,) = struct.unpack_from("<B", body, pos)
    pos += 1
    kind = body[pos:pos + kind_len].decode()
    pos += kind_len
    if kind not in PARAMETER_CLASSES:
        raise CheckpointError(f"{path}: unknown model kind {kind!r}")
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"{path}: holds {kind!r} parameters, "
                              f"expected {expected_kind!r}")
    (hidden,) = struct.unpack_from("<I", body, pos)
    pos += 4
    (meta_len,) = struct.unpack_from("<I", body, pos)
    pos += 4
    meta = json.loads(body[pos:pos + meta_len].decode())
    pos += meta_len
    (n_tensors,) = struct.unpack_from("<H", body, pos)
    pos += 2
    tensors: dict[str, nm.Tensor] = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos:pos + name_len].decode()
        pos += name_len
        (ndim,) = struct.unpack_from("<B", body, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", body, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(body, dtype="<f8", count=count,
                               offset=pos).reshape(shape).copy()
        pos += 8 * count
        tensors[name] = nm.parameter(values, name)
    try:
        params = PARAMETER_CLASSES[kind](tensors, hidden)
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing tensor {exc}") from exc
    return params, meta
