"""The network: time-bucketed embeddings, time-aware sequence encoding,
dual attention pooling, bottom-up graph convolution with layer combination,
and an MLP prediction head.

Shapes are kept flat: a level at depth d with fanouts (m1..md) is handled as
N = B*m1*...*m(d-1) independent sequences of length md. Sweep k of the
convolution re-aggregates every depth that still matters, so the root picks
up one representation per sweep; sweep 1 consumes raw node embeddings, later
sweeps consume the previous representations concatenated with each node's
time-decay embedding. Masked (padded) positions carry exact zero vectors at
every stage.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .graphs import DsgBatch, DsgSpec
from .tensor import Tensor

ABLATIONS = ("no_time", "no_seq_enc", "no_tase", "no_att", "no_taatt", "no_paatt", "no_lc")

LOSS_EPS = 1e-7


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions, graph spec and ablation switches for one model."""

    num_users: int
    num_items: int
    num_categories: int
    d_user: int = 64
    d_item: int = 32
    d_cat: int = 32
    d_time: int = 32
    hidden: int = 64
    heads: int = 4
    mlp_hidden: tuple[int, ...] = (256, 128)
    time_base: float = 2.0
    time_buckets: int = 40
    spec: DsgSpec = field(default_factory=DsgSpec)
    ablations: tuple[str, ...] = ()
    attn_scale_outside: bool = False
    loss_reduction: str = "mean"
    encoder_cell: str = "gru"

    def __post_init__(self):
        object.__setattr__(self, "mlp_hidden", tuple(int(x) for x in self.mlp_hidden))
        object.__setattr__(self, "ablations", tuple(self.ablations))
        self.validate()

    def validate(self) -> None:
        for name in ("d_user", "d_item", "d_cat", "d_time", "hidden", "heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if self.time_buckets < 2:
            raise ValueError("time_buckets must be >= 2")
        if self.time_base <= 1.0:
            raise ValueError("time_base must be > 1")
        unknown = set(self.ablations) - set(ABLATIONS)
        if unknown:
            raise ValueError(f"unknown ablation flags: {sorted(unknown)}")
        if "no_taatt" in self.ablations and "no_paatt" in self.ablations:
            raise ValueError("cannot drop both attention queries; at least one must remain")
        if self.loss_reduction not in ("mean", "sum"):
            raise ValueError(f"loss_reduction must be 'mean' or 'sum', got {self.loss_reduction!r}")
        if self.encoder_cell != "gru":
            raise ValueError(f"only the 'gru' encoder cell is available, got {self.encoder_cell!r}")
        if any(v < 0 for v in (self.num_users, self.num_items, self.num_categories)):
            raise ValueError("vocabulary sizes must be non-negative")

    # Derived widths.
    @property
    def user_width(self) -> int:
        return self.d_user + self.d_time

    @property
    def item_width(self) -> int:
        return self.d_item + self.d_cat + self.d_time

    @property
    def upper_width(self) -> int:
        return self.hidden + self.d_time

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def mlp_in(self) -> int:
        return self.user_width + self.item_width + 2 * self.hidden

    def side_width(self, side: str) -> int:
        return self.user_width if side == "user" else self.item_width

    # Ablation accessors.
    @property
    def drop_time(self) -> bool:
        return "no_time" in self.ablations or "no_tase" in self.ablations

    @property
    def skip_encoder(self) -> bool:
        return "no_seq_enc" in self.ablations or "no_tase" in self.ablations

    @property
    def no_att(self) -> bool:
        return "no_att" in self.ablations

    @property
    def no_paatt(self) -> bool:
        return "no_paatt" in self.ablations

    @property
    def no_taatt(self) -> bool:
        return "no_taatt" in self.ablations

    @property
    def no_lc(self) -> bool:
        return "no_lc" in self.ablations

    def with_ablations(self, *names: str) -> "ModelConfig":
        return replace(self, ablations=tuple(dict.fromkeys(self.ablations + names)))


def time_bucket(deltas, base: float, num_buckets: int) -> np.ndarray:
    """Map non-negative integer time decays to bucket indices.

    Decay 0 (padding and roots) goes to the reserved bucket 0; a decay in
    [base**l, base**(l+1)) goes to l+1, clipped to num_buckets-1. Uses a
    float log with a one-step integer-power correction so exact powers of
    the base land in the right bucket.
    """
    d = np.asarray(deltas, dtype=np.int64)
    if d.size and d.min() < 0:
        raise ValueError("time decays must be non-negative")
    out = np.zeros(d.shape, dtype=np.int64)
    pos = d >= 1
    if np.any(pos):
        dp = d[pos].astype(np.float64)
        level = np.floor(np.log(dp) / np.log(base)).astype(np.int64)
        level = np.where(np.power(float(base), level + 1) <= dp, level + 1, level)
        level = np.where(np.power(float(base), level) > dp, level - 1, level)
        out[pos] = np.minimum(level + 1, num_buckets - 1)
    return out


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every trainable parameter's name and shape, in creation order."""
    s: dict[str, tuple[int, ...]] = {}
    s["emb.user"] = (cfg.num_users, cfg.d_user)
    s["emb.item"] = (cfg.num_items, cfg.d_item)
    s["emb.cat"] = (cfg.num_categories, cfg.d_cat)
    s["emb.time"] = (cfg.time_buckets, cfg.d_time)
    for side in ("user", "item"):
        s[f"adapter.{side}.w"] = (cfg.side_width(side), cfg.hidden)
        s[f"adapter.{side}.b"] = (cfg.hidden,)
    for side in ("user", "item"):
        for k in range(1, cfg.spec.user_depth + 1):
            in_dim = cfg.side_width(side) if k == 1 else cfg.upper_width
            enc = f"enc.{side}.{k}"
            for gate in ("z", "r", "h"):
                s[f"{enc}.w{gate}"] = (in_dim, cfg.hidden)
                s[f"{enc}.u{gate}"] = (cfg.hidden, cfg.hidden)
                s[f"{enc}.b{gate}"] = (cfg.hidden,)
            att = f"att.{side}.{k}"
            for w in ("wq_pref", "wq_targ", "wk", "wv", "wo"):
                s[f"{att}.{w}"] = (cfg.hidden, cfg.hidden)
    widths = [cfg.mlp_in, *cfg.mlp_hidden, 1]
    for li in range(len(widths) - 1):
        s[f"mlp.{li}.w"] = (widths[li], widths[li + 1])
        s[f"mlp.{li}.b"] = (widths[li + 1],)
    return s


class ModelParams:
    """All trainable weights, keyed by name.

    Matrices and embedding tables are Xavier-uniform from one seeded stream
    (so a (config, seed) pair pins every value); bias vectors start at zero.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, _init: bool = True):
        self.config = config
        self.seed = seed
        self.tensors: dict[str, Tensor] = {}
        if not _init:
            return
        rng = np.random.default_rng(seed)
        for name, shape in param_shapes(config).items():
            if len(shape) == 1:
                self.tensors[name] = T.zeros(shape, requires_grad=True)
            else:
                self.tensors[name] = T.xavier_uniform_init(shape, rng=rng, requires_grad=True)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.items())

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def clone(self) -> "ModelParams":
        out = ModelParams(self.config, self.seed, _init=False)
        for name, t in self.tensors.items():
            out.tensors[name] = Tensor(t.data.copy(), requires_grad=True)
        return out

    def astype(self, dtype) -> "ModelParams":
        out = ModelParams(self.config, self.seed, _init=False)
        for name, t in self.tensors.items():
            out.tensors[name] = Tensor(t.data.astype(dtype), requires_grad=True)
        return out

    def zero_grads(self) -> None:
        T.zero_grads(self.tensors.values())

    def total_size(self) -> int:
        return sum(t.size for t in self.tensors.values())


@dataclass
class AttentionTrace:
    """Softmax weights captured from one attention branch, for inspection."""

    side: str
    layer: int
    branch: str
    weights: np.ndarray
    key_mask: np.ndarray


def _embed_nodes(params: ModelParams, cfg: ModelConfig, side: str, ids: np.ndarray,
                 cats: np.ndarray | None, deltas: np.ndarray,
                 maskf: np.ndarray | None) -> Tensor:
    """Zero-layer embedding of a flat list of nodes: ID (+ category for
    items) concatenated with the time-decay embedding; masked rows zeroed."""
    parts = []
    if side == "item":
        parts.append(T.gather_rows(params["emb.item"], ids))
        parts.append(T.gather_rows(params["emb.cat"], cats))
    else:
        parts.append(T.gather_rows(params["emb.user"], ids))
    if cfg.drop_time:
        parts.append(T.zeros((ids.shape[0], cfg.d_time), dtype=params.dtype))
    else:
        buckets = time_bucket(deltas, cfg.time_base, cfg.time_buckets)
        parts.append(T.gather_rows(params["emb.time"], buckets))
    e = T.concat(parts, axis=1)
    if maskf is not None:
        e = T.mul(e, maskf[:, None])
    return e


def _adapt(params: ModelParams, side: str, e: Tensor) -> Tensor:
    return T.add(T.matmul(e, params[f"adapter.{side}.w"]), params[f"adapter.{side}.b"])


def _encode_sequence(inputs: Tensor, mask: np.ndarray, params: ModelParams,
                     cfg: ModelConfig, side: str, layer: int) -> Tensor:
    """Recurrent pass over (N, L, Din) sequences, oldest to newest.

    At masked steps the hidden state is carried over unchanged and the
    emitted output is zero, so a right-aligned padded sequence encodes the
    same as its unpadded version. With the encoder skipped (no_seq_enc /
    no_tase) each step is just the candidate-state projection of its input.
    """
    n, seq_len, in_dim = inputs.shape
    hid = cfg.hidden

    def p(name: str) -> Tensor:
        return params[f"enc.{side}.{layer}.{name}"]

    flat = T.reshape(inputs, (n * seq_len, in_dim))
    if cfg.skip_encoder:
        proj = T.add(T.matmul(flat, p("wh")), p("bh"))
        return T.mul(T.reshape(proj, (n, seq_len, hid)), mask[:, :, None])
    # gate input projections are fused into one matmul over all steps; the
    # z/r recurrent projections fuse too, the candidate's cannot (it sees r*h)
    w_all = T.concat([p("wz"), p("wr"), p("wh")], axis=1)
    b_all = T.concat([p("bz"), p("br"), p("bh")], axis=0)
    u_zr = T.concat([p("uz"), p("ur")], axis=1)
    gates_x = T.reshape(T.add(T.matmul(flat, w_all), b_all), (n, seq_len, 3 * hid))
    h = T.zeros((n, hid), dtype=params.dtype)
    steps = []
    for j in range(seq_len):
        gx = T.reshape(T.slice_axis(gates_x, 1, j, j + 1), (n, 3 * hid))
        gu = T.matmul(h, u_zr)
        z = T.sigmoid(T.add(T.slice_axis(gx, 1, 0, hid), T.slice_axis(gu, 1, 0, hid)))
        r = T.sigmoid(T.add(T.slice_axis(gx, 1, hid, 2 * hid),
                            T.slice_axis(gu, 1, hid, 2 * hid)))
        cand = T.tanh(T.add(T.slice_axis(gx, 1, 2 * hid, 3 * hid),
                            T.matmul(T.mul(r, h), p("uh"))))
        h_new = T.add(T.mul(z, h), T.mul(T.sub(1.0, z), cand))
        m = mask[:, j : j + 1]
        h = T.add(T.mul(h_new, m), T.mul(h, 1.0 - m))
        steps.append(T.reshape(T.mul(h, m), (n, 1, hid)))
    return T.concat(steps, axis=1)


def _dual_attention(h_seq: Tensor, mask: np.ndarray, q_pref: Tensor, q_targ: Tensor,
                    params: ModelParams, cfg: ModelConfig, side: str, layer: int,
                    capture: list | None = None) -> Tensor:
    """Sum of the preference-queried and target-queried multi-head poolings.

    The two branches use separate query projections but share keys, values
    and the output projection. Masked keys get exactly zero weight; rows with
    no valid key return the zero vector. With no_att the layer degrades to
    masked mean pooling of the encoder outputs.
    """
    n, seq_len, hid = h_seq.shape
    if cfg.no_att:
        total = T.sum_axis(T.mul(h_seq, mask[:, :, None]), axis=1)
        counts = np.maximum(mask.sum(axis=1, keepdims=True), 1.0)
        return T.div(total, counts)
    heads, dh = cfg.heads, cfg.head_dim

    def p(name: str) -> Tensor:
        return params[f"att.{side}.{layer}.{name}"]

    flat = T.reshape(h_seq, (n * seq_len, hid))
    k_heads = T.transpose(T.reshape(T.matmul(flat, p("wk")), (n, seq_len, heads, dh)),
                          (0, 2, 1, 3))
    v_heads = T.transpose(T.reshape(T.matmul(flat, p("wv")), (n, seq_len, heads, dh)),
                          (0, 2, 1, 3))
    key_mask = mask[:, None, :]
    branches = []
    if not cfg.no_paatt:
        branches.append((q_pref, "wq_pref"))
    if not cfg.no_taatt:
        branches.append((q_targ, "wq_targ"))
    out = None
    for q, wq_name in branches:
        qh = T.reshape(T.matmul(q, p(wq_name)), (n, heads, 1, dh))
        scores = T.sum_axis(T.mul(qh, k_heads), axis=3)
        if not cfg.attn_scale_outside:
            scores = T.mul(scores, 1.0 / math.sqrt(dh))
        weights = T.masked_softmax(scores, key_mask, axis=-1)
        if capture is not None:
            capture.append(AttentionTrace(side, layer, wq_name, weights.data.copy(), mask))
        if cfg.attn_scale_outside:
            weights = T.mul(weights, 1.0 / math.sqrt(dh))
        ctx = T.sum_axis(T.mul(T.reshape(weights, (n, heads, seq_len, 1)), v_heads), axis=2)
        proj = T.matmul(T.reshape(ctx, (n, hid)), p("wo"))
        out = proj if out is None else T.add(out, proj)
    return out


def _tree_outputs(params: ModelParams, cfg: ModelConfig, levels, batch_size: int,
                  root_query: Tensor, root_target_query: Tensor,
                  capture: list | None) -> list[Tensor]:
    """Run the bottom-up sweeps over one rooted tree.

    Returns one root representation per sweep (layer). Sweep k uses the
    parameter sets indexed k; within a sweep each depth aggregates its
    children's previous representations (raw embeddings on sweep 1).
    """
    depth = len(levels)
    if depth == 0:
        return []
    dtype = params.dtype
    sizes = [batch_size]
    fanouts = []
    e0: dict[int, Tensor] = {}
    temb: dict[int, Tensor] = {}
    mask2: dict[int, np.ndarray] = {}
    maskf: dict[int, np.ndarray] = {}
    for d, lv in enumerate(levels, start=1):
        m = lv.node_ids.shape[-1]
        fanouts.append(m)
        sizes.append(sizes[d - 1] * m)
        ids = lv.node_ids.reshape(-1)
        deltas = lv.time_decays.reshape(-1)
        mf = lv.valid_mask.reshape(-1).astype(dtype)
        cats = lv.category_ids.reshape(-1) if lv.category_ids is not None else None
        maskf[d] = mf
        mask2[d] = mf.reshape(sizes[d - 1], m)
        e0[d] = _embed_nodes(params, cfg, lv.side, ids, cats, deltas, mf)
        if cfg.drop_time:
            temb[d] = T.zeros((sizes[d], cfg.d_time), dtype=dtype)
        else:
            buckets = time_bucket(deltas, cfg.time_base, cfg.time_buckets)
            temb[d] = T.mul(T.gather_rows(params["emb.time"], buckets), mf[:, None])
    q_pref: dict[int, Tensor] = {0: root_query}
    q_targ: dict[int, Tensor] = {0: root_target_query}
    for d in range(1, depth + 1):
        q_pref[d] = _adapt(params, levels[d - 1].side, e0[d])
        q_targ[d] = T.repeat_rows(q_pref[d - 1], fanouts[d - 1])
    x_prev: dict[int, Tensor] = {}
    roots = []
    for k in range(1, depth + 1):
        new_x: dict[int, Tensor] = {}
        for d in range(0, depth - k + 1):
            child = d + 1
            m = fanouts[d]
            side = levels[d].side  # side of the child nodes being aggregated
            if k == 1:
                child_in = T.reshape(e0[child], (sizes[d], m, cfg.side_width(side)))
            else:
                x3 = T.reshape(x_prev[child], (sizes[d], m, cfg.hidden))
                t3 = T.reshape(temb[child], (sizes[d], m, cfg.d_time))
                child_in = T.concat([x3, t3], axis=2)
            h_seq = _encode_sequence(child_in, mask2[child], params, cfg, side, k)
            out = _dual_attention(h_seq, mask2[child], q_pref[d], q_targ[d],
                                  params, cfg, side, k, capture)
            if d > 0:
                out = T.mul(out, maskf[d][:, None])
            new_x[d] = out
        roots.append(new_x[0])
        x_prev = new_x
    return roots


def layer_combine(layers: list[Tensor], use_last: bool = False) -> Tensor:
    """Arithmetic mean of the per-layer root representations (or the last)."""
    if not layers:
        raise ValueError("layer combination needs at least one layer")
    if use_last:
        return layers[-1]
    out = layers[0]
    for x in layers[1:]:
        out = T.add(out, x)
    return T.mul(out, 1.0 / len(layers))


def forward_scores(params: ModelParams, cfg: ModelConfig, batch: DsgBatch,
                   capture: list | None = None) -> Tensor:
    """Predicted click probabilities, shape (B,), strictly inside (0, 1)."""
    if batch.spec.user_depth != cfg.spec.user_depth or \
            batch.spec.user_plan != cfg.spec.user_plan or \
            batch.spec.item_plan != cfg.spec.item_plan:
        raise ValueError(f"batch built with {batch.spec}, model expects {cfg.spec}")
    b = batch.batch_size
    e_user = _embed_nodes(params, cfg, "user", batch.user_ids, None,
                          batch.root_time_decay, None)
    e_item = _embed_nodes(params, cfg, "item", batch.item_ids, batch.item_category_ids,
                          batch.root_time_decay, None)
    q_user = _adapt(params, "user", e_user)
    q_item = _adapt(params, "item", e_item)
    # The two roots are each other's targets.
    user_layers = _tree_outputs(params, cfg, batch.user_levels, b, q_user, q_item, capture)
    item_layers = _tree_outputs(params, cfg, batch.item_levels, b, q_item, q_user, capture)
    x_user = layer_combine(user_layers, cfg.no_lc)
    x_item = (layer_combine(item_layers, cfg.no_lc) if item_layers
              else T.zeros((b, cfg.hidden), dtype=params.dtype))
    h = T.concat([e_user, e_item, x_user, x_item], axis=1)
    for li in range(len(cfg.mlp_hidden)):
        h = T.relu(T.add(T.matmul(h, params[f"mlp.{li}.w"]), params[f"mlp.{li}.b"]))
    out_li = len(cfg.mlp_hidden)
    logit = T.add(T.matmul(h, params[f"mlp.{out_li}.w"]), params[f"mlp.{out_li}.b"])
    return T.reshape(T.sigmoid(logit), (b,))


def prediction_loss(scores: Tensor, labels, reduction: str = "mean",
                    eps: float = LOSS_EPS) -> Tensor:
    """Binary cross-entropy over a batch, scores clipped to [eps, 1-eps]."""
    y = np.asarray(labels, dtype=scores.dtype)
    if y.shape != scores.shape:
        raise ValueError(f"labels shape {y.shape} does not match scores {scores.shape}")
    p = T.clip(scores, eps, 1.0 - eps)
    per_sample = T.add(T.mul(T.log(p), y), T.mul(T.log(T.sub(1.0, p)), 1.0 - y))
    total = T.neg(T.sum_axis(per_sample))
    if reduction == "mean":
        return T.mul(total, 1.0 / max(scores.size, 1))
    return total


# Checkpoint format: magic, u32 header length, UTF-8 key=value header
# (config echo plus seed and step), u32 parameter count, then per parameter:
# u16 name length, name, u8 float width (4 or 8), u8 ndim, u32 dims,
# raw little-endian values.
CHECKPOINT_MAGIC = b"DSGLCKPT"


def config_to_kv(cfg: ModelConfig) -> dict[str, str]:
    return {
        "num_users": str(cfg.num_users),
        "num_items": str(cfg.num_items),
        "num_categories": str(cfg.num_categories),
        "d_user": str(cfg.d_user),
        "d_item": str(cfg.d_item),
        "d_cat": str(cfg.d_cat),
        "d_time": str(cfg.d_time),
        "hidden": str(cfg.hidden),
        "heads": str(cfg.heads),
        "mlp_hidden": ",".join(map(str, cfg.mlp_hidden)),
        "time_base": repr(cfg.time_base),
        "time_buckets": str(cfg.time_buckets),
        "depth": str(cfg.spec.user_depth),
        "user_fanouts": ",".join(map(str, cfg.spec.user_plan)),
        "item_fanouts": ",".join(map(str, cfg.spec.item_plan)) or "-",
        "ablations": ",".join(cfg.ablations) or "-",
        "attn_scale_outside": str(int(cfg.attn_scale_outside)),
        "loss_reduction": cfg.loss_reduction,
        "encoder_cell": cfg.encoder_cell,
    }


def config_from_kv(kv: dict[str, str]) -> ModelConfig:
    def ints(key):
        return tuple(int(x) for x in kv[key].split(",")) if kv[key] != "-" else ()

    return ModelConfig(
        num_users=int(kv["num_users"]),
        num_items=int(kv["num_items"]),
        num_categories=int(kv["num_categories"]),
        d_user=int(kv["d_user"]),
        d_item=int(kv["d_item"]),
        d_cat=int(kv["d_cat"]),
        d_time=int(kv["d_time"]),
        hidden=int(kv["hidden"]),
        heads=int(kv["heads"]),
        mlp_hidden=ints("mlp_hidden"),
        time_base=float(kv["time_base"]),
        time_buckets=int(kv["time_buckets"]),
        spec=DsgSpec(int(kv["depth"]), ints("user_fanouts"), ints("item_fanouts")),
        ablations=tuple(x for x in kv["ablations"].split(",") if x and x != "-"),
        attn_scale_outside=bool(int(kv["attn_scale_outside"])),
        loss_reduction=kv["loss_reduction"],
        encoder_cell=kv["encoder_cell"],
    )


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ModelParams, step: int = 0) -> None:
    kv = config_to_kv(params.config)
    kv["seed"] = str(params.seed)
    kv["step"] = str(step)
    header = "".join(f"{k}={v}\n" for k, v in kv.items()).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(params.tensors)))
        for name, t in params.tensors.items():
            nb = name.encode("utf-8")
            width = t.data.dtype.itemsize
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<BB", width, t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(t.data.astype(f"<f{width}").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, int]:
    """Read a checkpoint; every stored shape is validated against the
    configuration echoed in its own header."""
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a model checkpoint (bad magic)")
        off = len(CHECKPOINT_MAGIC)
        (hlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        header = blob[off : off + hlen].decode("utf-8")
        off += hlen
        kv = dict(line.split("=", 1) for line in header.splitlines() if line)
        cfg = config_from_kv(kv)
        seed = int(kv.get("seed", "0"))
        step = int(kv.get("step", "0"))
        expected = param_shapes(cfg)
        params = ModelParams(cfg, seed, _init=False)
        (count,) = struct.unpack_from("<I", blob, off)
        off += 4
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + nlen].decode("utf-8")
            off += nlen
            width, ndim = struct.unpack_from("<BB", blob, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            if name not in expected:
                raise CheckpointError(f"{path}: unexpected parameter {name!r}")
            if tuple(shape) != expected[name]:
                raise CheckpointError(
                    f"{path}: parameter {name!r} has shape {tuple(shape)}, "
                    f"config implies {expected[name]}")
            if width not in (4, 8):
                raise CheckpointError(f"{path}: bad float width {width} for {name!r}")
            n = int(np.prod(shape, dtype=np.int64)) if shape else 1
            data = np.frombuffer(blob, dtype=f"<f{width}", count=n, offset=off)
            off += n * width
            params.tensors[name] = Tensor(
                data.reshape(shape).astype(f"f{width}"), requires_grad=True)
        missing = set(expected) - set(params.tensors)
        if missing:
            raise CheckpointError(f"{path}: missing parameters {sorted(missing)[:3]}...")
    except CheckpointError:
        raise
    except (struct.error, UnicodeDecodeError, KeyError, IndexError, ValueError) as exc:
        raise CheckpointError(f"{path}: corrupted checkpoint ({exc})") from exc
    return params, step
