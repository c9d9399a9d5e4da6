"""The full network: per-feature embedding, stacked encoding layers with
cross-layer residuals, attention-map classifier, de-embedding, and
checkpoint persistence.

Every encoding layer is shape preserving ([B, T, d_embed] in and out) and
threads a residual of representation shape [B, D, d_embed] to its
successor. All computation except the second block's linear layer and the
classifier's ensemble head stays within per-feature channel blocks, so the
parameter count depends only on the hyperparameters, never on the data or
(with absolute kernel sizes) the window length.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import attention as attn
from .autodiff import (
    Parameter,
    Tensor,
    adaptive_maxpool1d,
    concat,
    conv1d,
    conv1d_depthwise,
    conv1d_transpose_depthwise,
    dropout,
    elu,
    gelu,
    group_norm,
    kaiming_uniform,
    matmul,
    maxpool1d,
    sigmoid,
)
from .errors import (
    ConfigError,
    CorruptCheckpointError,
    MissingCheckpointError,
    ShapeMismatchError,
    UnsupportedVersionError,
)

CHECKPOINT_VERSION = 1

# attention-map classifier trunk dimensions (recorded in the effective
# config for reproducibility)
AC_CONV1_OUT = 16
AC_CONV1_K = 7
AC_CONV2_OUT = 4
AC_CONV2_K = 3
AC_POOL_LEN = 8
AC_HIDDEN = 32
AC_TRUNK_HIDDEN = 16

# minimum representation length the classifier conv stack can digest:
# conv(k=7, s=2) then conv(k=3, s=2) needs (D - 7)//2 + 1 >= 3
AC_MIN_D = 11


@dataclass
class BranchSpec:
    """One representation-stage branch: a depthwise conv plus max pooling.

    The kernel is either absolute (``kernel``) or a percentage of the window
    length (``kernel_pct``, resolved as max(1, round(pct/100 * T)) at build
    time). The stride defaults to half the kernel size, floored, min 1.
    """

    kernel: Optional[int] = None
    kernel_pct: Optional[float] = None
    dilation: int = 1
    stride: Optional[int] = None

    def __post_init__(self):
        if (self.kernel is None) == (self.kernel_pct is None):
            raise ConfigError("branch needs exactly one of kernel / kernel_pct")
        if self.kernel is not None and self.kernel < 1:
            raise ConfigError(f"branch kernel must be >= 1, got {self.kernel}")
        if self.dilation < 1:
            raise ConfigError(f"branch dilation must be >= 1, got {self.dilation}")

    def resolve(self, T: int) -> "ResolvedBranch":
        k = self.kernel if self.kernel is not None else max(1, round(self.kernel_pct / 100.0 * T))
        s = self.stride if self.stride is not None else max(1, k // 2)
        k_eff = (k - 1) * self.dilation + 1
        if k_eff > T:
            raise ConfigError(
                f"branch (kernel={k}, dilation={self.dilation}) has effective kernel "
                f"{k_eff} > window length {T}")
        conv_len = (T - k_eff) // s + 1
        pool_k = min(2, conv_len)
        pool_len = (conv_len - pool_k) // pool_k + 1
        return ResolvedBranch(k=k, dilation=self.dilation, stride=s, k_eff=k_eff,
                              conv_len=conv_len, pool_k=pool_k, pool_len=pool_len)

    def to_dict(self) -> dict:
        out = {"dilation": self.dilation}
        if self.kernel is not None:
            out["kernel"] = self.kernel
        else:
            out["kernel_pct"] = self.kernel_pct
        if self.stride is not None:
            out["stride"] = self.stride
        return out

    @staticmethod
    def from_dict(d: dict) -> "BranchSpec":
        known = {"kernel", "kernel_pct", "dilation", "stride"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown branch keys: {sorted(unknown)}")
        return BranchSpec(**d)


@dataclass(frozen=True)
class ResolvedBranch:
    k: int
    dilation: int
    stride: int
    k_eff: int
    conv_len: int
    pool_k: int
    pool_len: int


@dataclass
class ModelConfig:
    """All hyperparameters of one model instance."""

    T: int
    F: int
    f_embed: int
    n_layers: int
    heads: int
    branches: list
    attention: str = "vanilla"
    probsparse_factor: float = 5.0
    dropout_p: float = 0.1
    alpha: float = 3.5
    beta: float = 1.2
    gamma: float = 5.0
    attention_reduce_axis: str = "queries"
    num_classes: int = 1

    def __post_init__(self):
        if self.T < 1 or self.F < 1:
            raise ConfigError(f"window length and feature count must be positive, got T={self.T}, F={self.F}")
        if self.n_layers < 1:
            raise ConfigError("need at least one encoding layer")
        if not self.branches:
            raise ConfigError("need at least one representation branch")
        if self.f_embed % self.heads != 0:
            raise ConfigError(f"f_embed={self.f_embed} not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout probability must be in [0, 1), got {self.dropout_p}")
        if self.num_classes < 1:
            raise ConfigError("classifier needs at least one output")
        self.branches = [b if isinstance(b, BranchSpec) else BranchSpec.from_dict(b)
                         for b in self.branches]
        attn.AttentionKind(self.attention, self.probsparse_factor)  # validates
        if self.attention_reduce_axis not in ("queries", "keys"):
            raise ConfigError(f"unknown attention reduce axis {self.attention_reduce_axis!r}")
        D = self.D
        if D < AC_MIN_D:
            raise ConfigError(
                f"representation length D={D} too short for the classifier conv stack; "
                f"need D >= {AC_MIN_D} (from (D - {AC_CONV1_K})//2 + 1 >= {AC_CONV2_K})")

    @property
    def d_embed(self) -> int:
        return self.F * self.f_embed

    @property
    def resolved_branches(self) -> list:
        return [b.resolve(self.T) for b in self.branches]

    @property
    def D(self) -> int:
        return sum(rb.conv_len + rb.pool_len for rb in self.resolved_branches)

    @property
    def attention_kind(self) -> attn.AttentionKind:
        return attn.AttentionKind(self.attention, self.probsparse_factor)

    def to_dict(self) -> dict:
        return {
            "T": self.T, "F": self.F, "f_embed": self.f_embed,
            "n_layers": self.n_layers, "heads": self.heads,
            "branches": [b.to_dict() for b in self.branches],
            "attention": self.attention, "probsparse_factor": self.probsparse_factor,
            "dropout_p": self.dropout_p, "alpha": self.alpha, "beta": self.beta,
            "gamma": self.gamma, "attention_reduce_axis": self.attention_reduce_axis,
            "num_classes": self.num_classes,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        known = {f.name for f in ModelConfig.__dataclass_fields__.values()}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return ModelConfig(**d)


def parameter_count_formula(cfg: ModelConfig) -> int:
    """Closed-form trainable parameter count; must match the built model."""
    F, fe, de = cfg.F, cfg.f_embed, cfg.d_embed
    N, C, M = cfg.n_layers, cfg.num_classes, len(cfg.branches)
    kernels = [rb.k for rb in cfg.resolved_branches]
    embed = 2 * F * fe
    deembed = F * fe + F
    per_el = (
        sum(de * k + de for k in kernels)        # representation convs + biases
        + 2 * de                                 # block-1 group norm
        + 4 * F * fe * fe + 4 * F * fe           # per-feature q/k/v/out projections
        + 2 * de                                 # block-2 group norm
        + de * de + de                           # the one cross-feature linear
        + sum(de * k for k in kernels)           # merge transpose kernels
        + F * (M * fe * fe + fe)                 # per-feature merge feed-forward
    )
    ac_trunk = F * (
        AC_CONV1_OUT * N * AC_CONV1_K + AC_CONV1_OUT
        + AC_CONV2_OUT * AC_CONV1_OUT * AC_CONV2_K + AC_CONV2_OUT
        + (AC_CONV2_OUT * AC_POOL_LEN) * AC_TRUNK_HIDDEN + AC_TRUNK_HIDDEN
        + AC_TRUNK_HIDDEN * 1 + 1
    )
    ac_head = (F * AC_HIDDEN + AC_HIDDEN) + (AC_HIDDEN * AC_HIDDEN + AC_HIDDEN) \
        + (AC_HIDDEN * C + C)
    return embed + deembed + N * per_el + ac_trunk + ac_head


@dataclass
class ForwardTrace:
    """Everything one forward pass produces."""

    output: Tensor                      # [B, T, F]
    class_logits: Tensor                # [B, C]
    attention: np.ndarray               # [N, B, F, D] reduced map vectors, detached
    attention_full: Optional[list] = None  # per layer [B, F, D, D], detached
    feature_scores: Optional[np.ndarray] = None  # [B, F] trunk sigmoids, detached


class TsrmModel:
    """Parameter container plus the forward pass."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32,
                 task: str = "pretrain", task_spec: Optional[dict] = None,
                 _empty: bool = False):
        self.config = config
        self.task = task
        self.task_spec = task_spec
        self.dtype = dtype
        self.params: dict[str, Parameter] = {}
        if not _empty:
            self._init_params(np.random.default_rng(seed))

    # -- construction --------------------------------------------------------

    def _add(self, name: str, data: np.ndarray) -> None:
        self.params[name] = Parameter(name, Tensor(np.asarray(data, dtype=self.dtype),
                                                   requires_grad=True))

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.config
        F, fe, de = cfg.F, cfg.f_embed, cfg.d_embed
        M = len(cfg.branches)
        branches = cfg.resolved_branches

        self._add("embed.w", kaiming_uniform((F, fe), 1, rng, self.dtype))
        self._add("embed.b", np.zeros((F, fe)))

        for n in range(cfg.n_layers):
            p = f"el{n}"
            for m, rb in enumerate(branches):
                self._add(f"{p}.rl.conv{m}.w", kaiming_uniform((de, rb.k), rb.k, rng, self.dtype))
                self._add(f"{p}.rl.conv{m}.b", np.zeros(de))
            self._add(f"{p}.block1.norm.gamma", np.ones(de))
            self._add(f"{p}.block1.norm.beta", np.zeros(de))
            for w in ("wq", "wk", "wv", "wo"):
                self._add(f"{p}.attn.{w}", kaiming_uniform((F, fe, fe), fe, rng, self.dtype))
            for b in ("bq", "bk", "bv", "bo"):
                self._add(f"{p}.attn.{b}", np.zeros((F, fe)))
            self._add(f"{p}.block2.norm.gamma", np.ones(de))
            self._add(f"{p}.block2.norm.beta", np.zeros(de))
            self._add(f"{p}.block2.linear.w", kaiming_uniform((de, de), de, rng, self.dtype))
            self._add(f"{p}.block2.linear.b", np.zeros(de))
            for m, rb in enumerate(branches):
                self._add(f"{p}.ml.tconv{m}.w", kaiming_uniform((de, rb.k), rb.k, rng, self.dtype))
            self._add(f"{p}.ml.ffn.w", kaiming_uniform((F, M * fe, fe), M * fe, rng, self.dtype))
            self._add(f"{p}.ml.ffn.b", np.zeros((F, fe)))

        self._add("deembed.w", kaiming_uniform((F, fe), fe, rng, self.dtype))
        self._add("deembed.b", np.zeros(F))

        # classifier trunks: one per feature, identically initialized
        N = cfg.n_layers
        c1 = kaiming_uniform((AC_CONV1_OUT, N, AC_CONV1_K), N * AC_CONV1_K, rng, self.dtype)
        c2 = kaiming_uniform((AC_CONV2_OUT, AC_CONV1_OUT, AC_CONV2_K),
                             AC_CONV1_OUT * AC_CONV2_K, rng, self.dtype)
        flat = AC_CONV2_OUT * AC_POOL_LEN
        l1 = kaiming_uniform((flat, AC_TRUNK_HIDDEN), flat, rng, self.dtype)
        l2 = kaiming_uniform((AC_TRUNK_HIDDEN, 1), AC_TRUNK_HIDDEN, rng, self.dtype)
        self._add("ac.conv1.w", np.repeat(c1[None], F, axis=0))
        self._add("ac.conv1.b", np.zeros((F, AC_CONV1_OUT)))
        self._add("ac.conv2.w", np.repeat(c2[None], F, axis=0))
        self._add("ac.conv2.b", np.zeros((F, AC_CONV2_OUT)))
        self._add("ac.lin1.w", np.repeat(l1[None], F, axis=0))
        self._add("ac.lin1.b", np.zeros((F, AC_TRUNK_HIDDEN)))
        self._add("ac.lin2.w", np.repeat(l2[None], F, axis=0))
        self._add("ac.lin2.b", np.zeros((F, 1)))
        self.init_classifier_head(rng)

    def init_classifier_head(self, rng: np.random.Generator) -> None:
        """(Re)initialize the three ensemble linear layers of the classifier."""
        F, C = self.config.F, self.config.num_classes
        self._add("ac.head.w1", kaiming_uniform((F, AC_HIDDEN), F, rng, self.dtype))
        self._add("ac.head.b1", np.zeros(AC_HIDDEN))
        self._add("ac.head.w2", kaiming_uniform((AC_HIDDEN, AC_HIDDEN), AC_HIDDEN, rng, self.dtype))
        self._add("ac.head.b2", np.zeros(AC_HIDDEN))
        self._add("ac.head.w3", kaiming_uniform((AC_HIDDEN, C), AC_HIDDEN, rng, self.dtype))
        self._add("ac.head.b3", np.zeros(C))

    # -- parameter bookkeeping ------------------------------------------------

    def parameters(self) -> list:
        return list(self.params.values())

    def parameter_count(self, trainable_only: bool = False) -> int:
        return sum(p.data.size for p in self.params.values()
                   if not (trainable_only and p.frozen))

    def freeze(self, predicate) -> list:
        """Freeze parameters whose name satisfies the predicate; returns them."""
        hit = [p for p in self.params.values() if predicate(p.name)]
        for p in hit:
            p.frozen = True
        return hit

    def t(self, name: str) -> Tensor:
        return self.params[name].tensor

    # -- forward pieces --------------------------------------------------------

    def embed(self, x: Tensor) -> Tensor:
        B, T, F = x.shape
        if F != self.config.F:
            raise ConfigError(f"input has {F} features, model expects {self.config.F}")
        e = x.reshape(B, T, F, 1) * self.t("embed.w") + self.t("embed.b")
        return e.reshape(B, T, self.config.d_embed)

    def de_embed(self, e: Tensor) -> Tensor:
        B, T, _ = e.shape
        cfg = self.config
        per = e.reshape(B, T, cfg.F, cfg.f_embed) * self.t("deembed.w")
        return per.sum(axis=-1) + self.t("deembed.b")

    def representation(self, e: Tensor, layer: int) -> Tensor:
        """[B, T, d_embed] -> [B, D, d_embed] via the conv/pool branches."""
        xc = e.transpose(0, 2, 1)
        segments = []
        for m, rb in enumerate(self.config.resolved_branches):
            conv = conv1d_depthwise(xc, self.t(f"el{layer}.rl.conv{m}.w"),
                                    self.t(f"el{layer}.rl.conv{m}.b"),
                                    dilation=rb.dilation, stride=rb.stride)
            pool = maxpool1d(conv, rb.pool_k, rb.pool_k)
            segments.append(conv.transpose(0, 2, 1))
            segments.append(pool.transpose(0, 2, 1))
        return concat(segments, axis=1)

    def merge(self, p: Tensor, layer: int) -> Tensor:
        """[B, D, d_embed] -> [B, T, d_embed]: drop pooled segments, invert
        each conv branch, and fuse per feature."""
        cfg = self.config
        B = p.shape[0]
        restored = []
        offset = 0
        for m, rb in enumerate(cfg.resolved_branches):
            seg = p.narrow(1, offset, rb.conv_len).transpose(0, 2, 1)
            offset += rb.conv_len + rb.pool_len
            back = conv1d_transpose_depthwise(seg, self.t(f"el{layer}.ml.tconv{m}.w"),
                                              dilation=rb.dilation, stride=rb.stride,
                                              target_len=cfg.T)
            restored.append(back.transpose(0, 2, 1).reshape(B, cfg.T, cfg.F, cfg.f_embed))
        stacked = concat(restored, axis=-1)                      # [B, T, F, M*fe]
        M = len(cfg.branches)
        x5 = stacked.reshape(B, cfg.T, cfg.F, 1, M * cfg.f_embed)
        fused = matmul(x5, self.t(f"el{layer}.ml.ffn.w"))        # [B, T, F, 1, fe]
        fused = fused.reshape(B, cfg.T, cfg.F, cfg.f_embed) + self.t(f"el{layer}.ml.ffn.b")
        return fused.reshape(B, cfg.T, cfg.d_embed)

    def encoding_layer(self, e_in: Tensor, residual_in: Optional[Tensor], layer: int,
                       training: bool, rng: np.random.Generator,
                       record_full: bool = False):
        """One shape-preserving encoder unit; see module docstring for wiring."""
        cfg = self.config
        r = self.representation(e_in, layer)
        if residual_in is not None:
            r = r + residual_in

        g1 = group_norm(r, cfg.F, self.t(f"el{layer}.block1.norm.gamma"),
                        self.t(f"el{layer}.block1.norm.beta"))
        attn_params = {k: self.t(f"el{layer}.attn.{k}")
                       for k in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")}
        mha_out, reduced, full = attn.feature_separated_mha(
            gelu(g1), attn_params, cfg.attention_kind, cfg.heads, rng,
            reduce_axis=cfg.attention_reduce_axis, record_full=record_full)
        x = r + dropout(mha_out, cfg.dropout_p, training, rng)

        g2 = group_norm(x, cfg.F, self.t(f"el{layer}.block2.norm.gamma"),
                        self.t(f"el{layer}.block2.norm.beta"))
        lin = matmul(gelu(g2), self.t(f"el{layer}.block2.linear.w")) \
            + self.t(f"el{layer}.block2.linear.b")
        y = x + dropout(lin, cfg.dropout_p, training, rng)

        p = y + residual_in if residual_in is not None else y
        return self.merge(p, layer), p, reduced, full

    def attention_classifier(self, reduced_maps: list) -> tuple:
        """Class logits from the N x F reduced attention vectors only.

        reduced_maps: list (length N) of [B, F, D] tensors, still on the
        gradient graph so attention parameters keep receiving gradients.
        """
        cfg = self.config
        B = reduced_maps[0].shape[0]
        N, F = cfg.n_layers, cfg.F
        D = reduced_maps[0].shape[-1]
        stacked = concat([m.reshape(B, F, 1, D) for m in reduced_maps], axis=2)

        scores = []
        for f in range(F):
            x = stacked.narrow(1, f, 1).reshape(B, N, D)
            w1 = self.t("ac.conv1.w").narrow(0, f, 1).reshape(AC_CONV1_OUT, N, AC_CONV1_K)
            b1 = self.t("ac.conv1.b").narrow(0, f, 1).reshape(AC_CONV1_OUT)
            h = conv1d(x, w1, b1, stride=2)
            w2 = self.t("ac.conv2.w").narrow(0, f, 1).reshape(AC_CONV2_OUT, AC_CONV1_OUT, AC_CONV2_K)
            b2 = self.t("ac.conv2.b").narrow(0, f, 1).reshape(AC_CONV2_OUT)
            h = elu(conv1d(h, w2, b2, stride=2))
            h = adaptive_maxpool1d(h, AC_POOL_LEN).reshape(B, AC_CONV2_OUT * AC_POOL_LEN)
            l1w = self.t("ac.lin1.w").narrow(0, f, 1).reshape(AC_CONV2_OUT * AC_POOL_LEN, AC_TRUNK_HIDDEN)
            l1b = self.t("ac.lin1.b").narrow(0, f, 1).reshape(AC_TRUNK_HIDDEN)
            h = matmul(h, l1w) + l1b
            l2w = self.t("ac.lin2.w").narrow(0, f, 1).reshape(AC_TRUNK_HIDDEN, 1)
            l2b = self.t("ac.lin2.b").narrow(0, f, 1).reshape(1)
            scores.append(sigmoid(matmul(h, l2w) + l2b))          # [B, 1]

        s = concat(scores, axis=1)                                # [B, F]
        h = gelu(matmul(s, self.t("ac.head.w1")) + self.t("ac.head.b1"))
        h = gelu(matmul(h, self.t("ac.head.w2")) + self.t("ac.head.b2"))
        logits = matmul(h, self.t("ac.head.w3")) + self.t("ac.head.b3")
        return logits, s

    def forward(self, x: np.ndarray, training: bool = False,
                rng: Optional[np.random.Generator] = None,
                record_full: bool = False) -> ForwardTrace:
        """Run the network on [B, T, F] input (missing values already -1)."""
        cfg = self.config
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 3 or x.shape[1] != cfg.T or x.shape[2] != cfg.F:
            raise ConfigError(f"expected input [B, {cfg.T}, {cfg.F}], got {x.shape}")
        if rng is None:
            rng = np.random.default_rng(0)

        e = self.embed(Tensor(x))
        residual = None
        reduced_all, full_all = [], []
        for n in range(cfg.n_layers):
            e, residual, reduced, full = self.encoding_layer(
                e, residual, n, training, rng, record_full=record_full)
            reduced_all.append(reduced)
            full_all.append(full)

        output = self.de_embed(e)
        logits, feature_scores = self.attention_classifier(reduced_all)
        return ForwardTrace(
            output=output,
            class_logits=logits,
            attention=np.stack([m.data for m in reduced_all]),
            attention_full=full_all if record_full else None,
            feature_scores=feature_scores.data.copy(),
        )

    # -- persistence -----------------------------------------------------------

    def save_checkpoint(self, directory) -> None:
        save_checkpoint(self, directory)

    def state_arrays(self) -> dict:
        return {name: p.data for name, p in self.params.items()}

    def load_state(self, arrays: dict) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                raise ShapeMismatchError(f"missing parameter {name}")
            a = np.asarray(arrays[name], dtype=self.dtype)
            if a.shape != p.data.shape:
                raise ShapeMismatchError(
                    f"parameter {name}: expected shape {p.data.shape}, got {a.shape}")
            p.tensor.data = a.copy()


def save_checkpoint(model: TsrmModel, directory) -> None:
    """Write manifest.json plus params.bin (little-endian float32 blobs)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    blobs = []
    for name, p in model.params.items():
        raw = np.ascontiguousarray(p.data, dtype="<f4")
        blob = raw.tobytes()
        entries.append({"name": name, "shape": list(p.data.shape),
                        "offset": offset, "length": raw.size})
        offset += raw.size
        blobs.append(blob)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "task": model.task,
        "task_spec": model.task_spec,
        "params": entries,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1))
    (directory / "params.bin").write_bytes(b"".join(blobs))


def load_checkpoint(directory) -> TsrmModel:
    """Restore a model whose eval forward is bitwise identical to the saved one."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    blob_path = directory / "params.bin"
    if not directory.is_dir() or not manifest_path.exists():
        raise MissingCheckpointError(f"no checkpoint manifest at {manifest_path}")
    if not blob_path.exists():
        raise MissingCheckpointError(f"no parameter blob at {blob_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise CorruptCheckpointError(f"manifest is not valid JSON: {e}") from e
    version = manifest.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"unknown checkpoint format version {version!r}")
    for key in ("config", "params"):
        if key not in manifest:
            raise CorruptCheckpointError(f"manifest lacks the {key!r} section")

    config = ModelConfig.from_dict(manifest["config"])
    model = TsrmModel(config, task=manifest.get("task", "pretrain"),
                      task_spec=manifest.get("task_spec"), _empty=True)

    raw = blob_path.read_bytes()
    n_floats = len(raw) // 4
    if len(raw) % 4 != 0:
        raise CorruptCheckpointError("parameter blob length is not a multiple of 4 bytes")
    flat = np.frombuffer(raw, dtype="<f4")
    total = 0
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        if size != entry["length"]:
            raise CorruptCheckpointError(
                f"parameter {entry['name']}: shape {shape} disagrees with length {entry['length']}")
        if entry["offset"] + size > n_floats:
            raise CorruptCheckpointError(
                f"parameter {entry['name']} extends past the end of params.bin")
        data = flat[entry["offset"]: entry["offset"] + size].reshape(shape)
        model.params[entry["name"]] = Parameter(
            entry["name"], Tensor(data.astype(np.float32), requires_grad=True))
        total += size
    if total != n_floats:
        raise CorruptCheckpointError(
            f"params.bin holds {n_floats} floats but the manifest covers {total}")

    # cross-check restored shapes against a freshly built skeleton
    reference = TsrmModel(config, seed=0)
    if set(reference.params) != set(model.params):
        raise ShapeMismatchError("manifest parameter set does not match the config")
    for name, p in reference.params.items():
        if model.params[name].data.shape != p.data.shape:
            raise ShapeMismatchError(
                f"parameter {name}: config implies shape {p.data.shape}, "
                f"manifest stored {model.params[name].data.shape}")
    return model


def rebuild_for_window(model: TsrmModel, new_T: int):
    """Re-instantiate the model at a different window length, reusing every
    parameter tensor whose shape is unchanged.

    With absolute kernel sizes all shapes are window-independent and the
    rebuild shares every tensor. Percent kernels re-resolve against the new
    window; kernels whose resolved size changed are freshly initialized.
    Returns (new_model, list of re-resolved parameter names).
    """
    cfg = model.config
    new_cfg = ModelConfig.from_dict({**cfg.to_dict(), "T": new_T})
    fresh = TsrmModel(new_cfg, seed=0, dtype=model.dtype, task=model.task)
    reinitialized = []
    for name, p in fresh.params.items():
        old = model.params[name]
        if old.data.shape == p.data.shape:
            fresh.params[name] = old
        else:
            reinitialized.append(name)
    return fresh, reinitialized
