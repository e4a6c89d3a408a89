"""Mean-field refinement of one scale from multi-scale features.

The model couples per-scale hidden features, a rank-T spatial/channel gate
per emitting scale, and pairwise kernels. With all other factors held at
their posterior means, each update has a closed form:

  hidden        (b * f_r + sum_e gate_e (.) message_e) / b
  spatial gate  sigmoid( sum_c  channel_gate[c] * (hidden (.) message_e)[c] )
  channel gate  softmax( sum_p  spatial_gate[p] * (hidden (.) message_e)[p] )
  kernels       f_r (x) f_e + (gate (.) hidden_r) (x) hidden_e

refine_scale runs these in order behind learned convolution kernels: each
emitting scale's features pass through a self convolution, a bilinear resize
to the receiving extent, a 1x1 channel projection, and a cross convolution;
the updated kernels are estimated by a convolution over the concatenation of
gated receiving features and the resized emitting summary, and modulate the
messages on subsequent iterations. Everything is differentiable and runs on
the autodiff tape, so the whole pass trains end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .attention import AttentionMap, AttentionVector, StructuredAttention, assemble
from .autodiff import Tape, Variable
from .errors import DomainError, ShapeError, SizeCapError
from .tensor import Tensor

VARIANTS = ("none", "spatial-only", "channel-only", "structured", "deterministic-low-rank")

# hard cap on materialized pairwise kernel tables; production inference
# always goes through kernel_field instead
PAIRWISE_TABLE_CAP = 65536


@dataclass(frozen=True)
class InferenceConfig:
    """Knobs of one refinement pass."""

    rank: int = 1              # number of rank-one gate terms (T)
    variant: str = "structured"
    iterations: int = 1        # mean-field sweeps; gradients flow through all of them
    kernel_size: int = 3       # spatial extent of the learned kernels
    b_value: float = 1.0       # precision of the unary feature term, > 0

    def validate(self) -> "InferenceConfig":
        if int(self.rank) != self.rank or self.rank < 0:
            raise DomainError(f"rank must be an integer >= 0, got {self.rank!r}")
        if self.variant not in VARIANTS:
            raise DomainError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise DomainError(f"iterations must be an integer >= 1, got {self.iterations!r}")
        k = self.kernel_size
        if int(k) != k or k < 1 or k % 2 == 0:
            raise DomainError(f"kernel_size must be odd and >= 1, got {k!r}")
        if not (self.b_value > 0.0) or not np.isfinite(self.b_value):
            raise DomainError(f"b_value must be finite and > 0, got {self.b_value!r}")
        return self

    def effective_variant(self) -> str:
        # rank 0 leaves nothing to gate; collapse to the ungated path
        if self.variant != "none" and self.rank == 0:
            return "none"
        return self.variant


@dataclass(frozen=True)
class MultiScaleFeatures:
    """Per-scale feature tensors plus which scale receives the refinement."""

    features: tuple[Tensor, ...]
    receiving_index: int

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if not self.features:
            raise ShapeError("need at least one scale")
        for f in self.features:
            if len(f.dims) != 3:
                raise ShapeError("every scale must be [C, H, W]", f.dims)
        r = int(self.receiving_index)
        if not (0 <= r < len(self.features)):
            raise DomainError(
                f"receiving_index {r} out of range for {len(self.features)} scales"
            )
        object.__setattr__(self, "receiving_index", r)

    @property
    def receiving(self) -> Tensor:
        return self.features[self.receiving_index]


@dataclass
class KernelBank:
    """Learned kernels of one refinement block.

    Per emitting scale e: a self kernel [C_e, C_e, k, k] applied at the
    emitting resolution, a 1x1 projection [C_r, C_e, 1, 1] aligning channels
    to the receiving scale, a cross kernel [C_r, C_r, k, k] applied after the
    resize, and a kernel-estimation filter [C_r, C_r + 1, k, k] consuming the
    gated receiving block concatenated with the emitting summary channel.
    One output kernel [C_r, C_r, k, k] produces the final residual.

    gate_map_logits / gate_vec_logits optionally hold per-(scale, t) learned
    initial gate pre-states (sigmoid and softmax parameterizations). When
    absent, refine_scale draws the initial spatial gates uniformly in (0, 1)
    from its seed and starts the channel gates uniform.
    """

    self_kernels: list[Tensor]
    projections: list[Tensor]
    cross_kernels: list[Tensor]
    field_kernels: list[Tensor]
    out_kernel: Tensor
    gate_map_logits: list[list[Tensor]] | None = None
    gate_vec_logits: list[list[Tensor]] | None = None

    def scale_count(self) -> int:
        return len(self.self_kernels)

    def validate(self) -> "KernelBank":
        n = len(self.self_kernels)
        for name, group in (
            ("projections", self.projections),
            ("cross_kernels", self.cross_kernels),
            ("field_kernels", self.field_kernels),
        ):
            if len(group) != n:
                raise ShapeError(f"bank holds {n} self kernels but {len(group)} {name}")
        for group in (self.self_kernels, self.projections, self.cross_kernels, self.field_kernels):
            for t in group:
                if len(t.dims) != 4:
                    raise ShapeError("bank kernels must be [C_out, C_in, kh, kw]", t.dims)
        if len(self.out_kernel.dims) != 4:
            raise ShapeError("output kernel must be [C_out, C_in, kh, kw]", self.out_kernel.dims)
        for logits in (self.gate_map_logits, self.gate_vec_logits):
            if logits is not None and len(logits) != n:
                raise ShapeError(f"gate seeds must cover all {n} scales")
        return self


@dataclass(frozen=True)
class AttentionState:
    """Final gate posteriors, one StructuredAttention per emitting scale."""

    per_scale: tuple[StructuredAttention, ...]


@dataclass
class BankVars:
    """KernelBank lifted onto a tape (same layout, Variables instead of Tensors)."""

    self_kernels: list[Variable]
    projections: list[Variable]
    cross_kernels: list[Variable]
    field_kernels: list[Variable]
    out_kernel: Variable
    gate_map_logits: list[list[Variable]] | None = None
    gate_vec_logits: list[list[Variable]] | None = None


def lift_bank(tape: Tape, bank: KernelBank, requires_grad: bool = False) -> BankVars:
    lift = (lambda t: tape.leaf(t)) if requires_grad else (lambda t: tape.constant(t))
    return BankVars(
        self_kernels=[lift(t) for t in bank.self_kernels],
        projections=[lift(t) for t in bank.projections],
        cross_kernels=[lift(t) for t in bank.cross_kernels],
        field_kernels=[lift(t) for t in bank.field_kernels],
        out_kernel=lift(bank.out_kernel),
        gate_map_logits=None
        if bank.gate_map_logits is None
        else [[lift(t) for t in row] for row in bank.gate_map_logits],
        gate_vec_logits=None
        if bank.gate_vec_logits is None
        else [[lift(t) for t in row] for row in bank.gate_vec_logits],
    )


def init_bank(
    channels: Sequence[int],
    receiving_index: int,
    receiving_hw: tuple[int, int],
    cfg: InferenceConfig,
    rng: np.random.Generator,
) -> KernelBank:
    """Seeded bank construction; draw order is fixed so runs reproduce.

    Per scale: self, projection, cross, field kernels; then the output
    kernel; then gate seeds (maps, then vectors, per scale then per t) when
    the variant learns them.
    """
    cfg.validate()
    cr = channels[receiving_index]
    k = cfg.kernel_size
    hr, wr = receiving_hw

    def draw(*dims):
        fan_in = dims[1] * dims[2] * dims[3]
        return Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=dims))

    self_kernels, projections, cross_kernels, field_kernels = [], [], [], []
    for ce in channels:
        self_kernels.append(draw(ce, ce, k, k))
        projections.append(draw(cr, ce, 1, 1))
        cross_kernels.append(draw(cr, cr, k, k))
        field_kernels.append(draw(cr, cr + 1, k, k))
    out_kernel = draw(cr, cr, k, k)

    variant = cfg.effective_variant()
    map_logits = None
    vec_logits = None
    if variant in ("structured", "spatial-only", "deterministic-low-rank"):
        map_logits = []
        for _ in channels:
            row = []
            for _ in range(cfg.rank):
                u = rng.uniform(size=(hr, wr))
                row.append(Tensor(np.log(u / (1.0 - u))))  # sigmoid(logit) is exactly u
            map_logits.append(row)
    if variant in ("structured", "channel-only", "deterministic-low-rank"):
        vec_logits = [
            [Tensor(np.zeros(cr)) for _ in range(cfg.rank)] for _ in channels
        ]
    return KernelBank(
        self_kernels=self_kernels,
        projections=projections,
        cross_kernels=cross_kernels,
        field_kernels=field_kernels,
        out_kernel=out_kernel,
        gate_map_logits=map_logits,
        gate_vec_logits=vec_logits,
    ).validate()


# ---------------------------------------------------------------------------
# tape-level building blocks (shared by the public ops and refine_scale)
# ---------------------------------------------------------------------------


def _message_vars(feat: Variable, bankv: BankVars, e: int, hr: int, wr: int, field):
    """Self conv -> resize -> 1x1 projection -> cross conv [-> field gate]."""
    if not (0 <= e < len(bankv.self_kernels)):
        raise ShapeError(
            f"no kernels for emitting scale {e}; bank covers {len(bankv.self_kernels)} scales"
        )
    a1 = ad.conv2d(feat, bankv.self_kernels[e])
    a2 = ad.resize_bilinear(a1, hr, wr)
    a3 = ad.conv2d(a2, bankv.projections[e])
    msg = ad.conv2d(a3, bankv.cross_kernels[e])
    if field is not None:
        msg = ad.mul(msg, field)
    return msg, a2


def _assemble_vars(maps: list[Variable], vectors: list[Variable]) -> Variable:
    gate = ad.outer_map_vec(maps[0], vectors[0])
    for t in range(1, len(maps)):
        gate = ad.add(gate, ad.outer_map_vec(maps[t], vectors[t]))
    return gate


def _hidden_update_vars(f_var, msg_vars, gate_vars, b_const) -> Variable:
    acc = ad.mul(b_const, f_var)
    for msg, gate in zip(msg_vars, gate_vars):
        acc = ad.add(acc, ad.mul(msg, gate))
    return ad.div(acc, b_const)


def _spatial_gate_vars(evidence: Variable, channel_gate: Variable) -> Variable:
    return ad.sigmoid(ad.channel_weighted_sum(evidence, channel_gate))


def _channel_gate_vars(evidence: Variable, spatial_gate: Variable) -> Variable:
    return ad.softmax1d(ad.spatial_weighted_sum(evidence, spatial_gate))


def _field_vars(f_r, hidden, gate, summary, field_kernel) -> Variable:
    gated = ad.add(f_r, ad.mul(hidden, gate))
    cat = ad.concat_channels([gated, summary])
    return ad.conv2d(cat, field_kernel)


def _refine_core(tape, feats, receiving_index, bankv, cfg, seed):
    """The full pass over Variables. Mirrors oracle.naive_refine_scale."""
    r = receiving_index
    f_r = feats[r]
    cr, hr, wr = f_r.value.dims
    n = len(feats)
    rank = cfg.rank
    variant = cfg.effective_variant()

    if variant == "none":
        out = f_r
        for e in range(n):
            msg, _ = _message_vars(feats[e], bankv, e, hr, wr, None)
            out = ad.add(out, msg)
        empty = StructuredAttention(rank=0)
        return out, [empty] * n, out

    maps = [[None] * rank for _ in range(n)]
    vectors = [[None] * rank for _ in range(n)]
    rng = np.random.default_rng(seed)
    uniform_vec = Tensor(np.full(cr, 1.0 / cr))
    ones_map = Tensor(np.ones((hr, wr)))
    for e in range(n):
        for t in range(rank):
            if variant == "channel-only":
                maps[e][t] = tape.constant(ones_map)
            elif bankv.gate_map_logits is not None:
                maps[e][t] = ad.sigmoid(bankv.gate_map_logits[e][t])
            else:
                maps[e][t] = tape.constant(Tensor(rng.uniform(size=(hr, wr))))
            if variant == "spatial-only":
                vectors[e][t] = tape.constant(uniform_vec)
            elif bankv.gate_vec_logits is not None:
                vectors[e][t] = ad.softmax1d(bankv.gate_vec_logits[e][t])
            else:
                vectors[e][t] = tape.constant(uniform_vec)

    b_const = tape.constant(Tensor(np.full((cr, hr, wr), cfg.b_value)))
    fields = [None] * n
    hidden = f_r
    for _ in range(cfg.iterations):
        msgs, summaries = [], []
        for e in range(n):
            msg, a2 = _message_vars(feats[e], bankv, e, hr, wr, fields[e])
            msgs.append(msg)
            summaries.append(a2)
        gates = [_assemble_vars(maps[e], vectors[e]) for e in range(n)]
        hidden = _hidden_update_vars(f_r, msgs, gates, b_const)
        for e in range(n):
            evidence = ad.mul(hidden, msgs[e])
            for t in range(rank):
                if variant in ("structured", "spatial-only"):
                    maps[e][t] = _spatial_gate_vars(evidence, vectors[e][t])
                if variant in ("structured", "channel-only"):
                    vectors[e][t] = _channel_gate_vars(evidence, maps[e][t])
        for e in range(n):
            gate = _assemble_vars(maps[e], vectors[e])
            fields[e] = _field_vars(
                f_r, hidden, gate, ad.channel_mean(summaries[e]), bankv.field_kernels[e]
            )

    refined = ad.add(f_r, ad.conv2d(hidden, bankv.out_kernel))
    atts = [
        StructuredAttention(
            rank=rank,
            maps=tuple(AttentionMap(m.value) for m in maps[e]),
            vectors=tuple(AttentionVector(v.value) for v in vectors[e]),
        )
        for e in range(n)
    ]
    return refined, atts, hidden


# ---------------------------------------------------------------------------
# public ops
# ---------------------------------------------------------------------------


def message_pass(
    emitting: Tensor,
    bank: KernelBank,
    e: int,
    target_hw: tuple[int, int],
    field: Tensor | None = None,
) -> Tensor:
    """Transform one emitting scale into the receiving scale's geometry."""
    tape = Tape()
    feat = tape.constant(emitting)
    bankv = lift_bank(tape, bank)
    fvar = None if field is None else tape.constant(field)
    msg, _ = _message_vars(feat, bankv, e, int(target_hw[0]), int(target_hw[1]), fvar)
    return msg.value


def _check_b(b: Tensor | None, dims) -> Tensor:
    if b is None:
        return Tensor(np.ones(dims))
    if b.dims != tuple(dims):
        raise ShapeError("precision weights must match the feature block", b.dims, dims)
    if not np.all(b.data > 0.0):
        raise DomainError("precision weights must be strictly positive everywhere")
    return b


def update_hidden(
    f_r: Tensor,
    messages: Sequence[Tensor],
    atts: Sequence[StructuredAttention],
    b: Tensor | None = None,
) -> Tensor:
    """Posterior mean of the receiving hidden features."""
    if len(messages) != len(atts):
        raise ShapeError(
            f"{len(messages)} messages but {len(atts)} attention states"
        )
    if len(f_r.dims) != 3:
        raise ShapeError("features must be [C, H, W]", f_r.dims)
    for m in messages:
        if m.dims != f_r.dims:
            raise ShapeError("messages must match the receiving block", m.dims, f_r.dims)
    b = _check_b(b, f_r.dims)
    tape = Tape()
    fv = tape.constant(f_r)
    bv = tape.constant(b)
    msg_vars, gate_vars = [], []
    for m, att in zip(messages, atts):
        if att.rank == 0:
            continue  # empty gate contributes nothing
        gate = assemble(att)
        if gate.dims != f_r.dims:
            raise ShapeError("gate extent does not match features", gate.dims, f_r.dims)
        msg_vars.append(tape.constant(m))
        gate_vars.append(tape.constant(gate))
    return _hidden_update_vars(fv, msg_vars, gate_vars, bv).value


def update_spatial_gate(
    hidden: Tensor, message_e: Tensor, channel_gate: AttentionVector
) -> AttentionMap:
    """Sigmoid of the channel-gate-weighted evidence; entries stay in (0, 1)."""
    if hidden.dims != message_e.dims:
        raise ShapeError("hidden and message disagree", hidden.dims, message_e.dims)
    tape = Tape()
    evidence = ad.mul(tape.constant(hidden), tape.constant(message_e))
    out = _spatial_gate_vars(evidence, tape.constant(channel_gate.values))
    return AttentionMap(out.value)


def update_channel_gate(
    hidden: Tensor, message_e: Tensor, spatial_gate: AttentionMap
) -> AttentionVector:
    """Softmax of the spatial-gate-weighted evidence; lands on the simplex."""
    if hidden.dims != message_e.dims:
        raise ShapeError("hidden and message disagree", hidden.dims, message_e.dims)
    tape = Tape()
    evidence = ad.mul(tape.constant(hidden), tape.constant(message_e))
    out = _channel_gate_vars(evidence, tape.constant(spatial_gate.values))
    return AttentionVector(out.value)


def pairwise_kernel_table(
    f_r: Tensor, f_e: Tensor, hidden_r: Tensor, hidden_e: Tensor, att: StructuredAttention
) -> Tensor:
    """Closed-form kernel posterior means as an explicit [P, C, P', C'] table.

    Exists for verification and the energy diagnostic only; the table is
    quartic in instance size, so a hard cap keeps it to tiny inputs.
    Production inference estimates kernels with kernel_field instead.
    """
    cr, hr, wr = f_r.dims
    ce, he, we = f_e.dims
    pr, pe = hr * wr, he * we
    total = pr * cr * pe * ce
    if total > PAIRWISE_TABLE_CAP:
        raise SizeCapError(
            f"pairwise kernel table needs {total} entries, over the {PAIRWISE_TABLE_CAP} "
            "cap; use kernel_field for instances of this size"
        )
    gate = assemble(att)
    if gate.dims != f_r.dims:
        raise ShapeError("gate extent does not match receiving block", gate.dims, f_r.dims)
    fr2 = f_r.data.transpose(1, 2, 0).reshape(pr, cr)
    fe2 = f_e.data.transpose(1, 2, 0).reshape(pe, ce)
    zr2 = hidden_r.data.transpose(1, 2, 0).reshape(pr, cr)
    ze2 = hidden_e.data.transpose(1, 2, 0).reshape(pe, ce)
    g2 = gate.data.transpose(1, 2, 0).reshape(pr, cr)
    table = np.einsum("pc,qd->pcqd", fr2, fe2) + np.einsum(
        "pc,pc,qd->pcqd", g2, zr2, ze2, optimize=True
    )
    return Tensor(table)


def kernel_field(
    f_r: Tensor,
    hidden_r: Tensor,
    att: StructuredAttention,
    emitting_channel: Tensor,
    params: Tensor,
) -> Tensor:
    """Convolutional kernel estimate from the current state.

    Convolves the concatenation [f_r + hidden (.) gate ; emitting summary
    channel] with learned weights shaped for C_r + 1 input channels.
    """
    cr = f_r.dims[0]
    if len(params.dims) != 4 or params.dims[1] != cr + 1:
        raise ShapeError(
            f"field params must take {cr + 1} input channels", params.dims, f_r.dims
        )
    chan = emitting_channel
    if len(chan.dims) == 2:
        chan = Tensor(chan.data[None, :, :])
    if len(chan.dims) != 3 or chan.dims[0] != 1 or chan.dims[1:] != f_r.dims[1:]:
        raise ShapeError(
            "emitting summary must be a single channel at the receiving extent",
            emitting_channel.dims,
            f_r.dims,
        )
    gate = assemble(att)
    if gate.dims != f_r.dims:
        raise ShapeError("gate extent does not match features", gate.dims, f_r.dims)
    tape = Tape()
    out = _field_vars(
        tape.constant(f_r),
        tape.constant(hidden_r),
        tape.constant(gate),
        tape.constant(chan),
        tape.constant(params),
    )
    return out.value


def refine_scale(
    f: MultiScaleFeatures, bank: KernelBank, cfg: InferenceConfig, seed: int
) -> tuple[Tensor, AttentionState]:
    """One full refinement of the receiving scale.

    Order per iteration: messages from every scale, hidden update, spatial
    then channel gate updates per rank term, kernel-field estimation. After
    the final iteration the refined output is f_r plus the output convolution
    of the hidden state. Deterministic given the seed.
    """
    cfg.validate()
    bank.validate()
    tape = Tape()
    feats = [tape.constant(t) for t in f.features]
    bankv = lift_bank(tape, bank)
    refined, atts, _ = _refine_core(tape, feats, f.receiving_index, bankv, cfg, seed)
    return refined.value, AttentionState(per_scale=tuple(atts))


def energy_at_means(
    features: Sequence[Tensor],
    hidden: Sequence[Tensor],
    atts: Sequence[StructuredAttention],
    kernel_tables: Sequence[Tensor],
    receiving_index: int,
    b_value: float = 1.0,
) -> float:
    """Evaluate the (negated) model energy at the given posterior means.

    Three families: a quadratic unary tying hidden features to the observed
    features at every scale, the gated trilinear coupling through each
    pairwise kernel table, and a quadratic tying each kernel table to the
    feature outer product. Larger is better; a fully consistent state
    (hidden = features, zero gates, kernels = feature outer products) scores
    exactly zero. Diagnostic only, sized for pairwise_kernel_table instances.
    """
    r = receiving_index
    total = 0.0
    for fs, zs in zip(features, hidden):
        d = zs.data - fs.data
        total += -(b_value / 2.0) * float(np.sum(d * d))
    f_r, z_r = features[r], hidden[r]
    cr, hr, wr = f_r.dims
    pr = hr * wr
    fr2 = f_r.data.transpose(1, 2, 0).reshape(pr, cr)
    zr2 = z_r.data.transpose(1, 2, 0).reshape(pr, cr)
    for e, (att, table) in enumerate(zip(atts, kernel_tables)):
        f_e, z_e = features[e], hidden[e]
        ce, he, we = f_e.dims
        pe = he * we
        if table.dims != (pr, cr, pe, ce):
            raise ShapeError(
                f"kernel table for scale {e} has the wrong extent",
                table.dims,
                (pr, cr, pe, ce),
            )
        fe2 = f_e.data.transpose(1, 2, 0).reshape(pe, ce)
        ze2 = z_e.data.transpose(1, 2, 0).reshape(pe, ce)
        if att.rank:
            g2 = assemble(att).data.transpose(1, 2, 0).reshape(pr, cr)
            total += float(
                np.einsum("pc,pc,pcqd,qd->", g2, zr2, table.data, ze2, optimize=True)
            )
        resid = table.data - np.einsum("pc,qd->pcqd", fr2, fe2)
        total += -0.5 * float(np.sum(resid * resid))
    return total


def bank_with(bank: KernelBank, **updates) -> KernelBank:
    """Functional field replacement, mainly for tests."""
    return replace(bank, **updates)
