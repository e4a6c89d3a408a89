"""Toy multi-scale front end, task heads, losses, and the training step.

The front end is three stages of 3x3 convolution, bias, and max(0, .), with a
stride-2 downsample after stages two and three, giving feature pyramids at
strides 1, 2, 4 with 8/16/16 channels. The coarsest scale is refined by the
mean-field block, mapped to task outputs by a 1x1 head, and resampled back to
the input resolution. All parameters live in one flat name -> Tensor mapping
so training, checkpoints, and counting stay trivial.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import mean_field as mf
from .autodiff import Tape, Variable
from .errors import DomainError, NonFiniteError, ShapeError, TaskError, TrainingDiverged
from .tensor import Tensor

STAGE_CHANNELS = (8, 16, 16)
COSINE_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: front end extents plus the inference config."""

    in_channels: int
    image_hw: tuple[int, int]
    scales: int
    head_channels: int
    inference: mf.InferenceConfig

    def validate(self) -> "ModelSpec":
        if not (1 <= self.scales <= len(STAGE_CHANNELS)):
            raise DomainError(f"scales must be 1..{len(STAGE_CHANNELS)}, got {self.scales}")
        if self.in_channels < 1 or self.head_channels < 1:
            raise DomainError("channel counts must be >= 1")
        h, w = self.image_hw
        div = 1 << (self.scales - 1)
        if h % div or w % div or h < div or w < div:
            raise DomainError(
                f"image extents {self.image_hw} must be positive multiples of {div} "
                f"for {self.scales} scales"
            )
        self.inference.validate()
        return self

    @property
    def stage_channels(self) -> tuple[int, ...]:
        return STAGE_CHANNELS[: self.scales]

    @property
    def receiving_index(self) -> int:
        return self.scales - 1  # coarsest scale receives the refinement

    @property
    def receiving_hw(self) -> tuple[int, int]:
        h, w = self.image_hw
        div = 1 << (self.scales - 1)
        return h // div, w // div


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def init_params(spec: ModelSpec, rng: np.random.Generator) -> dict[str, Tensor]:
    """Fresh parameter set; insertion order is the canonical parameter order."""
    spec.validate()
    params: dict[str, Tensor] = {}
    prev = spec.in_channels
    for i, ch in enumerate(spec.stage_channels):
        fan_in = prev * 3 * 3
        params[f"frontend.s{i}.weight"] = Tensor(
            rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(ch, prev, 3, 3))
        )
        params[f"frontend.s{i}.bias"] = Tensor(np.zeros(ch))
        prev = ch
    bank = mf.init_bank(
        spec.stage_channels, spec.receiving_index, spec.receiving_hw, spec.inference, rng
    )
    for name, tensor in _bank_items(bank):
        params[name] = tensor
    cr = spec.stage_channels[spec.receiving_index]
    params["head.weight"] = Tensor(
        rng.normal(0.0, 1.0 / np.sqrt(cr), size=(spec.head_channels, cr, 1, 1))
    )
    return params


def _bank_items(bank: mf.KernelBank):
    for e in range(bank.scale_count()):
        yield f"bank.e{e}.self", bank.self_kernels[e]
        yield f"bank.e{e}.proj", bank.projections[e]
        yield f"bank.e{e}.cross", bank.cross_kernels[e]
        yield f"bank.e{e}.field", bank.field_kernels[e]
    yield "bank.out", bank.out_kernel
    if bank.gate_map_logits is not None:
        for e, row in enumerate(bank.gate_map_logits):
            for t, tensor in enumerate(row):
                yield f"bank.e{e}.t{t}.map", tensor
    if bank.gate_vec_logits is not None:
        for e, row in enumerate(bank.gate_vec_logits):
            for t, tensor in enumerate(row):
                yield f"bank.e{e}.t{t}.vec", tensor


def bank_from_params(params: dict, spec: ModelSpec) -> mf.KernelBank:
    """Reassemble the KernelBank view of a flat parameter mapping."""
    n = spec.scales
    rank = spec.inference.rank
    variant = spec.inference.effective_variant()
    get = params.__getitem__
    map_logits = None
    vec_logits = None
    if variant in ("structured", "spatial-only", "deterministic-low-rank") and rank:
        map_logits = [[get(f"bank.e{e}.t{t}.map") for t in range(rank)] for e in range(n)]
    if variant in ("structured", "channel-only", "deterministic-low-rank") and rank:
        vec_logits = [[get(f"bank.e{e}.t{t}.vec") for t in range(rank)] for e in range(n)]
    return mf.KernelBank(
        self_kernels=[get(f"bank.e{e}.self") for e in range(n)],
        projections=[get(f"bank.e{e}.proj") for e in range(n)],
        cross_kernels=[get(f"bank.e{e}.cross") for e in range(n)],
        field_kernels=[get(f"bank.e{e}.field") for e in range(n)],
        out_kernel=get("bank.out"),
        gate_map_logits=map_logits,
        gate_vec_logits=vec_logits,
    )


def parameter_count(params: dict[str, Tensor]) -> int:
    return sum(t.shape.count for t in params.values())


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def _frontend_vars(tape, image: Variable, pvars: dict, spec: ModelSpec) -> list[Variable]:
    x = image
    outs = []
    for i in range(spec.scales):
        x = ad.conv2d(x, pvars[f"frontend.s{i}.weight"])
        x = ad.channel_bias(x, pvars[f"frontend.s{i}.bias"])
        x = ad.relu(x)
        if i >= 1:
            _, h, w = x.value.dims
            x = ad.resize_bilinear(x, h // 2, w // 2)  # exact 2x2 average
        outs.append(x)
    return outs


def _forward_vars(tape, image: Variable, pvars: dict, spec: ModelSpec, seed: int):
    feats = _frontend_vars(tape, image, pvars, spec)
    bankv = mf.BankVars(
        self_kernels=[pvars[f"bank.e{e}.self"] for e in range(spec.scales)],
        projections=[pvars[f"bank.e{e}.proj"] for e in range(spec.scales)],
        cross_kernels=[pvars[f"bank.e{e}.cross"] for e in range(spec.scales)],
        field_kernels=[pvars[f"bank.e{e}.field"] for e in range(spec.scales)],
        out_kernel=pvars["bank.out"],
    )
    rank = spec.inference.rank
    variant = spec.inference.effective_variant()
    if variant in ("structured", "spatial-only", "deterministic-low-rank") and rank:
        bankv.gate_map_logits = [
            [pvars[f"bank.e{e}.t{t}.map"] for t in range(rank)] for e in range(spec.scales)
        ]
    if variant in ("structured", "channel-only", "deterministic-low-rank") and rank:
        bankv.gate_vec_logits = [
            [pvars[f"bank.e{e}.t{t}.vec"] for t in range(rank)] for e in range(spec.scales)
        ]
    refined, atts, _ = mf._refine_core(
        tape, feats, spec.receiving_index, bankv, spec.inference, seed
    )
    logitsmap = ad.conv2d(refined, pvars["head.weight"])
    h, w = spec.image_hw
    pred = ad.resize_bilinear(logitsmap, h, w)
    return pred, atts


def _check_image(image: Tensor, spec: ModelSpec):
    if len(image.dims) != 3 or image.dims[0] != spec.in_channels:
        raise ShapeError(f"image must be [{spec.in_channels}, H, W]", image.dims)
    if image.dims[1:] != tuple(spec.image_hw):
        raise ShapeError("image extents disagree with the spec", image.dims, spec.image_hw)


def forward_multiscale(
    image: Tensor, params: dict[str, Tensor], spec: ModelSpec
) -> mf.MultiScaleFeatures:
    """Front-end feature pyramid; the coarsest scale is the receiving one."""
    spec.validate()
    _check_image(image, spec)
    tape = Tape()
    pvars = {k: tape.constant(v) for k, v in params.items()}
    feats = _frontend_vars(tape, tape.constant(image), pvars, spec)
    return mf.MultiScaleFeatures(
        tuple(v.value for v in feats), receiving_index=spec.receiving_index
    )


def predict(
    image: Tensor, params: dict[str, Tensor], spec: ModelSpec, seed: int = 0
) -> Tensor:
    """Full model forward: front end, refinement, head, upsample to input size."""
    spec.validate()
    _check_image(image, spec)
    tape = Tape()
    pvars = {k: tape.constant(v) for k, v in params.items()}
    pred, _ = _forward_vars(tape, tape.constant(image), pvars, spec, seed)
    return pred.value


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _mask_weights(mask, hw) -> np.ndarray:
    if mask is None:
        m = np.ones(hw)
    else:
        m = np.asarray(getattr(mask, "data", mask), dtype=np.float64)
        if m.shape != tuple(hw):
            raise ShapeError("mask extent disagrees with prediction", m.shape, hw)
        m = (m != 0.0).astype(np.float64)
    n = m.sum()
    if n == 0:
        raise DomainError("no unmasked pixels to average over")
    return m / n


def _l2_vars(pred: Variable, target: np.ndarray, weights: np.ndarray) -> Variable:
    tape = pred.tape
    t = tape.constant(Tensor(target))
    d = ad.sub(pred, t)
    err = ad.channel_sum(ad.mul(d, d))
    c = pred.value.dims[0]
    w = tape.constant(Tensor(weights / c))
    return ad.sum_all(ad.mul(err, w))


def loss_l2(pred: Tensor, target: Tensor, valid_mask=None) -> Tensor:
    """Mean squared difference over unmasked (pixel, channel) entries."""
    if pred.dims != target.dims or len(pred.dims) != 3:
        raise ShapeError("prediction and target must agree as [C, H, W]", pred.dims, target.dims)
    weights = _mask_weights(valid_mask, pred.dims[1:])
    tape = Tape()
    return _l2_vars(tape.constant(pred), target.data, weights).value


def _cross_entropy_vars(
    logits: Variable, labels: np.ndarray, ignore_label, weights_override=None
) -> Variable:
    k, h, w = logits.value.dims
    lab = np.asarray(labels)
    if lab.shape != (h, w):
        raise ShapeError("labels must be [H, W]", lab.shape, logits.value.dims)
    lab = lab.astype(np.int64)
    valid = np.ones((h, w), dtype=bool)
    if ignore_label is not None:
        valid &= lab != int(ignore_label)
    bad = valid & ((lab < 0) | (lab >= k))
    if bad.any():
        offender = int(lab[bad][0])
        raise TaskError(f"label {offender} outside [0, {k}) and not the ignore label")
    if weights_override is None:
        n = valid.sum()
        if n == 0:
            raise DomainError("every pixel is ignored; nothing to average")
        weights = valid.astype(np.float64) / n
    else:
        weights = weights_override
    onehot = np.zeros((k, h, w))
    safe = np.where(valid, lab, 0)
    onehot[safe, np.arange(h)[:, None], np.arange(w)[None, :]] = 1.0
    onehot *= valid[None]
    tape = logits.tape
    lse = ad.channel_logsumexp(logits)
    picked = ad.channel_sum(ad.mul(logits, tape.constant(Tensor(onehot))))
    nll = ad.sub(lse, picked)
    return ad.sum_all(ad.mul(nll, tape.constant(Tensor(weights))))


def loss_cross_entropy(logits: Tensor, labels, ignore_label=None) -> Tensor:
    """Per-pixel softmax cross-entropy, averaged over non-ignored pixels."""
    if len(logits.dims) != 3:
        raise ShapeError("logits must be [K, H, W]", logits.dims)
    tape = Tape()
    return _cross_entropy_vars(tape.constant(logits), labels, ignore_label).value


def _cosine_vars(pred: Variable, target_unit: np.ndarray, weights: np.ndarray) -> Variable:
    tape = pred.tape
    sq = ad.channel_sum(ad.mul(pred, pred))
    norm = ad.sqrt_clamped(sq, COSINE_NORM_FLOOR)
    dot = ad.channel_sum(ad.mul(pred, tape.constant(Tensor(target_unit))))
    cos = ad.div(dot, norm)
    ones = tape.constant(Tensor(np.ones(cos.value.dims)))
    return ad.sum_all(ad.mul(ad.sub(ones, cos), tape.constant(Tensor(weights))))


def loss_cosine(pred: Tensor, target: Tensor, valid_mask=None) -> Tensor:
    """Mean of 1 - cosine similarity over unmasked pixels.

    The prediction is normalized with its norm clamped below at 1e-12 (a
    zero-direction prediction is legal and costs 1); unmasked target vectors
    must be nonzero and are normalized exactly.
    """
    if pred.dims != target.dims or len(pred.dims) != 3:
        raise ShapeError("prediction and target must agree as [C, H, W]", pred.dims, target.dims)
    weights = _mask_weights(valid_mask, pred.dims[1:])
    tnorm = np.sqrt(np.sum(target.data * target.data, axis=0))
    if np.any((weights > 0) & (tnorm == 0.0)):
        raise DomainError("target holds a zero vector at an unmasked pixel")
    unit = target.data / np.where(tnorm == 0.0, 1.0, tnorm)[None]
    tape = Tape()
    return _cosine_vars(tape.constant(pred), unit, weights).value


def _sample_loss_vars(pred: Variable, sample) -> Variable:
    weights = _mask_weights(sample.valid_mask, pred.value.dims[1:])
    if sample.kind == "depth":
        return _l2_vars(pred, sample.target.data, weights)
    if sample.kind == "segmentation":
        return _cross_entropy_vars(pred, sample.labels, None, weights_override=weights)
    if sample.kind == "normals":
        t = sample.target.data
        tnorm = np.sqrt(np.sum(t * t, axis=0))
        unit = t / np.where(tnorm == 0.0, 1.0, tnorm)[None]
        return _cosine_vars(pred, unit, weights)
    raise TaskError(f"unknown task kind {sample.kind!r}")


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd"          # "sgd" (momentum) or "adam"
    learning_rate: float = 0.05
    momentum: float = 0.9      # sgd only
    beta2: float = 0.999       # adam only
    epsilon: float = 1e-8      # adam only

    def validate(self) -> "OptimizerConfig":
        if self.kind not in ("sgd", "adam"):
            raise DomainError(f"optimizer must be 'sgd' or 'adam', got {self.kind!r}")
        if self.learning_rate < 0 or not np.isfinite(self.learning_rate):
            raise DomainError(f"learning rate must be finite and >= 0, got {self.learning_rate}")
        if not (0.0 <= self.momentum < 1.0):
            raise DomainError(f"momentum must lie in [0, 1), got {self.momentum}")
        return self


@dataclass
class OptimizerState:
    step: int = 0
    slots: dict = field(default_factory=dict)  # name -> {slot: ndarray}


def init_optimizer_state() -> OptimizerState:
    return OptimizerState()


def _apply_update(name, value, grad, state: OptimizerState, opt: OptimizerConfig):
    slots = state.slots.setdefault(name, {})
    if opt.kind == "sgd":
        vel = slots.get("velocity")
        if vel is None:
            vel = np.zeros_like(value)
        vel = opt.momentum * vel + grad
        slots["velocity"] = vel
        return value - opt.learning_rate * vel
    # adam; bias-corrected first/second moments
    m = slots.get("m")
    v = slots.get("v")
    if m is None:
        m = np.zeros_like(value)
        v = np.zeros_like(value)
    t = state.step + 1
    m = opt.momentum * m + (1.0 - opt.momentum) * grad
    v = opt.beta2 * v + (1.0 - opt.beta2) * grad * grad
    slots["m"] = m
    slots["v"] = v
    m_hat = m / (1.0 - opt.momentum**t)
    v_hat = v / (1.0 - opt.beta2**t)
    return value - opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.epsilon)


def train_step(
    batch: Sequence,
    params: dict[str, Tensor],
    opt_state: OptimizerState,
    spec: ModelSpec,
    opt: OptimizerConfig,
    seed: int = 0,
) -> tuple[dict[str, Tensor], OptimizerState, float]:
    """One batch forward, one backward, one in-order parameter update.

    Returns fresh params (inputs are never mutated) and the scalar batch
    loss. A non-finite loss or update raises TrainingDiverged carrying the
    step index.
    """
    if not batch:
        raise DomainError("empty batch")
    opt.validate()
    try:
        tape = Tape()
        pvars = {k: tape.leaf(v) for k, v in params.items()}
        total = None
        for sample in batch:
            image = tape.constant(sample.image)
            pred, _ = _forward_vars(tape, image, pvars, spec, seed)
            ls = _sample_loss_vars(pred, sample)
            total = ls if total is None else ad.add(total, ls)
        loss = ad.scale(total, 1.0 / len(batch))
        tape.backward(loss)
        new_params = {}
        for name, var in pvars.items():
            updated = _apply_update(name, var.value.data, var.grad, opt_state, opt)
            new_params[name] = Tensor(updated)
    except NonFiniteError as exc:
        raise TrainingDiverged(opt_state.step, f"step {opt_state.step}: {exc}") from exc
    opt_state.step += 1
    return new_params, opt_state, loss.value.item()


def spec_with(spec: ModelSpec, **updates) -> ModelSpec:
    return replace(spec, **updates)
