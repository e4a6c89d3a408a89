"""Randomized self-checks: oracle agreement, gradients, and gate invariants.

Each suite runs a batch of freshly drawn small instances through both the
fast production route and the independent slow route (or a finite-difference
probe) and reports the worst deviation against a fixed tolerance. Failing
oracle or invariant trials can dump their full instance to disk in the
library's tensor format so the exact case replays later.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import attention
from . import autodiff as ad
from . import mean_field as mf
from . import oracle as orc
from . import tensor as tc
from .errors import DomainError
from .tensor import Tensor

ORACLE_TOL = 1e-9
GRADIENT_TOL = 1e-5
SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class CheckOutcome:
    name: str
    trials: int
    worst: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        mark = "pass" if self.passed else "FAIL"
        note = f"  {self.detail}" if self.detail else ""
        return (
            f"[{mark}] {self.name}: worst {self.worst:.3e} "
            f"(tol {self.tolerance:.1e}, {self.trials} trials){note}"
        )


def random_instance(seed: int, gentle: bool = False):
    """Small random (features, bank, cfg, draw_seed) tuple for dual-route runs.

    Extents and channel counts stay tiny because the slow route is scalar
    loops. Every fourth instance drops the learned gate seeds to exercise
    the in-refine random initialization path.

    gentle=True draws a moderate regime: one iteration, unit-or-stronger
    unary precision, features at scale 0.35. There the spatial-gate
    evidence stays far from the magnitude (about 38) where a double rounds
    the sigmoid to exactly 1.0, so the strict-interior gate property is
    representable and checkable. The default regime is harsher and is meant
    for route-agreement checks, which hold at any magnitude.
    """
    rng = np.random.default_rng([17, seed])
    scales = int(rng.integers(1, 4))
    channels = tuple(int(rng.integers(1, 4)) for _ in range(scales))
    receiving = scales - 1
    hws = []
    for _ in range(scales):
        hws.append((int(rng.integers(3, 8)), int(rng.integers(3, 8))))
    cfg = mf.InferenceConfig(
        rank=int(rng.integers(0, 4)),
        variant=mf.VARIANTS[int(rng.integers(0, len(mf.VARIANTS)))],
        iterations=1 if gentle else int(rng.integers(1, 3)),
        kernel_size=int(rng.choice([1, 3])),
        b_value=float(rng.uniform(1.0, 2.0) if gentle else rng.uniform(0.5, 2.0)),
    )
    feature_std = 0.35 if gentle else 1.0
    feats = [
        Tensor(feature_std * rng.normal(size=(c, h, w))) for c, (h, w) in zip(channels, hws)
    ]
    bank = mf.init_bank(channels, receiving, hws[receiving], cfg, rng)
    if seed % 4 == 3:
        bank = mf.bank_with(bank, gate_map_logits=None, gate_vec_logits=None)
    features = mf.MultiScaleFeatures(features=tuple(feats), receiving_index=receiving)
    draw_seed = int(rng.integers(2**31))
    return features, bank, cfg, draw_seed


def _dump_replay(dump_dir, tag, features, bank, cfg, draw_seed) -> str:
    path = os.path.join(dump_dir, tag)
    os.makedirs(path, exist_ok=True)
    for i, f in enumerate(features.features):
        tc.save_tensor(os.path.join(path, f"feature_{i}.tensor"), f)
    for e in range(bank.scale_count()):
        tc.save_tensor(os.path.join(path, f"self_{e}.tensor"), bank.self_kernels[e])
        tc.save_tensor(os.path.join(path, f"proj_{e}.tensor"), bank.projections[e])
        tc.save_tensor(os.path.join(path, f"cross_{e}.tensor"), bank.cross_kernels[e])
        tc.save_tensor(os.path.join(path, f"field_{e}.tensor"), bank.field_kernels[e])
    tc.save_tensor(os.path.join(path, "out.tensor"), bank.out_kernel)
    if bank.gate_map_logits is not None:
        for e, row in enumerate(bank.gate_map_logits):
            for t, tns in enumerate(row):
                tc.save_tensor(os.path.join(path, f"map_{e}_{t}.tensor"), tns)
    if bank.gate_vec_logits is not None:
        for e, row in enumerate(bank.gate_vec_logits):
            for t, tns in enumerate(row):
                tc.save_tensor(os.path.join(path, f"vec_{e}_{t}.tensor"), tns)
    with open(os.path.join(path, "meta.txt"), "w", encoding="ascii") as fh:
        fh.write(
            f"receiving_index = {features.receiving_index}\n"
            f"rank = {cfg.rank}\nvariant = {cfg.variant}\n"
            f"iterations = {cfg.iterations}\nkernel_size = {cfg.kernel_size}\n"
            f"b_value = {cfg.b_value!r}\ndraw_seed = {draw_seed}\n"
        )
    return path


def _instance_gap(features, bank, cfg, draw_seed) -> float:
    fast, atts = mf.refine_scale(features, bank, cfg, draw_seed)
    slow, gates = orc.naive_refine_scale(
        list(features.features), features.receiving_index, bank, cfg, draw_seed
    )
    worst = float(np.max(np.abs(fast.data - np.asarray(slow))))
    for att, (maps, vecs) in zip(atts.per_scale, gates):
        for t in range(att.rank):
            worst = max(worst, float(np.max(np.abs(att.maps[t].values.data - maps[t]))))
            worst = max(worst, float(np.max(np.abs(att.vectors[t].values.data - vecs[t]))))
    return worst


def run_oracle_checks(trials: int = 40, seed: int = 0, dump_dir=None) -> CheckOutcome:
    """Fast refine_scale against the scalar-loop route, elementwise."""
    worst = 0.0
    detail = ""
    for i in range(trials):
        features, bank, cfg, draw_seed = random_instance(seed * 100003 + i)
        gap = _instance_gap(features, bank, cfg, draw_seed)
        if gap > worst:
            worst = gap
        if gap > ORACLE_TOL and dump_dir and not detail:
            detail = "replay: " + _dump_replay(
                dump_dir, f"oracle_{seed}_{i}", features, bank, cfg, draw_seed
            )
    return CheckOutcome("oracle agreement", trials, worst, ORACLE_TOL, worst <= ORACLE_TOL, detail)


def run_gradient_checks(trials: int = 6, seed: int = 0) -> CheckOutcome:
    """Finite-difference probe through a full refinement, all bank tensors."""
    worst = 0.0
    for i in range(trials):
        features, bank, cfg, draw_seed = random_instance(seed * 7919 + i)
        if cfg.effective_variant() == "none":
            cfg = mf.InferenceConfig(
                rank=max(1, cfg.rank), variant="structured",
                iterations=cfg.iterations, kernel_size=cfg.kernel_size, b_value=cfg.b_value,
            )
            bank = mf.init_bank(
                tuple(f.dims[0] for f in features.features),
                features.receiving_index,
                features.receiving.dims[1:],
                cfg,
                np.random.default_rng([23, i]),
            )
        flat, rebuild = _flatten_bank(bank)

        def run(tape, leaves, _rebuild=rebuild, _f=features, _cfg=cfg, _seed=draw_seed):
            bankv = _rebuild(leaves)
            fvars = [tape.constant(t) for t in _f.features]
            refined, _, _ = mf._refine_core(
                tape, fvars, _f.receiving_index, bankv, _cfg, _seed
            )
            return ad.sum_all(ad.mul(refined, refined))

        err = ad.grad_check(run, flat, h=1e-5)
        worst = max(worst, err)
    return CheckOutcome(
        "refinement gradients", trials, worst, GRADIENT_TOL, worst <= GRADIENT_TOL
    )


def _flatten_bank(bank):
    """Bank -> leaf list plus a closure rebuilding BankVars from Variables."""
    flat = []
    layout = []
    for name in ("self_kernels", "projections", "cross_kernels", "field_kernels"):
        row = getattr(bank, name)
        layout.append((name, len(row)))
        flat.extend(row)
    flat.append(bank.out_kernel)
    gate_shape = []
    for name in ("gate_map_logits", "gate_vec_logits"):
        rows = getattr(bank, name)
        gate_shape.append(None if rows is None else [len(r) for r in rows])
        if rows is not None:
            for r in rows:
                flat.extend(r)

    def rebuild(leaves):
        it = iter(leaves)
        kwargs = {}
        for name, n in layout:
            kwargs[name] = [next(it) for _ in range(n)]
        kwargs["out_kernel"] = next(it)
        for name, shape in zip(("gate_map_logits", "gate_vec_logits"), gate_shape):
            if shape is None:
                kwargs[name] = None
            else:
                kwargs[name] = [[next(it) for _ in range(n)] for n in shape]
        return mf.BankVars(**kwargs)

    return flat, rebuild


def run_invariant_checks(trials: int = 60, seed: int = 0, dump_dir=None) -> CheckOutcome:
    """Gate ranges, simplex sums, and gate-tensor rank after refinement.

    Spatial gates must land strictly inside (0, 1) wherever the variant
    actually updates them; the channel-only variant pins them to exactly 1.
    Channel gates must be nonnegative and sum to 1 within 1e-9.
    """
    worst = 0.0
    detail = ""
    for i in range(trials):
        features, bank, cfg, draw_seed = random_instance(seed * 31337 + i, gentle=True)
        variant = cfg.effective_variant()
        _, atts = mf.refine_scale(features, bank, cfg, draw_seed)
        dev = 0.0
        for att in atts.per_scale:
            for t in range(att.rank):
                m = att.maps[t].values.data
                if variant == "channel-only":
                    if not np.all(m == 1.0):
                        dev = max(dev, 1.0)
                elif m.min() <= 0.0 or m.max() >= 1.0:
                    dev = max(dev, 1.0)
                v = att.vectors[t].values.data
                if v.min() < 0.0:
                    dev = max(dev, float(-v.min()))
                dev = max(dev, abs(float(v.sum()) - 1.0))
            if att.rank:
                assembled = attention.assemble(att)
                if orc.matricization_rank(assembled) > att.rank:
                    dev = max(dev, 1.0)
        if dev > worst:
            worst = dev
        if dev > SIMPLEX_TOL and dump_dir and not detail:
            detail = "replay: " + _dump_replay(
                dump_dir, f"invariant_{seed}_{i}", features, bank, cfg, draw_seed
            )
    return CheckOutcome(
        "gate invariants", trials, worst, SIMPLEX_TOL, worst <= SIMPLEX_TOL, detail
    )


def run_all(seed: int = 0, dump_dir=None, oracle_trials: int = 40,
            gradient_trials: int = 6, invariant_trials: int = 60):
    """All three suites; returns (outcomes, all_passed)."""
    if oracle_trials < 1 or gradient_trials < 1 or invariant_trials < 1:
        raise DomainError("every suite needs at least one trial")
    outcomes = [
        run_oracle_checks(oracle_trials, seed, dump_dir),
        run_gradient_checks(gradient_trials, seed),
        run_invariant_checks(invariant_trials, seed, dump_dir),
    ]
    return outcomes, all(o.passed for o in outcomes)
