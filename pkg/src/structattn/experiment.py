"""Config-driven experiment runner: training runs, ablations, rank sweeps.

A run is a pure function of its config text: sample seeds, parameter init,
and batch order all derive from the config's seed, so rerunning a config
reproduces every CSV field except the timestamp. Wall-clock measurements
are therefore kept out of run records entirely; they appear only in the
rank-sweep artifacts, whose point is timing.

Artifacts per run (under <output root>/<run name>/):
    record.csv   one header + one row (column order fixed below)
    loss.csv     "step loss" per line, whitespace-separated
    params.ckpt  final parameters, checkpoint format
    config.txt   canonical serialization of the config that produced it

Sweeps add a comparison CSV, a gnuplot-ready .dat file, and a standalone
SVG chart.
"""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from . import checkpoint as ckpt
from . import frontend as fe
from . import mean_field as mf
from . import tasks as tk
from .errors import ConfigError, DomainError, NonFiniteError, TrainingDiverged
from .tensor import Tensor

OUTPUT_ENV = "STRUCTATTN_OUT"

_SCHEMA: list[tuple[str, str, object]] = [
    # (key, type, default); None default means required
    ("task", "str", None),
    ("seed", "int", None),
    ("image_size", "int", 32),
    ("classes", "int", 4),
    ("scales", "int", 3),
    ("rank", "int", 1),
    ("variant", "str", "structured"),
    ("iterations", "int", 1),
    ("kernel_size", "int", 3),
    ("b_value", "float", 1.0),
    ("optimizer", "str", "sgd"),
    ("learning_rate", "float", 0.05),
    ("momentum", "float", 0.9),
    ("epochs", "int", 200),
    ("batch_size", "int", 4),
    ("train_samples", "int", 4),
    ("eval_samples", "int", 4),
    ("noise", "float", 0.35),
    ("timing_repeats", "int", 5),
    ("output_dir", "str", "runs"),
]


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    seed: int
    image_size: int = 32
    classes: int = 4
    scales: int = 3
    rank: int = 1
    variant: str = "structured"
    iterations: int = 1
    kernel_size: int = 3
    b_value: float = 1.0
    optimizer: str = "sgd"
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int = 4
    train_samples: int = 4
    eval_samples: int = 4
    noise: float = 0.35
    timing_repeats: int = 5
    output_dir: str = "runs"

    def validate(self) -> "ExperimentConfig":
        if self.task not in tk.TASK_KINDS:
            raise ConfigError(f"task must be one of {tk.TASK_KINDS}, got {self.task!r}")
        if self.image_size < 8 or self.image_size % 4:
            raise ConfigError(f"image_size must be a multiple of 4 and >= 8, got {self.image_size}")
        if self.classes < 2:
            raise ConfigError(f"classes must be >= 2, got {self.classes}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.train_samples < 1 or self.eval_samples < 1:
            raise ConfigError("train_samples and eval_samples must be >= 1")
        if self.timing_repeats < 1:
            raise ConfigError(f"timing_repeats must be >= 1, got {self.timing_repeats}")
        if not self.output_dir:
            raise ConfigError("output_dir must be nonempty")
        try:
            self.inference().validate()
            self.optimizer_config().validate()
            self.model_spec().validate()
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def inference(self) -> mf.InferenceConfig:
        return mf.InferenceConfig(
            rank=self.rank,
            variant=self.variant,
            iterations=self.iterations,
            kernel_size=self.kernel_size,
            b_value=self.b_value,
        )

    def model_spec(self) -> fe.ModelSpec:
        return fe.ModelSpec(
            in_channels=3,
            image_hw=(self.image_size, self.image_size),
            scales=self.scales,
            head_channels=tk.head_channels_for(self.task, self.classes),
            inference=self.inference(),
        )

    def optimizer_config(self) -> fe.OptimizerConfig:
        return fe.OptimizerConfig(
            kind=self.optimizer,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
        )


def _parse_value(key: str, kind: str, raw: str, line_no: int):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad {kind} for {key!r}: {raw!r}", line=line_no) from exc


def parse_config_text(text: str) -> ExperimentConfig:
    """Flat `key = value` format, '#' comments, every key known, one use each."""
    kinds = {k: kind for k, kind, _ in _SCHEMA}
    values: dict[str, object] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", line=line_no)
        key, raw = body.split("=", 1)
        key = key.strip()
        if key not in kinds:
            raise ConfigError(f"unknown key {key!r}", line=line_no)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", line=line_no)
        values[key] = _parse_value(key, kinds[key], raw, line_no)
    for key, _, default in _SCHEMA:
        if key in values:
            continue
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        values[key] = default
    return ExperimentConfig(**values).validate()


def parse_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_config_text(f.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text: schema order, repr floats; hash and reruns key off this."""
    lines = []
    for key, kind, _ in _SCHEMA:
        v = getattr(cfg, key)
        lines.append(f"{key} = {repr(v) if kind == 'float' else v}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()[:12]


def config_with(cfg: ExperimentConfig, **updates) -> ExperimentConfig:
    return replace(cfg, **updates).validate()


def resolve_output_root(cfg: ExperimentConfig, override=None) -> str:
    """CLI flag beats the environment override beats the config value."""
    if override:
        return override
    env = os.environ.get(OUTPUT_ENV)
    return env if env else cfg.output_dir


def run_name(cfg: ExperimentConfig) -> str:
    return (
        f"{cfg.task}-{cfg.inference().effective_variant()}"
        f"-T{cfg.rank}-s{cfg.seed}-{config_hash(cfg)}"
    )


# ---------------------------------------------------------------------------
# data and records
# ---------------------------------------------------------------------------


def _derived_seed(*entropy) -> int:
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def _make_samples(cfg: ExperimentConfig, stream: int, count: int):
    return [
        tk.gen_task(
            cfg.task,
            cfg.image_size,
            cfg.image_size,
            _derived_seed(cfg.seed, stream, i),
            classes=cfg.classes,
            noise=cfg.noise,
        )
        for i in range(count)
    ]


BASE_COLUMNS = (
    "timestamp",
    "config_hash",
    "task",
    "variant",
    "rank",
    "seed",
    "epochs_completed",
    "diverged",
    "final_loss",
    "param_count",
    "flops_per_forward",
)


@dataclass(frozen=True)
class RunRecord:
    """One run's outcome.

    Everything in the CSV row is a deterministic function of the config, so
    two runs of the same config differ only in the timestamp column. The
    measured forward wall time deliberately stays out of the row (it lives
    here on the object, in timing.txt, and in sweep artifacts).
    """

    timestamp: str
    config_hash: str
    task: str
    variant: str
    rank: int
    seed: int
    epochs_completed: int
    diverged: bool
    final_loss: float | None
    param_count: int
    flops_per_forward: int
    metrics: dict[str, float]
    loss_curve: tuple[tuple[int, float], ...] = ()
    wall_time_per_forward: float = 0.0

    @property
    def columns(self) -> tuple[str, ...]:
        return BASE_COLUMNS + tk.metric_columns(self.task)

    def row(self) -> list[str]:
        base = [
            self.timestamp,
            self.config_hash,
            self.task,
            self.variant,
            str(self.rank),
            str(self.seed),
            str(self.epochs_completed),
            str(int(self.diverged)),
            "" if self.final_loss is None else repr(self.final_loss),
            str(self.param_count),
            str(self.flops_per_forward),
        ]
        for c in tk.metric_columns(self.task):
            v = self.metrics.get(c)
            base.append("" if v is None else repr(v))
        return base

    def to_csv(self) -> str:
        return ",".join(self.columns) + "\n" + ",".join(self.row()) + "\n"


def parse_record(text: str) -> RunRecord:
    """Inverse of to_csv; float fields round-trip exactly via repr."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) != 2:
        raise ConfigError(f"expected header plus one row, got {len(lines)} lines")
    header = lines[0].split(",")
    row = lines[1].split(",")
    if len(header) != len(row):
        raise ConfigError("header and row lengths disagree")
    d = dict(zip(header, row))
    try:
        task = d["task"]
        metrics = {}
        for c in tk.metric_columns(task):
            if d.get(c, "") != "":
                metrics[c] = float(d[c])
        return RunRecord(
            timestamp=d["timestamp"],
            config_hash=d["config_hash"],
            task=task,
            variant=d["variant"],
            rank=int(d["rank"]),
            seed=int(d["seed"]),
            epochs_completed=int(d["epochs_completed"]),
            diverged=bool(int(d["diverged"])),
            final_loss=None if d["final_loss"] == "" else float(d["final_loss"]),
            param_count=int(d["param_count"]),
            flops_per_forward=int(d["flops_per_forward"]),
            metrics=metrics,
        )
    except KeyError as exc:
        raise ConfigError(f"record is missing column {exc.args[0]!r}") from exc


def records_equal_modulo_time(a: RunRecord, b: RunRecord) -> bool:
    return a.row()[1:] == b.row()[1:] and a.columns == b.columns


# ---------------------------------------------------------------------------
# analytic cost model
# ---------------------------------------------------------------------------


def _conv_flops(cin: int, cout: int, k: int, h: int, w: int) -> int:
    return 2 * cin * cout * k * k * h * w


def _resize_flops(c: int, ho: int, wo: int) -> int:
    return 8 * c * ho * wo  # 4 taps, multiply plus accumulate each


def flops_per_forward(spec: fe.ModelSpec) -> int:
    """Multiply-add count for one full forward, mirroring what actually runs.

    The walk follows the same variant/rank/iteration branches as the
    refinement code, so adding a rank-one term or an iteration strictly
    adds operations.
    """
    spec.validate()
    cfg = spec.inference
    variant = cfg.effective_variant()
    rank = 0 if variant == "none" else cfg.rank
    h, w = spec.image_hw
    total = 0
    # front end
    prev_c = spec.in_channels
    sh, sw = h, w
    dims = []
    for i, c in enumerate(spec.stage_channels):
        total += _conv_flops(prev_c, c, 3, sh, sw)
        total += 2 * c * sh * sw  # bias, relu
        if i >= 1:
            sh, sw = sh // 2, sw // 2
            total += _resize_flops(c, sh, sw)
        dims.append((c, sh, sw))
        prev_c = c
    cr, hr, wr = dims[spec.receiving_index]
    k = cfg.kernel_size
    # one round of messages: self conv, resize, projection, cross conv
    def message_flops() -> int:
        f = 0
        for ce, he, we in dims:
            f += _conv_flops(ce, ce, k, he, we)
            f += _resize_flops(ce, hr, wr)
            f += _conv_flops(ce, cr, 1, hr, wr)
            f += _conv_flops(cr, cr, k, hr, wr)
        return f

    if variant == "none":
        total += message_flops()
        total += len(dims) * cr * hr * wr  # sum into the receiving features
        total += _conv_flops(cr, spec.head_channels, 1, hr, wr)
        total += _resize_flops(spec.head_channels, h, w)
        return total

    n_scales = len(dims)
    for it in range(cfg.iterations):
        total += message_flops()
        if it > 0:
            total += n_scales * cr * hr * wr  # kernel-field modulation
        # gate assembly and application per emitting scale
        total += n_scales * (rank * 2 * cr * hr * wr + cr * hr * wr)
        # hidden update: scaled unary, per-scale accumulate, renormalize
        total += (n_scales + 2) * cr * hr * wr
        if variant in ("structured", "spatial-only"):
            # spatial gate: gather evidence, weight by channel gate, sigmoid
            total += n_scales * rank * (3 * cr * hr * wr + 4 * hr * wr)
        if variant in ("structured", "channel-only"):
            # channel gate: gather evidence, weight by spatial gate, softmax
            total += n_scales * rank * (3 * cr * hr * wr + 5 * cr)
        if variant == "deterministic-low-rank":
            total += n_scales * rank * (4 * hr * wr + 5 * cr)
        # kernel-field estimation per emitting scale
        total += n_scales * (
            rank * 2 * cr * hr * wr  # reassemble updated gates
            + 2 * cr * hr * wr       # gate the hidden block, add unary
            + hr * wr                # emitting summary channel mean
            + _conv_flops(cr + 1, cr, k, hr, wr)
        )
    total += _conv_flops(cr, cr, k, hr, wr) + cr * hr * wr  # output correction
    total += _conv_flops(cr, spec.head_channels, 1, hr, wr)
    total += _resize_flops(spec.head_channels, h, w)
    return total


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


def _timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S")


def _evaluate(cfg: ExperimentConfig, params, spec, samples) -> dict[str, float]:
    """Dataset-level metrics: samples stacked along the row axis, one report."""
    preds = []
    for i, s in enumerate(samples):
        preds.append(fe.predict(s.image, params, spec, seed=_derived_seed(cfg.seed, 3, i)))
    mask = np.concatenate([s.valid_mask for s in samples], axis=0)
    if cfg.task == "segmentation":
        pred_labels = np.concatenate([tk.logits_to_labels(p) for p in preds], axis=0)
        gt = np.concatenate([s.labels for s in samples], axis=0)
        report = tk.eval_seg(pred_labels, gt, cfg.classes, mask)
    else:
        stacked_pred = Tensor(np.concatenate([p.data for p in preds], axis=1))
        stacked_gt = Tensor(np.concatenate([s.target.data for s in samples], axis=1))
        if cfg.task == "depth":
            report = tk.eval_depth(stacked_pred, stacked_gt, mask)
        else:
            report = tk.eval_normals(stacked_pred, stacked_gt, mask)
    return dict(report.values)


def _time_forward(cfg: ExperimentConfig, params, spec, sample) -> float:
    fe.predict(sample.image, params, spec, seed=0)  # warm path
    reps = []
    for _ in range(cfg.timing_repeats):
        t0 = time.perf_counter()
        fe.predict(sample.image, params, spec, seed=0)
        reps.append(time.perf_counter() - t0)
    return float(np.median(reps))


def run_experiment(cfg: ExperimentConfig, out_root=None, log=None) -> RunRecord:
    """Train cfg.epochs passes over the train set, evaluate, write artifacts.

    An epoch is ceil(train_samples / batch_size) contiguous batches; the loss
    curve holds one mean loss per epoch. Everything except wall time and
    timestamp is a pure function of the config.
    """
    cfg.validate()
    spec = cfg.model_spec()
    say = log if log is not None else (lambda _msg: None)
    params = fe.init_params(spec, np.random.default_rng(_derived_seed(cfg.seed, 0)))
    train = _make_samples(cfg, 1, cfg.train_samples)
    evals = _make_samples(cfg, 2, cfg.eval_samples)
    opt = cfg.optimizer_config()
    state = fe.init_optimizer_state()
    steps_per_epoch = -(-cfg.train_samples // cfg.batch_size)
    curve: list[tuple[int, float]] = []
    diverged = False
    completed = 0
    final_loss = None
    for epoch in range(cfg.epochs):
        epoch_losses = []
        try:
            for s in range(steps_per_epoch):
                batch = train[s * cfg.batch_size:(s + 1) * cfg.batch_size]
                params, state, loss = fe.train_step(
                    batch, params, state, spec, opt,
                    seed=_derived_seed(cfg.seed, 4, epoch, s),
                )
                epoch_losses.append(loss)
        except TrainingDiverged as exc:
            diverged = True
            say(f"diverged at update {exc.step}")
            break
        mean_loss = float(np.mean(epoch_losses))
        curve.append((epoch, mean_loss))
        final_loss = mean_loss
        completed = epoch + 1
        if log is not None and (epoch + 1) % 50 == 0:
            say(f"epoch {epoch + 1}/{cfg.epochs}  loss {mean_loss:.6f}")
    metrics: dict[str, float] = {}
    wall = 0.0
    try:
        metrics = _evaluate(cfg, params, spec, evals)
        wall = _time_forward(cfg, params, spec, evals[0])
    except NonFiniteError:
        diverged = True
        say("evaluation hit non-finite values; metrics left empty")
    record = RunRecord(
        timestamp=_timestamp(),
        config_hash=config_hash(cfg),
        task=cfg.task,
        variant=cfg.inference().effective_variant(),
        rank=cfg.rank,
        seed=cfg.seed,
        epochs_completed=completed,
        diverged=diverged,
        final_loss=final_loss,
        param_count=fe.parameter_count(params),
        flops_per_forward=flops_per_forward(spec),
        metrics=metrics,
        loss_curve=tuple(curve),
        wall_time_per_forward=wall,
    )
    out_dir = os.path.join(resolve_output_root(cfg, out_root), run_name(cfg))
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "record.csv"), "w", encoding="ascii") as f:
        f.write(record.to_csv())
    with open(os.path.join(out_dir, "loss.csv"), "w", encoding="ascii") as f:
        f.write("epoch loss\n")
        for epoch, loss in curve:
            f.write(f"{epoch} {repr(loss)}\n")
    with open(os.path.join(out_dir, "timing.txt"), "w", encoding="ascii") as f:
        f.write(f"seconds_per_forward = {repr(wall)}\n")
    ckpt.save_checkpoint(params, os.path.join(out_dir, "params.ckpt"))
    with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as f:
        f.write(serialize_config(cfg))
    say(f"wrote {out_dir}")
    return record


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def _write_table(path, header: list[str], rows: list[list[str]], sep: str) -> None:
    with open(path, "w", encoding="ascii") as f:
        if sep == " ":
            f.write("# " + " ".join(header) + "\n")
        else:
            f.write(sep.join(header) + "\n")
        for row in rows:
            f.write(sep.join(row) + "\n")


def _svg_line_chart(path, title, xlabel, series: dict[str, list[tuple[float, float]]]) -> None:
    """Minimal standalone SVG: one polyline per series, linear axes."""
    width, height, pad = 640, 400, 60
    pts = [p for s in series.values() for p in s]
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="24" text-anchor="middle" font-size="16">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" '
        'stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 16}" text-anchor="middle" font-size="12">'
        f"{xlabel}</text>",
        f'<text x="{pad}" y="{height - pad + 16}" font-size="10">{x0:g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 16}" text-anchor="end" font-size="10">'
        f"{x1:g}</text>",
        f'<text x="{pad - 4}" y="{height - pad}" text-anchor="end" font-size="10">{y0:g}</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" text-anchor="end" font-size="10">{y1:g}</text>',
    ]
    for i, (name, data) in enumerate(series.items()):
        color = colors[i % len(colors)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in data)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{width - pad + 6}" y="{pad + 16 * i}" font-size="11" '
            f'fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(parts) + "\n")


ABLATION_AXES = ("variant", "rank")


def run_ablation(
    cfg: ExperimentConfig, axis: str, values, out_root=None, log=None
) -> list[RunRecord]:
    """Full runs along one axis at the config's shared seed.

    Emits ablation.csv plus a gnuplot-ready ablation.dat (identical content,
    whitespace-separated) and an SVG chart of the headline metric. Rows
    carry the metric columns plus parameter count and measured wall time;
    only the wall-time column is nondeterministic. A diverged run keeps its
    row (flagged) without aborting the sweep.
    """
    if axis not in ABLATION_AXES:
        raise ConfigError(f"axis must be one of {ABLATION_AXES}, got {axis!r}")
    values = list(values)
    if not values:
        raise ConfigError("ablation needs at least one axis value")
    records = []
    for v in values:
        if axis == "rank":
            try:
                sub = config_with(cfg, rank=int(v))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"rank value {v!r} is not an integer") from exc
        else:
            sub = config_with(cfg, variant=str(v))
        records.append(run_experiment(sub, out_root=out_root, log=log))
    root = resolve_output_root(cfg, out_root)
    os.makedirs(root, exist_ok=True)
    metric_cols = list(tk.metric_columns(cfg.task))
    header = [axis, "seed", "diverged"] + metric_cols + ["param_count", "wall_time_per_forward"]
    rows = []
    for v, r in zip(values, records):
        rows.append(
            [str(v), str(r.seed), str(int(r.diverged))]
            + [("" if r.metrics.get(c) is None else repr(r.metrics[c])) for c in metric_cols]
            + [str(r.param_count), repr(r.wall_time_per_forward)]
        )
    _write_table(os.path.join(root, "ablation.csv"), header, rows, ",")
    _write_table(os.path.join(root, "ablation.dat"), header, rows, " ")
    key = metric_cols[1] if cfg.task == "segmentation" else metric_cols[0]
    pts = [
        (float(i), r.metrics[key])
        for i, r in enumerate(records)
        if r.metrics.get(key) is not None
    ]
    if pts:
        _svg_line_chart(
            os.path.join(root, "ablation.svg"),
            f"{cfg.task}: {key} across {axis} values "
            + ",".join(str(v) for v in values),
            f"{axis} index",
            {key: pts},
        )
    return records


@dataclass(frozen=True)
class RankSweepResult:
    ranks: list[int]
    param_counts: list[int]
    flop_counts: list[int]
    times: list[list[float]]  # [sweep][rank index], median seconds per forward

    def monotone_sweeps(self) -> int:
        good = 0
        for row in self.times:
            if all(row[i + 1] >= row[i] for i in range(len(row) - 1)):
                good += 1
        return good


def run_rank_sweep(
    cfg: ExperimentConfig, ranks, sweeps: int = 5, out_root=None, log=None
) -> RankSweepResult:
    """Cost trends across attention rank: params, analytic FLOPs, wall time.

    No training: each cell times `timing_repeats` forwards of a freshly
    initialized model on a fixed input and keeps the median. The same input
    extents are used at every rank so only the rank term varies.
    """
    ranks = list(ranks)
    if not ranks:
        raise ConfigError("rank sweep needs at least one rank value")
    say = log if log is not None else (lambda _msg: None)
    param_counts = []
    flop_counts = []
    cells = []
    for rank in ranks:
        sub = config_with(cfg, rank=rank)
        spec = sub.model_spec()
        params = fe.init_params(spec, np.random.default_rng(_derived_seed(sub.seed, 0)))
        sample = tk.gen_task(
            sub.task, sub.image_size, sub.image_size,
            _derived_seed(sub.seed, 2, 0), classes=sub.classes, noise=sub.noise,
        )
        param_counts.append(fe.parameter_count(params))
        flop_counts.append(flops_per_forward(spec))
        cells.append((spec, params, sample.image))
        fe.predict(sample.image, params, spec, seed=0)  # warm caches
    times = []
    for s in range(sweeps):
        row = []
        for (spec, params, image), rank in zip(cells, ranks):
            reps = []
            for _ in range(cfg.timing_repeats):
                t0 = time.perf_counter()
                fe.predict(image, params, spec, seed=0)
                reps.append(time.perf_counter() - t0)
            row.append(float(np.median(reps)))
        times.append(row)
        say(f"sweep {s + 1}/{sweeps}: " + " ".join(f"{t * 1e3:.2f}ms" for t in row))
    result = RankSweepResult(ranks, param_counts, flop_counts, times)
    root = resolve_output_root(cfg, out_root)
    os.makedirs(root, exist_ok=True)
    header = ["rank", "param_count", "flops_per_forward"] + [
        f"seconds_sweep{s}" for s in range(sweeps)
    ]
    rows = []
    for i, rank in enumerate(ranks):
        rows.append(
            [str(rank), str(param_counts[i]), str(flop_counts[i])]
            + [repr(times[s][i]) for s in range(sweeps)]
        )
    _write_table(os.path.join(root, "rank_sweep.csv"), header, rows, ",")
    _write_table(os.path.join(root, "rank_sweep.dat"), header, rows, " ")
    _svg_line_chart(
        os.path.join(root, "rank_sweep.svg"),
        "forward wall time by attention rank",
        "rank",
        {
            f"sweep {s}": [(float(r), times[s][i]) for i, r in enumerate(ranks)]
            for s in range(sweeps)
        },
    )
    return result
