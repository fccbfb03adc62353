"""Joint training of measurement angles and an MLP material classifier.

The classifier sees only the K simulated intensities. Under the ``Optimized``
regime the capture angles are tape leaves too, so the loss gradient flows
through the ellipsometer read-out into the optical design.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .materials import N_CLASSES, augment_batch
from .mueller import rotate_mueller_batch
from .polarimeter import Condition, MeasurementPlan, simulate

HIDDEN_WIDTHS = (64, 32, 32, 16)
LP_UNIFORM_ANGLES_DEG = (0.0, 45.0, 90.0, 135.0)
AZZAM_RATIO = 5


class Regime(enum.Enum):
    RANDOM = "Random"
    UNIFORM = "Uniform"
    OPTIMIZED = "Optimized"

    @classmethod
    def parse(cls, text: "str | Regime") -> "Regime":
        if isinstance(text, cls):
            return text
        for r in cls:
            if r.value.lower() == str(text).strip().lower():
                return r
        raise ValueError(f"unknown regime {text!r}; expected Random, Uniform or Optimized")


# -- differentiable read-out -------------------------------------------------


def _angle_trig(angles: ad.Var, col: int) -> tuple[ad.Var, ad.Var]:
    two = angles[:, col] * 2.0
    return ad.cos(two), ad.sin(two)


def tape_probe_vectors(angles: ad.Var, condition: Condition, source_intensity: float = 1.0):
    """Analyzer rows ``a`` and generator states ``p`` (both (K, 4)) as tape nodes.

    ``angles`` holds the condition's free angles, shape (K, n_free). These are
    the closed forms of ``A[0]`` and ``P @ [L, 0, 0, 0]``.
    """
    condition = Condition.parse(condition)
    half_l = 0.5 * source_intensity
    if condition is Condition.LP:
        cg, sg = _angle_trig(angles, 0)
        ca, sa = _angle_trig(angles, 1)
        p = ad.stack([1.0, cg, sg, 0.0]) * half_l
        a = ad.stack([1.0, ca, sa, 0.0]) * 0.5
        return a, p
    if condition is Condition.QWP:
        cg, sg = _angle_trig(angles, 0)
        ca, sa = _angle_trig(angles, 1)
        p = ad.stack([1.0, cg * cg, sg * cg, sg]) * half_l
        a = ad.stack([1.0, ca * ca, sa * ca, -sa]) * 0.5
        return a, p
    cl, sl = _angle_trig(angles, 0)
    cg, sg = _angle_trig(angles, 1)
    ca, sa = _angle_trig(angles, 2)
    cla, sla = _angle_trig(angles, 3)
    scg, sca = sg * cg, sa * ca
    p = ad.stack([1.0, cg * cg * cl + scg * sl, scg * cl + sg * sg * sl, sg * cl - cg * sl]) * half_l
    a = ad.stack([1.0, cla * ca * ca + sla * sca, cla * sca + sla * sa * sa, sla * ca - cla * sa]) * 0.5
    return a, p


def forward_measure(m: np.ndarray, angles: ad.Var, condition: Condition, source_intensity: float = 1.0) -> ad.Var:
    """Intensities (B, K) for a batch of Mueller matrices, differentiable in ``angles``."""
    m = np.asarray(m, dtype=float)
    if m.ndim == 2:
        m = m[None]
    a, p = tape_probe_vectors(angles, condition, source_intensity)
    return ad.bilinear_readout(a, m, p)


# -- classifier --------------------------------------------------------------


@dataclass
class ClassifierParams:
    widths: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, n_in: int, rng: np.random.Generator, n_out: int = N_CLASSES) -> "ClassifierParams":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
        widths = (n_in, *HIDDEN_WIDTHS, n_out)
        ws, bs = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            bs.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(widths, ws, bs)

    @classmethod
    def zeros(cls, n_in: int, n_out: int = N_CLASSES) -> "ClassifierParams":
        widths = (n_in, *HIDDEN_WIDTHS, n_out)
        return cls(
            widths,
            [np.zeros((i, o)) for i, o in zip(widths[:-1], widths[1:])],
            [np.zeros(o) for o in widths[1:]],
        )

    @property
    def n_in(self) -> int:
        return self.widths[0]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([x.ravel() for x in self.arrays()])

    @classmethod
    def from_flat(cls, widths, flat) -> "ClassifierParams":
        widths = tuple(int(w) for w in widths)
        flat = np.asarray(flat, dtype=float)
        ws, bs, i = [], [], 0
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            ws.append(flat[i : i + fan_in * fan_out].reshape(fan_in, fan_out))
            i += fan_in * fan_out
            bs.append(flat[i : i + fan_out].copy())
            i += fan_out
        if i != flat.size:
            raise ValueError(f"expected {i} parameters for widths {widths}, got {flat.size}")
        return cls(widths, ws, bs)

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(self.widths, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


def mlp_forward(x, layers: list[tuple[ad.Var, ad.Var]]) -> ad.Var:
    """Affine/ReLU chain on the tape; the last layer stays linear."""
    h = x
    for i, (w, b) in enumerate(layers):
        h = ad.affine(h, w, b)
        if i < len(layers) - 1:
            h = ad.relu(h)
    return h


def mlp_logits(params: ClassifierParams, x: np.ndarray) -> np.ndarray:
    """Plain numpy forward pass, for inference."""
    h = np.atleast_2d(np.asarray(x, dtype=float))
    if h.shape[-1] != params.n_in:
        raise ValueError(f"classifier expects {params.n_in} inputs, got {h.shape[-1]}")
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def class_weights(labels: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
    """Per-class weights ``B / (n_present * n_c)``; absent classes get 0."""
    labels = np.asarray(labels, dtype=int)
    counts = np.bincount(labels, minlength=n_classes).astype(float)
    present = counts > 0
    w = np.zeros(n_classes)
    w[present] = labels.size / (present.sum() * counts[present])
    return w


def weighted_cross_entropy(logits: ad.Var, labels, weights_per_class) -> ad.Var:
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    w = np.asarray(weights_per_class, dtype=float)
    if np.any(w[labels] <= 0):
        raise ValueError("every labelled class needs a positive weight")
    return ad.weighted_cross_entropy(logits, labels, w[labels])


# -- optimizer ---------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray], lrs=None) -> list[np.ndarray]:
    """One bias-corrected Adam update. ``lrs`` optionally gives one rate per parameter."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    lrs = [state.lr] * len(params) if lrs is None else list(lrs)
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch for parameter {i}: {p.shape} vs {g.shape}")
        state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        out.append(p - lrs[i] * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


# -- data --------------------------------------------------------------------


def make_minibatch(mueller: np.ndarray, labels: np.ndarray, rng: np.random.Generator, batch_size: int = 128,
                   *, augment_intensity: bool = True, augment_rotation: bool = True):
    """Uniform draws with replacement, augmented, plus per-sample loss weights."""
    if len(labels) == 0:
        raise ValueError("training split is empty")
    idx = rng.integers(0, len(labels), size=batch_size)
    m = augment_batch(mueller[idx], rng, intensity=augment_intensity, rotation=augment_rotation)
    y = labels[idx]
    return m, y, class_weights(y)


# -- plans -------------------------------------------------------------------


def uniform_plan(condition, K: int, source_intensity: float = 1.0) -> MeasurementPlan:
    """Systematic plans: the 4x4 polarization-camera grid (LP) or the 5:1 dual rotating compensator (QWP)."""
    condition = Condition.parse(condition)
    if K < 1:
        raise ValueError("K must be at least 1")
    if condition is Condition.LP:
        grid = [(g, a) for g in LP_UNIFORM_ANGLES_DEG for a in LP_UNIFORM_ANGLES_DEG]
        if K > len(grid):
            raise ValueError(f"LP uniform grid has only {len(grid)} configurations, asked for {K}")
        return MeasurementPlan.from_free_angles(condition, np.radians(grid[:K]), source_intensity)
    if condition is Condition.QWP:
        gen = np.array([k * 180.0 / K for k in range(K)])
        ana = np.mod(AZZAM_RATIO * gen, 180.0)
        return MeasurementPlan.from_free_angles(condition, np.radians(np.stack([gen, ana], axis=1)), source_intensity)
    raise ValueError("no uniform scheme exists for LP+QWP (all four elements rotating)")


def random_angles(condition, K: int, rng: np.random.Generator) -> np.ndarray:
    condition = Condition.parse(condition)
    return rng.uniform(0.0, math.pi, size=(K, len(condition.free_angles)))


# -- training ----------------------------------------------------------------


@dataclass
class TrainConfig:
    steps: int = 5000
    batch_size: int = 128
    lr: float = 1e-3
    angle_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    augment_intensity: bool = True
    augment_rotation: bool = True
    source_intensity: float = 1.0

    @classmethod
    def from_dict(cls, d: dict | None) -> "TrainConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainResult:
    plan: MeasurementPlan
    classifier: ClassifierParams
    history: list[dict]
    initial_plan: MeasurementPlan

    def to_dict(self) -> dict:
        return {
            "plan": self.plan.to_dict(),
            "classifier": {"widths": list(self.classifier.widths), "weights": self.classifier.flat().tolist()},
            "history": [{"step": h["step"], "loss": h["loss"]} for h in self.history],
        }


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


def initial_angles(condition, regime, K: int, seed: int, source_intensity: float = 1.0) -> np.ndarray:
    regime = Regime.parse(regime)
    if regime is Regime.UNIFORM:
        return uniform_plan(condition, K, source_intensity).free_angle_array()
    return random_angles(condition, K, _rng(seed, 0))


def loss_on_batch(angles: np.ndarray, clf: ClassifierParams, condition, m, y, weights_per_class,
                  source_intensity: float = 1.0, angles_trainable: bool = True):
    """Build one forward pass on a fresh tape. Returns (tape, loss, angle_var, layer_vars)."""
    tape = ad.Tape()
    ang = tape.var(angles, "angles")
    if angles_trainable:
        x = forward_measure(m, ang, condition, source_intensity)
    else:
        plan = MeasurementPlan.from_free_angles(condition, angles, source_intensity)
        x = simulate(plan, m)
    layers = [(tape.var(w), tape.var(b)) for w, b in zip(clf.weights, clf.biases)]
    logits = mlp_forward(x, layers)
    loss = weighted_cross_entropy(logits, y, weights_per_class)
    return tape, loss, ang, layers, logits


def train(dataset, condition, regime, K: int, seed: int, hyper: TrainConfig | None = None,
          log_every: int = 0, logger=None) -> TrainResult:
    """Train a classifier (and, when ``Optimized``, the capture angles) from scratch."""
    condition = Condition.parse(condition)
    regime = Regime.parse(regime)
    hyper = hyper or TrainConfig()
    if K < 1:
        raise ValueError("K must be at least 1")
    m_train, y_train = dataset.split("train") if hasattr(dataset, "split") else dataset

    angles0 = initial_angles(condition, regime, K, seed, hyper.source_intensity)
    initial_plan = MeasurementPlan.from_free_angles(condition, angles0, hyper.source_intensity)
    clf = ClassifierParams.init(K, _rng(seed, 1))
    batch_rng = _rng(seed, 2)
    trainable = regime is Regime.OPTIMIZED
    angles = angles0.copy()
    state = AdamState(lr=hyper.lr, beta1=hyper.beta1, beta2=hyper.beta2, eps=hyper.eps)
    n_clf = len(clf.arrays())
    lrs = [hyper.lr] * n_clf + ([hyper.angle_lr] if trainable else [])
    history = []

    for step in range(hyper.steps):
        m, y, wc = make_minibatch(
            m_train, y_train, batch_rng, hyper.batch_size,
            augment_intensity=hyper.augment_intensity, augment_rotation=hyper.augment_rotation,
        )
        tape, loss, ang, layers, logits = loss_on_batch(
            angles, clf, condition, m, y, wc, hyper.source_intensity, trainable
        )
        tape.backward(loss)
        params = clf.arrays()
        grads = [v.grad for pair in layers for v in pair]
        if trainable:
            params.append(angles)
            grads.append(ang.grad)
        new = adam_step(state, params, grads, lrs)
        clf = ClassifierParams(clf.widths, new[0:n_clf:2], new[1:n_clf:2])
        if trainable:
            angles = new[-1]
        acc = float(np.mean(np.argmax(logits.value, axis=1) == y))
        history.append({"step": step, "loss": float(loss.value), "accuracy": acc})
        if logger is not None and log_every and (step + 1) % log_every == 0:
            logger.info("step %d loss %.4f batch-acc %.3f", step + 1, float(loss.value), acc)

    plan = initial_plan if not trainable else MeasurementPlan.from_free_angles(condition, angles, hyper.source_intensity)
    return TrainResult(plan, clf, history, initial_plan)


# -- evaluation --------------------------------------------------------------


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # rows: true class, columns: predicted

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "confusion": self.confusion.tolist()}


def evaluate(classifier: ClassifierParams, plan: MeasurementPlan, mueller: np.ndarray, labels: np.ndarray,
             rotation_sweep: int = 0) -> EvalResult:
    """Accuracy and confusion counts on a split, without augmentation.

    ``rotation_sweep > 0`` repeats the evaluation at that many equally spaced
    object rotations in [0, π) and pools the predictions.
    """
    labels = np.asarray(labels, dtype=int)
    if labels.size == 0:
        raise ValueError("cannot evaluate on an empty split")
    if classifier.n_in != plan.K:
        raise ValueError(f"classifier expects {classifier.n_in} inputs but plan has K={plan.K}")
    mueller = np.asarray(mueller, dtype=float)
    if rotation_sweep:
        rhos = np.arange(rotation_sweep) * math.pi / rotation_sweep
        mueller = np.concatenate([rotate_mueller_batch(mueller, np.full(len(labels), r)) for r in rhos])
        labels = np.tile(labels, rotation_sweep)
    pred = np.argmax(mlp_logits(classifier, simulate(plan, mueller)), axis=1)
    n = classifier.widths[-1]
    confusion = np.zeros((n, n), dtype=int)
    np.add.at(confusion, (labels, pred), 1)
    return EvalResult(float(np.mean(pred == labels)), confusion)


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(result: TrainResult, path) -> None:
    Path(path).write_text(json.dumps(result.to_dict()) + "\n")


def load_checkpoint(path) -> TrainResult:
    d = json.loads(Path(path).read_text())
    plan = MeasurementPlan.from_dict(d["plan"])
    clf = ClassifierParams.from_flat(d["classifier"]["widths"], d["classifier"]["weights"])
    return TrainResult(plan, clf, list(d.get("history", [])), plan)
