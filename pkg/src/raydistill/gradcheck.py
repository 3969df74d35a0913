"""Central finite-difference verification of every analytic gradient.

Each loss gets seeded random instances; the analytic gradient must match
central differences entrywise, relatively where the gradient is
appreciable and absolutely where it is near zero.  Instances are nudged
away from the L1/absolute-value kinks (|student| near 0, residual near 0)
where finite differences are meaningless.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import ForegroundMask, rasterize_objects
from .harness import StudentModel, scene_losses
from .losses_aux import HeadOutputs, response_loss, src_loss
from .losses_rcd import RcdConfig, rcd_loss
from .losses_rwd import RwdConfig, rwd_loss, weighted_l1_loss
from .rng import substream
from .sampling import SamplerConfig, build_sample_set
from .simulator import CameraConfig, generate_scene, render_scene
from .tensor import FeatureMap, ScalarGrid

LOSS_NAMES = ("rcd", "rwd", "res", "src")

REL_TOL = 1e-5
ABS_SMALL = 1e-8   # |grad| below this is compared absolutely
ABS_TOL = 1e-10
FD_STEP = 1e-5


@dataclass
class CheckReport:
    loss: str
    trials: int
    max_rel_error: float
    max_abs_error_small: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{self.loss:4s} trials={self.trials} "
                f"max_rel={self.max_rel_error:.3e} "
                f"max_abs_small={self.max_abs_error_small:.3e} {status}")


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray,
                       step: float = FD_STEP) -> np.ndarray:
    """Entrywise central finite differences of a scalar function."""
    grad = np.zeros_like(x)
    flat = grad.ravel()
    base = x.copy().ravel()
    for i in range(base.size):
        orig = base[i]
        base[i] = orig + step
        up = fn(base.reshape(x.shape))
        base[i] = orig - step
        down = fn(base.reshape(x.shape))
        base[i] = orig
        flat[i] = (up - down) / (2.0 * step)
    return grad


def compare_gradients(analytic: np.ndarray, numeric: np.ndarray
                      ) -> tuple[float, float]:
    """(max relative error, max absolute error on near-zero entries).

    An entry is matched either relatively or to ABS_TOL absolutely; the
    absolute escape covers gradient entries so small that the difference
    sits at the float64 finite-difference noise floor, which is itself
    below ABS_TOL.  Entries with |grad| < ABS_SMALL must always meet the
    absolute bound.
    """
    a = analytic.ravel()
    n = numeric.ravel()
    diff = np.abs(a - n)
    need_rel = diff > ABS_TOL
    max_rel = 0.0
    if need_rel.any():
        denom = np.maximum(np.abs(a[need_rel]), np.abs(n[need_rel]))
        max_rel = float((diff[need_rel] / denom).max())
    small = np.abs(a) < ABS_SMALL
    max_abs = float(diff[small].max()) if small.any() else 0.0
    return max_rel, max_abs


def _scene_fixture(seed: int, d: int = 8, hw: int = 16
                   ) -> tuple[FeatureMap, FeatureMap, ForegroundMask, object]:
    """Random maps + scene geometry with all kink regions avoided."""
    spec = generate_scene(hw, hw, d, n_ray=16, n_objects=3, seed=seed)
    scene = render_scene(spec, CameraConfig(seed=seed))
    rng = substream(seed, 777)
    student = rng.normal(0.0, 1.0, (d, hw, hw))
    student += 0.25 * np.sign(student)          # keep |student| off the abs kink
    teacher = rng.normal(0.0, 1.0, (d, hw, hw))
    teacher += 0.25 * np.sign(teacher)
    resid = np.abs(teacher - student)
    teacher[resid < 1e-3] += 2e-3               # keep |L - C| off the sign kink
    return FeatureMap(student), FeatureMap(teacher), scene.fg, scene.partition


def check_rcd(seed: int, cfg: RcdConfig = RcdConfig()) -> tuple[float, float]:
    student, teacher, fg, partition = _scene_fixture(seed)
    sset = build_sample_set(student, teacher, partition, fg,
                            SamplerConfig(seed=seed))
    analytic = rcd_loss(student, teacher, sset, cfg).grad

    def fn(x: np.ndarray) -> float:
        return rcd_loss(FeatureMap(x), teacher, sset, cfg).value

    numeric = central_difference(fn, student.data)
    return compare_gradients(analytic, numeric)


def check_rwd(seed: int, detach: bool) -> tuple[float, float]:
    student, teacher, fg, partition = _scene_fixture(seed)
    cfg = RwdConfig(detach_weights=detach)
    out = rwd_loss(student, teacher, partition, fg, cfg)
    analytic = out.result.grad

    if detach:
        # detached weights are a constant of the loss: perturb features only
        frozen = out.weight_map

        def fn(x: np.ndarray) -> float:
            return weighted_l1_loss(FeatureMap(x), teacher, frozen).value
    else:
        def fn(x: np.ndarray) -> float:
            return rwd_loss(FeatureMap(x), teacher, partition, fg, cfg).result.value

    numeric = central_difference(fn, student.data)
    return compare_gradients(analytic, numeric)


def check_res(seed: int) -> tuple[float, float]:
    rng = substream(seed, 888)
    shape = (2, 8, 16, 16)
    teacher = rng.normal(0.0, 1.0, shape)
    student = rng.normal(0.0, 1.0, shape)
    resid = np.abs(teacher - student)
    teacher[resid < 1e-3] += 2e-3
    analytic = response_loss(HeadOutputs(tuple(teacher)),
                             HeadOutputs(tuple(student))).grad

    def fn(x: np.ndarray) -> float:
        return response_loss(HeadOutputs(tuple(teacher)),
                             HeadOutputs(tuple(x))).value

    numeric = central_difference(fn, student)
    return compare_gradients(analytic, numeric)


def check_src(seed: int) -> tuple[float, float]:
    rng = substream(seed, 999)
    hw = 16
    logits = rng.normal(0.0, 2.0, (hw, hw))
    spec = generate_scene(hw, hw, 8, n_ray=16, n_objects=3, seed=seed)
    fg = rasterize_objects(list(spec.objects), hw, hw)
    analytic = src_loss(ScalarGrid(logits), fg).grad

    def fn(x: np.ndarray) -> float:
        return src_loss(ScalarGrid(x), fg).value

    numeric = central_difference(fn, logits)
    return compare_gradients(analytic, numeric)


def _variants(loss: str) -> list[Callable[[int], tuple[float, float]]]:
    if loss == "rcd":
        return [check_rcd]
    if loss == "rwd":
        return [lambda s: check_rwd(s, detach=True),
                lambda s: check_rwd(s, detach=False)]
    if loss == "res":
        return [check_res]
    if loss == "src":
        return [check_src]
    raise ValueError(f"unknown loss {loss!r}")


def run_gradient_checks(losses: tuple[str, ...] = LOSS_NAMES, trials: int = 10,
                        seed: int = 0) -> list[CheckReport]:
    reports = []
    for loss in losses:
        max_rel = 0.0
        max_abs = 0.0
        for t in range(trials):
            for variant in _variants(loss):
                rel, ab = variant(seed + t)
                max_rel = max(max_rel, rel)
                max_abs = max(max_abs, ab)
        reports.append(CheckReport(
            loss=loss, trials=trials, max_rel_error=max_rel,
            max_abs_error_small=max_abs,
            passed=max_rel <= REL_TOL and max_abs <= ABS_TOL))
    return reports


def check_pipeline_gradient(seed: int) -> tuple[float, float]:
    """End-to-end check of the parameter gradient used by the training loop."""
    spec = generate_scene(16, 16, 8, n_ray=16, n_objects=3, seed=seed)
    scene = render_scene(spec, CameraConfig(seed=seed))
    model = StudentModel.init(8, 8, seed)
    sampler = SamplerConfig(seed=seed)
    # non-detached weights so the finite-difference value sees every path
    rcd_cfg, rwd_cfg = RcdConfig(), RwdConfig(detach_weights=False)

    def loss_for(w: np.ndarray) -> float:
        m = StudentModel(w=w, b=model.b, occ_w=model.occ_w)
        parts, _, _ = scene_losses(m, scene, sampler, rcd_cfg, rwd_cfg)
        return (parts["rcd"].value + parts["rwd"].value
                + parts["src"].value + parts["res"].value)

    parts, student, _ = scene_losses(model, scene, sampler, rcd_cfg, rwd_cfg)
    g_feats = (parts["rcd"].grad + parts["rwd"].grad + parts["src"].grad
               + parts["res"].grad)
    analytic = np.einsum("ohw,ihw->oi", g_feats, scene.camera_corrupt.data)
    numeric = central_difference(loss_for, model.w)
    return compare_gradients(analytic, numeric)
