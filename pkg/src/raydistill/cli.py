"""Command-line surface: scene generation, loss evaluation, gradient
checking, training, and resilience evaluation.

Every command is deterministic given its flags; stochastic commands require
an explicit ``--seed``.  Config precedence is CLI flag > ``--config`` JSON
file > built-in default, and the merged effective config is echoed to the
output directory.  Exit codes: 0 success, 1 usage, 2 format or I/O error,
3 numeric failure (gradient-check breach or training divergence).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .fileio import atomic_write_text
from .gradcheck import LOSS_NAMES, run_gradient_checks
from .geometry import partition_rays, rasterize_objects
from .harness import (MetricsRow, ResilienceReport, StudentModel, TrainConfig,
                      TrainingDiverged, evaluate_resilience, train)
from .losses_aux import HeadOutputs, LossWeights, response_loss, src_loss
from .losses_rcd import RcdConfig, rcd_loss
from .losses_rwd import RwdConfig, rwd_loss
from .rng import derive_seed
from .sampling import SamplerConfig, build_sample_set, sample_set_to_json
from .simulator import (CORRUPTION_KINDS, CameraConfig, CorruptionSpec,
                        SceneRender, generate_scene, load_scene,
                        render_scene, save_scene)
from .tensor import (FeatureMap, FormatError, ScalarGrid, channel_abs_mean,
                     load_grid, load_tensor, save_grid, save_tensor)

_SCENE_SET_STREAM = 1001
_CAMERA_STREAM = 1002
_CORRUPTION_STREAM = 1003
_EVAL_STREAM = 1004


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit code 1 instead of argparse's 2
        raise UsageError(f"{self.prog}: {message}")


_SCENE_DEFAULTS = {
    "h": 64, "w": 64, "d": 8, "n_ray": 64, "objects": 6,
    "depth_bias": 3.0, "smear_sigma": 2.5,
    "ghosts_per_ray": 1, "ghost_amp": 0.8,
}
_LOSS_DEFAULTS = {
    "sigma": 2.0, "n_neg": 5, "m": 3,
    "tau": 0.07, "xi": 1e-6, "normalize": True,
    "s_bg": 0.25, "detach_weights": True,
    "w_rcd": 1.0, "w_rwd": 1.0, "w_src": 1.0, "w_res": 1.0,
}
_TRAIN_DEFAULTS = {
    "scenes": 16, "epochs": 200, "lr": 1e-2, "optimizer": "adam",
}
_EVAL_DEFAULTS = {
    "severity": 0.5, "kinds": ",".join(CORRUPTION_KINDS),
}


def _add_scene_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--h", type=int)
    p.add_argument("--w", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--n-ray", type=int, dest="n_ray")
    p.add_argument("--objects", type=int)
    p.add_argument("--depth-bias", type=float, dest="depth_bias")
    p.add_argument("--smear-sigma", type=float, dest="smear_sigma")
    p.add_argument("--ghosts-per-ray", type=int, dest="ghosts_per_ray")
    p.add_argument("--ghost-amp", type=float, dest="ghost_amp")


def _add_loss_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sigma", type=float)
    p.add_argument("--n-neg", type=int, dest="n_neg")
    p.add_argument("--m", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--xi", type=float)
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction)
    p.add_argument("--s-bg", type=float, dest="s_bg")
    p.add_argument("--detach-weights", action=argparse.BooleanOptionalAction,
                   dest="detach_weights")
    for name in ("rcd", "rwd", "src", "res"):
        p.add_argument(f"--w-{name}", type=float, dest=f"w_{name}")


def build_parser() -> _Parser:
    parser = _Parser(prog="raydistill",
                     description="Ray-based BEV distillation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scene", help="generate a synthetic scene")
    _add_scene_flags(g)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.add_argument("--corruption", action="append", default=None,
                   metavar="KIND:SEVERITY[:SEED]",
                   help="embed a corruption in the scene (repeatable)")

    l = sub.add_parser("losses", help="evaluate all losses on tensor files")
    l.add_argument("--scene", required=True)
    l.add_argument("--teacher", required=True, help="RTF base path")
    l.add_argument("--student", required=True, help="RTF base path")
    l.add_argument("--occupancy", help="RTF base path of occupancy logits")
    l.add_argument("--seed", type=int, required=True)
    l.add_argument("--out", required=True)
    l.add_argument("--config")
    l.add_argument("--dump-grads", action="store_true", dest="dump_grads")
    l.add_argument("--dump-samples", action="store_true", dest="dump_samples")
    l.add_argument("--dump-maps", action="store_true", dest="dump_maps")
    _add_loss_flags(l)

    c = sub.add_parser("grad-check", help="finite-difference gradient checks")
    c.add_argument("--loss", choices=list(LOSS_NAMES) + ["all"], default="all")
    c.add_argument("--trials", type=int, default=10)
    c.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train the toy student on synthetic scenes")
    _add_scene_flags(t)
    _add_loss_flags(t)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--scenes", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--optimizer", choices=["sgd", "adam"])
    t.add_argument("--ablation", action="store_true")
    t.add_argument("--eval-severity", type=float, dest="eval_severity")

    e = sub.add_parser("eval", help="resilience evaluation of a trained model")
    _add_scene_flags(e)
    e.add_argument("--model", required=True)
    e.add_argument("--seed", type=int, required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--config")
    e.add_argument("--scenes", type=int)
    e.add_argument("--severity", type=float)
    e.add_argument("--kinds", help="comma-separated corruption kinds")
    return parser


def _merge(args: argparse.Namespace, defaults: dict) -> dict:
    """CLI flag > config file > default; unknown config keys are rejected."""
    cfg = dict(defaults)
    path = getattr(args, "config", None)
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                file_cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: not valid JSON") from exc
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in defaults:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    return cfg


def _echo_config(out: str, command: str, cfg: dict, seed: int) -> None:
    payload = {"command": command, "seed": seed, **cfg}
    atomic_write_text(os.path.join(out, "effective_config.json"),
                      json.dumps(payload, indent=2, sort_keys=True))


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _write_csv(path: str, header: str, rows: list[str]) -> None:
    atomic_write_text(path, "\n".join([header] + rows) + "\n")


def _parse_corruption(text: str) -> CorruptionSpec:
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise UsageError(f"bad corruption {text!r}, expected KIND:SEVERITY[:SEED]")
    kind, severity = parts[0], float(parts[1])
    seed = int(parts[2]) if len(parts) == 3 else 0
    try:
        return CorruptionSpec(kind=kind, severity=severity, seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _eval_corruptions(kinds, severity: float, seed: int) -> list[CorruptionSpec]:
    """Three seeded instances per kind; gain gets both directions explicitly."""
    corrs = []
    for j, k in enumerate(kinds):
        for t in range(3):
            s = derive_seed(seed, _CORRUPTION_STREAM, j, t)
            if k == "gain":      # even seed brightens, odd darkens
                s = (s & ~1) | (t % 2)
            corrs.append(CorruptionSpec(kind=k, severity=severity, seed=s))
    return corrs


def _scene_set(cfg: dict, seed: int, n_scenes: int) -> list[SceneRender]:
    scenes = []
    for i in range(n_scenes):
        spec = generate_scene(cfg["h"], cfg["w"], cfg["d"], cfg["n_ray"],
                              cfg["objects"],
                              seed=derive_seed(seed, _SCENE_SET_STREAM, i))
        cam = CameraConfig(depth_bias=cfg["depth_bias"],
                           smear_sigma=cfg["smear_sigma"],
                           ghosts_per_ray=cfg["ghosts_per_ray"],
                           ghost_amp=cfg["ghost_amp"],
                           seed=derive_seed(seed, _CAMERA_STREAM, i))
        scenes.append(render_scene(spec, cam))
    return scenes


def _train_config(cfg: dict, seed: int, weights: LossWeights) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["epochs"], lr=cfg["lr"], optimizer=cfg["optimizer"],
        loss_weights=weights, seed=seed,
        sampler=SamplerConfig(sigma=cfg["sigma"], n_neg=cfg["n_neg"],
                              m=cfg["m"], seed=seed),
        rcd=RcdConfig(tau=cfg["tau"], xi=cfg["xi"], normalize=cfg["normalize"]),
        rwd=RwdConfig(s_bg=cfg["s_bg"], detach_weights=cfg["detach_weights"]))


def _metrics_rows(rows: list[MetricsRow]) -> list[str]:
    return [",".join([str(r.epoch), _fmt(r.total), _fmt(r.rcd), _fmt(r.rwd),
                      _fmt(r.src), _fmt(r.res), _fmt(r.depth_mae)])
            for r in rows]


def _resilience_csv(path: str, report: ResilienceReport) -> None:
    rows = [",".join([r.kind, _fmt(r.severity), _fmt(r.depth_mae),
                      _fmt(r.resilience)]) for r in report.rows]
    _write_csv(path, "kind,severity,depth_mae,resilience", rows)


def save_model(model: StudentModel, path: str) -> None:
    atomic_write_text(path, json.dumps({
        "w": model.w.tolist(), "b": model.b.tolist(),
        "occ_w": model.occ_w.tolist()}))


def load_model(path: str) -> StudentModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON") from exc
    try:
        return StudentModel(w=np.asarray(obj["w"], dtype=np.float64),
                            b=np.asarray(obj["b"], dtype=np.float64),
                            occ_w=np.asarray(obj["occ_w"], dtype=np.float64))
    except KeyError as exc:
        raise FormatError(f"{path}: missing model field {exc}") from exc


def cmd_gen_scene(args: argparse.Namespace) -> int:
    cfg = _merge(args, _SCENE_DEFAULTS)
    corruptions = tuple(_parse_corruption(c) for c in (args.corruption or []))
    spec = generate_scene(cfg["h"], cfg["w"], cfg["d"], cfg["n_ray"],
                          cfg["objects"], seed=args.seed,
                          corruptions=corruptions)
    cam = CameraConfig(depth_bias=cfg["depth_bias"],
                       smear_sigma=cfg["smear_sigma"],
                       ghosts_per_ray=cfg["ghosts_per_ray"],
                       ghost_amp=cfg["ghost_amp"],
                       seed=derive_seed(args.seed, _CAMERA_STREAM))
    scene = render_scene(spec, cam)
    out = args.out
    os.makedirs(out, exist_ok=True)
    save_scene(spec, os.path.join(out, "scene.json"))
    save_tensor(scene.teacher, os.path.join(out, "teacher"))
    save_tensor(scene.camera_clean, os.path.join(out, "camera_clean"))
    save_tensor(scene.camera_corrupt, os.path.join(out, "camera_corrupt"))
    truth_rows = [f"{i},{_fmt(t)}" for i, t in enumerate(scene.truth)]
    _write_csv(os.path.join(out, "truth.csv"), "ray,true_depth", truth_rows)
    _echo_config(out, "gen-scene", cfg, args.seed)
    print(f"wrote scene.json, teacher, camera_clean, camera_corrupt, "
          f"truth.csv to {out}")
    return 0


def cmd_losses(args: argparse.Namespace) -> int:
    cfg = _merge(args, _LOSS_DEFAULTS)
    spec = load_scene(args.scene)
    teacher = load_tensor(args.teacher)
    student = load_tensor(args.student)
    if teacher.shape != student.shape:
        raise FormatError(f"teacher shape {teacher.shape} != student {student.shape}")
    if (teacher.h, teacher.w, teacher.d) != (spec.h, spec.w, spec.d):
        raise FormatError(f"tensor shape {teacher.shape} does not match scene "
                          f"({spec.d},{spec.h},{spec.w})")
    partition = partition_rays(spec.h, spec.w, spec.origin, spec.n_ray)
    fg = rasterize_objects(list(spec.objects), spec.h, spec.w)
    occ = load_grid(args.occupancy) if args.occupancy else channel_abs_mean(student)

    sset = build_sample_set(student, teacher, partition, fg,
                            SamplerConfig(sigma=cfg["sigma"], n_neg=cfg["n_neg"],
                                          m=cfg["m"], seed=args.seed))
    rcd = rcd_loss(student, teacher, sset,
                   RcdConfig(tau=cfg["tau"], xi=cfg["xi"],
                             normalize=cfg["normalize"]))
    rwd_out = rwd_loss(student, teacher, partition, fg,
                       RwdConfig(s_bg=cfg["s_bg"],
                                 detach_weights=cfg["detach_weights"]))
    res_h = response_loss(HeadOutputs((teacher.data,)), HeadOutputs((student.data,)))
    src = src_loss(occ, fg)
    lw = LossWeights(cfg["w_rcd"], cfg["w_rwd"], cfg["w_src"], cfg["w_res"])
    total_value = (lw.w_rcd * rcd.value + lw.w_rwd * rwd_out.result.value
                   + lw.w_src * src.value + lw.w_res * res_h.value)

    payload = {
        "rcd": rcd.value, "rwd": rwd_out.result.value, "src": src.value,
        "res": res_h.value, "total": total_value,
        "rcd_status": rcd.status, "active_rays": len(sset.entries),
    }
    out = args.out
    os.makedirs(out, exist_ok=True)
    text = json.dumps(payload, indent=2, sort_keys=True)
    atomic_write_text(os.path.join(out, "losses.json"), text)
    if args.dump_grads:
        save_tensor(FeatureMap(rcd.grad), os.path.join(out, "grad_rcd"))
        save_tensor(FeatureMap(rwd_out.result.grad), os.path.join(out, "grad_rwd"))
        save_tensor(FeatureMap(res_h.grad[0]), os.path.join(out, "grad_res"))
        save_grid(ScalarGrid(src.grad), os.path.join(out, "grad_src"))
    if args.dump_samples:
        atomic_write_text(os.path.join(out, "samples.json"),
                          json.dumps(sample_set_to_json(sset)))
    if args.dump_maps:
        save_grid(rwd_out.attention_student, os.path.join(out, "attention_student"))
        save_grid(rwd_out.attention_teacher, os.path.join(out, "attention_teacher"))
        save_grid(rwd_out.weight_map, os.path.join(out, "weight_map"))
    _echo_config(out, "losses", cfg, args.seed)
    print(text)
    return 0


def cmd_grad_check(args: argparse.Namespace) -> int:
    losses = LOSS_NAMES if args.loss == "all" else (args.loss,)
    reports = run_gradient_checks(losses=losses, trials=args.trials,
                                  seed=args.seed)
    for r in reports:
        print(r.line())
    return 0 if all(r.passed for r in reports) else 3


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _merge(args, {**_SCENE_DEFAULTS, **_LOSS_DEFAULTS, **_TRAIN_DEFAULTS,
                        "eval_severity": 0.5})
    out = args.out
    os.makedirs(out, exist_ok=True)
    scenes = _scene_set(cfg, args.seed, cfg["scenes"])
    lw = LossWeights(cfg["w_rcd"], cfg["w_rwd"], cfg["w_src"], cfg["w_res"])
    model, rows = train(scenes, _train_config(cfg, args.seed, lw))
    _write_csv(os.path.join(out, "metrics.csv"),
               "epoch,total,rcd,rwd,src,res,depth_mae", _metrics_rows(rows))
    save_model(model, os.path.join(out, "model.json"))
    print(f"distilled: final depth_mae {_fmt(rows[-1].depth_mae)}")

    if args.ablation:
        baseline_cfg = _train_config(cfg, args.seed, LossWeights(0.0, 0.0, 1.0, 0.0))
        baseline, brows = train(scenes, baseline_cfg)
        _write_csv(os.path.join(out, "baseline_metrics.csv"),
                   "epoch,total,rcd,rwd,src,res,depth_mae", _metrics_rows(brows))
        save_model(baseline, os.path.join(out, "baseline_model.json"))
        corrs = _eval_corruptions(CORRUPTION_KINDS, cfg["eval_severity"], args.seed)
        eval_seed = derive_seed(args.seed, _EVAL_STREAM)
        rep_d = evaluate_resilience(model, scenes, corrs, seed=eval_seed)
        rep_b = evaluate_resilience(baseline, scenes, corrs, seed=eval_seed)
        _resilience_csv(os.path.join(out, "resilience_distilled.csv"), rep_d)
        _resilience_csv(os.path.join(out, "resilience_baseline.csv"), rep_b)
        comparison = [
            f"final_depth_mae,{_fmt(brows[-1].depth_mae)},{_fmt(rows[-1].depth_mae)}",
            f"clean_depth_mae,{_fmt(rep_b.clean_depth_mae)},{_fmt(rep_d.clean_depth_mae)}",
            f"resilience_aggregate,{_fmt(rep_b.aggregate)},{_fmt(rep_d.aggregate)}",
        ]

        def kind_mean(report, kind):
            vals = [r.resilience for r in report.rows if r.kind == kind]
            return float(np.mean(vals))

        comparison += [
            f"resilience_{k},{_fmt(kind_mean(rep_b, k))},{_fmt(kind_mean(rep_d, k))}"
            for k in CORRUPTION_KINDS]
        _write_csv(os.path.join(out, "comparison.csv"),
                   "metric,baseline,distilled", comparison)
        print(f"baseline:  final depth_mae {_fmt(brows[-1].depth_mae)}")
        print(f"resilience aggregate: baseline {_fmt(rep_b.aggregate)} "
              f"distilled {_fmt(rep_d.aggregate)}")
    _echo_config(out, "train", cfg, args.seed)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _merge(args, {**_SCENE_DEFAULTS, "scenes": 16, **_EVAL_DEFAULTS})
    kinds = [k.strip() for k in cfg["kinds"].split(",") if k.strip()]
    for k in kinds:
        if k not in CORRUPTION_KINDS:
            raise UsageError(f"unknown corruption kind {k!r}")
    model = load_model(args.model)
    scenes = _scene_set(cfg, args.seed, cfg["scenes"])
    corrs = _eval_corruptions(kinds, cfg["severity"], args.seed)
    report = evaluate_resilience(model, scenes, corrs,
                                 seed=derive_seed(args.seed, _EVAL_STREAM))
    out = args.out
    os.makedirs(out, exist_ok=True)
    _resilience_csv(os.path.join(out, "resilience.csv"), report)
    _echo_config(out, "eval", cfg, args.seed)
    print(f"clean depth_mae {_fmt(report.clean_depth_mae)}; "
          f"resilience aggregate {_fmt(report.aggregate)}")
    return 0


_COMMANDS = {
    "gen-scene": cmd_gen_scene,
    "losses": cmd_losses,
    "grad-check": cmd_grad_check,
    "train": cmd_train,
    "eval": cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
