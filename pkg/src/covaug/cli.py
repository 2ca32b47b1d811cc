"""Command-line front end: ``covaug <command> [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import augeval as ae
from . import datakit as dk
from . import diffengine as de
from . import episodic as ep
from . import experiments as ex
from . import ganstack as gs
from . import linalg
from .errors import ArgumentError

log = logging.getLogger("covaug")


@dataclass
class RunConfig:
    """Everything one invocation needs, merged from ``--config`` and flags."""

    train: ep.TrainConfig = field(default_factory=ep.desk_config)
    preset: str = "desk"
    data: str | None = None
    direct: bool = False          # train on the novel seeds instead of episodically
    checkpoint: str | None = None
    setting: str = "lsl"
    K: int = 1
    trials: int = 5
    top_k: int = 1
    classifier: str = "centroid"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = self.train.to_dict()
        return d


_TRAIN_FLAGS = {"seed": "seed", "variant": "variant", "nbs": "nbs", "k": "nbs_k",
                "episodes": "episodes"}


def build_config(args) -> RunConfig:
    doc = {}
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ArgumentError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise ArgumentError("config file must hold a JSON object")
    train = dict(doc.pop("train", {}))
    preset = doc.pop("preset", "desk")
    if preset not in ("desk", "paper"):
        raise ArgumentError(f"preset must be desk or paper, got {preset!r}")
    for flag, key in _TRAIN_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            train[key] = val
    bad = set(train) - {f.name for f in fields(ep.TrainConfig)}
    if bad:
        raise ArgumentError(f"unknown training config keys: {sorted(bad)}")
    make = ep.desk_config if preset == "desk" else ep.paper_config
    known = {f.name for f in fields(RunConfig)} - {"train", "preset"}
    unknown = set(doc) - known
    if unknown:
        raise ArgumentError(f"unknown config keys: {sorted(unknown)}")
    rc = RunConfig(train=make(**train), preset=preset, **doc)
    for key in ("data", "checkpoint", "setting", "K", "trials", "top_k", "classifier"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(rc, key, val)
    if getattr(args, "direct", False):
        rc.direct = True
    return rc


def echo_config(rc: RunConfig, out: Path, command: str) -> None:
    """Write the effective config next to the outputs, for provenance."""
    folder = out if out.suffix == "" else out.parent
    folder.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, **rc.to_dict()}
    (folder / f"{command}.config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _data_files(rc: RunConfig) -> Path:
    if not rc.data:
        raise ArgumentError("--data DIR is required")
    d = Path(rc.data)
    if not (d / "base.csv").exists():
        raise ArgumentError(f"{d}/base.csv not found (run gen-data first)")
    return d


def _load(d: Path, name: str, role: str):
    p = d / name
    return dk.load_features(p, role) if p.exists() else None


# -- commands ---------------------------------------------------------------

def cmd_gen_data(args, rc: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = rc.train.seed
    if args.kind == "spiral":
        base, seeds, held = dk.gen_spiral(dk.SpiralConfig(seed=seed, k=args.K or 4))
        files = {"base.csv": base, "seeds.csv": seeds, "heldout.csv": held}
    else:
        base, seeds, held, bheld = dk.gen_clusters(dk.ClusterConfig(seed=seed, k=args.K or 1))
        files = {"base.csv": base, "seeds.csv": seeds, "heldout.csv": held,
                 "base_heldout.csv": bheld}
    for name, data in files.items():
        dk.save_features(data, out / name)
    echo_config(rc, out, "gen-data")
    print(f"wrote {', '.join(files)} to {out}")
    return 0


def cmd_train(args, rc: RunConfig) -> int:
    d = _data_files(rc)
    base = dk.load_features(d / "base.csv", "base")
    novel = _load(d, "seeds.csv", "novel") if rc.direct else None
    if rc.direct and novel is None:
        raise ArgumentError(f"--direct needs {d}/seeds.csv")
    cfg = rc.train
    state = None
    if args.resume:
        bundle, saved_cfg, optim, episode = dk.load_checkpoint(args.resume)
        if saved_cfg is not None and saved_cfg.to_dict() != cfg.to_dict():
            log.warning("resume config differs from the checkpoint's; using the current one")
        prior = Path(args.resume).with_suffix(".log.csv")
        history = [r for r in ep.read_log(prior) if r[0] < episode] if prior.exists() else []
        state = ep.TrainState(bundle, optim or {"d": de.AdamState(), "g": de.AdamState()},
                              episode, history)
    state = ep.train(base, cfg, novelset=novel, state=state, progress_every=args.progress)
    out = Path(args.out)
    dk.save_checkpoint(state.bundle, cfg, out, optim=state.optim, episode=state.episode)
    ep.write_log(state.log, out.with_suffix(".log.csv"))
    echo_config(rc, out, "train")
    print(f"trained {cfg.variant} to episode {state.episode}; checkpoint {out}")
    return 0


def _bundle(rc: RunConfig):
    if not rc.checkpoint:
        return None
    bundle, _, _, _ = dk.load_checkpoint(rc.checkpoint)
    return bundle


def cmd_augment(args, rc: RunConfig) -> int:
    d = _data_files(rc)
    bundle = _bundle(rc)
    if bundle is None:
        raise ArgumentError("augment needs --checkpoint")
    base = dk.load_features(d / "base.csv", "base")
    shots = dk.load_features(d / "seeds.csv", "novel")
    ecfg = ae.EvalConfig(nbs=rc.train.nbs, nbs_k=rc.train.nbs_k, seed=rc.train.seed)
    aug = ae.augment_shots(bundle, base, shots, ecfg, np.random.default_rng([rc.train.seed, 0]))
    out = Path(args.out)
    dk.save_features(aug, out)
    dk.save_features(aug.subset(aug.synthetic), out.with_name(out.stem + "_synthetic.csv"))
    echo_config(rc, out, "augment")
    print(f"{int(aug.synthetic.sum())} synthetic + {int((~aug.synthetic).sum())} real rows -> {out}")
    return 0


def cmd_eval(args, rc: RunConfig) -> int:
    d = _data_files(rc)
    base = dk.load_features(d / "base.csv", "base")
    pool = dk.LabeledFeatureSet.concat([dk.load_features(d / "seeds.csv", "novel"),
                                        dk.load_features(d / "heldout.csv", "novel")])
    base_test = _load(d, "base_heldout.csv", "base")
    bundle = _bundle(rc)
    ecfg = ae.EvalConfig(classifier=rc.classifier, nbs=rc.train.nbs, nbs_k=rc.train.nbs_k,
                         augment=bundle is not None, seed=rc.train.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = ae.evaluate(rc.setting, bundle, base, pool, rc.K, rc.trials, rc.top_k, ecfg, base_test)
    out = Path(args.out)
    rep.save(out)
    echo_config(rc, out, "eval")
    print(f"{rc.setting} K={rc.K} top-{rc.top_k}: {rep.mean:.4f} +- {rep.std:.4f} over {rep.trials} trials")
    return 0


def cmd_diversity(args, rc: RunConfig) -> int:
    data = dk.load_features(args.input)
    per, mean = ae.diversity(data)
    doc = {"per_class": {str(k): v for k, v in per.items()}, "mean": mean}
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n")
        echo_config(rc, out, "diversity")
    print(text)
    return 0


def cmd_gradcheck(args, rc: RunConfig) -> int:
    errs = ex.loss_gradcheck(rc.train.seed)
    worst = 0.0
    for (variant, term), err in errs.items():
        print(f"{variant:6s} {term:8s} {err:.3e}")
        worst = max(worst, err)
    ok = worst < 1e-4
    print(f"max relative error {worst:.3e}: {'ok' if ok else 'FAIL'}")
    return 0 if ok else 1


def _project(x: np.ndarray, mean, comps) -> np.ndarray:
    return x if comps is None else (x - mean) @ comps


def cmd_export_viz(args, rc: RunConfig) -> int:
    """Point clouds for plotting: real base/novel, seeds and synthetic rows."""
    d = _data_files(rc)
    base = dk.load_features(d / "base.csv", "base")
    seeds = dk.load_features(d / "seeds.csv", "novel")
    held = _load(d, "heldout.csv", "novel")
    clouds = {"base": base, "seeds": seeds}
    if held is not None:
        clouds["heldout"] = held
    bundle = _bundle(rc)
    if bundle is not None:
        ecfg = ae.EvalConfig(nbs=rc.train.nbs, nbs_k=rc.train.nbs_k, seed=rc.train.seed)
        aug = ae.augment_shots(bundle, base, seeds, ecfg, np.random.default_rng([rc.train.seed, 0]))
        clouds["synthetic"] = aug.subset(aug.synthetic)
    mean = comps = None
    if base.dim > 2:
        mean, comps = linalg.top_principal_components(
            dk.LabeledFeatureSet.concat(list(clouds.values())).features, 2)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, data in clouds.items():
        pts = _project(data.features, mean, comps)
        dk.save_features(dk.LabeledFeatureSet(pts, data.labels), out / f"{name}_2d.csv")
    echo_config(rc, out, "export-viz")
    print(f"wrote {', '.join(clouds)} point clouds to {out}")
    return 0


# -- parser -----------------------------------------------------------------

class _Help(argparse.HelpFormatter):
    """Append the default unless the help text already states it."""

    def _get_help_string(self, action):
        text = action.help or ""
        if "default" in text or action.default in (None, argparse.SUPPRESS) or action.required:
            return text
        return f"{text} (default: %(default)s)"


def _common(p: argparse.ArgumentParser, out_required=True):
    p.add_argument("--config", default=None, help="JSON run config (default: none)")
    p.add_argument("--seed", type=int, default=None, help="master seed (default: config or 0)")
    if out_required:
        p.add_argument("--out", required=True, help="output path (required)")


def _model_flags(p):
    p.add_argument("--variant", choices=gs.VARIANTS, default=None,
                   help="GAN variant (default: config or ccov)")
    p.add_argument("--nbs", choices=("soft", "hard"), default=None,
                   help="neighborhood batch sampling (default: config or soft)")
    p.add_argument("--k", type=int, default=None, help="base classes kept by hard NBS (default: 10)")


def _data_flags(p, checkpoint=False):
    p.add_argument("--data", default=None, help="directory written by gen-data (default: config)")
    if checkpoint:
        p.add_argument("--checkpoint", default=None, help="trained model checkpoint (default: none)")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="covaug", description=__doc__,
                                     formatter_class=_Help)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = _Help

    p = sub.add_parser("gen-data", help="write a synthetic dataset", formatter_class=fmt)
    p.add_argument("kind", choices=("spiral", "clusters"), help="dataset family")
    p.add_argument("--K", type=int, default=None, help="seeds per novel class (default: spiral 4, clusters 1)")
    _common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a translation GAN", formatter_class=fmt)
    _common(p)
    _model_flags(p)
    _data_flags(p)
    p.add_argument("--episodes", type=int, default=None, help="episodes to run (default: config)")
    p.add_argument("--direct", action="store_true", help="train on seeds.csv instead of meta-training")
    p.add_argument("--resume", default=None, help="checkpoint to continue from (default: none)")
    p.add_argument("--progress", type=int, default=0, help="log every N episodes (0: off)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("augment", help="generate synthetic novel examples", formatter_class=fmt)
    _common(p)
    _model_flags(p)
    _data_flags(p, checkpoint=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("eval", help="LSL / GLSL evaluation", formatter_class=fmt)
    _common(p)
    _model_flags(p)
    _data_flags(p, checkpoint=True)
    p.add_argument("--setting", choices=("lsl", "glsl"), default=None, help="default: lsl")
    p.add_argument("--K", type=int, default=None, help="shots per novel class (default: 1)")
    p.add_argument("--trials", type=int, default=None, help="repeated shot draws (default: 5)")
    p.add_argument("--top-k", dest="top_k", type=int, default=None, help="default: 1")
    p.add_argument("--classifier", choices=("centroid", "linear"), default=None,
                   help="final classifier (default: centroid)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diversity", help="mean pairwise distance per class", formatter_class=fmt)
    _common(p, out_required=False)
    p.add_argument("--input", required=True, help="feature CSV (required)")
    p.add_argument("--out", default=None, help="JSON output (default: print only)")
    p.set_defaults(func=cmd_diversity)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss term",
                       formatter_class=fmt)
    _common(p, out_required=False)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-viz", help="2-d point clouds for plotting", formatter_class=fmt)
    _common(p)
    _data_flags(p, checkpoint=True)
    _model_flags(p)
    p.set_defaults(func=cmd_export_viz)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)    # exits 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        rc = build_config(args)
        return args.func(args, rc)
    except ArgumentError as exc:
        print(f"covaug {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"covaug {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
