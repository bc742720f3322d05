"""Command-line entry points.

Every subcommand reads one run configuration, derives a short config
hash, and reads/writes its artifacts under ``<runs root>/<hash>-s<seed>``
so that runs are reproducible from (config, seed) alone.  Exit codes:
0 success, 2 configuration error, 3 data/artifact error, 4 numeric
failure during training.
"""

from __future__ import annotations

import functools
import sys
from pathlib import Path

import click
import numpy as np

from . import config as cfgmod
from .config import ConfigError, RunConfig
from .env import ContractViolation
from .geometry import (
    build_object_library, load_object_library, save_object_library,
)
from .graspdata import (
    GraspDataset, diversity_filter, load_dataset, save_dataset, split_dataset,
    synthesize_grasps,
)
from .hand import HandModel
from .residual import (
    AblationFlags, PpoConfig, ResidualPolicy, RewardConfig, train_residual,
)
from .scorefield import GfTrainConfig, ScoreModel, train_gf
from .trajgen import (
    load_pattern_library, make_pattern_library, save_pattern_library,
    split_pattern_library,
)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

MODES = {
    "full": AblationFlags(),
    "no_scale": AblationFlags(no_scale=True),
    "no_residual": AblationFlags(no_residual=True),
    "no_rl": AblationFlags(no_rl=True),
    "no_gf": AblationFlags(no_gf=True),
    "no_collision": AblationFlags(no_collision=True),
    "no_rl_no_collision": AblationFlags(no_rl=True, no_collision=True),
}


def parse_flags(spec: str) -> AblationFlags:
    if spec in MODES:
        return MODES[spec]
    kwargs = {}
    for part in filter(None, (p.strip() for p in spec.split(","))):
        if not hasattr(AblationFlags(), part):
            raise ConfigError(f"unknown ablation flag {part!r}")
        kwargs[part] = True
    return AblationFlags(**kwargs)


def guarded(fn):
    """Translate failures into the documented exit codes."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as e:
            click.echo(f"config error: {e}", err=True)
            sys.exit(EXIT_CONFIG)
        except FloatingPointError as e:
            click.echo(f"numeric failure: {e}", err=True)
            sys.exit(EXIT_NUMERIC)
        except (OSError, ValueError, ContractViolation) as e:
            click.echo(f"data error: {e}", err=True)
            sys.exit(EXIT_DATA)
    return wrapper


class Workspace:
    """Resolved config plus the run directory and artifact paths."""

    def __init__(self, cfg: RunConfig, runs_root: str, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.hash = cfg.hash()
        self.dir = Path(runs_root) / f"{self.hash}-s{seed}"
        self.hand = HandModel()

    def ensure_dir(self) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        cfgmod.save(self.cfg, self.dir / "config.txt")
        return self.dir

    def path(self, name: str) -> Path:
        return self.dir / name

    def need(self, name: str, hint: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise FileNotFoundError(f"missing artifact {p}; run `{hint}` first")
        return p

    # -- artifact loaders --------------------------------------------------------

    def objects(self) -> dict:
        objs = load_object_library(self.need("objects.lib", "synth-data"))
        return {o.id: o for o in objs}

    def dataset(self) -> GraspDataset:
        return load_dataset(self.need("dataset.txt", "synth-data"), self.hand)

    def patterns(self):
        """Returns (train patterns, test patterns)."""
        pats, n_train = load_pattern_library(
            self.need("patterns.txt", "gen-patterns"))
        return pats[:n_train], pats[n_train:]

    def gf(self) -> ScoreModel:
        return ScoreModel.load(self.need("gf.ckpt", "train-gf"))

    def policy(self, mode: str):
        return ResidualPolicy.load(
            self.need(f"policy-{mode}.ckpt", f"train-rl --flags {mode}"))


pass_ws = click.make_pass_decorator(Workspace)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Run configuration file (defaults used when omitted).")
@click.option("--runs", envvar="GRASPFIELD_RUNS", default="runs",
              show_default=True, help="Root directory for run artifacts.")
@click.option("--seed", default=0, show_default=True)
@click.pass_context
@guarded
def main(ctx, config_path, runs, seed):
    """Planar human-assisted grasping: data, training, evaluation, serving."""
    cfg = cfgmod.load(config_path) if config_path else RunConfig()
    ctx.obj = Workspace(cfg, runs, seed)


def _suite_objects(cfg: RunConfig) -> list:
    lib = build_object_library()
    if cfg.objects.suite.strip() == "all":
        objs = lib
    else:
        wanted = [s.strip() for s in cfg.objects.suite.split(",") if s.strip()]
        by_id = {o.id: o for o in lib}
        missing = [w for w in wanted if w not in by_id]
        if missing:
            raise ConfigError(f"unknown object ids: {', '.join(missing)}")
        objs = [by_id[w] for w in wanted]
    return [o.rest_on_table(x=cfg.objects.x) for o in objs]


@main.command("synth-data")
@pass_ws
@guarded
def synth_data(ws: Workspace):
    """Synthesize verified grasp examples and split them by object."""
    cfg = ws.cfg
    ws.ensure_dir()
    objs = _suite_objects(cfg)
    rng = np.random.default_rng(ws.seed)
    examples = []
    for o in objs:
        ex = synthesize_grasps(o, cfg.gf.n_examples + 2, rng, hand=ws.hand,
                               mu=cfg.hand.mu, budget=cfg.gf.synth_budget)
        ex = diversity_filter(ex, cfg.gf.n_examples)
        examples.extend(ex)
        click.echo(f"{o.id}: {len(ex)} grasps")
    categories = {o.id: o.category for o in objs}
    split_rng = np.random.default_rng(cfg.objects.split_seed)
    dataset = split_dataset(examples, categories, cfg.objects.train_frac,
                            cfg.objects.n_unseen_categories, split_rng)
    save_object_library(objs, ws.path("objects.lib"))
    save_dataset(dataset, ws.path("dataset.txt"), ws.hand)
    click.echo(f"dataset: {len(examples)} examples -> {ws.path('dataset.txt')}")


@main.command("gen-patterns")
@pass_ws
@guarded
def gen_patterns(ws: Workspace):
    """Generate the wrist trajectory pattern library."""
    cfg = ws.cfg.trajgen
    ws.ensure_dir()
    rng = np.random.default_rng(cfg.pattern_seed)
    patterns = make_pattern_library(cfg.n_patterns, rng)
    train, test = split_pattern_library(patterns, cfg.n_test_patterns)
    save_pattern_library(ws.path("patterns.txt"), patterns, len(train))
    click.echo(f"{len(train)} train / {len(test)} test patterns "
               f"-> {ws.path('patterns.txt')}")


@main.command("train-gf")
@pass_ws
@guarded
def train_gf_cmd(ws: Workspace):
    """Train the grasping score field on the train split."""
    cfg = ws.cfg.gf
    ws.ensure_dir()
    dataset = ws.dataset()
    objects = ws.objects()
    train_examples = dataset.by_tag("train")
    if not train_examples:
        raise ValueError("dataset has no train examples")
    np.seterr(all="raise", under="ignore")
    gcfg = GfTrainConfig(n_updates=cfg.n_updates, lr=cfg.lr,
                         batch_divisor=cfg.batch_divisor, feat=cfg.feat,
                         hidden=cfg.hidden, seed=ws.seed)
    model, trace = train_gf(train_examples, objects, hand=ws.hand, config=gcfg)
    model.save(ws.path("gf.ckpt"), extra={"config": ws.hash})
    np.savetxt(ws.path("gf_loss.txt"), trace)
    click.echo(f"loss {trace[0]:.4f} -> {trace[-1]:.4f}; "
               f"saved {ws.path('gf.ckpt')}")


@main.command("train-rl")
@click.option("--flags", "flags_spec", default="full", show_default=True,
              help="Ablation mode name or comma-separated flag list.")
@click.option("--iterations", default=None, type=int,
              help="Override [rl] n_iterations.")
@pass_ws
@guarded
def train_rl_cmd(ws: Workspace, flags_spec, iterations):
    """Train the residual policy on top of the frozen score field."""
    cfg = ws.cfg.rl
    ws.ensure_dir()
    flags = parse_flags(flags_spec)
    if flags.no_rl:
        raise ConfigError("no_rl mode has no policy to train")
    dataset = ws.dataset()
    objects = ws.objects()
    patterns, _ = ws.patterns()
    gf = None if flags.no_gf else ws.gf()
    train_examples = dataset.by_tag("train")
    ppo = PpoConfig(gamma=cfg.gamma, clip=cfg.clip, gae_decay=cfg.gae_decay,
                    epochs=cfg.epochs, minibatch=cfg.minibatch,
                    n_envs=cfg.n_envs, lr=cfg.lr,
                    entropy_coeff=cfg.entropy_coeff,
                    value_coeff=cfg.value_coeff)
    reward = RewardConfig(lambda_s=cfg.lambda_s, lambda_a=cfg.lambda_a,
                          lambda_h=cfg.lambda_h)
    np.seterr(all="raise", under="ignore")
    name = flags_spec if flags_spec in MODES else "custom"
    policy, curve = train_residual(
        train_examples, objects, patterns, gf, flags,
        iterations if iterations is not None else cfg.n_iterations,
        seed=ws.seed, ppo_cfg=ppo, reward_cfg=reward, hand=ws.hand,
        curve_path=ws.path(f"curve-{name}.txt"), log=click.echo)
    policy.save(ws.path(f"policy-{name}.ckpt"), flags,
                extra={"config": ws.hash})
    from .evaluate import render_training_curve
    render_training_curve(curve, ws.path(f"curve-{name}.png"))
    click.echo(f"saved {ws.path(f'policy-{name}.ckpt')}")


def _parse_noise(spec):
    from .evaluate import NoiseModel
    if spec is None:
        return None
    try:
        deg, cm = (float(v) for v in spec.split(","))
        return NoiseModel(deg, cm)
    except ValueError:
        raise ConfigError(f"--noise wants 'deg,cm', got {spec!r}") from None


def _bundle(ws: Workspace, mode: str):
    from .evaluate import PolicyBundle
    flags = parse_flags(mode)
    gf = None if flags.no_gf else ws.gf()
    policy = None
    if not flags.no_rl:
        policy, _ = ws.policy(mode if mode in MODES else "custom")
    return PolicyBundle(gf, policy, flags)


@main.command("eval")
@click.option("--flags", "flags_spec", default="full", show_default=True)
@click.option("--split", default=None,
              help="Limit to one split tag (default: all splits).")
@click.option("--noise", default=None, help="Wrist observation noise 'deg,cm'.")
@click.option("--out", default=None, help="Report filename override.")
@pass_ws
@guarded
def eval_cmd(ws: Workspace, flags_spec, split, noise, out):
    """Evaluate a policy bundle over the dataset splits."""
    from .evaluate import build_report, evaluate_split, save_report

    cfg = ws.cfg.eval
    nm = _parse_noise(noise) or (_parse_noise(
        f"{cfg.noise_deg},{cfg.noise_cm}")
        if (cfg.noise_deg or cfg.noise_cm) else None)
    ws.ensure_dir()
    dataset = ws.dataset()
    objects = ws.objects()
    patterns, _ = ws.patterns()
    bundle = _bundle(ws, flags_spec)
    seeds = tuple(range(cfg.n_seeds))
    tags = [split] if split else ["train", "seen-cat-unseen-inst", "unseen-cat"]
    records = {}
    for tag in tags:
        exs = dataset.by_tag(tag)
        if not exs:
            continue
        objs = {e.object_id: objects[e.object_id] for e in exs}
        records[tag] = evaluate_split(bundle, exs, objs, patterns, seeds,
                                      cfg.repeats, nm, ws.hand)
        succ = np.mean([r.success for r in records[tag]]) if records[tag] else 0
        click.echo(f"[{tag}] {len(records[tag])} episodes, success {succ:.3f}")
    report = build_report(records, ws.hash)
    name = out or f"report-{flags_spec}{'-noise' if nm else ''}.txt"
    save_report(report, ws.path(name))
    click.echo(f"saved {ws.path(name)}")


@main.command("ablate")
@click.option("--split", default="train", show_default=True)
@pass_ws
@guarded
def ablate_cmd(ws: Workspace, split):
    """Compare action-composition modes in one table."""
    from .evaluate import evaluate_split

    cfg = ws.cfg.eval
    ws.ensure_dir()
    dataset = ws.dataset()
    objects = ws.objects()
    patterns, _ = ws.patterns()
    exs = dataset.by_tag(split)
    if not exs:
        raise ValueError(f"split {split!r} is empty")
    objs = {e.object_id: objects[e.object_id] for e in exs}
    seeds = tuple(range(cfg.n_seeds))
    rows = []
    for mode in ("full", "no_scale", "no_residual", "no_rl", "no_gf"):
        bundle = _bundle(ws, mode)
        recs = evaluate_split(bundle, exs, objs, patterns, seeds, cfg.repeats,
                              None, ws.hand)
        succ = float(np.mean([r.success for r in recs]))
        post = float(np.mean([r.posture for r in recs]))
        rows.append((mode, succ, post))
        click.echo(f"{mode:12s} success {succ:.3f} posture {post:.3f}")
    with open(ws.path(f"ablation-{split}.txt"), "w") as f:
        f.write(f"graspfield-ablation v1 config={ws.hash} split={split}\n")
        f.write("mode success posture\n")
        for mode, succ, post in rows:
            f.write(f"{mode} {succ:.6f} {post:.6f}\n")
    click.echo(f"saved {ws.path(f'ablation-{split}.txt')}")


@main.command("demo")
@click.option("--episodes", default=1, show_default=True)
@click.option("--flags", "flags_spec", default="no_rl", show_default=True)
@pass_ws
@guarded
def demo_cmd(ws: Workspace, episodes, flags_spec):
    """Roll a few episodes and write full state traces."""
    from .evaluate import run_episode, save_trace, select_targets
    from .trajgen import sample_trajectory

    ws.ensure_dir()
    dataset = ws.dataset()
    objects = ws.objects()
    patterns, _ = ws.patterns()
    bundle = _bundle(ws, flags_spec)
    rng = np.random.default_rng(ws.seed)
    (ws.dir / "traces").mkdir(exist_ok=True)
    for k in range(episodes):
        ex = dataset.examples[rng.integers(len(dataset.examples))]
        traj = sample_trajectory(ex, patterns, rng)
        outcome, trace = run_episode(bundle, objects[ex.object_id], ex, traj,
                                     ws.hand)
        path = ws.dir / "traces" / f"demo-{k:03d}.trace"
        save_trace(trace, path)
        click.echo(f"episode {k}: {ex.object_id} "
                   f"success={outcome.success} -> {path}")


@main.command("serve")
@click.option("--flags", "flags_spec", default=None,
              help="Unused placeholder; flags come from load_session.")
@pass_ws
@guarded
def serve_cmd(ws: Workspace, flags_spec):
    """Run the interactive session server (single client, loops forever)."""
    from .server import SessionServer, serve_forever

    scfg = ws.cfg.server
    objects = examples = None
    if ws.path("objects.lib").exists():
        objects = ws.objects()
    if ws.path("dataset.txt").exists():
        examples = ws.dataset().examples
    server = SessionServer(scfg.host, scfg.port, scfg.tick_hz, ws.hand,
                           objects, examples)
    click.echo(f"listening on {server.address[0]}:{server.address[1]}")
    serve_forever(server)


if __name__ == "__main__":
    main()
