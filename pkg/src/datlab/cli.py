"""Command-line entry point.

Subcommands:
    generate   write a JSONL corpus of task samples
    validate   oracle-check an existing corpus file
    train      train one model from a run config / flags
    eval       length-sweep a checkpoint, writing CSV + markdown + PNG
    matrix     run the full architecture x training-mode experiment grid

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, asdict
from pathlib import Path

from . import evaluation, tasks, training
from .checkpoint import checkpoint_hash, load_checkpoint, CheckpointError
from .models import ARCHS, DISPLAY_NAMES, GATED_ARCHS, Model, ModelSpec, build
from .rng import Rng, derive_seed
from .training import NumericalError, TrainPlan, plan_dat, plan_end_to_end

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3

# Architectures that get a "+ DAT" run in the combined-task matrix,
# in the standard report row order.
MATRIX_ROW_ORDER = ("transformer", "lstm", "lstm_o_attn", "attn_o_lstm",
                    "hybrid_block", "sandwich", "parallel_sum")
DAT_ARCHS = ("lstm_o_attn", "attn_o_lstm", "hybrid_block", "sandwich", "parallel_sum")


@dataclass
class RunConfig:
    """Everything needed to reproduce one training run.

    Serialized as JSON; a saved config file replays the run byte-for-byte
    in determinism mode.  ``model`` and ``plan`` hold field overrides for
    ModelSpec / TrainPlan on top of the preset.
    """

    arch: str = "hybrid_block"
    variant: str = "combined"
    preset: str = "end_to_end"  # end_to_end | dat
    scale: str = "desk"
    seed: int = 0
    out: str = "runs/run"
    determinism: bool = True
    model: dict = field(default_factory=dict)
    plan: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "RunConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")

    def build_spec(self) -> ModelSpec:
        return ModelSpec(arch=self.arch, **self.model)

    def build_plan(self) -> TrainPlan:
        overrides = dict(self.plan)
        if "phases" in overrides:
            phases = [training.Phase(**ph) for ph in overrides.pop("phases")]
            base = plan_end_to_end(self.scale, self.variant)
            plan = TrainPlan(phases=phases, epoch_samples=base.epoch_samples,
                             l_train=base.l_train, variant=self.variant)
        elif self.preset == "dat":
            plan = plan_dat(self.scale, self.variant)
        elif self.preset == "end_to_end":
            plan = plan_end_to_end(self.scale, self.variant)
        else:
            raise ValueError(f"unknown preset {self.preset!r}; expected end_to_end or dat")
        for key, value in overrides.items():
            if not hasattr(plan, key):
                raise ValueError(f"unknown plan override {key!r}")
            setattr(plan, key, value)
        return plan


def _limit_threads(determinism: bool):
    if not determinism:
        return None
    try:
        import threadpoolctl
        return threadpoolctl.threadpool_limits(limits=1)
    except ImportError:
        return None


def run_training(config: RunConfig, quiet: bool = False) -> tuple[Model, training.RunRecord]:
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.save(out_dir / "config.json")
    spec = config.build_spec()
    plan = config.build_plan()
    model = build(spec, Rng(derive_seed(config.seed, "init")))
    if config.scale == "paper" and not quiet:
        print("warning: paper scale trains for hundreds of epochs of 2^14 samples; "
              "expect a multi-day CPU run", file=sys.stderr)

    def log(stats):
        if not quiet:
            print(f"epoch {stats.epoch:4d} phase {stats.phase} lr {stats.lr:g} "
                  f"loss {stats.mean_loss:.4f} ({stats.seconds:.1f}s)", flush=True)

    limit = _limit_threads(config.determinism)
    try:
        record = training.train(model, plan, seed=config.seed, out_dir=out_dir, log=log)
    finally:
        if limit is not None:
            limit.unregister()
    try:
        from .plots import plot_training_curve
        plot_training_curve(record.epochs, out_dir / "loss.png",
                            title=f"{DISPLAY_NAMES[config.arch]} {config.variant} ({config.preset})")
    except Exception as exc:  # plotting must never kill a finished run
        print(f"warning: could not render loss curve: {exc}", file=sys.stderr)
    return model, record


def _load_model(ckpt_path) -> tuple[Model, str]:
    header, params = load_checkpoint(ckpt_path)
    if "spec" not in header:
        raise CheckpointError(f"{ckpt_path}: header carries no model spec")
    model = build(ModelSpec.from_dict(header["spec"]), Rng(0))
    model.load_state(params)
    return model, checkpoint_hash(ckpt_path)


def _write_report_files(reports, out_dir: Path, stem: str, title: str,
                        l_train: int | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.csv").write_text(evaluation.render_csv(reports), encoding="utf-8")
    (out_dir / f"{stem}.md").write_text(evaluation.render_markdown(reports), encoding="utf-8")
    from .plots import plot_length_curves
    plot_length_curves(reports, out_dir / f"{stem}.png", title=title, l_train=l_train)


# -- subcommands -------------------------------------------------------------

def cmd_generate(args) -> int:
    rng = Rng(derive_seed(args.seed, "corpus", args.n))
    tasks.write_corpus(args.out, args.variant, args.n, args.count, rng)
    print(f"wrote {args.count} {args.variant} samples (n={args.n}) to {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    count = tasks.validate_corpus(args.path)
    print(f"{args.path}: {count} samples, all oracle-consistent")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.config:
        config = RunConfig.load(args.config)
        for key in ("arch", "variant", "preset", "scale", "seed", "out"):
            value = getattr(args, key)
            if value is not None:
                setattr(config, key, value)
    else:
        config = RunConfig(
            arch=args.arch or "hybrid_block",
            variant=args.variant or "combined",
            preset=args.preset or "end_to_end",
            scale=args.scale or "desk",
            seed=args.seed if args.seed is not None else 0,
            out=args.out or "runs/run",
        )
    model, record = run_training(config, quiet=args.quiet)
    final = record.checkpoints["final"]
    print(f"done in {record.wall_time:.1f}s; final checkpoint {final} "
          f"(sha256 {checkpoint_hash(final)[:12]})")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, ckpt_hash = _load_model(args.checkpoint)
    grid = tuple(int(x) for x in args.grid.split(",")) if args.grid else evaluation.DEFAULT_GRID
    limit = _limit_threads(True)
    try:
        report = evaluation.evaluate(
            model, args.variant, lengths=grid, samples_per_length=args.samples,
            seed=args.seed, checkpoint_hash=ckpt_hash,
            label=DISPLAY_NAMES[model.spec.arch],
        )
    finally:
        if limit is not None:
            limit.unregister()
    out_dir = Path(args.out)
    _write_report_files(report, out_dir, "report",
                        title=f"{DISPLAY_NAMES[model.spec.arch]} / {args.variant}")
    print((out_dir / "report.md").read_text(encoding="utf-8"))
    return EXIT_OK


def matrix_cells(variant: str) -> list[tuple[str, bool]]:
    """(arch, dat) runs for one variant, in report row order."""
    cells = []
    for arch in MATRIX_ROW_ORDER:
        cells.append((arch, False))
        if variant == "combined" and arch in DAT_ARCHS:
            cells.append((arch, True))
    return cells


def cmd_matrix(args) -> int:
    variants = list(tasks.VARIANTS) if args.variant == "all" else [args.variant]
    root = Path(args.out)
    failures = []
    for variant in variants:
        reports = []
        for arch, dat in matrix_cells(variant):
            name = f"{arch}_dat" if dat else arch
            run_dir = root / variant / f"{name}_seed{args.seed}"
            config = RunConfig(arch=arch, variant=variant,
                               preset="dat" if dat else "end_to_end",
                               scale=args.scale, seed=args.seed, out=str(run_dir))
            label = DISPLAY_NAMES[arch] + (" (+ DAT)" if dat else "")
            try:
                if (run_dir / "final.ckpt").exists() and args.resume:
                    model, ckpt_hash = _load_model(run_dir / "final.ckpt")
                else:
                    model, _ = run_training(config, quiet=args.quiet)
                    ckpt_hash = checkpoint_hash(run_dir / "final.ckpt")
                report = evaluation.evaluate(
                    model, variant, lengths=_matrix_grid(args), seed=args.seed,
                    samples_per_length=args.samples, checkpoint_hash=ckpt_hash,
                    dat=dat, label=label)
                reports.append(report)
                (run_dir / "report.csv").write_text(evaluation.render_csv(report),
                                                    encoding="utf-8")
                print(f"[{variant}] {label}: " +
                      " ".join(f"{row.n}:{row.joint_acc:.2f}" for row in report.rows),
                      flush=True)
            except NumericalError as exc:
                failures.append((variant, label, str(exc)))
                print(f"[{variant}] {label} FAILED: {exc}", file=sys.stderr, flush=True)
        if reports:
            plan = plan_end_to_end(args.scale, variant)
            _write_report_files(reports, root, variant,
                                title=f"{variant} @ {args.scale} scale",
                                l_train=plan.l_train)
    if failures:
        print(f"{len(failures)} matrix cell(s) failed:", file=sys.stderr)
        for variant, label, msg in failures:
            print(f"  [{variant}] {label}: {msg}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _matrix_grid(args):
    if args.grid:
        return tuple(int(x) for x in args.grid.split(","))
    return evaluation.DEFAULT_GRID


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="datlab",
                                     description="sequence-model length-generalization lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a JSONL task corpus")
    p.add_argument("--variant", choices=tasks.VARIANTS, default="combined")
    p.add_argument("--n", type=int, default=10, help="key-value pairs per sample")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", help="oracle-check a corpus file")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--config", help="RunConfig JSON file (flags override it)")
    p.add_argument("--arch", choices=ARCHS)
    p.add_argument("--variant", choices=tasks.VARIANTS)
    p.add_argument("--preset", choices=("end_to_end", "dat"))
    p.add_argument("--scale", choices=tuple(training.SCALES))
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="length-sweep a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--variant", choices=tasks.VARIANTS, default="combined")
    p.add_argument("--grid", help="comma-separated lengths (default: the standard 12)")
    p.add_argument("--samples", type=int, default=evaluation.DEFAULT_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("matrix", help="run the full experiment grid")
    p.add_argument("--variant", choices=tasks.VARIANTS + ("all",), default="all")
    p.add_argument("--scale", choices=tuple(training.SCALES), default="desk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=evaluation.DEFAULT_SAMPLES)
    p.add_argument("--grid")
    p.add_argument("--out", default="runs/matrix")
    p.add_argument("--resume", action="store_true",
                   help="reuse finished cells found under --out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_matrix)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, CheckpointError) as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
