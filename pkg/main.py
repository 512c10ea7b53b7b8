import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import pandas as pd
from pydantic import BaseModel, Field, ValidationError

from engine.errors import EdgeTransformerError, NonFiniteError
from logging_config import configure_logging
from models.checkpoint import load_checkpoint
from models.encoder import EncoderModel
from run_config import MANIFEST_SUFFIX, ConfigError, RunConfig, resolve_config
from services.ablation import compare_variants, mean_by_mode
from services.benchmark import bench_scaling
from services.evaluation import decode_sources, evaluate
from services.training import train
from services.verification import GRADCHECK_TOLERANCE, gradcheck_suite, selftest_suite, suite_passed
from tasks.datasets import DatasetSpec, generate_datasets, load_datasets, load_split

TOOL_VERSION = "0.1.0"
MANIFEST_FILE = "manifest.json"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_NUMERIC = 4

# command-line inputs recorded in the manifest and restored on replay
INPUT_ARGS = ("data", "checkpoint", "max_len")

logger = logging.getLogger(__name__)


class UsageError(EdgeTransformerError, ValueError):
    """Bad command line."""


class VerificationError(EdgeTransformerError, AssertionError):
    """A gradient or self-test suite reported a failure."""


class StaleInputError(EdgeTransformerError, ValueError):
    """A replayed input no longer matches the digest recorded in its manifest."""


class RunManifest(BaseModel):
    tool_version: str
    command: str
    seed: int
    config: Dict[str, Any]
    inputs: Dict[str, Any] = Field(default_factory=dict)
    input_digests: Dict[str, str] = Field(default_factory=dict)
    artifacts: Dict[str, str]


def content_digest(path: Path) -> str:
    """sha256 over a file, or over the relative names and bytes of every file under a directory."""
    digest = hashlib.sha256()
    if path.is_dir():
        for file in sorted(item for item in path.rglob("*") if item.is_file()):
            digest.update(file.relative_to(path).as_posix().encode("utf-8") + b"\0")
            digest.update(file.read_bytes())
    else:
        digest.update(path.read_bytes())
    return digest.hexdigest()


def recorded_inputs(args: argparse.Namespace) -> tuple[Dict[str, Any], Dict[str, str]]:
    inputs: Dict[str, Any] = {}
    digests: Dict[str, str] = {}
    for name in INPUT_ARGS:
        value = getattr(args, name, None)
        if value is None:
            continue
        if isinstance(value, Path):
            inputs[name] = str(value)
            if value.exists():
                digests[name] = content_digest(value)
        else:
            inputs[name] = value
    return inputs, digests


def replay_inputs(args: argparse.Namespace) -> None:
    """Fill input arguments not given on the command line from a ``--config`` manifest."""
    if args.config is None or args.config.suffix != MANIFEST_SUFFIX:
        return
    try:
        manifest = RunManifest.model_validate_json(args.config.read_text(encoding="utf-8"))
    except (OSError, ValidationError) as exc:
        raise ConfigError(f"{args.config}: not a replayable manifest: {exc}") from exc
    for name, value in manifest.inputs.items():
        if not hasattr(args, name) or getattr(args, name) is not None:
            continue
        setattr(args, name, Path(value) if isinstance(value, str) else value)
        logger.info("replaying --%s %s from %s", name.replace("_", "-"), value, args.config)
        expected = manifest.input_digests.get(name)
        if expected is not None and content_digest(Path(value)) != expected:
            raise StaleInputError(f"{value} changed since {args.config} was written")


def require_inputs(args: argparse.Namespace, *names: str) -> None:
    missing = [f"--{name.replace('_', '-')}" for name in names if getattr(args, name, None) is None]
    if missing:
        raise UsageError(f"{args.command} needs {' and '.join(missing)}")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="edge-transformer", description="Edge transformer experiments")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", type=Path, help="flat key = value config file or a manifest.json")
        sub.add_argument("--seed", type=int, help="overrides the config seed")
        sub.add_argument("--out", type=Path, help="output directory (default runs/<command>)")
        sub.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config key, e.g. --set model.d=32 (repeatable)",
        )
        sub.add_argument("--log-level", help="DEBUG, INFO, WARNING... (default from EDGE_TRANSFORMER_LOG_LEVEL)")
        return sub

    command("gen-data", "generate dataset splits under <out>/data")
    command("train", "train a model and keep the best checkpoint").add_argument(
        "--data", type=Path, help="directory of split files (default: generate in memory)"
    )
    evaluate_cmd = command("eval", "evaluate a checkpoint on dataset splits")
    evaluate_cmd.add_argument("--checkpoint", type=Path, help="required unless replayed from a manifest")
    evaluate_cmd.add_argument("--data", type=Path, help="split file or directory of splits")
    decode_cmd = command("decode", "greedy decoding of a file of sources")
    decode_cmd.add_argument("--checkpoint", type=Path, help="required unless replayed from a manifest")
    decode_cmd.add_argument("--data", type=Path, help="one source per line, space-separated tokens")
    decode_cmd.add_argument("--max-len", type=int, help="maximum emitted tokens (default max_tgt_len + 1)")
    command("ablate", "train every ablation.modes x ablation.seeds variant and compare held-out scores")
    command("gradcheck", "float64 finite-difference gradient suite")
    command("bench", "forward-time scaling table over bench.sizes")
    command("selftest", "oracle-equivalence and invariant suites")
    return parser


def planned_artifacts(command: str, out_dir: Path) -> dict[str, Path]:
    return {
        "gen-data": {"data": out_dir / "data"},
        "train": {"metrics": out_dir / "metrics.csv", "checkpoint": out_dir / "checkpoint.bin"},
        "eval": {"eval": out_dir / "eval.csv"},
        "decode": {"decoded": out_dir / "decoded.jsonl"},
        "ablate": {"ablation": out_dir / "ablation.csv", "runs": out_dir / "runs"},
        "gradcheck": {"gradcheck": out_dir / "gradcheck.csv"},
        "bench": {"bench": out_dir / "bench.csv"},
        "selftest": {"selftest": out_dir / "selftest.csv"},
    }[command]


def write_manifest(
    args: argparse.Namespace, config: RunConfig, artifacts: dict[str, Path]
) -> Path:
    """``manifest.json`` under ``--out``: config, input arguments with content digests, planned outputs."""
    args.out.mkdir(parents=True, exist_ok=True)
    inputs, digests = recorded_inputs(args)
    manifest = RunManifest(
        tool_version=TOOL_VERSION,
        command=args.command,
        seed=config.seed,
        config=config.flatten(),
        inputs=inputs,
        input_digests=digests,
        artifacts={name: str(path) for name, path in artifacts.items()},
    )
    path = args.out / MANIFEST_FILE
    path.write_text(json.dumps(manifest.model_dump(), indent=2) + "\n", encoding="utf-8")
    return path


def run_gen_data(args, config: RunConfig, artifacts: dict[str, Path]) -> None:
    spec = DatasetSpec(**config.data.model_dump(), seed=config.seed)
    paths = generate_datasets(spec, artifacts["data"])
    print(f"wrote {len(paths)} splits to {artifacts['data']}")


def run_train(args, config: RunConfig, artifacts: dict[str, Path]) -> None:
    datasets = load_datasets(args.data) if args.data else None
    result = train(config, args.out, datasets)
    print(f"best valid score {result.best_score:.4f} at epoch {result.best_epoch}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics: {result.metrics_path}")


def run_eval(args, config: RunConfig, artifacts: dict[str, Path]) -> None:
    require_inputs(args, "checkpoint", "data")
    model = load_checkpoint(args.checkpoint)
    if args.data.is_dir():
        datasets = load_datasets(args.data)
    else:
        dataset = load_split(args.data)
        datasets = {dataset.split: dataset}
    rows = []
    for split, dataset in datasets.items():
        result = evaluate(model, dataset, config.train.eval_batch_size)
        rows.append(
            {
                "split": split,
                "metric": result.metric,
                "value": result.value,
                "correct": result.correct,
                "total": result.total,
            }
        )
        print(f"{split}: {result.metric} = {result.value:.4f} ({result.correct}/{result.total})")
    pd.DataFrame(rows, columns=["split", "metric", "value", "correct", "total"]).to_csv(
        artifacts["eval"], index=False
    )


def read_sources(path: Path) -> List[List[int]]:
    sources = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            sources.append([int(token) for token in line.split()])
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: sources are whitespace-separated integers") from exc
    if not sources:
        raise UsageError(f"{path}: no sources to decode")
    return sources


def run_decode(args, config: RunConfig, artifacts: dict[str, Path]) -> None:
    require_inputs(args, "checkpoint", "data")
    model = load_checkpoint(args.checkpoint)
    if isinstance(model, EncoderModel):
        raise UsageError("decode needs a seq2seq checkpoint")
    sources = read_sources(args.data)
    max_len = args.max_len or model.config.max_tgt_len + 1
    outputs = decode_sources(model, sources, max_len, config.train.eval_batch_size)
    with artifacts["decoded"].open("w", encoding="utf-8", newline="\n") as handle:
        for src, (tokens, truncated) in zip(sources, outputs):
            handle.write(json.dumps({"src": src, "output": tokens, "truncated": truncated}) + "\n")
            print(" ".join(map(str, tokens)) + (" ..." if truncated else ""))


def run_ablate(args, config: RunConfig, artifacts: dict[str, Path]) -> None:
    table = compare_variants(config, artifacts["runs"])
    table.to_csv(artifacts["ablation"], index=False)
    for split in table["split"].unique():
        means = mean_by_mode(table, split)
        print(f"{split}: " + " ".join(f"{mode}={value:.4f}" for mode, value in means.items()))


def run_gradcheck(args, config: RunConfig, artifacts: dict[str, Path]) -> None:
    report = gradcheck_suite(config.seed)
    report.to_csv(artifacts["gradcheck"], index=False)
    worst = float(report["max_rel_error"].max())
    print(f"max relative error {worst:.3e} over {len(report)} cases")
    if not suite_passed(report):
        failed = report.loc[~report["passed"], "case"].tolist()
        raise VerificationError(f"gradient check above {GRADCHECK_TOLERANCE:g} for {failed}")


def run_bench(args, config: RunConfig, artifacts: dict[str, Path]) -> None:
    bench = config.bench
    report = bench_scaling(
        config.model, bench.sizes, bench.repeats, bench.warmup, bench.batch_size, config.seed, bench.fit_from
    )
    report.table.to_csv(artifacts["bench"], index=False)
    print(report.table.to_string(index=False))
    print(f"log-log slope {report.slope:.3f}")


def run_selftest(args, config: RunConfig, artifacts: dict[str, Path]) -> None:
    report = selftest_suite(config.seed)
    report.to_csv(artifacts["selftest"], index=False)
    print(report.to_string(index=False))
    if not suite_passed(report):
        raise VerificationError(f"self-test failures: {report.loc[~report['passed'], 'check'].tolist()}")


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig, dict], None]] = {
    "gen-data": run_gen_data,
    "train": run_train,
    "eval": run_eval,
    "decode": run_decode,
    "ablate": run_ablate,
    "gradcheck": run_gradcheck,
    "bench": run_bench,
    "selftest": run_selftest,
}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (UsageError, ConfigError)):
        return EXIT_USAGE
    if isinstance(exc, (NonFiniteError, FloatingPointError)):
        return EXIT_NUMERIC
    return EXIT_VALIDATION


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns the process exit status."""
    try:
        args = build_parser().parse_args(argv)
        try:
            configure_logging(args.log_level)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        config = resolve_config(args.config, args.overrides, args.seed)
        replay_inputs(args)
        args.out = args.out or Path("runs") / args.command
        artifacts = planned_artifacts(args.command, args.out)
        manifest = write_manifest(args, config, artifacts)
        logger.info("%s: manifest %s", args.command, manifest)
        COMMANDS[args.command](args, config, artifacts)
    except (EdgeTransformerError, ValidationError, OSError, FloatingPointError, ValueError) as exc:
        logger.debug("command failed: %s", exc, exc_info=True)
        code = exit_code_for(exc)
        message = " ".join(str(exc).split())
        print(f"error code={code} kind={type(exc).__name__} message={message}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(dispatch())
