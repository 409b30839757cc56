"""Command-line front end.

Every subcommand reads an experiment spec (a JSON file given with
``--config``) and lets individual flags override its fields. Exit codes:
0 success, 1 usage or spec error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import FORMATS, file_checksum, load_interactions, split_loo_folds, write_folds
from .errors import GraphRecError, NumericalError, SpecError
from .evaluation import MODELS, ExperimentConfig, reconstruction_stats, run_sweep, write_summary_csv
from .graph import METRICS, laplacian, similarity_graph, write_edge_list
from .recommend import top_n, write_recommendations
from .solver import METHODS, ModelConfig, load_reconstruction, save_reconstruction, solve

logger = logging.getLogger("graphrec")


@dataclass
class ExperimentSpec:
    """Declarative description of an experiment, stored as JSON on disk."""

    data: str = ""
    format: str = "triples_tsv"
    scale: str = "auto"
    dataset_name: str = ""
    model: str = "graph"
    metric_users: str = "cosine"
    metric_items: str = "cosine"
    k_users: int | None = None
    k_items: int | None = None
    normalize: bool = False
    itemknn_k: int = 50
    alphas: list[float] = field(default_factory=lambda: [1e-4])
    betas: list[float] = field(default_factory=lambda: [1e-5])
    method: str = "auto"
    cg_tol: float = 1e-10
    cg_max_iter: int = 1000
    n_folds: int = 5
    seed: int = 0
    ns: list[int] = field(default_factory=lambda: [10])
    recon_stats: bool = False
    output_dir: str = "out"
    jobs: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown spec fields: {sorted(unknown)}")
        d = dict(d)
        for name in ("alphas", "betas", "ns"):
            if name in d and not isinstance(d[name], list):
                d[name] = [d[name]]
        spec = cls(**d)
        spec.alphas = [float(a) for a in spec.alphas]
        spec.betas = [float(b) for b in spec.betas]
        spec.ns = [int(n) for n in spec.ns]
        return spec

    @classmethod
    def load(cls, path: str | Path) -> ExperimentSpec:
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise SpecError(f"cannot read spec {path}: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def validate(self, need_data: bool = True) -> None:
        if need_data:
            if not self.data:
                raise SpecError("no dataset given (--data)")
            if not Path(self.data).is_file():
                raise SpecError(f"input file not found: {self.data}")
        if self.format not in FORMATS:
            raise SpecError(f"format must be one of {sorted(FORMATS)}")
        if not self.alphas or not self.betas or not self.ns:
            raise SpecError("alphas, betas and ns must be nonempty")
        for cfg in self.configs():
            cfg.model_config()

    def configs(self) -> list[ExperimentConfig]:
        base = ExperimentConfig(
            model=self.model,
            metric_users=self.metric_users,
            metric_items=self.metric_items,
            k_users=self.k_users,
            k_items=self.k_items,
            normalize=self.normalize,
            method=self.method,
            cg_tol=self.cg_tol,
            cg_max_iter=self.cg_max_iter,
            itemknn_k=self.itemknn_k,
            n_folds=self.n_folds,
            seed=self.seed,
            ns=tuple(self.ns),
            recon_stats=self.recon_stats,
            jobs=self.jobs,
        )
        return [replace(base, alpha=a, beta=b) for a in self.alphas for b in self.betas]


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _spec_flags(p: argparse.ArgumentParser) -> None:
    """Flags mirroring ExperimentSpec; all default to None (= keep spec value)."""
    g = p.add_argument_group("experiment spec")
    g.add_argument("--config", help="JSON experiment spec")
    g.add_argument("--data", help="interaction triple file")
    g.add_argument("--format", choices=sorted(FORMATS))
    g.add_argument("--scale", help="implicit | explicit | explicit:min:max[:step] | auto")
    g.add_argument("--dataset-name")
    g.add_argument("--model", choices=MODELS)
    g.add_argument("--metric", choices=METRICS, help="similarity metric for both graphs")
    g.add_argument("--metric-users", choices=METRICS)
    g.add_argument("--metric-items", choices=METRICS)
    g.add_argument("--k", type=int, help="kNN size for both graphs")
    g.add_argument("--k-users", type=int)
    g.add_argument("--k-items", type=int)
    g.add_argument("--normalize", action="store_true", default=None)
    g.add_argument("--itemknn-k", type=int)
    g.add_argument("--alpha", "--alphas", dest="alphas", type=_floats, help="item graph weight(s)")
    g.add_argument("--beta", "--betas", dest="betas", type=_floats, help="user graph weight(s)")
    g.add_argument("--method", choices=METHODS)
    g.add_argument("--cg-tol", type=float)
    g.add_argument("--cg-max-iter", type=int)
    g.add_argument("--n-folds", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--N", "--ns", dest="ns", type=_ints, help="list length(s)")
    g.add_argument("--recon-stats", action="store_true", default=None)
    g.add_argument("--out", dest="output_dir", help="output directory")
    g.add_argument("--jobs", type=int)
    p.add_argument("--dry-run", action="store_true", help="validate the spec and exit")
    p.add_argument("-v", "--verbose", action="count", default=0)


def resolve_spec(args: argparse.Namespace) -> ExperimentSpec:
    spec = ExperimentSpec.load(args.config) if args.config else ExperimentSpec()
    over = {}
    for f in fields(ExperimentSpec):
        v = getattr(args, f.name, None)
        if v is not None:
            over[f.name] = v
    if getattr(args, "metric", None):
        over.setdefault("metric_users", args.metric)
        over.setdefault("metric_items", args.metric)
    if getattr(args, "k", None) is not None:
        over.setdefault("k_users", args.k)
        over.setdefault("k_items", args.k)
    return replace(spec, **over)


def _load(spec: ExperimentSpec):
    return load_interactions(spec.data, spec.format, None if spec.scale == "auto" else spec.scale)


def _out(spec: ExperimentSpec) -> Path:
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec.dump(out / "spec.resolved.json")
    return out


def _single(values, name):
    if len(values) != 1:
        raise SpecError(f"this command takes a single {name}; use `sweep` for grids")
    return values[0]


def cmd_stats(spec: ExperimentSpec, args) -> int:
    X = _load(spec)
    stats = X.stats()
    stats["checksum"] = X.checksum()
    print(json.dumps(stats, indent=2, sort_keys=True))
    return 0


def cmd_split(spec: ExperimentSpec, args) -> int:
    X = _load(spec)
    folds = split_loo_folds(X, spec.n_folds, spec.seed)
    out = _out(spec)
    written = write_folds(folds, out, spec.seed, file_checksum(spec.data))
    for f in folds:
        logger.info("fold %d: %d train, %d test", f.fold_index, f.train.nnz, f.n_test)
    print(f"wrote {len(written)} files to {out}")
    return 0


def cmd_graphs(spec: ExperimentSpec, args) -> int:
    X = _load(spec)
    out = _out(spec)
    sides = ("users", "items") if args.side == "both" else (args.side,)
    for side in sides:
        metric = spec.metric_users if side == "users" else spec.metric_items
        k = spec.k_users if side == "users" else spec.k_items
        S = similarity_graph(X, side, metric, k, spec.normalize)
        write_edge_list(S, out / f"graph.{side}.tsv")
        if args.spectrum:
            (out / f"laplacian.{side}.json").write_text(laplacian(S).spectrum_json() + "\n", encoding="utf-8")
        print(f"{side}: {S.n_nodes} nodes, {S.n_edges} edges ({metric}, k={k})")
    return 0


def _solve(spec: ExperimentSpec, X):
    alpha = _single(spec.alphas, "alpha")
    beta = _single(spec.betas, "beta")
    L_r = L_c = None
    if beta > 0:
        L_r = laplacian(similarity_graph(X, "users", spec.metric_users, spec.k_users, spec.normalize))
    if alpha > 0:
        L_c = laplacian(similarity_graph(X, "items", spec.metric_items, spec.k_items, spec.normalize))
    cfg = ModelConfig(alpha, beta, spec.method, spec.cg_tol, spec.cg_max_iter)
    return solve(X, L_r, L_c, cfg)


def cmd_solve(spec: ExperimentSpec, args) -> int:
    X = _load(spec)
    out = _out(spec)
    rec = _solve(spec, X)
    extra = {"spec": spec.to_dict(), "data_checksum": X.checksum()}
    if spec.recon_stats:
        extra["reconstruction"] = asdict(reconstruction_stats(X, rec))
    save_reconstruction(rec, out / "Y.bin", extra)
    if not rec.converged:
        raise NumericalError(f"solver did not converge (residual {rec.residual_fro:.3e})")
    print(
        f"solved {X.n_users}x{X.n_items} with {rec.method_used}: "
        f"residual={rec.residual_fro:.3e} objective={rec.objective:.6g} ({rec.solve_seconds:.2f}s)"
    )
    if spec.recon_stats:
        print(json.dumps(extra["reconstruction"], indent=2, sort_keys=True))
    return 0


def cmd_recommend(spec: ExperimentSpec, args) -> int:
    X = _load(spec)
    out = _out(spec)
    rec = load_reconstruction(args.matrix) if args.matrix else _solve(spec, X)
    if rec.shape != X.shape:
        raise SpecError(f"model shape {rec.shape} does not match data shape {X.shape}")
    N = max(spec.ns)
    lists = [top_n(rec, X, u, N) for u in range(X.n_users)]
    write_recommendations(lists, X, out / "recommendations.tsv")
    print(f"wrote top-{N} lists for {X.n_users} users to {out / 'recommendations.tsv'}")
    return 0


def _report_payload(spec, reports) -> str:
    payload = {"spec": spec.to_dict(), "reports": [r.to_dict() for r in reports]}
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def cmd_evaluate(spec: ExperimentSpec, args) -> int:
    _single(spec.alphas, "alpha")
    _single(spec.betas, "beta")
    X = _load(spec)
    out = _out(spec)
    (report,) = run_sweep(X, spec.configs())
    (out / "report.json").write_text(_report_payload(spec, [report]), encoding="utf-8")
    write_summary_csv([report], out / "summary.csv", spec.dataset_name)
    for n in report.ns:
        print(f"HR@{n}={report.mean_hr[n]:.4f} ARHR@{n}={report.mean_arhr[n]:.4f}")
    return 0


def cmd_sweep(spec: ExperimentSpec, args) -> int:
    X = _load(spec)
    out = _out(spec)
    reports = run_sweep(X, spec.configs())
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "beta", "N", "HR", "ARHR"])
        for r in reports:
            for n in r.ns:
                w.writerow([repr(r.config.alpha), repr(r.config.beta), n, repr(r.mean_hr[n]), repr(r.mean_arhr[n])])
    write_summary_csv(reports, out / "summary.csv", spec.dataset_name)
    (out / "reports.json").write_text(_report_payload(spec, reports), encoding="utf-8")
    best = max(reports, key=lambda r: r.mean_hr[min(r.ns)])
    n0 = min(best.ns)
    print(f"{len(reports)} grid points; best HR@{n0}={best.mean_hr[n0]:.4f} at alpha={best.config.alpha:g}, beta={best.config.beta:g}")
    return 0


COMMANDS = {
    "stats": (cmd_stats, "print dataset statistics"),
    "split": (cmd_split, "write leave-one-out folds"),
    "graphs": (cmd_graphs, "build similarity graphs and write edge lists"),
    "solve": (cmd_solve, "solve for the reconstructed matrix"),
    "recommend": (cmd_recommend, "write top-N recommendations"),
    "evaluate": (cmd_evaluate, "cross-validated HR/ARHR for one configuration"),
    "sweep": (cmd_sweep, "HR/ARHR over an alpha x beta grid"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="graphrec", description="Graph-regularized top-N recommendation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        _spec_flags(p)
        if name == "graphs":
            p.add_argument("--side", choices=("users", "items", "both"), default="both")
            p.add_argument("--spectrum", action="store_true", help="also write Laplacian spectra as JSON")
        if name == "recommend":
            p.add_argument("--matrix", metavar="Y.bin", help="saved reconstruction; solved afresh when omitted")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    fn, _ = COMMANDS[args.command]
    try:
        spec = resolve_spec(args)
        spec.validate()
        if args.dry_run:
            print(json.dumps(spec.to_dict(), indent=2, sort_keys=True))
            return 0
        return fn(spec, args)
    except GraphRecError as exc:
        print(f"graphrec: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (MemoryError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"graphrec: numerical failure: {exc}", file=sys.stderr)
        return NumericalError.exit_code


if __name__ == "__main__":
    sys.exit(main())
