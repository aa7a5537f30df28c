"""
This module defines the ExperimentRunner class, which drives one command
of the warped-cone lab from a validated RunConfig and writes its reports
through a ReportWriter. It also provides the command-line interface.

Exit codes: 0 when every checked invariant holds, 2 on a numerical
failure, 1 on a configuration error. An inadmissible radius, a non-free
action, an asymmetric kernel or non-commuting Laplacians met during a run
are failures of the named invariant, not configuration errors.
"""

import sys
import math
import logging
import argparse
import numpy as np
from typing import Any, Callable, Dict, List, Optional, Sequence
from src.actions import ActionSpec, FreenessError, catalog, max_free_radius
from src.config import COMMANDS, Config, RunConfig, load_run_config
from src.invariant import (
    NonCommutingError,
    joint_spectrum,
    w_unitary_residual,
)
from src.operators import KernelSymmetryError, assemble_bundle
from src.reports import ReportWriter, RunSummary
from src.spaces import (
    ModelSpace,
    SpaceKind,
    build_arithmetic_net,
    build_eps_net,
    haar_sample,
)
from src.spectra import (
    RESIDUAL_TOLERANCE,
    KERNEL_TOLERANCE,
    SpectrumConvergenceError,
    accumulation_scan,
    bottom_spectrum,
    gap_across_levels,
    level_net,
    sandwich_check,
    weyl_counting,
)
from src.warped import (
    AdmissibilityError,
    box_space_graph,
    build_warped_graph,
    cantor_level_graph,
    distortion,
)

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_CONFIG = 1
EXIT_FAIL = 2
AMENABLE = ("circle-rotation", "torus-translation", "odometer", "identity")
INVARIANT_ERRORS = (
    (AdmissibilityError, "admissible radius"),
    (FreenessError, "free action"),
    (KernelSymmetryError, "kernel symmetry"),
    (NonCommutingError, "commuting Laplacians"),
)


class ExperimentRunner:
    """
    Run a single command and write its reports.

    Each command returns a :class:`RunSummary`; its JSON form, with the
    configuration echo and the artifact version, is written last.
    """
    def __init__(self, config: RunConfig,
                 writer: Optional[ReportWriter] = None) -> None:
        """
        :param config: The validated run configuration.
        :param writer: Optional writer; defaults to one for
            ``config.output_dir``.
        """
        self.config = config
        self.writer = writer or ReportWriter(config.output_dir)
        self._commands: Dict[str, Callable[[], RunSummary]] = {
            "net": self._net,
            "graph": self._graph,
            "spectrum": self._spectrum,
            "sweep": self._sweep,
            "sandwich": self._sandwich,
            "weyl": self._weyl,
            "accumulate": self._accumulate,
            "invariant": self._invariant,
            "boxcompare": self._boxcompare,
        }

    def run(self) -> int:
        """
        Execute the configured command.

        :returns: The exit code.
        """
        command = self.config.command
        logger.info("Running command '%s'", command)
        try:
            summary = self._commands[command]()
        except SpectrumConvergenceError as e:
            summary = self._summary(False, {}, {
                "invariant": "eigensolver convergence",
                "worst": float(np.max(e.residuals))
                if len(e.residuals) else None,
                "message": str(e),
            })
        except tuple(cls for cls, _ in INVARIANT_ERRORS) as e:
            invariant = next(name for cls, name in INVARIANT_ERRORS
                             if isinstance(e, cls))
            logger.error("Invariant '%s' violated: %s", invariant, e)
            summary = self._summary(False, {}, {
                "invariant": invariant, "worst": None, "message": str(e),
            })
        self.writer.write_summary(summary)
        logger.info("Command '%s' finished: %s", command, summary.status)
        return EXIT_PASS if summary.passed else EXIT_FAIL

    def _summary(self, passed: bool, results: Dict[str, Any],
                 failure: Optional[Dict[str, Any]] = None) -> RunSummary:
        return RunSummary(self.config.command, "PASS" if passed else "FAIL",
                          self.config.echo(), results, failure or {})

    def _option(self, name: str, default: Any) -> Any:
        return self.config.options.get(name, default)

    def _space(self) -> ModelSpace:
        if self.config.space:
            return ModelSpace.parse(self.config.space)
        return self._action(self.config.levels[0]).space

    def _action(self, t: float) -> ActionSpec:
        params = dict(self.config.action_params)
        if self.config.action == "odometer" and "depth" not in params:
            params["depth"] = round(math.log2(t))
        return catalog(self.config.action, **params)

    def _radius(self, action: Optional[ActionSpec] = None) -> float:
        if self.config.r != "auto":
            return float(self.config.r)
        if action is None:
            return 1.0
        free = max_free_radius(action, seed=self.config.seed)
        return self.config.levels[0] * free

    def _net(self) -> RunSummary:
        cfg = self.config
        t = cfg.levels[0]
        space = self._space()
        action = self._action(t) if cfg.space is None else None
        kind = self._option("net_kind", "greedy")
        if action is not None:
            net = level_net(action, t, cfg.epsilon, cfg.seed, kind)
        else:
            net = build_arithmetic_net(
                space, t, max(2, round(t / cfg.epsilon))) \
                if kind == "arithmetic" else \
                build_eps_net(space, t, cfg.epsilon, cfg.seed)
        self.writer.write_text("net.json", net.to_json() + "\n")

        total = float(np.sum(net.weights))
        mass_error = abs(total - net.scaled_mass) / net.scaled_mass
        failure: Dict[str, Any] = {}
        separation = math.inf
        if net.kind != "full":
            rows, cols, dist = net.pairs_within(net.epsilon,
                                                include_self=False)
            if len(dist):
                k = int(np.argmin(dist))
                separation = float(dist[k])
                failure = {"invariant": "separation",
                           "worst": [int(rows[k]), int(cols[k]),
                                     separation]}
        probes = haar_sample(space, cfg.seed + 1, 10_000)
        _, reach = net.nearest(probes)
        covering = float(np.max(reach))
        if mass_error > 1e-9:
            failure = {"invariant": "weights sum to t^m", "worst": total}
        elif net.kind == "greedy" and covering >= 1.01 * net.epsilon:
            failure = {"invariant": "covering", "worst": covering}
        results = {"size": net.size, "kind": net.kind,
                   "total_weight": total, "covering_radius": covering,
                   "min_separation": separation}
        return self._summary(not failure, results, failure)

    def _graph(self) -> RunSummary:
        cfg = self.config
        t = cfg.levels[0]
        action = self._action(t)
        net = level_net(action, t, cfg.epsilon, cfg.seed,
                        self._option("net_kind", "auto"))
        graph = build_warped_graph(
            net, action, cutoff=self._option("cutoff", None),
            snap_mode=self._option("snap_mode", "snap"))
        header = {"t": t, "epsilon": net.epsilon, "size": net.size,
                  "action": action.name}
        self.writer.write_lines("edges.txt", header, graph.edge_list_lines())
        payload = graph.to_dict()
        payload["net"] = net.to_json()
        self.writer.write_json("graph.json", payload)

        failure: Dict[str, Any] = {}
        if len(graph.metric_edges):
            i = graph.metric_edges[:, 0].astype(int)
            j = graph.metric_edges[:, 1].astype(int)
            exact = t * net.space.distances(net.points[i], net.points[j])
            err = np.abs(graph.metric_edges[:, 2] - exact)
            if np.max(err) > 1e-9 * max(t, 1.0):
                k = int(np.argmax(err))
                failure = {"invariant": "metric edge weight t·d",
                           "worst": [int(i[k]), int(j[k]), float(err[k])]}
        results = {"size": net.size, "connected": graph.connected,
                   "components": graph.components,
                   "metric_edges": len(graph.metric_edges),
                   "generator_edges": len(graph.generator_edges),
                   "max_snap_error": float(np.max(graph.snap_errors)),
                   "admissible_r": graph.admissible_r}
        return self._summary(not failure, results, failure)

    def _spectrum(self) -> RunSummary:
        cfg = self.config
        which = self._option("operator", "coarse")
        k = int(self._option("k", 10))
        rows: List[Dict[str, Any]] = []
        results: Dict[str, Any] = {"operator": which, "levels": []}
        failure: Dict[str, Any] = {}
        radius: Optional[float] = None
        for t in cfg.levels:
            action = self._action(t)
            net = level_net(action, t, cfg.epsilon, cfg.seed,
                            self._option("net_kind", "auto"))
            graph = build_warped_graph(net, action)
            if radius is None:
                radius = self._radius(action)
            bundle = assemble_bundle(graph, radius,
                                     self._option("mode", "auto"))
            op = bundle.operator(which)
            if self._option("export_operator", False):
                self.writer.write_lines(f"operator_t{t:g}.txt",
                                        bundle.header(),
                                        op.coordinate_lines())
            report = bottom_spectrum(op, min(k, op.dim), t,
                                     {"action": action.name, "r": radius,
                                      "epsilon": cfg.epsilon,
                                      "seed": cfg.seed})
            rows += report.rows()
            norm = max(op.norm_bound(), 1.0)
            results["levels"].append({"t": t, "size": net.size,
                                      "gap": report.gap,
                                      "lowest": float(report.eigenvalues[0])})
            if not failure and float(report.eigenvalues[0]) < \
                    -KERNEL_TOLERANCE:
                failure = {"invariant": "positivity",
                           "worst": {"t": t,
                                     "eigenvalue": report.eigenvalues[0]}}
            if not failure and not report.kernel_ok:
                failure = {"invariant": "constants in the kernel",
                           "worst": {"t": t,
                                     "eigenvalue": report.eigenvalues[0]}}
            worst = float(np.max(report.residuals))
            if not failure and worst > RESIDUAL_TOLERANCE * norm:
                failure = {"invariant": "eigenpair residual",
                           "worst": {"t": t, "residual": worst}}
        self.writer.write_csv("spectrum.csv", rows,
                              ["level", "index", "eigenvalue", "residual"])
        results["r"] = radius
        return self._summary(not failure, results, failure)

    def _sweep(self) -> RunSummary:
        cfg = self.config
        r: Any = cfg.r
        if r == "auto":
            r = self._radius(self._action(cfg.levels[0]))
        report = gap_across_levels(
            cfg.action, cfg.levels, cfg.epsilon, r, cfg.seed,
            {k: v for k, v in cfg.action_params.items() if k != "depth"},
            self._option("mode", "auto"),
            self._option("net_kind", "auto"))
        rows = [{"t": lv.t, "size": lv.size, "lambda2": lv.lambda2,
                 "phi": lv.phi, "normalized": lv.normalized,
                 "action_gap": lv.action_gap} for lv in report.levels]
        self.writer.write_csv("sweep.csv", rows, list(rows[0]))
        expect = self._option(
            "expect", "decay" if cfg.action in AMENABLE else "gap")
        results = {"r": report.r, "min_normalized": report.min_normalized,
                   "ratio_last_first": report.ratio_last_first,
                   "expect": expect}
        failure: Dict[str, Any] = {}
        if expect == "decay":
            bound = float(self._option("max_ratio", 0.25))
            if not report.ratio_last_first < bound:
                failure = {"invariant": "gap decay across levels",
                           "worst": report.ratio_last_first}
        elif expect == "gap":
            bound = float(self._option("min_gap", 0.05))
            if not report.min_normalized >= bound:
                worst = min(report.levels, key=lambda lv: lv.normalized)
                failure = {"invariant": "uniform spectral gap",
                           "worst": {"t": worst.t,
                                     "normalized": worst.normalized}}
        return self._summary(not failure, results, failure)

    def _sandwich(self) -> RunSummary:
        cfg = self.config
        space = ModelSpace.parse(cfg.space or "circle")
        report = sandwich_check(
            space, cfg.levels, self._radius(),
            epsilon_target=float(self._option("target", 0.01)),
            trials=int(self._option("trials", 20)),
            cap=int(self._option("cap", 500)), seed=cfg.seed)
        self.writer.write_csv("sandwich.csv", report.rows,
                              ["inequality", "t", "k", "lhs", "rhs",
                               "margin"])
        results = {"C": report.C, "D": report.D, "R": report.R,
                   "t0": report.t0,
                   "violation_first": report.violation_first,
                   "violation_second": report.violation_second,
                   "trial_violation": report.trial_violation}
        failure = {} if report.passed else {
            "invariant": "sandwich inequalities", "worst": report.worst}
        return self._summary(report.passed, results, failure)

    def _weyl(self) -> RunSummary:
        cfg = self.config
        space = ModelSpace.parse(cfg.space or "circle")
        report = weyl_counting(space, float(self._option("rmax", 1e7)),
                               int(self._option("points", 64)))
        self.writer.write_csv("weyl.csv", report.rows(), ["R", "N", "fit"])
        default = 0.02 if space.kind == SpaceKind.CIRCLE else 0.05
        tolerance = float(self._option("tolerance", default))
        passed = report.relative_error <= tolerance
        results = {"fitted": report.fitted, "oracle": report.oracle,
                   "relative_error": report.relative_error}
        failure = {} if passed else {"invariant": "Weyl constant",
                                     "worst": report.relative_error}
        return self._summary(passed, results, failure)

    def _accumulate(self) -> RunSummary:
        cfg = self.config
        space = ModelSpace.parse(cfg.space or "circle")
        factor = float(self._option("factor", 2.0))
        report = accumulation_scan(space, cfg.levels, cfg.epsilon, factor)
        rows = [{"t": t, "count": c}
                for t, c in zip(report.levels, report.counts)]
        self.writer.write_csv("accumulation.csv", rows, ["t", "count"])
        oracle = 2 * math.pi / (1 - math.sqrt(1 / factor))
        results = {"threshold": report.threshold, "window": report.window,
                   "circle_oracle": oracle}
        passed = report.threshold is not None
        failure = {} if passed else {
            "invariant": "eigenvalue accumulation",
            "worst": {"t": report.levels[-1], "count": report.counts[-1]}}
        return self._summary(passed, results, failure)

    def _invariant(self) -> RunSummary:
        cfg = self.config
        t = cfg.levels[0]
        action = self._action(t)
        per_axis = int(self._option("per_axis", 256))
        flat = action.space.kind in (SpaceKind.CIRCLE, SpaceKind.FLAT_TORUS)
        if flat:
            net = build_arithmetic_net(action.space, t, per_axis)
        else:
            net = level_net(action, t, cfg.epsilon, cfg.seed)
        r = self._radius(action)
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
        trials = int(self._option("trials", 20))
        worst = None
        for _ in range(trials):
            f = rng.standard_normal(net.size)
            report = w_unitary_residual(net, r, f)
            if worst is None or report.residual > worst.residual:
                worst = report
        assert worst is not None
        results: Dict[str, Any] = {
            "section_residual": worst.section,
            "kernel_residual": worst.kernel,
            "isometry_residual": worst.isometry,
            "snap_error": worst.snap_error,
            "tolerance": worst.tolerance,
        }
        failure: Dict[str, Any] = {}
        if not worst.passed:
            failure = {"invariant": "W intertwining",
                       "worst": worst.residual}
        if action.name == "circle-rotation" and net.kind == "arithmetic":
            joint = joint_spectrum(action, net, r,
                                   bottom=int(self._option("bottom", 50)))
            self.writer.write_csv("joint.csv", joint.rows(),
                                  ["mode", "lambda1", "lambda2", "f_value"])
            results.update({"joint_mismatch": joint.mismatch,
                            "grid_margin": joint.grid_margin})
            if not failure and not joint.passed:
                failure = {"invariant": "joint spectrum",
                           "worst": {"mismatch": joint.mismatch,
                                     "grid_margin": joint.grid_margin}}
        return self._summary(not failure, results, failure)

    def _boxcompare(self) -> RunSummary:
        depths = [int(d) for d in self._option("depths", [3, 4, 5, 6, 7, 8])]
        rows = []
        failure: Dict[str, Any] = {}
        for depth in depths:
            action = catalog("odometer", depth=depth)
            warped = cantor_level_graph(depth, action)
            d = distortion(warped, box_space_graph(depth))
            rows.append({"depth": depth, "t": warped.t,
                         "L": d.L, "C": d.C})
            if not failure and (d.L > 2 or d.C > 2):
                failure = {"invariant": "uniform distortion",
                           "worst": rows[-1]}
        self.writer.write_csv("boxcompare.csv", rows,
                              ["depth", "t", "L", "C"])
        results = {"max_L": max(r["L"] for r in rows),
                   "max_C": max(r["C"] for r in rows)}
        return self._summary(not failure, results, failure)


class _Parser(argparse.ArgumentParser):
    """Argument parser reporting errors as ValueError (exit code 1)."""
    def error(self, message: str) -> Any:
        raise ValueError(message)


def _float_list(text: str) -> List[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _int_list(text: str) -> List[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _radius_arg(text: str) -> Any:
    return text if text == "auto" else float(text)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(description="Warped-cone numerical lab.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON or TOML run configuration.")
    parser.add_argument("--seed", type=int, help="Random seed.")
    parser.add_argument("--out", dest="output_dir",
                        help="Output directory for reports.")
    parser.add_argument("--action", help="Catalog action name.")
    parser.add_argument("--alpha", type=float, help="Circle rotation angle.")
    parser.add_argument("--depth", type=int, help="Odometer depth.")
    parser.add_argument("--m", type=int, help="Torus dimension.")
    parser.add_argument("--space", help="circle, torus:m, so3, cantor:d.")
    parser.add_argument("--levels", type=_float_list,
                        help="Comma-separated increasing levels t.")
    parser.add_argument("--epsilon", type=float, help="Net separation.")
    parser.add_argument("--r", type=_radius_arg, help="Radius or 'auto'.")
    parser.add_argument("--rmax", type=float, help="Weyl grid maximum.")
    parser.add_argument("--k", type=int, help="Number of eigenvalues.")
    parser.add_argument("--operator", choices=("coarse", "local", "group"))
    parser.add_argument("--mode", choices=("auto", "direct", "composed"))
    parser.add_argument("--net-kind", dest="net_kind",
                        choices=("auto", "greedy", "arithmetic"))
    parser.add_argument("--cutoff", type=float, help="Metric edge cutoff.")
    parser.add_argument("--snap-mode", dest="snap_mode",
                        choices=("snap", "exact-offnet"))
    parser.add_argument("--per-axis", dest="per_axis", type=int,
                        help="Lattice size of arithmetic nets.")
    parser.add_argument("--trials", type=int)
    parser.add_argument("--cap", type=int, help="Sandwich frequency cap.")
    parser.add_argument("--target", type=float, help="Sandwich ε target.")
    parser.add_argument("--factor", type=float, help="Window factor.")
    parser.add_argument("--depths", type=_int_list,
                        help="Comma-separated box-space depths.")
    parser.add_argument("--expect", choices=("decay", "gap", "none"))
    parser.add_argument("--export-operator", dest="export_operator",
                        action="store_const", const=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments, run the command and return its exit code.
    """
    logging.basicConfig(
        level=Config().log_level,
        format="%(asctime)s - %(levelname)s - %(message)s"
    )
    try:
        args = vars(build_parser().parse_args(argv))
        command = args.pop("command")
        path = args.pop("config")
        params = {key: args.pop(key) for key in ("alpha", "depth", "m")}
        config = load_run_config(command, path, args)
        config.action_params.update(
            {k: v for k, v in params.items() if v is not None})
        runner = ExperimentRunner(config)
        return runner.run()
    except (ValueError, OSError) as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
