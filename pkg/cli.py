"""CLI Handler for the coverage planner - Command pattern for user interaction."""

import argparse
import csv
import logging
from pathlib import Path
from typing import Callable, Dict, List

import numpy as np
from scipy.stats import chi2

from errors import (GeometryError, InfeasiblePlanError, MissionFileError, PlanFileError,
                    PlannerError, ProgramError, ValidationError)
from geometry import Facet, write_triangle_soup
from mission import FIXTURES, MissionFile, build_spec, mission_overrides, solver_config, write_fixture
from plan_file import PlanRecord, first_non_psd_step
from program import audit_violations, transcribe
from provenance import changed_sections
from solver import extract_plan, solve_mission, with_overrides
from validation import sample_posterior, summary_lines, validate_plan

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_INPUT = 0, 1, 2
ELLIPSOID_CONFIDENCE = 0.999
EXPORT_KINDS = ('trajectory', 'ellipsoids', 'fov', 'mesh', 'particles')
INPUT_ERRORS = (MissionFileError, PlanFileError, GeometryError, ProgramError, OSError)


def _fmt(value) -> str:
    return repr(float(value))


def _write_rows(path: Path, header: List[str], rows) -> None:
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


class CLIHandler:
    """CLI handler mapping user commands to planner operations."""

    def __init__(self):
        self.commands: Dict[str, Callable[[List[str]], int]] = {
            'fixture': self.cmd_fixture, 'plan': self.cmd_plan,
            'validate': self.cmd_validate, 'export': self.cmd_export,
        }

    def run(self, args: List[str]) -> int:
        """Main entry point for CLI; returns the process exit code."""
        verbose = False
        while args and args[0] in ('-v', '--verbose'):
            verbose, args = True, args[1:]
        logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING,
                            format='%(levelname)s %(name)s: %(message)s')

        if not args or args[0] in ('help', '-h', '--help'):
            self.print_help()
            return EXIT_OK

        command, command_args = args[0], args[1:]
        if command not in self.commands:
            print(f"Unknown command: {command}. Use 'help' for available commands.")
            return EXIT_INPUT
        try:
            return self.commands[command](command_args)
        except INPUT_ERRORS as e:
            print(f"Error: {e}")
            return EXIT_INPUT
        except PlannerError as e:
            print(f"Error: {e}")
            return EXIT_FAILED

    @staticmethod
    def _parse(parser: argparse.ArgumentParser, args: List[str]):
        """parse_args, turning argparse's exit into a return code."""
        try:
            return parser.parse_args(args), None
        except SystemExit as e:
            return None, EXIT_OK if e.code in (0, None) else EXIT_INPUT

    # ------------------------------------------------------------------ fixture

    def cmd_fixture(self, args: List[str]) -> int:
        """Write a built-in mission and its mesh files."""
        parser = argparse.ArgumentParser(prog='ucover fixture', description='Write a built-in mission')
        parser.add_argument('name', choices=sorted(FIXTURES))
        parser.add_argument('-o', '--output', required=True, help='Mission file to write')
        parsed, code = self._parse(parser, args)
        if parsed is None:
            return code

        path = write_fixture(parsed.name, parsed.output)
        mf = MissionFile.load(path)
        print(f"Wrote fixture '{parsed.name}' to {path}")
        print(f"  mission hash: {mf.hash()}")
        return EXIT_OK

    # --------------------------------------------------------------------- plan

    def cmd_plan(self, args: List[str]) -> int:
        """Transcribe, solve and extract a plan, then write the plan file."""
        parser = argparse.ArgumentParser(prog='ucover plan', description='Solve a mission')
        parser.add_argument('mission', help='Mission file')
        parser.add_argument('-o', '--output', required=True, help='Plan file to write')
        parser.add_argument('--delta-w', type=float, help='Waypoint chance level')
        parser.add_argument('--delta-o', type=float, help='Obstacle chance level')
        parser.add_argument('-T', '--horizon', type=int, help='Planning horizon')
        parser.add_argument('--seed', type=int, help='Multistart seed')
        parser.add_argument('--multistarts', type=int, help='Number of starts')
        parser.add_argument('--workers', type=int, help='Parallel starts')
        parser.add_argument('--method', choices=('auglag', 'trust-constr'), help='NLP solver')
        parsed, code = self._parse(parser, args)
        if parsed is None:
            return code

        overrides = mission_overrides(parsed.delta_w, parsed.delta_o, parsed.horizon)
        mf = MissionFile.load(parsed.mission).with_values(mission=overrides)
        spec = build_spec(mf)
        cfg = with_overrides(solver_config(mf), seed=parsed.seed, multistarts=parsed.multistarts,
                             workers=parsed.workers, method=parsed.method)
        program = transcribe(spec)
        print(f"Planning N={spec.N} facets, T={spec.horizon} steps, "
              f"{program.variable_count} variables, {cfg.multistarts} start(s)")

        dec, report = solve_mission(spec, cfg, program)
        for record in report.trace:
            logger.debug("%s", record)
        print(report.summary())
        if not report.succeeded:
            self._print_violations(audit_violations(spec, dec), cfg.constraint_tol)
            return EXIT_FAILED

        try:
            plan = extract_plan(spec, dec, cfg.constraint_tol, report)
        except InfeasiblePlanError as e:
            print(f"Error: {e}")
            self._print_violations(e.violations, cfg.constraint_tol)
            return EXIT_FAILED

        record = PlanRecord.from_plan(spec, plan, mf.hash(), cfg.seed, mf.tree().leaf_hashes(), overrides)
        record.write(parsed.output)
        print(f"Wrote plan to {parsed.output}")
        print(f"  visit steps: {', '.join(str(int(s)) for s in plan.visit_steps)}")
        print(f"  covered: {int(np.sum(plan.covered))}/{spec.N} facets")
        print(f"  terminal distance to goal: {record.terminal_distance:.3f}")
        print(f"  goal region reached: {'yes' if record.goal_reached else 'no'}")
        return EXIT_OK

    @staticmethod
    def _print_violations(violations: Dict[str, float], tol: float) -> None:
        failing = sorted(((v, k) for k, v in violations.items() if v > tol), reverse=True)
        if not failing:
            return
        print("Violated constraint groups:")
        for value, name in failing:
            print(f"  {name}: {value:.3e}")

    # ----------------------------------------------------------------- validate

    def cmd_validate(self, args: List[str]) -> int:
        """Monte-Carlo check of a plan against its mission's chance levels."""
        parser = argparse.ArgumentParser(prog='ucover validate', description='Monte-Carlo validation')
        parser.add_argument('mission', help='Mission file the plan was made for')
        parser.add_argument('plan', help='Plan file')
        parser.add_argument('-o', '--output', required=True, help='Report file to write')
        parser.add_argument('-S', '--samples', type=int, default=10000, help='Rollouts (default 10000)')
        parser.add_argument('--seed', type=int, default=0, help='Sampling seed')
        parser.add_argument('--workers', type=int, default=1, help='Parallel chunks')
        parsed, code = self._parse(parser, args)
        if parsed is None:
            return code

        record = PlanRecord.load(parsed.plan)
        # the plan was made for the mission with its recorded overrides applied
        mf = MissionFile.load(parsed.mission).with_values(mission=record.overrides)
        expected = mf.hash()
        if record.mission_hash != expected:
            changed = changed_sections(record.mission_leaves, mf.tree()) if record.mission_leaves else []
            detail = f" (changed: {', '.join(changed)})" if changed else ""
            raise ValidationError(f"plan was made for a different mission{detail}")
        bad = first_non_psd_step(record)
        if bad is not None:
            raise PlanFileError(f"position covariance at step {bad} is not PSD")

        spec = build_spec(mf)
        if record.horizon != spec.horizon or len(record.visit_steps) != spec.N:
            raise ValidationError("plan dimensions do not match the mission")
        report = validate_plan(spec, record.to_plan_result(), parsed.samples, parsed.seed, parsed.workers)
        Path(parsed.output).write_text(report.to_text(expected))
        for line in summary_lines(report):
            print(line)
        print(f"Wrote report to {parsed.output}")
        return EXIT_OK if report.passed else EXIT_FAILED

    # ------------------------------------------------------------------- export

    def cmd_export(self, args: List[str]) -> int:
        """Write plot-ready CSV files from a plan."""
        parser = argparse.ArgumentParser(prog='ucover export', description='Export plan data as CSV')
        parser.add_argument('plan', help='Plan file')
        parser.add_argument('--what', action='append', choices=EXPORT_KINDS + ('all',), required=True)
        parser.add_argument('-o', '--output', required=True, help='Output directory')
        parser.add_argument('-S', '--samples', type=int, default=200, help='Particles per step')
        parser.add_argument('--seed', type=int, default=0, help='Particle seed')
        parsed, code = self._parse(parser, args)
        if parsed is None:
            return code

        record = PlanRecord.load(parsed.plan)
        out = Path(parsed.output)
        out.mkdir(parents=True, exist_ok=True)
        kinds = EXPORT_KINDS if 'all' in parsed.what else tuple(dict.fromkeys(parsed.what))
        for kind in kinds:
            path = out / f"{kind}.csv"
            if kind == 'particles':
                self.export_particles(record, path, parsed.samples, parsed.seed)
            else:
                getattr(self, f"export_{kind}")(record, path)
            print(f"Wrote {path}")
        return EXIT_OK

    @staticmethod
    def export_trajectory(record: PlanRecord, path: Path) -> None:
        _write_rows(path, ['t', 'x', 'y', 'z'],
                    ([str(t)] + [_fmt(v) for v in mean[:3]] for t, mean in enumerate(record.means)))

    @staticmethod
    def export_ellipsoids(record: PlanRecord, path: Path) -> None:
        """Axis lengths at the chi-square(3) quantile plus the eigenvector matrix, row-major."""
        scale = np.sqrt(chi2.ppf(ELLIPSOID_CONFIDENCE, 3))
        header = ['t', 'r1', 'r2', 'r3'] + [f"e{i}{j}" for i in range(1, 4) for j in range(1, 4)]
        rows = []
        for t, cov in enumerate(record.position_covs):
            values, vectors = np.linalg.eigh(0.5 * (cov + cov.T))
            radii = scale * np.sqrt(np.clip(values, 0.0, None))
            rows.append([str(t)] + [_fmt(r) for r in radii] + [_fmt(v) for v in vectors.reshape(-1)])
        _write_rows(path, header, rows)

    @staticmethod
    def export_fov(record: PlanRecord, path: Path) -> None:
        """Five vertices of the scheduled FOV pyramid per step, apex last."""
        states = record.fov_states()
        rows = []
        for t in range(1, record.horizon + 1):
            state = states[int(record.fov_schedule[t - 1])]
            corners = state.vertices_body.T + record.means[t, :3]
            for k, corner in enumerate(corners):
                rows.append([str(t), str(k), str(state.index)] + [_fmt(v) for v in corner])
        _write_rows(path, ['t', 'vertex', 'fov', 'x', 'y', 'z'], rows)

    @staticmethod
    def export_mesh(record: PlanRecord, path: Path) -> None:
        facets = [Facet.from_vertices(v) for v in record.facet_vertices]
        write_triangle_soup(path, facets, record.covered)

    @staticmethod
    def export_particles(record: PlanRecord, path: Path, samples: int, seed: int) -> None:
        particles = sample_posterior(record.to_plan_result(), samples, seed)
        rows = ([str(s), str(t)] + [_fmt(v) for v in particles[s, t]]
                for s in range(particles.shape[0]) for t in range(particles.shape[1]))
        _write_rows(path, ['sample', 't', 'x', 'y', 'z'], rows)

    def print_help(self):
        """Print help message."""
        print("""
Unscented chance-constrained UAV coverage planner

Usage: python main.py [-v] <command> [arguments]

Commands:
  fixture <name> -o FILE                 Write a built-in mission
                                         (paper-full, paper-small, single-waypoint, corridor)
  plan MISSION -o PLAN [options]         Solve a mission and write a plan file
      --delta-w F --delta-o F -T N       Override chance levels and horizon
      --seed N --multistarts N           Override multistart settings
      --workers N --method NAME          Parallel starts, auglag | trust-constr
  validate MISSION PLAN -o REPORT        Monte-Carlo check of a plan
      -S N --seed N --workers N          Samples (default 10000), seed, parallel chunks
  export PLAN --what KIND -o DIR         Write CSV files; KIND is trajectory, ellipsoids,
                                         fov, mesh, particles or all (repeatable)
  help                                   Show this help message

Exit codes: 0 success, 1 infeasible plan or failed check, 2 input or file error

Examples:
  python main.py fixture paper-small -o missions/small.mission
  python main.py plan missions/small.mission -o small.plan --seed 3
  python main.py validate missions/small.mission small.plan -S 10000 --seed 7 -o small.report
  python main.py export small.plan --what all -o plots/
        """)
