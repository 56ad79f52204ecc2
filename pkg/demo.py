"""
Demo Script for the coverage planner
====================================

Walks through the whole pipeline on a small mission:
- Fixture generation
- Planning under the unscented chance constraints
- Monte-Carlo validation of the plan
- CSV export for plotting

Run this script to see the planner in action! The default fixture is
single-waypoint; pass another fixture name (e.g. paper-small) as the first
argument.
"""

import shutil
import sys
from pathlib import Path

from cli import CLIHandler


def run_command(cli: CLIHandler, command: str) -> int:
    """Helper to run planner commands in-process."""
    print(f"\n$ ucover {command}")
    code = cli.run(command.split())
    print(f"  (exit code {code})")
    return code


def print_section(title: str):
    """Print a section header."""
    print("\n" + "=" * 70)
    print(f"  {title}")
    print("=" * 70)


def demo(fixture: str = 'single-waypoint'):
    """Run the fixture -> plan -> validate -> export walkthrough."""

    print("=" * 70)
    print("  COVERAGE PLANNER DEMONSTRATION")
    print("=" * 70)

    demo_dir = Path("ucover_demo")
    if demo_dir.exists():
        print(f"\nCleaning up existing demo directory: {demo_dir}")
        shutil.rmtree(demo_dir)
    demo_dir.mkdir()
    print(f"Created demo directory: {demo_dir.absolute()}")

    cli = CLIHandler()
    mission = demo_dir / f"{fixture}.mission"
    plan = demo_dir / f"{fixture}.plan"
    report = demo_dir / f"{fixture}.report"

    # ========================================================================
    print_section("1. WRITE MISSION FIXTURE")
    # ========================================================================
    if run_command(cli, f"fixture {fixture} -o {mission}") != 0:
        return 1
    print("\nMission file:")
    print(mission.read_text())

    # ========================================================================
    print_section("2. PLAN")
    # ========================================================================
    if run_command(cli, f"plan {mission} -o {plan} --multistarts 2") != 0:
        print("\nNo feasible plan found; stopping here.")
        return 1

    # ========================================================================
    print_section("3. TIGHTER WAYPOINT CHANCE LEVEL")
    # ========================================================================
    run_command(cli, f"plan {mission} -o {demo_dir / 'tight.plan'} --delta-w 0.01 --multistarts 2")

    # ========================================================================
    print_section("4. MONTE-CARLO VALIDATION")
    # ========================================================================
    run_command(cli, f"validate {mission} {plan} -S 10000 --seed 7 -o {report}")

    # ========================================================================
    print_section("5. EXPORT PLOT DATA")
    # ========================================================================
    run_command(cli, f"export {plan} --what all -o {demo_dir / 'plots'}")

    # ========================================================================
    print_section("DEMO COMPLETE")
    # ========================================================================
    print(f"\nAll artifacts are in: {demo_dir.absolute()}")
    return 0


if __name__ == '__main__':
    sys.exit(demo(*sys.argv[1:2]))
