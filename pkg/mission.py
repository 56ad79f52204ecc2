"""Mission files - parsing, fixtures and MissionSpec assembly.

A mission file is line-oriented text::

    # comment
    dynamics.dt = 0.1
    camera.psi_y_deg = -90, -45, 0, 45, 90
    obstacles.hill = box: 37.3, 37.3, 0, 52.7, 52.7, 38.8

Angles are written in degrees (keys ending in `_deg`) and converted to
radians once, in `build_spec`. Paths in the `mesh` section are resolved
relative to the mission file.
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from dynamics import ControlBounds, DisturbanceModel, InitialBelief
from errors import MissionFileError
from geometry import (CameraConfig, ConvexPolytope, delaunay_2p5d, enumerate_fov_states,
                      gaussian_hill_points, load_facet_subset, load_point_cloud, load_triangle_soup,
                      make_waypoint, select_facets, write_facet_subset, write_point_cloud, write_triangle_soup,
                      Facet)
from program import MissionSpec
from provenance import MerkleTree, mission_tree
from solver import SolverConfig
from uncertainty import UtConfig

logger = logging.getLogger(__name__)

SECTIONS = ('dynamics', 'camera', 'ut', 'mission', 'mesh', 'obstacles', 'solver')
_MISSING = object()


# ============================================================================
# Mission file document
# ============================================================================

@dataclass
class MissionFile:
    sections: Dict[str, Dict[str, str]]
    base_dir: Path = field(default_factory=Path.cwd)
    comments: List[str] = field(default_factory=list)

    @classmethod
    def parse(cls, text: str, base_dir: Path = Path('.'), source: str = "<mission>") -> 'MissionFile':
        sections: Dict[str, Dict[str, str]] = {name: {} for name in SECTIONS}
        comments = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if line.startswith('#'):
                comments.append(line[1:].strip())
                continue
            if not line:
                continue
            if '=' not in line:
                raise MissionFileError(f"{source}:{lineno}: expected 'section.key = value'")
            lhs, value = (part.strip() for part in line.split('=', 1))
            if '.' not in lhs:
                raise MissionFileError(f"{source}:{lineno}: key '{lhs}' lacks a section")
            section, key = lhs.split('.', 1)
            if section not in sections:
                raise MissionFileError(f"{source}:{lineno}: unknown section '{section}'")
            if key in sections[section]:
                raise MissionFileError(f"{source}:{lineno}: duplicate key '{lhs}'")
            sections[section][key] = value
        return cls(sections, Path(base_dir), comments)

    @classmethod
    def load(cls, path) -> 'MissionFile':
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as e:
            raise MissionFileError(f"cannot read mission file {path}: {e}") from e
        return cls.parse(text, path.parent, str(path))

    def to_text(self) -> str:
        lines = [f"# {c}" if c else "#" for c in self.comments]
        for name in SECTIONS:
            entries = self.sections.get(name, {})
            if entries:
                lines.append("")
                lines.extend(f"{name}.{k} = {v}" for k, v in entries.items())
        return "\n".join(lines).lstrip("\n") + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())

    def get(self, section: str, key: str, default=_MISSING) -> str:
        value = self.sections.get(section, {}).get(key)
        if value is None:
            if default is _MISSING:
                raise MissionFileError(f"missing key '{section}.{key}'")
            return default
        return value

    def number(self, section: str, key: str, default=_MISSING) -> float:
        value = self.get(section, key, default)
        try:
            return float(value)
        except (TypeError, ValueError) as e:
            raise MissionFileError(f"'{section}.{key}' is not a number: {value!r}") from e

    def integer(self, section: str, key: str, default=_MISSING) -> int:
        value = self.number(section, key, default)
        if value != int(value):
            raise MissionFileError(f"'{section}.{key}' must be an integer, got {value}")
        return int(value)

    def numbers(self, section: str, key: str, size: Optional[int] = None, default=_MISSING) -> np.ndarray:
        value = self.get(section, key, default)
        if not isinstance(value, str):
            return np.asarray(value, dtype=float)
        try:
            out = np.array([float(v) for v in value.split(',') if v.strip()])
        except ValueError as e:
            raise MissionFileError(f"'{section}.{key}' is not a number list: {value!r}") from e
        if size is not None and out.size != size:
            raise MissionFileError(f"'{section}.{key}' needs {size} values, got {out.size}")
        return out

    def flag(self, section: str, key: str, default: bool = False) -> bool:
        value = self.get(section, key, str(default)).lower()
        if value not in ('true', 'false', '1', '0', 'yes', 'no'):
            raise MissionFileError(f"'{section}.{key}' is not a boolean: {value!r}")
        return value in ('true', '1', 'yes')

    def with_values(self, **updates: Dict[str, object]) -> 'MissionFile':
        """Copy with `section={key: value}` entries replaced; None values are skipped."""
        sections = {name: dict(entries) for name, entries in self.sections.items()}
        for section, entries in updates.items():
            for key, value in entries.items():
                if value is not None:
                    sections.setdefault(section, {})[key] = _format(value)
        return replace(self, sections=sections)

    def resolve(self, key: str) -> Optional[Path]:
        value = self.get('mesh', key, None)
        return None if value is None else self.base_dir / value

    def data_files(self) -> Dict[str, str]:
        files = {}
        for key in ('source', 'facet_subset'):
            path = self.resolve(key)
            if path is None:
                continue
            try:
                files[key] = path.read_text()
            except OSError as e:
                raise MissionFileError(f"cannot read mesh.{key} file {path}: {e}") from e
        return files

    def tree(self) -> MerkleTree:
        return mission_tree(self.sections, self.data_files())

    def hash(self) -> str:
        return self.tree().get_root_hash()


def _format(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (list, tuple, np.ndarray)):
        return ", ".join(_format(v) for v in np.asarray(value).reshape(-1).tolist())
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


# ============================================================================
# MissionSpec assembly
# ============================================================================

def parse_obstacle(name: str, value: str) -> ConvexPolytope:
    """`box: x0, y0, z0, x1, y1, z1` or `halfspaces: a, b, c, d; a, b, c, d; ...`."""
    kind, _, body = value.partition(':')
    kind = kind.strip()
    try:
        if kind == 'box':
            numbers = [float(v) for v in body.split(',')]
            if len(numbers) != 6:
                raise MissionFileError(f"obstacle '{name}': box needs 6 numbers")
            return ConvexPolytope.box(numbers[:3], numbers[3:], name)
        if kind == 'halfspaces':
            rows = [[float(v) for v in part.split(',')] for part in body.split(';') if part.strip()]
            if any(len(r) != 4 for r in rows):
                raise MissionFileError(f"obstacle '{name}': every half-space needs 4 numbers")
            rows = np.array(rows)
            return ConvexPolytope(rows[:, :3], rows[:, 3], name).validate()
    except ValueError as e:
        raise MissionFileError(f"obstacle '{name}': {e}") from e
    raise MissionFileError(f"obstacle '{name}': unknown kind '{kind}'")


def load_facets(mf: MissionFile) -> List[Facet]:
    source = mf.resolve('source')
    if source is None:
        raise MissionFileError("missing key 'mesh.source'")
    if not source.exists():
        raise MissionFileError(f"mesh file not found: {source}")
    fmt = mf.get('mesh', 'format', 'soup')
    if fmt == 'soup':
        facets = load_triangle_soup(source)
    elif fmt == 'points':
        facets = delaunay_2p5d(load_point_cloud(source))
    else:
        raise MissionFileError(f"unknown mesh.format '{fmt}' (soup or points)")
    subset_path = mf.resolve('facet_subset')
    if subset_path is None:
        return facets
    if not subset_path.exists():
        raise MissionFileError(f"facet subset file not found: {subset_path}")
    indices = load_facet_subset(subset_path)
    if any(i < 0 or i >= len(facets) for i in indices):
        raise MissionFileError(f"facet subset index out of range 0..{len(facets) - 1}")
    return [facets[i] for i in indices]


def camera_config(mf: MissionFile) -> CameraConfig:
    return CameraConfig(
        h_fov=mf.number('camera', 'h_fov'),
        phi_h=float(np.radians(mf.number('camera', 'phi_h_deg'))),
        phi_v=float(np.radians(mf.number('camera', 'phi_v_deg'))),
        psi_y_set=tuple(float(a) for a in np.radians(mf.numbers('camera', 'psi_y_deg'))),
        psi_z_set=tuple(float(a) for a in np.radians(mf.numbers('camera', 'psi_z_deg'))),
    )


def build_spec(mf: MissionFile) -> MissionSpec:
    """Assemble and validate the MissionSpec described by a mission file."""
    camera = camera_config(mf)
    c = mf.number('mission', 'c')
    edge = mf.number('mission', 'waypoint_edge')
    facets = load_facets(mf)
    waypoints = [make_waypoint(f, c, camera.h_fov, edge, i) for i, f in enumerate(facets)]
    x0 = np.concatenate([mf.numbers('dynamics', 'x0_position', 3),
                         np.radians(mf.numbers('dynamics', 'x0_angles_deg', 2))])
    try:
        initial = InitialBelief(x0, np.diag(mf.numbers('dynamics', 'x0_cov_diag', 5)))
        disturbance = DisturbanceModel.diagonal(mf.numbers('dynamics', 'q_diag', 3),
                                                mf.numbers('dynamics', 'q_mean', 3, "0, 0, 0"))
        ut = UtConfig(mf.number('ut', 'alpha'), mf.number('ut', 'rho'), mf.number('ut', 'beta'))
    except ValueError as e:
        raise MissionFileError(str(e)) from e
    obstacles = [parse_obstacle(name, value) for name, value in mf.sections.get('obstacles', {}).items()]
    spec = MissionSpec(
        horizon=mf.integer('mission', 'T'),
        dt=mf.number('dynamics', 'dt'),
        facets=tuple(facets),
        waypoints=tuple(waypoints),
        fov_states=tuple(enumerate_fov_states(camera)),
        obstacles=tuple(obstacles),
        goal_centroid=mf.numbers('mission', 'goal', 3),
        delta_w=mf.number('mission', 'delta_w'),
        delta_o=mf.number('mission', 'delta_o'),
        env_lower=mf.numbers('mission', 'env_min', 3),
        env_upper=mf.numbers('mission', 'env_max', 3),
        control_bounds=ControlBounds(mf.number('dynamics', 'v_max'),
                                     float(np.radians(mf.number('dynamics', 'omega_max_deg')))),
        initial_belief=initial,
        disturbance=disturbance,
        ut_config=ut,
        camera_config=camera,
        cover_vertices=mf.flag('mission', 'cover_vertices'),
        goal_size=mf.numbers('mission', 'goal_size', 3, "1, 1, 1"),
    )
    logger.info("mission: N=%d facets, M=%d FOV states, T=%d, %d obstacles",
                spec.N, spec.M, spec.horizon, len(spec.obstacles))
    return spec.validate()


def solver_config(mf: MissionFile, base: SolverConfig = SolverConfig()) -> SolverConfig:
    """SolverConfig with the mission's `solver.*` keys applied."""
    section = mf.sections.get('solver', {})
    casts: Dict[str, Callable] = {
        'seed': int, 'multistarts': int, 'workers': int, 'max_outer_iters': int, 'max_inner_iters': int,
        'constraint_tol': float, 'optimality_tol': float, 'penalty_init': float, 'penalty_growth': float,
        'method': str,
    }
    updates = {}
    for key, value in section.items():
        if key not in casts:
            raise MissionFileError(f"unknown solver key 'solver.{key}'")
        try:
            updates[key] = casts[key](float(value)) if casts[key] is int else casts[key](value)
        except ValueError as e:
            raise MissionFileError(f"bad value for 'solver.{key}': {value!r}") from e
    return replace(base, **updates)


def mission_overrides(delta_w: Optional[float] = None, delta_o: Optional[float] = None,
                      horizon: Optional[int] = None) -> Dict[str, str]:
    """Formatted `mission.*` values for the given overrides; None entries are left out."""
    values = {'delta_w': delta_w, 'delta_o': delta_o, 'T': horizon}
    return {key: _format(value) for key, value in values.items() if value is not None}


def apply_overrides(mf: MissionFile, delta_w: Optional[float] = None, delta_o: Optional[float] = None,
                    horizon: Optional[int] = None) -> MissionFile:
    return mf.with_values(mission=mission_overrides(delta_w, delta_o, horizon))


# ============================================================================
# Fixtures
# ============================================================================

PSI_Y_DEG = (-90.0, -45.0, 0.0, 45.0, 90.0)
PSI_Z_DEG = (-135.0, -90.0, -45.0, 0.0, 45.0, 90.0, 135.0, 180.0)
HILL_SAMPLES = 14


def _base_sections() -> Dict[str, Dict[str, object]]:
    return {
        'dynamics': {'dt': 0.1, 'v_max': 12.0, 'omega_max_deg': 60.0, 'q_diag': [1e-3] * 3,
                     'q_mean': [0.0] * 3, 'x0_position': [10.0, 10.0, 10.0], 'x0_angles_deg': [0.0, 0.0],
                     'x0_cov_diag': [1e-4] * 5},
        'ut': {'alpha': 1.0, 'rho': 2.5, 'beta': 2.0},
        'camera': {'h_fov': 15.0, 'phi_h_deg': 60.0, 'phi_v_deg': 60.0,
                   'psi_y_deg': list(PSI_Y_DEG), 'psi_z_deg': list(PSI_Z_DEG)},
        'mission': {'T': 80, 'delta_w': 0.4, 'delta_o': 0.3, 'c': 0.8, 'waypoint_edge': 5.0,
                    'goal': [45.5, 6.0, 5.0], 'goal_size': [1.0, 1.0, 1.0],
                    'env_min': [0.0, 0.0, 0.0], 'env_max': [100.0, 100.0, 100.0], 'cover_vertices': False},
        'mesh': {},
        'obstacles': {},
        'solver': {'seed': 0, 'multistarts': 4},
    }


def hill_keep_out(points: np.ndarray) -> ConvexPolytope:
    """Convex stand-in for the hill: bounding box of its upper half, down to the ground."""
    pts = np.asarray(points, dtype=float)
    upper = pts[pts[:, 2] >= 0.5 * pts[:, 2].max()]
    lower = upper.min(axis=0)
    lower[2] = 0.0
    return ConvexPolytope.box(lower, upper.max(axis=0), name='hill')


def _box_text(poly: ConvexPolytope) -> str:
    verts = poly.vertices()
    return "box: " + _format(np.concatenate([verts.min(axis=0), verts.max(axis=0)]))


def _hill_fixture(stem: str, count: int, horizon: int, start: Tuple[float, ...], compact: bool):
    points = gaussian_hill_points(samples=HILL_SAMPLES)
    facets = delaunay_2p5d(points)
    keep_out = hill_keep_out(points)
    sections = _base_sections()
    subset = select_facets(facets, count, sections['mission']['c'], sections['camera']['h_fov'],
                           sections['mission']['waypoint_edge'], keep_out, compact=compact)
    sections['mission']['T'] = horizon
    sections['dynamics']['x0_position'] = list(start[:3])
    sections['dynamics']['x0_angles_deg'] = list(start[3:])
    sections['mesh'] = {'source': f"{stem}.points.csv", 'format': 'points', 'facet_subset': f"{stem}.subset.txt"}
    sections['obstacles'] = {'hill': _box_text(keep_out)}

    def write_data(directory: Path):
        write_point_cloud(directory / f"{stem}.points.csv", points)
        write_facet_subset(directory / f"{stem}.subset.txt", subset)

    notes = [f"{len(facets)} Delaunay facets from a {HILL_SAMPLES}x{HILL_SAMPLES} Gaussian hill grid",
             "hill obstacle: bounding box of the upper half of the hill, extended to the ground"]
    return sections, write_data, notes


def _single_facet_fixture(stem: str, centroid: Tuple[float, float, float]):
    cx, cy, cz = centroid
    facet = Facet.from_vertices(np.array([[cx - 1.0, cy - 1.0, cz], [cx + 1.0, cy - 1.0, cz],
                                          [cx, cy + 2.0, cz]]))

    def write_data(directory: Path):
        write_triangle_soup(directory / f"{stem}.soup.csv", [facet])

    return {'source': f"{stem}.soup.csv", 'format': 'soup'}, write_data


def fixture_paper_full(stem: str):
    return _hill_fixture(stem, 14, 80, (10.0, 10.0, 10.0, 0.0, 0.0), compact=False)


def fixture_paper_small(stem: str):
    sections, write_data, notes = _hill_fixture(stem, 3, 25, (45.0, 37.0, 51.0, 0.0, 90.0), compact=True)
    notes.append("start moved next to the summit waypoints so all three are reachable in 25 steps")
    return sections, write_data, notes


def fixture_single_waypoint(stem: str):
    sections = _base_sections()
    mesh, write_data = _single_facet_fixture(stem, (22.45, 20.0, 0.0))
    sections['mesh'] = mesh
    sections['dynamics'].update({'x0_position': [20.0, 10.0, 12.0], 'x0_angles_deg': [0.0, 90.0],
                                 'x0_cov_diag': [1e-2, 1e-2, 1e-2, 1e-4, 1e-4]})
    sections['mission'].update({'T': 30, 'goal': [20.0, 30.0, 12.0], 'env_max': [50.0, 50.0, 50.0]})
    return sections, write_data, ["one ground facet; the straight line x = 20 clips the waypoint cube"]


GAP_LOWER, GAP_UPPER = (49.85, 30.0, 0.0), (50.15, 34.0, 12.0)
GAP_SLAB = ConvexPolytope.box(GAP_LOWER, GAP_UPPER, name='gap')


def _box_line(lower, upper) -> str:
    return "box: " + ", ".join(repr(float(v)) for v in (*lower, *upper))


def fixture_corridor(stem: str):
    sections = _base_sections()
    mesh, write_data = _single_facet_fixture(stem, (50.0, 45.0, 0.0))
    sections['mesh'] = mesh
    sections['dynamics'].update({'x0_position': [50.0, 20.0, 10.0], 'x0_angles_deg': [0.0, 90.0],
                                 'x0_cov_diag': [1e-2, 1e-2, 1e-2, 1e-4, 1e-4]})
    sections['mission'].update({'T': 40, 'goal': [50.0, 50.0, 10.0]})
    # the two walls leave exactly GAP_SLAB free between them
    sections['obstacles'] = {'west': _box_line((44.0, GAP_LOWER[1], GAP_LOWER[2]), (GAP_LOWER[0], *GAP_UPPER[1:])),
                             'east': _box_line((GAP_UPPER[0], *GAP_LOWER[1:]), (56.0, GAP_UPPER[1], GAP_UPPER[2]))}
    return sections, write_data, ["two boxes with a 0.3 m gap at x = 50 between y = 30 and y = 34"]


FIXTURES = {
    'paper-full': fixture_paper_full,
    'paper-small': fixture_paper_small,
    'single-waypoint': fixture_single_waypoint,
    'corridor': fixture_corridor,
}


def write_fixture(name: str, path) -> Path:
    """Write mission `name` to `path` plus its mesh files alongside."""
    if name not in FIXTURES:
        raise MissionFileError(f"unknown fixture '{name}' (choose from {', '.join(FIXTURES)})")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sections, write_data, notes = FIXTURES[name](path.stem)
    write_data(path.parent)
    text_sections = {s: {k: _format(v) for k, v in entries.items()} for s, entries in sections.items()}
    mf = MissionFile(text_sections, path.parent, [f"fixture: {name}"] + notes)
    mf.write(path)
    logger.info("wrote fixture %s to %s", name, path)
    return path
