"""2D exploration world: segment maps, ray-cast LiDAR, unicycle robot.

Geometry runs in float64. Beam i points at heading + i degrees; ranges are
clipped to LIDAR_RANGE. The four bounds edges are always appended to the wall
list, so an empty walls list still yields a closed arena.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

NUM_BEAMS = 360
LIDAR_RANGE = 5.0
ROBOT_RADIUS = 0.3
DT = 0.1  # 10 Hz control
V_MAX = 0.5
OMEGA_MAX = 1.0
SAFE_DISTANCE = 0.5
EXPLORE_SCALE = 10.0
COLLISION_PENALTY = -50.0
STEP_PENALTY = -0.01
CELL_SIZE = 0.25
CELL_AREA = CELL_SIZE * CELL_SIZE
DIRECTION_RESAMPLE_PROB = 0.1

BUILTIN_ENVIRONMENTS = ("simple", "complex", "maze", "dynamic")

_BEAM_ANGLES = np.deg2rad(np.arange(NUM_BEAMS, dtype=np.float64))


class EnvironmentError_(ValueError):
    """Malformed environment geometry or file."""


@dataclass
class ObstacleSpec:
    radius: float
    speed: float
    x: float
    y: float


@dataclass
class EnvironmentSpec:
    name: str
    width: float
    height: float
    walls: np.ndarray  # [S,4] segments (x1,y1,x2,y2), bounds edges included
    start_pose: tuple[float, float, float]
    step_limit: int
    obstacles: list[ObstacleSpec] = field(default_factory=list)

    @staticmethod
    def create(name, width, height, walls, start_pose, step_limit, obstacles=()):
        walls = np.asarray(walls, dtype=np.float64).reshape(-1, 4)
        bounds = np.array([
            [0.0, 0.0, width, 0.0],
            [width, 0.0, width, height],
            [width, height, 0.0, height],
            [0.0, height, 0.0, 0.0],
        ])
        spec = EnvironmentSpec(name, float(width), float(height),
                               np.vstack([walls, bounds]) if len(walls) else bounds,
                               tuple(float(v) for v in start_pose), int(step_limit),
                               list(obstacles))
        spec.validate()
        return spec

    def validate(self):
        if self.width <= 0 or self.height <= 0:
            raise EnvironmentError_(f"{self.name}: non-positive bounds {self.width}x{self.height}")
        if self.step_limit <= 0:
            raise EnvironmentError_(f"{self.name}: step_limit must be positive")
        eps = 1e-9
        pts = self.walls.reshape(-1, 2)
        if np.any(pts[:, 0] < -eps) or np.any(pts[:, 0] > self.width + eps) \
                or np.any(pts[:, 1] < -eps) or np.any(pts[:, 1] > self.height + eps):
            raise EnvironmentError_(f"{self.name}: wall segment outside bounds")
        for ob in self.obstacles:
            if ob.radius <= 0:
                raise EnvironmentError_(f"{self.name}: obstacle radius must be positive")
        x, y, _ = self.start_pose
        if not (0 <= x <= self.width and 0 <= y <= self.height):
            raise EnvironmentError_(f"{self.name}: start pose outside bounds")
        pos = np.array([x, y])
        if len(self.walls) and segment_distances(pos, self.walls).min() < ROBOT_RADIUS:
            raise EnvironmentError_(f"{self.name}: start pose within robot radius of a wall")
        for ob in self.obstacles:
            if np.hypot(x - ob.x, y - ob.y) < ROBOT_RADIUS + ob.radius:
                raise EnvironmentError_(f"{self.name}: start pose overlaps an obstacle")

    def free_area(self) -> float:
        return self.width * self.height


@dataclass
class RobotState:
    x: float
    y: float
    heading: float  # wrapped to (-pi, pi]
    path_length: float = 0.0


@dataclass
class Action:
    v: float      # m/s, clamped to [-V_MAX, V_MAX]
    omega: float  # rad/s, clamped to [-OMEGA_MAX, OMEGA_MAX]


@dataclass
class StepResult:
    observation: np.ndarray  # 360 ranges, meters
    reward: float
    done: bool
    collided: bool
    explored_delta: float  # m^2


def wrap_angle(a: float) -> float:
    a = (a + np.pi) % (2.0 * np.pi) - np.pi
    return np.pi if a == -np.pi else a


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def ray_segment_distances(origin: np.ndarray, dirs: np.ndarray, walls: np.ndarray) -> np.ndarray:
    """Per-ray nearest hit distance against all segments; inf where no hit.

    origin [2], dirs [N,2] unit vectors, walls [S,4].
    """
    if len(walls) == 0:
        return np.full(len(dirs), np.inf)
    p1 = walls[:, 0:2]
    edge = walls[:, 2:4] - p1  # [S,2]
    rel = p1 - origin  # [S,2]
    denom = dirs[:, 0:1] * edge[:, 1] - dirs[:, 1:2] * edge[:, 0]  # [N,S]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rel[:, 0] * edge[:, 1] - rel[:, 1] * edge[:, 0]) / denom  # [N,S]
        u = (rel[None, :, 0] * dirs[:, 1:2] - rel[None, :, 1] * dirs[:, 0:1]) / denom
    hit = (np.abs(denom) > 1e-12) & (t >= 0.0) & (u >= 0.0) & (u <= 1.0)
    t = np.where(hit, t, np.inf)
    return t.min(axis=1)


def ray_circle_distances(origin: np.ndarray, dirs: np.ndarray,
                         centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Per-ray nearest hit distance against circles; inf where no hit."""
    if len(centers) == 0:
        return np.full(len(dirs), np.inf)
    oc = centers[None, :, :] - origin  # [N,C,2]
    b = np.einsum("nd,ncd->nc", dirs, oc)
    c = np.einsum("ncd,ncd->nc", oc, oc) - radii[None, :] ** 2
    disc = b * b - c
    sq = np.sqrt(np.maximum(disc, 0.0))
    near = b - sq
    far = b + sq
    t = np.where(near >= 0.0, near, far)
    t = np.where((disc >= 0.0) & (t >= 0.0), t, np.inf)
    return t.min(axis=1)


def cast_rays(x: float, y: float, heading: float, walls: np.ndarray,
              obstacle_centers: np.ndarray | None = None,
              obstacle_radii: np.ndarray | None = None) -> np.ndarray:
    """360 range readings at 1-degree spacing from `heading`, clipped to 5 m."""
    angles = heading + _BEAM_ANGLES
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    origin = np.array([x, y], dtype=np.float64)
    dist = ray_segment_distances(origin, dirs, walls)
    if obstacle_centers is not None and len(obstacle_centers):
        dist = np.minimum(dist, ray_circle_distances(origin, dirs, obstacle_centers, obstacle_radii))
    return np.minimum(dist, LIDAR_RANGE)


def segment_distances(point: np.ndarray, walls: np.ndarray) -> np.ndarray:
    """Distance from a point to each wall segment."""
    p1 = walls[:, 0:2]
    edge = walls[:, 2:4] - p1
    rel = point - p1
    denom = np.einsum("sd,sd->s", edge, edge)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.clip(np.einsum("sd,sd->s", rel, edge) / denom, 0.0, 1.0)
    t = np.where(denom > 0, t, 0.0)
    closest = p1 + t[:, None] * edge
    return np.hypot(point[0] - closest[:, 0], point[1] - closest[:, 1])


# ---------------------------------------------------------------------------
# exploration bookkeeping
# ---------------------------------------------------------------------------

class OccupancyTracker:
    """0.25 m grid of explored flags and visit counts."""

    def __init__(self, width: float, height: float):
        self.nx = int(np.ceil(width / CELL_SIZE))
        self.ny = int(np.ceil(height / CELL_SIZE))
        self.explored = np.zeros((self.nx, self.ny), dtype=bool)
        self.visits = np.zeros((self.nx, self.ny), dtype=np.int64)

    def reset(self):
        self.explored[...] = False
        self.visits[...] = 0

    @property
    def explored_cells(self) -> int:
        return int(self.explored.sum())

    @property
    def explored_m2(self) -> float:
        return self.explored_cells * CELL_AREA

    def mark_scan(self, x: float, y: float, heading: float, ranges: np.ndarray) -> float:
        """Mark cells along each beam (half-cell ray marching); returns new m^2."""
        step = CELL_SIZE / 2.0
        ts = np.arange(0.0, LIDAR_RANGE + step, step)
        angles = heading + _BEAM_ANGLES
        px = x + np.cos(angles)[:, None] * ts[None, :]
        py = y + np.sin(angles)[:, None] * ts[None, :]
        keep = ts[None, :] <= ranges[:, None]
        ix = np.floor(px / CELL_SIZE).astype(np.int64)
        iy = np.floor(py / CELL_SIZE).astype(np.int64)
        keep &= (ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny)
        before = self.explored.sum()
        self.explored[ix[keep], iy[keep]] = True
        cx, cy = int(x / CELL_SIZE), int(y / CELL_SIZE)
        if 0 <= cx < self.nx and 0 <= cy < self.ny:
            self.visits[cx, cy] += 1
        return float(self.explored.sum() - before) * CELL_AREA


def compute_reward(explored_delta: float, d_min: float, collided: bool) -> float:
    """Exploration bonus, collision/proximity penalty, and step cost."""
    if collided:
        collision_term = COLLISION_PENALTY
    elif d_min < SAFE_DISTANCE:
        collision_term = -5.0 * (1.0 - d_min / SAFE_DISTANCE)
    else:
        collision_term = 0.0
    return EXPLORE_SCALE * explored_delta + collision_term + STEP_PENALTY


# ---------------------------------------------------------------------------
# perturbations
# ---------------------------------------------------------------------------

PERTURBATION_MODES = ("sensor_noise", "actuator_noise", "occlusion")
SENSOR_NOISE_STD = 0.1
ACTUATOR_NOISE_STD = 0.1
OCCLUSION_FRACTION = 0.2


def apply_perturbation(ranges: np.ndarray, mode: str | None,
                       rng: np.random.Generator, noise_std: float = SENSOR_NOISE_STD) -> np.ndarray:
    """Perturb a scan; actuator mode leaves scans alone (acts on actions)."""
    if mode is None or mode == "none" or mode == "actuator_noise":
        return ranges
    if mode == "sensor_noise":
        if noise_std == 0.0:
            return ranges
        return np.clip(ranges + rng.normal(0.0, noise_std, size=ranges.shape), 0.0, LIDAR_RANGE)
    if mode == "occlusion":
        out = ranges.copy()
        masked = rng.choice(ranges.shape[0], size=int(ranges.shape[0] * OCCLUSION_FRACTION), replace=False)
        out[masked] = LIDAR_RANGE
        return out
    raise ValueError(f"unknown perturbation mode: {mode!r}")


def perturb_action(v: float, omega: float, mode: str | None, rng: np.random.Generator) -> tuple[float, float]:
    if mode == "actuator_noise":
        v = float(np.clip(v + rng.normal(0.0, ACTUATOR_NOISE_STD), -V_MAX, V_MAX))
        omega = float(np.clip(omega + rng.normal(0.0, ACTUATOR_NOISE_STD), -OMEGA_MAX, OMEGA_MAX))
    return v, omega


# ---------------------------------------------------------------------------
# dynamic obstacles
# ---------------------------------------------------------------------------

class DynamicObstacle:
    def __init__(self, spec: ObstacleSpec):
        self.radius = spec.radius
        self.speed = spec.speed
        self.pos = np.array([spec.x, spec.y], dtype=np.float64)
        self.direction = np.array([1.0, 0.0])

    def clearance(self, walls: np.ndarray) -> float:
        return float(segment_distances(self.pos, walls).min())


def advance_dynamic_obstacles(obstacles: list[DynamicObstacle], walls: np.ndarray,
                              rng: np.random.Generator):
    """Random-walk motion: occasional redirection, wall reflection."""
    for ob in obstacles:
        if ob.speed <= 0.0:
            continue
        if rng.random() < DIRECTION_RESAMPLE_PROB:
            a = rng.uniform(0.0, 2.0 * np.pi)
            ob.direction = np.array([np.cos(a), np.sin(a)])
        proposal = ob.pos + ob.direction * ob.speed * DT
        dists = segment_distances(proposal, walls)
        if dists.min() < ob.radius:
            seg = walls[int(dists.argmin())]
            edge = seg[2:4] - seg[0:2]
            n = np.array([-edge[1], edge[0]])
            norm = np.hypot(*n)
            if norm > 0:
                n /= norm
                ob.direction = ob.direction - 2.0 * float(ob.direction @ n) * n
            else:
                ob.direction = -ob.direction
            proposal = ob.pos + ob.direction * ob.speed * DT
            if segment_distances(proposal, walls).min() < ob.radius:
                continue  # stuck this step
        ob.pos = proposal


# ---------------------------------------------------------------------------
# environment
# ---------------------------------------------------------------------------

class SteppedAfterDone(RuntimeError):
    pass


class ExplorationEnv:
    """Deterministic simulator; all randomness comes from the given generator."""

    def __init__(self, spec: EnvironmentSpec, rng: np.random.Generator | None = None):
        self.spec = spec
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.tracker = OccupancyTracker(spec.width, spec.height)
        self.robot = RobotState(*spec.start_pose)
        self.obstacles: list[DynamicObstacle] = []
        self.steps = 0
        self.done = True

    def _obstacle_arrays(self):
        if not self.obstacles:
            return np.zeros((0, 2)), np.zeros(0)
        return (np.array([ob.pos for ob in self.obstacles]),
                np.array([ob.radius for ob in self.obstacles]))

    def scan(self) -> np.ndarray:
        centers, radii = self._obstacle_arrays()
        return cast_rays(self.robot.x, self.robot.y, self.robot.heading,
                         self.spec.walls, centers, radii)

    def clearance(self, x: float, y: float) -> float:
        d = segment_distances(np.array([x, y]), self.spec.walls).min()
        for ob in self.obstacles:
            d = min(d, float(np.hypot(x - ob.pos[0], y - ob.pos[1]) - ob.radius))
        return float(d)

    def reset(self) -> np.ndarray:
        self.robot = RobotState(*self.spec.start_pose)
        self.obstacles = [DynamicObstacle(ob) for ob in self.spec.obstacles]
        for ob in self.obstacles:
            a = self.rng.uniform(0.0, 2.0 * np.pi)
            ob.direction = np.array([np.cos(a), np.sin(a)])
        self.tracker.reset()
        self.steps = 0
        self.done = False
        obs = self.scan()
        # the robot sees from its start pose before acting
        self.tracker.mark_scan(self.robot.x, self.robot.y, self.robot.heading, obs)
        return obs

    def step(self, action: Action) -> StepResult:
        if self.done:
            raise SteppedAfterDone("step() called on a finished episode; call reset()")
        v = float(np.clip(action.v, -V_MAX, V_MAX))
        omega = float(np.clip(action.omega, -OMEGA_MAX, OMEGA_MAX))

        advance_dynamic_obstacles(self.obstacles, self.spec.walls, self.rng)

        r = self.robot
        nx = r.x + v * np.cos(r.heading) * DT
        ny = r.y + v * np.sin(r.heading) * DT
        heading = wrap_angle(r.heading + omega * DT)

        collided = False
        if self.clearance(nx, ny) < ROBOT_RADIUS:
            collided = True
            nx, ny = self._roll_back(r.x, r.y, nx, ny)

        r.path_length += float(np.hypot(nx - r.x, ny - r.y))
        r.x, r.y, r.heading = nx, ny, heading
        self.steps += 1

        obs = self.scan()
        explored_delta = self.tracker.mark_scan(r.x, r.y, r.heading, obs)
        d_min = float(obs.min())
        reward = compute_reward(explored_delta, d_min, collided)
        self.done = collided or self.steps >= self.spec.step_limit
        return StepResult(obs, reward, self.done, collided, explored_delta)

    def _roll_back(self, x0, y0, x1, y1):
        """Largest motion fraction that keeps clearance >= robot radius."""
        if self.clearance(x0, y0) < ROBOT_RADIUS:
            return x0, y0
        lo, hi = 0.0, 1.0
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            mx, my = x0 + (x1 - x0) * mid, y0 + (y1 - y0) * mid
            if self.clearance(mx, my) >= ROBOT_RADIUS:
                lo = mid
            else:
                hi = mid
        return x0 + (x1 - x0) * lo, y0 + (y1 - y0) * lo


# ---------------------------------------------------------------------------
# environment files
# ---------------------------------------------------------------------------

def _data_dir():
    override = os.environ.get("DVXS_DATA_DIR")
    if override:
        return override
    return resources.files("dvxs").joinpath("data")


def load_environment(source: str) -> EnvironmentSpec:
    """Load an environment by built-in name or file path."""
    if os.path.exists(source):
        text = open(source).read()
        label = source
    else:
        base = _data_dir()
        if isinstance(base, str):
            path = os.path.join(base, f"{source}.env")
            if not os.path.exists(path):
                raise EnvironmentError_(f"unknown environment {source!r} (no file at {path})")
            text = open(path).read()
        else:
            candidate = base.joinpath(f"{source}.env")
            if not candidate.is_file():
                raise EnvironmentError_(
                    f"unknown environment {source!r}; built-ins: {', '.join(BUILTIN_ENVIRONMENTS)}")
            text = candidate.read_text()
        label = source
    return parse_environment(text, label)


def parse_environment(text: str, label: str = "<env>") -> EnvironmentSpec:
    name = None
    width = height = None
    start = None
    limit = None
    walls = []
    obstacles = []

    def fail(line_no, msg):
        raise EnvironmentError_(f"{label}:{line_no}: {msg}")

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key, args = parts[0], parts[1:]
        try:
            if key == "name":
                name = " ".join(args)
            elif key == "bounds":
                width, height = float(args[0]), float(args[1])
            elif key == "start_pose":
                start = (float(args[0]), float(args[1]), float(args[2]))
            elif key == "step_limit":
                limit = int(args[0])
            elif key == "wall":
                if len(args) != 4:
                    fail(line_no, f"wall needs 4 floats, got {len(args)}")
                walls.append([float(a) for a in args])
            elif key == "obstacle":
                if len(args) != 4:
                    fail(line_no, f"obstacle needs radius speed x y, got {len(args)} fields")
                obstacles.append(ObstacleSpec(float(args[0]), float(args[1]),
                                              float(args[2]), float(args[3])))
            else:
                fail(line_no, f"unknown key {key!r}")
        except (ValueError, IndexError) as e:
            if isinstance(e, EnvironmentError_):
                raise
            fail(line_no, f"bad value in {key!r} entry: {e}")

    for field_name, value in [("name", name), ("bounds", width), ("start_pose", start),
                              ("step_limit", limit)]:
        if value is None:
            raise EnvironmentError_(f"{label}: missing required key {field_name!r}")
    return EnvironmentSpec.create(name, width, height, walls, start, limit, obstacles)
