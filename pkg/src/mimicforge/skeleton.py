"""Robot/actor morphology, link mapping, and motion clip ingestion.

File formats are UTF-8 JSON (``*.skel.json``, ``*.clip.json``), documented in
``docs/formats.md``. Models and clips are immutable after load and safe to
share across rollout workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import geom

SKEL_FORMAT_VERSION = 1
CLIP_FORMAT_VERSION = 1


class SkeletonError(ValueError):
    """Raised for skeleton files that parse but violate model invariants."""


class ClipError(ValueError):
    """Raised for malformed or inconsistent motion clip data."""


# ---------------------------------------------------------------------------
# Geometry primitives (collision + contact footprint)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Capsule:
    p0: np.ndarray  # segment endpoints, link frame
    p1: np.ndarray
    radius: float

    kind = "capsule"


@dataclass(frozen=True)
class Box:
    center: np.ndarray  # link frame
    half_extents: np.ndarray

    kind = "box"


def _geometry_from_dict(d: dict, ctx: str):
    kind = d.get("kind")
    if kind == "capsule":
        return Capsule(np.asarray(d["p0"], float), np.asarray(d["p1"], float), float(d["radius"]))
    if kind == "box":
        return Box(np.asarray(d["center"], float), np.asarray(d["half_extents"], float))
    raise SkeletonError(f"{ctx}: unknown geometry kind {kind!r}")


def _geometry_to_dict(g) -> dict:
    if isinstance(g, Capsule):
        return {"kind": "capsule", "p0": list(g.p0), "p1": list(g.p1), "radius": g.radius}
    return {"kind": "box", "center": list(g.center), "half_extents": list(g.half_extents)}


# ---------------------------------------------------------------------------
# Links and skeletons
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinkSpec:
    """One rigid link plus the revolute joint stack connecting it to its parent.

    The link frame sits at the joint anchor; ``attach`` is the anchor position
    in the parent frame. ``joint_axes`` hold up to three ordered revolute axes
    (each in the frame left by the previous axis rotation). The root link has
    no parent, no axes, and a free-floating 6-DOF base.
    """

    name: str
    parent: str | None
    attach: np.ndarray
    joint_axes: tuple[np.ndarray, ...]
    joint_limits: tuple[tuple[float, float], ...]
    mass: float
    com: np.ndarray
    inertia: np.ndarray  # principal moments about the COM, link axes
    geometry: Capsule | Box
    local_unit_axis: np.ndarray
    chain_id: int
    chain_depth: int


@dataclass(frozen=True)
class SkeletonModel:
    """Validated kinematic tree: ordered links, collision pairs, foot labels."""

    name: str
    links: tuple[LinkSpec, ...]
    root: str
    collision_pairs: tuple[tuple[str, str], ...]
    feet: tuple[str, ...]

    _index: dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "_index", {l.name: i for i, l in enumerate(self.links)})
        _validate_skeleton(self)

    @property
    def link_names(self) -> tuple[str, ...]:
        return tuple(l.name for l in self.links)

    def link_index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise SkeletonError(f"unknown link {name!r} in skeleton {self.name!r}") from None

    def link(self, name: str) -> LinkSpec:
        return self.links[self.link_index(name)]

    @property
    def dof_count(self) -> int:
        return sum(len(l.joint_axes) for l in self.links)

    @property
    def dof_names(self) -> tuple[str, ...]:
        names = []
        for l in self.links:
            for k in range(len(l.joint_axes)):
                names.append(f"{l.name}[{k}]")
        return tuple(names)

    def joint_limits(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-DOF (lower, upper) arrays in tree order."""
        lo, hi = [], []
        for l in self.links:
            for a, b in l.joint_limits:
                lo.append(a)
                hi.append(b)
        return np.array(lo), np.array(hi)

    def dof_slice(self, link_name: str) -> slice:
        start = 0
        for l in self.links:
            n = len(l.joint_axes)
            if l.name == link_name:
                return slice(start, start + n)
            start += n
        raise SkeletonError(f"unknown link {link_name!r}")

    def fk(self, base_pos, base_quat, joint_q) -> tuple[np.ndarray, np.ndarray]:
        """Forward kinematics: world link origins (L,3) and orientations (L,4).

        Pure numpy reference implementation; the simulator has its own compiled
        path that is cross-checked against this one.
        """
        joint_q = np.asarray(joint_q, float)
        if joint_q.shape != (self.dof_count,):
            raise SkeletonError(f"expected {self.dof_count} joint angles, got {joint_q.shape}")
        pos = np.zeros((len(self.links), 3))
        quat = np.zeros((len(self.links), 4))
        pos[0] = np.asarray(base_pos, float)
        quat[0] = geom.quat_normalize(base_quat)
        dof = len(self.links[0].joint_axes)
        for i, l in enumerate(self.links[1:], start=1):
            p = self.link_index(l.parent)
            pos[i] = pos[p] + geom.rotate_vec(quat[p], l.attach)
            q = quat[p]
            for axis in l.joint_axes:
                q = geom.quat_mul(q, geom.quat_from_axis_angle(axis, joint_q[dof]))
                dof += 1
            quat[i] = geom.quat_normalize(q)
        return pos, quat


def _validate_skeleton(m: SkeletonModel) -> None:
    if not m.links:
        raise SkeletonError("skeleton has no links")
    names = [l.name for l in m.links]
    if len(set(names)) != len(names):
        raise SkeletonError("duplicate link names")
    if m.links[0].name != m.root:
        raise SkeletonError(f"root link {m.root!r} must be first; got {m.links[0].name!r}")
    if m.links[0].parent is not None or m.links[0].joint_axes:
        raise SkeletonError(f"root link {m.root!r} must have no parent and no joint axes")
    seen = {m.root}
    for l in m.links[1:]:
        if l.parent not in seen:
            raise SkeletonError(
                f"link {l.name!r}: parent {l.parent!r} must appear earlier in the link list"
            )
        seen.add(l.name)
    for l in m.links:
        if l.mass <= 0:
            raise SkeletonError(f"link {l.name!r}: mass must be > 0")
        if np.any(np.asarray(l.inertia) <= 0):
            raise SkeletonError(f"link {l.name!r}: inertia components must be > 0")
        if len(l.joint_axes) > 3:
            raise SkeletonError(f"link {l.name!r}: at most 3 joint axes")
        if len(l.joint_axes) != len(l.joint_limits):
            raise SkeletonError(f"link {l.name!r}: joint_axes/joint_limits length mismatch")
        for k, (lo, hi) in enumerate(l.joint_limits):
            if not lo < hi:
                raise SkeletonError(f"link {l.name!r}: axis {k} limits reversed ({lo} >= {hi})")
        for k, axis in enumerate(l.joint_axes):
            if abs(np.linalg.norm(axis) - 1.0) > 1e-6:
                raise SkeletonError(f"link {l.name!r}: joint axis {k} must be unit length")
        if abs(np.linalg.norm(l.local_unit_axis) - 1.0) > 1e-6:
            raise SkeletonError(f"link {l.name!r}: local_unit_axis must be unit length")
    for a, b in m.collision_pairs:
        if a == b:
            raise SkeletonError(f"collision pair ({a!r}, {b!r}) is a self-pair")
        for n in (a, b):
            if n not in m._index:
                raise SkeletonError(f"collision pair references unknown link {n!r}")
    for f in m.feet:
        if f not in m._index:
            raise SkeletonError(f"foot label references unknown link {f!r}")


def load_skeleton(path) -> SkeletonModel:
    """Load and validate a ``*.skel.json`` file."""
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise SkeletonError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    return skeleton_from_dict(raw, ctx=str(path))


def skeleton_from_dict(raw: dict, ctx: str = "<dict>") -> SkeletonModel:
    version = raw.get("format_version")
    if version != SKEL_FORMAT_VERSION:
        raise SkeletonError(f"{ctx}: unsupported skeleton format_version {version!r}")
    links = []
    for i, d in enumerate(raw.get("links", [])):
        lctx = f"{ctx}: link {i} ({d.get('name', '?')!r})"
        try:
            links.append(
                LinkSpec(
                    name=d["name"],
                    parent=d["parent"],
                    attach=np.asarray(d.get("attach", [0, 0, 0]), float),
                    joint_axes=tuple(np.asarray(a, float) for a in d.get("joint_axes", [])),
                    joint_limits=tuple(
                        (float(a), float(b)) for a, b in d.get("joint_limits", [])
                    ),
                    mass=float(d["mass"]),
                    com=np.asarray(d["com"], float),
                    inertia=np.asarray(d["inertia"], float),
                    geometry=_geometry_from_dict(d["geometry"], lctx),
                    local_unit_axis=np.asarray(d["local_unit_axis"], float),
                    chain_id=int(d.get("chain_id", 0)),
                    chain_depth=int(d.get("chain_depth", 0)),
                )
            )
        except KeyError as e:
            raise SkeletonError(f"{lctx}: missing field {e.args[0]!r}") from None
    return SkeletonModel(
        name=raw.get("name", "unnamed"),
        links=tuple(links),
        root=raw["root"],
        collision_pairs=tuple((a, b) for a, b in raw.get("collision_pairs", [])),
        feet=tuple(raw.get("feet", [])),
    )


def skeleton_to_dict(m: SkeletonModel) -> dict:
    return {
        "format_version": SKEL_FORMAT_VERSION,
        "name": m.name,
        "root": m.root,
        "feet": list(m.feet),
        "collision_pairs": [list(p) for p in m.collision_pairs],
        "links": [
            {
                "name": l.name,
                "parent": l.parent,
                "attach": list(l.attach),
                "joint_axes": [list(a) for a in l.joint_axes],
                "joint_limits": [list(ab) for ab in l.joint_limits],
                "mass": l.mass,
                "com": list(l.com),
                "inertia": list(l.inertia),
                "geometry": _geometry_to_dict(l.geometry),
                "local_unit_axis": list(l.local_unit_axis),
                "chain_id": l.chain_id,
                "chain_depth": l.chain_depth,
            }
            for l in m.links
        ],
    }


def save_skeleton(m: SkeletonModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(skeleton_to_dict(m), fh, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Link mapping (agent <-> actor)
# ---------------------------------------------------------------------------

METRIC_QUAT = "quat"
METRIC_AXIS = "axis"


@dataclass(frozen=True)
class MapEntry:
    agent_link: str
    actor_link: str
    metric: str  # METRIC_QUAT or METRIC_AXIS
    weight: float


@dataclass(frozen=True)
class LinkMap:
    """Ordered agent-to-actor link assignments with per-entry metric and weight.

    Unmapped agent links are allowed and rotate freely. Within one chain the
    weights must be nonincreasing with chain depth so that chain roots dominate
    the tracking error.
    """

    entries: tuple[MapEntry, ...]

    def validate(self, agent: SkeletonModel, actor: SkeletonModel) -> None:
        seen = set()
        for e in self.entries:
            if e.metric not in (METRIC_QUAT, METRIC_AXIS):
                raise SkeletonError(f"map entry {e.agent_link!r}: bad metric {e.metric!r}")
            if e.weight <= 0:
                raise SkeletonError(f"map entry {e.agent_link!r}: weight must be > 0")
            if e.agent_link in seen:
                raise SkeletonError(f"agent link {e.agent_link!r} mapped more than once")
            seen.add(e.agent_link)
            agent.link_index(e.agent_link)
            actor.link_index(e.actor_link)
        by_chain: dict[int, list[tuple[int, float]]] = {}
        for e in self.entries:
            l = agent.link(e.agent_link)
            by_chain.setdefault(l.chain_id, []).append((l.chain_depth, e.weight))
        for chain, pairs in by_chain.items():
            pairs.sort()
            for (d0, w0), (d1, w1) in zip(pairs, pairs[1:]):
                if d1 > d0 and w1 > w0 + 1e-12:
                    raise SkeletonError(
                        f"chain {chain}: weight increases with depth ({w0} -> {w1})"
                    )

    def bind(self, agent: SkeletonModel, actor: SkeletonModel,
             quat_variant: str = "squared_sum") -> "BoundLinkMap":
        self.validate(agent, actor)
        return BoundLinkMap(
            entries=self.entries,
            agent_links=tuple(e.agent_link for e in self.entries),
            actor_index=np.array([actor.link_index(e.actor_link) for e in self.entries]),
            agent_index=np.array([agent.link_index(e.agent_link) for e in self.entries]),
            metrics=tuple(e.metric for e in self.entries),
            weights=np.array([e.weight for e in self.entries]),
            agent_axes=tuple(agent.link(e.agent_link).local_unit_axis for e in self.entries),
            actor_axes=tuple(actor.link(e.actor_link).local_unit_axis for e in self.entries),
            quat_variant=quat_variant,
        )

    def to_list(self) -> list:
        return [[e.agent_link, e.actor_link, e.metric, e.weight] for e in self.entries]

    @staticmethod
    def from_list(rows) -> "LinkMap":
        return LinkMap(tuple(MapEntry(a, t, m, float(w)) for a, t, m, w in rows))


@dataclass(frozen=True)
class BoundLinkMap:
    """LinkMap resolved against concrete skeletons (indices, axes, metric fns)."""

    entries: tuple[MapEntry, ...]
    agent_links: tuple[str, ...]
    actor_index: np.ndarray
    agent_index: np.ndarray
    metrics: tuple[str, ...]
    weights: np.ndarray
    agent_axes: tuple[np.ndarray, ...]
    actor_axes: tuple[np.ndarray, ...]
    quat_variant: str

    def __len__(self) -> int:
        return len(self.entries)


def default_link_map(agent: SkeletonModel, actor: SkeletonModel,
                     decay: float = 0.7) -> LinkMap:
    """Name-matched map: quaternion metric where the agent link has >= 2 joint
    axes (or is the floating root), unit-axis metric otherwise. Weights decay
    geometrically with chain depth."""
    entries = []
    for l in agent.links:
        if l.name not in actor.link_names:
            continue
        full = len(l.joint_axes) >= 2 or l.parent is None
        entries.append(
            MapEntry(
                agent_link=l.name,
                actor_link=l.name,
                metric=METRIC_QUAT if full else METRIC_AXIS,
                weight=1.0 * decay**l.chain_depth,
            )
        )
    m = LinkMap(tuple(entries))
    m.validate(agent, actor)
    return m


def retarget_frame(frame: "ClipFrame", link_map: BoundLinkMap, agent_pose) -> np.ndarray:
    """Per-map-entry distance between agent pose and target frame.

    ``agent_pose`` maps agent link name -> world orientation quaternion.
    Entries use their own metric: relative-quaternion distance or the angle
    between the world-frame link unit axes.
    """
    out = np.empty(len(link_map))
    for i, e in enumerate(link_map.entries):
        try:
            q_agent = agent_pose[e.agent_link]
        except KeyError:
            raise LookupError(
                f"agent pose does not provide mapped link {e.agent_link!r}"
            ) from None
        q_target = frame.quats[link_map.actor_index[i]]
        if link_map.metrics[i] == METRIC_QUAT:
            out[i] = geom.quat_dist(q_agent, q_target, variant=link_map.quat_variant)
        else:
            e_a = geom.rotate_vec(q_agent, link_map.agent_axes[i])
            e_t = geom.rotate_vec(q_target, link_map.actor_axes[i])
            out[i] = geom.axis_dist(e_a, e_t)
    return out


# ---------------------------------------------------------------------------
# Motion clips
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClipFrame:
    """One clip sample: world link orientations/angular velocities + foot flags."""

    link_names: tuple[str, ...]
    quats: np.ndarray  # (L, 4)
    omegas: np.ndarray  # (L, 3) world frame, rad/s
    feet: tuple[str, ...]
    ground: np.ndarray  # (n_feet,) bool

    def quat_of(self, link: str) -> np.ndarray:
        return self.quats[self.link_names.index(link)]

    def omega_of(self, link: str) -> np.ndarray:
        return self.omegas[self.link_names.index(link)]


@dataclass(frozen=True)
class MotionClip:
    """Immutable array-backed motion clip at a fixed frame rate."""

    frame_rate: float
    link_names: tuple[str, ...]
    feet: tuple[str, ...]
    quats: np.ndarray  # (F, L, 4)
    omegas: np.ndarray  # (F, L, 3)
    ground: np.ndarray  # (F, n_feet) bool
    loopable: bool
    foot_pos: np.ndarray | None = None  # optional (F, n_feet, 3) channel

    @property
    def n_frames(self) -> int:
        return self.quats.shape[0]

    @property
    def duration(self) -> float:
        return self.n_frames / self.frame_rate

    def frame(self, i: int) -> ClipFrame:
        return ClipFrame(self.link_names, self.quats[i], self.omegas[i], self.feet,
                         self.ground[i])

    def sample(self, t: float) -> ClipFrame:
        """Interpolated frame at time t: shortest-arc orientation blend, linear
        angular velocities, floor-frame ground flags. Wraps when loopable,
        clamps to the last frame otherwise."""
        ft = t * self.frame_rate
        n = self.n_frames
        if self.loopable:
            ft = ft % n
            i0 = int(math.floor(ft)) % n
            i1 = (i0 + 1) % n
            a = ft - math.floor(ft)
        else:
            if ft >= n - 1:
                return self.frame(n - 1)
            if ft <= 0:
                return self.frame(0)
            i0 = int(math.floor(ft))
            i1 = i0 + 1
            a = ft - i0
        quats = _slerp_rows(self.quats[i0], self.quats[i1], a)
        omegas = (1.0 - a) * self.omegas[i0] + a * self.omegas[i1]
        return ClipFrame(self.link_names, quats, omegas, self.feet, self.ground[i0])

    def frame_index_at(self, t: float) -> int:
        """Nearest stored frame index for time t (wrapping when loopable)."""
        i = int(round(t * self.frame_rate))
        return i % self.n_frames if self.loopable else min(i, self.n_frames - 1)


def _slerp_rows(q0: np.ndarray, q1: np.ndarray, a: float) -> np.ndarray:
    """Row-wise shortest-arc slerp for (L, 4) quaternion arrays."""
    dot = np.sum(q0 * q1, axis=1)
    sign = np.where(dot < 0.0, -1.0, 1.0)
    q1 = q1 * sign[:, None]
    dot = np.minimum(np.abs(dot), 1.0)
    theta = np.arccos(dot)
    small = theta < 1e-9
    sin_t = np.where(small, 1.0, np.sin(theta))
    w0 = np.where(small, 1.0 - a, np.sin((1.0 - a) * theta) / sin_t)
    w1 = np.where(small, a, np.sin(a * theta) / sin_t)
    out = w0[:, None] * q0 + w1[:, None] * q1
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def _recompute_omegas(quats: np.ndarray, rate: float) -> np.ndarray:
    """World angular velocities by finite difference of consecutive frames."""
    F, L, _ = quats.shape
    om = np.zeros((F, L, 3))
    for f in range(1, F):
        for l in range(L):
            dq = geom.quat_mul(quats[f, l], geom.quat_conj(quats[f - 1, l]))
            om[f, l] = geom.rotation_vector(geom.quat_normalize(dq)) * rate
    if F > 1:
        om[0] = om[1]
    return om


def load_clip(path, actor_skeleton: SkeletonModel) -> MotionClip:
    """Load a ``*.clip.json`` file against the actor skeleton.

    The frame link set must match the skeleton's links; orientations are
    re-normalized; angular velocities are recomputed by finite difference
    when the file omits them.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ClipError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    return clip_from_dict(raw, actor_skeleton, ctx=str(path))


def clip_from_dict(raw: dict, actor_skeleton: SkeletonModel, ctx: str = "<dict>") -> MotionClip:
    version = raw.get("format_version")
    if version != CLIP_FORMAT_VERSION:
        raise ClipError(f"{ctx}: unsupported clip format_version {version!r}")
    rate = float(raw["frame_rate"])
    if rate <= 0:
        raise ClipError(f"{ctx}: frame_rate must be > 0, got {rate}")
    links = tuple(raw["links"])
    if set(links) != set(actor_skeleton.link_names):
        missing = set(actor_skeleton.link_names) - set(links)
        extra = set(links) - set(actor_skeleton.link_names)
        raise ClipError(f"{ctx}: clip links do not match skeleton "
                        f"(missing {sorted(missing)}, extra {sorted(extra)})")
    feet = tuple(raw.get("feet", actor_skeleton.feet))
    if set(feet) != set(actor_skeleton.feet):
        raise ClipError(f"{ctx}: clip feet {feet} do not match skeleton feet "
                        f"{actor_skeleton.feet}")
    frames = raw["frames"]
    if not frames:
        raise ClipError(f"{ctx}: clip has no frames")

    # Reorder columns into skeleton link order.
    order = [links.index(n) for n in actor_skeleton.link_names]
    foot_order = [feet.index(n) for n in actor_skeleton.feet]
    F, L, nf = len(frames), len(order), len(foot_order)

    quats = np.zeros((F, L, 4))
    omegas = np.zeros((F, L, 3))
    ground = np.zeros((F, nf), bool)
    have_omegas = all("omegas" in fr for fr in frames)
    foot_pos = None
    if all("foot_pos" in fr for fr in frames):
        foot_pos = np.zeros((F, nf, 3))

    for f, fr in enumerate(frames):
        q = np.asarray(fr["quats"], float)
        if q.shape != (L, 4):
            raise ClipError(f"{ctx}: frame {f}: expected {L} quaternions, got {q.shape}")
        if not np.all(np.isfinite(q)):
            raise ClipError(f"{ctx}: frame {f}: non-finite orientation values")
        for l, src in enumerate(order):
            quats[f, l] = geom.quat_normalize(q[src])
        if have_omegas:
            om = np.asarray(fr["omegas"], float)
            if om.shape != (L, 3) or not np.all(np.isfinite(om)):
                raise ClipError(f"{ctx}: frame {f}: bad angular velocities")
            omegas[f] = om[order]
        g = fr.get("ground")
        if g is None:
            raise ClipError(f"{ctx}: frame {f}: missing ground flags for feet "
                            f"{list(actor_skeleton.feet)}")
        for j, src in enumerate(foot_order):
            if src >= len(g) or g[src] is None:
                raise ClipError(f"{ctx}: frame {f}: missing ground flag for foot "
                                f"{actor_skeleton.feet[j]!r}")
            ground[f, j] = bool(g[src])
        if foot_pos is not None:
            fp = np.asarray(fr["foot_pos"], float)
            if fp.shape != (nf, 3) or not np.all(np.isfinite(fp)):
                raise ClipError(f"{ctx}: frame {f}: bad foot positions")
            foot_pos[f] = fp[foot_order]

    if not have_omegas:
        omegas = _recompute_omegas(quats, rate)

    return MotionClip(
        frame_rate=rate,
        link_names=actor_skeleton.link_names,
        feet=actor_skeleton.feet,
        quats=quats,
        omegas=omegas,
        ground=ground,
        loopable=bool(raw.get("loopable", False)),
        foot_pos=foot_pos,
    )


def clip_to_dict(clip: MotionClip) -> dict:
    frames = []
    for f in range(clip.n_frames):
        fr = {
            "quats": [list(q) for q in clip.quats[f]],
            "omegas": [list(o) for o in clip.omegas[f]],
            "ground": [bool(b) for b in clip.ground[f]],
        }
        if clip.foot_pos is not None:
            fr["foot_pos"] = [list(p) for p in clip.foot_pos[f]]
        frames.append(fr)
    return {
        "format_version": CLIP_FORMAT_VERSION,
        "frame_rate": clip.frame_rate,
        "loopable": clip.loopable,
        "links": list(clip.link_names),
        "feet": list(clip.feet),
        "frames": frames,
    }


def save_clip(clip: MotionClip, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(clip_to_dict(clip), fh)
        fh.write("\n")


def annotate_ground_flags(clip: MotionClip, height_threshold: float,
                          speed_threshold: float) -> MotionClip:
    """Recompute per-frame foot ground flags from the foot position channel.

    A foot is flagged on the ground when its height is below
    ``height_threshold`` and its speed below ``speed_threshold``.
    """
    if clip.foot_pos is None:
        raise ClipError(
            "clip has no foot position channel; set ground flags manually in the "
            "clip file instead"
        )
    F, nf, _ = clip.foot_pos.shape
    speed = np.zeros((F, nf))
    if F > 1:
        d = np.linalg.norm(np.diff(clip.foot_pos, axis=0), axis=2) * clip.frame_rate
        speed[1:] = d
        speed[0] = d[0]
    ground = (clip.foot_pos[:, :, 2] < height_threshold) & (speed < speed_threshold)
    return MotionClip(
        frame_rate=clip.frame_rate,
        link_names=clip.link_names,
        feet=clip.feet,
        quats=clip.quats,
        omegas=clip.omegas,
        ground=ground,
        loopable=clip.loopable,
        foot_pos=clip.foot_pos,
    )
