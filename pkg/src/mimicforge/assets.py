"""Bundled test robots, matching actor morphologies, and synthetic clip makers.

Real capture data is out of reach at desk scale, so the reference motions
here are generated kinematically on the actor skeleton: a lateral balance
shift, an arm wave, and a loopable procedural walk cycle. Actors carry
3-axis joints and longer limbs than the agents, so both distance metrics of
the retargeting map get exercised.
"""

from __future__ import annotations

import importlib.resources
import math

import numpy as np

from . import geom
from .skeleton import (
    Box,
    Capsule,
    LinkSpec,
    MotionClip,
    SkeletonModel,
    annotate_ground_flags,
    load_skeleton,
    save_skeleton,
    skeleton_from_dict,
    skeleton_to_dict,
)

_DOWN = np.array([0.0, 0.0, -1.0])
_UP = np.array([0.0, 0.0, 1.0])
_PITCH = np.array([0.0, 1.0, 0.0])
_ROLL = np.array([1.0, 0.0, 0.0])
_YAW = np.array([0.0, 0.0, 1.0])


def _rod_inertia(mass: float, length: float, radius: float) -> np.ndarray:
    t = mass * (3 * radius**2 + length**2) / 12.0
    a = max(mass * radius**2 / 2.0, 1e-7)
    return np.array([t, t, a])


def _box_inertia(mass: float, half) -> np.ndarray:
    lx, ly, lz = (2 * np.asarray(half)) ** 2
    return mass / 12.0 * np.array([ly + lz, lx + lz, lx + ly])


def _leg(side: str, y: float, thigh_l: float, shin_l: float, chain: int) -> list[LinkSpec]:
    s = side
    return [
        LinkSpec(
            name=f"thigh_{s}", parent="torso", attach=np.array([0.0, y, 0.0]),
            joint_axes=(_PITCH, _ROLL),
            joint_limits=((-1.6, 1.6), (-0.8, 0.8)),
            mass=0.12, com=np.array([0.0, 0.0, -thigh_l / 2]),
            inertia=_rod_inertia(0.12, thigh_l, 0.012),
            geometry=Capsule(np.zeros(3), np.array([0.0, 0.0, -thigh_l]), 0.012),
            local_unit_axis=_DOWN, chain_id=chain, chain_depth=0,
        ),
        LinkSpec(
            name=f"shin_{s}", parent=f"thigh_{s}", attach=np.array([0.0, 0.0, -thigh_l]),
            joint_axes=(_PITCH,),
            joint_limits=((-2.2, 0.05),),
            mass=0.08, com=np.array([0.0, 0.0, -shin_l / 2]),
            inertia=_rod_inertia(0.08, shin_l, 0.011),
            geometry=Capsule(np.zeros(3), np.array([0.0, 0.0, -shin_l]), 0.011),
            local_unit_axis=_DOWN, chain_id=chain, chain_depth=1,
        ),
        LinkSpec(
            name=f"foot_{s}", parent=f"shin_{s}", attach=np.array([0.0, 0.0, -shin_l]),
            joint_axes=(_PITCH, _ROLL),
            joint_limits=((-0.9, 0.9), (-0.6, 0.6)),
            mass=0.05, com=np.array([0.0, 0.0, -0.008]),
            inertia=_box_inertia(0.05, [0.045, 0.022, 0.008]),
            geometry=Box(np.array([0.0, 0.0, -0.008]), np.array([0.045, 0.022, 0.008])),
            local_unit_axis=_UP, chain_id=chain, chain_depth=2,
        ),
    ]


def biped9() -> SkeletonModel:
    """9-link, 12-DOF biped: torso, 2x(thigh/shin/foot), 2 pendulum arms."""
    links = [
        LinkSpec(
            name="torso", parent=None, attach=np.zeros(3),
            joint_axes=(), joint_limits=(),
            mass=0.88, com=np.array([0.0, 0.0, 0.05]),
            inertia=_box_inertia(0.88, [0.045, 0.035, 0.055]),
            geometry=Box(np.array([0.0, 0.0, 0.05]), np.array([0.045, 0.035, 0.055])),
            local_unit_axis=_UP, chain_id=0, chain_depth=0,
        ),
    ]
    links += _leg("l", +0.035, 0.065, 0.065, chain=1)
    links += _leg("r", -0.035, 0.065, 0.065, chain=2)
    for s, y, chain in (("l", +0.055, 3), ("r", -0.055, 4)):
        links.append(
            LinkSpec(
                name=f"arm_{s}", parent="torso", attach=np.array([0.0, y, 0.095]),
                joint_axes=(_PITCH,),
                joint_limits=((-2.6, 2.6),),
                mass=0.06, com=np.array([0.0, 0.0, -0.035]),
                inertia=_rod_inertia(0.06, 0.07, 0.009),
                geometry=Capsule(np.zeros(3), np.array([0.0, 0.0, -0.07]), 0.009),
                local_unit_axis=_DOWN, chain_id=chain, chain_depth=0,
            )
        )
    return SkeletonModel(
        name="biped9",
        links=tuple(links),
        root="torso",
        collision_pairs=(
            ("thigh_l", "thigh_r"),
            ("shin_l", "shin_r"),
            ("foot_l", "foot_r"),
            ("arm_l", "torso"),
            ("arm_r", "torso"),
        ),
        feet=("foot_l", "foot_r"),
    )


def humanoid13() -> SkeletonModel:
    """13-link, 18-DOF humanoid: pelvis root, waist, neck, 2-link arms, legs."""
    links = [
        LinkSpec(
            name="pelvis", parent=None, attach=np.zeros(3),
            joint_axes=(), joint_limits=(),
            mass=0.32, com=np.array([0.0, 0.0, 0.01]),
            inertia=_box_inertia(0.32, [0.04, 0.035, 0.03]),
            geometry=Box(np.array([0.0, 0.0, 0.01]), np.array([0.04, 0.035, 0.03])),
            local_unit_axis=_UP, chain_id=0, chain_depth=0,
        ),
        LinkSpec(
            name="torso", parent="pelvis", attach=np.array([0.0, 0.0, 0.05]),
            joint_axes=(_PITCH,), joint_limits=((-0.6, 0.6),),
            mass=0.45, com=np.array([0.0, 0.0, 0.045]),
            inertia=_box_inertia(0.45, [0.045, 0.04, 0.05]),
            geometry=Box(np.array([0.0, 0.0, 0.045]), np.array([0.045, 0.04, 0.05])),
            local_unit_axis=_UP, chain_id=0, chain_depth=1,
        ),
        LinkSpec(
            name="head", parent="torso", attach=np.array([0.0, 0.0, 0.1]),
            joint_axes=(_PITCH,), joint_limits=((-0.7, 0.7),),
            mass=0.10, com=np.array([0.0, 0.0, 0.02]),
            inertia=np.array([4e-5, 4e-5, 4e-5]),
            geometry=Capsule(np.zeros(3), np.array([0.0, 0.0, 0.035]), 0.02),
            local_unit_axis=_UP, chain_id=0, chain_depth=2,
        ),
    ]
    for s, y, chain in (("l", +0.06, 1), ("r", -0.06, 2)):
        roll_lim = (-0.3, 1.6) if s == "l" else (-1.6, 0.3)
        links += [
            LinkSpec(
                name=f"uarm_{s}", parent="torso", attach=np.array([0.0, y, 0.08]),
                joint_axes=(_PITCH, _ROLL), joint_limits=((-2.6, 2.6), roll_lim),
                mass=0.05, com=np.array([0.0, 0.0, -0.025]),
                inertia=_rod_inertia(0.05, 0.05, 0.009),
                geometry=Capsule(np.zeros(3), np.array([0.0, 0.0, -0.05]), 0.009),
                local_unit_axis=_DOWN, chain_id=chain, chain_depth=0,
            ),
            LinkSpec(
                name=f"farm_{s}", parent=f"uarm_{s}", attach=np.array([0.0, 0.0, -0.05]),
                joint_axes=(_PITCH,), joint_limits=((-2.3, 0.05),),
                mass=0.04, com=np.array([0.0, 0.0, -0.0225]),
                inertia=_rod_inertia(0.04, 0.045, 0.008),
                geometry=Capsule(np.zeros(3), np.array([0.0, 0.0, -0.045]), 0.008),
                local_unit_axis=_DOWN, chain_id=chain, chain_depth=1,
            ),
        ]
    for s, y, chain in (("l", +0.035, 3), ("r", -0.035, 4)):
        leg = _leg(s, y, 0.06, 0.06, chain)
        fixed = []
        for l in leg:
            if l.parent == "torso":
                fixed.append(
                    LinkSpec(**{**l.__dict__, "parent": "pelvis",
                                "attach": np.array([0.0, y, -0.02])})
                )
            else:
                fixed.append(l)
        links += [
            LinkSpec(**{**l.__dict__, "mass": l.mass * 0.9,
                        "inertia": np.asarray(l.inertia) * 0.9})
            for l in fixed
        ]
    return SkeletonModel(
        name="humanoid13",
        links=tuple(links),
        root="pelvis",
        collision_pairs=(
            ("thigh_l", "thigh_r"),
            ("shin_l", "shin_r"),
            ("foot_l", "foot_r"),
            ("farm_l", "torso"),
            ("farm_r", "torso"),
            ("uarm_l", "torso"),
            ("uarm_r", "torso"),
        ),
        feet=("foot_l", "foot_r"),
    )


def _actor_variant(agent: SkeletonModel, name: str, limb_scale: float = 1.25) -> SkeletonModel:
    """Actor morphology for an agent: same link set, longer limbs, and full
    3-axis joints everywhere, so agents lack DOF relative to the actor."""
    links = []
    for l in agent.links:
        if l.parent is None:
            axes, limits = (), ()
        else:
            axes = (_PITCH, _ROLL, _YAW)
            limits = ((-math.pi, math.pi),) * 3
        scale = limb_scale if l.parent is not None else 1.0
        g = l.geometry
        if isinstance(g, Capsule):
            g = Capsule(g.p0 * scale, g.p1 * scale, g.radius)
        links.append(
            LinkSpec(
                name=l.name, parent=l.parent, attach=l.attach * scale,
                joint_axes=axes, joint_limits=limits,
                mass=l.mass, com=l.com * scale, inertia=l.inertia,
                geometry=g, local_unit_axis=l.local_unit_axis,
                chain_id=l.chain_id, chain_depth=l.chain_depth,
            )
        )
    return SkeletonModel(
        name=name,
        links=tuple(links),
        root=agent.root,
        collision_pairs=agent.collision_pairs,
        feet=agent.feet,
    )


def actor9() -> SkeletonModel:
    return _actor_variant(biped9(), "actor9")


def actor13() -> SkeletonModel:
    return _actor_variant(humanoid13(), "actor13")


# ---------------------------------------------------------------------------
# Clip generation
# ---------------------------------------------------------------------------


def _sole_offset(skel: SkeletonModel, foot: str) -> np.ndarray:
    g = skel.link(foot).geometry
    if isinstance(g, Box):
        return g.center + np.array([0.0, 0.0, -g.half_extents[2]])
    return np.asarray(g.p1, float)


def standing_base_height(skel: SkeletonModel) -> float:
    """Root height with all joints at zero and the foot soles on the ground."""
    pos, quats = skel.fk(np.zeros(3), geom.quat_identity(), np.zeros(skel.dof_count))
    lowest = 0.0
    for foot in skel.feet:
        i = skel.link_index(foot)
        sole = pos[i] + geom.rotate_vec(quats[i], _sole_offset(skel, foot))
        lowest = min(lowest, sole[2])
    return -lowest


def generate_clip(actor: SkeletonModel, duration: float, rate: float, pose_fn,
                  base_fn=None, flags_fn=None, loopable: bool = False) -> MotionClip:
    """Build a clip by forward kinematics on the actor skeleton.

    ``pose_fn(t)`` returns the actor joint vector; ``base_fn(t)`` the root
    (position, quaternion); ``flags_fn(t)`` explicit per-foot ground flags.
    Angular velocities come from finite differences of the sampled frames and
    a foot position channel is always attached.
    """
    h0 = standing_base_height(actor)
    n = max(2, int(round(duration * rate)))
    L = len(actor.links)
    nf = len(actor.feet)
    quats = np.zeros((n, L, 4))
    ground = np.ones((n, nf), bool)
    foot_pos = np.zeros((n, nf, 3))
    foot_idx = [actor.link_index(f) for f in actor.feet]
    soles = [_sole_offset(actor, f) for f in actor.feet]
    for f in range(n):
        t = f / rate
        if base_fn is not None:
            base_pos, base_quat = base_fn(t)
        else:
            base_pos, base_quat = np.array([0.0, 0.0, h0]), geom.quat_identity()
        pos, q = actor.fk(base_pos, base_quat, pose_fn(t))
        quats[f] = q
        for j, (i, sole) in enumerate(zip(foot_idx, soles)):
            foot_pos[f, j] = pos[i] + geom.rotate_vec(q[i], sole)
        if flags_fn is not None:
            ground[f] = np.asarray(flags_fn(t), bool)
    omegas = _fd_omegas(quats, rate, loopable)
    return MotionClip(
        frame_rate=rate,
        link_names=actor.link_names,
        feet=actor.feet,
        quats=quats,
        omegas=omegas,
        ground=ground,
        loopable=loopable,
        foot_pos=foot_pos,
    )


def _fd_omegas(quats: np.ndarray, rate: float, loopable: bool) -> np.ndarray:
    F, L, _ = quats.shape
    om = np.zeros((F, L, 3))
    for f in range(F):
        prev = (f - 1) % F if loopable else max(f - 1, 0)
        if prev == f:
            continue
        for l in range(L):
            dq = geom.quat_mul(quats[f, l], geom.quat_conj(quats[prev, l]))
            om[f, l] = geom.rotation_vector(geom.quat_normalize(dq)) * rate
    if not loopable and F > 1:
        om[0] = om[1]
    return om


def _actor_pose_writer(actor: SkeletonModel):
    """Returns (vector factory, setter) addressing actor DOFs by link + axis."""
    slices = {l.name: actor.dof_slice(l.name) for l in actor.links if l.parent}

    def set_axis(q: np.ndarray, link: str, axis: int, value: float) -> None:
        q[slices[link].start + axis] = value

    return lambda: np.zeros(actor.dof_count), set_axis


def make_balance_clip(actor: SkeletonModel, duration: float = 8.0,
                      rate: float = 50.0) -> MotionClip:
    """Gentle lateral weight shift with a touch of arm sway; feet stay planted."""
    new_pose, set_axis = _actor_pose_writer(actor)
    h0 = standing_base_height(actor)
    amp, freq = 0.06, 0.25
    arm = "arm_l" if "arm_l" in actor.link_names else "uarm_l"
    arm_r = arm.replace("_l", "_r")

    def pose_fn(t):
        roll = amp * math.sin(2 * math.pi * freq * t)
        q = new_pose()
        for thigh in ("thigh_l", "thigh_r"):
            set_axis(q, thigh, 1, -roll)  # keep legs vertical under the rolled torso
        set_axis(q, arm, 0, 0.25 * math.sin(2 * math.pi * freq * t))
        set_axis(q, arm_r, 0, -0.25 * math.sin(2 * math.pi * freq * t))
        return q

    def base_fn(t):
        roll = amp * math.sin(2 * math.pi * freq * t)
        return (
            np.array([0.0, -0.3 * h0 * math.sin(roll), h0]),
            geom.quat_from_axis_angle([1, 0, 0], roll),
        )

    return generate_clip(actor, duration, rate, pose_fn, base_fn=base_fn,
                         flags_fn=lambda t: [True] * len(actor.feet))


def make_wave_clip(actor: SkeletonModel, duration: float = 6.0,
                   rate: float = 50.0) -> MotionClip:
    """Asymmetric arm wave while standing; feet stay planted."""
    new_pose, set_axis = _actor_pose_writer(actor)
    arm = "arm_r" if "arm_r" in actor.link_names else "uarm_r"

    def pose_fn(t):
        q = new_pose()
        lift = min(1.0, 2.0 * t) * 2.0
        set_axis(q, arm, 0, -lift + 0.35 * math.sin(2 * math.pi * 1.0 * t))
        return q

    return generate_clip(actor, duration, rate, pose_fn,
                         flags_fn=lambda t: [True] * len(actor.feet))


def make_walk_clip(actor: SkeletonModel, cycles: int = 4, period: float = 1.0,
                   rate: float = 50.0, hip_amp: float = 0.28,
                   knee_amp: float = 0.7) -> MotionClip:
    """Loopable procedural walk cycle with phase-derived ground flags.

    Left and right legs run half a period out of phase; the swing leg flexes
    the knee for clearance, the ankle keeps the foot level, and the base
    advances at the stance-sweep speed while tracking the stance-leg height
    so planted soles stay near the ground.
    """
    new_pose, set_axis = _actor_pose_writer(actor)
    h0 = standing_base_height(actor)
    leg_len = -float(actor.link("shin_l").attach[2]) * 2.0
    omega = 2 * math.pi / period
    # The stance hip sweeps linearly from +amp to -amp over the half period;
    # the base advances at the matching speed so planted soles stay put.
    speed = leg_len * math.sin(hip_amp) * 2.0 / (period / 2.0)

    def leg_angles(phase):
        # Positive hip pitch (about +y) moves the foot backward, so the
        # stance sweep runs -amp -> +amp while the base advances.
        p = phase % (2 * math.pi)
        if p < math.pi:  # swing: smooth return +amp -> -amp, knee lifts
            hip = hip_amp * math.cos(p)
            knee = -knee_amp * math.sin(p) ** 2
        else:  # stance: linear sweep -amp -> +amp, leg straight
            hip = -hip_amp * (1.0 - 2.0 * (p - math.pi) / math.pi)
            knee = 0.0
        ankle = -(hip + knee)
        return hip, knee, ankle

    def pose_fn(t):
        q = new_pose()
        phi = omega * t
        for side, phase in (("l", phi), ("r", phi + math.pi)):
            hip, knee, ankle = leg_angles(phase)
            set_axis(q, f"thigh_{side}", 0, hip)
            set_axis(q, f"shin_{side}", 0, knee)
            set_axis(q, f"foot_{side}", 0, ankle)
        arm = "arm" if "arm_l" in actor.link_names else "uarm"
        set_axis(q, f"{arm}_l", 0, -0.25 * math.sin(phi))
        set_axis(q, f"{arm}_r", 0, 0.25 * math.sin(phi))
        return q

    def stance_hip(phi):
        p_l = phi % (2 * math.pi)
        p = p_l if p_l >= math.pi else (p_l + math.pi) % (2 * math.pi)
        return hip_amp * (1.0 - 2.0 * (p - math.pi) / math.pi)

    def base_fn(t):
        phi = omega * t
        # Track the stance-leg vertical extent so its sole stays near z=0.
        drop = leg_len * (1.0 - math.cos(stance_hip(phi)))
        sway = 0.008 * math.sin(phi)
        lean = geom.quat_from_axis_angle([0, 1, 0], 0.04)
        return np.array([speed * t, sway, h0 - drop - 0.0005]), lean

    def flags_fn(t):
        phi = omega * t
        flags = []
        for side, phase in (("l", phi), ("r", phi + math.pi)):
            flags.append(phase % (2 * math.pi) >= math.pi)
        return flags

    return generate_clip(actor, cycles * period, rate, pose_fn, base_fn=base_fn,
                         flags_fn=flags_fn, loopable=True)


# ---------------------------------------------------------------------------
# Simple test rigs
# ---------------------------------------------------------------------------


def make_pendulum(length: float = 0.2, mass: float = 0.3) -> SkeletonModel:
    """Anchor link + swinging rod with its mass concentrated at the tip."""
    anchor = LinkSpec(
        name="anchor", parent=None, attach=np.zeros(3),
        joint_axes=(), joint_limits=(),
        mass=100.0, com=np.zeros(3), inertia=np.array([1.0, 1.0, 1.0]),
        geometry=Box(np.zeros(3), np.array([0.02, 0.02, 0.02])),
        local_unit_axis=_UP, chain_id=0, chain_depth=0,
    )
    rod = LinkSpec(
        name="rod", parent="anchor", attach=np.zeros(3),
        joint_axes=(_PITCH,), joint_limits=((-10.0, 10.0),),
        mass=mass, com=np.array([0.0, 0.0, -length]),
        inertia=np.array([1e-9, 1e-9, 1e-9]) + 1e-8,
        geometry=Capsule(np.zeros(3), np.array([0.0, 0.0, -length]), 0.005),
        local_unit_axis=_DOWN, chain_id=0, chain_depth=0,
    )
    return SkeletonModel(name="pendulum", links=(anchor, rod), root="anchor",
                         collision_pairs=(), feet=())


def make_double_pendulum(l1: float = 0.15, l2: float = 0.12) -> SkeletonModel:
    # Near-isotropic inertias (balls on rods): a thin-rod axial moment would
    # make the second joint's roll DOF singular when its axis sweeps past the
    # rod direction, which is a conditioning problem, not an integrator test.
    anchor = LinkSpec(
        name="anchor", parent=None, attach=np.zeros(3),
        joint_axes=(), joint_limits=(),
        mass=0.1, com=np.zeros(3), inertia=np.array([1e-4, 1e-4, 1e-4]),
        geometry=Box(np.zeros(3), np.array([0.02, 0.02, 0.02])),
        local_unit_axis=_UP, chain_id=0, chain_depth=0,
    )
    rod1 = LinkSpec(
        name="rod1", parent="anchor", attach=np.zeros(3),
        joint_axes=(_PITCH,), joint_limits=((-30.0, 30.0),),
        mass=0.2, com=np.array([0.0, 0.0, -l1]),
        inertia=np.array([8e-5, 8e-5, 8e-5]),
        geometry=Capsule(np.zeros(3), np.array([0.0, 0.0, -l1]), 0.005),
        local_unit_axis=_DOWN, chain_id=0, chain_depth=0,
    )
    rod2 = LinkSpec(
        name="rod2", parent="rod1", attach=np.array([0.0, 0.0, -l1]),
        joint_axes=(_PITCH, _ROLL), joint_limits=((-30.0, 30.0), (-30.0, 30.0)),
        mass=0.15, com=np.array([0.0, 0.0, -l2]),
        inertia=np.array([6e-5, 6e-5, 6e-5]),
        geometry=Capsule(np.zeros(3), np.array([0.0, 0.0, -l2]), 0.005),
        local_unit_axis=_DOWN, chain_id=0, chain_depth=1,
    )
    return SkeletonModel(name="double_pendulum", links=(anchor, rod1, rod2),
                         root="anchor", collision_pairs=(), feet=())


def make_free_box(mass: float = 0.5, half=(0.05, 0.04, 0.03)) -> SkeletonModel:
    half = np.asarray(half, float)
    box = LinkSpec(
        name="box", parent=None, attach=np.zeros(3),
        joint_axes=(), joint_limits=(),
        mass=mass, com=np.zeros(3), inertia=_box_inertia(mass, half),
        geometry=Box(np.zeros(3), half),
        local_unit_axis=_UP, chain_id=0, chain_depth=0,
    )
    return SkeletonModel(name="free_box", links=(box,), root="box",
                         collision_pairs=(), feet=("box",))


# ---------------------------------------------------------------------------
# Bundled data files
# ---------------------------------------------------------------------------

_BUILDERS = {
    "biped9": biped9,
    "humanoid13": humanoid13,
    "actor9": actor9,
    "actor13": actor13,
}


def load_bundled_skeleton(name: str) -> SkeletonModel:
    """Load one of the shipped ``data/*.skel.json`` models."""
    ref = importlib.resources.files("mimicforge").joinpath(f"data/{name}.skel.json")
    import json as _json

    return skeleton_from_dict(_json.loads(ref.read_text(encoding="utf-8")),
                              ctx=f"bundled:{name}")


def bundled_skeleton_path(name: str) -> str:
    ref = importlib.resources.files("mimicforge").joinpath(f"data/{name}.skel.json")
    return str(ref)


def write_bundled_data(out_dir) -> None:
    """Regenerate the shipped skeleton JSON files (maintenance helper)."""
    import pathlib

    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, build in _BUILDERS.items():
        save_skeleton(build(), out / f"{name}.skel.json")
