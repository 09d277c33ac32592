"""Deterministic synthetic testbed with injected, analytically known sensitivities.

A scene is a flat-shaded raster: canvas, background tiles, a goal patch,
a task object, distractor rectangles, and an end-effector marker. The
simulated policy reads the marker, object, and goal off the image by
exact color match and servos proportionally; on top of that nominal law,
every distractor region adds an action bias equal to its injected gain
times a pixel statistic of that region:

* object distractors use the mean absolute deviation of the region's
  pixels from the region's distraction-free appearance (the canvas), so
  the bias is exactly zero once the distractor is removed or absent;
* background tiles use a saturation-gated hue distance from the tile's
  clean hue, so the bias is exactly zero for the clean color and for any
  neutral (low-saturation) recolor.

Because the biases are closed-form functions of region pixels, every
probe and intervention decision has a ground-truth oracle.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import ActionChunk, Image, RegionKind, RegionMask, derive_rng
from .errors import SceneError

GRIP_CLOSE = 0.9
GRIP_OPEN = 0.1

# saturation below this contributes nothing to the background statistic
SAT_GATE_LO = 0.25


@dataclass(frozen=True)
class RectSpec:
    """Axis-aligned rectangle: center in meters, size in pixels."""

    cx: float
    cy: float
    w: int
    h: int

    def bounds(self, ppm: float) -> tuple:
        px = int(round(self.cx * ppm))
        py = int(round(self.cy * ppm))
        x0 = px - self.w // 2
        y0 = py - self.h // 2
        return x0, y0, x0 + self.w, y0 + self.h


@dataclass(frozen=True)
class DistractorSpec:
    label: str
    rect: RectSpec
    color: tuple
    gain: float = 0.0
    direction: tuple = (1.0, 0.0, 0.0)
    present: bool = True


@dataclass(frozen=True)
class TileSpec:
    """A background surface. ``color`` is the clean appearance; rendering uses
    ``display_color``, which differs when the tile is a distraction."""

    label: str
    rect: RectSpec
    color: tuple
    display_color: tuple | None = None
    gain: float = 0.0
    direction: tuple = (1.0, 0.0, 0.0)

    @property
    def shown(self) -> tuple:
        return self.display_color if self.display_color is not None else self.color


@dataclass(frozen=True)
class SceneSpec:
    name: str = "scene"
    instruction: str = "put the task object on the goal plate"
    width: int = 256
    height: int = 256
    ppm: float = 1000.0
    canvas_color: tuple = (202, 196, 184)
    object_color: tuple = (226, 113, 29)
    object_size: int = 15
    object_pos: tuple = (0.128, 0.176)
    goal_color: tuple = (240, 214, 62)
    goal_size: int = 27
    goal_pos: tuple = (0.192, 0.064)
    marker_color: tuple = (250, 50, 220)
    marker_size: int = 7
    ee_start: tuple = (0.128, 0.140)
    distractors: tuple = ()
    tiles: tuple = ()
    sigma_a: float = 0.0
    kp: float = 0.5
    max_step: float = 0.01
    chunk_len: int = 4
    max_steps: int = 80
    goal_tolerance: float = 0.01
    grasp_range: float = 0.008
    release_range: float = 0.006
    carry_eps: float = 0.004
    jitter_lo: float = 0.01
    jitter_hi: float = 0.02

    def without_distractions(self) -> "SceneSpec":
        """The nominal scene: distractors absent, tiles at their clean colors."""
        return replace(
            self,
            distractors=tuple(replace(d, present=False) for d in self.distractors),
            tiles=tuple(replace(t, display_color=None) for t in self.tiles),
        )

    def region_labels(self) -> tuple:
        return tuple(d.label for d in self.distractors) + tuple(t.label for t in self.tiles)

    def to_json_dict(self) -> dict:
        def rect(r):
            return {"cx": r.cx, "cy": r.cy, "w": r.w, "h": r.h}

        return {
            "schema": "scene/1",
            "name": self.name,
            "instruction": self.instruction,
            "width": self.width,
            "height": self.height,
            "ppm": self.ppm,
            "canvas_color": list(self.canvas_color),
            "object_color": list(self.object_color),
            "object_size": self.object_size,
            "object_pos": list(self.object_pos),
            "goal_color": list(self.goal_color),
            "goal_size": self.goal_size,
            "goal_pos": list(self.goal_pos),
            "marker_color": list(self.marker_color),
            "marker_size": self.marker_size,
            "ee_start": list(self.ee_start),
            "distractors": [
                {
                    "label": d.label,
                    "rect": rect(d.rect),
                    "color": list(d.color),
                    "gain": d.gain,
                    "direction": list(d.direction),
                    "present": d.present,
                }
                for d in self.distractors
            ],
            "tiles": [
                {
                    "label": t.label,
                    "rect": rect(t.rect),
                    "color": list(t.color),
                    "display_color": list(t.display_color) if t.display_color else None,
                    "gain": t.gain,
                    "direction": list(t.direction),
                }
                for t in self.tiles
            ],
            "sigma_a": self.sigma_a,
            "kp": self.kp,
            "max_step": self.max_step,
            "chunk_len": self.chunk_len,
            "max_steps": self.max_steps,
            "goal_tolerance": self.goal_tolerance,
            "grasp_range": self.grasp_range,
            "release_range": self.release_range,
            "carry_eps": self.carry_eps,
            "jitter_lo": self.jitter_lo,
            "jitter_hi": self.jitter_hi,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "SceneSpec":
        def rect(r):
            return RectSpec(cx=r["cx"], cy=r["cy"], w=r["w"], h=r["h"])

        kw = {k: v for k, v in d.items() if k != "schema"}
        kw["canvas_color"] = tuple(kw["canvas_color"])
        kw["object_color"] = tuple(kw["object_color"])
        kw["object_pos"] = tuple(kw["object_pos"])
        kw["goal_color"] = tuple(kw["goal_color"])
        kw["goal_pos"] = tuple(kw["goal_pos"])
        kw["marker_color"] = tuple(kw["marker_color"])
        kw["ee_start"] = tuple(kw["ee_start"])
        kw["distractors"] = tuple(
            DistractorSpec(
                label=x["label"],
                rect=rect(x["rect"]),
                color=tuple(x["color"]),
                gain=x["gain"],
                direction=tuple(x["direction"]),
                present=x.get("present", True),
            )
            for x in kw.get("distractors", [])
        )
        kw["tiles"] = tuple(
            TileSpec(
                label=x["label"],
                rect=rect(x["rect"]),
                color=tuple(x["color"]),
                display_color=tuple(x["display_color"]) if x.get("display_color") else None,
                gain=x["gain"],
                direction=tuple(x["direction"]),
            )
            for x in kw.get("tiles", [])
        )
        return SceneSpec(**kw)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2))

    @staticmethod
    def load(path) -> "SceneSpec":
        return SceneSpec.from_json_dict(json.loads(Path(path).read_text()))


def _fill_rect(px: np.ndarray, rect: RectSpec, ppm: float, color: tuple) -> None:
    x0, y0, x1, y1 = rect.bounds(ppm)
    h, w = px.shape[:2]
    if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
        raise SceneError(f"rect {rect} leaves the canvas")
    px[y0:y1, x0:x1] = color


def _rect_mask(shape: tuple, rect: RectSpec, ppm: float) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    x0, y0, x1, y1 = rect.bounds(ppm)
    m[y0:y1, x0:x1] = True
    return m


def _point_rect(pos, size: int) -> RectSpec:
    return RectSpec(cx=float(pos[0]), cy=float(pos[1]), w=size, h=size)


def region_masks(scene: SceneSpec) -> dict:
    """Ground-truth masks per distractor / tile label (static geometry)."""
    shape = (scene.height, scene.width)
    out = {}
    for d in scene.distractors:
        out[d.label] = RegionMask(
            label=d.label, kind=RegionKind.OBJECT, mask=_rect_mask(shape, d.rect, scene.ppm)
        )
    for t in scene.tiles:
        out[t.label] = RegionMask(
            label=t.label, kind=RegionKind.BACKGROUND, mask=_rect_mask(shape, t.rect, scene.ppm)
        )
    return out


def _validate_geometry(scene: SceneSpec, obj_pos) -> None:
    shape = (scene.height, scene.width)
    rects = [
        ("task object", _rect_mask(shape, _point_rect(obj_pos, scene.object_size), scene.ppm)),
        ("goal", _rect_mask(shape, _point_rect(scene.goal_pos, scene.goal_size), scene.ppm)),
    ]
    for d in scene.distractors:
        rects.append((f"distractor {d.label}", _rect_mask(shape, d.rect, scene.ppm)))
    for t in scene.tiles:
        rects.append((f"tile {t.label}", _rect_mask(shape, t.rect, scene.ppm)))
    for i in range(len(rects)):
        for j in range(i + 1, len(rects)):
            if (rects[i][1] & rects[j][1]).any():
                raise SceneError(f"{rects[i][0]} overlaps {rects[j][0]}")


def render_state(scene: SceneSpec, obj_pos, ee_pos, carrying: bool = False) -> Image:
    """Rasterize the scene for the given object / end-effector state."""
    px = np.empty((scene.height, scene.width, 3), dtype=np.uint8)
    px[:] = scene.canvas_color
    for t in scene.tiles:
        _fill_rect(px, t.rect, scene.ppm, t.shown)
    _fill_rect(px, _point_rect(scene.goal_pos, scene.goal_size), scene.ppm, scene.goal_color)
    for d in scene.distractors:
        if d.present:
            _fill_rect(px, d.rect, scene.ppm, d.color)
    draw_obj = ee_pos if carrying else obj_pos
    _fill_rect(px, _point_rect(draw_obj, scene.object_size), scene.ppm, scene.object_color)
    _fill_rect(px, _point_rect(ee_pos, scene.marker_size), scene.ppm, scene.marker_color)
    return Image(px)


def render(scene: SceneSpec) -> tuple:
    """Initial observation plus the ground-truth region masks."""
    _validate_geometry(scene, scene.object_pos)
    img = render_state(scene, scene.object_pos, scene.ee_start, carrying=False)
    return img, region_masks(scene)


# ---------------------------------------------------------------------------
# pixel statistics driving the injected sensitivities
# ---------------------------------------------------------------------------


def mad_stat(image: Image, mask: np.ndarray, ref_color: tuple) -> float:
    """Mean absolute deviation of masked pixels from a reference color, on [0, 1]."""
    vals = image.pixels[mask].astype(np.float64) / 255.0
    ref = np.asarray(ref_color, dtype=np.float64) / 255.0
    return float(np.abs(vals - ref).mean())


def _hue_sat(vals: np.ndarray) -> tuple:
    """Vectorized hue in [0, 1) and saturation in [0, 1] for (N, 3) rgb on [0, 1]."""
    r, g, b = vals[:, 0], vals[:, 1], vals[:, 2]
    mx = vals.max(axis=1)
    mn = vals.min(axis=1)
    c = mx - mn
    sat = np.where(mx > 0, c / np.where(mx > 0, mx, 1.0), 0.0)
    safe_c = np.where(c > 0, c, 1.0)
    hr = np.mod((g - b) / safe_c, 6.0)
    hg = (b - r) / safe_c + 2.0
    hb = (r - g) / safe_c + 4.0
    h6 = np.select([mx == r, mx == g], [hr, hg], default=hb)
    hue = np.where(c > 0, h6 / 6.0, 0.0)
    return hue, sat


def _hue_coherence(vals: np.ndarray) -> np.ndarray:
    """Mean saturation-gated hue unit vector of (N, 3) rgb values on [0, 1].

    Pixels with saturation below SAT_GATE_LO contribute exactly zero;
    incoherent (noise-scrambled) hues cancel in the mean, coherent
    saturated color does not.
    """
    hue, sat = _hue_sat(vals)
    gate = np.clip((sat - SAT_GATE_LO) / (1.0 - SAT_GATE_LO), 0.0, 1.0)
    ang = 2.0 * math.pi * hue
    return np.array([(gate * np.cos(ang)).mean(), (gate * np.sin(ang)).mean()])


def hue_vec_color(color: tuple) -> np.ndarray:
    return _hue_coherence(np.asarray([color], dtype=np.float64) / 255.0)


def hue_stat(image: Image, mask: np.ndarray, ref_vec: np.ndarray) -> float:
    """Cubed distance of the region's hue-coherence vector from a reference.

    Zero exactly when the region shows its clean color, and zero for any
    neutral (saturation <= 0.2) recolor of a tile whose clean color is
    itself below the saturation gate. The cube keeps the response to a
    strongly saturated distraction near-linear while crushing the small
    coherence residue that heavy probe noise leaves on a neutral base, so
    the recolor-acceptance check separates cleanly from detection.
    """
    vals = image.pixels[mask].astype(np.float64) / 255.0
    dist = float(np.linalg.norm(_hue_coherence(vals) - ref_vec)) / 2.0
    return dist**3


@dataclass(frozen=True)
class _RegionStat:
    label: str
    mask: np.ndarray
    gain: float
    direction: np.ndarray
    stat: str  # "mad" | "hue"
    ref_color: tuple | None = None
    ref_vec: np.ndarray | None = None


@dataclass
class SimPolicy:
    """Image-driven proportional servo policy with injected region biases.

    Reads the end-effector marker, task object, and goal off the image by
    exact color match, plans ``chunk_len`` steps toward the object (then the
    goal once carrying), and adds the per-region bias terms plus optional
    Gaussian action noise. A pure function of (image, k, seed): identical
    inputs give identical chunks.
    """

    scene: SceneSpec
    regions: tuple = ()
    seed: int = 0

    @staticmethod
    def from_scene(scene: SceneSpec, seed: int = 0) -> "SimPolicy":
        shape = (scene.height, scene.width)
        stats = []
        for d in scene.distractors:
            stats.append(
                _RegionStat(
                    label=d.label,
                    mask=_rect_mask(shape, d.rect, scene.ppm),
                    gain=d.gain,
                    direction=np.asarray(d.direction, dtype=np.float64),
                    stat="mad",
                    ref_color=scene.canvas_color,
                )
            )
        for t in scene.tiles:
            stats.append(
                _RegionStat(
                    label=t.label,
                    mask=_rect_mask(shape, t.rect, scene.ppm),
                    gain=t.gain,
                    direction=np.asarray(t.direction, dtype=np.float64),
                    stat="hue",
                    ref_vec=hue_vec_color(t.color),
                )
            )
        return SimPolicy(scene=scene, regions=tuple(stats), seed=seed)

    def _centroid(self, image: Image, color: tuple):
        m = np.all(image.pixels == np.asarray(color, dtype=np.uint8), axis=-1)
        if not m.any():
            return None
        ys, xs = np.nonzero(m)
        return np.array([xs.mean() / self.scene.ppm, ys.mean() / self.scene.ppm, 0.0])

    def bias(self, image: Image) -> np.ndarray:
        """Total injected action bias for this observation, in meters."""
        b = np.zeros(3, dtype=np.float64)
        for r in self.regions:
            if r.gain == 0.0:
                continue
            if r.stat == "mad":
                s = mad_stat(image, r.mask, r.ref_color)
            else:
                s = hue_stat(image, r.mask, r.ref_vec)
            b += r.gain * s * r.direction
        return b

    def region_stat(self, image: Image, label: str) -> float:
        for r in self.regions:
            if r.label == label:
                if r.stat == "mad":
                    return mad_stat(image, r.mask, r.ref_color)
                return hue_stat(image, r.mask, r.ref_vec)
        raise KeyError(label)

    def predict(self, image: Image, instruction: str, k: int) -> list:
        sc = self.scene
        ee = self._centroid(image, sc.marker_color)
        obj = self._centroid(image, sc.object_color)
        goal = self._centroid(image, sc.goal_color)
        if ee is None or obj is None or goal is None:
            raise SceneError("policy could not locate marker, object, or goal in the image")
        bias = self.bias(image)
        carrying = float(np.linalg.norm(obj - ee)) < sc.carry_eps
        digest = hashlib.sha256(image.pixels.tobytes()).hexdigest()[:16]
        chunks = []
        for ki in range(k):
            rng = derive_rng(self.seed, "predict", digest, ki)
            noise = (
                rng.standard_normal((sc.chunk_len, 3)) * sc.sigma_a
                if sc.sigma_a > 0
                else np.zeros((sc.chunk_len, 3))
            )
            steps = np.zeros((sc.chunk_len, 7), dtype=np.float64)
            pos = ee.copy()
            phase = "carry" if carrying else "approach"
            for i in range(sc.chunk_len):
                if phase == "approach":
                    target = obj
                elif phase == "carry":
                    target = goal
                else:
                    target = pos
                d = target - pos
                dn = float(np.linalg.norm(d))
                servo = d * sc.kp
                if dn * sc.kp > sc.max_step and dn > 0:
                    servo = d * (sc.max_step / dn)
                delta = servo + bias + noise[i]
                pos = pos + delta
                grip = GRIP_OPEN
                if phase == "approach":
                    if float(np.linalg.norm(pos - obj)) <= sc.grasp_range:
                        grip = GRIP_CLOSE
                        phase = "carry"
                elif phase == "carry":
                    grip = GRIP_CLOSE
                    if float(np.linalg.norm(pos - goal)) <= sc.release_range:
                        grip = GRIP_OPEN
                        phase = "done"
                steps[i, :3] = delta
                steps[i, 6] = grip
            chunks.append(ActionChunk(steps))
        return chunks


# ---------------------------------------------------------------------------
# episode environment and success evaluation
# ---------------------------------------------------------------------------


EARLY_GRASP_DIST = 0.02
NO_LIFT_WINDOW = 10
NO_LIFT_EPS = 0.002
APPROACH_NEAR = 0.03


class TestbedEnv:
    """Steps the scene forward under policy actions and records the trajectory."""

    __test__ = False  # not a pytest class, despite the name

    def __init__(self, scene: SceneSpec, gripper_threshold: float = 0.7):
        self.scene = scene
        self.gripper_threshold = gripper_threshold
        self._state = None

    def reset(self, seed: int) -> Image:
        sc = self.scene
        rng = derive_rng(seed, "obj-jitter")
        ang = float(rng.uniform(0.0, 2.0 * math.pi))
        mag = float(rng.uniform(sc.jitter_lo, sc.jitter_hi))
        obj = np.array(
            [sc.object_pos[0] + mag * math.cos(ang), sc.object_pos[1] + mag * math.sin(ang), 0.0]
        )
        _validate_geometry(sc, obj[:2])
        self._state = {
            "ee": np.array([sc.ee_start[0], sc.ee_start[1], 0.0]),
            "obj": obj,
            "carrying": False,
            "closed": False,
            "jammed": False,
            "delivered": False,
            "t": 0,
            "trajectory": [],
        }
        return self.observe()

    def observe(self) -> Image:
        s = self._state
        return render_state(self.scene, s["obj"][:2], s["ee"][:2], carrying=s["carrying"])

    @property
    def trajectory(self) -> list:
        return self._state["trajectory"]

    @property
    def delivered(self) -> bool:
        return self._state["delivered"]

    def _clamp_workspace(self, pos: np.ndarray) -> np.ndarray:
        # keep the marker (and a carried object) renderable inside the canvas
        sc = self.scene
        margin = (max(sc.marker_size, sc.object_size) // 2 + 1) / sc.ppm
        out = pos.copy()
        out[0] = min(max(out[0], margin), sc.width / sc.ppm - margin)
        out[1] = min(max(out[1], margin), sc.height / sc.ppm - margin)
        return out

    def step(self, action: np.ndarray) -> tuple:
        """Apply one 7-dim action; returns (observation, done)."""
        s = self._state
        sc = self.scene
        s["ee"] = self._clamp_workspace(s["ee"] + np.asarray(action[:3], dtype=np.float64))
        closing = float(action[6]) >= self.gripper_threshold
        was_closed = s["closed"]
        dist_obj = float(np.linalg.norm(s["ee"] - s["obj"]))
        event = None
        if closing and not was_closed and not s["carrying"] and dist_obj > EARLY_GRASP_DIST:
            event = "closed_far"
            s["jammed"] = True
        if closing and not s["carrying"] and not s["jammed"] and dist_obj <= sc.grasp_range:
            s["carrying"] = True
            event = "grasp"
        if not closing:
            s["jammed"] = False
            if s["carrying"]:
                s["carrying"] = False
                event = "release"
                if (
                    float(np.linalg.norm(s["obj"][:2] - np.asarray(sc.goal_pos)))
                    <= sc.goal_tolerance
                ):
                    s["delivered"] = True
        if s["carrying"]:
            s["obj"] = s["ee"].copy()
        s["closed"] = closing
        s["t"] += 1
        s["trajectory"].append(
            {
                "t": s["t"],
                "ee": s["ee"].tolist(),
                "obj": s["obj"].tolist(),
                "grip": float(action[6]),
                "closed": closing,
                "carrying": s["carrying"],
                "dist_obj": dist_obj,
                "dist_goal": float(np.linalg.norm(s["obj"][:2] - np.asarray(sc.goal_pos))),
                "event": event,
            }
        )
        done = s["delivered"] or s["t"] >= sc.max_steps
        return self.observe(), done


def evaluate_success(trajectory: list, scene: SceneSpec, delivered: bool) -> tuple:
    """Classify an episode: (success, failure_mode).

    Failure taxonomy: ``early_grasp`` (gripper closed while far from the
    object), ``no_lift`` (grasped but the object then barely moved for a
    sustained window), ``missed_approach`` (came near the object but never
    grasped it), ``timeout`` (everything else).
    """
    if delivered:
        return True, "success"
    if any(st["event"] == "closed_far" for st in trajectory):
        return False, "early_grasp"
    grasp_idx = next(
        (i for i, st in enumerate(trajectory) if st["event"] == "grasp"), None
    )
    if grasp_idx is not None:
        after = trajectory[grasp_idx:]
        for i in range(len(after) - NO_LIFT_WINDOW):
            a = np.asarray(after[i]["obj"])
            b = np.asarray(after[i + NO_LIFT_WINDOW]["obj"])
            if float(np.linalg.norm(a - b)) < NO_LIFT_EPS and after[i + NO_LIFT_WINDOW]["carrying"]:
                return False, "no_lift"
        return False, "timeout"
    min_dist = min((st["dist_obj"] for st in trajectory), default=math.inf)
    if min_dist <= APPROACH_NEAR:
        return False, "missed_approach"
    return False, "timeout"


# ---------------------------------------------------------------------------
# toy attention policy for the attribution baseline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToyAttentionPolicy:
    """Closed-form cross-attention over 16x16 image patches.

    Patch features are projected to per-head keys by fixed random matrices;
    task-token queries attend over all patches with a softmax; attention is
    averaged over task tokens. The scalar probe loss is
    ``sum_h g_h * tanh(sum_j u_j * A[h, j])`` whose gradient with respect to
    the (averaged) attention entries is analytic.
    """

    heads: int = 4
    task_tokens: int = 3
    grid: int = 16
    key_dim: int = 16
    layer: int = 6
    seed: int = 7

    @property
    def tokens(self) -> int:
        return self.grid * self.grid

    def _key_params(self, patch_dim: int) -> tuple:
        rng = derive_rng(self.seed, "toy-attn-keys", patch_dim)
        wk = rng.standard_normal((self.heads, self.key_dim, patch_dim)) / math.sqrt(patch_dim)
        q = rng.standard_normal((self.heads, self.task_tokens, self.key_dim))
        return wk, q

    def _loss_params(self) -> tuple:
        rng = derive_rng(self.seed, "toy-attn-loss")
        u = rng.standard_normal(self.tokens) / math.sqrt(self.tokens)
        g = rng.standard_normal(self.heads)
        return u, g

    def _patches(self, image: Image) -> np.ndarray:
        h, w = image.height, image.width
        if h % self.grid or w % self.grid:
            raise SceneError(f"image {h}x{w} not divisible into a {self.grid}x{self.grid} grid")
        ph, pw = h // self.grid, w // self.grid
        px = image.to_float() / 255.0
        patches = px.reshape(self.grid, ph, self.grid, pw, 3).transpose(0, 2, 1, 3, 4)
        return patches.reshape(self.tokens, ph * pw * 3)

    def attention(self, image: Image) -> np.ndarray:
        """Task-token-averaged attention, shape (heads, tokens)."""
        feats = self._patches(image)
        wk, q = self._key_params(feats.shape[1])
        keys = np.einsum("hkd,jd->hkj", wk, feats)
        logits = np.einsum("htk,hkj->htj", q, keys) / math.sqrt(self.key_dim)
        logits -= logits.max(axis=2, keepdims=True)
        ex = np.exp(logits)
        attn = ex / ex.sum(axis=2, keepdims=True)
        return attn.mean(axis=1)

    def probe_loss(self, attn: np.ndarray) -> float:
        u, g = self._loss_params()
        inner = attn @ u
        return float((g * np.tanh(inner)).sum())

    def gradients(self, attn: np.ndarray) -> np.ndarray:
        """Analytic d(probe_loss)/d(attn), same shape as ``attn``."""
        u, g = self._loss_params()
        inner = attn @ u
        coeff = g * (1.0 - np.tanh(inner) ** 2)
        return np.outer(coeff, u)

    def tensors(self, image: Image):
        from .attribution import AttentionTensors

        a = self.attention(image)
        return AttentionTensors(attn=a, grad=self.gradients(a), layer=self.layer)
