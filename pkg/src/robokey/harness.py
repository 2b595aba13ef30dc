"""Episodes, parameter sweeps and CSV output."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .adversary import Eavesdropper, disagreement, sample_adversary_model
from .config import ExperimentConfig
from .ecc import hamming
from .parties import Controller, Robot
from .protocol import KeyMaterial, ProtocolError, verify_keys
from .messages import ControlMessage, MeasurementMessage
from .transport import Transcript, encode_message, lockstep_channel


def tracking_cost(positions, ref_positions) -> float:
    """Mean Euclidean distance between actual and reference planar positions."""
    positions = np.asarray(positions, dtype=float)[:, :2]
    ref_positions = np.asarray(ref_positions, dtype=float)[:, :2]
    if len(positions) == 0:
        raise ValueError("tracking cost of an empty trajectory is undefined")
    if positions.shape != ref_positions.shape:
        raise ValueError("trajectory and reference lengths differ")
    return float(np.mean(np.linalg.norm(positions - ref_positions, axis=1)))


@dataclass
class EpisodeResult:
    transcript: Transcript
    K: str
    K_r: str
    K_c: str
    K_a: str
    metrics: dict
    states: np.ndarray
    refs: np.ndarray
    applied_bits: list
    decoded_bits: list
    delta_hat: np.ndarray
    ties: list = field(default_factory=list)

    @property
    def keys_verified(self) -> bool:
        algo = self.transcript.header.get("digest", "sha256")
        return verify_keys(KeyMaterial.from_bits(self.K_r, algo), KeyMaterial.from_bits(self.K_c, algo))


def run_episode(cfg: ExperimentConfig, transcript_sink=None) -> EpisodeResult:
    controller = Controller(cfg)
    robot = Robot(cfg)
    eve = Eavesdropper(sample_adversary_model(cfg.params, cfg.adversary), cfg.ecc,
                       cfg.key_steps, protocol_on=cfg.protocol_on)
    transcript = Transcript(cfg.header(), sink=transcript_sink)
    lockstep_channel(controller, robot, tap=eve, transcript=transcript)
    return _collect(cfg, transcript, controller, robot, eve)


def _collect(cfg, transcript, controller, robot, eve) -> EpisodeResult:
    sess = controller.session
    K_c, K_r, K_a = sess.key_out, robot.key_out, eve.key()
    if cfg.stop == "accepted":
        K_c, K_a = K_c[:cfg.key_bits], K_a[:cfg.key_bits]
    states = np.array(robot.states)
    T = cfg.params.T
    refs = np.array([cfg.trajectory(k * T).pos for k in range(len(states))])
    decided = sess.accepted + sess.rejected
    metrics = {
        "accept_rate": sess.accepted / decided if decided else math.nan,
        "correct_rate": 1 - hamming(K_c, K_r) / len(K_c) if K_c and len(K_c) == len(K_r) else math.nan,
        "eve_disagreement": disagreement(K_c, K_a),
        "J_x": tracking_cost(states[1:], refs[1:]),
        "steps": len(robot.applied_bits),
        "kc_len": len(K_c),
    }
    return EpisodeResult(
        transcript=transcript, K=robot.key_source, K_r=K_r, K_c=K_c, K_a=K_a,
        metrics=metrics, states=states, refs=refs, applied_bits=list(robot.applied_bits),
        decoded_bits=list(controller.bits), delta_hat=np.array(controller.delta_hat),
        ties=list(controller.ties))


def replay_controller(transcript: Transcript, cfg: ExperimentConfig | None = None):
    """Feed recorded measurements to a fresh controller.

    Returns ``(controller, mismatches)`` where ``mismatches`` lists the steps
    whose regenerated control record differs from the recorded one.
    """
    cfg = cfg if cfg is not None else ExperimentConfig.from_header(transcript.header)
    controller = Controller(cfg)
    mismatches = []
    pending = controller.start()
    for msg in transcript.messages():
        if isinstance(msg, ControlMessage):
            if pending is None:
                raise ProtocolError(f"two control records in a row at step {msg.step}")
            if encode_message(pending) != encode_message(msg):
                mismatches.append(msg.step)
            pending = None
        elif isinstance(msg, MeasurementMessage):
            pending = controller.on_measurement(msg)
    return controller, mismatches


def replay_eve(transcript: Transcript, cfg: ExperimentConfig | None = None) -> Eavesdropper:
    cfg = cfg if cfg is not None else ExperimentConfig.from_header(transcript.header)
    eve = Eavesdropper(sample_adversary_model(cfg.params, cfg.adversary), cfg.ecc,
                       cfg.key_steps, protocol_on=cfg.protocol_on)
    for msg in transcript.messages():
        if msg is not None:
            eve(msg)
    return eve


# --------------------------------------------------------------------------
# sweeps

METRICS = ("accept_rate", "correct_rate", "eve_disagreement", "J_x", "steps", "kc_len")
CONFIG_ECHO = ("delta_v", "alpha", "key_bits", "ecc_rep", "accept_threshold", "noise_w", "noise_v")
SEED_COLUMNS = ("key_seed", "process_seed", "measurement_seed", "adversary_seed")
COLUMNS = (("kind", "point", "run") + CONFIG_ECHO + SEED_COLUMNS + METRICS
           + tuple(f"{m}_{s}" for m in METRICS for s in ("min", "max")))


def _episode_row(task, transcript_sink=None, results: dict | None = None) -> dict:
    point, run, cfg = task
    res = run_episode(cfg, transcript_sink)
    if results is not None:
        results[point, run] = res
    row = {"kind": "data", "point": point, "run": run}
    row.update({c: getattr(cfg, c) for c in CONFIG_ECHO})
    row.update(zip(SEED_COLUMNS, cfg.seeds))
    row.update(res.metrics)
    return row


def _summary_rows(rows: list[dict], n_points: int) -> list[dict]:
    out = []
    for point in range(n_points):
        group = [r for r in rows if r["point"] == point]
        summary = {"kind": "summary", "point": point, "run": ""}
        summary.update({c: group[0][c] for c in CONFIG_ECHO})
        for m in METRICS:
            values = np.array([r[m] for r in group], dtype=float)
            values = values[~np.isnan(values)]
            if len(values):
                summary[m] = float(np.median(values))
                summary[f"{m}_min"] = float(values.min())
                summary[f"{m}_max"] = float(values.max())
            else:
                summary[m] = summary[f"{m}_min"] = summary[f"{m}_max"] = math.nan
        out.append(summary)
    return out


def _run_tasks(tasks, jobs: int, results: dict | None = None) -> list[dict]:
    if jobs > 1 and results is None:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_episode_row, tasks))
    return [_episode_row(t, results=results) for t in tasks]


def sweep_delta_v(cfg: ExperimentConfig, grid, runs_per_point: int, jobs: int = 1,
                  common_seeds: bool = True, results: dict | None = None) -> list[dict]:
    """Data rows per (point, run) followed by one summary row per point.

    Passing a ``results`` dict keeps every :class:`EpisodeResult` keyed by
    ``(point, run)``; this forces serial execution.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty sweep grid")
    tasks = [(i, j, cfg.replace(delta_v=float(dv)).with_derived_seeds(i, j, common_seeds))
             for i, dv in enumerate(grid) for j in range(runs_per_point)]
    rows = _run_tasks(tasks, jobs, results)
    return rows + _summary_rows(rows, len(grid))


def sweep_alpha(cfg: ExperimentConfig, grid, runs_per_point: int, jobs: int = 1,
                common_seeds: bool = True, results: dict | None = None) -> list[dict]:
    grid = list(grid)
    if not grid:
        raise ValueError("empty sweep grid")
    tasks = [(i, j, cfg.replace(alpha=float(a)).with_derived_seeds(i, j, common_seeds))
             for i, a in enumerate(grid) for j in range(runs_per_point)]
    rows = _run_tasks(tasks, jobs, results)
    return rows + _summary_rows(rows, len(grid))


def _fmt(value) -> str:
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n", restval="")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(v) for k, v in row.items()})
    return buf.getvalue()


def summary_medians(rows: list[dict], metric: str) -> list[float]:
    return [r[metric] for r in sorted((r for r in rows if r["kind"] == "summary"),
                                      key=lambda r: r["point"])]
