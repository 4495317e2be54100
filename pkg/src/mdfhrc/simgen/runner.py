"""Scenario runner: sensor arrays, labelled captures and label sidecars."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import CSI_ANTENNAS, CSI_SUBCARRIERS, PipelineId, SensorId, pack_csi
from ..transport.capture import write_capture
from ..transport.messages import TelemetryMessage
from .generators import (
    CALIBRATION_SESSION,
    MAIN_SESSION,
    Reflector,
    ir_frames,
    radar_spectra,
    sub_rng,
    thz_frames,
    true_distance,
    worker_states,
)
from .scenario import EMPTY, Scenario

CSI_ARRAY = (0.0, 2.0)  # ULA on the left wall, broadside along +x
CSI_NOISE = 0.1
CAPTURE_DECIMALS = 6
LABEL_FIELDS = ["window_end_ms", "function", "label", "true_d_m"]


def scenario_sensors(scn: Scenario) -> list[SensorId]:
    out = []
    for p in sorted(PipelineId.parse(p) for p in scn.pipelines):
        if p == PipelineId.RADAR:
            out += [SensorId(p, k) for k in range(1, len(scn.radars) + 1)]
        elif p == PipelineId.IR:
            out += [SensorId(p, k) for k in range(1, len(scn.ir_views) + 1)]
        else:
            out.append(SensorId(p, 1))
    return out


def scenario_csi(scn: Scenario, times, states, session: int = MAIN_SESSION) -> np.ndarray:
    """CSI for scripted workers: each present worker is one moving reflector."""
    times = np.asarray(times, dtype=np.int64)
    t_s = times / 1000.0
    k = np.arange(CSI_ANTENNAS)
    x = np.full((times.size, CSI_ANTENNAS, CSI_SUBCARRIERS), 3.0 + 0j)
    for w, st in enumerate(states):
        on = st.present
        if not on.any():
            continue
        rng = sub_rng(scn.seed, 9, w)
        refl = Reflector(0.0, 1.0, tuple(rng.uniform(0.15, 1.2, 2)),
                         tuple(rng.uniform(0, 2 * np.pi, 2)))
        g = refl.envelope(t_s)
        dx = st.xy[:, 0] - CSI_ARRAY[0]
        dy = st.xy[:, 1] - CSI_ARRAY[1]
        sin_t = dy / np.hypot(dx, dy)
        for i in np.flatnonzero(on):
            steer = np.exp(1j * np.pi * k * sin_t[i])
            prng = sub_rng(scn.seed, session, 4, 50 + w, int(times[i]))
            phase = np.exp(1j * prng.uniform(0, 2 * np.pi, CSI_SUBCARRIERS))
            x[i] += g[i] * steer[:, None] * phase[None, :]
    sigma = CSI_NOISE * scn.noise.get("csi", 1.0)
    if sigma > 0:
        for i, t in enumerate(times):
            n = sub_rng(scn.seed, session, 4, 1, int(t)).normal(
                size=(2, CSI_ANTENNAS, CSI_SUBCARRIERS))
            x[i] += sigma / np.sqrt(2) * (n[0] + 1j * n[1])
    return x


def generate_arrays(scn: Scenario, session: int = MAIN_SESSION, times=None) -> dict:
    """{SensorId: (T, frame_len) array} for every configured sensor."""
    if times is None:
        times = scn.frame_times()
    if session == CALIBRATION_SESSION:
        scn = _empty_copy(scn)
    states = worker_states(scn, times, session)
    out = {}
    for s in scenario_sensors(scn):
        if s.pipeline == PipelineId.RADAR:
            out[s] = radar_spectra(scn, s.k, times, states, session)
        elif s.pipeline == PipelineId.THZ:
            out[s] = thz_frames(scn, times, states, session)
        elif s.pipeline == PipelineId.IR:
            out[s] = ir_frames(scn, s.k, times, states, session)
        else:
            out[s] = np.stack([pack_csi(x) for x in scenario_csi(scn, times, states, session)])
    return out


def _empty_copy(scn: Scenario) -> Scenario:
    from dataclasses import replace
    return replace(scn, tracks=[[[0, EMPTY]] for _ in scn.tracks] or [[[0, EMPTY]]])


def calibration_times(scn: Scenario) -> np.ndarray:
    return np.arange(scn.empty_frames, dtype=np.int64) * scn.frame_period_ms


def calibration_arrays(scn: Scenario) -> dict:
    """Empty-cell recording used to fit background models."""
    return generate_arrays(scn, CALIBRATION_SESSION, calibration_times(scn))


def window_ends(scn: Scenario, n_frames: int | None = None) -> np.ndarray:
    n = scn.n_frames if n_frames is None else n_frames
    times = np.arange(n, dtype=np.int64) * scn.frame_period_ms
    idx = np.arange(scn.window_len - 1, n, scn.window_len)
    return times[idx]


def window_labels(scn: Scenario, states=None) -> list[dict]:
    """One label row per complete window, stamped with the window's last frame."""
    ends = window_ends(scn)
    if states is None:
        states = worker_states(scn, ends)
    else:
        sel = np.arange(scn.window_len - 1, scn.n_frames, scn.window_len)
        states = [type(st)(st.label[sel], st.xy[sel], st.arm[sel]) for st in states]
    d = true_distance(scn, states) if states else np.full(ends.size, np.nan)
    rows = []
    for i, t in enumerate(ends):
        if scn.function == "counting":
            label = str(sum(bool(st.present[i]) for st in states))
        else:
            label = str(states[0].label[i]) if states else EMPTY
        rows.append({"window_end_ms": int(t), "function": scn.function, "label": label,
                     "true_d_m": "" if np.isnan(d[i]) else round(float(d[i]), 6)})
    return rows


def frame_messages(scn: Scenario, arrays: dict, times) -> list[TelemetryMessage]:
    msgs = []
    sensors = sorted(arrays, key=lambda s: (int(s.pipeline), s.k))
    for i, t in enumerate(times):
        for s in sensors:
            vals = np.round(arrays[s][i], CAPTURE_DECIMALS) + 0.0
            payload = {"pipeline": int(s.pipeline), "sensor": s.k, "t_ms": int(t),
                       "values": vals.tolist()}
            msgs.append(TelemetryMessage(f"edge/{scn.cell}/{int(s.pipeline)}/{s.k}",
                                         int(t), "raw", payload))
    return msgs


@dataclass
class ScenarioRun:
    scenario: Scenario
    messages: list
    calibration: list
    labels: list
    distance: np.ndarray = field(repr=False, default=None)
    files: dict = field(default_factory=dict)


def run_scenario(scn: Scenario, out_dir=None) -> ScenarioRun:
    """Simulate a scenario into capture messages, calibration messages and labels.

    With ``out_dir`` the run is written as capture.jsonl, calibration.jsonl,
    labels.csv, distance.csv and scenario.json.
    """
    times = scn.frame_times()
    states = worker_states(scn, times)
    arrays = generate_arrays(scn, MAIN_SESSION, times)
    msgs = frame_messages(scn, arrays, times)
    cal = frame_messages(scn, calibration_arrays(scn), calibration_times(scn))
    labels = window_labels(scn, states)
    dist = true_distance(scn, states) if states else np.full(times.size, np.nan)
    run = ScenarioRun(scn, msgs, cal, labels, dist)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        run.files = {
            "capture": str(out / "capture.jsonl"),
            "calibration": str(out / "calibration.jsonl"),
            "labels": str(out / "labels.csv"),
            "distance": str(out / "distance.csv"),
            "scenario": str(out / "scenario.json"),
        }
        write_capture(run.files["capture"], msgs)
        write_capture(run.files["calibration"], cal)
        write_labels(run.files["labels"], labels)
        with open(run.files["distance"], "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t_ms", "true_d_m"])
            for t, d in zip(times, dist):
                wr.writerow([int(t), "" if np.isnan(d) else round(float(d), 6)])
        with open(run.files["scenario"], "w", encoding="utf-8") as fh:
            json.dump(scn.to_json(), fh, indent=2, sort_keys=True)
    return run


def write_labels(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.DictWriter(fh, LABEL_FIELDS, lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow(r)


def read_labels(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["window_end_ms"] = int(r["window_end_ms"])
        r["true_d_m"] = float(r["true_d_m"]) if r["true_d_m"] not in ("", None) else None
    return rows
