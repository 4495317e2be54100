"""Command line entry points.

Batch commands read and write files and are deterministic in their inputs
and seed; serve commands run the edge, the cloud consumer or the broker
service.  Failures print one JSON object {"error", "message"} on stderr and
exit with status 2.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import threading
import time
from pathlib import Path

import numpy as np

from .core import MdfError, PipelineId
from .edge import (
    BadConfig,
    DEFAULT_RADAR_REG,
    EdgeConfig,
    EdgeRuntime,
    arrays_from_messages,
    batch_grids,
    fit_backgrounds,
    frame_from_message,
    load_backgrounds,
    save_backgrounds,
    select_pipelines,
)
from .transport.capture import read_capture, replay
from .transport.messages import SchemaViolation, TelemetryMessage

FUNCTIONS = ("counting", "motion", "copresence")


class MissingFile(MdfError):
    code = "MissingFile"


# -- helpers -------------------------------------------------------------------

def _need(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise MissingFile(f"{path} does not exist")
    return p


def _load_json(path) -> dict:
    try:
        with open(_need(path), encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise BadConfig(f"{path}: {exc}") from exc


def _dump(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_digest(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _read_messages(path) -> list[TelemetryMessage]:
    return list(read_capture(_need(path)))


def _scenario_for(capture, explicit=None):
    from .simgen.scenario import Scenario, load_scenario
    if explicit:
        return load_scenario(_need(explicit))
    side = Path(capture).parent / "scenario.json"
    return load_scenario(side) if side.exists() else Scenario()


def _dataset(capture, labels, backgrounds, pipelines, window_len, function):
    from .cloud.dataset import LabeledDataset
    from .simgen.runner import read_labels
    from .simgen.scenario import COPRESENCE_CLASSES, MOTION_CLASSES

    arrays, times = arrays_from_messages(_read_messages(capture))
    bgs = load_backgrounds(_need(backgrounds))
    sel = sorted(PipelineId.parse(p) for p in pipelines)
    arrays = {s: a for s, a in arrays.items() if s.pipeline in sel}
    missing = [int(p) for p in sel if not any(s.pipeline == p for s in arrays)]
    if missing:
        raise SchemaViolation(f"capture has no frames for pipelines {missing}")
    t = times[next(iter(arrays))]
    grids = batch_grids(arrays, bgs, sel, window_len, t)
    rows = {r["window_end_ms"]: r for r in read_labels(_need(labels))}
    keep = [g for g in grids if g.window_end in rows]
    if not keep:
        raise SchemaViolation("no labelled windows in capture")
    names = MOTION_CLASSES if function == "motion" else COPRESENCE_CLASSES
    ds = LabeledDataset.from_grids(keep, [rows[g.window_end]["label"] for g in keep], names)
    return ds, rows


# -- commands ------------------------------------------------------------------

def cmd_simulate(args) -> dict:
    from dataclasses import replace

    from .simgen.runner import run_scenario
    from .simgen.scenario import load_scenario, shipped_scenario

    scn = load_scenario(_need(args.config)) if args.config else shipped_scenario(args.scenario)
    if args.seed is not None:
        scn = replace(scn, seed=args.seed)
    run = run_scenario(scn, args.out)
    return {"command": "simulate", "scenario": scn.name, "seed": scn.seed,
            "frames": len(run.messages), "windows": len(run.labels), "files": run.files}


def cmd_calibrate(args) -> dict:
    reg = DEFAULT_RADAR_REG
    if args.config:
        reg = EdgeConfig.load(args.config).radar_regularization
    arrays, _ = arrays_from_messages(_read_messages(args.capture))
    if not arrays:
        raise SchemaViolation("calibration capture holds no raw frames")
    bgs = fit_backgrounds(arrays, reg)
    cell = _read_messages(args.capture)[0].topic.split("/")[1]
    save_backgrounds(args.out, bgs, cell)
    return {"command": "calibrate", "out": str(args.out),
            "sensors": [str(s) for s in sorted(bgs, key=lambda s: (int(s.pipeline), s.k))]}


def cmd_train(args) -> dict:
    from .cloud.dataset import split_dataset
    from .cloud.metrics import evaluate
    from .cloud.model import TrainConfig, train_classifier
    from .cloud.modelio import save_model

    function = args.function or "motion"
    if function == "counting":
        raise BadConfig("worker counting is training-free; use the count command")
    pipes = args.pipelines or sorted(int(p) for p in select_pipelines(function))
    seed = 0 if args.seed is None else args.seed
    if args.window_len is None:
        args.window_len = _scenario_for(args.capture).window_len
    ds, _ = _dataset(args.capture, args.labels, args.backgrounds, pipes, args.window_len,
                     function)
    train, _test = split_dataset(ds, 0.8, seed)
    cfg = TrainConfig(seed=seed, epochs=args.epochs)
    model = train_classifier(train, cfg, args.kind)
    extra = {"function": function, "window_len": args.window_len, "split_seed": seed,
             "split_fraction": 0.8, "train_accuracy": evaluate(model, train).accuracy}
    save_model(model, args.out, extra)
    return {"command": "train", "out": str(args.out), "kind": model.kind,
            "pipelines": list(model.pipelines), **extra}


def cmd_eval(args) -> dict:
    from .cloud.dataset import split_dataset
    from .cloud.metrics import evaluate, write_confusion_csv, write_metrics
    from .cloud.modelio import load_model, read_header
    from .runtime import build_inprocess, run_inprocess
    from .safety import cell_params, evaluate_uncertainty, protective_distance

    header = read_header(args.model)
    model = load_model(args.model)
    extra = header.get("extra", {})
    function = extra.get("function", args.function or "motion")
    scn = _scenario_for(args.capture, args.scenario)
    window_len = int(extra.get("window_len", args.window_len or scn.window_len))
    seed = int(extra.get("split_seed", 0))
    ds, rows = _dataset(args.capture, args.labels, args.backgrounds, model.pipelines,
                        window_len, function)
    _, test = split_dataset(ds, float(extra.get("split_fraction", 0.8)), seed)
    ev = evaluate(model, test)
    pred = [model.class_names[i] for i in ev.predictions]
    actual = [model.class_names[i] for i in test.y]

    # streaming pass for detection latency
    cell_doc = _load_json(args.safety) if args.safety else None
    bgs = load_backgrounds(args.backgrounds)
    bgs = {s: b for s, b in bgs.items() if int(s.pipeline) in model.pipelines}
    run = build_inprocess(bgs, {function: model}, cell=scn.cell, window_len=window_len,
                          functions=[function],
                          selection={function: list(model.pipelines)})
    msgs = (m for m in read_capture(args.capture)
            if m.kind == "raw" and int(m.payload["pipeline"]) in model.pipelines)
    run_inprocess(msgs, run)
    lat = run.recorder.samples(function)
    z_w, t_w = evaluate_uncertainty(pred, actual, scn.landmarks, lat)
    speeds = (cell_doc or {}).get("speeds_mps", [0.5, 0.15])
    d_p = {f"{v:g}": protective_distance(cell_params(z_w, t_w, cell_doc, v_r=v))
           for v in speeds}

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(ev, out / "metrics.csv", out / "metrics.json")
    write_confusion_csv(ev.confusion, out / "confusion.csv")
    digest = config_digest({
        "function": function, "seed": seed, "model": header,
        "capture": _sha256_file(args.capture), "labels": _sha256_file(args.labels),
        "backgrounds": _sha256_file(args.backgrounds), "safety": cell_doc,
    })
    m = ev.confusion.metrics()
    report = {
        "function": function, "seed": seed, "config_digest": digest,
        "pipelines": list(model.pipelines), "n_test": len(test),
        "confusion": ev.confusion.to_json(), "accuracy": m["accuracy"],
        "precision": m["precision"], "recall": m["recall"],
        "Z_w_m": z_w, "T_w_s": t_w, "latency_ms": run.recorder.histogram(function),
        "classified_windows": len(run.results), "d_p_m": d_p,
        "mode": "d>1 m" if function == "motion" else "d<1 m",
    }
    _dump(report, out / "report.json")
    return {"command": "eval", "out": str(out), "accuracy": m["accuracy"],
            "Z_w_m": z_w, "T_w_s": t_w, "config_digest": digest}


def cmd_count(args) -> dict:
    from .cloud.metrics import ConfusionMatrix, write_confusion_csv
    from .counting.estimate import CountingConfig, estimate_count
    from .core import unpack_csi
    from .simgen.generators import counting_scene, csi_samples

    cfg = CountingConfig(**_load_json(args.config)) if args.config else CountingConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sessions = []
    if args.capture:
        arrays, _ = arrays_from_messages(_read_messages(args.capture))
        csi = [a for s, a in arrays.items() if s.pipeline == PipelineId.CSI]
        if not csi:
            raise SchemaViolation("capture holds no CSI frames")
        true = None
        side = Path(args.capture).parent / "scenario.json"
        if side.exists():
            scn = _scenario_for(args.capture)
            true = sum(1 for w in range(len(scn.tracks)) if scn.label_at(w, 0) != "empty")
        rep = estimate_count(unpack_csi(csi[0]), cfg)
        rep.true_count = true
        sessions.append(rep.to_json())
    else:
        seed = 0 if args.seed is None else args.seed
        times = np.arange(args.frames) * 50
        for n in range(cfg.max_count + 1):
            for r in range(args.sessions):
                scene = counting_scene(n, seed + 1000 * n + r)
                rep = estimate_count(csi_samples(scene, times), cfg)
                rep.true_count = n
                sessions.append(rep.to_json())
    known = [s for s in sessions if s["true_count"] is not None]
    k = cfg.max_count + 1
    if known:
        cm = ConfusionMatrix.from_predictions([s["true_count"] for s in known],
                                              [s["estimated_count"] for s in known],
                                              [str(i) for i in range(k)])
        write_confusion_csv(cm, out / "count_confusion.csv")
    report = {"config": cfg.to_json(), "sessions": sessions,
              "within_one": float(np.mean([abs(s["estimated_count"] - s["true_count"]) <= 1
                                           for s in known])) if known else None}
    _dump(report, out / "count_report.json")
    return {"command": "count", "out": str(out), "sessions": len(sessions),
            "estimates": [s["estimated_count"] for s in sessions]}


def cmd_safety(args) -> dict:
    from .safety import cell_params, protective_distance, safety_table

    cell = _load_json(args.config) if args.config else _shipped_cell()
    report = _load_json(args.report)
    try:
        function, z_w, t_w = report["function"], float(report["Z_w_m"]), float(report["T_w_s"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaViolation(f"evaluation report lacks {exc}") from exc
    speeds = cell.get("speeds_mps", [0.5, 0.15])
    table = safety_table({function: (z_w, t_w)}, tuple(speeds), cell)
    table[function]["mode"] = "d>1 m" if function == "motion" else "d<1 m"
    table[function]["d_p_cell_m"] = protective_distance(cell_params(z_w, t_w, cell))
    table["config_digest"] = config_digest({"cell": cell, "report": report.get("config_digest")})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump(table, out / "safety.json")
    return {"command": "safety", "out": str(out), **table[function]}


def _shipped_cell() -> dict:
    from importlib import resources
    return json.loads(resources.files("mdfhrc.data").joinpath("safety_cell.json").read_text())


def _connect(args):
    from .transport.tcp import TcpClient, parse_address
    if not args.broker:
        raise BadConfig("--broker HOST:PORT is required for the tcp transport")
    host, port = parse_address(args.broker)
    return TcpClient(host, port)


def cmd_serve_edge(args) -> dict:
    """Run the micro-edges of one cell.

    inproc: raw frames come from --capture and grids stay in this process
    (and are classified if --model is given).  tcp: raw frames are consumed
    from the broker and features/grids are published back to it.
    """
    cfg = EdgeConfig.load(args.config) if args.config else EdgeConfig()
    if not cfg.backgrounds:
        raise BadConfig("edge config needs a backgrounds file")
    bgs = load_backgrounds(_need(cfg.backgrounds))
    if cfg.sensors:
        want = {(int(p), int(k)) for p, ks in cfg.sensors.items() for k in ks}
        bgs = {s: b for s, b in bgs.items() if (int(s.pipeline), s.k) in want}
    transport = args.transport or ("tcp" if cfg.broker else "inproc")
    if transport == "inproc":
        from .cloud.modelio import load_model
        from .runtime import build_inprocess, run_inprocess

        if not args.capture:
            raise BadConfig("the inproc transport replays --capture")
        models = {}
        if args.model:
            m = load_model(args.model)
            models[m.extra.get("function", cfg.functions[0])] = m
        run = build_inprocess(bgs, models, cell=cfg.cell, window_len=cfg.window_len,
                              functions=cfg.functions, selection=cfg.selection)
        run_inprocess(read_capture(_need(args.capture)), run)
        res = {"command": "serve-edge", "transport": "inproc", "frames": run.frames,
               "grids": run.edge.grids_out, "results": len(run.results),
               "latency_ms": run.recorder.report()}
        if args.out:
            _dump(res, Path(args.out) / "serve_edge.json")
        return res

    args.broker = args.broker or cfg.broker
    client = _connect(args)
    edge = EdgeRuntime(bgs, cell=cfg.cell, window_len=cfg.window_len, functions=cfg.functions,
                       selection=cfg.selection, publish=client.publish)
    client.register(*edge.topics())
    raw = client.subscribe(f"edge/{cfg.cell}/+/+")
    ctl = client.subscribe(f"control/{cfg.cell}")
    deadline = time.monotonic() + args.duration if args.duration else None
    frames = 0
    try:
        while deadline is None or time.monotonic() < deadline:
            c = ctl.get(timeout=0)
            if c is not None:
                edge.apply_update(c.payload)
            msg = raw.get(timeout=0.2)
            if msg is not None and msg.kind == "raw":
                edge.process(frame_from_message(msg))
                frames += 1
    except KeyboardInterrupt:
        pass
    finally:
        raw.close()
        ctl.close()
        client.close()
    return {"command": "serve-edge", "transport": "tcp", "frames": frames,
            "grids": edge.grids_out}


def cmd_serve_cloud(args) -> dict:
    from .cloud.modelio import load_model
    from .cloud.service import CloudService

    doc = _load_json(args.config) if args.config else {}
    paths = doc.get("models", {})
    if args.model:
        paths = {**paths, args.function or "motion": args.model}
    if not paths:
        raise BadConfig("no models configured")
    models = {f: load_model(_need(p)) for f, p in paths.items()}
    args.broker = args.broker or doc.get("broker")
    client = _connect(args)
    cell = doc.get("cell", "c1")
    svc = CloudService(models, cell=cell, publish=client.publish)
    client.register(*svc.topics())
    sub = client.subscribe(f"fused/{cell}/+")
    stop = threading.Event()
    if args.duration:
        threading.Timer(args.duration, stop.set).start()
    try:
        svc.serve(sub, stop)
    except KeyboardInterrupt:
        pass
    finally:
        sub.close()
        client.close()
    res = {"command": "serve-cloud", "results": len(svc.results),
           "latency_ms": svc.recorder.report()}
    if args.out:
        _dump(res, Path(args.out) / "serve_cloud.json")
    return res


def cmd_serve_api(args) -> dict:
    import uvicorn

    from .api.app import create_app
    from .transport.broker import Broker
    from .transport.tcp import TcpBrokerServer

    broker = Broker(auto_register=args.auto_register)
    tcp = TcpBrokerServer(broker, args.host, args.tcp_port).start()
    print(json.dumps({"tcp": "%s:%d" % tcp.address, "http": f"{args.host}:{args.port}"}),
          flush=True)
    try:
        uvicorn.run(create_app(broker, cell_config=_shipped_cell()), host=args.host,
                    port=args.port, log_level="warning")
    finally:
        tcp.stop()
    return {"command": "serve-api"}


def cmd_replay(args) -> dict:
    client = _connect(args)
    msgs = _read_messages(args.capture)
    client.register(*sorted({m.topic for m in msgs}))
    n = replay(args.capture, client.publish, scale=args.scale)
    client.close()
    return {"command": "replay", "published": n, "retries": client.retries}


def cmd_fetch(args) -> dict:
    client = _connect(args)
    try:
        return client.fetch(args.topic).to_dict()
    finally:
        client.close()


# -- argument parsing ------------------------------------------------------------

def _common(p: argparse.ArgumentParser, out_required: bool = False) -> None:
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=out_required, help="output file or directory")
    p.add_argument("--function", choices=FUNCTIONS)
    p.add_argument("--transport", choices=("inproc", "tcp"))
    p.add_argument("--broker", help="HOST:PORT of the TCP broker")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mdfhrc", description=__doc__.splitlines()[0])
    sp = ap.add_subparsers(dest="command", required=True)

    p = sp.add_parser("simulate", help="simulate a scenario into a capture")
    _common(p, True)
    p.add_argument("--scenario", default="demo", help="name of a bundled scenario")
    p.set_defaults(func=cmd_simulate)

    p = sp.add_parser("calibrate", help="fit background models on an empty-cell capture")
    _common(p, True)
    p.add_argument("capture")
    p.set_defaults(func=cmd_calibrate)

    p = sp.add_parser("train", help="train a classifier on a labelled capture")
    _common(p, True)
    p.add_argument("capture")
    p.add_argument("labels")
    p.add_argument("--backgrounds", required=True)
    p.add_argument("--pipelines", type=int, nargs="+")
    p.add_argument("--window-len", type=int, default=None,
                   help="frames per window (default: the scenario's)")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--kind", choices=("ReferenceMlp", "NearestCentroid"), default="ReferenceMlp")
    p.set_defaults(func=cmd_train)

    p = sp.add_parser("eval", help="evaluate a model; writes report.json and CSV metrics")
    _common(p, True)
    p.add_argument("model")
    p.add_argument("capture")
    p.add_argument("labels")
    p.add_argument("--backgrounds", required=True)
    p.add_argument("--scenario", help="scenario file with the landmark table")
    p.add_argument("--safety", help="robot-cell parameter file")
    p.add_argument("--window-len", type=int, default=None,
                   help="frames per window (default: the scenario's)")
    p.set_defaults(func=cmd_eval)

    p = sp.add_parser("count", help="training-free worker counting")
    _common(p, True)
    p.add_argument("capture", nargs="?", help="CSI capture; omitted runs the synthetic protocol")
    p.add_argument("--sessions", type=int, default=10, help="sessions per worker count")
    p.add_argument("--frames", type=int, default=400)
    p.set_defaults(func=cmd_count)

    p = sp.add_parser("safety", help="protective distance from an evaluation report")
    _common(p, True)
    p.add_argument("report")
    p.set_defaults(func=cmd_safety)

    p = sp.add_parser("serve-edge", help="run the micro-edges")
    _common(p)
    p.add_argument("--capture")
    p.add_argument("--model")
    p.add_argument("--duration", type=float, default=None, help="seconds (tcp mode)")
    p.set_defaults(func=cmd_serve_edge)

    p = sp.add_parser("serve-cloud", help="run the cloud classifier against a TCP broker")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--duration", type=float, default=None)
    p.set_defaults(func=cmd_serve_cloud)

    p = sp.add_parser("serve-api", help="broker over TCP plus the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--tcp-port", type=int, default=1883)
    p.add_argument("--auto-register", action="store_true")
    p.set_defaults(func=cmd_serve_api)

    p = sp.add_parser("replay", help="publish a capture to a TCP broker")
    _common(p)
    p.add_argument("capture")
    p.add_argument("--scale", type=float, default=None, help="pace by t_ms deltas times SCALE")
    p.set_defaults(func=cmd_replay)

    p = sp.add_parser("fetch", help="print the retained message of a topic")
    _common(p)
    p.add_argument("topic")
    p.set_defaults(func=cmd_fetch)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args)
    except MdfError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(json.dumps({"error": "MissingFile", "message": str(exc)}), file=sys.stderr)
        return 2
    except (KeyError, ValueError, TypeError) as exc:
        print(json.dumps({"error": "BadConfig", "message": str(exc)}), file=sys.stderr)
        return 2
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
