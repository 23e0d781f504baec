"""``wearmocap`` command line: run the hub, calibrate, simulate, record, train, evaluate, query status."""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import signal
import socket
import sys
import threading
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import lstm
from .estimators import (
    CalibrationError,
    CalibrationUnstableError,
    ConfigError,
    ModeConfig,
    calibrate,
    fit_model,
    load_calibration,
    save_calibration,
)
from .estimators.calibration import KIND_KEYS
from .estimators.session import head, pair_indices
from .sim import (
    NoiseConfig,
    RecordingParseError,
    SpecError,
    TrajectorySpec,
    interleave,
    read_recording,
    simulate,
    stream,
    write_recording,
)
from .sim.recording import COLUMNS, DEVICE_PREFIX, write_table
from .wire import BindError, DeviceKind, FrameRouter, Mode, UdpIngestor, parse_address

log = logging.getLogger("wearmocap")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_BIND, EXIT_WEIGHTS, EXIT_CALIBRATION = 0, 1, 2, 3, 4, 5

DEFAULT_BIND = "127.0.0.1:9000"
DEFAULT_API = "127.0.0.1:8750"
ALL_MODES = (Mode.WATCH_ONLY, Mode.UPPER_ARM, Mode.POCKET)
DEVICE_NAMES = {v: k for k, v in KIND_KEYS.items()}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _address(text: str):
    try:
        return parse_address(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a host:port address: {text!r}") from None


def _mode(text: str) -> Mode:
    try:
        return Mode.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _devices(text: str) -> list[DeviceKind]:
    out = []
    for name in filter(None, (t.strip() for t in text.split(","))):
        if name not in DEVICE_NAMES:
            raise argparse.ArgumentTypeError(f"unknown device {name!r} (choose from {', '.join(DEVICE_NAMES)})")
        out.append(DEVICE_NAMES[name])
    return out


# config file

HUB_KEYS = {"mode", "bind", "publish", "weights", "calib_file", "api", "no_api", "window", "pairing_tolerance_ms",
            "stats_interval", "duration"}


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",))
    try:
        text = Path(path).read_text()
        parser.read_string("[hub]\n" + text, source=str(path))
    except OSError as e:
        raise CliError(EXIT_CONFIG, f"cannot read config {path}: {e.strerror}") from None
    except configparser.Error as e:
        raise CliError(EXIT_CONFIG, f"config {path}: {e.message.splitlines()[0]}") from None
    values = {k.replace("-", "_"): v for k, v in parser["hub"].items()}
    unknown = sorted(set(values) - HUB_KEYS)
    if unknown:
        raise CliError(EXIT_CONFIG, f"config {path}: unknown key {unknown[0]!r}")
    return values


def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset hub flags from ``--config``; flags given on the command line win."""
    if not args.config:
        return args
    values = read_config(args.config)
    converters = {
        "mode": _mode, "bind": _address, "api": _address, "weights": str, "calib_file": str,
        "publish": lambda v: [_address(a) for a in v.replace(",", " ").split()],
        "no_api": lambda v: v.strip().lower() in ("1", "true", "yes", "on"),
        "window": int, "pairing_tolerance_ms": float, "stats_interval": float, "duration": float,
    }
    for key, raw in values.items():
        if getattr(args, key) not in (None, []):
            continue
        try:
            setattr(args, key, converters[key](raw))
        except (ValueError, argparse.ArgumentTypeError) as e:
            raise CliError(EXIT_CONFIG, f"config {args.config}: bad value for {key}: {e}") from None
    return args


# hub


def _load_params(mode: Mode, weights: Optional[str]):
    if mode == Mode.POCKET:
        return None
    if not weights:
        raise CliError(EXIT_WEIGHTS, f"{mode.label} mode needs --weights")
    try:
        return lstm.load_weights(weights)
    except OSError as e:
        raise CliError(EXIT_WEIGHTS, f"cannot load weights {weights}: {e.strerror or e}") from None
    except lstm.WeightsError as e:
        raise CliError(EXIT_WEIGHTS, f"bad weights file {weights}: {e}") from None


def cmd_hub(args) -> int:
    from .service import ApiServer, Hub

    args = _merge_config(args)
    mode = args.mode or Mode.WATCH_ONLY
    params = _load_params(mode, args.weights)
    calib = None
    if args.calib_file:
        try:
            calib = load_calibration(args.calib_file)
        except (OSError, CalibrationError) as e:
            raise CliError(EXIT_CONFIG, f"calibration file {args.calib_file}: {e}") from None
    kw = {}
    if args.window is not None:
        kw["window"] = args.window
    if args.pairing_tolerance_ms is not None:
        kw["pairing_tolerance_ms"] = args.pairing_tolerance_ms
    config = ModeConfig(mode, **kw)
    bind = args.bind or parse_address(DEFAULT_BIND)
    try:
        hub = Hub(config, calib, params, bind=bind, subscribers=args.publish or [],
                  stats_interval_s=args.stats_interval or 10.0, on_stats=lambda line: print(line, flush=True))
    except BindError as e:
        raise CliError(EXIT_BIND, str(e)) from None
    except ConfigError as e:
        code = EXIT_WEIGHTS if mode != Mode.POCKET else EXIT_CONFIG
        raise CliError(code, f"{e}" + (f" ({args.weights})" if args.weights else "")) from None
    except CalibrationError as e:
        raise CliError(EXIT_CONFIG, f"calibration file {args.calib_file}: {e}") from None

    stop = threading.Event()
    previous = {s: signal.signal(s, lambda *_: stop.set()) for s in (signal.SIGINT, signal.SIGTERM)}
    api = None
    try:
        hub.start()
        print(f"hub {mode.label} listening on {hub.address[0]}:{hub.address[1]}", flush=True)
        if not args.no_api:
            host, port = args.api or parse_address(DEFAULT_API)
            try:
                probe = socket.socket()
                probe.bind((host, port))
                probe.close()
            except OSError as e:
                raise CliError(EXIT_BIND, f"cannot bind API {host}:{port}: {e.strerror}") from None
            api = ApiServer(hub, host, port).start()
            print(f"api on http://{host}:{port}", flush=True)
        deadline = None if not args.duration else time.monotonic() + args.duration
        while not stop.is_set():
            if deadline is not None and time.monotonic() >= deadline:
                break
            stop.wait(0.1)
    finally:
        for s, h in previous.items():
            signal.signal(s, h)
        if api is not None:
            api.stop()
        hub.stop()
    print(hub.stats_line(), flush=True)
    return EXIT_OK


# capture helpers


def capture_frames(bind, seconds: float, wait: float = 10.0, kinds: Optional[Sequence[DeviceKind]] = None):
    """Collect frames per device kind for ``seconds`` of watch time after the first watch frame."""
    router = FrameRouter()
    try:
        ingestor = UdpIngestor(bind, router)
    except BindError as e:
        raise CliError(EXIT_BIND, str(e)) from None
    frames: dict[DeviceKind, list] = {}
    start = time.monotonic()
    with ingestor:
        t0 = None
        while True:
            for kind in DeviceKind:
                if kinds is not None and kind not in kinds:
                    router.drain_kind(kind)
                    continue
                for d in router.drain_kind(kind):
                    frames.setdefault(kind, []).append(d.frame)
            watch = frames.get(DeviceKind.WATCH, [])
            if watch and t0 is None:
                t0 = watch[0].timestamp_us
            if t0 is not None and watch[-1].timestamp_us - t0 >= seconds * 1e6:
                break
            if t0 is None and time.monotonic() - start > wait:
                break
            if t0 is not None and time.monotonic() - start > wait + seconds * 2:
                break
            time.sleep(0.01)
    if t0 is not None:
        end = t0 + seconds * 1e6
        frames = {k: [f for f in v if f.timestamp_us < end] for k, v in frames.items()}
    return frames


def cmd_calibrate(args) -> int:
    if args.recording:
        _, sensors = _read_recording(args.recording)
        devices = args.devices or list(sensors)
        frames = {k: head(sensors[k], args.seconds) for k in devices}
    else:
        print(f"hold the arm straight down, palm in, for {args.seconds:g} s", flush=True)
        frames = capture_frames(args.bind, args.seconds, kinds=args.devices)
        if DeviceKind.WATCH not in frames:
            raise CliError(EXIT_CALIBRATION, "no watch frames received")
    try:
        calib = calibrate(frames)
    except CalibrationUnstableError as e:
        print(f"calibration unstable: {KIND_KEYS[e.device]} spread {e.spread_deg:.2f} deg", file=sys.stderr)
        raise CliError(EXIT_CALIBRATION, str(e)) from None
    except CalibrationError as e:
        raise CliError(EXIT_CALIBRATION, str(e)) from None
    for kind, spread in calib.spread_deg.items():
        print(f"{KIND_KEYS[kind]:<10} spread {spread:.3f} deg")
    save_calibration(calib, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _read_recording(path):
    try:
        return read_recording(path)
    except OSError as e:
        raise CliError(EXIT_FAILURE, f"cannot read {path}: {e.strerror}") from None
    except RecordingParseError as e:
        raise CliError(EXIT_FAILURE, f"{path}: {e}") from None


# sim / record


def cmd_sim(args) -> int:
    keyposes = args.keyposes or max(2, round(24 * args.duration / 20.0))
    spec = TrajectorySpec(seed=args.seed, duration=args.duration, keyposes=keyposes, hip_profile=args.hip)
    noise = NoiseConfig(seed=args.seed if args.noise_seed is None else args.noise_seed)
    try:
        truth, sensors = simulate(spec, noise)
    except (SpecError, ValueError) as e:
        raise CliError(EXIT_CONFIG, str(e)) from None
    if args.out:
        write_recording(truth, sensors, args.out)
        print(f"wrote {len(truth)} frames to {args.out}")
    if args.target:
        kinds = args.devices or list(sensors)
        rep = stream(interleave(*(sensors[k] for k in kinds)), args.target, realtime=args.realtime, loss=args.loss,
                     seed=args.seed)
        print(f"sent {rep.sent} dropped {rep.dropped} failed {rep.failed} in {rep.wall_time_s:.2f} s")
    return EXIT_OK


def capture_table(frames: dict[DeviceKind, list], tolerance_ms: float = 50.0) -> np.ndarray:
    """Recording rows for live frames: one per watch frame, phones paired by timestamp, no ground truth."""
    watch = frames.get(DeviceKind.WATCH, [])
    n = len(watch)
    table = np.full((n, len(COLUMNS)), np.nan)
    col = {c: i for i, c in enumerate(COLUMNS)}
    w_ts = np.array([f.timestamp_us for f in watch], dtype=np.int64)
    table[:, 0] = w_ts
    for kind, prefix in DEVICE_PREFIX.items():
        src = frames.get(kind, [])
        rows = np.arange(n)
        idx = rows
        if kind != DeviceKind.WATCH:
            rows, idx, _ = pair_indices(w_ts, np.array([f.timestamp_us for f in src], dtype=np.int64), tolerance_ms)
        for field in ("id", "seq", "t_us"):
            table[:, col[f"{prefix}_{field}"]] = 0
        for r, i in zip(rows, idx):
            f = src[i]
            values = [f.device_id, f.seq, f.timestamp_us, *f.accel, *f.gyro, *f.orientation]
            for name, v in zip(("id", "seq", "t_us", "ax", "ay", "az", "gx", "gy", "gz", "qw", "qx", "qy", "qz"), values):
                table[r, col[f"{prefix}_{name}"]] = v
    table[:, col["watch_pressure"]] = [np.nan if f.pressure_hpa is None else f.pressure_hpa for f in watch]
    return table


def cmd_record(args) -> int:
    print(f"recording {args.seconds:g} s from {args.bind[0]}:{args.bind[1]}", flush=True)
    frames = capture_frames(args.bind, args.seconds)
    if not frames.get(DeviceKind.WATCH):
        raise CliError(EXIT_FAILURE, "no watch frames received")
    table = capture_table(frames)
    write_table(table, args.out)
    counts = ", ".join(f"{KIND_KEYS[k]} {len(v)}" for k, v in sorted(frames.items()))
    print(f"wrote {len(table)} rows to {args.out} ({counts})")
    return EXIT_OK


# train / eval


def cmd_train(args) -> int:
    recordings = [_read_recording(p) for p in args.data]
    if args.sim:
        from .evaluation.scenarios import TRAIN_SEEDS, training_set

        recordings += training_set(args.mode, TRAIN_SEEDS[:args.sim])
    if not recordings:
        raise CliError(EXIT_CONFIG, "no training data (give --data or --sim)")
    config = lstm.TrainConfig(lr=args.lr, epochs=args.epochs, batch=args.batch, seed=args.seed, lr_decay=args.lr_decay)
    every = max(1, args.epochs // 50) if args.quiet else 1

    def progress(epoch, loss):
        if (epoch + 1) % every == 0 or epoch + 1 == args.epochs:
            print(f"epoch {epoch + 1:>4d} loss {loss:.6g}", flush=True)

    try:
        res = fit_model(recordings, args.mode, config, window=args.window, stride=args.stride,
                        hidden_size=args.hidden, num_layers=args.layers, progress=progress)
    except lstm.LstmError as e:
        raise CliError(EXIT_FAILURE, str(e)) from None
    except CalibrationError as e:
        raise CliError(EXIT_CALIBRATION, f"calibrating a training recording: {e}") from None
    print(f"initial mse {res.loss_curve[0]:.6g}")
    print(f"final mse {res.loss_curve[-1]:.6g}")
    lstm.save_weights(res.params, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import ModelMissingError, compare_modes

    modes = ALL_MODES if args.modes == "all" else tuple(_mode(m) for m in args.modes.split(","))
    models = {}
    for item in args.weights or []:
        name, sep, path = item.partition("=")
        if not sep:
            raise CliError(EXIT_CONFIG, f"--weights expects MODE=PATH, got {item!r}")
        models[_mode(name)] = path
    recordings = [_read_recording(p) for p in args.recording]
    configs = [ModeConfig(m) for m in modes]
    try:
        report = compare_modes(recordings, configs, models)
    except ModelMissingError as e:
        raise CliError(EXIT_WEIGHTS, str(e)) from None
    except lstm.WeightsError as e:
        raise CliError(EXIT_WEIGHTS, str(e)) from None
    except CalibrationError as e:
        raise CliError(EXIT_CALIBRATION, str(e)) from None
    print(report.to_text())
    if args.out:
        Path(args.out).write_text(report.to_csv(timing=not args.no_timing))
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_status(args) -> int:
    import httpx

    host, port = args.api
    try:
        r = httpx.get(f"http://{host}:{port}/stats", timeout=args.timeout)
        r.raise_for_status()
    except httpx.HTTPError as e:
        raise CliError(EXIT_FAILURE, f"hub API at {host}:{port} unreachable: {e}") from None
    stats = r.json()
    if args.json:
        print(json.dumps(stats, sort_keys=True))
    else:
        lat = stats.get("median_latency_ms")
        print(f"{stats['mode']} {stats['status']}: frames={stats['frames']} poses={stats['poses']} "
              f"drops={stats['drops']} median_latency_ms={'-' if lat is None else f'{lat:.2f}'}")
    return EXIT_OK


# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wearmocap", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    h = sub.add_parser("hub", help="run ingest, pairing, estimation and publishing")
    h.add_argument("--mode", type=_mode, help="watch_only, upper_arm or pocket (default watch_only)")
    h.add_argument("--bind", type=_address, help=f"UDP address for device frames (default {DEFAULT_BIND})")
    h.add_argument("--publish", type=_address, action="append", default=[], help="pose subscriber host:port")
    h.add_argument("--weights", help="WMCW model file for the learned modes")
    h.add_argument("--config", help="flat key = value file; flags override it")
    h.add_argument("--calib-file", help="calibration file; without one the first second is taken as rest")
    h.add_argument("--api", type=_address, help=f"HTTP API address (default {DEFAULT_API})")
    h.add_argument("--no-api", action="store_true", default=None, help="do not serve the HTTP API")
    h.add_argument("--window", type=int)
    h.add_argument("--pairing-tolerance-ms", type=float)
    h.add_argument("--stats-interval", type=float, help="seconds between stats lines (default 10)")
    h.add_argument("--duration", type=float, help="stop after this many seconds")
    h.set_defaults(func=cmd_hub)

    c = sub.add_parser("calibrate", help="capture an arm-down rest hold and write a calibration file")
    c.add_argument("--bind", type=_address, default=parse_address(DEFAULT_BIND))
    c.add_argument("--seconds", type=float, default=1.0)
    c.add_argument("--out", required=True)
    c.add_argument("--recording", help="calibrate from the start of a recording instead of live frames")
    c.add_argument("--devices", type=_devices, help="comma list of watch, upper_arm, pocket (default: all seen)")
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("sim", help="simulate devices; write a recording and/or stream frames")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--duration", type=float, default=20.0)
    s.add_argument("--keyposes", type=int)
    s.add_argument("--hip", choices=("fixed", "ramp", "random-walk"), default="fixed")
    s.add_argument("--noise-seed", type=int)
    s.add_argument("--out", help="recording CSV")
    s.add_argument("--target", type=_address, help="stream frames to this hub address")
    s.add_argument("--devices", type=_devices, help="devices to stream (default all)")
    s.add_argument("--realtime", action="store_true", help="pace frames at their timestamps")
    s.add_argument("--loss", type=float, default=0.0, help="fraction of datagrams to drop")
    s.set_defaults(func=cmd_sim)

    r = sub.add_parser("record", help="capture live device frames into a recording CSV")
    r.add_argument("--bind", type=_address, default=parse_address(DEFAULT_BIND))
    r.add_argument("--seconds", type=float, default=10.0)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_record)

    t = sub.add_parser("train", help="train a learned mode and write a WMCW file")
    t.add_argument("--data", action="append", default=[], help="recording CSV (repeatable)")
    t.add_argument("--sim", type=int, default=0, help="also train on this many committed-seed simulations")
    t.add_argument("--mode", type=_mode, default=Mode.WATCH_ONLY)
    t.add_argument("--epochs", type=int, default=12)
    t.add_argument("--lr", type=float, default=2e-3)
    t.add_argument("--lr-decay", type=float, default=0.9)
    t.add_argument("--batch", type=int, default=64)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--hidden", type=int, default=128)
    t.add_argument("--layers", type=int, default=3)
    t.add_argument("--window", type=int, default=25)
    t.add_argument("--stride", type=int, default=1)
    t.add_argument("--quiet", action="store_true", help="print about 50 loss lines instead of every epoch")
    t.add_argument("--out", default="model.wmcw")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="compare modes on recordings and write the CSV report")
    e.add_argument("--recording", action="append", required=True)
    e.add_argument("--modes", default="all", help="all or a comma list")
    e.add_argument("--weights", action="append", help="MODE=PATH for each learned mode")
    e.add_argument("--out", help="report CSV")
    e.add_argument("--no-timing", action="store_true", help="leave ms_per_frame empty so reruns are byte-identical")
    e.set_defaults(func=cmd_eval)

    st = sub.add_parser("status", help="print a running hub's stats")
    st.add_argument("--api", type=_address, default=parse_address(DEFAULT_API))
    st.add_argument("--timeout", type=float, default=2.0)
    st.add_argument("--json", action="store_true")
    st.set_defaults(func=cmd_status)
    return p


def _setup_logging() -> None:
    level = os.environ.get("WEARMOCAP_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        raise CliError(EXIT_CONFIG, f"WEARMOCAP_LOG: unknown level {level!r}")
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    try:
        _setup_logging()
        return args.func(args)
    except CliError as e:
        print(f"wearmocap {args.command}: {e}", file=sys.stderr)
        return e.code
    except KeyboardInterrupt:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
