import json
import math
import os
import signal
import socket
import subprocess
import sys
import threading
import time

import numpy as np
import pytest

from wearmocap import cli, geom, lstm
from wearmocap.estimators import load_calibration
from wearmocap.sim import NoiseConfig, TrajectorySpec, read_recording, simulate, stream
from wearmocap.wire import DeviceKind

WATCH, POCKET = DeviceKind.WATCH, DeviceKind.PHONE_POCKET


def run(*argv):
    return cli.main([str(a) for a in argv])


def free_port(kind=socket.SOCK_DGRAM):
    with socket.socket(socket.AF_INET, kind) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def spawn(*argv, env=None):
    return subprocess.Popen([sys.executable, "-m", "wearmocap.cli", *map(str, argv)], stdout=subprocess.PIPE,
                            stderr=subprocess.PIPE, text=True, env={**os.environ, **(env or {})})


@pytest.fixture(scope="module")
def recording(tmp_path_factory):
    path = tmp_path_factory.mktemp("rec") / "r.csv"
    assert run("sim", "--seed", 7, "--duration", 4, "--out", path) == 0
    return path


def test_sim_twice_gives_identical_files(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("sim", "--seed", 7, "--duration", 3, "--out", a) == 0
    assert run("sim", "--seed", 7, "--duration", 3, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    assert run("sim", "--seed", 8, "--duration", 3, "--out", b) == 0
    assert a.read_bytes() != b.read_bytes()


def test_calibrate_from_recording_matches_mounts(recording, tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("calibrate", "--recording", recording, "--out", a) == 0
    assert "spread" in capsys.readouterr().out
    assert run("calibrate", "--recording", recording, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    calib = load_calibration(a)
    for kind, mount in NoiseConfig().mounts.items():
        err = math.degrees(geom.quat_geodesic_angle(calib.mounts[kind], mount))
        assert err < 0.5, (kind, err)


def test_calibrate_unstable_exits_5(recording, tmp_path, capsys):
    # three seconds runs past the rest hold into the motion
    assert run("calibrate", "--recording", recording, "--seconds", 3, "--out", tmp_path / "c.csv") == 5
    err = capsys.readouterr().err
    assert "spread" in err and "deg" in err
    assert not (tmp_path / "c.csv").exists()


def test_calibrate_live(tmp_path):
    port = free_port()
    _, sensors = simulate(TrajectorySpec(seed=3, duration=3, keyposes=3), NoiseConfig(seed=3))
    out = tmp_path / "live.csv"
    t = threading.Thread(target=lambda: (time.sleep(0.3), stream(sensors[WATCH].frames(), ("127.0.0.1", port),
                                                                  realtime=True)))
    t.start()
    rc = run("calibrate", "--bind", f"127.0.0.1:{port}", "--seconds", 1, "--devices", "watch", "--out", out)
    t.join()
    assert rc == 0
    calib = load_calibration(out)
    assert set(calib.mounts) == {WATCH}
    assert math.degrees(geom.quat_geodesic_angle(calib.mounts[WATCH], NoiseConfig().mounts[WATCH])) < 0.5


def test_record_live(tmp_path):
    port = free_port()
    _, sensors = simulate(TrajectorySpec(seed=4, duration=2, keyposes=2), NoiseConfig(seed=4))
    out = tmp_path / "live.csv"
    frames = sorted([*sensors[WATCH].frames(), *sensors[POCKET].frames()], key=lambda f: f.timestamp_us)
    t = threading.Thread(target=lambda: (time.sleep(0.3), stream(frames, ("127.0.0.1", port), realtime=True)))
    t.start()
    rc = run("record", "--bind", f"127.0.0.1:{port}", "--seconds", 1, "--out", out)
    t.join()
    assert rc == 0
    truth, rec = read_recording(out)
    assert 55 <= len(rec[WATCH]) <= 61
    assert len(rec[POCKET]) >= 55
    assert DeviceKind.PHONE_UPPER_ARM not in rec
    assert np.isnan(truth.q_la).all()


def test_train_memorizes_small_set(tmp_path, capsys):
    data, out = tmp_path / "m.csv", tmp_path / "m.wmcw"
    assert run("sim", "--seed", 2, "--duration", 2, "--out", data) == 0
    rc = run("train", "--data", data, "--mode", "watch_only", "--epochs", 500, "--stride", 10, "--hidden", 32,
             "--layers", 1, "--lr", 1e-2, "--lr-decay", 1.0, "--quiet", "--out", out)
    assert rc == 0
    text = capsys.readouterr().out
    assert text.count("epoch") >= 40
    final = float(text.split("final mse")[1].split()[0])
    assert final < 1e-3
    assert out.read_bytes()[:4] == b"WMCW"
    assert lstm.load_weights(out).input_size == 14


@pytest.fixture(scope="module")
def watch_weights(tmp_path_factory):
    d = tmp_path_factory.mktemp("w")
    data, out = d / "t.csv", d / "t.wmcw"
    assert run("sim", "--seed", 21, "--duration", 4, "--out", data) == 0
    assert run("train", "--data", data, "--epochs", 1, "--hidden", 8, "--layers", 1, "--stride", 8, "--out", out) == 0
    return out


def test_eval_writes_three_rows(recording, watch_weights, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    w = [f"--weights={m}={watch_weights}" for m in ("watch_only",)]
    ua = tmp_path / "ua.wmcw"
    assert run("train", "--data", recording, "--mode", "upper_arm", "--epochs", 1, "--hidden", 8, "--layers", 1,
               "--stride", 8, "--out", ua) == 0
    w.append(f"--weights=upper_arm={ua}")
    assert run("eval", "--recording", recording, "--modes", "all", *w, "--no-timing", "--out", a) == 0
    assert run("eval", "--recording", recording, "--modes", "all", *w, "--no-timing", "--out", b) == 0
    lines = a.read_text().splitlines()
    assert lines[0].startswith("mode,mean_cm")
    assert [r.split(",")[0] for r in lines[1:]] == ["WatchOnly", "UpperArm", "Pocket"]
    assert a.read_bytes() == b.read_bytes()


def test_eval_missing_model_exits_4(recording, tmp_path, capsys):
    assert run("eval", "--recording", recording, "--modes", "watch_only", "--out", tmp_path / "x.csv") == 4
    assert "WatchOnly" in capsys.readouterr().err


def test_hub_bad_weights_exits_4_with_path(tmp_path, capsys):
    bad = tmp_path / "missing.wmcw"
    assert run("hub", "--mode", "watch_only", "--weights", bad, "--no-api") == 4
    assert str(bad) in capsys.readouterr().err
    junk = tmp_path / "junk.wmcw"
    junk.write_bytes(b"WMCW" + b"\0" * 7)
    assert run("hub", "--mode", "upper_arm", "--weights", junk, "--no-api") == 4
    assert str(junk) in capsys.readouterr().err


def test_hub_wrong_shape_weights_exit_4(watch_weights, capsys):
    assert run("hub", "--mode", "upper_arm", "--weights", watch_weights, "--no-api", "--bind", "127.0.0.1:0") == 4
    assert str(watch_weights) in capsys.readouterr().err


def test_hub_bind_in_use_exits_3():
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
        assert run("hub", "--mode", "pocket", "--bind", f"127.0.0.1:{port}", "--no-api") == 3


@pytest.mark.parametrize("text", ["mode = pocket\ncolour = blue\n", "window = lots\n", "not a key value line\n"])
def test_hub_bad_config_exits_2(tmp_path, text):
    cfg = tmp_path / "hub.conf"
    cfg.write_text(text)
    assert run("hub", "--config", cfg, "--no-api", "--bind", "127.0.0.1:0") == 2


def test_config_merge_flags_win(tmp_path):
    cfg = tmp_path / "hub.conf"
    cfg.write_text("# pocket by default\nmode = pocket\nwindow = 30  # frames\npublish = 127.0.0.1:9100, 127.0.0.1:9101\n")
    args = cli.build_parser().parse_args(["hub", "--config", str(cfg), "--window", "12"])
    args = cli._merge_config(args)
    assert args.mode.label == "Pocket" and args.window == 12
    assert args.publish == [("127.0.0.1", 9100), ("127.0.0.1", 9101)]


def test_bad_arguments_exit_2(capsys):
    assert run("sim", "--hip", "sideways") == 2
    assert run("hub", "--mode", "telepathy") == 2
    assert run("frobnicate") == 2


def test_invalid_log_level_exits_2(monkeypatch, tmp_path):
    monkeypatch.setenv("WEARMOCAP_LOG", "chatty")
    assert run("sim", "--duration", 1, "--out", tmp_path / "x.csv") == 2


def test_status_without_hub_exits_1():
    assert run("status", "--api", f"127.0.0.1:{free_port(socket.SOCK_STREAM)}", "--timeout", 0.5) == 1


def wait_for(proc, text, timeout=20.0):
    deadline = time.monotonic() + timeout
    lines = []
    while time.monotonic() < deadline:
        line = proc.stdout.readline()
        if not line:
            break
        lines.append(line)
        if text in line:
            return lines
    raise AssertionError(f"{text!r} not seen in {lines}")


def test_hub_pocket_without_phone_then_sigint(tmp_path):
    port, api = free_port(), free_port(socket.SOCK_STREAM)
    proc = spawn("hub", "--mode", "pocket", "--bind", f"127.0.0.1:{port}", "--api", f"127.0.0.1:{api}",
                 "--stats-interval", 0.5)
    try:
        wait_for(proc, "api on")
        _, sensors = simulate(TrajectorySpec(seed=5, duration=3, keyposes=3), NoiseConfig(seed=5))
        stream(sensors[WATCH].frames(), ("127.0.0.1", port), realtime=True)
        assert proc.poll() is None
        out = subprocess.run([sys.executable, "-m", "wearmocap.cli", "status", "--api", f"127.0.0.1:{api}", "--json"],
                             capture_output=True, text=True, timeout=20)
        stats = json.loads(out.stdout)
        assert stats["status"] == "starved" and stats["poses"] == 0 and stats["frames"] > 100
        proc.send_signal(signal.SIGINT)
        stdout, _ = proc.communicate(timeout=20)
    finally:
        if proc.poll() is None:
            proc.kill()
    assert proc.returncode == 0
    final = stdout.strip().splitlines()[-1]
    assert final.startswith("Pocket starved: frames=")


def test_hub_loopback_publishes_poses(tmp_path):
    port = free_port()
    rx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    rx.bind(("127.0.0.1", 0))
    rx.settimeout(0.05)
    proc = spawn("hub", "--mode", "pocket", "--bind", f"127.0.0.1:{port}", "--no-api",
                 "--publish", f"127.0.0.1:{rx.getsockname()[1]}")
    got = 0
    try:
        wait_for(proc, "listening")
        _, sensors = simulate(TrajectorySpec(seed=6, duration=3, keyposes=3), NoiseConfig(seed=6))
        frames = sorted([*sensors[WATCH].frames(), *sensors[POCKET].frames()], key=lambda f: f.timestamp_us)
        sender = threading.Thread(target=stream, args=(frames, ("127.0.0.1", port)), kwargs={"realtime": True})
        sender.start()
        while sender.is_alive() or got == 0:
            try:
                rx.recv(4096)
                got += 1
            except socket.timeout:
                if not sender.is_alive():
                    break
        sender.join()
        proc.send_signal(signal.SIGTERM)
        proc.communicate(timeout=20)
    finally:
        rx.close()
        if proc.poll() is None:
            proc.kill()
    assert proc.returncode == 0
    # 180 watch frames, 60 spent on the rest hold
    assert got >= 0.95 * (len(sensors[WATCH]) - 61)
