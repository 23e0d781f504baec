"""HTTP control surface of a running hub."""

from __future__ import annotations

import math
import threading
from typing import Optional

from fastapi import FastAPI, HTTPException, Response

from ..estimators.calibration import KIND_KEYS as CALIBRATION_KEYS
from .hub import Hub
from .schemas import Calibration, Health, Pose, Stats, Subscriber


def create_app(hub: Hub) -> FastAPI:
    app = FastAPI(title="wearmocap hub", version="0.1.0")
    app.state.hub = hub

    @app.get("/health", response_model=Health)
    def health() -> Health:
        return Health(mode=hub.mode.label, calibrated=hub.calib is not None)

    @app.get("/stats", response_model=Stats)
    def stats() -> Stats:
        s = hub.stats()
        if math.isnan(s["median_latency_ms"]):
            s["median_latency_ms"] = None
        return Stats(**s)

    @app.get("/pose", response_model=Pose)
    def pose() -> Pose:
        with hub._lock:
            msg, conf, status = hub.last_pose, hub.last_confidence, hub.status
        if msg is None:
            raise HTTPException(404, f"no pose yet (status {status.value})")
        return Pose(timestamp_us=msg.timestamp_us, mode=msg.mode.label, status=status.value, confidence=conf,
                    q_la=list(msg.q_la), q_ua=list(msg.q_ua), q_hi=None if msg.q_hi is None else list(msg.q_hi),
                    shoulder=list(msg.shoulder), elbow=list(msg.elbow), wrist=list(msg.wrist))

    @app.get("/subscribers", response_model=list[Subscriber])
    def subscribers() -> list[Subscriber]:
        return [Subscriber(host=h, port=p) for h, p in hub.publisher.subscribers]

    @app.post("/subscribers", response_model=Subscriber, status_code=201)
    def add_subscriber(sub: Subscriber) -> Subscriber:
        hub.publisher.add((sub.host, sub.port))
        return sub

    @app.delete("/subscribers/{host}/{port}", status_code=204)
    def remove_subscriber(host: str, port: int) -> Response:
        if not hub.publisher.remove((host, port)):
            raise HTTPException(404, f"{host}:{port} is not subscribed")
        return Response(status_code=204)

    @app.get("/calibration", response_model=Calibration)
    def calibration() -> Calibration:
        calib = hub.calib
        if calib is None:
            raise HTTPException(404, "not calibrated yet")
        return Calibration(
            heading=[float(c) for c in calib.heading],
            mounts={CALIBRATION_KEYS[k]: [float(c) for c in q] for k, q in calib.mounts.items()},
            ref_pressure_hpa=calib.ref_pressure_hpa,
            ref_wrist_height_m=calib.ref_wrist_height_m,
            spread_deg={CALIBRATION_KEYS[k]: float(v) for k, v in calib.spread_deg.items()},
        )

    return app


class ApiServer:
    """Uvicorn on a background thread, stopped together with the hub."""

    def __init__(self, hub: Hub, host: str = "127.0.0.1", port: int = 8750, log_level: str = "warning"):
        import uvicorn

        self.config = uvicorn.Config(create_app(hub), host=host, port=port, log_level=log_level, lifespan="off")
        self.server = uvicorn.Server(self.config)
        self.server.install_signal_handlers = lambda: None
        self._thread: Optional[threading.Thread] = None

    def start(self) -> "ApiServer":
        self._thread = threading.Thread(target=self.server.run, name="wearmocap-api", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.server.should_exit = True
        if self._thread is not None:
            self._thread.join(timeout=5.0)
