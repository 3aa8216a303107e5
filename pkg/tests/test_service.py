import socket
import threading
import time

import pytest
from fastapi.testclient import TestClient

from arstage.config import ServerConfig
from arstage.geo import GeoPosition, LocalPosition, local_to_geo, make_anchor
from arstage.protocol import (
    ClientHello,
    ContentSnapshot,
    ErrorMsg,
    Message,
    ProfileModel,
    UserJoined,
    decode,
    encode,
)
from arstage.registry import ContentItem, ContentKind, Project
from arstage.service import create_app
from arstage.session import Session
from arstage.simclient import Scenario, WebSocketTransport, run_scenario

ORIGIN = GeoPosition(41.8781, -87.6298, 0.0)
ANCHOR = make_anchor(ORIGIN)

PROFILE = ProfileModel(
    model="TestPhone",
    os="TestOS",
    screen_w_px=1080,
    screen_h_px=1920,
    camera_vfov_deg=60.0,
    camera_res_w_px=1920,
    camera_res_h_px=1080,
)


def make_session(*items, config=None) -> Session:
    project = Project("svc", ORIGIN)
    for item in items:
        project.add_item(item)
    return Session(project, config or ServerConfig())


def quad(item_id, z=10.0):
    return ContentItem(
        id=item_id,
        kind=ContentKind.IMAGE_QUAD,
        geo=local_to_geo(ANCHOR, LocalPosition(0, 1.6, z)),
    )


def ws_send(ws, body, seq):
    ws.send_text(encode(Message(seq=seq, body=body)).decode("utf-8"))


def ws_recv(ws) -> Message:
    return decode(ws.receive_text().encode("utf-8"))


class TestHttp:
    def test_healthz(self):
        session = make_session(quad("q1"))
        with TestClient(create_app(session)) as client:
            r = client.get("/healthz")
            assert r.status_code == 200
            assert r.json() == {"status": "ok", "users": 0, "revision": 1}

    def test_static_console_served(self, tmp_path):
        (tmp_path / "index.html").write_text("<html>console</html>")
        session = make_session()
        with TestClient(create_app(session, static_dir=tmp_path)) as client:
            r = client.get("/")
            assert r.status_code == 200
            assert "console" in r.text

    def test_no_static_dir_no_root_route(self):
        session = make_session()
        with TestClient(create_app(session)) as client:
            assert client.get("/").status_code == 404


class TestWebSocket:
    def test_hello_gets_snapshot(self):
        session = make_session(quad("q1"))
        with TestClient(create_app(session)) as client:
            with client.websocket_connect("/ws") as ws:
                ws_send(ws, ClientHello(client_id="c1", profile=PROFILE), 1)
                msg = ws_recv(ws)
                assert isinstance(msg.body, ContentSnapshot)
                assert [i.id for i in msg.body.items] == ["q1"]
                assert "c1" in session.users

    def test_designer_sees_user_joined(self):
        session = make_session()
        with TestClient(create_app(session)) as client:
            with client.websocket_connect("/ws") as designer:
                ws_send(designer, ClientHello(client_id="d1", profile=PROFILE, role="designer"), 1)
                assert isinstance(ws_recv(designer).body, ContentSnapshot)
                with client.websocket_connect("/ws") as phone:
                    ws_send(phone, ClientHello(client_id="c1", profile=PROFILE), 1)
                    joined = ws_recv(designer).body
                    assert isinstance(joined, UserJoined)
                    assert joined.user.client_id == "c1"

    def test_version_mismatch_closes_socket(self):
        session = make_session()
        with TestClient(create_app(session)) as client:
            with client.websocket_connect("/ws") as ws:
                ws_send(ws, ClientHello(client_id="c1", profile=PROFILE, protocol_major=9), 1)
                err = ws_recv(ws).body
                assert isinstance(err, ErrorMsg)
                assert err.code == "VERSION_MISMATCH"
                with pytest.raises(Exception):
                    ws.receive_text()
        assert session.users == {}

    def test_disconnect_removes_user(self):
        session = make_session()
        with TestClient(create_app(session)) as client:
            with client.websocket_connect("/ws") as ws:
                ws_send(ws, ClientHello(client_id="c1", profile=PROFILE), 1)
                ws_recv(ws)
                assert "c1" in session.users
            deadline = time.monotonic() + 2.0
            while session.users and time.monotonic() < deadline:
                time.sleep(0.01)
            assert session.users == {}


class TestLiveServer:
    """End-to-end over a real TCP socket."""

    @pytest.fixture()
    def server(self):
        import uvicorn

        session = make_session(quad("q1"))
        with socket.socket() as probe:
            probe.bind(("127.0.0.1", 0))
            port = probe.getsockname()[1]
        config = uvicorn.Config(
            create_app(session), host="127.0.0.1", port=port, log_level="warning"
        )
        server = uvicorn.Server(config)
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        deadline = time.monotonic() + 5.0
        while not server.started and time.monotonic() < deadline:
            time.sleep(0.02)
        assert server.started, "uvicorn did not start"
        yield session, f"ws://127.0.0.1:{port}/ws"
        server.should_exit = True
        thread.join(timeout=5)

    def test_scenario_over_real_websocket(self, server):
        session, url = server
        origin = local_to_geo(ANCHOR, LocalPosition(0, 0, 0))
        end = local_to_geo(ANCHOR, LocalPosition(0, 0, 4))
        scenario = Scenario.model_validate(
            {
                "name": "ws-walk",
                "profile": PROFILE.model_dump(),
                "path": [
                    {"lat": origin.latitude_deg, "lon": origin.longitude_deg},
                    {"lat": end.latitude_deg, "lon": end.longitude_deg},
                ],
                "speed_m_s": 4.0,
                "noise": {"imu_rate_hz": 10.0},
            }
        )
        log = run_scenario(
            scenario, WebSocketTransport(url), project=session.project, realtime=True
        )
        assert any(r["tag"] == "ContentSnapshot" for r in log.received)
        # the server fused this client's walk before the socket closed
        deadline = time.monotonic() + 2.0
        while session.users and time.monotonic() < deadline:
            time.sleep(0.01)
        assert session.users == {}
        assert log.truth[-1]["position"][2] == pytest.approx(4.0, abs=1e-6)

    def test_retry_then_fail_when_no_server(self):
        from arstage.simclient import ScenarioError

        t0 = time.monotonic()
        with pytest.raises(ScenarioError, match="cannot connect"):
            WebSocketTransport("ws://127.0.0.1:9", retries=2, retry_delay_s=0.05)
        assert time.monotonic() - t0 < 5.0
