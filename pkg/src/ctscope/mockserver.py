"""In-process HTTP mock of the video query API and a chat-completion endpoint.

Used by the test suite and by ``ctscope classify --mock``-style dry runs.

    with MockServer(videos=records, page_size=10) as srv:
        list(fetch_window(query, budget, srv.video_url))
"""
from __future__ import annotations

import json
import threading
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable

LENGTH_CLASSES = {"SHORT": (0, 15), "MID": (15, 60), "LONG": (60, 300), "EXTRA_LONG": (300, 10**9)}


def _length_class(duration: int) -> str:
    for name, (lo, hi) in LENGTH_CLASSES.items():
        if lo <= duration < hi:
            return name
    return "EXTRA_LONG"


def _matches(video: dict, query: dict) -> bool:
    for cond in (query or {}).get("and", []):
        field, values = cond.get("field_name"), cond.get("field_values", [])
        if field == "region_code" and video.get("region_code") not in values:
            return False
        if field == "video_length" and _length_class(int(video.get("video_duration") or 0)) not in values:
            return False
    return True


class MockServer:
    """Threaded HTTP server on an ephemeral localhost port.

    ``videos`` are API-shaped dicts served in pages of ``page_size``;
    ``fail_video`` leading query requests get HTTP 500. ``chat_script`` is
    a list of ``(status, text)`` replies consumed in order before
    ``chat_fn(prompt, seed)`` takes over.
    """

    def __init__(self, videos: list[dict] | None = None, page_size: int = 10, fail_video: int = 0,
                 chat_script: list[tuple[int, str]] | None = None,
                 chat_fn: Callable[[str, int | None], str] | None = None, openai_style: bool = False):
        self.videos = list(videos or [])
        self.page_size = page_size
        self.fail_video = fail_video
        self.chat_script = deque(chat_script or [])
        self.chat_fn = chat_fn or (lambda prompt, seed: "0")
        self.openai_style = openai_style
        self.requests: list[tuple[str, dict]] = []
        self._lock = threading.Lock()
        self._httpd: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def video_url(self) -> str:
        return self.url + "/v2/research/video/query/"

    @property
    def chat_url(self) -> str:
        return self.url + "/v1/chat/completions"

    def start(self) -> "MockServer":
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length") or 0)
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError:
                    return self._send(400, {"error": {"code": "invalid_params", "message": "bad json"}})
                with server._lock:
                    server.requests.append((self.path, body))
                if "/video/query" in self.path:
                    status, payload = server._video(body)
                elif "/chat" in self.path:
                    status, payload = server._chat(body)
                else:
                    status, payload = 404, {"error": {"code": "not_found", "message": self.path}}
                self._send(status, payload)

            def _send(self, status, payload):
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
            self._httpd = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _video(self, body: dict) -> tuple[int, dict]:
        with self._lock:
            if self.fail_video > 0:
                self.fail_video -= 1
                return 500, {"error": {"code": "internal_error", "message": "try again"}}
        matching = [v for v in self.videos if _matches(v, body.get("query"))]
        size = min(int(body.get("max_count") or self.page_size), self.page_size)
        start = int(body.get("cursor") or 0)
        page = matching[start:start + size]
        nxt = start + len(page)
        return 200, {
            "data": {"videos": page, "cursor": nxt, "has_more": nxt < len(matching),
                     "search_id": "mock-search", "query_echo": body.get("query")},
            "error": {"code": "ok", "message": ""},
        }

    def _chat(self, body: dict) -> tuple[int, dict]:
        with self._lock:
            scripted = self.chat_script.popleft() if self.chat_script else None
        if scripted is not None:
            status, text = scripted
            if status != 200:
                return status, {"error": text}
        else:
            prompt = body["messages"][-1]["content"]
            text = self.chat_fn(prompt, body.get("seed"))
        if self.openai_style:
            return 200, {"choices": [{"message": {"role": "assistant", "content": text}}]}
        return 200, {"text": text}
