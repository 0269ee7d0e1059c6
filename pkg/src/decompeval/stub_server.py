"""Deterministic local endpoint for offline runs and tests.

Modes:
  echo     answer with the reference source of the corpus record whose
           assembly appears in the prompt, behind a reasoning span
  canned   answer every request with a fixed text
  invalid  answer with code that never compiles
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

INVALID_REPLY = "<think>giving up</think>\n```dart\nint broken(int x) => x +;\n```\n"


class StubState:
    def __init__(self, mode: str = "echo", corpus=None, canned: str = "",
                 reject_beam: bool = False, require_key: str | None = None):
        if mode not in ("echo", "canned", "invalid"):
            raise ValueError(f"unknown stub mode {mode!r}")
        self.mode = mode
        self.canned = canned
        self.reject_beam = reject_beam
        self.require_key = require_key
        self.by_assembly = {}
        if corpus is not None:
            for r in corpus.records:
                self.by_assembly.setdefault(r.assembly, r)
        self.requests: list[dict] = []
        self.lock = threading.Lock()

    def reply(self, body: dict) -> str:
        if self.mode == "canned":
            return self.canned
        if self.mode == "invalid":
            return INVALID_REPLY
        prompt = body["messages"][-1]["content"]
        # longest assembly first so a listing contained in another cannot shadow it
        for asm in sorted(self.by_assembly, key=len, reverse=True):
            if asm and asm in prompt:
                r = self.by_assembly[asm]
                return f"<think>recovering {r.id}</think>\n```{r.language}\n{r.source}```\n"
        return "no matching record"


def _handler(state: StubState):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def _send(self, code: int, payload: dict) -> None:
            data = json.dumps(payload).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            try:
                body = json.loads(self.rfile.read(length))
            except ValueError:
                return self._send(400, {"error": "body is not JSON"})
            with state.lock:
                state.requests.append(body)
            if state.require_key and self.headers.get("Authorization") != f"Bearer {state.require_key}":
                return self._send(401, {"error": "bad credentials"})
            if state.reject_beam and "beam_width" in body:
                return self._send(400, {"error": "beam_width is not supported"})
            text = state.reply(body)
            self._send(200, {"id": "stub", "model": body.get("model", "stub"),
                             "choices": [{"index": 0, "finish_reason": "stop",
                                          "message": {"role": "assistant", "content": text}}]})

    return Handler


class StubServer:
    """Context manager running the stub on a free localhost port."""

    def __init__(self, state: StubState, host: str = "127.0.0.1", port: int = 0):
        self.state = state
        self.httpd = ThreadingHTTPServer((host, port), _handler(state))
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}/v1/chat/completions"

    def start(self) -> "StubServer":
        self.thread.start()
        return self

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
