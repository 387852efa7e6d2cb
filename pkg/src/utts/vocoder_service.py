"""Reference implementation of the external vocoder protocol.

Serves Griffin-Lim inversion over either transport described in
:mod:`utts.pipeline`::

    python -m utts.vocoder_service --pipe            # one request on stdin
    python -m utts.vocoder_service --port 8765       # HTTP POST on any path

Useful for testing the client side and as a template for wrapping a
neural vocoder.
"""

from __future__ import annotations

import argparse
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .features import Waveform
from .pipeline import GL_ITERATIONS, decode_mel_request, invert_mel, wav_bytes


def handle(body: bytes, iterations: int = GL_ITERATIONS) -> bytes:
    mel = decode_mel_request(body)
    return wav_bytes(Waveform(invert_mel(mel, iterations)))


def make_server(host="127.0.0.1", port=0, iterations=GL_ITERATIONS) -> ThreadingHTTPServer:
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            body = self.rfile.read(int(self.headers.get("Content-Length", 0)))
            try:
                reply = handle(body, iterations)
            except ValueError as exc:
                self.send_error(400, str(exc))
                return
            self.send_response(200)
            self.send_header("Content-Type", "audio/wav")
            self.send_header("Content-Length", str(len(reply)))
            self.end_headers()
            self.wfile.write(reply)

        def log_message(self, *args):
            pass

    return ThreadingHTTPServer((host, port), Handler)


def serve_in_thread(**kw):
    """Start a server on a daemon thread; returns ``(server, url)``."""
    srv = make_server(**kw)
    threading.Thread(target=srv.serve_forever, daemon=True).start()
    host, port = srv.server_address[:2]
    return srv, f"http://{host}:{port}/vocode"


def main(argv=None):
    ap = argparse.ArgumentParser(prog="python -m utts.vocoder_service")
    mode = ap.add_mutually_exclusive_group(required=True)
    mode.add_argument("--pipe", action="store_true", help="read one request from stdin, write WAV to stdout")
    mode.add_argument("--port", type=int, help="serve HTTP on this port")
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--iterations", type=int, default=GL_ITERATIONS)
    args = ap.parse_args(argv)
    if args.pipe:
        try:
            sys.stdout.buffer.write(handle(sys.stdin.buffer.read(), args.iterations))
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        return 0
    srv = make_server(args.host, args.port, args.iterations)
    print(f"serving on http://{args.host}:{srv.server_address[1]}/", file=sys.stderr)
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
