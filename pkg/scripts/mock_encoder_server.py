#!/usr/bin/env python3
"""Serve the deterministic mock encoder over the embed wire protocol.

Useful for exercising the remote-encoder path end to end without model
weights: point `--encoder http://127.0.0.1:8787` (or COEFORGE_ENCODER) at
this process.

    python3 scripts/mock_encoder_server.py --port 8787 --dim 256
"""

from __future__ import annotations

import argparse
import base64
import json
import sys
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from coeforge.embedding import MockEncoder  # noqa: E402
from coeforge.errors import ZeroVector  # noqa: E402


def make_handler(encoder: MockEncoder):
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            if self.path != "/v1/embed":
                self.send_error(404)
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                body = json.loads(self.rfile.read(length))
                if body.get("kind") == "text":
                    vector = encoder.embed_text(str(body["text"]))
                elif body.get("kind") == "image":
                    data = base64.b64decode(body["image_b64"])
                    vector = encoder.embed_image(data)
                else:
                    self.send_error(400, "kind must be text or image")
                    return
            except ZeroVector:
                # keep the wire total: an inert but valid direction
                vector = encoder.embed_text("empty")
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                self.send_error(400, str(exc))
                return
            payload = json.dumps(
                {"vector": list(vector.values), "dim": vector.dim}
            ).encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, fmt, *args):
            pass

    return Handler


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8787)
    parser.add_argument("--dim", type=int, default=256)
    args = parser.parse_args()

    server = ThreadingHTTPServer((args.host, args.port), make_handler(MockEncoder(args.dim)))
    print(f"mock encoder (dim={args.dim}) listening on http://{args.host}:{args.port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
