"""Command-line client of the reconstruction service.

Subcommands marshal their flags into service requests and POST them
either to an in-process app instance (default) or to a running server
(--server URL).  ``serve`` starts the HTTP service itself.

Exit codes: 0 ok, 2 bad input, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import httpx

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_NUMERIC = 3


def _client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    # in-process client over the ASGI app; no daemon needed
    from fastapi.testclient import TestClient
    from .service import create_app
    return TestClient(create_app(), raise_server_exceptions=False)


def _post(args, path: str, payload: dict) -> int:
    with _client(args.server) as client:
        try:
            resp = client.post(path, json=payload)
        except httpx.HTTPError as exc:
            print(f"error: cannot reach service: {exc}", file=sys.stderr)
            return EXIT_BAD_INPUT
    if resp.status_code == 200:
        print(json.dumps(resp.json(), indent=1))
        return EXIT_OK
    try:
        body = resp.json()
    except ValueError:
        body = {"error": resp.text, "kind": "bad_input"}
    print(f"error: {body.get('error', resp.text)}", file=sys.stderr)
    if body.get("kind") == "numeric":
        return EXIT_NUMERIC
    return EXIT_BAD_INPUT


def _add_server(p: argparse.ArgumentParser) -> None:
    p.add_argument("--server", default=None,
                   help="base URL of a running service (default: in-process)")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fluidrecon",
                                     description="fluid field reconstruction toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--preset", choices=["toy-plume", "hybrid-box"], default="toy-plume")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--frames", type=int, default=20)
    g.add_argument("--dims", type=int, default=32)
    g.add_argument("--cameras", type=int, default=5)
    g.add_argument("--image-size", type=int, default=64)
    _add_server(g)

    t = sub.add_parser("train", help="fit radiance and velocity fields to a scene")
    t.add_argument("--scene", required=True)
    t.add_argument("--config", default=None, help="JSON file of TrainConfig fields")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--hybrid", choices=["on", "off"], default="off")
    t.add_argument("--iters", type=int, default=None,
                   help="override total_iters from the config")
    _add_server(t)

    r = sub.add_parser("render", help="novel views and velocity/vorticity slices")
    r.add_argument("--run", required=True)
    r.add_argument("--scene", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--camera", type=int, default=0)
    r.add_argument("--frames", type=int, nargs="*", default=None)
    r.add_argument("--no-slices", action="store_true")
    _add_server(r)

    e = sub.add_parser("eval", help="volumetric metrics against ground truth")
    e.add_argument("--run", required=True)
    e.add_argument("--scene", required=True)
    e.add_argument("--out", default=None)
    e.add_argument("--dims", type=int, default=None)
    _add_server(e)

    s = sub.add_parser("serve", help="run the HTTP service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8080)

    args = parser.parse_args(argv)

    if args.command == "generate":
        return _post(args, "/scenes/generate", {
            "preset": args.preset, "out_dir": args.out, "seed": args.seed,
            "n_frames": args.frames, "dims": args.dims,
            "n_cameras": args.cameras, "image_size": args.image_size})

    if args.command == "train":
        config = {}
        if args.config:
            try:
                with open(args.config) as fh:
                    config = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                print(f"error: cannot read config: {exc}", file=sys.stderr)
                return EXIT_BAD_INPUT
        weights = config.pop("weights", None)
        if args.iters is not None:
            config["total_iters"] = args.iters
        return _post(args, "/train", {
            "scene_dir": args.scene, "out_dir": args.out, "seed": args.seed,
            "hybrid": args.hybrid == "on", "config": config or None,
            "weights": weights})

    if args.command == "render":
        return _post(args, "/render", {
            "run_dir": args.run, "scene_dir": args.scene, "out_dir": args.out,
            "camera": args.camera, "frames": args.frames,
            "slices": not args.no_slices})

    if args.command == "eval":
        return _post(args, "/eval", {
            "run_dir": args.run, "scene_dir": args.scene,
            "out_dir": args.out, "dims": args.dims})

    if args.command == "serve":
        import uvicorn
        from .service import create_app
        uvicorn.run(create_app(), host=args.host, port=args.port)
        return EXIT_OK

    return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
