"""Run the adapter: va-adapter --model sim:<corpus dir> --port 8080"""

from __future__ import annotations

import argparse

import uvicorn

from va_adapter.config import AdapterConfig
from va_adapter.server import create_app


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="va-adapter", description=__doc__)
    parser.add_argument("--model", required=True, help="sim:<corpus dir> or diffusers:<model id>")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8080)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--resolution", type=int, default=0, help="0 = model native")
    parser.add_argument("--guidance-scale", type=float, default=1.0)
    parser.add_argument("--max-concurrent", type=int, default=1)
    parser.add_argument("--queue-depth", type=int, default=8)
    args = parser.parse_args(argv)

    cfg = AdapterConfig(
        model=args.model,
        device=args.device,
        resolution=args.resolution,
        guidance_scale=args.guidance_scale,
        max_concurrent=args.max_concurrent,
        queue_depth=args.queue_depth,
    )
    uvicorn.run(create_app(cfg), host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
