"""Command-line front end: ``xomoracle recover|extract|serve|assemble``."""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .device import ConfigError, DeviceError, load_config
from .device.protocol import make_tcp_server, serve_stdio
from .exploit import (
    ChannelUnavailable, ExtractionFault, NoGadget, dump,
)
from .isa.assembler import AssemblyError, assemble
from .isa.equivalence import Classification
from .recovery import INTERRUPT, SINGLE_STEP, OracleUnavailable, recover_region

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_ORACLE_UNAVAILABLE = 5
EXIT_MISMATCH = 6
EXIT_NO_GADGET = 7
EXIT_CHANNEL_UNAVAILABLE = 8
EXIT_EXTRACTION_FAILED = 9

_STRATEGIES = {"single-step": SINGLE_STEP, "interrupt": INTERRUPT, "interrupt-driven": INTERRUPT}

CLASS_NAMES = tuple(c.value for c in Classification) + ("Unrecoverable",)


@dataclass
class RunReport:
    device: str
    strategy: str
    start: int
    end: int
    instructions: int
    classes: dict[str, int] = field(default_factory=dict)
    total_queries: int = 0
    mean_queries: float = 0.0
    wall_time: float = 0.0

    @classmethod
    def from_listing(cls, listing, queries: int, wall_time: float) -> "RunReport":
        counts = dict.fromkeys(CLASS_NAMES, 0)
        counts.update(listing.class_counts())
        n = len(listing.entries)
        return cls(listing.device, listing.strategy, listing.start, listing.end, n, counts,
                   queries, queries / n if n else 0.0, wall_time)

    def to_json(self) -> dict:
        d = asdict(self)
        d["start"], d["end"] = f"0x{self.start:08x}", f"0x{self.end:08x}"
        d["mean_queries"] = round(self.mean_queries, 4)
        d["wall_time"] = round(self.wall_time, 3)
        return d


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def parse_int(text: str) -> int:
    try:
        return int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def parse_range(text: str) -> tuple[int, int]:
    """``LO:HI`` (end exclusive) or ``LO+LEN``."""
    try:
        if "+" in text:
            lo, n = text.split("+", 1)
            lo = int(lo, 0)
            hi = lo + int(n, 0)
        else:
            lo, hi = (int(v, 0) for v in text.split(":", 1))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad range {text!r}; use LO:HI or LO+LEN") from None
    if hi <= lo:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return lo, hi


def _load_device(path):
    try:
        return load_config(path)
    except ConfigError as exc:
        raise CliError(f"config error: {exc}", EXIT_CONFIG) from None
    except DeviceError as exc:
        raise CliError(f"config error: {exc}", EXIT_CONFIG) from None
    except OSError as exc:
        raise CliError(f"cannot read {exc.filename}: {exc.strerror}", EXIT_IO) from None


def _default_range(dev, rng):
    if rng is not None:
        return rng
    if not dev.xom_ranges:
        raise CliError("device has no XOM range; pass --range", EXIT_USAGE)
    return dev.xom_ranges[0]


def _write(path, text: str):
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror}", EXIT_IO) from None


def cmd_recover(args) -> int:
    dev = _load_device(args.config)
    lo, hi = _default_range(dev, args.range)
    if not all(dev.in_xom(a) for a in (lo, hi - 1)):
        print(f"warning: {lo:#x}-{hi:#x} is not entirely inside XOM", file=sys.stderr)
    strategy = _STRATEGIES[args.strategy]
    q0 = dev.oracle_queries
    t0 = time.perf_counter()
    progress = None
    if args.verbose:
        def progress(e):
            print(f"{e.address:08x} {e.text}", file=sys.stderr)
    try:
        listing = recover_region(dev, lo, hi, strategy, progress=progress)
    except OracleUnavailable as exc:
        raise CliError(f"oracle unavailable: {exc}", EXIT_ORACLE_UNAVAILABLE) from None
    report = RunReport.from_listing(listing, dev.oracle_queries - q0, time.perf_counter() - t0)
    body = listing.dumps() if args.out and str(args.out).endswith(".json") else listing.text()
    if args.out:
        _write(args.out, body + "\n")
    else:
        print(body)
    if args.report:
        _write(args.report, json.dumps(report.to_json(), indent=2) + "\n")
    if args.source:
        _write(args.source, listing.to_source())
    print(f"recovered {report.instructions} entries with {report.total_queries} queries "
          f"({report.mean_queries:.2f} per instruction) in {report.wall_time:.1f}s", file=sys.stderr)
    if listing.failures:
        for e in listing.failures:
            print(f"{e.address:08x}: {e.error}", file=sys.stderr)
        return EXIT_MISMATCH
    return EXIT_OK


def cmd_extract(args) -> int:
    dev = _load_device(args.config)
    lo, hi = _default_range(dev, args.range)
    try:
        result = dump(dev, lo, hi, prefer_alias=not args.no_alias, key=args.key)
    except NoGadget as exc:
        raise CliError(f"no gadget: {exc}", EXIT_NO_GADGET) from None
    except ChannelUnavailable as exc:
        raise CliError(f"channel unavailable: {exc}", EXIT_CHANNEL_UNAVAILABLE) from None
    except ExtractionFault as exc:
        raise CliError(f"extraction failed: {exc}", EXIT_EXTRACTION_FAILED) from None
    except OracleUnavailable as exc:
        raise CliError(f"oracle unavailable: {exc}", EXIT_ORACLE_UNAVAILABLE) from None
    try:
        _, meta = result.write(args.out)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc.strerror}", EXIT_IO) from None
    print(f"extracted {len(result.data)} bytes via {result.channel} "
          f"({result.queries} queries); manifest {meta}", file=sys.stderr)
    return EXIT_OK


def cmd_serve(args) -> int:
    dev = _load_device(args.config)
    if args.listen == "stdio":
        serve_stdio(dev)
        return EXIT_OK
    host, _, port = args.listen.rpartition(":")
    try:
        server = make_tcp_server(dev, host or "127.0.0.1", int(port))
    except ValueError:
        raise CliError(f"bad endpoint {args.listen!r}; use HOST:PORT or stdio", EXIT_USAGE) from None
    except OSError as exc:
        raise CliError(f"cannot bind {args.listen}: {exc.strerror}", EXIT_IO) from None
    h, p = server.server_address[:2]
    print(f"serving {dev.preset} on {h}:{p}", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_assemble(args) -> int:
    try:
        source = Path(args.source).read_text()
    except OSError as exc:
        raise CliError(f"cannot read {args.source}: {exc.strerror}", EXIT_IO) from None
    try:
        prog = assemble(source, args.base)
    except AssemblyError as exc:
        raise CliError(f"assembly error: {exc}", EXIT_CONFIG) from None
    offset = args.base - args.image_base
    if offset < 0:
        raise CliError("--base lies below --image-base", EXIT_USAGE)
    size = offset + len(prog.image)
    if args.pad_to is not None:
        size = max(size, args.pad_to - args.image_base)
    buf = bytearray(size)
    buf[offset:offset + len(prog.image)] = prog.image
    try:
        Path(args.out).write_bytes(bytes(buf))
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc.strerror}", EXIT_IO) from None
    print(f"{len(prog.image)} bytes at {args.base:#x}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xomoracle",
                                description="Recover and extract code from simulated XOM devices.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("recover", help="recover the instructions in an XOM range")
    r.add_argument("config", help="device config JSON")
    r.add_argument("--range", type=parse_range, help="LO:HI or LO+LEN (default: first XOM range)")
    r.add_argument("--strategy", choices=sorted(_STRATEGIES), default="single-step")
    r.add_argument("--out", help="listing path (.json for JSON, text otherwise)")
    r.add_argument("--report", help="write a JSON run report")
    r.add_argument("--source", help="write re-assemblable source")
    r.add_argument("-v", "--verbose", action="store_true")
    r.set_defaults(func=cmd_recover)

    x = sub.add_parser("extract", help="dump XOM content through a device flaw")
    x.add_argument("config")
    x.add_argument("--range", type=parse_range)
    x.add_argument("--out", required=True, help="dump path; the manifest goes to <out>.json")
    x.add_argument("--key", type=parse_int, help="unlock key to write (unlock-store devices)")
    x.add_argument("--no-alias", action="store_true", help="use a load gadget even if an alias exists")
    x.set_defaults(func=cmd_extract)

    s = sub.add_parser("serve", help="serve the oracle wire protocol")
    s.add_argument("config")
    s.add_argument("--listen", default="127.0.0.1:7878", help="HOST:PORT or stdio")
    s.set_defaults(func=cmd_serve)

    a = sub.add_parser("assemble", help="assemble Thumb source to a flat image")
    a.add_argument("source")
    a.add_argument("--out", required=True)
    a.add_argument("--base", type=parse_int, default=0, help="address of the first instruction")
    a.add_argument("--image-base", type=parse_int, default=0, help="address of the image's first byte")
    a.add_argument("--pad-to", type=parse_int, help="pad the image to this end address")
    a.set_defaults(func=cmd_assemble)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except CliError as exc:
        print(f"xomoracle: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
