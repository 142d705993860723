#!/usr/bin/env python3
"""Writes the hand-crafted SMF golden files to data/smf-golden/.

Each file is spelled out byte by byte. Expected parses live in the
acceptance test (crates/cli/tests/acceptance.rs).

Usage: python3 scripts/make_smf_golden.py [out_dir]
"""

import sys
from pathlib import Path


def chunk(tag, hexbody):
    body = bytes.fromhex(hexbody)
    return tag + len(body).to_bytes(4, "big") + body


def header(fmt, ntracks, division):
    return b"MThd" + (6).to_bytes(4, "big") + fmt.to_bytes(2, "big") + ntracks.to_bytes(2, "big") + division.to_bytes(2, "big")


FILES = {
    # One track: tempo 500000, C4 for a quarter, then E4 for a quarter.
    "g01_format0_basic.mid": header(0, 1, 96)
    + chunk(b"MTrk", "00 ff 51 03 07 a1 20  00 90 3c 64  60 80 3c 40  00 90 40 5a  60 80 40 00  00 ff 2f 00"),
    # Conductor track (3/4, two sharps) and two note tracks on channels 0
    # and 1, with an alien chunk between them.
    "g02_format1_tracks.mid": header(1, 3, 480)
    + chunk(b"MTrk", "00 ff 58 04 03 02 18 08  00 ff 59 02 02 00  00 ff 2f 00")
    + chunk(b"XFIH", "de ad be ef")
    + chunk(b"MTrk", "00 90 48 50  83 60 80 48 00  00 ff 2f 00")
    + chunk(b"MTrk", "00 91 30 40  87 40 81 30 00  00 ff 2f 00"),
    # Running status across note-ons and note-offs sent as note-on vel 0.
    "g03_running_status.mid": header(0, 1, 120)
    + chunk(b"MTrk", "00 90 3c 64  00 40 64  00 43 64  78 3c 00  00 40 00  00 43 00  00 ff 2f 00"),
    # Explicit 0x90/vel-0 offs, plus a stray off without a matching on.
    "g04_velocity_zero.mid": header(0, 1, 96)
    + chunk(b"MTrk", "00 92 45 30  30 92 45 00  00 82 47 00  30 92 47 7f  30 92 47 00  00 ff 2f 00"),
    # Metas and non-note events that must be skipped with exact byte
    # accounting: text, sysex, program change (one data byte), control
    # change, pitch bend, 6/8 time and three-flat minor key.
    "g05_meta_mix.mid": header(0, 1, 240)
    + chunk(
        b"MTrk",
        "00 ff 01 05 68 65 6c 6c 6f  00 f0 03 7e 7f f7  00 c0 05  00 b0 07 64  00 e0 00 40"
        "  00 ff 58 04 06 03 18 08  00 ff 59 02 fd 01  00 ff 51 03 0f 42 40"
        "  00 90 39 50  81 70 80 39 00  00 ff 2f 00",
    ),
    # A note that is never released.
    "g06_dangling.mid": header(0, 1, 96)
    + chunk(b"MTrk", "00 90 3c 64  60 80 3c 00  00 90 3e 64  60 ff 2f 00"),
    # Not a MIDI header.
    "g07_bad_header.mid": b"MThx" + bytes.fromhex("00 00 00 06 00 00 00 01 00 60"),
    # Track length runs past the end of the file.
    "g08_truncated.mid": header(0, 1, 96) + b"MTrk" + (64).to_bytes(4, "big") + bytes.fromhex("00 90 3c 64"),
    # Format 2 is out of scope.
    "g09_format2.mid": header(2, 1, 96) + chunk(b"MTrk", "00 ff 2f 00"),
    # First event is a data byte with no running status to borrow.
    "g10_no_running_status.mid": header(0, 1, 96) + chunk(b"MTrk", "00 3c 64  00 ff 2f 00"),
}


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data" / "smf-golden"
    out.mkdir(parents=True, exist_ok=True)
    for name, data in FILES.items():
        (out / name).write_bytes(data)
    print(f"wrote {len(FILES)} files to {out}")


if __name__ == "__main__":
    main()
