#!/usr/bin/env python3
"""Writes the bundled 20-song mini-corpus to data/mini-corpus/.

Every song is authored in C major and shifted into its target key, with a
matching key-signature meta (two songs omit it and stay in C). Key
normalization therefore moves every pitch back to the authored C-major
voicing, so the accompaniment chords after preprocessing are exactly:

    C-E-G  C-F-A  D-G-B  C-E-A  D-F-A  D-F-G-B

Chords sit in MIDI octave 5 (pitches 60..71), bass roots in octave 3 and the
melody above both. Each song keeps one melody register, velocity and rhythm
pattern throughout so consecutive phrases resemble each other. Song 20 is
four bars long and is rejected by phrase segmentation.

Usage: python3 scripts/make_mini_corpus.py [out_dir]
"""

import random
import struct
import sys
from pathlib import Path

TPQ = 480

# Chord voicings inside octave 5 and their bass roots in octave 3.
CHORDS = {
    "I": ([60, 64, 67], 36),
    "IV": ([60, 65, 69], 41),
    "V": ([62, 67, 71], 43),
    "vi": ([60, 64, 69], 45),
    "ii": ([62, 65, 69], 38),
    "V7": ([62, 65, 67, 71], 43),
}

SCALE = [0, 2, 4, 5, 7, 9, 11]

# Semitone shift into the target key and the matching key signature
# (sharps, negative for flats). Shifts lie in [-5, 5] so normalization
# undoes them exactly.
KEYS = {
    "C": (0, 0),
    "D": (2, 2),
    "Eb": (3, -3),
    "F": (5, -1),
    "G": (-5, 1),
    "A": (-3, 3),
    "Bb": (-2, -2),
    "E": (4, 4),
}

# Rhythm patterns in quarter notes, one bar each.
RHYTHMS_44 = {
    "quarters": [1, 1, 1, 1],
    "eighths": [0.5, 0.5, 0.5, 0.5, 1, 1],
    "dotted": [1.5, 0.5, 2],
    "halves": [2, 2],
    "syncopated": [0.5, 1, 0.5, 1, 1],
    "running": [0.5] * 8,
}
RHYTHMS_34 = {
    "waltz": [2, 1],
    "quarters": [1, 1, 1],
    "lilt": [1.5, 0.5, 1],
}

PROGRESSIONS = [
    ["I", "IV", "V", "I"],
    ["I", "vi", "ii", "V7"],
    ["I", "V", "vi", "IV"],
    ["vi", "IV", "I", "V"],
    ["I", "ii", "V", "I"],
    ["IV", "V7", "I", "vi"],
]

# name, key, meter, bars, rhythm, melody base pitch, melody velocity,
# progression index, key signature present, extra options
SONGS = [
    ("s01_lantern", "C", 4, 16, "quarters", 72, 96, 0, True, {}),
    ("s02_harbor", "D", 4, 16, "eighths", 76, 40, 1, True, {}),
    ("s03_meadow", "F", 3, 16, "waltz", 74, 70, 2, True, {}),
    ("s04_copper", "G", 4, 16, "dotted", 79, 120, 3, True, {"drums": True}),
    ("s05_willow", "A", 4, 16, "halves", 72, 30, 4, True, {}),
    ("s06_ember", "Bb", 4, 16, "syncopated", 77, 84, 5, True, {}),
    ("s07_tide", "Eb", 3, 16, "quarters", 81, 58, 0, True, {}),
    ("s08_orchard", "E", 4, 16, "running", 74, 108, 1, True, {"format0": True}),
    ("s09_quarry", "C", 4, 16, "halves", 84, 64, 2, False, {}),
    ("s10_thistle", "D", 3, 16, "lilt", 72, 100, 3, True, {}),
    ("s11_signal", "F", 4, 16, "quarters", 79, 46, 4, True, {"phrase_rest": True}),
    ("s12_marble", "G", 4, 16, "eighths", 83, 76, 5, True, {}),
    ("s13_fjord", "A", 3, 16, "waltz", 78, 114, 1, True, {}),
    ("s14_cinder", "Bb", 4, 16, "dotted", 73, 52, 0, True, {}),
    ("s15_hollow", "Eb", 4, 16, "running", 80, 90, 3, True, {}),
    ("s16_prairie", "E", 4, 16, "syncopated", 75, 36, 2, True, {"drums": True}),
    ("s17_granite", "C", 3, 16, "lilt", 86, 104, 5, False, {}),
    ("s18_ripple", "D", 4, 16, "quarters", 78, 124, 4, True, {}),
    ("s19_bramble", "G", 4, 16, "halves", 80, 68, 1, True, {"phrase_rest": True}),
    ("s20_fragment", "F", 4, 4, "quarters", 74, 80, 0, True, {}),
]


def vlq(n):
    out = [n & 0x7F]
    n >>= 7
    while n:
        out.append(0x80 | (n & 0x7F))
        n >>= 7
    return bytes(reversed(out))


def track_chunk(events):
    """events: (tick, order, bytes) with absolute ticks."""
    body = bytearray()
    last = 0
    for tick, _, data in sorted(events, key=lambda e: (e[0], e[1])):
        body += vlq(tick - last) + data
        last = tick
    body += vlq(0) + b"\xff\x2f\x00"
    return b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


def notes_to_events(notes, channel):
    ev = []
    for start, dur, pitch, vel in notes:
        # Note-offs sort before note-ons at the same tick.
        ev.append((start, 1, bytes([0x90 | channel, pitch, vel])))
        ev.append((start + dur, 0, bytes([0x80 | channel, pitch, 0])))
    return ev


def nearest_in(pitches, target):
    return min(pitches, key=lambda p: (abs(p - target), p))


def melody_line(rng, prog, bars, meter, rhythm, base, vel, phrase_rest):
    bar_ticks = meter * TPQ
    allowed = [p for p in range(base, base + 15) if p % 12 in SCALE]
    notes = []
    pitch = allowed[len(allowed) // 3]
    for bar in range(bars):
        chord_pcs = {p % 12 for p in CHORDS[prog[bar % 4]][0]}
        tick = bar * bar_ticks
        pattern = list(rhythm)
        if phrase_rest and bar % 4 == 3:
            pattern[-1] = None
        for i, q in enumerate(pattern):
            if q is None:
                break
            dur = int(q * TPQ)
            strong = i == 0 or q >= 1.5
            pool = [p for p in allowed if p % 12 in chord_pcs] if strong else allowed
            step = rng.choice([-4, -2, -1, 1, 2, 3])
            pitch = nearest_in(pool, pitch + step)
            notes.append((tick, dur, pitch, vel))
            tick += dur
    return notes


def accompaniment(prog, bars, meter, vel):
    bar_ticks = meter * TPQ
    chords, bass = [], []
    for bar in range(bars):
        voicing, root = CHORDS[prog[bar % 4]]
        t = bar * bar_ticks
        for p in voicing:
            chords.append((t, bar_ticks, p, vel))
        half = bar_ticks if meter == 3 else bar_ticks // 2
        for k in range(bar_ticks // half):
            bass.append((t + k * half, half, root, vel))
    return chords, bass


def drums(bars, meter):
    return [(b * meter * TPQ + k * TPQ, TPQ // 2, 36 if k == 0 else 42, 90) for b in range(bars) for k in range(meter)]


def song_bytes(idx, spec):
    name, key, meter, bars, rhythm_name, base, vel, prog_i, has_sig, opts = spec
    rng = random.Random(1000 + idx)
    shift, sharps = KEYS[key]
    rhythm = (RHYTHMS_34 if meter == 3 else RHYTHMS_44)[rhythm_name]
    assert abs(sum(rhythm) - meter) < 1e-9, name
    prog = PROGRESSIONS[prog_i]

    mel = melody_line(rng, prog, bars, meter, rhythm, base, vel, opts.get("phrase_rest", False))
    chords, bass = accompaniment(prog, bars, meter, max(20, vel - 24))
    shifted = lambda ns: [(s, d, p + shift, v) for s, d, p, v in ns]

    meta = [
        (0, 0, b"\xff\x51\x03" + (500000 + 20000 * idx).to_bytes(3, "big")),
        (0, 0, b"\xff\x58\x04" + bytes([meter, 2, 24, 8])),
    ]
    if has_sig:
        meta.append((0, 0, b"\xff\x59\x02" + struct.pack(">bB", sharps, 0)))
    meta.append((0, 0, b"\xff\x03" + vlq(len(name)) + name.encode()))

    voices = [
        notes_to_events(shifted(mel), 0),
        notes_to_events(shifted(chords), 1),
        notes_to_events(shifted(bass), 2),
    ]
    if opts.get("drums"):
        voices.append(notes_to_events(drums(bars, meter), 9))

    if opts.get("format0"):
        merged = meta + [e for v in voices for e in v]
        return b"MThd" + struct.pack(">IHHH", 6, 0, 1, TPQ) + track_chunk(merged)
    chunks = [track_chunk(meta)] + [track_chunk(v) for v in voices]
    return b"MThd" + struct.pack(">IHHH", 6, 1, len(chunks), TPQ) + b"".join(chunks)


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data" / "mini-corpus"
    out.mkdir(parents=True, exist_ok=True)
    for idx, spec in enumerate(SONGS):
        (out / f"{spec[0]}.mid").write_bytes(song_bytes(idx, spec))
    print(f"wrote {len(SONGS)} songs to {out}")


if __name__ == "__main__":
    main()
