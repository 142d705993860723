//! Standard MIDI File reader.
//!
//! Only what the embedding pipeline needs is decoded: channel note events and
//! the tempo, time-signature and key-signature meta events. Everything else is
//! skipped while keeping byte accounting exact.

use std::collections::HashMap;

use super::MidiError;

/// One decoded event with its absolute tick time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimedEvent {
    pub tick: u64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    NoteOn { channel: u8, pitch: u8, velocity: u8 },
    NoteOff { channel: u8, pitch: u8 },
    /// Microseconds per quarter note.
    Tempo(u32),
    /// Numerator and denominator power of two (`3, 2` is 3/4).
    TimeSignature { numerator: u8, denominator_pow: u8 },
    /// Number of sharps (negative for flats) and mode.
    KeySignature { sharps: i8, minor: bool },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MidiTrack {
    pub events: Vec<TimedEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseWarning {
    /// A note-on that was never closed; a note-off was inserted at track end.
    DanglingNoteOn { track: usize, channel: u8, pitch: u8 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MidiSong {
    pub format: u16,
    pub ticks_per_quarter: u16,
    pub tracks: Vec<MidiTrack>,
    pub source_path: String,
    pub warnings: Vec<ParseWarning>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        if self.remaining() < n {
            return Err(MidiError::TruncatedChunk { offset: self.pos });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, MidiError> {
        Ok(self.take(1)?[0])
    }

    fn u32_be(&mut self) -> Result<u32, MidiError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Variable-length quantity, at most four bytes.
    fn vlq(&mut self) -> Result<u32, MidiError> {
        let start = self.pos;
        let mut value: u32 = 0;
        for _ in 0..4 {
            let byte = self.u8()?;
            value = (value << 7) | u32::from(byte & 0x7f);
            if byte & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(MidiError::MalformedEvent {
            offset: start,
            reason: "variable-length quantity longer than 4 bytes",
        })
    }
}

/// Parses a Standard MIDI File (format 0 or 1, PPQN division).
///
/// Note-on events with velocity 0 are normalized to note-off. Notes still
/// sounding at the end of a track are closed there and reported in
/// [`MidiSong::warnings`].
pub fn parse_smf(bytes: &[u8]) -> Result<MidiSong, MidiError> {
    let mut cur = Cursor::new(bytes);
    let magic = cur
        .take(4)
        .map_err(|_| MidiError::MalformedHeader("file shorter than a header tag"))?;
    if magic != b"MThd" {
        return Err(MidiError::MalformedHeader("missing MThd tag"));
    }
    let header_len = cur
        .u32_be()
        .map_err(|_| MidiError::MalformedHeader("header length truncated"))? as usize;
    if header_len < 6 {
        return Err(MidiError::MalformedHeader("header length below 6"));
    }
    let header = cur
        .take(header_len)
        .map_err(|_| MidiError::MalformedHeader("header body truncated"))?;
    let format = u16::from_be_bytes([header[0], header[1]]);
    let n_tracks = u16::from_be_bytes([header[2], header[3]]);
    let division = u16::from_be_bytes([header[4], header[5]]);
    if format > 1 {
        return Err(MidiError::UnsupportedFormat(format!("SMF format {format}")));
    }
    if division & 0x8000 != 0 {
        return Err(MidiError::UnsupportedFormat("SMPTE time division".into()));
    }
    if division == 0 {
        return Err(MidiError::MalformedHeader("zero ticks per quarter note"));
    }
    if format == 0 && n_tracks != 1 {
        return Err(MidiError::MalformedHeader("format 0 requires exactly one track"));
    }

    let mut tracks = Vec::with_capacity(n_tracks as usize);
    let mut warnings = Vec::new();
    while tracks.len() < n_tracks as usize {
        let tag_offset = cur.pos;
        let tag = cur.take(4)?;
        let len = cur.u32_be()? as usize;
        if cur.remaining() < len {
            return Err(MidiError::TruncatedChunk { offset: tag_offset });
        }
        let body = cur.take(len)?;
        if tag != b"MTrk" {
            // Alien chunks are skipped.
            continue;
        }
        let index = tracks.len();
        tracks.push(parse_track(body, cur.pos - len, index, &mut warnings)?);
    }

    Ok(MidiSong {
        format,
        ticks_per_quarter: division,
        tracks,
        source_path: String::new(),
        warnings,
    })
}

fn data_len(status: u8) -> usize {
    match status & 0xf0 {
        0xc0 | 0xd0 => 1,
        _ => 2,
    }
}

fn parse_track(
    body: &[u8],
    base_offset: usize,
    index: usize,
    warnings: &mut Vec<ParseWarning>,
) -> Result<MidiTrack, MidiError> {
    let mut cur = Cursor::new(body);
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut events = Vec::new();
    // Open note count per (channel, pitch).
    let mut open: HashMap<(u8, u8), usize> = HashMap::new();

    let shift = |e: MidiError| match e {
        MidiError::TruncatedChunk { offset } => MidiError::TruncatedChunk {
            offset: base_offset + offset,
        },
        MidiError::MalformedEvent { offset, reason } => MidiError::MalformedEvent {
            offset: base_offset + offset,
            reason,
        },
        other => other,
    };

    while cur.remaining() > 0 {
        tick += u64::from(cur.vlq().map_err(shift)?);
        let offset = cur.pos;
        let first = cur.u8().map_err(shift)?;
        match first {
            0xff => {
                running = None;
                let kind = cur.u8().map_err(shift)?;
                let len = cur.vlq().map_err(shift)? as usize;
                let data = cur.take(len).map_err(shift)?;
                match (kind, len) {
                    (0x2f, _) => break,
                    (0x51, 3) => events.push(TimedEvent {
                        tick,
                        kind: EventKind::Tempo(
                            (u32::from(data[0]) << 16) | (u32::from(data[1]) << 8) | u32::from(data[2]),
                        ),
                    }),
                    (0x58, 4) => events.push(TimedEvent {
                        tick,
                        kind: EventKind::TimeSignature {
                            numerator: data[0],
                            denominator_pow: data[1],
                        },
                    }),
                    (0x59, 2) => events.push(TimedEvent {
                        tick,
                        kind: EventKind::KeySignature {
                            sharps: data[0] as i8,
                            minor: data[1] != 0,
                        },
                    }),
                    _ => {}
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = cur.vlq().map_err(shift)? as usize;
                cur.take(len).map_err(shift)?;
            }
            0xf1..=0xfe => {
                return Err(MidiError::MalformedEvent {
                    offset: base_offset + offset,
                    reason: "system common/real-time byte inside a track",
                });
            }
            _ => {
                let (status, first_data) = if first & 0x80 != 0 {
                    running = Some(first);
                    (first, None)
                } else {
                    let status = running.ok_or(MidiError::MalformedEvent {
                        offset: base_offset + offset,
                        reason: "data byte without running status",
                    })?;
                    (status, Some(first))
                };
                let mut data = [0u8; 2];
                let n = data_len(status);
                for (i, slot) in data.iter_mut().take(n).enumerate() {
                    *slot = match (i, first_data) {
                        (0, Some(b)) => b,
                        _ => cur.u8().map_err(shift)?,
                    };
                    if *slot & 0x80 != 0 {
                        return Err(MidiError::MalformedEvent {
                            offset: base_offset + offset,
                            reason: "status byte where a data byte was expected",
                        });
                    }
                }
                let channel = status & 0x0f;
                match status & 0xf0 {
                    0x90 if data[1] > 0 => {
                        *open.entry((channel, data[0])).or_default() += 1;
                        events.push(TimedEvent {
                            tick,
                            kind: EventKind::NoteOn {
                                channel,
                                pitch: data[0],
                                velocity: data[1],
                            },
                        });
                    }
                    0x80 | 0x90 => {
                        let count = open.entry((channel, data[0])).or_default();
                        // Unmatched note-offs are dropped.
                        if *count > 0 {
                            *count -= 1;
                            events.push(TimedEvent {
                                tick,
                                kind: EventKind::NoteOff {
                                    channel,
                                    pitch: data[0],
                                },
                            });
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    let mut dangling: Vec<((u8, u8), usize)> = open.into_iter().filter(|(_, n)| *n > 0).collect();
    dangling.sort_unstable();
    for ((channel, pitch), count) in dangling {
        for _ in 0..count {
            events.push(TimedEvent {
                tick,
                kind: EventKind::NoteOff { channel, pitch },
            });
            warnings.push(ParseWarning::DanglingNoteOn {
                track: index,
                channel,
                pitch,
            });
        }
    }
    Ok(MidiTrack { events })
}
