//! Event file formats.
//!
//! Text: a `# width=<W> height=<H>` header line, then one `t,x,y,p[,label]`
//! line per event with label `R` or `N` (omitted when unknown).
//!
//! Binary, little-endian: magic `EVD1`, u16 width, u16 height, u32 reserved
//! (0), u64 event count, then 14-byte records `u64 t, u16 x, u16 y, i8 p,
//! u8 label` with label 0 = unknown, 1 = real, 2 = noise.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::event::{Event, Label, SensorGeometry};

pub const BINARY_MAGIC: [u8; 4] = *b"EVD1";
pub const BINARY_HEADER_LEN: usize = 20;
pub const BINARY_RECORD_LEN: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Binary,
}

impl Format {
    /// `.txt` and `.csv` are text, anything else binary.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("txt") | Some("csv") => Format::Text,
            _ => Format::Binary,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" | "txt" => Ok(Format::Text),
            "binary" | "bin" => Ok(Format::Binary),
            other => Err(Error::Config(format!("unknown event format {other:?}"))),
        }
    }
}

pub fn read_events(path: &Path, format: Format) -> Result<(Vec<Event>, SensorGeometry)> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    match format {
        Format::Text => read_text(reader),
        Format::Binary => read_binary(reader),
    }
}

pub fn write_events(path: &Path, events: &[Event], geometry: &SensorGeometry, format: Format) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    match format {
        Format::Text => write_text(&mut writer, events, geometry)?,
        Format::Binary => write_binary(&mut writer, events, geometry)?,
    }
    writer.flush()?;
    Ok(())
}

pub fn write_text<W: Write>(w: &mut W, events: &[Event], geometry: &SensorGeometry) -> Result<()> {
    writeln!(w, "# width={} height={}", geometry.width, geometry.height)?;
    for e in events {
        match e.label {
            Label::Unknown => writeln!(w, "{},{},{},{}", e.t, e.x, e.y, e.p)?,
            Label::Real => writeln!(w, "{},{},{},{},R", e.t, e.x, e.y, e.p)?,
            Label::Noise => writeln!(w, "{},{},{},{},N", e.t, e.x, e.y, e.p)?,
        }
    }
    Ok(())
}

pub fn read_text<R: BufRead>(r: R) -> Result<(Vec<Event>, SensorGeometry)> {
    let mut lines = r.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::parse("line 1", "missing header"))?;
    let geometry = parse_header(&header?)?;
    let mut events = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        events.push(parse_event_line(trimmed).map_err(|m| Error::parse(format!("line {}", i + 1), m))?);
    }
    Ok((events, geometry))
}

fn parse_header(line: &str) -> Result<SensorGeometry> {
    let bad = || Error::parse("line 1", format!("expected '# width=<W> height=<H>', got {line:?}"));
    let body = line.trim().strip_prefix('#').ok_or_else(bad)?;
    let mut width = None;
    let mut height = None;
    for tok in body.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(bad)?;
        let v: u16 = v.parse().map_err(|_| bad())?;
        match k {
            "width" => width = Some(v),
            "height" => height = Some(v),
            _ => return Err(bad()),
        }
    }
    match (width, height) {
        (Some(w), Some(h)) => Ok(SensorGeometry::new(w, h)),
        _ => Err(bad()),
    }
}

fn parse_event_line(line: &str) -> std::result::Result<Event, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 4 && fields.len() != 5 {
        return Err(format!("expected 4 or 5 fields, found {}", fields.len()));
    }
    let t = fields[0].parse::<u64>().map_err(|e| format!("timestamp: {e}"))?;
    let x = fields[1].parse::<u16>().map_err(|e| format!("x: {e}"))?;
    let y = fields[2].parse::<u16>().map_err(|e| format!("y: {e}"))?;
    let p = fields[3].parse::<i8>().map_err(|e| format!("polarity: {e}"))?;
    if p != 1 && p != -1 {
        return Err(format!("polarity must be -1 or 1, got {p}"));
    }
    let label = match fields.get(4) {
        None => Label::Unknown,
        Some(&"R") => Label::Real,
        Some(&"N") => Label::Noise,
        Some(other) => return Err(format!("unknown label {other:?}")),
    };
    Ok(Event { t, x, y, p, label })
}

pub fn write_binary<W: Write>(w: &mut W, events: &[Event], geometry: &SensorGeometry) -> Result<()> {
    w.write_all(&BINARY_MAGIC)?;
    w.write_u16::<LittleEndian>(geometry.width)?;
    w.write_u16::<LittleEndian>(geometry.height)?;
    w.write_u32::<LittleEndian>(0)?;
    w.write_u64::<LittleEndian>(events.len() as u64)?;
    for e in events {
        w.write_u64::<LittleEndian>(e.t)?;
        w.write_u16::<LittleEndian>(e.x)?;
        w.write_u16::<LittleEndian>(e.y)?;
        w.write_i8(e.p)?;
        w.write_u8(e.label.to_byte())?;
    }
    Ok(())
}

fn truncated(what: &str) -> impl FnOnce(io::Error) -> Error + '_ {
    move |err| {
        if err.kind() == io::ErrorKind::UnexpectedEof {
            Error::TruncatedFile(what.to_string())
        } else {
            Error::Io(err)
        }
    }
}

pub fn read_binary<R: Read>(mut r: R) -> Result<(Vec<Event>, SensorGeometry)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated("header"))?;
    if magic != BINARY_MAGIC {
        return Err(Error::MagicMismatch {
            expected: BINARY_MAGIC,
            found: magic,
        });
    }
    let width = r.read_u16::<LittleEndian>().map_err(truncated("header"))?;
    let height = r.read_u16::<LittleEndian>().map_err(truncated("header"))?;
    let _reserved = r.read_u32::<LittleEndian>().map_err(truncated("header"))?;
    let count = r.read_u64::<LittleEndian>().map_err(truncated("header"))?;

    // cap the pre-allocation so a corrupt count cannot exhaust memory
    let mut events = Vec::with_capacity(count.min(1 << 24) as usize);
    for i in 0..count {
        let offset = BINARY_HEADER_LEN as u64 + i * BINARY_RECORD_LEN as u64;
        let what = format!("record {i} at offset {offset}");
        let mut rec = [0u8; BINARY_RECORD_LEN];
        r.read_exact(&mut rec).map_err(truncated(&what))?;
        let mut cur = &rec[..];
        let t = cur.read_u64::<LittleEndian>()?;
        let x = cur.read_u16::<LittleEndian>()?;
        let y = cur.read_u16::<LittleEndian>()?;
        let p = cur.read_i8()?;
        let label = Label::from_byte(cur.read_u8()?)
            .ok_or_else(|| Error::parse(format!("offset {}", offset + 13), "invalid label byte"))?;
        events.push(Event { t, x, y, p, label });
    }
    Ok((events, SensorGeometry::new(width, height)))
}
