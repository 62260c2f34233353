//! Binary event-trace file.
//!
//! Layout (all integers and floats little-endian, floats as raw IEEE-754 bits):
//!
//! ```text
//! magic    b"TUMTRACE"
//! u32      schema version
//! u32      header length, then that many bytes of UTF-8 JSON (TraceHeader)
//! u64      clone count, then per clone:  id u64, parent i64 (-1 = root), 6 x f64 params, origin f64
//! u64      cell count,  then per cell:   id u64, birth f64, 3 x f64 position, mutation u64, parent i64
//! u64      event count, then per event:  time f64, kind u8, cell u64, 3 x f64 position,
//!                                        mutation u64, density f64, daughter a i64, daughter b i64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::history::{Cell, CloneRecord, EventKind, EventRecord, Termination, TumorHistory};
use super::params::{GlobalParams, IntrinsicParams};
use crate::error::{Error, Result};

pub const TRACE_MAGIC: &[u8; 8] = b"TUMTRACE";
pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub seed: u64,
    pub params: GlobalParams,
    pub intrinsics0: IntrinsicParams,
    pub n0: u32,
    pub end_time: f64,
    pub termination: Termination,
    pub births: u64,
}

fn opt_id(v: Option<u64>) -> i64 {
    v.map_or(-1, |x| x as i64)
}

fn id_opt(v: i64) -> Option<u64> {
    (v >= 0).then_some(v as u64)
}

struct Out<W: Write>(W);

impl<W: Write> Out<W> {
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.0.write_all(b)
    }
    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.bytes(&[v])
    }
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn i64(&mut self, v: i64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.bytes(&v.to_bits().to_le_bytes())
    }
}

struct In<R: Read>(R);

impl<R: Read> In<R> {
    fn array<const N: usize>(&mut self) -> std::io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }
    fn u8(&mut self) -> std::io::Result<u8> {
        Ok(self.array::<1>()?[0])
    }
    fn u32(&mut self) -> std::io::Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> std::io::Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn i64(&mut self) -> std::io::Result<i64> {
        Ok(i64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> std::io::Result<f64> {
        Ok(f64::from_bits(u64::from_le_bytes(self.array()?)))
    }
}

pub fn write_trace<W: Write>(h: &TumorHistory, w: W) -> std::io::Result<()> {
    let mut o = Out(w);
    let header = TraceHeader {
        schema_version: TRACE_SCHEMA_VERSION,
        seed: h.params.rng_seed,
        params: h.params.clone(),
        intrinsics0: h.intrinsics0,
        n0: h.n0,
        end_time: h.end_time,
        termination: h.termination,
        births: h.births,
    };
    let json = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
    o.bytes(TRACE_MAGIC)?;
    o.u32(TRACE_SCHEMA_VERSION)?;
    o.u32(json.len() as u32)?;
    o.bytes(&json)?;

    o.u64(h.clones.len() as u64)?;
    for c in &h.clones {
        o.u64(c.id)?;
        o.i64(opt_id(c.parent))?;
        for v in c.params.to_array() {
            o.f64(v)?;
        }
        o.f64(c.origin_time)?;
    }
    o.u64(h.cells.len() as u64)?;
    for c in &h.cells {
        o.u64(c.id)?;
        o.f64(c.birth_time)?;
        for v in c.position {
            o.f64(v)?;
        }
        o.u64(c.mutation_id)?;
        o.i64(opt_id(c.parent))?;
    }
    o.u64(h.events.len() as u64)?;
    for e in &h.events {
        o.f64(e.time)?;
        o.u8(e.kind.code())?;
        o.u64(e.cell_id)?;
        for v in e.position {
            o.f64(v)?;
        }
        o.u64(e.mutation_id)?;
        o.f64(e.density)?;
        let [a, b] = e.daughters.map_or([-1, -1], |[a, b]| [a as i64, b as i64]);
        o.i64(a)?;
        o.i64(b)?;
    }
    o.0.flush()
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Trace(msg.into())
}

pub fn read_trace<R: Read>(r: R) -> Result<TumorHistory> {
    let mut i = In(r);
    let io = |e: std::io::Error| bad(format!("truncated or unreadable trace: {e}"));
    let magic: [u8; 8] = i.array().map_err(io)?;
    if &magic != TRACE_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = i.u32().map_err(io)?;
    if version != TRACE_SCHEMA_VERSION {
        return Err(bad(format!("unsupported schema version {version}")));
    }
    let hlen = i.u32().map_err(io)? as usize;
    let mut hbuf = vec![0u8; hlen];
    i.0.read_exact(&mut hbuf).map_err(io)?;
    let header: TraceHeader = serde_json::from_slice(&hbuf)?;

    let n = i.u64().map_err(io)? as usize;
    let mut clones = Vec::with_capacity(n);
    for _ in 0..n {
        let id = i.u64().map_err(io)?;
        let parent = id_opt(i.i64().map_err(io)?);
        let mut a = [0.0; 6];
        for v in &mut a {
            *v = i.f64().map_err(io)?;
        }
        let origin_time = i.f64().map_err(io)?;
        clones.push(CloneRecord { id, parent, params: IntrinsicParams::from_array(a), origin_time });
    }
    let n = i.u64().map_err(io)? as usize;
    let mut cells = Vec::with_capacity(n);
    for _ in 0..n {
        let id = i.u64().map_err(io)?;
        let birth_time = i.f64().map_err(io)?;
        let position = [i.f64().map_err(io)?, i.f64().map_err(io)?, i.f64().map_err(io)?];
        let mutation_id = i.u64().map_err(io)?;
        let parent = id_opt(i.i64().map_err(io)?);
        cells.push(Cell { id, position, mutation_id, birth_time, parent });
    }
    let n = i.u64().map_err(io)? as usize;
    let mut events = Vec::with_capacity(n);
    for _ in 0..n {
        let time = i.f64().map_err(io)?;
        let code = i.u8().map_err(io)?;
        let kind = EventKind::from_code(code).ok_or_else(|| bad(format!("unknown event kind {code}")))?;
        let cell_id = i.u64().map_err(io)?;
        let position = [i.f64().map_err(io)?, i.f64().map_err(io)?, i.f64().map_err(io)?];
        let mutation_id = i.u64().map_err(io)?;
        let density = i.f64().map_err(io)?;
        let (a, b) = (i.i64().map_err(io)?, i.i64().map_err(io)?);
        let daughters = (a >= 0 && b >= 0).then_some([a as u64, b as u64]);
        events.push(EventRecord { time, kind, cell_id, position, mutation_id, density, daughters });
    }
    let mut probe = [0u8; 1];
    if i.0.read(&mut probe).map_err(io)? != 0 {
        return Err(bad("trailing bytes after event section"));
    }
    Ok(TumorHistory {
        params: header.params,
        intrinsics0: header.intrinsics0,
        n0: header.n0,
        events,
        cells,
        clones,
        end_time: header.end_time,
        termination: header.termination,
        births: header.births,
    })
}

pub fn save_trace(h: &TumorHistory, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace(h, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

pub fn load_trace(path: &Path) -> Result<TumorHistory> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace(BufReader::new(f))
}
