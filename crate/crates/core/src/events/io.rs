use std::io::{Read, Write};

use super::{Event, EventError, EventStream};

pub const EVS_MAGIC: &[u8; 4] = b"EVS1";
const RECORD_LEN: usize = 9;

/// Binary layout, little-endian: `EVS1`, `u32 width`, `u32 height`,
/// `u32 count`, then `count` records of `u32 t_us, u16 x, u16 y, i8 polarity`.
pub fn write_evs<W: Write>(stream: &EventStream, mut w: W) -> Result<(), EventError> {
    let count = u32::try_from(stream.events.len()).map_err(|_| EventError::Format("too many events".into()))?;
    let mut buf = Vec::with_capacity(16 + RECORD_LEN * stream.events.len());
    buf.extend_from_slice(EVS_MAGIC);
    buf.extend_from_slice(&stream.width.to_le_bytes());
    buf.extend_from_slice(&stream.height.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    for e in &stream.events {
        buf.extend_from_slice(&e.t.to_le_bytes());
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.push(e.polarity as u8);
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_evs<R: Read>(mut r: R) -> Result<EventStream, EventError> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|e| EventError::Format(format!("header: {e}")))?;
    if &header[..4] != EVS_MAGIC {
        return Err(EventError::Format("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let (width, height, count) = (word(4), word(8), word(12) as usize);
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != count * RECORD_LEN {
        return Err(EventError::Format(format!("expected {count} records, found {} bytes", body.len())));
    }
    let events = body
        .chunks_exact(RECORD_LEN)
        .map(|c| Event {
            t: u32::from_le_bytes(c[0..4].try_into().unwrap()),
            x: u16::from_le_bytes(c[4..6].try_into().unwrap()),
            y: u16::from_le_bytes(c[6..8].try_into().unwrap()),
            polarity: c[8] as i8,
        })
        .collect::<Vec<_>>();
    let stream = EventStream { width, height, events };
    if !stream.in_bounds() {
        return Err(EventError::Format("event outside the sensor".into()));
    }
    if stream.events.iter().any(|e| e.polarity != 1 && e.polarity != -1) {
        return Err(EventError::Format("polarity must be +1 or -1".into()));
    }
    if !stream.is_sorted() {
        return Err(EventError::Format("timestamps decrease".into()));
    }
    Ok(stream)
}

/// CSV export with header `t,x,y,p`.
pub fn write_csv<W: Write>(stream: &EventStream, w: W) -> Result<(), EventError> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| EventError::Io(e.to_string());
    wr.write_record(["t", "x", "y", "p"]).map_err(err)?;
    for e in &stream.events {
        wr.serialize((e.t, e.x, e.y, e.polarity)).map_err(err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R, width: u32, height: u32) -> Result<EventStream, EventError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut events = Vec::new();
    for rec in rd.deserialize::<(u32, u16, u16, i8)>() {
        let (t, x, y, polarity) = rec.map_err(|e| EventError::Format(e.to_string()))?;
        events.push(Event { t, x, y, polarity });
    }
    Ok(EventStream { width, height, events })
}
