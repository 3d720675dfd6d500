//! Binary container shared by corpus and parameter files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic bytes | u64 header length | JSON header | blocks... | u32 CRC32
//! block := u64 byte length | f64 values
//! ```
//!
//! The JSON header carries the magic string again plus a `blocks` list of
//! `{name, len}` entries declaring block order and element counts. The CRC32
//! covers every byte after the header (length prefixes included).

use std::io::Write;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

/// A named block of floats to be written.
pub struct Block<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
}

pub fn write_container<W: Write, H: Serialize>(
    mut out: W,
    magic: &str,
    header: &H,
    blocks: &[Block<'_>],
) -> Result<()> {
    let mut header = match serde_json::to_value(header).map_err(|e| Error::Header(e.to_string()))? {
        Value::Object(map) => map,
        _ => {
            return Err(Error::Header(
                "header must serialize to a JSON object".into(),
            ))
        }
    };
    let declared: Vec<Value> = blocks
        .iter()
        .map(|b| json!({ "name": b.name, "len": b.values.len() }))
        .collect();
    let mut ordered = Map::new();
    ordered.insert("magic".into(), Value::String(magic.into()));
    ordered.append(&mut header);
    ordered.insert("blocks".into(), Value::Array(declared));
    let header_bytes =
        serde_json::to_vec(&Value::Object(ordered)).map_err(|e| Error::Header(e.to_string()))?;

    let mut payload = Vec::new();
    for b in blocks {
        payload.extend_from_slice(&((b.values.len() * 8) as u64).to_le_bytes());
        for v in b.values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&payload);

    out.write_all(magic.as_bytes())?;
    out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    out.write_all(&payload)?;
    out.write_all(&crc.to_le_bytes())?;
    out.flush()?;
    Ok(())
}

/// Decoded container: the JSON header (without `magic`/`blocks`) and the named blocks in order.
#[derive(Debug, Clone)]
pub struct Container {
    pub header: Value,
    pub blocks: Vec<(String, Vec<f64>)>,
}

impl Container {
    pub fn take_block(&mut self, name: &str) -> Result<Vec<f64>> {
        let pos = self
            .blocks
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Payload(format!("missing block `{name}`")))?;
        Ok(self.blocks.remove(pos).1)
    }
}

pub fn read_container(bytes: &[u8], magic: &str) -> Result<Container> {
    let magic_bytes = magic.as_bytes();
    if bytes.len() < magic_bytes.len() || &bytes[..magic_bytes.len()] != magic_bytes {
        return Err(Error::Header(format!("bad magic, expected {magic}")));
    }
    let mut pos = magic_bytes.len();
    let header_len =
        read_u64(bytes, &mut pos).ok_or_else(|| Error::Header("truncated header length".into()))?;
    let header_end = pos
        .checked_add(
            usize::try_from(header_len)
                .map_err(|_| Error::Header("header length overflow".into()))?,
        )
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Header("truncated header".into()))?;
    let mut header: Value = serde_json::from_slice(&bytes[pos..header_end])
        .map_err(|e| Error::Header(e.to_string()))?;
    pos = header_end;

    let obj = header
        .as_object_mut()
        .ok_or_else(|| Error::Header("header is not a JSON object".into()))?;
    match obj.remove("magic") {
        Some(Value::String(m)) if m == magic => {}
        _ => return Err(Error::Header("header magic missing or wrong".into())),
    }
    let declared = match obj.remove("blocks") {
        Some(Value::Array(list)) => list,
        _ => return Err(Error::Header("header lacks a `blocks` list".into())),
    };

    let payload_start = pos;
    let mut blocks = Vec::with_capacity(declared.len());
    for entry in &declared {
        let name = entry["name"]
            .as_str()
            .ok_or_else(|| Error::Header("block entry without name".into()))?
            .to_owned();
        let len = entry["len"]
            .as_u64()
            .ok_or_else(|| Error::Header(format!("block `{name}` without len")))?
            as usize;
        let byte_len = read_u64(bytes, &mut pos)
            .ok_or_else(|| Error::Payload(format!("truncated before block `{name}`")))?;
        if byte_len != (len as u64) * 8 {
            return Err(Error::Payload(format!(
                "block `{name}` declares {len} values but its prefix says {byte_len} bytes"
            )));
        }
        let end = pos
            .checked_add(len * 8)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Payload(format!("block `{name}` is truncated")))?;
        let values = bytes[pos..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        pos = end;
        blocks.push((name, values));
    }
    let payload_end = pos;
    if bytes.len() < payload_end + 4 {
        return Err(Error::Payload("missing trailing checksum".into()));
    }
    if bytes.len() > payload_end + 4 {
        return Err(Error::Payload("trailing bytes after checksum".into()));
    }
    let stored = u32::from_le_bytes(
        bytes[payload_end..payload_end + 4]
            .try_into()
            .expect("4 bytes"),
    );
    let computed = crc32fast::hash(&bytes[payload_start..payload_end]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(Container { header, blocks })
}

fn read_u64(bytes: &[u8], pos: &mut usize) -> Option<u64> {
    let chunk = bytes.get(*pos..*pos + 8)?;
    *pos += 8;
    Some(u64::from_le_bytes(chunk.try_into().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<u8> {
        let mut buf = Vec::new();
        let a = [1.0, -0.0, f64::MIN_POSITIVE];
        let b = [std::f64::consts::PI];
        write_container(
            &mut buf,
            "TESTMAGIC",
            &json!({"k": 3}),
            &[
                Block {
                    name: "a",
                    values: &a,
                },
                Block {
                    name: "b",
                    values: &b,
                },
            ],
        )
        .unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = read_container(&sample(), "TESTMAGIC").unwrap();
        assert_eq!(c.header, json!({"k": 3}));
        assert_eq!(c.blocks[0].0, "a");
        let bits: Vec<u64> = c.blocks[0].1.iter().map(|v| v.to_bits()).collect();
        assert_eq!(
            bits,
            vec![
                1f64.to_bits(),
                (-0f64).to_bits(),
                f64::MIN_POSITIVE.to_bits()
            ]
        );
        assert_eq!(c.blocks[1].1, vec![std::f64::consts::PI]);
    }

    #[test]
    fn distinct_errors_for_distinct_corruption() {
        let good = sample();

        let mut bad_magic = good.clone();
        bad_magic[0] ^= 0xff;
        assert!(matches!(
            read_container(&bad_magic, "TESTMAGIC"),
            Err(Error::Header(_))
        ));

        let truncated = &good[..good.len() - 12];
        assert!(matches!(
            read_container(truncated, "TESTMAGIC"),
            Err(Error::Payload(_))
        ));

        let mut flipped = good.clone();
        let n = flipped.len();
        flipped[n - 6] ^= 0x01;
        assert!(matches!(
            read_container(&flipped, "TESTMAGIC"),
            Err(Error::Checksum { .. })
        ));
    }
}
