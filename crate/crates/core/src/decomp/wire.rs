//! Little-endian particle batch format shared by every backend:
//! an 8-byte unsigned count followed by fixed 80-byte records
//! (id u64, position 3 x f64, velocity 3 x f64, angular velocity 3 x f64).

use crate::error::{Error, Result};
use crate::particles::ParticleRecord;
use crate::vec3::Vec3;

pub const RECORD_BYTES: usize = 8 + 9 * 8;

pub fn encode_particles(recs: &[ParticleRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + recs.len() * RECORD_BYTES);
    out.extend_from_slice(&(recs.len() as u64).to_le_bytes());
    for r in recs {
        out.extend_from_slice(&r.id.to_le_bytes());
        for v in [r.pos, r.vel, r.omega] {
            for c in v {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    out
}

fn read_u64(b: &[u8], off: usize) -> u64 {
    u64::from_le_bytes(b[off..off + 8].try_into().unwrap())
}

fn read_vec3(b: &[u8], off: usize) -> Vec3 {
    let f = |o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
    [f(off), f(off + 8), f(off + 16)]
}

/// Decodes a batch sent from rank `from` to rank `to`.
pub fn decode_particles(bytes: &[u8], from: usize, to: usize) -> Result<Vec<ParticleRecord>> {
    if bytes.len() < 8 {
        return Err(Error::Protocol { from, to, msg: format!("particle batch of {} bytes lacks a count header", bytes.len()) });
    }
    let n = read_u64(bytes, 0) as usize;
    let expected = n.checked_mul(RECORD_BYTES).and_then(|v| v.checked_add(8));
    if expected != Some(bytes.len()) {
        return Err(Error::Protocol {
            from,
            to,
            msg: format!("particle batch header says {n} records but payload is {} bytes", bytes.len()),
        });
    }
    Ok(bytes[8..]
        .chunks_exact(RECORD_BYTES)
        .map(|c| ParticleRecord {
            id: read_u64(c, 0),
            pos: read_vec3(c, 8),
            vel: read_vec3(c, 32),
            omega: read_vec3(c, 56),
        })
        .collect())
}

/// Tangential contact history entry: ordered id pair and accumulated
/// tangential displacement seen from the lower id.
pub type ContactEntry = ((u64, u64), Vec3);

pub fn encode_contacts(entries: &[ContactEntry]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + entries.len() * 40);
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for ((a, b), xi) in entries {
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
        for c in xi {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

pub fn decode_contacts(bytes: &[u8], from: usize, to: usize) -> Result<Vec<ContactEntry>> {
    if bytes.len() < 8 || (bytes.len() - 8) != read_u64(bytes, 0) as usize * 40 {
        return Err(Error::Protocol { from, to, msg: "malformed contact-history batch".into() });
    }
    Ok(bytes[8..]
        .chunks_exact(40)
        .map(|c| ((read_u64(c, 0), read_u64(c, 8)), read_vec3(c, 16)))
        .collect())
}

pub fn encode_f64s(vals: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(vals.len() * 8);
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_f64s(bytes: &[u8], expected: usize, from: usize, to: usize) -> Result<Vec<f64>> {
    if bytes.len() != expected * 8 {
        return Err(Error::Protocol {
            from,
            to,
            msg: format!("expected {expected} values, got {} bytes", bytes.len()),
        });
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}
