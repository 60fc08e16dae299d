//! Frame-pair serialization.
//!
//! Binary records are little-endian and may be concatenated in one file:
//!
//! | field          | type        |
//! |----------------|-------------|
//! | magic `CVQF`   | 4 bytes     |
//! | version (1)    | u32         |
//! | frame_id       | u64         |
//! | n_pulses       | u64         |
//! | n_reference    | u64         |
//! | phase_ref_rad  | f64         |
//! | roles          | n × u8      |
//! | bases          | n × u8      |
//! | alice x        | n × f64     |
//! | alice p        | n × f64     |
//! | bob outcome    | n × f64     |
//!
//! Role codes are 0 signal, 1 reference; basis codes 0 X, 1 P.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::optical::{AliceFrame, Basis, BobFrame, SlotRole};

pub const MAGIC: [u8; 4] = *b"CVQF";
pub const VERSION: u32 = 1;

pub fn write_frame_pair<W: Write>(mut w: W, alice: &AliceFrame, bob: &BobFrame) -> Result<()> {
    check_pair(alice, bob)?;
    let n = alice.len();
    let n_ref = alice.roles.iter().filter(|r| **r == SlotRole::Reference).count();
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&alice.frame_id.to_le_bytes())?;
    w.write_all(&(n as u64).to_le_bytes())?;
    w.write_all(&(n_ref as u64).to_le_bytes())?;
    w.write_all(&bob.phase_ref_rad.to_le_bytes())?;
    let roles: Vec<u8> = alice.roles.iter().map(|r| r.code()).collect();
    let bases: Vec<u8> = bob.bases.iter().map(|b| b.code()).collect();
    w.write_all(&roles)?;
    w.write_all(&bases)?;
    for column in [&alice.x, &alice.p, &bob.measurements] {
        let bytes: Vec<u8> = column.iter().flat_map(|v| v.to_le_bytes()).collect();
        w.write_all(&bytes)?;
    }
    Ok(())
}

/// Reads the next record; `Ok(None)` at a clean end of input.
pub fn read_frame_pair<R: Read>(mut r: R) -> Result<Option<(AliceFrame, BobFrame)>> {
    let mut magic = [0u8; 4];
    let got = read_up_to(&mut r, &mut magic)?;
    if got == 0 {
        return Ok(None);
    }
    if got < 4 || magic != MAGIC {
        return Err(Error::Parse("bad frame magic".into()));
    }
    let version = u32::from_le_bytes(exact(&mut r)?);
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported frame version {version}")));
    }
    let frame_id = u64::from_le_bytes(exact(&mut r)?);
    let n = usize::try_from(u64::from_le_bytes(exact(&mut r)?))
        .map_err(|_| Error::Parse("pulse count overflows".into()))?;
    let n_ref = u64::from_le_bytes(exact(&mut r)?) as usize;
    let phase_ref_rad = f64::from_le_bytes(exact(&mut r)?);

    let mut roles_raw = vec![0u8; n];
    fill(&mut r, &mut roles_raw)?;
    let mut bases_raw = vec![0u8; n];
    fill(&mut r, &mut bases_raw)?;
    let roles = roles_raw.into_iter().map(SlotRole::from_code).collect::<Result<Vec<_>>>()?;
    let bases = bases_raw.into_iter().map(Basis::from_code).collect::<Result<Vec<_>>>()?;
    if roles.iter().filter(|r| **r == SlotRole::Reference).count() != n_ref {
        return Err(Error::Parse("reference count disagrees with roles".into()));
    }
    let mut column = || -> Result<Vec<f64>> {
        let mut buf = vec![0u8; n * 8];
        fill(&mut r, &mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    };
    let x = column()?;
    let p = column()?;
    let measurements = column()?;
    Ok(Some((
        AliceFrame {
            frame_id,
            x,
            p,
            roles: roles.clone(),
        },
        BobFrame {
            frame_id,
            measurements,
            bases,
            roles,
            phase_ref_rad,
        },
    )))
}

pub fn read_all_frame_pairs<R: Read>(mut r: R) -> Result<Vec<(AliceFrame, BobFrame)>> {
    let mut out = Vec::new();
    while let Some(pair) = read_frame_pair(&mut r)? {
        out.push(pair);
    }
    Ok(out)
}

pub const CSV_HEADER: &str = "frame_id,index,role,basis,alice_x,alice_p,bob";

/// One row per pulse under [`CSV_HEADER`]; the header is written by the caller.
pub fn write_frame_csv<W: Write>(mut w: W, alice: &AliceFrame, bob: &BobFrame) -> Result<()> {
    check_pair(alice, bob)?;
    for i in 0..alice.len() {
        let role = match alice.roles[i] {
            SlotRole::Signal => "signal",
            SlotRole::Reference => "reference",
        };
        let basis = match bob.bases[i] {
            Basis::X => "X",
            Basis::P => "P",
        };
        writeln!(
            w,
            "{},{i},{role},{basis},{:e},{:e},{:e}",
            alice.frame_id, alice.x[i], alice.p[i], bob.measurements[i]
        )?;
    }
    Ok(())
}

fn check_pair(alice: &AliceFrame, bob: &BobFrame) -> Result<()> {
    if alice.frame_id != bob.frame_id {
        return Err(Error::FrameMismatch {
            alice: alice.frame_id,
            bob: bob.frame_id,
        });
    }
    let n = alice.len();
    for len in [alice.p.len(), alice.roles.len(), bob.len(), bob.bases.len()] {
        if len != n {
            return Err(Error::LengthMismatch { expected: n, actual: len });
        }
    }
    Ok(())
}

fn read_up_to<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..])? {
            0 => break,
            k => got += k,
        }
    }
    Ok(got)
}

fn fill<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    if read_up_to(r, buf)? < buf.len() {
        return Err(Error::Parse("truncated frame record".into()));
    }
    Ok(())
}

fn exact<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    fill(r, &mut b)?;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(id: u64) -> (AliceFrame, BobFrame) {
        let roles = vec![SlotRole::Reference, SlotRole::Signal, SlotRole::Signal];
        (
            AliceFrame {
                frame_id: id,
                x: vec![250.0, -0.5, 1e-300],
                p: vec![0.0, 2.25, f64::MIN_POSITIVE],
                roles: roles.clone(),
            },
            BobFrame {
                frame_id: id,
                measurements: vec![12.5, -0.125, 3.0],
                bases: vec![Basis::X, Basis::P, Basis::X],
                roles,
                phase_ref_rad: -0.75,
            },
        )
    }

    #[test]
    fn binary_layout() {
        let (a, b) = pair(7);
        let mut buf = Vec::new();
        write_frame_pair(&mut buf, &a, &b).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 8 * 4 + 3 * 2 + 3 * 8 * 3);
        assert_eq!(&buf[..4], b"CVQF");
        assert_eq!(buf[4..8], [1, 0, 0, 0]);
        assert_eq!(buf[8..16], [7, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(buf[24..32], [1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(buf[40..46], [1, 0, 0, 0, 1, 0]);
        assert_eq!(buf[46..54], 250f64.to_le_bytes());
    }

    #[test]
    fn round_trip_concatenated() {
        let mut buf = Vec::new();
        for id in 0..3 {
            let (a, b) = pair(id);
            write_frame_pair(&mut buf, &a, &b).unwrap();
        }
        let back = read_all_frame_pairs(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 3);
        for (id, got) in back.into_iter().enumerate() {
            assert_eq!(got, pair(id as u64));
        }
    }

    #[test]
    fn corrupt_inputs() {
        let (a, b) = pair(1);
        let mut buf = Vec::new();
        write_frame_pair(&mut buf, &a, &b).unwrap();
        assert!(read_frame_pair(&buf[..buf.len() - 1]).is_err());
        assert!(read_frame_pair(&buf[..2]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_frame_pair(bad.as_slice()).is_err());
        let mut bad_role = buf.clone();
        bad_role[40] = 9;
        assert!(read_frame_pair(bad_role.as_slice()).is_err());
        let mut bad_count = buf;
        bad_count[24] = 2;
        assert!(read_frame_pair(bad_count.as_slice()).is_err());
        assert!(read_frame_pair(&[][..]).unwrap().is_none());
    }

    #[test]
    fn mismatched_pairs_rejected() {
        let (a, mut b) = pair(1);
        b.frame_id = 2;
        assert!(matches!(write_frame_pair(Vec::new(), &a, &b), Err(Error::FrameMismatch { .. })));
        let (a, mut b) = pair(1);
        b.bases.pop();
        assert!(write_frame_csv(Vec::new(), &a, &b).is_err());
    }

    #[test]
    fn csv_rows() {
        let (a, b) = pair(4);
        let mut buf = Vec::new();
        write_frame_csv(&mut buf, &a, &b).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let rows: Vec<_> = s.lines().collect();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0], "4,0,reference,X,2.5e2,0e0,1.25e1");
        assert_eq!(rows[1].split(',').count(), CSV_HEADER.split(',').count());
    }
}
