//! Binary network snapshots: magic, version, then per network its layer
//! sizes, activation codes and little-endian `f64` parameters.

use std::io::{Read, Write};

use super::{Activation, Mlp, NnError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VVCNETS\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_networks<W: Write>(mut out: W, nets: &[&Mlp]) -> Result<(), NnError> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(nets.len() as u32).to_le_bytes())?;
    for net in nets {
        out.write_all(&(net.sizes().len() as u32).to_le_bytes())?;
        for &s in net.sizes() {
            out.write_all(&(s as u64).to_le_bytes())?;
        }
        for a in net.activations() {
            out.write_all(&[a.code()])?;
        }
        for p in net.params() {
            out.write_all(&p.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_networks<R: Read>(mut input: R) -> Result<Vec<Mlp>, NnError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("not a network checkpoint".into()));
    }
    let version = read_u32(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut input)?;
    let mut nets = Vec::with_capacity(count.min(64) as usize);
    for _ in 0..count {
        let n_sizes = read_u32(&mut input)? as usize;
        if !(2..=64).contains(&n_sizes) {
            return Err(NnError::Checkpoint(format!("implausible layer count {n_sizes}")));
        }
        let mut sizes = Vec::with_capacity(n_sizes);
        for _ in 0..n_sizes {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            let s = u64::from_le_bytes(b);
            if s == 0 || s > 1 << 20 {
                return Err(NnError::Checkpoint(format!("implausible layer width {s}")));
            }
            sizes.push(s as usize);
        }
        let mut acts = Vec::with_capacity(n_sizes - 1);
        for _ in 1..n_sizes {
            let mut b = [0u8; 1];
            input.read_exact(&mut b)?;
            acts.push(
                Activation::from_code(b[0])
                    .ok_or_else(|| NnError::Checkpoint(format!("unknown activation code {}", b[0])))?,
            );
        }
        let n_params: usize = sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum();
        let mut params = Vec::with_capacity(n_params);
        let mut b = [0u8; 8];
        for _ in 0..n_params {
            input.read_exact(&mut b)?;
            params.push(f64::from_le_bytes(b));
        }
        nets.push(Mlp::from_parts(sizes, acts, params)?);
    }
    Ok(nets)
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
