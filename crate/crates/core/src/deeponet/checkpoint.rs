//! Binary checkpoint format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "PIDN1"
//! u32 x 6   m, branch width, branch depth, trunk width, trunk depth, q
//! f64 x 4   lx, ly, t_final, output_scale
//! f64 ...   parameters: branch layers U, V, hidden 1..L, head (W row-major
//!           as in x W, then b), trunk layers in the same order, b0
//! f64 ...   Adam first moments, same order
//! f64 ...   Adam second moments, same order
//! u64       step
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::adam::TrainState;
use super::network::Scales;
use super::params::{ArchSpec, DeepONetParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"PIDN1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub scales: Scales,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn arch(&self) -> ArchSpec {
        self.state.params.arch()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let a = self.arch();
        w.write_all(MAGIC)?;
        for v in [a.m, a.branch_width, a.branch_depth, a.trunk_width, a.trunk_depth, a.q] {
            let v = u32::try_from(v).map_err(|_| Error::Format("architecture integer exceeds u32".into()))?;
            w.write_all(&v.to_le_bytes())?;
        }
        let s = &self.scales;
        for v in [s.lx, s.ly, s.t_final, s.output_scale] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(8 * self.state.params.n_params());
        for set in [&self.state.params, &self.state.m, &self.state.v] {
            buf.clear();
            for t in set.tensors() {
                for v in t {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
            w.write_all(&buf)?;
        }
        w.write_all(&self.state.step.to_le_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a PIDN1 checkpoint".into()));
        }
        let mut ints = [0usize; 6];
        for v in ints.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *v = u32::from_le_bytes(b) as usize;
        }
        let arch = ArchSpec {
            m: ints[0],
            branch_width: ints[1],
            branch_depth: ints[2],
            trunk_width: ints[3],
            trunk_depth: ints[4],
            q: ints[5],
        };
        if !arch.violations().is_empty() {
            return Err(Error::Format(format!("invalid architecture in checkpoint: {arch:?}")));
        }
        let mut f = [0.0; 4];
        for v in f.iter_mut() {
            *v = read_f64(r)?;
        }
        let scales = Scales {
            lx: f[0],
            ly: f[1],
            t_final: f[2],
            output_scale: f[3],
        };
        let mut sets = Vec::with_capacity(3);
        for _ in 0..3 {
            let mut p = DeepONetParams::zeros(&arch);
            let mut bytes = vec![0u8; 8 * p.n_params()];
            r.read_exact(&mut bytes)?;
            let flat: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            p.unflatten(&flat)?;
            sets.push(p);
        }
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let step = u64::from_le_bytes(b);
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", rest.len())));
        }
        let v = sets.pop().unwrap();
        let m = sets.pop().unwrap();
        let params = sets.pop().unwrap();
        Ok(Self {
            scales,
            state: TrainState { params, m, v, step },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
