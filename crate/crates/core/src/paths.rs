//! Forward path simulation and the on-disk test-set format.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, StateMatrix};
use crate::sampling::RandomStream;

/// Paths are simulated in blocks of this many rows, each block with its own
/// substream, so the output does not depend on the thread count.
pub const CHUNK: usize = 1024;

/// Simulate `steps` transitions from every row of `start`.
///
/// Returns `steps + 1` matrices; entry `j` holds the states after `j` transitions.
pub fn simulate_paths(
    model: &ModelSpec,
    start: &StateMatrix,
    steps: usize,
    stream: &RandomStream,
) -> Result<Vec<StateMatrix>> {
    if start.cols() != model.dim {
        return Err(Error::dims("path start states", model.dim, start.cols()));
    }
    let sim = model.simulator()?;
    sim.check_states(start)?;
    let d = model.dim;
    let n = start.rows();
    let n_chunks = n.div_ceil(CHUNK);
    let blocks: Vec<Vec<Vec<f64>>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut rng = stream.substream(c as u64).rng();
            let mut cur = start.as_slice()[lo * d..hi * d].to_vec();
            let mut out = Vec::with_capacity(steps);
            for _ in 0..steps {
                for x in cur.chunks_exact_mut(d) {
                    sim.step_row(x, model.dt, &mut rng);
                }
                out.push(cur.clone());
            }
            out
        })
        .collect();
    let mut result = Vec::with_capacity(steps + 1);
    result.push(start.clone());
    for j in 0..steps {
        let mut data = Vec::with_capacity(n * d);
        for b in &blocks {
            data.extend_from_slice(&b[j]);
        }
        result.push(StateMatrix::new(n, d, data)?);
    }
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSetHeader {
    pub instance: String,
    pub seed: u64,
    pub n_paths: usize,
    pub steps: usize,
    pub dim: usize,
}

/// A fixed set of forward paths from `x0`, step-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSet {
    pub header: PathSetHeader,
    pub states: Vec<StateMatrix>,
}

const MAGIC: &[u8; 8] = b"RMCPATH1";

impl PathSet {
    pub fn n_paths(&self) -> usize {
        self.header.n_paths
    }

    pub fn steps(&self) -> usize {
        self.header.steps
    }

    pub fn dim(&self) -> usize {
        self.header.dim
    }

    pub fn at(&self, k: usize) -> &StateMatrix {
        &self.states[k]
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for m in &self.states {
            for v in m.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "{} is not a test-set file",
                path.display()
            )));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let header: PathSetHeader = serde_json::from_slice(&header)?;
        let per_step = header.n_paths * header.dim;
        let mut buf = vec![0u8; per_step * 8];
        let mut states = Vec::with_capacity(header.steps + 1);
        for _ in 0..=header.steps {
            r.read_exact(&mut buf)
                .map_err(|e| Error::Format(format!("truncated test-set data: {e}")))?;
            let data = buf
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            states.push(StateMatrix::new(header.n_paths, header.dim, data)?);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after test-set data".into()));
        }
        Ok(PathSet { header, states })
    }
}

/// Smallest accepted test-set size.
pub const MIN_TEST_PATHS: usize = 1000;

/// Held-out forward paths from `x0` over the full horizon.
pub fn make_test_set(
    model: &ModelSpec,
    instance: &str,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet> {
    model.validate()?;
    if n_paths < MIN_TEST_PATHS {
        return Err(Error::config(
            "n_paths",
            format!("a test set needs at least {MIN_TEST_PATHS} paths, got {n_paths}"),
        ));
    }
    let start = StateMatrix::repeat_row(&model.x0(), n_paths);
    let stream = RandomStream::new(seed).child("test-set", 0);
    let states = simulate_paths(model, &start, model.steps(), &stream)?;
    Ok(PathSet {
        header: PathSetHeader {
            instance: instance.to_string(),
            seed,
            n_paths,
            steps: model.steps(),
            dim: model.dim,
        },
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::instance;

    #[test]
    fn round_trip_bit_exact() {
        let m = instance("M3").unwrap().model;
        let ps = make_test_set(&m, "M3", 1000, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        ps.write(&p).unwrap();
        let back = PathSet::read(&p).unwrap();
        assert_eq!(ps, back);
        assert!(make_test_set(&m, "M3", 999, 9).is_err());
    }

    #[test]
    fn thread_count_independent() {
        let m = instance("M1").unwrap().model;
        let start = StateMatrix::repeat_row(&[40.0], 5000);
        let s = RandomStream::new(3);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| simulate_paths(&m, &start, 5, &s)).unwrap();
        let b = four.install(|| simulate_paths(&m, &start, 5, &s)).unwrap();
        assert_eq!(a, b);
    }
}
