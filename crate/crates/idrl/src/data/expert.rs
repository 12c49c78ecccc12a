//! On-disk expert trajectory format.
//!
//! Binary, little-endian. Header: magic "IDRLEXP1", u32 version, env-id
//! string, u32 delay, u32 state_dim, u32 action_dim, u32 n_traj. Each
//! trajectory: u32 action count H, then interleaved f64 frames
//! o_0, a_0, o_1, a_1, ..., a_{H-1}, o_H. Observations are the revealed
//! (delayed) ones; actions are aligned to the timestep at which the agent
//! emitted them, so augmentation is a pure reindexing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::DataError;

const MAGIC: &[u8; 8] = b"IDRLEXP1";
pub const EXPERT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertHeader {
    pub env_id: String,
    pub delta: usize,
    pub state_dim: usize,
    pub action_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertTrajectory {
    /// H+1 revealed observation frames.
    pub observations: Vec<Vec<f64>>,
    /// H action frames.
    pub actions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertDataset {
    pub header: ExpertHeader,
    pub trajectories: Vec<ExpertTrajectory>,
}

impl ExpertDataset {
    pub fn new(header: ExpertHeader) -> Self {
        ExpertDataset {
            header,
            trajectories: Vec::new(),
        }
    }

    pub fn n_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn push_trajectory(&mut self, traj: ExpertTrajectory) -> Result<(), DataError> {
        if traj.observations.len() != traj.actions.len() + 1 {
            return Err(DataError::Invalid(format!(
                "{} observations for {} actions; expected actions + 1",
                traj.observations.len(),
                traj.actions.len()
            )));
        }
        for o in &traj.observations {
            if o.len() != self.header.state_dim {
                return Err(DataError::DimMismatch {
                    field: "observation frame",
                    expected: self.header.state_dim,
                    got: o.len(),
                });
            }
        }
        for a in &traj.actions {
            if a.len() != self.header.action_dim {
                return Err(DataError::DimMismatch {
                    field: "action frame",
                    expected: self.header.action_dim,
                    got: a.len(),
                });
            }
        }
        self.trajectories.push(traj);
        Ok(())
    }

    /// A dataset containing only the first `n` trajectories.
    pub fn truncated(&self, n: usize) -> ExpertDataset {
        ExpertDataset {
            header: self.header.clone(),
            trajectories: self.trajectories.iter().take(n).cloned().collect(),
        }
    }
}

pub fn save_expert(dataset: &ExpertDataset, path: &Path) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&EXPERT_VERSION.to_le_bytes())?;
    let id = dataset.header.env_id.as_bytes();
    w.write_all(&(id.len() as u32).to_le_bytes())?;
    w.write_all(id)?;
    w.write_all(&(dataset.header.delta as u32).to_le_bytes())?;
    w.write_all(&(dataset.header.state_dim as u32).to_le_bytes())?;
    w.write_all(&(dataset.header.action_dim as u32).to_le_bytes())?;
    w.write_all(&(dataset.trajectories.len() as u32).to_le_bytes())?;
    for traj in &dataset.trajectories {
        let h = traj.actions.len();
        w.write_all(&(h as u32).to_le_bytes())?;
        for t in 0..h {
            for &v in &traj.observations[t] {
                w.write_all(&v.to_le_bytes())?;
            }
            for &v in &traj.actions[t] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for &v in &traj.observations[h] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_expert(path: &Path) -> Result<ExpertDataset, DataError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(DataError::BadMagic {
            found: magic.to_vec(),
        });
    }
    let version = read_u32(&mut r, "version")?;
    if version != EXPERT_VERSION {
        return Err(DataError::BadVersion(version));
    }
    let id_len = read_u32(&mut r, "env id length")? as usize;
    let mut id_bytes = vec![0u8; id_len];
    read_exact(&mut r, &mut id_bytes, "env id")?;
    let env_id = String::from_utf8_lossy(&id_bytes).into_owned();
    let delta = read_u32(&mut r, "delta")? as usize;
    let state_dim = read_u32(&mut r, "state_dim")? as usize;
    let action_dim = read_u32(&mut r, "action_dim")? as usize;
    if state_dim == 0 {
        return Err(DataError::DimMismatch {
            field: "state_dim",
            expected: 1,
            got: 0,
        });
    }
    if action_dim == 0 {
        return Err(DataError::DimMismatch {
            field: "action_dim",
            expected: 1,
            got: 0,
        });
    }
    let n_traj = read_u32(&mut r, "n_traj")? as usize;
    let mut dataset = ExpertDataset::new(ExpertHeader {
        env_id,
        delta,
        state_dim,
        action_dim,
    });
    for k in 0..n_traj {
        let h = read_u32(&mut r, "trajectory length")? as usize;
        let mut observations = Vec::with_capacity(h + 1);
        let mut actions = Vec::with_capacity(h);
        for t in 0..h {
            observations.push(read_frame(&mut r, state_dim, k, t, "observation")?);
            actions.push(read_frame(&mut r, action_dim, k, t, "action")?);
        }
        observations.push(read_frame(&mut r, state_dim, k, h, "terminal observation")?);
        dataset
            .trajectories
            .push(ExpertTrajectory {
                observations,
                actions,
            });
    }
    Ok(dataset)
}

/// Summary rows: one line per trajectory with its length and, when known,
/// its true return.
pub fn summary_csv(dataset: &ExpertDataset, returns: Option<&[f64]>) -> String {
    let mut out = String::from("trajectory,length,return\n");
    for (i, traj) in dataset.trajectories.iter().enumerate() {
        let ret = returns
            .and_then(|r| r.get(i))
            .map(|v| v.to_string())
            .unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", i, traj.actions.len(), ret));
    }
    out
}

fn read_frame(
    r: &mut impl Read,
    dim: usize,
    traj: usize,
    t: usize,
    what: &str,
) -> Result<Vec<f64>, DataError> {
    let mut frame = vec![0.0f64; dim];
    for v in frame.iter_mut() {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|_| DataError::Truncated {
            context: format!("{what} frame at trajectory {traj}, step {t}"),
        })?;
        *v = f64::from_le_bytes(b);
    }
    Ok(frame)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], context: &str) -> Result<(), DataError> {
    r.read_exact(buf).map_err(|_| DataError::Truncated {
        context: context.to_string(),
    })
}

fn read_u32(r: &mut impl Read, context: &str) -> Result<u32, DataError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, context)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_dataset() -> ExpertDataset {
        let mut d = ExpertDataset::new(ExpertHeader {
            env_id: "pointmass".into(),
            delta: 2,
            state_dim: 1,
            action_dim: 1,
        });
        d.push_trajectory(ExpertTrajectory {
            observations: vec![vec![0.0], vec![0.1], vec![0.25]],
            actions: vec![vec![1.0], vec![-0.5]],
        })
        .unwrap();
        d
    }

    #[test]
    fn save_load_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.exp");
        let p2 = dir.path().join("b.exp");
        let d = sample_dataset();
        save_expert(&d, &p1).unwrap();
        let loaded = load_expert(&p1).unwrap();
        assert_eq!(loaded, d);
        save_expert(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_file_returns_error_not_partial_data() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.exp");
        save_expert(&sample_dataset(), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            load_expert(&p),
            Err(DataError::Truncated { .. })
        ));
    }

    #[test]
    fn bad_magic_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.exp");
        std::fs::write(&p, b"WRONGMAG\x01\x00\x00\x00").unwrap();
        assert!(matches!(load_expert(&p), Err(DataError::BadMagic { .. })));
    }

    #[test]
    fn frame_dimension_validation() {
        let mut d = sample_dataset();
        let err = d.push_trajectory(ExpertTrajectory {
            observations: vec![vec![0.0, 1.0], vec![0.1, 0.2]],
            actions: vec![vec![1.0]],
        });
        assert!(matches!(err, Err(DataError::DimMismatch { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn arbitrary_datasets_round_trip(
            delta in 0usize..4,
            state_dim in 1usize..4,
            action_dim in 1usize..3,
            lens in proptest::collection::vec(1usize..6, 1..4),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut d = ExpertDataset::new(ExpertHeader {
                env_id: "chain".into(),
                delta,
                state_dim,
                action_dim,
            });
            for &h in &lens {
                let observations = (0..=h)
                    .map(|_| (0..state_dim).map(|_| rng.gen_range(-5.0..5.0)).collect())
                    .collect();
                let actions = (0..h)
                    .map(|_| (0..action_dim).map(|_| rng.gen_range(-5.0..5.0)).collect())
                    .collect();
                d.push_trajectory(ExpertTrajectory { observations, actions }).unwrap();
            }
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("r.exp");
            save_expert(&d, &p).unwrap();
            let loaded = load_expert(&p).unwrap();
            prop_assert_eq!(loaded, d);
        }
    }
}
