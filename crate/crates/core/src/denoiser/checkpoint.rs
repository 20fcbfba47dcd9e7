use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{MlpConfig, ReferenceMlp};
use crate::diffusion::NoiseKind;
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

pub const CHECKPOINT_FORMAT: &str = "gdiff-checkpoint-v1";

/// First line of a checkpoint file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub architecture: MlpConfig,
    #[serde(rename = "T")]
    pub t_max: usize,
    pub schedule_hash: String,
    pub noise_kind: NoiseKind,
    pub theta0: Option<f64>,
    pub n_params: usize,
    /// Training step the parameters belong to.
    pub step: usize,
    pub beta: Vec<f64>,
    /// Per-dimension `(shift, scale)` applied to the data before diffusion.
    pub normalization: Option<Vec<(f64, f64)>>,
    pub dataset: Option<String>,
}

/// A JSON header line followed by the parameters as little-endian f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(
        model: &ReferenceMlp,
        sched: &NoiseSchedule,
        kind: NoiseKind,
        theta0: Option<f64>,
        step: usize,
    ) -> Result<Self> {
        use super::Trainable;
        if model.config().t_max != sched.len() {
            return Err(Error::Checkpoint(format!(
                "model expects T = {}, schedule has {}",
                model.config().t_max,
                sched.len()
            )));
        }
        if (kind == NoiseKind::Gamma) != theta0.is_some() {
            return Err(Error::Checkpoint("theta0 must be present exactly for gamma models".into()));
        }
        Ok(Self {
            header: CheckpointHeader {
                format: CHECKPOINT_FORMAT.into(),
                architecture: model.config().clone(),
                t_max: sched.len(),
                schedule_hash: sched.hash(),
                noise_kind: kind,
                theta0,
                n_params: model.params().len(),
                step,
                beta: sched.betas().to_vec(),
                normalization: None,
                dataset: None,
            },
            params: model.params().to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(&self.header)?;
        out.push(b'\n');
        out.reserve(self.params.len() * 8);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_reader(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if line.last() != Some(&b'\n') {
            return Err(Error::Checkpoint("missing header line".into()));
        }
        let header: CheckpointHeader = serde_json::from_slice(&line[..line.len() - 1])?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", header.format)));
        }
        let mut payload = Vec::new();
        r.read_to_end(&mut payload).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if payload.len() != header.n_params * 8 {
            return Err(Error::Checkpoint(format!(
                "payload holds {} bytes, header promises {} parameters",
                payload.len(),
                header.n_params
            )));
        }
        let params = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let ck = Self { header, params };
        ck.schedule()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f)
    }

    /// Rebuilds the schedule and checks it against the stored hash.
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let sched = NoiseSchedule::from_betas(self.header.beta.clone())?;
        if sched.len() != self.header.t_max || sched.hash() != self.header.schedule_hash {
            return Err(Error::Checkpoint("stored schedule does not match its hash".into()));
        }
        Ok(sched)
    }

    /// Fails unless `sched` is the schedule the model was trained with.
    pub fn ensure_schedule(&self, sched: &NoiseSchedule) -> Result<()> {
        if sched.hash() != self.header.schedule_hash {
            return Err(Error::Checkpoint(format!(
                "schedule hash {} does not match checkpoint {}",
                sched.hash(),
                self.header.schedule_hash
            )));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ReferenceMlp> {
        ReferenceMlp::from_params(self.header.architecture.clone(), self.params.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::Denoiser;
    use crate::rng::RngStream;
    use crate::schedule::linear_schedule;
    use crate::tensor::Tensor;

    fn fixture() -> (ReferenceMlp, NoiseSchedule) {
        let sched = linear_schedule(50, 1e-4, 0.05).unwrap();
        let cfg = MlpConfig { data_dim: 2, hidden: vec![8, 8], time_dim: 4, t_max: 50 };
        (ReferenceMlp::new(cfg, &mut RngStream::new(9)).unwrap(), sched)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (m, sched) = fixture();
        let mut ck = Checkpoint::new(&m, &sched, NoiseKind::Gamma, Some(0.001), 7).unwrap();
        ck.header.normalization = Some(vec![(0.5, 2.0), (-1.0, 0.25)]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert!(back.params.iter().zip(&ck.params).all(|(a, b)| a.to_bits() == b.to_bits()));
        let x = Tensor::new(vec![3, 2], vec![0.1, 0.2, -0.3, 0.4, 1.0, -1.0]).unwrap();
        assert_eq!(back.model().unwrap().eval(&x, 10).unwrap(), m.eval(&x, 10).unwrap());
    }

    #[test]
    fn detects_truncation_and_schedule_mismatch() {
        let (m, sched) = fixture();
        let ck = Checkpoint::new(&m, &sched, NoiseKind::Gaussian, None, 0).unwrap();
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_reader(&bytes[..bytes.len() - 3]).is_err());
        let other = linear_schedule(50, 1e-4, 0.06).unwrap();
        assert!(ck.ensure_schedule(&other).is_err());
        assert!(ck.ensure_schedule(&sched).is_ok());
        assert!(Checkpoint::new(&m, &sched, NoiseKind::Gaussian, Some(0.1), 0).is_err());
    }
}
